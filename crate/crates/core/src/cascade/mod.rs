//! The boosted deep forest cascade.
//!
//! Layer `l` trains `n` forest slots with `k`-fold out-of-fold predictions on
//! its input, averages the slot probabilities into `P`, converts `P` into a
//! zero-sum score `h`, and reweights the training samples. The input of the
//! next layer is assembled from the original features and earlier layers'
//! out-of-fold blocks according to the connectivity mode. The final decision
//! is `sum_l h^l`.

pub mod boost;
pub mod config;
pub mod layer;

use std::time::Instant;

use log::{debug, info};
use ndarray::{Array2, ArrayView2};

pub use boost::{decision_to_proba, h_transform, update_weights, BoostState, ClassCoding};
pub use config::{
    AugmentedFeatures, CascadeConfig, Connectivity, EstimatorSearch, OutputMode, TreeCounts,
};
pub use layer::{
    build_layer_input, fit_layer_oof, input_width, layer_probability, LayerFit, LayerFitOptions,
    LayerModule, Slot,
};

use crate::dataio::{stratified_kfold, stratified_split, Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::forest::ForestKind;
use crate::rng::{derive_seed, stream};
use crate::search::{search_n_estimators, SearchRange, SearchResult};
use crate::util::{accuracy, argmax_rows};

/// A fitted cascade.
#[derive(Debug, Clone)]
pub struct DaForestModel {
    pub(crate) layers: Vec<LayerModule>,
    pub(crate) n_features: usize,
    pub(crate) n_classes: usize,
    pub(crate) connectivity: Connectivity,
    pub(crate) augmented: AugmentedFeatures,
    pub(crate) output: OutputMode,
    pub(crate) boosting: bool,
    pub(crate) learning_rate: f64,
    pub(crate) prob_clip: f64,
    pub(crate) n_estimators: TreeCounts,
    pub(crate) seed: u64,
    pub(crate) class_names: Option<Vec<String>>,
    pub(crate) history: Option<TrainingHistory>,
}

/// Diagnostics from [`fit`]. Not part of the saved model.
#[derive(Debug, Clone)]
pub struct TrainingHistory {
    /// One record per trained layer, including layers dropped by early
    /// stopping.
    pub layers: Vec<LayerRecord>,
    /// Number of layers kept in the model.
    pub kept_layers: usize,
    /// Best early-stopping signal, reached at layer `kept_layers`.
    pub best_accuracy: f64,
    pub search: Vec<SearchResult>,
    pub folds: FoldAssignment,
    pub search_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct LayerRecord {
    pub index: usize,
    pub input_width: usize,
    /// Early-stopping signal after this layer: accuracy of the out-of-fold
    /// decision (cumulative for additive output).
    pub oof_accuracy: f64,
    /// Accuracy of this layer's out-of-fold `P` alone.
    pub layer_accuracy: f64,
    pub seconds: f64,
    /// Largest `|sum_k h_k|` over the training rows.
    pub max_h_sum: f64,
    /// Sum of the sample weights after this layer's update.
    pub weight_sum: f64,
    pub trace: Option<LayerTrace>,
}

/// Full per-layer training data, kept when `record_trace` is set.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub oof: Array2<f64>,
    pub probability: Array2<f64>,
    pub h: Array2<f64>,
    /// Weights used to fit this layer.
    pub weights: Vec<f64>,
    pub fit_rows: Vec<Vec<Vec<usize>>>,
}

/// Per-layer outputs on some input matrix.
#[derive(Debug, Clone)]
pub struct LayerOutput {
    pub blocks: Array2<f64>,
    pub probability: Array2<f64>,
    pub h: Array2<f64>,
}

/// Runs the estimator search for every forest kind used by `config` and
/// returns the resulting tree counts.
pub fn resolve_tree_counts(
    train: &Dataset,
    config: &CascadeConfig,
) -> Result<(TreeCounts, Vec<SearchResult>)> {
    let range = match config.search {
        EstimatorSearch::Off => return Ok((config.n_estimators, Vec::new())),
        EstimatorSearch::Auto => SearchRange::for_sample_count(train.n_samples()),
        EstimatorSearch::Range(r) => r,
    };
    let (fit_part, holdout) = stratified_split(
        train,
        config.search_holdout,
        derive_seed(config.seed, stream::SEARCH_SPLIT),
    )?;
    let mut counts = config.n_estimators;
    let mut results = Vec::new();
    for (kind, used, tag) in [
        (
            ForestKind::Random,
            config.random_forests,
            stream::SEARCH_RANDOM,
        ),
        (
            ForestKind::CompletelyRandom,
            config.completely_random_forests,
            stream::SEARCH_COMPLETELY_RANDOM,
        ),
    ] {
        if used == 0 {
            continue;
        }
        let r = search_n_estimators(&fit_part, &holdout, kind, range, derive_seed(config.seed, tag))?;
        info!("estimator search: {} forests use {} trees", kind.name(), r.best_n);
        counts.set(kind, r.best_n);
        results.push(r);
    }
    Ok((counts, results))
}

fn signal_accuracy(scores: &Array2<f64>, labels: &[usize]) -> f64 {
    accuracy(&argmax_rows(scores.view()), labels)
}

fn scores_of(p: &Array2<f64>, clip: f64) -> Array2<f64> {
    boost::h_transform_rows(p.view(), clip)
}

fn next_block(augmented: AugmentedFeatures, blocks: Array2<f64>, h: &Array2<f64>) -> Array2<f64> {
    match augmented {
        AugmentedFeatures::Probabilities => blocks,
        AugmentedFeatures::HScores => h.clone(),
    }
}

/// Trains a cascade on `train`.
pub fn fit(train: &Dataset, config: &CascadeConfig) -> Result<DaForestModel> {
    config.validate()?;
    let k = train.n_classes();
    if k < 2 {
        return Err(Error::InvalidData(format!(
            "need at least two classes, found {k}"
        )));
    }
    let start = Instant::now();
    let (counts, search) = resolve_tree_counts(train, config)?;
    let search_seconds = start.elapsed().as_secs_f64();

    let layout = config.slot_layout();
    let slots: Vec<(ForestKind, usize)> = layout.iter().map(|&kd| (kd, counts.get(kd))).collect();
    let n = slots.len();
    let d = train.n_features();
    let block_width = match config.augmented {
        AugmentedFeatures::Probabilities => k * n,
        AugmentedFeatures::HScores => k,
    };
    let x0 = train.features();
    let y = train.labels();
    let m = train.n_samples();
    let folds = stratified_kfold(y, k, config.k_folds, derive_seed(config.seed, stream::FOLDS))?;
    let coding = ClassCoding::new(k);
    let mut boost = BoostState::new(m, config.learning_rate, config.prob_clip);
    let opts = LayerFitOptions {
        weighted_bootstrap: config.weighted_bootstrap,
        refit_full: config.refit_full,
    };
    let layer_limit = config.force_layers.unwrap_or(config.max_layers);

    let mut layers: Vec<LayerModule> = Vec::new();
    let mut prior: Vec<Array2<f64>> = Vec::new();
    let mut records: Vec<LayerRecord> = Vec::new();
    let mut decision = Array2::<f64>::zeros((m, k));
    let mut best = (0usize, f64::NEG_INFINITY);

    for l in 1..=layer_limit {
        let layer_start = Instant::now();
        let input = build_layer_input(x0, &prior, config.connectivity, l)?;
        let expected = input_width(config.connectivity, d, block_width, l);
        if input.ncols() != expected {
            return Err(Error::Invariant(format!(
                "layer {l} input has {} columns, expected {expected}",
                input.ncols()
            )));
        }
        let weights = if config.boosting {
            boost.weights().to_vec()
        } else {
            vec![1.0 / m as f64; m]
        };
        let layer_seed = derive_seed(derive_seed(config.seed, stream::LAYER), l as u64);
        let LayerFit {
            module,
            oof,
            fit_rows,
        } = fit_layer_oof(input.view(), y, &weights, k, &folds, &slots, l, layer_seed, opts)?;
        let p = layer_probability(oof.view(), n, k)?;
        let h = scores_of(&p, config.prob_clip);
        let max_h_sum = h
            .rows()
            .into_iter()
            .map(|r| r.sum().abs())
            .fold(0.0, f64::max);
        match config.output {
            OutputMode::Additive => decision += &h,
            OutputMode::LastLayer => decision.assign(&h),
        }
        if config.boosting {
            boost.update(y, p.view(), &coding);
        }
        let signal = signal_accuracy(&decision, y);
        let layer_accuracy = signal_accuracy(&p, y);
        let seconds = layer_start.elapsed().as_secs_f64();
        debug!(
            "layer {l}: width {}, oof accuracy {signal:.4}, layer accuracy {layer_accuracy:.4}, {seconds:.2}s",
            input.ncols()
        );
        let trace = config.record_trace.then(|| LayerTrace {
            oof: oof.clone(),
            probability: p.clone(),
            h: h.clone(),
            weights: weights.clone(),
            fit_rows,
        });
        records.push(LayerRecord {
            index: l,
            input_width: input.ncols(),
            oof_accuracy: signal,
            layer_accuracy,
            seconds,
            max_h_sum,
            weight_sum: boost.weights().iter().sum(),
            trace,
        });
        layers.push(module);
        prior.push(next_block(config.augmented, oof, &h));
        if signal > best.1 {
            best = (l, signal);
        }
        if config.force_layers.is_none() && l - best.0 >= config.patience {
            info!("early stop after layer {l}; keeping {} layers", best.0);
            break;
        }
    }
    if config.force_layers.is_none() {
        layers.truncate(best.0);
    }
    let kept = layers.len();
    info!(
        "trained {} layers, kept {kept}, best oof accuracy {:.4}",
        records.len(),
        best.1
    );
    Ok(DaForestModel {
        layers,
        n_features: d,
        n_classes: k,
        connectivity: config.connectivity,
        augmented: config.augmented,
        output: config.output,
        boosting: config.boosting,
        learning_rate: config.learning_rate,
        prob_clip: config.prob_clip,
        n_estimators: counts,
        seed: config.seed,
        class_names: train.class_names().map(<[String]>::to_vec),
        history: Some(TrainingHistory {
            layers: records,
            kept_layers: kept,
            best_accuracy: best.1,
            search,
            folds,
            search_seconds,
            total_seconds: start.elapsed().as_secs_f64(),
        }),
    })
}

impl DaForestModel {
    pub fn layers(&self) -> &[LayerModule] {
        &self.layers
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn augmented(&self) -> AugmentedFeatures {
        self.augmented
    }

    pub fn output(&self) -> OutputMode {
        self.output
    }

    pub fn boosting(&self) -> bool {
        self.boosting
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn prob_clip(&self) -> f64 {
        self.prob_clip
    }

    pub fn n_estimators(&self) -> TreeCounts {
        self.n_estimators
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Label strings of the training data, if it had any.
    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn history(&self) -> Option<&TrainingHistory> {
        self.history.as_ref()
    }

    /// Copy of the model with only the first `n` layers.
    pub fn truncated(&self, n: usize) -> Result<DaForestModel> {
        if n == 0 || n > self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {n} of {} layers",
                self.layers.len()
            )));
        }
        let mut out = self.clone();
        out.layers.truncate(n);
        out.history = None;
        Ok(out)
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    /// Feature blocks, `P` and `h` of every layer on `x`.
    pub fn layer_outputs(&self, x: ArrayView2<'_, f64>) -> Result<Vec<LayerOutput>> {
        self.check_input(x)?;
        let n = self.layers.first().map_or(0, |l| l.slots().len());
        let mut prior = Vec::with_capacity(self.layers.len());
        let mut out = Vec::with_capacity(self.layers.len());
        for (j, layer) in self.layers.iter().enumerate() {
            let input = build_layer_input(x, &prior, self.connectivity, j + 1)?;
            let blocks = layer.probability_blocks(input.view())?;
            let probability = layer_probability(blocks.view(), n, self.n_classes)?;
            let h = scores_of(&probability, self.prob_clip);
            prior.push(next_block(self.augmented, blocks.clone(), &h));
            out.push(LayerOutput {
                blocks,
                probability,
                h,
            });
        }
        Ok(out)
    }

    /// Decision after each layer: the running sum of `h` for additive output,
    /// the layer's own `h` otherwise.
    pub fn decision_by_layer(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
        let mut acc = Array2::zeros((x.nrows(), self.n_classes));
        let mut out = Vec::with_capacity(self.layers.len());
        for o in self.layer_outputs(x)? {
            match self.output {
                OutputMode::Additive => acc += &o.h,
                OutputMode::LastLayer => acc = o.h,
            }
            out.push(acc.clone());
        }
        Ok(out)
    }

    /// `m x K` decision scores.
    pub fn decision(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match self.decision_by_layer(x)?.pop() {
            Some(d) => Ok(d),
            None => Ok(Array2::zeros((x.nrows(), self.n_classes))),
        }
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.decision(x)?.view()))
    }

    /// Class probabilities `softmax(decision / (K - 1))`.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let d = self.decision(x)?;
        let mut out = Array2::zeros(d.raw_dim());
        for (i, row) in d.rows().into_iter().enumerate() {
            for (c, v) in decision_to_proba(&row.to_vec()).into_iter().enumerate() {
                out[[i, c]] = v;
            }
        }
        Ok(out)
    }

    pub fn score(&self, ds: &Dataset) -> Result<f64> {
        Ok(accuracy(&self.predict(ds.features())?, ds.labels()))
    }
}
