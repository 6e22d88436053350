//! One cascade layer: input assembly, out-of-fold fitting and the layer's
//! probability estimate.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use super::config::Connectivity;
use crate::dataio::{class_counts, FoldAssignment};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, Forest, ForestKind, ForestParams};
use crate::rng::derive_seed;

const FULL_REFIT_STREAM: u64 = 1 << 32;

/// Number of input columns of layer `l` (1-based) given `d` original features
/// and `block` columns appended per earlier layer.
pub fn input_width(mode: Connectivity, d: usize, block: usize, l: usize) -> usize {
    match (mode, l) {
        (_, 0 | 1) => d,
        (Connectivity::Plain, _) => block,
        (Connectivity::Sparse, _) => d + block,
        (Connectivity::Dense, _) => d + (l - 1) * block,
    }
}

/// Input matrix of layer `l` (1-based). `prior[j]` is the output block of
/// layer `j + 1`; Dense concatenates them newest first after `x0`.
pub fn build_layer_input(
    x0: ArrayView2<'_, f64>,
    prior: &[Array2<f64>],
    mode: Connectivity,
    l: usize,
) -> Result<Array2<f64>> {
    if l == 0 {
        return Err(Error::InvalidArgument("layers are numbered from 1".into()));
    }
    if prior.len() != l - 1 {
        return Err(Error::InvalidArgument(format!(
            "layer {l} needs {} earlier blocks, got {}",
            l - 1,
            prior.len()
        )));
    }
    if l == 1 {
        return Ok(x0.to_owned());
    }
    let block = prior[0].ncols();
    for p in prior {
        if p.ncols() != block {
            return Err(Error::DimensionMismatch {
                expected: block,
                actual: p.ncols(),
            });
        }
        if p.nrows() != x0.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x0.nrows(),
                actual: p.nrows(),
            });
        }
    }
    let last = prior[l - 2].view();
    let out = match mode {
        Connectivity::Plain => last.to_owned(),
        Connectivity::Sparse => concatenate(Axis(1), &[x0, last]).expect("row counts checked"),
        Connectivity::Dense => {
            let mut parts = Vec::with_capacity(l);
            parts.push(x0);
            parts.extend(prior.iter().rev().map(|p| p.view()));
            concatenate(Axis(1), &parts).expect("row counts checked")
        }
    };
    debug_assert_eq!(out.ncols(), input_width(mode, x0.ncols(), block, l));
    Ok(out)
}

/// Mean of the `n` class-probability blocks of each row.
pub fn layer_probability(
    blocks: ArrayView2<'_, f64>,
    n_slots: usize,
    n_classes: usize,
) -> Result<Array2<f64>> {
    if n_slots == 0 || blocks.ncols() != n_slots * n_classes {
        return Err(Error::DimensionMismatch {
            expected: n_slots * n_classes,
            actual: blocks.ncols(),
        });
    }
    let mut p = Array2::zeros((blocks.nrows(), n_classes));
    for s in 0..n_slots {
        p += &blocks.slice(s![.., s * n_classes..(s + 1) * n_classes]);
    }
    p /= n_slots as f64;
    Ok(p)
}

/// One forest position in a layer: the fold models and, optionally, a model
/// refit on all rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    kind: ForestKind,
    folds: Vec<Forest>,
    full: Option<Forest>,
}

impl Slot {
    pub fn new(kind: ForestKind, folds: Vec<Forest>, full: Option<Forest>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::InvalidArgument("a slot needs at least one fold model".into()));
        }
        let first = &folds[0];
        for f in folds.iter().chain(full.as_ref()) {
            if f.kind() != kind
                || f.n_features() != first.n_features()
                || f.n_classes() != first.n_classes()
            {
                return Err(Error::InvalidArgument(
                    "fold models of a slot disagree in kind or shape".into(),
                ));
            }
        }
        Ok(Self { kind, folds, full })
    }

    pub fn kind(&self) -> ForestKind {
        self.kind
    }

    pub fn fold_models(&self) -> &[Forest] {
        &self.folds
    }

    pub fn full_model(&self) -> Option<&Forest> {
        self.full.as_ref()
    }

    pub fn n_features(&self) -> usize {
        self.folds[0].n_features()
    }

    pub fn n_classes(&self) -> usize {
        self.folds[0].n_classes()
    }

    /// Test-time class probabilities: the full-data model if present,
    /// otherwise the mean of the fold models.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if let Some(full) = &self.full {
            return full.predict_proba_matrix(x);
        }
        let mut acc = self.folds[0].predict_proba_matrix(x)?;
        for f in &self.folds[1..] {
            acc += &f.predict_proba_matrix(x)?;
        }
        acc /= self.folds.len() as f64;
        Ok(acc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerModule {
    index: usize,
    input_dim: usize,
    slots: Vec<Slot>,
}

impl LayerModule {
    pub fn new(index: usize, input_dim: usize, slots: Vec<Slot>) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::InvalidArgument(format!("layer {index} has no slots")));
        }
        let k = slots[0].n_classes();
        for s in &slots {
            if s.n_features() != input_dim || s.n_classes() != k {
                return Err(Error::InvalidArgument(format!(
                    "layer {index}: slot shape ({} features, {} classes) != ({input_dim}, {k})",
                    s.n_features(),
                    s.n_classes()
                )));
            }
        }
        Ok(Self {
            index,
            input_dim,
            slots,
        })
    }

    /// 1-based position in the cascade.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn n_classes(&self) -> usize {
        self.slots[0].n_classes()
    }

    /// Slot-wise concatenated class probabilities, `m x (K * n)`.
    pub fn probability_blocks(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: input.ncols(),
            });
        }
        let parts = self
            .slots
            .iter()
            .map(|s| s.predict_proba(input))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Ok(concatenate(Axis(1), &views).expect("equal row counts"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LayerFitOptions {
    pub weighted_bootstrap: bool,
    pub refit_full: bool,
}

/// A fitted layer together with its out-of-fold training predictions.
#[derive(Debug, Clone)]
pub struct LayerFit {
    pub module: LayerModule,
    /// Out-of-fold probability blocks, `m x (K * n)`.
    pub oof: Array2<f64>,
    /// Rows each fold model was trained on, indexed `[slot][fold]`.
    pub fit_rows: Vec<Vec<Vec<usize>>>,
}

/// Fits `slots.len() * k` forests: for every slot and fold `f`, a forest on
/// the rows outside `f` with the weights restricted and renormalized to those
/// rows. Rows in fold `f` are scored by that model.
#[allow(clippy::too_many_arguments)]
pub fn fit_layer_oof(
    input: ArrayView2<'_, f64>,
    y: &[usize],
    w: &[f64],
    n_classes: usize,
    folds: &FoldAssignment,
    slots: &[(ForestKind, usize)],
    index: usize,
    seed: u64,
    opts: LayerFitOptions,
) -> Result<LayerFit> {
    let m = input.nrows();
    if y.len() != m || w.len() != m || folds.n_samples() != m {
        return Err(Error::InvalidArgument(format!(
            "rows {m} / labels {} / weights {} / folds {} disagree",
            y.len(),
            w.len(),
            folds.n_samples()
        )));
    }
    if slots.is_empty() {
        return Err(Error::InvalidArgument("no slots to fit".into()));
    }
    let k = folds.k();
    let present = class_counts(y, n_classes);
    let train_rows: Vec<Vec<usize>> = (0..k).map(|f| folds.training(f)).collect();
    let held_rows: Vec<Vec<usize>> = (0..k).map(|f| folds.held_out(f)).collect();
    for (f, rows) in train_rows.iter().enumerate() {
        let counts = class_counts(&rows.iter().map(|&i| y[i]).collect::<Vec<_>>(), n_classes);
        if let Some(c) = (0..n_classes).find(|&c| present[c] > 0 && counts[c] == 0) {
            return Err(Error::InvalidData(format!(
                "training rows for fold {f} contain no sample of class {c}"
            )));
        }
    }

    let fit_on = |rows: &[usize], kind: ForestKind, n_trees: usize, seed: u64| -> Result<Forest> {
        let x = input.select(Axis(0), rows);
        let ys: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
        let mut ws: Vec<f64> = rows.iter().map(|&i| w[i]).collect();
        let total: f64 = ws.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::ZeroWeights);
        }
        ws.iter_mut().for_each(|v| *v /= total);
        let mut params = ForestParams::new(kind, n_trees, seed);
        params.weighted_bootstrap = opts.weighted_bootstrap;
        fit_forest(x.view(), &ys, &ws, n_classes, &params)
    };

    let jobs: Vec<(usize, usize)> = (0..slots.len())
        .flat_map(|s| (0..k).map(move |f| (s, f)))
        .collect();
    let fitted = jobs
        .par_iter()
        .map(|&(s, f)| {
            let (kind, n_trees) = slots[s];
            fit_on(&train_rows[f], kind, n_trees, derive_seed(seed, (s * k + f) as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let full = if opts.refit_full {
        let all: Vec<usize> = (0..m).collect();
        (0..slots.len())
            .into_par_iter()
            .map(|s| {
                let (kind, n_trees) = slots[s];
                fit_on(&all, kind, n_trees, derive_seed(seed, FULL_REFIT_STREAM + s as u64))
                    .map(Some)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![None; slots.len()]
    };

    let mut oof = Array2::zeros((m, slots.len() * n_classes));
    let mut fold_models = fitted.into_iter();
    let mut built = Vec::with_capacity(slots.len());
    for (s, (&(kind, _), full)) in slots.iter().zip(full).enumerate() {
        let models: Vec<Forest> = fold_models.by_ref().take(k).collect();
        for (f, model) in models.iter().enumerate() {
            let rows = &held_rows[f];
            if rows.is_empty() {
                continue;
            }
            let scored = model.predict_proba_matrix(input.select(Axis(0), rows).view())?;
            for (r, &i) in rows.iter().enumerate() {
                oof.slice_mut(s![i, s * n_classes..(s + 1) * n_classes])
                    .assign(&scored.row(r));
            }
        }
        built.push(Slot::new(kind, models, full)?);
    }
    let fit_rows = vec![train_rows; slots.len()];
    Ok(LayerFit {
        module: LayerModule::new(index, input.ncols(), built)?,
        oof,
        fit_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::stratified_kfold;
    use ndarray::array;

    fn blocks(l: usize, m: usize, width: usize) -> Vec<Array2<f64>> {
        (1..l)
            .map(|j| Array2::from_elem((m, width), j as f64))
            .collect()
    }

    #[test]
    fn first_layer_is_identity() {
        let x0 = Array2::from_shape_fn((4, 10), |(i, j)| (i * 10 + j) as f64);
        for mode in [Connectivity::Plain, Connectivity::Sparse, Connectivity::Dense] {
            assert_eq!(build_layer_input(x0.view(), &[], mode, 1).unwrap(), x0);
        }
    }

    #[test]
    fn widths_for_d10_k3_n8() {
        let x0 = Array2::zeros((2, 10));
        let prior = blocks(4, 2, 24);
        let dense = build_layer_input(x0.view(), &prior, Connectivity::Dense, 4).unwrap();
        assert_eq!(dense.ncols(), 82);
        let sparse = build_layer_input(x0.view(), &prior, Connectivity::Sparse, 4).unwrap();
        assert_eq!(sparse.ncols(), 34);
        let plain = build_layer_input(x0.view(), &prior, Connectivity::Plain, 4).unwrap();
        assert_eq!(plain.ncols(), 24);
        assert_eq!(input_width(Connectivity::Dense, 10, 24, 4), 82);
    }

    #[test]
    fn dense_orders_newest_first() {
        let x0 = Array2::zeros((1, 1));
        let prior = blocks(4, 1, 1);
        let input = build_layer_input(x0.view(), &prior, Connectivity::Dense, 4).unwrap();
        assert_eq!(input.row(0).to_vec(), vec![0.0, 3.0, 2.0, 1.0]);
        let sparse = build_layer_input(x0.view(), &prior, Connectivity::Sparse, 4).unwrap();
        assert_eq!(sparse.row(0).to_vec(), vec![0.0, 3.0]);
    }

    #[test]
    fn input_errors() {
        let x0 = Array2::zeros((2, 3));
        assert!(build_layer_input(x0.view(), &blocks(2, 2, 4), Connectivity::Dense, 3).is_err());
        let mut uneven = blocks(3, 2, 4);
        uneven[1] = Array2::zeros((2, 5));
        assert!(build_layer_input(x0.view(), &uneven, Connectivity::Dense, 3).is_err());
        assert!(build_layer_input(x0.view(), &[], Connectivity::Dense, 0).is_err());
    }

    #[test]
    fn probability_is_slot_mean() {
        let b = array![[1.0, 0.0, 0.0, 1.0]];
        assert_eq!(layer_probability(b.view(), 2, 2).unwrap(), array![[0.5, 0.5]]);
        let single = array![[0.2, 0.8]];
        assert_eq!(layer_probability(single.view(), 1, 2).unwrap(), single);
        assert!(layer_probability(b.view(), 3, 2).is_err());
    }

    #[test]
    fn oof_layer_shapes() {
        let m = 30;
        let y: Vec<usize> = (0..m).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((m, 2), |(i, j)| if j == 0 { y[i] as f64 } else { i as f64 });
        let w = vec![1.0 / m as f64; m];
        let folds = stratified_kfold(&y, 2, 3, 7).unwrap();
        let slots = [(ForestKind::CompletelyRandom, 4), (ForestKind::Random, 4)];
        let fit = fit_layer_oof(x.view(), &y, &w, 2, &folds, &slots, 1, 11, Default::default())
            .unwrap();
        assert_eq!(fit.oof.dim(), (m, 4));
        assert_eq!(fit.module.slots().len(), 2);
        for slot in fit.module.slots() {
            assert_eq!(slot.fold_models().len(), 3);
        }
        for row in fit.oof.rows() {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-9);
            assert!((row[2] + row[3] - 1.0).abs() < 1e-9);
        }
        assert_eq!(fit.module.probability_blocks(x.view()).unwrap().dim(), (m, 4));
    }

    #[test]
    fn oof_comes_from_the_fold_model() {
        let m = 24;
        let y: Vec<usize> = (0..m).map(|i| i % 3).collect();
        let x = Array2::from_shape_fn((m, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let w = vec![1.0 / m as f64; m];
        let folds = stratified_kfold(&y, 3, 3, 1).unwrap();
        let fit = fit_layer_oof(
            x.view(),
            &y,
            &w,
            3,
            &folds,
            &[(ForestKind::Random, 3)],
            1,
            5,
            Default::default(),
        )
        .unwrap();
        let models = fit.module.slots()[0].fold_models();
        for i in 0..m {
            let f = folds.fold_of()[i];
            assert!(!fit.fit_rows[0][f].contains(&i));
            let p = models[f].predict_proba(x.row(i).as_slice().unwrap()).unwrap();
            assert_eq!(p, fit.oof.row(i).to_vec());
        }
    }

    #[test]
    fn refit_full_adds_one_model_per_slot() {
        let m = 18;
        let y: Vec<usize> = (0..m).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((m, 1), |(i, _)| y[i] as f64 + i as f64 * 0.01);
        let w = vec![1.0 / m as f64; m];
        let folds = stratified_kfold(&y, 2, 3, 0).unwrap();
        let opts = LayerFitOptions {
            refit_full: true,
            ..Default::default()
        };
        let fit = fit_layer_oof(x.view(), &y, &w, 2, &folds, &[(ForestKind::Random, 2)], 1, 0, opts)
            .unwrap();
        assert!(fit.module.slots()[0].full_model().is_some());
    }
}
