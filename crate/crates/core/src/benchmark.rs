//! Repeated-split evaluation: `R` runs with seeds `base .. base + R`, each a
//! stratified train/test split followed by a fit and a test-set score.

use std::time::Instant;

use ndarray::Array2;

use crate::cascade::{fit, CascadeConfig, TreeCounts};
use crate::dataio::{stratified_split, Dataset};
use crate::error::{Error, Result};
use crate::stats::AccuracyMatrix;
use crate::util::{accuracy, argmax_rows, mean_std};

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    pub n_layers: usize,
    /// Layers trained before truncation.
    pub trained_layers: usize,
    pub n_estimators: TreeCounts,
    /// Test accuracy of the decision after each kept layer.
    pub layer_test_accuracy: Vec<f64>,
    /// Early-stopping signal after each trained layer.
    pub layer_oof_accuracy: Vec<f64>,
    pub layer_seconds: Vec<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
    pub runs: Vec<RunResult>,
}

impl Summary {
    pub fn from_runs(runs: Vec<RunResult>) -> Self {
        let accs: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
        let (mean, std) = mean_std(&accs);
        Self { mean, std, runs }
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.runs.iter().map(|r| r.seed).collect()
    }
}

/// One train/test run with `seed` used for both the split and the model.
pub fn run_once(ds: &Dataset, config: &CascadeConfig, test_fraction: f64, seed: u64) -> Result<RunResult> {
    let start = Instant::now();
    let (train, test) = stratified_split(ds, test_fraction, seed)?;
    let cfg = CascadeConfig {
        seed,
        ..config.clone()
    };
    let model = fit(&train, &cfg)?;
    let per_layer = model.decision_by_layer(test.features())?;
    let layer_test_accuracy: Vec<f64> = per_layer
        .iter()
        .map(|d| accuracy(&argmax_rows(d.view()), test.labels()))
        .collect();
    let test_accuracy = *layer_test_accuracy
        .last()
        .ok_or_else(|| Error::Invariant("model has no layers".into()))?;
    let train_accuracy = model.score(&train)?;
    let hist = model.history().expect("fresh model has a history");
    Ok(RunResult {
        seed,
        test_accuracy,
        train_accuracy,
        n_layers: model.n_layers(),
        trained_layers: hist.layers.len(),
        n_estimators: model.n_estimators(),
        layer_test_accuracy,
        layer_oof_accuracy: hist.layers.iter().map(|l| l.oof_accuracy).collect(),
        layer_seconds: hist.layers.iter().map(|l| l.seconds).collect(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// `runs` runs with seeds `base_seed + r`.
pub fn evaluate(
    ds: &Dataset,
    config: &CascadeConfig,
    test_fraction: f64,
    base_seed: u64,
    runs: usize,
) -> Result<Summary> {
    if runs == 0 {
        return Err(Error::InvalidArgument("at least one run is required".into()));
    }
    let results = (0..runs as u64)
        .map(|r| run_once(ds, config, test_fraction, base_seed + r))
        .collect::<Result<Vec<_>>>()?;
    Ok(Summary::from_runs(results))
}

/// A named configuration compared in a benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: CascadeConfig,
}

impl Variant {
    pub fn new(name: impl Into<String>, config: CascadeConfig) -> Self {
        Self {
            name: name.into(),
            config,
        }
    }
}

/// Results for one dataset; a failing variant does not affect the others.
#[derive(Debug)]
pub struct DatasetResult {
    pub dataset: String,
    pub variants: Vec<(String, Result<Summary>)>,
}

pub fn benchmark_dataset(
    name: &str,
    ds: &Dataset,
    variants: &[Variant],
    test_fraction: f64,
    base_seed: u64,
    runs: usize,
) -> DatasetResult {
    DatasetResult {
        dataset: name.to_string(),
        variants: variants
            .iter()
            .map(|v| {
                log::info!("{name}: running {} ({runs} runs)", v.name);
                (v.name.clone(), evaluate(ds, &v.config, test_fraction, base_seed, runs))
            })
            .collect(),
    }
}

/// `dataset,variant,mean,std,runs,seeds` rows; failed cells carry the error.
pub fn summary_csv(results: &[DatasetResult]) -> String {
    let mut out = String::from("dataset,variant,mean,std,runs,seeds,error\n");
    for d in results {
        for (name, r) in &d.variants {
            match r {
                Ok(s) => {
                    let seeds: Vec<String> = s.seeds().iter().map(u64::to_string).collect();
                    out.push_str(&format!(
                        "{},{},{:.6},{:.6},{},{},\n",
                        d.dataset,
                        name,
                        s.mean,
                        s.std,
                        s.runs.len(),
                        seeds.join(" ")
                    ));
                }
                Err(e) => out.push_str(&format!(
                    "{},{},,,0,,\"{}\"\n",
                    d.dataset,
                    name,
                    e.to_string().replace('"', "'")
                )),
            }
        }
    }
    out
}

/// Mean accuracies as a datasets x variants matrix, keeping only datasets
/// where every variant succeeded.
pub fn accuracy_matrix(results: &[DatasetResult]) -> Result<AccuracyMatrix> {
    let complete: Vec<&DatasetResult> = results
        .iter()
        .filter(|d| d.variants.iter().all(|(_, r)| r.is_ok()))
        .collect();
    let names: Vec<String> = match complete.first() {
        Some(d) => d.variants.iter().map(|(n, _)| n.clone()).collect(),
        None => return Err(Error::InvalidData("no dataset completed every variant".into())),
    };
    let mut values = Array2::zeros((complete.len(), names.len()));
    for (i, d) in complete.iter().enumerate() {
        for (j, (_, r)) in d.variants.iter().enumerate() {
            values[[i, j]] = r.as_ref().map(|s| s.mean).unwrap_or(f64::NAN);
        }
    }
    AccuracyMatrix::new(
        values,
        complete.iter().map(|d| d.dataset.clone()).collect(),
        names,
    )
}
