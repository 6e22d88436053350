//! Machine-readable reports. Every number can be recomputed from the data,
//! the config snapshot and the seeds recorded alongside it.

use std::path::Path;

use daforest::benchmark::{RunResult, Summary};
use daforest::cascade::{TrainingHistory, TreeCounts};
use daforest::search::SearchResult;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::settings::Settings;

#[derive(Debug, Serialize)]
pub struct DataInfo {
    pub path: String,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub class_names: Option<Vec<String>>,
}

#[derive(Debug, Serialize)]
pub struct Counts {
    pub random: usize,
    pub completely_random: usize,
}

impl From<TreeCounts> for Counts {
    fn from(t: TreeCounts) -> Self {
        Self {
            random: t.random,
            completely_random: t.completely_random,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SearchCurve {
    pub kind: String,
    pub best_n: usize,
    /// `[n_estimators, holdout accuracy]` pairs.
    pub curve: Vec<(usize, f64)>,
}

impl From<&SearchResult> for SearchCurve {
    fn from(r: &SearchResult) -> Self {
        Self {
            kind: r.kind.name().into(),
            best_n: r.best_n,
            curve: r.curve.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct LayerRow {
    pub index: usize,
    pub input_width: usize,
    pub oof_accuracy: f64,
    pub layer_accuracy: f64,
    /// Test accuracy of the decision after this layer, for kept layers.
    pub test_accuracy: Option<f64>,
    pub kept: bool,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct Seeds {
    pub model: u64,
    /// Seed of the train/test split, when there is one.
    pub split: Option<u64>,
    pub folds: u64,
}

/// Output of `train`.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub version: &'static str,
    pub data: DataInfo,
    pub config: Settings,
    pub seeds: Seeds,
    pub test_fraction: f64,
    pub n_estimators: Counts,
    pub search: Vec<SearchCurve>,
    pub layers: Vec<LayerRow>,
    pub trained_layers: usize,
    pub kept_layers: usize,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub search_seconds: f64,
    pub total_seconds: f64,
    pub model_path: String,
    pub model_bytes: usize,
}

pub fn layer_rows(history: &TrainingHistory, test: Option<&[f64]>) -> Vec<LayerRow> {
    history
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| LayerRow {
            index: l.index,
            input_width: l.input_width,
            oof_accuracy: l.oof_accuracy,
            layer_accuracy: l.layer_accuracy,
            test_accuracy: test.and_then(|t| t.get(i).copied()),
            kept: i < history.kept_layers,
            seconds: l.seconds,
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct RunRow {
    pub seed: u64,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    pub kept_layers: usize,
    pub trained_layers: usize,
    pub n_estimators: Counts,
    pub layer_test_accuracy: Vec<f64>,
    pub layer_oof_accuracy: Vec<f64>,
    pub layer_seconds: Vec<f64>,
    pub seconds: f64,
}

impl From<&RunResult> for RunRow {
    fn from(r: &RunResult) -> Self {
        Self {
            seed: r.seed,
            test_accuracy: r.test_accuracy,
            train_accuracy: r.train_accuracy,
            kept_layers: r.n_layers,
            trained_layers: r.trained_layers,
            n_estimators: r.n_estimators.into(),
            layer_test_accuracy: r.layer_test_accuracy.clone(),
            layer_oof_accuracy: r.layer_oof_accuracy.clone(),
            layer_seconds: r.layer_seconds.clone(),
            seconds: r.seconds,
        }
    }
}

/// Output of `evaluate`, and one cell of `benchmark`.
#[derive(Debug, Serialize)]
pub struct EvaluationReport {
    pub version: &'static str,
    pub dataset: String,
    pub variant: String,
    pub config: Settings,
    pub test_fraction: f64,
    pub seeds: Vec<u64>,
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<RunRow>,
}

impl EvaluationReport {
    pub fn new(dataset: &str, variant: &str, config: Settings, test_fraction: f64, s: &Summary) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION"),
            dataset: dataset.into(),
            variant: variant.into(),
            config,
            test_fraction,
            seeds: s.seeds(),
            mean: s.mean,
            std: s.std,
            runs: s.runs.iter().map(RunRow::from).collect(),
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::new(crate::error::ErrorClass::Invariant, e.to_string()))?;
    text.push('\n');
    write_text(&text, path)
}

pub fn write_text(text: &str, path: &Path) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
