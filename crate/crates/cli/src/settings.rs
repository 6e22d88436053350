//! Training settings: a flat TOML file, command-line flags and benchmark
//! variants all use the same keys. Flags override the file; unset keys fall
//! back to the preset.

use std::path::{Path, PathBuf};

use clap::Args;
use daforest::cascade::{AugmentedFeatures, EstimatorSearch, OutputMode, TreeCounts};
use daforest::{CascadeConfig, Connectivity};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Starting point for unset keys: daforest or gcforest.
    #[arg(long, value_name = "NAME")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,

    /// Layer input wiring: plain, sparse or dense.
    #[arg(long, value_name = "MODE")]
    pub connectivity: Option<String>,

    /// Enable boosting (reweighting between layers).
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub boosting: Option<bool>,

    /// Disable boosting.
    #[arg(long, conflicts_with = "boosting")]
    #[serde(skip)]
    pub no_boosting: bool,

    /// Boosting learning rate.
    #[arg(long, value_name = "RATE")]
    pub learning_rate: Option<f64>,

    /// Probability floor applied before taking logs.
    #[arg(long, value_name = "EPS")]
    pub prob_clip: Option<f64>,

    #[arg(long, value_name = "N")]
    pub max_layers: Option<usize>,

    /// Layers without improvement before early stopping.
    #[arg(long, value_name = "N")]
    pub patience: Option<usize>,

    /// Train exactly N layers and keep them all (0 disables).
    #[arg(long, value_name = "N")]
    pub force_layers: Option<usize>,

    /// Cross-validation folds per forest slot.
    #[arg(long, value_name = "K")]
    pub k_folds: Option<usize>,

    /// Random-forest slots per layer.
    #[arg(long, value_name = "N")]
    pub random_forests: Option<usize>,

    /// Completely-random-forest slots per layer.
    #[arg(long, value_name = "N")]
    pub completely_random_forests: Option<usize>,

    /// Trees per forest of either kind (used when the search is off).
    #[arg(long, value_name = "N")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_estimators: Option<usize>,

    #[arg(long, value_name = "N")]
    pub n_estimators_random: Option<usize>,

    #[arg(long, value_name = "N")]
    pub n_estimators_completely_random: Option<usize>,

    /// Tree-count search: off, auto or LO:HI:STEP.
    #[arg(long, value_name = "RANGE")]
    pub search: Option<String>,

    /// Fraction of the training rows held out by the tree-count search.
    #[arg(long, value_name = "FRACTION")]
    pub search_holdout: Option<f64>,

    /// Features passed to the next layer: probabilities or hscores.
    #[arg(long, value_name = "KIND")]
    pub augmented: Option<String>,

    /// Prediction rule: additive or last-layer.
    #[arg(long = "output-mode", value_name = "MODE")]
    #[serde(rename = "output_mode")]
    pub output: Option<String>,

    /// Draw bootstrap samples in proportion to the boosting weights.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub weighted_bootstrap: Option<bool>,

    /// Refit every slot on all rows for prediction.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub refit_full: Option<bool>,

    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),*) => {
        Settings {
            $($field: $top.$field.clone().or_else(|| $base.$field.clone()),)*
            no_boosting: false,
        }
    };
}

impl Settings {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Folds `--no-boosting` into `boosting`.
    fn normalized(&self) -> Self {
        let mut s = self.clone();
        if s.no_boosting {
            s.boosting = Some(false);
            s.no_boosting = false;
        }
        s
    }

    /// Keys set in `top` win over keys set in `self`.
    pub fn overlay(&self, top: &Settings) -> Settings {
        let (base, top) = (self.normalized(), top.normalized());
        overlay!(
            base,
            top,
            preset,
            connectivity,
            boosting,
            learning_rate,
            prob_clip,
            max_layers,
            patience,
            force_layers,
            k_folds,
            random_forests,
            completely_random_forests,
            n_estimators,
            n_estimators_random,
            n_estimators_completely_random,
            search,
            search_holdout,
            augmented,
            output,
            weighted_bootstrap,
            refit_full,
            seed
        )
    }

    pub fn to_config(&self) -> CliResult<CascadeConfig> {
        let s = self.normalized();
        let mut c = match s.preset.as_deref() {
            None | Some("daforest") => CascadeConfig::default(),
            Some("gcforest") => CascadeConfig::gcforest_baseline(),
            Some(other) => {
                return Err(CliError::config(format!(
                    "unknown preset '{other}' (expected daforest or gcforest)"
                )))
            }
        };
        if let Some(v) = &s.connectivity {
            c.connectivity = parse::<Connectivity>("connectivity", v)?;
        }
        set(&mut c.boosting, s.boosting);
        set(&mut c.learning_rate, s.learning_rate);
        set(&mut c.prob_clip, s.prob_clip);
        set(&mut c.max_layers, s.max_layers);
        set(&mut c.patience, s.patience);
        if let Some(n) = s.force_layers {
            c.force_layers = (n > 0).then_some(n);
        }
        set(&mut c.k_folds, s.k_folds);
        set(&mut c.random_forests, s.random_forests);
        set(&mut c.completely_random_forests, s.completely_random_forests);
        if let Some(n) = s.n_estimators {
            c.n_estimators = TreeCounts::uniform(n);
        }
        set(&mut c.n_estimators.random, s.n_estimators_random);
        set(&mut c.n_estimators.completely_random, s.n_estimators_completely_random);
        if let Some(v) = &s.search {
            c.search = parse::<EstimatorSearch>("search", v)?;
        }
        set(&mut c.search_holdout, s.search_holdout);
        if let Some(v) = &s.augmented {
            c.augmented = parse::<AugmentedFeatures>("augmented", v)?;
        }
        if let Some(v) = &s.output {
            c.output = parse::<OutputMode>("output_mode", v)?;
        }
        set(&mut c.weighted_bootstrap, s.weighted_bootstrap);
        set(&mut c.refit_full, s.refit_full);
        set(&mut c.seed, s.seed);
        c.validate()?;
        Ok(c)
    }

    /// Every key set, so the snapshot rebuilds `c` on its own.
    pub fn snapshot(c: &CascadeConfig) -> Settings {
        Settings {
            preset: None,
            connectivity: Some(c.connectivity.to_string()),
            boosting: Some(c.boosting),
            no_boosting: false,
            learning_rate: Some(c.learning_rate),
            prob_clip: Some(c.prob_clip),
            max_layers: Some(c.max_layers),
            patience: Some(c.patience),
            force_layers: Some(c.force_layers.unwrap_or(0)),
            k_folds: Some(c.k_folds),
            random_forests: Some(c.random_forests),
            completely_random_forests: Some(c.completely_random_forests),
            n_estimators: None,
            n_estimators_random: Some(c.n_estimators.random),
            n_estimators_completely_random: Some(c.n_estimators.completely_random),
            search: Some(c.search.to_string()),
            search_holdout: Some(c.search_holdout),
            augmented: Some(c.augmented.to_string()),
            output: Some(c.output.to_string()),
            weighted_bootstrap: Some(c.weighted_bootstrap),
            refit_full: Some(c.refit_full),
            seed: Some(c.seed),
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::config(format!("{key}: {e}")))
}

/// `--config FILE` plus flag overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat TOML file with training settings; flags take precedence.
    #[arg(long = "config", value_name = "FILE")]
    pub config_file: Option<PathBuf>,

    #[command(flatten)]
    pub settings: Settings,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<CascadeConfig> {
        let file = match &self.config_file {
            Some(p) => Settings::from_file(p)?,
            None => Settings::default(),
        };
        file.overlay(&self.settings).to_config()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: Settings = toml::from_str("connectivity = \"sparse\"\nseed = 3\nk_folds = 5\n").unwrap();
        let flags = Settings {
            seed: Some(9),
            no_boosting: true,
            ..Default::default()
        };
        let c = file.overlay(&flags).to_config().unwrap();
        assert_eq!(c.connectivity, Connectivity::Sparse);
        assert_eq!(c.seed, 9);
        assert_eq!(c.k_folds, 5);
        assert!(!c.boosting);
    }

    #[test]
    fn snapshot_round_trips() {
        let mut c = CascadeConfig::gcforest_baseline();
        c.force_layers = Some(4);
        c.seed = 11;
        let text = toml::to_string(&Settings::snapshot(&c)).unwrap();
        let back: Settings = toml::from_str(&text).unwrap();
        assert_eq!(back.to_config().unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys_and_values() {
        assert!(toml::from_str::<Settings>("layers = 3\n").is_err());
        let bad = Settings {
            connectivity: Some("ring".into()),
            ..Default::default()
        };
        assert!(bad.to_config().is_err());
    }
}
