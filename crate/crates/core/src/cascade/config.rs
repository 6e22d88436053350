use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::forest::ForestKind;
use crate::search::SearchRange;

/// How layer `l >= 2` sees the input and earlier layers' outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    /// Previous layer's output only.
    Plain,
    /// Original features plus the previous layer's output.
    Sparse,
    /// Original features plus every earlier layer's output, newest first.
    Dense,
}

/// What each layer appends to the next layer's input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentedFeatures {
    /// Concatenated per-slot class probabilities, `K * n` columns.
    Probabilities,
    /// The layer's boosting score `h`, `K` columns.
    HScores,
}

/// How the final decision is formed from the layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    /// Sum of `h` over all layers.
    Additive,
    /// `h` of the last layer only.
    LastLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorSearch {
    /// Use [`CascadeConfig::n_estimators`] as given.
    Off,
    /// Search with the range picked from the training-set size.
    Auto,
    Range(SearchRange),
}

/// Trees per forest for each forest kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeCounts {
    pub random: usize,
    pub completely_random: usize,
}

impl TreeCounts {
    pub fn uniform(n: usize) -> Self {
        Self {
            random: n,
            completely_random: n,
        }
    }

    pub fn get(&self, kind: ForestKind) -> usize {
        match kind {
            ForestKind::Random => self.random,
            ForestKind::CompletelyRandom => self.completely_random,
        }
    }

    pub fn set(&mut self, kind: ForestKind, n: usize) {
        match kind {
            ForestKind::Random => self.random = n,
            ForestKind::CompletelyRandom => self.completely_random = n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    pub connectivity: Connectivity,
    pub boosting: bool,
    pub learning_rate: f64,
    pub prob_clip: f64,
    pub max_layers: usize,
    pub patience: usize,
    /// Train exactly this many layers and keep all of them.
    pub force_layers: Option<usize>,
    pub k_folds: usize,
    pub random_forests: usize,
    pub completely_random_forests: usize,
    pub n_estimators: TreeCounts,
    pub search: EstimatorSearch,
    pub search_holdout: f64,
    pub augmented: AugmentedFeatures,
    pub output: OutputMode,
    pub weighted_bootstrap: bool,
    /// Predict with one forest per slot refit on all rows instead of
    /// averaging the fold models.
    pub refit_full: bool,
    /// Keep per-layer OOF matrices, weights and fold row sets in the history.
    pub record_trace: bool,
    pub seed: u64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            connectivity: Connectivity::Dense,
            boosting: true,
            learning_rate: 0.3,
            prob_clip: 1e-9,
            max_layers: 100,
            patience: 3,
            force_layers: None,
            k_folds: 3,
            random_forests: 4,
            completely_random_forests: 4,
            n_estimators: TreeCounts::uniform(500),
            search: EstimatorSearch::Auto,
            search_holdout: 0.2,
            augmented: AugmentedFeatures::Probabilities,
            output: OutputMode::Additive,
            weighted_bootstrap: false,
            refit_full: false,
            record_trace: false,
            seed: 0,
        }
    }
}

impl CascadeConfig {
    /// Unboosted cascade with sparse connectivity and last-layer output,
    /// 500 trees per forest: the gcForest cascade without scanning.
    pub fn gcforest_baseline() -> Self {
        Self {
            connectivity: Connectivity::Sparse,
            boosting: false,
            search: EstimatorSearch::Off,
            n_estimators: TreeCounts::uniform(500),
            output: OutputMode::LastLayer,
            ..Self::default()
        }
    }

    /// Forest kind of every slot: completely-random and random interleaved,
    /// starting with completely-random, then whatever remains of either kind.
    pub fn slot_layout(&self) -> Vec<ForestKind> {
        let mut out = Vec::with_capacity(self.n_slots());
        let (mut cr, mut r) = (self.completely_random_forests, self.random_forests);
        while cr > 0 || r > 0 {
            if cr > 0 {
                out.push(ForestKind::CompletelyRandom);
                cr -= 1;
            }
            if r > 0 {
                out.push(ForestKind::Random);
                r -= 1;
            }
        }
        out
    }

    pub fn n_slots(&self) -> usize {
        self.random_forests + self.completely_random_forests
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_slots() == 0 {
            return bad("at least one forest per layer is required".into());
        }
        if self.k_folds < 2 {
            return bad(format!("k_folds = {}, need at least 2", self.k_folds));
        }
        if self.max_layers == 0 {
            return bad("max_layers must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.force_layers == Some(0) {
            return bad("force_layers must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.prob_clip > 0.0 && self.prob_clip < 1.0) {
            return bad(format!("prob_clip {} must lie in (0, 1)", self.prob_clip));
        }
        if !(self.search_holdout > 0.0 && self.search_holdout < 1.0) {
            return bad(format!("search_holdout {} must lie in (0, 1)", self.search_holdout));
        }
        if self.search == EstimatorSearch::Off
            && ((self.random_forests > 0 && self.n_estimators.random == 0)
                || (self.completely_random_forests > 0 && self.n_estimators.completely_random == 0))
        {
            return bad("n_estimators must be at least 1".into());
        }
        Ok(())
    }
}

macro_rules! named_enum {
    ($ty:ident { $($variant:ident => $name:literal $(| $alias:literal)*),+ $(,)? }) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name $(| $alias)* => Ok($ty::$variant),)+
                    other => Err(Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($ty), " '{}'"), other
                    ))),
                }
            }
        }
    };
}

named_enum!(Connectivity { Plain => "plain", Sparse => "sparse", Dense => "dense" });
named_enum!(AugmentedFeatures {
    Probabilities => "probabilities" | "proba" | "p",
    HScores => "h-scores" | "h" | "h_scores",
});
named_enum!(OutputMode { Additive => "additive", LastLayer => "last-layer" | "last_layer" | "last" });

impl fmt::Display for EstimatorSearch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorSearch::Off => f.write_str("off"),
            EstimatorSearch::Auto => f.write_str("auto"),
            EstimatorSearch::Range(r) => write!(f, "{r}"),
        }
    }
}

impl FromStr for EstimatorSearch {
    type Err = Error;

    /// `off`, `auto`, or a range `lo:hi:step`.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "off" | "none" | "false" => Ok(EstimatorSearch::Off),
            "auto" | "on" | "true" => Ok(EstimatorSearch::Auto),
            other => other.parse().map(EstimatorSearch::Range),
        }
    }
}
