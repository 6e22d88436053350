//! Boosted deep forest: a cascade of random-forest layers trained with
//! out-of-fold probabilistic features and layer-wise multiclass boosting.

pub mod benchmark;
pub mod cascade;
pub mod dataio;
pub mod error;
pub mod forest;
pub mod persistence;
pub mod rng;
pub mod search;
pub mod stats;
pub mod tree;
pub mod util;

pub use cascade::{fit, CascadeConfig, Connectivity, DaForestModel};
pub use dataio::{load_csv, load_csv_features, CsvOptions, Dataset};
pub use error::{ArchiveError, Error, Result};
pub use forest::{fit_forest, Forest, ForestKind, ForestParams};
pub use persistence::{load_model, save_model};
pub use stats::AccuracyMatrix;
