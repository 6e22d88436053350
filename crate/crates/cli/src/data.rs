use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use daforest::dataio::{load_csv, load_csv_features, load_libsvm, Column, CsvOptions, Dataset};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Libsvm,
}

/// Where a dataset lives and how to parse it. Shared by the command-line
/// flags and the `[[dataset]]` tables of a benchmark manifest.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Input table.
    #[arg(long = "data", value_name = "FILE")]
    pub path: PathBuf,

    #[arg(long, value_enum, default_value_t = Format::Csv)]
    #[serde(default)]
    pub format: Format,

    /// Label column: a header name, a 0-based index, or `last`.
    #[arg(long, default_value = "last", value_name = "COLUMN")]
    #[serde(default = "default_label")]
    pub label: String,

    /// Columns to ignore (repeatable).
    #[arg(long = "drop", value_name = "COLUMN")]
    #[serde(default)]
    pub drop: Vec<String>,

    /// The first row holds data, not column names.
    #[arg(long)]
    #[serde(default)]
    pub no_header: bool,

    #[arg(long, default_value_t = ',', value_name = "CHAR")]
    #[serde(default = "default_delimiter")]
    pub delimiter: char,

    /// Replace missing cells (`?`, `NA`, empty) with the column mean.
    #[arg(long)]
    #[serde(default)]
    pub impute: bool,

    /// Feature count for LIBSVM input (default: largest index seen).
    #[arg(long, value_name = "D")]
    #[serde(default)]
    pub libsvm_dim: Option<usize>,
}

fn default_label() -> String {
    "last".into()
}

fn default_delimiter() -> char {
    ','
}

impl DataSpec {
    fn csv_options(&self) -> CliResult<CsvOptions> {
        if !self.delimiter.is_ascii() {
            return Err(CliError::config("delimiter must be a single ASCII character"));
        }
        Ok(CsvOptions {
            label_column: Column::parse(&self.label),
            has_header: !self.no_header,
            delimiter: self.delimiter as u8,
            drop_columns: self.drop.iter().map(|c| Column::parse(c)).collect(),
            impute_missing: self.impute,
        })
    }

    /// Paths in a manifest are relative to the manifest's directory.
    pub fn relative_to(mut self, dir: &Path) -> Self {
        if self.path.is_relative() {
            self.path = dir.join(&self.path);
        }
        self
    }

    pub fn load(&self) -> CliResult<Dataset> {
        match self.format {
            Format::Csv => Ok(load_csv(&self.path, &self.csv_options()?)?),
            Format::Libsvm => {
                let load = load_libsvm(&self.path, self.libsvm_dim)?;
                log::info!("{}: sparsity {:.4}", self.path.display(), load.sparsity);
                Ok(load.dataset)
            }
        }
    }

    pub fn load_features(&self) -> CliResult<Array2<f64>> {
        match self.format {
            Format::Csv => Ok(load_csv_features(&self.path, &self.csv_options()?)?),
            Format::Libsvm => Ok(self.load()?.features().to_owned()),
        }
    }
}
