use std::fmt;
use std::path::Path;

/// Process exit codes, one per error class. Usage errors (code 2) are
/// reported by the argument parser before any command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io = 3,
    Data = 4,
    Config = 5,
    Archive = 6,
    Invariant = 7,
}

#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Config, message)
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(ErrorClass::Io, format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        self.class as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<daforest::Error> for CliError {
    fn from(e: daforest::Error) -> Self {
        use daforest::Error as E;
        let class = match &e {
            E::Io { .. } => ErrorClass::Io,
            E::Parse { .. }
            | E::MissingLabelColumn(_)
            | E::Empty
            | E::InvalidData(_)
            | E::DimensionMismatch { .. }
            | E::ZeroWeights => ErrorClass::Data,
            E::InvalidArgument(_) => ErrorClass::Config,
            E::Archive(_) => ErrorClass::Archive,
            E::Invariant(_) => ErrorClass::Invariant,
        };
        Self::new(class, e.to_string())
    }
}
