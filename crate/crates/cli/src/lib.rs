//! Config-driven experiment runner for the `vicntm` topic models.
//!
//! Every command derives a manifest (a JSON object holding everything that
//! determines its outputs), hashes it, and writes into a directory named
//! after the hash. Re-running a manifest reuses the finished directory, so
//! outputs are byte-identical and earlier runs are never modified.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod manifest;

use std::fmt;

pub use config::ExperimentConfig;

/// Failure classes, mapped one-to-one onto process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Config,
    Data,
    Training,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Config => 1,
            Kind::Data => 2,
            Kind::Training => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub source: anyhow::Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.source)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub trait WithKind<T> {
    fn kind(self, kind: Kind) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> WithKind<T> for std::result::Result<T, E> {
    fn kind(self, kind: Kind) -> CliResult<T> {
        self.map_err(|e| CliError {
            kind,
            source: e.into(),
        })
    }
}

/// Classifies a library error raised while training: numeric blow-ups are
/// training failures, anything else points at the inputs.
pub fn training_kind(e: &vicntm::Error) -> Kind {
    use vicntm::Error as E;
    match e {
        E::NonFiniteLoss { .. } | E::NonFiniteGradient(_) | E::Divergence { .. } => Kind::Training,
        E::InvalidArgument(_) | E::MissingSamples { .. } => Kind::Config,
        _ => Kind::Data,
    }
}
