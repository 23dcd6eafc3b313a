//! Experiment runner for the `bea` binary.

use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

pub mod commands;
pub mod config;

pub use config::{Experiment, ExperimentConfig};

/// Failure of a subcommand, mapped to the process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Check(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Check(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn from_core(e: bea_core::Error) -> Self {
        use bea_core::Error as E;
        match e {
            E::NoConvergence { .. }
            | E::DegenerateFit(_)
            | E::SolvabilityViolated { .. }
            | E::AssumptionViolated(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<bea_core::Error> for CliError {
    fn from(e: bea_core::Error) -> Self {
        CliError::from_core(e)
    }
}

/// Lowercase hex SHA-256 of the rendered configuration.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let digest = Sha256::digest(config.render().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// First comment line of every output file.
pub fn provenance(config: &ExperimentConfig) -> String {
    format!(
        "bea {}, seed = {}, config = {}",
        env!("CARGO_PKG_VERSION"),
        config.mc.seed,
        config_hash(config)
    )
}

pub fn write_output(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_every_field() {
        let text = "scheme = \"split_step\"\ndeltas = [0.1]\norder = 1\nobservable = [\"1\"]\n[potential]\nkind = \"ou\"\n";
        let a = ExperimentConfig::parse(text).unwrap();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
        b.mc.seed += 1;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert!(provenance(&b).starts_with(&format!("bea {}, seed = 2,", env!("CARGO_PKG_VERSION"))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config(String::new()).exit_code(), 1);
        assert_eq!(CliError::Check(String::new()).exit_code(), 2);
        let e = bea_core::Error::NoConvergence {
            iterations: 3,
            residual: 1.0,
        };
        assert_eq!(CliError::from_core(e).exit_code(), 3);
    }
}
