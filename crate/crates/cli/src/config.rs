//! Optional `key = value` parameter file. Command-line flags take precedence.

use std::path::Path;

use anyhow::anyhow;
use serde::Deserialize;

use crate::failure::{validation, CliResult};
use crate::files::read_text;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub variant: Option<String>,
    pub likelihood: Option<String>,
    pub activation: Option<String>,
    pub latent_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub data_dim: Option<usize>,
    pub n: Option<usize>,
    pub rows: Option<usize>,
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    pub gamma_guard_c: Option<f64>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub b1: Option<usize>,
    pub b2: Option<usize>,
    pub mode: Option<String>,
    pub tol: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = read_text(path)?;
        toml::from_str(&text).map_err(|e| validation(anyhow!("{}: {e}", path.display())))
    }
}

/// Flag value, else file value, else default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
