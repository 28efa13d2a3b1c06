//! JSON configuration shared by the CLI subcommands. Parsing is strict:
//! unknown fields are rejected so drifted hyperparameter names surface
//! immediately.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bwr::BwrParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoiConfig {
    pub out_h: usize,
    pub out_w: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub lambda: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        RoiConfig { out_h: 32, out_w: 64, grid_h: 8, grid_w: 16, lambda: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DerConvConfig {
    /// Input channel count of the de-redundant convolution; multiple of 8.
    pub c: usize,
    pub init_seed: u64,
}

impl Default for DerConvConfig {
    fn default() -> Self {
        DerConvConfig { c: 16, init_seed: 0x5645_494E }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Keys per instance for cross matching.
    pub n_keys: usize,
    /// Histogram bins for the unlinkability estimate.
    pub n_bins: usize,
    pub master_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_keys: 5, n_bins: 100, master_seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub dataset: PathBuf,
    pub models: PathBuf,
    pub keys: PathBuf,
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            dataset: "data".into(),
            models: "models".into(),
            keys: "keys".into(),
            out: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub bwr: BwrParams,
    pub roi: RoiConfig,
    pub derconv: DerConvConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Config {
    /// Validates every field against its module's invariants, naming the
    /// offending field on failure.
    pub fn validate(&self) -> Result<()> {
        self.bwr.validate().map_err(|e| Error::domain(format!("bwr: {e}")))?;
        self.bwr
            .validate_for(self.roi.out_h, self.roi.out_w)
            .map_err(|e| Error::domain(format!("bwr/roi: {e}")))?;
        if self.roi.grid_h == 0 || self.roi.grid_w == 0 {
            return Err(Error::domain("roi: pooling grid dims must be >= 1"));
        }
        if !(self.roi.lambda >= 0.0 && self.roi.lambda.is_finite()) {
            return Err(Error::domain("roi: lambda must be finite and >= 0"));
        }
        if self.derconv.c == 0 || !self.derconv.c.is_multiple_of(8) {
            return Err(Error::domain(format!(
                "derconv: c = {} must be a positive multiple of 8",
                self.derconv.c
            )));
        }
        if self.eval.n_keys < 2 {
            return Err(Error::domain("eval: n_keys must be >= 2"));
        }
        if self.eval.n_bins < 2 {
            return Err(Error::domain("eval: n_bins must be >= 2"));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Loads and validates a config file (strict: unknown fields rejected).
pub fn load_config(path: impl AsRef<Path>) -> Result<Config> {
    let bytes = std::fs::read(&path)?;
    let config: Config =
        serde_json::from_slice(&bytes).map_err(|e| Error::format(format!("config: {e}")))?;
    config.validate()?;
    Ok(config)
}
