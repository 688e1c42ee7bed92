//! Versioned run configuration. One file drives the whole pipeline; its
//! SHA-256 is stamped into every artifact so outputs can be traced back to
//! the exact settings that produced them.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dcbf::sim::{Segment, StateSpacePlant};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    pub plant: PlantConfig,
    pub t_ini: usize,
    pub dataset_length: usize,
    pub excitation_seed: u64,
    pub bounds: BoundsConfig,
    pub filter: FilterSection,
    pub invariant_set: InvariantSection,
    pub scenario: ScenarioConfig,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub input_delay: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub lambda_min: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvariantSection {
    pub max_iter: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub steps: usize,
    pub sample_time_s: f64,
    pub seed: u64,
    pub schedule: Vec<Segment>,
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Validation(format!(
            "{what} must be a nonempty rectangular matrix"
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Validation(format!(
            "{what} contains a non-finite entry"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl PlantConfig {
    pub fn build(&self) -> Result<StateSpacePlant, CliError> {
        let a = to_matrix(&self.a, "plant.a")?;
        let b = to_matrix(&self.b, "plant.b")?;
        let c = to_matrix(&self.c, "plant.c")?;
        StateSpacePlant::new(a, b, c, self.input_delay)
            .map_err(|e| CliError::Validation(e.to_string()))
    }
}

impl Config {
    /// Parse and validate a config file; returns the config together with
    /// the hex SHA-256 of the raw bytes.
    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let bytes = std::fs::read(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let hash: String = Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let cfg: Config = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Validation(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok((cfg, hash))
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Validation(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let plant = self.plant.build()?;
        let (m, p) = (plant.m(), plant.p());
        if self.bounds.u_min.len() != m || self.bounds.u_max.len() != m {
            return Err(CliError::Validation(format!(
                "input bounds must have {m} entries to match the plant"
            )));
        }
        if self.bounds.y_min.len() != p || self.bounds.y_max.len() != p {
            return Err(CliError::Validation(format!(
                "output bounds must have {p} entries to match the plant"
            )));
        }
        if self.t_ini == 0 {
            return Err(CliError::Validation("t_ini must be positive".into()));
        }
        if !(self.filter.lambda_min > 0.0 && self.filter.lambda_min <= 1.0) {
            return Err(CliError::Validation(
                "filter.lambda_min must lie in (0, 1]".into(),
            ));
        }
        if !(self.filter.beta.is_finite() && self.filter.beta > 0.0) {
            return Err(CliError::Validation("filter.beta must be positive".into()));
        }
        if !(self.scenario.sample_time_s.is_finite() && self.scenario.sample_time_s > 0.0) {
            return Err(CliError::Validation(
                "scenario.sample_time_s must be positive".into(),
            ));
        }
        if !(self.invariant_set.tol.is_finite() && self.invariant_set.tol > 0.0) {
            return Err(CliError::Validation(
                "invariant_set.tol must be positive".into(),
            ));
        }
        Ok(())
    }
}
