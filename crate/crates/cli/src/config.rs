//! TOML configuration files layered over built-in defaults.

use std::path::Path;

use jmls_core::psaem::{OccupancyDivisor, StepSchedule};
use jmls_core::{JmlsError, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Settings for `identify` and `smooth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n_particles: usize,
    pub n_iters: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub schedule: StepSchedule,
    pub divisor: OccupancyDivisor,
    pub t_len: usize,
    pub input_pole: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_particles: 3,
            n_iters: 1000,
            burn_in: 100,
            seed: 1,
            schedule: StepSchedule::default(),
            divisor: OccupancyDivisor::Split,
            t_len: 1000,
            input_pole: 0.9,
        }
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Applies the keys present in `text` on top of `base`.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, text: &str) -> Result<T> {
    let mut value = toml::Value::try_from(base).map_err(|e| JmlsError::Parse(e.to_string()))?;
    let file: toml::Value =
        toml::from_str(text).map_err(|e| JmlsError::Parse(format!("config: {e}")))?;
    merge(&mut value, file);
    value
        .try_into()
        .map_err(|e| JmlsError::Parse(format!("config: {e}")))
}

pub fn load_overlay<T: Serialize + DeserializeOwned>(base: T, path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(base),
        Some(p) => overlay(&base, &std::fs::read_to_string(p)?),
    }
}
