//! Experiment orchestration: PEHE, deterministic splits, replicated sweeps,
//! bound-verification campaigns and config loading for the CLI.

mod bounds;
mod experiment;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::stats;

pub use bounds::{check_population, random_population, verify_bounds, BoundsCampaign, BoundsReport, ConfigCheck, MonteCarloConfig};
pub use experiment::{
    run_experiment, run_experiment_with, DatasetRow, DgpKind, ExperimentConfig, ExperimentReport, PeheResult,
    ResultRow, SummaryRow,
};

/// Root mean squared difference between estimates and truth.
pub fn pehe(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    if estimates.len() != truth.len() {
        return Err(Error::LengthMismatch(estimates.len(), truth.len()));
    }
    if estimates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sq: Vec<f64> = estimates.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).collect();
    Ok(stats::mean(&sq).sqrt())
}

/// Held-out fractions. `val` is taken from what remains after the test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub test: f64,
    pub val: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { test: 0.2, val: 0.2 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.test) || !open(self.val) {
            return Err(Error::InvalidConfig("split ratios must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Disjoint, exhaustive index partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with `seed` and cuts off `round(n·test)` test indices,
/// then `round(rest·val)` validation indices. Each part is sorted.
pub fn split_indices(n: usize, ratios: &SplitRatios, seed: u64) -> Result<Split> {
    ratios.validate()?;
    let n_test = (n as f64 * ratios.test).round() as usize;
    let n_val = ((n - n_test.min(n)) as f64 * ratios.val).round() as usize;
    if n_test == 0 || n_val == 0 || n_test + n_val >= n {
        return Err(Error::InvalidConfig(format!("{n} samples cannot fill every split")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, 0x5b1e));
    let part = |r: std::ops::Range<usize>| {
        let mut v = idx[r].to_vec();
        v.sort_unstable();
        v
    };
    Ok(Split {
        test: part(0..n_test),
        val: part(n_test..n_test + n_val),
        train: part(n_test + n_val..n),
    })
}

/// Reads a TOML or JSON config; the extension picks the format, anything
/// else is tried as TOML first.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    parse_config(&text, path.extension().and_then(|e| e.to_str()))
}

pub fn parse_config<T: DeserializeOwned>(text: &str, ext: Option<&str>) -> Result<T> {
    let from_toml = |s: &str| toml::from_str::<T>(s).map_err(|e| Error::Parse(e.to_string()));
    let from_json = |s: &str| serde_json::from_str::<T>(s).map_err(|e| Error::Parse(e.to_string()));
    match ext {
        Some("json") => from_json(text),
        Some("toml") => from_toml(text),
        _ => from_toml(text).or_else(|_| from_json(text)),
    }
}
