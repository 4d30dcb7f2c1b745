use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, NonAdherenceMode};
use crate::dgp::{generate_dataset_a, generate_dataset_b, Generated, SyntheticConfig};
use crate::error::{Error, Result};
use crate::learners::{Architecture, Learner, LearnerKind};
use crate::net::TrainConfig;
use crate::rng::derive_seed;
use crate::stats;

use super::{pehe, split_indices, SplitRatios};

/// Which generator an experiment sweeps. Dataset A sweeps `γ`, Dataset B
/// sweeps `η`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgpKind {
    A,
    B,
}

impl DgpKind {
    pub fn generate(self, cfg: &SyntheticConfig) -> Result<Generated> {
        match self {
            DgpKind::A => generate_dataset_a(cfg),
            DgpKind::B => generate_dataset_b(cfg),
        }
    }

    fn default_sweep(self, mode: NonAdherenceMode) -> Vec<f64> {
        match (self, mode) {
            (DgpKind::A, NonAdherenceMode::OneSided) => (1..=9).map(|i| f64::from(i) / 10.0).collect(),
            (DgpKind::A, NonAdherenceMode::TwoSided) => (1..=9).map(|i| f64::from(i) * 0.05).collect(),
            (DgpKind::B, _) => vec![-2.0, -1.0, 0.0, 1.0, 2.0],
        }
    }

    fn apply(self, base: &SyntheticConfig, value: f64, seed: u64) -> SyntheticConfig {
        let mut c = base.clone();
        match self {
            DgpKind::A => c.gamma = value,
            DgpKind::B => c.eta = value,
        }
        c.seed = seed;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dgp: DgpKind,
    /// Generator settings; the swept field is overwritten per cell.
    pub data: SyntheticConfig,
    /// `None` selects the default grid for the generator and mode.
    pub sweep: Option<Vec<f64>>,
    pub learners: Vec<LearnerKind>,
    pub replications: usize,
    pub split: SplitRatios,
    pub seed: u64,
    pub arch: Architecture,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dgp: DgpKind::A,
            data: SyntheticConfig::default(),
            sweep: None,
            learners: LearnerKind::ALL.to_vec(),
            replications: 20,
            split: SplitRatios::default(),
            seed: 0,
            arch: Architecture::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn sweep_values(&self) -> Vec<f64> {
        self.sweep.clone().unwrap_or_else(|| self.dgp.default_sweep(self.data.mode))
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        if self.learners.is_empty() {
            return Err(Error::InvalidConfig("no learners selected".into()));
        }
        let sweep = self.sweep_values();
        if sweep.is_empty() {
            return Err(Error::InvalidConfig("empty sweep".into()));
        }
        for &v in &sweep {
            self.dgp.apply(&self.data, v, 0).validate()?;
        }
        self.split.validate()?;
        self.arch.validate()?;
        self.train.validate()
    }
}

/// One learner's PEHE on one replication; `pehe` is `None` when the fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub learner: LearnerKind,
    pub replication: usize,
    pub pehe: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeheResult {
    pub values: Vec<f64>,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl PeheResult {
    /// `None` when no value is available.
    pub fn from_values(values: Vec<f64>) -> Option<Self> {
        let (q25, median, q75) = stats::median_iqr(&values)?;
        Some(PeheResult {
            values,
            median,
            q25,
            q75,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep_value: f64,
    pub learner: LearnerKind,
    pub result: Option<PeheResult>,
    pub failures: usize,
}

/// Empirical effect components of one generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub sweep_value: f64,
    pub replication: usize,
    pub mean_delta_a: f64,
    pub mean_delta_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub results: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub datasets: Vec<DatasetRow>,
}

impl ExperimentReport {
    pub fn summary_for(&self, sweep_value: f64, learner: LearnerKind) -> Option<&PeheResult> {
        self.summary
            .iter()
            .find(|s| s.sweep_value == sweep_value && s.learner == learner)
            .and_then(|s| s.result.as_ref())
    }

    /// `sweep_value,learner,replication,pehe`; failed cells leave `pehe` empty.
    pub fn write_results_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sweep_value", "learner", "replication", "pehe"])?;
        for r in &self.results {
            out.write_record([
                fmt_f64(r.sweep_value),
                r.learner.to_string(),
                r.replication.to_string(),
                r.pehe.map(fmt_f64).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// `sweep_value,learner,median,q25,q75`; empty when every cell failed.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sweep_value", "learner", "median", "q25", "q75"])?;
        for s in &self.summary {
            let f = |g: fn(&PeheResult) -> f64| s.result.as_ref().map(|r| fmt_f64(g(r))).unwrap_or_default();
            out.write_record([
                fmt_f64(s.sweep_value),
                s.learner.to_string(),
                f(|r| r.median),
                f(|r| r.q25),
                f(|r| r.q75),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_datasets_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sweep_value", "replication", "mean_delta_a", "mean_delta_y"])?;
        for d in &self.datasets {
            out.write_record([
                fmt_f64(d.sweep_value),
                d.replication.to_string(),
                fmt_f64(d.mean_delta_a),
                fmt_f64(d.mean_delta_y),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `results.csv`, `summary.csv` and `datasets.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_results_csv(std::fs::File::create(dir.join("results.csv"))?)?;
        self.write_summary_csv(std::fs::File::create(dir.join("summary.csv"))?)?;
        self.write_datasets_csv(std::fs::File::create(dir.join("datasets.csv"))?)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let dgp = cfg.dgp;
    run_experiment_with(cfg, move |c| dgp.generate(c))
}

/// Same protocol as [`run_experiment`] with a caller-supplied generator.
///
/// Cell `(s, r)` draws its data with seed `derive_seed(seed, [s, r])`, so
/// tables do not depend on scheduling. Generator errors abort; learner
/// errors are recorded in the affected rows.
pub fn run_experiment_with<G>(cfg: &ExperimentConfig, generate: G) -> Result<ExperimentReport>
where
    G: Fn(&SyntheticConfig) -> Result<Generated> + Sync,
{
    cfg.validate()?;
    let sweep = cfg.sweep_values();
    let cells: Vec<(usize, usize)> = (0..sweep.len())
        .flat_map(|s| (0..cfg.replications).map(move |r| (s, r)))
        .collect();

    let outputs: Vec<(DatasetRow, Vec<ResultRow>)> = cells
        .par_iter()
        .map(|&(s, r)| {
            let seed = derive_seed(cfg.seed, &[s as u64, r as u64]);
            let gen = generate(&cfg.dgp.apply(&cfg.data, sweep[s], seed))?;
            run_cell(cfg, sweep[s], r, seed, &gen)
        })
        .collect::<Result<_>>()?;

    let mut results = Vec::new();
    let mut datasets = Vec::new();
    for (d, rows) in outputs {
        datasets.push(d);
        results.extend(rows);
    }
    let mut summary = Vec::new();
    for &v in &sweep {
        for &learner in &cfg.learners {
            let cell: Vec<&ResultRow> = results.iter().filter(|r| r.sweep_value == v && r.learner == learner).collect();
            let ok: Vec<f64> = cell.iter().filter_map(|r| r.pehe).collect();
            summary.push(SummaryRow {
                sweep_value: v,
                learner,
                failures: cell.len() - ok.len(),
                result: PeheResult::from_values(ok),
            });
        }
    }
    Ok(ExperimentReport {
        results,
        summary,
        datasets,
    })
}

fn run_cell(
    cfg: &ExperimentConfig,
    value: f64,
    replication: usize,
    seed: u64,
    gen: &Generated,
) -> Result<(DatasetRow, Vec<ResultRow>)> {
    let ds = &gen.dataset;
    let split = split_indices(ds.len(), &cfg.split, derive_seed(seed, &[0x5b]))?;
    let (train, val, test) = (ds.subset(&split.train), ds.subset(&split.val), ds.subset(&split.test));
    let truth = test.truth()?;
    let x_test = test.features();
    let rows = cfg
        .learners
        .iter()
        .map(|&learner| {
            // Keyed by kind, so dropping a learner leaves the others unchanged.
            let k = LearnerKind::ALL.iter().position(|&l| l == learner).expect("known kind");
            let tc = TrainConfig {
                seed: derive_seed(seed, &[0x1e, k as u64]),
                ..cfg.train.clone()
            };
            let outcome = Learner::fit(learner, &cfg.arch, &train, &val, &tc)
                .and_then(|l| l.predict_catea(&x_test))
                .and_then(|est| pehe(&est, truth));
            ResultRow {
                sweep_value: value,
                learner,
                replication,
                error: outcome.as_ref().err().map(|e| e.to_string()),
                pehe: outcome.ok(),
            }
        })
        .collect();
    let dataset_row = DatasetRow {
        sweep_value: value,
        replication,
        mean_delta_a: stats::mean(&gen.delta_a),
        mean_delta_y: stats::mean(&gen.delta_y),
    };
    Ok((dataset_row, rows))
}
