//! Single-stratum estimation at a fixed covariate value.
//!
//! With `x` held fixed, every nuisance is a plain frequency or cell mean, so
//! the backdoor and front-door estimators become closed-form plug-ins whose
//! sampling variance can be measured by simulation and compared with
//! [`crate::theory`].

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjustment::{cfd_catea, sbd_catea, CateaValue};
use crate::data::{NonAdherenceMode, NuisanceValues};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};
use crate::stats;
use crate::theory::{CellProbabilities, VarianceParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumRecord {
    pub t: u8,
    pub a: u8,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumData {
    pub records: Vec<StratumRecord>,
    pub mode: NonAdherenceMode,
}

impl StratumData {
    /// Builds from `(t, a, y)` triples.
    pub fn from_triples(triples: &[(u8, u8, f64)], mode: NonAdherenceMode) -> Self {
        StratumData {
            records: triples
                .iter()
                .map(|&(t, a, y)| StratumRecord { t, a, y })
                .collect(),
            mode,
        }
    }
}

/// Maximum-likelihood estimates for one stratum. Cell maps are indexed `[a][t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub n: usize,
    pub pi_hat: f64,
    pub omega_hat: [[f64; 2]; 2],
    pub a_mean: [f64; 2],
    pub y_mean_t: [f64; 2],
    /// `None` exactly when the cell is empty.
    pub y_mean_at: [[Option<f64>; 2]; 2],
}

impl StratumSummary {
    pub fn omega(&self, a: u8, t: u8) -> f64 {
        self.omega_hat[a as usize][t as usize]
    }

    pub fn y_at(&self, a: u8, t: u8) -> Option<f64> {
        self.y_mean_at[a as usize][t as usize]
    }
}

/// Cell counts and outcome sums; the sufficient statistics of a stratum.
#[derive(Debug, Clone, Copy, Default)]
struct CellTotals {
    count: [[usize; 2]; 2],
    y_sum: [[f64; 2]; 2],
}

impl CellTotals {
    fn push(&mut self, t: u8, a: u8, y: f64) {
        self.count[a as usize][t as usize] += 1;
        self.y_sum[a as usize][t as usize] += y;
    }

    fn summarize(&self) -> Result<StratumSummary> {
        let c = &self.count;
        let n = c[0][0] + c[0][1] + c[1][0] + c[1][1];
        if n == 0 {
            return Err(Error::EmptyStratum);
        }
        let n_t = [c[0][0] + c[1][0], c[0][1] + c[1][1]];
        if n_t[0] == 0 || n_t[1] == 0 {
            return Err(Error::MissingAssignmentArm);
        }
        let nf = n as f64;
        let mut omega_hat = [[0.0; 2]; 2];
        let mut y_mean_at = [[None; 2]; 2];
        for a in 0..2 {
            for t in 0..2 {
                omega_hat[a][t] = c[a][t] as f64 / nf;
                if c[a][t] > 0 {
                    y_mean_at[a][t] = Some(self.y_sum[a][t] / c[a][t] as f64);
                }
            }
        }
        let mut a_mean = [0.0; 2];
        let mut y_mean_t = [0.0; 2];
        for t in 0..2 {
            a_mean[t] = c[1][t] as f64 / n_t[t] as f64;
            y_mean_t[t] = (self.y_sum[0][t] + self.y_sum[1][t]) / n_t[t] as f64;
        }
        Ok(StratumSummary {
            n,
            pi_hat: n_t[1] as f64 / nf,
            omega_hat,
            a_mean,
            y_mean_t,
            y_mean_at,
        })
    }
}

/// Empirical frequencies and cell means. Cell means divide by cell counts.
pub fn mle_summary(sd: &StratumData) -> Result<StratumSummary> {
    let mut totals = CellTotals::default();
    for r in &sd.records {
        totals.push(r.t, r.a, r.y);
    }
    totals.summarize()
}

fn sbd_from_summary(s: &StratumSummary) -> CateaValue {
    sbd_catea(s.y_mean_t[1], s.y_mean_t[0])
}

fn cfd_from_summary(s: &StratumSummary, mode: NonAdherenceMode) -> Result<CateaValue> {
    let mut y_given_at = [[0.0; 2]; 2];
    for &(a, t) in mode.possible_cells() {
        y_given_at[a as usize][t as usize] = s.y_at(a, t).ok_or(Error::EmptyCell { a, t })?;
    }
    let nv = NuisanceValues {
        pi: s.pi_hat,
        a_given_t: s.a_mean,
        y_given_at,
    };
    cfd_catea(&nv, mode)
}

pub fn sbd_plugin(sd: &StratumData) -> Result<CateaValue> {
    match mle_summary(sd) {
        Ok(s) => Ok(sbd_from_summary(&s)),
        Err(Error::EmptyStratum) => Err(Error::MissingAssignmentArm),
        Err(e) => Err(e),
    }
}

/// Front-door plug-in. Fails with [`Error::EmptyCell`] naming the first empty
/// cell the mode needs.
pub fn cfd_plugin(sd: &StratumData) -> Result<CateaValue> {
    cfd_from_summary(&mle_summary(sd)?, sd.mode)
}

/// Outcome distribution for one intake arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeDist {
    Bernoulli { p: f64 },
    Gaussian { mean: f64, variance: f64 },
}

impl OutcomeDist {
    pub fn mean(&self) -> f64 {
        match *self {
            OutcomeDist::Bernoulli { p } => p,
            OutcomeDist::Gaussian { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            OutcomeDist::Bernoulli { p } => p * (1.0 - p),
            OutcomeDist::Gaussian { variance, .. } => variance,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            OutcomeDist::Bernoulli { p } => (0.0..=1.0).contains(&p),
            OutcomeDist::Gaussian { mean, variance } => mean.is_finite() && variance >= 0.0 && variance.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidPopulation(format!("bad outcome distribution {self:?}")))
        }
    }
}

/// A fully mediated single-stratum population: `t ~ Bern(π)`,
/// `a | t ~ Bern(p_a_given_t[t])`, `y | a ~ outcome_dist[a]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruePopulation {
    pub pi: f64,
    pub p_a_given_t: [f64; 2],
    pub outcome_dist: [OutcomeDist; 2],
}

impl TruePopulation {
    pub fn cells(&self) -> CellProbabilities {
        let (pi, p0, p1) = (self.pi, self.p_a_given_t[0], self.p_a_given_t[1]);
        CellProbabilities {
            omega: [
                [(1.0 - pi) * (1.0 - p0), pi * (1.0 - p1)],
                [(1.0 - pi) * p0, pi * p1],
            ],
        }
    }

    pub fn variance_params(&self, mode: NonAdherenceMode) -> VarianceParams {
        let [p0, p1] = self.p_a_given_t;
        let [y0, y1] = self.outcome_dist;
        VarianceParams {
            v_y0: y0.variance(),
            v_y1: y1.variance(),
            v_a0: p0 * (1.0 - p0),
            v_a1: p1 * (1.0 - p1),
            e_a0: p0,
            e_a1: p1,
            e_y0: y0.mean(),
            e_y1: y1.mean(),
            pi: self.pi,
            mode,
        }
    }

    /// `Δ_A · Δ_Y`.
    pub fn true_catea(&self) -> f64 {
        (self.p_a_given_t[1] - self.p_a_given_t[0])
            * (self.outcome_dist[1].mean() - self.outcome_dist[0].mean())
    }

    /// Smallest probability among the cells `mode` allows.
    pub fn positivity_margin(&self, mode: NonAdherenceMode) -> f64 {
        crate::theory::rho(&self.cells(), mode)
    }

    pub fn validate(&self, mode: NonAdherenceMode) -> Result<()> {
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(Error::InvalidPopulation(format!("pi = {}", self.pi)));
        }
        if !self.p_a_given_t.iter().all(|p| (0.0..=1.0).contains(p)) {
            return Err(Error::InvalidPopulation("intake probabilities outside [0, 1]".into()));
        }
        if mode == NonAdherenceMode::OneSided && self.p_a_given_t[0] != 0.0 {
            return Err(Error::InvalidPopulation(
                "one-sided populations need P(a=1 | t=0) = 0".into(),
            ));
        }
        for d in &self.outcome_dist {
            d.validate()?;
        }
        if !(self.positivity_margin(mode) > 0.0) {
            return Err(Error::DegeneratePopulation);
        }
        Ok(())
    }

    fn draw(&self, rng: &mut Rng, normals: &[Option<Normal<f64>>; 2]) -> (u8, u8, f64) {
        let t = u8::from(rng.random::<f64>() < self.pi);
        let a = u8::from(rng.random::<f64>() < self.p_a_given_t[t as usize]);
        let y = match self.outcome_dist[a as usize] {
            OutcomeDist::Bernoulli { p } => f64::from(u8::from(rng.random::<f64>() < p)),
            OutcomeDist::Gaussian { .. } => normals[a as usize]
                .expect("normal prepared for gaussian arm")
                .sample(rng),
        };
        (t, a, y)
    }

    fn normals(&self) -> [Option<Normal<f64>>; 2] {
        self.outcome_dist.map(|d| match d {
            OutcomeDist::Gaussian { mean, variance } => {
                Some(Normal::new(mean, variance.sqrt()).expect("validated variance"))
            }
            OutcomeDist::Bernoulli { .. } => None,
        })
    }

    /// Draws `n` i.i.d. records.
    pub fn sample(&self, mode: NonAdherenceMode, n: usize, rng: &mut Rng) -> StratumData {
        let normals = self.normals();
        let records = (0..n)
            .map(|_| {
                let (t, a, y) = self.draw(rng, &normals);
                StratumRecord { t, a, y }
            })
            .collect();
        StratumData { records, mode }
    }
}

/// Monte Carlo result with the full input echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub mean_sbd: f64,
    pub mean_cfd: f64,
    pub nvar_sbd: f64,
    pub nvar_cfd: f64,
    pub reject_count: usize,
    pub pop: TruePopulation,
    pub mode: NonAdherenceMode,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl MonteCarloResult {
    pub fn accepted(&self) -> usize {
        self.replicates - self.reject_count
    }

    /// Standard error of `mean_sbd`.
    pub fn se_mean_sbd(&self) -> f64 {
        (self.nvar_sbd / self.n as f64 / self.accepted() as f64).sqrt()
    }

    pub fn se_mean_cfd(&self) -> f64 {
        (self.nvar_cfd / self.n as f64 / self.accepted() as f64).sqrt()
    }

    /// Standard error of an `n·Var` estimate, under a normal approximation
    /// to the replicate distribution: `nVar · sqrt(2 / (R − 1))`.
    pub fn se_nvar(nvar: f64, accepted: usize) -> f64 {
        nvar * (2.0 / (accepted as f64 - 1.0)).sqrt()
    }
}

/// Runs `replicates` independent studies of size `n` and reports the mean and
/// `n·Var` of both plug-ins. Replicate `r` uses ChaCha8 stream `r` under
/// `seed`, so results do not depend on thread scheduling. Replicates where
/// either estimator is undefined are dropped and counted in `reject_count`.
pub fn monte_carlo_variance(
    pop: &TruePopulation,
    mode: NonAdherenceMode,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<MonteCarloResult> {
    pop.validate(mode)?;
    if n < 2 || replicates < 1 {
        return Err(Error::InvalidConfig("need n >= 2 and replicates >= 1".into()));
    }
    let normals = pop.normals();
    let draws: Vec<Option<(f64, f64)>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, r);
            let mut totals = CellTotals::default();
            for _ in 0..n {
                let (t, a, y) = pop.draw(&mut rng, &normals);
                totals.push(t, a, y);
            }
            let s = totals.summarize().ok()?;
            let cfd = cfd_from_summary(&s, mode).ok()?;
            Some((sbd_from_summary(&s), cfd))
        })
        .collect();

    let (sbd, cfd): (Vec<f64>, Vec<f64>) = draws.iter().flatten().copied().unzip();
    let reject_count = replicates - sbd.len();
    let nf = n as f64;
    Ok(MonteCarloResult {
        mean_sbd: stats::mean(&sbd),
        mean_cfd: stats::mean(&cfd),
        nvar_sbd: nf * stats::variance(&sbd),
        nvar_cfd: nf * stats::variance(&cfd),
        reject_count,
        pop: *pop,
        mode,
        n,
        replicates,
        seed,
    })
}
