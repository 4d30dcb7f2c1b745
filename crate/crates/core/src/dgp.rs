//! Synthetic data-generating processes with known assignment effects.
//!
//! Both processes draw `x ~ N(0, I_d)` and `t | x ~ Bern(σ(w·x/d))`.
//!
//! * Dataset A varies adherence: a fixed number of non-adherers is drawn by
//!   weighted sampling without replacement, and flips `a = 1 − t` for them.
//!   Outcomes are `Bern(σ(w_{a0}·x/d))` or `Bern(σ(w_{a1}·x/d))` by intake.
//! * Dataset B varies the intake effect: `a | t, x` is logistic in `x`, and
//!   `y | a, x ~ Bern((1 − a)·0.1 + a·σ(w_{a1}·x/d + η))`.
//!
//! All weight vectors are i.i.d. uniform on `(−amp, amp)` and are returned
//! alongside the data so a run can be replayed exactly.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NonAdherenceMode, OutcomeKind, Sample};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};
use crate::stratum::{StratumData, TruePopulation};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// How Dataset A's per-individual non-adherence probability is approximated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InclusionApprox {
    /// `1 − exp(−τ·s_i)` with `τ` solving `Σ_j (1 − exp(−τ·s_j)) = k`, the
    /// large-pool inclusion probability of exponential-key sampling.
    #[default]
    Successive,
    /// `min(1, k·s_i / Σ_j s_j)`.
    FirstOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n: usize,
    pub d: usize,
    pub weight_amplitude: f64,
    pub gamma: f64,
    pub eta: f64,
    pub mode: NonAdherenceMode,
    pub seed: u64,
    pub inclusion: InclusionApprox,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 1000,
            d: 30,
            weight_amplitude: 10.0,
            gamma: 0.5,
            eta: 0.0,
            mode: NonAdherenceMode::OneSided,
            seed: 0,
            inclusion: InclusionApprox::Successive,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.d < 1 {
            return Err(Error::InvalidConfig("n and d must be at least 1".into()));
        }
        if !(self.weight_amplitude > 0.0 && self.weight_amplitude.is_finite()) {
            return Err(Error::InvalidConfig("weight_amplitude must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig("gamma must lie in [0, 1]".into()));
        }
        if !self.eta.is_finite() {
            return Err(Error::InvalidConfig("eta must be finite".into()));
        }
        Ok(())
    }
}

/// Weight vectors drawn for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpWeights {
    pub w: Vec<f64>,
    pub w_t0: Vec<f64>,
    pub w_t1: Vec<f64>,
    pub w_a0: Vec<f64>,
    pub w_a1: Vec<f64>,
}

impl DgpWeights {
    fn draw(d: usize, amp: f64, rng: &mut Rng) -> Self {
        let u = Uniform::new(-amp, amp).expect("positive amplitude");
        let mut v = || (0..d).map(|_| u.sample(rng)).collect::<Vec<f64>>();
        DgpWeights {
            w: v(),
            w_t0: v(),
            w_t1: v(),
            w_a0: v(),
            w_a1: v(),
        }
    }
}

/// A generated dataset, its weights, and the per-sample effect components
/// `Δ_A(x)` and `Δ_Y(x)` whose product is the stored ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub dataset: Dataset,
    pub weights: DgpWeights,
    pub delta_a: Vec<f64>,
    pub delta_y: Vec<f64>,
}

impl Generated {
    /// JSON sidecar with the config and weights for exact replay.
    pub fn sidecar_json(&self, cfg: &SyntheticConfig) -> Result<String> {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            config: &'a SyntheticConfig,
            weights: &'a DgpWeights,
        }
        Ok(serde_json::to_string_pretty(&Sidecar {
            config: cfg,
            weights: &self.weights,
        })?)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn draw_x_t(cfg: &SyntheticConfig, w: &[f64], rng: &mut Rng) -> Vec<(Vec<f64>, u8)> {
    let d = cfg.d as f64;
    (0..cfg.n)
        .map(|_| {
            let x: Vec<f64> = (0..cfg.d).map(|_| StandardNormal.sample(rng)).collect();
            let t = u8::from(rng.random::<f64>() < sigmoid(dot(w, &x) / d));
            (x, t)
        })
        .collect()
}

/// Indices of `k` items drawn without replacement with probability
/// proportional to `weights`, by exponential keys `−ln(u)/w_i`.
pub fn weighted_sample_without_replacement(
    weights: &[f64],
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if k > weights.len() {
        return Err(Error::InsufficientEligible {
            required: k,
            available: weights.len(),
        });
    }
    let mut keys: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            // 1 - u lies in (0, 1], so the log is finite.
            let u: f64 = 1.0 - rng.random::<f64>();
            (-u.ln() / w, i)
        })
        .collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = keys[..k].iter().map(|&(_, i)| i).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Solves `Σ_j (1 − exp(−τ·s_j)) = k` for `τ`.
fn successive_tau(pool: &[f64], k: usize) -> f64 {
    let positive = pool.iter().filter(|&&s| s > 0.0).count();
    if k == 0 {
        return 0.0;
    }
    if k >= positive {
        return f64::INFINITY;
    }
    let f = |tau: f64| pool.iter().map(|&s| -(-tau * s).exp_m1()).sum::<f64>() - k as f64;
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Per-item selection probability under `approx`, for a `k`-of-pool draw with
/// unnormalized pool weights `pool`. The returned closure maps any weight
/// (including counterfactual ones not in the pool) to a probability.
fn inclusion_probability(approx: InclusionApprox, pool: &[f64], k: usize) -> impl Fn(f64) -> f64 {
    let tau = successive_tau(pool, k);
    let total: f64 = pool.iter().sum();
    move |s: f64| match approx {
        InclusionApprox::Successive if tau.is_infinite() => {
            if s > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        InclusionApprox::Successive => -(-tau * s).exp_m1(),
        InclusionApprox::FirstOrder if total > 0.0 => (k as f64 * s / total).min(1.0),
        InclusionApprox::FirstOrder => 0.0,
    }
}

/// Number of non-adherers: `round(γ·n)` two-sided, `round(γ·#{t = 1})`
/// one-sided, so that `γ` is a rate over the individuals able to deviate.
pub fn nonadherer_count(gamma: f64, eligible: usize) -> usize {
    (gamma * eligible as f64).round() as usize
}

pub fn generate_dataset_a(cfg: &SyntheticConfig) -> Result<Generated> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, 0);
    let weights = DgpWeights::draw(cfg.d, cfg.weight_amplitude, &mut rng);
    let xt = draw_x_t(cfg, &weights.w, &mut rng);
    let d = cfg.d as f64;

    // Non-adherence propensities under each assignment; unlike the others
    // these logits are not scaled by 1/d.
    let s_t: Vec<[f64; 2]> = xt
        .iter()
        .map(|(x, _)| [sigmoid(dot(&weights.w_t0, x)), sigmoid(dot(&weights.w_t1, x))])
        .collect();
    let eligible: Vec<usize> = (0..cfg.n)
        .filter(|&i| cfg.mode == NonAdherenceMode::TwoSided || xt[i].1 == 1)
        .collect();
    let pool: Vec<f64> = eligible.iter().map(|&i| s_t[i][xt[i].1 as usize]).collect();
    let k = nonadherer_count(cfg.gamma, eligible.len());
    let picked = weighted_sample_without_replacement(&pool, k, &mut rng)?;
    let mut nonadherent = vec![false; cfg.n];
    for p in picked {
        nonadherent[eligible[p]] = true;
    }

    let incl = inclusion_probability(cfg.inclusion, &pool, k);
    let mut samples = Vec::with_capacity(cfg.n);
    let mut delta_a = Vec::with_capacity(cfg.n);
    let mut delta_y = Vec::with_capacity(cfg.n);
    for (i, (x, t)) in xt.into_iter().enumerate() {
        let a = if nonadherent[i] { 1 - t } else { t };
        let p_y = [
            sigmoid(dot(&weights.w_a0, &x) / d),
            sigmoid(dot(&weights.w_a1, &x) / d),
        ];
        let y = f64::from(u8::from(rng.random::<f64>() < p_y[a as usize]));
        // P(a=1 | do(t=1)) = 1 − q(t=1); P(a=1 | do(t=0)) = q(t=0), zero one-sided.
        let q1 = incl(s_t[i][1]);
        let q0 = match cfg.mode {
            NonAdherenceMode::OneSided => 0.0,
            NonAdherenceMode::TwoSided => incl(s_t[i][0]),
        };
        delta_a.push(1.0 - q1 - q0);
        delta_y.push(p_y[1] - p_y[0]);
        samples.push(Sample::new(x, t, a, y));
    }
    let truth = delta_a.iter().zip(&delta_y).map(|(a, y)| a * y).collect();
    Ok(Generated {
        dataset: Dataset::new(samples, cfg.mode, OutcomeKind::Binary).with_truth(truth),
        weights,
        delta_a,
        delta_y,
    })
}

/// Closed-form nuisances of Dataset B at one `x`: `P(a=1 | t)` and `E[y | a]`.
pub fn dataset_b_probabilities(
    weights: &DgpWeights,
    x: &[f64],
    eta: f64,
    mode: NonAdherenceMode,
) -> ([f64; 2], [f64; 2]) {
    let d = x.len() as f64;
    let p_a0 = match mode {
        NonAdherenceMode::OneSided => 0.0,
        NonAdherenceMode::TwoSided => sigmoid(dot(&weights.w_t0, x) / d),
    };
    let p_a1 = sigmoid(dot(&weights.w_t1, x) / d);
    let e_y1 = sigmoid(dot(&weights.w_a1, x) / d + eta);
    ([p_a0, p_a1], [0.1, e_y1])
}

pub fn generate_dataset_b(cfg: &SyntheticConfig) -> Result<Generated> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, 0);
    let mut weights = DgpWeights::draw(cfg.d, cfg.weight_amplitude, &mut rng);
    if cfg.mode == NonAdherenceMode::OneSided {
        weights.w_t0.iter_mut().for_each(|v| *v = 0.0);
    }
    let xt = draw_x_t(cfg, &weights.w, &mut rng);

    let mut samples = Vec::with_capacity(cfg.n);
    let mut delta_a = Vec::with_capacity(cfg.n);
    let mut delta_y = Vec::with_capacity(cfg.n);
    for (x, t) in xt {
        let (p_a, e_y) = dataset_b_probabilities(&weights, &x, cfg.eta, cfg.mode);
        let a = u8::from(rng.random::<f64>() < p_a[t as usize]);
        let y = f64::from(u8::from(rng.random::<f64>() < e_y[a as usize]));
        delta_a.push(p_a[1] - p_a[0]);
        delta_y.push(e_y[1] - e_y[0]);
        samples.push(Sample::new(x, t, a, y));
    }
    let truth = delta_a.iter().zip(&delta_y).map(|(a, y)| a * y).collect();
    Ok(Generated {
        dataset: Dataset::new(samples, cfg.mode, OutcomeKind::Binary).with_truth(truth),
        weights,
        delta_a,
        delta_y,
    })
}

/// `E[y | do(t=1), x] − E[y | do(t=0), x]` for Dataset B, by summing the
/// generative model over the intake lattice.
pub fn dataset_b_do_oracle(weights: &DgpWeights, x: &[f64], eta: f64, mode: NonAdherenceMode) -> f64 {
    let (p_a, e_y) = dataset_b_probabilities(weights, x, eta, mode);
    let do_t = |t: usize| -> f64 {
        (0..2)
            .map(|a| {
                let pa = if a == 1 { p_a[t] } else { 1.0 - p_a[t] };
                pa * e_y[a]
            })
            .sum()
    };
    do_t(1) - do_t(0)
}

/// `n` i.i.d. draws from a single-stratum population.
pub fn sample_stratum(
    pop: &TruePopulation,
    mode: NonAdherenceMode,
    n: usize,
    seed: u64,
) -> Result<StratumData> {
    pop.validate(mode)?;
    Ok(pop.sample(mode, n, &mut stream(seed, 0)))
}
