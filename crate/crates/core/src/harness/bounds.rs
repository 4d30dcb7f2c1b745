use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::NonAdherenceMode;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, Rng};
use crate::stratum::{monte_carlo_variance, MonteCarloResult, OutcomeDist, TruePopulation};
use crate::theory::{
    cfd_asymptotic_variance, cfd_variance_upper_bound, reduction_lower_bound, rho, sbd_variance_closed_form,
    sbd_variance_lower_bound,
};

/// Input of the `montecarlo` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub pop: TruePopulation,
    pub mode: NonAdherenceMode,
    pub n: usize,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

impl MonteCarloConfig {
    pub fn run(&self) -> Result<MonteCarloResult> {
        monte_carlo_variance(&self.pop, self.mode, self.n, self.replicates, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundsCampaign {
    pub num_configs: usize,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub mode: NonAdherenceMode,
    /// Minimum probability of every possible `(a, t)` cell.
    pub min_margin: f64,
}

impl Default for BoundsCampaign {
    fn default() -> Self {
        BoundsCampaign {
            num_configs: 20,
            n: 1000,
            replicates: 4000,
            seed: 0,
            mode: NonAdherenceMode::TwoSided,
            min_margin: 0.05,
        }
    }
}

impl BoundsCampaign {
    pub fn validate(&self) -> Result<()> {
        if self.num_configs < 1 || self.n < 2 || self.replicates < 3 {
            return Err(Error::InvalidConfig("need num_configs >= 1, n >= 2, replicates >= 3".into()));
        }
        if !(self.min_margin > 0.0 && self.min_margin < 0.25) {
            return Err(Error::InvalidConfig("min_margin must lie in (0, 0.25)".into()));
        }
        Ok(())
    }
}

/// Theory values next to Monte Carlo estimates for one population. All
/// variances are on the `n·Var` scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigCheck {
    pub mc: MonteCarloResult,
    pub rho: f64,
    pub closed_form_sbd: f64,
    pub asymptotic_cfd: f64,
    pub lower_bound_sbd: f64,
    pub upper_bound_cfd: f64,
    /// Only defined under equal outcome (and, two-sided, intake) variances.
    pub reduction_bound: Option<f64>,
    pub se_nvar_sbd: f64,
    pub se_nvar_cfd: f64,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub campaign: BoundsCampaign,
    pub configs: Vec<ConfigCheck>,
    pub total_violations: usize,
}

/// Binary-outcome population with every possible cell at least `margin`,
/// by rejection sampling.
pub fn random_population(mode: NonAdherenceMode, margin: f64, rng: &mut Rng) -> TruePopulation {
    loop {
        let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
        let pi = u(0.2, 0.8);
        let p1 = u(0.05, 0.95);
        let p0 = match mode {
            NonAdherenceMode::OneSided => 0.0,
            NonAdherenceMode::TwoSided => u(0.05, 0.95),
        };
        let pop = TruePopulation {
            pi,
            p_a_given_t: [p0, p1],
            outcome_dist: [OutcomeDist::Bernoulli { p: u(0.05, 0.95) }, OutcomeDist::Bernoulli { p: u(0.05, 0.95) }],
        };
        if pop.positivity_margin(mode) >= margin {
            return pop;
        }
    }
}

/// Evaluates the theory at `pop` and checks
/// `lower ≤ nVar(SBD) + 3·SE` and `nVar(CFD) − 3·SE ≤ upper`.
pub fn check_population(pop: &TruePopulation, mode: NonAdherenceMode, n: usize, replicates: usize, seed: u64) -> Result<ConfigCheck> {
    let mc = monte_carlo_variance(pop, mode, n, replicates, seed)?;
    let vp = pop.variance_params(mode);
    let cells = pop.cells();
    let r = rho(&cells, mode);
    let lower = sbd_variance_lower_bound(&vp);
    let upper = cfd_variance_upper_bound(&vp, r)?;
    let se_sbd = MonteCarloResult::se_nvar(mc.nvar_sbd, mc.accepted());
    let se_cfd = MonteCarloResult::se_nvar(mc.nvar_cfd, mc.accepted());
    let mut violations = Vec::new();
    if lower > mc.nvar_sbd + 3.0 * se_sbd {
        violations.push(format!("SBD lower bound {lower} above n·Var {}", mc.nvar_sbd));
    }
    if mc.nvar_cfd - 3.0 * se_cfd > upper {
        violations.push(format!("CFD n·Var {} above upper bound {upper}", mc.nvar_cfd));
    }
    Ok(ConfigCheck {
        rho: r,
        closed_form_sbd: n as f64 * sbd_variance_closed_form(&vp, n),
        asymptotic_cfd: cfd_asymptotic_variance(&vp, &cells)?,
        lower_bound_sbd: lower,
        upper_bound_cfd: upper,
        reduction_bound: reduction_lower_bound(&vp, r).ok(),
        se_nvar_sbd: se_sbd,
        se_nvar_cfd: se_cfd,
        violations,
        mc,
    })
}

/// Draws `num_configs` random populations and checks bound containment for
/// each. Population `i` comes from stream `i` of the campaign seed and runs
/// its Monte Carlo under `derive_seed(seed, [i])`.
pub fn verify_bounds(campaign: &BoundsCampaign) -> Result<BoundsReport> {
    campaign.validate()?;
    let configs = (0..campaign.num_configs as u64)
        .map(|i| {
            let pop = random_population(campaign.mode, campaign.min_margin, &mut stream(campaign.seed, i));
            check_population(&pop, campaign.mode, campaign.n, campaign.replicates, derive_seed(campaign.seed, &[i]))
        })
        .collect::<Result<Vec<_>>>()?;
    let total_violations = configs.iter().map(|c| c.violations.len()).sum();
    Ok(BoundsReport {
        campaign: campaign.clone(),
        configs,
        total_violations,
    })
}
