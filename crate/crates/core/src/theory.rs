//! Closed-form single-stratum variance theory.
//!
//! Everything here is evaluated at one covariate value `x₀` with full
//! mediation: the intake distribution depends on assignment only, and the
//! outcome distribution depends on intake only. Notation:
//!
//! * `E(A_t)`, `V(A_t)`: mean and variance of intake under assignment `t`.
//! * `E(Y_a)`, `V(Y_a)`: mean and variance of the outcome under intake `a`.
//! * `Δ_A = E(A_1) − E(A_0)`, `Δ_Y = E(Y_1) − E(Y_0)`; the true effect is `Δ_A·Δ_Y`.
//! * `ω_{a,t} = P(a, t)` and `ρ`, the smallest `ω` among cells the mode allows.
//!
//! The finite-n backdoor variance, the large-n front-door variance, the lower
//! bound on backdoor variance, the upper bound on front-door variance and
//! their difference are all exposed as separate functions so they can be
//! checked against each other and against simulation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, NonAdherenceMode};
use crate::error::{Error, Result};

/// Population moments parameterising the closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceParams {
    pub v_y0: f64,
    pub v_y1: f64,
    pub v_a0: f64,
    pub v_a1: f64,
    pub e_a0: f64,
    pub e_a1: f64,
    pub e_y0: f64,
    pub e_y1: f64,
    pub pi: f64,
    pub mode: NonAdherenceMode,
}

impl VarianceParams {
    pub fn delta_a(&self) -> f64 {
        self.e_a1 - self.e_a0
    }

    pub fn delta_y(&self) -> f64 {
        self.e_y1 - self.e_y0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if [self.v_y0, self.v_y1, self.v_a0, self.v_a1]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return bad("variances must be non-negative");
        }
        if ![self.e_a0, self.e_a1].iter().all(|e| (0.0..=1.0).contains(e)) {
            return bad("intake means must lie in [0, 1]");
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return bad("pi must lie in (0, 1)");
        }
        if self.mode == NonAdherenceMode::OneSided && (self.e_a0 != 0.0 || self.v_a0 != 0.0) {
            return bad("one-sided mode requires e_a0 = 0 and v_a0 = 0");
        }
        Ok(())
    }
}

/// Joint assignment/intake cell probabilities `ω_{a,t}`, indexed `[a][t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellProbabilities {
    pub omega: [[f64; 2]; 2],
}

impl CellProbabilities {
    pub fn get(&self, a: u8, t: u8) -> f64 {
        self.omega[a as usize][t as usize]
    }

    pub fn validate(&self, mode: NonAdherenceMode) -> Result<()> {
        let flat = self.omega.iter().flatten();
        if flat.clone().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidConfig("cell probabilities must be >= 0".into()));
        }
        let total: f64 = flat.sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "cell probabilities sum to {total}, not 1"
            )));
        }
        if mode == NonAdherenceMode::OneSided && self.get(1, 0) != 0.0 {
            return Err(Error::InvalidConfig(
                "one-sided mode requires P(a=1, t=0) = 0".into(),
            ));
        }
        Ok(())
    }
}

/// Smallest probability among the cells `mode` allows.
pub fn rho(cells: &CellProbabilities, mode: NonAdherenceMode) -> f64 {
    mode.possible_cells()
        .iter()
        .map(|&(a, t)| cells.get(a, t))
        .fold(f64::INFINITY, f64::min)
}

/// Variance of the outcome under assignment `t`, mixing the two intake arms.
fn outcome_variance_given_assignment(vp: &VarianceParams, t: u8) -> f64 {
    let (e_a, v_a) = if t == 1 {
        (vp.e_a1, vp.v_a1)
    } else {
        (vp.e_a0, vp.v_a0)
    };
    (1.0 - e_a) * vp.v_y0 + e_a * vp.v_y1 + vp.delta_y().powi(2) * v_a
}

/// Exact variance of the backdoor plug-in estimator at sample size `n`, with
/// arm sizes replaced by their expectations `nπ` and `n(1 − π)`.
///
/// The two-sided expression with `E(A_0) = V(A_0) = 0` is the one-sided one,
/// so a single expression serves both modes.
pub fn sbd_variance_closed_form(vp: &VarianceParams, n: usize) -> f64 {
    let n = n as f64;
    outcome_variance_given_assignment(vp, 1) / (n * vp.pi)
        + outcome_variance_given_assignment(vp, 0) / (n * (1.0 - vp.pi))
}

/// `lim n·Var` of the front-door plug-in estimator.
pub fn cfd_asymptotic_variance(vp: &VarianceParams, cells: &CellProbabilities) -> Result<f64> {
    for &(a, t) in vp.mode.possible_cells() {
        if !(cells.get(a, t) > 0.0) {
            return Err(Error::ZeroCell { a, t });
        }
    }
    let pi = vp.pi;
    let da2 = vp.delta_a().powi(2);
    let dy2 = vp.delta_y().powi(2);
    let w = |a, t| cells.get(a, t);
    let v = match vp.mode {
        NonAdherenceMode::OneSided => {
            vp.v_y0 * da2 * ((1.0 - pi).powi(2) / w(0, 0) + pi.powi(2) / w(0, 1))
                + vp.v_y1 * da2 / w(1, 1)
                + vp.v_a1 * dy2 / pi
        }
        NonAdherenceMode::TwoSided => {
            vp.v_y1 * da2 * ((1.0 - pi).powi(2) / w(1, 0) + pi.powi(2) / w(1, 1))
                + vp.v_y0 * da2 * ((1.0 - pi).powi(2) / w(0, 0) + pi.powi(2) / w(0, 1))
                + dy2 * (vp.v_a1 / pi + vp.v_a0 / (1.0 - pi))
        }
    };
    Ok(v)
}

/// Strict lower bound on `lim n·Var` of the backdoor estimator.
pub fn sbd_variance_lower_bound(vp: &VarianceParams) -> f64 {
    let dy2 = vp.delta_y().powi(2);
    match vp.mode {
        NonAdherenceMode::OneSided => {
            vp.v_y0 * (2.0 - vp.e_a1) + vp.v_y1 * vp.e_a1 + vp.v_a1 * dy2
        }
        NonAdherenceMode::TwoSided => {
            vp.v_y0 * (2.0 - vp.e_a0 - vp.e_a1)
                + vp.v_y1 * (vp.e_a0 + vp.e_a1)
                + (vp.v_a0 + vp.v_a1) * dy2
        }
    }
}

fn check_rho(rho_val: f64, upper_inclusive: bool) -> Result<()> {
    let ok = rho_val > 0.0 && if upper_inclusive { rho_val <= 1.0 } else { rho_val < 1.0 };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidRho(rho_val))
    }
}

/// Upper bound on `lim n·Var` of the front-door estimator given `ρ`.
pub fn cfd_variance_upper_bound(vp: &VarianceParams, rho_val: f64) -> Result<f64> {
    check_rho(rho_val, true)?;
    let intake_var = match vp.mode {
        NonAdherenceMode::OneSided => vp.v_a1,
        NonAdherenceMode::TwoSided => vp.v_a0 + vp.v_a1,
    };
    Ok(((vp.v_y0 + vp.v_y1) * vp.delta_a().powi(2) + intake_var * vp.delta_y().powi(2)) / rho_val)
}

const EQUAL_VARIANCE_TOL: f64 = 1e-12;

/// Lower bound on the asymptotic variance reduction of front-door over
/// backdoor estimation, under equal outcome variances (and, two-sided, equal
/// intake variances):
///
/// * one-sided: `2V_Y − (2/ρ)V_YΔ_A² − ((1 − ρ)/ρ)V_AΔ_Y²`
/// * two-sided: `2V_Y − (2/ρ)V_YΔ_A² − (2(1 − ρ)/ρ)V_AΔ_Y²`
pub fn reduction_lower_bound(vp: &VarianceParams, rho_val: f64) -> Result<f64> {
    check_rho(rho_val, false)?;
    if (vp.v_y0 - vp.v_y1).abs() > EQUAL_VARIANCE_TOL {
        return Err(Error::UnequalVariances(format!(
            "V(Y_0) = {} but V(Y_1) = {}",
            vp.v_y0, vp.v_y1
        )));
    }
    let intake_terms = match vp.mode {
        NonAdherenceMode::OneSided => 1.0,
        NonAdherenceMode::TwoSided => {
            if (vp.v_a0 - vp.v_a1).abs() > EQUAL_VARIANCE_TOL {
                return Err(Error::UnequalVariances(format!(
                    "V(A_0) = {} but V(A_1) = {}",
                    vp.v_a0, vp.v_a1
                )));
            }
            2.0
        }
    };
    let v_y = vp.v_y0;
    let v_a = vp.v_a1;
    Ok(2.0 * v_y
        - 2.0 / rho_val * v_y * vp.delta_a().powi(2)
        - intake_terms * (1.0 - rho_val) / rho_val * v_a * vp.delta_y().powi(2))
}

/// Variance of a Bernoulli variable with the given mean.
pub fn binary_variance(mean: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&mean) {
        Ok(mean * (1.0 - mean))
    } else {
        Err(Error::OutOfRange(mean))
    }
}

/// Evenly spaced axis `start..=end` with `steps` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl AxisRange {
    pub fn values(&self) -> Vec<f64> {
        match self.steps {
            0 => vec![],
            1 => vec![self.start],
            k => (0..k)
                .map(|i| self.start + (self.end - self.start) * i as f64 / (k - 1) as f64)
                .collect(),
        }
    }
}

impl Default for AxisRange {
    fn default() -> Self {
        AxisRange {
            start: 0.0,
            end: 1.0,
            steps: 101,
        }
    }
}

fn default_e_y0() -> Vec<f64> {
    vec![0.1, 0.3, 0.5, 0.7, 0.9]
}

/// Configuration for [`reduction_grid`]. `e_a0` must be zero for one-sided panes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub rho: f64,
    #[serde(default = "default_e_y0")]
    pub e_y0: Vec<f64>,
    #[serde(default)]
    pub e_a0: f64,
    #[serde(default)]
    pub delta_a: AxisRange,
    #[serde(default)]
    pub delta_y: AxisRange,
    pub mode: NonAdherenceMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub e_y0: f64,
    pub delta_a: f64,
    pub delta_y: f64,
    /// `None` when a derived mean leaves `[0, 1]`.
    pub bound: Option<f64>,
}

const FEASIBLE_SLACK: f64 = 1e-12;

/// Builds binary-outcome variance parameters for one grid point, or `None`
/// when a derived mean is not a probability.
pub fn binary_grid_params(
    mode: NonAdherenceMode,
    e_a0: f64,
    e_y0: f64,
    delta_a: f64,
    delta_y: f64,
) -> Option<VarianceParams> {
    let e_a1 = e_a0 + delta_a;
    let e_y1 = e_y0 + delta_y;
    let feasible = |m: f64| (-FEASIBLE_SLACK..=1.0 + FEASIBLE_SLACK).contains(&m);
    if ![e_a0, e_a1, e_y0, e_y1].into_iter().all(feasible) {
        return None;
    }
    let clamp = |m: f64| m.clamp(0.0, 1.0);
    let var = |m: f64| clamp(m) * (1.0 - clamp(m));
    Some(VarianceParams {
        v_y0: var(e_y0),
        v_y1: var(e_y1),
        v_a0: var(e_a0),
        v_a1: var(e_a1),
        e_a0,
        e_a1,
        e_y0,
        e_y1,
        pi: 0.5,
        mode,
    })
}

/// Backdoor lower bound minus front-door upper bound over a `(Δ_A, Δ_Y)` grid
/// for each baseline outcome mean, with all variances from the Bernoulli
/// identity `V = E(1 − E)`. Unequal variances are allowed.
///
/// Output order: `e_y0` in config order, then row-major by `Δ_A`, then `Δ_Y`.
pub fn reduction_grid(cfg: &GridConfig) -> Result<Vec<GridCell>> {
    if !(cfg.rho > 0.0 && cfg.rho <= 1.0) {
        return Err(Error::InvalidConfig(format!("rho {} outside (0, 1]", cfg.rho)));
    }
    if !(0.0..=1.0).contains(&cfg.e_a0) {
        return Err(Error::InvalidConfig("e_a0 outside [0, 1]".into()));
    }
    if cfg.mode == NonAdherenceMode::OneSided && cfg.e_a0 != 0.0 {
        return Err(Error::InvalidConfig("one-sided grids require e_a0 = 0".into()));
    }
    if cfg.e_y0.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::InvalidConfig("e_y0 values must lie in [0, 1]".into()));
    }
    let das = cfg.delta_a.values();
    let dys = cfg.delta_y.values();
    if das.iter().chain(&dys).any(|d| !(*d >= 0.0)) {
        return Err(Error::InvalidConfig("effect ranges must be non-negative".into()));
    }

    let mut out = Vec::with_capacity(cfg.e_y0.len() * das.len() * dys.len());
    for &e_y0 in &cfg.e_y0 {
        for &delta_a in &das {
            for &delta_y in &dys {
                let bound = match binary_grid_params(cfg.mode, cfg.e_a0, e_y0, delta_a, delta_y) {
                    Some(vp) => {
                        Some(sbd_variance_lower_bound(&vp) - cfd_variance_upper_bound(&vp, cfg.rho)?)
                    }
                    None => None,
                };
                out.push(GridCell {
                    e_y0,
                    delta_a,
                    delta_y,
                    bound,
                });
            }
        }
    }
    Ok(out)
}

/// Writes `e_y0,delta_a,delta_y,bound,feasible`; `bound` is empty when infeasible.
pub fn write_grid_csv<W: Write>(cells: &[GridCell], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["e_y0", "delta_a", "delta_y", "bound", "feasible"])?;
    for c in cells {
        let (bound, feasible) = match c.bound {
            Some(b) => (fmt_f64(b), "1"),
            None => (String::new(), "0"),
        };
        w.write_record([
            fmt_f64(c.e_y0),
            fmt_f64(c.delta_a),
            fmt_f64(c.delta_y),
            bound,
            feasible.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use NonAdherenceMode::*;

    fn vp(mode: NonAdherenceMode) -> VarianceParams {
        VarianceParams {
            v_y0: 0.25,
            v_y1: 0.25,
            v_a0: 0.0,
            v_a1: 0.25,
            e_a0: 0.0,
            e_a1: 0.5,
            e_y0: 0.5,
            e_y1: 0.5,
            pi: 0.5,
            mode,
        }
    }

    #[test]
    fn rho_examples() {
        let cells = CellProbabilities {
            omega: [[0.4, 0.3], [0.0, 0.3]],
        };
        assert_eq!(rho(&cells, OneSided), 0.3);
        let uniform = CellProbabilities {
            omega: [[0.25; 2]; 2],
        };
        assert_eq!(rho(&uniform, TwoSided), 0.25);
        assert_eq!(rho(&cells, TwoSided), 0.0);
    }

    #[test]
    fn sbd_closed_form_examples() {
        assert_abs_diff_eq!(sbd_variance_closed_form(&vp(OneSided), 1), 1.0, epsilon = 1e-15);

        let zero = VarianceParams {
            v_y0: 0.0,
            v_y1: 0.0,
            v_a1: 0.0,
            ..vp(OneSided)
        };
        assert_eq!(sbd_variance_closed_form(&zero, 10), 0.0);

        // Plugging E(A_0) = V(A_0) = 0 into the two-sided expression gives the
        // one-sided expression.
        let mut two = vp(TwoSided);
        two.e_y1 = 0.8;
        let mut one = two;
        one.mode = OneSided;
        assert_eq!(sbd_variance_closed_form(&two, 7), sbd_variance_closed_form(&one, 7));
    }

    #[test]
    fn cfd_asymptotic_examples() {
        let cells = CellProbabilities {
            omega: [[0.25; 2]; 2],
        };
        let null = VarianceParams {
            e_a1: 0.3,
            e_a0: 0.3,
            v_a0: 0.21,
            v_a1: 0.21,
            ..vp(TwoSided)
        };
        assert_eq!(cfd_asymptotic_variance(&null, &cells).unwrap(), 0.0);

        // One-sided, V(A_1) = 0, Δ_A = 1, π = 0.5, cells (0.25, 0.25, 0.5):
        // V(Y_0)·1·(0.25/0.25 + 0.25/0.25) + V(Y_1)·1/0.5 = 0.25·2 + 0.25·2 = 1.
        let one = VarianceParams {
            e_a1: 1.0,
            v_a1: 0.0,
            e_y1: 0.9,
            ..vp(OneSided)
        };
        let cells = CellProbabilities {
            omega: [[0.25, 0.25], [0.0, 0.5]],
        };
        assert_abs_diff_eq!(cfd_asymptotic_variance(&one, &cells).unwrap(), 1.0, epsilon = 1e-15);

        let empty = CellProbabilities {
            omega: [[0.5, 0.0], [0.0, 0.5]],
        };
        assert_eq!(
            cfd_asymptotic_variance(&one, &empty),
            Err(Error::ZeroCell { a: 0, t: 1 })
        );
    }

    #[test]
    fn lower_bound_examples() {
        let mut p = vp(OneSided);
        p.v_y0 = 0.2;
        p.v_y1 = 0.1;
        p.e_a1 = 0.3;
        assert_abs_diff_eq!(
            sbd_variance_lower_bound(&p),
            0.2 * (2.0 - 0.3) + 0.1 * 0.3,
            epsilon = 1e-15
        );

        let two = VarianceParams {
            v_y0: 0.25,
            v_y1: 0.25,
            v_a0: 0.25,
            v_a1: 0.25,
            e_a0: 0.5,
            e_a1: 0.5,
            e_y0: 0.3,
            e_y1: 0.7,
            pi: 0.5,
            mode: TwoSided,
        };
        assert_abs_diff_eq!(sbd_variance_lower_bound(&two), 0.58, epsilon = 1e-15);
    }

    #[test]
    fn lower_bound_sits_below_large_n_closed_form() {
        let mut p = vp(TwoSided);
        p.e_a0 = 0.2;
        p.v_a0 = 0.16;
        p.e_y1 = 0.9;
        let n = 1_000_000;
        assert!(sbd_variance_lower_bound(&p) < n as f64 * sbd_variance_closed_form(&p, n));
    }

    #[test]
    fn upper_bound_examples() {
        let zero = VarianceParams {
            e_a1: 0.0,
            v_a1: 0.0,
            ..vp(OneSided)
        };
        assert_eq!(cfd_variance_upper_bound(&zero, 0.2).unwrap(), 0.0);

        let p = VarianceParams {
            e_a1: 0.2,
            e_y0: 0.4,
            e_y1: 0.6,
            ..vp(OneSided)
        };
        assert_abs_diff_eq!(cfd_variance_upper_bound(&p, 0.1).unwrap(), 0.3, epsilon = 1e-12);
        assert!(cfd_variance_upper_bound(&p, 0.2).unwrap() < 0.3);
        assert_eq!(cfd_variance_upper_bound(&p, 0.0), Err(Error::InvalidRho(0.0)));
        assert_eq!(cfd_variance_upper_bound(&p, 1.5), Err(Error::InvalidRho(1.5)));
    }

    #[test]
    fn reduction_examples() {
        let null = VarianceParams {
            e_a1: 0.0,
            ..vp(OneSided)
        };
        assert_eq!(reduction_lower_bound(&null, 0.1).unwrap(), 0.5);

        let p = VarianceParams {
            e_a1: 0.3,
            e_y0: 0.2,
            e_y1: 0.5,
            ..vp(OneSided)
        };
        assert_abs_diff_eq!(reduction_lower_bound(&p, 0.1).unwrap(), -0.1525, epsilon = 1e-12);

        let mut unequal = p;
        unequal.v_y1 = 0.2;
        assert!(matches!(
            reduction_lower_bound(&unequal, 0.1),
            Err(Error::UnequalVariances(_))
        ));
        let mut two = p;
        two.mode = TwoSided;
        two.v_a0 = 0.1;
        assert!(matches!(
            reduction_lower_bound(&two, 0.1),
            Err(Error::UnequalVariances(_))
        ));
        assert_eq!(reduction_lower_bound(&p, 1.0), Err(Error::InvalidRho(1.0)));
    }

    #[test]
    fn reduction_equals_lower_minus_upper_under_equal_variances() {
        for mode in [OneSided, TwoSided] {
            let p = VarianceParams {
                v_y0: 0.21,
                v_y1: 0.21,
                v_a0: if mode == TwoSided { 0.09 } else { 0.0 },
                v_a1: 0.09,
                e_a0: if mode == TwoSided { 0.1 } else { 0.0 },
                e_a1: 0.4,
                e_y0: 0.3,
                e_y1: 0.45,
                pi: 0.4,
                mode,
            };
            let direct = sbd_variance_lower_bound(&p) - cfd_variance_upper_bound(&p, 0.15).unwrap();
            assert_abs_diff_eq!(reduction_lower_bound(&p, 0.15).unwrap(), direct, epsilon = 1e-14);
        }
    }

    #[test]
    fn binary_variance_examples() {
        assert_eq!(binary_variance(0.5).unwrap(), 0.25);
        assert_eq!(binary_variance(0.0).unwrap(), 0.0);
        assert_eq!(binary_variance(1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(binary_variance(0.2).unwrap(), 0.16, epsilon = 1e-15);
        assert_eq!(binary_variance(1.2), Err(Error::OutOfRange(1.2)));
    }

    #[test]
    fn grid_origin_and_infeasible_cells() {
        let cfg = GridConfig {
            rho: 0.1,
            e_y0: vec![0.5],
            e_a0: 0.0,
            delta_a: AxisRange {
                start: 0.0,
                end: 1.0,
                steps: 11,
            },
            delta_y: AxisRange {
                start: 0.0,
                end: 1.0,
                steps: 11,
            },
            mode: OneSided,
        };
        let grid = reduction_grid(&cfg).unwrap();
        assert_eq!(grid.len(), 121);
        // At zero effects the bound is 2·V(Y_0) = 0.5.
        assert_abs_diff_eq!(grid[0].bound.unwrap(), 0.5, epsilon = 1e-15);
        // Row-major by Δ_A then Δ_Y.
        assert_eq!((grid[1].delta_a, grid[1].delta_y), (0.0, 0.1));
        assert_eq!(grid[11].delta_a, 0.1);
        // Δ_Y = 0.6 with E(Y_0) = 0.5 leaves the unit interval.
        assert!(grid[6].bound.is_none());
        assert!(grid[5].bound.is_some());
    }

    #[test]
    fn grid_rejects_bad_configs() {
        let base = GridConfig {
            rho: 0.1,
            e_y0: vec![0.5],
            e_a0: 0.0,
            delta_a: AxisRange::default(),
            delta_y: AxisRange::default(),
            mode: OneSided,
        };
        assert!(reduction_grid(&GridConfig { rho: 0.0, ..base.clone() }).is_err());
        assert!(reduction_grid(&GridConfig { e_a0: 0.1, ..base.clone() }).is_err());
        let neg = AxisRange {
            start: -0.1,
            end: 0.5,
            steps: 3,
        };
        assert!(reduction_grid(&GridConfig { delta_a: neg, ..base }).is_err());
    }

    #[test]
    fn grid_csv_marks_infeasible_rows() {
        let cells = [
            GridCell {
                e_y0: 0.5,
                delta_a: 0.0,
                delta_y: 0.0,
                bound: Some(0.5),
            },
            GridCell {
                e_y0: 0.5,
                delta_a: 0.0,
                delta_y: 0.9,
                bound: None,
            },
        ];
        let mut buf = Vec::new();
        write_grid_csv(&cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "e_y0,delta_a,delta_y,bound,feasible");
        assert!(lines[1].ends_with(",1"));
        assert!(lines[2].ends_with(",,0"));
    }

    prop_compose! {
        fn valid_params()(
            two_sided in any::<bool>(),
            pi in 0.05..0.95f64,
            e_a0 in 0.0..0.5f64,
            da in 0.0..0.5f64,
            e_y0 in 0.0..1.0f64,
            dy in -1.0..1.0f64,
            v in proptest::array::uniform4(0.01..2.0f64),
        ) -> VarianceParams {
            let mode = if two_sided { TwoSided } else { OneSided };
            let e_a0 = if two_sided { e_a0 } else { 0.0 };
            let e_a1 = e_a0 + da;
            VarianceParams {
                v_y0: v[0],
                v_y1: v[1],
                v_a0: if two_sided { e_a0 * (1.0 - e_a0) } else { 0.0 },
                v_a1: e_a1 * (1.0 - e_a1),
                e_a0,
                e_a1,
                e_y0,
                e_y1: e_y0 + dy,
                pi,
                mode,
            }
        }
    }

    /// Cell probabilities consistent with `vp`'s π and intake means.
    fn cells_for(vp: &VarianceParams) -> CellProbabilities {
        let pi = vp.pi;
        CellProbabilities {
            omega: [
                [(1.0 - pi) * (1.0 - vp.e_a0), pi * (1.0 - vp.e_a1)],
                [(1.0 - pi) * vp.e_a0, pi * vp.e_a1],
            ],
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn lower_bound_is_strictly_below_closed_form(p in valid_params(), n in 1usize..100_000) {
            prop_assert!(sbd_variance_lower_bound(&p) < n as f64 * sbd_variance_closed_form(&p, n));
        }

        #[test]
        fn asymptotic_cfd_variance_respects_upper_bound(p in valid_params()) {
            let cells = cells_for(&p);
            prop_assume!(p.mode.possible_cells().iter().all(|&(a, t)| cells.get(a, t) > 1e-6));
            let r = rho(&cells, p.mode);
            let v = cfd_asymptotic_variance(&p, &cells).unwrap();
            let ub = cfd_variance_upper_bound(&p, r).unwrap();
            prop_assert!(v <= ub * (1.0 + 1e-12) + 1e-15, "{v} > {ub}");
        }

        #[test]
        fn reduction_at_zero_effect_is_twice_outcome_variance(v_y in 0.0..3.0f64, v_a in 0.0..0.25f64, r in 0.01..0.99f64) {
            let p = VarianceParams {
                v_y0: v_y, v_y1: v_y, v_a0: v_a, v_a1: v_a, e_a0: 0.3, e_a1: 0.3,
                e_y0: 0.1, e_y1: 0.1, pi: 0.5, mode: TwoSided,
            };
            prop_assert_eq!(reduction_lower_bound(&p, r).unwrap(), 2.0 * v_y);
        }

        #[test]
        fn reduction_decreases_with_effect_sizes(
            v_y in 0.01..1.0f64, v_a in 0.01..0.25f64, r in 0.01..0.99f64,
            da in 0.0..0.5f64, dy in 0.0..0.5f64, bump in 0.01..0.4f64,
        ) {
            let p = |da: f64, dy: f64| VarianceParams {
                v_y0: v_y, v_y1: v_y, v_a0: 0.0, v_a1: v_a, e_a0: 0.0, e_a1: da,
                e_y0: 0.0, e_y1: dy, pi: 0.5, mode: OneSided,
            };
            let base = reduction_lower_bound(&p(da, dy), r).unwrap();
            prop_assert!(reduction_lower_bound(&p(da + bump, dy), r).unwrap() < base);
            prop_assert!(reduction_lower_bound(&p(da, dy + bump), r).unwrap() < base);
        }

        #[test]
        fn binary_variance_is_symmetric(m in 0.0..=1.0f64) {
            prop_assert!((binary_variance(m).unwrap() - binary_variance(1.0 - m).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn upper_bound_decreases_in_rho(p in valid_params(), r in 0.01..0.5f64, bump in 0.01..0.5f64) {
            let lo = cfd_variance_upper_bound(&p, r).unwrap();
            let hi = cfd_variance_upper_bound(&p, r + bump).unwrap();
            prop_assert!(hi <= lo);
        }
    }
}
