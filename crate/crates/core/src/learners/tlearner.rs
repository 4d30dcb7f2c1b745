use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::adjustment::{sbd_catea, CateaValue};
use crate::data::{Dataset, NonAdherenceMode, NuisanceValues, OutcomeKind};
use crate::error::{Error, Result};
use crate::net::{mlp_specs, train, Activation, HeadNet, Loss, Mlp, Supervised, TrainConfig, PROB_CLAMP};
use crate::rng::{derive_seed, stream};

use super::Architecture;

fn outcome_head(kind: OutcomeKind) -> (Activation, Loss) {
    match kind {
        OutcomeKind::Binary => (Activation::Sigmoid, Loss::Bce),
        OutcomeKind::Continuous => (Activation::Identity, Loss::Mse),
    }
}

/// One component network awaiting training.
struct Component {
    init: HeadNet,
    train: Supervised,
    val: Supervised,
    /// Share of validation samples the component is scored on.
    weight: f64,
    seed: u64,
}

fn component(
    arch: &Architecture,
    (act, loss): (Activation, Loss),
    seed: u64,
    train: Supervised,
    val: Supervised,
    n_val: usize,
) -> Result<Component> {
    let d = train.x.ncols();
    let hidden = vec![arch.hidden_shared; arch.depth];
    let mut rng = stream(derive_seed(seed, &[0x1417]), 0);
    let init = HeadNet {
        net: Mlp::glorot(mlp_specs(d, &hidden, 1, act), &mut rng)?,
        loss,
    };
    let weight = val.y.len() as f64 / n_val as f64;
    // A component with no validation rows is early-stopped on its training rows.
    let val = if val.y.is_empty() { train.clone() } else { val };
    Ok(Component {
        init,
        train,
        val,
        weight,
        seed,
    })
}

/// Trains every component at each grid value; keeps the value minimizing the
/// validation-share-weighted sum of component losses, ties to larger `λ`.
fn fit_components(components: &[Component], cfg: &TrainConfig) -> Result<(f64, Vec<HeadNet>)> {
    let mut best: Option<(f64, f64, Vec<HeadNet>)> = None;
    for &l2 in &cfg.l2_grid {
        let mut score = 0.0;
        let mut nets = Vec::with_capacity(components.len());
        for c in components {
            let run_cfg = TrainConfig {
                seed: c.seed,
                ..cfg.clone()
            };
            let out = train(c.init.clone(), &c.train, &c.val, &run_cfg, l2)?;
            score += c.weight * out.best_val_loss;
            nets.push(out.model);
        }
        let better = match &best {
            None => true,
            Some((bs, bl2, _)) => score < *bs || (score == *bs && l2 > *bl2),
        };
        if better {
            best = Some((score, l2, nets));
        }
    }
    let (_, l2, nets) = best.expect("validated grid is non-empty");
    Ok((l2, nets))
}

fn rows(ds: &Dataset, pred: impl Fn(u8, u8) -> bool) -> Vec<usize> {
    (0..ds.len())
        .filter(|&i| pred(ds.samples[i].t, ds.samples[i].a))
        .collect()
}

fn supervised(x: &Array2<f64>, target: impl Fn(usize) -> f64, idx: &[usize]) -> Supervised {
    Supervised {
        x: x.select(Axis(0), idx),
        y: idx.iter().map(|&i| target(i)).collect(),
    }
}

/// Two outcome networks, one per assignment arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TLearnerSbd {
    pub arch: Architecture,
    pub mode: NonAdherenceMode,
    pub l2: f64,
    pub outcome: [HeadNet; 2],
}

impl TLearnerSbd {
    pub fn fit(arch: &Architecture, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        let (xt, xv) = (train.features(), val.features());
        let mut comps = Vec::new();
        for t in 0..2u8 {
            let tr = rows(train, |ti, _| ti == t);
            if tr.is_empty() {
                return Err(Error::MissingAssignmentArm);
            }
            let va = rows(val, |ti, _| ti == t);
            comps.push(component(
                arch,
                outcome_head(train.outcome_kind),
                derive_seed(cfg.seed, &[1, u64::from(t)]),
                supervised(&xt, |i| train.samples[i].y, &tr),
                supervised(&xv, |i| val.samples[i].y, &va),
                val.len(),
            )?);
        }
        let (l2, nets) = fit_components(&comps, cfg)?;
        let [n0, n1]: [HeadNet; 2] = nets.try_into().expect("two components");
        Ok(TLearnerSbd {
            arch: *arch,
            mode: train.mode,
            l2,
            outcome: [n0, n1],
        })
    }

    pub fn predict_catea(&self, x: &Array2<f64>) -> Result<Vec<CateaValue>> {
        let y0 = self.outcome[0].predict(x)?;
        let y1 = self.outcome[1].predict(x)?;
        Ok(y1.iter().zip(&y0).map(|(&a, &b)| sbd_catea(a, b)).collect())
    }
}

/// Independent networks for propensity, intake per arm and outcome per
/// cell. One-sided learners omit the `t = 0` intake net and the
/// `(a = 1, t = 0)` outcome net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TLearnerCfd {
    pub arch: Architecture,
    pub mode: NonAdherenceMode,
    pub l2: f64,
    pub propensity: HeadNet,
    pub intake: [Option<HeadNet>; 2],
    /// Indexed `[a][t]`.
    pub outcome: [[Option<HeadNet>; 2]; 2],
}

impl TLearnerCfd {
    pub fn fit(arch: &Architecture, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        let mode = train.mode;
        let cells = mode.possible_cells();
        for &(a, t) in cells {
            if rows(train, |ti, ai| ti == t && ai == a).is_empty() {
                return Err(Error::EmptyConditioningSet { a, t });
            }
        }
        let (xt, xv) = (train.features(), val.features());
        let bce = (Activation::Sigmoid, Loss::Bce);
        let mut comps = vec![component(
            arch,
            bce,
            derive_seed(cfg.seed, &[2]),
            supervised(&xt, |i| f64::from(train.samples[i].t), &rows(train, |_, _| true)),
            supervised(&xv, |i| f64::from(val.samples[i].t), &rows(val, |_, _| true)),
            val.len(),
        )?];
        let intake_arms: &[u8] = match mode {
            NonAdherenceMode::OneSided => &[1],
            NonAdherenceMode::TwoSided => &[0, 1],
        };
        for &t in intake_arms {
            comps.push(component(
                arch,
                bce,
                derive_seed(cfg.seed, &[3, u64::from(t)]),
                supervised(&xt, |i| f64::from(train.samples[i].a), &rows(train, |ti, _| ti == t)),
                supervised(&xv, |i| f64::from(val.samples[i].a), &rows(val, |ti, _| ti == t)),
                val.len(),
            )?);
        }
        for &(a, t) in cells {
            comps.push(component(
                arch,
                outcome_head(train.outcome_kind),
                derive_seed(cfg.seed, &[4, u64::from(a), u64::from(t)]),
                supervised(&xt, |i| train.samples[i].y, &rows(train, |ti, ai| ti == t && ai == a)),
                supervised(&xv, |i| val.samples[i].y, &rows(val, |ti, ai| ti == t && ai == a)),
                val.len(),
            )?);
        }

        let (l2, nets) = fit_components(&comps, cfg)?;
        let mut nets = nets.into_iter();
        let propensity = nets.next().expect("propensity");
        let mut intake = [None, None];
        for &t in intake_arms {
            intake[t as usize] = nets.next();
        }
        let mut outcome = [[None, None], [None, None]];
        for &(a, t) in cells {
            outcome[a as usize][t as usize] = nets.next();
        }
        Ok(TLearnerCfd {
            arch: *arch,
            mode,
            l2,
            propensity,
            intake,
            outcome,
        })
    }

    /// Nuisances per row; `π̂` is clamped to `[1e-6, 1 − 1e-6]` and omitted
    /// nets contribute zeros.
    pub fn predict_nuisances(&self, x: &Array2<f64>) -> Result<Vec<NuisanceValues>> {
        let n = x.nrows();
        let zeros = || Array1::<f64>::zeros(n);
        let pred = |net: &Option<HeadNet>| -> Result<Array1<f64>> {
            net.as_ref().map_or_else(|| Ok(zeros()), |h| h.predict(x))
        };
        let pi = self.propensity.predict(x)?;
        let a_hat = [pred(&self.intake[0])?, pred(&self.intake[1])?];
        let y_hat = [
            [pred(&self.outcome[0][0])?, pred(&self.outcome[0][1])?],
            [pred(&self.outcome[1][0])?, pred(&self.outcome[1][1])?],
        ];
        Ok((0..n)
            .map(|i| NuisanceValues {
                pi: pi[i].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP),
                a_given_t: [a_hat[0][i], a_hat[1][i]],
                y_given_at: [
                    [y_hat[0][0][i], y_hat[0][1][i]],
                    [y_hat[1][0][i], y_hat[1][1][i]],
                ],
            })
            .collect())
    }

    pub fn n_networks(&self) -> usize {
        1 + self.intake.iter().flatten().count() + self.outcome.iter().flatten().flatten().count()
    }
}
