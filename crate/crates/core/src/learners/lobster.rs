use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NonAdherenceMode, NuisanceValues, OutcomeKind};
use crate::error::{Error, Result};
use crate::net::{mlp_specs, to_column, Activation, ForwardCache, Loss, Mlp, Trainable};
use crate::rng::Rng;

use super::Architecture;

/// Features, assignments, intakes and outcomes for joint training.
#[derive(Debug, Clone, PartialEq)]
pub struct JointData {
    pub x: Array2<f64>,
    pub t: Vec<u8>,
    pub a: Vec<u8>,
    pub y: Array1<f64>,
}

impl JointData {
    pub fn from_dataset(ds: &Dataset) -> JointData {
        JointData {
            x: ds.features(),
            t: ds.samples.iter().map(|s| s.t).collect(),
            a: ds.samples.iter().map(|s| s.a).collect(),
            y: ds.samples.iter().map(|s| s.y).collect(),
        }
    }

    fn rows_where(v: &[u8], value: u8) -> Vec<usize> {
        (0..v.len()).filter(|&i| v[i] == value).collect()
    }
}

/// Multi-task front-door network.
///
/// A shared backbone `Ω` feeds the propensity head `F_T` and two
/// assignment-specific representation branches `Z_T0`, `Z_T1`. Each branch
/// feeds its own intake head `F_At`. The router picks `Z_Tt` for a sample
/// assigned `t` and passes it to the outcome head `F_Ya` for intake `a`, so
/// `Ŷ(a, t, x) = F_Ya(Z_Tt(Ω(x)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobsterNet {
    pub omega: Mlp,
    pub f_t: Mlp,
    pub z: [Mlp; 2],
    pub f_a: [Mlp; 2],
    pub f_y: [Mlp; 2],
    pub alpha: f64,
    pub beta: f64,
    pub outcome_loss: Loss,
    pub mode: NonAdherenceMode,
}

fn outcome_head(kind: OutcomeKind) -> (Activation, Loss) {
    match kind {
        OutcomeKind::Binary => (Activation::Sigmoid, Loss::Bce),
        OutcomeKind::Continuous => (Activation::Identity, Loss::Mse),
    }
}

/// Activations of one joint forward pass.
struct Pass {
    rows_t: [Vec<usize>; 2],
    rows_a: [Vec<usize>; 2],
    omega: ForwardCache,
    f_t: ForwardCache,
    z: [Option<ForwardCache>; 2],
    f_a: [Option<ForwardCache>; 2],
    f_y: [Option<ForwardCache>; 2],
}

fn forward_rows(net: &Mlp, input: &Array2<f64>, rows: &[usize]) -> Result<Option<ForwardCache>> {
    if rows.is_empty() {
        return Ok(None);
    }
    Ok(Some(net.forward(input.select(Axis(0), rows).view())?))
}

fn head_column(cache: &Option<ForwardCache>) -> Array1<f64> {
    cache
        .as_ref()
        .map_or_else(|| Array1::zeros(0), |c| c.output().column(0).to_owned())
}

impl LobsterNet {
    pub fn new(
        d: usize,
        arch: &Architecture,
        mode: NonAdherenceMode,
        outcome_kind: OutcomeKind,
        alpha: f64,
        beta: f64,
        rng: &mut Rng,
    ) -> Result<LobsterNet> {
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(Error::InvalidConfig("alpha and beta must be positive".into()));
        }
        let w = arch.hidden_shared;
        let shared = vec![w; arch.depth];
        let task = vec![arch.hidden_task; arch.depth];
        // Representation modules end in an ELU layer of the shared width.
        let trunk = |input: usize, rng: &mut Rng| {
            Mlp::glorot(mlp_specs(input, &shared[..shared.len() - 1], w, Activation::Elu), rng)
        };
        let (y_act, outcome_loss) = outcome_head(outcome_kind);
        let omega = trunk(d, rng)?;
        let f_t = Mlp::glorot(mlp_specs(w, &task, 1, Activation::Sigmoid), rng)?;
        let z = [trunk(w, rng)?, trunk(w, rng)?];
        let f_a = [
            Mlp::glorot(mlp_specs(w, &task, 1, Activation::Sigmoid), rng)?,
            Mlp::glorot(mlp_specs(w, &task, 1, Activation::Sigmoid), rng)?,
        ];
        let f_y = [
            Mlp::glorot(mlp_specs(w, &shared, 1, y_act), rng)?,
            Mlp::glorot(mlp_specs(w, &shared, 1, y_act), rng)?,
        ];
        Ok(LobsterNet {
            omega,
            f_t,
            z,
            f_a,
            f_y,
            alpha,
            beta,
            outcome_loss,
            mode,
        })
    }

    fn nets(&self) -> [&Mlp; 8] {
        [
            &self.omega,
            &self.f_t,
            &self.z[0],
            &self.z[1],
            &self.f_a[0],
            &self.f_a[1],
            &self.f_y[0],
            &self.f_y[1],
        ]
    }

    /// Parameters of the branch used only by samples assigned `t`: `Z_Tt` and `F_At`.
    pub fn branch_params_mut(&mut self, t: u8) -> [&mut [f64]; 2] {
        let t = t as usize;
        [&mut self.z[t].params[..], &mut self.f_a[t].params[..]]
    }

    fn forward(&self, data: &JointData) -> Result<Pass> {
        let n = data.t.len();
        if data.x.nrows() != n || data.a.len() != n || data.y.len() != n {
            return Err(Error::ShapeMismatch("joint data columns differ in length".into()));
        }
        let rows_t = [JointData::rows_where(&data.t, 0), JointData::rows_where(&data.t, 1)];
        let rows_a = [JointData::rows_where(&data.a, 0), JointData::rows_where(&data.a, 1)];
        let omega = self.omega.forward(data.x.view())?;
        let h = omega.output();
        let f_t = self.f_t.forward(h.view())?;
        let z = [
            forward_rows(&self.z[0], h, &rows_t[0])?,
            forward_rows(&self.z[1], h, &rows_t[1])?,
        ];
        let mut f_a = [None, None];
        let mut routed = Array2::zeros((n, self.omega.out_dim()));
        for t in 0..2 {
            if let Some(zc) = &z[t] {
                f_a[t] = Some(self.f_a[t].forward(zc.output().view())?);
                for (j, &i) in rows_t[t].iter().enumerate() {
                    routed.row_mut(i).assign(&zc.output().row(j));
                }
            }
        }
        let f_y = [
            forward_rows(&self.f_y[0], &routed, &rows_a[0])?,
            forward_rows(&self.f_y[1], &routed, &rows_a[1])?,
        ];
        Ok(Pass {
            rows_t,
            rows_a,
            omega,
            f_t,
            z,
            f_a,
            f_y,
        })
    }

    /// `(mean outcome loss, mean intake CE, mean assignment CE)`, each over all samples.
    pub fn loss_components(&self, data: &JointData) -> Result<(f64, f64, f64)> {
        let p = self.forward(data)?;
        Ok(self.components(&p, data))
    }

    fn components(&self, p: &Pass, data: &JointData) -> (f64, f64, f64) {
        let n = data.t.len() as f64;
        let mut outcome = 0.0;
        let mut intake = 0.0;
        for k in 0..2 {
            for (j, v) in head_column(&p.f_y[k]).iter().enumerate() {
                outcome += self.outcome_loss.sample(*v, data.y[p.rows_a[k][j]]);
            }
            for (j, v) in head_column(&p.f_a[k]).iter().enumerate() {
                intake += Loss::Bce.sample(*v, f64::from(data.a[p.rows_t[k][j]]));
            }
        }
        let assign: f64 = p
            .f_t
            .output()
            .column(0)
            .iter()
            .zip(&data.t)
            .map(|(&v, &t)| Loss::Bce.sample(v, f64::from(t)))
            .sum();
        (outcome / n, intake / n, assign / n)
    }

    /// Nuisance estimates for each row of `x`, with `π̂` clamped to
    /// `[1e-6, 1 − 1e-6]` and, one-sided, `Â(0) = 0`.
    pub fn predict_nuisances(&self, x: ArrayView2<'_, f64>) -> Result<Vec<NuisanceValues>> {
        let h = self.omega.forward(x)?;
        let h = h.output();
        let pi = self.f_t.forward(h.view())?.output().column(0).to_owned();
        let mut a_hat = [Array1::zeros(0), Array1::zeros(0)];
        let mut y_hat = [[Array1::zeros(0), Array1::zeros(0)], [Array1::zeros(0), Array1::zeros(0)]];
        for t in 0..2 {
            let zc = self.z[t].forward(h.view())?;
            let zt = zc.output();
            a_hat[t] = self.f_a[t].forward(zt.view())?.output().column(0).to_owned();
            for a in 0..2 {
                y_hat[a][t] = self.f_y[a].forward(zt.view())?.output().column(0).to_owned();
            }
        }
        Ok((0..x.nrows())
            .map(|i| NuisanceValues {
                pi: pi[i].clamp(crate::net::PROB_CLAMP, 1.0 - crate::net::PROB_CLAMP),
                a_given_t: [
                    match self.mode {
                        NonAdherenceMode::OneSided => 0.0,
                        NonAdherenceMode::TwoSided => a_hat[0][i],
                    },
                    a_hat[1][i],
                ],
                y_given_at: [
                    [y_hat[0][0][i], y_hat[0][1][i]],
                    [y_hat[1][0][i], y_hat[1][1][i]],
                ],
            })
            .collect())
    }
}

fn backward_rows(
    net: &Mlp,
    cache: &Option<ForwardCache>,
    d_out: Array1<f64>,
    grad: &mut [f64],
) -> Result<Option<Array2<f64>>> {
    match cache {
        Some(c) => Ok(Some(net.backward(c, to_column(d_out).view(), grad)?)),
        None => Ok(None),
    }
}

impl Trainable for LobsterNet {
    type Data = JointData;

    fn data_len(data: &JointData) -> usize {
        data.t.len()
    }

    fn select(data: &JointData, idx: &[usize]) -> JointData {
        JointData {
            x: data.x.select(Axis(0), idx),
            t: idx.iter().map(|&i| data.t[i]).collect(),
            a: idx.iter().map(|&i| data.a[i]).collect(),
            y: data.y.select(Axis(0), idx),
        }
    }

    fn n_params(&self) -> usize {
        self.nets().iter().map(|m| m.n_params()).sum()
    }

    /// `mean_i [ℓ_O + α·CE_A + β·CE_T]`.
    fn loss(&self, data: &JointData) -> Result<f64> {
        let (o, a, t) = self.loss_components(data)?;
        Ok(o + self.alpha * a + self.beta * t)
    }

    fn loss_and_grad(&self, data: &JointData, l2: f64) -> Result<(f64, Vec<f64>)> {
        let p = self.forward(data)?;
        let (o, a, t) = self.components(&p, data);
        let n = data.t.len();
        let inv = 1.0 / n as f64;

        let mut grad = vec![0.0; self.n_params()];
        let sizes: Vec<usize> = self.nets().iter().map(|m| m.n_params()).collect();
        let mut chunks: Vec<&mut [f64]> = Vec::with_capacity(8);
        let mut rest = &mut grad[..];
        for s in &sizes {
            let (head, tail) = rest.split_at_mut(*s);
            chunks.push(head);
            rest = tail;
        }
        let [g_omega, g_ft, g_z0, g_z1, g_fa0, g_fa1, g_fy0, g_fy1]: [&mut [f64]; 8] =
            chunks.try_into().expect("eight sub-networks");
        let g_z = [g_z0, g_z1];
        let g_fa = [g_fa0, g_fa1];
        let g_fy = [g_fy0, g_fy1];

        let width = self.omega.out_dim();
        let mut d_routed = Array2::<f64>::zeros((n, width));
        for k in 0..2 {
            let pred = head_column(&p.f_y[k]);
            let y = data.y.select(Axis(0), &p.rows_a[k]);
            let d = self.outcome_loss.grads(pred.view(), y.view(), inv);
            if let Some(dr) = backward_rows(&self.f_y[k], &p.f_y[k], d, g_fy[k])? {
                for (j, &i) in p.rows_a[k].iter().enumerate() {
                    d_routed.row_mut(i).assign(&dr.row(j));
                }
            }
        }
        let mut d_h = Array2::<f64>::zeros((n, width));
        for k in 0..2 {
            let pred = head_column(&p.f_a[k]);
            let target: Array1<f64> = p.rows_t[k].iter().map(|&i| f64::from(data.a[i])).collect();
            let d = Loss::Bce.grads(pred.view(), target.view(), self.alpha * inv);
            if let Some(mut dz) = backward_rows(&self.f_a[k], &p.f_a[k], d, g_fa[k])? {
                dz += &d_routed.select(Axis(0), &p.rows_t[k]);
                let zc = p.z[k].as_ref().expect("branch ran when its head ran");
                let dh = self.z[k].backward(zc, dz.view(), g_z[k])?;
                for (j, &i) in p.rows_t[k].iter().enumerate() {
                    d_h.row_mut(i).assign(&dh.row(j));
                }
            }
        }
        let t_target: Array1<f64> = data.t.iter().map(|&v| f64::from(v)).collect();
        let pt = p.f_t.output().column(0);
        let d = Loss::Bce.grads(pt, t_target.view(), self.beta * inv);
        d_h += &self.f_t.backward(&p.f_t, to_column(d).view(), g_ft)?;
        self.omega.backward(&p.omega, d_h.view(), g_omega)?;

        let [g_z0, g_z1] = g_z;
        let [g_fa0, g_fa1] = g_fa;
        let [g_fy0, g_fy1] = g_fy;
        for (net, g) in [
            (&self.omega, g_omega),
            (&self.f_t, g_ft),
            (&self.z[0], g_z0),
            (&self.z[1], g_z1),
            (&self.f_a[0], g_fa0),
            (&self.f_a[1], g_fa1),
            (&self.f_y[0], g_fy0),
            (&self.f_y[1], g_fy1),
        ] {
            net.add_l2_grad(l2, g);
        }
        Ok((o + self.alpha * a + self.beta * t, grad))
    }

    fn l2_penalty(&self) -> f64 {
        self.nets().iter().map(|m| m.l2_penalty()).sum()
    }

    fn param_chunks_mut(&mut self) -> Vec<&mut [f64]> {
        let [z0, z1] = &mut self.z;
        let [a0, a1] = &mut self.f_a;
        let [y0, y1] = &mut self.f_y;
        vec![
            &mut self.omega.params[..],
            &mut self.f_t.params[..],
            &mut z0.params[..],
            &mut z1.params[..],
            &mut a0.params[..],
            &mut a1.params[..],
            &mut y0.params[..],
            &mut y1.params[..],
        ]
    }
}
