use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moment estimates and step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// Starts a step; returns the bias corrections `(1 − β₁ᵗ, 1 − β₂ᵗ)`.
    fn begin(&mut self) -> (f64, f64) {
        self.t += 1;
        let t = self.t as i32;
        (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t))
    }

    fn update(&mut self, offset: usize, params: &mut [f64], grads: &[f64], lr: f64, bc: (f64, f64)) {
        let m = &mut self.m[offset..offset + params.len()];
        let v = &mut self.v[offset..offset + params.len()];
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / bc.0;
            let v_hat = *v / bc.1;
            *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
}

/// One bias-corrected Adam update of a flat parameter vector.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} state",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let bc = state.begin();
    state.update(0, params, grads, lr, bc);
    Ok(())
}

/// Adam update over parameters split across several buffers, visited in the
/// same order as the flat gradient.
pub(crate) fn adam_step_chunks<'a>(
    chunks: impl IntoIterator<Item = &'a mut [f64]>,
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.len() != state.m.len() {
        return Err(Error::ShapeMismatch("adam: gradient and state lengths differ".into()));
    }
    let bc = state.begin();
    let mut off = 0;
    for c in chunks {
        if off + c.len() > grads.len() {
            return Err(Error::ShapeMismatch("adam: parameters exceed gradient".into()));
        }
        let n = c.len();
        state.update(off, c, &grads[off..off + n], lr, bc);
        off += n;
    }
    if off != grads.len() {
        return Err(Error::ShapeMismatch("adam: gradient exceeds parameters".into()));
    }
    Ok(())
}
