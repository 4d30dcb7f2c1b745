//! A small feedforward network stack with hand-written reverse-mode
//! gradients, Adam, L2 regularization and early stopping.
//!
//! Models implement [`Trainable`], which exposes a loss, its gradient with
//! respect to a flat parameter ordering, and mutable access to the parameter
//! buffers in that same order. [`train`] is generic over it, so a single
//! [`Mlp`] head and the multi-head composite learners share one training loop.

mod mlp;
mod optim;

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

pub use mlp::{mlp_specs, Activation, ForwardCache, LayerSpec, Mlp};
pub(crate) use mlp::to_column;
pub use optim::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub(crate) use optim::adam_step_chunks;

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Binary cross-entropy on probabilities.
    Bce,
    /// Squared error.
    Mse,
}

impl Loss {
    pub fn sample(self, pred: f64, y: f64) -> f64 {
        match self {
            Loss::Bce => {
                let p = pred.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            }
            Loss::Mse => (pred - y) * (pred - y),
        }
    }

    /// `∂ loss / ∂ pred` for one sample. Zero where the clamp is active.
    pub fn sample_grad(self, pred: f64, y: f64) -> f64 {
        match self {
            Loss::Bce => {
                if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&pred) {
                    0.0
                } else {
                    -y / pred + (1.0 - y) / (1.0 - pred)
                }
            }
            Loss::Mse => 2.0 * (pred - y),
        }
    }

    pub fn mean(self, pred: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
        let n = pred.len() as f64;
        pred.iter().zip(y).map(|(&p, &t)| self.sample(p, t)).sum::<f64>() / n
    }

    /// Per-sample gradients, each multiplied by `scale`.
    pub fn grads(self, pred: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>, scale: f64) -> Array1<f64> {
        pred.iter()
            .zip(y)
            .map(|(&p, &t)| scale * self.sample_grad(p, t))
            .collect()
    }
}

/// A model with a differentiable training loss over some data type.
pub trait Trainable: Clone {
    type Data;

    fn data_len(data: &Self::Data) -> usize;

    /// Rows `idx` of `data`, in order.
    fn select(data: &Self::Data, idx: &[usize]) -> Self::Data;

    fn n_params(&self) -> usize;

    /// Mean data loss, without the L2 term.
    fn loss(&self, data: &Self::Data) -> Result<f64>;

    /// Mean data loss, and the gradient of `loss + λ·½‖W‖²` in flat order.
    fn loss_and_grad(&self, data: &Self::Data, l2: f64) -> Result<(f64, Vec<f64>)>;

    /// `½‖W‖²` over all weight matrices.
    fn l2_penalty(&self) -> f64;

    /// Parameter buffers, in the flat gradient order.
    fn param_chunks_mut(&mut self) -> Vec<&mut [f64]>;
}

/// Features and targets for a single-output network.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervised {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl Supervised {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows but {} targets",
                x.nrows(),
                y.len()
            )));
        }
        Ok(Supervised { x, y })
    }
}

/// One network fitted to one target under one loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadNet {
    pub net: Mlp,
    pub loss: Loss,
}

impl HeadNet {
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        let out = self.net.forward(x.view())?;
        Ok(out.output().column(0).to_owned())
    }
}

impl Trainable for HeadNet {
    type Data = Supervised;

    fn data_len(data: &Supervised) -> usize {
        data.y.len()
    }

    fn select(data: &Supervised, idx: &[usize]) -> Supervised {
        Supervised {
            x: data.x.select(Axis(0), idx),
            y: data.y.select(Axis(0), idx),
        }
    }

    fn n_params(&self) -> usize {
        self.net.n_params()
    }

    fn loss(&self, data: &Supervised) -> Result<f64> {
        Ok(self.loss.mean(self.predict(&data.x)?.view(), data.y.view()))
    }

    fn loss_and_grad(&self, data: &Supervised, l2: f64) -> Result<(f64, Vec<f64>)> {
        let cache = self.net.forward(data.x.view())?;
        let pred = cache.output().column(0);
        let loss = self.loss.mean(pred, data.y.view());
        let d = self.loss.grads(pred, data.y.view(), 1.0 / data.y.len() as f64);
        let mut grad = vec![0.0; self.net.n_params()];
        self.net.backward(&cache, to_column(d).view(), &mut grad)?;
        self.net.add_l2_grad(l2, &mut grad);
        Ok((loss, grad))
    }

    fn l2_penalty(&self) -> f64 {
        self.net.l2_penalty()
    }

    fn param_chunks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.net.params[..]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    FullBatch,
    MiniBatch(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub l2_grid: Vec<f64>,
    pub patience: usize,
    pub lr_decay_factor: f64,
    pub lr_decay_patience: usize,
    pub batch_mode: BatchMode,
    pub seed: u64,
}

pub const DEFAULT_L2_GRID: [f64; 8] = [1e-2, 5e-3, 1e-3, 5e-4, 1e-4, 5e-5, 1e-5, 0.0];

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            max_epochs: 1000,
            l2_grid: DEFAULT_L2_GRID.to_vec(),
            patience: 5,
            lr_decay_factor: 0.5,
            lr_decay_patience: 5,
            batch_mode: BatchMode::FullBatch,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.patience < 1 || self.lr_decay_patience < 1 {
            return bad("patience values must be at least 1");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr_decay_factor must lie in (0, 1]");
        }
        if self.l2_grid.is_empty() || self.l2_grid.iter().any(|l| !(*l >= 0.0)) {
            return bad("l2_grid must be a non-empty list of non-negative values");
        }
        if self.batch_mode == BatchMode::MiniBatch(0) {
            return bad("mini-batch size must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Parameters at the epoch of lowest validation loss.
    pub model: M,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Row 0 holds the losses at initialization.
    pub history: Vec<EpochRecord>,
}

/// Trains with Adam at L2 strength `l2`. Epoch 0 is the initialization.
/// After `lr_decay_patience` epochs without a new best validation loss the
/// learning rate is multiplied by `lr_decay_factor`; after `patience` such
/// epochs training stops. The best parameters are returned.
pub fn train<M: Trainable>(
    init: M,
    train_data: &M::Data,
    val_data: &M::Data,
    cfg: &TrainConfig,
    l2: f64,
) -> Result<TrainOutcome<M>> {
    cfg.validate()?;
    let n = M::data_len(train_data);
    if n == 0 || M::data_len(val_data) == 0 {
        return Err(Error::EmptyData);
    }
    let mut model = init;
    let mut lr = cfg.learning_rate;
    let mut best_val = model.loss(val_data)?;
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: model.loss(train_data)?,
        val_loss: best_val,
        lr,
    }];
    let mut state = AdamState::new(model.n_params());
    let mut rng = stream(cfg.seed, 0x7261_696e);
    let mut order: Vec<usize> = (0..n).collect();
    let mut since_best = 0;
    let mut since_decay = 0;

    for epoch in 1..=cfg.max_epochs {
        let train_loss = match cfg.batch_mode {
            BatchMode::FullBatch => {
                let (loss, grad) = model.loss_and_grad(train_data, l2)?;
                adam_step_chunks(model.param_chunks_mut(), &grad, &mut state, lr)?;
                loss
            }
            BatchMode::MiniBatch(size) => {
                order.shuffle(&mut rng);
                let mut total = 0.0;
                for idx in order.chunks(size) {
                    let batch = M::select(train_data, idx);
                    let (loss, grad) = model.loss_and_grad(&batch, l2)?;
                    adam_step_chunks(model.param_chunks_mut(), &grad, &mut state, lr)?;
                    total += loss * idx.len() as f64;
                }
                total / n as f64
            }
        };
        let val_loss = model.loss(val_data)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            best_epoch = epoch;
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
            if since_decay >= cfg.lr_decay_patience {
                lr *= cfg.lr_decay_factor;
                since_decay = 0;
            }
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best,
        best_epoch,
        best_val_loss: best_val,
        history,
    })
}

/// Trains once per grid value and keeps the run with the lowest validation
/// loss; ties go to the larger `λ`. Returns the winning `λ` too.
pub fn train_l2_grid<M: Trainable>(
    init: &M,
    train_data: &M::Data,
    val_data: &M::Data,
    cfg: &TrainConfig,
) -> Result<(f64, TrainOutcome<M>)> {
    cfg.validate()?;
    let mut best: Option<(f64, TrainOutcome<M>)> = None;
    for &l2 in &cfg.l2_grid {
        let out = train(init.clone(), train_data, val_data, cfg, l2)?;
        let better = match &best {
            None => true,
            Some((bl2, b)) => {
                out.best_val_loss < b.best_val_loss
                    || (out.best_val_loss == b.best_val_loss && l2 > *bl2)
            }
        };
        if better {
            best = Some((l2, out));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Writes `epoch,train_loss,val_loss,lr`.
pub fn write_history_csv<W: Write>(history: &[EpochRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "train_loss", "val_loss", "lr"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            crate::data::fmt_f64(r.train_loss),
            crate::data::fmt_f64(r.val_loss),
            crate::data::fmt_f64(r.lr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Compares the analytic gradient of `loss + λ·½‖W‖²` against central
/// differences with step `h` at the parameter indices `coords`. Returns the
/// largest `|a − f| / max(|a|, |f|, 1e-8)`.
pub fn gradient_check<M: Trainable>(
    model: &M,
    data: &M::Data,
    l2: f64,
    h: f64,
    coords: &[usize],
) -> Result<f64> {
    let (_, analytic) = model.loss_and_grad(data, l2)?;
    let objective = |m: &M| -> Result<f64> { Ok(m.loss(data)? + l2 * m.l2_penalty()) };
    let mut worst: f64 = 0.0;
    for &k in coords {
        let shifted = |delta: f64| -> Result<f64> {
            let mut m = model.clone();
            set_flat(&mut m, k, delta);
            objective(&m)
        };
        let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        let a = analytic[k];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn set_flat<M: Trainable>(m: &mut M, mut k: usize, delta: f64) {
    for c in m.param_chunks_mut() {
        if k < c.len() {
            c[k] += delta;
            return;
        }
        k -= c.len();
    }
    panic!("parameter index out of range");
}
