//! CATEA learners over covariates: backdoor and front-door T-learners and
//! the multi-task [`LobsterNet`].
//!
//! Every learner is fitted with [`Learner::fit`] on a training and a
//! validation split and reduces its nuisance predictions to an effect through
//! [`crate::adjustment`].

mod lobster;
mod tlearner;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::adjustment::{cfd_catea, CateaValue};
use crate::data::{Dataset, NonAdherenceMode, NuisanceValues, OutcomeKind};
use crate::error::{Error, Result};
use crate::net::{train_l2_grid, TrainConfig};
use crate::rng::{derive_seed, stream};

pub use lobster::{JointData, LobsterNet};
pub use tlearner::{TLearnerCfd, TLearnerSbd};

/// Hidden widths. Backdoor and front-door T-learner nets, the backbone,
/// the representation branches and the outcome heads use `hidden_shared`;
/// the propensity and intake heads of [`LobsterNet`] use `hidden_task`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub hidden_shared: usize,
    pub hidden_task: usize,
    pub depth: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden_shared: 300,
            hidden_task: 100,
            depth: 3,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_shared == 0 || self.hidden_task == 0 || self.depth == 0 {
            return Err(Error::InvalidConfig("widths and depth must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    TLearnerSbd,
    TLearnerCfd,
    LobsterNet,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 3] = [
        LearnerKind::TLearnerSbd,
        LearnerKind::TLearnerCfd,
        LearnerKind::LobsterNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::TLearnerSbd => "t_learner_sbd",
            LearnerKind::TLearnerCfd => "t_learner_cfd",
            LearnerKind::LobsterNet => "lobster_net",
        }
    }
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Loss weights `(α, β)`: 1 for binary outcomes, otherwise the root mean
/// square of the training outcomes.
pub fn alpha_beta_defaults(ds: &Dataset) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::EmptyData);
    }
    match ds.outcome_kind {
        OutcomeKind::Binary => Ok((1.0, 1.0)),
        OutcomeKind::Continuous => {
            let ms = ds.samples.iter().map(|s| s.y * s.y).sum::<f64>() / ds.len() as f64;
            let rms = ms.sqrt();
            Ok((rms, rms))
        }
    }
}

/// A fitted learner, serializable as a JSON manifest carrying its
/// architecture, mode, selected `λ` and every network's checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Learner {
    TLearnerSbd(TLearnerSbd),
    TLearnerCfd(TLearnerCfd),
    LobsterNet(FittedLobster),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedLobster {
    pub arch: Architecture,
    pub l2: f64,
    pub net: LobsterNet,
}

impl Learner {
    /// Fits a learner of `kind`, selecting one L2 strength for all of its
    /// networks by validation loss.
    pub fn fit(
        kind: LearnerKind,
        arch: &Architecture,
        train: &Dataset,
        val: &Dataset,
        cfg: &TrainConfig,
    ) -> Result<Learner> {
        arch.validate()?;
        cfg.validate()?;
        if train.is_empty() || val.is_empty() {
            return Err(Error::EmptyData);
        }
        if val.dim() != train.dim() {
            return Err(Error::ShapeMismatch("train and validation dims differ".into()));
        }
        match kind {
            LearnerKind::TLearnerSbd => Ok(Learner::TLearnerSbd(TLearnerSbd::fit(arch, train, val, cfg)?)),
            LearnerKind::TLearnerCfd => Ok(Learner::TLearnerCfd(TLearnerCfd::fit(arch, train, val, cfg)?)),
            LearnerKind::LobsterNet => {
                let (alpha, beta) = alpha_beta_defaults(train)?;
                let mut rng = stream(derive_seed(cfg.seed, &[0x10b5]), 0);
                let init = LobsterNet::new(train.dim(), arch, train.mode, train.outcome_kind, alpha, beta, &mut rng)?;
                let tr = JointData::from_dataset(train);
                let va = JointData::from_dataset(val);
                let (l2, out) = train_l2_grid(&init, &tr, &va, cfg)?;
                Ok(Learner::LobsterNet(FittedLobster {
                    arch: *arch,
                    l2,
                    net: out.model,
                }))
            }
        }
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            Learner::TLearnerSbd(_) => LearnerKind::TLearnerSbd,
            Learner::TLearnerCfd(_) => LearnerKind::TLearnerCfd,
            Learner::LobsterNet(_) => LearnerKind::LobsterNet,
        }
    }

    pub fn l2(&self) -> f64 {
        match self {
            Learner::TLearnerSbd(l) => l.l2,
            Learner::TLearnerCfd(l) => l.l2,
            Learner::LobsterNet(l) => l.l2,
        }
    }

    /// Effect estimates, one per row of `x`.
    pub fn predict_catea(&self, x: &Array2<f64>) -> Result<Vec<CateaValue>> {
        match self {
            Learner::TLearnerSbd(l) => l.predict_catea(x),
            Learner::TLearnerCfd(l) => assemble(&l.predict_nuisances(x)?, l.mode),
            Learner::LobsterNet(l) => assemble(&l.net.predict_nuisances(x.view())?, l.net.mode),
        }
    }

    pub fn predict_catea_one(&self, x: &[f64]) -> Result<CateaValue> {
        let m = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
        Ok(self.predict_catea(&m)?[0])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Learner> {
        Ok(serde_json::from_str(s)?)
    }
}

fn assemble(nuisances: &[NuisanceValues], mode: NonAdherenceMode) -> Result<Vec<CateaValue>> {
    nuisances.iter().map(|nv| cfd_catea(nv, mode)).collect()
}

#[cfg(test)]
mod tests;
