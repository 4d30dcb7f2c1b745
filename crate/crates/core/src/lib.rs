//! Effect estimation under treatment non-adherence.
//!
//! Samples carry covariates `x`, a binary assignment `t`, a binary intake `a`
//! and an outcome `y`. The target is the conditional average
//! treatment-assignment effect (CATEA), estimated either by the standard
//! backdoor route or by the conditional front-door route through intake.
//!
//! Start with [`adjustment`] for the formulas, [`learners`] for estimators
//! over covariates and [`harness`] for replicated experiments.

// Negated comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjustment;
pub mod data;
pub mod dgp;
pub mod error;
pub mod harness;
pub mod learners;
pub mod net;
pub mod rng;
pub mod stats;
pub mod stratum;
pub mod theory;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/stratum.md")]
    mod stratum {}
    #[doc = include_str!("../../../book/src/theory.md")]
    mod theory {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/learners.md")]
    mod learners {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
