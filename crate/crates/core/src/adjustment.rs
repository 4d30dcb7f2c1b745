//! Backdoor and conditional front-door adjustment formulas.
//!
//! Every estimator in the crate, from single-stratum plug-ins to the neural
//! learners, reduces its nuisance estimates to a CATEA value through one of
//! the three functions here.

use crate::data::NuisanceValues;
use crate::error::{Error, Result};

/// Effect of assignment on the outcome, in outcome units.
pub type CateaValue = f64;

/// Standard backdoor estimate: difference of assignment-conditional outcome means.
pub fn sbd_catea(y_t1: f64, y_t0: f64) -> CateaValue {
    y_t1 - y_t0
}

fn check_propensity(pi: f64) -> Result<()> {
    if pi > 0.0 && pi < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidPropensity(pi))
    }
}

/// Front-door estimate under one-sided non-adherence:
///
/// `[(Ŷ(1,1) − Ŷ(0,0))(1 − π̂) + (Ŷ(1,1) − Ŷ(0,1))π̂] · Â(1)`
///
/// `Ŷ(1,0)` is never read. `Â(0)` must be exactly zero.
pub fn cfd_catea_one_sided(nv: &NuisanceValues) -> Result<CateaValue> {
    check_propensity(nv.pi)?;
    if nv.a(0) != 0.0 {
        return Err(Error::OneSidedContract(nv.a(0)));
    }
    let y11 = nv.y(1, 1);
    let outcome_effect = (y11 - nv.y(0, 0)) * (1.0 - nv.pi) + (y11 - nv.y(0, 1)) * nv.pi;
    Ok(outcome_effect * nv.a(1))
}

/// Front-door estimate under two-sided non-adherence:
///
/// `[(Ŷ(1,0) − Ŷ(0,0))(1 − π̂) + (Ŷ(1,1) − Ŷ(0,1))π̂] · [Â(1) − Â(0)]`
pub fn cfd_catea_two_sided(nv: &NuisanceValues) -> Result<CateaValue> {
    check_propensity(nv.pi)?;
    let outcome_effect =
        (nv.y(1, 0) - nv.y(0, 0)) * (1.0 - nv.pi) + (nv.y(1, 1) - nv.y(0, 1)) * nv.pi;
    Ok(outcome_effect * (nv.a(1) - nv.a(0)))
}

/// Dispatches to the front-door formula matching `mode`.
pub fn cfd_catea(nv: &NuisanceValues, mode: crate::data::NonAdherenceMode) -> Result<CateaValue> {
    match mode {
        crate::data::NonAdherenceMode::OneSided => cfd_catea_one_sided(nv),
        crate::data::NonAdherenceMode::TwoSided => cfd_catea_two_sided(nv),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn nv(pi: f64, a0: f64, a1: f64, y00: f64, y01: f64, y10: f64, y11: f64) -> NuisanceValues {
        NuisanceValues {
            pi,
            a_given_t: [a0, a1],
            y_given_at: [[y00, y01], [y10, y11]],
        }
    }

    #[test]
    fn sbd_examples() {
        assert_abs_diff_eq!(sbd_catea(0.7, 0.4), 0.3, epsilon = 1e-15);
        assert_eq!(sbd_catea(0.42, 0.42), 0.0);
        assert_eq!(sbd_catea(1.0, 0.0), 1.0);
    }

    #[test]
    fn one_sided_examples() {
        // [(1 - 0)(0.7) + (1 - 0)(0.3)] * 0.5
        let v = cfd_catea_one_sided(&nv(0.3, 0.0, 0.5, 0.0, 0.0, 123.0, 1.0)).unwrap();
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);

        let v = cfd_catea_one_sided(&nv(0.4, 0.0, 0.0, 0.1, 0.9, 0.0, 0.3)).unwrap();
        assert_eq!(v, 0.0);

        let v = cfd_catea_one_sided(&nv(0.6, 0.0, 0.8, 0.25, 0.25, 0.0, 0.25)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn one_sided_contract_and_propensity_errors() {
        assert_eq!(
            cfd_catea_one_sided(&nv(0.5, 0.1, 0.5, 0.0, 0.0, 0.0, 1.0)),
            Err(Error::OneSidedContract(0.1))
        );
        for pi in [0.0, 1.0, -0.2, f64::NAN] {
            assert!(matches!(
                cfd_catea_one_sided(&nv(pi, 0.0, 0.5, 0.0, 0.0, 0.0, 1.0)),
                Err(Error::InvalidPropensity(_))
            ));
            assert!(matches!(
                cfd_catea_two_sided(&nv(pi, 0.0, 0.5, 0.0, 0.0, 0.0, 1.0)),
                Err(Error::InvalidPropensity(_))
            ));
        }
    }

    #[test]
    fn two_sided_examples() {
        // [(0.6)(0.5) + (0.6)(0.5)] * 0.8
        let v = cfd_catea_two_sided(&nv(0.5, 0.1, 0.9, 0.2, 0.2, 0.8, 0.8)).unwrap();
        assert_abs_diff_eq!(v, 0.48, epsilon = 1e-15);

        let v = cfd_catea_two_sided(&nv(0.3, 0.4, 0.4, 0.1, 0.2, 0.9, 0.7)).unwrap();
        assert_eq!(v, 0.0);

        let v = cfd_catea_two_sided(&nv(0.3, 0.1, 0.9, 0.1, 0.7, 0.1, 0.7)).unwrap();
        assert_eq!(v, 0.0);
    }

    fn prob() -> impl Strategy<Value = f64> {
        0.0..=1.0f64
    }

    fn open_prob() -> impl Strategy<Value = f64> {
        0.001..0.999f64
    }

    proptest! {
        #[test]
        fn two_sided_reduces_to_one_sided(
            pi in open_prob(), a1 in prob(), y00 in -5.0..5.0f64, y01 in -5.0..5.0f64,
            y11 in -5.0..5.0f64,
        ) {
            let v = nv(pi, 0.0, a1, y00, y01, y11, y11);
            prop_assert_eq!(cfd_catea_two_sided(&v).unwrap(), cfd_catea_one_sided(&v).unwrap());
        }

        #[test]
        fn two_sided_is_linear_in_intake_effect(
            pi in open_prob(), a0 in 0.0..0.5f64, da in 0.0..0.25f64,
            y in proptest::array::uniform4(-3.0..3.0f64),
        ) {
            let once = cfd_catea_two_sided(&nv(pi, a0, a0 + da, y[0], y[1], y[2], y[3])).unwrap();
            let twice = cfd_catea_two_sided(&nv(pi, a0, a0 + 2.0 * da, y[0], y[1], y[2], y[3])).unwrap();
            prop_assert!((twice - 2.0 * once).abs() <= 1e-12 * (1.0 + once.abs()));
        }

        #[test]
        fn sbd_is_antisymmetric(a in -10.0..10.0f64, b in -10.0..10.0f64) {
            prop_assert_eq!(sbd_catea(a, b), -sbd_catea(b, a));
        }

        #[test]
        fn binary_nuisances_give_bounded_effects(
            pi in open_prob(), a0 in prob(), a1 in prob(),
            y in proptest::array::uniform4(prob()),
        ) {
            let two = cfd_catea_two_sided(&nv(pi, a0, a1, y[0], y[1], y[2], y[3])).unwrap();
            prop_assert!((-1.0..=1.0).contains(&two));
            let one = cfd_catea_one_sided(&nv(pi, 0.0, a1, y[0], y[1], y[2], y[3])).unwrap();
            prop_assert!((-1.0..=1.0).contains(&one));
        }
    }
}
