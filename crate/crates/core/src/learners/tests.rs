use super::*;
use crate::data::Sample;
use crate::dgp::{generate_dataset_a, sigmoid, SyntheticConfig};
use crate::net::{gradient_check, BatchMode, Trainable};
use rand::Rng as _;
use NonAdherenceMode::*;

fn small_arch() -> Architecture {
    Architecture {
        hidden_shared: 6,
        hidden_task: 4,
        depth: 3,
    }
}

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        max_epochs: 30,
        l2_grid: vec![1e-3, 0.0],
        batch_mode: BatchMode::MiniBatch(32),
        ..TrainConfig::default()
    }
}

fn dataset(mode: NonAdherenceMode, n: usize, seed: u64) -> Dataset {
    generate_dataset_a(&SyntheticConfig {
        n,
        d: 4,
        gamma: 0.3,
        mode,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
    .dataset
}

fn lobster(mode: NonAdherenceMode, kind: OutcomeKind, seed: u64) -> LobsterNet {
    LobsterNet::new(4, &small_arch(), mode, kind, 1.0, 1.0, &mut stream(seed, 0)).unwrap()
}

#[test]
fn alpha_beta_examples() {
    let bin = dataset(TwoSided, 10, 0);
    assert_eq!(alpha_beta_defaults(&bin).unwrap(), (1.0, 1.0));
    let cont = |ys: &[f64]| {
        Dataset::new(
            ys.iter().map(|&y| Sample::new(vec![0.0], 0, 0, y)).collect(),
            TwoSided,
            OutcomeKind::Continuous,
        )
    };
    assert_eq!(alpha_beta_defaults(&cont(&[2.0, 2.0, -2.0])).unwrap(), (2.0, 2.0));
    let (a, b) = alpha_beta_defaults(&cont(&[3.0, 4.0])).unwrap();
    assert!((a - 12.5f64.sqrt()).abs() < 1e-15 && a == b);
    assert_eq!(alpha_beta_defaults(&cont(&[])), Err(Error::EmptyData));
}

#[test]
fn front_door_t_learner_needs_every_cell_but_lobster_does_not() {
    // One-sided with full adherence among the treated: no (a=0, t=1) rows.
    let mut ds = dataset(OneSided, 120, 1);
    for s in &mut ds.samples {
        s.a = s.t;
    }
    let split = ds.len() * 3 / 4;
    let idx: Vec<usize> = (0..ds.len()).collect();
    let (tr, va) = (ds.subset(&idx[..split]), ds.subset(&idx[split..]));
    let err = Learner::fit(LearnerKind::TLearnerCfd, &small_arch(), &tr, &va, &quick_cfg()).unwrap_err();
    assert_eq!(err, Error::EmptyConditioningSet { a: 0, t: 1 });
    let fitted = Learner::fit(LearnerKind::LobsterNet, &small_arch(), &tr, &va, &quick_cfg()).unwrap();
    assert!(fitted.predict_catea(&va.features()).unwrap().iter().all(|v| v.is_finite()));
}

#[test]
fn t_learner_cfd_network_counts() {
    for (mode, expected) in [(OneSided, 5), (TwoSided, 7)] {
        let ds = dataset(mode, 200, 2);
        let idx: Vec<usize> = (0..200).collect();
        let cfg = TrainConfig {
            max_epochs: 2,
            ..quick_cfg()
        };
        let l = TLearnerCfd::fit(&small_arch(), &ds.subset(&idx[..150]), &ds.subset(&idx[150..]), &cfg).unwrap();
        assert_eq!(l.n_networks(), expected);
    }
}

fn perturb(chunks: [&mut [f64]; 2], rng: &mut crate::rng::Rng) {
    for c in chunks {
        for p in c.iter_mut() {
            *p += rng.random::<f64>() - 0.5;
        }
    }
}

#[test]
fn router_keeps_assignment_branches_independent() {
    let mut rng = stream(5, 0);
    let x = Array2::from_shape_fn((100, 4), |_| rng.random::<f64>() * 4.0 - 2.0);
    for t in 0..2u8 {
        let base = lobster(TwoSided, OutcomeKind::Binary, 3);
        let before = base.predict_nuisances(x.view()).unwrap();
        let mut other = base.clone();
        perturb(other.branch_params_mut(1 - t), &mut rng);
        let after = other.predict_nuisances(x.view()).unwrap();
        let mut moved = false;
        for (b, a) in before.iter().zip(&after) {
            for arm in 0..2 {
                assert_eq!(b.y(arm, t), a.y(arm, t));
            }
            assert_eq!(b.a(t), a.a(t));
            moved |= b.y(1, 1 - t) != a.y(1, 1 - t);
        }
        assert!(moved, "perturbation should reach the other branch");
    }
}

#[test]
fn composite_loss_equals_sum_of_head_losses() {
    let ds = dataset(TwoSided, 60, 6);
    let net = LobsterNet::new(4, &small_arch(), TwoSided, OutcomeKind::Binary, 0.7, 1.3, &mut stream(6, 0)).unwrap();
    let data = JointData::from_dataset(&ds);
    let composite = net.loss(&data).unwrap();

    // Recompute each head's loss one sample at a time through the raw networks.
    let mut total = 0.0;
    for s in &ds.samples {
        let h = net.omega.predict_one(&s.x).unwrap();
        let z = net.z[s.t as usize].predict_one(&h).unwrap();
        let p_t = net.f_t.predict_one(&h).unwrap()[0];
        let p_a = net.f_a[s.t as usize].predict_one(&z).unwrap()[0];
        let p_y = net.f_y[s.a as usize].predict_one(&z).unwrap()[0];
        total += Loss::Bce.sample(p_y, s.y)
            + 0.7 * Loss::Bce.sample(p_a, f64::from(s.a))
            + 1.3 * Loss::Bce.sample(p_t, f64::from(s.t));
    }
    assert!((composite - total / ds.len() as f64).abs() < 1e-10);
}

use crate::net::Loss;

#[test]
fn lobster_gradients_match_finite_differences() {
    for (seed, kind) in [(1, OutcomeKind::Binary), (2, OutcomeKind::Continuous)] {
        let mut ds = dataset(TwoSided, 16, seed);
        if kind == OutcomeKind::Continuous {
            ds.outcome_kind = kind;
            for (i, s) in ds.samples.iter_mut().enumerate() {
                s.y = (i as f64 * 0.37).sin() * 2.0;
            }
        }
        let net = LobsterNet::new(4, &small_arch(), TwoSided, kind, 1.5, 0.5, &mut stream(seed, 1)).unwrap();
        let data = JointData::from_dataset(&ds);
        let coords: Vec<usize> = (0..net.n_params()).collect();
        let err = gradient_check(&net, &data, 1e-3, 1e-5, &coords).unwrap();
        assert!(err < 1e-4, "{kind:?}: {err}");
    }
}

/// Zero every weight and set each head's output bias so the head is constant.
fn constant_lobster(mode: NonAdherenceMode, pi: f64, a: [f64; 2], y: [f64; 2]) -> LobsterNet {
    let mut net = lobster(mode, OutcomeKind::Binary, 0);
    let logit = |p: f64| (p / (1.0 - p)).ln();
    for c in net.param_chunks_mut() {
        c.iter_mut().for_each(|v| *v = 0.0);
    }
    let set_bias = |m: &mut crate::net::Mlp, p: f64| {
        let last = m.params.len() - 1;
        m.params[last] = logit(p);
    };
    set_bias(&mut net.f_t, pi);
    set_bias(&mut net.f_a[0], a[0]);
    set_bias(&mut net.f_a[1], a[1]);
    set_bias(&mut net.f_y[0], y[0]);
    set_bias(&mut net.f_y[1], y[1]);
    net
}

fn wrap(net: LobsterNet) -> Learner {
    Learner::LobsterNet(FittedLobster {
        arch: small_arch(),
        l2: 0.0,
        net,
    })
}

#[test]
fn constant_heads_reproduce_hand_evaluated_formula() {
    // π̂ = 0.4, Â(1) = 0.8, Â(0) = 0.3, Ŷ(0,·) = 0.2, Ŷ(1,·) = 0.7 two-sided:
    // [(0.7 − 0.2)(0.6) + (0.7 − 0.2)(0.4)]·(0.8 − 0.3) = 0.25.
    let l = wrap(constant_lobster(TwoSided, 0.4, [0.3, 0.8], [0.2, 0.7]));
    let v = l.predict_catea_one(&[0.3, -1.0, 2.0, 0.0]).unwrap();
    assert!((v - 0.25).abs() < 1e-12, "{v}");

    // One-sided ignores F_A0 and uses [(Ŷ11 − Ŷ00)(1 − π̂) + (Ŷ11 − Ŷ01)π̂]·Â(1).
    let l = wrap(constant_lobster(OneSided, 0.4, [0.3, 0.8], [0.2, 0.7]));
    let v = l.predict_catea_one(&[1.0, 1.0, 1.0, 1.0]).unwrap();
    assert!((v - 0.5 * 0.8).abs() < 1e-12, "{v}");

    // Tied intake heads give zero effect.
    let l = wrap(constant_lobster(TwoSided, 0.4, [0.6, 0.6], [0.2, 0.9]));
    assert_eq!(l.predict_catea_one(&[0.5, 0.5, 0.5, 0.5]).unwrap(), 0.0);
}

#[test]
fn identical_sbd_nets_predict_zero() {
    let ds = dataset(TwoSided, 100, 8);
    let idx: Vec<usize> = (0..100).collect();
    let cfg = TrainConfig {
        max_epochs: 3,
        ..quick_cfg()
    };
    let mut l = TLearnerSbd::fit(&small_arch(), &ds.subset(&idx[..80]), &ds.subset(&idx[80..]), &cfg).unwrap();
    l.outcome[1] = l.outcome[0].clone();
    assert!(l.predict_catea(&ds.features()).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn constant_continuous_outcome_is_learned_by_every_learner() {
    let mut ds = dataset(TwoSided, 300, 9);
    ds.outcome_kind = OutcomeKind::Continuous;
    for s in &mut ds.samples {
        s.y = 1.5;
    }
    let idx: Vec<usize> = (0..300).collect();
    let (tr, va) = (ds.subset(&idx[..240]), ds.subset(&idx[240..]));
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        max_epochs: 300,
        patience: 30,
        l2_grid: vec![0.0],
        batch_mode: BatchMode::MiniBatch(32),
        ..TrainConfig::default()
    };
    for kind in LearnerKind::ALL {
        let l = Learner::fit(kind, &small_arch(), &tr, &va, &cfg).unwrap();
        let est = l.predict_catea(&va.features()).unwrap();
        let rmse = (est.iter().map(|v| v * v).sum::<f64>() / est.len() as f64).sqrt();
        assert!(rmse < 0.15, "{kind}: {rmse}");
    }
}

#[test]
fn binary_predictions_are_bounded_and_manifests_round_trip() {
    let ds = dataset(TwoSided, 200, 10);
    let idx: Vec<usize> = (0..200).collect();
    let (tr, va) = (ds.subset(&idx[..160]), ds.subset(&idx[160..]));
    for kind in LearnerKind::ALL {
        let l = Learner::fit(kind, &small_arch(), &tr, &va, &quick_cfg()).unwrap();
        let est = l.predict_catea(&ds.features()).unwrap();
        assert!(est.iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = Learner::from_json(&l.to_json().unwrap()).unwrap();
        assert_eq!(back.predict_catea(&ds.features()).unwrap(), est);
        assert_eq!(back.kind(), kind);
        assert!(l.to_json().unwrap().contains(&format!("\"kind\":\"{}\"", kind.name())));
    }
}

#[test]
fn fitting_is_deterministic() {
    let ds = dataset(OneSided, 150, 11);
    let idx: Vec<usize> = (0..150).collect();
    let (tr, va) = (ds.subset(&idx[..120]), ds.subset(&idx[120..]));
    for kind in LearnerKind::ALL {
        let a = Learner::fit(kind, &small_arch(), &tr, &va, &quick_cfg()).unwrap();
        let b = Learner::fit(kind, &small_arch(), &tr, &va, &quick_cfg()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn sigmoid_bias_helper_sanity() {
    assert!((sigmoid((0.3f64 / 0.7).ln()) - 0.3).abs() < 1e-15);
}
