//! Randomized property checks of the ensemble attack.

mod common;

use std::collections::BTreeMap;

use common::*;
use tst_core::attack::{
    ensemble_attack, AttackPlan, CriterionEnsemble, CriterionKind, EnsembleMember, TestId,
    WeightStrategy,
};
use tst_core::kernels::KernelModel;
use tst_core::location::LocationTestModel;
use tst_core::mmd::CriterionConfig;

#[test]
fn attack_invariants_hold_over_randomized_runs() {
    let outcome = attack_property_stats(100, 9000);
    assert!(
        outcome.max_ball_violation <= 1e-12,
        "ball violation {}",
        outcome.max_ball_violation
    );
    assert!(outcome.best_iterate_ok, "best-iterate dominance violated");
    assert!(outcome.halving_ok, "rho changed outside a checkpoint");
    assert!(outcome.degenerate_bitwise_ok, "degenerate ensemble diverged");
}

#[test]
fn attack_is_deterministic() {
    let ens = CriterionEnsemble::new(vec![EnsembleMember {
        id: TestId::MmdG,
        kind: CriterionKind::Mmd {
            model: KernelModel::gaussian(0.6).unwrap(),
            cfg: CriterionConfig::default(),
        },
    }])
    .unwrap();
    let plan = AttackPlan::new(0.08, 30, WeightStrategy::Uniform).unwrap();
    let sp = random_matrix(10, 2, 1);
    let sq = random_matrix(10, 2, 2);
    let (a, ta) = ensemble_attack(&ens, &plan, &sp, &sq, 7).unwrap();
    let (b, tb) = ensemble_attack(&ens, &plan, &sp, &sq, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        serde_json::to_string(&ta).unwrap(),
        serde_json::to_string(&tb).unwrap()
    );
}

/// A full six-member ensemble (all four kernels plus ME and SCF) drives the
/// joint loss below its starting value on a separated pair.
#[test]
fn full_ensemble_attack_reduces_the_joint_loss() {
    let d = 2;
    let mk_mmd = |id, model| EnsembleMember {
        id,
        kind: CriterionKind::Mmd {
            model,
            cfg: CriterionConfig::default(),
        },
    };
    let mk_loc = |id, model: LocationTestModel| EnsembleMember {
        id,
        kind: CriterionKind::Location { model },
    };
    let members = vec![
        mk_mmd(TestId::MmdD, deep_model(d, 11)),
        mk_mmd(TestId::MmdG, gaussian_model(12)),
        mk_mmd(TestId::C2stS, c2st_model(d, 13, true)),
        mk_mmd(TestId::C2stL, c2st_model(d, 14, false)),
        mk_loc(TestId::Me, me_model(d, 3, 15)),
        mk_loc(TestId::Scf, scf_model(d, 3, 16)),
    ];
    let ens = CriterionEnsemble::new(members).unwrap();
    let plan = AttackPlan::new(0.1, 25, WeightStrategy::Uniform).unwrap();
    let sp = random_matrix(12, d, 17);
    let mut sq = random_matrix(12, d, 18);
    for v in sq.data_mut() {
        *v += 1.0;
    }
    let (_, trace) = ensemble_attack(&ens, &plan, &sp, &sq, 19).unwrap();
    assert!(
        trace.best_loss < trace.steps[0].loss,
        "no progress: {} -> {}",
        trace.steps[0].loss,
        trace.best_loss
    );
}

/// Automatic weights re-softmax the criteria each step; the attack still
/// respects the ball and cannot end above the start.
#[test]
fn automatic_weights_preserve_attack_invariants() {
    let members = vec![
        EnsembleMember {
            id: TestId::MmdG,
            kind: CriterionKind::Mmd {
                model: KernelModel::gaussian(0.4).unwrap(),
                cfg: CriterionConfig::default(),
            },
        },
        EnsembleMember {
            id: TestId::MmdD,
            kind: CriterionKind::Mmd {
                model: gaussian_like_deep(),
                cfg: CriterionConfig::default(),
            },
        },
    ];
    let ens = CriterionEnsemble::new(members).unwrap();
    let plan = AttackPlan::new(0.07, 20, WeightStrategy::Automatic).unwrap();
    let sp = random_matrix(9, 2, 21);
    let mut sq = random_matrix(9, 2, 22);
    for v in sq.data_mut() {
        *v += 0.8;
    }
    let (best, _) = ensemble_attack(&ens, &plan, &sp, &sq, 23).unwrap();
    let viol = best
        .data()
        .iter()
        .zip(sq.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(viol <= 0.07 + 1e-12);
}

fn gaussian_like_deep() -> KernelModel {
    deep_model(2, 29)
}

/// Fixed weights that do not sum to one are rejected before any compute runs.
#[test]
fn malformed_weight_sets_are_rejected() {
    let mut w = BTreeMap::new();
    w.insert(TestId::MmdG, 0.3);
    w.insert(TestId::Me, 0.3);
    assert!(AttackPlan::new(0.1, 10, WeightStrategy::Fixed(w)).is_err());
}
