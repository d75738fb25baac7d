//! Scratch probe: per-test attack effectiveness at Blob-900.
use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tst_core::attack::{
    ensemble_attack, AttackPlan, CriterionEnsemble, TestId, WeightStrategy,
};
use tst_core::data::{sample_blob, BlobSpec, Side};
use tst_core::inference::{ensemble_from_tests, FittedKind, FittedTest, InferenceConfig};
use tst_core::location::LocationVariant;
use tst_core::mmd::CriterionConfig;
use tst_core::trainers::{
    blob_finetuned_weights, fit_c2st, fit_locations, fit_mmd_deep, fit_mmd_gaussian, C2stVariant,
    TrainConfig,
};

fn main() {
    let n = 900usize;
    let seed = 0u64;
    let spec = BlobSpec::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let sp_tr = sample_blob(&spec, Side::P, n, &mut rng);
    let sq_tr = sample_blob(&spec, Side::Q, n, &mut rng);

    let mut cfg_g = TrainConfig::new(500, 5e-2, seed);
    cfg_g.batch_size = Some(128);
    let g = fit_mmd_gaussian(&sp_tr, &sq_tr, &cfg_g).unwrap();
    let mut cfg_d = TrainConfig::new(2000, 5e-4, seed);
    cfg_d.batch_size = Some(128);
    let d = fit_mmd_deep(&sp_tr, &sq_tr, &cfg_d).unwrap();
    let mut cfg_c = TrainConfig::new(600, 1e-3, seed);
    cfg_c.batch_size = Some(128);
    let cl = fit_c2st(&sp_tr, &sq_tr, &cfg_c, C2stVariant::Logit).unwrap();
    let cs = fit_c2st(&sp_tr, &sq_tr, &cfg_c, C2stVariant::Sign).unwrap();
    let mut cfg_loc = TrainConfig::new(500, 5e-2, seed);
    cfg_loc.locations = 5;
    let me = fit_locations(&sp_tr, &sq_tr, &cfg_loc, LocationVariant::Me).unwrap();
    let scf = fit_locations(&sp_tr, &sq_tr, &cfg_loc, LocationVariant::Scf).unwrap();
    let crit = CriterionConfig::default();
    let tests = vec![
        FittedTest { id: TestId::MmdD, kind: FittedKind::Mmd { model: d.model, criterion: crit } },
        FittedTest { id: TestId::MmdG, kind: FittedKind::Mmd { model: g.model, criterion: crit } },
        FittedTest { id: TestId::C2stS, kind: FittedKind::Mmd { model: cs.model, criterion: crit } },
        FittedTest { id: TestId::C2stL, kind: FittedKind::Mmd { model: cl.model, criterion: crit } },
        FittedTest { id: TestId::Me, kind: FittedKind::Location { model: me.model } },
        FittedTest { id: TestId::Scf, kind: FittedKind::Location { model: scf.model } },
    ];
    println!("fitted.");

    let mut r = ChaCha8Rng::seed_from_u64(777);
    let sp = sample_blob(&spec, Side::P, n, &mut r);
    let sq = sample_blob(&spec, Side::Q, n, &mut r);
    let inf = InferenceConfig::default();

    // single-test attacks
    for test in &tests {
        let t0 = Instant::now();
        let solo = ensemble_from_tests(std::slice::from_ref(test)).unwrap();
        let mut w = BTreeMap::new();
        w.insert(test.id, 1.0);
        let plan = AttackPlan::new(0.05, 50, WeightStrategy::Fixed(w)).unwrap();
        let (adv, trace) = ensemble_attack(&solo, &plan, &sp, &sq, 1).unwrap();
        let before = test.run(&sp, &sq, &inf).unwrap();
        let after = test.run(&sp, &adv, &inf).unwrap();
        println!(
            "{}: loss {:+.4} -> {:+.4} | stat {:+.5} -> {:+.5} reject {} -> {} ({:?})",
            test.id,
            trace.steps[0].loss,
            trace.best_loss,
            before.statistic,
            after.statistic,
            before.reject,
            after.reject,
            t0.elapsed()
        );
    }

    // full ensemble with Table-7 weights: per-member criterion before/after
    let ens = ensemble_from_tests(&tests).unwrap();
    let plan = AttackPlan::new(0.05, 50, WeightStrategy::Fixed(blob_finetuned_weights())).unwrap();
    let t0 = Instant::now();
    let (adv, trace) = ensemble_attack(&ens, &plan, &sp, &sq, 1).unwrap();
    println!(
        "ensemble: loss {:+.4} -> {:+.4} ({:?})",
        trace.steps[0].loss,
        trace.best_loss,
        t0.elapsed()
    );
    for m in ens.members() {
        let before = m.value(&sp, &sq).unwrap();
        let after = m.value(&sp, &adv).unwrap();
        println!("  {}: criterion {before:+.4} -> {after:+.4}", m.id);
    }
    for test in &tests {
        let before = test.run(&sp, &sq, &inf).unwrap();
        let after = test.run(&sp, &adv, &inf).unwrap();
        println!(
            "  {}: reject {} -> {}",
            test.id, before.reject, after.reject
        );
    }
}
