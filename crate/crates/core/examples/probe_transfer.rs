//! Scratch probe: transfer matrix of single-test attacks at Blob-900.
use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tst_core::attack::{ensemble_attack, AttackPlan, TestId, WeightStrategy};
use tst_core::data::{sample_blob, BlobSpec, Side};
use tst_core::inference::{ensemble_from_tests, FittedKind, FittedTest, InferenceConfig};
use tst_core::location::LocationVariant;
use tst_core::mmd::CriterionConfig;
use tst_core::trainers::{
    fit_c2st, fit_locations, fit_mmd_deep, fit_mmd_gaussian, C2stVariant, TrainConfig,
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
    println!("fitted. rows: attacked test; columns: rejection of each test on that adversarial pair");

    let mut r = ChaCha8Rng::seed_from_u64(777);
    let sp = sample_blob(&spec, Side::P, n, &mut r);
    let sq = sample_blob(&spec, Side::Q, n, &mut r);
    let inf = InferenceConfig::default();

    print!("{:>8}", "");
    for t in &tests {
        print!("{:>8}", t.id.to_string());
    }
    println!();
    for source in &tests {
        let solo = ensemble_from_tests(std::slice::from_ref(source)).unwrap();
        let mut w = BTreeMap::new();
        w.insert(source.id, 1.0);
        let plan = AttackPlan::new(0.05, 50, WeightStrategy::Fixed(w)).unwrap();
        let (adv, _) = ensemble_attack(&solo, &plan, &sp, &sq, 1).unwrap();
        print!("{:>8}", source.id.to_string());
        for target in &tests {
            let rep = target.run(&sp, &adv, &inf).unwrap();
            print!("{:>8}", if rep.reject { "X" } else { "." });
        }
        println!();
    }
}
