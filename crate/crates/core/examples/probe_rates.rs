//! Scratch probe: finetune-EA attacked rates and Type-I at Blob-900 via the
//! parallel power harness.
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tst_core::attack::{AttackPlan, TestId, WeightStrategy};
use tst_core::data::{sample_blob, BlobSpec, PairSampler, Side};
use tst_core::inference::{
    ensemble_from_tests, evaluate_power, FittedKind, FittedTest, InferenceConfig,
};
use tst_core::location::LocationVariant;
use tst_core::mmd::CriterionConfig;
use tst_core::trainers::{
    blob_finetuned_weights, fit_c2st, fit_locations, fit_mmd_deep, fit_mmd_gaussian, C2stVariant,
    TrainConfig,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let attacked_pairs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(12);
    let type1_trials: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(100);

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
    let sampler = PairSampler::Blob(spec);
    let inf = InferenceConfig::default();

    let t0 = Instant::now();
    let type1 =
        evaluate_power(&tests, &sampler, n, type1_trials, true, &inf, None, 42).unwrap();
    print!("Type-I at n=900 ({type1_trials} trials, {:?}): ", t0.elapsed());
    for (id, r) in &type1.per_test {
        print!("{id}={r:.3} ");
    }
    println!();

    let t0 = Instant::now();
    let ens = ensemble_from_tests(&tests).unwrap();
    let plan =
        AttackPlan::new(0.05, 50, WeightStrategy::Fixed(blob_finetuned_weights())).unwrap();
    let attacked = evaluate_power(
        &tests,
        &sampler,
        n,
        attacked_pairs,
        false,
        &inf,
        Some((&ens, &plan)),
        43,
    )
    .unwrap();
    print!(
        "Attacked ({attacked_pairs} pairs, {:?}): ",
        t0.elapsed()
    );
    for (id, r) in &attacked.per_test {
        print!("{id}={r:.3} ");
    }
    println!("ens={:.3}", attacked.ensemble_rate);
}
