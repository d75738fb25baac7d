//! Scratch probe: Blob pipeline with per-mode sample counts (900 rows/side).
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
    blob_finetuned_weights, c2st_accuracy, fit_c2st, fit_locations, fit_mmd_deep,
    fit_mmd_gaussian, C2stVariant, TrainConfig,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let pairs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(30);
    let attacked_pairs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(10);
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0);
    let n = 900usize;

    let spec = BlobSpec::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let sp_tr = sample_blob(&spec, Side::P, n, &mut rng);
    let sq_tr = sample_blob(&spec, Side::Q, n, &mut rng);

    let t0 = Instant::now();
    let mut cfg_g = TrainConfig::new(500, 5e-2, seed);
    cfg_g.batch_size = Some(128);
    let g = fit_mmd_gaussian(&sp_tr, &sq_tr, &cfg_g).unwrap();
    println!(
        "MMD-G: sigma {:.4} fresh-ish criterion {:.3} -> {:.3} ({:?})",
        g.model.sigma_phi().unwrap(),
        g.initial_objective,
        g.final_objective,
        t0.elapsed()
    );

    let t0 = Instant::now();
    let mut cfg_d = TrainConfig::new(2000, 5e-4, seed);
    cfg_d.batch_size = Some(128);
    let d = fit_mmd_deep(&sp_tr, &sq_tr, &cfg_d).unwrap();
    println!(
        "MMD-D: gamma {:.3} criterion {:.3} -> {:.3} ({:?})",
        d.model.gamma().unwrap(),
        d.initial_objective,
        d.final_objective,
        t0.elapsed()
    );

    let t0 = Instant::now();
    let mut cfg_c = TrainConfig::new(600, 1e-3, seed);
    cfg_c.batch_size = Some(128);
    let cl = fit_c2st(&sp_tr, &sq_tr, &cfg_c, C2stVariant::Logit).unwrap();
    let cs = fit_c2st(&sp_tr, &sq_tr, &cfg_c, C2stVariant::Sign).unwrap();
    println!(
        "C2ST: train acc {:.3} ({:?})",
        c2st_accuracy(&cl.model, &sp_tr, &sq_tr).unwrap(),
        t0.elapsed()
    );

    let t0 = Instant::now();
    let mut cfg_loc = TrainConfig::new(500, 5e-2, seed);
    cfg_loc.locations = 5;
    let me = fit_locations(&sp_tr, &sq_tr, &cfg_loc, LocationVariant::Me).unwrap();
    let scf = fit_locations(&sp_tr, &sq_tr, &cfg_loc, LocationVariant::Scf).unwrap();
    println!(
        "ME: {:.2} -> {:.2}; SCF: {:.2} -> {:.2} ({:?})",
        me.initial_objective, me.final_objective, scf.initial_objective, scf.final_objective,
        t0.elapsed()
    );

    let crit = CriterionConfig::default();
    let tests = vec![
        FittedTest { id: TestId::MmdD, kind: FittedKind::Mmd { model: d.model, criterion: crit } },
        FittedTest { id: TestId::MmdG, kind: FittedKind::Mmd { model: g.model, criterion: crit } },
        FittedTest { id: TestId::C2stS, kind: FittedKind::Mmd { model: cs.model, criterion: crit } },
        FittedTest { id: TestId::C2stL, kind: FittedKind::Mmd { model: cl.model, criterion: crit } },
        FittedTest { id: TestId::Me, kind: FittedKind::Location { model: me.model } },
        FittedTest { id: TestId::Scf, kind: FittedKind::Location { model: scf.model } },
    ];

    let sampler = PairSampler::Blob(spec);
    let inf = InferenceConfig::default();

    let t0 = Instant::now();
    let type1 =
        evaluate_power(&tests, &sampler, 100, 100, true, &inf, None, 420 + seed).unwrap();
    println!("Type-I at n=100/side (100 trials, {:?}):", t0.elapsed());
    for (id, r) in &type1.per_test {
        print!("  {id} {r:.3}");
    }
    println!();

    let t0 = Instant::now();
    let benign =
        evaluate_power(&tests, &sampler, n, pairs, false, &inf, None, 430 + seed).unwrap();
    println!("Benign power at n=900 ({pairs} pairs, {:?}):", t0.elapsed());
    for (id, r) in &benign.per_test {
        print!("  {id} {r:.3}");
    }
    println!("  ensemble {:.3}", benign.ensemble_rate);

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
        430 + seed,
    )
    .unwrap();
    println!(
        "Attacked power at n=900 ({attacked_pairs} pairs, {:?}):",
        t0.elapsed()
    );
    for (id, r) in &attacked.per_test {
        print!("  {id} {r:.3}");
    }
    println!("  ensemble {:.3}", attacked.ensemble_rate);
}
