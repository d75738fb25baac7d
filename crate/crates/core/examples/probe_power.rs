//! Scratch probe: end-to-end Blob pipeline at desk scale. Fits all six tests,
//! then measures Type-I error, benign power, and attacked power.
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tst_core::attack::{AttackPlan, TestId, WeightStrategy};
use tst_core::data::{sample_blob, BlobSpec, PairSampler, Side};
use tst_core::inference::{ensemble_from_tests, evaluate_power, FittedKind, FittedTest, InferenceConfig};
use tst_core::location::LocationVariant;
use tst_core::mmd::CriterionConfig;
use tst_core::trainers::{
    blob_finetuned_weights, c2st_accuracy, fit_c2st, fit_locations, fit_mmd_deep,
    fit_mmd_gaussian, C2stVariant, TrainConfig,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let trials: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(50);
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0);

    let spec = BlobSpec::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let n_tr = 100;
    let sp_tr = sample_blob(&spec, Side::P, n_tr, &mut rng);
    let sq_tr = sample_blob(&spec, Side::Q, n_tr, &mut rng);

    let t0 = Instant::now();
    let mut cfg_g = TrainConfig::new(2000, 5e-4, seed);
    cfg_g.learning_rate = 0.05;
    cfg_g.epochs = 500;
    let g = fit_mmd_gaussian(&sp_tr, &sq_tr, &cfg_g).unwrap();
    println!(
        "MMD-G: sigma {:.4} criterion {:.3} -> {:.3} ({:?})",
        g.model.sigma_phi().unwrap(),
        g.initial_objective,
        g.final_objective,
        t0.elapsed()
    );

    let t0 = Instant::now();
    let cfg_d = TrainConfig::new(2000, 5e-4, seed);
    let d = fit_mmd_deep(&sp_tr, &sq_tr, &cfg_d).unwrap();
    println!(
        "MMD-D: gamma {:.3} criterion {:.3} -> {:.3} ({:?})",
        d.model.gamma().unwrap(),
        d.initial_objective,
        d.final_objective,
        t0.elapsed()
    );

    let t0 = Instant::now();
    let mut cfg_c = TrainConfig::new(3000, 1e-3, seed);
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
        me.initial_objective,
        me.final_objective,
        scf.initial_objective,
        scf.final_objective,
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
    let type1 = evaluate_power(&tests, &sampler, 100, trials, true, &inf, None, 42 + seed).unwrap();
    println!("Type-I ({trials} trials, {:?}):", t0.elapsed());
    for (id, r) in &type1.per_test {
        println!("  {id}: {r:.3}");
    }

    let t0 = Instant::now();
    let benign = evaluate_power(&tests, &sampler, 100, trials, false, &inf, None, 43 + seed).unwrap();
    println!("Benign power ({trials} pairs, {:?}):", t0.elapsed());
    for (id, r) in &benign.per_test {
        println!("  {id}: {r:.3}");
    }
    println!("  ensemble: {:.3}", benign.ensemble_rate);

    let t0 = Instant::now();
    let ens = ensemble_from_tests(&tests).unwrap();
    let plan = AttackPlan::new(0.05, 50, WeightStrategy::Fixed(blob_finetuned_weights())).unwrap();
    let attacked =
        evaluate_power(&tests, &sampler, 100, trials, false, &inf, Some((&ens, &plan)), 43 + seed)
            .unwrap();
    println!("Attacked power ({trials} pairs, {:?}):", t0.elapsed());
    for (id, r) in &attacked.per_test {
        println!("  {id}: {r:.3}");
    }
    println!("  ensemble: {:.3}", attacked.ensemble_rate);
}
