//! Scratch probe: EA weight strategies and classifier strength, multi-pair.
use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tst_core::attack::{ensemble_attack, AttackPlan, TestId, WeightStrategy};
use tst_core::data::{sample_blob, BlobSpec, Side};
use tst_core::inference::{ensemble_from_tests, FittedKind, FittedTest, InferenceConfig};
use tst_core::location::LocationVariant;
use tst_core::mmd::CriterionConfig;
use tst_core::trainers::{
    blob_finetuned_weights, c2st_accuracy, fit_c2st, fit_locations, fit_mmd_deep,
    fit_mmd_gaussian, C2stVariant, TrainConfig,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let c2st_epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(600);
    let pairs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(4);

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
    let mut cfg_c = TrainConfig::new(c2st_epochs, 1e-3, seed);
    cfg_c.batch_size = Some(128);
    let cl = fit_c2st(&sp_tr, &sq_tr, &cfg_c, C2stVariant::Logit).unwrap();
    let cs = fit_c2st(&sp_tr, &sq_tr, &cfg_c, C2stVariant::Sign).unwrap();
    println!(
        "c2st {} epochs: train acc {:.3}",
        c2st_epochs,
        c2st_accuracy(&cl.model, &sp_tr, &sq_tr).unwrap()
    );
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
    let ens = ensemble_from_tests(&tests).unwrap();
    let inf = InferenceConfig::default();

    // step-0 gradient scales per member on one pair
    let mut r = ChaCha8Rng::seed_from_u64(777);
    let sp = sample_blob(&spec, Side::P, n, &mut r);
    let sq = sample_blob(&spec, Side::Q, n, &mut r);
    println!("per-member |grad|_mean at step 0:");
    for m in ens.members() {
        let (v, gr) = m.value_and_input_grad(&sp, &sq).unwrap();
        let mean_abs = gr.data().iter().map(|x| x.abs()).sum::<f64>() / gr.data().len() as f64;
        println!("  {}: value {v:+.4} mean|grad| {mean_abs:.5}", m.id);
    }

    for (name, strategy) in [
        ("finetune", WeightStrategy::Fixed(blob_finetuned_weights())),
        ("naive", WeightStrategy::Uniform),
        ("auto", WeightStrategy::Automatic),
    ] {
        let plan = AttackPlan::new(0.05, 50, strategy).unwrap();
        let mut counts: BTreeMap<TestId, usize> = BTreeMap::new();
        let mut all_fooled = 0usize;
        for k in 0..pairs {
            let mut r = ChaCha8Rng::seed_from_u64(700 + k as u64);
            let sp = sample_blob(&spec, Side::P, n, &mut r);
            let sq = sample_blob(&spec, Side::Q, n, &mut r);
            let (adv, _) = ensemble_attack(&ens, &plan, &sp, &sq, k as u64).unwrap();
            let mut any = false;
            for t in &tests {
                let rep = t.run(&sp, &adv, &inf).unwrap();
                if rep.reject {
                    *counts.entry(t.id).or_default() += 1;
                    any = true;
                }
            }
            if !any {
                all_fooled += 1;
            }
        }
        print!("{name}: rejects/pairs ");
        for t in &tests {
            print!("{}={}/{pairs} ", t.id, counts.get(&t.id).copied().unwrap_or(0));
        }
        println!("| fully fooled {all_fooled}/{pairs}");
    }
}
