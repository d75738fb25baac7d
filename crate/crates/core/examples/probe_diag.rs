//! Scratch diagnostics: criterion landscape over the gaussian lengthscale,
//! and train-vs-fresh-pair transfer of each fitted test.
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tst_core::data::{sample_blob, BlobSpec, Side};
use tst_core::inference::{mmd_permutation_test, InferenceConfig};
use tst_core::kernels::KernelModel;
use tst_core::location::{location_statistic, LocationVariant};
use tst_core::mmd::{criterion, CriterionConfig};
use tst_core::attack::TestId;
use tst_core::trainers::{fit_locations, fit_mmd_deep, TrainConfig};

fn main() {
    let spec = BlobSpec::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let sp_tr = sample_blob(&spec, Side::P, 100, &mut rng);
    let sq_tr = sample_blob(&spec, Side::Q, 100, &mut rng);
    let crit = CriterionConfig::default();

    println!("gaussian criterion landscape on the training pair:");
    for sigma in [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0] {
        let m = KernelModel::gaussian(sigma).unwrap();
        let c_tr = criterion(&m, &sp_tr, &sq_tr, &crit).unwrap();
        // average over 5 fresh pairs
        let mut fresh = 0.0;
        for s in 0..5u64 {
            let mut r = ChaCha8Rng::seed_from_u64(50 + s);
            let sp = sample_blob(&spec, Side::P, 100, &mut r);
            let sq = sample_blob(&spec, Side::Q, 100, &mut r);
            fresh += criterion(&m, &sp, &sq, &crit).unwrap() / 5.0;
        }
        println!("  sigma {sigma:>5}: train {c_tr:+.3}  fresh {fresh:+.3}");
    }

    // p-values of the wild-bootstrap test for a good sigma on fresh pairs
    for sigma in [0.05, 0.5] {
        let m = KernelModel::gaussian(sigma).unwrap();
        let mut ps = Vec::new();
        for s in 0..10u64 {
            let mut r = ChaCha8Rng::seed_from_u64(500 + s);
            let sp = sample_blob(&spec, Side::P, 100, &mut r);
            let sq = sample_blob(&spec, Side::Q, 100, &mut r);
            let rep = mmd_permutation_test(
                TestId::MmdG,
                &m,
                &sp,
                &sq,
                &InferenceConfig { seed: s, ..Default::default() },
            )
            .unwrap();
            ps.push(rep.p_value.unwrap());
        }
        println!("sigma {sigma}: fresh-pair p-values {ps:?}");
    }

    // deep kernel transfer
    let cfg_d = TrainConfig::new(2000, 5e-4, 0);
    let d = fit_mmd_deep(&sp_tr, &sq_tr, &cfg_d).unwrap();
    let mut fresh = Vec::new();
    for s in 0..5u64 {
        let mut r = ChaCha8Rng::seed_from_u64(900 + s);
        let sp = sample_blob(&spec, Side::P, 100, &mut r);
        let sq = sample_blob(&spec, Side::Q, 100, &mut r);
        fresh.push(criterion(&d.model, &sp, &sq, &crit).unwrap());
    }
    println!(
        "deep: train criterion {:.3}, fresh {:?}",
        d.final_objective, fresh
    );

    // location transfer
    for variant in [LocationVariant::Me, LocationVariant::Scf] {
        let mut cfg = TrainConfig::new(500, 5e-2, 0);
        cfg.locations = 5;
        let fit = fit_locations(&sp_tr, &sq_tr, &cfg, variant).unwrap();
        let mut fresh = Vec::new();
        for s in 0..5u64 {
            let mut r = ChaCha8Rng::seed_from_u64(900 + s);
            let sp = sample_blob(&spec, Side::P, 100, &mut r);
            let sq = sample_blob(&spec, Side::Q, 100, &mut r);
            fresh.push(location_statistic(&fit.model, &sp, &sq).unwrap());
        }
        println!(
            "{variant:?}: train stat {:.2}, fresh {:?} (reject above chi2(0.95) ~ 11.07/18.3)",
            fit.final_objective, fresh
        );
    }
}
