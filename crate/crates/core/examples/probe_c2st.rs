//! Scratch probe for C2ST training budgets (not part of the test suite).
use tst_core::data::{sample_blob, BlobSpec, Side};
use tst_core::trainers::{c2st_accuracy, fit_c2st, C2stVariant, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let spec = BlobSpec::standard();
    for (epochs, lr, widths, bs) in [
        (1500usize, 2e-3, vec![50usize; 5], Some(128usize)),
        (2000, 2e-3, vec![50; 5], Some(128)),
        (1500, 2e-3, vec![50, 50, 50], Some(128)),
        (2500, 2e-3, vec![50, 50, 50], Some(128)),
    ] {
        let mut accs = Vec::new();
        let t0 = std::time::Instant::now();
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let sp = sample_blob(&spec, Side::P, 100, &mut rng);
            let sq = sample_blob(&spec, Side::Q, 100, &mut rng);
            let mut cfg = TrainConfig::new(epochs, lr, seed);
            cfg.phi_widths = widths.clone();
            cfg.batch_size = bs;
            let fit = fit_c2st(&sp, &sq, &cfg, C2stVariant::Logit).unwrap();
            let mut rng2 = ChaCha8Rng::seed_from_u64(999 + seed);
            let hp = sample_blob(&spec, Side::P, 1000, &mut rng2);
            let hq = sample_blob(&spec, Side::Q, 1000, &mut rng2);
            accs.push(c2st_accuracy(&fit.model, &hp, &hq).unwrap());
        }
        println!(
            "epochs={epochs} lr={lr} widths={widths:?} bs={bs:?} accs={accs:?} elapsed={:?}",
            t0.elapsed()
        );
    }
}
