//! Scratch probe: Type-I calibration of wild-bootstrap variants at Blob-900.
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tst_core::data::{sample_blob, BlobSpec, Side};
use tst_core::inference::wild_bootstrap_sequence;
use tst_core::kernels::KernelModel;
use tst_core::mmd::mmd_u;
use tst_core::ndmath::Matrix;

fn center(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    for x in v {
        *x -= m;
    }
}

fn main() {
    let spec = BlobSpec::standard();
    let n = 900usize;
    let trials = 100;
    let model = KernelModel::gaussian(0.0085).unwrap();
    let mut rej = [0usize; 4]; // two-seq, one-seq-U, one-seq-V, plain-perm
    for s in 0..trials as u64 {
        let mut r = ChaCha8Rng::seed_from_u64(31_000 + s);
        let sp = sample_blob(&spec, Side::P, n, &mut r);
        let sq = sample_blob(&spec, Side::P, n, &mut r);
        let h = model.h_matrix(&sp, &sq).unwrap();
        let est = mmd_u(&h).unwrap();
        let scale = 1.0 / (n * (n - 1)) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(500 + s);
        let mut counts = [0usize; 3];
        for _ in 0..100 {
            let mut wp = wild_bootstrap_sequence(n, 0.5, &mut rng);
            let mut wq = wild_bootstrap_sequence(n, 0.5, &mut rng);
            center(&mut wp);
            center(&mut wq);
            // two independent sequences
            let mut two = 0.0;
            // single sequence (reuse wp), U-form and V-form
            let mut one_u = 0.0;
            let mut one_v = 0.0;
            for i in 0..n {
                let hi = h.row(i);
                let mut acc_q = 0.0;
                let mut acc_p = 0.0;
                for j in 0..n {
                    acc_q += hi[j] * wq[j];
                    acc_p += hi[j] * wp[j];
                }
                two += wp[i] * acc_q;
                one_v += wp[i] * acc_p;
                one_u += wp[i] * (acc_p - hi[i] * wp[i]);
            }
            if two * scale > est {
                counts[0] += 1;
            }
            if one_u * scale > est {
                counts[1] += 1;
            }
            if one_v * scale > est {
                counts[2] += 1;
            }
        }
        for k in 0..3 {
            if counts[k] as f64 / 100.0 <= 0.05 {
                rej[k] += 1;
            }
        }
        // plain permutation, first 25 trials only (H recompute is costly)
        if s >= 25 {
            continue;
        }
        let pooled = sp.vstack(&sq).unwrap();
        let mut idx: Vec<usize> = (0..2 * n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(900_000 + s);
        let mut exceed = 0usize;
        for _ in 0..100 {
            idx.shuffle(&mut rng);
            let a = pooled.select_rows(&idx[..n]);
            let b = pooled.select_rows(&idx[n..]);
            let perm = mmd_u(&model.h_matrix(&a, &b).unwrap()).unwrap();
            if perm > est {
                exceed += 1;
            }
        }
        if exceed as f64 / 100.0 <= 0.05 {
            rej[3] += 1;
        }
    }
    println!(
        "Type-I over {trials} P-vs-P trials at n=900 (alpha 0.05):\n  two-sequence {:.3}\n  one-sequence U {:.3}\n  one-sequence V {:.3}\n  plain permutation {:.3} (25 trials)",
        rej[0] as f64 / trials as f64,
        rej[1] as f64 / trials as f64,
        rej[2] as f64 / trials as f64,
        rej[3] as f64 / 25.0,
    );
}
