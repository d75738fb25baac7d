//! Scratch probe: raw MMD estimates vs wild-bootstrap null quantiles across
//! sample sizes, plus a plain label-permutation comparison.
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tst_core::data::{sample_blob, BlobSpec, Side};
use tst_core::inference::{mmd_permutation_test, wild_bootstrap_sequence, InferenceConfig};
use tst_core::kernels::KernelModel;
use tst_core::mmd::mmd_u;
use tst_core::ndmath::Matrix;
use tst_core::attack::TestId;

fn plain_permutation_p(model: &KernelModel, sp: &Matrix, sq: &Matrix, seed: u64) -> f64 {
    let n = sp.rows();
    let est = mmd_u(&model.h_matrix(sp, sq).unwrap()).unwrap();
    let pooled = sp.vstack(sq).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..2 * n).collect();
    let mut exceed = 0;
    let n_perm = 100;
    for _ in 0..n_perm {
        idx.shuffle(&mut rng);
        let a = pooled.select_rows(&idx[..n]);
        let b = pooled.select_rows(&idx[n..]);
        let perm = mmd_u(&model.h_matrix(&a, &b).unwrap()).unwrap();
        if perm > est {
            exceed += 1;
        }
    }
    exceed as f64 / n_perm as f64
}

fn main() {
    let spec = BlobSpec::standard();
    let model = KernelModel::gaussian(0.02).unwrap();
    for n in [100usize, 300, 900] {
        let mut ests = Vec::new();
        let mut q95s = Vec::new();
        let mut rejects_wb = 0;
        let mut rejects_plain = 0;
        let trials = 20;
        for s in 0..trials {
            let mut r = ChaCha8Rng::seed_from_u64(7000 + s);
            let sp = sample_blob(&spec, Side::P, n, &mut r);
            let sq = sample_blob(&spec, Side::Q, n, &mut r);
            let h = model.h_matrix(&sp, &sq).unwrap();
            let est = mmd_u(&h).unwrap();
            ests.push(est);
            // wild bootstrap null quantile
            let mut rr = ChaCha8Rng::seed_from_u64(100 + s);
            let mut perms = Vec::new();
            for _ in 0..100 {
                let mut wp = wild_bootstrap_sequence(n, 0.5, &mut rr);
                let mut wq = wild_bootstrap_sequence(n, 0.5, &mut rr);
                let mp = wp.iter().sum::<f64>() / n as f64;
                let mq = wq.iter().sum::<f64>() / n as f64;
                for v in &mut wp {
                    *v -= mp;
                }
                for v in &mut wq {
                    *v -= mq;
                }
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        acc += h.get(i, j) * wp[i] * wq[j];
                    }
                }
                perms.push(acc / (n * (n - 1)) as f64);
            }
            perms.sort_by(|a, b| a.partial_cmp(b).unwrap());
            q95s.push(perms[94]);
            let rep = mmd_permutation_test(
                TestId::MmdG,
                &model,
                &sp,
                &sq,
                &InferenceConfig { seed: 10 + s, ..Default::default() },
            )
            .unwrap();
            if rep.reject {
                rejects_wb += 1;
            }
            if n <= 300 && plain_permutation_p(&model, &sp, &sq, 20 + s) <= 0.05 {
                rejects_plain += 1;
            }
        }
        let mean_est = ests.iter().sum::<f64>() / ests.len() as f64;
        let mean_q = q95s.iter().sum::<f64>() / q95s.len() as f64;
        println!(
            "n={n}: mean est {mean_est:.5}, mean wb q95 {mean_q:.5}, wb power {:.2}, plain power {:.2}",
            rejects_wb as f64 / trials as f64,
            rejects_plain as f64 / trials as f64,
        );
    }
}
