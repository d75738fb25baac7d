//! Shared helpers for the integration suites: independent reference
//! evaluators, finite-difference oracles, and the randomized attack-property
//! harness. Everything here is deliberately written as plain loops, separate
//! from the library's computation paths.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tst_core::attack::{
    ensemble_attack, ensemble_attack_recorded, AttackPlan, CriterionEnsemble, CriterionKind,
    EnsembleMember, TestId, WeightStrategy,
};
use tst_core::kernels::KernelModel;
use tst_core::location::{LocationTestModel, LocationVariant};
use tst_core::mmd::CriterionConfig;
use tst_core::ndmath::{Matrix, MlpParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = r.gen_range(-1.5..1.5);
    }
    m
}

// ---------------------------------------------------------------------------
// Reference evaluators (brute force, independent of the library paths)
// ---------------------------------------------------------------------------

/// U-statistic by explicit double loop.
pub fn ref_mmd_u(h: &Matrix) -> f64 {
    let n = h.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += h.get(i, j);
            }
        }
    }
    acc / (n as f64 * (n as f64 - 1.0))
}

/// Variance estimator by explicit summation.
pub fn ref_variance(h: &Matrix, lambda: f64) -> f64 {
    let n = h.rows();
    let nf = n as f64;
    let mut sum_sq = 0.0;
    for i in 0..n {
        let mut r = 0.0;
        for j in 0..n {
            r += h.get(i, j);
        }
        sum_sq += r * r;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += h.get(i, j);
        }
    }
    4.0 / (nf * nf * nf) * sum_sq - 4.0 / (nf * nf * nf * nf) * total * total + lambda
}

/// H matrix assembled entry by entry from pointwise kernel evaluations.
pub fn ref_h_matrix(model: &KernelModel, sp: &Matrix, sq: &Matrix) -> Matrix {
    let n = sp.rows();
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = model.eval(sp.row(i), sp.row(j)).unwrap()
                + model.eval(sq.row(i), sq.row(j)).unwrap()
                - model.eval(sp.row(i), sq.row(j)).unwrap()
                - model.eval(sp.row(j), sq.row(i)).unwrap();
            h.set(i, j, v);
        }
    }
    h
}

/// Gauss-Jordan inverse of a small symmetric matrix.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = a.len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..k).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..k {
        // partial pivot
        let pivot = (col..k)
            .max_by(|&i, &j| aug[i][col].abs().partial_cmp(&aug[j][col].abs()).unwrap())
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        assert!(p.abs() > 0.0, "singular matrix in reference inverse");
        for v in &mut aug[col] {
            *v /= p;
        }
        for row in 0..k {
            if row != col {
                let f = aug[row][col];
                if f != 0.0 {
                    for j in 0..2 * k {
                        aug[row][j] -= f * aug[col][j];
                    }
                }
            }
        }
    }
    aug.into_iter().map(|r| r[k..].to_vec()).collect()
}

/// Location statistic via explicit covariance assembly and Gauss-Jordan
/// inversion, following the display `D = n zbar^T S_n^{-1} zbar` directly.
pub fn ref_location_statistic(model: &LocationTestModel, sp: &Matrix, sq: &Matrix) -> f64 {
    let n = sp.rows();
    let k = model.feature_dim();
    let g = model.location_count() as f64;
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let fx = model.features(sp.row(i)).unwrap();
        let fy = model.features(sq.row(i)).unwrap();
        z.push(fx.iter().zip(&fy).map(|(a, b)| a - b).collect());
    }
    let mut zbar = vec![0.0; k];
    for zi in &z {
        for (t, v) in zi.iter().enumerate() {
            zbar[t] += v / n as f64;
        }
    }
    let mut cov = vec![vec![0.0; k]; k];
    for zi in &z {
        for a in 0..k {
            for b in 0..k {
                cov[a][b] += (zi[a] - zbar[a]) * (zi[b] - zbar[b]) / (n as f64 - 1.0);
            }
        }
    }
    let trace: f64 = (0..k).map(|t| cov[t][t]).sum();
    let ridge = if trace > 0.0 {
        model.ridge * trace / g
    } else {
        model.ridge
    };
    for (t, row) in cov.iter_mut().enumerate() {
        row[t] += ridge;
    }
    let inv = gauss_jordan_inverse(&cov);
    let mut quad = 0.0;
    for a in 0..k {
        for b in 0..k {
            quad += zbar[a] * inv[a][b] * zbar[b];
        }
    }
    n as f64 * quad
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

pub const FD_STEP: f64 = 1e-4;

/// Central finite differences of a scalar function of a matrix.
pub fn central_diff_matrix<F: FnMut(&Matrix) -> f64>(mut f: F, x: &Matrix, h: f64) -> Matrix {
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let orig = probe.get(i, j);
            probe.set(i, j, orig + h);
            let plus = f(&probe);
            probe.set(i, j, orig - h);
            let minus = f(&probe);
            probe.set(i, j, orig);
            grad.set(i, j, (plus - minus) / (2.0 * h));
        }
    }
    grad
}

/// Central finite differences of a scalar function of a flat vector.
pub fn central_diff_vec<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Asserts elementwise agreement at relative tolerance `tol` with a small
/// absolute guard for entries that are genuinely zero.
pub fn assert_close_matrices(analytic: &Matrix, fd: &Matrix, tol: f64, what: &str) {
    for i in 0..analytic.rows() {
        for j in 0..analytic.cols() {
            let a = analytic.get(i, j);
            let b = fd.get(i, j);
            let denom = a.abs().max(b.abs());
            assert!(
                (a - b).abs() <= tol * denom + 1e-8,
                "{what} at ({i},{j}): analytic {a} vs fd {b}"
            );
        }
    }
}

pub fn assert_close_slices(analytic: &[f64], fd: &[f64], tol: f64, what: &str) {
    assert_eq!(analytic.len(), fd.len(), "{what}: length mismatch");
    for (i, (a, b)) in analytic.iter().zip(fd).enumerate() {
        let denom = a.abs().max(b.abs());
        assert!(
            (a - b).abs() <= tol * denom + 1e-8,
            "{what} at {i}: analytic {a} vs fd {b}"
        );
    }
}

// ---------------------------------------------------------------------------
// Model zoo for gradient checks
// ---------------------------------------------------------------------------

pub fn gaussian_model(seed: u64) -> KernelModel {
    let mut r = rng(seed);
    KernelModel::gaussian(r.gen_range(0.3..2.0)).unwrap()
}

pub fn deep_model(dim: usize, seed: u64) -> KernelModel {
    let mut r = rng(seed);
    let net = MlpParams::new(&[dim, 6, 4], &mut r).unwrap();
    KernelModel::deep(
        r.gen_range(0.2..0.8),
        r.gen_range(0.5..1.5),
        r.gen_range(0.5..1.5),
        net,
    )
    .unwrap()
}

pub fn c2st_model(dim: usize, seed: u64, sign: bool) -> KernelModel {
    let mut r = rng(seed);
    let net = MlpParams::new(&[dim, 6, 1], &mut r).unwrap();
    if sign {
        KernelModel::C2stSign { net }
    } else {
        KernelModel::C2stLogit { net }
    }
}

pub fn me_model(dim: usize, g: usize, seed: u64) -> LocationTestModel {
    LocationTestModel::new(
        LocationVariant::Me,
        random_matrix(g, dim, seed),
        0.7,
        1e-5,
    )
    .unwrap()
}

pub fn scf_model(dim: usize, g: usize, seed: u64) -> LocationTestModel {
    LocationTestModel::new(
        LocationVariant::Scf,
        random_matrix(g, dim, seed),
        1.3,
        1e-5,
    )
    .unwrap()
}

/// Smallest |score| of a classifier kernel over both sample sets; used to
/// reject finite-difference instances where the smoothed sign would flip
/// inside the probe step.
pub fn min_abs_score(model: &KernelModel, sp: &Matrix, sq: &Matrix) -> f64 {
    let net = match model {
        KernelModel::C2stSign { net } | KernelModel::C2stLogit { net } => net,
        _ => return f64::INFINITY,
    };
    let a = net.forward(sp).unwrap();
    let b = net.forward(sq).unwrap();
    a.data()
        .iter()
        .chain(b.data())
        .map(|v| v.abs())
        .fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------------------
// Attack property harness (shared by the property suite and acceptance gate)
// ---------------------------------------------------------------------------

pub struct AttackPropertyOutcome {
    pub runs: usize,
    pub max_ball_violation: f64,
    pub best_iterate_ok: bool,
    pub halving_ok: bool,
    pub degenerate_bitwise_ok: bool,
}

/// Runs `runs` randomized small attacks and checks the spec's attack
/// invariants: ball containment of every visited iterate, best-iterate
/// dominance, halving-only-at-checkpoints, and bitwise equivalence of a
/// zero-padded two-member ensemble with the single-member attack.
pub fn attack_property_stats(runs: usize, base_seed: u64) -> AttackPropertyOutcome {
    let mut max_violation = 0.0f64;
    let mut best_ok = true;
    let mut halving_ok = true;
    let mut degenerate_ok = true;
    for run in 0..runs {
        let seed = base_seed + run as u64;
        let mut r = rng(seed);
        let n = r.gen_range(4..9);
        let d = r.gen_range(1..4);
        let eps = r.gen_range(0.01..0.3);
        let steps = r.gen_range(3..20);
        let sp = random_matrix(n, d, seed.wrapping_mul(31).wrapping_add(1));
        let mut sq = random_matrix(n, d, seed.wrapping_mul(31).wrapping_add(2));
        for v in sq.data_mut() {
            *v += 0.5;
        }
        let member = EnsembleMember {
            id: TestId::MmdG,
            kind: CriterionKind::Mmd {
                model: KernelModel::gaussian(r.gen_range(0.3..1.5)).unwrap(),
                cfg: CriterionConfig::default(),
            },
        };
        let extra = EnsembleMember {
            id: TestId::MmdD,
            kind: CriterionKind::Mmd {
                model: KernelModel::gaussian(r.gen_range(0.3..1.5)).unwrap(),
                cfg: CriterionConfig::default(),
            },
        };
        let solo = CriterionEnsemble::new(vec![member.clone()]).unwrap();
        let mut solo_w = BTreeMap::new();
        solo_w.insert(TestId::MmdG, 1.0);
        let plan = AttackPlan::new(eps, steps, WeightStrategy::Fixed(solo_w)).unwrap();

        let (best, trace, iterates) =
            ensemble_attack_recorded(&solo, &plan, &sp, &sq, seed).unwrap();

        // ball containment over every visited iterate and the returned set
        for it in iterates.iter().chain(std::iter::once(&best)) {
            let viol = it
                .data()
                .iter()
                .zip(sq.data())
                .map(|(a, b)| (a - b).abs() - eps)
                .fold(f64::NEG_INFINITY, f64::max);
            max_violation = max_violation.max(viol);
        }

        // best-iterate dominance (the restart rewrites trace losses to the
        // running minimum, so every recorded loss bounds best_loss)
        if trace.steps.iter().any(|s| trace.best_loss > s.loss + 1e-12) {
            best_ok = false;
        }

        // rho halves exactly at checkpoints and never elsewhere
        for w in trace.steps.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.halved {
                if b.rho != a.rho / 2.0 || !plan.checkpoints.contains(&(b.step - 1)) {
                    halving_ok = false;
                }
            } else if b.rho != a.rho {
                halving_ok = false;
            }
        }

        // degenerate ensemble: zero-weight member changes nothing, bitwise
        let duo = CriterionEnsemble::new(vec![member, extra]).unwrap();
        let mut duo_w = BTreeMap::new();
        duo_w.insert(TestId::MmdG, 1.0);
        duo_w.insert(TestId::MmdD, 0.0);
        let plan_duo = AttackPlan::new(eps, steps, WeightStrategy::Fixed(duo_w)).unwrap();
        let (best_duo, trace_duo) = ensemble_attack(&duo, &plan_duo, &sp, &sq, seed).unwrap();
        if best_duo != best {
            degenerate_ok = false;
        }
        for (x, y) in trace.steps.iter().zip(&trace_duo.steps) {
            if x.loss != y.loss || x.rho != y.rho || x.halved != y.halved {
                degenerate_ok = false;
            }
        }
    }
    AttackPropertyOutcome {
        runs,
        max_ball_violation: max_violation,
        best_iterate_ok: best_ok,
        halving_ok,
        degenerate_bitwise_ok: degenerate_ok,
    }
}
