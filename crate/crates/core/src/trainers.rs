//! Fitting procedures for the six tests and the adversarially trained deep
//! kernel.
//!
//! Every fitter is deterministic under its seed: initialization, minibatch
//! draws, and optimizer state all flow from one ChaCha stream. MMD-family
//! kernels and location tests ascend their criterion/statistic with Adam;
//! C2ST classifiers descend a logistic cross-entropy on the squashed score
//! (the kernels themselves consume the raw score).
//!
//! `fit_mmd_rod` trains the deep kernel on adversarial pairs: each epoch runs
//! the single-criterion attack against the current kernel and ascends the
//! criterion on the attacked pair, optionally mixed with the benign pair by
//! `beta` (`beta = 0` is the pure adversarial objective). With a zero inner
//! budget the attacked pair equals the benign pair bit for bit, so the run
//! reproduces `fit_mmd_deep` exactly at equal seeds.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attack::{
    default_checkpoints, ensemble_attack, AttackPlan, CriterionEnsemble, CriterionKind,
    EnsembleMember, TestId, WeightStrategy,
};
use crate::error::{Error, Result};
use crate::kernels::KernelModel;
use crate::location::{
    location_statistic, location_statistic_with_param_grad, LocationTestModel, LocationVariant,
};
use crate::mmd::{self, CriterionConfig};
use crate::ndmath::{sq_dist, AdamConfig, AdamState, Matrix, MlpParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Rows per minibatch from each side; `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Criterion regularizer for MMD-family objectives.
    pub lambda: f64,
    /// Hidden and output widths of the feature net phi.
    pub phi_widths: Vec<usize>,
    /// Number of test locations for ME/SCF.
    pub locations: usize,
    /// Relative covariance ridge for ME/SCF.
    pub ridge: f64,
    /// Inner attack budget for robust training.
    pub inner_epsilon: f64,
    /// Inner attack steps for robust training.
    pub inner_steps: usize,
    /// Benign/adversarial mixing weight; 0 trains on adversarial pairs only.
    pub beta: f64,
}

impl TrainConfig {
    pub fn new(epochs: usize, learning_rate: f64, seed: u64) -> Self {
        TrainConfig {
            epochs,
            learning_rate,
            batch_size: None,
            seed,
            lambda: 1e-8,
            phi_widths: vec![50; 5],
            locations: 5,
            ridge: 1e-5,
            inner_epsilon: 0.05,
            inner_steps: 1,
            beta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("need at least one training epoch"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("beta must lie in [0, 1]"));
        }
        if self.inner_steps == 0 {
            return Err(Error::config("robust training needs at least one inner step"));
        }
        if self.phi_widths.is_empty() || self.phi_widths.iter().any(|&w| w == 0) {
            return Err(Error::config("phi widths must be non-empty and >= 1"));
        }
        if self.locations == 0 {
            return Err(Error::config("need at least one test location"));
        }
        Ok(())
    }

    fn criterion_cfg(&self) -> CriterionConfig {
        CriterionConfig { lambda: self.lambda }
    }
}

/// A fitted model with its training trace.
#[derive(Debug, Clone)]
pub struct FitResult<M> {
    pub model: M,
    /// Objective on the full training pair before training.
    pub initial_objective: f64,
    /// Objective on the full training pair after training.
    pub final_objective: f64,
    /// Per-epoch objective on the epoch's batch (the quantity being ascended;
    /// for C2ST that is the negative cross-entropy).
    pub trace: Vec<f64>,
}

/// Median of pairwise squared distances over all distinct rows; falls back to
/// 1 when there are no distinct pairs or the median degenerates to 0.
pub fn median_sq_distance(data: &Matrix) -> f64 {
    let n = data.rows();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(data.row(i), data.row(j)));
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dists[dists.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn check_training_pair(sp: &Matrix, sq: &Matrix) -> Result<()> {
    if sp.rows() != sq.rows() || sp.cols() != sq.cols() {
        return Err(Error::dimension(format!(
            "training pair is {}x{} vs {}x{}",
            sp.rows(),
            sp.cols(),
            sq.rows(),
            sq.cols()
        )));
    }
    if sp.rows() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: sp.rows(),
        });
    }
    sp.ensure_finite("training set P")?;
    sq.ensure_finite("training set Q")
}

/// Draws `batch` distinct row indices (identity when full-batch). The rng is
/// consumed only in the minibatch case, keeping full-batch runs comparable
/// across trainers.
fn draw_batch<R: Rng + ?Sized>(
    sp: &Matrix,
    sq: &Matrix,
    batch: Option<usize>,
    rng: &mut R,
) -> (Matrix, Matrix) {
    match batch {
        Some(b) if b < sp.rows() => {
            let n = sp.rows();
            let pick = |rng: &mut R| {
                let mut idx: Vec<usize> = (0..n).collect();
                for i in 0..b {
                    let j = rng.gen_range(i..n);
                    idx.swap(i, j);
                }
                idx.truncate(b);
                idx
            };
            let ip = pick(rng);
            let iq = pick(rng);
            (sp.select_rows(&ip), sq.select_rows(&iq))
        }
        _ => (sp.clone(), sq.clone()),
    }
}

/// Fits the gaussian-kernel lengthscale by ascending the test criterion.
pub fn fit_mmd_gaussian(sp: &Matrix, sq: &Matrix, cfg: &TrainConfig) -> Result<FitResult<KernelModel>> {
    cfg.validate()?;
    check_training_pair(sp, sq)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pooled = sp.vstack(sq)?;
    let mut model = KernelModel::gaussian(median_sq_distance(&pooled))?;
    let crit = cfg.criterion_cfg();
    let initial = mmd::criterion(&model, sp, sq, &crit)?;
    let mut params = model.flatten_params();
    let mut adam = AdamState::new(params.len(), AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (x, y) = draw_batch(sp, sq, cfg.batch_size, &mut rng);
        let (value, grad) = mmd::criterion_with_param_grad(&model, &x, &y, &crit)?;
        if !value.is_finite() {
            return Err(Error::numeric("criterion became non-finite during training"));
        }
        let mut g = grad.flatten();
        for v in &mut g {
            *v = -*v;
        }
        adam.step(&mut params, &g)?;
        model.assign_params(&params);
        trace.push(value);
    }
    let final_objective = mmd::criterion(&model, sp, sq, &crit)?;
    Ok(FitResult {
        model,
        initial_objective: initial,
        final_objective,
        trace,
    })
}

/// Shared deep-kernel loop; `robust = None` is plain MMD-D training.
fn fit_deep_inner(
    sp: &Matrix,
    sq: &Matrix,
    cfg: &TrainConfig,
    robust: Option<(f64, usize, f64)>,
) -> Result<FitResult<KernelModel>> {
    cfg.validate()?;
    check_training_pair(sp, sq)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = sp.cols();
    let mut widths = vec![d];
    widths.extend_from_slice(&cfg.phi_widths);
    let net = MlpParams::new(&widths, &mut rng)?;
    let pooled = sp.vstack(sq)?;
    let sigma_q0 = median_sq_distance(&pooled);
    let sigma_phi0 = median_sq_distance(&net.forward(&pooled)?);
    let mut model = KernelModel::deep(0.5, sigma_phi0, sigma_q0, net)?;
    let crit = cfg.criterion_cfg();
    let initial = mmd::criterion(&model, sp, sq, &crit)?;
    let mut params = model.flatten_params();
    let mut adam = AdamState::new(params.len(), AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (x, y) = draw_batch(sp, sq, cfg.batch_size, &mut rng);
        let (value, mut g) = match robust {
            None => {
                let (v, grad) = mmd::criterion_with_param_grad(&model, &x, &y, &crit)?;
                (v, grad.flatten())
            }
            Some((eps, steps, beta)) => {
                let y_adv = if beta < 1.0 {
                    let ens = CriterionEnsemble::new(vec![EnsembleMember {
                        id: TestId::MmdRod,
                        kind: CriterionKind::Mmd {
                            model: model.clone(),
                            cfg: crit,
                        },
                    }])?;
                    let plan = AttackPlan {
                        epsilon: eps,
                        max_steps: steps,
                        weights: WeightStrategy::Uniform,
                        checkpoints: default_checkpoints(steps),
                        domain_bounds: None,
                    };
                    ensemble_attack(&ens, &plan, &x, &y, 0)?.0
                } else {
                    y.clone()
                };
                if beta == 0.0 {
                    let (v, grad) = mmd::criterion_with_param_grad(&model, &x, &y_adv, &crit)?;
                    (v, grad.flatten())
                } else if beta == 1.0 {
                    let (v, grad) = mmd::criterion_with_param_grad(&model, &x, &y, &crit)?;
                    (v, grad.flatten())
                } else {
                    let (v_adv, g_adv) = mmd::criterion_with_param_grad(&model, &x, &y_adv, &crit)?;
                    let (v_ben, g_ben) = mmd::criterion_with_param_grad(&model, &x, &y, &crit)?;
                    let mut g = g_ben.flatten();
                    for (b, a) in g.iter_mut().zip(&g_adv.flatten()) {
                        *b = beta * *b + (1.0 - beta) * a;
                    }
                    (beta * v_ben + (1.0 - beta) * v_adv, g)
                }
            }
        };
        if !value.is_finite() {
            return Err(Error::numeric("criterion became non-finite during training"));
        }
        for v in &mut g {
            *v = -*v;
        }
        adam.step(&mut params, &g)?;
        model.assign_params(&params);
        trace.push(value);
    }
    let final_objective = mmd::criterion(&model, sp, sq, &crit)?;
    Ok(FitResult {
        model,
        initial_objective: initial,
        final_objective,
        trace,
    })
}

/// Fits the deep kernel (gamma, both lengthscales, and phi) on the criterion.
pub fn fit_mmd_deep(sp: &Matrix, sq: &Matrix, cfg: &TrainConfig) -> Result<FitResult<KernelModel>> {
    fit_deep_inner(sp, sq, cfg, None)
}

/// Adversarially trains the deep kernel: inner attack, outer criterion ascent.
pub fn fit_mmd_rod(sp: &Matrix, sq: &Matrix, cfg: &TrainConfig) -> Result<FitResult<KernelModel>> {
    if !(cfg.inner_epsilon >= 0.0) {
        return Err(Error::config("inner epsilon must be non-negative"));
    }
    fit_deep_inner(sp, sq, cfg, Some((cfg.inner_epsilon, cfg.inner_steps, cfg.beta)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum C2stVariant {
    Sign,
    Logit,
}

/// Stable binary cross-entropy on a logit: `max(s,0) - s y + ln(1 + e^-|s|)`.
fn bce_with_logit(score: f64, label: f64) -> f64 {
    score.max(0.0) - score * label + (-score.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean cross-entropy of the classifier on a labeled pool.
fn mean_bce(net: &MlpParams, pool: &Matrix, labels: &[f64]) -> Result<f64> {
    let scores = net.forward(pool)?;
    let mut acc = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        acc += bce_with_logit(scores.get(i, 0), y);
    }
    Ok(acc / labels.len() as f64)
}

/// Fraction of pooled samples the classifier scores on the correct side
/// (positive for P, non-positive for Q).
pub fn c2st_accuracy(model: &KernelModel, sp: &Matrix, sq: &Matrix) -> Result<f64> {
    let net = match model {
        KernelModel::C2stSign { net } | KernelModel::C2stLogit { net } => net,
        _ => return Err(Error::config("model is not a classifier kernel")),
    };
    let fp = net.forward(sp)?;
    let fq = net.forward(sq)?;
    let hits = fp.data().iter().filter(|&&s| s > 0.0).count()
        + fq.data().iter().filter(|&&s| s <= 0.0).count();
    Ok(hits as f64 / (sp.rows() + sq.rows()) as f64)
}

/// Trains the classifier `f` by cross-entropy (P -> 1, Q -> 0) and wraps it
/// in the requested C2ST kernel.
pub fn fit_c2st(
    sp: &Matrix,
    sq: &Matrix,
    cfg: &TrainConfig,
    variant: C2stVariant,
) -> Result<FitResult<KernelModel>> {
    cfg.validate()?;
    check_training_pair(sp, sq)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = sp.cols();
    // f = g . phi with a two-layer head on top of the feature stack.
    let mut widths = vec![d];
    widths.extend_from_slice(&cfg.phi_widths);
    widths.push(*cfg.phi_widths.last().unwrap());
    widths.push(1);
    let mut net = MlpParams::new(&widths, &mut rng)?;

    let pool = sp.vstack(sq)?;
    let n = sp.rows();
    let labels: Vec<f64> = (0..2 * n).map(|i| if i < n { 1.0 } else { 0.0 }).collect();
    let initial = -mean_bce(&net, &pool, &labels)?;

    let mut params = Vec::with_capacity(net.param_count());
    net.flatten_into(&mut params);
    let mut adam = AdamState::new(params.len(), AdamConfig::with_learning_rate(cfg.learning_rate));
    let batch = cfg.batch_size.unwrap_or(2 * n).min(2 * n);
    let mut order: Vec<usize> = (0..2 * n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        // fresh shuffle each epoch
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            let x = pool.select_rows(chunk);
            let cache = net.forward_cached(&x)?;
            let m = chunk.len() as f64;
            let mut upstream = Matrix::zeros(chunk.len(), 1);
            let mut loss = 0.0;
            for (row, &idx) in chunk.iter().enumerate() {
                let s = cache.output().get(row, 0);
                let y = labels[idx];
                loss += bce_with_logit(s, y);
                upstream.set(row, 0, (sigmoid(s) - y) / m);
            }
            let (grads, _) = net.backward(&cache, &upstream)?;
            let mut g = Vec::with_capacity(params.len());
            grads.flatten_into(&mut g);
            adam.step(&mut params, &g)?;
            net.assign_from_flat(&params);
            epoch_loss += loss / m;
            batches += 1;
        }
        trace.push(-(epoch_loss / batches as f64));
    }
    let final_objective = -mean_bce(&net, &pool, &labels)?;
    let model = match variant {
        C2stVariant::Sign => KernelModel::C2stSign { net },
        C2stVariant::Logit => KernelModel::C2stLogit { net },
    };
    Ok(FitResult {
        model,
        initial_objective: initial,
        final_objective,
        trace,
    })
}

/// Fits ME/SCF test locations and bandwidth by ascending the statistic on the
/// full training pair.
pub fn fit_locations(
    sp: &Matrix,
    sq: &Matrix,
    cfg: &TrainConfig,
    variant: LocationVariant,
) -> Result<FitResult<LocationTestModel>> {
    cfg.validate()?;
    check_training_pair(sp, sq)?;
    let g = cfg.locations;
    if sp.rows() < g + 2 {
        return Err(Error::InsufficientSamples {
            needed: g + 2,
            got: sp.rows(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pooled = sp.vstack(sq)?;
    let d = pooled.cols();

    // Init: G pool points plus small per-coordinate jitter.
    let mut std = vec![0.0; d];
    for j in 0..d {
        let mean: f64 = (0..pooled.rows()).map(|i| pooled.get(i, j)).sum::<f64>()
            / pooled.rows() as f64;
        let var: f64 = (0..pooled.rows())
            .map(|i| (pooled.get(i, j) - mean).powi(2))
            .sum::<f64>()
            / pooled.rows() as f64;
        std[j] = var.sqrt().max(1e-6);
    }
    let mut locations = Matrix::zeros(g, d);
    for r in 0..g {
        let pick = rng.gen_range(0..pooled.rows());
        let row = locations.row_mut(r);
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            row[j] = pooled.get(pick, j) + 0.1 * std[j] * z;
        }
    }
    let med = median_sq_distance(&pooled);
    let bandwidth = match variant {
        LocationVariant::Me => med,
        LocationVariant::Scf => med.sqrt(),
    };
    let mut model = LocationTestModel::new(variant, locations, bandwidth, cfg.ridge)?;
    let initial = location_statistic(&model, sp, sq)?;

    let mut params = model.locations.data().to_vec();
    params.push(model.log_bandwidth);
    let mut adam = AdamState::new(params.len(), AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (value, grad) = location_statistic_with_param_grad(&model, sp, sq)?;
        if !value.is_finite() {
            return Err(Error::numeric("statistic became non-finite during training"));
        }
        let mut flat = grad.flatten();
        for v in &mut flat {
            *v = -*v;
        }
        adam.step(&mut params, &flat)?;
        let (loc, lb) = params.split_at(g * d);
        model.locations.data_mut().copy_from_slice(loc);
        model.log_bandwidth = lb[0];
        trace.push(value);
    }
    let final_objective = location_statistic(&model, sp, sq)?;
    Ok(FitResult {
        model,
        initial_objective: initial,
        final_objective,
        trace,
    })
}

/// Table 7 finetuned ensemble-attack weights for the Blob dataset, in the
/// order (D, G, S, L, ME, SCF).
pub fn blob_finetuned_weights() -> BTreeMap<TestId, f64> {
    let mut w = BTreeMap::new();
    w.insert(TestId::MmdD, 5.0 / 29.0);
    w.insert(TestId::MmdG, 1.0 / 29.0);
    w.insert(TestId::C2stS, 1.0 / 29.0);
    w.insert(TestId::C2stL, 20.0 / 29.0);
    w.insert(TestId::Me, 1.0 / 29.0);
    w.insert(TestId::Scf, 1.0 / 29.0);
    w
}

/// Finetuned weights for the HDGM dataset, order (D, G, S, L, ME, SCF).
pub fn hdgm_finetuned_weights() -> BTreeMap<TestId, f64> {
    let mut w = BTreeMap::new();
    w.insert(TestId::MmdD, 25.0 / 79.0);
    w.insert(TestId::MmdG, 1.0 / 79.0);
    w.insert(TestId::C2stS, 1.0 / 79.0);
    w.insert(TestId::C2stL, 50.0 / 79.0);
    w.insert(TestId::Me, 1.0 / 79.0);
    w.insert(TestId::Scf, 1.0 / 79.0);
    w
}

/// Finetuned weights for Higgs-style tabular data, order (D, G, S, L, ME, SCF).
pub fn higgs_finetuned_weights() -> BTreeMap<TestId, f64> {
    let mut w = BTreeMap::new();
    w.insert(TestId::MmdD, 3.0 / 98.0);
    w.insert(TestId::MmdG, 45.0 / 98.0);
    w.insert(TestId::C2stS, 4.0 / 98.0);
    w.insert(TestId::C2stL, 3.0 / 98.0);
    w.insert(TestId::Me, 40.0 / 98.0);
    w.insert(TestId::Scf, 3.0 / 98.0);
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_blob, BlobSpec, Side};

    fn blob_pair(n: usize, seed: u64) -> (Matrix, Matrix) {
        let spec = BlobSpec::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = sample_blob(&spec, Side::P, n, &mut rng);
        let sq = sample_blob(&spec, Side::Q, n, &mut rng);
        (sp, sq)
    }

    fn quick_cfg(epochs: usize, lr: f64, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::new(epochs, lr, seed);
        cfg.phi_widths = vec![12, 12, 12];
        cfg
    }

    #[test]
    fn gaussian_fit_on_identical_sets_stays_put() {
        let (sp, _) = blob_pair(40, 1);
        let cfg = quick_cfg(50, 1e-2, 2);
        let fit = fit_mmd_gaussian(&sp, &sp, &cfg).unwrap();
        assert_eq!(fit.initial_objective, 0.0);
        assert_eq!(fit.final_objective, 0.0);
        // parameter gradient is exactly the rounding noise of cancelling sums
        let sigma = fit.model.sigma_phi().unwrap();
        let init = median_sq_distance(&sp.vstack(&sp).unwrap());
        assert!((sigma.ln() - init.ln()).abs() < 1e-6);
    }

    #[test]
    fn gaussian_fit_improves_the_criterion_on_blob() {
        let (sp, sq) = blob_pair(100, 3);
        let cfg = quick_cfg(200, 5e-2, 4);
        let fit = fit_mmd_gaussian(&sp, &sq, &cfg).unwrap();
        assert!(
            fit.final_objective > fit.initial_objective,
            "{} -> {}",
            fit.initial_objective,
            fit.final_objective
        );
    }

    #[test]
    fn fitters_are_deterministic_under_a_seed() {
        let (sp, sq) = blob_pair(40, 5);
        let cfg = quick_cfg(30, 1e-3, 6);
        let a = fit_mmd_deep(&sp, &sq, &cfg).unwrap();
        let b = fit_mmd_deep(&sp, &sq, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        let a = fit_c2st(&sp, &sq, &cfg, C2stVariant::Logit).unwrap();
        let b = fit_c2st(&sp, &sq, &cfg, C2stVariant::Logit).unwrap();
        assert_eq!(a.model, b.model);
        let a = fit_locations(&sp, &sq, &cfg, LocationVariant::Me).unwrap();
        let b = fit_locations(&sp, &sq, &cfg, LocationVariant::Me).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn deep_fit_improves_the_criterion_on_blob() {
        let (sp, sq) = blob_pair(80, 7);
        let cfg = quick_cfg(150, 5e-3, 8);
        let fit = fit_mmd_deep(&sp, &sq, &cfg).unwrap();
        assert!(fit.final_objective > fit.initial_objective);
        // positivity is maintained by the log parameterization
        assert!(fit.model.sigma_phi().unwrap() > 0.0);
        let g = fit.model.gamma().unwrap();
        assert!((GAMMA_MARGIN_TEST..=1.0 - GAMMA_MARGIN_TEST).contains(&g));
    }

    const GAMMA_MARGIN_TEST: f64 = 1e-3;

    #[test]
    fn rod_with_zero_budget_reproduces_deep_training_bitwise() {
        let (sp, sq) = blob_pair(30, 9);
        let mut cfg = quick_cfg(25, 1e-3, 10);
        cfg.inner_epsilon = 0.0;
        cfg.inner_steps = 1;
        cfg.beta = 0.0;
        let deep = fit_mmd_deep(&sp, &sq, &cfg).unwrap();
        let rod = fit_mmd_rod(&sp, &sq, &cfg).unwrap();
        assert_eq!(deep.model, rod.model);
        assert_eq!(deep.trace, rod.trace);
    }

    #[test]
    fn rod_with_beta_one_ignores_the_inner_attack() {
        let (sp, sq) = blob_pair(30, 11);
        let mut cfg = quick_cfg(25, 1e-3, 12);
        cfg.inner_epsilon = 0.05;
        cfg.beta = 1.0;
        let deep = fit_mmd_deep(&sp, &sq, &cfg).unwrap();
        let rod = fit_mmd_rod(&sp, &sq, &cfg).unwrap();
        assert_eq!(deep.model, rod.model);
    }

    #[test]
    fn c2st_on_identical_sets_is_a_coin_flip() {
        let (sp, _) = blob_pair(120, 13);
        let (train_p, hold_p) = (sp.select_rows(&(0..60).collect::<Vec<_>>()), sp.select_rows(&(60..120).collect::<Vec<_>>()));
        let cfg = quick_cfg(60, 1e-3, 14);
        let fit = fit_c2st(&train_p, &hold_p, &cfg, C2stVariant::Sign).unwrap();
        // held-out halves of the same distribution
        let (sp2, _) = blob_pair(120, 15);
        let a = sp2.select_rows(&(0..60).collect::<Vec<_>>());
        let b = sp2.select_rows(&(60..120).collect::<Vec<_>>());
        let acc = c2st_accuracy(&fit.model, &a, &b).unwrap();
        assert!((acc - 0.5).abs() <= 0.1, "accuracy {acc}");
    }

    #[test]
    fn c2st_separates_blob_p_from_q() {
        let (sp, sq) = blob_pair(100, 100);
        let mut cfg = TrainConfig::new(1500, 2e-3, 0);
        cfg.batch_size = Some(128);
        let fit = fit_c2st(&sp, &sq, &cfg, C2stVariant::Logit).unwrap();
        let (hp, hq) = blob_pair(1000, 999);
        let acc = c2st_accuracy(&fit.model, &hp, &hq).unwrap();
        // 3 standard errors above chance at n = 2000 is ~0.5335
        assert!(acc > 0.5335, "held-out accuracy {acc}");
    }

    #[test]
    fn c2st_loss_trace_decreases_in_smoothed_form() {
        let (sp, sq) = blob_pair(100, 19);
        let cfg = quick_cfg(200, 1e-3, 20);
        let fit = fit_c2st(&sp, &sq, &cfg, C2stVariant::Logit).unwrap();
        let window = 10;
        let smooth: Vec<f64> = fit
            .trace
            .windows(window)
            .map(|w| -w.iter().sum::<f64>() / window as f64)
            .collect();
        for pair in smooth.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-3, "{} -> {}", pair[0], pair[1]);
        }
        assert!(smooth.last().unwrap() < smooth.first().unwrap());
    }

    #[test]
    fn location_fit_improves_the_statistic_on_blob() {
        for variant in [LocationVariant::Me, LocationVariant::Scf] {
            let (sp, sq) = blob_pair(100, 21);
            let mut cfg = quick_cfg(200, 5e-2, 22);
            cfg.locations = 4;
            let fit = fit_locations(&sp, &sq, &cfg, variant).unwrap();
            assert!(
                fit.final_objective > fit.initial_objective,
                "{variant:?}: {} -> {}",
                fit.initial_objective,
                fit.final_objective
            );
        }
    }

    #[test]
    fn location_fit_on_identical_sets_is_pinned_at_zero() {
        let (sp, _) = blob_pair(40, 23);
        let mut cfg = quick_cfg(30, 1e-2, 24);
        cfg.locations = 3;
        let fit = fit_locations(&sp, &sp, &cfg, LocationVariant::Me).unwrap();
        assert_eq!(fit.initial_objective, 0.0);
        assert_eq!(fit.final_objective, 0.0);
    }

    #[test]
    fn finetuned_weight_sets_sum_to_one() {
        for w in [
            blob_finetuned_weights(),
            hdgm_finetuned_weights(),
            higgs_finetuned_weights(),
        ] {
            let sum: f64 = w.values().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert_eq!(w.len(), 6);
        }
    }
}
