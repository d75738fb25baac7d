//! Kernels for MMD-family two-sample tests and their gradients.
//!
//! Four variants share one model type:
//!
//! - `Gaussian`: `k(x,y) = exp(-||x-y||^2 / (2 sigma_phi))`
//! - `Deep`: `[(1-gamma) exp(-||phi(x)-phi(y)||^2 / (2 sigma_phi)) + gamma]
//!   * exp(-||x-y||^2 / (2 sigma_q))` with a learned feature net `phi`
//! - `C2stSign`: `(1/16)(s(f(x)) + 1)(s(f(y)) + 1)` with the smoothed sign
//!   `s(u) = u / (|u| + guard)` of a classifier score
//! - `C2stLogit`: `f(x) f(y)` on raw classifier scores
//!
//! Lengthscales are stored as logs and exponentiated at use so gradient
//! updates cannot leave the positive domain; the deep kernel's mixing weight
//! gamma is squashed into `[eps, 1-eps]` the same way.
//!
//! Besides pointwise evaluation, this module assembles the `H` matrix of the
//! U-statistic,
//! `H_ij = k(x_i,x_j) + k(y_i,y_j) - k(x_i,y_j) - k(x_j,y_i)`,
//! and pulls an arbitrary upstream weighting `<U, H>` back to gradients with
//! respect to the second sample set and to all kernel parameters. Attacks and
//! trainers build every gradient they need from these two pullbacks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{sq_dist, ForwardCache, Matrix, MlpGrads, MlpParams};

/// Guard added to |f(x)| in the smoothed sign so the kernel stays defined at 0.
pub const SIGN_GUARD: f64 = 1e-12;

/// Gamma is squashed into [GAMMA_MARGIN, 1 - GAMMA_MARGIN].
pub const GAMMA_MARGIN: f64 = 1e-3;

/// Smoothed sign factor of the C2ST-S kernel: `f / (|f| + guard) + 1`,
/// ranging over (0, 2) and hitting 1 at f = 0.
pub fn c2st_sign_value(f_out: f64) -> f64 {
    f_out / (f_out.abs() + SIGN_GUARD) + 1.0
}

fn sign_factor(u: f64) -> f64 {
    0.25 * c2st_sign_value(u)
}

fn sign_factor_derivative(u: f64) -> f64 {
    let denom = u.abs() + SIGN_GUARD;
    0.25 * SIGN_GUARD / (denom * denom)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum KernelModel {
    Gaussian {
        log_sigma_phi: f64,
    },
    Deep {
        /// Mixing weight in [0, 1]; the *trained* parameterization squashes it
        /// into [GAMMA_MARGIN, 1 - GAMMA_MARGIN], see `flatten_params`.
        gamma: f64,
        log_sigma_phi: f64,
        log_sigma_q: f64,
        net: MlpParams,
    },
    C2stSign {
        net: MlpParams,
    },
    C2stLogit {
        net: MlpParams,
    },
}

// Squash band used when mapping gamma to its unconstrained training proxy.
const GAMMA_T_CLAMP: f64 = 1e-9;

fn gamma_to_proxy(gamma: f64) -> f64 {
    let t = ((gamma - GAMMA_MARGIN) / (1.0 - 2.0 * GAMMA_MARGIN))
        .clamp(GAMMA_T_CLAMP, 1.0 - GAMMA_T_CLAMP);
    (t / (1.0 - t)).ln()
}

fn proxy_to_gamma(raw: f64) -> f64 {
    GAMMA_MARGIN + (1.0 - 2.0 * GAMMA_MARGIN) * sigmoid(raw)
}

/// d gamma / d proxy at the current gamma: `(1 - 2 eps) t (1 - t)`.
fn gamma_proxy_chain(gamma: f64) -> f64 {
    let t = ((gamma - GAMMA_MARGIN) / (1.0 - 2.0 * GAMMA_MARGIN))
        .clamp(GAMMA_T_CLAMP, 1.0 - GAMMA_T_CLAMP);
    (1.0 - 2.0 * GAMMA_MARGIN) * t * (1.0 - t)
}

/// Gradients with respect to the learnable parameters of a [`KernelModel`],
/// with the same shape as the model itself.
#[derive(Debug, Clone)]
pub enum KernelGrad {
    Gaussian {
        log_sigma_phi: f64,
    },
    Deep {
        raw_gamma: f64,
        log_sigma_phi: f64,
        log_sigma_q: f64,
        net: MlpGrads,
    },
    C2st {
        net: MlpGrads,
    },
}

impl KernelGrad {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        match self {
            KernelGrad::Gaussian { log_sigma_phi } => out.push(*log_sigma_phi),
            KernelGrad::Deep {
                raw_gamma,
                log_sigma_phi,
                log_sigma_q,
                net,
            } => {
                out.push(*raw_gamma);
                out.push(*log_sigma_phi);
                out.push(*log_sigma_q);
                net.flatten_into(&mut out);
            }
            KernelGrad::C2st { net } => net.flatten_into(&mut out),
        }
        out
    }
}

/// Variant-specific intermediates of one (sp, sq) pair, shared between the
/// H assembly and the gradient pullback.
enum PairCache {
    Gaussian {
        /// `k(y_i, y_j)` and `k(x_a, y_b)` blocks, row-major.
        kyy: Vec<f64>,
        kxy: Vec<f64>,
    },
    Deep {
        cache_q: ForwardCache,
        fp: Matrix,
        fq: Matrix,
        e_phi_yy: Vec<f64>,
        e_q_yy: Vec<f64>,
        e_phi_xy: Vec<f64>,
        e_q_xy: Vec<f64>,
    },
    C2st {
        cache_q: ForwardCache,
        scores_q: Vec<f64>,
        psi_p: Vec<f64>,
        psi_q: Vec<f64>,
        sign: bool,
    },
}

impl KernelModel {
    pub fn gaussian(sigma_phi: f64) -> Result<Self> {
        if !(sigma_phi > 0.0) || !sigma_phi.is_finite() {
            return Err(Error::config("gaussian lengthscale must be positive and finite"));
        }
        Ok(KernelModel::Gaussian {
            log_sigma_phi: sigma_phi.ln(),
        })
    }

    pub fn deep(gamma: f64, sigma_phi: f64, sigma_q: f64, net: MlpParams) -> Result<Self> {
        if !(sigma_phi > 0.0 && sigma_q > 0.0) {
            return Err(Error::config("deep kernel lengthscales must be positive"));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::config("gamma must lie in [0, 1]"));
        }
        Ok(KernelModel::Deep {
            gamma,
            log_sigma_phi: sigma_phi.ln(),
            log_sigma_q: sigma_q.ln(),
            net,
        })
    }

    /// Input dimension the kernel expects, when it is pinned by a network.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            KernelModel::Gaussian { .. } => None,
            KernelModel::Deep { net, .. }
            | KernelModel::C2stSign { net }
            | KernelModel::C2stLogit { net } => Some(net.input_dim()),
        }
    }

    pub fn sigma_phi(&self) -> Option<f64> {
        match self {
            KernelModel::Gaussian { log_sigma_phi } | KernelModel::Deep { log_sigma_phi, .. } => {
                Some(log_sigma_phi.exp())
            }
            _ => None,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match self {
            KernelModel::Deep { gamma, .. } => Some(*gamma),
            _ => None,
        }
    }

    fn check_vector(&self, x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != y.len() {
            return Err(Error::dimension(format!(
                "kernel arguments have lengths {} and {}",
                x.len(),
                y.len()
            )));
        }
        if let Some(d) = self.input_dim() {
            if x.len() != d {
                return Err(Error::dimension(format!(
                    "kernel expects dimension {d}, got {}",
                    x.len()
                )));
            }
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numeric("kernel argument has a non-finite entry"));
        }
        Ok(())
    }

    /// Pointwise kernel value `k(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_vector(x, y)?;
        match self {
            KernelModel::Gaussian { log_sigma_phi } => {
                Ok((-sq_dist(x, y) / (2.0 * log_sigma_phi.exp())).exp())
            }
            KernelModel::Deep {
                log_sigma_phi,
                log_sigma_q,
                net,
                ..
            } => {
                let gamma = self.gamma().unwrap();
                let fx = net.forward(&Matrix::from_vec(1, x.len(), x.to_vec())?)?;
                let fy = net.forward(&Matrix::from_vec(1, y.len(), y.to_vec())?)?;
                let e_phi = (-sq_dist(fx.row(0), fy.row(0)) / (2.0 * log_sigma_phi.exp())).exp();
                let e_q = (-sq_dist(x, y) / (2.0 * log_sigma_q.exp())).exp();
                Ok(((1.0 - gamma) * e_phi + gamma) * e_q)
            }
            KernelModel::C2stSign { net } => {
                let fx = net.forward(&Matrix::from_vec(1, x.len(), x.to_vec())?)?;
                let fy = net.forward(&Matrix::from_vec(1, y.len(), y.to_vec())?)?;
                Ok(sign_factor(fx.get(0, 0)) * sign_factor(fy.get(0, 0)))
            }
            KernelModel::C2stLogit { net } => {
                let fx = net.forward(&Matrix::from_vec(1, x.len(), x.to_vec())?)?;
                let fy = net.forward(&Matrix::from_vec(1, y.len(), y.to_vec())?)?;
                Ok(fx.get(0, 0) * fy.get(0, 0))
            }
        }
    }

    fn check_pair(&self, sp: &Matrix, sq: &Matrix) -> Result<()> {
        if sp.rows() != sq.rows() {
            return Err(Error::dimension(format!(
                "sample sets have {} and {} rows; the U-statistic assumes equal sizes",
                sp.rows(),
                sq.rows()
            )));
        }
        if sp.rows() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: sp.rows(),
            });
        }
        if sp.cols() != sq.cols() {
            return Err(Error::dimension(format!(
                "sample sets have {} and {} columns",
                sp.cols(),
                sq.cols()
            )));
        }
        if let Some(d) = self.input_dim() {
            if sp.cols() != d {
                return Err(Error::dimension(format!(
                    "kernel expects dimension {d}, samples have {}",
                    sp.cols()
                )));
            }
        }
        sp.ensure_finite("first sample set")?;
        sq.ensure_finite("second sample set")?;
        Ok(())
    }

    /// The `n x n` matrix `H_ij = k(x_i,x_j) + k(y_i,y_j) - k(x_i,y_j) - k(x_j,y_i)`.
    pub fn h_matrix(&self, sp: &Matrix, sq: &Matrix) -> Result<Matrix> {
        self.check_pair(sp, sq)?;
        Ok(self.h_matrix_cached(sp, sq)?.0)
    }

    /// Assembles `H` while caching the per-pair intermediates the gradient
    /// pullbacks reuse (forward passes, kernel factor blocks).
    fn h_matrix_cached(&self, sp: &Matrix, sq: &Matrix) -> Result<(Matrix, PairCache)> {
        let n = sp.rows();
        let mut h = Matrix::zeros(n, n);
        match self {
            KernelModel::Gaussian { log_sigma_phi } => {
                let sigma = log_sigma_phi.exp();
                let k = |a: &[f64], b: &[f64]| (-sq_dist(a, b) / (2.0 * sigma)).exp();
                let mut kyy = vec![0.0; n * n];
                let mut kxy = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        kyy[i * n + j] = k(sq.row(i), sq.row(j));
                        kxy[i * n + j] = k(sp.row(i), sq.row(j));
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        let v = k(sp.row(i), sp.row(j)) + kyy[i * n + j]
                            - kxy[i * n + j]
                            - kxy[j * n + i];
                        h.set(i, j, v);
                    }
                }
                Ok((h, PairCache::Gaussian { kyy, kxy }))
            }
            KernelModel::Deep {
                log_sigma_phi,
                log_sigma_q,
                net,
                ..
            } => {
                let gamma = self.gamma().unwrap();
                let s_phi = log_sigma_phi.exp();
                let s_q = log_sigma_q.exp();
                let cache_q = net.forward_cached(sq)?;
                let fp = net.forward(sp)?;
                let fq = cache_q.output().clone();
                let mut e_phi_yy = vec![0.0; n * n];
                let mut e_q_yy = vec![0.0; n * n];
                let mut e_phi_xy = vec![0.0; n * n];
                let mut e_q_xy = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        e_phi_yy[i * n + j] = (-sq_dist(fq.row(i), fq.row(j)) / (2.0 * s_phi)).exp();
                        e_q_yy[i * n + j] = (-sq_dist(sq.row(i), sq.row(j)) / (2.0 * s_q)).exp();
                        e_phi_xy[i * n + j] = (-sq_dist(fp.row(i), fq.row(j)) / (2.0 * s_phi)).exp();
                        e_q_xy[i * n + j] = (-sq_dist(sp.row(i), sq.row(j)) / (2.0 * s_q)).exp();
                    }
                }
                let mix = |e_phi: f64, e_q: f64| ((1.0 - gamma) * e_phi + gamma) * e_q;
                for i in 0..n {
                    for j in 0..n {
                        let kxx = {
                            let e_phi =
                                (-sq_dist(fp.row(i), fp.row(j)) / (2.0 * s_phi)).exp();
                            let e_q = (-sq_dist(sp.row(i), sp.row(j)) / (2.0 * s_q)).exp();
                            mix(e_phi, e_q)
                        };
                        let v = kxx + mix(e_phi_yy[i * n + j], e_q_yy[i * n + j])
                            - mix(e_phi_xy[i * n + j], e_q_xy[i * n + j])
                            - mix(e_phi_xy[j * n + i], e_q_xy[j * n + i]);
                        h.set(i, j, v);
                    }
                }
                Ok((
                    h,
                    PairCache::Deep {
                        cache_q,
                        fp,
                        fq,
                        e_phi_yy,
                        e_q_yy,
                        e_phi_xy,
                        e_q_xy,
                    },
                ))
            }
            KernelModel::C2stSign { net } | KernelModel::C2stLogit { net } => {
                let sign = matches!(self, KernelModel::C2stSign { .. });
                let psi: fn(f64) -> f64 = if sign { sign_factor } else { |u| u };
                let cache_q = net.forward_cached(sq)?;
                let scores_q: Vec<f64> = cache_q.output().data().to_vec();
                let psi_p: Vec<f64> = net.forward(sp)?.data().iter().map(|&u| psi(u)).collect();
                let psi_q: Vec<f64> = scores_q.iter().map(|&u| psi(u)).collect();
                for i in 0..n {
                    for j in 0..n {
                        let v = psi_p[i] * psi_p[j] + psi_q[i] * psi_q[j]
                            - psi_p[i] * psi_q[j]
                            - psi_p[j] * psi_q[i];
                        h.set(i, j, v);
                    }
                }
                Ok((
                    h,
                    PairCache::C2st {
                        cache_q,
                        scores_q,
                        psi_p,
                        psi_q,
                        sign,
                    },
                ))
            }
        }
    }

    /// Gradient of `<upstream, H>` with respect to every entry of `sq`.
    pub fn h_matrix_input_grad(
        &self,
        sp: &Matrix,
        sq: &Matrix,
        upstream: &Matrix,
    ) -> Result<Matrix> {
        self.check_pair(sp, sq)?;
        let n = sp.rows();
        if upstream.rows() != n || upstream.cols() != n {
            return Err(Error::dimension(format!(
                "upstream is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                n,
                n
            )));
        }
        let cache = self.h_matrix_cached(sp, sq)?.1;
        self.input_grad_cached(sp, sq, upstream, &cache)
    }

    /// Fused pullback: assembles `H` once, lets `upstream_of` turn it into a
    /// scalar value plus an upstream weighting, and pulls that weighting back
    /// to an input gradient reusing the cached intermediates. This is the hot
    /// path of the attack loop.
    pub fn h_matrix_pullback(
        &self,
        sp: &Matrix,
        sq: &Matrix,
        upstream_of: impl FnOnce(&Matrix) -> Result<(f64, Matrix)>,
    ) -> Result<(f64, Matrix)> {
        self.check_pair(sp, sq)?;
        let (h, cache) = self.h_matrix_cached(sp, sq)?;
        let (value, upstream) = upstream_of(&h)?;
        let grad = self.input_grad_cached(sp, sq, &upstream, &cache)?;
        Ok((value, grad))
    }

    fn input_grad_cached(
        &self,
        sp: &Matrix,
        sq: &Matrix,
        upstream: &Matrix,
        cache: &PairCache,
    ) -> Result<Matrix> {
        let n = sp.rows();
        let d = sq.cols();
        let mut grad = Matrix::zeros(n, d);
        match (self, cache) {
            (KernelModel::Gaussian { log_sigma_phi }, PairCache::Gaussian { kyy, kxy }) => {
                let sigma = log_sigma_phi.exp();
                // yy block: unordered pair {i, j} contributes with total
                // weight U_ij + U_ji, pushing y_j towards y_i and vice versa.
                for i in 0..n {
                    for j in (i + 1)..n {
                        let w = upstream.get(i, j) + upstream.get(j, i);
                        if w == 0.0 {
                            continue;
                        }
                        let c = w * kyy[i * n + j] / sigma;
                        for t in 0..d {
                            let diff = sq.get(i, t) - sq.get(j, t);
                            *grad.row_mut(j).get_mut(t).unwrap() += c * diff;
                            *grad.row_mut(i).get_mut(t).unwrap() -= c * diff;
                        }
                    }
                }
                // xy block: k(x_a, y_b) enters H with weight -(U_ab + U_ba).
                for a in 0..n {
                    for b in 0..n {
                        let w = -(upstream.get(a, b) + upstream.get(b, a));
                        if w == 0.0 {
                            continue;
                        }
                        let c = w * kxy[a * n + b] / sigma;
                        for t in 0..d {
                            *grad.row_mut(b).get_mut(t).unwrap() +=
                                c * (sp.get(a, t) - sq.get(b, t));
                        }
                    }
                }
            }
            (
                KernelModel::Deep {
                    log_sigma_phi,
                    log_sigma_q,
                    net,
                    ..
                },
                PairCache::Deep {
                    cache_q,
                    fp,
                    fq,
                    e_phi_yy,
                    e_q_yy,
                    e_phi_xy,
                    e_q_xy,
                },
            ) => {
                let gamma = self.gamma().unwrap();
                let s_phi = log_sigma_phi.exp();
                let s_q = log_sigma_q.exp();
                let p = fq.cols();
                let mut feat_grad = Matrix::zeros(n, p);
                for i in 0..n {
                    for j in (i + 1)..n {
                        let w = upstream.get(i, j) + upstream.get(j, i);
                        if w == 0.0 {
                            continue;
                        }
                        let e_phi = e_phi_yy[i * n + j];
                        let e_q = e_q_yy[i * n + j];
                        let raw_c = w * ((1.0 - gamma) * e_phi + gamma) * e_q / s_q;
                        let feat_c = w * (1.0 - gamma) * e_q * e_phi / s_phi;
                        for t in 0..d {
                            let diff = sq.get(i, t) - sq.get(j, t);
                            *grad.row_mut(j).get_mut(t).unwrap() += raw_c * diff;
                            *grad.row_mut(i).get_mut(t).unwrap() -= raw_c * diff;
                        }
                        for t in 0..p {
                            let diff = fq.get(i, t) - fq.get(j, t);
                            *feat_grad.row_mut(j).get_mut(t).unwrap() += feat_c * diff;
                            *feat_grad.row_mut(i).get_mut(t).unwrap() -= feat_c * diff;
                        }
                    }
                }
                for a in 0..n {
                    for b in 0..n {
                        let w = -(upstream.get(a, b) + upstream.get(b, a));
                        if w == 0.0 {
                            continue;
                        }
                        let e_phi = e_phi_xy[a * n + b];
                        let e_q = e_q_xy[a * n + b];
                        let raw_c = w * ((1.0 - gamma) * e_phi + gamma) * e_q / s_q;
                        let feat_c = w * (1.0 - gamma) * e_q * e_phi / s_phi;
                        for t in 0..d {
                            *grad.row_mut(b).get_mut(t).unwrap() +=
                                raw_c * (sp.get(a, t) - sq.get(b, t));
                        }
                        for t in 0..p {
                            *feat_grad.row_mut(b).get_mut(t).unwrap() +=
                                feat_c * (fp.get(a, t) - fq.get(b, t));
                        }
                    }
                }
                let (_, input_grad) = net.backward(cache_q, &feat_grad)?;
                grad.add_scaled(&input_grad, 1.0);
            }
            (
                KernelModel::C2stSign { net } | KernelModel::C2stLogit { net },
                PairCache::C2st {
                    cache_q,
                    scores_q,
                    psi_p,
                    psi_q,
                    sign,
                },
            ) => {
                let dpsi: fn(f64) -> f64 = if *sign {
                    sign_factor_derivative
                } else {
                    |_| 1.0
                };
                // d<U,H> / d psi(f(y_m))
                let mut upstream_scores = Matrix::zeros(n, 1);
                for m in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += upstream.get(m, j) * psi_q[j];
                        acc += upstream.get(j, m) * psi_q[j];
                        acc -= (upstream.get(j, m) + upstream.get(m, j)) * psi_p[j];
                    }
                    upstream_scores.set(m, 0, acc * dpsi(scores_q[m]));
                }
                let (_, input_grad) = net.backward(cache_q, &upstream_scores)?;
                grad = input_grad;
            }
            _ => return Err(Error::config("pair cache does not match kernel variant")),
        }
        Ok(grad)
    }

    /// Gradient of `<upstream, H>` with respect to all learnable parameters.
    pub fn h_matrix_param_grad(
        &self,
        sp: &Matrix,
        sq: &Matrix,
        upstream: &Matrix,
    ) -> Result<KernelGrad> {
        self.check_pair(sp, sq)?;
        let n = sp.rows();
        if upstream.rows() != n || upstream.cols() != n {
            return Err(Error::dimension("upstream shape does not match H"));
        }
        match self {
            KernelModel::Gaussian { log_sigma_phi } => {
                let sigma = log_sigma_phi.exp();
                let mut acc = 0.0;
                // dk/dlog(sigma) = k * D / (2 sigma); sum over the three blocks.
                let mut add = |a: &[f64], b: &[f64], w: f64| {
                    let dist = sq_dist(a, b);
                    let k = (-dist / (2.0 * sigma)).exp();
                    acc += w * k * dist / (2.0 * sigma);
                };
                for i in 0..n {
                    for j in 0..n {
                        let u = upstream.get(i, j);
                        if u != 0.0 {
                            add(sp.row(i), sp.row(j), u);
                            add(sq.row(i), sq.row(j), u);
                        }
                        let w = -(upstream.get(i, j) + upstream.get(j, i));
                        if w != 0.0 {
                            add(sp.row(i), sq.row(j), w);
                        }
                    }
                }
                Ok(KernelGrad::Gaussian { log_sigma_phi: acc })
            }
            KernelModel::Deep {
                gamma,
                log_sigma_phi,
                log_sigma_q,
                net,
            } => {
                let gamma = *gamma;
                let s_phi = log_sigma_phi.exp();
                let s_q = log_sigma_q.exp();
                let cache_p = net.forward_cached(sp)?;
                let cache_q = net.forward_cached(sq)?;
                let fp = cache_p.output().clone();
                let fq = cache_q.output().clone();
                let p = fp.cols();
                let mut d_gamma = 0.0;
                let mut d_lsphi = 0.0;
                let mut d_lsq = 0.0;
                let mut feat_p = Matrix::zeros(n, p);
                let mut feat_q = Matrix::zeros(n, p);

                // Accumulates the scalar-parameter gradients for one ordered
                // pair and returns the coefficient of the feature-difference
                // term; the caller scatters that into the feature-grad rows.
                let mut add = |a: &[f64], b: &[f64], fa: &[f64], fb: &[f64], w: f64| -> f64 {
                    let d_phi = sq_dist(fa, fb);
                    let d_q = sq_dist(a, b);
                    let e_phi = (-d_phi / (2.0 * s_phi)).exp();
                    let e_q = (-d_q / (2.0 * s_q)).exp();
                    d_gamma += w * (1.0 - e_phi) * e_q;
                    d_lsphi += w * (1.0 - gamma) * e_phi * e_q * d_phi / (2.0 * s_phi);
                    d_lsq += w * ((1.0 - gamma) * e_phi + gamma) * e_q * d_q / (2.0 * s_q);
                    w * (1.0 - gamma) * e_q * e_phi / s_phi
                };
                for i in 0..n {
                    for j in 0..n {
                        let u = upstream.get(i, j);
                        if u != 0.0 {
                            let c = add(sp.row(i), sp.row(j), fp.row(i), fp.row(j), u);
                            for t in 0..p {
                                let diff = fp.get(i, t) - fp.get(j, t);
                                *feat_p.row_mut(i).get_mut(t).unwrap() -= c * diff;
                                *feat_p.row_mut(j).get_mut(t).unwrap() += c * diff;
                            }
                            let c = add(sq.row(i), sq.row(j), fq.row(i), fq.row(j), u);
                            for t in 0..p {
                                let diff = fq.get(i, t) - fq.get(j, t);
                                *feat_q.row_mut(i).get_mut(t).unwrap() -= c * diff;
                                *feat_q.row_mut(j).get_mut(t).unwrap() += c * diff;
                            }
                        }
                        let w = -(upstream.get(i, j) + upstream.get(j, i));
                        if w != 0.0 {
                            let c = add(sp.row(i), sq.row(j), fp.row(i), fq.row(j), w);
                            for t in 0..p {
                                let diff = fp.get(i, t) - fq.get(j, t);
                                *feat_p.row_mut(i).get_mut(t).unwrap() -= c * diff;
                                *feat_q.row_mut(j).get_mut(t).unwrap() += c * diff;
                            }
                        }
                    }
                }
                let (mut net_grad, _) = net.backward(&cache_p, &feat_p)?;
                let (gq, _) = net.backward(&cache_q, &feat_q)?;
                net_grad.add_scaled(&gq, 1.0);
                // Chain through the squashing parameterization of gamma.
                Ok(KernelGrad::Deep {
                    raw_gamma: d_gamma * gamma_proxy_chain(gamma),
                    log_sigma_phi: d_lsphi,
                    log_sigma_q: d_lsq,
                    net: net_grad,
                })
            }
            KernelModel::C2stSign { net } | KernelModel::C2stLogit { net } => {
                let sign = matches!(self, KernelModel::C2stSign { .. });
                let cache_p = net.forward_cached(sp)?;
                let cache_q = net.forward_cached(sq)?;
                let sp_scores: Vec<f64> = cache_p.output().data().to_vec();
                let sq_scores: Vec<f64> = cache_q.output().data().to_vec();
                let (psi, dpsi): (fn(f64) -> f64, fn(f64) -> f64) = if sign {
                    (sign_factor, sign_factor_derivative)
                } else {
                    (|u| u, |_| 1.0)
                };
                let psi_p: Vec<f64> = sp_scores.iter().map(|&u| psi(u)).collect();
                let psi_q: Vec<f64> = sq_scores.iter().map(|&u| psi(u)).collect();
                let mut up_p = Matrix::zeros(n, 1);
                let mut up_q = Matrix::zeros(n, 1);
                for m in 0..n {
                    let mut acc_p = 0.0;
                    let mut acc_q = 0.0;
                    for j in 0..n {
                        let u_mj = upstream.get(m, j);
                        let u_jm = upstream.get(j, m);
                        acc_p += (u_mj + u_jm) * psi_p[j];
                        acc_q += (u_mj + u_jm) * psi_q[j];
                        acc_p -= (u_mj + u_jm) * psi_q[j];
                        acc_q -= (u_jm + u_mj) * psi_p[j];
                    }
                    up_p.set(m, 0, acc_p * dpsi(sp_scores[m]));
                    up_q.set(m, 0, acc_q * dpsi(sq_scores[m]));
                }
                let (mut net_grad, _) = net.backward(&cache_p, &up_p)?;
                let (gq, _) = net.backward(&cache_q, &up_q)?;
                net_grad.add_scaled(&gq, 1.0);
                Ok(KernelGrad::C2st { net: net_grad })
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            KernelModel::Gaussian { .. } => 1,
            KernelModel::Deep { net, .. } => 3 + net.param_count(),
            KernelModel::C2stSign { net } | KernelModel::C2stLogit { net } => net.param_count(),
        }
    }

    /// Flat vector of the *training* parameterization: gamma appears as its
    /// unconstrained squash proxy, lengthscales as logs.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        match self {
            KernelModel::Gaussian { log_sigma_phi } => out.push(*log_sigma_phi),
            KernelModel::Deep {
                gamma,
                log_sigma_phi,
                log_sigma_q,
                net,
            } => {
                out.push(gamma_to_proxy(*gamma));
                out.push(*log_sigma_phi);
                out.push(*log_sigma_q);
                net.flatten_into(&mut out);
            }
            KernelModel::C2stSign { net } | KernelModel::C2stLogit { net } => {
                net.flatten_into(&mut out)
            }
        }
        out
    }

    pub fn assign_params(&mut self, flat: &[f64]) {
        match self {
            KernelModel::Gaussian { log_sigma_phi } => *log_sigma_phi = flat[0],
            KernelModel::Deep {
                gamma,
                log_sigma_phi,
                log_sigma_q,
                net,
            } => {
                *gamma = proxy_to_gamma(flat[0]);
                *log_sigma_phi = flat[1];
                *log_sigma_q = flat[2];
                net.assign_from_flat(&flat[3..]);
            }
            KernelModel::C2stSign { net } | KernelModel::C2stLogit { net } => {
                net.assign_from_flat(flat);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng(seed);
        let mut m = Matrix::zeros(rows, cols);
        for v in m.data_mut() {
            *v = r.gen_range(-1.5..1.5);
        }
        m
    }

    fn sample_models(dim: usize, seed: u64) -> Vec<KernelModel> {
        let mut r = rng(seed);
        let net = MlpParams::new(&[dim, 6, 4], &mut r).unwrap();
        let clf = MlpParams::new(&[dim, 6, 1], &mut r).unwrap();
        vec![
            KernelModel::gaussian(0.7).unwrap(),
            KernelModel::deep(0.4, 0.9, 1.3, net).unwrap(),
            KernelModel::C2stSign { net: clf.clone() },
            KernelModel::C2stLogit { net: clf },
        ]
    }

    #[test]
    fn gaussian_at_equal_points_is_one() {
        let k = KernelModel::gaussian(0.5).unwrap();
        let x = vec![0.3, -1.2, 4.0];
        assert_eq!(k.eval(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn gaussian_matches_direct_evaluation() {
        // sigma_phi = 0.5 and squared distance 1 gives exp(-1).
        let k = KernelModel::gaussian(0.5).unwrap();
        let v = k.eval(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn deep_with_gamma_one_collapses_to_gaussian() {
        let mut r = rng(3);
        let net = MlpParams::new(&[3, 5, 4], &mut r).unwrap();
        let deep = KernelModel::deep(1.0, 0.8, 1.7, net).unwrap();
        let gauss = KernelModel::gaussian(1.7).unwrap();
        let x = vec![0.2, -0.4, 1.0];
        let y = vec![-0.3, 0.9, 0.1];
        assert_eq!(deep.eval(&x, &y).unwrap(), gauss.eval(&x, &y).unwrap());
    }

    #[test]
    fn sign_value_examples() {
        assert!((c2st_sign_value(5.0) - 2.0).abs() < 1e-9);
        assert!(c2st_sign_value(-3.0).abs() < 1e-9);
        assert_eq!(c2st_sign_value(0.0), 1.0);
    }

    #[test]
    fn kernels_are_symmetric() {
        for model in sample_models(3, 11) {
            let mut r = rng(12);
            for _ in 0..20 {
                let x: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
                let y: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
                let a = model.eval(&x, &y).unwrap();
                let b = model.eval(&y, &x).unwrap();
                assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn kernel_values_are_bounded() {
        let models = sample_models(2, 21);
        let mut r = rng(22);
        for _ in 0..50 {
            let x: Vec<f64> = (0..2).map(|_| r.gen_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| r.gen_range(-3.0..3.0)).collect();
            let g = models[0].eval(&x, &y).unwrap();
            assert!(g > 0.0 && g <= 1.0);
            let d = models[1].eval(&x, &y).unwrap();
            assert!(d > 0.0 && d <= 1.0);
            let s = models[2].eval(&x, &y).unwrap();
            assert!((-1e-12..=0.25 + 1e-12).contains(&s));
        }
    }

    #[test]
    fn gaussian_gram_is_positive_semidefinite() {
        // Cholesky of K + 1e-8 I succeeding bounds the smallest eigenvalue
        // from below by -1e-8.
        let model = KernelModel::gaussian(0.9).unwrap();
        let x = random_matrix(50, 3, 31);
        let n = x.rows();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = model.eval(x.row(i), x.row(j)).unwrap();
            }
        }
        for i in 0..n {
            k[i * n + i] += 1e-8;
        }
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut acc = k[i * n + j];
                for t in 0..j {
                    acc -= l[i * n + t] * l[j * n + t];
                }
                if i == j {
                    assert!(acc > 0.0, "gram matrix not PSD at pivot {i}");
                    l[i * n + i] = acc.sqrt();
                } else {
                    l[i * n + j] = acc / l[j * n + j];
                }
            }
        }
    }

    #[test]
    fn identical_sets_give_zero_h() {
        for model in sample_models(3, 41) {
            let s = random_matrix(6, 3, 42);
            let h = model.h_matrix(&s, &s).unwrap();
            assert!(h.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn h_matrix_matches_explicit_kernel_evaluations() {
        for (m, model) in sample_models(2, 51).into_iter().enumerate() {
            let sp = random_matrix(2, 2, 52 + m as u64);
            let sq = random_matrix(2, 2, 62 + m as u64);
            let h = model.h_matrix(&sp, &sq).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let want = model.eval(sp.row(i), sp.row(j)).unwrap()
                        + model.eval(sq.row(i), sq.row(j)).unwrap()
                        - model.eval(sp.row(i), sq.row(j)).unwrap()
                        - model.eval(sp.row(j), sq.row(i)).unwrap();
                    assert!((h.get(i, j) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn swapping_sets_preserves_h() {
        for model in sample_models(3, 71) {
            let sp = random_matrix(5, 3, 72);
            let sq = random_matrix(5, 3, 73);
            let a = model.h_matrix(&sp, &sq).unwrap();
            let b = model.h_matrix(&sq, &sp).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        for model in sample_models(3, 81) {
            let sp = random_matrix(4, 3, 82);
            let sq = random_matrix(4, 3, 83);
            let up = Matrix::zeros(4, 4);
            let g = model.h_matrix_input_grad(&sp, &sq, &up).unwrap();
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gaussian_gradient_decays_with_distance() {
        // A far-away row should receive an exponentially small gradient.
        let model = KernelModel::gaussian(0.5).unwrap();
        let sp = random_matrix(4, 2, 91);
        let mut sq = random_matrix(4, 2, 92);
        let mut up = Matrix::zeros(4, 4);
        for v in up.data_mut() {
            *v = 1.0;
        }
        for shift in [2.0, 4.0, 8.0] {
            sq.row_mut(0)[0] = shift;
            sq.row_mut(0)[1] = shift;
            let g = model.h_matrix_input_grad(&sp, &sq, &up).unwrap();
            let mag = g.row(0).iter().map(|v| v.abs()).fold(0.0, f64::max);
            // conservative envelope: distance to the nearest other point
            let min_sq = (0..4)
                .map(|i| super::super::ndmath::sq_dist(sp.row(i), sq.row(0)))
                .fold(f64::INFINITY, f64::min);
            let bound = 100.0 * (-min_sq / (2.0 * 0.5)).exp();
            assert!(mag <= bound, "shift {shift}: |grad| {mag} > bound {bound}");
        }
    }

    #[test]
    fn dimension_errors_are_reported() {
        let model = KernelModel::gaussian(1.0).unwrap();
        assert!(model.eval(&[1.0, 2.0], &[1.0]).is_err());
        let sp = random_matrix(1, 2, 101);
        let sq = random_matrix(1, 2, 102);
        assert!(matches!(
            model.h_matrix(&sp, &sq),
            Err(crate::error::Error::InsufficientSamples { .. })
        ));
        let mut bad = random_matrix(3, 2, 103);
        bad.row_mut(0)[0] = f64::NAN;
        assert!(model.h_matrix(&bad, &random_matrix(3, 2, 104)).is_err());
    }
}
