//! ME and SCF test statistics over optimized test locations.
//!
//! Both tests compare per-sample feature vectors of the two sets at `G`
//! learned locations and form the Hotelling-style statistic
//! `D = n * zbar^T S_n^{-1} zbar`, where `z_i = feat(x_i) - feat(y_i)`,
//! `zbar` is the mean and `S_n` the ridge-regularized sample covariance.
//!
//! - ME features: gaussian kernel evaluations `exp(-||x - v_j||^2 / (2 sigma))`
//!   against each location, giving `G` features.
//! - SCF features: with `xh = x / bandwidth`, the pairs
//!   `exp(-||xh||^2/2) sin(xh . v_j)` and `exp(-||xh||^2/2) cos(xh . v_j)`,
//!   interleaved per location, giving `2G` features.
//!
//! The covariance ridge is stored as a relative coefficient: the effective
//! ridge is `ridge * trace(S_n) / G`, falling back to the raw coefficient when
//! the trace degenerates to zero (identical sample sets).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{dot, sq_dist, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationVariant {
    Me,
    Scf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationTestModel {
    pub variant: LocationVariant,
    /// `G x d` matrix of test locations (SCF: test frequencies).
    pub locations: Matrix,
    /// Log of the bandwidth; ME uses it as a squared lengthscale, SCF as the
    /// scale dividing the inputs.
    pub log_bandwidth: f64,
    /// Relative ridge coefficient on the feature covariance.
    pub ridge: f64,
}

impl LocationTestModel {
    pub fn new(
        variant: LocationVariant,
        locations: Matrix,
        bandwidth: f64,
        ridge: f64,
    ) -> Result<Self> {
        if locations.rows() == 0 {
            return Err(Error::config("need at least one test location"));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::config("bandwidth must be positive and finite"));
        }
        if !(ridge > 0.0) {
            return Err(Error::config("ridge must be positive"));
        }
        Ok(LocationTestModel {
            variant,
            locations,
            log_bandwidth: bandwidth.ln(),
            ridge,
        })
    }

    pub fn location_count(&self) -> usize {
        self.locations.rows()
    }

    pub fn dim(&self) -> usize {
        self.locations.cols()
    }

    pub fn bandwidth(&self) -> f64 {
        self.log_bandwidth.exp()
    }

    pub fn feature_dim(&self) -> usize {
        match self.variant {
            LocationVariant::Me => self.location_count(),
            LocationVariant::Scf => 2 * self.location_count(),
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dimension(format!(
                "point has dimension {}, locations have {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Feature vector of a single point (length `feature_dim()`).
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self.features_unchecked(x))
    }

    fn features_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let g = self.location_count();
        match self.variant {
            LocationVariant::Me => {
                let sigma = self.bandwidth();
                (0..g)
                    .map(|j| (-sq_dist(x, self.locations.row(j)) / (2.0 * sigma)).exp())
                    .collect()
            }
            LocationVariant::Scf => {
                let b = self.bandwidth();
                let xh: Vec<f64> = x.iter().map(|v| v / b).collect();
                let amp = (-dot(&xh, &xh) / 2.0).exp();
                let mut out = Vec::with_capacity(2 * g);
                for j in 0..g {
                    let t = dot(&xh, self.locations.row(j));
                    out.push(amp * t.sin());
                    out.push(amp * t.cos());
                }
                out
            }
        }
    }

    /// Accumulates `sign * J(x)^T w` into `out`, where `J` is the Jacobian of
    /// the feature map at `x`. Used for input gradients.
    fn input_grad_contribution(&self, x: &[f64], w: &[f64], sign: f64, out: &mut [f64]) {
        let g = self.location_count();
        match self.variant {
            LocationVariant::Me => {
                let sigma = self.bandwidth();
                for j in 0..g {
                    let v = self.locations.row(j);
                    let k = (-sq_dist(x, v) / (2.0 * sigma)).exp();
                    let c = sign * w[j] * k / sigma;
                    for t in 0..x.len() {
                        out[t] += c * (v[t] - x[t]);
                    }
                }
            }
            LocationVariant::Scf => {
                let b = self.bandwidth();
                let xh: Vec<f64> = x.iter().map(|v| v / b).collect();
                let amp = (-dot(&xh, &xh) / 2.0).exp();
                // d feat / dx = (1/b) [amp cos(t) v - amp sin(t) xh] for sin
                //   entries, and (1/b) [-amp sin(t) v - amp cos(t) xh] for cos.
                let mut xh_coeff = 0.0;
                for j in 0..g {
                    let v = self.locations.row(j);
                    let t = dot(&xh, v);
                    let (s, c) = t.sin_cos();
                    let vc = amp * (w[2 * j] * c - w[2 * j + 1] * s);
                    xh_coeff += amp * (w[2 * j] * s + w[2 * j + 1] * c);
                    for k in 0..x.len() {
                        out[k] += sign * vc * v[k] / b;
                    }
                }
                for k in 0..x.len() {
                    out[k] -= sign * xh_coeff * xh[k] / b;
                }
            }
        }
    }

    /// Accumulates `sign * (d feat(x) / d theta)^T w` into the parameter
    /// gradient. Used when fitting locations and bandwidth.
    fn param_grad_contribution(&self, x: &[f64], w: &[f64], sign: f64, out: &mut LocationGrad) {
        let g = self.location_count();
        match self.variant {
            LocationVariant::Me => {
                let sigma = self.bandwidth();
                for j in 0..g {
                    let v = self.locations.row(j);
                    let dist = sq_dist(x, v);
                    let k = (-dist / (2.0 * sigma)).exp();
                    let c = sign * w[j] * k / sigma;
                    let row = out.locations.row_mut(j);
                    for t in 0..x.len() {
                        row[t] += c * (x[t] - v[t]);
                    }
                    out.log_bandwidth += sign * w[j] * k * dist / (2.0 * sigma);
                }
            }
            LocationVariant::Scf => {
                let b = self.bandwidth();
                let xh: Vec<f64> = x.iter().map(|v| v / b).collect();
                let norm2 = dot(&xh, &xh);
                let amp = (-norm2 / 2.0).exp();
                for j in 0..g {
                    let v = self.locations.row(j);
                    let t = dot(&xh, v);
                    let (s, c) = t.sin_cos();
                    let (ws, wc) = (w[2 * j], w[2 * j + 1]);
                    // d/dv_j: sin entry -> amp cos(t) xh; cos -> -amp sin(t) xh
                    let vc = amp * (ws * c - wc * s);
                    let row = out.locations.row_mut(j);
                    for k in 0..x.len() {
                        row[k] += sign * vc * xh[k];
                    }
                    // d/dlog(b): xh shrinks with b, so t and the envelope move.
                    out.log_bandwidth += sign
                        * amp
                        * (ws * (norm2 * s - t * c) + wc * (norm2 * c + t * s));
                }
            }
        }
    }
}

/// Gradients with respect to the learnable parameters of a location test.
#[derive(Debug, Clone)]
pub struct LocationGrad {
    pub locations: Matrix,
    pub log_bandwidth: f64,
}

impl LocationGrad {
    fn zeros_like(model: &LocationTestModel) -> Self {
        LocationGrad {
            locations: Matrix::zeros(model.location_count(), model.dim()),
            log_bandwidth: 0.0,
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.locations.data().to_vec();
        out.push(self.log_bandwidth);
        out
    }
}

/// ME feature vector of a single point: gaussian kernel values at each location.
pub fn me_features(model: &LocationTestModel, x: &[f64]) -> Result<Vec<f64>> {
    if model.variant != LocationVariant::Me {
        return Err(Error::config("model is not an ME model"));
    }
    model.features(x)
}

/// SCF feature vector of a single point: damped sin/cos pairs per frequency.
pub fn scf_features(model: &LocationTestModel, x: &[f64]) -> Result<Vec<f64>> {
    if model.variant != LocationVariant::Scf {
        return Err(Error::config("model is not an SCF model"));
    }
    model.features(x)
}

/// Solves `A u = b` for symmetric positive definite `A` via Cholesky.
fn cholesky_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let k = a.rows();
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut acc = a.get(i, j);
            for t in 0..j {
                acc -= l[i * k + t] * l[j * k + t];
            }
            if i == j {
                if acc <= 0.0 || !acc.is_finite() {
                    return Err(Error::numeric(
                        "covariance is singular after ridge regularization",
                    ));
                }
                l[i * k + i] = acc.sqrt();
            } else {
                l[i * k + j] = acc / l[j * k + j];
            }
        }
    }
    // forward then backward substitution
    let mut y = vec![0.0; k];
    for i in 0..k {
        let mut acc = b[i];
        for t in 0..i {
            acc -= l[i * k + t] * y[t];
        }
        y[i] = acc / l[i * k + i];
    }
    let mut u = vec![0.0; k];
    for i in (0..k).rev() {
        let mut acc = y[i];
        for t in (i + 1)..k {
            acc -= l[t * k + i] * u[t];
        }
        u[i] = acc / l[i * k + i];
    }
    Ok(u)
}

struct StatWork {
    value: f64,
    /// z_i rows, n x K
    z: Matrix,
    zbar: Vec<f64>,
    /// u = (S_n + ridge I)^{-1} zbar
    u: Vec<f64>,
    /// c_i = (z_i - zbar) . u
    proj: Vec<f64>,
    u_norm2: f64,
    /// whether the relative-ridge branch was taken (trace > 0)
    relative_ridge: bool,
}

fn check_sample_pair(model: &LocationTestModel, sp: &Matrix, sq: &Matrix) -> Result<usize> {
    if sp.rows() != sq.rows() || sp.cols() != sq.cols() {
        return Err(Error::dimension(format!(
            "sample sets are {}x{} and {}x{}",
            sp.rows(),
            sp.cols(),
            sq.rows(),
            sq.cols()
        )));
    }
    if sp.cols() != model.dim() {
        return Err(Error::dimension(format!(
            "samples have dimension {}, locations have {}",
            sp.cols(),
            model.dim()
        )));
    }
    let needed = model.location_count() + 2;
    if sp.rows() < needed {
        return Err(Error::InsufficientSamples {
            needed,
            got: sp.rows(),
        });
    }
    sp.ensure_finite("first sample set")?;
    sq.ensure_finite("second sample set")?;
    Ok(sp.rows())
}

fn statistic_core(model: &LocationTestModel, sp: &Matrix, sq: &Matrix) -> Result<StatWork> {
    let n = check_sample_pair(model, sp, sq)?;
    let k = model.feature_dim();
    let g = model.location_count() as f64;
    let mut z = Matrix::zeros(n, k);
    for i in 0..n {
        let fx = model.features_unchecked(sp.row(i));
        let fy = model.features_unchecked(sq.row(i));
        let row = z.row_mut(i);
        for t in 0..k {
            row[t] = fx[t] - fy[t];
        }
    }
    let mut zbar = vec![0.0; k];
    for i in 0..n {
        for (t, v) in z.row(i).iter().enumerate() {
            zbar[t] += v;
        }
    }
    for v in &mut zbar {
        *v /= n as f64;
    }
    // sample covariance
    let mut cov = Matrix::zeros(k, k);
    for i in 0..n {
        let zi = z.row(i);
        for a in 0..k {
            let da = zi[a] - zbar[a];
            for b in 0..=a {
                let v = da * (zi[b] - zbar[b]);
                cov.set(a, b, cov.get(a, b) + v);
            }
        }
    }
    for a in 0..k {
        for b in 0..=a {
            let v = cov.get(a, b) / (n as f64 - 1.0);
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    let trace: f64 = (0..k).map(|t| cov.get(t, t)).sum();
    let relative_ridge = trace > 0.0 && trace.is_finite();
    let ridge_eff = if relative_ridge {
        model.ridge * trace / g
    } else {
        model.ridge
    };
    for t in 0..k {
        cov.set(t, t, cov.get(t, t) + ridge_eff);
    }
    let u = cholesky_solve(&cov, &zbar)?;
    let value = n as f64 * dot(&zbar, &u);
    let proj: Vec<f64> = (0..n)
        .map(|i| {
            z.row(i)
                .iter()
                .zip(&zbar)
                .zip(&u)
                .map(|((zi, zb), ui)| (zi - zb) * ui)
                .sum()
        })
        .collect();
    let u_norm2 = dot(&u, &u);
    Ok(StatWork {
        value,
        z,
        zbar,
        u,
        proj,
        u_norm2,
        relative_ridge,
    })
}

/// The test statistic `D = n zbar^T S_n^{-1} zbar` (non-negative).
pub fn location_statistic(model: &LocationTestModel, sp: &Matrix, sq: &Matrix) -> Result<f64> {
    Ok(statistic_core(model, sp, sq)?.value)
}

/// Per-row weights `w_i` such that `dD = sum_i w_i . dz_i`; shared by the
/// input- and parameter-gradient paths.
fn row_weights(work: &StatWork, model: &LocationTestModel, n: usize) -> Vec<Vec<f64>> {
    let k = work.u.len();
    let g = model.location_count() as f64;
    let nf = n as f64;
    let ridge_coeff = if work.relative_ridge {
        2.0 * nf * model.ridge * work.u_norm2 / (g * (nf - 1.0))
    } else {
        0.0
    };
    (0..n)
        .map(|i| {
            let ci = work.proj[i];
            let mut w = vec![0.0; k];
            for t in 0..k {
                w[t] = 2.0 * work.u[t] - 2.0 * nf * ci * work.u[t] / (nf - 1.0)
                    - ridge_coeff * (work.z.get(i, t) - work.zbar[t]);
            }
            w
        })
        .collect()
}

/// Statistic value and its gradient with respect to every entry of `sq`.
pub fn location_statistic_with_input_grad(
    model: &LocationTestModel,
    sp: &Matrix,
    sq: &Matrix,
) -> Result<(f64, Matrix)> {
    let work = statistic_core(model, sp, sq)?;
    let n = sq.rows();
    let weights = row_weights(&work, model, n);
    let mut grad = Matrix::zeros(n, sq.cols());
    for i in 0..n {
        // z_i = feat(x_i) - feat(y_i), so the y-side enters with sign -1.
        model.input_grad_contribution(sq.row(i), &weights[i], -1.0, grad.row_mut(i));
    }
    Ok((work.value, grad))
}

pub fn location_statistic_input_grad(
    model: &LocationTestModel,
    sp: &Matrix,
    sq: &Matrix,
) -> Result<Matrix> {
    Ok(location_statistic_with_input_grad(model, sp, sq)?.1)
}

/// Statistic value and its gradient with respect to locations and bandwidth.
pub fn location_statistic_with_param_grad(
    model: &LocationTestModel,
    sp: &Matrix,
    sq: &Matrix,
) -> Result<(f64, LocationGrad)> {
    let work = statistic_core(model, sp, sq)?;
    let n = sq.rows();
    let weights = row_weights(&work, model, n);
    let mut grad = LocationGrad::zeros_like(model);
    for i in 0..n {
        model.param_grad_contribution(sp.row(i), &weights[i], 1.0, &mut grad);
        model.param_grad_contribution(sq.row(i), &weights[i], -1.0, &mut grad);
    }
    Ok((work.value, grad))
}
