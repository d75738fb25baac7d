//! MMD U-statistic, regularized variance estimator, and the test criterion.
//!
//! Everything here operates on the `H` matrix produced by
//! [`KernelModel::h_matrix`](crate::kernels::KernelModel::h_matrix):
//!
//! - `mmd_u`: `(1/(n(n-1))) sum_{i != j} H_ij`
//! - `variance_hat`: `(4/n^3) sum_i (sum_j H_ij)^2 - (4/n^4) (sum_ij H_ij)^2
//!   + lambda`
//! - `criterion`: `mmd_u / sqrt(variance_hat)`
//!
//! The criterion's gradient with respect to `H` is formed once and pushed
//! through the kernel's pullbacks, so the `H` matrix is assembled a single
//! time per (model, pair) for both value and gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelGrad, KernelModel};
use crate::ndmath::Matrix;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CriterionConfig {
    /// Positive regularizer added to the variance estimate.
    pub lambda: f64,
}

impl Default for CriterionConfig {
    fn default() -> Self {
        CriterionConfig { lambda: 1e-8 }
    }
}

impl CriterionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::config("lambda must be positive and finite"));
        }
        Ok(())
    }
}

fn check_square(h: &Matrix) -> Result<usize> {
    if h.rows() != h.cols() {
        return Err(Error::dimension(format!(
            "H matrix is {}x{}, expected square",
            h.rows(),
            h.cols()
        )));
    }
    if h.rows() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: h.rows(),
        });
    }
    Ok(h.rows())
}

/// Unbiased estimate of MMD^2: the mean of off-diagonal `H` entries.
pub fn mmd_u(h: &Matrix) -> Result<f64> {
    let n = check_square(h)?;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += h.get(i, j);
            }
        }
    }
    Ok(acc / (n * (n - 1)) as f64)
}

/// Regularized estimator of the asymptotic variance under H1.
pub fn variance_hat(h: &Matrix, cfg: &CriterionConfig) -> Result<f64> {
    cfg.validate()?;
    let n = check_square(h)?;
    let nf = n as f64;
    let mut sum_sq_rows = 0.0;
    let mut total = 0.0;
    for i in 0..n {
        let r: f64 = h.row(i).iter().sum();
        sum_sq_rows += r * r;
        total += r;
    }
    Ok(4.0 / nf.powi(3) * sum_sq_rows - 4.0 / nf.powi(4) * total * total + cfg.lambda)
}

/// Criterion value from a precomputed `H` matrix.
pub fn criterion_from_h(h: &Matrix, cfg: &CriterionConfig) -> Result<f64> {
    let m = mmd_u(h)?;
    let v = variance_hat(h, cfg)?;
    if !(v > 0.0) {
        return Err(Error::numeric(format!("variance estimate {v} is not positive")));
    }
    Ok(m / v.sqrt())
}

/// Criterion value together with its gradient with respect to `H`.
///
/// The returned matrix is the upstream weighting to feed into
/// `h_matrix_input_grad` / `h_matrix_param_grad`.
pub fn criterion_upstream(h: &Matrix, cfg: &CriterionConfig) -> Result<(f64, Matrix)> {
    cfg.validate()?;
    let n = check_square(h)?;
    let nf = n as f64;
    let m = mmd_u(h)?;
    let mut row_sums = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        let r: f64 = h.row(i).iter().sum();
        row_sums[i] = r;
        total += r;
    }
    let v = 4.0 / nf.powi(3) * row_sums.iter().map(|r| r * r).sum::<f64>()
        - 4.0 / nf.powi(4) * total * total
        + cfg.lambda;
    if !(v > 0.0) {
        return Err(Error::numeric(format!("variance estimate {v} is not positive")));
    }
    let sigma = v.sqrt();
    let value = m / sigma;
    // dF/dH_ab = dm_ab / sigma - (m / (2 v^{3/2})) dv_ab with
    // dm_ab = [a != b] / (n(n-1)); dv_ab = (8/n^3) r_a - (8/n^4) total.
    let dm_off = 1.0 / (nf * (nf - 1.0));
    let v_coeff = m / (2.0 * v * sigma);
    let mut up = Matrix::zeros(n, n);
    for a in 0..n {
        let dv_row = 8.0 / nf.powi(3) * row_sums[a] - 8.0 / nf.powi(4) * total;
        for b in 0..n {
            let dm = if a != b { dm_off } else { 0.0 };
            up.set(a, b, dm / sigma - v_coeff * dv_row);
        }
    }
    Ok((value, up))
}

/// Test criterion `F(S_P, S_Q; k) = mmd_u / sqrt(variance_hat)`.
pub fn criterion(
    model: &KernelModel,
    sp: &Matrix,
    sq: &Matrix,
    cfg: &CriterionConfig,
) -> Result<f64> {
    let h = model.h_matrix(sp, sq)?;
    criterion_from_h(&h, cfg)
}

/// Criterion value and its gradient with respect to every entry of `sq`.
/// Uses the fused kernel pullback, so the pair intermediates are computed
/// once.
pub fn criterion_with_input_grad(
    model: &KernelModel,
    sp: &Matrix,
    sq: &Matrix,
    cfg: &CriterionConfig,
) -> Result<(f64, Matrix)> {
    model.h_matrix_pullback(sp, sq, |h| criterion_upstream(h, cfg))
}

pub fn criterion_input_grad(
    model: &KernelModel,
    sp: &Matrix,
    sq: &Matrix,
    cfg: &CriterionConfig,
) -> Result<Matrix> {
    Ok(criterion_with_input_grad(model, sp, sq, cfg)?.1)
}

/// Criterion value and its gradient with respect to the kernel parameters.
pub fn criterion_with_param_grad(
    model: &KernelModel,
    sp: &Matrix,
    sq: &Matrix,
    cfg: &CriterionConfig,
) -> Result<(f64, KernelGrad)> {
    let h = model.h_matrix(sp, sq)?;
    let (value, up) = criterion_upstream(&h, cfg)?;
    let grad = model.h_matrix_param_grad(sp, sq, &up)?;
    Ok((value, grad))
}

pub fn criterion_param_grad(
    model: &KernelModel,
    sp: &Matrix,
    sq: &Matrix,
    cfg: &CriterionConfig,
) -> Result<KernelGrad> {
    Ok(criterion_with_param_grad(model, sp, sq, cfg)?.1)
}
