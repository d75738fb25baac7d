//! Synthetic distribution samplers and a delimited-text loader.
//!
//! Blob is a 9-mode gaussian mixture on the 3x3 grid `{0,1,2}^2`; P uses an
//! isotropic covariance `0.03 I`, Q tilts each mode with a per-mode
//! off-diagonal term. HDGM is a two-mode gaussian mixture in `d` dimensions
//! whose Q differs from the identity covariance only in the leading 2x2
//! block. Cholesky factors of every mode covariance are precomputed at spec
//! construction, which also proves positive definiteness.
//!
//! Modes are indexed in row-major order over the grid: `(0,0), (0,1), (0,2),
//! (1,0), ...`

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ndmath::Matrix;

/// Which marginal of a dataset to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    P,
    Q,
}

/// Lower-triangular Cholesky factor of a 2x2 covariance `[[a, b], [b, a]]`.
fn cholesky_2x2(a: f64, b: f64) -> Result<[f64; 3]> {
    if a <= 0.0 || a * a - b * b <= 0.0 {
        return Err(Error::config(format!(
            "covariance [[{a}, {b}], [{b}, {a}]] is not positive definite"
        )));
    }
    let l11 = a.sqrt();
    let l21 = b / l11;
    let l22 = (a - l21 * l21).sqrt();
    Ok([l11, l21, l22])
}

#[derive(Debug, Clone)]
pub struct BlobSpec {
    centers: [[f64; 2]; 9],
    /// Per-mode Cholesky factors of Q's covariances.
    q_chol: [[f64; 3]; 9],
    /// sqrt of the shared isotropic variance used by P.
    p_scale: f64,
}

impl BlobSpec {
    /// Variance 0.03 with off-diagonals `-0.02 - 0.002 (i-1)` for modes
    /// `i < 5`, `0.02 + 0.002 (i-6)` for `i > 5`, zero at mode 5 (1-based).
    pub fn standard() -> Self {
        let mut centers = [[0.0; 2]; 9];
        let mut q_chol = [[0.0; 3]; 9];
        for i in 0..9 {
            centers[i] = [(i / 3) as f64, (i % 3) as f64];
            let idx = (i + 1) as f64;
            let delta = if idx < 5.0 {
                -0.02 - 0.002 * (idx - 1.0)
            } else if idx > 5.0 {
                0.02 + 0.002 * (idx - 6.0)
            } else {
                0.0
            };
            q_chol[i] = cholesky_2x2(0.03, delta).expect("blob covariances are PD");
        }
        BlobSpec {
            centers,
            q_chol,
            p_scale: 0.03f64.sqrt(),
        }
    }

    pub fn dim(&self) -> usize {
        2
    }
}

/// Draws `n` points from one side of the Blob mixture.
pub fn sample_blob<R: Rng + ?Sized>(spec: &BlobSpec, side: Side, n: usize, rng: &mut R) -> Matrix {
    let mut out = Matrix::zeros(n, 2);
    for i in 0..n {
        let mode = rng.gen_range(0..9usize);
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let c = spec.centers[mode];
        let row = out.row_mut(i);
        match side {
            Side::P => {
                row[0] = c[0] + spec.p_scale * z0;
                row[1] = c[1] + spec.p_scale * z1;
            }
            Side::Q => {
                let l = spec.q_chol[mode];
                row[0] = c[0] + l[0] * z0;
                row[1] = c[1] + l[1] * z0 + l[2] * z1;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct HdgmSpec {
    d: usize,
    q_chol: [[f64; 3]; 2],
}

impl HdgmSpec {
    /// Two equally weighted modes with means `0` and `0.5 * 1_d`; Q's leading
    /// 2x2 block has off-diagonals `+0.5` (mode 1) and `-0.5` (mode 2).
    pub fn new(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::config("HDGM needs dimension >= 2"));
        }
        Ok(HdgmSpec {
            d,
            q_chol: [cholesky_2x2(1.0, 0.5)?, cholesky_2x2(1.0, -0.5)?],
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }
}

/// Draws `n` points from one side of the HDGM mixture.
pub fn sample_hdgm<R: Rng + ?Sized>(spec: &HdgmSpec, side: Side, n: usize, rng: &mut R) -> Matrix {
    sample_hdgm_with_modes(spec, side, n, rng).0
}

fn sample_hdgm_with_modes<R: Rng + ?Sized>(
    spec: &HdgmSpec,
    side: Side,
    n: usize,
    rng: &mut R,
) -> (Matrix, Vec<usize>) {
    let d = spec.d;
    let mut out = Matrix::zeros(n, d);
    let mut modes = Vec::with_capacity(n);
    for i in 0..n {
        let mode = rng.gen_range(0..2usize);
        modes.push(mode);
        let mean = if mode == 0 { 0.0 } else { 0.5 };
        let row = out.row_mut(i);
        for item in row.iter_mut().take(d) {
            let z: f64 = rng.sample(StandardNormal);
            *item = z;
        }
        if side == Side::Q {
            let l = spec.q_chol[mode];
            let (z0, z1) = (row[0], row[1]);
            row[0] = l[0] * z0;
            row[1] = l[1] * z0 + l[2] * z1;
        }
        for item in row.iter_mut().take(d) {
            *item += mean;
        }
    }
    (out, modes)
}

/// Loads a comma- or whitespace-delimited numeric table.
///
/// `columns` selects a subset (by zero-based index, in the given order);
/// `normalize` rescales each selected column affinely onto `[-1, 1]`.
/// Blank lines and lines starting with `#` are skipped.
pub fn load_table(path: &str, columns: Option<&[usize]>, normalize: bool) -> Result<Matrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if trimmed.contains(',') {
            trimmed.split(',').map(str::trim).collect()
        } else {
            trimmed.split_whitespace().collect()
        };
        let mut parsed = Vec::with_capacity(fields.len());
        for f in &fields {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                path: path.to_string(),
                line: lineno + 1,
                msg: format!("non-numeric cell '{f}'"),
            })?;
            parsed.push(v);
        }
        match width {
            None => width = Some(parsed.len()),
            Some(w) if w != parsed.len() => {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    msg: format!("ragged row: {} cells, expected {}", parsed.len(), w),
                });
            }
            _ => {}
        }
        let selected = match columns {
            Some(cols) => {
                let mut row = Vec::with_capacity(cols.len());
                for &c in cols {
                    let v = parsed.get(c).ok_or_else(|| Error::Parse {
                        path: path.to_string(),
                        line: lineno + 1,
                        msg: format!("column {c} out of range ({} cells)", parsed.len()),
                    })?;
                    row.push(*v);
                }
                row
            }
            None => parsed,
        };
        rows.push(selected);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 0,
            msg: "no data rows".into(),
        });
    }
    let mut m = Matrix::from_rows(&rows)?;
    if normalize {
        normalize_columns(&mut m);
    }
    Ok(m)
}

/// Affinely maps each column onto `[-1, 1]`; constant columns map to 0.
fn normalize_columns(m: &mut Matrix) {
    let (n, d) = (m.rows(), m.cols());
    for j in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            lo = lo.min(m.get(i, j));
            hi = hi.max(m.get(i, j));
        }
        let span = hi - lo;
        for i in 0..n {
            let v = if span > 0.0 {
                2.0 * (m.get(i, j) - lo) / span - 1.0
            } else {
                0.0
            };
            m.set(i, j, v);
        }
    }
}

/// Tabular data split into the two marginals.
#[derive(Debug, Clone)]
pub struct TableData {
    pub p: Matrix,
    pub q: Matrix,
}

impl TableData {
    pub fn new(p: Matrix, q: Matrix) -> Result<Self> {
        if p.cols() != q.cols() {
            return Err(Error::dimension(format!(
                "P table has {} columns, Q table has {}",
                p.cols(),
                q.cols()
            )));
        }
        Ok(TableData { p, q })
    }
}

/// Source of fresh sample pairs for power evaluation.
#[derive(Debug, Clone)]
pub enum PairSampler {
    Blob(BlobSpec),
    Hdgm(HdgmSpec),
    Table(TableData),
}

impl PairSampler {
    pub fn dim(&self) -> usize {
        match self {
            PairSampler::Blob(s) => s.dim(),
            PairSampler::Hdgm(s) => s.dim(),
            PairSampler::Table(t) => t.p.cols(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, side: Side, n: usize, rng: &mut R) -> Matrix {
        match self {
            PairSampler::Blob(s) => sample_blob(s, side, n, rng),
            PairSampler::Hdgm(s) => sample_hdgm(s, side, n, rng),
            PairSampler::Table(t) => {
                let pool = match side {
                    Side::P => &t.p,
                    Side::Q => &t.q,
                };
                sample_rows(pool, n, rng)
            }
        }
    }

    /// Draws a fresh `(S_P, S_Q)` pair; under the null both sides come from P.
    pub fn sample_pair<R: Rng + ?Sized>(
        &self,
        n: usize,
        null_hypothesis: bool,
        rng: &mut R,
    ) -> (Matrix, Matrix) {
        let sp = self.sample(Side::P, n, rng);
        let sq = if null_hypothesis {
            self.sample(Side::P, n, rng)
        } else {
            self.sample(Side::Q, n, rng)
        };
        (sp, sq)
    }
}

/// `n` rows drawn without replacement (with replacement when the pool is
/// smaller than `n`).
fn sample_rows<R: Rng + ?Sized>(pool: &Matrix, n: usize, rng: &mut R) -> Matrix {
    let total = pool.rows();
    if total >= n {
        let mut idx: Vec<usize> = (0..total).collect();
        for i in 0..n {
            let j = rng.gen_range(i..total);
            idx.swap(i, j);
        }
        pool.select_rows(&idx[..n])
    } else {
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..total)).collect();
        pool.select_rows(&idx)
    }
}
