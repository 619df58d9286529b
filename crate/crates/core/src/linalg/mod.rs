//! Dense matrices and the regularized least-squares solve that every
//! closed-form step (encoder merge, classifier reconstruction) reduces to.

mod matrix;

pub use matrix::DenseMatrix;
pub(crate) use matrix::{accumulate_cross, accumulate_gram};

use serde::Serialize;

use crate::error::{AdrError, Result};

/// Returns `r + xᵀx`. `r` is left untouched.
pub fn gram_accumulate(r: &DenseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    if !r.is_square() || r.rows() != x.cols() {
        return Err(AdrError::shape(
            "gram_accumulate",
            format!("R {:?}, X {:?}", r.shape(), x.shape()),
        ));
    }
    let mut out = r.clone();
    accumulate_gram(&mut out, x);
    Ok(out)
}

/// Returns `q + xᵀt`. `q` is left untouched.
pub fn cross_accumulate(q: &DenseMatrix, x: &DenseMatrix, t: &DenseMatrix) -> Result<DenseMatrix> {
    if x.rows() != t.rows() || q.rows() != x.cols() || q.cols() != t.cols() {
        return Err(AdrError::shape(
            "cross_accumulate",
            format!("Q {:?}, X {:?}, T {:?}", q.shape(), x.shape(), t.shape()),
        ));
    }
    let mut out = q.clone();
    accumulate_cross(&mut out, x, t);
    Ok(out)
}

/// `(R + γI) W = Q` with `R` an accumulated autocorrelation matrix and `Q`
/// the matching cross-correlation.
#[derive(Debug, Clone, Copy)]
pub struct RidgeProblem<'a> {
    pub r: &'a DenseMatrix,
    pub q: &'a DenseMatrix,
    pub gamma: f64,
}

impl<'a> RidgeProblem<'a> {
    pub fn new(r: &'a DenseMatrix, q: &'a DenseMatrix, gamma: f64) -> Self {
        RidgeProblem { r, q, gamma }
    }

    /// Solves for `W = (R + γI)⁻¹ Q` through a Cholesky factorization.
    ///
    /// If the factorization breaks down, γ is bumped once by
    /// `1e-10 · trace(R) / d` and the factorization retried.
    pub fn solve(&self) -> Result<DenseMatrix> {
        let (r, q) = (self.r, self.q);
        if !r.is_square() || r.rows() != q.rows() {
            return Err(AdrError::shape(
                "ridge_solve",
                format!("R {:?}, Q {:?}", r.shape(), q.shape()),
            ));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(AdrError::Config(format!(
                "ridge gamma must be finite and nonnegative, got {}",
                self.gamma
            )));
        }
        let d = r.rows();
        if d == 0 {
            return Ok(DenseMatrix::zeros(0, q.cols()));
        }
        let factor = match cholesky(r, self.gamma) {
            Ok(l) => l,
            Err(first) => {
                let jitter = 1e-10 * r.trace() / d as f64;
                if !(jitter > 0.0) {
                    return Err(first);
                }
                log::debug!("ridge_solve: cholesky failed, retrying with jitter {jitter:e}");
                cholesky(r, self.gamma + jitter)?
            }
        };
        let w = cholesky_solve(&factor, q);
        if !w.all_finite() {
            return Err(AdrError::NonFinite("ridge_solve"));
        }
        Ok(w)
    }
}

/// Convenience wrapper around [`RidgeProblem::solve`].
pub fn ridge_solve(r: &DenseMatrix, q: &DenseMatrix, gamma: f64) -> Result<DenseMatrix> {
    RidgeProblem::new(r, q, gamma).solve()
}

/// Lower Cholesky factor of `a + shift·I`. Reads only the lower triangle.
fn cholesky(a: &DenseMatrix, shift: f64) -> Result<DenseMatrix> {
    let n = a.rows();
    let max_diag = (0..n).fold(0.0f64, |m, i| m.max(a.get(i, i).abs())) + shift;
    let floor = n as f64 * f64::EPSILON * max_diag;
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut s = a.get(j, j) + shift;
        for k in 0..j {
            let v = l.get(j, k);
            s -= v * v;
        }
        if !(s > floor) || !s.is_finite() {
            return Err(AdrError::Singular { index: j, pivot: s });
        }
        let pivot = s.sqrt();
        l.set(j, j, pivot);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / pivot);
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ X = B` column by column.
fn cholesky_solve(l: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let n = l.rows();
    let m = b.cols();
    let mut x = b.clone();
    let mut col = vec![0.0; n];
    for c in 0..m {
        for i in 0..n {
            col[i] = x.get(i, c);
        }
        for i in 0..n {
            let mut s = col[i];
            for k in 0..i {
                s -= l.get(i, k) * col[k];
            }
            col[i] = s / l.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in i + 1..n {
                s -= l.get(k, i) * col[k];
            }
            col[i] = s / l.get(i, i);
        }
        for i in 0..n {
            x.set(i, c, col[i]);
        }
    }
    x
}

/// Symmetry and semidefiniteness diagnostics for a square matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub max_asymmetry: f64,
    /// Smallest diagonal pivot met during the semidefinite factorization.
    pub min_pivot: f64,
    pub psd: bool,
}

impl SpectralReport {
    /// Passes when the matrix is PSD and symmetric to `1e-10` relative.
    pub fn passes(&self, scale: f64) -> bool {
        self.psd && self.max_asymmetry <= 1e-10 * scale.max(1.0)
    }
}

/// Reports `max |A − Aᵀ|` and runs a pivot-tolerant Cholesky on `A`.
///
/// Pivots below a small relative floor are treated as exact zeros provided
/// the rest of their column vanishes too, so rank-deficient Gram matrices
/// still pass.
pub fn spectral_sanity(a: &DenseMatrix) -> SpectralReport {
    let n = a.rows();
    if !a.is_square() {
        return SpectralReport {
            max_asymmetry: f64::INFINITY,
            min_pivot: f64::NAN,
            psd: false,
        };
    }
    let mut max_asymmetry = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            max_asymmetry = max_asymmetry.max((a.get(i, j) - a.get(j, i)).abs());
        }
    }
    let scale = (0..n).fold(0.0f64, |m, i| m.max(a.get(i, i).abs())).max(a.max_abs());
    let tol = 1e-9 * scale.max(f64::MIN_POSITIVE);
    let mut l = DenseMatrix::zeros(n, n);
    let mut min_pivot = f64::INFINITY;
    let mut psd = a.all_finite();
    for j in 0..n {
        let mut s = a.get(j, j);
        for k in 0..j {
            let v = l.get(j, k);
            s -= v * v;
        }
        min_pivot = min_pivot.min(s);
        if s < -tol {
            psd = false;
            break;
        }
        if s <= tol {
            for i in j + 1..n {
                let mut c = a.get(i, j);
                for k in 0..j {
                    c -= l.get(i, k) * l.get(j, k);
                }
                if c.abs() > tol.sqrt() * scale.sqrt().max(1.0) {
                    psd = false;
                }
            }
            if !psd {
                break;
            }
            continue;
        }
        let pivot = s.sqrt();
        l.set(j, j, pivot);
        for i in j + 1..n {
            let mut c = a.get(i, j);
            for k in 0..j {
                c -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, c / pivot);
        }
    }
    if n == 0 {
        min_pivot = 0.0;
    }
    SpectralReport {
        max_asymmetry,
        min_pivot,
        psd,
    }
}
