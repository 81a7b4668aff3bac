//! Small dense linear-algebra kernels sized for per-column normal equations
//! (dimension <= vertex count). No external solver dependency.

use crate::{DataMatrix, WeightMatrix};
use ndarray::Array2;

/// Relative ridge jitter added to the Gram diagonal before factorization,
/// scaled by `trace(X'X)/d`. Guards against collinear parent columns.
pub(crate) const GRAM_JITTER_REL: f64 = 1e-10;

/// In-place lower Cholesky factorization of a row-major `k x k` matrix.
/// Returns false when a pivot is not strictly positive.
fn cholesky_in_place(a: &mut [f64], k: usize) -> bool {
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i * k + j];
            for t in 0..j {
                s -= a[i * k + t] * a[j * k + t];
            }
            if i == j {
                if s <= 0.0 {
                    return false;
                }
                a[i * k + i] = s.sqrt();
            } else {
                a[i * k + j] = s / a[j * k + j];
            }
        }
    }
    true
}

/// Solves `L L' x = b` in place given the lower factor from
/// [`cholesky_in_place`].
fn cholesky_solve(l: &[f64], b: &mut [f64], k: usize) {
    for i in 0..k {
        let mut s = b[i];
        for t in 0..i {
            s -= l[i * k + t] * b[t];
        }
        b[i] = s / l[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = b[i];
        for t in (i + 1)..k {
            s -= l[t * k + i] * b[t];
        }
        b[i] = s / l[i * k + i];
    }
}

/// Column least-squares engine over a fixed data matrix.
///
/// Precomputes the Gram matrix `X'X` and squared column norms once, then fits
/// any target column on any parent subset via jittered normal equations.
pub(crate) struct GramFitter {
    gram: Array2<f64>,
    col_sq: Vec<f64>,
    jitter: f64,
    // scratch buffers so repeated fits do not allocate
    sys: Vec<f64>,
    rhs: Vec<f64>,
}

impl GramFitter {
    pub fn new(x: &DataMatrix) -> Self {
        let d = x.ncols();
        let gram = x.t().dot(x);
        let col_sq: Vec<f64> = (0..d).map(|j| gram[[j, j]]).collect();
        let trace: f64 = col_sq.iter().sum();
        let jitter = GRAM_JITTER_REL * trace / d.max(1) as f64;
        GramFitter { gram, col_sq, jitter, sys: Vec::new(), rhs: Vec::new() }
    }

    pub fn col_sq_norm(&self, j: usize) -> f64 {
        self.col_sq[j]
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    /// Fits column `target` on `parents` and returns the residual sum of
    /// squares evaluated through the Gram identity
    /// `rss = |x_t|^2 - b'w - jitter*|w|^2` (exact for the returned weights,
    /// up to rounding). Weights are written to `weights` in parent order.
    ///
    /// If the factorization fails the jitter is escalated a few times; the
    /// Gram matrix is positive semidefinite so this always succeeds in
    /// practice.
    pub fn fit_gram(&mut self, target: usize, parents: &[usize], weights: &mut Vec<f64>) -> f64 {
        let k = parents.len();
        weights.clear();
        if k == 0 {
            return self.col_sq[target];
        }
        self.sys.resize(k * k, 0.0);
        self.rhs.resize(k, 0.0);
        let mut jitter = self.jitter.max(f64::MIN_POSITIVE);
        for attempt in 0..4 {
            for (a, &pi) in parents.iter().enumerate() {
                for (b, &pj) in parents.iter().enumerate() {
                    self.sys[a * k + b] = self.gram[[pi, pj]];
                }
                self.sys[a * k + a] += jitter;
                self.rhs[a] = self.gram[[pi, target]];
            }
            if cholesky_in_place(&mut self.sys, k) {
                break;
            }
            assert!(attempt < 3, "gram system not factorizable at jitter {jitter:e}");
            jitter *= 1e4;
        }
        let mut sol = std::mem::take(&mut self.rhs);
        cholesky_solve(&self.sys, &mut sol, k);
        let mut bw = 0.0;
        let mut ww = 0.0;
        for (a, &pi) in parents.iter().enumerate() {
            bw += self.gram[[pi, target]] * sol[a];
            ww += sol[a] * sol[a];
        }
        weights.extend_from_slice(&sol);
        self.rhs = sol;
        (self.col_sq[target] - bw - jitter * ww).max(0.0)
    }

    /// Same fit, with the residual recomputed explicitly as
    /// `|x_t - X_S w|^2`. Slower but immune to cancellation, which matters
    /// for near-interpolating fits.
    pub fn fit_exact(
        &mut self,
        x: &DataMatrix,
        target: usize,
        parents: &[usize],
        weights: &mut Vec<f64>,
    ) -> f64 {
        self.fit_gram(target, parents, weights);
        if parents.is_empty() {
            return self.col_sq[target];
        }
        let n = x.nrows();
        let mut rss = 0.0;
        for r in 0..n {
            let mut pred = 0.0;
            for (a, &p) in parents.iter().enumerate() {
                pred += x[[r, p]] * weights[a];
            }
            let res = x[[r, target]] - pred;
            rss += res * res;
        }
        rss
    }
}

/// Crate-visible Cholesky entry points for larger systems (the qp KKT
/// matrix); same routines as the column fits use.
pub(crate) fn cholesky_in_place_pub(a: &mut [f64], k: usize) -> bool {
    cholesky_in_place(a, k)
}

pub(crate) fn cholesky_solve_pub(l: &[f64], b: &mut [f64], k: usize) {
    cholesky_solve(l, b, k)
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
/// Returns `(eigenvalues, eigenvectors)` with `a = V diag(l) V'`, columns of
/// `V` being eigenvectors. Accurate enough for the dual-certificate use here.
pub(crate) fn symmetric_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut m = a.clone();
    let mut v = Array2::eye(n);
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigs: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    (eigs, v)
}

/// `|X - XW|_F^2` computed explicitly.
pub fn frobenius_rss(x: &DataMatrix, w: &WeightMatrix) -> f64 {
    let pred = x.dot(w);
    let mut rss = 0.0;
    for (xv, pv) in x.iter().zip(pred.iter()) {
        let r = xv - pv;
        rss += r * r;
    }
    rss
}

/// Gradient of `|X - XW|_F^2` with respect to `W`: `2 X'(XW - X)`.
pub fn residual_gradient(x: &DataMatrix, w: &WeightMatrix) -> WeightMatrix {
    let resid = x.dot(w) - x;
    2.0 * x.t().dot(&resid)
}
