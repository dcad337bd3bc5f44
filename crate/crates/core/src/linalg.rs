//! Dense decompositions bridged to nalgebra.
//!
//! Matrices live in `ndarray` throughout the crate; this module converts to
//! nalgebra only around factorizations (symmetric eigen, SVD, Cholesky).
//! Pseudo-inverses treat singular values below `rcond * s_max` as zero.

use ndarray::{Array1, Array2, ArrayView2};

/// Relative singular-value cutoff used by default in pseudo-inverses.
pub const DEFAULT_RCOND: f64 = 1e-12;

pub fn to_na(a: ArrayView2<f64>) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().cloned())
}

pub fn to_nd(m: &nalgebra::DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
///
/// Returns `(values, vectors)` with eigenvectors as columns, `a ≈ V Λ Vᵀ`.
pub fn eigh(a: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    assert_eq!(a.nrows(), a.ncols(), "eigh needs a square matrix");
    let es = nalgebra::SymmetricEigen::new(to_na(a));
    let n = es.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        es.eigenvalues[j]
            .partial_cmp(&es.eigenvalues[i])
            .expect("symmetric eigenvalues are finite")
    });
    let values = Array1::from_iter(order.iter().map(|&i| es.eigenvalues[i]));
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| es.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Thin SVD `a ≈ U diag(s) Vᵀ` with singular values descending.
pub fn svd_thin(a: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let svd = to_na(a).svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    (
        to_nd(&u),
        Array1::from_iter(svd.singular_values.iter().cloned()),
        to_nd(&vt),
    )
}

/// Largest singular value of an arbitrary matrix.
pub fn largest_singular_value(a: ArrayView2<f64>) -> f64 {
    to_na(a).svd(false, false).singular_values[0]
}

/// Reusable factorization of a symmetric positive semidefinite matrix.
///
/// Cholesky when the matrix is numerically positive definite, otherwise an
/// eigendecomposition-backed pseudo-inverse with relative cutoff `rcond`.
pub enum PsdFactor {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    /// Eigenpairs with eigenvalues at or below the cutoff dropped.
    Pinv {
        inv_values: Array1<f64>,
        vectors: Array2<f64>,
        kept_log_det: f64,
    },
}

impl PsdFactor {
    pub fn new(a: ArrayView2<f64>, rcond: f64) -> Self {
        if let Some(chol) = nalgebra::Cholesky::new(to_na(a)) {
            // A numerically "successful" Cholesky of a near-singular matrix
            // would silently solve instead of pseudo-inverting; gate on the
            // pivot spread.
            let diag = chol.l_dirty().diagonal();
            let max = diag.iter().cloned().fold(0.0f64, f64::max);
            let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
            if min > 0.0 && (min / max).powi(2) > rcond {
                return PsdFactor::Cholesky(chol);
            }
        }
        let (values, vectors) = eigh(a);
        let cutoff = rcond * values[0].max(0.0);
        let inv_values = values.mapv(|v| if v > cutoff && v > 0.0 { 1.0 / v } else { 0.0 });
        let kept_log_det = values
            .iter()
            .filter(|&&v| v > cutoff && v > 0.0)
            .map(|v| v.ln())
            .sum();
        PsdFactor::Pinv {
            inv_values,
            vectors,
            kept_log_det,
        }
    }

    /// Solves `A X = B` (pseudo-inverse applied on the deficient subspace).
    pub fn solve(&self, b: ArrayView2<f64>) -> Array2<f64> {
        match self {
            PsdFactor::Cholesky(chol) => {
                let mut m = to_na(b);
                chol.solve_mut(&mut m);
                to_nd(&m)
            }
            PsdFactor::Pinv {
                inv_values,
                vectors,
                ..
            } => {
                let proj = vectors.t().dot(&b);
                let mut scaled = proj;
                for (mut row, &iv) in scaled.rows_mut().into_iter().zip(inv_values.iter()) {
                    row.mapv_inplace(|v| v * iv);
                }
                vectors.dot(&scaled)
            }
        }
    }

    /// Log-determinant restricted to the numerically nonzero spectrum.
    pub fn log_det(&self) -> f64 {
        match self {
            PsdFactor::Cholesky(chol) => 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
            PsdFactor::Pinv { kept_log_det, .. } => *kept_log_det,
        }
    }
}

/// One-shot `A X = B` for symmetric positive semidefinite `A`.
pub fn solve_psd(a: ArrayView2<f64>, b: ArrayView2<f64>, rcond: f64) -> Array2<f64> {
    PsdFactor::new(a, rcond).solve(b)
}
