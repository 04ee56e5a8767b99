//! Small dense symmetric routines used by the DPP computations.

use nalgebra::DMatrix;

/// A symmetric PSD matrix is treated as singular when a Cholesky pivot falls
/// below this fraction of its largest diagonal entry.
pub const SINGULAR_TOL: f64 = 1e-10;

/// Lower-triangular Cholesky factor of a symmetric PSD matrix, or `None` when
/// the matrix is singular under [`SINGULAR_TOL`].
pub fn cholesky(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let scale = (0..n).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
    if n > 0 && !(scale > 0.0 && scale.is_finite()) {
        return None;
    }
    let floor = SINGULAR_TOL * scale;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) {
            return None;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    Some(l)
}

pub fn logdet_from_cholesky(l: &DMatrix<f64>) -> f64 {
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Solves `(L Lᵀ) X = B` in place of `b`.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = b[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
    }
}

pub fn cholesky_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let mut inv = DMatrix::<f64>::identity(l.nrows(), l.nrows());
    cholesky_solve(l, &mut inv);
    inv
}

/// `(X + Xᵀ) / 2`, removing roundoff asymmetry.
pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}
