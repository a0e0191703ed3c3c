//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, CcaError, Result};

/// Thin SVD with singular values sorted non-increasing.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn svd_sorted(m: &DMatrix<f64>) -> SortedSvd {
    let svd = to_faer(m).thin_svd();
    let sd = svd.s_diagonal();
    let s: Vec<f64> = (0..sd.nrows()).map(|i| sd[i]).collect();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    SortedSvd {
        u: select_columns(&from_faer(svd.u()), &order),
        s: DVector::from_iterator(order.len(), order.iter().map(|&i| s[i])),
        v: select_columns(&from_faer(svd.v()), &order),
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted non-increasing.
pub struct SortedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigen_sorted(m: &DMatrix<f64>) -> SortedEigen {
    let eig = to_faer(&symmetrize(m)).selfadjoint_eigendecomposition(faer::Side::Lower);
    let ev = eig.s().column_vector();
    let vals: Vec<f64> = (0..ev.nrows()).map(|i| ev[i]).collect();
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    SortedEigen {
        values: DVector::from_iterator(order.len(), order.iter().map(|&i| vals[i])),
        vectors: select_columns(&from_faer(eig.u()), &order),
    }
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m.read(i, j))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// `S^{-1/2}` for a symmetric positive definite `S`.
///
/// Fails with a singular-covariance error when the smallest eigenvalue is at
/// or below `1e-12` times the largest.
pub fn inv_sqrt_spd(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let eig = sym_eigen_sorted(m);
    let n = eig.values.len();
    if n == 0 {
        return invalid(format!("{name} is empty"));
    }
    let max = eig.values[0];
    let min = eig.values[n - 1];
    if !(max > 0.0) || min <= 1e-12 * max || !min.is_finite() {
        return Err(CcaError::SingularCovariance { name: name.to_string(), min_eigenvalue: min });
    }
    let d = DVector::from_iterator(n, eig.values.iter().map(|&l| 1.0 / l.sqrt()));
    Ok(&eig.vectors * DMatrix::from_diagonal(&d) * eig.vectors.transpose())
}

pub fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// Column standard deviations with divisor `N - 1`.
pub fn column_sds(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let means = column_means(m);
    DVector::from_iterator(
        m.ncols(),
        m.column_iter().enumerate().map(|(j, c)| {
            let ss: f64 = c.iter().map(|&x| (x - means[j]).powi(2)).sum();
            (ss / (n as f64 - 1.0)).sqrt()
        }),
    )
}

pub fn center(m: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(m);
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

/// Empirical covariance (divisor `N - 1`) between the columns of two
/// already-centered matrices.
pub fn cross_cov(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * b / (a.nrows() as f64 - 1.0)
}

/// Moore–Penrose inverse; singular values below `1e-12 * max` are treated as zero.
/// Also returns the numerical rank.
pub fn pinv(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let svd = svd_sorted(m);
    let smax = svd.s.iter().cloned().fold(0.0, f64::max);
    let tol = 1e-12 * smax;
    let mut rank = 0;
    let inv_s = DVector::from_iterator(
        svd.s.len(),
        svd.s.iter().map(|&s| {
            if s > tol && s > 0.0 {
                rank += 1;
                1.0 / s
            } else {
                0.0
            }
        }),
    );
    let pinv = &svd.v * DMatrix::from_diagonal(&inv_s) * svd.u.transpose();
    (pinv, rank)
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Largest absolute entry-wise difference.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
