//! Sample and population canonical correlation analysis.
//!
//! The sample estimator follows the QR route: thin QR factorizations of the
//! centered data blocks, an SVD of `Qxᵀ Qy`, and back-substitution through
//! the triangular factors. Directions are rescaled by `√(N−1)` so that each
//! canonical variate has unit empirical variance.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, CcaError, Result};
use crate::linalg::{self, svd_sorted};
use crate::model::CovarianceModel;

/// Relative threshold on `|diag(R)|` of a QR factor below which a column is
/// considered linearly dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// An `N × d` data block, rows are observations.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    centered: bool,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return invalid("data matrix is empty");
        }
        if !linalg::all_finite(&values) {
            return invalid("data matrix contains non-finite values");
        }
        Ok(DataMatrix { values, centered: false })
    }

    pub fn from_row_slice(nrows: usize, ncols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != nrows * ncols {
            return invalid(format!("expected {} values for a {nrows}x{ncols} matrix, got {}", nrows * ncols, data.len()));
        }
        Self::new(DMatrix::from_row_slice(nrows, ncols, data))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Column standard deviations (divisor `N − 1`).
    pub fn column_sds(&self) -> DVector<f64> {
        linalg::column_sds(&self.values)
    }

    /// Rows picked by index, in the given order. The result is not marked centered.
    pub fn select_rows(&self, rows: &[usize]) -> DataMatrix {
        DataMatrix { values: linalg::select_rows(&self.values, rows), centered: false }
    }
}

/// Subtract each column's mean.
pub fn center_columns(x: &DataMatrix) -> Result<DataMatrix> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return invalid("cannot center an empty matrix");
    }
    if x.nrows() < 2 {
        return invalid("centering requires at least two rows");
    }
    Ok(DataMatrix { values: linalg::center(&x.values), centered: true })
}

/// Canonical correlations and the matching direction matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CcaSolution {
    /// Canonical correlations, non-increasing.
    pub rho: DVector<f64>,
    /// `p × K` directions for the `X` block.
    pub b: DMatrix<f64>,
    /// `q × K` directions for the `Y` block.
    pub gamma: DMatrix<f64>,
}

impl CcaSolution {
    pub fn k(&self) -> usize {
        self.rho.len()
    }

    pub fn p(&self) -> usize {
        self.b.nrows()
    }

    pub fn q(&self) -> usize {
        self.gamma.nrows()
    }

    /// Keep only the leading `k` directions.
    pub fn truncate(&self, k: usize) -> CcaSolution {
        let k = k.min(self.k());
        CcaSolution {
            rho: self.rho.rows(0, k).into_owned(),
            b: self.b.columns(0, k).into_owned(),
            gamma: self.gamma.columns(0, k).into_owned(),
        }
    }

    /// Flip each `(β_k, γ_k)` pair so that the largest-magnitude entry of `γ_k`
    /// is positive (ties go to the lower index).
    pub fn canonicalize_signs(&mut self) {
        for k in 0..self.k() {
            let col = self.gamma.column(k);
            let mut best = 0;
            for i in 1..col.len() {
                if col[i].abs() > col[best].abs() {
                    best = i;
                }
            }
            if col[best] < 0.0 {
                self.b.column_mut(k).neg_mut();
                self.gamma.column_mut(k).neg_mut();
            }
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.b.ncols() != self.k() || self.gamma.ncols() != self.k() {
            return invalid(format!(
                "solution has {} correlations but direction matrices with {} and {} columns",
                self.k(),
                self.b.ncols(),
                self.gamma.ncols()
            ));
        }
        Ok(())
    }
}

/// Thin QR with a scale-relative rank check. Returns `(Q, R)`.
fn thin_qr(x: &DMatrix<f64>, block: &str) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let qr = x.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..r.ncols()).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let rank = diag.iter().filter(|&&d| d > RANK_TOLERANCE * max && d > 0.0).count();
    if rank < x.ncols() {
        return Err(CcaError::RankDeficient { block: block.to_string(), rank, cols: x.ncols() });
    }
    Ok((qr.q(), r))
}

/// Sample CCA via thin QR and SVD. Data are centered internally when needed.
pub fn estimate_cca(x: &DataMatrix, y: &DataMatrix) -> Result<CcaSolution> {
    let n = x.nrows();
    if y.nrows() != n {
        return invalid(format!("X has {n} rows but Y has {}", y.nrows()));
    }
    let (p, q) = (x.ncols(), y.ncols());
    if n <= p.max(q) {
        return invalid(format!("need N > max(p, q); got N = {n}, p = {p}, q = {q}"));
    }
    let xc = if x.centered { x.values.clone() } else { linalg::center(&x.values) };
    let yc = if y.centered { y.values.clone() } else { linalg::center(&y.values) };

    let (qx, rx) = thin_qr(&xc, "X")?;
    let (qy, ry) = thin_qr(&yc, "Y")?;
    let k = p.min(q);
    let svd = svd_sorted(&(qx.transpose() * qy));

    let scale = ((n - 1) as f64).sqrt();
    let u = svd.u.columns(0, k).into_owned() * scale;
    let v = svd.v.columns(0, k).into_owned() * scale;
    let b = rx
        .solve_upper_triangular(&u)
        .ok_or_else(|| CcaError::RankDeficient { block: "X".into(), rank: 0, cols: p })?;
    let gamma = ry
        .solve_upper_triangular(&v)
        .ok_or_else(|| CcaError::RankDeficient { block: "Y".into(), rank: 0, cols: q })?;
    let rho = DVector::from_iterator(k, svd.s.iter().take(k).map(|&s| s.clamp(0.0, 1.0)));

    let mut sol = CcaSolution { rho, b, gamma };
    sol.canonicalize_signs();
    Ok(sol)
}

/// Population CCA from a covariance model via the SVD of `Σx^{-1/2} Σxy Σy^{-1/2}`.
pub fn population_cca(model: &CovarianceModel) -> Result<CcaSolution> {
    let sx = model.sigma_x();
    let sy = model.sigma_y();
    let sxy = model.sigma_xy();
    if sxy.nrows() != sx.nrows() || sxy.ncols() != sy.nrows() {
        return invalid("cross-covariance shape does not match the marginal covariances");
    }
    let sx_is = linalg::inv_sqrt_spd(sx, "SigmaX")?;
    let sy_is = linalg::inv_sqrt_spd(sy, "SigmaY")?;
    let m = &sx_is * sxy * &sy_is;
    let k = sx.nrows().min(sy.nrows());
    let svd = svd_sorted(&m);
    let b = &sx_is * svd.u.columns(0, k);
    let gamma = &sy_is * svd.v.columns(0, k);
    let rho = DVector::from_iterator(k, svd.s.iter().take(k).cloned());
    let mut sol = CcaSolution { rho, b, gamma };
    sol.canonicalize_signs();
    Ok(sol)
}

/// Projections `C = X B` and `D = Y Γ`.
#[derive(Debug, Clone)]
pub struct CanonicalVariates {
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

pub fn canonical_variates(x: &DataMatrix, y: &DataMatrix, sol: &CcaSolution) -> Result<CanonicalVariates> {
    if x.nrows() != y.nrows() {
        return invalid("X and Y have different numbers of rows");
    }
    if x.ncols() != sol.p() || y.ncols() != sol.q() {
        return invalid(format!(
            "data has {} and {} columns but the solution expects {} and {}",
            x.ncols(),
            y.ncols(),
            sol.p(),
            sol.q()
        ));
    }
    Ok(CanonicalVariates { c: x.values() * &sol.b, d: y.values() * &sol.gamma })
}
