//! Train/test preprocessing ahead of inference: nuisance regression fitted on
//! the training half, PCA of the training residuals, standardization of the
//! held-out half, and mapping estimated directions back to feature space.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baseline::split_indices;
use crate::bootstrap::CiTable;
use crate::cca::{DataMatrix, RANK_TOLERANCE};
use crate::error::{invalid, CcaError, Result};
use crate::linalg::{self, select_rows, svd_sorted};

pub const DEFAULT_COMPONENTS: usize = 250;

fn default_components() -> Option<usize> {
    Some(DEFAULT_COMPONENTS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Number of principal components of the `X` residuals to keep; `None`
    /// skips the reduction.
    #[serde(default = "default_components")]
    pub components: Option<usize>,
    #[serde(default)]
    pub split_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { components: default_components(), split_seed: 0 }
    }
}

/// Everything needed to apply the preprocessing to new data or to map
/// directions back.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessModel {
    pub coef_x: DMatrix<f64>,
    pub coef_y: DMatrix<f64>,
    /// `p × r` basis with orthonormal columns, when PCA was applied.
    pub pca_basis: Option<DMatrix<f64>>,
    pub sds_x: DVector<f64>,
    pub sds_y: DVector<f64>,
    pub components: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Residualized {
    pub x_train: DMatrix<f64>,
    pub y_train: DMatrix<f64>,
    pub x_test: DMatrix<f64>,
    pub y_test: DMatrix<f64>,
    pub coef_x: DMatrix<f64>,
    pub coef_y: DMatrix<f64>,
}

/// Least-squares coefficients of `targets` on `w`, failing on dependent columns.
pub fn nuisance_coefficients(w: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if w.nrows() != targets.nrows() {
        return invalid(format!("W has {} rows but the data have {}", w.nrows(), targets.nrows()));
    }
    if w.nrows() < w.ncols() {
        return invalid(format!("W has more columns ({}) than rows ({})", w.ncols(), w.nrows()));
    }
    let qr = w.clone().qr();
    let r = qr.r();
    let max = (0..r.ncols()).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let dependent: Vec<usize> = (0..r.ncols()).filter(|&i| !(r[(i, i)].abs() > RANK_TOLERANCE * max)).map(|i| i + 1).collect();
    if !dependent.is_empty() {
        return Err(CcaError::RankDeficient { block: format!("W (dependent columns {dependent:?})"), rank: w.ncols() - dependent.len(), cols: w.ncols() });
    }
    let qty = qr.q().transpose() * targets;
    r.solve_upper_triangular(&qty).ok_or_else(|| CcaError::InvalidInput("nuisance system is singular".into()))
}

/// Regress `X` and `Y` on `W` in the training half and remove those fits from
/// both halves. `W` should carry its own intercept column.
pub fn residualize_nuisance(
    train: (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>),
    test: (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>),
) -> Result<Residualized> {
    let (x1, y1, w1) = train;
    let (x2, y2, w2) = test;
    if w1.ncols() != w2.ncols() || x1.ncols() != x2.ncols() || y1.ncols() != y2.ncols() {
        return invalid("train and test halves have different column counts");
    }
    if x2.nrows() != w2.nrows() || y2.nrows() != w2.nrows() {
        return invalid("test blocks have different row counts");
    }
    let coef_x = nuisance_coefficients(w1, x1)?;
    let coef_y = nuisance_coefficients(w1, y1)?;
    Ok(Residualized {
        x_train: x1 - w1 * &coef_x,
        y_train: y1 - w1 * &coef_y,
        x_test: x2 - w2 * &coef_x,
        y_test: y2 - w2 * &coef_y,
        coef_x,
        coef_y,
    })
}

#[derive(Debug, Clone)]
pub struct PcaReduction {
    pub train_scores: DMatrix<f64>,
    pub test_scores: DMatrix<f64>,
    pub basis: DMatrix<f64>,
}

/// Leading `r` right singular vectors of the training residuals, with both
/// halves projected onto them.
pub fn pca_reduce(train: &DMatrix<f64>, test: &DMatrix<f64>, r: usize) -> Result<PcaReduction> {
    if train.ncols() != test.ncols() {
        return invalid("train and test residuals have different column counts");
    }
    if r == 0 {
        return invalid("number of components must be positive");
    }
    let svd = svd_sorted(train);
    let smax = svd.s.iter().cloned().fold(0.0, f64::max);
    let rank = svd.s.iter().filter(|&&s| s > RANK_TOLERANCE * smax && s > 0.0).count();
    if r > rank {
        return invalid(format!("{r} components requested but the training residuals have rank {rank}"));
    }
    let basis = svd.v.columns(0, r).into_owned();
    Ok(PcaReduction { train_scores: train * &basis, test_scores: test * &basis, basis })
}

/// Center each column and scale it to unit variance (divisor `N − 1`).
pub fn standardize_columns(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if m.nrows() < 2 {
        return invalid("need at least two rows to standardize");
    }
    let sds = linalg::column_sds(m);
    let scale = sds.iter().cloned().fold(0.0, f64::max);
    if let Some(j) = sds.iter().position(|&s| !(s > 1e-12 * scale.max(f64::MIN_POSITIVE))) {
        return Err(CcaError::DegenerateVariable { column: j + 1 });
    }
    let mut out = linalg::center(m);
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col /= sds[j];
    }
    Ok((out, sds))
}

/// `B̌ = V · diag(1/sd) · B̂`, with `V = I` when no PCA basis is present.
/// Entries whose interval contains zero are set to zero first when a table is given.
pub fn map_directions_to_original(b_hat: &DMatrix<f64>, model: &PreprocessModel, ci: Option<&CiTable>) -> Result<DMatrix<f64>> {
    if b_hat.nrows() != model.sds_x.len() {
        return invalid(format!("directions have {} rows but the model has {} standardized columns", b_hat.nrows(), model.sds_x.len()));
    }
    let mut b = b_hat.clone();
    if let Some(t) = ci {
        if t.shape() != b.shape() {
            return invalid(format!("interval table is {:?} but directions are {:?}", t.shape(), b.shape()));
        }
        for j in 0..b.ncols() {
            for i in 0..b.nrows() {
                if t.lower[(i, j)] <= 0.0 && 0.0 <= t.upper[(i, j)] {
                    b[(i, j)] = 0.0;
                }
            }
        }
    }
    for (i, mut row) in b.row_iter_mut().enumerate() {
        row /= model.sds_x[i];
    }
    match &model.pca_basis {
        Some(v) => Ok(v * b),
        None => Ok(b),
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    /// Standardized held-out `X` scores (or residuals without PCA).
    pub x: DataMatrix,
    /// Standardized held-out `Y` residuals.
    pub y: DataMatrix,
    pub model: PreprocessModel,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Seeded half split, nuisance removal, optional PCA and standardization.
/// Inference is meant to run on the returned held-out half.
pub fn preprocess(x: &DMatrix<f64>, y: &DMatrix<f64>, w: &DMatrix<f64>, config: &PipelineConfig) -> Result<Preprocessed> {
    let n = x.nrows();
    if y.nrows() != n || w.nrows() != n {
        return invalid(format!("row counts differ: X {n}, Y {}, W {}", y.nrows(), w.nrows()));
    }
    let (train_rows, test_rows) = split_indices(n, config.split_seed);
    let part = |m: &DMatrix<f64>, rows: &[usize]| select_rows(m, rows);
    let res = residualize_nuisance(
        (&part(x, &train_rows), &part(y, &train_rows), &part(w, &train_rows)),
        (&part(x, &test_rows), &part(y, &test_rows), &part(w, &test_rows)),
    )?;
    let (x_test, basis) = match config.components {
        Some(r) => {
            let red = pca_reduce(&res.x_train, &res.x_test, r)?;
            (red.test_scores, Some(red.basis))
        }
        None => (res.x_test, None),
    };
    let (xs, sds_x) = standardize_columns(&x_test)?;
    let (ys, sds_y) = standardize_columns(&res.y_test)?;
    Ok(Preprocessed {
        x: DataMatrix::new(xs)?,
        y: DataMatrix::new(ys)?,
        model: PreprocessModel { coef_x: res.coef_x, coef_y: res.coef_y, pca_basis: basis, sds_x, sds_y, components: config.components },
        train_rows,
        test_rows,
    })
}
