//! Competitor interval methods: plug-in asymptotic intervals for jointly
//! normal data with `p = q`, and split-sample regression intervals.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::bootstrap::{z_quantile, CiTable, CiTables};
use crate::cca::{estimate_cca, CcaSolution, DataMatrix};
use crate::error::{invalid, Block, CcaError, Result};
use crate::linalg;
use crate::rng::substream;

/// Smallest `|ρ_j² − ρ_k²|` used in the asymptotic variance denominator.
pub const GAP_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineWarning {
    /// The asymptotic theory assumes `p = q`.
    UnequalDimensions { p: usize, q: usize },
    /// Two squared correlations were closer than [`GAP_FLOOR`]; the gap was clamped.
    NearDegenerateGap { j: usize, k: usize },
}

impl std::fmt::Display for BaselineWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BaselineWarning::UnequalDimensions { p, q } => {
                write!(f, "asymptotic intervals assume p = q; got p = {p}, q = {q}")
            }
            BaselineWarning::NearDegenerateGap { j, k } => {
                write!(f, "canonical correlations {j} and {k} are nearly tied; variance denominator clamped")
            }
        }
    }
}

/// Per-coordinate asymptotic variances (per-observation scale).
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticVariances {
    pub var_b: DMatrix<f64>,
    pub var_gamma: DMatrix<f64>,
}

/// `σ²_{ij} = ½ D_{ij}² + (1 − ρ_j²) Σ_{k≠j} (ρ_k² + ρ_j² − 2ρ_k²ρ_j²) / (ρ_j² − ρ_k²)² · D_{ik}²`
/// for a direction matrix `D` whose columns pair with `rho`.
pub fn direction_variances(rho: &DVector<f64>, dirs: &DMatrix<f64>, warnings: &mut Vec<BaselineWarning>) -> DMatrix<f64> {
    let kk = rho.len();
    let r2: Vec<f64> = rho.iter().map(|r| r * r).collect();
    let mut weight = DMatrix::zeros(kk, kk);
    for j in 0..kk {
        for k in 0..kk {
            if k == j {
                continue;
            }
            let mut gap = (r2[j] - r2[k]).abs();
            if gap < GAP_FLOOR {
                let w = BaselineWarning::NearDegenerateGap { j: j.min(k), k: j.max(k) };
                if !warnings.contains(&w) {
                    warnings.push(w);
                }
                gap = GAP_FLOOR;
            }
            weight[(k, j)] = (1.0 - r2[j]) * (r2[k] + r2[j] - 2.0 * r2[k] * r2[j]) / (gap * gap);
        }
    }
    DMatrix::from_fn(dirs.nrows(), kk, |i, j| {
        let cross: f64 = (0..kk).filter(|&k| k != j).map(|k| weight[(k, j)] * dirs[(i, k)].powi(2)).sum();
        0.5 * dirs[(i, j)].powi(2) + cross
    })
}

pub fn asymptotic_variances(sol: &CcaSolution) -> (AsymptoticVariances, Vec<BaselineWarning>) {
    let mut warnings = Vec::new();
    let var_b = direction_variances(&sol.rho, &sol.b, &mut warnings);
    let var_gamma = direction_variances(&sol.rho, &sol.gamma, &mut warnings);
    (AsymptoticVariances { var_b, var_gamma }, warnings)
}

/// Plug-in asymptotic intervals `D̂_{ij} ± z_{1−α/2} σ̂_{ij} / √N`.
pub fn asymptotic_ci(x: &DataMatrix, y: &DataMatrix, alpha: f64) -> Result<(CiTables, Vec<BaselineWarning>)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    let sol = estimate_cca(x, y)?;
    let (vars, mut warnings) = asymptotic_variances(&sol);
    if x.ncols() != y.ncols() {
        warnings.insert(0, BaselineWarning::UnequalDimensions { p: x.ncols(), q: y.ncols() });
    }
    let z = z_quantile(1.0 - alpha / 2.0);
    let root_n = (x.nrows() as f64).sqrt();
    let table = |point: &DMatrix<f64>, var: &DMatrix<f64>| -> Result<CiTable> {
        let half = var.map(|v| z * v.max(0.0).sqrt() / root_n);
        CiTable::new(point - &half, point + &half, point.clone())
    };
    Ok((CiTables { b: table(&sol.b, &vars.var_b)?, gamma: table(&sol.gamma, &vars.var_gamma)? }, warnings))
}

/// Random half split of `0..n`: the first `⌊n/2⌋` shuffled indices and the rest.
pub fn split_indices(n: usize, split_seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(split_seed, 0));
    let second = idx.split_off(n / 2);
    (idx, second)
}

/// OLS intervals for the directions of one block, holding the other block's
/// half-1 directions fixed.
fn regression_block(
    design: &DMatrix<f64>,
    other: &DMatrix<f64>,
    other_dirs: &DMatrix<f64>,
    alpha: f64,
    block: Block,
) -> Result<CiTable> {
    let (n, d) = design.shape();
    let k = other_dirs.ncols();
    let df = n as f64 - d as f64;
    if df < 1.0 {
        return invalid(format!("not enough observations for regression on {block}: n = {n}, columns = {d}"));
    }
    let xtx = design.transpose() * design;
    let chol = xtx.clone().cholesky().ok_or_else(|| CcaError::RankDeficient {
        block: format!("{block} (second half)"),
        rank: linalg::svd_sorted(design).s.iter().filter(|&&s| s > 1e-10).count(),
        cols: d,
    })?;
    let xtx_inv = chol.inverse();
    let sigma_hat = &xtx / (n as f64 - 1.0);
    let t = StudentsT::new(0.0, 1.0, df).map_err(|e| CcaError::InvalidInput(e.to_string()))?.inverse_cdf(1.0 - alpha / 2.0);

    let mut point = DMatrix::zeros(d, k);
    let mut lower = DMatrix::zeros(d, k);
    let mut upper = DMatrix::zeros(d, k);
    for j in 0..k {
        let response = other * other_dirs.column(j);
        let coef = chol.solve(&(design.transpose() * &response));
        let resid = &response - design * &coef;
        let s2 = resid.norm_squared() / df;
        let quad = (coef.transpose() * &sigma_hat * &coef)[(0, 0)];
        if !(quad > 0.0) || !quad.is_finite() {
            return Err(CcaError::Contract(format!("degenerate variate: direction {j} of {block} has zero fitted variance")));
        }
        let c = quad.powf(-0.5);
        for i in 0..d {
            let est = c * coef[i];
            let se = c * (s2 * xtx_inv[(i, i)]).sqrt();
            point[(i, j)] = est;
            lower[(i, j)] = est - t * se;
            upper[(i, j)] = est + t * se;
        }
    }
    CiTable::new(lower, upper, point)
}

/// Split-sample regression intervals. CCA on one random half fixes the
/// opposite block's directions; on the other half each direction is
/// re-estimated by least squares, rescaled to unit empirical variance, and
/// given a `t` interval with `n₂ − p` (or `n₂ − q`) degrees of freedom.
pub fn regression_ci(x: &DataMatrix, y: &DataMatrix, alpha: f64, split_seed: u64) -> Result<CiTables> {
    let n = x.nrows();
    if y.nrows() != n {
        return invalid(format!("X has {n} rows but Y has {}", y.nrows()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    let (p, q) = (x.ncols(), y.ncols());
    let need = 2 * (p.max(q) + 2);
    if n < need {
        return invalid(format!("regression intervals need N >= {need}, got {n}"));
    }
    let (first, second) = split_indices(n, split_seed);
    let half1 = estimate_cca(&x.select_rows(&first), &y.select_rows(&first))?;
    let x2 = linalg::center(x.select_rows(&second).values());
    let y2 = linalg::center(y.select_rows(&second).values());
    let b = regression_block(&x2, &y2, &half1.gamma, alpha, Block::B)?;
    let gamma = regression_block(&y2, &x2, &half1.b, alpha, Block::Gamma)?;
    Ok(CiTables { b, gamma })
}
