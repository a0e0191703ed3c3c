//! Alignment of a resampled CCA solution onto a reference solution.
//!
//! Canonical directions are identified only up to joint sign flips of
//! `(β_k, γ_k)` and, when correlations are close, up to reordering. Each
//! strategy learns a transform on row-standardized copies of the directions
//! and applies it to the original replicate directions.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assignment::solve_assignment;
use crate::cca::CcaSolution;
use crate::error::{invalid, CcaError, Result};
use crate::linalg::svd_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum AlignmentStrategy {
    #[serde(rename = "identity")]
    Identity,
    #[serde(rename = "signflip")]
    SignFlip,
    #[default]
    #[serde(rename = "hungarian")]
    HungarianWeighted,
    #[serde(rename = "procrustes")]
    Procrustes,
}

impl AlignmentStrategy {
    pub const ALL: [AlignmentStrategy; 4] = [
        AlignmentStrategy::Identity,
        AlignmentStrategy::SignFlip,
        AlignmentStrategy::HungarianWeighted,
        AlignmentStrategy::Procrustes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlignmentStrategy::Identity => "identity",
            AlignmentStrategy::SignFlip => "signflip",
            AlignmentStrategy::HungarianWeighted => "hungarian",
            AlignmentStrategy::Procrustes => "procrustes",
        }
    }
}

impl fmt::Display for AlignmentStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlignmentStrategy {
    type Err = CcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(AlignmentStrategy::Identity),
            "signflip" => Ok(AlignmentStrategy::SignFlip),
            "hungarian" => Ok(AlignmentStrategy::HungarianWeighted),
            "procrustes" => Ok(AlignmentStrategy::Procrustes),
            other => invalid(format!("unknown alignment strategy {other:?} (expected identity|signflip|hungarian|procrustes)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentWarning {
    /// Rotations were applied, so the aligned correlations are no longer diagonal.
    NonDiagonalCorrelations,
    /// `sourceᵀ·target` was rank deficient; the rotation is one of several minimizers.
    RankDeficientProcrustes,
}

/// The transform mapping a replicate onto the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentTransform {
    /// `perm[j]` is the replicate column placed at position `j`.
    pub perm: Vec<usize>,
    /// Diagonal of the signature matrix `H`, entries ±1.
    pub signs: Vec<f64>,
    pub rot_b: Option<DMatrix<f64>>,
    pub rot_gamma: Option<DMatrix<f64>>,
    pub warnings: Vec<AlignmentWarning>,
}

impl AlignmentTransform {
    pub fn identity(k: usize) -> Self {
        AlignmentTransform { perm: (0..k).collect(), signs: vec![1.0; k], rot_b: None, rot_gamma: None, warnings: Vec::new() }
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p)
            && self.signs.iter().all(|&s| s == 1.0)
            && self.rot_b.is_none()
            && self.rot_gamma.is_none()
    }

    pub fn permutation_matrix(&self) -> DMatrix<f64> {
        crate::assignment::permutation_matrix(&self.perm)
    }

    pub fn signature_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.signs))
    }
}

/// Per-column standard deviations of the data a solution was estimated on.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSds {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

/// Multiply row `i` of `dir` by `sds[i]`.
pub fn row_standardize_directions(dir: &DMatrix<f64>, sds: &DVector<f64>) -> Result<DMatrix<f64>> {
    if sds.len() != dir.nrows() {
        return invalid(format!("{} standard deviations for {} rows", sds.len(), dir.nrows()));
    }
    if let Some((column, _)) = sds.iter().enumerate().find(|(_, &s)| !(s > 0.0) || !s.is_finite()) {
        return Err(CcaError::DegenerateVariable { column });
    }
    let mut out = dir.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= sds[i];
    }
    Ok(out)
}

/// `G[i, j] = cos(a_i, b_j)` between columns.
pub fn cosine_similarity_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return invalid("cosine similarity needs matrices with equal row counts");
    }
    let norms = |m: &DMatrix<f64>| -> Result<Vec<f64>> {
        m.column_iter()
            .enumerate()
            .map(|(j, c)| {
                let n = c.norm();
                if n > 0.0 && n.is_finite() {
                    Ok(n)
                } else {
                    Err(CcaError::DegenerateDirection { column: j })
                }
            })
            .collect()
    };
    let na = norms(a)?;
    let nb = norms(b)?;
    let dots = a.transpose() * b;
    Ok(DMatrix::from_fn(a.ncols(), b.ncols(), |i, j| (dots[(i, j)] / (na[i] * nb[j])).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcrustesRotation {
    pub rotation: DMatrix<f64>,
    pub rank_deficient: bool,
}

/// Orthogonal `T` minimizing `‖target − source·T‖_F`: `T = U Vᵀ` from the SVD
/// of `sourceᵀ·target`.
pub fn procrustes_rotation(target: &DMatrix<f64>, source: &DMatrix<f64>) -> Result<ProcrustesRotation> {
    if target.shape() != source.shape() {
        return invalid(format!("procrustes shapes differ: {:?} vs {:?}", target.shape(), source.shape()));
    }
    let m = source.transpose() * target;
    let svd = svd_sorted(&m);
    let smax = svd.s.iter().cloned().fold(0.0, f64::max);
    let smin = svd.s.iter().cloned().fold(f64::INFINITY, f64::min);
    let rank_deficient = !(smin > 1e-12 * smax);
    Ok(ProcrustesRotation { rotation: &svd.u * svd.v.transpose(), rank_deficient })
}

/// Signs with an exact zero mapped to `+1`.
fn sign_of(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Averaged cosine similarity `½(G_B + G_Γ)` on row-standardized directions.
fn averaged_similarity(
    reference: &CcaSolution,
    replicate: &CcaSolution,
    sds_ref: &ColumnSds,
    sds_rep: &ColumnSds,
) -> Result<(DMatrix<f64>, [DMatrix<f64>; 4])> {
    let rb = row_standardize_directions(&reference.b, &sds_ref.x)?;
    let rg = row_standardize_directions(&reference.gamma, &sds_ref.y)?;
    let tb = row_standardize_directions(&replicate.b, &sds_rep.x)?;
    let tg = row_standardize_directions(&replicate.gamma, &sds_rep.y)?;
    let g = (cosine_similarity_columns(&rb, &tb)? + cosine_similarity_columns(&rg, &tg)?) * 0.5;
    Ok((g, [rb, rg, tb, tg]))
}

fn apply_perm_signs(sol: &CcaSolution, perm: &[usize], signs: &[f64]) -> CcaSolution {
    let k = perm.len();
    let mut b = DMatrix::zeros(sol.p(), k);
    let mut gamma = DMatrix::zeros(sol.q(), k);
    for (j, (&src, &s)) in perm.iter().zip(signs).enumerate() {
        b.set_column(j, &(sol.b.column(src) * s));
        gamma.set_column(j, &(sol.gamma.column(src) * s));
    }
    let rho = DVector::from_iterator(k, perm.iter().map(|&src| sol.rho[src]));
    CcaSolution { rho, b, gamma }
}

/// Align `replicate` onto `reference` with the chosen strategy.
pub fn align(
    reference: &CcaSolution,
    replicate: &CcaSolution,
    strategy: AlignmentStrategy,
    sds_ref: &ColumnSds,
    sds_rep: &ColumnSds,
) -> Result<(CcaSolution, AlignmentTransform)> {
    reference.check_shapes()?;
    replicate.check_shapes()?;
    if reference.p() != replicate.p() || reference.q() != replicate.q() || reference.k() != replicate.k() {
        return invalid("reference and replicate solutions differ in shape");
    }
    let k = reference.k();
    match strategy {
        AlignmentStrategy::Identity => Ok((replicate.clone(), AlignmentTransform::identity(k))),
        AlignmentStrategy::SignFlip => {
            let (g, _) = averaged_similarity(reference, replicate, sds_ref, sds_rep)?;
            let perm: Vec<usize> = (0..k).collect();
            let signs: Vec<f64> = (0..k).map(|i| sign_of(g[(i, i)])).collect();
            let aligned = apply_perm_signs(replicate, &perm, &signs);
            Ok((aligned, AlignmentTransform { perm, signs, rot_b: None, rot_gamma: None, warnings: Vec::new() }))
        }
        AlignmentStrategy::HungarianWeighted => {
            let (g, _) = averaged_similarity(reference, replicate, sds_ref, sds_rep)?;
            let w_ref: Vec<f64> = reference.rho.iter().map(|r| r.max(0.0).sqrt()).collect();
            let w_rep: Vec<f64> = replicate.rho.iter().map(|r| r.max(0.0).sqrt()).collect();
            let gw = DMatrix::from_fn(k, k, |i, j| w_ref[i] * g[(i, j)] * w_rep[j]);
            let perm = solve_assignment(&gw.abs())?;
            let signs: Vec<f64> = perm.iter().enumerate().map(|(j, &src)| sign_of(gw[(j, src)])).collect();
            let aligned = apply_perm_signs(replicate, &perm, &signs);
            Ok((aligned, AlignmentTransform { perm, signs, rot_b: None, rot_gamma: None, warnings: Vec::new() }))
        }
        AlignmentStrategy::Procrustes => {
            let (_, [rb, rg, tb, tg]) = averaged_similarity(reference, replicate, sds_ref, sds_rep)?;
            let pb = procrustes_rotation(&rb, &tb)?;
            let pg = procrustes_rotation(&rg, &tg)?;
            let mut warnings = vec![AlignmentWarning::NonDiagonalCorrelations];
            if pb.rank_deficient || pg.rank_deficient {
                warnings.push(AlignmentWarning::RankDeficientProcrustes);
            }
            let aligned = CcaSolution {
                rho: replicate.rho.clone(),
                b: &replicate.b * &pb.rotation,
                gamma: &replicate.gamma * &pg.rotation,
            };
            Ok((
                aligned,
                AlignmentTransform {
                    perm: (0..k).collect(),
                    signs: vec![1.0; k],
                    rot_b: Some(pb.rotation),
                    rot_gamma: Some(pg.rotation),
                    warnings,
                },
            ))
        }
    }
}
