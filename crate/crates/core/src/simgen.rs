//! Ground-truth generators for the simulation designs and Gaussian sampling.
//!
//! * Sim I: one canonical pair, banded-precision (or identity) marginals.
//! * Sim II: a second canonical pair supported on the complementary coordinates.
//! * Sim III: a dense base solution with one coordinate overwritten, then the
//!   covariance rebuilt by model inversion.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cca::{population_cca, CcaSolution, DataMatrix};
use crate::error::{invalid, Block, CcaError, Result};
use crate::linalg::{self, sym_eigen_sorted};
use crate::model::{invert_cca_model, CovarianceModel, PSD_TOLERANCE};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimKind {
    Sim1,
    Sim2,
    Sim3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    #[default]
    Dense,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceKind {
    #[default]
    SparsePrecision,
    Identity,
}

/// Value written into the modified Sim III coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NuisanceLevel {
    /// Exactly zero: a true null.
    Null,
    /// Signed mean of the absolute values of the other entries.
    MeanAbs,
    /// Signed maximum of the absolute values of the other entries.
    MaxAbs,
}

/// One coordinate of a direction matrix (0-based `direction` and `index`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coordinate {
    pub block: Block,
    pub direction: usize,
    pub index: usize,
}

fn default_base_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sim3Spec {
    pub target: Coordinate,
    pub level: NuisanceLevel,
    /// Directory holding a persisted covariance model to use as the base.
    /// When absent a synthetic stand-in is generated from `base_seed`.
    #[serde(default)]
    pub base_model: Option<PathBuf>,
    #[serde(default = "default_base_seed")]
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimDesign {
    pub id: String,
    pub kind: SimKind,
    pub p: usize,
    pub q: usize,
    pub n: usize,
    pub rho: Vec<f64>,
    #[serde(default)]
    pub regime: Regime,
    #[serde(default)]
    pub covariance: CovarianceKind,
    #[serde(default)]
    pub sim3: Option<Sim3Spec>,
}

impl SimDesign {
    pub fn sim1(id: &str, p: usize, q: usize, n: usize, rho1: f64, regime: Regime) -> Self {
        SimDesign {
            id: id.to_string(),
            kind: SimKind::Sim1,
            p,
            q,
            n,
            rho: vec![rho1],
            regime,
            covariance: CovarianceKind::SparsePrecision,
            sim3: None,
        }
    }

    pub fn sim2(id: &str, p: usize, q: usize, n: usize, rho2: f64, regime: Regime) -> Self {
        SimDesign { kind: SimKind::Sim2, rho: vec![0.9, rho2], ..Self::sim1(id, p, q, n, 0.9, regime) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 || self.n == 0 {
            return invalid(format!("design {}: p, q and n must be positive", self.id));
        }
        if self.p < self.q {
            return invalid(format!("design {}: requires p >= q", self.id));
        }
        if self.rho.is_empty() || self.rho.len() > self.q {
            return invalid(format!("design {}: need 1..=q correlations, got {}", self.id, self.rho.len()));
        }
        for (i, &r) in self.rho.iter().enumerate() {
            if !(r > 0.0 && r < 1.0) || (i > 0 && r >= self.rho[i - 1]) {
                return invalid(format!("design {}: correlations must be strictly decreasing in (0, 1)", self.id));
            }
        }
        let want = match self.kind {
            SimKind::Sim1 => Some(1),
            SimKind::Sim2 => Some(2),
            SimKind::Sim3 => None,
        };
        if let Some(w) = want {
            if self.rho.len() != w {
                return invalid(format!("design {}: {:?} needs {w} correlation(s)", self.id, self.kind));
            }
        }
        if self.kind == SimKind::Sim3 && self.sim3.is_none() {
            return invalid(format!("design {}: sim3 settings missing", self.id));
        }
        if self.n <= self.p + self.q {
            return invalid(format!("design {}: need n > p + q", self.id));
        }
        Ok(())
    }
}

/// A coordinate whose interval is evaluated, with its true value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitoredCoordinate {
    pub block: Block,
    pub direction: usize,
    pub index: usize,
    pub true_value: f64,
    pub is_null: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub model: CovarianceModel,
    /// Population solution restricted to the non-trivial directions.
    pub solution: CcaSolution,
    pub monitored: Vec<MonitoredCoordinate>,
}

impl GroundTruth {
    /// Largest deviation between `population_cca(model)` and the stored
    /// solution, after matching column signs.
    pub fn recovery_error(&self) -> Result<f64> {
        let pop = population_cca(&self.model)?.truncate(self.solution.k());
        let mut err: f64 = (0..pop.k()).map(|k| (pop.rho[k] - self.solution.rho[k]).abs()).fold(0.0, f64::max);
        for k in 0..pop.k() {
            let s = if pop.gamma.column(k).dot(&self.solution.gamma.column(k)) < 0.0 { -1.0 } else { 1.0 };
            err = err
                .max((pop.b.column(k) * s - self.solution.b.column(k)).abs().max())
                .max((pop.gamma.column(k) * s - self.solution.gamma.column(k)).abs().max());
        }
        Ok(err)
    }

    fn monitor(&self, block: Block, direction: usize, index: usize) -> MonitoredCoordinate {
        let m = match block {
            Block::B => &self.solution.b,
            Block::Gamma => &self.solution.gamma,
        };
        let v = m[(index, direction)];
        MonitoredCoordinate { block, direction, index, true_value: v, is_null: v == 0.0 }
    }
}

/// Banded precision `Ω_ij = 1{i=j} + 0.5·1{|i−j|=1} + 0.4·1{|i−j|=2}`.
///
/// With `break_rows`, rows and columns `⌊d/2⌋` and `⌊d/2⌋+1` (1-based) keep only
/// their diagonal, decoupling the first `⌊d/2⌋` coordinates from the rest.
pub fn build_precision(d: usize, break_rows: bool) -> Result<DMatrix<f64>> {
    if d < 3 {
        return invalid(format!("precision dimension must be at least 3, got {d}"));
    }
    let mut omega = DMatrix::from_fn(d, d, |i, j| match i.abs_diff(j) {
        0 => 1.0,
        1 => 0.5,
        2 => 0.4,
        _ => 0.0,
    });
    if break_rows {
        for r in [d / 2 - 1, d / 2] {
            for c in 0..d {
                if c != r {
                    omega[(r, c)] = 0.0;
                    omega[(c, r)] = 0.0;
                }
            }
        }
    }
    let min = sym_eigen_sorted(&omega).values[d - 1];
    if !(min > 0.0) {
        return Err(CcaError::Construction(format!("precision matrix not positive definite (min eigenvalue {min:e})")));
    }
    Ok(omega)
}

fn marginal_covariance(d: usize, kind: CovarianceKind) -> Result<DMatrix<f64>> {
    match kind {
        CovarianceKind::Identity => Ok(DMatrix::identity(d, d)),
        CovarianceKind::SparsePrecision => {
            let omega = build_precision(d, true)?;
            let inv = omega
                .cholesky()
                .ok_or_else(|| CcaError::Construction("precision matrix not positive definite".into()))?
                .inverse();
            Ok(linalg::symmetrize(&inv))
        }
    }
}

/// Unnormalized support pattern of the first (`second = false`) or second direction.
fn support(d: usize, regime: Regime, second: bool) -> DVector<f64> {
    let cut = match regime {
        Regime::Dense => d / 2,
        Regime::Sparse => 2.min(d),
    };
    DVector::from_fn(d, |i, _| if (i < cut) != second { 1.0 } else { 0.0 })
}

/// Scale `v` to unit `Σ`-norm.
fn normalize(v: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    let quad = (v.transpose() * sigma * v)[(0, 0)];
    if !(quad > 0.0) {
        return Err(CcaError::Construction("direction has zero variance".into()));
    }
    Ok(v / quad.sqrt())
}

fn check_sim_design(design: &SimDesign, kind: SimKind) -> Result<()> {
    if design.kind != kind {
        return invalid(format!("design {} is {:?}, expected {:?}", design.id, design.kind, kind));
    }
    design.validate()?;
    let min_dim = match design.regime {
        Regime::Dense => 2,
        Regime::Sparse => 3,
    };
    if design.q < min_dim {
        return invalid(format!("design {}: q must be at least {min_dim}", design.id));
    }
    if design.covariance == CovarianceKind::SparsePrecision && design.q < 3 {
        return invalid(format!("design {}: banded precision needs q >= 3", design.id));
    }
    Ok(())
}

/// Shared construction for Sim I and II: `Σxy = Σx (Σ_k ρ_k β_k γ_kᵀ) Σy`.
fn build_banded_truth(design: &SimDesign, n_dirs: usize) -> Result<GroundTruth> {
    let (p, q) = (design.p, design.q);
    let sx = marginal_covariance(p, design.covariance)?;
    let sy = marginal_covariance(q, design.covariance)?;
    let mut b = DMatrix::zeros(p, n_dirs);
    let mut g = DMatrix::zeros(q, n_dirs);
    for k in 0..n_dirs {
        b.set_column(k, &normalize(&support(p, design.regime, k == 1), &sx)?);
        g.set_column(k, &normalize(&support(q, design.regime, k == 1), &sy)?);
    }
    if n_dirs == 2 {
        let bx = (b.column(0).transpose() * &sx * b.column(1))[(0, 0)];
        let gy = (g.column(0).transpose() * &sy * g.column(1))[(0, 0)];
        if bx.abs() > 1e-8 || gy.abs() > 1e-8 {
            return Err(CcaError::Construction(format!(
                "design {}: second directions are not orthogonal to the first (β₁ᵀΣxβ₂ = {bx:e}, γ₁ᵀΣyγ₂ = {gy:e})",
                design.id
            )));
        }
    }
    let rho = DVector::from_column_slice(&design.rho[..n_dirs]);
    let sxy = &sx * &b * DMatrix::from_diagonal(&rho) * g.transpose() * &sy;
    let model = CovarianceModel::from_blocks(sx, sy, sxy)?;
    let mut truth = GroundTruth { model, solution: CcaSolution { rho, b, gamma: g }, monitored: Vec::new() };
    let mut monitored = vec![
        truth.monitor(Block::B, 0, p - 1),
        truth.monitor(Block::Gamma, 0, q - 1),
        truth.monitor(Block::B, 0, 0),
        truth.monitor(Block::Gamma, 0, 0),
    ];
    if n_dirs == 2 {
        monitored.extend([
            truth.monitor(Block::B, 1, 0),
            truth.monitor(Block::Gamma, 1, 0),
            truth.monitor(Block::B, 1, p - 1),
            truth.monitor(Block::Gamma, 1, q - 1),
        ]);
    }
    truth.monitored = monitored;
    Ok(truth)
}

/// One canonical pair: dense directions on the first half of the coordinates,
/// sparse directions on the first two.
pub fn build_sim1_truth(design: &SimDesign) -> Result<GroundTruth> {
    check_sim_design(design, SimKind::Sim1)?;
    build_banded_truth(design, 1)
}

/// Two canonical pairs; the second is supported on the complement of the first.
pub fn build_sim2_truth(design: &SimDesign) -> Result<GroundTruth> {
    check_sim_design(design, SimKind::Sim2)?;
    build_banded_truth(design, 2)
}

/// Overwrite one coordinate of a base model's population solution and rebuild
/// the covariance so that the modified solution is exact.
pub fn build_sim3_truth(base: &CovarianceModel, target: Coordinate, level: NuisanceLevel) -> Result<GroundTruth> {
    let k = base.q();
    if base.p() < k {
        return invalid("base model needs p >= q");
    }
    let mut sol = population_cca(base)?.truncate(k);
    if target.direction >= k {
        return invalid(format!("target direction {} out of range (K = {k})", target.direction));
    }
    let dirs = match target.block {
        Block::B => &mut sol.b,
        Block::Gamma => &mut sol.gamma,
    };
    if target.index >= dirs.nrows() {
        return invalid(format!("target index {} out of range ({} rows)", target.index, dirs.nrows()));
    }
    let col = dirs.column(target.direction);
    let others: Vec<f64> = col.iter().enumerate().filter(|&(i, _)| i != target.index).map(|(_, v)| v.abs()).collect();
    let sign = if col[target.index] < 0.0 { -1.0 } else { 1.0 };
    let value = match level {
        NuisanceLevel::Null => 0.0,
        NuisanceLevel::MeanAbs if others.is_empty() => 0.0,
        NuisanceLevel::MeanAbs => sign * others.iter().sum::<f64>() / others.len() as f64,
        NuisanceLevel::MaxAbs => sign * others.iter().cloned().fold(0.0, f64::max),
    };
    dirs[(target.index, target.direction)] = value;

    let model = invert_cca_model(&sol.rho, &sol.b, &sol.gamma)?;
    Ok(GroundTruth {
        model,
        solution: sol,
        monitored: vec![MonitoredCoordinate {
            block: target.block,
            direction: target.direction,
            index: target.index,
            true_value: value,
            is_null: level == NuisanceLevel::Null,
        }],
    })
}

/// Full list of `q` correlations: the given leading values, then a linear
/// descent from the last one towards zero (endpoints excluded).
pub fn extend_correlations(rho: &[f64], q: usize) -> Vec<f64> {
    let mut out = rho.to_vec();
    let m = q.saturating_sub(rho.len());
    let last = *rho.last().unwrap_or(&0.5);
    for j in 1..=m {
        out.push(last * (m + 1 - j) as f64 / (m + 1) as f64);
    }
    out
}

/// Dense synthetic base model with Gaussian directions and the given correlations.
pub fn synthetic_base_model(p: usize, q: usize, rho: &[f64], seed: u64) -> Result<CovarianceModel> {
    if p < q {
        return invalid("synthetic base needs p >= q");
    }
    let rho = extend_correlations(rho, q);
    let mut rng = substream(seed, 0);
    let b = DMatrix::from_fn(p, q, |_, _| StandardNormal.sample(&mut rng));
    let g = DMatrix::from_fn(q, q, |_, _| StandardNormal.sample(&mut rng));
    invert_cca_model(&DVector::from_vec(rho), &b, &g)
}

/// Ground truth for any design. Sim III designs need their base model, which
/// the caller loads (or synthesizes) and passes in.
pub fn build_truth(design: &SimDesign, sim3_base: Option<&CovarianceModel>) -> Result<GroundTruth> {
    match design.kind {
        SimKind::Sim1 => build_sim1_truth(design),
        SimKind::Sim2 => build_sim2_truth(design),
        SimKind::Sim3 => {
            design.validate()?;
            let spec = design.sim3.as_ref().expect("validated");
            let owned;
            let base = match sim3_base {
                Some(b) => b,
                None => {
                    owned = synthetic_base_model(design.p, design.q, &design.rho, spec.base_seed)?;
                    &owned
                }
            };
            if base.p() != design.p || base.q() != design.q {
                return invalid(format!("design {}: base model is {}x{}, design says {}x{}", design.id, base.p(), base.q(), design.p, design.q));
            }
            build_sim3_truth(base, spec.target, spec.level)
        }
    }
}

/// Gaussian sampler for a fixed joint covariance.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    factor: DMatrix<f64>,
    p: usize,
}

impl MvnSampler {
    /// Factor `Σ = L Lᵀ` through its eigendecomposition, clamping small
    /// negative eigenvalues to zero.
    pub fn new(model: &CovarianceModel) -> Result<Self> {
        let eig = sym_eigen_sorted(model.sigma());
        let max = eig.values[0];
        let d = eig.values.len();
        let min = eig.values[d - 1];
        if min < -PSD_TOLERANCE * max.abs() {
            return Err(CcaError::InvalidCovariance { eigenvalue: min });
        }
        let roots = DVector::from_iterator(d, eig.values.iter().map(|&l| l.max(0.0).sqrt()));
        Ok(MvnSampler { factor: eig.vectors * DMatrix::from_diagonal(&roots), p: model.p() })
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<(DataMatrix, DataMatrix)> {
        let d = self.factor.nrows();
        let mut z = DMatrix::<f64>::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                z[(i, j)] = StandardNormal.sample(rng);
            }
        }
        let data = z * self.factor.transpose();
        let x = data.columns(0, self.p).into_owned();
        let y = data.columns(self.p, d - self.p).into_owned();
        Ok((DataMatrix::new(x)?, DataMatrix::new(y)?))
    }
}

/// `N` i.i.d. draws from `N(0, Σ)`, split into the `X` and `Y` columns.
pub fn sample_mvn<R: Rng + ?Sized>(model: &CovarianceModel, n: usize, rng: &mut R) -> Result<(DataMatrix, DataMatrix)> {
    MvnSampler::new(model)?.sample(n, rng)
}
