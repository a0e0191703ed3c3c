//! Bootstrap confidence intervals for canonical directions.
//!
//! Rows of `(X, Y)` are resampled jointly, CCA is re-estimated on each
//! resample, the replicate is aligned onto the full-data solution, and
//! per-coordinate intervals are read off the aligned replicates.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::alignment::{align, AlignmentStrategy, AlignmentWarning, ColumnSds};
use crate::cca::{estimate_cca, CcaSolution, DataMatrix};
use crate::error::{invalid, Block, CcaError, Result};
use crate::parallel::with_workers;
use crate::rng::{substream, SubstreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IntervalKind {
    #[default]
    Percentile,
    Normal,
}

impl IntervalKind {
    pub fn name(self) -> &'static str {
        match self {
            IntervalKind::Percentile => "percentile",
            IntervalKind::Normal => "normal",
        }
    }
}

impl fmt::Display for IntervalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IntervalKind {
    type Err = CcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "percentile" => Ok(IntervalKind::Percentile),
            "normal" => Ok(IntervalKind::Normal),
            other => invalid(format!("unknown interval kind {other:?} (expected percentile|normal)")),
        }
    }
}

fn default_n_boots() -> usize {
    10_000
}
fn default_alpha() -> f64 {
    0.05
}
fn default_max_redraws() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    #[serde(default = "default_n_boots")]
    pub n_boots: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub interval: IntervalKind,
    #[serde(default)]
    pub strategy: AlignmentStrategy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_redraws")]
    pub max_redraws: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_boots: default_n_boots(),
            alpha: default_alpha(),
            interval: IntervalKind::default(),
            strategy: AlignmentStrategy::default(),
            seed: 0,
            max_redraws: default_max_redraws(),
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_boots < 2 {
            return invalid(format!("n_boots must be at least 2, got {}", self.n_boots));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        Ok(())
    }
}

/// Per-coordinate interval bounds and point estimates for one direction matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CiTable {
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub point: DMatrix<f64>,
}

impl CiTable {
    pub fn new(lower: DMatrix<f64>, upper: DMatrix<f64>, point: DMatrix<f64>) -> Result<Self> {
        if lower.shape() != upper.shape() || lower.shape() != point.shape() {
            return invalid("interval table components differ in shape");
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return invalid("interval table has lower > upper");
        }
        if point.iter().any(|x| !x.is_finite()) {
            return invalid("interval table has non-finite point estimates");
        }
        Ok(CiTable { lower, upper, point })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.point.shape()
    }

    pub fn interval(&self, row: usize, direction: usize) -> (f64, f64) {
        (self.lower[(row, direction)], self.upper[(row, direction)])
    }
}

/// Interval tables for both blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CiTables {
    pub b: CiTable,
    pub gamma: CiTable,
}

impl CiTables {
    pub fn block(&self, block: Block) -> &CiTable {
        match block {
            Block::B => &self.b,
            Block::Gamma => &self.gamma,
        }
    }
}

/// Draw `N` row indices uniformly with replacement and apply them to both blocks.
pub fn resample_rows<R: Rng + ?Sized>(x: &DataMatrix, y: &DataMatrix, rng: &mut R) -> Result<(DataMatrix, DataMatrix)> {
    let n = x.nrows();
    if y.nrows() != n {
        return invalid(format!("X has {n} rows but Y has {}", y.nrows()));
    }
    let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    Ok((x.select_rows(&idx), y.select_rows(&idx)))
}

fn check_samples(samples: &[f64]) -> Result<()> {
    if samples.len() < 2 {
        return invalid(format!("need at least 2 samples, got {}", samples.len()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return invalid("samples contain non-finite values");
    }
    Ok(())
}

/// Empirical quantile of sorted data, linear interpolation at 0-based
/// position `(m − 1)·prob`.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let m = sorted.len();
    let h = (m - 1) as f64 * prob;
    let lo = h.floor() as usize;
    if lo + 1 >= m {
        return sorted[m - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// `(Q(α/2), Q(1 − α/2))` of the samples.
pub fn percentile_interval(samples: &[f64], alpha: f64) -> Result<(f64, f64)> {
    check_samples(samples)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return invalid(format!("alpha must lie in (0, 1], got {alpha}"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&sorted, alpha / 2.0), quantile_sorted(&sorted, 1.0 - alpha / 2.0)))
}

/// Standard normal quantile.
pub fn z_quantile(prob: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(prob)
}

/// `point ± z_{1−α/2} · sd(samples)`, sd with divisor `m − 1`.
pub fn normal_interval(point: f64, samples: &[f64], alpha: f64) -> Result<(f64, f64)> {
    check_samples(samples)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    if !point.is_finite() {
        return invalid("point estimate is not finite");
    }
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let half = z_quantile(1.0 - alpha / 2.0) * var.sqrt();
    Ok((point - half, point + half))
}

/// Aligned bootstrap replicates, indexed by replicate number.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateStore {
    pub replicates: Vec<CcaSolution>,
}

impl ReplicateStore {
    pub fn len(&self) -> usize {
        self.replicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicates.is_empty()
    }

    /// All replicate values of one coordinate.
    pub fn coordinate(&self, block: Block, row: usize, direction: usize) -> Vec<f64> {
        self.replicates
            .iter()
            .map(|s| match block {
                Block::B => s.b[(row, direction)],
                Block::Gamma => s.gamma[(row, direction)],
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub tables: CiTables,
    pub reference: CcaSolution,
    pub store: ReplicateStore,
    /// Number of resamples that were redrawn because they were rank deficient.
    pub redraws: usize,
    pub warnings: Vec<AlignmentWarning>,
}

/// Column SDs of both blocks.
pub fn column_sds(x: &DataMatrix, y: &DataMatrix) -> ColumnSds {
    ColumnSds { x: x.column_sds(), y: y.column_sds() }
}

struct Replicate {
    aligned: CcaSolution,
    redraws: usize,
    warnings: Vec<AlignmentWarning>,
}

fn run_replicate(
    x: &DataMatrix,
    y: &DataMatrix,
    reference: &CcaSolution,
    sds_ref: &ColumnSds,
    config: &BootstrapConfig,
    slot: usize,
) -> Result<Replicate> {
    let mut rng: SubstreamRng = substream(config.seed, slot as u64);
    let mut redraws = 0;
    loop {
        let (xs, ys) = resample_rows(x, y, &mut rng)?;
        match estimate_cca(&xs, &ys) {
            Ok(sol) => {
                let sds_rep = column_sds(&xs, &ys);
                let (aligned, transform) = align(reference, &sol, config.strategy, sds_ref, &sds_rep)?;
                return Ok(Replicate { aligned, redraws, warnings: transform.warnings });
            }
            Err(CcaError::RankDeficient { .. }) if redraws < config.max_redraws => redraws += 1,
            Err(CcaError::RankDeficient { .. }) => {
                return Err(CcaError::ResampleExhausted { slot, redraws });
            }
            Err(e) => return Err(e),
        }
    }
}

/// Estimate the reference solution and collect `n_boots` aligned replicates.
pub fn bootstrap_replicates(
    x: &DataMatrix,
    y: &DataMatrix,
    config: &BootstrapConfig,
) -> Result<(CcaSolution, ReplicateStore, usize, Vec<AlignmentWarning>)> {
    config.validate()?;
    let reference = estimate_cca(x, y)?;
    let sds_ref = column_sds(x, y);
    let reps: Vec<Replicate> = (0..config.n_boots)
        .into_par_iter()
        .map(|slot| run_replicate(x, y, &reference, &sds_ref, config, slot))
        .collect::<Result<_>>()?;
    let redraws = reps.iter().map(|r| r.redraws).sum();
    let mut warnings: Vec<AlignmentWarning> = Vec::new();
    for w in reps.iter().flat_map(|r| r.warnings.iter()) {
        if !warnings.contains(w) {
            warnings.push(*w);
        }
    }
    let store = ReplicateStore { replicates: reps.into_iter().map(|r| r.aligned).collect() };
    Ok((reference, store, redraws, warnings))
}

/// Interval tables from an existing replicate store.
pub fn intervals_from_store(reference: &CcaSolution, store: &ReplicateStore, kind: IntervalKind, alpha: f64) -> Result<CiTables> {
    let table = |block: Block, point: &DMatrix<f64>| -> Result<CiTable> {
        let (d, k) = point.shape();
        let mut lower = DMatrix::zeros(d, k);
        let mut upper = DMatrix::zeros(d, k);
        for j in 0..k {
            for i in 0..d {
                let samples = store.coordinate(block, i, j);
                let (l, u) = match kind {
                    IntervalKind::Percentile => percentile_interval(&samples, alpha)?,
                    IntervalKind::Normal => normal_interval(point[(i, j)], &samples, alpha)?,
                };
                lower[(i, j)] = l;
                upper[(i, j)] = u;
            }
        }
        CiTable::new(lower, upper, point.clone())
    };
    Ok(CiTables { b: table(Block::B, &reference.b)?, gamma: table(Block::Gamma, &reference.gamma)? })
}

/// The full bootstrap procedure: reference fit, resampling, alignment and
/// per-coordinate intervals. `workers` bounds the thread count; results do
/// not depend on it.
pub fn bootstrap_cca(x: &DataMatrix, y: &DataMatrix, config: &BootstrapConfig, workers: Option<usize>) -> Result<BootstrapResult> {
    with_workers(workers, || {
        let (reference, store, redraws, warnings) = bootstrap_replicates(x, y, config)?;
        let tables = intervals_from_store(&reference, &store, config.interval, config.alpha)?;
        Ok(BootstrapResult { tables, reference, store, redraws, warnings })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn pair(n: usize, p: usize, q: usize, seed: u64) -> (DataMatrix, DataMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let noise = DMatrix::from_fn(n, q, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let y = DMatrix::from_fn(n, q, |i, j| x[(i, j % p)] + noise[(i, j)]);
        (DataMatrix::new(x).unwrap(), DataMatrix::new(y).unwrap())
    }

    /// Oracle: sort, then interpolate by hand.
    fn oracle_quantile(samples: &[f64], prob: f64) -> f64 {
        let mut s = samples.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = 1.0 + (s.len() as f64 - 1.0) * prob;
        let below = pos.floor();
        let above = pos.ceil();
        let lo = s[below as usize - 1];
        let hi = s[above as usize - 1];
        lo + (pos - below) * (hi - lo)
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile_interval(&[2.5; 7], 0.05).unwrap(), (2.5, 2.5));
        let s: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let (l, u) = percentile_interval(&s, 0.05).unwrap();
        assert!((l - 3.475).abs() < 1e-12 && (u - 97.525).abs() < 1e-12);
        assert_eq!(percentile_interval(&s, 1.0).unwrap(), (50.5, 50.5));
        assert!(percentile_interval(&[1.0], 0.05).is_err());
        assert!(percentile_interval(&[1.0, f64::NAN], 0.05).is_err());
        let x = [0.3, -1.0, 2.0, 0.7, 0.1];
        assert!((percentile_interval(&x, 0.2).unwrap().0 - oracle_quantile(&x, 0.1)).abs() < 1e-15);
    }

    #[test]
    fn normal_examples() {
        assert_eq!(normal_interval(1.5, &[3.0; 5], 0.05).unwrap(), (1.5, 1.5));
        // samples with sd exactly 1: (-1, 1) has sd sqrt(2); use ±1/√2·… scaled
        let s = [-(0.5f64.sqrt()), 0.5f64.sqrt()];
        let (l, u) = normal_interval(0.0, &s, 0.05).unwrap();
        assert!((u - 1.95996).abs() < 1e-5 && (l + 1.95996).abs() < 1e-5);
        let (l, u) = normal_interval(0.3, &[0.1, 0.9, 0.4], 0.1).unwrap();
        assert!(((l + u) / 2.0 - 0.3).abs() < 1e-15);
    }

    #[test]
    fn resample_single_row_and_pairing() {
        let x = DataMatrix::from_row_slice(1, 2, &[1.0, 2.0]).unwrap();
        let y = DataMatrix::from_row_slice(1, 1, &[3.0]).unwrap();
        let mut rng = substream(1, 0);
        let (xs, ys) = resample_rows(&x, &y, &mut rng).unwrap();
        assert_eq!(xs.values(), x.values());
        assert_eq!(ys.values(), y.values());

        let x = DataMatrix::from_row_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = DataMatrix::from_row_slice(5, 1, &[0.0, 10.0, 20.0, 30.0, 40.0]).unwrap();
        let (xs, ys) = resample_rows(&x, &y, &mut substream(9, 3)).unwrap();
        for i in 0..5 {
            assert_eq!(ys.values()[(i, 0)], 10.0 * xs.values()[(i, 0)]);
        }
        let (xs2, _) = resample_rows(&x, &y, &mut substream(9, 3)).unwrap();
        assert_eq!(xs, xs2);
    }

    #[test]
    fn resample_index_frequencies() {
        let x = DataMatrix::from_row_slice(10, 1, &(0..10).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        let mut counts = [0usize; 10];
        let mut rng = substream(42, 0);
        for _ in 0..10_000 {
            let (xs, _) = resample_rows(&x, &x, &mut rng).unwrap();
            for v in xs.values().iter() {
                counts[*v as usize] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / 100_000.0;
            assert!((f - 0.1).abs() < 0.01, "{f}");
        }
    }

    #[test]
    fn smoke_shapes_and_ordering() {
        let (x, y) = pair(50, 3, 3, 1);
        let cfg = BootstrapConfig { n_boots: 20, seed: 5, ..Default::default() };
        let res = bootstrap_cca(&x, &y, &cfg, None).unwrap();
        assert_eq!(res.tables.b.shape(), (3, 3));
        assert_eq!(res.tables.gamma.shape(), (3, 3));
        assert!(res.tables.b.lower.iter().zip(res.tables.b.upper.iter()).all(|(l, u)| l <= u));
        assert_eq!(res.store.len(), 20);
        assert_eq!(res.tables.b.point, res.reference.b);
    }

    #[test]
    fn deterministic_for_seed_and_worker_count() {
        let (x, y) = pair(40, 2, 3, 2);
        let cfg = BootstrapConfig { n_boots: 30, seed: 77, ..Default::default() };
        let a = bootstrap_cca(&x, &y, &cfg, Some(1)).unwrap();
        let b = bootstrap_cca(&x, &y, &cfg, Some(3)).unwrap();
        assert_eq!(a.tables, b.tables);
        assert_eq!(a.store, b.store);
        let other = bootstrap_cca(&x, &y, &BootstrapConfig { seed: 78, ..cfg }, Some(1)).unwrap();
        assert_ne!(a.tables, other.tables);
    }

    #[test]
    fn percentile_negation_equivariance() {
        let s = [0.3, -1.2, 2.2, 0.9, 0.11, -0.4, 1.7];
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        let (l, u) = percentile_interval(&s, 0.1).unwrap();
        let (ln, un) = percentile_interval(&neg, 0.1).unwrap();
        assert!((ln + u).abs() < 1e-14 && (un + l).abs() < 1e-14);
    }

    #[test]
    fn identity_and_signflip_mostly_agree_at_strong_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1000;
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { z[i] } else { 0.0 } + 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
        let y = DMatrix::from_fn(n, 1, |i, _| z[i] + 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
        let (x, y) = (DataMatrix::new(x).unwrap(), DataMatrix::new(y).unwrap());
        let base = BootstrapConfig { n_boots: 200, seed: 4, ..Default::default() };
        let a = bootstrap_cca(&x, &y, &BootstrapConfig { strategy: AlignmentStrategy::Identity, ..base.clone() }, None).unwrap();
        let b = bootstrap_cca(&x, &y, &BootstrapConfig { strategy: AlignmentStrategy::SignFlip, ..base }, None).unwrap();
        assert!(a.reference.rho[0] > 0.9);
        let agree = a.tables.b.lower.iter().zip(b.tables.b.lower.iter()).filter(|(p, q)| p == q).count()
            + a.tables.gamma.lower.iter().zip(b.tables.gamma.lower.iter()).filter(|(p, q)| p == q).count();
        assert!(agree as f64 >= 0.9 * 3.0);
    }

    #[test]
    fn config_validation_and_json_defaults() {
        let cfg: BootstrapConfig = serde_json::from_str(r#"{"seed": 3}"#).unwrap();
        assert_eq!(cfg.n_boots, 10_000);
        assert_eq!(cfg.alpha, 0.05);
        assert_eq!(cfg.strategy, AlignmentStrategy::HungarianWeighted);
        assert_eq!(cfg.interval, IntervalKind::Percentile);
        assert_eq!(cfg.max_redraws, 100);
        assert!(BootstrapConfig { n_boots: 1, ..Default::default() }.validate().is_err());
        assert!(BootstrapConfig { alpha: 1.0, ..Default::default() }.validate().is_err());
        let cfg: BootstrapConfig = serde_json::from_str(r#"{"strategy": "procrustes", "interval": "normal"}"#).unwrap();
        assert_eq!(cfg.strategy, AlignmentStrategy::Procrustes);
        assert!(serde_json::from_str::<BootstrapConfig>(r#"{"nboots": 3}"#).is_err());
    }
}
