//! Monte-Carlo evaluation of interval methods against simulated ground truth.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentStrategy;
use crate::baseline::{asymptotic_ci, regression_ci};
use crate::bootstrap::{bootstrap_replicates, intervals_from_store, BootstrapConfig, CiTables, IntervalKind, ReplicateStore};
use crate::cca::{CcaSolution, DataMatrix};
use crate::error::{invalid, Block, CcaError, Result};
use crate::parallel::with_workers;
use crate::rng::{derive_seed, substream};
use crate::simgen::{build_truth, GroundTruth, MonitoredCoordinate, MvnSampler, SimDesign};

/// Share of failed replicates above which a cell is reported as invalid.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Bootstrap { strategy: AlignmentStrategy, interval: IntervalKind },
    Asymptotic,
    Regression,
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Bootstrap { strategy, interval } => format!("bootstrap-{}-{}", strategy.name(), interval.name()),
            Method::Asymptotic => "asymptotic".into(),
            Method::Regression => "regression".into(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Method {
    type Err = CcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asymptotic" => return Ok(Method::Asymptotic),
            "regression" => return Ok(Method::Regression),
            _ => {}
        }
        let parts: Vec<&str> = s.split('-').collect();
        match parts.as_slice() {
            ["bootstrap"] => Ok(Method::Bootstrap { strategy: AlignmentStrategy::default(), interval: IntervalKind::default() }),
            ["bootstrap", st] => Ok(Method::Bootstrap { strategy: st.parse()?, interval: IntervalKind::default() }),
            ["bootstrap", st, iv] => Ok(Method::Bootstrap { strategy: st.parse()?, interval: iv.parse()? }),
            _ => invalid(format!("unknown method '{s}'")),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Bootstrap { strategy: AlignmentStrategy::HungarianWeighted, interval: IntervalKind::Percentile }]
}

fn default_n_reps() -> usize {
    1000
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
pub struct EvalConfig {
    #[serde(default = "default_n_reps")]
    pub n_reps: usize,
    #[serde(default = "default_n_boots")]
    pub n_boots: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_redraws")]
    pub max_redraws: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_reps: default_n_reps(),
            n_boots: default_n_boots(),
            alpha: default_alpha(),
            seed: 0,
            max_redraws: default_max_redraws(),
            methods: default_methods(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_reps == 0 {
            return invalid("n_reps must be positive");
        }
        if self.methods.is_empty() {
            return invalid("at least one method is required");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.methods.iter().any(|m| matches!(m, Method::Bootstrap { .. })) && self.n_boots < 2 {
            return invalid("n_boots must be at least 2");
        }
        Ok(())
    }
}

/// Closed-interval containment.
pub fn contains(lower: f64, upper: f64, value: f64) -> bool {
    lower <= value && value <= upper
}

/// `true` where zero lies outside the closed interval.
pub fn rejection_flags(tables: &CiTables, block: Block) -> Vec<Vec<bool>> {
    let t = tables.block(block);
    let (d, k) = t.shape();
    (0..d).map(|i| (0..k).map(|j| !contains(t.lower[(i, j)], t.upper[(i, j)], 0.0)).collect()).collect()
}

/// A miss whose interval lies entirely closer to zero than the truth.
pub fn conservative_flag(interval: (f64, f64), true_value: f64) -> Result<bool> {
    let (l, u) = interval;
    if true_value == 0.0 {
        return Err(CcaError::Contract("conservative flag is undefined for a zero truth".into()));
    }
    if contains(l, u, true_value) {
        return Err(CcaError::Contract("conservative flag requested for a covering interval".into()));
    }
    Ok(l.abs().max(u.abs()) < true_value.abs())
}

/// Per-direction signs and the covered flags they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedCoverage {
    /// Sign chosen for each direction that has a monitored coordinate.
    pub signs: BTreeMap<usize, f64>,
    pub covered: Vec<bool>,
}

/// For every direction, flip the truth of `β_k` and `γ_k` jointly when that
/// covers strictly more of the direction's monitored coordinates.
pub fn coverage_with_sign_maximization(tables: &CiTables, monitored: &[MonitoredCoordinate]) -> Result<SignedCoverage> {
    for m in monitored {
        let (d, k) = tables.block(m.block).shape();
        if m.index >= d || m.direction >= k {
            return invalid(format!("monitored coordinate ({}, {}, {}) outside a {d}x{k} table", m.block, m.index, m.direction));
        }
    }
    let hit = |m: &MonitoredCoordinate, s: f64| {
        let (l, u) = tables.block(m.block).interval(m.index, m.direction);
        contains(l, u, s * m.true_value)
    };
    let mut signs = BTreeMap::new();
    for m in monitored {
        if signs.contains_key(&m.direction) {
            continue;
        }
        let group = monitored.iter().filter(|c| c.direction == m.direction);
        let plus = group.clone().filter(|c| hit(c, 1.0)).count();
        let minus = group.filter(|c| hit(c, -1.0)).count();
        signs.insert(m.direction, if minus > plus { -1.0 } else { 1.0 });
    }
    let covered = monitored.iter().map(|m| hit(m, signs[&m.direction])).collect();
    Ok(SignedCoverage { signs, covered })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateOutcome {
    pub covered: bool,
    pub length: f64,
    pub rejected: bool,
    /// Only defined for a missed non-null coordinate.
    pub conservative: Option<bool>,
}

pub fn evaluate_tables(tables: &CiTables, monitored: &[MonitoredCoordinate]) -> Result<Vec<CoordinateOutcome>> {
    let sc = coverage_with_sign_maximization(tables, monitored)?;
    monitored
        .iter()
        .zip(sc.covered)
        .map(|(m, covered)| {
            let (l, u) = tables.block(m.block).interval(m.index, m.direction);
            let truth = sc.signs[&m.direction] * m.true_value;
            let conservative = if !covered && !m.is_null { Some(conservative_flag((l, u), truth)?) } else { None };
            Ok(CoordinateOutcome { covered, length: u - l, rejected: !contains(l, u, 0.0), conservative })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub method: Method,
    pub design: String,
    pub replicate: usize,
    /// One entry per monitored coordinate, or the failure message.
    pub outcome: std::result::Result<Vec<CoordinateOutcome>, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub method: Method,
    pub design: String,
    pub coordinate: MonitoredCoordinate,
    pub coverage: f64,
    pub mean_length: f64,
    pub rejection_rate: f64,
    pub conservative_proportion: f64,
    pub failures: usize,
    /// Successful replicates entering the averages.
    pub n_reps: usize,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub cells: Vec<CellSummary>,
    pub records: Vec<EvalRecord>,
}

impl EvalSummary {
    pub fn cell(&self, method: &Method, design: &str, block: Block, direction: usize, index: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| {
            &c.method == method
                && c.design == design
                && c.coordinate.block == block
                && c.coordinate.direction == direction
                && c.coordinate.index == index
        })
    }

    pub fn rows(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for c in &self.cells {
            let nan_if_invalid = |v: f64| if c.valid { v } else { f64::NAN };
            let metrics = [
                ("coverage", nan_if_invalid(c.coverage)),
                ("mean_length", nan_if_invalid(c.mean_length)),
                ("rejection_rate", nan_if_invalid(c.rejection_rate)),
                ("conservative_proportion", nan_if_invalid(c.conservative_proportion)),
                ("failures", c.failures as f64),
            ];
            for (metric, value) in metrics {
                rows.push(SummaryRow {
                    method: c.method.name(),
                    design: c.design.clone(),
                    block: c.coordinate.block,
                    direction: c.coordinate.direction + 1,
                    index: c.coordinate.index + 1,
                    metric: metric.to_string(),
                    value,
                    n_reps: c.n_reps,
                });
            }
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_summary_rows(&self.rows(), w)
    }
}

/// Tidy summary row. `direction` and `index` are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub design: String,
    pub block: Block,
    pub direction: usize,
    pub index: usize,
    pub metric: String,
    pub value: f64,
    pub n_reps: usize,
}

pub const SUMMARY_COLUMNS: [&str; 8] = ["method", "design", "block", "direction", "index", "metric", "value", "n_reps"];

pub fn write_summary_rows<W: Write>(rows: &[SummaryRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wr.write_record(SUMMARY_COLUMNS)?;
    }
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Read a summary CSV, insisting on the exact column set.
pub fn read_summary_rows<R: Read>(r: R) -> Result<Vec<SummaryRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != SUMMARY_COLUMNS {
        return invalid(format!("summary columns {:?} do not match {:?}", got, SUMMARY_COLUMNS));
    }
    let mut rows = Vec::new();
    for rec in rd.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

fn design_tag(id: &str) -> Vec<u64> {
    id.bytes().map(u64::from).collect()
}

/// Seed of the data substream family for one design.
pub fn design_seed(seed: u64, design_id: &str) -> u64 {
    derive_seed(seed, &design_tag(design_id))
}

/// Run every method on the same simulated data set.
fn run_one_replicate(
    design: &SimDesign,
    truth: &GroundTruth,
    sampler: &MvnSampler,
    config: &EvalConfig,
    rep: usize,
) -> Result<Vec<EvalRecord>> {
    let dseed = design_seed(config.seed, &design.id);
    let (x, y) = sampler.sample(design.n, &mut substream(dseed, rep as u64))?;
    let method_seed = derive_seed(dseed, &[rep as u64]);
    let mut stores: BTreeMap<AlignmentStrategy, std::result::Result<(CcaSolution, ReplicateStore), String>> = BTreeMap::new();
    let mut records = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let tables: std::result::Result<CiTables, String> = match method {
            Method::Bootstrap { strategy, interval } => {
                let entry = stores.entry(strategy).or_insert_with(|| {
                    let bc = BootstrapConfig {
                        n_boots: config.n_boots,
                        alpha: config.alpha,
                        interval,
                        strategy,
                        seed: method_seed,
                        max_redraws: config.max_redraws,
                    };
                    bootstrap_replicates(&x, &y, &bc).map(|(r, s, _, _)| (r, s)).map_err(|e| e.to_string())
                });
                match entry {
                    Ok((reference, store)) => intervals_from_store(reference, store, interval, config.alpha).map_err(|e| e.to_string()),
                    Err(e) => Err(e.clone()),
                }
            }
            Method::Asymptotic => asymptotic_ci(&x, &y, config.alpha).map(|(t, _)| t).map_err(|e| e.to_string()),
            Method::Regression => regression_ci(&x, &y, config.alpha, method_seed).map_err(|e| e.to_string()),
        };
        let outcome = match tables {
            Ok(t) => evaluate_tables(&t, &truth.monitored).map_err(|e| e.to_string()),
            Err(e) => Err(e),
        };
        records.push(EvalRecord { method, design: design.id.clone(), replicate: rep, outcome });
    }
    Ok(records)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn summarize(method: Method, design: &str, truth: &GroundTruth, records: &[&EvalRecord], n_reps: usize) -> Vec<CellSummary> {
    let ok: Vec<&Vec<CoordinateOutcome>> = records.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let failures = records.len() - ok.len();
    let valid = (failures as f64) <= MAX_FAILURE_RATE * n_reps as f64;
    truth
        .monitored
        .iter()
        .enumerate()
        .map(|(c, &coordinate)| {
            let outs: Vec<&CoordinateOutcome> = ok.iter().map(|o| &o[c]).collect();
            let flag = |b: bool| if b { 1.0 } else { 0.0 };
            CellSummary {
                method,
                design: design.to_string(),
                coordinate,
                coverage: mean(outs.iter().map(|o| flag(o.covered))),
                mean_length: mean(outs.iter().map(|o| o.length)),
                rejection_rate: mean(outs.iter().map(|o| flag(o.rejected))),
                conservative_proportion: mean(outs.iter().filter_map(|o| o.conservative).map(flag)),
                failures,
                n_reps: ok.len(),
                valid,
            }
        })
        .collect()
}

/// Evaluate all methods over `n_reps` simulated data sets per design, with
/// ground truths supplied by the caller.
pub fn run_replicates_with_truths(designs: &[(SimDesign, GroundTruth)], config: &EvalConfig, workers: Option<usize>) -> Result<EvalSummary> {
    config.validate()?;
    let mut ids: Vec<&str> = designs.iter().map(|(d, _)| d.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return invalid("design ids must be unique");
    }
    with_workers(workers, || {
        let mut cells = Vec::new();
        let mut all = Vec::new();
        for (design, truth) in designs {
            design.validate()?;
            let sampler = MvnSampler::new(&truth.model)?;
            let per_rep: Vec<Vec<EvalRecord>> = (0..config.n_reps)
                .into_par_iter()
                .map(|rep| run_one_replicate(design, truth, &sampler, config, rep))
                .collect::<Result<_>>()?;
            let records: Vec<EvalRecord> = per_rep.into_iter().flatten().collect();
            for &method in &config.methods {
                let mine: Vec<&EvalRecord> = records.iter().filter(|r| r.method == method).collect();
                cells.extend(summarize(method, &design.id, truth, &mine, config.n_reps));
            }
            all.extend(records);
        }
        Ok(EvalSummary { cells, records: all })
    })
}

/// As [`run_replicates_with_truths`], building each ground truth from its
/// design (Sim III designs use their synthetic base).
pub fn run_replicates(designs: &[SimDesign], config: &EvalConfig, workers: Option<usize>) -> Result<EvalSummary> {
    let with_truths = designs
        .iter()
        .map(|d| Ok((d.clone(), build_truth(d, None)?)))
        .collect::<Result<Vec<_>>>()?;
    run_replicates_with_truths(&with_truths, config, workers)
}

/// The data set the harness draws for replicate `rep` of `design`.
pub fn replicate_data(design: &SimDesign, truth: &GroundTruth, seed: u64, rep: usize) -> Result<(DataMatrix, DataMatrix)> {
    MvnSampler::new(&truth.model)?.sample(design.n, &mut substream(design_seed(seed, &design.id), rep as u64))
}
