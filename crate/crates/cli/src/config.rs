use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ccaboot::alignment::AlignmentStrategy;
use ccaboot::bootstrap::IntervalKind;
use ccaboot::eval::{EvalConfig, Method};
use ccaboot::pipeline::PipelineConfig;
use ccaboot::simgen::SimDesign;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::CommonArgs;

/// Parse a JSON config file, returning it with its raw bytes for digesting.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<(T, Vec<u8>)> {
    let bytes = fs::read(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let value = serde_json::from_slice(&bytes).with_context(|| format!("invalid config {}", path.display()))?;
    Ok((value, bytes))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    #[serde(default)]
    pub designs: Vec<SimDesign>,
    #[serde(default)]
    pub eval: Option<EvalConfig>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Settings a simulate run actually used. Recorded in the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct SimulateSettings {
    pub designs: Vec<SimDesign>,
    pub eval: EvalConfig,
}

pub fn resolve_simulate(file: SimulateFile, base_dir: &Path, common: &CommonArgs, n_reps: Option<usize>) -> Result<(SimulateSettings, Option<usize>, PathBuf)> {
    let mut eval = file.eval.unwrap_or_default();
    if let Some(s) = common.seed {
        eval.seed = s;
    }
    if let Some(a) = common.alpha {
        eval.alpha = a;
    }
    if let Some(b) = common.n_boots {
        eval.n_boots = b;
    }
    if let Some(r) = n_reps {
        eval.n_reps = r;
    }
    if common.strategy.is_some() || common.interval.is_some() {
        let mut methods: Vec<Method> = Vec::new();
        for m in eval.methods {
            let m = match m {
                Method::Bootstrap { strategy, interval } => Method::Bootstrap {
                    strategy: common.strategy.unwrap_or(strategy),
                    interval: common.interval.unwrap_or(interval),
                },
                other => other,
            };
            if !methods.contains(&m) {
                methods.push(m);
            }
        }
        eval.methods = methods;
    }
    eval.validate().context("eval")?;
    if file.designs.is_empty() {
        bail!("designs: at least one design is required");
    }
    let mut designs = file.designs;
    for d in &mut designs {
        if d.id.is_empty() || !d.id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            bail!("designs: id '{}' must be non-empty and use only letters, digits, '-', '_' or '.'", d.id);
        }
        d.validate().with_context(|| format!("designs: {}", d.id))?;
        if let Some(s3) = d.sim3.as_mut() {
            if let Some(p) = s3.base_model.as_mut() {
                if p.is_relative() {
                    *p = base_dir.join(&*p);
                }
            }
        }
    }
    let workers = common.workers.or(file.workers);
    let out = common.out.clone().or(file.out).context("out: no output directory given (use --out)")?;
    Ok((SimulateSettings { designs, eval }, workers, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferMethod {
    Bootstrap,
    Asymptotic,
    Regression,
}

impl InferMethod {
    pub fn name(self) -> &'static str {
        match self {
            InferMethod::Bootstrap => "bootstrap",
            InferMethod::Asymptotic => "asymptotic",
            InferMethod::Regression => "regression",
        }
    }
}

fn default_infer_methods() -> Vec<InferMethod> {
    vec![InferMethod::Bootstrap]
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferFile {
    pub x: Option<PathBuf>,
    pub y: Option<PathBuf>,
    #[serde(default)]
    pub w: Option<PathBuf>,
    #[serde(default)]
    pub methods: Option<Vec<InferMethod>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub n_boots: Option<usize>,
    #[serde(default)]
    pub strategy: Option<AlignmentStrategy>,
    #[serde(default)]
    pub interval: Option<IntervalKind>,
    #[serde(default)]
    pub max_redraws: Option<usize>,
    #[serde(default)]
    pub pipeline: Option<PipelineConfig>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InferSettings {
    pub x: PathBuf,
    pub y: PathBuf,
    pub w: Option<PathBuf>,
    pub methods: Vec<InferMethod>,
    pub seed: u64,
    pub alpha: f64,
    pub n_boots: usize,
    pub strategy: AlignmentStrategy,
    pub interval: IntervalKind,
    pub max_redraws: usize,
    pub pipeline: Option<PipelineConfig>,
}

pub struct InferPaths {
    pub x: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub w: Option<PathBuf>,
}

pub fn resolve_infer(file: InferFile, base_dir: &Path, common: &CommonArgs, paths: InferPaths) -> Result<(InferSettings, Option<usize>, PathBuf)> {
    let rel = |p: PathBuf| if p.is_relative() { base_dir.join(p) } else { p };
    let x = paths.x.or(file.x.map(rel)).context("x: no X matrix given (use --x)")?;
    let y = paths.y.or(file.y.map(rel)).context("y: no Y matrix given (use --y)")?;
    let w = paths.w.or(file.w.map(rel));
    let alpha = common.alpha.or(file.alpha).unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!("alpha: must lie in (0, 1), got {alpha}");
    }
    let n_boots = common.n_boots.or(file.n_boots).unwrap_or(10_000);
    if n_boots < 2 {
        bail!("n_boots: must be at least 2");
    }
    let methods = file.methods.unwrap_or_else(default_infer_methods);
    if methods.is_empty() {
        bail!("methods: at least one method is required");
    }
    if file.pipeline.is_some() && w.is_none() {
        bail!("pipeline: a nuisance matrix W is required (use --w)");
    }
    let settings = InferSettings {
        x,
        y,
        pipeline: if w.is_some() { Some(file.pipeline.unwrap_or_default()) } else { None },
        w,
        methods,
        seed: common.seed.or(file.seed).unwrap_or(0),
        alpha,
        n_boots,
        strategy: common.strategy.or(file.strategy).unwrap_or_default(),
        interval: common.interval.or(file.interval).unwrap_or_default(),
        max_redraws: file.max_redraws.unwrap_or(100),
    };
    let workers = common.workers.or(file.workers);
    let out = common.out.clone().or(file.out).context("out: no output directory given (use --out)")?;
    Ok((settings, workers, out))
}
