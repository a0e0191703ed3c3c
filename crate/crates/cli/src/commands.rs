use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use ccaboot::baseline::{asymptotic_ci, regression_ci};
use ccaboot::bootstrap::{bootstrap_cca, BootstrapConfig, CiTables};
use ccaboot::cca::{estimate_cca, DataMatrix};
use ccaboot::eval::{read_summary_rows, run_replicates_with_truths, write_summary_rows, SummaryRow};
use ccaboot::io::{
    load_covariance_model, read_matrix_file, save_ground_truth, save_preprocess_model, write_ci_tables, write_estimates,
    write_json, write_matrix,
};
use ccaboot::pipeline::{map_directions_to_original, preprocess};
use ccaboot::rng::derive_seed;
use ccaboot::simgen::build_truth;

use crate::args::{InferArgs, ReportArgs, SimulateArgs};
use crate::config::{self, InferFile, InferMethod, InferPaths, SimulateFile};
use crate::output::{digest_bytes, digest_file, InputDigest, Manifest, Staging};

/// Error with the exit status it maps to.
pub enum Failure {
    /// Bad flags or config (exit 1).
    Usage(anyhow::Error),
    /// Anything that went wrong while running (exit 2).
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(e: anyhow::Error) -> Failure {
    Failure::Usage(e)
}

type Outcome = std::result::Result<(), Failure>;

fn load_config<T: serde::de::DeserializeOwned + Default>(path: Option<&PathBuf>) -> std::result::Result<(T, Vec<InputDigest>, PathBuf), Failure> {
    match path {
        Some(p) => {
            let (file, bytes) = config::load(p).map_err(usage)?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((file, vec![digest_bytes(p, &bytes)], base))
        }
        None => Ok((T::default(), Vec::new(), PathBuf::new())),
    }
}

pub fn simulate(args: SimulateArgs) -> Outcome {
    let (file, mut inputs, base): (SimulateFile, _, _) = load_config(args.common.config.as_ref())?;
    let (settings, workers, out) = config::resolve_simulate(file, &base, &args.common, args.n_reps).map_err(usage)?;
    let mut staging = Staging::new(&out)?;

    let mut truths = Vec::with_capacity(settings.designs.len());
    for d in &settings.designs {
        let base_model = match d.sim3.as_ref().and_then(|s| s.base_model.as_ref()) {
            Some(dir) => {
                for f in ["sigma_x.csv", "sigma_y.csv", "sigma_xy.csv"] {
                    inputs.push(digest_file(&dir.join(f))?);
                }
                Some(load_covariance_model(dir).with_context(|| format!("design {}: base model", d.id))?)
            }
            None => None,
        };
        let truth = build_truth(d, base_model.as_ref()).with_context(|| format!("design {}", d.id))?;
        truths.push((d.clone(), truth));
    }

    let summary = run_replicates_with_truths(&truths, &settings.eval, workers)?;
    for c in summary.cells.iter().filter(|c| c.failures > 0) {
        eprintln!(
            "warning: {} on {}: {} failed replicate(s){}",
            c.method,
            c.design,
            c.failures,
            if c.valid { "" } else { ", cell marked invalid" }
        );
    }
    staging.write("summary.csv", |w| Ok(summary.write_csv(w)?))?;
    for (d, t) in &truths {
        let dir = staging.subdir(&format!("truth/{}", d.id))?;
        save_ground_truth(&dir, t)?;
    }
    let outputs = vec!["summary.csv".to_string(), "truth".to_string(), "manifest.json".to_string()];
    let manifest = Manifest::new("simulate", Some(settings.eval.seed), &settings, inputs, outputs);
    staging.write("manifest.json", |w| Ok(write_json(&manifest, w)?))?;
    staging.commit()?;
    Ok(())
}

fn read_data(path: &Path, what: &str) -> anyhow::Result<nalgebra::DMatrix<f64>> {
    read_matrix_file(path).with_context(|| format!("reading {what}"))
}

pub fn infer(args: InferArgs) -> Outcome {
    let (file, mut inputs, base): (InferFile, _, _) = load_config(args.common.config.as_ref())?;
    let paths = InferPaths { x: args.x, y: args.y, w: args.w };
    let (settings, workers, out) = config::resolve_infer(file, &base, &args.common, paths).map_err(usage)?;
    let mut staging = Staging::new(&out)?;

    let x = read_data(&settings.x, "X")?;
    let y = read_data(&settings.y, "Y")?;
    inputs.push(digest_file(&settings.x)?);
    inputs.push(digest_file(&settings.y)?);
    if x.nrows() != y.nrows() {
        return Err(anyhow!("X has {} rows but Y has {}", x.nrows(), y.nrows()).into());
    }

    let (xd, yd, prep) = match (&settings.w, &settings.pipeline) {
        (Some(wp), Some(pc)) => {
            let w = read_data(wp, "W")?;
            inputs.push(digest_file(wp)?);
            let pre = preprocess(&x, &y, &w, pc).context("pipeline")?;
            (pre.x, pre.y, Some(pre.model))
        }
        _ => (DataMatrix::new(x)?, DataMatrix::new(y)?, None),
    };
    if let Some(model) = &prep {
        let dir = staging.subdir("preprocess")?;
        save_preprocess_model(&dir, model)?;
    }

    let estimate = estimate_cca(&xd, &yd).context("estimate")?;
    staging.write("estimates.csv", |w| Ok(write_estimates(&estimate, w)?))?;
    if let Some(model) = &prep {
        let mapped = map_directions_to_original(&estimate.b, model, None)?;
        staging.write("directions_original.csv", |w| Ok(write_matrix(&mapped, None, w)?))?;
    }

    for &method in &settings.methods {
        let tables: CiTables = match method {
            InferMethod::Bootstrap => {
                let bc = BootstrapConfig {
                    n_boots: settings.n_boots,
                    alpha: settings.alpha,
                    interval: settings.interval,
                    strategy: settings.strategy,
                    seed: settings.seed,
                    max_redraws: settings.max_redraws,
                };
                let res = bootstrap_cca(&xd, &yd, &bc, workers).context("bootstrap")?;
                for w in &res.warnings {
                    eprintln!("warning: bootstrap: {w:?}");
                }
                if res.redraws > 0 {
                    eprintln!("warning: bootstrap: {} rank-deficient resample(s) redrawn", res.redraws);
                }
                res.tables
            }
            InferMethod::Asymptotic => {
                let (t, warnings) = asymptotic_ci(&xd, &yd, settings.alpha).context("asymptotic")?;
                for w in &warnings {
                    eprintln!("warning: asymptotic: {w}");
                }
                t
            }
            InferMethod::Regression => regression_ci(&xd, &yd, settings.alpha, derive_seed(settings.seed, &[1])).context("regression")?,
        };
        staging.write(&format!("ci_{}.csv", method.name()), |w| Ok(write_ci_tables(&tables, w)?))?;
        if let Some(model) = &prep {
            let mapped = map_directions_to_original(&tables.b.point, model, Some(&tables.b))?;
            staging.write(&format!("directions_original_{}.csv", method.name()), |w| Ok(write_matrix(&mapped, None, w)?))?;
        }
    }

    let mut outputs = staging.entries().to_vec();
    outputs.push("manifest.json".into());
    let manifest = Manifest::new("infer", Some(settings.seed), &settings, inputs, outputs);
    staging.write("manifest.json", |w| Ok(write_json(&manifest, w)?))?;
    staging.commit()?;
    Ok(())
}

type RowKey = (String, String, ccaboot::Block, usize, usize, String);

fn key(r: &SummaryRow) -> RowKey {
    (r.method.clone(), r.design.clone(), r.block, r.direction, r.index, r.metric.clone())
}

fn same_value(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

/// Concatenate summaries in input order. Exact duplicates collapse;
/// a key seen with different values is an error.
pub fn merge_summaries(inputs: &[(String, Vec<SummaryRow>)]) -> anyhow::Result<Vec<SummaryRow>> {
    let mut merged: Vec<SummaryRow> = Vec::new();
    let mut seen: HashMap<RowKey, (usize, &str)> = HashMap::new();
    for (name, rows) in inputs {
        for r in rows {
            match seen.get(&key(r)) {
                Some(&(i, first)) => {
                    let m = &merged[i];
                    if !same_value(m.value, r.value) || m.n_reps != r.n_reps {
                        anyhow::bail!(
                            "conflicting values for {} / {} / {}[{},{}] / {} in {first} and {name}",
                            r.method,
                            r.design,
                            r.block,
                            r.index,
                            r.direction,
                            r.metric
                        );
                    }
                }
                None => {
                    seen.insert(key(r), (merged.len(), name.as_str()));
                    merged.push(r.clone());
                }
            }
        }
    }
    Ok(merged)
}

type CellKey = (String, String, String);

fn text_summary<W: Write>(rows: &[SummaryRow], mut w: W) -> anyhow::Result<()> {
    const METRICS: [&str; 5] = ["coverage", "mean_length", "rejection_rate", "conservative_proportion", "failures"];
    let mut order: Vec<CellKey> = Vec::new();
    let mut values: HashMap<CellKey, (HashMap<String, f64>, usize)> = HashMap::new();
    for r in rows {
        let id = (r.method.clone(), r.design.clone(), format!("{}[{},{}]", r.block, r.index, r.direction));
        let entry = values.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (HashMap::new(), r.n_reps)
        });
        entry.0.insert(r.metric.clone(), r.value);
    }
    writeln!(w, "{:<36} {:<16} {:<14} {:>9} {:>11} {:>9} {:>12} {:>8} {:>6}", "method", "design", "coordinate", "coverage", "mean_length", "rejection", "conservative", "failures", "n_reps")?;
    for id in &order {
        let (m, n) = &values[id];
        let cell = |k: &str| m.get(k).map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        let [c, l, r, cp, f] = METRICS.map(cell);
        writeln!(w, "{:<36} {:<16} {:<14} {c:>9} {l:>11} {r:>9} {cp:>12} {f:>8} {n:>6}", id.0, id.1, id.2)?;
    }
    Ok(())
}

pub fn report(args: ReportArgs) -> Outcome {
    let out = args.common.out.clone().ok_or_else(|| usage(anyhow!("out: no output directory given (use --out)")))?;
    let mut staging = Staging::new(&out)?;
    let mut tables = Vec::new();
    let mut inputs = Vec::new();
    for path in &args.inputs {
        let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        let rows = read_summary_rows(BufReader::new(f)).with_context(|| format!("{}", path.display()))?;
        inputs.push(digest_file(path)?);
        tables.push((path.display().to_string(), rows));
    }
    let merged = merge_summaries(&tables)?;
    staging.write("report.csv", |w| Ok(write_summary_rows(&merged, w)?))?;
    if args.text {
        staging.write("report.txt", |w| text_summary(&merged, w))?;
    }
    let mut outputs = staging.entries().to_vec();
    outputs.push("manifest.json".into());
    let settings = serde_json::json!({ "text": args.text, "rows": merged.len() });
    let manifest = Manifest::new("report", None, &settings, inputs, outputs);
    staging.write("manifest.json", |w| Ok(write_json(&manifest, w)?))?;
    staging.commit()?;
    Ok(())
}
