//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints one `[PASS]`/`[FAIL]` line in ordinary `cargo test` output.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ccaboot::alignment::{procrustes_rotation, AlignmentStrategy};
use ccaboot::assignment::solve_assignment;
use ccaboot::baseline::direction_variances;
use ccaboot::bootstrap::{percentile_interval, CiTable, CiTables, IntervalKind};
use ccaboot::cca::{estimate_cca, population_cca, DataMatrix};
use ccaboot::eval::{coverage_with_sign_maximization, run_replicates, EvalConfig, EvalSummary, Method};
use ccaboot::model::invert_cca_model;
use ccaboot::rng::{substream, SubstreamRng};
use ccaboot::simgen::{build_sim2_truth, MonitoredCoordinate, Regime, SimDesign};
use ccaboot::Block;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Check = Result<String, String>;

fn gaussian(r: usize, c: usize, rng: &mut SubstreamRng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Haar-distributed orthogonal matrix.
fn random_orthogonal(k: usize, rng: &mut SubstreamRng) -> DMatrix<f64> {
    let qr = gaussian(k, k, rng).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let t = start.elapsed();
    if t > budget {
        Err(format!("took {t:.2?}, budget {budget:?}"))
    } else {
        Ok(())
    }
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = substream(101, 0);
    let (mut worst_rho, mut worst_dir) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let p = [4, 10][i % 2];
        let k = [2, 3][(i / 2) % 2];
        let mut rho: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..0.95)).collect();
        rho.sort_by(|a, b| b.total_cmp(a));
        if rho.windows(2).any(|w| w[0] - w[1] < 1e-3) {
            rho = (0..k).map(|j| 0.9 - 0.3 * j as f64).collect();
        }
        let b = gaussian(p, k, &mut rng);
        let g = gaussian(k, k, &mut rng);
        let model = invert_cca_model(&DVector::from_vec(rho.clone()), &b, &g).map_err(|e| e.to_string())?;
        let sol = population_cca(&model).map_err(|e| e.to_string())?;
        for j in 0..k {
            worst_rho = worst_rho.max((sol.rho[j] - rho[j]).abs());
            let s = if sol.gamma.column(j).dot(&g.column(j)) < 0.0 { -1.0 } else { 1.0 };
            worst_dir = worst_dir
                .max((sol.b.column(j) * s - b.column(j)).abs().max())
                .max((sol.gamma.column(j) * s - g.column(j)).abs().max());
        }
    }
    within_budget(start, Duration::from_secs(5))?;
    let msg = format!("max |Δρ| = {worst_rho:.1e}, max direction error = {worst_dir:.1e}");
    if worst_rho <= 1e-8 && worst_dir <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Canonical correlations from the SVD of `Sxx^{-1/2} Sxy Syy^{-1/2}`.
fn covariance_oracle(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Vec<f64> {
    let center = |m: &DMatrix<f64>| {
        let mut c = m.clone();
        for mut col in c.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        c
    };
    let (xc, yc) = (center(x), center(y));
    let n1 = (x.nrows() - 1) as f64;
    let inv_sqrt = |s: DMatrix<f64>| {
        let e = SymmetricEigen::new(s);
        let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| 1.0 / l.sqrt()));
        &e.eigenvectors * d * e.eigenvectors.transpose()
    };
    let sxx = inv_sqrt(xc.transpose() * &xc / n1);
    let syy = inv_sqrt(yc.transpose() * &yc / n1);
    let m = sxx * (xc.transpose() * &yc / n1) * syy;
    let mut s: Vec<f64> = m.singular_values().iter().cloned().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s.truncate(x.ncols().min(y.ncols()));
    s
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let mut rng = substream(102, 0);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let (n, p, q) = (30 + 7 * i, 2 + i % 5, 2 + (i / 5) % 4);
        let shared = gaussian(n, 1, &mut rng);
        let mut x = gaussian(n, p, &mut rng);
        let mut y = gaussian(n, q, &mut rng);
        for r in 0..n {
            x[(r, 0)] += 2.0 * shared[(r, 0)];
            y[(r, 0)] += 1.5 * shared[(r, 0)];
        }
        let est = estimate_cca(&DataMatrix::new(x.clone()).unwrap(), &DataMatrix::new(y.clone()).unwrap()).map_err(|e| e.to_string())?;
        let oracle = covariance_oracle(&x, &y);
        for (a, b) in est.rho.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    within_budget(start, Duration::from_secs(5))?;
    let msg = format!("max |Δρ̂| over 50 data sets = {worst:.1e}");
    if worst <= 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn criterion_3() -> Check {
    let start = Instant::now();
    let mut rng = substream(103, 0);
    let perms = permutations(5);
    let value = |s: &DMatrix<f64>, p: &[usize]| (0..5).map(|i| s[(i, p[i])]).sum::<f64>();
    for inst in 0..500 {
        let s = gaussian(5, 5, &mut rng);
        let got = solve_assignment(&s).map_err(|e| e.to_string())?;
        let best = perms.iter().map(|p| value(&s, p)).fold(f64::NEG_INFINITY, f64::max);
        if value(&s, &got) != best {
            return Err(format!("instance {inst}: value {} vs exhaustive {best}", value(&s, &got)));
        }
    }
    within_budget(start, Duration::from_secs(5))?;
    Ok("500/500 optimal".into())
}

fn criterion_4() -> Check {
    let start = Instant::now();
    let mut rng = substream(104, 0);
    let mut worst_orth = 0.0f64;
    for inst in 0..50 {
        let (d, k) = (3 + inst % 8, 2 + inst % 4);
        let target = gaussian(d, k, &mut rng);
        let source = gaussian(d, k, &mut rng);
        let t = procrustes_rotation(&target, &source).map_err(|e| e.to_string())?.rotation;
        worst_orth = worst_orth.max((t.transpose() * &t - DMatrix::identity(k, k)).abs().max());
        let obj = |r: &DMatrix<f64>| (&target - &source * r).norm();
        let mine = obj(&t);
        for _ in 0..100 {
            let other = obj(&random_orthogonal(k, &mut rng));
            if other < mine - 1e-12 {
                return Err(format!("instance {inst}: random rotation {other} beats {mine}"));
            }
        }
    }
    within_budget(start, Duration::from_secs(5))?;
    let msg = format!("max ‖TᵀT − I‖ = {worst_orth:.1e}");
    if worst_orth <= 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn hungarian(interval: IntervalKind) -> Method {
    Method::Bootstrap { strategy: AlignmentStrategy::HungarianWeighted, interval }
}

fn sim1_run() -> Result<EvalSummary, String> {
    let design = SimDesign::sim1("sim1-dense-0.9", 10, 10, 1000, 0.9, Regime::Dense);
    let config = EvalConfig { n_reps: 200, n_boots: 1000, seed: 2024, methods: vec![hungarian(IntervalKind::Percentile)], ..EvalConfig::default() };
    run_replicates(&[design], &config, None).map_err(|e| e.to_string())
}

fn metric(s: &EvalSummary, method: Method, design: &str, index: usize) -> Result<(f64, f64), String> {
    let c = s.cell(&method, design, Block::B, 0, index).ok_or("missing cell")?;
    if !c.valid {
        return Err(format!("cell invalid: {} failures", c.failures));
    }
    Ok((c.coverage, c.rejection_rate))
}

fn criterion_5(run: &Result<EvalSummary, String>) -> Check {
    let s = run.as_ref().map_err(Clone::clone)?;
    let m = hungarian(IntervalKind::Percentile);
    let (null_cov, _) = metric(s, m, "sim1-dense-0.9", 9)?;
    let (sig_cov, _) = metric(s, m, "sim1-dense-0.9", 0)?;
    let msg = format!("coverage (β₁)_p = {null_cov:.3}, (β₁)_1 = {sig_cov:.3}");
    let ok = |c: f64| (0.90..=0.99).contains(&c);
    if ok(null_cov) && ok(sig_cov) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_6(run: &Result<EvalSummary, String>) -> Check {
    let s = run.as_ref().map_err(Clone::clone)?;
    let m = hungarian(IntervalKind::Percentile);
    let (_, null_rej) = metric(s, m, "sim1-dense-0.9", 9)?;
    let (_, sig_rej) = metric(s, m, "sim1-dense-0.9", 0)?;
    let msg = format!("rejection (β₁)_1 = {sig_rej:.3}, (β₁)_p = {null_rej:.3}");
    if sig_rej >= 0.99 && null_rej <= 0.10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_7() -> Check {
    let design = SimDesign::sim1("sim1-sparse-0.2", 10, 10, 1000, 0.2, Regime::Sparse);
    let config = EvalConfig {
        n_reps: 200,
        n_boots: 1000,
        seed: 7,
        methods: vec![hungarian(IntervalKind::Percentile), hungarian(IntervalKind::Normal)],
        ..EvalConfig::default()
    };
    let s = run_replicates(&[design], &config, None).map_err(|e| e.to_string())?;
    let (pct, _) = metric(&s, hungarian(IntervalKind::Percentile), "sim1-sparse-0.2", 0)?;
    let (nrm, _) = metric(&s, hungarian(IntervalKind::Normal), "sim1-sparse-0.2", 0)?;
    let msg = format!("coverage (β₁)_1: normal = {nrm:.3}, percentile = {pct:.3}");
    if nrm < 0.90 && pct >= nrm + 0.02 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Per-term transcription of the asymptotic variance display.
fn variance_by_hand(rho: &[f64], row: &[f64], j: usize) -> f64 {
    let rj2 = rho[j] * rho[j];
    let mut total = 0.5 * row[j] * row[j];
    for k in 0..rho.len() {
        if k == j {
            continue;
        }
        let rk2 = rho[k] * rho[k];
        let num = rk2 + rj2 - 2.0 * rk2 * rj2;
        let gap = rj2 - rk2;
        total += (1.0 - rj2) * num / (gap * gap) * row[k] * row[k];
    }
    total
}

fn criterion_8() -> Check {
    let mut w = Vec::new();
    for (rho, b) in [(0.7, 1.3), (0.2, -0.4), (0.95, 2.0)] {
        let v = direction_variances(&DVector::from_element(1, rho), &DMatrix::from_element(1, 1, b), &mut w);
        if v[(0, 0)] != b * b / 2.0 {
            return Err(format!("p = q = 1: {} vs {}", v[(0, 0)], b * b / 2.0));
        }
    }
    let rho = [0.9, 0.5];
    let row = [1.0, 2.0];
    let v = direction_variances(&DVector::from_column_slice(&rho), &DMatrix::from_row_slice(1, 2, &row), &mut w);
    let by_hand = variance_by_hand(&rho, &row, 0);
    let diff = (v[(0, 0)] - by_hand).abs().max((v[(0, 1)] - variance_by_hand(&rho, &row, 1)).abs());
    let msg = format!("σ² = {:.12} for the p = q = 2 example, |Δ| = {diff:.1e}", v[(0, 0)]);
    if diff <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn brute_force_coverage(tables: &CiTables, monitored: &[MonitoredCoordinate], k: usize) -> Vec<bool> {
    let mut best: Option<(usize, usize, Vec<bool>)> = None;
    for mask in 0..(1usize << k) {
        let signs: Vec<f64> = (0..k).map(|d| if mask >> d & 1 == 1 { -1.0 } else { 1.0 }).collect();
        let flags: Vec<bool> = monitored
            .iter()
            .map(|m| {
                let (l, u) = tables.block(m.block).interval(m.index, m.direction);
                let v = signs[m.direction] * m.true_value;
                l <= v && v <= u
            })
            .collect();
        let count = flags.iter().filter(|&&f| f).count();
        let plus = signs.iter().filter(|&&s| s > 0.0).count();
        if best.as_ref().is_none_or(|(c, p, _)| (count, plus) > (*c, *p)) {
            best = Some((count, plus, flags));
        }
    }
    best.unwrap().2
}

fn criterion_9() -> Check {
    let start = Instant::now();
    let mut rng = substream(109, 0);
    for inst in 0..200 {
        let k = 1 + inst % 3;
        let (p, q) = (k + rng.gen_range(0..3), k + rng.gen_range(0..2));
        let table = |d: usize, rng: &mut SubstreamRng| {
            let center = gaussian(d, k, rng);
            let half = DMatrix::from_fn(d, k, |_, _| rng.gen_range(0.05..0.8));
            CiTable::new(&center - &half, &center + &half, center.clone()).unwrap()
        };
        let tables = CiTables { b: table(p, &mut rng), gamma: table(q, &mut rng) };
        let mut monitored = Vec::new();
        for _ in 0..rng.gen_range(1..=6) {
            let block = if rng.gen_bool(0.5) { Block::B } else { Block::Gamma };
            let d = if block == Block::B { p } else { q };
            let (index, direction) = (rng.gen_range(0..d), rng.gen_range(0..k));
            let (l, u) = tables.block(block).interval(index, direction);
            let v: f64 = match rng.gen_range(0..4) {
                0 => 0.0,
                1 => (l + u) / 2.0,
                2 => -(l + u) / 2.0,
                _ => StandardNormal.sample(&mut rng),
            };
            monitored.push(MonitoredCoordinate { block, direction, index, true_value: v, is_null: v == 0.0 });
        }
        let got = coverage_with_sign_maximization(&tables, &monitored).map_err(|e| e.to_string())?.covered;
        if got != brute_force_coverage(&tables, &monitored, k) {
            return Err(format!("instance {inst} disagrees with brute force"));
        }
    }
    within_budget(start, Duration::from_secs(5))?;
    Ok("200/200 instances match".into())
}

fn criterion_10() -> Check {
    let mut rng = substream(110, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..300);
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let alpha = rng.gen_range(0.001..0.999);
        let mut s = v.clone();
        s.sort_by(|a, b| a.total_cmp(b));
        let interp = |prob: f64| {
            let h = (n - 1) as f64 * prob;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            s[lo] + (h - lo as f64) * (s[hi] - s[lo])
        };
        let (l, u) = percentile_interval(&v, alpha).map_err(|e| e.to_string())?;
        worst = worst.max((l - interp(alpha / 2.0)).abs()).max((u - interp(1.0 - alpha / 2.0)).abs());
    }
    let msg = format!("max deviation {worst:.1e}");
    if worst <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_11() -> Check {
    let (mut orth, mut rec) = (0.0f64, 0.0f64);
    for rho2 in [0.8, 0.5, 0.2] {
        let t = build_sim2_truth(&SimDesign::sim2("s2", 10, 10, 1000, rho2, Regime::Dense)).map_err(|e| e.to_string())?;
        let (sx, sy) = (t.model.sigma_x(), t.model.sigma_y());
        let s = &t.solution;
        orth = orth
            .max((s.b.column(0).transpose() * sx * s.b.column(1))[(0, 0)].abs())
            .max((s.gamma.column(0).transpose() * sy * s.gamma.column(1))[(0, 0)].abs());
        let pop = population_cca(&t.model).map_err(|e| e.to_string())?;
        rec = rec.max((pop.rho[0] - 0.9).abs()).max((pop.rho[1] - rho2).abs());
    }
    let msg = format!("max |β₁ᵀΣxβ₂| = {orth:.1e}, max |Δρ| = {rec:.1e}");
    if orth <= 1e-10 && rec <= 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ccaboot")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("ccaboot {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_12() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let config = root.join("sim.json");
    fs::write(
        &config,
        r#"{"designs": [{"id": "d", "kind": "sim1", "p": 5, "q": 4, "n": 120, "rho": [0.7]}],
            "eval": {"n_reps": 6, "n_boots": 40, "methods": ["bootstrap-hungarian-percentile", "bootstrap-procrustes-normal", "asymptotic", "regression"]}}"#,
    )
    .unwrap();
    let mut rng = substream(112, 0);
    let x = gaussian(50, 3, &mut rng);
    let y = &x * 0.5 + gaussian(50, 3, &mut rng);
    let write = |name: &str, m: &DMatrix<f64>| {
        let mut buf = Vec::new();
        ccaboot::io::write_matrix(m, None, &mut buf).unwrap();
        fs::write(root.join(name), buf).unwrap();
    };
    write("x.csv", &x);
    write("y.csv", &y);
    let xs = root.join("x.csv");
    let ys = root.join("y.csv");

    let mut sims = Vec::new();
    let mut infers = Vec::new();
    for (i, workers) in ["1", "1", "3"].iter().enumerate() {
        let s = root.join(format!("sim{i}"));
        let f = root.join(format!("inf{i}"));
        fs::create_dir(&s).unwrap();
        fs::create_dir(&f).unwrap();
        run_cli(&["simulate", "--config", config.to_str().unwrap(), "--seed", "9", "--workers", workers, "--out", s.to_str().unwrap()])?;
        run_cli(&[
            "infer", "--x", xs.to_str().unwrap(), "--y", ys.to_str().unwrap(), "--n-boots", "150", "--seed", "9", "--workers", workers, "--out",
            f.to_str().unwrap(),
        ])?;
        sims.push(tree_bytes(&s));
        infers.push(tree_bytes(&f));
    }
    let same = |v: &[Vec<(PathBuf, Vec<u8>)>]| v.windows(2).all(|w| w[0] == w[1]);
    let msg = format!("simulate: {} files, infer: {} files, runs with 1, 1 and 3 workers", sims[0].len(), infers[0].len());
    if same(&sims) && same(&infers) && !sims[0].is_empty() && !infers[0].is_empty() {
        Ok(msg)
    } else {
        Err(format!("outputs differ ({msg})"))
    }
}

fn main() {
    // libtest-style flags such as `--nocapture` or a name filter are accepted and ignored.
    let _ = std::env::args();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, result: Check, elapsed: Duration| {
        match result {
            Ok(msg) => println!("[PASS] criterion {n}: {name}: {msg} ({elapsed:.1?})"),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] criterion {n}: {name}: {msg} ({elapsed:.1?})");
            }
        }
    };
    let timed = |f: &dyn Fn() -> Check| {
        let t = Instant::now();
        let r = f();
        (r, t.elapsed())
    };

    let (r, t) = timed(&criterion_1);
    report(1, "model inversion round trip", r, t);
    let (r, t) = timed(&criterion_2);
    report(2, "QR path matches covariance SVD", r, t);
    let (r, t) = timed(&criterion_3);
    report(3, "assignment matches exhaustive search", r, t);
    let (r, t) = timed(&criterion_4);
    report(4, "Procrustes optimality", r, t);

    let t = Instant::now();
    let sim1 = sim1_run();
    let shared = t.elapsed();
    report(5, "Sim I nominal coverage", criterion_5(&sim1), shared);
    report(6, "Sim I power and type I error", criterion_6(&sim1), Duration::ZERO);

    let (r, t) = timed(&criterion_7);
    report(7, "normal vs percentile at small correlation", r, t);
    let (r, t) = timed(&criterion_8);
    report(8, "asymptotic variance spot checks", r, t);
    let (r, t) = timed(&criterion_9);
    report(9, "sign maximization matches brute force", r, t);
    let (r, t) = timed(&criterion_10);
    report(10, "percentile matches interpolation oracle", r, t);
    let (r, t) = timed(&criterion_11);
    report(11, "Sim II orthogonality and recovery", r, t);
    let (r, t) = timed(&criterion_12);
    report(12, "byte-identical CLI outputs", r, t);

    if failed > 0 {
        println!("acceptance: {failed} of 12 criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all 12 criteria passed");
}
