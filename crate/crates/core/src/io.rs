//! CSV and JSON persistence.
//!
//! Matrices are plain numeric CSV, one row per observation. A first row that
//! does not parse as numbers is taken as a header. Floats are written in
//! shortest round-trip form.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bootstrap::{CiTable, CiTables};
use crate::cca::CcaSolution;
use crate::error::{invalid, Block, CcaError, Result};
use crate::model::CovarianceModel;
use crate::pipeline::PreprocessModel;
use crate::simgen::{GroundTruth, MonitoredCoordinate};

pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok()
}

/// Parse a numeric matrix, skipping an optional header row.
pub fn read_matrix<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let parsed: Option<Vec<f64>> = rec.iter().map(parse_cell).collect();
        match parsed {
            Some(v) => rows.push(v),
            None if line == 0 => continue,
            None => {
                let col = rec.iter().position(|c| parse_cell(c).is_none()).unwrap_or(0);
                return invalid(format!("non-numeric value '{}' at line {}, column {}", &rec[col], line + 1, col + 1));
            }
        }
    }
    let Some(first) = rows.first() else {
        return invalid("matrix file has no numeric rows");
    };
    let c = first.len();
    if let Some(i) = rows.iter().position(|r| r.len() != c) {
        return invalid(format!("row {} has {} fields, expected {c}", i + 1, rows[i].len()));
    }
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

pub fn read_matrix_file(path: &Path) -> Result<DMatrix<f64>> {
    let f = File::open(path).map_err(|e| CcaError::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    read_matrix(BufReader::new(f)).map_err(|e| match e {
        CcaError::InvalidInput(m) => CcaError::InvalidInput(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_matrix<W: Write>(m: &DMatrix<f64>, header: Option<&[String]>, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if let Some(h) = header {
        if h.len() != m.ncols() {
            return invalid("header length does not match the column count");
        }
        wr.write_record(h)?;
    }
    for i in 0..m.nrows() {
        wr.write_record(m.row(i).iter().map(|&v| format_f64(v)))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_matrix_file(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_matrix(m, None, BufWriter::new(File::create(path)?))
}

fn write_vector_file(path: &Path, v: &DVector<f64>) -> Result<()> {
    write_matrix_file(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

fn read_vector_file(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix_file(path)?;
    if m.ncols() != 1 {
        return invalid(format!("{}: expected a single column", path.display()));
    }
    Ok(m.column(0).into_owned())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CiRow {
    block: Block,
    row: usize,
    direction: usize,
    point: f64,
    lower: f64,
    upper: f64,
}

/// Long-format interval table: one line per coordinate, 1-based `row` and
/// `direction`, all of `B` before `Γ`.
pub fn write_ci_tables<W: Write>(tables: &CiTables, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["block", "row", "direction", "point", "lower", "upper"])?;
    for block in [Block::B, Block::Gamma] {
        let t = tables.block(block);
        let (d, k) = t.shape();
        for j in 0..k {
            for i in 0..d {
                wr.write_record([
                    block.as_str().to_string(),
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    format_f64(t.point[(i, j)]),
                    format_f64(t.lower[(i, j)]),
                    format_f64(t.upper[(i, j)]),
                ])?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn read_ci_tables<R: Read>(r: R) -> Result<CiTables> {
    let mut rd = csv::Reader::from_reader(r);
    let rows: Vec<CiRow> = rd.deserialize().collect::<std::result::Result<_, _>>()?;
    let build = |block: Block| -> Result<CiTable> {
        let mine: Vec<&CiRow> = rows.iter().filter(|r| r.block == block).collect();
        let d = mine.iter().map(|r| r.row).max().unwrap_or(0);
        let k = mine.iter().map(|r| r.direction).max().unwrap_or(0);
        if d == 0 || k == 0 || mine.len() != d * k {
            return invalid(format!("incomplete {block} table"));
        }
        let (mut p, mut l, mut u) = (DMatrix::zeros(d, k), DMatrix::zeros(d, k), DMatrix::zeros(d, k));
        for r in mine {
            if r.row == 0 || r.direction == 0 {
                return invalid("row and direction are 1-based");
            }
            p[(r.row - 1, r.direction - 1)] = r.point;
            l[(r.row - 1, r.direction - 1)] = r.lower;
            u[(r.row - 1, r.direction - 1)] = r.upper;
        }
        CiTable::new(l, u, p)
    };
    Ok(CiTables { b: build(Block::B)?, gamma: build(Block::Gamma)? })
}

/// Point estimates: `rho` as a column, then `B` and `Γ` in long format.
pub fn write_estimates<W: Write>(sol: &CcaSolution, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["quantity", "row", "direction", "value"])?;
    for k in 0..sol.k() {
        wr.write_record(["rho".to_string(), String::new(), (k + 1).to_string(), format_f64(sol.rho[k])])?;
    }
    for (name, m) in [("B", &sol.b), ("Gamma", &sol.gamma)] {
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                wr.write_record([name.to_string(), (i + 1).to_string(), (j + 1).to_string(), format_f64(m[(i, j)])])?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize, W: Write>(value: &T, mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn read_json_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| CcaError::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(value, BufWriter::new(File::create(path)?))
}

/// `sigma_x.csv`, `sigma_y.csv` and `sigma_xy.csv` in `dir`.
pub fn save_covariance_model(dir: &Path, model: &CovarianceModel) -> Result<()> {
    write_matrix_file(&dir.join("sigma_x.csv"), model.sigma_x())?;
    write_matrix_file(&dir.join("sigma_y.csv"), model.sigma_y())?;
    write_matrix_file(&dir.join("sigma_xy.csv"), model.sigma_xy())
}

pub fn load_covariance_model(dir: &Path) -> Result<CovarianceModel> {
    CovarianceModel::from_blocks(
        read_matrix_file(&dir.join("sigma_x.csv"))?,
        read_matrix_file(&dir.join("sigma_y.csv"))?,
        read_matrix_file(&dir.join("sigma_xy.csv"))?,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TruthManifest {
    p: usize,
    q: usize,
    k: usize,
    monitored: Vec<MonitoredCoordinate>,
}

/// Covariance blocks, the population solution and a `truth.json` listing the
/// monitored coordinates.
pub fn save_ground_truth(dir: &Path, truth: &GroundTruth) -> Result<()> {
    save_covariance_model(dir, &truth.model)?;
    write_vector_file(&dir.join("rho.csv"), &truth.solution.rho)?;
    write_matrix_file(&dir.join("b.csv"), &truth.solution.b)?;
    write_matrix_file(&dir.join("gamma.csv"), &truth.solution.gamma)?;
    let manifest = TruthManifest { p: truth.model.p(), q: truth.model.q(), k: truth.solution.k(), monitored: truth.monitored.clone() };
    write_json_file(&dir.join("truth.json"), &manifest)
}

pub fn load_ground_truth(dir: &Path) -> Result<GroundTruth> {
    let manifest: TruthManifest = read_json_file(&dir.join("truth.json"))?;
    let model = load_covariance_model(dir)?;
    let solution = CcaSolution {
        rho: read_vector_file(&dir.join("rho.csv"))?,
        b: read_matrix_file(&dir.join("b.csv"))?,
        gamma: read_matrix_file(&dir.join("gamma.csv"))?,
    };
    solution.check_shapes()?;
    if model.p() != manifest.p || model.q() != manifest.q || solution.k() != manifest.k || solution.p() != manifest.p {
        return invalid(format!("{}: stored blocks disagree with truth.json", dir.display()));
    }
    Ok(GroundTruth { model, solution, monitored: manifest.monitored })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PreprocessManifest {
    components: Option<usize>,
    has_pca_basis: bool,
}

pub fn save_preprocess_model(dir: &Path, model: &PreprocessModel) -> Result<()> {
    write_matrix_file(&dir.join("nuisance_coef_x.csv"), &model.coef_x)?;
    write_matrix_file(&dir.join("nuisance_coef_y.csv"), &model.coef_y)?;
    write_vector_file(&dir.join("sds_x.csv"), &model.sds_x)?;
    write_vector_file(&dir.join("sds_y.csv"), &model.sds_y)?;
    if let Some(v) = &model.pca_basis {
        write_matrix_file(&dir.join("pca_basis.csv"), v)?;
    }
    let manifest = PreprocessManifest { components: model.components, has_pca_basis: model.pca_basis.is_some() };
    write_json_file(&dir.join("preprocess.json"), &manifest)
}

pub fn load_preprocess_model(dir: &Path) -> Result<PreprocessModel> {
    let manifest: PreprocessManifest = read_json_file(&dir.join("preprocess.json"))?;
    Ok(PreprocessModel {
        coef_x: read_matrix_file(&dir.join("nuisance_coef_x.csv"))?,
        coef_y: read_matrix_file(&dir.join("nuisance_coef_y.csv"))?,
        pca_basis: if manifest.has_pca_basis { Some(read_matrix_file(&dir.join("pca_basis.csv"))?) } else { None },
        sds_x: read_vector_file(&dir.join("sds_x.csv"))?,
        sds_y: read_vector_file(&dir.join("sds_y.csv"))?,
        components: manifest.components,
    })
}
