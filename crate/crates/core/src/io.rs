//! File formats: JSON model and checkpoint files, CSV datasets and traces.
//!
//! Matrices are stored as row-major nested arrays and modes are numbered from
//! 1 in every file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{JmlsError, Result};
use crate::experiments::match_modes;
use crate::model::{Dataset, Dims, JmlsModel, ModeParams, ModeSeq};
use crate::psaem::{IterationReport, PsaemState, StatsLayout, SuffStats};

pub type Rows = Vec<Vec<f64>>;

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect()
}

/// Rebuilds a matrix; `cols` disambiguates the `r × 0` case.
pub fn rows_to_matrix(rows: &Rows, cols: usize, what: &str) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(JmlsError::Parse(format!(
            "{what}: row has {} entries, expected {cols}",
            bad.len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeFile {
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
    pub d: Rows,
    pub q: Rows,
    pub r: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub dims: Dims,
    pub modes: Vec<ModeFile>,
    pub pi: Rows,
    pub p_s1: Vec<f64>,
    pub mu1: Vec<f64>,
    pub p1: Rows,
}

impl From<&JmlsModel> for ModelFile {
    fn from(m: &JmlsModel) -> Self {
        Self {
            dims: m.dims,
            modes: m
                .modes
                .iter()
                .map(|p| ModeFile {
                    a: matrix_to_rows(&p.a),
                    b: matrix_to_rows(&p.b),
                    c: matrix_to_rows(&p.c),
                    d: matrix_to_rows(&p.d),
                    q: matrix_to_rows(&p.q),
                    r: matrix_to_rows(&p.r),
                })
                .collect(),
            pi: matrix_to_rows(&m.pi),
            p_s1: m.p_s1.iter().cloned().collect(),
            mu1: m.mu1.iter().cloned().collect(),
            p1: matrix_to_rows(&m.p1),
        }
    }
}

impl ModelFile {
    pub fn to_model(&self) -> Result<JmlsModel> {
        let Dims { n_z, n_y, n_u, k } = self.dims;
        let modes = self
            .modes
            .iter()
            .map(|f| {
                Ok(ModeParams {
                    a: rows_to_matrix(&f.a, n_z, "A")?,
                    b: rows_to_matrix(&f.b, n_u, "B")?,
                    c: rows_to_matrix(&f.c, n_z, "C")?,
                    d: rows_to_matrix(&f.d, n_u, "D")?,
                    q: rows_to_matrix(&f.q, n_z, "Q")?,
                    r: rows_to_matrix(&f.r, n_y, "R")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(JmlsModel {
            dims: self.dims,
            modes,
            pi: rows_to_matrix(&self.pi, k, "Pi")?,
            p_s1: DVector::from_vec(self.p_s1.clone()),
            mu1: DVector::from_vec(self.mu1.clone()),
            p1: rows_to_matrix(&self.p1, n_z, "P1")?,
        })
    }
}

pub fn model_to_json(model: &JmlsModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModelFile::from(model))?)
}

pub fn model_from_json(text: &str) -> Result<JmlsModel> {
    serde_json::from_str::<ModelFile>(text)?.to_model()
}

pub fn save_model(path: &Path, model: &JmlsModel) -> Result<()> {
    std::fs::write(path, model_to_json(model)? + "\n")?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<JmlsModel> {
    model_from_json(&std::fs::read_to_string(path)?)
}

/// Writes `t,u1..u{n_u},y1..y{n_y}` with `t` starting at 1.
pub fn write_dataset<W: Write>(out: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n_u = data.n_u();
    let n_y = data.n_y();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n_u).map(|i| format!("u{i}")));
    header.extend((1..=n_y).map(|i| format!("y{i}")));
    w.write_record(&header)?;
    for t in 0..data.len() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(data.u[t].iter().map(|v| v.to_string()));
        rec.extend(data.y[t].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.get(0) != Some("t") {
        return Err(JmlsError::Parse(
            "dataset header must start with 't'".into(),
        ));
    }
    let mut u_cols = Vec::new();
    let mut y_cols = Vec::new();
    for (i, name) in header.iter().enumerate().skip(1) {
        let (kind, idx) = name.split_at(1);
        let expected = match kind {
            "u" => u_cols.len() + 1,
            "y" => y_cols.len() + 1,
            _ => return Err(JmlsError::Parse(format!("unexpected column '{name}'"))),
        };
        if idx.parse::<usize>().ok() != Some(expected) || (kind == "u" && !y_cols.is_empty()) {
            return Err(JmlsError::Parse(format!("unexpected column '{name}'")));
        }
        if kind == "u" {
            u_cols.push(i);
        } else {
            y_cols.push(i);
        }
    }
    let mut u = Vec::new();
    let mut y = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| JmlsError::Parse(format!("row {} too short", row + 1)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| JmlsError::Parse(format!("row {}: {e}", row + 1)))
        };
        let t: usize = rec
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| JmlsError::Parse(format!("row {}: bad time index", row + 1)))?;
        if t != row + 1 {
            return Err(JmlsError::Parse(format!(
                "row {}: expected t={}, got {t}",
                row + 1,
                row + 1
            )));
        }
        u.push(DVector::from_vec(
            u_cols.iter().map(|&i| parse(i)).collect::<Result<_>>()?,
        ));
        y.push(DVector::from_vec(
            y_cols.iter().map(|&i| parse(i)).collect::<Result<_>>()?,
        ));
    }
    Dataset::new(u, y)
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), data)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

/// Writes the chain as `iter,t,s_t` rows (1-based throughout).
pub fn write_chain_trace<W: Write>(out: W, chain: &[ModeSeq]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "t", "s_t"])?;
    for (k, s) in chain.iter().enumerate() {
        for (t, &m) in s.iter().enumerate() {
            w.write_record(&[
                (k + 1).to_string(),
                (t + 1).to_string(),
                (m + 1).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a `T × K` row-major marginal table as `t,p_mode1..p_modeK`.
pub fn write_mode_marginals<W: Write>(out: W, marginals: &[f64], k: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=k).map(|n| format!("p_mode{n}")));
    w.write_record(&header)?;
    for (t, row) in marginals.chunks(k).enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsFile {
    pub layout: StatsLayout,
    pub s1: Rows,
    pub s2m: Vec<f64>,
    pub s2q: Vec<f64>,
    pub s3: Vec<Rows>,
}

impl From<&SuffStats> for StatsFile {
    fn from(s: &SuffStats) -> Self {
        Self {
            layout: s.layout,
            s1: matrix_to_rows(&s.s1),
            s2m: s.s2m.iter().cloned().collect(),
            s2q: s.s2q.iter().cloned().collect(),
            s3: s.s3.iter().map(matrix_to_rows).collect(),
        }
    }
}

impl StatsFile {
    pub fn to_stats(&self) -> Result<SuffStats> {
        let k = self.s2m.len();
        let d = self.layout.dim();
        Ok(SuffStats {
            layout: self.layout,
            s1: rows_to_matrix(&self.s1, k, "S1")?,
            s2m: DVector::from_vec(self.s2m.clone()),
            s2q: DVector::from_vec(self.s2q.clone()),
            s3: self
                .s3
                .iter()
                .map(|r| rows_to_matrix(r, d, "S3"))
                .collect::<Result<_>>()?,
        })
    }
}

/// Serialized [`PsaemState`]; the parameter history is not persisted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub iteration: usize,
    pub theta: ModelFile,
    pub stats: Option<StatsFile>,
    /// 1-based reference mode sequence.
    pub reference: Vec<usize>,
    pub starved_run: Vec<usize>,
}

impl From<&PsaemState> for CheckpointFile {
    fn from(s: &PsaemState) -> Self {
        Self {
            iteration: s.iteration,
            theta: ModelFile::from(&s.theta),
            stats: s.stats.as_ref().map(StatsFile::from),
            reference: s.reference.iter().map(|m| m + 1).collect(),
            starved_run: s.starved_run.clone(),
        }
    }
}

impl CheckpointFile {
    pub fn to_state(&self) -> Result<PsaemState> {
        let theta = self.theta.to_model()?;
        if self.reference.iter().any(|&m| m == 0 || m > theta.dims.k) {
            return Err(JmlsError::Parse("reference mode out of range".into()));
        }
        Ok(PsaemState {
            stats: self.stats.as_ref().map(|s| s.to_stats()).transpose()?,
            reference: self.reference.iter().map(|m| m - 1).collect(),
            iteration: self.iteration,
            history: Vec::new(),
            starved_run: self.starved_run.clone(),
            theta,
        })
    }
}

pub fn save_checkpoint(path: &Path, state: &PsaemState) -> Result<()> {
    std::fs::write(
        path,
        serde_json::to_string_pretty(&CheckpointFile::from(state))? + "\n",
    )?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PsaemState> {
    serde_json::from_str::<CheckpointFile>(&std::fs::read_to_string(path)?)?.to_state()
}

/// Per-iteration parameter log with columns
/// `k,gamma_k,mode,param_block,frobenius_delta,h2_error_if_truth_known`.
pub struct IterateLog<W: Write> {
    writer: csv::Writer<W>,
    truth: Option<JmlsModel>,
}

impl<W: Write> IterateLog<W> {
    pub fn new(out: W, truth: Option<JmlsModel>) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record([
            "k",
            "gamma_k",
            "mode",
            "param_block",
            "frobenius_delta",
            "h2_error_if_truth_known",
        ])?;
        Ok(Self { writer, truth })
    }

    pub fn record(&mut self, report: &IterationReport<'_>) -> Result<()> {
        let h2 = match &self.truth {
            Some(truth) => {
                let r = match_modes(truth, report.theta)?;
                let mut by_est = vec![f64::NAN; r.permutation.len()];
                for (n, &m) in r.permutation.iter().enumerate() {
                    by_est[m] = r.per_mode[n];
                }
                Some(by_est)
            }
            None => None,
        };
        for (n, (new, old)) in report
            .theta
            .modes
            .iter()
            .zip(&report.previous.modes)
            .enumerate()
        {
            let pi_delta = (report.theta.pi.row(n) - report.previous.pi.row(n)).norm();
            let blocks = [
                ("A", (&new.a - &old.a).norm()),
                ("B", (&new.b - &old.b).norm()),
                ("C", (&new.c - &old.c).norm()),
                ("D", (&new.d - &old.d).norm()),
                ("Q", (&new.q - &old.q).norm()),
                ("R", (&new.r - &old.r).norm()),
                ("Pi", pi_delta),
            ];
            let h2_cell = h2.as_ref().map(|v| v[n].to_string()).unwrap_or_default();
            for (name, delta) in blocks {
                self.writer.write_record(&[
                    report.k.to_string(),
                    report.gamma.to_string(),
                    (n + 1).to_string(),
                    name.to_string(),
                    delta.to_string(),
                    h2_cell.clone(),
                ])?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.writer.flush()?;
        self.writer
            .into_inner()
            .map_err(|e| JmlsError::Io(e.into_error()))
    }
}
