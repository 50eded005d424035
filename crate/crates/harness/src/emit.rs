//! CSV and JSON writers. Column order is fixed and floats use the shortest
//! round-trip representation, so equal inputs give equal bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::OutputFormat;
use crate::error::{HarnessError, Result};

/// One point of a plot-ready long table: `(curve, abscissa) -> value`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LongRow {
    pub curve: String,
    pub x: f64,
    pub y: f64,
}

impl LongRow {
    pub fn new(curve: impl Into<String>, x: f64, y: f64) -> Self {
        LongRow {
            curve: curve.into(),
            x,
            y,
        }
    }
}

/// One line of the results ledger.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub op: String,
    pub params_digest: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub seed: u64,
    /// Left empty unless wall times are requested; they break replay.
    pub wall_time: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Hard,
    Statistical,
}

/// One line of the verification ledger.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyRow {
    pub check: String,
    pub anchor: String,
    pub kind: CheckKind,
    pub observed: f64,
    pub bound: String,
    pub pass: bool,
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn long_csv(rows: &[LongRow]) -> String {
    let mut s = String::from("curve,x,y\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", quote(&r.curve), num(r.x), num(r.y)));
    }
    s
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from("experiment_id,op,params_digest,mean,stderr,n,seed,wall_time\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            quote(&r.experiment_id),
            quote(&r.op),
            r.params_digest,
            num(r.mean),
            num(r.stderr),
            r.n,
            r.seed,
            r.wall_time.map(num).unwrap_or_default()
        ));
    }
    s
}

pub fn verify_csv(rows: &[VerifyRow]) -> String {
    let mut s = String::from("check,anchor,kind,observed,bound,pass\n");
    for r in rows {
        let kind = match r.kind {
            CheckKind::Hard => "hard",
            CheckKind::Statistical => "statistical",
        };
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            quote(&r.check),
            quote(&r.anchor),
            kind,
            num(r.observed),
            quote(&r.bound),
            r.pass
        ));
    }
    s
}

pub fn to_json<T: Serialize>(rows: &T) -> String {
    // NaN and infinities become null; nothing else is lossy.
    let mut s = serde_json::to_string_pretty(rows).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(contents).map_err(|e| HarnessError::io(path, e))
}

/// `(file name, contents)` for `stem.csv` and/or `stem.json`.
pub fn render_table<T: Serialize>(
    stem: &str,
    csv: impl FnOnce() -> String,
    rows: &T,
    format: OutputFormat,
) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
        files.push((format!("{stem}.csv"), csv().into_bytes()));
    }
    if matches!(format, OutputFormat::Json | OutputFormat::Both) {
        files.push((format!("{stem}.json"), to_json(rows).into_bytes()));
    }
    files
}

/// Writes `stem.csv` and/or `stem.json` under `dir`.
pub fn emit_table<T: Serialize>(
    dir: &Path,
    stem: &str,
    csv: impl FnOnce() -> String,
    rows: &T,
    format: OutputFormat,
) -> Result<Vec<PathBuf>> {
    render_table(stem, csv, rows, format)
        .into_iter()
        .map(|(name, bytes)| {
            let p = dir.join(name);
            write_file(&p, &bytes).map(|_| p)
        })
        .collect()
}

pub fn emit_long(dir: &Path, stem: &str, rows: &[LongRow], format: OutputFormat) -> Result<Vec<PathBuf>> {
    emit_table(dir, stem, || long_csv(rows), &rows, format)
}

pub fn emit_results(dir: &Path, rows: &[ResultRow], format: OutputFormat) -> Result<Vec<PathBuf>> {
    emit_table(dir, "results", || results_csv(rows), &rows, format)
}

pub fn emit_verify(dir: &Path, rows: &[VerifyRow], format: OutputFormat) -> Result<Vec<PathBuf>> {
    emit_table(dir, "verify", || verify_csv(rows), &rows, format)
}
