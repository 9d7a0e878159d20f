//! File formats: point clouds and diagrams as CSV, mean-measure tables, and
//! JSON-lines reports. Reals are written with 17 significant digits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crackle_core::model::PointCloud;

use crate::error::{Error, Result};
use crate::verify::{PairRecord, TestReport};

/// Decimal with 17 significant digits.
pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(f))
}

/// Reads all records after checking the header; yields `(line, record)`.
fn records(path: &Path, expected: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut rd = open(path)?;
    let header = rd.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::parse(path, 1, format!("expected header {}", expected.join(","))));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != expected.len() {
            return Err(Error::parse(path, line, format!("expected {} fields, found {}", expected.len(), rec.len())));
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    rec[i].trim().parse().map_err(|_| Error::parse(path, line, format!("bad {name}: {:?}", &rec[i])))
}

fn flush<W: Write>(path: &Path, w: csv::Writer<W>) -> Result<()> {
    w.into_inner().map_err(|e| Error::io(path, e.into_error()))?.flush().map_err(|e| Error::io(path, e))
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = create(path)?;
    let header: Vec<String> = (0..cloud.dim).map(|i| format!("x{i}")).collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for p in cloud.points() {
        w.write_record(p.iter().map(|&x| real(x))).map_err(|e| csv_err(path, e))?;
    }
    flush(path, w)
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let mut rd = open(path)?;
    let header = rd.headers().map_err(|e| csv_err(path, e))?.clone();
    let dim = header.len();
    if dim == 0 || header.iter().enumerate().any(|(i, h)| h != format!("x{i}")) {
        return Err(Error::parse(path, 1, "expected header x0,x1,..."));
    }
    let names: Vec<String> = header.iter().map(String::from).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    drop(rd);
    let mut coords = Vec::new();
    for (line, rec) in records(path, &names)? {
        for i in 0..dim {
            coords.push(field::<f64>(path, line, &rec, i, names[i])?);
        }
    }
    Ok(PointCloud::new(dim, coords, 0, 0.0))
}

pub const DIAGRAM_HEADER: [&str; 8] = ["trial", "component_id", "m", "dim", "birth", "death", "birth_scaled", "death_scaled"];

#[derive(Debug, Clone, PartialEq)]
pub struct DiagramRow {
    pub trial: u64,
    pub pair: PairRecord,
}

/// Sorts by `(trial, birth_scaled)` and writes the rows.
pub fn write_diagram(path: &Path, rows: &[DiagramRow]) -> Result<()> {
    let mut sorted: Vec<&DiagramRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.trial.cmp(&b.trial).then(a.pair.birth_scaled.total_cmp(&b.pair.birth_scaled)));
    let mut w = create(path)?;
    w.write_record(DIAGRAM_HEADER).map_err(|e| csv_err(path, e))?;
    for r in sorted {
        let p = &r.pair;
        w.write_record([
            r.trial.to_string(),
            p.component_id.to_string(),
            p.m.to_string(),
            p.dim.to_string(),
            real(p.birth),
            real(p.death),
            real(p.birth_scaled),
            real(p.death_scaled),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    flush(path, w)
}

pub fn read_diagram(path: &Path) -> Result<Vec<DiagramRow>> {
    let h = &DIAGRAM_HEADER;
    records(path, h)?
        .into_iter()
        .map(|(line, rec)| {
            Ok(DiagramRow {
                trial: field(path, line, &rec, 0, h[0])?,
                pair: PairRecord {
                    component_id: field(path, line, &rec, 1, h[1])?,
                    m: field(path, line, &rec, 2, h[2])?,
                    dim: field(path, line, &rec, 3, h[3])?,
                    birth: field(path, line, &rec, 4, h[4])?,
                    death: field(path, line, &rec, 5, h[5])?,
                    birth_scaled: field(path, line, &rec, 6, h[6])?,
                    death_scaled: field(path, line, &rec, 7, h[7])?,
                },
            })
        })
        .collect()
}

pub const LAMBDA_HEADER: [&str; 6] = ["region", "kind", "lambda", "stderr", "samples", "acceptance_rate"];

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaRow {
    pub region: String,
    /// `heavy` or `exponential`.
    pub kind: String,
    pub lambda: f64,
    pub stderr: f64,
    pub samples: u64,
    pub acceptance_rate: f64,
}

pub fn write_lambda(path: &Path, rows: &[LambdaRow]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(LAMBDA_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.region.clone(),
            r.kind.clone(),
            real(r.lambda),
            real(r.stderr),
            r.samples.to_string(),
            real(r.acceptance_rate),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    flush(path, w)
}

pub fn read_lambda(path: &Path) -> Result<Vec<LambdaRow>> {
    let h = &LAMBDA_HEADER;
    records(path, h)?
        .into_iter()
        .map(|(line, rec)| {
            Ok(LambdaRow {
                region: rec[0].to_string(),
                kind: rec[1].to_string(),
                lambda: field(path, line, &rec, 2, h[2])?,
                stderr: field(path, line, &rec, 3, h[3])?,
                samples: field(path, line, &rec, 4, h[4])?,
                acceptance_rate: field(path, line, &rec, 5, h[5])?,
            })
        })
        .collect()
}

/// Last line of a report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub summary: bool,
    pub passed: bool,
    pub total: usize,
    pub failed: usize,
}

impl Summary {
    pub fn of(reports: &[TestReport]) -> Self {
        let failed = reports.iter().filter(|r| !r.passed).count();
        Self { summary: true, passed: failed == 0, total: reports.len(), failed }
    }
}

/// One report per line followed by the summary line.
pub fn write_reports(path: &Path, reports: &[TestReport]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e: std::io::Error| Error::io(path, e);
    for r in reports {
        serde_json::to_writer(&mut w, r).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    serde_json::to_writer(&mut w, &Summary::of(reports)).map_err(|e| io(e.into()))?;
    w.write_all(b"\n").map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_reports(path: &Path) -> Result<(Vec<TestReport>, Summary)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reports = Vec::new();
    let mut summary = None;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if summary.is_some() {
            return Err(Error::parse(path, i + 1, "content after the summary line"));
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if value.get("summary").is_some() {
            summary = Some(serde_json::from_value(value).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
        } else {
            reports.push(serde_json::from_value(value).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
        }
    }
    let summary = summary.ok_or_else(|| Error::parse(path, 0, "missing summary line"))?;
    Ok((reports, summary))
}
