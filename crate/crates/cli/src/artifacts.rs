//! CSV artifacts: dataset, model, metrics table, logs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use mampc_core::metrics::fmt_number;
use mampc_core::{sparse_density, tracking_error, ClosedLoopLog, LtiModel};
use nalgebra::{DMatrix, DVector};

use crate::CliError;

/// Raw input/output record of an identification experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub t: Vec<f64>,
    /// One row per sample.
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv_writer(path)?;
        let (m, l) = (self.u.ncols(), self.y.ncols());
        let mut head = vec!["t".to_string()];
        head.extend((1..=m).map(|i| format!("u{i}")));
        head.extend((1..=l).map(|i| format!("y{i}")));
        w.write_record(&head).map_err(csv_err(path))?;
        for k in 0..self.len() {
            let mut rec = vec![fmt_number(self.t[k])];
            rec.extend(self.u.row(k).iter().map(|v| fmt_number(*v)));
            rec.extend(self.y.row(k).iter().map(|v| fmt_number(*v)));
            w.write_record(&rec).map_err(csv_err(path))?;
        }
        w.flush().map_err(CliError::io(format!("writing {}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let mut r = csv_reader(path, false)?;
        let head = r.headers().map_err(csv_err(path))?.clone();
        let m = head.iter().filter(|h| h.starts_with('u')).count();
        let l = head.iter().filter(|h| h.starts_with('y')).count();
        if head.get(0) != Some("t") || head.len() != 1 + m + l || m == 0 || l == 0 {
            return Err(CliError::Artifact(format!("{}: expected columns t,u1..,y1..", path.display())));
        }
        let mut t = Vec::new();
        let mut vals = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err(path))?;
            let row = parse_floats(path, rec.iter())?;
            t.push(row[0]);
            vals.push(row);
        }
        if t.is_empty() {
            return Err(CliError::Artifact(format!("{}: dataset has no samples", path.display())));
        }
        let n = t.len();
        Ok(Dataset {
            t,
            u: DMatrix::from_fn(n, m, |k, i| vals[k][1 + i]),
            y: DMatrix::from_fn(n, l, |k, i| vals[k][1 + m + i]),
        })
    }

    /// Sample time from the first two time stamps.
    pub fn dt(&self) -> Result<f64, CliError> {
        match self.t.as_slice() {
            [a, b, ..] if b > a => Ok(b - a),
            _ => Err(CliError::Artifact("dataset needs two increasing time stamps".into())),
        }
    }
}

/// Identified model with its operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: LtiModel,
    pub u_offset: DVector<f64>,
    pub y_offset: DVector<f64>,
}

impl ModelFile {
    /// One line per matrix row, tagged with the matrix name; values in
    /// shortest round-trip form so loading reproduces the matrices exactly.
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let m = &self.model;
        let mut w = csv_writer(path)?;
        let mut put = |rec: Vec<String>| w.write_record(&rec).map_err(csv_err(path));
        put(vec!["dims".into(), m.states().to_string(), m.inputs().to_string(), m.outputs().to_string()])?;
        put(vec!["dt".into(), exact(m.dt())])?;
        for (name, mat) in [("A", m.a()), ("B", m.b()), ("C", m.c()), ("D", m.d())] {
            for row in mat.row_iter() {
                let mut rec = vec![name.to_string()];
                rec.extend(row.iter().map(|v| exact(*v)));
                put(rec)?;
            }
        }
        for (name, v) in [("u_offset", &self.u_offset), ("y_offset", &self.y_offset)] {
            let mut rec = vec![name.to_string()];
            rec.extend(v.iter().map(|x| exact(*x)));
            put(rec)?;
        }
        w.flush().map_err(CliError::io(format!("writing {}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let mut r = csv_reader(path, true)?;
        let bad = |what: &str| CliError::Artifact(format!("{}: {what}", path.display()));
        let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err(path))?;
            let tag = rec.get(0).unwrap_or_default().to_string();
            rows.push((tag, parse_floats(path, rec.iter().skip(1))?));
        }
        let take = |name: &str| -> Vec<&Vec<f64>> { rows.iter().filter(|(t, _)| t == name).map(|(_, v)| v).collect() };
        let dims = take("dims");
        let dims = match dims.as_slice() {
            [d] if d.len() == 3 => [d[0] as usize, d[1] as usize, d[2] as usize],
            _ => return Err(bad("missing or malformed dims row")),
        };
        let [n, m, l] = dims;
        let dt = match take("dt").as_slice() {
            [d] if d.len() == 1 => d[0],
            _ => return Err(bad("missing dt row")),
        };
        let matrix = |name: &str, r: usize, c: usize| -> Result<DMatrix<f64>, CliError> {
            let rows = take(name);
            if rows.len() != r || rows.iter().any(|row| row.len() != c) {
                return Err(bad(&format!("matrix {name} should be {r}x{c}")));
            }
            Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
        };
        let vector = |name: &str, len: usize| -> Result<DVector<f64>, CliError> {
            match take(name).as_slice() {
                [v] if v.len() == len => Ok(DVector::from_column_slice(v)),
                _ => Err(bad(&format!("{name} should hold {len} values"))),
            }
        };
        let model = LtiModel::new(matrix("A", n, n)?, matrix("B", n, m)?, matrix("C", l, n)?, matrix("D", l, m)?, dt)
            .map_err(|e| bad(&e.to_string()))?;
        Ok(ModelFile { model, u_offset: vector("u_offset", m)?, y_offset: vector("y_offset", l)? })
    }
}

fn exact(x: f64) -> String {
    format!("{x:e}")
}

/// One line of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub label: String,
    pub controller: String,
    pub n_s: usize,
    pub s: usize,
    pub threshold: f64,
    pub drop: usize,
    pub steps: usize,
    pub density: Vec<f64>,
    pub error: f64,
    pub density_dropped: Vec<f64>,
    pub error_dropped: f64,
}

impl MetricsRow {
    pub fn from_log(label: &str, log: &ClosedLoopLog, threshold: f64, drop: usize) -> Result<Self, CliError> {
        let header = |k: &str| log.header_value(k).unwrap_or("").to_string();
        let density = |d: usize| -> Result<Vec<f64>, CliError> {
            (0..log.inputs())
                .map(|c| sparse_density(log, c, threshold, d).map_err(CliError::numeric(format!("metrics for {label}"))))
                .collect()
        };
        let err = |d: usize| tracking_error(log, d).map_err(CliError::numeric(format!("metrics for {label}")));
        Ok(MetricsRow {
            label: label.to_string(),
            controller: header("run.controller"),
            n_s: header("horizon.n_s").parse().unwrap_or(0),
            s: header("horizon.s").parse().unwrap_or(0),
            threshold,
            drop,
            steps: log.len(),
            density: density(0)?,
            error: err(0)?,
            density_dropped: density(drop)?,
            error_dropped: err(drop)?,
        })
    }

    fn record(&self) -> Vec<String> {
        let mut rec = vec![
            self.label.clone(),
            self.controller.clone(),
            self.n_s.to_string(),
            self.s.to_string(),
            fmt_number(self.threshold),
            self.drop.to_string(),
            self.steps.to_string(),
        ];
        rec.extend(self.density.iter().map(|v| fmt_number(*v)));
        rec.push(fmt_number(self.error));
        rec.extend(self.density_dropped.iter().map(|v| fmt_number(*v)));
        rec.push(fmt_number(self.error_dropped));
        rec
    }
}

fn metrics_header(m: usize) -> Vec<String> {
    let mut h: Vec<String> = ["label", "controller", "n_s", "s", "threshold", "drop", "steps"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=m).map(|i| format!("density_u{i}")));
    h.push("tracking_error".into());
    h.extend((1..=m).map(|i| format!("density_u{i}_dropped")));
    h.push("tracking_error_dropped".into());
    h
}

/// Metrics table as raw string records (header first).
pub fn read_metrics(path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    let mut r = csv_reader(path, false)?;
    let mut out = vec![r.headers().map_err(csv_err(path))?.iter().map(String::from).collect()];
    for rec in r.records() {
        out.push(rec.map_err(csv_err(path))?.iter().map(String::from).collect());
    }
    Ok(out)
}

/// Write `rows` into the table at `path`, replacing rows with the same
/// label and keeping the others in place.
pub fn upsert_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), CliError> {
    let m = rows.first().map_or(0, |r| r.density.len());
    let header = metrics_header(m);
    let mut table: Vec<Vec<String>> = Vec::new();
    if path.exists() {
        let existing = read_metrics(path)?;
        if existing[0] != header {
            return Err(CliError::Artifact(format!(
                "{} has different columns; remove it or use another --out",
                path.display()
            )));
        }
        table.extend(existing.into_iter().skip(1));
    }
    for row in rows {
        let rec = row.record();
        match table.iter_mut().find(|r| r[0] == row.label) {
            Some(slot) => *slot = rec,
            None => table.push(rec),
        }
    }
    let mut w = csv_writer(path)?;
    w.write_record(&header).map_err(csv_err(path))?;
    for rec in &table {
        w.write_record(rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(CliError::io(format!("writing {}", path.display())))
}

pub fn write_log(path: &Path, log: &ClosedLoopLog) -> Result<(), CliError> {
    let file = File::create(path).map_err(CliError::io(format!("creating {}", path.display())))?;
    let mut out = BufWriter::new(file);
    log.write_csv(&mut out).map_err(|e| CliError::Artifact(format!("writing {}: {e}", path.display())))?;
    out.flush().map_err(CliError::io(format!("writing {}", path.display())))
}

pub fn read_log(path: &Path) -> Result<ClosedLoopLog, CliError> {
    let file = File::open(path).map_err(CliError::io(format!("opening {}", path.display())))?;
    ClosedLoopLog::read_csv(BufReader::new(file)).map_err(|e| CliError::Artifact(format!("reading {}: {e}", path.display())))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    let file = File::create(path).map_err(CliError::io(format!("creating {}", path.display())))?;
    Ok(csv::WriterBuilder::new()
        .flexible(true)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn csv_reader(path: &Path, flexible: bool) -> Result<csv::Reader<File>, CliError> {
    let file = File::open(path).map_err(CliError::io(format!("opening {}", path.display())))?;
    Ok(csv::ReaderBuilder::new().flexible(flexible).has_headers(!flexible).from_reader(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Artifact(format!("{}: {e}", path.display()))
}

fn parse_floats<'a>(path: &Path, fields: impl Iterator<Item = &'a str>) -> Result<Vec<f64>, CliError> {
    fields
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Artifact(format!("{}: not a number: {f:?}", path.display())))
        })
        .collect()
}
