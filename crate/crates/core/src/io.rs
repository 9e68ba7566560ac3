//! CSV files for panels, intervals and curves, and JSON run manifests.
//!
//! Panel files have the header `series_id,split,t,y,y_hat,q_lo,q_hi,sigma_hat`,
//! one row per `(series, t)` sorted by series id then `t`. Absent channels are
//! written as empty fields. Numbers use the shortest decimal form that reads
//! back to the same `f64`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ForecastPanel, IntervalCell, IntervalPanel, Series, Split};

pub const PANEL_HEADER: [&str; 8] = ["series_id", "split", "t", "y", "y_hat", "q_lo", "q_hi", "sigma_hat"];
pub const INTERVAL_HEADER: [&str; 6] = ["series_id", "t", "lo", "hi", "level_used", "covered"];

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(channel: Option<&[f64]>, t: usize) -> String {
    channel.map(|c| num(c[t])).unwrap_or_default()
}

pub fn write_panel<W: Write>(w: W, panel: &ForecastPanel) -> Result<()> {
    let mut out = writer(w);
    out.write_record(PANEL_HEADER)?;
    let mut order: Vec<usize> = (0..panel.n_series()).collect();
    order.sort_by(|a, b| panel.id(*a).cmp(panel.id(*b)));
    for i in order {
        let (y, y_hat) = (panel.y(i), panel.y_hat(i));
        for t in 0..panel.horizon() {
            out.write_record([
                panel.id(i).to_string(),
                panel.split(i).to_string(),
                t.to_string(),
                num(y[t]),
                num(y_hat[t]),
                opt(panel.q_lo(i), t),
                opt(panel.q_hi(i), t),
                opt(panel.sigma_hat(i), t),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_panel_file(path: &Path, panel: &ForecastPanel) -> Result<()> {
    write_panel(BufWriter::new(File::create(path)?), panel)
}

/// Field-level error reporter for one file.
struct Diagnostics<'a> {
    file: &'a str,
}

impl Diagnostics<'_> {
    fn error(&self, row: usize, column: &str, message: impl Into<String>) -> Error {
        Error::Schema {
            file: self.file.to_string(),
            row,
            column: column.to_string(),
            message: message.into(),
        }
    }

    fn header(&self, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
        for (k, name) in want.iter().enumerate() {
            match got.get(k) {
                Some(h) if h.trim() == *name => {}
                Some(h) => return Err(self.error(1, name, format!("expected header '{name}', found '{h}'"))),
                None => return Err(self.error(1, name, "missing column")),
            }
        }
        if got.len() > want.len() {
            return Err(self.error(1, &got[want.len()], "unexpected extra column"));
        }
        Ok(())
    }

    fn real(&self, row: usize, column: &str, field: &str) -> Result<f64> {
        field
            .trim()
            .parse::<f64>()
            .map_err(|_| self.error(row, column, format!("'{field}' is not a number")))
    }

    fn optional(&self, row: usize, column: &str, field: &str) -> Result<Option<f64>> {
        if field.trim().is_empty() {
            Ok(None)
        } else {
            self.real(row, column, field).map(Some)
        }
    }
}

#[derive(Default)]
struct SeriesRows {
    split: Option<Split>,
    first_row: usize,
    cells: BTreeMap<usize, [Option<f64>; 5]>,
}

/// Reads a panel file. `name` labels diagnostics; row numbers count the
/// header as row 1.
pub fn read_panel<R: Read>(r: R, name: &str) -> Result<ForecastPanel> {
    let diag = Diagnostics { file: name };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    diag.header(reader.headers()?, &PANEL_HEADER)?;
    let mut by_id: BTreeMap<String, SeriesRows> = BTreeMap::new();
    for (k, rec) in reader.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| diag.error(row, "-", e.to_string()))?;
        if rec.len() != PANEL_HEADER.len() {
            return Err(diag.error(row, "-", format!("expected {} fields, found {}", PANEL_HEADER.len(), rec.len())));
        }
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(diag.error(row, "series_id", "empty series id"));
        }
        let split: Split = rec[1].trim().parse().map_err(|e: Error| diag.error(row, "split", e.to_string()))?;
        let t: usize = rec[2]
            .trim()
            .parse()
            .map_err(|_| diag.error(row, "t", format!("'{}' is not a step index", &rec[2])))?;
        let mut values = [None; 5];
        values[0] = Some(diag.real(row, "y", &rec[3])?);
        values[1] = Some(diag.real(row, "y_hat", &rec[4])?);
        for (slot, col) in (2..5).zip(5..8) {
            values[slot] = diag.optional(row, PANEL_HEADER[col], &rec[col])?;
        }
        for (v, col) in values.iter().zip(3..8) {
            if v.is_some_and(|x| !x.is_finite()) {
                return Err(diag.error(row, PANEL_HEADER[col], "value must be finite"));
            }
        }
        let entry = by_id.entry(id.to_string()).or_insert_with(|| SeriesRows {
            first_row: row,
            ..SeriesRows::default()
        });
        match entry.split {
            None => entry.split = Some(split),
            Some(s) if s != split => {
                return Err(diag.error(row, "split", format!("series {id} is labelled both {s} and {split}")));
            }
            Some(_) => {}
        }
        if entry.cells.insert(t, values).is_some() {
            return Err(diag.error(row, "t", format!("duplicate step {t} for series {id}")));
        }
    }
    if by_id.is_empty() {
        return Err(diag.error(2, "-", "no data rows"));
    }
    let mut series = Vec::with_capacity(by_id.len());
    let mut channel_presence: [Option<bool>; 3] = [None; 3];
    for (id, rows) in by_id {
        let horizon = rows.cells.len();
        if rows.cells.keys().next_back() != Some(&(horizon - 1)) {
            return Err(diag.error(rows.first_row, "t", format!("series {id} does not cover steps 0..{horizon} contiguously")));
        }
        let column = |k: usize| -> Vec<Option<f64>> { rows.cells.values().map(|v| v[k]).collect() };
        let take = |k: usize| -> Option<Vec<f64>> { column(k).into_iter().collect() };
        let mut s = Series::new(id.clone(), rows.split.expect("set on first row"), take(0).unwrap(), take(1).unwrap());
        let mut channels = [None, None, None];
        for (slot, k) in (2..5).enumerate() {
            let col = column(k);
            let present = col.iter().filter(|v| v.is_some()).count();
            if present != 0 && present != col.len() {
                return Err(diag.error(
                    rows.first_row,
                    PANEL_HEADER[k + 3],
                    format!("series {id} has the channel on some steps only"),
                ));
            }
            let has = present > 0;
            match channel_presence[slot] {
                None => channel_presence[slot] = Some(has),
                Some(p) if p != has => {
                    return Err(diag.error(
                        rows.first_row,
                        PANEL_HEADER[k + 3],
                        format!("series {id}: channel must be present for all series or none"),
                    ));
                }
                Some(_) => {}
            }
            channels[slot] = take(k);
        }
        let [q_lo, q_hi, sigma_hat] = channels;
        s.q_lo = q_lo;
        s.q_hi = q_hi;
        s.sigma_hat = sigma_hat;
        series.push(s);
    }
    ForecastPanel::from_series(series)
}

pub fn read_panel_file(path: &Path) -> Result<ForecastPanel> {
    read_panel(File::open(path)?, &path.display().to_string())
}

pub fn write_intervals<W: Write>(w: W, intervals: &IntervalPanel) -> Result<()> {
    let mut out = writer(w);
    out.write_record(INTERVAL_HEADER)?;
    let mut order: Vec<usize> = (0..intervals.n_series()).collect();
    order.sort_by(|a, b| intervals.ids()[*a].cmp(&intervals.ids()[*b]));
    for i in order {
        for t in 0..intervals.horizon() {
            let c = intervals.cell(i, t);
            out.write_record([
                intervals.ids()[i].clone(),
                t.to_string(),
                num(c.lo),
                num(c.hi),
                num(c.level),
                c.covered.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_intervals_file(path: &Path, intervals: &IntervalPanel) -> Result<()> {
    write_intervals(BufWriter::new(File::create(path)?), intervals)
}

pub fn read_intervals<R: Read>(r: R, name: &str) -> Result<IntervalPanel> {
    let diag = Diagnostics { file: name };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    diag.header(reader.headers()?, &INTERVAL_HEADER)?;
    let mut by_id: BTreeMap<String, (usize, BTreeMap<usize, IntervalCell>)> = BTreeMap::new();
    for (k, rec) in reader.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| diag.error(row, "-", e.to_string()))?;
        if rec.len() != INTERVAL_HEADER.len() {
            return Err(diag.error(row, "-", format!("expected {} fields, found {}", INTERVAL_HEADER.len(), rec.len())));
        }
        let t: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| diag.error(row, "t", format!("'{}' is not a step index", &rec[1])))?;
        let lo = diag.real(row, "lo", &rec[2])?;
        let hi = diag.real(row, "hi", &rec[3])?;
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(diag.error(row, "hi", format!("interval [{lo}, {hi}] is not ordered")));
        }
        let level = diag.real(row, "level_used", &rec[4])?;
        let covered = match rec[5].trim() {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(diag.error(row, "covered", format!("'{other}' is not a boolean"))),
        };
        let entry = by_id.entry(rec[0].trim().to_string()).or_insert_with(|| (row, BTreeMap::new()));
        let cell = IntervalCell { lo, hi, level, covered };
        if entry.1.insert(t, cell).is_some() {
            return Err(diag.error(row, "t", format!("duplicate step {t} for series {}", &rec[0])));
        }
    }
    let horizon = by_id.values().next().map(|v| v.1.len()).ok_or_else(|| diag.error(2, "-", "no data rows"))?;
    let mut ids = Vec::with_capacity(by_id.len());
    let mut rows = Vec::with_capacity(by_id.len());
    for (id, (first_row, cells)) in by_id {
        if cells.len() != horizon || cells.keys().next_back() != Some(&(horizon - 1)) {
            return Err(diag.error(first_row, "t", format!("series {id} does not cover steps 0..{horizon}")));
        }
        ids.push(id);
        rows.push(cells.into_values().collect());
    }
    IntervalPanel::from_rows(ids, horizon, rows)
}

pub fn read_intervals_file(path: &Path) -> Result<IntervalPanel> {
    read_intervals(File::open(path)?, &path.display().to_string())
}

/// Tidy CSV of tail-coverage curves: `method,percentile,tail_coverage`.
pub fn write_tail_curves<W: Write>(w: W, curves: &[(String, Vec<(u32, f64)>)]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["method", "percentile", "tail_coverage"])?;
    for (method, curve) in curves {
        for (p, c) in curve {
            out.write_record([method.clone(), p.to_string(), num(*c)])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Tidy CSV of per-step coverage: `method,t,coverage`.
pub fn write_step_curves<W: Write>(w: W, curves: &[(String, Vec<f64>)]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["method", "t", "coverage"])?;
    for (method, curve) in curves {
        for (t, c) in curve.iter().enumerate() {
            out.write_record([method.clone(), t.to_string(), num(*c)])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Record of a command invocation: every effective setting and the files it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub settings: serde_json::Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: impl Into<String>, settings: serde_json::Value, outputs: Vec<String>) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            settings,
            outputs,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}
