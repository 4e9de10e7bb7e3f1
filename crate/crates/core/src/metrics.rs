//! Line-oriented metrics log: one `step,name,value` record per line.
//!
//! Values are written with Rust's shortest round-trip formatting, so a log
//! read back compares bit-for-bit with the values that were logged.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub step: u64,
    pub name: String,
    pub value: f64,
}

impl Record {
    pub fn new(step: u64, name: impl Into<String>, value: f64) -> Self {
        Self {
            step,
            name: name.into(),
            value,
        }
    }

    pub fn to_line(&self) -> String {
        format!("{},{},{:?}", self.step, self.name, self.value)
    }

    pub fn parse(line: &str) -> Option<Record> {
        let mut it = line.splitn(3, ',');
        let step = it.next()?.trim().parse().ok()?;
        let name = it.next()?.trim().to_string();
        let value = it.next()?.trim().parse().ok()?;
        if name.is_empty() {
            return None;
        }
        Some(Record { step, name, value })
    }
}

/// Appending writer; flushes on every `log_step`.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    /// Open for appending after dropping every record with `step > keep_through`,
    /// so a resumed run continues a clean stream.
    pub fn resume(path: &Path, keep_through: u64) -> Result<Self> {
        let kept: Vec<Record> = if path.exists() {
            read_metrics(path)?
                .into_iter()
                .filter(|r| r.step <= keep_through)
                .collect()
        } else {
            Vec::new()
        };
        let mut w = Self::create(path)?;
        for r in &kept {
            writeln!(w.out, "{}", r.to_line()).map_err(|e| Error::io(path, e))?;
        }
        w.out.flush().map_err(|e| Error::io(path, e))?;
        drop(w);
        let f = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    pub fn log_step(&mut self, records: &[Record]) -> Result<()> {
        for r in records {
            writeln!(self.out, "{}", r.to_line()).map_err(|e| Error::io(&self.path, e))?;
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<Record>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec =
            Record::parse(&line).ok_or_else(|| Error::format(path, format!("line {}: bad record {line:?}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Records grouped by metric name, each series in step order.
pub fn series(records: &[Record]) -> BTreeMap<String, Vec<(u64, f64)>> {
    let mut out: BTreeMap<String, Vec<(u64, f64)>> = BTreeMap::new();
    for r in records {
        out.entry(r.name.clone()).or_default().push((r.step, r.value));
    }
    for v in out.values_mut() {
        v.sort_by_key(|p| p.0);
    }
    out
}

/// Trailing moving average of `values` over `window` entries ending at `end`
/// (exclusive).
pub fn moving_average(values: &[f64], end: usize, window: usize) -> f64 {
    let start = end.saturating_sub(window);
    let s = &values[start..end];
    s.iter().sum::<f64>() / s.len() as f64
}
