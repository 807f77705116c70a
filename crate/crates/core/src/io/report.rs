use std::fmt::Write as _;
use std::path::Path;

use super::{parse_finite, write_bytes, Lines};
use crate::error::{Error, Result};
use crate::metrics::{SurfaceDiff, UrethraReport};
use crate::rigid::ResidualStats;
use crate::volumetry::{d90, DvhCurve, SIMPLIFIED_KERNEL_BANNER};

/// Ordered `key: value` report. Numbers use the shortest representation
/// that reads back to the same `f64`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new(kind: &str) -> Self {
        let mut r = Self::default();
        r.push("report", kind);
        r
    }

    pub fn push(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push_stats(&mut self, prefix: &str, s: &ResidualStats) -> &mut Self {
        self.push(&format!("{prefix}mean"), s.mean)
            .push(&format!("{prefix}min"), s.min)
            .push(&format!("{prefix}max"), s.max)
            .push(&format!("{prefix}std"), s.std)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().fold(String::new(), |mut out, (k, v)| {
            let _ = writeln!(out, "{k}: {v}");
            out
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_text().as_bytes())
    }
}

pub fn parse_report(text: &str) -> Result<Report> {
    let mut lines = Lines::new(text);
    let mut r = Report::default();
    while let Some((n, l)) = lines.peek_next() {
        let (k, v) = l
            .split_once(": ")
            .ok_or_else(|| Error::parse(n, format!("expected `key: value`, found `{l}`")))?;
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(Error::parse(n, format!("invalid key `{k}`")));
        }
        r.entries.push((k.to_string(), v.to_string()));
    }
    if r.entries.first().map(|(k, _)| k.as_str()) != Some("report") {
        return Err(Error::parse(1, "report must start with `report: <kind>`"));
    }
    Ok(r)
}

/// `method,mean,min,max,std` table, one row per method.
pub fn stats_table_csv(rows: &[(&str, &ResidualStats)]) -> String {
    let mut out = String::from("method,mean,min,max,std\n");
    for (m, s) in rows {
        let _ = writeln!(out, "{m},{},{},{},{}", s.mean, s.min, s.max, s.std);
    }
    out
}

/// Per-slice lumen distances.
pub fn per_slice_csv(r: &UrethraReport) -> String {
    let mut out = String::from("slice_index,distance_mm,in_plane_mm\n");
    for s in &r.per_slice {
        let _ = writeln!(out, "{},{},{}", s.slice_index, s.distance, s.in_plane);
    }
    out
}

pub fn surface_csv(d: &SurfaceDiff) -> String {
    let mut out = String::from("slice_index,signed_cm2,absolute_cm2\n");
    for s in &d.per_slice {
        let _ = writeln!(out, "{},{},{}", s.slice_index, s.signed, s.absolute);
    }
    out
}

/// `dose_gy,fraction` rows preceded by `#` lines carrying the kernel banner
/// and D90.
pub fn dvh_csv(curve: &DvhCurve) -> String {
    let mut out = format!("# {SIMPLIFIED_KERNEL_BANNER}\n# d90_gy: {}\ndose_gy,fraction\n", d90(curve));
    for (d, f) in curve.dose_bins.iter().zip(&curve.cumulative_fraction) {
        let _ = writeln!(out, "{d},{f}");
    }
    out
}

pub fn parse_dvh_csv(text: &str) -> Result<DvhCurve> {
    let mut lines = Lines::new(text);
    let mut bins = Vec::new();
    let mut fractions = Vec::new();
    let mut header = false;
    while let Some((n, l)) = lines.peek_next() {
        if l.starts_with('#') {
            continue;
        }
        if !header {
            if l != "dose_gy,fraction" {
                return Err(Error::parse(n, format!("expected `dose_gy,fraction`, found `{l}`")));
            }
            header = true;
            continue;
        }
        let (d, f) = l
            .split_once(',')
            .ok_or_else(|| Error::parse(n, format!("expected `dose,fraction`, found `{l}`")))?;
        bins.push(parse_finite(n, d)?);
        fractions.push(parse_finite(n, f)?);
    }
    DvhCurve::new(bins, fractions).map_err(|e| Error::parse(lines.line_no(), e.to_string()))
}
