//! Text-first file formats. Every writer is canonical: write, read, write
//! again yields the same bytes. Floats are written with 17 significant
//! digits, which round-trips `f64` exactly.

mod config;
mod contours;
mod image;
mod landmarks;
mod report;
mod session;
mod transform;
mod volume;

pub use config::{format_phantom_spec, parse_phantom_spec, KeyValues, RunConfig};
pub use contours::{
    format_contour_stack, format_slice_record, parse_contour_stack, parse_slice_record, read_contour_stack,
    write_contour_stack,
};
pub use image::{format_overlay, format_pgm, parse_overlay, parse_pgm, read_overlay, read_pgm, write_overlay, write_pgm};
pub use landmarks::{
    format_centers, format_landmarks, format_seeds, parse_centers, parse_landmarks, parse_seeds, read_centers,
    read_landmarks, read_seeds, write_centers, write_landmarks, write_seeds,
};
pub use report::{
    dvh_csv, parse_dvh_csv, parse_report, per_slice_csv, stats_table_csv, surface_csv, Report,
};
pub use session::{standard_session_text, SessionFile};
pub use transform::{format_transform, parse_transform, read_transform, write_transform};
pub use volume::{format_volume_header, format_volume_raw, parse_volume, raw_path_for, read_volume, write_volume};

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// `f64` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Line cursor with 1-based line numbers for error reporting.
pub(crate) struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        Self {
            iter: text.lines().enumerate(),
            last: 0,
        }
    }

    pub(crate) fn line_no(&self) -> usize {
        self.last
    }

    /// Next line, or `None` at end of input.
    pub(crate) fn peek_next(&mut self) -> Option<(usize, &'a str)> {
        let (i, l) = self.iter.next()?;
        self.last = i + 1;
        Some((i + 1, l))
    }

    pub(crate) fn next(&mut self) -> Result<(usize, &'a str)> {
        self.peek_next()
            .ok_or_else(|| Error::parse(self.last + 1, "unexpected end of file"))
    }

    pub(crate) fn expect_exact(&mut self, want: &str) -> Result<()> {
        let (n, l) = self.next()?;
        if l != want {
            return Err(Error::parse(n, format!("expected `{want}`, found `{l}`")));
        }
        Ok(())
    }

    /// `keyword v1 v2 ...` with exactly `count` values after the keyword.
    pub(crate) fn keyword(&mut self, key: &str, count: usize) -> Result<(usize, Vec<&'a str>)> {
        let (n, l) = self.next()?;
        let fields = split_fields(n, l, key, count)?;
        Ok((n, fields))
    }

    pub(crate) fn finish(&mut self) -> Result<()> {
        match self.peek_next() {
            None => Ok(()),
            Some((n, l)) => Err(Error::parse(n, format!("trailing content `{l}`"))),
        }
    }
}

pub(crate) fn split_fields<'a>(n: usize, line: &'a str, key: &str, count: usize) -> Result<Vec<&'a str>> {
    let mut it = line.split_whitespace();
    match it.next() {
        Some(k) if k == key => {}
        _ => return Err(Error::parse(n, format!("expected `{key}`, found `{line}`"))),
    }
    let fields: Vec<&str> = it.collect();
    if fields.len() != count {
        return Err(Error::parse(
            n,
            format!("`{key}` expects {count} values, found {}", fields.len()),
        ));
    }
    Ok(fields)
}

pub(crate) fn parse_num<T: FromStr>(n: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(n, format!("invalid number `{s}`")))
}

pub(crate) fn parse_finite(n: usize, s: &str) -> Result<f64> {
    let v: f64 = parse_num(n, s)?;
    if !v.is_finite() {
        return Err(Error::parse(n, format!("non-finite value `{s}`")));
    }
    Ok(v)
}

pub(crate) fn parse_floats<const N: usize>(n: usize, fields: &[&str]) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = parse_finite(n, f)?;
    }
    Ok(out)
}

/// Re-tag a validation error from a domain constructor with a line number.
pub(crate) fn at_line<T>(n: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { .. } | Error::Io { .. } => e,
        other => Error::parse(n, other.to_string()),
    })
}
