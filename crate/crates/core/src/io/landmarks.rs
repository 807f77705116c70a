use std::fmt::Write as _;
use std::path::Path;

use super::{at_line, fmt_f64, parse_floats, parse_num, read_text, split_fields, write_bytes, Lines};
use crate::error::{Error, Result};
use crate::geometry::{Modality, Point2, Point3};
use crate::metrics::{LandmarkEntry, LandmarkSeries};
use crate::volumetry::{Seed, SeedImplant};

/// `LANDMARKS v1`, `modality <M>`, then `L <slice_index> <z> <x> <y>`.
pub fn format_landmarks(series: &LandmarkSeries) -> String {
    let mut out = format!("LANDMARKS v1\nmodality {}\n", series.modality);
    for e in series.entries() {
        let _ = writeln!(
            out,
            "L {} {} {} {}",
            e.slice_index,
            fmt_f64(e.z),
            fmt_f64(e.center.x),
            fmt_f64(e.center.y)
        );
    }
    out
}

pub fn parse_landmarks(text: &str) -> Result<LandmarkSeries> {
    let mut lines = Lines::new(text);
    lines.expect_exact("LANDMARKS v1")?;
    let (n, f) = lines.keyword("modality", 1)?;
    let modality: Modality = at_line(n, f[0].parse())?;
    let mut entries = Vec::new();
    while let Some((n, l)) = lines.peek_next() {
        let f = split_fields(n, l, "L", 4)?;
        let slice_index: i32 = parse_num(n, f[0])?;
        let [z, x, y] = parse_floats::<3>(n, &f[1..])?;
        entries.push(LandmarkEntry {
            slice_index,
            z,
            center: Point2::new(x, y),
        });
    }
    at_line(lines.line_no(), LandmarkSeries::new(modality, entries))
}

/// 3-D lumen centres: `CENTERS v1`, then `C <x> <y> <z>` in mm.
pub fn format_centers(points: &[Point3]) -> String {
    let mut out = String::from("CENTERS v1\n");
    for p in points {
        let _ = writeln!(out, "C {} {} {}", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z));
    }
    out
}

pub fn parse_centers(text: &str) -> Result<Vec<Point3>> {
    let mut lines = Lines::new(text);
    lines.expect_exact("CENTERS v1")?;
    let mut out = Vec::new();
    while let Some((n, l)) = lines.peek_next() {
        let f = split_fields(n, l, "C", 3)?;
        let [x, y, z] = parse_floats::<3>(n, &f)?;
        out.push(Point3::new(x, y, z));
    }
    Ok(out)
}

/// `SEEDS v1`, then `x y z strength`.
pub fn format_seeds(implant: &SeedImplant) -> String {
    let mut out = String::from("SEEDS v1\n");
    for s in implant.seeds() {
        let p = s.position;
        let _ = writeln!(
            out,
            "{} {} {} {}",
            fmt_f64(p.x),
            fmt_f64(p.y),
            fmt_f64(p.z),
            fmt_f64(s.strength)
        );
    }
    out
}

pub fn parse_seeds(text: &str) -> Result<SeedImplant> {
    let mut lines = Lines::new(text);
    lines.expect_exact("SEEDS v1")?;
    let mut seeds = Vec::new();
    while let Some((n, l)) = lines.peek_next() {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 4 {
            return Err(Error::parse(n, format!("expected `x y z strength`, found `{l}`")));
        }
        let [x, y, z, strength] = parse_floats::<4>(n, &f)?;
        if !(strength > 0.0) {
            return Err(Error::parse(n, format!("seed strength must be > 0, got {strength}")));
        }
        seeds.push(Seed {
            position: Point3::new(x, y, z),
            strength,
        });
    }
    SeedImplant::new(seeds)
}

pub fn read_landmarks(path: &Path) -> Result<LandmarkSeries> {
    parse_landmarks(&read_text(path)?)
}

pub fn write_landmarks(path: &Path, series: &LandmarkSeries) -> Result<()> {
    write_bytes(path, format_landmarks(series).as_bytes())
}

pub fn read_centers(path: &Path) -> Result<Vec<Point3>> {
    parse_centers(&read_text(path)?)
}

pub fn write_centers(path: &Path, points: &[Point3]) -> Result<()> {
    write_bytes(path, format_centers(points).as_bytes())
}

pub fn read_seeds(path: &Path) -> Result<SeedImplant> {
    parse_seeds(&read_text(path)?)
}

pub fn write_seeds(path: &Path, implant: &SeedImplant) -> Result<()> {
    write_bytes(path, format_seeds(implant).as_bytes())
}
