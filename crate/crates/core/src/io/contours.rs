use std::fmt::Write as _;
use std::path::Path;

use super::{at_line, fmt_f64, parse_finite, parse_num, read_text, split_fields, write_bytes, Lines};
use crate::error::{Error, Result};
use crate::geometry::{ContourStack, Modality, PlanarContour, Point2};

const MAGIC: &str = "CONTOURSTACK v1";

fn push_slice(out: &mut String, c: &PlanarContour) {
    let _ = writeln!(out, "SLICE {} {} {}", c.slice_index, fmt_f64(c.z), c.len());
    for p in c.points() {
        let _ = writeln!(out, "{} {}", fmt_f64(p.x), fmt_f64(p.y));
    }
}

pub fn format_contour_stack(stack: &ContourStack) -> String {
    let mut out = format!(
        "{MAGIC}\nmodality {}\nspacing_mm {}\n",
        stack.modality,
        fmt_f64(stack.spacing())
    );
    for c in stack.contours() {
        push_slice(&mut out, c);
    }
    out
}

/// One `SLICE` record, as used for single-slice edits.
pub fn format_slice_record(c: &PlanarContour) -> String {
    let mut out = String::new();
    push_slice(&mut out, c);
    out
}

fn read_slice(lines: &mut Lines<'_>, n: usize, header: &str) -> Result<PlanarContour> {
    let f = split_fields(n, header, "SLICE", 3)?;
    let index: i32 = parse_num(n, f[0])?;
    let z = parse_finite(n, f[1])?;
    let count: usize = parse_num(n, f[2])?;
    let mut pts = Vec::with_capacity(count);
    for _ in 0..count {
        let (m, l) = lines.next()?;
        let xy: Vec<&str> = l.split_whitespace().collect();
        if xy.len() != 2 {
            return Err(Error::parse(m, format!("expected `x y`, found `{l}`")));
        }
        pts.push(Point2::new(parse_finite(m, xy[0])?, parse_finite(m, xy[1])?));
    }
    at_line(n, PlanarContour::new(index, z, pts))
}

pub fn parse_slice_record(text: &str) -> Result<PlanarContour> {
    let mut lines = Lines::new(text);
    let (n, l) = lines.next()?;
    let c = read_slice(&mut lines, n, l)?;
    lines.finish()?;
    Ok(c)
}

pub fn parse_contour_stack(text: &str) -> Result<ContourStack> {
    let mut lines = Lines::new(text);
    lines.expect_exact(MAGIC)?;
    let (n, f) = lines.keyword("modality", 1)?;
    let modality: Modality = at_line(n, f[0].parse())?;
    let (n, f) = lines.keyword("spacing_mm", 1)?;
    let spacing = parse_finite(n, f[0])?;
    let mut contours = Vec::new();
    while let Some((n, l)) = lines.peek_next() {
        contours.push(read_slice(&mut lines, n, l)?);
    }
    at_line(lines.line_no(), ContourStack::new(modality, spacing, contours))
}

pub fn read_contour_stack(path: &Path) -> Result<ContourStack> {
    parse_contour_stack(&read_text(path)?)
}

pub fn write_contour_stack(path: &Path, stack: &ContourStack) -> Result<()> {
    write_bytes(path, format_contour_stack(stack).as_bytes())
}
