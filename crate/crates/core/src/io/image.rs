use std::fmt::Write as _;
use std::path::Path;

use super::{at_line, fmt_f64, parse_finite, parse_num, read_text, split_fields, write_bytes, Lines};
use crate::error::{Error, Result};
use crate::geometry::{Image2D, Modality};
use crate::resample::OverlayPolyline;

/// Binary PGM (`P5`, maxval 255).
pub fn format_pgm(img: &Image2D) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

/// Reads the canonical header written by [`format_pgm`]; pixel spacing is
/// not stored and comes back as 1.
pub fn parse_pgm(bytes: &[u8]) -> Result<Image2D> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(1, "truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::parse(1, "non-ASCII PGM header"))?);
    }
    if fields[0] != "P5" {
        return Err(Error::parse(1, format!("expected `P5`, found `{}`", fields[0])));
    }
    let width: usize = parse_num(1, fields[1])?;
    let height: usize = parse_num(1, fields[2])?;
    if fields[3] != "255" {
        return Err(Error::parse(1, format!("unsupported maxval `{}`", fields[3])));
    }
    let data = &bytes[(pos + 1).min(bytes.len())..];
    if data.len() != width * height {
        return Err(Error::parse(
            1,
            format!("PGM holds {} pixels, header says {}", data.len(), width * height),
        ));
    }
    Image2D::new(width, height, 1.0, data.to_vec())
}

pub fn read_pgm(path: &Path) -> Result<Image2D> {
    parse_pgm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_pgm(path: &Path, img: &Image2D) -> Result<()> {
    write_bytes(path, &format_pgm(img))
}

/// `OVERLAY v1`, then per polyline `P <modality> <n>` and `n` lines `x y`
/// in pixels.
pub fn format_overlay(lines: &[OverlayPolyline]) -> String {
    let mut out = String::from("OVERLAY v1\n");
    for l in lines {
        let _ = writeln!(out, "P {} {}", l.modality, l.points.len());
        for (x, y) in &l.points {
            let _ = writeln!(out, "{} {}", fmt_f64(*x), fmt_f64(*y));
        }
    }
    out
}

pub fn parse_overlay(text: &str) -> Result<Vec<OverlayPolyline>> {
    let mut lines = Lines::new(text);
    lines.expect_exact("OVERLAY v1")?;
    let mut out = Vec::new();
    while let Some((n, l)) = lines.peek_next() {
        let f = split_fields(n, l, "P", 2)?;
        let modality: Modality = at_line(n, f[0].parse())?;
        let count: usize = parse_num(n, f[1])?;
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let (m, l) = lines.next()?;
            let xy: Vec<&str> = l.split_whitespace().collect();
            if xy.len() != 2 {
                return Err(Error::parse(m, format!("expected `x y`, found `{l}`")));
            }
            points.push((parse_finite(m, xy[0])?, parse_finite(m, xy[1])?));
        }
        out.push(OverlayPolyline { modality, points });
    }
    Ok(out)
}

pub fn write_overlay(path: &Path, lines: &[OverlayPolyline]) -> Result<()> {
    write_bytes(path, format_overlay(lines).as_bytes())
}

pub fn read_overlay(path: &Path) -> Result<Vec<OverlayPolyline>> {
    parse_overlay(&read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let img = Image2D::new(3, 2, 1.0, vec![0, 1, 2, 253, 254, 255]).unwrap();
        let b = format_pgm(&img);
        assert_eq!(&b[..11], b"P5\n3 2\n255\n");
        let back = parse_pgm(&b).unwrap();
        assert_eq!(back, img);
        assert_eq!(format_pgm(&back), b);
        assert!(parse_pgm(&b[..b.len() - 1]).is_err());
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
    }

    #[test]
    fn overlay_round_trip() {
        let o = vec![
            OverlayPolyline {
                modality: Modality::MriCoronal,
                points: vec![(1.5, 2.0), (3.25, -1.0)],
            },
            OverlayPolyline {
                modality: Modality::MriTransverse,
                points: vec![(0.0, 0.0)],
            },
        ];
        let t = format_overlay(&o);
        let back = parse_overlay(&t).unwrap();
        assert_eq!(back, o);
        assert_eq!(format_overlay(&back), t);
        assert!(matches!(parse_overlay("OVERLAY v1\nP MRI_SAGITTAL 2\n0 0\n"), Err(Error::Parse { line: 4, .. })));
    }
}
