use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};

use super::{fmt_f64, parse_floats, parse_num, read_text, split_fields, write_bytes, Lines};
use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform, Vec3};
use crate::octree::{Cell, NodeKey, OctreeSplineFFD};
use crate::transform::FusionTransform;

fn push_rigid(out: &mut String, t: &RigidTransform) {
    let q = t.rotation.quaternion();
    let _ = writeln!(
        out,
        "RIGID v1\nq {} {} {} {}\nt {} {} {}",
        fmt_f64(q.w),
        fmt_f64(q.i),
        fmt_f64(q.j),
        fmt_f64(q.k),
        fmt_f64(t.translation.x),
        fmt_f64(t.translation.y),
        fmt_f64(t.translation.z)
    );
}

/// `RIGID v1`, or `FFD v1` followed by the embedded rigid block, the root
/// box, depth limit, regularization weight and depth-first node records.
pub fn format_transform(f: &FusionTransform) -> String {
    let mut out = String::new();
    let Some(ffd) = &f.ffd else {
        push_rigid(&mut out, &f.rigid);
        return out;
    };
    out.push_str("FFD v1\n");
    push_rigid(&mut out, &f.rigid);
    let lo = ffd.origin();
    let hi = lo + Vec3::repeat(ffd.size());
    let _ = writeln!(
        out,
        "root_box {} {} {} {} {} {}\nmax_depth {}\nlambda {}",
        fmt_f64(lo.x),
        fmt_f64(lo.y),
        fmt_f64(lo.z),
        fmt_f64(hi.x),
        fmt_f64(hi.y),
        fmt_f64(hi.z),
        ffd.max_depth(),
        fmt_f64(ffd.regularization())
    );
    ffd.visit_depth_first(|cell, leaf| {
        if !leaf {
            out.push_str("N split\n");
            return;
        }
        out.push_str("N leaf\n");
        for (i, key) in ffd.corners(cell).iter().enumerate() {
            let v = ffd.node_value(key).unwrap_or_else(Vec3::zeros);
            let _ = writeln!(out, "c {i} {} {} {}", fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z));
        }
    });
    out
}

fn read_rigid(lines: &mut Lines<'_>) -> Result<RigidTransform> {
    lines.expect_exact("RIGID v1")?;
    let (n, f) = lines.keyword("q", 4)?;
    let [w, x, y, z] = parse_floats::<4>(n, &f)?;
    let q = Quaternion::new(w, x, y, z);
    if q.norm() < 1e-12 {
        return Err(Error::parse(n, "zero quaternion"));
    }
    let (n, f) = lines.keyword("t", 3)?;
    let [tx, ty, tz] = parse_floats::<3>(n, &f)?;
    // Stored values are kept bit-exact when already unit length.
    let rotation = if (q.norm() - 1.0).abs() < 1e-9 {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::from_quaternion(q)
    };
    Ok(RigidTransform::new(rotation, Vec3::new(tx, ty, tz)))
}

struct TreeReader<'a, 'b> {
    lines: &'b mut Lines<'a>,
    max_depth: u8,
    leaves: BTreeSet<Cell>,
    values: BTreeMap<NodeKey, Vec3>,
    corners: &'b dyn Fn(&Cell) -> [NodeKey; 8],
}

impl TreeReader<'_, '_> {
    fn node(&mut self, cell: Cell) -> Result<()> {
        let (n, f) = self.lines.keyword("N", 1)?;
        match f[0] {
            "split" => {
                if cell.depth >= self.max_depth {
                    return Err(Error::parse(n, "split below max_depth"));
                }
                for child in cell.children() {
                    self.node(child)?;
                }
            }
            "leaf" => {
                if cell.depth == 0 {
                    return Err(Error::parse(n, "root must be split"));
                }
                let keys = (self.corners)(&cell);
                for (i, key) in keys.iter().enumerate() {
                    let (m, l) = self.lines.next()?;
                    let f = split_fields(m, l, "c", 4)?;
                    let idx: usize = parse_num(m, f[0])?;
                    if idx != i {
                        return Err(Error::parse(m, format!("expected corner {i}, found {idx}")));
                    }
                    let [x, y, z] = parse_floats::<3>(m, &f[1..])?;
                    self.values.insert(*key, Vec3::new(x, y, z));
                }
                self.leaves.insert(cell);
            }
            other => return Err(Error::parse(n, format!("unknown node kind `{other}`"))),
        }
        Ok(())
    }
}

pub fn parse_transform(text: &str) -> Result<FusionTransform> {
    let mut lines = Lines::new(text);
    match text.lines().next() {
        Some("RIGID v1") => {
            let rigid = read_rigid(&mut lines)?;
            lines.finish()?;
            Ok(FusionTransform::rigid(rigid))
        }
        Some("FFD v1") => {
            lines.next()?;
            let rigid = read_rigid(&mut lines)?;
            let (nb, f) = lines.keyword("root_box", 6)?;
            let b = parse_floats::<6>(nb, &f)?;
            let size = b[3] - b[0];
            if (b[4] - b[1] - size).abs() > 1e-9 * size.abs().max(1.0)
                || (b[5] - b[2] - size).abs() > 1e-9 * size.abs().max(1.0)
            {
                return Err(Error::parse(nb, "root box must be a cube"));
            }
            let (n, f) = lines.keyword("max_depth", 1)?;
            let max_depth: u8 = parse_num(n, f[0])?;
            let (n, f) = lines.keyword("lambda", 1)?;
            let lambda = parse_floats::<1>(n, &f)?[0];
            let origin = Point3::new(b[0], b[1], b[2]);
            let shape = OctreeSplineFFD::new(origin, size, max_depth, lambda).map_err(|e| Error::parse(nb, e.to_string()))?;
            let corners = |c: &Cell| shape.corners(c);
            let mut reader = TreeReader {
                lines: &mut lines,
                max_depth,
                leaves: BTreeSet::new(),
                values: BTreeMap::new(),
                corners: &corners,
            };
            reader.node(Cell::ROOT)?;
            let (leaves, values) = (reader.leaves, reader.values);
            lines.finish()?;
            let ffd = OctreeSplineFFD::from_parts(origin, size, max_depth, lambda, leaves, &values)
                .map_err(|e| Error::parse(nb, e.to_string()))?;
            Ok(FusionTransform::with_ffd(rigid, ffd))
        }
        Some(other) => Err(Error::parse(1, format!("unknown transform magic `{other}`"))),
        None => Err(Error::parse(1, "empty transform file")),
    }
}

pub fn read_transform(path: &Path) -> Result<FusionTransform> {
    parse_transform(&read_text(path)?)
}

pub fn write_transform(path: &Path, f: &FusionTransform) -> Result<()> {
    write_bytes(path, format_transform(f).as_bytes())
}
