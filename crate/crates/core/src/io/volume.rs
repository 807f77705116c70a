use std::path::{Path, PathBuf};

use super::{fmt_f64, parse_floats, parse_num, read_text, write_bytes, Lines};
use crate::error::{Error, Result};
use crate::geometry::{Point3, VolumeGrid};

const MAGIC: &str = "VOLUME v1";

/// `volume.hdr` → `volume.raw`.
pub fn raw_path_for(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

pub fn format_volume_header(v: &VolumeGrid) -> String {
    let [nx, ny, nz] = v.dims();
    let [sx, sy, sz] = v.spacing();
    let o = v.origin();
    format!(
        "{MAGIC}\ndims {nx} {ny} {nz}\nspacing_mm {} {} {}\norigin_mm {} {} {}\ndtype f32le\n",
        fmt_f64(sx),
        fmt_f64(sy),
        fmt_f64(sz),
        fmt_f64(o.x),
        fmt_f64(o.y),
        fmt_f64(o.z)
    )
}

pub fn format_volume_raw(v: &VolumeGrid) -> Vec<u8> {
    v.voxels().iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn parse_volume(header: &str, raw: &[u8]) -> Result<VolumeGrid> {
    let mut lines = Lines::new(header);
    lines.expect_exact(MAGIC)?;
    let (n, f) = lines.keyword("dims", 3)?;
    let dims = [
        parse_num::<usize>(n, f[0])?,
        parse_num::<usize>(n, f[1])?,
        parse_num::<usize>(n, f[2])?,
    ];
    let (ns, f) = lines.keyword("spacing_mm", 3)?;
    let spacing = parse_floats::<3>(ns, &f)?;
    let (n, f) = lines.keyword("origin_mm", 3)?;
    let [ox, oy, oz] = parse_floats::<3>(n, &f)?;
    lines.expect_exact("dtype f32le")?;
    lines.finish()?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::parse(2, "dims overflow"))?;
    if raw.len() != count * 4 {
        return Err(Error::parse(
            2,
            format!("raw data holds {} bytes, header needs {}", raw.len(), count * 4),
        ));
    }
    let voxels = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    VolumeGrid::new(dims, spacing, Point3::new(ox, oy, oz), voxels).map_err(|e| Error::parse(ns, e.to_string()))
}

pub fn read_volume(header: &Path, raw: &Path) -> Result<VolumeGrid> {
    let h = read_text(header)?;
    let r = std::fs::read(raw).map_err(|e| Error::io(raw, e))?;
    parse_volume(&h, &r)
}

pub fn write_volume(header: &Path, raw: &Path, v: &VolumeGrid) -> Result<()> {
    write_bytes(header, format_volume_header(v).as_bytes())?;
    write_bytes(raw, &format_volume_raw(v))
}
