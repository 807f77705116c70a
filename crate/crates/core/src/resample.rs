//! MRI reslicing along TRUS planes, quadrant bi-modality composition and
//! projection of MRI contours onto TRUS images.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{ContourStack, Image2D, Modality, Point3, VolumeGrid};
use crate::transform::FusionTransform;

/// Default half-thickness (mm) of the slab around a TRUS plane from which
/// MRI contour points are projected.
pub const DEFAULT_PROJECTION_TOLERANCE: f64 = 1.5;

/// Pixel grid of one TRUS image. Pixel `(x, y)` sits at
/// `(origin_x + x·spacing, origin_y + y·spacing, z)` in the TRUS frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneSpec {
    pub slice_index: i32,
    pub z: f64,
    pub width: usize,
    pub height: usize,
    pub pixel_spacing: f64,
    pub origin_x: f64,
    pub origin_y: f64,
}

impl PlaneSpec {
    pub fn new(
        slice_index: i32,
        z: f64,
        width: usize,
        height: usize,
        pixel_spacing: f64,
        origin_x: f64,
        origin_y: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!("plane dimensions must be >= 1, got {width}x{height}")));
        }
        if !(pixel_spacing > 0.0) || !pixel_spacing.is_finite() {
            return Err(Error::InvalidInput(format!("pixel spacing must be > 0, got {pixel_spacing}")));
        }
        Ok(Self {
            slice_index,
            z,
            width,
            height,
            pixel_spacing,
            origin_x,
            origin_y,
        })
    }

    pub fn pixel_position(&self, x: f64, y: f64) -> Point3 {
        Point3::new(
            self.origin_x + x * self.pixel_spacing,
            self.origin_y + y * self.pixel_spacing,
            self.z,
        )
    }

    /// Continuous pixel coordinates of an in-plane TRUS position.
    pub fn to_pixel(&self, x_mm: f64, y_mm: f64) -> (f64, f64) {
        (
            (x_mm - self.origin_x) / self.pixel_spacing,
            (y_mm - self.origin_y) / self.pixel_spacing,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interp {
    Nearest,
    #[default]
    Trilinear,
}

impl std::str::FromStr for Interp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Self::Nearest),
            "trilinear" => Ok(Self::Trilinear),
            other => Err(Error::InvalidInput(format!("unknown interpolation '{other}'"))),
        }
    }
}

/// Linear map of `[lo, hi]` onto `0..=255`; a flat window maps to 0.
pub fn window_to_u8(v: f64, lo: f64, hi: f64) -> u8 {
    if !(hi > lo) {
        return 0;
    }
    (255.0 * (v - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8
}

/// MRI image along a TRUS plane: each pixel's TRUS position is mapped by
/// `f` and sampled from `volume`. Intensities are windowed over the whole
/// volume's range; samples outside the volume are 0.
pub fn reslice(volume: &VolumeGrid, plane: &PlaneSpec, f: &FusionTransform, interp: Interp) -> Image2D {
    reslice_with(volume, plane, f, interp, Exec::default())
}

pub fn reslice_with(volume: &VolumeGrid, plane: &PlaneSpec, f: &FusionTransform, interp: Interp, exec: Exec) -> Image2D {
    let (lo, hi) = volume.min_max();
    let (lo, hi) = (lo as f64, hi as f64);
    let rows = exec.map_range(plane.height, |y| {
        (0..plane.width)
            .map(|x| {
                let q = f.apply(&plane.pixel_position(x as f64, y as f64));
                let v = match interp {
                    Interp::Nearest => volume.sample_nearest(&q).map(f64::from),
                    Interp::Trilinear => volume.sample_trilinear(&q),
                };
                v.map_or(0, |v| window_to_u8(v, lo, hi))
            })
            .collect::<Vec<u8>>()
    });
    Image2D::new(plane.width, plane.height, plane.pixel_spacing, rows.concat()).expect("rows have plane width")
}

/// Position of the virtual cross in pixels; `cx == width` or `cy == height`
/// puts the line just outside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CrossPosition {
    pub cx: usize,
    pub cy: usize,
}

impl CrossPosition {
    pub fn new(cx: usize, cy: usize, width: usize, height: usize) -> Result<Self> {
        if cx > width || cy > height {
            return Err(Error::InvalidInput(format!(
                "cross ({cx},{cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self { cx, cy })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelSource {
    Trus,
    Mri,
    Cross,
}

/// Ownership of pixel `(x, y)`: the cross lines first, then TRUS in the
/// upper-right and lower-left quadrants, MRI elsewhere.
pub fn quadrant_source(x: usize, y: usize, cross: CrossPosition) -> PixelSource {
    if x == cross.cx || y == cross.cy {
        PixelSource::Cross
    } else if (x >= cross.cx && y < cross.cy) || (x < cross.cx && y >= cross.cy) {
        PixelSource::Trus
    } else {
        PixelSource::Mri
    }
}

pub const CROSS_INTENSITY: u8 = 255;

pub fn compose_quadrants(trus: &Image2D, mri: &Image2D, cross: CrossPosition) -> Result<Image2D> {
    if trus.width != mri.width || trus.height != mri.height {
        return Err(Error::DimensionMismatch(format!(
            "TRUS {}x{} vs MRI {}x{}",
            trus.width, trus.height, mri.width, mri.height
        )));
    }
    let mut out = trus.clone();
    for y in 0..trus.height {
        for x in 0..trus.width {
            let v = match quadrant_source(x, y, cross) {
                PixelSource::Cross => CROSS_INTENSITY,
                PixelSource::Trus => trus.get(x, y),
                PixelSource::Mri => mri.get(x, y),
            };
            out.set(x, y, v);
        }
    }
    Ok(out)
}

/// Chain of projected MRI contour points, in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlayPolyline {
    pub modality: Modality,
    pub points: Vec<(f64, f64)>,
}

/// MRI contour points mapped back into the TRUS frame and kept when within
/// `tol` mm of the plane. Consecutive kept points of a contour are chained;
/// a run that wraps around the contour's closing edge stays one polyline.
pub fn project_mri_contours(
    mri_stacks: &[&ContourStack],
    plane: &PlaneSpec,
    f: &FusionTransform,
    tol: f64,
) -> Vec<OverlayPolyline> {
    let mut out = Vec::new();
    for stack in mri_stacks {
        for contour in stack.contours() {
            let projected: Vec<Option<(f64, f64)>> = contour
                .points()
                .iter()
                .map(|p| {
                    let q = f.inverse_apply(&stack.modality.embed(p.x, p.y, contour.z));
                    ((q.z - plane.z).abs() <= tol).then(|| plane.to_pixel(q.x, q.y))
                })
                .collect();
            let mut runs: Vec<Vec<(f64, f64)>> = Vec::new();
            let mut current: Vec<(f64, f64)> = Vec::new();
            for p in &projected {
                match p {
                    Some(px) => current.push(*px),
                    None if !current.is_empty() => runs.push(std::mem::take(&mut current)),
                    None => {}
                }
            }
            if !current.is_empty() {
                runs.push(current);
            }
            let wraps = runs.len() > 1 && projected[0].is_some() && projected[projected.len() - 1].is_some();
            if wraps {
                let first = runs.remove(0);
                runs.last_mut().unwrap().extend(first);
            }
            out.extend(runs.into_iter().map(|points| OverlayPolyline {
                modality: stack.modality,
                points,
            }));
        }
    }
    out
}
