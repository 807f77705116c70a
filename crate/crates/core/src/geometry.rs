//! Geometric and imaging value types shared by the whole pipeline.
//!
//! All lengths are millimetres. Each modality has its own right-handed frame
//! whose stack axis is the contour plane normal.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Point2 = nalgebra::Point2<f64>;
pub type Vec3 = Vector3<f64>;

/// Default per-point error estimate, in mm.
pub const DEFAULT_SIGMA: f64 = 1.0;

/// Tolerance on consecutive slice gaps relative to the nominal spacing.
pub const SPACING_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Trus,
    MriTransverse,
    MriSagittal,
    MriCoronal,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::Trus,
        Modality::MriTransverse,
        Modality::MriSagittal,
        Modality::MriCoronal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Trus => "TRUS",
            Modality::MriTransverse => "MRI_TRANSVERSE",
            Modality::MriSagittal => "MRI_SAGITTAL",
            Modality::MriCoronal => "MRI_CORONAL",
        }
    }

    /// Lift in-plane coordinates `(u, v)` on the plane at offset `w` along
    /// the stack axis into the modality's 3-D frame.
    ///
    /// Transverse planes are `z = w` with `(u, v) = (x, y)`; sagittal planes
    /// are `x = w` with `(u, v) = (y, z)`; coronal planes are `y = w` with
    /// `(u, v) = (z, x)`. All three are cyclic permutations, so handedness
    /// is preserved.
    pub fn embed(self, u: f64, v: f64, w: f64) -> Point3 {
        match self {
            Modality::Trus | Modality::MriTransverse => Point3::new(u, v, w),
            Modality::MriSagittal => Point3::new(w, u, v),
            Modality::MriCoronal => Point3::new(v, w, u),
        }
    }

    /// Inverse of [`Modality::embed`]: `(u, v, w)`.
    pub fn flatten(self, p: &Point3) -> (f64, f64, f64) {
        match self {
            Modality::Trus | Modality::MriTransverse => (p.x, p.y, p.z),
            Modality::MriSagittal => (p.y, p.z, p.x),
            Modality::MriCoronal => (p.z, p.x, p.y),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown modality `{s}`")))
    }
}

/// A closed planar contour in one slice of a stack.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarContour {
    pub slice_index: i32,
    pub z: f64,
    points: Vec<Point2>,
}

impl PlanarContour {
    /// Validates: at least three vertices, finite coordinates, no repeated
    /// consecutive vertex (including last/first) and no self-intersection.
    pub fn new(slice_index: i32, z: f64, points: Vec<Point2>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::DegeneratePolygon(format!(
                "slice {slice_index}: {} vertices",
                points.len()
            )));
        }
        if !z.is_finite() || points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::NonFinite(format!("slice {slice_index} coordinates")));
        }
        let n = points.len();
        for i in 0..n {
            if points[i] == points[(i + 1) % n] {
                return Err(Error::DegeneratePolygon(format!(
                    "slice {slice_index}: duplicated vertex {i}"
                )));
            }
        }
        if !is_simple(&points) {
            return Err(Error::DegeneratePolygon(format!(
                "slice {slice_index}: self-intersecting polygon"
            )));
        }
        Ok(Self {
            slice_index,
            z,
            points,
        })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Even-odd point-in-polygon test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let pts = &self.points;
        let mut inside = false;
        let mut j = pts.len() - 1;
        for i in 0..pts.len() {
            let (pi, pj) = (pts[i], pts[j]);
            if (pi.y > y) != (pj.y > y) {
                let xc = pj.x + (y - pj.y) * (pi.x - pj.x) / (pi.y - pj.y);
                if x < xc {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    pub fn bounds(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// Quadratic check that no two non-adjacent edges of the closed polygon meet.
pub fn is_simple(points: &[Point2]) -> bool {
    let n = points.len();
    for i in 0..n {
        let (a, b) = (points[i], points[(i + 1) % n]);
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (c, d) = (points[j], points[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Ordered planar contours from one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourStack {
    pub modality: Modality,
    spacing: f64,
    contours: Vec<PlanarContour>,
}

impl ContourStack {
    /// Contours are sorted by `z`; consecutive planes must be exactly one
    /// `spacing` apart (within [`SPACING_TOLERANCE`]).
    pub fn new(modality: Modality, spacing: f64, mut contours: Vec<PlanarContour>) -> Result<Self> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidInput(format!("spacing must be > 0, got {spacing}")));
        }
        contours.sort_by(|a, b| a.z.total_cmp(&b.z));
        for w in contours.windows(2) {
            let gap = w[1].z - w[0].z;
            if gap <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "slices {} and {} share z = {}",
                    w[0].slice_index, w[1].slice_index, w[0].z
                )));
            }
            if (gap - spacing).abs() > SPACING_TOLERANCE {
                return Err(Error::InvalidInput(format!(
                    "gap of {gap} mm between slices {} and {} (spacing {spacing})",
                    w[0].slice_index, w[1].slice_index
                )));
            }
            if w[1].slice_index <= w[0].slice_index {
                return Err(Error::InvalidInput(format!(
                    "slice indices must increase with z ({} then {})",
                    w[0].slice_index, w[1].slice_index
                )));
            }
        }
        Ok(Self {
            modality,
            spacing,
            contours,
        })
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn contours(&self) -> &[PlanarContour] {
        &self.contours
    }

    pub fn len(&self) -> usize {
        self.contours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contours.is_empty()
    }

    pub fn by_index(&self, slice_index: i32) -> Option<&PlanarContour> {
        self.contours.iter().find(|c| c.slice_index == slice_index)
    }

    pub fn total_points(&self) -> usize {
        self.contours.iter().map(PlanarContour::len).sum()
    }

    /// Returns a copy with slice `slice_index` replaced, inserted, or (for
    /// `None`) removed, re-validated as a whole.
    pub fn with_slice(&self, slice_index: i32, contour: Option<PlanarContour>) -> Result<Self> {
        let mut contours: Vec<_> = self
            .contours
            .iter()
            .filter(|c| c.slice_index != slice_index)
            .cloned()
            .collect();
        if let Some(c) = contour {
            contours.push(c);
        }
        Self::new(self.modality, self.spacing, contours)
    }
}

/// Point set with per-point error estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    sigmas: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, sigmas: Vec<f64>) -> Result<Self> {
        if points.len() != sigmas.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} points but {} sigmas",
                points.len(),
                sigmas.len()
            )));
        }
        if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma must be positive, got {s}")));
        }
        if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        Ok(Self { points, sigmas })
    }

    pub fn with_uniform_sigma(points: Vec<Point3>, sigma: f64) -> Result<Self> {
        let sigmas = vec![sigma; points.len()];
        Self::new(points, sigmas)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    pub fn map_points(&self, f: impl Fn(&Point3) -> Point3) -> Self {
        Self {
            points: self.points.iter().map(f).collect(),
            sigmas: self.sigmas.clone(),
        }
    }

    pub fn concat(clouds: &[PointCloud]) -> Self {
        Self {
            points: clouds.iter().flat_map(|c| c.points.iter().copied()).collect(),
            sigmas: clouds.iter().flat_map(|c| c.sigmas.iter().copied()).collect(),
        }
    }
}

/// Embed every contour vertex of `stack` into 3-D, slice-major then vertex
/// order, with σ = [`DEFAULT_SIGMA`].
pub fn cloud_from_stack(stack: &ContourStack, pixel_to_mm: f64) -> Result<PointCloud> {
    cloud_from_stack_with_sigma(stack, pixel_to_mm, DEFAULT_SIGMA)
}

pub fn cloud_from_stack_with_sigma(
    stack: &ContourStack,
    pixel_to_mm: f64,
    sigma: f64,
) -> Result<PointCloud> {
    if stack.is_empty() {
        return Err(Error::EmptyInput("contour stack"));
    }
    if !(pixel_to_mm > 0.0) {
        return Err(Error::InvalidConfig(format!("pixel_to_mm must be > 0, got {pixel_to_mm}")));
    }
    let points = stack
        .contours()
        .iter()
        .flat_map(|c| {
            c.points()
                .iter()
                .map(move |p| stack.modality.embed(p.x * pixel_to_mm, p.y * pixel_to_mm, c.z))
        })
        .collect();
    PointCloud::with_uniform_sigma(points, sigma)
}

/// Rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    /// Rotation by `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let rot = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
        Self::new(rot, translation)
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }
}

pub fn transform_point(t: &RigidTransform, p: &Point3) -> Point3 {
    t.apply(p)
}

/// Axis-aligned scalar volume; voxel `(0,0,0)` is centred on `origin`,
/// x varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrid {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: Point3,
    voxels: Vec<f32>,
}

impl VolumeGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: Point3, voxels: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidInput(format!("volume dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput(format!("volume spacing must be > 0, got {spacing:?}")));
        }
        let count = dims[0] * dims[1] * dims[2];
        if voxels.len() != count {
            return Err(Error::DimensionMismatch(format!(
                "{} voxels for dims {dims:?} ({count} expected)",
                voxels.len()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            voxels,
        })
    }

    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: Point3,
        f: impl Fn(Point3) -> f32,
    ) -> Result<Self> {
        let mut voxels = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    voxels.push(f(Point3::new(
                        origin.x + i as f64 * spacing[0],
                        origin.y + j as f64 * spacing[1],
                        origin.z + k as f64 * spacing[2],
                    )));
                }
            }
        }
        Self::new(dims, spacing, origin, voxels)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.voxels[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    /// Continuous voxel coordinates of a world point.
    pub fn to_index(&self, p: &Point3) -> [f64; 3] {
        [
            (p.x - self.origin.x) / self.spacing[0],
            (p.y - self.origin.y) / self.spacing[1],
            (p.z - self.origin.z) / self.spacing[2],
        ]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Point3 {
        Point3::new(
            self.origin.x + i as f64 * self.spacing[0],
            self.origin.y + j as f64 * self.spacing[1],
            self.origin.z + k as f64 * self.spacing[2],
        )
    }

    /// Value of the voxel whose cell contains `p`, `None` outside.
    pub fn sample_nearest(&self, p: &Point3) -> Option<f32> {
        let idx = self.to_index(p);
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let r = idx[a].round();
            if !(r >= 0.0 && r < self.dims[a] as f64) {
                return None;
            }
            ijk[a] = r as usize;
        }
        Some(self.get(ijk[0], ijk[1], ijk[2]))
    }

    /// Trilinear interpolation between voxel centres, `None` outside the
    /// hull of voxel centres. Single-voxel axes are treated as constant.
    pub fn sample_trilinear(&self, p: &Point3) -> Option<f64> {
        const EPS: f64 = 1e-9;
        let idx = self.to_index(p);
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let x = idx[a];
            if n == 1 {
                if x.abs() > 0.5 {
                    return None;
                }
                continue;
            }
            if x < -EPS || x > (n - 1) as f64 + EPS {
                return None;
            }
            let x = x.clamp(0.0, (n - 1) as f64);
            let b = (x.floor() as usize).min(n - 2);
            base[a] = b;
            frac[a] = x - b as f64;
        }
        let mut acc = 0.0;
        for corner in 0..8usize {
            let mut w = 1.0;
            let mut ijk = [0usize; 3];
            for a in 0..3 {
                let bit = (corner >> a) & 1;
                if self.dims[a] == 1 {
                    if bit == 1 {
                        w = 0.0;
                    }
                    continue;
                }
                ijk[a] = base[a] + bit;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w != 0.0 {
                acc += w * self.get(ijk[0], ijk[1], ijk[2]) as f64;
            }
        }
        Some(acc)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.voxels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image2D {
    pub width: usize,
    pub height: usize,
    pixel_spacing_bits: u64,
    pixels: Vec<u8>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, pixel_spacing: f64, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixel_spacing_bits: pixel_spacing.to_bits(),
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, pixel_spacing: f64, value: u8) -> Self {
        Self {
            width,
            height,
            pixel_spacing_bits: pixel_spacing.to_bits(),
            pixels: vec![value; width * height],
        }
    }

    pub fn pixel_spacing(&self) -> f64 {
        f64::from_bits(self.pixel_spacing_bits)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }
}
