//! Synthetic ground-truth scenes: an ellipsoid prostate with a curved
//! urethra, three orthogonal MRI contour stacks, MRI and TRUS intensity
//! volumes, a sparse TRUS contour stack and lumen landmarks in both frames.
//!
//! The ground truth maps TRUS to MRI. TRUS contours are the exact plane
//! sections of the pulled-back ellipsoid, perturbed in-plane by Gaussian
//! noise.

use nalgebra::{Matrix2, Matrix3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::error::{Error, Result};
use crate::geometry::{
    cloud_from_stack, ContourStack, Modality, PlanarContour, Point2, Point3, PointCloud, RigidTransform, Vec3,
    VolumeGrid,
};
use crate::metrics::{LandmarkEntry, LandmarkSeries};
use crate::transform::FusionTransform;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    /// Ellipsoid semi-axes (mm) along the MRI x, y, z axes.
    pub semi_axes: [f64; 3],
    pub center: Point3,
    pub urethra_radius: f64,
    pub trus_spacing: f64,
    pub mri_spacing: f64,
    /// In-plane σ (mm) of the TRUS contour and landmark noise.
    pub noise_sigma: f64,
    pub rng_seed: u64,
    /// TRUS→MRI.
    pub ground_truth: RigidTransform,
    /// Target spacing (mm) between consecutive MRI contour vertices.
    pub mri_vertex_spacing: f64,
    pub trus_points_per_contour: usize,
    /// Lateral sag (mm) of the urethra axis at the apex and base.
    pub urethra_curvature: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            semi_axes: [25.0, 20.0, 20.0],
            center: Point3::origin(),
            urethra_radius: 2.5,
            trus_spacing: 5.0,
            mri_spacing: 3.0,
            noise_sigma: 1.0,
            rng_seed: 0,
            ground_truth: RigidTransform::from_axis_angle(
                Vec3::new(1.0, 1.0, 0.0),
                6f64.to_radians(),
                Vec3::new(3.0, -2.0, 4.0),
            ),
            mri_vertex_spacing: 1.0,
            trus_points_per_contour: 36,
            urethra_curvature: 3.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidSpec(format!("{what} must be > 0, got {v}")));
        for (i, &a) in self.semi_axes.iter().enumerate() {
            if !(a > 0.0) || !a.is_finite() {
                return bad(["semi_axis_a", "semi_axis_b", "semi_axis_c"][i], a);
            }
        }
        for (what, v) in [
            ("trus_spacing", self.trus_spacing),
            ("mri_spacing", self.mri_spacing),
            ("mri_vertex_spacing", self.mri_vertex_spacing),
            ("urethra_radius", self.urethra_radius),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(what, v);
            }
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidSpec(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if self.trus_points_per_contour < 8 {
            return Err(Error::InvalidSpec(format!(
                "trus_points_per_contour must be >= 8, got {}",
                self.trus_points_per_contour
            )));
        }
        if !self.center.coords.iter().all(|c| c.is_finite()) || !self.urethra_curvature.is_finite() {
            return Err(Error::InvalidSpec("non-finite center or curvature".into()));
        }
        Ok(())
    }

    fn min_semi_axis(&self) -> f64 {
        self.semi_axes.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `x²/a² + y²/b² + z²/c² − 1` about the centre, in the MRI frame.
    pub fn algebraic_residual(&self, p: &Point3) -> f64 {
        let d = p - self.center;
        (0..3).map(|i| (d[i] / self.semi_axes[i]).powi(2)).sum::<f64>() - 1.0
    }

    fn quad(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vec3::from_iterator(self.semi_axes.iter().map(|a| 1.0 / (a * a))))
    }
}

/// Closed-form deformation used as an oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeformationSpec {
    Rigid(RigidTransform),
    /// `p + amplitude · exp(−|p−c|²/width²) · (p−c)/|p−c|`.
    GaussianBulge { center: Point3, amplitude: f64, width: f64 },
}

impl DeformationSpec {
    /// Bulge amplitude must stay below half the smallest semi-axis.
    pub fn validate(&self, spec: &PhantomSpec) -> Result<()> {
        if let DeformationSpec::GaussianBulge { amplitude, width, .. } = *self {
            if !(amplitude.abs() < spec.min_semi_axis() / 2.0) {
                return Err(Error::InvalidSpec(format!(
                    "bulge amplitude {amplitude} must be < {}",
                    spec.min_semi_axis() / 2.0
                )));
            }
            if !(width > 0.0) {
                return Err(Error::InvalidSpec(format!("bulge width must be > 0, got {width}")));
            }
        }
        Ok(())
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        match *self {
            DeformationSpec::Rigid(t) => t.apply(p),
            DeformationSpec::GaussianBulge {
                center,
                amplitude,
                width,
            } => {
                let d = p - center;
                let r = d.norm();
                if r == 0.0 {
                    return *p;
                }
                p + d * (amplitude * (-(r * r) / (width * width)).exp() / r)
            }
        }
    }
}

pub fn apply_known_deformation(cloud: &PointCloud, spec: &DeformationSpec) -> PointCloud {
    cloud.map_points(|p| spec.apply(p))
}

/// Random rigid motion: axis uniform on the sphere, angle uniform in
/// `[0, max_angle]` radians, translation uniform in the ball of radius
/// `max_translation` mm.
pub fn random_rigid<R: Rng + ?Sized>(rng: &mut R, max_angle: f64, max_translation: f64) -> RigidTransform {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = rng.random::<f64>() * max_angle;
    let dir: [f64; 3] = UnitSphere.sample(rng);
    let len = max_translation * rng.random::<f64>().cbrt();
    RigidTransform::from_axis_angle(Vec3::from(axis), angle, Vec3::from(dir) * len)
}

#[derive(Debug, Clone)]
pub struct PhantomScene {
    pub spec: PhantomSpec,
    /// Union of the three MRI stacks.
    pub mri_cloud: PointCloud,
    pub mri_volume: VolumeGrid,
    /// Transverse, sagittal, coronal.
    pub mri_stacks: [ContourStack; 3],
    pub trus_stack: ContourStack,
    pub trus_cloud: PointCloud,
    /// TRUS-frame volume with one z slice per TRUS plane.
    pub trus_volume: VolumeGrid,
    pub trus_landmarks: LandmarkSeries,
    /// Exact lumen centres on the ground-truth TRUS planes, MRI frame, one
    /// per TRUS landmark.
    pub mri_landmarks: Vec<Point3>,
    pub ground_truth: FusionTransform,
}

impl PhantomScene {
    pub fn mri_stack_refs(&self) -> [&ContourStack; 3] {
        [&self.mri_stacks[0], &self.mri_stacks[1], &self.mri_stacks[2]]
    }
}

/// Section of the ellipsoid by the plane `w = const` of `modality`, sampled
/// uniformly in angle, or `None` when the plane misses or grazes it.
fn mri_section(spec: &PhantomSpec, modality: Modality, w: f64, vertex_spacing: f64) -> Option<Vec<Point2>> {
    let (cu, cv, cw) = modality.flatten(&spec.center);
    let axis = |p: Point3| {
        let (u, v, w) = modality.flatten(&p);
        (u, v, w)
    };
    let (au, av, aw) = axis(Point3::from(Vec3::from(spec.semi_axes)));
    let t = (w - cw) / aw;
    let s2 = 1.0 - t * t;
    if s2 <= 1e-3 {
        return None;
    }
    let (ru, rv) = (au * s2.sqrt(), av * s2.sqrt());
    // Ramanujan's perimeter approximation is plenty for a vertex count.
    let h = ((ru - rv) / (ru + rv)).powi(2);
    let perimeter = std::f64::consts::PI * (ru + rv) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()));
    let n = ((perimeter / vertex_spacing).ceil() as usize).max(8);
    Some(
        (0..n)
            .map(|i| {
                let th = i as f64 * std::f64::consts::TAU / n as f64;
                Point2::new(cu + ru * th.cos(), cv + rv * th.sin())
            })
            .collect(),
    )
}

fn mri_stack(spec: &PhantomSpec, modality: Modality) -> Result<ContourStack> {
    let (_, _, cw) = modality.flatten(&spec.center);
    let (_, _, aw) = modality.flatten(&Point3::from(Vec3::from(spec.semi_axes)));
    let half = (aw / spec.mri_spacing).floor() as i32;
    let mut contours = Vec::new();
    for k in -half..=half {
        let w = cw + k as f64 * spec.mri_spacing;
        if let Some(pts) = mri_section(spec, modality, w, spec.mri_vertex_spacing) {
            contours.push(PlanarContour::new(contours.len() as i32, w, pts)?);
        }
    }
    if contours.len() < 2 {
        return Err(Error::InvalidSpec(format!(
            "mri_spacing {} leaves fewer than 2 {modality} slices",
            spec.mri_spacing
        )));
    }
    ContourStack::new(modality, spec.mri_spacing, contours)
}

/// Conic cut by the TRUS plane `z = zk` from the ellipsoid pulled back
/// through `g`: centre and the 2×2 matrix `L⁻ᵀ·√rhs` mapping the unit
/// circle onto it.
fn trus_section(spec: &PhantomSpec, g: &RigidTransform, zk: f64) -> Option<(Vector2<f64>, Matrix2<f64>)> {
    let r = g.rotation.to_rotation_matrix();
    let r = r.matrix();
    let d = spec.quad();
    let a = r.fixed_columns::<2>(0).into_owned();
    let e = r.column(2) * zk + g.translation - spec.center.coords;
    let m = a.transpose() * d * a;
    let b = a.transpose() * d * e;
    let k = (e.transpose() * d * e)[0];
    let m_inv = m.try_inverse()?;
    let center = -m_inv * b;
    let rhs = 1.0 - k + (b.transpose() * m_inv * b)[0];
    if rhs <= 1e-6 {
        return None;
    }
    let l = m.cholesky()?.l();
    let lt_inv = l.transpose().try_inverse()?;
    Some((center, lt_inv * rhs.sqrt()))
}

/// Extent of the pulled-back ellipsoid along the TRUS z axis: `(mid, half)`.
fn trus_z_extent(spec: &PhantomSpec, g: &RigidTransform) -> (f64, f64) {
    let rot = g.rotation.to_rotation_matrix();
    let col = rot.matrix().column(2).into_owned();
    let mid = col.dot(&(spec.center.coords - g.translation));
    let half = Vec3::from_iterator((0..3).map(|i| spec.semi_axes[i] * col[i])).norm();
    (mid, half)
}

/// Urethra axis point (MRI frame) at arc parameter `s` from the centre
/// along the TRUS z direction; bends towards TRUS +y at both ends.
fn urethra_axis(spec: &PhantomSpec, g: &RigidTransform, s: f64, half: f64) -> Point3 {
    let rot = g.rotation.to_rotation_matrix();
    let dir = rot.matrix().column(2).into_owned();
    let side = rot.matrix().column(1).into_owned();
    spec.center + dir * s + side * (spec.urethra_curvature * (s / half).powi(2))
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn normalized_radius(spec: &PhantomSpec, p: &Point3) -> f64 {
    (spec.algebraic_residual(p) + 1.0).max(0.0).sqrt()
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<PhantomScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma validated"));
    let g = spec.ground_truth;

    let mri_stacks = [
        mri_stack(spec, Modality::MriTransverse)?,
        mri_stack(spec, Modality::MriSagittal)?,
        mri_stack(spec, Modality::MriCoronal)?,
    ];
    let mri_cloud = PointCloud::concat(
        &mri_stacks
            .iter()
            .map(|s| cloud_from_stack(s, 1.0))
            .collect::<Result<Vec<_>>>()?,
    );

    let (mid, half) = trus_z_extent(spec, &g);
    let n_planes = ((1.8 * half / spec.trus_spacing).floor() as usize + 1).min(10);
    if n_planes < 2 {
        return Err(Error::InvalidSpec(format!(
            "trus_spacing {} leaves fewer than 2 TRUS slices",
            spec.trus_spacing
        )));
    }
    let z0 = mid - (n_planes - 1) as f64 * spec.trus_spacing / 2.0;
    let mut contours = Vec::with_capacity(n_planes);
    let mut trus_entries = Vec::with_capacity(n_planes);
    let mut mri_landmarks = Vec::with_capacity(n_planes);
    let inv = g.inverse();
    for k in 0..n_planes {
        let zk = z0 + k as f64 * spec.trus_spacing;
        let (c, shape) = trus_section(spec, &g, zk)
            .ok_or_else(|| Error::InvalidSpec(format!("TRUS plane {k} misses the ellipsoid")))?;
        let n = spec.trus_points_per_contour;
        let exact: Vec<Point2> = (0..n)
            .map(|i| {
                let th = i as f64 * std::f64::consts::TAU / n as f64;
                let w = c + shape * Vector2::new(th.cos(), th.sin());
                Point2::new(w.x, w.y)
            })
            .collect();
        let contour = match &noise {
            None => PlanarContour::new(k as i32, zk, exact)?,
            Some(dist) => {
                let mut attempt = 0;
                loop {
                    let noisy = exact
                        .iter()
                        .map(|p| Point2::new(p.x + dist.sample(&mut rng), p.y + dist.sample(&mut rng)))
                        .collect();
                    match PlanarContour::new(k as i32, zk, noisy) {
                        Ok(c) => break c,
                        Err(e) if attempt >= 100 => return Err(e),
                        Err(_) => attempt += 1,
                    }
                }
            }
        };
        contours.push(contour);

        let axis = urethra_axis(spec, &g, zk - mid, half);
        let local = inv.apply(&axis);
        let (nx, ny) = match &noise {
            Some(dist) => (dist.sample(&mut rng), dist.sample(&mut rng)),
            None => (0.0, 0.0),
        };
        trus_entries.push(LandmarkEntry {
            slice_index: k as i32,
            z: zk,
            center: Point2::new(local.x + nx, local.y + ny),
        });
        mri_landmarks.push(axis);
    }
    let trus_stack = ContourStack::new(Modality::Trus, spec.trus_spacing, contours)?;
    let trus_cloud = cloud_from_stack(&trus_stack, 1.0)?;
    let trus_landmarks = LandmarkSeries::new(Modality::Trus, trus_entries)?;

    let urethra_dist = |p: &Point3| {
        let s = (g.rotation * Vec3::z()).dot(&(p - spec.center));
        (p - urethra_axis(spec, &g, s, half)).norm()
    };

    let margin = 8.0;
    let [a, b, cz] = spec.semi_axes;
    let extent = Vec3::new(a, b, cz) + Vec3::repeat(margin);
    let mri_spacing = [1.0, 1.0, spec.mri_spacing];
    let dims = [0, 1, 2].map(|i| (2.0 * extent[i] / mri_spacing[i]).floor() as usize + 1);
    let mri_origin = spec.center - extent;
    let mri_volume = VolumeGrid::from_fn(dims, mri_spacing, mri_origin, |p| {
        let inside = 1.0 - smoothstep(0.95, 1.05, normalized_radius(spec, &p));
        let tube = 1.0 - smoothstep(spec.urethra_radius - 0.5, spec.urethra_radius + 0.5, urethra_dist(&p));
        (40.0 + 160.0 * inside - 100.0 * inside * tube) as f32
    })?;

    let (mut lo, mut hi) = trus_stack.contours()[0].bounds();
    for c in trus_stack.contours() {
        let (l, h) = c.bounds();
        lo = lo.inf(&l);
        hi = hi.sup(&h);
    }
    let px = 0.5;
    let trus_origin = Point3::new((lo.x - 10.0).floor(), (lo.y - 10.0).floor(), z0);
    let trus_dims = [
        ((hi.x + 10.0 - trus_origin.x) / px).ceil() as usize + 1,
        ((hi.y + 10.0 - trus_origin.y) / px).ceil() as usize + 1,
        n_planes,
    ];
    let trus_volume = VolumeGrid::from_fn(trus_dims, [px, px, spec.trus_spacing], trus_origin, |p| {
        let q = g.apply(&p);
        let r = normalized_radius(spec, &q);
        let wall = (-((r - 1.0) / 0.04).powi(2)).exp();
        let inside = 1.0 - smoothstep(0.97, 1.03, r);
        let tube = 1.0 - smoothstep(spec.urethra_radius - 0.5, spec.urethra_radius + 0.5, urethra_dist(&q));
        (60.0 + 50.0 * inside + 140.0 * wall - 40.0 * inside * tube) as f32
    })?;

    Ok(PhantomScene {
        spec: spec.clone(),
        mri_cloud,
        mri_volume,
        mri_stacks,
        trus_stack,
        trus_cloud,
        trus_volume,
        trus_landmarks,
        mri_landmarks,
        ground_truth: FusionTransform::rigid(g),
    })
}
