use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion};

use super::{parse_finite, parse_num};
use crate::distance_map::{DEFAULT_CELL_SIZE, DEFAULT_MARGIN};
use crate::elastic::ElasticConfig;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{Point3, RigidTransform, Vec3, DEFAULT_SIGMA};
use crate::phantom::PhantomSpec;
use crate::resample::DEFAULT_PROJECTION_TOLERANCE;
use crate::rigid::RegistrationConfig;
use crate::volumetry::{DoseKernelConfig, VolumeFormula};

/// `key = value` lines; blank lines and `#` comments are ignored. Typed
/// getters consume keys so that leftovers can be reported as unknown.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    map: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(n, format!("expected `key = value`, found `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::parse(n, "empty key"));
            }
            if map.insert(k.to_string(), (n, v.to_string())).is_some() {
                return Err(Error::parse(n, format!("duplicate key `{k}`")));
            }
        }
        Ok(Self { map })
    }

    pub fn insert(&mut self, key: &str, value: &str) {
        self.map.insert(key.to_string(), (0, value.to_string()));
    }

    pub fn take_str(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some((n, v)) => parse_num(n, &v).map(Some),
        }
    }

    pub fn take_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some((n, v)) => parse_finite(n, &v).map(Some),
        }
    }

    /// Comma-separated floats.
    pub fn take_f64s<const N: usize>(&mut self, key: &str) -> Result<Option<[f64; N]>> {
        let Some((n, v)) = self.map.remove(key) else {
            return Ok(None);
        };
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        if parts.len() != N {
            return Err(Error::parse(n, format!("`{key}` expects {N} comma-separated values")));
        }
        let mut out = [0.0; N];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = parse_finite(n, p)?;
        }
        Ok(Some(out))
    }

    /// Removes and returns every key starting with `prefix`, prefix
    /// stripped.
    pub fn split_prefix(&mut self, prefix: &str) -> KeyValues {
        let keys: Vec<String> = self.map.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
        let mut out = KeyValues::default();
        for k in keys {
            let v = self.map.remove(&k).unwrap();
            out.map.insert(k[prefix.len()..].to_string(), v);
        }
        out
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.map.into_iter().min_by_key(|(_, (n, _))| *n) {
            None => Ok(()),
            Some((k, (n, _))) => Err(Error::parse(n, format!("unknown key `{k}`"))),
        }
    }
}

/// Every tunable of a registration/fusion/dosimetry run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub registration: RegistrationConfig,
    pub elastic: ElasticConfig,
    /// σ assigned to every TRUS point (mm).
    pub sigma: f64,
    pub cell_size: f64,
    pub margin: f64,
    pub volume_formula: VolumeFormula,
    pub kernel: DoseKernelConfig,
    pub projection_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            registration: RegistrationConfig::default(),
            elastic: ElasticConfig::default(),
            sigma: DEFAULT_SIGMA,
            cell_size: DEFAULT_CELL_SIZE,
            margin: DEFAULT_MARGIN,
            volume_formula: VolumeFormula::Frustum,
            kernel: DoseKernelConfig::default(),
            projection_tolerance: DEFAULT_PROJECTION_TOLERANCE,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let mut c = Self::default();
        c.apply(&mut kv)?;
        kv.finish()?;
        Ok(c)
    }

    /// Overrides fields present in `kv`, consuming their keys.
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        let r = &mut self.registration;
        if let Some(v) = kv.take("max_iterations")? {
            r.max_iterations = v;
        }
        macro_rules! float {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.take_f64($key)? {
                    $field = v;
                }
            };
        }
        float!("cost_tolerance", r.cost_tolerance);
        float!("param_tolerance", r.param_tolerance);
        float!("lm_lambda_init", r.lm_lambda_init);
        float!("lm_lambda_factor", r.lm_lambda_factor);
        float!("restart_angle_deg", r.restart_angle_deg);
        if let Some(v) = kv.take("rng_seed")? {
            r.rng_seed = v;
        }
        if let Some((n, v)) = kv.take_str("exec") {
            r.exec = match v.as_str() {
                "parallel" => Exec::Parallel,
                "sequential" => Exec::Sequential,
                _ => return Err(Error::parse(n, format!("exec must be parallel|sequential, got `{v}`"))),
            };
        }
        float!("regularization", self.elastic.regularization);
        if let Some(v) = kv.take("max_depth")? {
            self.elastic.max_depth = v;
        }
        float!("refine_threshold", self.elastic.refine_threshold);
        float!("padding", self.elastic.padding);
        float!("sigma", self.sigma);
        float!("cell_size", self.cell_size);
        float!("margin", self.margin);
        float!("attenuation_per_cm", self.kernel.attenuation_per_cm);
        float!("min_radius_cm", self.kernel.min_radius_cm);
        float!("projection_tolerance", self.projection_tolerance);
        if let Some((n, v)) = kv.take_str("volume_formula") {
            self.volume_formula = match v.as_str() {
                "frustum" => VolumeFormula::Frustum,
                "simple_average" => VolumeFormula::SimpleAverage,
                _ => return Err(Error::parse(n, format!("volume_formula must be frustum|simple_average, got `{v}`"))),
            };
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.registration.validate()?;
        self.elastic.validate()?;
        for (k, v) in [
            ("sigma", self.sigma),
            ("cell_size", self.cell_size),
            ("min_radius_cm", self.kernel.min_radius_cm),
            ("projection_tolerance", self.projection_tolerance),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{k} must be > 0, got {v}")));
            }
        }
        if !(self.margin >= 0.0) || !(self.kernel.attenuation_per_cm >= 0.0) {
            return Err(Error::InvalidConfig("margin and attenuation must be >= 0".into()));
        }
        Ok(())
    }
}

/// Phantom spec from `key = value` text; missing keys keep their defaults.
///
/// Keys: `semi_axes`, `center`, `translation` (comma-separated triples),
/// `rotation_axis` (triple) with `rotation_deg`, or `rotation_quaternion`
/// (`w,x,y,z`, kept bit-exact when unit length), `urethra_radius`,
/// `trus_spacing`, `mri_spacing`, `noise_sigma`, `seed`,
/// `mri_vertex_spacing`, `trus_points_per_contour`, `urethra_curvature`.
pub fn parse_phantom_spec(text: &str) -> Result<PhantomSpec> {
    let mut kv = KeyValues::parse(text)?;
    let mut s = PhantomSpec::default();
    if let Some(v) = kv.take_f64s::<3>("semi_axes")? {
        s.semi_axes = v;
    }
    if let Some([x, y, z]) = kv.take_f64s::<3>("center")? {
        s.center = Point3::new(x, y, z);
    }
    let t = kv.take_f64s::<3>("translation")?.map(Vec3::from).unwrap_or(s.ground_truth.translation);
    let axis = kv.take_f64s::<3>("rotation_axis")?.map(Vec3::from);
    let angle = kv.take_f64("rotation_deg")?.map(f64::to_radians);
    let rotation = match (kv.take_f64s::<4>("rotation_quaternion")?, axis, angle) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            return Err(Error::InvalidSpec("rotation_quaternion excludes rotation_axis and rotation_deg".into()))
        }
        (Some([w, x, y, z]), None, None) => {
            let q = Quaternion::new(w, x, y, z);
            if (q.norm() - 1.0).abs() < 1e-9 {
                UnitQuaternion::new_unchecked(q)
            } else if q.norm() > 1e-12 {
                UnitQuaternion::from_quaternion(q)
            } else {
                return Err(Error::InvalidSpec("rotation_quaternion must be non-zero".into()));
            }
        }
        (None, axis, angle) => {
            let g = s.ground_truth.rotation;
            let axis = axis.unwrap_or_else(|| g.axis().map_or(Vec3::z(), |a| a.into_inner()));
            let angle = angle.unwrap_or_else(|| g.angle());
            if angle == 0.0 {
                UnitQuaternion::identity()
            } else if axis.norm() == 0.0 {
                return Err(Error::InvalidSpec("rotation_axis must be non-zero".into()));
            } else {
                RigidTransform::from_axis_angle(axis, angle, Vec3::zeros()).rotation
            }
        }
    };
    s.ground_truth = RigidTransform::new(rotation, t);
    macro_rules! float {
        ($key:literal, $field:expr) => {
            if let Some(v) = kv.take_f64($key)? {
                $field = v;
            }
        };
    }
    float!("urethra_radius", s.urethra_radius);
    float!("trus_spacing", s.trus_spacing);
    float!("mri_spacing", s.mri_spacing);
    float!("noise_sigma", s.noise_sigma);
    float!("mri_vertex_spacing", s.mri_vertex_spacing);
    float!("urethra_curvature", s.urethra_curvature);
    if let Some(v) = kv.take("seed")? {
        s.rng_seed = v;
    }
    if let Some(v) = kv.take("trus_points_per_contour")? {
        s.trus_points_per_contour = v;
    }
    kv.finish()?;
    s.validate()?;
    Ok(s)
}

/// Canonical text form of a phantom spec, readable by [`parse_phantom_spec`].
pub fn format_phantom_spec(s: &PhantomSpec) -> String {
    let mut out = String::new();
    let triple = |v: &[f64]| format!("{},{},{}", v[0], v[1], v[2]);
    let g = s.ground_truth;
    let q = g.rotation.quaternion();
    let _ = writeln!(out, "semi_axes = {}", triple(&s.semi_axes));
    let _ = writeln!(out, "center = {}", triple(s.center.coords.as_slice()));
    let _ = writeln!(out, "rotation_quaternion = {},{},{},{}", q.w, q.i, q.j, q.k);
    let _ = writeln!(out, "translation = {}", triple(g.translation.as_slice()));
    let _ = writeln!(out, "urethra_radius = {}", s.urethra_radius);
    let _ = writeln!(out, "trus_spacing = {}", s.trus_spacing);
    let _ = writeln!(out, "mri_spacing = {}", s.mri_spacing);
    let _ = writeln!(out, "noise_sigma = {}", s.noise_sigma);
    let _ = writeln!(out, "seed = {}", s.rng_seed);
    let _ = writeln!(out, "mri_vertex_spacing = {}", s.mri_vertex_spacing);
    let _ = writeln!(out, "trus_points_per_contour = {}", s.trus_points_per_contour);
    let _ = writeln!(out, "urethra_curvature = {}", s.urethra_curvature);
    out
}
