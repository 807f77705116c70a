//! Six-parameter rigid registration of a sparse cloud onto a distance map.
//!
//! The energy is `Σ dist(T(Mᵢ))² / σᵢ²`, minimized by Levenberg-Marquardt
//! from a centroid pre-registration. Rotation increments are small 3-vectors
//! applied about the current centroid of the transformed source and composed
//! onto the quaternion.
//!
//! Point-to-set energies have shallow local minima on nearly symmetric
//! shapes, so besides the plain pre-registration the optimizer is also
//! started from fourteen copies of it rotated by `restart_angle_deg` about
//! the coordinate half-axes and cube diagonals through the target centroid. The run with the lowest
//! final energy wins; ties keep the earliest start.

use nalgebra::{DVector, Matrix6, UnitQuaternion, Vector6};

use crate::distance_map::DistanceMap;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{Point3, PointCloud, RigidTransform, Vec3};
use crate::lm::{self, LeastSquares, LmReport, LmSettings, NormalEquations};
use crate::transform::FusionTransform;

/// Minimum number of source points accepted by the registration routines.
pub const MIN_SOURCE_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the energy by less than this
    /// relative amount.
    pub cost_tolerance: f64,
    /// Stop when the step norm falls below this.
    pub param_tolerance: f64,
    pub lm_lambda_init: f64,
    pub lm_lambda_factor: f64,
    pub rng_seed: u64,
    /// Rotation of the extra starting poses; 0 disables them.
    pub restart_angle_deg: f64,
    pub exec: Exec,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            cost_tolerance: 1e-8,
            param_tolerance: 1e-6,
            lm_lambda_init: 1e-3,
            lm_lambda_factor: 10.0,
            rng_seed: 0,
            restart_angle_deg: 10.0,
            exec: Exec::default(),
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cost_tolerance", self.cost_tolerance),
            ("param_tolerance", self.param_tolerance),
            ("lm_lambda_init", self.lm_lambda_init),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(0.0..=90.0).contains(&self.restart_angle_deg) {
            return Err(Error::InvalidConfig(format!(
                "restart_angle_deg must lie in [0, 90], got {}",
                self.restart_angle_deg
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be > 0".into()));
        }
        if !(self.lm_lambda_factor > 1.0) || !self.lm_lambda_factor.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lm_lambda_factor must be > 1, got {}",
                self.lm_lambda_factor
            )));
        }
        Ok(())
    }

    pub(crate) fn lm_settings(&self) -> LmSettings {
        LmSettings {
            max_iterations: self.max_iterations,
            cost_tolerance: self.cost_tolerance,
            param_tolerance: self.param_tolerance,
            lambda_init: self.lm_lambda_init,
            lambda_factor: self.lm_lambda_factor,
        }
    }
}

/// Summary of per-point distances. `std` is the population standard
/// deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub std: f64,
    pub per_point: Vec<f64>,
}

impl ResidualStats {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("residual list"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            mean: mean.clamp(min, max),
            min,
            max,
            std: var.sqrt(),
            per_point: values,
        })
    }

    pub fn rms(&self) -> f64 {
        (self.per_point.iter().map(|v| v * v).sum::<f64>() / self.per_point.len() as f64).sqrt()
    }
}

/// Identity rotation, translation taking the source centroid onto the
/// target centroid.
pub fn preregister(source: &PointCloud, target: &PointCloud) -> Result<RigidTransform> {
    let cs = source.centroid().ok_or(Error::EmptyInput("source cloud"))?;
    let ct = target.centroid().ok_or(Error::EmptyInput("target cloud"))?;
    Ok(RigidTransform::from_translation(ct - cs))
}

/// Weighted squared point-to-set energy of `source` under `t`.
pub fn energy(t: &FusionTransform, source: &PointCloud, map: &DistanceMap) -> f64 {
    energy_with(t, source, map, Exec::default())
}

pub fn energy_with(t: &FusionTransform, source: &PointCloud, map: &DistanceMap, exec: Exec) -> f64 {
    let terms = exec.map_range(source.len(), |i| {
        let d = map.query_distance(&t.apply(&source.points()[i]));
        let s = source.sigmas()[i];
        d * d / (s * s)
    });
    terms.iter().sum()
}

/// Per-point residual distances of `source` under `t`.
pub fn residual_distances(t: &FusionTransform, source: &PointCloud, map: &DistanceMap, exec: Exec) -> Vec<f64> {
    exec.map_slice(source.points(), |p| map.query_distance(&t.apply(p)))
}

#[derive(Debug, Clone)]
pub struct RigidOutcome {
    pub transform: RigidTransform,
    pub stats: ResidualStats,
    pub report: LmReport,
}

struct RigidProblem<'a> {
    source: &'a PointCloud,
    map: &'a DistanceMap,
    exec: Exec,
}

impl RigidProblem<'_> {
    fn pivot(&self, t: &RigidTransform) -> Point3 {
        let sum = self
            .source
            .points()
            .iter()
            .fold(Vec3::zeros(), |acc, p| acc + t.apply(p).coords);
        Point3::from(sum / self.source.len() as f64)
    }
}

impl LeastSquares for RigidProblem<'_> {
    type State = RigidTransform;

    fn num_params(&self) -> usize {
        6
    }

    fn energy(&self, t: &RigidTransform) -> f64 {
        energy_with(&FusionTransform::rigid(*t), self.source, self.map, self.exec)
    }

    fn linearize(&self, t: &RigidTransform) -> NormalEquations {
        let c = self.pivot(t);
        let rows = self.exec.map_range(self.source.len(), |i| {
            let q = t.apply(&self.source.points()[i]);
            let s = self.map.query(&q);
            let inv_sigma = 1.0 / self.source.sigmas()[i];
            let arm = q - c;
            let jr = arm.cross(&s.gradient) * inv_sigma;
            let jt = s.gradient * inv_sigma;
            (
                s.distance * inv_sigma,
                Vector6::new(jr.x, jr.y, jr.z, jt.x, jt.y, jt.z),
            )
        });
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        let mut energy = 0.0;
        for (r, j) in rows {
            jtj += j * j.transpose();
            jtr += j * r;
            energy += r * r;
        }
        NormalEquations {
            jtj: nalgebra::DMatrix::from_iterator(6, 6, jtj.iter().copied()),
            jtr: DVector::from_iterator(6, jtr.iter().copied()),
            energy,
        }
    }

    fn retract(&self, t: &RigidTransform, delta: &DVector<f64>) -> RigidTransform {
        let c = self.pivot(t);
        let rot = UnitQuaternion::from_scaled_axis(Vec3::new(delta[0], delta[1], delta[2]));
        let shift = Vec3::new(delta[3], delta[4], delta[5]);
        // x ↦ R(x − c) + c + shift, composed after t
        let step = RigidTransform::new(rot, c.coords + shift - rot * c.coords);
        let mut out = step.compose(t);
        out.rotation = UnitQuaternion::new_normalize(out.rotation.into_inner());
        out
    }
}

/// Rigid registration of `source` onto the target behind `map`, starting
/// from the centroid pre-registration and its rotated restarts.
pub fn register_rigid(source: &PointCloud, map: &DistanceMap, cfg: &RegistrationConfig) -> Result<RigidOutcome> {
    let mut best = register_rigid_from(source, map, preregister(source, map.target())?, cfg)?;
    for start in restart_poses(source, map.target(), cfg.restart_angle_deg)?.into_iter().skip(1) {
        let run = register_rigid_from(source, map, start, cfg)?;
        if run.report.final_energy() < best.report.final_energy() {
            best = run;
        }
    }
    Ok(best)
}

/// The pre-registration followed by its copies rotated by `angle_deg` about
/// the six coordinate half-axes and the eight cube diagonals through the
/// target centroid. Just the
/// pre-registration when `angle_deg` is 0.
pub fn restart_poses(source: &PointCloud, target: &PointCloud, angle_deg: f64) -> Result<Vec<RigidTransform>> {
    let init = preregister(source, target)?;
    let mut out = vec![init];
    if angle_deg == 0.0 {
        return Ok(out);
    }
    let c = target.centroid().ok_or(Error::EmptyInput("target cloud"))?.coords;
    let mut axes = vec![Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::z(), -Vec3::z()];
    for corner in 0..8 {
        let s = |bit: usize| if (corner >> bit) & 1 == 1 { -1.0 } else { 1.0 };
        axes.push(Vec3::new(s(0), s(1), s(2)).normalize());
    }
    for axis in axes {
        let r = UnitQuaternion::from_scaled_axis(axis * angle_deg.to_radians());
        out.push(RigidTransform::new(r, c - r * c).compose(&init));
    }
    Ok(out)
}

/// Same as [`register_rigid`] with an explicit starting transform.
pub fn register_rigid_from(
    source: &PointCloud,
    map: &DistanceMap,
    init: RigidTransform,
    cfg: &RegistrationConfig,
) -> Result<RigidOutcome> {
    cfg.validate()?;
    if source.len() < MIN_SOURCE_POINTS {
        return Err(Error::InsufficientData {
            needed: MIN_SOURCE_POINTS,
            got: source.len(),
        });
    }
    let problem = RigidProblem {
        source,
        map,
        exec: cfg.exec,
    };
    let (transform, report) = lm::minimize(&problem, init, &cfg.lm_settings())?;
    let per_point = residual_distances(&FusionTransform::rigid(transform), source, map, cfg.exec);
    if per_point.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("residual distance".into()));
    }
    Ok(RigidOutcome {
        transform,
        stats: ResidualStats::from_values(per_point)?,
        report,
    })
}
