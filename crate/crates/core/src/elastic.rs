//! Coarse-to-fine elastic registration with a regularized octree-spline
//! displacement on top of a fixed rigid initialization.
//!
//! Per level: optimize the free corner displacements by Levenberg-Marquardt,
//! then split the leaves holding points whose residual still exceeds the
//! refinement threshold, and repeat until `max_depth` is reached or nothing
//! is left to refine.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::distance_map::DistanceMap;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{Point3, PointCloud, RigidTransform};
use crate::lm::{self, LeastSquares, LmReport, NormalEquations};
use crate::octree::{NodeKey, OctreeSplineFFD};
use crate::rigid::{RegistrationConfig, ResidualStats, MIN_SOURCE_POINTS};
use crate::transform::FusionTransform;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticConfig {
    /// Weight of the membrane term (squared corner differences along edges).
    pub regularization: f64,
    pub max_depth: u8,
    /// Residual (mm) above which a point's leaf is split.
    pub refine_threshold: f64,
    /// Extra margin around the target bounds for the root cube, in mm.
    pub padding: f64,
}

impl Default for ElasticConfig {
    fn default() -> Self {
        Self {
            regularization: 0.1,
            max_depth: 3,
            refine_threshold: 1.5,
            padding: 10.0,
        }
    }
}

impl ElasticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.regularization >= 0.0) || !self.regularization.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "regularization must be >= 0, got {}",
                self.regularization
            )));
        }
        if !(self.refine_threshold > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "refine_threshold must be > 0, got {}",
                self.refine_threshold
            )));
        }
        if !(self.padding >= 0.0) {
            return Err(Error::InvalidConfig(format!("padding must be >= 0, got {}", self.padding)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ElasticOutcome {
    pub transform: FusionTransform,
    pub stats: ResidualStats,
    /// One report per optimized level.
    pub reports: Vec<LmReport>,
    /// Data term `Σ dᵢ²/σᵢ²` at the solution.
    pub data_energy: f64,
    /// Membrane term (unweighted) at the solution.
    pub membrane_energy: f64,
}

type Sparse = Vec<(usize, f64)>;

struct ElasticProblem<'a> {
    anchors: Vec<Point3>,
    inv_sigma: Vec<f64>,
    point_weights: Vec<Sparse>,
    edge_weights: Vec<Sparse>,
    regularization: f64,
    n_free: usize,
    map: &'a DistanceMap,
    exec: Exec,
}

impl<'a> ElasticProblem<'a> {
    fn new(ffd: &OctreeSplineFFD, anchors: Vec<Point3>, source: &PointCloud, map: &'a DistanceMap, exec: Exec) -> Self {
        let index: HashMap<NodeKey, usize> = ffd.free_nodes().enumerate().map(|(i, k)| (*k, i)).collect();
        let to_sparse = |w: Vec<(NodeKey, f64)>| -> Sparse { w.into_iter().map(|(k, v)| (index[&k], v)).collect() };
        let point_weights = exec.map_slice(&anchors, |x| to_sparse(ffd.weights_at(x)));
        let edge_weights = ffd
            .edges()
            .into_iter()
            .map(|(a, b)| {
                let mut w = Vec::new();
                ffd.expand_into(&a, 1.0, &mut w);
                ffd.expand_into(&b, -1.0, &mut w);
                to_sparse(w)
            })
            .collect();
        Self {
            anchors,
            inv_sigma: source.sigmas().iter().map(|s| 1.0 / s).collect(),
            point_weights,
            edge_weights,
            regularization: ffd.regularization(),
            n_free: ffd.free_node_count(),
            map,
            exec,
        }
    }

    fn displaced(&self, i: usize, params: &[f64]) -> Point3 {
        let mut p = self.anchors[i];
        for &(k, w) in &self.point_weights[i] {
            p.x += w * params[3 * k];
            p.y += w * params[3 * k + 1];
            p.z += w * params[3 * k + 2];
        }
        p
    }

    fn data_energy(&self, params: &[f64]) -> f64 {
        let terms = self.exec.map_range(self.anchors.len(), |i| {
            let d = self.map.query_distance(&self.displaced(i, params)) * self.inv_sigma[i];
            d * d
        });
        terms.iter().sum()
    }

    fn membrane(&self, params: &[f64]) -> f64 {
        self.edge_weights
            .iter()
            .map(|w| {
                (0..3)
                    .map(|c| {
                        let v: f64 = w.iter().map(|&(k, wk)| wk * params[3 * k + c]).sum();
                        v * v
                    })
                    .sum::<f64>()
            })
            .sum()
    }
}

impl LeastSquares for ElasticProblem<'_> {
    type State = Vec<f64>;

    fn num_params(&self) -> usize {
        3 * self.n_free
    }

    fn energy(&self, params: &Vec<f64>) -> f64 {
        self.data_energy(params) + self.regularization * self.membrane(params)
    }

    fn linearize(&self, params: &Vec<f64>) -> NormalEquations {
        let n = self.num_params();
        let mut jtj = DMatrix::zeros(n, n);
        let mut jtr = DVector::zeros(n);
        let mut energy = 0.0;

        let rows = self.exec.map_range(self.anchors.len(), |i| {
            let s = self.map.query(&self.displaced(i, params));
            (s.distance * self.inv_sigma[i], s.gradient * self.inv_sigma[i])
        });
        for (i, (r, g)) in rows.into_iter().enumerate() {
            energy += r * r;
            let w = &self.point_weights[i];
            for &(ka, wa) in w {
                for ca in 0..3 {
                    let ja = wa * g[ca];
                    if ja == 0.0 {
                        continue;
                    }
                    let row = 3 * ka + ca;
                    jtr[row] += ja * r;
                    for &(kb, wb) in w {
                        for cb in 0..3 {
                            jtj[(row, 3 * kb + cb)] += ja * wb * g[cb];
                        }
                    }
                }
            }
        }

        let lam = self.regularization;
        if lam > 0.0 {
            for w in &self.edge_weights {
                for c in 0..3 {
                    let v: f64 = w.iter().map(|&(k, wk)| wk * params[3 * k + c]).sum();
                    energy += lam * v * v;
                    for &(ka, wa) in w {
                        jtr[3 * ka + c] += lam * wa * v;
                        for &(kb, wb) in w {
                            jtj[(3 * ka + c, 3 * kb + c)] += lam * wa * wb;
                        }
                    }
                }
            }
        }
        NormalEquations { jtj, jtr, energy }
    }

    fn retract(&self, params: &Vec<f64>, delta: &DVector<f64>) -> Vec<f64> {
        params.iter().zip(delta.iter()).map(|(p, d)| p + d).collect()
    }
}

/// Split the leaves holding source points whose current residual exceeds
/// `threshold`; the field is preserved.
pub fn refine_octree(
    ffd: &OctreeSplineFFD,
    source: &PointCloud,
    rigid: &RigidTransform,
    map: &DistanceMap,
    threshold: f64,
) -> OctreeSplineFFD {
    let anchors: Vec<Point3> = source.points().iter().map(|p| rigid.apply(p)).collect();
    let residuals: Vec<f64> = anchors
        .iter()
        .map(|x| map.query_distance(&(x + ffd.displacement(x))))
        .collect();
    ffd.refine(&anchors, &residuals, threshold)
}

pub fn register_elastic(
    source: &PointCloud,
    map: &DistanceMap,
    init: RigidTransform,
    cfg: &RegistrationConfig,
    ecfg: &ElasticConfig,
) -> Result<ElasticOutcome> {
    cfg.validate()?;
    ecfg.validate()?;
    if source.len() < MIN_SOURCE_POINTS {
        return Err(Error::InsufficientData {
            needed: MIN_SOURCE_POINTS,
            got: source.len(),
        });
    }
    let (lo, hi) = map.target().bounds().ok_or(Error::EmptyInput("target cloud"))?;
    let padding = ecfg.padding + 0.1 * (hi - lo).max();
    let mut ffd = OctreeSplineFFD::enclosing(lo, hi, padding, ecfg.max_depth, ecfg.regularization)?;
    let anchors: Vec<Point3> = source.points().iter().map(|p| init.apply(p)).collect();
    let settings = cfg.lm_settings();
    let mut reports = Vec::new();

    loop {
        let problem = ElasticProblem::new(&ffd, anchors.clone(), source, map, cfg.exec);
        let (params, report) = lm::minimize(&problem, ffd.free_values(), &settings)?;
        ffd.set_free_values(&params);
        reports.push(report);
        if ffd.deepest_level() >= ecfg.max_depth {
            break;
        }
        let residuals = cfg
            .exec
            .map_slice(&anchors, |x| map.query_distance(&(x + ffd.displacement(x))));
        let refined = ffd.refine(&anchors, &residuals, ecfg.refine_threshold);
        if refined.leaf_count() == ffd.leaf_count() {
            break;
        }
        ffd = refined;
    }

    let membrane_energy = ffd.membrane_energy();
    let transform = FusionTransform::with_ffd(init, ffd);
    let per_point: Vec<f64> = cfg
        .exec
        .map_slice(source.points(), |p| map.query_distance(&transform.apply(p)));
    if per_point.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("residual distance".into()));
    }
    let data_energy = per_point
        .iter()
        .zip(source.sigmas())
        .map(|(d, s)| (d / s).powi(2))
        .sum();
    Ok(ElasticOutcome {
        transform,
        stats: ResidualStats::from_values(per_point)?,
        reports,
        data_energy,
        membrane_energy,
    })
}
