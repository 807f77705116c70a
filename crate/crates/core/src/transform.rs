use crate::geometry::{Point3, RigidTransform};
use crate::octree::OctreeSplineFFD;

/// Maximum fixed-point iterations for inverting the deformation.
pub const INVERSE_MAX_ITERATIONS: usize = 20;
/// Convergence tolerance of the inversion, in mm.
pub const INVERSE_TOLERANCE: f64 = 0.01;

/// TRUS→MRI mapping: rigid motion, then an optional free-form displacement
/// expressed in the MRI frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FusionTransform {
    pub rigid: RigidTransform,
    pub ffd: Option<OctreeSplineFFD>,
}

impl FusionTransform {
    pub fn rigid(rigid: RigidTransform) -> Self {
        Self { rigid, ffd: None }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn with_ffd(rigid: RigidTransform, ffd: OctreeSplineFFD) -> Self {
        Self {
            rigid,
            ffd: Some(ffd),
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        let x = self.rigid.apply(p);
        match &self.ffd {
            Some(ffd) => x + ffd.displacement(&x),
            None => x,
        }
    }

    /// MRI→TRUS. Exact for the rigid part; the deformation is inverted by
    /// fixed-point iteration in the MRI frame starting from the rigid inverse.
    pub fn inverse_apply(&self, q: &Point3) -> Point3 {
        let inv = self.rigid.inverse();
        let Some(ffd) = &self.ffd else {
            return inv.apply(q);
        };
        let mut x = *q;
        for _ in 0..INVERSE_MAX_ITERATIONS {
            let residual = x + ffd.displacement(&x) - q;
            x -= residual;
            if residual.norm() <= INVERSE_TOLERANCE {
                break;
            }
        }
        inv.apply(&x)
    }
}

pub fn apply_transform(f: &FusionTransform, p: &Point3) -> Point3 {
    f.apply(p)
}
