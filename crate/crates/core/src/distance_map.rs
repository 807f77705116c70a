//! Precomputed unsigned distance-to-point-set field.
//!
//! Grid nodes store the exact nearest-neighbour distance to the target cloud
//! and the unit direction from that nearest point to the node. Queries far
//! from the target interpolate trilinearly; queries close to it or outside
//! the grid use an exact nearest-neighbour search.

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{Point3, PointCloud, Vec3};

pub const DEFAULT_CELL_SIZE: f64 = 1.0;
pub const DEFAULT_MARGIN: f64 = 15.0;

/// Queries whose interpolated distance is below this many cells are answered
/// by an exact nearest-neighbour search; trilinear interpolation of a
/// point-set distance is least accurate close to the points.
pub const EXACT_BAND_CELLS: f64 = 3.0;

type Tree = ImmutableKdTree<f64, u32, 3, 32>;

/// Result of a distance query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceSample {
    pub distance: f64,
    /// Unit vector pointing away from the nearest target point; zero on the
    /// target itself.
    pub gradient: Vec3,
}

pub struct DistanceMap {
    lo: Point3,
    dims: [usize; 3],
    cell_size: f64,
    distances: Vec<f64>,
    gradients: Vec<Vec3>,
    target: PointCloud,
    tree: Tree,
}

impl std::fmt::Debug for DistanceMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DistanceMap")
            .field("lo", &self.lo)
            .field("dims", &self.dims)
            .field("cell_size", &self.cell_size)
            .field("target_points", &self.target.len())
            .finish()
    }
}

/// Exact minimum Euclidean distance from `p` to any point of `target`.
pub fn brute_force_distance(target: &PointCloud, p: &Point3) -> Result<f64> {
    target
        .points()
        .iter()
        .map(|q| (p - q).norm())
        .min_by(f64::total_cmp)
        .ok_or(Error::EmptyInput("target cloud"))
}

pub fn build_distance_map(target: &PointCloud, cell_size: f64, margin: f64) -> Result<DistanceMap> {
    DistanceMap::build(target, cell_size, margin, Exec::default())
}

impl DistanceMap {
    pub fn build(target: &PointCloud, cell_size: f64, margin: f64, exec: Exec) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::InvalidConfig(format!("cell_size must be > 0, got {cell_size}")));
        }
        if !(margin >= 0.0) || !margin.is_finite() {
            return Err(Error::InvalidConfig(format!("margin must be >= 0, got {margin}")));
        }
        let (min, max) = target.bounds().ok_or(Error::EmptyInput("target cloud"))?;
        let lo = min - Vec3::repeat(margin);
        let hi = max + Vec3::repeat(margin);
        let mut dims = [0usize; 3];
        for a in 0..3 {
            dims[a] = ((hi[a] - lo[a]) / cell_size).ceil() as usize + 1;
        }
        let coords: Vec<[f64; 3]> = target.points().iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree = Tree::new_from_slice(&coords);

        let slab = dims[0] * dims[1];
        let slabs = exec.map_range(dims[2], |k| {
            let mut out = Vec::with_capacity(slab);
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let node = Point3::new(
                        lo.x + i as f64 * cell_size,
                        lo.y + j as f64 * cell_size,
                        lo.z + k as f64 * cell_size,
                    );
                    out.push(nearest_sample(&tree, target, &node));
                }
            }
            out
        });
        let mut distances = Vec::with_capacity(slab * dims[2]);
        let mut gradients = Vec::with_capacity(slab * dims[2]);
        for s in slabs.into_iter().flatten() {
            distances.push(s.distance);
            gradients.push(s.gradient);
        }
        Ok(Self {
            lo,
            dims,
            cell_size,
            distances,
            gradients,
            target: target.clone(),
            tree,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn target(&self) -> &PointCloud {
        &self.target
    }

    /// `(min, max)` corners of the node lattice.
    pub fn bounds(&self) -> (Point3, Point3) {
        let ext = Vec3::new(
            (self.dims[0] - 1) as f64,
            (self.dims[1] - 1) as f64,
            (self.dims[2] - 1) as f64,
        ) * self.cell_size;
        (self.lo, self.lo + ext)
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Point3 {
        self.lo + Vec3::new(i as f64, j as f64, k as f64) * self.cell_size
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> DistanceSample {
        let idx = i + self.dims[0] * (j + self.dims[1] * k);
        DistanceSample {
            distance: self.distances[idx],
            gradient: self.gradients[idx],
        }
    }

    /// Exact nearest target point: `(index, distance)`.
    pub fn nearest(&self, p: &Point3) -> (usize, f64) {
        let nn = self.tree.nearest_one::<SquaredEuclidean>(&[p.x, p.y, p.z]);
        let idx = nn.item as usize;
        (idx, (p - self.target.points()[idx]).norm())
    }

    /// Distance and gradient at `p`. Within [`EXACT_BAND_CELLS`] cells of
    /// the target, and outside the grid, the answer is the exact nearest
    /// neighbour. Elsewhere the node distances are interpolated trilinearly
    /// and the gradient is the normalized derivative of that interpolant.
    pub fn query(&self, p: &Point3) -> DistanceSample {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let x = (p[a] - self.lo[a]) / self.cell_size;
            let last = (self.dims[a] - 1) as f64;
            if !(x >= 0.0 && x <= last) {
                return nearest_sample(&self.tree, &self.target, p);
            }
            if self.dims[a] == 1 {
                continue;
            }
            let b = (x.floor() as usize).min(self.dims[a] - 2);
            base[a] = b;
            frac[a] = x - b as f64;
        }
        if frac == [0.0; 3] {
            return self.node(base[0], base[1], base[2]);
        }
        let mut distance = 0.0;
        let mut derivative = Vec3::zeros();
        let mut blended = Vec3::zeros();
        for corner in 0..8usize {
            let bits: [usize; 3] = std::array::from_fn(|a| (corner >> a) & 1);
            if (0..3).any(|a| self.dims[a] == 1 && bits[a] == 1) {
                continue;
            }
            let f: [f64; 3] = std::array::from_fn(|a| match (self.dims[a], bits[a]) {
                (1, _) => 1.0,
                (_, 1) => frac[a],
                _ => 1.0 - frac[a],
            });
            let w = f[0] * f[1] * f[2];
            let s = self.node(base[0] + bits[0], base[1] + bits[1], base[2] + bits[2]);
            distance += w * s.distance;
            blended += w * s.gradient;
            for a in 0..3 {
                if self.dims[a] == 1 {
                    continue;
                }
                let sign = if bits[a] == 1 { 1.0 } else { -1.0 };
                derivative[a] += sign * f[(a + 1) % 3] * f[(a + 2) % 3] * s.distance;
            }
        }
        if distance < EXACT_BAND_CELLS * self.cell_size {
            return nearest_sample(&self.tree, &self.target, p);
        }
        let derivative = derivative / self.cell_size;
        let gradient = if derivative.norm() > 0.5 {
            derivative.normalize()
        } else if blended.norm() > 1e-12 {
            blended.normalize()
        } else {
            nearest_sample(&self.tree, &self.target, p).gradient
        };
        DistanceSample { distance, gradient }
    }

    pub fn query_distance(&self, p: &Point3) -> f64 {
        self.query(p).distance
    }
}

pub fn query_distance(map: &DistanceMap, p: &Point3) -> DistanceSample {
    map.query(p)
}

fn nearest_sample(tree: &Tree, target: &PointCloud, p: &Point3) -> DistanceSample {
    let nn = tree.nearest_one::<SquaredEuclidean>(&[p.x, p.y, p.z]);
    let q = target.points()[nn.item as usize];
    let diff = p - q;
    let distance = diff.norm();
    let gradient = if distance > 0.0 {
        diff / distance
    } else {
        Vec3::zeros()
    };
    DistanceSample { distance, gradient }
}
