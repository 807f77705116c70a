#![allow(dead_code)]

use fusion_core::geometry::{Point3, PointCloud, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Roughly uniform samples on an ellipsoid surface (normalized Gaussian
/// directions scaled by the semi-axes).
pub fn ellipsoid_cloud(n: usize, axes: [f64; 3], seed: u64) -> PointCloud {
    let mut r = rng(seed);
    let points = (0..n)
        .map(|_| {
            let d: [f64; 3] = rand_distr::UnitSphere.sample_with(&mut r);
            Point3::new(d[0] * axes[0], d[1] * axes[1], d[2] * axes[2])
        })
        .collect();
    PointCloud::with_uniform_sigma(points, 1.0).unwrap()
}

pub fn uniform_in_box(r: &mut impl Rng, lo: Point3, hi: Point3) -> Point3 {
    Point3::new(
        r.random_range(lo.x..hi.x),
        r.random_range(lo.y..hi.y),
        r.random_range(lo.z..hi.z),
    )
}

pub fn rms(a: &[Point3], b: &[Point3]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum();
    (s / a.len() as f64).sqrt()
}

pub fn naive_nearest(points: &[Point3], p: &Point3) -> f64 {
    let mut best = f64::INFINITY;
    for q in points {
        let d = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2)).sqrt();
        if d < best {
            best = d;
        }
    }
    best
}

pub trait SampleWith<T> {
    fn sample_with(&self, r: &mut impl Rng) -> T;
}

impl SampleWith<[f64; 3]> for rand_distr::UnitSphere {
    fn sample_with(&self, r: &mut impl Rng) -> [f64; 3] {
        rand_distr::Distribution::sample(self, r)
    }
}

pub fn unit(v: Vec3) -> Vec3 {
    v / v.norm()
}
