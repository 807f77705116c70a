mod common;

use common::*;
use fusion_core::distance_map::{brute_force_distance, build_distance_map, DistanceMap};
use fusion_core::geometry::{Point3, PointCloud, Vec3};
use fusion_core::{Error, Exec};
use proptest::prelude::*;
use rand::Rng;

fn phantom_map() -> (PointCloud, DistanceMap) {
    let cloud = ellipsoid_cloud(4000, [25.0, 20.0, 20.0], 7);
    let map = build_distance_map(&cloud, 1.0, 15.0).unwrap();
    (cloud, map)
}

#[test]
fn nodes_hold_exact_nearest_distances() {
    let (cloud, map) = phantom_map();
    let mut r = rng(11);
    let [nx, ny, nz] = map.dims();
    for _ in 0..1000 {
        let (i, j, k) = (r.random_range(0..nx), r.random_range(0..ny), r.random_range(0..nz));
        let node = map.node_position(i, j, k);
        let stored = map.node(i, j, k).distance;
        assert_eq!(stored, naive_nearest(cloud.points(), &node));
        assert_eq!(map.query(&node).distance, stored);
    }
}

#[test]
fn interior_queries_within_quarter_cell() {
    let (cloud, map) = phantom_map();
    let mut r = rng(12);
    let (lo, hi) = cloud.bounds().unwrap();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p = uniform_in_box(&mut r, lo, hi);
        let err = (map.query_distance(&p) - naive_nearest(cloud.points(), &p)).abs();
        worst = worst.max(err);
    }
    assert!(worst <= 0.25 * map.cell_size(), "worst error {worst}");
}

#[test]
fn on_target_points_within_interpolation_cap() {
    let (cloud, map) = phantom_map();
    for p in cloud.points().iter().step_by(20) {
        assert!(map.query_distance(p) <= 0.87 * map.cell_size());
    }
}

#[test]
fn outside_bounds_matches_brute_force() {
    let (cloud, map) = phantom_map();
    let (lo, hi) = map.bounds();
    let mut r = rng(13);
    for _ in 0..200 {
        let dir = unit(Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
        let p = Point3::from(dir * ((hi - lo).norm() + r.random_range(1.0..50.0)));
        assert_eq!(map.query_distance(&p), brute_force_distance(&cloud, &p).unwrap());
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let (cloud, map) = phantom_map();
    let (lo, hi) = map.bounds();
    let mut r = rng(14);
    let h = 1e-3;
    let mut checked = 0;
    while checked < 200 {
        let p = uniform_in_box(&mut r, lo + Vec3::repeat(2.0), hi - Vec3::repeat(2.0));
        if naive_nearest(cloud.points(), &p) <= 2.0 * map.cell_size() {
            continue;
        }
        let g = map.query(&p).gradient;
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = h;
            let fd = (map.query_distance(&(p + e)) - map.query_distance(&(p - e))) / (2.0 * h);
            assert!((fd - g[a]).abs() <= 0.1, "component {a}: fd {fd} vs {}", g[a]);
        }
        checked += 1;
    }
}

#[test]
fn gradients_are_unit_away_from_target() {
    let (_, map) = phantom_map();
    let [nx, ny, nz] = map.dims();
    for k in (0..nz).step_by(7) {
        for j in (0..ny).step_by(5) {
            for i in (0..nx).step_by(3) {
                let s = map.node(i, j, k);
                if s.distance > map.cell_size() {
                    assert!((s.gradient.norm() - 1.0).abs() <= 1e-6);
                }
            }
        }
    }
}

#[test]
fn thread_count_does_not_change_the_grid() {
    let cloud = ellipsoid_cloud(800, [12.0, 9.0, 10.0], 3);
    let a = DistanceMap::build(&cloud, 0.8, 4.0, Exec::Sequential).unwrap();
    let b = DistanceMap::build(&cloud, 0.8, 4.0, Exec::Parallel).unwrap();
    let [nx, ny, nz] = a.dims();
    assert_eq!(a.dims(), b.dims());
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                assert_eq!(a.node(i, j, k), b.node(i, j, k));
            }
        }
    }
}

#[test]
fn invalid_inputs() {
    let cloud = ellipsoid_cloud(10, [1.0, 1.0, 1.0], 1);
    assert!(matches!(build_distance_map(&cloud, 0.0, 1.0), Err(Error::InvalidConfig(_))));
    assert!(matches!(build_distance_map(&cloud, -1.0, 1.0), Err(Error::InvalidConfig(_))));
    let empty = PointCloud::with_uniform_sigma(vec![], 1.0).unwrap();
    assert!(matches!(build_distance_map(&empty, 1.0, 1.0), Err(Error::EmptyInput(_))));
    assert!(matches!(brute_force_distance(&empty, &Point3::origin()), Err(Error::EmptyInput(_))));
}

#[test]
fn brute_force_agrees_with_second_scan() {
    let mut r = rng(15);
    for _ in 0..50 {
        let n = r.random_range(1..60);
        let pts: Vec<Point3> = (0..n)
            .map(|_| uniform_in_box(&mut r, Point3::new(-5.0, -5.0, -5.0), Point3::new(5.0, 5.0, 5.0)))
            .collect();
        let p = uniform_in_box(&mut r, Point3::new(-9.0, -9.0, -9.0), Point3::new(9.0, 9.0, 9.0));
        let cloud = PointCloud::with_uniform_sigma(pts.clone(), 1.0).unwrap();
        assert_eq!(brute_force_distance(&cloud, &p).unwrap(), naive_nearest(&pts, &p));
    }
}

fn lipschitz_map() -> &'static (PointCloud, DistanceMap) {
    static MAP: std::sync::OnceLock<(PointCloud, DistanceMap)> = std::sync::OnceLock::new();
    MAP.get_or_init(|| {
        let cloud = ellipsoid_cloud(1500, [15.0, 12.0, 10.0], 21);
        let map = build_distance_map(&cloud, 1.0, 6.0).unwrap();
        (cloud, map)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn query_is_nonnegative_and_lipschitz(
        p in prop::array::uniform3(-25.0f64..25.0),
        q in prop::array::uniform3(-25.0f64..25.0),
    ) {
        let (_, map) = lipschitz_map();
        let (p, q) = (Point3::from(p), Point3::from(q));
        let (dp, dq) = (map.query_distance(&p), map.query_distance(&q));
        prop_assert!(dp >= 0.0 && dq >= 0.0);
        prop_assert!((dp - dq).abs() <= (p - q).norm() + 0.5 * map.cell_size());
    }
}
