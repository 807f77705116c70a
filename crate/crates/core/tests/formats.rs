mod common;

use common::*;
use fusion_core::geometry::{ContourStack, Image2D, Modality, PlanarContour, Point2, Point3, RigidTransform, Vec3, VolumeGrid};
use fusion_core::io::*;
use fusion_core::metrics::{LandmarkEntry, LandmarkSeries};
use fusion_core::octree::{Cell, OctreeSplineFFD};
use fusion_core::phantom::PhantomSpec;
use fusion_core::resample::OverlayPolyline;
use fusion_core::volumetry::{bin_grid, DvhCurve, Seed, SeedImplant};
use fusion_core::{Error, FusionTransform};
use proptest::prelude::*;
use rand::Rng;

const GOLDEN_TRUS: &str = include_str!("data/phantom_trus.stack");

fn random_stack(seed: u64) -> ContourStack {
    let mut r = rng(seed);
    let n = r.random_range(1..8);
    let contours = (0..n)
        .map(|i| {
            let m = r.random_range(3..30);
            let rad = r.random_range(3.0..30.0);
            let pts = (0..m)
                .map(|k| {
                    let t = k as f64 / m as f64 * std::f64::consts::TAU;
                    let s = rad * r.random_range(0.9..1.1);
                    Point2::new(s * t.cos() + 0.123456789, s * t.sin() - 1e-7)
                })
                .collect();
            PlanarContour::new(i, i as f64 * 5.0 - 0.1, pts).unwrap()
        })
        .collect();
    ContourStack::new(Modality::Trus, 5.0, contours).unwrap()
}

fn random_ffd(seed: u64) -> FusionTransform {
    let mut r = rng(seed);
    let mut ffd = OctreeSplineFFD::new(Point3::new(-50.0, -45.0, -40.0), 90.0, 3, 0.1).unwrap();
    ffd = ffd.split(&[Cell { depth: 1, index: [1, 0, 1] }].into_iter().collect());
    ffd = ffd.split(&[Cell { depth: 2, index: [2, 1, 2] }].into_iter().collect());
    let v: Vec<f64> = (0..ffd.free_values().len()).map(|_| r.random_range(-3.0..3.0)).collect();
    ffd.set_free_values(&v);
    let rigid = RigidTransform::from_axis_angle(Vec3::new(0.3, -1.0, 0.2), 0.17, Vec3::new(1.5, -2.25, 7.0));
    FusionTransform::with_ffd(rigid, ffd)
}

#[test]
fn contour_stack_round_trip() {
    for seed in 0..20 {
        let s = random_stack(seed);
        let text = format_contour_stack(&s);
        let back = parse_contour_stack(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(format_contour_stack(&back), text);
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.stack");
    let s = random_stack(99);
    write_contour_stack(&p, &s).unwrap();
    assert_eq!(read_contour_stack(&p).unwrap(), s);
}

#[test]
fn truncated_stack_reports_line() {
    let text = format_contour_stack(&random_stack(4));
    let lines: Vec<&str> = text.lines().collect();
    let cut = lines[..lines.len() - 1].join("\n");
    match parse_contour_stack(&cut) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, lines.len()),
        other => panic!("{other:?}"),
    }
    match parse_contour_stack("CONTOURSTACK v1\nmodality TRUS\nspacing_mm five\n") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_contour_stack("CONTOURS v2\n"), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn golden_phantom_stack_is_canonical() {
    let s = parse_contour_stack(GOLDEN_TRUS).unwrap();
    assert!((8..=10).contains(&s.len()));
    assert_eq!(s.spacing(), 5.0);
    assert_eq!(format_contour_stack(&s), GOLDEN_TRUS);
}

#[test]
fn slice_record_round_trip() {
    let s = random_stack(7);
    for c in s.contours() {
        let t = format_slice_record(c);
        let back = parse_slice_record(&t).unwrap();
        assert_eq!(&back, c);
        assert_eq!(format_slice_record(&back), t);
    }
}

#[test]
fn volume_round_trip_is_bit_exact() {
    let v = VolumeGrid::from_fn([7, 5, 4], [0.5, 0.75, 3.0], Point3::new(-1.5, 2.0, -9.0), |p| {
        (p.x * 1.1 + p.y * p.z).sin() as f32 * 1e3 + 1e-7
    })
    .unwrap();
    let header = format_volume_header(&v);
    let raw = format_volume_raw(&v);
    assert_eq!(raw.len(), 7 * 5 * 4 * 4);
    let back = parse_volume(&header, &raw).unwrap();
    assert_eq!(back.voxels().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), v.voxels().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    assert_eq!(format_volume_header(&back), header);
    assert_eq!(format_volume_raw(&back), raw);
    assert!(matches!(parse_volume(&header, &raw[..raw.len() - 4]), Err(Error::Parse { .. })));

    let dir = tempfile::tempdir().unwrap();
    let h = dir.path().join("v.hdr");
    write_volume(&h, &raw_path_for(&h), &v).unwrap();
    let r = read_volume(&h, &raw_path_for(&h)).unwrap();
    assert_eq!(format_volume_raw(&r), raw);
}

#[test]
fn transform_round_trips() {
    let id = FusionTransform::identity();
    let t = format_transform(&id);
    assert!(t.starts_with("RIGID v1"));
    assert_eq!(parse_transform(&t).unwrap(), id);

    let rigid = FusionTransform::rigid(RigidTransform::from_axis_angle(Vec3::new(1.0, 1.0, 0.0), 0.3, Vec3::new(3.0, -2.0, 4.0)));
    let t = format_transform(&rigid);
    let back = parse_transform(&t).unwrap();
    assert_eq!(format_transform(&back), t);

    for seed in 0..3 {
        let f = random_ffd(seed);
        let t = format_transform(&f);
        assert!(t.starts_with("FFD v1"));
        let back = parse_transform(&t).unwrap();
        assert_eq!(format_transform(&back), t);
        let mut r = rng(seed + 100);
        for _ in 0..1000 {
            let p = uniform_in_box(&mut r, Point3::new(-60.0, -60.0, -60.0), Point3::new(60.0, 60.0, 60.0));
            assert!((f.apply(&p) - back.apply(&p)).norm() <= 1e-12);
        }
    }
    assert!(matches!(parse_transform("AFFINE v1\n"), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn landmark_center_and_seed_round_trips() {
    let series = LandmarkSeries::new(
        Modality::Trus,
        (0..6)
            .map(|i| LandmarkEntry {
                slice_index: i,
                z: i as f64 * 5.0 + 0.1,
                center: Point2::new(1.0 / 3.0, -2.0 * i as f64),
            })
            .collect(),
    )
    .unwrap();
    let t = format_landmarks(&series);
    assert_eq!(format_landmarks(&parse_landmarks(&t).unwrap()), t);

    let centers = vec![Point3::new(1.0 / 7.0, 2.0, -3.5), Point3::new(0.0, -0.0, 1e-300)];
    let t = format_centers(&centers);
    assert_eq!(parse_centers(&t).unwrap(), centers);
    assert_eq!(format_centers(&parse_centers(&t).unwrap()), t);

    let seeds = SeedImplant::new(vec![
        Seed { position: Point3::new(1.0, 2.0, 3.0), strength: 5.0 },
        Seed { position: Point3::new(-1.0 / 3.0, 0.0, 7.0), strength: 0.25 },
    ])
    .unwrap();
    let t = format_seeds(&seeds);
    assert_eq!(parse_seeds(&t).unwrap(), seeds);
    assert_eq!(format_seeds(&parse_seeds(&t).unwrap()), t);
}

#[test]
fn image_and_overlay_round_trips() {
    let mut img = Image2D::filled(13, 7, 0.5, 0);
    for y in 0..7 {
        for x in 0..13 {
            img.set(x, y, ((x * 31 + y * 17) % 256) as u8);
        }
    }
    let b = format_pgm(&img);
    let back = parse_pgm(&b).unwrap();
    assert_eq!(back.pixels(), img.pixels());
    assert_eq!(format_pgm(&back), b);

    let lines = vec![
        OverlayPolyline { modality: Modality::MriSagittal, points: vec![(1.25, 2.5), (3.0, 1.0 / 3.0)] },
        OverlayPolyline { modality: Modality::MriCoronal, points: vec![(0.0, 0.0)] },
    ];
    let t = format_overlay(&lines);
    assert_eq!(parse_overlay(&t).unwrap(), lines);
    assert_eq!(format_overlay(&parse_overlay(&t).unwrap()), t);
}

#[test]
fn report_and_dvh_round_trips() {
    let mut r = Report::new("volume");
    r.push("v_before_cc", 65.92).push("v_after_cc", 67.97).push("delta_pct", 3.1098300970873787);
    let t = r.to_text();
    let back = parse_report(&t).unwrap();
    assert_eq!(back, r);
    assert_eq!(back.to_text(), t);
    assert_eq!(back.get_f64("delta_pct"), Some(3.1098300970873787));

    let bins = bin_grid(0.0, 10.0, 0.5).unwrap();
    let f: Vec<f64> = bins.iter().map(|d| (1.0 - d / 7.0).max(0.0)).collect();
    let curve = DvhCurve::new(bins, f).unwrap();
    let t = dvh_csv(&curve);
    let back = parse_dvh_csv(&t).unwrap();
    assert_eq!(back, curve);
    assert_eq!(dvh_csv(&back), t);
}

#[test]
fn phantom_spec_and_run_config_round_trip() {
    let spec = PhantomSpec {
        noise_sigma: 0.5,
        rng_seed: 17,
        semi_axes: [25.0, 18.0, 22.0],
        ..Default::default()
    };
    let t = format_phantom_spec(&spec);
    let back = parse_phantom_spec(&t).unwrap();
    assert_eq!(back, spec);
    assert_eq!(format_phantom_spec(&back), t);
    // Axis and degrees remain accepted on input.
    let by_axis = parse_phantom_spec("rotation_axis = 0,0,2\nrotation_deg = 90\n").unwrap();
    let p = by_axis.ground_truth.rotation * Vec3::x();
    assert!((p - Vec3::new(0.0, 1.0, 0.0)).norm() <= 1e-12);
    assert!(parse_phantom_spec("rotation_quaternion = 1,0,0,0\nrotation_deg = 5\n").is_err());
    assert!(parse_phantom_spec("rotation_quaternion = 0,0,0,0\n").is_err());
}

proptest! {
    #[test]
    fn stack_format_is_canonical(seed in 0u64..10_000) {
        let s = random_stack(seed);
        let t = format_contour_stack(&s);
        prop_assert_eq!(format_contour_stack(&parse_contour_stack(&t).unwrap()), t);
    }
}

#[test]
fn exported_phantom_loads_as_session() {
    use fusion_core::phantom::generate_phantom;
    use fusion_core::pipeline::{export_phantom, RegistrationMode, Scene};
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_phantom(&PhantomSpec::default()).unwrap();
    export_phantom(&scene, dir.path()).unwrap();
    let text = standard_session_text(RegistrationMode::Elastic);
    let session = SessionFile::parse(&text, dir.path()).unwrap();
    assert_eq!(session.mode, RegistrationMode::Elastic);
    let loaded = Scene::load(&session).unwrap();
    assert_eq!(loaded.trus_stack, scene.trus_stack);
    assert_eq!(loaded.mri_volume.voxels(), scene.mri_volume.voxels());

    std::fs::remove_file(dir.path().join("mri_sagittal.stack")).unwrap();
    match SessionFile::parse(&text, dir.path()) {
        Err(Error::Parse { line, message }) => {
            assert_eq!(line, 3);
            assert!(message.contains("mri_sagittal"));
        }
        other => panic!("{other:?}"),
    }
}
