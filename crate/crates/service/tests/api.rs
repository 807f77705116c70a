use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use fusion_core::io::{self, parse_report, Report};
use fusion_core::phantom::{generate_phantom, PhantomSpec};
use fusion_core::pipeline::{self, export_phantom};
use fusion_core::resample::CrossPosition;
use fusion_core::{PlanarContour, Point2};
use fusion_service::{router, AppState};
use http_body_util::BodyExt;
use tempfile::TempDir;
use tower::ServiceExt;

struct Fixture {
    _dir: TempDir,
    state: Arc<AppState>,
    app: Router,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_phantom(&PhantomSpec::default()).unwrap();
    export_phantom(&scene, dir.path()).unwrap();
    let state = AppState::new(dir.path());
    let app = router(state.clone());
    Fixture { _dir: dir, state, app }
}

fn session_text(mode: &str) -> String {
    io::standard_session_text(mode.parse().unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: impl Into<Body>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(body.into()).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_text(app: &Router, method: &str, uri: &str, body: impl Into<Body>) -> (StatusCode, String) {
    let (s, b) = call(app, method, uri, body).await;
    (s, String::from_utf8(b).unwrap())
}

async fn create(f: &Fixture, mode: &str) -> String {
    let (status, body) = call_text(&f.app, "POST", "/sessions", session_text(mode)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    parse_report(&body).unwrap().get("id").unwrap().to_string()
}

fn report(body: &str) -> Report {
    parse_report(body).unwrap()
}

fn apex_contour(f: &Fixture, id: &str) -> PlanarContour {
    let stack = f.state.session(id).unwrap().snapshot().scene.trus_stack.clone();
    let first = &stack.contours()[0];
    let (lo, hi) = first.bounds();
    let m = Point2::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0);
    let pts = first.points().iter().map(|p| m + (p - m) * 0.6).collect();
    PlanarContour::new(first.slice_index - 1, first.z - stack.spacing(), pts).unwrap()
}

#[tokio::test]
async fn create_session_and_reject_bad_input() {
    let f = fixture();
    let id = create(&f, "rigid").await;
    assert_eq!(id.len(), 32);
    assert_eq!(f.state.session_count(), 1);

    let (status, body) = call_text(&f.app, "POST", "/sessions", "trus_stack = trus.stack\n").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body.starts_with("error: ParseError\n"), "{body}");

    let broken = session_text("rigid").replace("mri.hdr", "absent.hdr");
    let (status, body) = call_text(&f.app, "POST", "/sessions", broken).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body.starts_with("error: ParseError\n") && body.contains("absent.hdr"));

    let bad_cfg = session_text("rigid") + "config.regularization = -1\n";
    let (status, body) = call_text(&f.app, "POST", "/sessions", bad_cfg).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body.starts_with("error: InvalidConfig\n"), "{body}");
    assert_eq!(f.state.session_count(), 1);
}

#[tokio::test]
async fn composite_matches_pipeline_render() {
    let f = fixture();
    let id = create(&f, "elastic").await;
    let snap = f.state.session(&id).unwrap().snapshot();
    let k = snap.scene.trus_stack.contours()[3].slice_index;
    for (cross, mode) in [((0, 0), "rigid"), ((40, 70), "elastic")] {
        let uri = format!("/sessions/{id}/slices/{k}/composite?cross={},{}&mode={mode}", cross.0, cross.1);
        let (status, bytes) = call(&f.app, "GET", &uri, Body::empty()).await;
        assert_eq!(status, StatusCode::OK);
        let t = snap.registration.transform(mode.parse().unwrap());
        let c = CrossPosition { cx: cross.0, cy: cross.1 };
        let expected = pipeline::render_slice(&snap.scene, &t, k, Some(c), 1.5).unwrap();
        assert_eq!(bytes, io::format_pgm(&expected.composite));
        // Served again from the cache.
        assert_eq!(call(&f.app, "GET", &uri, Body::empty()).await.1, bytes);
    }
    let (status, body) = call_text(&f.app, "GET", &format!("/sessions/{id}/slices/999/composite"), Body::empty()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body.starts_with("error: NotFound"));
    let (status, _) = call(&f.app, "GET", &format!("/sessions/{id}/slices/{k}/composite?cross=1"), Body::empty()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&f.app, "GET", &format!("/sessions/{id}/slices/{k}/composite?cross=99999,0"), Body::empty()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&f.app, "GET", &format!("/sessions/{id}/slices/{k}/composite?mode=affine"), Body::empty()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&f.app, "GET", "/sessions/nope/slices/0/composite", Body::empty()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, overlay) = call_text(&f.app, "GET", &format!("/sessions/{id}/slices/{k}/overlay"), Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    let lines = io::parse_overlay(&overlay).unwrap();
    assert!(!lines.is_empty());
}

#[tokio::test]
async fn contour_edits_update_volume() {
    let f = fixture();
    let id = create(&f, "rigid").await;
    let stack = f.state.session(&id).unwrap().snapshot().scene.trus_stack.clone();
    let mid = &stack.contours()[4];
    let k = mid.slice_index;
    let uri = format!("/sessions/{id}/contours/{k}");

    let (status, body) = call_text(&f.app, "PUT", &uri, io::format_slice_record(mid)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let r = report(&body);
    assert_eq!(r.get_f64("delta_pct"), Some(0.0));
    assert_eq!(r.get("slice_count_delta_apex"), Some("0"));
    let v0 = r.get_f64("volume_cc").unwrap();

    let apex = apex_contour(&f, &id);
    let a = apex.slice_index;
    let apex_uri = format!("/sessions/{id}/contours/{a}");
    let (status, body) = call_text(&f.app, "PUT", &apex_uri, io::format_slice_record(&apex)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let r = report(&body);
    assert!(r.get_f64("volume_cc").unwrap() > v0);
    assert!(r.get_f64("delta_pct").unwrap() > 0.0);
    assert_eq!(r.get("slice_count_delta_apex"), Some("1"));
    assert_eq!(r.get("slice_count_delta_base"), Some("0"));

    // Same edit again: same derived values.
    let (_, again) = call_text(&f.app, "PUT", &apex_uri, io::format_slice_record(&apex)).await;
    assert_eq!(again, body);

    let (status, composite) = call(&f.app, "GET", &format!("/sessions/{id}/slices/{a}/composite"), Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    assert!(composite.starts_with(b"P5"));

    let (status, body) = call_text(&f.app, "PUT", &apex_uri, "").await;
    assert_eq!(status, StatusCode::OK);
    let r = report(&body);
    assert_eq!(r.get_f64("delta_pct"), Some(0.0));
    assert_eq!(r.get("slice_count_delta_apex"), Some("0"));

    let (status, body) = call_text(&f.app, "GET", &format!("/sessions/{id}/journal"), Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], "JOURNAL v1");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with(&format!("E 1 ")) && lines[1].contains(&format!(" put {k} ")));
    assert!(lines[4].contains(&format!(" delete {a} ")));
}

#[tokio::test]
async fn edit_errors() {
    let f = fixture();
    let id = create(&f, "rigid").await;
    let stack = f.state.session(&id).unwrap().snapshot().scene.trus_stack.clone();
    let c = &stack.contours()[2];
    let rec = io::format_slice_record(c);

    let (status, _) = call(&f.app, "PUT", &format!("/sessions/{id}/contours/500"), rec.clone()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&f.app, "PUT", "/sessions/unknown/contours/0", rec.clone()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let other = c.slice_index + 1;
    let (status, body) = call_text(&f.app, "PUT", &format!("/sessions/{id}/contours/{other}"), rec.clone()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body.starts_with("error: InvalidInput"));
    let (status, body) = call_text(&f.app, "PUT", &format!("/sessions/{id}/contours/{}", c.slice_index), "SLICE 2 0 3\n0 0\n").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body.starts_with("error: ParseError"));

    let session = f.state.session(&id).unwrap();
    let guard = session.begin_edit().unwrap();
    let (status, body) = call_text(&f.app, "PUT", &format!("/sessions/{id}/contours/{}", c.slice_index), rec.clone()).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body.starts_with("error: Conflict"));
    drop(guard);
    let (status, _) = call(&f.app, "PUT", &format!("/sessions/{id}/contours/{}", c.slice_index), rec).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(session.journal().len(), 1);
}

#[tokio::test]
async fn reregistration_replaces_transform() {
    let f = fixture();
    let id = create(&f, "rigid").await;
    let session = f.state.session(&id).unwrap();
    let before = session.snapshot().registration.rigid.transform;
    let apex = apex_contour(&f, &id);
    let uri = format!("/sessions/{id}/contours/{}?reregister=1", apex.slice_index);
    let (status, body) = call_text(&f.app, "PUT", &uri, io::format_slice_record(&apex)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(report(&body).get("reregistered"), Some("1"));
    let after = session.snapshot().registration.rigid.transform;
    assert_ne!(before, after);
    assert!(session.journal()[0].reregistered);
}

#[tokio::test]
async fn metrics_and_dvh() {
    let f = fixture();
    let id = create(&f, "rigid").await;
    let (status, body) = call_text(&f.app, "GET", &format!("/sessions/{id}/metrics"), Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    let r = report(&body);
    assert_eq!(r.get("report"), Some("metrics"));
    assert!(r.get_f64("residual_mean").unwrap() < 2.0);
    assert!(r.get_f64("urethra_mean").unwrap() >= 0.0);
    assert!(r.entries().iter().filter(|(k, _)| k.starts_with("urethra_slice_")).count() >= 8);

    let (status, csv) = call_text(&f.app, "GET", &format!("/sessions/{id}/dvh?pitch=2&bins=0:300:1"), Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    assert!(csv.starts_with("# SIMPLIFIED KERNEL"));
    let curve = io::parse_dvh_csv(&csv).unwrap();
    assert_eq!(curve.dose_bins.len(), 301);
    assert_eq!(curve.cumulative_fraction[0], 1.0);
    let (status, body) = call_text(&f.app, "GET", &format!("/sessions/{id}/dvh?bins=0:10"), Body::empty()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body.starts_with("error: InvalidInput"));
    let (status, _) = call(&f.app, "GET", &format!("/sessions/{id}/dvh?pitch=abc"), Body::empty()).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn sessions_are_independent() {
    let f = fixture();
    let a = create(&f, "rigid").await;
    let b = create(&f, "rigid").await;
    assert_ne!(a, b);
    let apex = apex_contour(&f, &a);
    let (status, _) = call(&f.app, "PUT", &format!("/sessions/{a}/contours/{}", apex.slice_index), io::format_slice_record(&apex)).await;
    assert_eq!(status, StatusCode::OK);
    let (_, sa) = call_text(&f.app, "GET", &format!("/sessions/{a}/contours"), Body::empty()).await;
    let (_, sb) = call_text(&f.app, "GET", &format!("/sessions/{b}/contours"), Body::empty()).await;
    let sa = io::parse_contour_stack(&sa).unwrap();
    let sb = io::parse_contour_stack(&sb).unwrap();
    assert_eq!(sa.len(), sb.len() + 1);
    assert!(f.state.session(&b).unwrap().journal().is_empty());
}
