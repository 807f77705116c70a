//! HTTP facade over the fusion pipeline for interactive review sessions.
//!
//! Each session holds an immutable [`Snapshot`] behind an `Arc`. Reads clone
//! the `Arc` and compute off the async executor; an edit builds a new
//! snapshot and swaps it in, which also drops every derived cache. Edits to
//! one session are single-writer: a second edit arriving while one is in
//! flight gets `409 Conflict`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::Router;
use fusion_core::error::ErrorClass;
use fusion_core::geometry::{ContourStack, PointCloud};
use fusion_core::io::{self, Report, RunConfig, SessionFile};
use fusion_core::pipeline::{self, RegistrationMode, RegistrationResult, Scene};
use fusion_core::resample::CrossPosition;
use fusion_core::volumetry::SeedImplant;
use fusion_core::{Error, FusionTransform};
use serde::Deserialize;

/// Slice indices further than this from the original stack are rejected
/// with 404.
pub const PLAUSIBLE_SLICE_MARGIN: i32 = 10;

const PGM: &str = "image/x-portable-graymap";
const TEXT: &str = "text/plain; charset=utf-8";
const CSV: &str = "text/csv; charset=utf-8";

/// Shared server state: the session table and the directory that relative
/// session paths resolve against.
pub struct AppState {
    data_dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl AppState {
    pub fn new(data_dir: impl Into<PathBuf>) -> Arc<Self> {
        Arc::new(Self {
            data_dir: data_dir.into(),
            sessions: RwLock::new(HashMap::new()),
        })
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.read().unwrap().get(id).cloned()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap().len()
    }
}

/// Everything derived from one registration of one TRUS stack.
pub struct Snapshot {
    pub scene: Scene,
    pub registration: RegistrationResult,
    caches: Mutex<Caches>,
}

#[derive(Default)]
struct Caches {
    composites: HashMap<(i32, String, Option<(usize, usize)>), Bytes>,
    overlays: HashMap<i32, String>,
    metrics: Option<String>,
    dvh: HashMap<(u64, String), String>,
}

impl Snapshot {
    fn new(scene: Scene, registration: RegistrationResult) -> Arc<Self> {
        Arc::new(Self {
            scene,
            registration,
            caches: Mutex::new(Caches::default()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JournalEntry {
    pub seq: usize,
    pub unix_ms: u128,
    pub slice_index: i32,
    pub deleted: bool,
    pub reregistered: bool,
    pub volume_cc: f64,
}

pub struct Session {
    original_trus: ContourStack,
    mri_cloud: PointCloud,
    mode: RegistrationMode,
    config: RunConfig,
    /// Seeds used for DVHs when the session file names none: a lattice
    /// over the original stack, so that edits do not move them.
    fallback_seeds: SeedImplant,
    editing: AtomicBool,
    current: RwLock<Arc<Snapshot>>,
    journal: Mutex<Vec<JournalEntry>>,
}

/// Held while an edit is in flight; releases the session on drop.
pub struct EditGuard<'a>(&'a AtomicBool);

impl Drop for EditGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

impl Session {
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().unwrap().clone()
    }

    pub fn mode(&self) -> RegistrationMode {
        self.mode
    }

    /// Claims the single writer slot, or `None` when an edit is running.
    pub fn begin_edit(&self) -> Option<EditGuard<'_>> {
        self.editing
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| EditGuard(&self.editing))
    }

    pub fn journal(&self) -> Vec<JournalEntry> {
        self.journal.lock().unwrap().clone()
    }

    fn seeds(&self, snap: &Snapshot) -> SeedImplant {
        snap.scene.seeds.clone().unwrap_or_else(|| self.fallback_seeds.clone())
    }

    fn plausible(&self, k: i32) -> bool {
        let c = self.original_trus.contours();
        match (c.first(), c.last()) {
            (Some(a), Some(b)) => {
                (a.slice_index - PLAUSIBLE_SLICE_MARGIN..=b.slice_index + PLAUSIBLE_SLICE_MARGIN).contains(&k)
            }
            _ => false,
        }
    }
}

/// Failure as sent to clients: status plus an `error: <Name>` first line.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    name: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, name: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            name,
            message: message.into(),
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", what)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e.class() {
            ErrorClass::Parse | ErrorClass::Precondition => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorClass::Numeric => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.name(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = format!("error: {}\n{}\n", self.name, self.message);
        (self.status, [(header::CONTENT_TYPE, TEXT)], body).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> fusion_core::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
        .map_err(ApiError::from)
}

fn text(body: String) -> Response {
    ([(header::CONTENT_TYPE, TEXT)], body).into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/contours", get(get_contours))
        .route("/sessions/{id}/contours/{k}", put(put_contour))
        .route("/sessions/{id}/slices/{k}/composite", get(get_composite))
        .route("/sessions/{id}/slices/{k}/overlay", get(get_overlay))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .route("/sessions/{id}/dvh", get(get_dvh))
        .route("/sessions/{id}/journal", get(get_journal))
        .with_state(state)
}

/// Serves [`router`] on `addr` until the process is stopped.
pub async fn serve(addr: SocketAddr, data_dir: PathBuf) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(data_dir))).await
}

fn lookup(state: &AppState, id: &str) -> ApiResult<Arc<Session>> {
    state.session(id).ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
}

fn new_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

async fn create_session(State(state): State<Arc<AppState>>, body: String) -> ApiResult<Response> {
    let base = state.data_dir.clone();
    let session = blocking(move || {
        let file = SessionFile::parse(&body, &base)?;
        let scene = Scene::load(&file)?;
        let mri_cloud = scene.mri_cloud()?;
        let registration = pipeline::register(&scene.trus_stack, &mri_cloud, &file.config, file.mode)?;
        let fallback_seeds = pipeline::lattice_implant(&scene.trus_stack)?;
        Ok(Session {
            original_trus: scene.trus_stack.clone(),
            mri_cloud,
            mode: file.mode,
            config: file.config,
            fallback_seeds,
            editing: AtomicBool::new(false),
            current: RwLock::new(Snapshot::new(scene, registration)),
            journal: Mutex::new(Vec::new()),
        })
    })
    .await?;
    let id = new_id();
    state.sessions.write().unwrap().insert(id.clone(), Arc::new(session));
    let mut r = Report::new("session");
    r.push("id", &id);
    Ok(text(r.to_text()))
}

async fn get_contours(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = lookup(&state, &id)?;
    Ok(text(io::format_contour_stack(&s.snapshot().scene.trus_stack)))
}

#[derive(Debug, Deserialize)]
pub struct CompositeQuery {
    cross: Option<String>,
    mode: Option<String>,
}

fn parse_cross(s: &str) -> ApiResult<(usize, usize)> {
    let bad = || ApiError::from(Error::InvalidInput(format!("cross must be cx,cy, got `{s}`")));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn transform_for(snap: &Snapshot, mode: RegistrationMode) -> FusionTransform {
    snap.registration.transform(mode)
}

async fn get_composite(
    State(state): State<Arc<AppState>>,
    Path((id, k)): Path<(String, i32)>,
    Query(q): Query<CompositeQuery>,
) -> ApiResult<Response> {
    let s = lookup(&state, &id)?;
    let snap = s.snapshot();
    if snap.scene.trus_stack.by_index(k).is_none() {
        return Err(ApiError::not_found(format!("no TRUS slice {k}")));
    }
    let mode: RegistrationMode = match &q.mode {
        Some(m) => m.parse()?,
        None => s.mode,
    };
    let cross = q.cross.as_deref().map(parse_cross).transpose()?;
    let key = (k, mode.to_string(), cross);
    if let Some(b) = snap.caches.lock().unwrap().composites.get(&key) {
        return Ok(([(header::CONTENT_TYPE, PGM)], b.clone()).into_response());
    }
    let tol = s.config.projection_tolerance;
    let snap2 = snap.clone();
    let bytes = blocking(move || {
        let c = cross.map(|(cx, cy)| CrossPosition { cx, cy });
        let r = pipeline::render_slice(&snap2.scene, &transform_for(&snap2, mode), k, c, tol)?;
        Ok(Bytes::from(io::format_pgm(&r.composite)))
    })
    .await?;
    snap.caches.lock().unwrap().composites.insert(key, bytes.clone());
    Ok(([(header::CONTENT_TYPE, PGM)], bytes).into_response())
}

async fn get_overlay(State(state): State<Arc<AppState>>, Path((id, k)): Path<(String, i32)>) -> ApiResult<Response> {
    let s = lookup(&state, &id)?;
    let snap = s.snapshot();
    if snap.scene.trus_stack.by_index(k).is_none() {
        return Err(ApiError::not_found(format!("no TRUS slice {k}")));
    }
    if let Some(t) = snap.caches.lock().unwrap().overlays.get(&k) {
        return Ok(text(t.clone()));
    }
    let (tol, mode) = (s.config.projection_tolerance, s.mode);
    let snap2 = snap.clone();
    let out = blocking(move || {
        let r = pipeline::render_slice(&snap2.scene, &transform_for(&snap2, mode), k, None, tol)?;
        Ok(io::format_overlay(&r.overlay))
    })
    .await?;
    snap.caches.lock().unwrap().overlays.insert(k, out.clone());
    Ok(text(out))
}

#[derive(Debug, Deserialize)]
pub struct EditQuery {
    reregister: Option<String>,
}

async fn put_contour(
    State(state): State<Arc<AppState>>,
    Path((id, k)): Path<(String, i32)>,
    Query(q): Query<EditQuery>,
    body: String,
) -> ApiResult<Response> {
    let s = lookup(&state, &id)?;
    if !s.plausible(k) {
        return Err(ApiError::not_found(format!("slice {k} is outside the plausible range")));
    }
    let reregister = matches!(q.reregister.as_deref(), Some("1" | "true"));
    let _guard = s
        .begin_edit()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "Conflict", "another edit is in progress"))?;
    let contour = if body.trim().is_empty() {
        None
    } else {
        let c = io::parse_slice_record(&body)?;
        if c.slice_index != k {
            return Err(Error::InvalidInput(format!("record is for slice {}, path names {k}", c.slice_index)).into());
        }
        Some(c)
    };
    let deleted = contour.is_none();
    let snap = s.snapshot();
    let stack = snap.scene.trus_stack.with_slice(k, contour)?;
    let (report, registration) = {
        let s2 = s.clone();
        let stack2 = stack.clone();
        let previous = snap.registration.clone();
        blocking(move || {
            let (vol, _) = pipeline::volume_report(&s2.original_trus, &stack2, s2.config.volume_formula)?;
            let registration = if reregister {
                pipeline::register(&stack2, &s2.mri_cloud, &s2.config, s2.mode)?
            } else {
                previous
            };
            Ok((vol, registration))
        })
        .await?
    };
    let mut scene = snap.scene.clone();
    scene.trus_stack = stack;
    *s.current.write().unwrap() = Snapshot::new(scene, registration);

    let volume_cc = report.get_f64("v_after_cc").unwrap_or(f64::NAN);
    {
        let mut j = s.journal.lock().unwrap();
        let seq = j.len() + 1;
        j.push(JournalEntry {
            seq,
            unix_ms: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis()),
            slice_index: k,
            deleted,
            reregistered: reregister,
            volume_cc,
        });
    }
    let mut r = Report::new("contour_edit");
    r.push("slice_index", k)
        .push("volume_cc", volume_cc)
        .push("delta_cc", report.get("delta_cc").unwrap_or("nan"))
        .push("delta_pct", report.get("delta_pct").unwrap_or("nan"))
        .push("slice_count_delta_apex", report.get("slices_added_apex").unwrap_or("0"))
        .push("slice_count_delta_base", report.get("slices_added_base").unwrap_or("0"))
        .push("reregistered", u8::from(reregister));
    Ok(text(r.to_text()))
}

async fn get_metrics(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = lookup(&state, &id)?;
    let snap = s.snapshot();
    if let Some(t) = &snap.caches.lock().unwrap().metrics {
        return Ok(text(t.clone()));
    }
    let (s2, snap2) = (s.clone(), snap.clone());
    let out = blocking(move || {
        let sc = &snap2.scene;
        let f = transform_for(&snap2, s2.mode);
        let landmarks = match (&sc.trus_landmarks, &sc.mri_landmarks) {
            (Some(a), Some(b)) => Some((a, b.as_slice())),
            _ => None,
        };
        let (mut r, urethra) = pipeline::metrics_report(&sc.trus_stack, &s2.mri_cloud, &f, &s2.config, landmarks)?;
        r.push("mode", s2.mode);
        if let Some(u) = urethra {
            for d in &u.per_slice {
                r.push(&format!("urethra_slice_{}", d.slice_index), d.distance);
            }
        }
        Ok(r.to_text())
    })
    .await?;
    snap.caches.lock().unwrap().metrics = Some(out.clone());
    Ok(text(out))
}

#[derive(Debug, Deserialize)]
pub struct DvhQuery {
    pitch: Option<f64>,
    bins: Option<String>,
}

async fn get_dvh(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<DvhQuery>,
) -> ApiResult<Response> {
    let s = lookup(&state, &id)?;
    let snap = s.snapshot();
    let pitch = q.pitch.unwrap_or(pipeline::DEFAULT_PITCH);
    let bins_spec = q.bins.unwrap_or_else(|| pipeline::DEFAULT_BINS.to_string());
    let key = (pitch.to_bits(), bins_spec.clone());
    if let Some(t) = snap.caches.lock().unwrap().dvh.get(&key) {
        return Ok(([(header::CONTENT_TYPE, CSV)], t.clone()).into_response());
    }
    let (s2, snap2) = (s.clone(), snap.clone());
    let out = blocking(move || {
        let bins = pipeline::parse_bins(&bins_spec)?;
        let curve = pipeline::dvh(
            &s2.seeds(&snap2),
            &snap2.scene.trus_stack,
            &s2.config,
            &bins,
            pitch,
            s2.config.registration.exec,
        )?;
        Ok(io::dvh_csv(&curve))
    })
    .await?;
    snap.caches.lock().unwrap().dvh.insert(key, out.clone());
    Ok(([(header::CONTENT_TYPE, CSV)], out).into_response())
}

/// `JOURNAL v1`, then one `E` line per edit in order.
pub fn format_journal(entries: &[JournalEntry]) -> String {
    let mut out = String::from("JOURNAL v1\n");
    for e in entries {
        let _ = writeln!(
            out,
            "E {} {} {} {} reregister={} volume_cc={}",
            e.seq,
            e.unix_ms,
            if e.deleted { "delete" } else { "put" },
            e.slice_index,
            u8::from(e.reregistered),
            e.volume_cc
        );
    }
    out
}

async fn get_journal(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = lookup(&state, &id)?;
    Ok(text(format_journal(&s.journal())))
}
