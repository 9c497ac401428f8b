//! HTTP review API over a finished pipeline run.
//!
//! Reviewers browse detections ordered by learned-space distance, inspect the
//! ranked cluster suggestions for one detection, record labels, and ask for the
//! clusters (and optionally the projection) to be rebuilt with their labels
//! included. Labels are appended to a journal and replayed on the next start.

mod session;

use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use taxorefine::embedspace::{euclidean_distance, normalize};
use taxorefine::{parse_label, Error, Label, TaxonPath};

pub use session::{replay, Journal, JournalEntry, Recomputed, Session, Suggestion};

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 1000;
const IMAGE_EXTENSIONS: [(&str, &str); 4] = [
    ("jpg", "image/jpeg"),
    ("jpeg", "image/jpeg"),
    ("png", "image/png"),
    ("webp", "image/webp"),
];

/// Shared state behind the router.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    session: RwLock<Arc<Session>>,
    journal: Mutex<Option<Journal>>,
    recomputing: AtomicBool,
    images_dir: Option<PathBuf>,
}

/// Held while a recompute runs; a second recompute is refused until it drops.
pub struct RecomputeGuard {
    state: AppState,
}

impl Drop for RecomputeGuard {
    fn drop(&mut self) {
        self.state.inner.recomputing.store(false, Ordering::Release);
    }
}

impl AppState {
    /// Wraps `session`, replaying and then appending to the journal at
    /// `journal_path` if given.
    pub fn new(
        mut session: Session,
        journal_path: Option<&FsPath>,
        images_dir: Option<PathBuf>,
    ) -> taxorefine::Result<Self> {
        let journal = match journal_path {
            Some(path) => {
                let (journal, entries) = Journal::open(path)?;
                if !entries.is_empty() {
                    info!(
                        "replaying {} journaled label(s) from {}",
                        entries.len(),
                        path.display()
                    );
                }
                replay(&mut session, entries)?;
                Some(journal)
            }
            None => None,
        };
        Ok(AppState {
            inner: Arc::new(Inner {
                session: RwLock::new(Arc::new(session)),
                journal: Mutex::new(journal),
                recomputing: AtomicBool::new(false),
                images_dir,
            }),
        })
    }

    /// Current session snapshot. Later writes never mutate a returned snapshot.
    pub fn snapshot(&self) -> Arc<Session> {
        self.inner.session.read().expect("session lock").clone()
    }

    /// Claims the recompute slot, or `None` if a recompute is already running.
    pub fn try_begin_recompute(&self) -> Option<RecomputeGuard> {
        self.inner
            .recomputing
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| RecomputeGuard {
                state: self.clone(),
            })
    }

    fn record_label(&self, id: &str, label: Label) -> Result<u64, ApiError> {
        let mut slot = self.inner.session.write().expect("session lock");
        if slot.position(id).is_none() {
            return Err(ApiError::not_found(format!("no detection {id:?}")));
        }
        let entry = JournalEntry {
            id: id.to_string(),
            label: label.clone(),
        };
        if let Some(journal) = self.inner.journal.lock().expect("journal lock").as_mut() {
            journal
                .append(&entry)
                .map_err(|e| ApiError::internal(format!("journal write failed: {e}")))?;
        }
        let session = Arc::make_mut(&mut slot);
        Ok(session.apply_override(id, label).expect("id checked above"))
    }

    fn install(&self, r: Recomputed) -> u64 {
        let mut slot = self.inner.session.write().expect("session lock");
        Arc::make_mut(&mut slot).install(r)
    }
}

/// JSON error body with a status code.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::NoEligibleClusters
            | Error::InsufficientClasses(_)
            | Error::InsufficientMembers
            | Error::DegenerateCluster(_) => StatusCode::CONFLICT,
            ref e if e.is_validation() => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/session", get(session_info))
        .route("/api/detections", get(list_detections))
        .route("/api/detections/{id}/suggestions", get(suggestions))
        .route("/api/detections/{id}/label", post(set_label))
        .route("/api/recompute", post(recompute))
        .route("/api/images/{image_id}", get(image))
        .route("/api/images/{image_id}/meta", get(image_meta))
        .with_state(state)
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("review API listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug, Serialize)]
struct ClusterInfo {
    label: TaxonPath,
    member_count: usize,
    mean_intra_dist: f64,
}

async fn session_info(State(state): State<AppState>) -> Json<serde_json::Value> {
    let s = state.snapshot();
    let clusters: Vec<ClusterInfo> = s
        .clusters
        .iter()
        .map(|c| ClusterInfo {
            label: c.label.clone(),
            member_count: c.member_count,
            mean_intra_dist: c.mean_intra_dist,
        })
        .collect();
    Json(json!({
        "revision": s.revision,
        "detections": s.dataset.len(),
        "overrides": s.overrides.len(),
        "tau": s.config.tau,
        "clusters": clusters,
    }))
}

/// Raw query strings; parsed by hand so every bad value gets a 400 with a
/// readable message.
#[derive(Debug, Default, Deserialize)]
struct ListQuery {
    sort: Option<String>,
    reference: Option<String>,
    page: Option<String>,
    page_size: Option<String>,
}

#[derive(Debug, Serialize)]
struct DetectionItem {
    id: String,
    image_id: String,
    label: Label,
    original_label: Label,
    decided_by: &'static str,
    distance: Option<f64>,
}

#[derive(Debug, Serialize)]
struct DetectionPage {
    revision: u64,
    total: usize,
    page: usize,
    page_size: usize,
    reference: Option<String>,
    items: Vec<DetectionItem>,
}

fn parse_count(
    name: &str,
    raw: Option<&str>,
    default: usize,
    max: usize,
) -> Result<usize, ApiError> {
    let Some(raw) = raw else { return Ok(default) };
    match raw.parse::<usize>() {
        Ok(n) if (1..=max).contains(&n) => Ok(n),
        _ => Err(ApiError::bad_request(format!(
            "{name} must be an integer in [1, {max}], got {raw:?}"
        ))),
    }
}

/// Learned-space point a listing is sorted around: a detection's embedding, or
/// the unit centroid of the cluster with the given label.
fn reference_point(s: &Session, reference: &str) -> Result<Vec<f64>, ApiError> {
    if let Some(idx) = s.position(reference) {
        return Ok(s.learned(idx).to_vec());
    }
    let label = parse_label(reference).map_err(|_| {
        ApiError::not_found(format!(
            "{reference:?} is neither a detection id nor a label"
        ))
    })?;
    let cluster = label
        .as_taxon()
        .and_then(|t| s.clusters.iter().find(|c| c.label.same_taxon(t)))
        .ok_or_else(|| ApiError::not_found(format!("no cluster for label {reference:?}")))?;
    Ok(normalize(&cluster.centroid)?)
}

async fn list_detections(
    State(state): State<AppState>,
    Query(q): Query<ListQuery>,
) -> Result<Json<DetectionPage>, ApiError> {
    let page = parse_count("page", q.page.as_deref(), 1, usize::MAX)?;
    let page_size = parse_count(
        "page_size",
        q.page_size.as_deref(),
        DEFAULT_PAGE_SIZE,
        MAX_PAGE_SIZE,
    )?;
    let s = state.snapshot();

    let mut order: Vec<(usize, Option<f64>)> = match q.sort.as_deref() {
        None | Some("") if q.reference.is_none() => {
            (0..s.dataset.len()).map(|i| (i, None)).collect()
        }
        None | Some("distance") => {
            let reference = q
                .reference
                .as_deref()
                .ok_or_else(|| ApiError::bad_request("sort=distance needs a reference"))?;
            let point = reference_point(&s, reference)?;
            let mut with_dist = (0..s.dataset.len())
                .map(|i| Ok((i, Some(euclidean_distance(s.learned(i), &point)?))))
                .collect::<Result<Vec<_>, Error>>()?;
            with_dist.sort_by(|a, b| a.1.unwrap().total_cmp(&b.1.unwrap()).then(a.0.cmp(&b.0)));
            with_dist
        }
        Some(other) => {
            return Err(ApiError::bad_request(format!("unsupported sort {other:?}")));
        }
    };

    let total = order.len();
    let start = (page - 1).saturating_mul(page_size).min(total);
    let end = start.saturating_add(page_size).min(total);
    let items = order
        .drain(start..end)
        .map(|(i, distance)| {
            let d = s.detection(i);
            DetectionItem {
                id: d.id.clone(),
                image_id: d.image_id.clone(),
                label: s.current_label(i).clone(),
                original_label: d.ensemble_label.clone(),
                decided_by: if s.is_overridden(i) {
                    "human"
                } else {
                    s.outcomes[i].decided_by.as_str()
                },
                distance,
            }
        })
        .collect();
    Ok(Json(DetectionPage {
        revision: s.revision,
        total,
        page,
        page_size,
        reference: q.reference,
        items,
    }))
}

#[derive(Debug, Serialize)]
struct SuggestionList {
    revision: u64,
    id: String,
    original_label: Label,
    current_label: Label,
    already_decided: bool,
    tau: f64,
    suggestions: Vec<Suggestion>,
}

async fn suggestions(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SuggestionList>, ApiError> {
    let s = state.snapshot();
    let idx = s
        .position(&id)
        .ok_or_else(|| ApiError::not_found(format!("no detection {id:?}")))?;
    if s.clusters.is_empty() {
        return Err(ApiError::conflict(
            "no clusters available; run a recompute first",
        ));
    }
    let suggestions = s.suggestions(idx)?;
    Ok(Json(SuggestionList {
        revision: s.revision,
        original_label: s.detection(idx).ensemble_label.clone(),
        current_label: s.current_label(idx).clone(),
        already_decided: s.already_decided(idx),
        tau: s.config.tau,
        suggestions,
        id,
    }))
}

#[derive(Debug, Deserialize)]
struct LabelBody {
    label: String,
}

async fn set_label(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<LabelBody>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let Json(body) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let label = parse_label(&body.label)?;
    let revision = state.record_label(&id, label.clone())?;
    Ok(Json(
        json!({ "id": id, "label": label, "revision": revision }),
    ))
}

#[derive(Debug, Default, Deserialize)]
struct RecomputeBody {
    #[serde(default)]
    retrain: bool,
}

async fn recompute(
    State(state): State<AppState>,
    body: Option<Json<RecomputeBody>>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let retrain = body.map(|Json(b)| b.retrain).unwrap_or(false);
    let guard = state
        .try_begin_recompute()
        .ok_or_else(|| ApiError::conflict("a recompute is already running"))?;
    let snapshot = state.snapshot();
    let computed = tokio::task::spawn_blocking(move || snapshot.recompute(retrain))
        .await
        .map_err(|e| ApiError::internal(format!("recompute task failed: {e}")))??;
    let clusters = computed.clusters.len();
    let revision = state.install(computed);
    drop(guard);
    info!("recompute finished (retrain={retrain}): revision {revision}, {clusters} cluster(s)");
    Ok(Json(
        json!({ "revision": revision, "retrained": retrain, "clusters": clusters }),
    ))
}

/// Rejects ids that could escape the images directory.
fn safe_image_id(image_id: &str) -> bool {
    !image_id.is_empty()
        && image_id != "."
        && image_id != ".."
        && !image_id.contains(['/', '\\', '\0'])
}

fn find_image(dir: &FsPath, image_id: &str) -> Option<(PathBuf, &'static str)> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|(ext, mime)| (dir.join(format!("{image_id}.{ext}")), *mime))
        .find(|(p, _)| p.is_file())
}

fn locate_image(
    state: &AppState,
    image_id: &str,
) -> Result<Option<(PathBuf, &'static str)>, ApiError> {
    if !safe_image_id(image_id) {
        return Err(ApiError::bad_request(format!(
            "invalid image id {image_id:?}"
        )));
    }
    Ok(state
        .inner
        .images_dir
        .as_deref()
        .and_then(|dir| find_image(dir, image_id)))
}

async fn image(
    State(state): State<AppState>,
    Path(image_id): Path<String>,
) -> Result<Response, ApiError> {
    let Some((path, mime)) = locate_image(&state, &image_id)? else {
        return Err(ApiError::not_found(format!("no image for {image_id:?}")));
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, mime)], Body::from(bytes)).into_response()),
        Err(e) => {
            warn!("reading {}: {e}", path.display());
            Err(ApiError::not_found(format!("no image for {image_id:?}")))
        }
    }
}

/// Always answers 200; `available` is false when no image file exists, so the
/// UI can show a placeholder.
async fn image_meta(
    State(state): State<AppState>,
    Path(image_id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let found = locate_image(&state, &image_id)?;
    Ok(Json(json!({
        "image_id": image_id,
        "available": found.is_some(),
        "content_type": found.map(|(_, mime)| mime),
    })))
}
