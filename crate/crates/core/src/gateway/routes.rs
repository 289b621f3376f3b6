//! Endpoint handlers. Every handler that touches storage runs on the
//! blocking pool; only the chat stream stays on the async side.

use std::convert::Infallible;
use std::str::FromStr;

use axum::body::{Body, Bytes};
use axum::extract::multipart::MultipartRejection;
use axum::extract::{Multipart, Path, RawQuery, State};
use axum::http::header::CONTENT_TYPE;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ApiError, AppState, Auth};
use crate::auth::{Principal, Role};
use crate::catalog::{AnalyticMeta, AnalyticPatch, DatasetMeta, DatasetPatch, FacilityMeta, PolicyUpdate, ResourceKind};
use crate::clock::now_ms;
use crate::error::{Error, Result};
use crate::executor::{JobFilter, JobSpec, JobState};
use crate::ids::{AnalyticId, DatasetId, FacilityId, JobId, MetricId, RoomId};
use crate::platform::Platform;
use crate::scoring::history_csv;
use crate::timeseries::{parse_ndjson, Agg, ExtractRequest, IngestReport, SeriesQuery};

/// `(method, path)` of every endpoint under `/api`. Only login and health
/// are reachable without a session.
pub const ROUTES: &[(&str, &str)] = &[
    ("GET", "/health"),
    ("POST", "/auth/login"),
    ("POST", "/users"),
    ("GET", "/users/me"),
    ("POST", "/datasets"),
    ("GET", "/datasets"),
    ("GET", "/datasets/{id}"),
    ("PATCH", "/datasets/{id}"),
    ("GET", "/datasets/{id}/content"),
    ("PUT", "/datasets/{id}/policy"),
    ("POST", "/analytics"),
    ("GET", "/analytics"),
    ("GET", "/analytics/{id}"),
    ("PATCH", "/analytics/{id}"),
    ("PUT", "/analytics/{id}/policy"),
    ("GET", "/runtimes"),
    ("POST", "/runtimes/reload"),
    ("POST", "/ingest"),
    ("GET", "/series"),
    ("GET", "/series/sources"),
    ("POST", "/series/extract"),
    ("POST", "/jobs"),
    ("GET", "/jobs"),
    ("GET", "/jobs/{id}"),
    ("DELETE", "/jobs/{id}"),
    ("GET", "/jobs/{id}/log"),
    ("GET", "/jobs/{id}/result"),
    ("GET", "/events"),
    ("POST", "/facilities"),
    ("GET", "/facilities"),
    ("GET", "/facilities/{id}"),
    ("PUT", "/facilities/{id}/policy"),
    ("GET", "/facilities/{id}/metrics"),
    ("POST", "/facilities/{id}/metrics"),
    ("DELETE", "/metrics/{id}"),
    ("GET", "/facilities/{id}/score"),
    ("GET", "/facilities/{id}/history"),
    ("POST", "/rooms"),
    ("GET", "/rooms"),
    ("POST", "/rooms/{id}/messages"),
    ("GET", "/rooms/{id}/messages"),
    ("GET", "/rooms/{id}/stream"),
];

pub const PUBLIC_ROUTES: &[&str] = &["/health", "/auth/login"];

pub(super) fn api() -> Router<AppState> {
    Router::new()
        .route("/health", get(health))
        .route("/auth/login", post(login))
        .route("/users", post(create_user))
        .route("/users/me", get(me))
        .route("/datasets", post(upload_dataset).get(search_datasets))
        .route("/datasets/{id}", get(get_dataset).patch(patch_dataset))
        .route("/datasets/{id}/content", get(dataset_content))
        .route("/datasets/{id}/policy", put(dataset_policy))
        .route("/analytics", post(upload_analytic).get(search_analytics))
        .route("/analytics/{id}", get(get_analytic).patch(patch_analytic))
        .route("/analytics/{id}/policy", put(analytic_policy))
        .route("/runtimes", get(runtimes))
        .route("/runtimes/reload", post(reload_runtimes))
        .route("/ingest", post(ingest))
        .route("/series", get(series))
        .route("/series/sources", get(sources))
        .route("/series/extract", post(extract))
        .route("/jobs", post(submit_job).get(list_jobs))
        .route("/jobs/{id}", get(get_job).delete(cancel_job))
        .route("/jobs/{id}/log", get(job_log))
        .route("/jobs/{id}/result", get(job_result))
        .route("/events", get(job_events))
        .route("/facilities", post(create_facility).get(search_facilities))
        .route("/facilities/{id}", get(get_facility))
        .route("/facilities/{id}/policy", put(facility_policy))
        .route("/facilities/{id}/metrics", get(list_metrics).post(attach_metric))
        .route("/metrics/{id}", delete(detach_metric))
        .route("/facilities/{id}/score", get(score))
        .route("/facilities/{id}/history", get(score_history))
        .route("/rooms", post(create_room).get(list_rooms))
        .route("/rooms/{id}/messages", post(post_message).get(fetch_messages))
        .route("/rooms/{id}/stream", get(room_stream))
}

type ApiResult<T = Response> = std::result::Result<T, ApiError>;

/// Run a storage-bound closure on the blocking pool.
async fn blocking<T, F>(st: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Platform) -> Result<T> + Send + 'static,
{
    let platform = st.platform.clone();
    tokio::task::spawn_blocking(move || f(&platform))
        .await
        .map_err(|e| Error::Storage(format!("worker task: {e}")))?
        .map_err(ApiError::from)
}

fn json_ok<T: Serialize>(v: T) -> Response {
    Json(v).into_response()
}

fn created<T: Serialize>(v: T) -> Response {
    (StatusCode::CREATED, Json(v)).into_response()
}

fn parse_body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::BadRequest(format!("invalid JSON body: {e}")))
}

fn parse_id<T: From<i64>>(raw: &str) -> Result<T> {
    raw.parse::<i64>().map(T::from).map_err(|_| Error::BadRequest(format!("invalid id {raw:?}")))
}

/// Decoded query string; repeated keys are kept.
struct Params(Vec<(String, String)>);

impl Params {
    fn parse(raw: Option<String>) -> Result<Params> {
        let raw = raw.unwrap_or_default();
        serde_urlencoded::from_str(&raw).map(Params).map_err(|e| Error::BadRequest(format!("query string: {e}")))
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.0.iter().filter(move |(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn num<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| Error::BadRequest(format!("{key} must be a number, got {v:?}"))))
            .transpose()
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T> {
        self.num(key)?.ok_or_else(|| Error::BadRequest(format!("missing query parameter {key}")))
    }
}

async fn health() -> Response {
    json_ok(json!({"status": "ok"}))
}

#[derive(Deserialize)]
struct LoginBody {
    name: String,
    secret: String,
}

async fn login(State(st): State<AppState>, body: Bytes) -> ApiResult {
    let b: LoginBody = parse_body(&body)?;
    let session = blocking(&st, move |p| p.catalog.authenticate(&b.name, &b.secret)).await?;
    Ok(json_ok(json!({"token": session.token, "user_id": session.user_id, "expires_at": session.expires_at})))
}

#[derive(Deserialize)]
struct NewUser {
    name: String,
    secret: String,
    #[serde(default = "analyst")]
    role: Role,
}

fn analyst() -> Role {
    Role::Analyst
}

async fn create_user(State(st): State<AppState>, Auth(actor): Auth, body: Bytes) -> ApiResult {
    let b: NewUser = parse_body(&body)?;
    let user = blocking(&st, move |p| p.catalog.register_user(&actor, &b.name, b.role, &b.secret)).await?;
    Ok(created(user))
}

async fn me(State(st): State<AppState>, Auth(actor): Auth) -> ApiResult {
    Ok(json_ok(blocking(&st, move |p| p.catalog.user(actor.user_id)).await?))
}

/// The `meta` JSON part and the raw bytes of the content part.
async fn read_upload(mp: std::result::Result<Multipart, MultipartRejection>, content_names: &[&str]) -> Result<(Value, Bytes)> {
    let mut mp = mp.map_err(|e| Error::BadRequest(format!("expected multipart/form-data: {e}")))?;
    let (mut meta, mut content) = (None, None);
    while let Some(field) = mp.next_field().await.map_err(|e| Error::BadRequest(format!("multipart: {e}")))? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| Error::BadRequest(format!("multipart: {e}")))?;
        if name == "meta" {
            meta = Some(parse_body::<Value>(&bytes)?);
        } else if content_names.contains(&name.as_str()) {
            content = Some(bytes);
        }
    }
    let meta = meta.ok_or_else(|| Error::BadRequest("missing multipart field \"meta\"".into()))?;
    let content = content.ok_or_else(|| Error::BadRequest(format!("missing multipart field {:?}", content_names[0])))?;
    Ok((meta, content))
}

fn from_value<T: DeserializeOwned>(v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::BadRequest(format!("invalid metadata: {e}")))
}

async fn upload_dataset(
    State(st): State<AppState>,
    Auth(actor): Auth,
    mp: std::result::Result<Multipart, MultipartRejection>,
) -> ApiResult {
    let (meta, content) = read_upload(mp, &["content"]).await?;
    let meta: DatasetMeta = from_value(meta)?;
    Ok(created(blocking(&st, move |p| p.catalog.create_dataset(&actor, meta, &content[..])).await?))
}

async fn search_datasets(State(st): State<AppState>, Auth(actor): Auth, RawQuery(q): RawQuery) -> ApiResult {
    let q = Params::parse(q)?.get("q").unwrap_or_default().to_string();
    Ok(json_ok(blocking(&st, move |p| p.catalog.search_datasets(&actor, &q)).await?))
}

async fn get_dataset(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>) -> ApiResult {
    let id: DatasetId = parse_id(&id)?;
    Ok(json_ok(blocking(&st, move |p| p.catalog.dataset(&actor, id)).await?))
}

async fn patch_dataset(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let id: DatasetId = parse_id(&id)?;
    let patch: DatasetPatch = parse_body(&body)?;
    Ok(json_ok(blocking(&st, move |p| p.catalog.update_dataset(&actor, id, patch)).await?))
}

async fn dataset_content(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>) -> ApiResult {
    let id: DatasetId = parse_id(&id)?;
    let bytes = blocking(&st, move |p| {
        let (_, mut file) = p.catalog.get_content(&actor, id)?;
        let mut buf = Vec::new();
        std::io::Read::read_to_end(&mut file, &mut buf)?;
        Ok(buf)
    })
    .await?;
    Ok(([(CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

async fn set_policy(st: AppState, actor: Principal, kind: ResourceKind, id: &str, body: Bytes) -> ApiResult {
    let id: i64 = parse_id(id)?;
    let update: PolicyUpdate = parse_body(&body)?;
    Ok(json_ok(blocking(&st, move |p| p.catalog.set_policy(&actor, kind, id, update)).await?))
}

async fn dataset_policy(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>, body: Bytes) -> ApiResult {
    set_policy(st, actor, ResourceKind::Dataset, &id, body).await
}

async fn analytic_policy(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>, body: Bytes) -> ApiResult {
    set_policy(st, actor, ResourceKind::Analytic, &id, body).await
}

async fn facility_policy(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>, body: Bytes) -> ApiResult {
    set_policy(st, actor, ResourceKind::Facility, &id, body).await
}

async fn upload_analytic(
    State(st): State<AppState>,
    Auth(actor): Auth,
    mp: std::result::Result<Multipart, MultipartRejection>,
) -> ApiResult {
    let (meta, artifact) = read_upload(mp, &["artifact", "content"]).await?;
    let meta: AnalyticMeta = from_value(meta)?;
    Ok(created(blocking(&st, move |p| p.catalog.create_analytic(&actor, meta, &artifact[..])).await?))
}

async fn search_analytics(State(st): State<AppState>, Auth(actor): Auth, RawQuery(q): RawQuery) -> ApiResult {
    let q = Params::parse(q)?.get("q").unwrap_or_default().to_string();
    Ok(json_ok(blocking(&st, move |p| p.catalog.search_analytics(&actor, &q)).await?))
}

async fn get_analytic(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>) -> ApiResult {
    let id: AnalyticId = parse_id(&id)?;
    Ok(json_ok(blocking(&st, move |p| p.catalog.analytic(&actor, id)).await?))
}

async fn patch_analytic(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let id: AnalyticId = parse_id(&id)?;
    let patch: AnalyticPatch = parse_body(&body)?;
    Ok(json_ok(blocking(&st, move |p| p.catalog.update_analytic(&actor, id, patch)).await?))
}

async fn runtimes(State(st): State<AppState>, Auth(_): Auth) -> ApiResult {
    Ok(json_ok(st.platform.executor.list_runtimes()))
}

async fn reload_runtimes(State(st): State<AppState>, Auth(actor): Auth) -> ApiResult {
    if !actor.is_admin() {
        return Err(Error::NotAuthorized.into());
    }
    Ok(json_ok(blocking(&st, |p| p.executor.reload_registry()).await?))
}

async fn ingest(State(st): State<AppState>, Auth(_): Auth, body: Bytes) -> ApiResult {
    let report = blocking(&st, move |p| {
        let text = String::from_utf8_lossy(&body);
        let (points, unparsed) = parse_ndjson(&text);
        let stored = p.series.ingest_batch(points)?;
        Ok(IngestReport { accepted: stored.accepted, rejected: stored.rejected + unparsed })
    })
    .await?;
    Ok(json_ok(report))
}

async fn series(State(st): State<AppState>, Auth(_): Auth, RawQuery(q): RawQuery) -> ApiResult {
    let params = Params::parse(q)?;
    let source = params.get("source").ok_or_else(|| Error::BadRequest("missing query parameter source".into()))?;
    let channels: Vec<String> =
        params.all("channel").flat_map(|c| c.split(',')).filter(|c| !c.is_empty()).map(str::to_string).collect();
    let query = SeriesQuery {
        source: source.to_string(),
        channels,
        from: params.required("from")?,
        to: params.required("to")?,
        bucket_ms: params.num("bucket_ms")?,
        agg: params.get("agg").map(Agg::from_str).transpose()?,
    };
    let series = blocking(&st, move |p| p.series.query_range(&query).map(|s| (query.source, s))).await?;
    Ok(json_ok(json!({"source": series.0, "series": series.1})))
}

async fn sources(State(st): State<AppState>, Auth(_): Auth) -> ApiResult {
    Ok(json_ok(st.platform.series.sources()))
}

async fn extract(State(st): State<AppState>, Auth(actor): Auth, body: Bytes) -> ApiResult {
    let req: ExtractRequest = parse_body(&body)?;
    Ok(created(blocking(&st, move |p| p.series.extract_dataset(&p.catalog, &actor, &req)).await?))
}

async fn submit_job(State(st): State<AppState>, Auth(actor): Auth, body: Bytes) -> ApiResult {
    let spec: JobSpec = parse_body(&body)?;
    Ok(created(blocking(&st, move |p| p.executor.submit(&actor, spec)).await?))
}

async fn list_jobs(State(st): State<AppState>, Auth(actor): Auth, RawQuery(q): RawQuery) -> ApiResult {
    let params = Params::parse(q)?;
    let state = params.get("state").filter(|s| !s.is_empty()).map(JobState::from_str).transpose()?;
    let mine = matches!(params.get("mine"), Some("true" | "1" | "yes"));
    let filter = JobFilter { state, submitted_by: mine.then_some(actor.user_id) };
    Ok(json_ok(blocking(&st, move |p| p.executor.list_jobs(&actor, &filter)).await?))
}

async fn get_job(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>) -> ApiResult {
    let id: JobId = parse_id(&id)?;
    Ok(json_ok(blocking(&st, move |p| p.executor.get(&actor, id)).await?))
}

async fn cancel_job(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>) -> ApiResult {
    let id: JobId = parse_id(&id)?;
    Ok(json_ok(blocking(&st, move |p| p.executor.cancel(&actor, id)).await?))
}

async fn job_log(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>) -> ApiResult {
    let id: JobId = parse_id(&id)?;
    let text = blocking(&st, move |p| p.executor.log(&actor, id)).await?;
    Ok(([(CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

async fn job_result(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>) -> ApiResult {
    let id: JobId = parse_id(&id)?;
    Ok(json_ok(blocking(&st, move |p| p.executor.result(&actor, id)).await?))
}

/// Job state transitions in commit order: one job's (if visible), or all
/// of them for an admin.
async fn job_events(State(st): State<AppState>, Auth(actor): Auth, RawQuery(q): RawQuery) -> ApiResult {
    let job = Params::parse(q)?.num::<i64>("job")?.map(JobId);
    let events = blocking(&st, move |p| {
        match job {
            Some(id) => {
                p.executor.get(&actor, id)?;
            }
            None if !actor.is_admin() => return Err(Error::NotAuthorized),
            None => {}
        }
        p.executor.events(job)
    })
    .await?;
    Ok(json_ok(events))
}

async fn create_facility(State(st): State<AppState>, Auth(actor): Auth, body: Bytes) -> ApiResult {
    let meta: FacilityMeta = parse_body(&body)?;
    Ok(created(blocking(&st, move |p| p.catalog.create_facility(&actor, meta)).await?))
}

async fn search_facilities(State(st): State<AppState>, Auth(actor): Auth, RawQuery(q): RawQuery) -> ApiResult {
    let q = Params::parse(q)?.get("q").unwrap_or_default().to_string();
    Ok(json_ok(blocking(&st, move |p| p.catalog.search_facilities(&actor, &q)).await?))
}

async fn get_facility(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>) -> ApiResult {
    let id: FacilityId = parse_id(&id)?;
    Ok(json_ok(blocking(&st, move |p| p.catalog.facility(&actor, id)).await?))
}

async fn list_metrics(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>) -> ApiResult {
    let id: FacilityId = parse_id(&id)?;
    Ok(json_ok(blocking(&st, move |p| p.scoring.metrics(&actor, id)).await?))
}

#[derive(Deserialize)]
struct AttachBody {
    analytic_id: AnalyticId,
    label: String,
    weight: f64,
}

async fn attach_metric(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let id: FacilityId = parse_id(&id)?;
    let b: AttachBody = parse_body(&body)?;
    Ok(created(blocking(&st, move |p| p.scoring.attach_metric(&actor, id, b.analytic_id, &b.label, b.weight)).await?))
}

async fn detach_metric(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>) -> ApiResult {
    let id: MetricId = parse_id(&id)?;
    blocking(&st, move |p| p.scoring.detach_metric(&actor, id)).await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn score(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>, RawQuery(q): RawQuery) -> ApiResult {
    let id: FacilityId = parse_id(&id)?;
    let at = Params::parse(q)?.num::<i64>("at")?;
    let score = blocking(&st, move |p| {
        p.catalog.facility(&actor, id)?;
        p.scoring.composite(id, at.unwrap_or_else(now_ms))
    })
    .await?;
    Ok(json_ok(score))
}

async fn score_history(
    State(st): State<AppState>,
    Auth(actor): Auth,
    Path(id): Path<String>,
    RawQuery(q): RawQuery,
) -> ApiResult {
    let id: FacilityId = parse_id(&id)?;
    let params = Params::parse(q)?;
    let from = params.num::<i64>("from")?.unwrap_or(0);
    let to = params.num::<i64>("to")?;
    let as_csv = match params.get("format") {
        None | Some("json") => false,
        Some("csv") => true,
        Some(other) => return Err(Error::BadRequest(format!("unknown format {other:?}")).into()),
    };
    let entries = blocking(&st, move |p| {
        p.catalog.facility(&actor, id)?;
        p.scoring.history(id, from, to.unwrap_or_else(|| now_ms() + 1))
    })
    .await?;
    if as_csv {
        Ok(([(CONTENT_TYPE, "text/csv; charset=utf-8")], history_csv(&entries)).into_response())
    } else {
        Ok(json_ok(entries))
    }
}

#[derive(Deserialize)]
struct NewRoom {
    name: String,
}

async fn create_room(State(st): State<AppState>, Auth(actor): Auth, body: Bytes) -> ApiResult {
    let b: NewRoom = parse_body(&body)?;
    Ok(created(blocking(&st, move |p| p.chat.create_room(&actor, &b.name)).await?))
}

async fn list_rooms(State(st): State<AppState>, Auth(_): Auth) -> ApiResult {
    Ok(json_ok(blocking(&st, |p| p.chat.rooms()).await?))
}

#[derive(Deserialize)]
struct NewMessage {
    body: String,
}

async fn post_message(State(st): State<AppState>, Auth(actor): Auth, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let room: RoomId = parse_id(&id)?;
    let b: NewMessage = parse_body(&body)?;
    Ok(created(blocking(&st, move |p| p.chat.post(&actor, room, &b.body)).await?))
}

async fn fetch_messages(
    State(st): State<AppState>,
    Auth(_): Auth,
    Path(id): Path<String>,
    RawQuery(q): RawQuery,
) -> ApiResult {
    let room: RoomId = parse_id(&id)?;
    let params = Params::parse(q)?;
    let since = params.num::<u64>("since")?.unwrap_or(0);
    let limit = params.num::<u32>("limit")?.unwrap_or(100);
    Ok(json_ok(blocking(&st, move |p| p.chat.fetch(room, since, limit)).await?))
}

/// Newline-delimited JSON messages starting at `from_seq` (or after
/// `since`), open until the client leaves or the service stops.
async fn room_stream(State(st): State<AppState>, Auth(_): Auth, Path(id): Path<String>, RawQuery(q): RawQuery) -> ApiResult {
    let room: RoomId = parse_id(&id)?;
    let params = Params::parse(q)?;
    let from = match (params.num::<u64>("from_seq")?, params.num::<u64>("since")?) {
        (Some(f), _) => f,
        (None, Some(s)) => s + 1,
        (None, None) => 1,
    };
    let sub = st.platform.chat.subscribe(room, from)?;
    let stream = futures::stream::unfold((sub, st.stopping.clone()), |(mut sub, mut stop)| async move {
        if *stop.borrow() {
            return None;
        }
        let next = tokio::select! {
            next = sub.next() => next.ok(),
            _ = stop.wait_for(|s| *s) => None,
        };
        let mut line = serde_json::to_vec(&next?).ok()?;
        line.push(b'\n');
        Some((Ok::<_, Infallible>(Bytes::from(line)), (sub, stop)))
    });
    Ok(([(CONTENT_TYPE, "application/x-ndjson")], Body::from_stream(stream)).into_response())
}
