use std::io::{BufRead, BufReader};
use std::time::Duration;

use reqwest::blocking::{multipart, RequestBuilder, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use shareal_core::catalog::{AnalyticMeta, DatasetMeta, FacilityMeta, PolicyUpdate};
use shareal_core::chat::{Message, Room};
use shareal_core::executor::{AnalyticResult, Job, JobSpec, StateChange};
use shareal_core::scoring::MetricView;
use shareal_core::timeseries::{ExtractRequest, IngestReport};
use shareal_core::{
    Analytic, AnalyticId, CompositeScore, Dataset, DatasetId, Facility, FacilityId, JobId, MetricBinding, MetricId,
    RoomId, User,
};

#[derive(Debug, thiserror::Error)]
pub enum ApiFailure {
    /// The server answered with its error document.
    #[error("{code}: {message} (HTTP {status})")]
    Api { status: u16, code: String, message: String },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ApiFailure {
    pub fn code(&self) -> Option<&str> {
        match self {
            ApiFailure::Api { code, .. } => Some(code),
            _ => None,
        }
    }
}

pub type ApiResult<T> = Result<T, ApiFailure>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(base_url: &str) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("HTTP client builds");
        Client { base: base_url.trim_end_matches('/').to_string(), token: None, http }
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    fn url(&self, path: &str) -> String {
        format!("{}/api{}", self.base, path)
    }

    fn req(&self, method: reqwest::Method, path: &str) -> RequestBuilder {
        let r = self.http.request(method, self.url(path));
        match &self.token {
            Some(t) => r.bearer_auth(t),
            None => r,
        }
    }

    fn send(r: RequestBuilder) -> ApiResult<Response> {
        let resp = r.send()?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let body: Value = resp.json().unwrap_or(Value::Null);
        let code = body["error"]["code"].as_str().unwrap_or("unknown").to_string();
        let message = body["error"]["message"].as_str().unwrap_or_default().to_string();
        Err(ApiFailure::Api { status: status.as_u16(), code, message })
    }

    fn decode<T: DeserializeOwned>(resp: Response) -> ApiResult<T> {
        let bytes = resp.bytes()?;
        serde_json::from_slice(&bytes).map_err(|e| ApiFailure::Decode(format!("{e}: {}", String::from_utf8_lossy(&bytes))))
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> ApiResult<T> {
        Self::decode(Self::send(self.req(reqwest::Method::GET, path))?)
    }

    fn get_with<T: DeserializeOwned>(&self, path: &str, params: &[(&str, &str)]) -> ApiResult<T> {
        Self::decode(Self::send(self.req(reqwest::Method::GET, path).query(params))?)
    }

    fn send_json<B: Serialize, T: DeserializeOwned>(&self, method: reqwest::Method, path: &str, body: &B) -> ApiResult<T> {
        Self::decode(Self::send(self.req(method, path).json(body))?)
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> ApiResult<T> {
        self.send_json(reqwest::Method::POST, path, body)
    }

    pub fn health(&self) -> ApiResult<Value> {
        self.get("/health")
    }

    /// Log in and keep the session token for later calls.
    pub fn login(&mut self, name: &str, secret: &str) -> ApiResult<String> {
        let v: Value = self.post("/auth/login", &json!({"name": name, "secret": secret}))?;
        let token = v["token"].as_str().ok_or_else(|| ApiFailure::Decode("login without token".into()))?.to_string();
        self.token = Some(token.clone());
        Ok(token)
    }

    pub fn create_user(&self, name: &str, secret: &str, role: &str) -> ApiResult<User> {
        self.post("/users", &json!({"name": name, "secret": secret, "role": role}))
    }

    pub fn me(&self) -> ApiResult<User> {
        self.get("/users/me")
    }

    pub fn upload_dataset(&self, meta: &DatasetMeta, content: Vec<u8>) -> ApiResult<Dataset> {
        let form = multipart::Form::new()
            .text("meta", serde_json::to_string(meta).expect("metadata serializes"))
            .part("content", multipart::Part::bytes(content).file_name("content"));
        Self::decode(Self::send(self.req(reqwest::Method::POST, "/datasets").multipart(form))?)
    }

    pub fn search_datasets(&self, q: &str) -> ApiResult<Vec<Dataset>> {
        self.get_with("/datasets", &[("q", q)])
    }

    pub fn dataset(&self, id: DatasetId) -> ApiResult<Dataset> {
        self.get(&format!("/datasets/{id}"))
    }

    pub fn update_dataset(&self, id: DatasetId, patch: &Value) -> ApiResult<Dataset> {
        self.send_json(reqwest::Method::PATCH, &format!("/datasets/{id}"), patch)
    }

    pub fn dataset_content(&self, id: DatasetId) -> ApiResult<Vec<u8>> {
        Ok(Self::send(self.req(reqwest::Method::GET, &format!("/datasets/{id}/content")))?.bytes()?.to_vec())
    }

    /// `kind` is the collection name: `datasets`, `analytics` or `facilities`.
    pub fn set_policy(&self, kind: &str, id: i64, update: &PolicyUpdate) -> ApiResult<Value> {
        self.send_json(reqwest::Method::PUT, &format!("/{kind}/{id}/policy"), update)
    }

    pub fn upload_analytic(&self, meta: &AnalyticMeta, artifact: Vec<u8>) -> ApiResult<Analytic> {
        let form = multipart::Form::new()
            .text("meta", serde_json::to_string(meta).expect("metadata serializes"))
            .part("artifact", multipart::Part::bytes(artifact).file_name("artifact"));
        Self::decode(Self::send(self.req(reqwest::Method::POST, "/analytics").multipart(form))?)
    }

    pub fn search_analytics(&self, q: &str) -> ApiResult<Vec<Analytic>> {
        self.get_with("/analytics", &[("q", q)])
    }

    pub fn analytic(&self, id: AnalyticId) -> ApiResult<Analytic> {
        self.get(&format!("/analytics/{id}"))
    }

    pub fn update_analytic(&self, id: AnalyticId, patch: &Value) -> ApiResult<Analytic> {
        self.send_json(reqwest::Method::PATCH, &format!("/analytics/{id}"), patch)
    }

    pub fn runtimes(&self) -> ApiResult<Vec<String>> {
        self.get("/runtimes")
    }

    pub fn ingest(&self, ndjson: String) -> ApiResult<IngestReport> {
        let r = self.req(reqwest::Method::POST, "/ingest").header("content-type", "application/x-ndjson").body(ndjson);
        Self::decode(Self::send(r)?)
    }

    /// Raw (or bucketed, when `bucket` is given) series for some channels.
    pub fn series(
        &self,
        source: &str,
        channels: &[&str],
        from: i64,
        to: i64,
        bucket: Option<(i64, &str)>,
    ) -> ApiResult<Value> {
        let channel = channels.join(",");
        let (from, to) = (from.to_string(), to.to_string());
        let mut q = vec![("source", source), ("channel", channel.as_str()), ("from", &from), ("to", &to)];
        let bucket_ms;
        if let Some((ms, agg)) = bucket {
            bucket_ms = ms.to_string();
            q.push(("bucket_ms", &bucket_ms));
            q.push(("agg", agg));
        }
        self.get_with("/series", &q)
    }

    pub fn extract(&self, req: &ExtractRequest) -> ApiResult<Dataset> {
        self.post("/series/extract", req)
    }

    pub fn submit_job(&self, spec: &JobSpec) -> ApiResult<Job> {
        self.post("/jobs", spec)
    }

    pub fn job(&self, id: JobId) -> ApiResult<Job> {
        self.get(&format!("/jobs/{id}"))
    }

    pub fn list_jobs(&self, state: Option<&str>, mine: bool) -> ApiResult<Vec<Job>> {
        let mine = if mine { "true" } else { "false" };
        self.get_with("/jobs", &[("state", state.unwrap_or("")), ("mine", mine)])
    }

    pub fn cancel_job(&self, id: JobId) -> ApiResult<Job> {
        Self::decode(Self::send(self.req(reqwest::Method::DELETE, &format!("/jobs/{id}")))?)
    }

    pub fn job_log(&self, id: JobId) -> ApiResult<String> {
        Ok(Self::send(self.req(reqwest::Method::GET, &format!("/jobs/{id}/log")))?.text()?)
    }

    pub fn job_result(&self, id: JobId) -> ApiResult<AnalyticResult> {
        self.get(&format!("/jobs/{id}/result"))
    }

    /// Recorded state transitions in commit order.
    pub fn events(&self, job: Option<JobId>) -> ApiResult<Vec<StateChange>> {
        match job {
            Some(id) => self.get(&format!("/events?job={id}")),
            None => self.get("/events"),
        }
    }

    /// Poll until the job is terminal or `timeout` passes.
    pub fn wait_job(&self, id: JobId, timeout: Duration) -> ApiResult<Job> {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            let job = self.job(id)?;
            if job.state.is_terminal() || std::time::Instant::now() >= deadline {
                return Ok(job);
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    pub fn create_facility(&self, meta: &FacilityMeta) -> ApiResult<Facility> {
        self.post("/facilities", meta)
    }

    pub fn search_facilities(&self, q: &str) -> ApiResult<Vec<Facility>> {
        self.get_with("/facilities", &[("q", q)])
    }

    pub fn facility(&self, id: FacilityId) -> ApiResult<Facility> {
        self.get(&format!("/facilities/{id}"))
    }

    pub fn metrics(&self, id: FacilityId) -> ApiResult<Vec<MetricView>> {
        self.get(&format!("/facilities/{id}/metrics"))
    }

    pub fn attach_metric(&self, facility: FacilityId, analytic: AnalyticId, label: &str, weight: f64) -> ApiResult<MetricBinding> {
        self.post(
            &format!("/facilities/{facility}/metrics"),
            &json!({"analytic_id": analytic, "label": label, "weight": weight}),
        )
    }

    pub fn detach_metric(&self, id: MetricId) -> ApiResult<()> {
        Self::send(self.req(reqwest::Method::DELETE, &format!("/metrics/{id}")))?;
        Ok(())
    }

    pub fn score(&self, facility: FacilityId, at: Option<i64>) -> ApiResult<CompositeScore> {
        match at {
            Some(at) => self.get(&format!("/facilities/{facility}/score?at={at}")),
            None => self.get(&format!("/facilities/{facility}/score")),
        }
    }

    pub fn history(&self, facility: FacilityId, from: i64, to: i64) -> ApiResult<Vec<CompositeScore>> {
        self.get(&format!("/facilities/{facility}/history?from={from}&to={to}"))
    }

    pub fn history_csv(&self, facility: FacilityId, from: i64, to: i64) -> ApiResult<String> {
        let path = format!("/facilities/{facility}/history?from={from}&to={to}&format=csv");
        Ok(Self::send(self.req(reqwest::Method::GET, &path))?.text()?)
    }

    pub fn create_room(&self, name: &str) -> ApiResult<Room> {
        self.post("/rooms", &json!({"name": name}))
    }

    pub fn rooms(&self) -> ApiResult<Vec<Room>> {
        self.get("/rooms")
    }

    pub fn post_message(&self, room: RoomId, body: &str) -> ApiResult<Message> {
        self.post(&format!("/rooms/{room}/messages"), &json!({"body": body}))
    }

    pub fn messages(&self, room: RoomId, since: u64, limit: u32) -> ApiResult<Vec<Message>> {
        self.get(&format!("/rooms/{room}/messages?since={since}&limit={limit}"))
    }

    /// Every message of a room, paging through the fetch endpoint.
    pub fn transcript(&self, room: RoomId) -> ApiResult<Vec<Message>> {
        let mut all: Vec<Message> = Vec::new();
        loop {
            let since = all.last().map_or(0, |m| m.seq);
            let page = self.messages(room, since, 1000)?;
            if page.is_empty() {
                return Ok(all);
            }
            all.extend(page);
        }
    }

    /// Open the live stream of a room from `from_seq` on.
    pub fn stream(&self, room: RoomId, from_seq: u64) -> ApiResult<MessageStream> {
        let path = format!("/rooms/{room}/stream?from_seq={from_seq}");
        let r = self.req(reqwest::Method::GET, &path).timeout(Duration::from_secs(24 * 3600));
        let resp = Self::send(r)?;
        Ok(MessageStream { lines: BufReader::new(resp) })
    }

    pub fn status_ok(&self) -> bool {
        matches!(self.http.get(self.url("/health")).send().map(|r| r.status()), Ok(StatusCode::OK))
    }
}

/// Messages arriving on a room stream, in sequence order.
pub struct MessageStream {
    lines: BufReader<Response>,
}

impl Iterator for MessageStream {
    type Item = ApiResult<Message>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut line = String::new();
        match self.lines.read_line(&mut line) {
            Ok(0) => None,
            Ok(_) => Some(serde_json::from_str(line.trim()).map_err(|e| ApiFailure::Decode(e.to_string()))),
            Err(e) => Some(Err(ApiFailure::Decode(e.to_string()))),
        }
    }
}
