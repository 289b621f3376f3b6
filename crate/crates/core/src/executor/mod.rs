//! Simulated batch cluster.
//!
//! Jobs run a cataloged analytic against a cataloged dataset as a local
//! subprocess. A single FIFO queue feeds at most `slots` concurrent jobs.
//! [`Executor::tick`] is the only place that starts, reaps or times out
//! processes; request handlers only enqueue, cancel and read.
//!
//! Lock order: the executor's `running` mutex is always taken before the
//! metadata database.

mod job;
mod registry;

use std::collections::HashMap;
use std::fs::{self, File};
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rusqlite::{params, OptionalExtension, Transaction};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use job::{parse_result_document, AnalyticResult, Job, JobSpec, JobState, StateChange};
pub use registry::{validate_template, JobPaths, RunnerRegistry, DEFAULT_RUNNERS_TOML, PLACEHOLDERS};

use crate::auth::Principal;
use crate::catalog::Catalog;
use crate::clock::now_ms;
use crate::db::{to_json, Db};
use crate::error::{Error, Result};
use crate::ids::{JobId, UserId};
use crate::scoring;

pub const DEFAULT_TIMEOUT_MS: i64 = 10 * 60 * 1000;

const DATASET_FILE: &str = "dataset";
const ARTIFACT_FILE: &str = "artifact";
const PARAMS_FILE: &str = "params.json";
const OUTPUT_FILE: &str = "output.json";
const LOG_FILE: &str = "job.log";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub slots: usize,
    pub default_timeout_ms: i64,
    pub workdir_root: PathBuf,
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slots < 1 {
            return Err(Error::ConfigInvalid("slots must be >= 1".into()));
        }
        if self.default_timeout_ms <= 0 {
            return Err(Error::ConfigInvalid("default_timeout_ms must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct JobFilter {
    #[serde(default)]
    pub state: Option<JobState>,
    #[serde(default)]
    pub submitted_by: Option<UserId>,
}

struct RunningJob {
    child: Child,
    deadline: i64,
}

pub struct Executor {
    db: Arc<Db>,
    catalog: Arc<Catalog>,
    config: ClusterConfig,
    registry: RwLock<RunnerRegistry>,
    registry_path: Option<PathBuf>,
    running: Mutex<HashMap<JobId, RunningJob>>,
}

fn kill_group(pid: u32) {
    // Jobs lead their own process group, so this also reaches grandchildren.
    unsafe {
        libc::kill(-(pid as libc::pid_t), libc::SIGKILL);
    }
}

fn load_job(tx: &rusqlite::Connection, id: JobId) -> Result<Job> {
    tx.query_row("SELECT * FROM jobs WHERE id = ?1", [id], Job::from_row).optional()?.ok_or(Error::NotFound("job"))
}

/// Apply one checked transition plus any column updates in `tx`.
fn transition(
    tx: &Transaction<'_>,
    id: JobId,
    to: JobState,
    ts: i64,
    set: &[(&str, &dyn rusqlite::ToSql)],
) -> Result<StateChange> {
    let current = load_job(tx, id)?;
    if !JobState::can_transition(Some(current.state), to) {
        return Err(if current.state.is_terminal() {
            Error::AlreadyTerminal(current.state)
        } else {
            Error::Storage(format!("illegal transition {} -> {} for job {id}", current.state, to))
        });
    }
    let mut sql = String::from("UPDATE jobs SET state = ?1");
    let state_str = to.as_str();
    let mut values: Vec<&dyn rusqlite::ToSql> = vec![&state_str];
    for (i, (col, v)) in set.iter().enumerate() {
        sql.push_str(&format!(", {col} = ?{}", i + 2));
        values.push(*v);
    }
    sql.push_str(&format!(" WHERE id = ?{}", set.len() + 2));
    values.push(&id);
    tx.execute(&sql, values.as_slice())?;
    tx.execute(
        "INSERT INTO job_events(job_id, from_state, to_state, ts) VALUES (?1, ?2, ?3, ?4)",
        params![id, current.state.as_str(), to.as_str(), ts],
    )?;
    Ok(StateChange { job_id: id, from: Some(current.state), to, ts })
}

fn merge_params(defaults: &Value, overrides: &Value) -> Value {
    match (defaults, overrides) {
        (Value::Object(d), Value::Object(o)) => {
            let mut merged = d.clone();
            merged.extend(o.iter().map(|(k, v)| (k.clone(), v.clone())));
            Value::Object(merged)
        }
        (d, Value::Null) => d.clone(),
        (_, o) => o.clone(),
    }
}

impl Executor {
    pub fn new(
        db: Arc<Db>,
        catalog: Arc<Catalog>,
        config: ClusterConfig,
        registry: RunnerRegistry,
        registry_path: Option<PathBuf>,
    ) -> Result<Self> {
        config.validate()?;
        fs::create_dir_all(&config.workdir_root)?;
        Ok(Executor {
            db,
            catalog,
            config,
            registry: RwLock::new(registry),
            registry_path,
            running: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn list_runtimes(&self) -> Vec<String> {
        self.registry.read().runtime_ids()
    }

    /// Re-read the registry file given at construction.
    pub fn reload_registry(&self) -> Result<Vec<String>> {
        let path = self.registry_path.as_ref().ok_or_else(|| Error::ConfigInvalid("no registry file".into()))?;
        let fresh = RunnerRegistry::load(path)?;
        let ids = fresh.runtime_ids();
        *self.registry.write() = fresh;
        Ok(ids)
    }

    pub fn replace_registry(&self, registry: RunnerRegistry) {
        *self.registry.write() = registry;
    }

    fn workdir(&self, id: JobId) -> PathBuf {
        self.config.workdir_root.join(format!("job-{id}"))
    }

    /// After a restart: jobs left RUNNING by a dead process become FAILED
    /// (`interrupted`); QUEUED jobs simply stay queued.
    pub fn recover(&self, now: i64) -> Result<Vec<StateChange>> {
        let _running = self.running.lock();
        let orphans: Vec<(JobId, Option<i64>)> = self.db.read(|c| {
            let mut stmt = c.prepare("SELECT id, pid FROM jobs WHERE state = 'RUNNING' ORDER BY id")?;
            let rows = stmt.query_map([], |r| Ok((r.get(0)?, r.get(1)?)))?;
            Ok(rows.collect::<rusqlite::Result<_>>()?)
        })?;
        let mut changes = Vec::new();
        for (id, pid) in orphans {
            if let Some(pid) = pid {
                self.kill_stale(id, pid as u32);
            }
            changes.push(self.db.tx(|tx| {
                let job = load_job(tx, id)?;
                let end = now.max(job.start_ts.unwrap_or(job.submit_ts));
                transition(tx, id, JobState::Failed, end, &[("end_ts", &end), ("reason", &"interrupted")])
            })?);
        }
        Ok(changes)
    }

    /// Kill a process left over from a previous service instance, but only
    /// if it still runs inside this job's work directory (pids get reused).
    fn kill_stale(&self, id: JobId, pid: u32) {
        let cwd = fs::read_link(format!("/proc/{pid}/cwd"));
        let ours = match (cwd, fs::canonicalize(self.workdir(id))) {
            (Ok(cwd), Ok(dir)) => cwd == dir,
            _ => false,
        };
        if ours {
            tracing::warn!(job = %id, pid, "killing process left from previous run");
            kill_group(pid);
        }
    }

    pub fn submit(&self, actor: &Principal, spec: JobSpec) -> Result<Job> {
        let analytic = self.catalog.analytic(actor, spec.analytic_id)?;
        let dataset = self.catalog.dataset(actor, spec.dataset_id)?;
        if !self.registry.read().contains(&analytic.runtime_id) {
            return Err(Error::UnknownRuntime(analytic.runtime_id));
        }
        if dataset.expired_flag {
            return Err(Error::DatasetExpired);
        }
        if spec.timeout_ms.is_some_and(|t| t <= 0) {
            return Err(Error::BadRequest("timeout_ms must be positive".into()));
        }
        let now = now_ms();
        let id = self.db.tx(|tx| {
            tx.execute(
                "INSERT INTO jobs(analytic_id, dataset_id, params, submitted_by, timeout_ms, state, submit_ts, log_ref)
                 VALUES (?1, ?2, ?3, ?4, ?5, 'QUEUED', ?6, '')",
                params![spec.analytic_id, spec.dataset_id, to_json(&spec.params)?, actor.user_id, spec.timeout_ms, now],
            )?;
            let id = JobId(tx.last_insert_rowid());
            tx.execute("UPDATE jobs SET log_ref = ?2 WHERE id = ?1", params![id, format!("job-{id}/{LOG_FILE}")])?;
            tx.execute(
                "INSERT INTO job_events(job_id, from_state, to_state, ts) VALUES (?1, NULL, 'QUEUED', ?2)",
                params![id, now],
            )?;
            Ok(id)
        })?;
        self.job_unchecked(id)
    }

    pub fn job_unchecked(&self, id: JobId) -> Result<Job> {
        self.db.read(|c| load_job(c, id))
    }

    fn can_view(&self, actor: &Principal, job: &Job) -> bool {
        actor.is_admin()
            || actor.user_id == job.submitted_by
            || (self.catalog.analytic(actor, job.spec.analytic_id).is_ok()
                && self.catalog.dataset(actor, job.spec.dataset_id).is_ok())
    }

    pub fn get(&self, actor: &Principal, id: JobId) -> Result<Job> {
        let job = self.job_unchecked(id)?;
        if !self.can_view(actor, &job) {
            return Err(Error::NotAuthorized);
        }
        Ok(job)
    }

    /// Visible jobs matching `filter`, ascending by id.
    pub fn list_jobs(&self, actor: &Principal, filter: &JobFilter) -> Result<Vec<Job>> {
        let all: Vec<Job> = self.db.read(|c| {
            let mut stmt = c.prepare("SELECT * FROM jobs ORDER BY id")?;
            let rows = stmt.query_map([], Job::from_row)?;
            Ok(rows.collect::<rusqlite::Result<_>>()?)
        })?;
        Ok(all
            .into_iter()
            .filter(|j| filter.state.is_none_or(|s| j.state == s))
            .filter(|j| filter.submitted_by.is_none_or(|u| j.submitted_by == u))
            .filter(|j| self.can_view(actor, j))
            .collect())
    }

    /// Every recorded transition, optionally for one job, in commit order.
    pub fn events(&self, job: Option<JobId>) -> Result<Vec<StateChange>> {
        self.db.read(|c| {
            let mut stmt = c.prepare(
                "SELECT job_id, from_state, to_state, ts FROM job_events
                 WHERE ?1 IS NULL OR job_id = ?1 ORDER BY seq",
            )?;
            let rows = stmt.query_map([job], |r| {
                let from: Option<String> = r.get(1)?;
                let to: String = r.get(2)?;
                Ok((r.get::<_, JobId>(0)?, from, to, r.get::<_, i64>(3)?))
            })?;
            let mut out = Vec::new();
            for row in rows {
                let (job_id, from, to, ts) = row?;
                out.push(StateChange { job_id, from: from.map(|f| f.parse()).transpose()?, to: to.parse()?, ts });
            }
            Ok(out)
        })
    }

    pub fn running_count(&self) -> usize {
        self.running.lock().len()
    }

    /// One scheduler step: reap finished processes, enforce deadlines, then
    /// start the oldest queued jobs while slots are free.
    pub fn tick(&self, now: i64) -> Result<Vec<StateChange>> {
        let mut running = self.running.lock();
        let mut changes = Vec::new();

        let ids: Vec<JobId> = running.keys().copied().collect();
        for id in ids {
            let entry = running.get_mut(&id).expect("key just listed");
            match entry.child.try_wait() {
                Ok(Some(status)) => {
                    running.remove(&id);
                    changes.extend(self.finish(id, status.code(), now)?);
                }
                Ok(None) if now >= entry.deadline => {
                    let mut gone = running.remove(&id).expect("present");
                    kill_group(gone.child.id());
                    let _ = gone.child.wait();
                    changes.push(self.end_running(id, JobState::Timeout, now, None, Some("timeout"))?);
                }
                Ok(None) => {}
                Err(e) => {
                    tracing::error!(job = %id, error = %e, "cannot poll job process");
                    let mut gone = running.remove(&id).expect("present");
                    kill_group(gone.child.id());
                    let _ = gone.child.wait();
                    changes.push(self.end_running(id, JobState::Failed, now, None, Some("lost-process"))?);
                }
            }
        }

        while running.len() < self.config.slots {
            let next: Option<JobId> = self.db.read(|c| {
                Ok(c.query_row("SELECT id FROM jobs WHERE state = 'QUEUED' ORDER BY id LIMIT 1", [], |r| r.get(0))
                    .optional()?)
            })?;
            let Some(id) = next else { break };
            let (change, started) = self.start(id, now)?;
            changes.push(change);
            match started {
                Ok(proc_) => {
                    running.insert(id, proc_);
                }
                Err(reason) => {
                    changes.push(self.end_running(id, JobState::Failed, now, None, Some(&reason))?);
                }
            }
        }
        Ok(changes)
    }

    /// Mark the job RUNNING, then materialize inputs and launch. Launch
    /// problems come back as `Err(reason)` for the caller to record.
    fn start(&self, id: JobId, now: i64) -> Result<(StateChange, std::result::Result<RunningJob, String>)> {
        let job = self.job_unchecked(id)?;
        let start = now.max(job.submit_ts);
        let change = self.db.tx(|tx| transition(tx, id, JobState::Running, start, &[("start_ts", &start)]))?;
        let launched = self.launch(&job).map_err(|e| {
            tracing::warn!(job = %id, error = %e, "job failed to launch");
            e.code().to_string()
        });
        let launched = launched.and_then(|child| {
            let pid = child.id() as i64;
            self.db
                .tx(|tx| Ok(tx.execute("UPDATE jobs SET pid = ?2 WHERE id = ?1", params![id, pid])?))
                .map_err(|e| e.code().to_string())?;
            let timeout = job.spec.timeout_ms.unwrap_or(self.config.default_timeout_ms);
            Ok(RunningJob { child, deadline: start.saturating_add(timeout) })
        });
        Ok((change, launched))
    }

    fn launch(&self, job: &Job) -> Result<Child> {
        let analytic = self.catalog.analytic_unchecked(job.spec.analytic_id)?;
        let dataset = self.catalog.dataset_unchecked(job.spec.dataset_id)?;
        let dir = self.workdir(job.id);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        let dir = fs::canonicalize(&dir)?;
        let paths = JobPaths {
            artifact: dir.join(ARTIFACT_FILE),
            dataset: dir.join(DATASET_FILE),
            params: dir.join(PARAMS_FILE),
            output: dir.join(OUTPUT_FILE),
        };
        let blobs = self.catalog.blobs();
        blobs.copy_to(&dataset.content_ref, &paths.dataset)?;
        blobs.copy_to(&analytic.artifact_ref, &paths.artifact)?;
        let params = merge_params(&analytic.default_params, &job.spec.params);
        fs::write(&paths.params, serde_json::to_vec_pretty(&params).map_err(|e| Error::Storage(e.to_string()))?)?;
        let command = self.registry.read().render(&analytic.runtime_id, &paths)?;
        let log = File::create(dir.join(LOG_FILE))?;
        let child = Command::new("sh")
            .arg("-c")
            .arg(&command)
            .current_dir(&dir)
            .stdin(Stdio::null())
            .stdout(log.try_clone()?)
            .stderr(log)
            .process_group(0)
            .spawn()?;
        tracing::info!(job = %job.id, runtime = %analytic.runtime_id, pid = child.id(), "job started");
        Ok(child)
    }

    fn end_running(
        &self,
        id: JobId,
        to: JobState,
        now: i64,
        exit_code: Option<i32>,
        reason: Option<&str>,
    ) -> Result<StateChange> {
        self.db.tx(|tx| {
            let job = load_job(tx, id)?;
            let end = now.max(job.start_ts.unwrap_or(job.submit_ts));
            transition(tx, id, to, end, &[("end_ts", &end), ("exit_code", &exit_code), ("reason", &reason)])
        })
    }

    /// Reap a finished process. Exit 0 with a valid result document is
    /// SUCCEEDED; anything else is FAILED.
    fn finish(&self, id: JobId, code: Option<i32>, now: i64) -> Result<Vec<StateChange>> {
        if code != Some(0) {
            return Ok(vec![self.end_running(id, JobState::Failed, now, code, Some("nonzero-exit"))?]);
        }
        let output = self.workdir(id).join(OUTPUT_FILE);
        let parsed = match fs::read(&output) {
            Ok(bytes) => parse_result_document(&bytes, id),
            Err(_) => Err(Error::ResultMissing),
        };
        let result = match parsed {
            Ok(r) => r,
            Err(e) => return Ok(vec![self.end_running(id, JobState::Failed, now, code, Some(e.code()))?]),
        };
        let doc = serde_json::to_vec(&result).map_err(|e| Error::Storage(e.to_string()))?;
        let blob = self.catalog.blobs().put_bytes(&doc)?;
        let change = self.db.tx(|tx| {
            let job = load_job(tx, id)?;
            let end = now.max(job.start_ts.unwrap_or(job.submit_ts));
            let change = transition(
                tx,
                id,
                JobState::Succeeded,
                end,
                &[("end_ts", &end), ("exit_code", &0), ("result_ref", &blob.digest)],
            )?;
            let done = load_job(tx, id)?;
            let samples = scoring::record_score_in(tx, &done, &result)?;
            if !samples.is_empty() {
                tracing::info!(job = %id, samples = samples.len(), "recorded score samples");
            }
            Ok(change)
        })?;
        Ok(vec![change])
    }

    /// The stored result of a SUCCEEDED job. Repeated calls return the same
    /// document.
    pub fn collect(&self, id: JobId) -> Result<AnalyticResult> {
        let job = self.job_unchecked(id)?;
        let Some(result_ref) = job.result_ref.filter(|_| job.state == JobState::Succeeded) else {
            return Err(Error::ResultMissing);
        };
        let bytes = self.catalog.blobs().read(&result_ref)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::StorageCorrupt(format!("result of job {id}: {e}")))
    }

    pub fn result(&self, actor: &Principal, id: JobId) -> Result<AnalyticResult> {
        self.get(actor, id)?;
        self.collect(id)
    }

    /// Captured stdout and stderr of a job that has started.
    pub fn log(&self, actor: &Principal, id: JobId) -> Result<String> {
        let job = self.get(actor, id)?;
        match fs::read(self.config.workdir_root.join(&job.log_ref)) {
            Ok(bytes) => Ok(String::from_utf8_lossy(&bytes).into_owned()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(String::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn cancel(&self, actor: &Principal, id: JobId) -> Result<Job> {
        let mut running = self.running.lock();
        let job = self.job_unchecked(id)?;
        if !(actor.is_admin() || actor.user_id == job.submitted_by) {
            return Err(Error::NotAuthorized);
        }
        if job.state.is_terminal() {
            return Err(Error::AlreadyTerminal(job.state));
        }
        let now = now_ms();
        if let Some(mut proc_) = running.remove(&id) {
            kill_group(proc_.child.id());
            let _ = proc_.child.wait();
        }
        self.db.tx(|tx| {
            let current = load_job(tx, id)?;
            let end = now.max(current.start_ts.unwrap_or(current.submit_ts));
            transition(tx, id, JobState::Cancelled, end, &[("end_ts", &end), ("reason", &"cancelled")])
        })?;
        drop(running);
        self.job_unchecked(id)
    }

    /// Stop every running job as FAILED(`shutdown`).
    pub fn shutdown(&self, now: i64) -> Result<Vec<StateChange>> {
        let mut running = self.running.lock();
        let mut changes = Vec::new();
        for (id, mut proc_) in running.drain() {
            kill_group(proc_.child.id());
            let _ = proc_.child.wait();
            changes.push(self.end_running(id, JobState::Failed, now, None, Some("shutdown"))?);
        }
        Ok(changes)
    }

    /// Remove work directories of terminal jobs (admin only).
    pub fn purge_workdirs(&self, actor: &Principal) -> Result<usize> {
        if !actor.is_admin() {
            return Err(Error::NotAuthorized);
        }
        let terminal: Vec<JobId> = self.db.read(|c| {
            let mut stmt = c.prepare("SELECT id FROM jobs WHERE state NOT IN ('QUEUED', 'RUNNING')")?;
            let rows = stmt.query_map([], |r| r.get(0))?;
            Ok(rows.collect::<rusqlite::Result<_>>()?)
        })?;
        let mut removed = 0;
        for id in terminal {
            let dir = self.workdir(id);
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
                removed += 1;
            }
        }
        Ok(removed)
    }

    pub fn workdir_of(&self, id: JobId) -> PathBuf {
        self.workdir(id)
    }
}

impl Drop for Executor {
    fn drop(&mut self) {
        for (_, mut proc_) in self.running.get_mut().drain() {
            kill_group(proc_.child.id());
            let _ = proc_.child.wait();
        }
    }
}

/// Check an event log against the legal transition relation: each job's
/// first event is its submission, every later event starts where the
/// previous one ended, and nothing follows a terminal state.
pub fn check_event_log(events: &[StateChange]) -> std::result::Result<(), String> {
    let mut last: HashMap<JobId, JobState> = HashMap::new();
    for e in events {
        let prev = last.get(&e.job_id).copied();
        if e.from != prev {
            return Err(format!("job {}: event from {:?} but last state was {:?}", e.job_id, e.from, prev));
        }
        if !JobState::can_transition(prev, e.to) {
            return Err(format!("job {}: illegal transition {:?} -> {}", e.job_id, prev, e.to));
        }
        last.insert(e.job_id, e.to);
    }
    Ok(())
}
