use std::fmt;
use std::str::FromStr;

use rusqlite::Row;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::db::from_json;
use crate::error::{Error, Result};
use crate::ids::{AnalyticId, DatasetId, JobId, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
    Cancelled,
    Timeout,
}

impl JobState {
    pub const ALL: [JobState; 6] = [
        JobState::Queued,
        JobState::Running,
        JobState::Succeeded,
        JobState::Failed,
        JobState::Cancelled,
        JobState::Timeout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Queued => "QUEUED",
            JobState::Running => "RUNNING",
            JobState::Succeeded => "SUCCEEDED",
            JobState::Failed => "FAILED",
            JobState::Cancelled => "CANCELLED",
            JobState::Timeout => "TIMEOUT",
        }
    }

    pub fn is_terminal(self) -> bool {
        !matches!(self, JobState::Queued | JobState::Running)
    }

    /// The legal transition relation. `None` is the pre-submission state.
    pub fn can_transition(from: Option<JobState>, to: JobState) -> bool {
        use JobState::*;
        matches!(
            (from, to),
            (None, Queued)
                | (Some(Queued), Running | Cancelled)
                | (Some(Running), Succeeded | Failed | Cancelled | Timeout)
        )
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JobState {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        JobState::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::BadRequest(format!("unknown job state {s:?}")))
    }
}

/// What to run: one analytic against one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub analytic_id: AnalyticId,
    pub dataset_id: DatasetId,
    #[serde(default = "empty_object")]
    pub params: Value,
    #[serde(default)]
    pub timeout_ms: Option<i64>,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

impl JobSpec {
    pub fn new(analytic_id: AnalyticId, dataset_id: DatasetId, params: Value) -> Self {
        JobSpec { analytic_id, dataset_id, params, timeout_ms: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: JobId,
    #[serde(flatten)]
    pub spec: JobSpec,
    pub submitted_by: UserId,
    pub state: JobState,
    pub submit_ts: i64,
    pub start_ts: Option<i64>,
    pub end_ts: Option<i64>,
    pub exit_code: Option<i32>,
    pub result_ref: Option<String>,
    pub log_ref: String,
    /// Why a job ended in FAILED (e.g. `interrupted`, `result-malformed`).
    pub reason: Option<String>,
}

impl Job {
    pub(crate) fn from_row(r: &Row<'_>) -> rusqlite::Result<Self> {
        let params: String = r.get("params")?;
        let state: String = r.get("state")?;
        Ok(Job {
            id: r.get("id")?,
            spec: JobSpec {
                analytic_id: r.get("analytic_id")?,
                dataset_id: r.get("dataset_id")?,
                params: from_json(&params)?,
                timeout_ms: r.get("timeout_ms")?,
            },
            submitted_by: r.get("submitted_by")?,
            state: state.parse().map_err(|e: Error| {
                rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, Box::new(e))
            })?,
            submit_ts: r.get("submit_ts")?,
            start_ts: r.get("start_ts")?,
            end_ts: r.get("end_ts")?,
            exit_code: r.get("exit_code")?,
            result_ref: r.get("result_ref")?,
            log_ref: r.get("log_ref")?,
            reason: r.get("reason")?,
        })
    }
}

/// One recorded state transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateChange {
    pub job_id: JobId,
    pub from: Option<JobState>,
    pub to: JobState,
    pub ts: i64,
}

/// Validated output of a successful analytic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticResult {
    pub score: Option<f64>,
    pub payload: Value,
    pub produced_by: JobId,
}

/// Parse the JSON document an analytic wrote. It must be an object; an
/// optional numeric `score` must lie in `[0, 100]`; every other field is
/// kept verbatim as the payload.
pub fn parse_result_document(bytes: &[u8], job: JobId) -> Result<AnalyticResult> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| Error::ResultMalformed(e.to_string()))?;
    let Value::Object(mut fields) = doc else {
        return Err(Error::ResultMalformed("result must be a JSON object".into()));
    };
    let score = match fields.remove("score") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) => {
            let s = n.as_f64().ok_or_else(|| Error::ResultMalformed("score is not representable".into()))?;
            if !(0.0..=100.0).contains(&s) {
                return Err(Error::ScoreOutOfRange(s));
            }
            Some(s)
        }
        Some(other) => return Err(Error::ResultMalformed(format!("score must be a number, got {other}"))),
    };
    Ok(AnalyticResult { score, payload: Value::Object(fields), produced_by: job })
}
