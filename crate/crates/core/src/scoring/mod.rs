//! Facility dashboards: analytics bound to facilities as weighted metrics,
//! score samples from successful jobs, and composite scores over time.

mod composite;

use std::collections::HashMap;
use std::sync::Arc;

use rusqlite::{params, Connection, OptionalExtension, Row, Transaction};
use serde::{Deserialize, Serialize};

pub use composite::{composite_at, history, latest_at, weighted_mean, CompositeScore, Contribution};

use crate::auth::{Principal, Role, User};
use crate::catalog::{Catalog, Facility};
use crate::clock::now_ms;
use crate::db::Db;
use crate::error::{Error, Result};
use crate::executor::{AnalyticResult, Job, JobState};
use crate::ids::{AnalyticId, FacilityId, JobId, MetricId};

type Snapshot = (Vec<MetricBinding>, HashMap<MetricId, Vec<ScoreSample>>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBinding {
    pub id: MetricId,
    pub facility_id: FacilityId,
    pub analytic_id: AnalyticId,
    pub label: String,
    pub weight: f64,
    pub created_at: i64,
}

impl MetricBinding {
    fn from_row(r: &Row<'_>) -> rusqlite::Result<Self> {
        Ok(MetricBinding {
            id: r.get("id")?,
            facility_id: r.get("facility_id")?,
            analytic_id: r.get("analytic_id")?,
            label: r.get("label")?,
            weight: r.get("weight")?,
            created_at: r.get("created_at")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSample {
    pub metric_id: MetricId,
    pub ts: i64,
    pub score: f64,
    pub job_id: crate::ids::JobId,
}

impl ScoreSample {
    fn from_row(r: &Row<'_>) -> rusqlite::Result<Self> {
        Ok(ScoreSample { metric_id: r.get(0)?, ts: r.get(1)?, job_id: r.get(2)?, score: r.get(3)? })
    }
}

/// A binding with its most recent sample, for dashboard rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricView {
    #[serde(flatten)]
    pub binding: MetricBinding,
    pub latest: Option<ScoreSample>,
}

fn active_bindings(c: &Connection, where_col: &str, id: i64) -> rusqlite::Result<Vec<MetricBinding>> {
    let sql = format!("SELECT * FROM bindings WHERE {where_col} = ?1 AND detached_at IS NULL ORDER BY id");
    let mut stmt = c.prepare(&sql)?;
    let rows = stmt.query_map([id], MetricBinding::from_row)?;
    rows.collect()
}

/// Append one sample per active binding of the job's analytic whose
/// facility the submitter can read. Runs inside the caller's transaction.
pub(crate) fn record_score_in(tx: &Transaction<'_>, job: &Job, result: &AnalyticResult) -> Result<Vec<ScoreSample>> {
    let (Some(score), Some(ts), JobState::Succeeded) = (result.score, job.end_ts, job.state) else {
        return Ok(Vec::new());
    };
    let submitter = tx
        .query_row("SELECT * FROM users WHERE id = ?1", [job.submitted_by], User::from_row)
        .optional()?
        .map(|u| u.principal())
        .unwrap_or(Principal { user_id: job.submitted_by, role: Role::Analyst });
    let mut out = Vec::new();
    for b in active_bindings(tx, "analytic_id", job.spec.analytic_id.0)? {
        let facility = tx
            .query_row("SELECT * FROM facilities WHERE id = ?1", [b.facility_id], Facility::from_row)
            .optional()?;
        if !facility.is_some_and(|f| f.policy.can_read(&submitter)) {
            continue;
        }
        tx.execute(
            "INSERT OR IGNORE INTO samples(metric_id, ts, job_id, score) VALUES (?1, ?2, ?3, ?4)",
            params![b.id, ts, job.id, score],
        )?;
        out.push(ScoreSample { metric_id: b.id, ts, score, job_id: job.id });
    }
    Ok(out)
}

pub struct Scoring {
    db: Arc<Db>,
    catalog: Arc<Catalog>,
}

impl Scoring {
    pub fn new(db: Arc<Db>, catalog: Arc<Catalog>) -> Self {
        Scoring { db, catalog }
    }

    pub fn attach_metric(
        &self,
        actor: &Principal,
        facility_id: FacilityId,
        analytic_id: AnalyticId,
        label: &str,
        weight: f64,
    ) -> Result<MetricBinding> {
        self.catalog.facility(actor, facility_id)?;
        self.catalog.analytic(actor, analytic_id)?;
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::InvalidWeight);
        }
        let seed = self.latest_result_for(facility_id, analytic_id)?;
        let now = now_ms();
        self.db.tx(|tx| {
            let exists = tx
                .query_row(
                    "SELECT 1 FROM bindings WHERE facility_id = ?1 AND analytic_id = ?2 AND label = ?3
                     AND detached_at IS NULL",
                    params![facility_id, analytic_id, label],
                    |_| Ok(()),
                )
                .optional()?
                .is_some();
            if exists {
                return Err(Error::DuplicateBinding);
            }
            tx.execute(
                "INSERT INTO bindings(facility_id, analytic_id, label, weight, created_at) VALUES (?1, ?2, ?3, ?4, ?5)",
                params![facility_id, analytic_id, label, weight, now],
            )?;
            let id = MetricId(tx.last_insert_rowid());
            if let Some((job_id, ts, score)) = seed {
                tx.execute(
                    "INSERT INTO samples(metric_id, ts, job_id, score) VALUES (?1, ?2, ?3, ?4)",
                    params![id, ts, job_id, score],
                )?;
            }
            Ok(MetricBinding {
                id,
                facility_id,
                analytic_id,
                label: label.to_string(),
                weight,
                created_at: now,
            })
        })
    }

    /// The newest scored result of `analytic_id` whose submitter can read
    /// the facility, used to seed a fresh binding so the dashboard is not
    /// blank until the analytic runs again.
    fn latest_result_for(&self, facility_id: FacilityId, analytic_id: AnalyticId) -> Result<Option<(JobId, i64, f64)>> {
        let facility = self.catalog.facility_unchecked(facility_id)?;
        let done: Vec<Job> = self.db.read(|c| {
            let mut stmt = c.prepare(
                "SELECT * FROM jobs WHERE analytic_id = ?1 AND state = 'SUCCEEDED' ORDER BY end_ts DESC, id DESC",
            )?;
            let rows = stmt.query_map([analytic_id], Job::from_row)?;
            Ok(rows.collect::<rusqlite::Result<_>>()?)
        })?;
        for job in done {
            let submitter = self
                .catalog
                .principal_of(job.submitted_by)
                .unwrap_or(Principal { user_id: job.submitted_by, role: Role::Analyst });
            let (Some(end), Some(digest)) = (job.end_ts, job.result_ref.as_deref()) else { continue };
            if !facility.policy.can_read(&submitter) {
                continue;
            }
            let Ok(bytes) = self.catalog.blobs().read(digest) else { continue };
            let Ok(result) = serde_json::from_slice::<AnalyticResult>(&bytes) else { continue };
            if let Some(score) = result.score {
                return Ok(Some((job.id, end, score)));
            }
        }
        Ok(None)
    }

    pub fn binding(&self, id: MetricId) -> Result<MetricBinding> {
        self.db
            .read(|c| {
                Ok(c.query_row(
                    "SELECT * FROM bindings WHERE id = ?1 AND detached_at IS NULL",
                    [id],
                    MetricBinding::from_row,
                )
                .optional()?)
            })?
            .ok_or(Error::NotFound("metric"))
    }

    /// Remove a binding. Its samples stay stored but no longer count.
    pub fn detach_metric(&self, actor: &Principal, id: MetricId) -> Result<()> {
        let binding = self.binding(id)?;
        let facility = self.catalog.facility_unchecked(binding.facility_id)?;
        if !facility.policy.can_manage(actor) {
            return Err(Error::NotAuthorized);
        }
        self.db.tx(|tx| {
            tx.execute("UPDATE bindings SET detached_at = ?2 WHERE id = ?1", params![id, now_ms()])?;
            Ok(())
        })
    }

    pub fn record_score(&self, job: &Job, result: &AnalyticResult) -> Result<Vec<ScoreSample>> {
        self.db.tx(|tx| record_score_in(tx, job, result))
    }

    pub fn bindings(&self, facility_id: FacilityId) -> Result<Vec<MetricBinding>> {
        self.db.read(|c| Ok(active_bindings(c, "facility_id", facility_id.0)?))
    }

    /// All samples of a metric ordered by `(ts, job_id)`.
    pub fn samples(&self, metric_id: MetricId) -> Result<Vec<ScoreSample>> {
        self.db.read(|c| Ok(load_samples(c, metric_id)?))
    }

    fn snapshot(&self, facility_id: FacilityId) -> Result<Snapshot> {
        self.catalog.facility_unchecked(facility_id)?;
        self.db.read(|c| {
            let bindings = active_bindings(c, "facility_id", facility_id.0)?;
            let mut samples = HashMap::new();
            for b in &bindings {
                samples.insert(b.id, load_samples(c, b.id)?);
            }
            Ok((bindings, samples))
        })
    }

    pub fn composite(&self, facility_id: FacilityId, at: i64) -> Result<CompositeScore> {
        let (bindings, samples) = self.snapshot(facility_id)?;
        Ok(composite_at(facility_id, &bindings, &samples, at))
    }

    pub fn history(&self, facility_id: FacilityId, from: i64, to: i64) -> Result<Vec<CompositeScore>> {
        if from >= to {
            return Err(Error::InvalidRange);
        }
        let (bindings, samples) = self.snapshot(facility_id)?;
        Ok(history(facility_id, &bindings, &samples, from, to))
    }

    /// Dashboard rows for a readable facility.
    pub fn metrics(&self, actor: &Principal, facility_id: FacilityId) -> Result<Vec<MetricView>> {
        self.catalog.facility(actor, facility_id)?;
        let (bindings, samples) = self.snapshot(facility_id)?;
        Ok(bindings
            .into_iter()
            .map(|b| {
                let latest = samples.get(&b.id).and_then(|s| s.last().cloned());
                MetricView { binding: b, latest }
            })
            .collect())
    }
}

fn load_samples(c: &Connection, metric_id: MetricId) -> rusqlite::Result<Vec<ScoreSample>> {
    let mut stmt =
        c.prepare("SELECT metric_id, ts, job_id, score FROM samples WHERE metric_id = ?1 ORDER BY ts, job_id")?;
    let rows = stmt.query_map([metric_id], ScoreSample::from_row)?;
    rows.collect()
}

/// `ts,value` rows for external plotting; absent values are left empty.
pub fn history_csv(entries: &[CompositeScore]) -> String {
    let mut out = String::from("ts,value\n");
    for e in entries {
        match e.value {
            Some(v) => out.push_str(&format!("{},{v:?}\n", e.ts)),
            None => out.push_str(&format!("{},\n", e.ts)),
        }
    }
    out
}
