//! Weighted composite of the latest score per metric.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{MetricBinding, ScoreSample};
use crate::ids::{FacilityId, MetricId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub metric_id: MetricId,
    pub score: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeScore {
    pub facility_id: FacilityId,
    pub ts: i64,
    pub value: Option<f64>,
    pub contributing: Vec<Contribution>,
}

/// `Σ wᵢsᵢ / Σ wᵢ`, or `None` without contributions.
///
/// The result is clamped into `[min sᵢ, max sᵢ]`, so rounding can never
/// push it outside the contributing scores, and equal scores (in particular
/// a single metric) come back exactly.
pub fn weighted_mean(contributing: &[Contribution]) -> Option<f64> {
    let first = contributing.first()?;
    let (mut lo, mut hi) = (first.score, first.score);
    let (mut num, mut den) = (0.0, 0.0);
    for c in contributing {
        num += c.weight * c.score;
        den += c.weight;
        lo = lo.min(c.score);
        hi = hi.max(c.score);
    }
    if lo == hi {
        return Some(lo);
    }
    Some((num / den).clamp(lo, hi))
}

/// The latest sample with `ts <= at`; ties on `ts` go to the higher job id.
/// `samples` must be sorted by `(ts, job_id)`.
pub fn latest_at(samples: &[ScoreSample], at: i64) -> Option<&ScoreSample> {
    let n = samples.partition_point(|s| s.ts <= at);
    n.checked_sub(1).map(|i| &samples[i])
}

/// Composite of `bindings` at time `at`. Metrics without a sample at or
/// before `at` are left out of both sums.
pub fn composite_at(
    facility_id: FacilityId,
    bindings: &[MetricBinding],
    samples: &HashMap<MetricId, Vec<ScoreSample>>,
    at: i64,
) -> CompositeScore {
    let contributing: Vec<Contribution> = bindings
        .iter()
        .filter_map(|b| {
            let latest = latest_at(samples.get(&b.id)?, at)?;
            Some(Contribution { metric_id: b.id, score: latest.score, weight: b.weight })
        })
        .collect();
    CompositeScore { facility_id, ts: at, value: weighted_mean(&contributing), contributing }
}

/// Composite evaluated at every distinct sample timestamp in `[from, to)`,
/// ascending.
pub fn history(
    facility_id: FacilityId,
    bindings: &[MetricBinding],
    samples: &HashMap<MetricId, Vec<ScoreSample>>,
    from: i64,
    to: i64,
) -> Vec<CompositeScore> {
    let mut instants: Vec<i64> = bindings
        .iter()
        .filter_map(|b| samples.get(&b.id))
        .flatten()
        .map(|s| s.ts)
        .filter(|ts| (from..to).contains(ts))
        .collect();
    instants.sort_unstable();
    instants.dedup();
    instants.into_iter().map(|ts| composite_at(facility_id, bindings, samples, ts)).collect()
}
