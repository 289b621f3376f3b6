//! Range and bucketed aggregation over sorted series.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Agg {
    Mean,
    Min,
    Max,
    Last,
}

impl FromStr for Agg {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Agg::Mean),
            "min" => Ok(Agg::Min),
            "max" => Ok(Agg::Max),
            "last" => Ok(Agg::Last),
            _ => Err(Error::InvalidBucket("agg must be one of mean, min, max, last")),
        }
    }
}

impl fmt::Display for Agg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Agg::Mean => "mean",
            Agg::Min => "min",
            Agg::Max => "max",
            Agg::Last => "last",
        })
    }
}

/// A range query over one source. The window is half-open: `[from, to)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesQuery {
    pub source: String,
    pub channels: Vec<String>,
    pub from: i64,
    pub to: i64,
    #[serde(default)]
    pub bucket_ms: Option<i64>,
    #[serde(default)]
    pub agg: Option<Agg>,
}

impl SeriesQuery {
    pub fn raw(source: impl Into<String>, channels: &[&str], from: i64, to: i64) -> Self {
        SeriesQuery {
            source: source.into(),
            channels: channels.iter().map(|c| c.to_string()).collect(),
            from,
            to,
            bucket_ms: None,
            agg: None,
        }
    }

    pub fn bucketed(mut self, bucket_ms: i64, agg: Agg) -> Self {
        self.bucket_ms = Some(bucket_ms);
        self.agg = Some(agg);
        self
    }

    pub fn validate(&self) -> Result<Option<(i64, Agg)>> {
        if self.from >= self.to {
            return Err(Error::InvalidRange);
        }
        if self.channels.is_empty() {
            return Err(Error::InvalidQuery("at least one channel is required".into()));
        }
        match (self.bucket_ms, self.agg) {
            (None, None) => Ok(None),
            (Some(b), Some(agg)) if b > 0 => Ok(Some((b, agg))),
            (Some(_), Some(_)) => Err(Error::InvalidBucket("bucket_ms must be positive")),
            _ => Err(Error::InvalidBucket("bucket_ms and agg must be given together")),
        }
    }
}

/// One channel of a query answer; points ascending by timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSeries {
    pub channel: String,
    pub points: Vec<(i64, f64)>,
}

/// Collapse sorted points into buckets `[from + k*bucket_ms, from + (k+1)*bucket_ms)`.
/// Buckets without points are omitted. Every input `ts` must be `>= from`.
pub fn aggregate(points: &[(i64, f64)], from: i64, bucket_ms: i64, agg: Agg) -> Vec<(i64, f64)> {
    let mut out = Vec::new();
    let mut iter = points.iter().peekable();
    while let Some(&(ts, first)) = iter.next() {
        let k = (ts - from).div_euclid(bucket_ms);
        let start = from + k * bucket_ms;
        let end = start.saturating_add(bucket_ms);
        let (mut sum, mut count, mut lo, mut hi, mut last) = (first, 1u64, first, first, first);
        while let Some(&&(t, v)) = iter.peek() {
            if t >= end {
                break;
            }
            sum += v;
            count += 1;
            lo = lo.min(v);
            hi = hi.max(v);
            last = v;
            iter.next();
        }
        let value = match agg {
            Agg::Mean => sum / count as f64,
            Agg::Min => lo,
            Agg::Max => hi,
            Agg::Last => last,
        };
        out.push((start, value));
    }
    out
}
