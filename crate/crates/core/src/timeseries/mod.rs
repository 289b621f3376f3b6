//! Streaming telemetry: ingestion, range queries and dataset extraction.
//!
//! Points are identified by `(source, channel, ts)`; re-ingesting a key
//! overwrites its value. Batches are appended to a [`segment`] log and then
//! applied to an in-memory index, both under one write lock, so a query
//! always sees whole batches.

mod query;
mod segment;
pub mod synth;

use std::collections::{BTreeMap, HashMap};
use std::ops::Bound;
use std::path::Path;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

pub use query::{aggregate, Agg, ChannelSeries, SeriesQuery};
pub use synth::{synth_nilm, DeviceSpec, SynthSpec};

use crate::auth::Principal;
use crate::catalog::{Catalog, Dataset, DatasetMeta, Origin};
use crate::error::{Error, Result};
use segment::SegmentLog;

const MAX_NAME_BYTES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryPoint {
    pub source: String,
    pub channel: String,
    pub ts: i64,
    pub value: f64,
}

impl TelemetryPoint {
    pub fn is_valid(&self) -> bool {
        self.ts >= 0
            && self.value.is_finite()
            && !self.source.is_empty()
            && !self.channel.is_empty()
            && self.source.len() <= MAX_NAME_BYTES
            && self.channel.len() <= MAX_NAME_BYTES
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
}

type ChannelMap = HashMap<String, BTreeMap<i64, f64>>;

struct Inner {
    index: HashMap<String, ChannelMap>,
    log: SegmentLog,
    points: usize,
}

impl Inner {
    fn apply(index: &mut HashMap<String, ChannelMap>, points: &mut usize, batch: Vec<TelemetryPoint>) {
        for p in batch {
            let series = index.entry(p.source).or_default().entry(p.channel).or_default();
            if series.insert(p.ts, p.value).is_none() {
                *points += 1;
            }
        }
    }
}

pub struct SeriesStore {
    inner: RwLock<Inner>,
}

impl SeriesStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let mut index = HashMap::new();
        let mut points = 0;
        let log = SegmentLog::open(dir, |batch| Inner::apply(&mut index, &mut points, batch))?;
        Ok(SeriesStore { inner: RwLock::new(Inner { index, log, points }) })
    }

    /// Store every valid point; invalid ones are skipped and counted. The
    /// whole batch is durable before this returns, or nothing is stored.
    pub fn ingest_batch(&self, points: Vec<TelemetryPoint>) -> Result<IngestReport> {
        let total = points.len();
        let valid: Vec<TelemetryPoint> = points.into_iter().filter(TelemetryPoint::is_valid).collect();
        let report = IngestReport { accepted: valid.len(), rejected: total - valid.len() };
        if valid.is_empty() {
            return Ok(report);
        }
        let payload = segment::encode_batch(&valid);
        let mut inner = self.inner.write();
        inner.log.append(&payload)?;
        let Inner { index, points, .. } = &mut *inner;
        Inner::apply(index, points, valid);
        Ok(report)
    }

    /// Number of distinct stored keys.
    pub fn len(&self) -> usize {
        self.inner.read().points
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sources(&self) -> Vec<String> {
        let mut s: Vec<_> = self.inner.read().index.keys().cloned().collect();
        s.sort();
        s
    }

    /// Answer a query: raw points in `[from, to)`, or one aggregate per
    /// non-empty bucket. Channels come back in request order, deduplicated.
    pub fn query_range(&self, q: &SeriesQuery) -> Result<Vec<ChannelSeries>> {
        let bucket = q.validate()?;
        let inner = self.inner.read();
        let source = inner.index.get(&q.source);
        let mut out: Vec<ChannelSeries> = Vec::with_capacity(q.channels.len());
        for channel in &q.channels {
            if out.iter().any(|c| &c.channel == channel) {
                continue;
            }
            let raw: Vec<(i64, f64)> = source
                .and_then(|s| s.get(channel))
                .map(|series| {
                    series.range((Bound::Included(q.from), Bound::Excluded(q.to))).map(|(t, v)| (*t, *v)).collect()
                })
                .unwrap_or_default();
            let points = match bucket {
                None => raw,
                Some((bucket_ms, agg)) => aggregate(&raw, q.from, bucket_ms, agg),
            };
            out.push(ChannelSeries { channel: channel.clone(), points });
        }
        Ok(out)
    }

    /// Materialize a raw window as a CSV catalog dataset owned by `actor`.
    pub fn extract_dataset(&self, catalog: &Catalog, actor: &Principal, req: &ExtractRequest) -> Result<Dataset> {
        if req.from >= req.to {
            return Err(Error::InvalidRange);
        }
        let q = SeriesQuery {
            source: req.source.clone(),
            channels: req.channels.clone(),
            from: req.from,
            to: req.to,
            bucket_ms: None,
            agg: None,
        };
        let series = self.query_range(&q)?;
        let csv = render_csv(&req.source, &series)?;
        let meta = DatasetMeta {
            name: req.name.clone(),
            description: format!(
                "extract of {} [{}, {}) channels {}",
                req.source,
                req.from,
                req.to,
                req.channels.join(",")
            ),
            format_hint: "csv".into(),
            collected_at: Some(req.from),
            collection_method: "telemetry extraction".into(),
            ..Default::default()
        };
        catalog.create_dataset_with_origin(actor, meta, csv.as_slice(), Origin::Extracted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractRequest {
    pub source: String,
    pub channels: Vec<String>,
    pub from: i64,
    pub to: i64,
    pub name: String,
}

pub const CSV_HEADER: [&str; 4] = ["source", "channel", "ts", "value"];

/// `source,channel,ts,value` rows sorted by `(ts, channel)`. Values use
/// Rust's shortest round-trip float formatting, so parsing them back
/// yields the identical bits.
pub fn render_csv(source: &str, series: &[ChannelSeries]) -> Result<Vec<u8>> {
    let mut rows: Vec<(i64, &str, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().map(move |(t, v)| (*t, s.channel.as_str(), *v)))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Storage(e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for (ts, channel, value) in rows {
        w.write_record([source, channel, &ts.to_string(), &format!("{value:?}")]).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Storage(e.to_string()))
}

pub fn parse_csv(bytes: &[u8]) -> Result<Vec<TelemetryPoint>> {
    let mut r = csv::Reader::from_reader(bytes);
    let bad = |m: String| Error::BadRequest(format!("extraction csv: {m}"));
    let header = r.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(bad("unexpected header".into()));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            Ok(TelemetryPoint {
                source: rec[0].to_string(),
                channel: rec[1].to_string(),
                ts: rec[2].parse().map_err(|_| bad(format!("bad ts {:?}", &rec[2])))?,
                value: rec[3].parse().map_err(|_| bad(format!("bad value {:?}", &rec[3])))?,
            })
        })
        .collect()
}

/// Parse newline-delimited JSON points. Blank lines are ignored; lines that
/// fail to parse are counted.
pub fn parse_ndjson(text: &str) -> (Vec<TelemetryPoint>, usize) {
    let mut points = Vec::new();
    let mut rejected = 0;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        match serde_json::from_str::<TelemetryPoint>(line) {
            Ok(p) => points.push(p),
            Err(_) => rejected += 1,
        }
    }
    (points, rejected)
}

pub fn to_ndjson(points: &[TelemetryPoint]) -> String {
    let mut out = String::with_capacity(points.len() * 64);
    for p in points {
        out.push_str(&serde_json::to_string(p).expect("telemetry point serializes"));
        out.push('\n');
    }
    out
}
