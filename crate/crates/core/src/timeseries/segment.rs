//! Append-only segment files holding framed ingest batches.
//!
//! File layout: an 8-byte header (`SHTS` + u32 LE format version) followed
//! by records `[u32 LE payload len][u32 LE crc32(payload)][payload]`. One
//! record is one ingest batch, so a batch is either fully present or absent.
//! A torn record at the tail of the newest segment (crash mid-append) is
//! truncated away on open; damage anywhere else is reported as corruption.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::TelemetryPoint;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SHTS";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: u64 = 8;
const ROLL_BYTES: u64 = 64 * 1024 * 1024;

pub(crate) fn encode_batch(points: &[TelemetryPoint]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + points.len() * 40);
    out.extend_from_slice(&(points.len() as u32).to_le_bytes());
    for p in points {
        for s in [&p.source, &p.channel] {
            out.extend_from_slice(&(s.len() as u16).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        out.extend_from_slice(&p.ts.to_le_bytes());
        out.extend_from_slice(&p.value.to_bits().to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.buf.len() < n {
            return None;
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Some(head)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self) -> Option<String> {
        let len = self.u16()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).ok()
    }
}

pub(crate) fn decode_batch(payload: &[u8]) -> Option<Vec<TelemetryPoint>> {
    let mut c = Cursor { buf: payload };
    let n = c.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let source = c.string()?;
        let channel = c.string()?;
        let ts = c.u64()? as i64;
        let value = f64::from_bits(c.u64()?);
        out.push(TelemetryPoint { source, channel, ts, value });
    }
    c.buf.is_empty().then_some(out)
}

fn segment_name(n: u64) -> String {
    format!("seg-{n:08}.log")
}

fn segment_number(path: &Path) -> Option<u64> {
    let name = path.file_name()?.to_str()?;
    name.strip_prefix("seg-")?.strip_suffix(".log")?.parse().ok()
}

pub(crate) struct SegmentLog {
    dir: PathBuf,
    current: File,
    current_no: u64,
    current_len: u64,
}

impl SegmentLog {
    /// Open (or create) the log under `dir`, replaying every stored batch in
    /// write order through `apply`.
    pub(crate) fn open(dir: &Path, mut apply: impl FnMut(Vec<TelemetryPoint>)) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut segments: Vec<(u64, PathBuf)> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter_map(|p| segment_number(&p).map(|n| (n, p)))
            .collect();
        segments.sort();
        let last = segments.len().saturating_sub(1);
        for (i, (_, path)) in segments.iter().enumerate() {
            let good_len = replay_segment(path, &mut apply, i == last)?;
            if i == last {
                let f = OpenOptions::new().write(true).open(path)?;
                if f.metadata()?.len() != good_len {
                    tracing::warn!(segment = %path.display(), good_len, "truncating torn tail");
                    f.set_len(good_len)?;
                    f.sync_all()?;
                }
            }
        }
        match segments.last() {
            Some((n, path)) => {
                let mut current = OpenOptions::new().read(true).write(true).open(path)?;
                let current_len = current.seek(SeekFrom::End(0))?;
                Ok(SegmentLog { dir: dir.to_path_buf(), current, current_no: *n, current_len })
            }
            None => {
                let (current, current_len) = create_segment(&dir.join(segment_name(1)))?;
                Ok(SegmentLog { dir: dir.to_path_buf(), current, current_no: 1, current_len })
            }
        }
    }

    /// Append one batch durably. On failure the segment is rolled back to
    /// its previous length so no partial record remains.
    pub(crate) fn append(&mut self, payload: &[u8]) -> Result<()> {
        if self.current_len >= ROLL_BYTES {
            self.current_no += 1;
            let (f, len) = create_segment(&self.dir.join(segment_name(self.current_no)))?;
            self.current = f;
            self.current_len = len;
        }
        let mut frame = Vec::with_capacity(payload.len() + 8);
        frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        frame.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
        frame.extend_from_slice(payload);
        let res = self
            .current
            .seek(SeekFrom::Start(self.current_len))
            .and_then(|_| self.current.write_all(&frame))
            .and_then(|_| self.current.sync_data());
        match res {
            Ok(()) => {
                self.current_len += frame.len() as u64;
                Ok(())
            }
            Err(e) => {
                let _ = self.current.set_len(self.current_len);
                Err(e.into())
            }
        }
    }
}

fn create_segment(path: &Path) -> Result<(File, u64)> {
    let mut f = OpenOptions::new().read(true).write(true).create(true).truncate(true).open(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&FORMAT_VERSION.to_le_bytes())?;
    f.sync_all()?;
    if let Some(parent) = path.parent() {
        // make the new directory entry durable
        if let Ok(d) = File::open(parent) {
            let _ = d.sync_all();
        }
    }
    Ok((f, HEADER_LEN))
}

/// Returns the length of the valid prefix of the segment.
fn replay_segment(path: &Path, apply: &mut impl FnMut(Vec<TelemetryPoint>), is_last: bool) -> Result<u64> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let corrupt = |what: &str| Error::StorageCorrupt(format!("{}: {what}", path.display()));
    if bytes.len() < HEADER_LEN as usize {
        // a crash right after creating the file
        return if is_last { rewrite_header(path) } else { Err(corrupt("short header")) };
    }
    if &bytes[..4] != MAGIC || u32::from_le_bytes(bytes[4..8].try_into().unwrap()) != FORMAT_VERSION {
        return Err(corrupt("bad header"));
    }
    let mut pos = HEADER_LEN as usize;
    while pos < bytes.len() {
        let frame = (|| {
            let head = bytes.get(pos..pos + 8)?;
            let len = u32::from_le_bytes(head[..4].try_into().unwrap()) as usize;
            let crc = u32::from_le_bytes(head[4..].try_into().unwrap());
            let payload = bytes.get(pos + 8..pos + 8 + len)?;
            (crc32fast::hash(payload) == crc).then_some((len, payload))
        })();
        match frame.and_then(|(len, payload)| decode_batch(payload).map(|b| (len, b))) {
            Some((len, batch)) => {
                apply(batch);
                pos += 8 + len;
            }
            None if is_last => break,
            None => return Err(corrupt("damaged record")),
        }
    }
    Ok(pos as u64)
}

fn rewrite_header(path: &Path) -> Result<u64> {
    create_segment(path).map(|(_, len)| len)
}
