//! Bounded trace files with atomic sealing and sidecar metadata.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::naming::{self, file_name, validate_identifier};
use super::CaptureError;
use crate::formats::erf::{ErfTimestamp, TraceRecord};
use crate::time::{erf_to_utc, iso_format};

pub const TMP_SUFFIX: &str = ".tmp";
pub const META_SUFFIX: &str = ".meta.json";

/// When to close the current file: whichever bound is hit first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RotationPolicy {
    max_bytes: u64,
    max_interval: Duration,
}

impl RotationPolicy {
    pub fn new(max_bytes: u64, max_interval: Duration) -> Result<Self, CaptureError> {
        if max_bytes == 0 || max_interval.is_zero() {
            return Err(CaptureError::BadPolicy);
        }
        Ok(RotationPolicy {
            max_bytes,
            max_interval,
        })
    }

    pub fn max_bytes(&self) -> u64 {
        self.max_bytes
    }

    pub fn max_interval(&self) -> Duration {
        self.max_interval
    }

    /// The interval in ERF fixed-point units, rounded down so a file never
    /// spans more than the configured time.
    fn interval_raw(&self) -> u64 {
        let raw = (self.max_interval.as_nanos() << 32) / 1_000_000_000;
        raw.min(u64::MAX as u128) as u64
    }
}

impl Default for RotationPolicy {
    fn default() -> Self {
        RotationPolicy {
            max_bytes: 256 * 1024 * 1024,
            max_interval: Duration::from_secs(300),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileState {
    Open,
    Sealed,
    Expired,
}

impl FileState {
    pub fn as_str(self) -> &'static str {
        match self {
            FileState::Open => "open",
            FileState::Sealed => "sealed",
            FileState::Expired => "expired",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "open" => Some(FileState::Open),
            "sealed" => Some(FileState::Sealed),
            "expired" => Some(FileState::Expired),
            _ => None,
        }
    }
}

/// Per-file metadata, written next to the trace as `<stem>.meta.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFileMeta {
    pub file_name: String,
    pub probe_id: String,
    pub link_id: String,
    #[serde(with = "iso_format")]
    pub t_start: DateTime<Utc>,
    #[serde(with = "iso_format")]
    pub t_end: DateTime<Utc>,
    pub packet_count: u64,
    /// Bytes stored in the file (post-strip ERF records).
    pub byte_count: u64,
    /// Sum of original wire lengths.
    pub wire_bytes: u64,
    /// Sum of the ERF loss counters.
    pub lost_packets: u64,
    pub anonymized: bool,
    pub state: FileState,
}

impl TraceFileMeta {
    /// Path of the trace file below an archive root.
    pub fn relative_path(&self) -> PathBuf {
        Path::new(&self.probe_id)
            .join(&self.link_id)
            .join(&self.file_name)
    }

    pub fn sidecar_name(&self) -> String {
        sidecar_name(&self.file_name)
    }
}

/// `<stem>.meta.json` for a trace file name.
pub fn sidecar_name(trace_file: &str) -> String {
    let stem = trace_file
        .strip_suffix(&format!(".{}", naming::TRACE_EXT))
        .unwrap_or(trace_file);
    format!("{stem}{META_SUFFIX}")
}

pub fn read_sidecar(path: &Path) -> Result<TraceFileMeta, CaptureError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CaptureError::BadSidecar {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = tmp_path(path);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(TMP_SUFFIX);
    PathBuf::from(s)
}

struct OpenFile {
    final_path: PathBuf,
    tmp_path: PathBuf,
    name: String,
    out: BufWriter<File>,
    min_ts: ErfTimestamp,
    max_ts: ErfTimestamp,
    packets: u64,
    bytes: u64,
    wire_bytes: u64,
    lost: u64,
}

/// Writes records into `<root>/<probe>/<link>/`, one bounded file at a
/// time. Files are written under a `.tmp` name and renamed when sealed, so
/// a poller never sees a partial trace.
pub struct RotatingWriter {
    dir: PathBuf,
    probe_id: String,
    link_id: String,
    policy: RotationPolicy,
    anonymized: bool,
    next_seq: u32,
    current: Option<OpenFile>,
    scratch: Vec<u8>,
}

impl RotatingWriter {
    pub fn new(
        archive_root: &Path,
        probe_id: &str,
        link_id: &str,
        policy: RotationPolicy,
        anonymized: bool,
    ) -> Result<Self, CaptureError> {
        validate_identifier(probe_id)?;
        validate_identifier(link_id)?;
        let dir = archive_root.join(probe_id).join(link_id);
        fs::create_dir_all(&dir)?;
        Ok(RotatingWriter {
            dir,
            probe_id: probe_id.to_string(),
            link_id: link_id.to_string(),
            policy,
            anonymized,
            next_seq: 0,
            current: None,
            scratch: Vec::new(),
        })
    }

    /// First sequence number to use; lets a restarted writer continue a
    /// numbering.
    pub fn with_start_seq(mut self, seq: u32) -> Self {
        self.next_seq = seq;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn policy(&self) -> &RotationPolicy {
        &self.policy
    }

    /// Append one record, sealing the current file first if the record
    /// would push it past either bound. Returns the sealed file's metadata.
    pub fn append(&mut self, rec: &TraceRecord) -> Result<Option<TraceFileMeta>, CaptureError> {
        let size = rec.rlen() as u64;
        if size > self.policy.max_bytes {
            return Err(CaptureError::RecordExceedsPolicy {
                record: size,
                max_bytes: self.policy.max_bytes,
            });
        }
        let mut sealed = None;
        if let Some(cur) = &self.current {
            let too_big = cur.bytes + size > self.policy.max_bytes;
            // span of the file if the record were added; for monotonic input
            // this is rec.ts - open time
            let span = cur.max_ts.max(rec.ts).0 - cur.min_ts.min(rec.ts).0;
            let too_old = span > self.policy.interval_raw();
            if too_big || too_old {
                sealed = Some(self.seal()?);
            }
        }
        if self.current.is_none() {
            self.open(rec.ts)?;
        }
        let cur = self.current.as_mut().expect("opened above");
        self.scratch.clear();
        rec.encode_into(&mut self.scratch)?;
        cur.out.write_all(&self.scratch).map_err(CaptureError::from_io)?;
        cur.packets += 1;
        cur.bytes += size;
        cur.wire_bytes += rec.wlen as u64;
        cur.lost += rec.lctr as u64;
        cur.min_ts = cur.min_ts.min(rec.ts);
        cur.max_ts = cur.max_ts.max(rec.ts);
        Ok(sealed)
    }

    fn open(&mut self, ts: ErfTimestamp) -> Result<(), CaptureError> {
        let name = file_name(&self.probe_id, &self.link_id, erf_to_utc(ts), self.next_seq)?;
        self.next_seq = self.next_seq.wrapping_add(1);
        let final_path = self.dir.join(&name);
        if final_path.exists() {
            return Err(CaptureError::NameCollision(name));
        }
        let tmp_path = tmp_path(&final_path);
        let out = BufWriter::new(File::create(&tmp_path).map_err(CaptureError::from_io)?);
        self.current = Some(OpenFile {
            final_path,
            tmp_path,
            name,
            out,
            min_ts: ts,
            max_ts: ts,
            packets: 0,
            bytes: 0,
            wire_bytes: 0,
            lost: 0,
        });
        Ok(())
    }

    /// Close the current file: flush, write the sidecar, then rename the
    /// trace into place. An empty file is deleted and reported as
    /// [`CaptureError::EmptyFile`].
    pub fn seal(&mut self) -> Result<TraceFileMeta, CaptureError> {
        let Some(cur) = self.current.take() else {
            return Err(CaptureError::EmptyFile);
        };
        let file = cur.out.into_inner().map_err(|e| CaptureError::from_io(e.into_error()))?;
        if cur.packets == 0 {
            drop(file);
            fs::remove_file(&cur.tmp_path)?;
            return Err(CaptureError::EmptyFile);
        }
        file.sync_all().map_err(CaptureError::from_io)?;
        drop(file);
        let meta = TraceFileMeta {
            file_name: cur.name,
            probe_id: self.probe_id.clone(),
            link_id: self.link_id.clone(),
            t_start: erf_to_utc(cur.min_ts),
            t_end: erf_to_utc(cur.max_ts),
            packet_count: cur.packets,
            byte_count: cur.bytes,
            wire_bytes: cur.wire_bytes,
            lost_packets: cur.lost,
            anonymized: self.anonymized,
            state: FileState::Sealed,
        };
        let json = serde_json::to_vec_pretty(&meta).expect("meta serializes");
        write_atomic(&self.dir.join(meta.sidecar_name()), &json).map_err(CaptureError::from_io)?;
        fs::rename(&cur.tmp_path, &cur.final_path)?;
        Ok(meta)
    }

    /// Seal whatever is open. `None` when nothing was written.
    pub fn finish(&mut self) -> Result<Option<TraceFileMeta>, CaptureError> {
        match self.seal() {
            Ok(meta) => Ok(Some(meta)),
            Err(CaptureError::EmptyFile) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn has_open_file(&self) -> bool {
        self.current.is_some()
    }
}

impl Drop for RotatingWriter {
    fn drop(&mut self) {
        // an unsealed file stays as .tmp; it is never mistaken for a trace
        if let Some(cur) = self.current.as_mut() {
            let _ = cur.out.flush();
        }
    }
}
