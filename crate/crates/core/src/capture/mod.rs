//! Capture side: strip, anonymize, then rotate into bounded files.

pub mod merge;
pub mod naming;
pub mod rotate;
pub mod synth;

use std::io;
use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use crate::anon::{AnonStage, Anonymizer};
use crate::formats::erf::TraceRecord;
use crate::formats::FormatError;
use crate::headers::strip_payload;

pub use merge::{merge_directions, DirectionMerger, MergeError, SkewBound};
pub use naming::{file_name, parse_file_name, NameError, TraceName};
pub use rotate::{FileState, RotatingWriter, RotationPolicy, TraceFileMeta};
pub use synth::{synth_source, SynthConfig, SynthError};

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("rotation policy needs positive size and interval bounds")]
    BadPolicy,
    #[error("storage full; capture halted")]
    StorageFull,
    #[error("no records in file")]
    EmptyFile,
    #[error("record of {record} bytes cannot fit a {max_bytes} byte file")]
    RecordExceedsPolicy { record: u64, max_bytes: u64 },
    #[error("trace file {0} already exists")]
    NameCollision(String),
    #[error("bad sidecar {path}: {reason}")]
    BadSidecar { path: PathBuf, reason: String },
    #[error(transparent)]
    Name(#[from] NameError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(io::Error),
}

impl CaptureError {
    pub(crate) fn from_io(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::StorageFull {
            CaptureError::StorageFull
        } else {
            CaptureError::Io(e)
        }
    }
}

impl From<io::Error> for CaptureError {
    fn from(e: io::Error) -> Self {
        CaptureError::from_io(e)
    }
}

/// Running totals of a capture session.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PipelineStats {
    pub records: u64,
    /// Bytes written to trace files (ERF records after stripping).
    pub stored_bytes: u64,
    pub wire_bytes: u64,
    pub payload_bytes_removed: u64,
    /// Frames shorter than an Ethernet header, kept as they are.
    pub runt_frames: u64,
    pub anonymized: u64,
    /// Records the anonymizer could not rewrite (not IPv4).
    pub anon_skipped: u64,
    pub files_sealed: u64,
}

/// Strip, anonymize, rotate: the fixed stage order of the capture path.
pub struct CapturePipeline {
    anon: Option<AnonStage>,
    writer: RotatingWriter,
    stats: PipelineStats,
}

impl CapturePipeline {
    /// `anon` of `None` writes real addresses and marks the files as not
    /// anonymized.
    pub fn new(writer: RotatingWriter, anon: Option<Anonymizer>) -> Self {
        CapturePipeline {
            anon: anon.map(AnonStage::new),
            writer,
            stats: PipelineStats::default(),
        }
    }

    pub fn ingest(&mut self, mut rec: TraceRecord) -> Result<Option<TraceFileMeta>, CaptureError> {
        match strip_payload(&mut rec) {
            Ok(removed) => self.stats.payload_bytes_removed += removed as u64,
            Err(_) => self.stats.runt_frames += 1,
        }
        if let Some(stage) = self.anon.as_mut() {
            stage.apply(&mut rec);
            self.stats.anonymized = stage.anonymized;
            self.stats.anon_skipped = stage.skipped;
        }
        let sealed = self.writer.append(&rec)?;
        self.stats.records += 1;
        self.stats.stored_bytes += rec.rlen() as u64;
        self.stats.wire_bytes += rec.wlen as u64;
        if sealed.is_some() {
            self.stats.files_sealed += 1;
        }
        Ok(sealed)
    }

    /// Seal the last file.
    pub fn finish(&mut self) -> Result<Option<TraceFileMeta>, CaptureError> {
        let sealed = self.writer.finish()?;
        if sealed.is_some() {
            self.stats.files_sealed += 1;
        }
        Ok(sealed)
    }

    pub fn stats(&self) -> &PipelineStats {
        &self.stats
    }

    pub fn writer(&self) -> &RotatingWriter {
        &self.writer
    }
}
