//! Trace-file catalog: ingest, search, expiry, pinning and the on-disk
//! consistency audit.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use rusqlite::types::ToSql;
use rusqlite::{params, OptionalExtension, Row, Transaction};
use serde::Serialize;
use tracevault::capture::naming::{parse_file_name, TRACE_EXT};
use tracevault::capture::rotate::{read_sidecar, META_SUFFIX, TMP_SUFFIX};
use tracevault::capture::{FileState, TraceFileMeta};
use tracevault::formats::erf::{ErfReader, ErfTimestamp};
use tracevault::headers::parse_headers;
use tracevault::summary::{TierName, TimeSeries};
use tracevault::time::iso_format;

use crate::access::log_event;
use crate::retention::RetentionPolicy;
use crate::{from_nanos, to_nanos, Archive, ArchiveError, Result};

/// Largest series the throughput query will materialize.
const MAX_BINS: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CatalogEntry {
    #[serde(flatten)]
    pub meta: TraceFileMeta,
    pub tier: TierName,
    #[serde(with = "iso_format")]
    pub ingested_at: DateTime<Utc>,
    pub file_present: bool,
    pub pinned: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SearchFilter {
    pub probe: Option<String>,
    pub link: Option<String>,
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
    pub tier: Option<TierName>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ExpireReport {
    pub removed: Vec<String>,
    /// Files that could not be deleted, with the reason. They keep
    /// `file_present` and are retried on the next pass.
    pub failed: Vec<(String, String)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub ingested: Vec<String>,
    pub duplicates: Vec<String>,
    pub errors: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditIssue {
    /// Catalog says the file is present but it is not on disk.
    MissingFile { file_name: String },
    /// Trace file on disk whose entry is marked expired.
    ExpiredOnDisk { file_name: String },
    /// Trace file on disk with no catalog entry at all.
    Untracked { path: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub entries: u64,
    pub present_entries: u64,
    pub files_on_disk: u64,
    pub issues: Vec<AuditIssue>,
}

impl AuditReport {
    pub fn is_consistent(&self) -> bool {
        self.issues.is_empty()
    }

    /// One JSON object per issue, then a summary line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for i in &self.issues {
            out.push_str(&serde_json::to_string(i).expect("plain data"));
            out.push('\n');
        }
        let summary = serde_json::json!({
            "kind": "summary",
            "entries": self.entries,
            "present_entries": self.present_entries,
            "files_on_disk": self.files_on_disk,
            "issues": self.issues.len(),
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

const ENTRY_COLS: &str = "file_name, probe_id, link_id, t_start, t_end, packet_count, byte_count, \
     wire_bytes, lost_packets, anonymized, state, tier, ingested_at, file_present, pinned";

fn entry_from_row(r: &Row<'_>) -> rusqlite::Result<CatalogEntry> {
    let text_err = |i: usize, what: &str| {
        rusqlite::Error::FromSqlConversionFailure(
            i,
            rusqlite::types::Type::Text,
            format!("bad {what}").into(),
        )
    };
    let state: String = r.get(10)?;
    let tier: String = r.get(11)?;
    Ok(CatalogEntry {
        meta: TraceFileMeta {
            file_name: r.get(0)?,
            probe_id: r.get(1)?,
            link_id: r.get(2)?,
            t_start: from_nanos(r.get(3)?),
            t_end: from_nanos(r.get(4)?),
            packet_count: r.get::<_, i64>(5)? as u64,
            byte_count: r.get::<_, i64>(6)? as u64,
            wire_bytes: r.get::<_, i64>(7)? as u64,
            lost_packets: r.get::<_, i64>(8)? as u64,
            anonymized: r.get(9)?,
            state: FileState::parse(&state).ok_or_else(|| text_err(10, "state"))?,
        },
        tier: tier.parse().map_err(|_| text_err(11, "tier"))?,
        ingested_at: from_nanos(r.get(12)?),
        file_present: r.get(13)?,
        pinned: r.get(14)?,
    })
}

fn entry_in(tx: &Transaction<'_>, file_name: &str) -> Result<Option<CatalogEntry>> {
    Ok(tx
        .query_row(
            &format!("SELECT {ENTRY_COLS} FROM entries WHERE file_name = ?1"),
            [file_name],
            entry_from_row,
        )
        .optional()?)
}

/// Per-second byte and packet totals plus the distinct source addresses of
/// one trace file.
#[derive(Default)]
struct FileSummary {
    seconds: HashMap<u32, (u64, u64)>,
    sources: BTreeSet<(u32, u32)>,
}

fn summarize(path: &Path) -> Result<FileSummary> {
    let mut s = FileSummary::default();
    let reader = ErfReader::new(BufReader::new(File::open(path)?));
    for rec in reader {
        let rec = rec.map_err(|source| ArchiveError::Trace {
            path: path.to_path_buf(),
            source,
        })?;
        let sec = rec.ts.secs();
        let e = s.seconds.entry(sec).or_default();
        e.0 += rec.wlen as u64;
        e.1 += 1;
        if let Some(src) = parse_headers(&rec.frame).ok().and_then(|h| h.src_ip) {
            s.sources.insert((sec, u32::from(src)));
        }
    }
    Ok(s)
}

fn window_secs(from: Option<DateTime<Utc>>, to: Option<DateTime<Utc>>) -> Result<()> {
    match (from, to) {
        (Some(f), Some(t)) if f > t => Err(ArchiveError::BadWindow),
        _ => Ok(()),
    }
}

impl Archive {
    /// Where the trace file for `meta` lives.
    pub fn trace_path(&self, meta: &TraceFileMeta) -> PathBuf {
        self.root().join(meta.relative_path())
    }

    /// Record a sealed trace file. Its per-second throughput and distinct
    /// sources are folded into the summary tables in the same transaction.
    pub fn ingest(&self, meta: &TraceFileMeta, tier: TierName, now: DateTime<Utc>) -> Result<CatalogEntry> {
        if meta.state != FileState::Sealed {
            return Err(ArchiveError::NotSealed(meta.file_name.clone()));
        }
        let name = parse_file_name(&meta.file_name).map_err(|_| ArchiveError::InvalidField {
            field: "file_name",
            value: meta.file_name.clone(),
        })?;
        if name.probe_id != meta.probe_id || name.link_id != meta.link_id {
            return Err(ArchiveError::InvalidField {
                field: "file_name",
                value: meta.file_name.clone(),
            });
        }
        let path = self.trace_path(meta);
        if !path.is_file() {
            return Err(ArchiveError::MissingFile(path));
        }
        // Cheap pre-check so duplicates do not pay for the file scan.
        if self.entry(&meta.file_name)?.is_some() {
            return Err(ArchiveError::DuplicateEntry(meta.file_name.clone()));
        }
        let summary = summarize(&path)?;

        let mut conn = self.write();
        let tx = conn.transaction()?;
        if entry_in(&tx, &meta.file_name)?.is_some() {
            return Err(ArchiveError::DuplicateEntry(meta.file_name.clone()));
        }
        tx.execute(
            &format!("INSERT INTO entries ({ENTRY_COLS}) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12, ?13, 1, 0)"),
            params![
                meta.file_name,
                meta.probe_id,
                meta.link_id,
                to_nanos(&meta.t_start),
                to_nanos(&meta.t_end),
                meta.packet_count as i64,
                meta.byte_count as i64,
                meta.wire_bytes as i64,
                meta.lost_packets as i64,
                meta.anonymized,
                FileState::Sealed.as_str(),
                tier.as_str(),
                to_nanos(&now),
            ],
        )?;
        {
            let mut st = tx.prepare(
                "INSERT INTO throughput (link_id, second, bytes, packets) VALUES (?1, ?2, ?3, ?4)
                 ON CONFLICT (link_id, second) DO UPDATE
                 SET bytes = bytes + excluded.bytes, packets = packets + excluded.packets",
            )?;
            for (sec, (bytes, packets)) in &summary.seconds {
                st.execute(params![meta.link_id, sec, *bytes as i64, *packets as i64])?;
            }
            let mut st =
                tx.prepare("INSERT OR IGNORE INTO sources (link_id, second, addr) VALUES (?1, ?2, ?3)")?;
            for (sec, addr) in &summary.sources {
                st.execute(params![meta.link_id, sec, addr])?;
            }
        }
        let entry = entry_in(&tx, &meta.file_name)?.expect("just inserted");
        tx.commit()?;
        Ok(entry)
    }

    /// Ingest every sealed sidecar found under `dir`, in file-name order.
    /// Entries already in the catalog are reported as duplicates.
    pub fn ingest_dir(&self, dir: &Path, tier: TierName, now: DateTime<Utc>) -> Result<IngestReport> {
        let mut report = IngestReport::default();
        let walk = walkdir::WalkDir::new(dir).sort_by_file_name();
        for ent in walk {
            let ent = ent.map_err(|e| io::Error::other(e.to_string()))?;
            let path = ent.path();
            let is_meta = path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(META_SUFFIX));
            if !ent.file_type().is_file() || !is_meta {
                continue;
            }
            let shown = path.display().to_string();
            let meta = match read_sidecar(path) {
                Ok(m) => m,
                Err(e) => {
                    report.errors.push((shown, e.to_string()));
                    continue;
                }
            };
            match self.ingest(&meta, tier, now) {
                Ok(_) => report.ingested.push(meta.file_name),
                Err(ArchiveError::DuplicateEntry(n)) => report.duplicates.push(n),
                Err(e @ (ArchiveError::Db(_) | ArchiveError::Io(_))) => return Err(e),
                Err(e) => report.errors.push((shown, e.to_string())),
            }
        }
        Ok(report)
    }

    pub fn entry(&self, file_name: &str) -> Result<Option<CatalogEntry>> {
        self.read(|c| {
            Ok(c.query_row(
                &format!("SELECT {ENTRY_COLS} FROM entries WHERE file_name = ?1"),
                [file_name],
                entry_from_row,
            )
            .optional()?)
        })
    }

    pub fn entry_count(&self) -> Result<u64> {
        self.read(|c| Ok(c.query_row("SELECT COUNT(*) FROM entries", [], |r| r.get::<_, i64>(0))? as u64))
    }

    /// Entries matching every given field whose `[t_start, t_end]`
    /// intersects `[from, to]`, ordered by start time.
    pub fn search(&self, f: &SearchFilter) -> Result<Vec<CatalogEntry>> {
        window_secs(f.from, f.to)?;
        let mut sql = format!("SELECT {ENTRY_COLS} FROM entries WHERE 1 = 1");
        let mut args: Vec<Box<dyn ToSql>> = Vec::new();
        let mut push = |clause: &str, v: Box<dyn ToSql>| {
            args.push(v);
            sql.push_str(&format!(" AND {clause} ?{}", args.len()));
        };
        if let Some(p) = &f.probe {
            push("probe_id =", Box::new(p.clone()));
        }
        if let Some(l) = &f.link {
            push("link_id =", Box::new(l.clone()));
        }
        if let Some(t) = f.tier {
            push("tier =", Box::new(t.as_str()));
        }
        if let Some(from) = &f.from {
            push("t_end >=", Box::new(to_nanos(from)));
        }
        if let Some(to) = &f.to {
            push("t_start <=", Box::new(to_nanos(to)));
        }
        sql.push_str(" ORDER BY t_start, file_name");
        self.read(|c| {
            let mut st = c.prepare(&sql)?;
            let refs: Vec<&dyn ToSql> = args.iter().map(|b| b.as_ref()).collect();
            let rows = st.query_map(refs.as_slice(), entry_from_row)?;
            Ok(rows.collect::<rusqlite::Result<_>>()?)
        })
    }

    /// Delete files older than their tier lifetime, keeping their
    /// metadata. Each file is deleted before its flag flips, so a crash
    /// leaves at worst a present-flagged entry with no file, which
    /// [`reconcile`](Self::reconcile) repairs.
    pub fn expire(&self, now: DateTime<Utc>, policy: &RetentionPolicy) -> Result<ExpireReport> {
        policy.validate()?;
        let conn = self.write();
        let candidates: Vec<CatalogEntry> = {
            let mut st = conn.prepare(&format!(
                "SELECT {ENTRY_COLS} FROM entries WHERE file_present = 1 AND pinned = 0 ORDER BY t_start, file_name"
            ))?;
            let rows = st.query_map([], entry_from_row)?;
            rows.collect::<rusqlite::Result<_>>()?
        };
        let mut report = ExpireReport::default();
        for e in candidates {
            if e.tier.is_summary() {
                continue;
            }
            let Some(life) = policy.lifetime(e.tier) else { continue };
            let age = (now - e.ingested_at).to_std().unwrap_or(Duration::ZERO);
            if age <= life {
                continue;
            }
            match std::fs::remove_file(self.trace_path(&e.meta)) {
                Ok(()) => {}
                Err(err) if err.kind() == io::ErrorKind::NotFound => {}
                Err(err) => {
                    report.failed.push((e.meta.file_name.clone(), err.to_string()));
                    continue;
                }
            }
            conn.execute(
                "UPDATE entries SET file_present = 0, state = ?2 WHERE file_name = ?1",
                params![e.meta.file_name, FileState::Expired.as_str()],
            )?;
            log_event(&conn, now, "system", "expire", &e.meta.file_name)?;
            report.removed.push(e.meta.file_name);
        }
        Ok(report)
    }

    /// Mark a present file as a long-term sample that never expires.
    /// Pinning an already pinned file is a no-op.
    pub fn pin_sample(&self, file_name: &str, policy: &RetentionPolicy) -> Result<CatalogEntry> {
        let mut conn = self.write();
        let tx = conn.transaction()?;
        let e = entry_in(&tx, file_name)?.ok_or_else(|| ArchiveError::UnknownFile(file_name.into()))?;
        if e.pinned {
            return Ok(e);
        }
        if !e.file_present {
            return Err(ArchiveError::FileExpired(file_name.into()));
        }
        let pinned: u32 = tx.query_row("SELECT COUNT(*) FROM entries WHERE pinned = 1", [], |r| r.get(0))?;
        if pinned >= policy.pinned_sample_quota {
            return Err(ArchiveError::QuotaExhausted(policy.pinned_sample_quota));
        }
        tx.execute("UPDATE entries SET pinned = 1 WHERE file_name = ?1", [file_name])?;
        let e = entry_in(&tx, file_name)?.expect("exists");
        tx.commit()?;
        Ok(e)
    }

    fn trace_files_on_disk(&self) -> Result<BTreeSet<String>> {
        let mut found = BTreeSet::new();
        let suffix = format!(".{TRACE_EXT}");
        for ent in walkdir::WalkDir::new(self.root()).min_depth(3).max_depth(3) {
            let ent = ent.map_err(|e| io::Error::other(e.to_string()))?;
            let Some(name) = ent.file_name().to_str() else { continue };
            if ent.file_type().is_file() && name.ends_with(&suffix) && !name.ends_with(TMP_SUFFIX) {
                let rel = ent.path().strip_prefix(self.root()).unwrap_or(ent.path());
                found.insert(rel.to_string_lossy().into_owned());
            }
        }
        Ok(found)
    }

    /// Compare the catalog with the trace files under the root.
    pub fn audit(&self) -> Result<AuditReport> {
        let entries = self.search(&SearchFilter::default())?;
        let mut on_disk = self.trace_files_on_disk()?;
        let mut report = AuditReport {
            entries: entries.len() as u64,
            files_on_disk: on_disk.len() as u64,
            ..Default::default()
        };
        for e in &entries {
            let rel = e.meta.relative_path().to_string_lossy().into_owned();
            let there = on_disk.remove(&rel);
            match (e.file_present, there) {
                (true, true) => report.present_entries += 1,
                (true, false) => {
                    report.present_entries += 1;
                    report.issues.push(AuditIssue::MissingFile {
                        file_name: e.meta.file_name.clone(),
                    })
                }
                (false, true) => report.issues.push(AuditIssue::ExpiredOnDisk {
                    file_name: e.meta.file_name.clone(),
                }),
                (false, false) => {}
            }
        }
        report
            .issues
            .extend(on_disk.into_iter().map(|path| AuditIssue::Untracked { path }));
        Ok(report)
    }

    /// Startup repair: entries flagged present whose file is gone (an
    /// interrupted expiry, or loss) are marked expired. Returns the names
    /// fixed; anything else the audit finds is left for an operator.
    pub fn reconcile(&self, now: DateTime<Utc>) -> Result<Vec<String>> {
        let missing: Vec<String> = self
            .audit()?
            .issues
            .into_iter()
            .filter_map(|i| match i {
                AuditIssue::MissingFile { file_name } => Some(file_name),
                _ => None,
            })
            .collect();
        let conn = self.write();
        for name in &missing {
            conn.execute(
                "UPDATE entries SET file_present = 0, state = ?2 WHERE file_name = ?1",
                params![name, FileState::Expired.as_str()],
            )?;
            log_event(&conn, now, "system", "reconcile_missing", name)?;
        }
        Ok(missing)
    }

    /// Wire bytes per `bin_secs` bin on `link` (all links when `None`)
    /// over `[from, to)`, at one-second resolution. Open ends default to
    /// the extent of the stored data.
    pub fn throughput(
        &self,
        link: Option<&str>,
        from: Option<DateTime<Utc>>,
        to: Option<DateTime<Utc>>,
        bin_secs: u64,
    ) -> Result<TimeSeries> {
        window_secs(from, to)?;
        if bin_secs == 0 {
            return Err(ArchiveError::BadBin);
        }
        let link = link.map(str::to_string);
        let extent: (Option<i64>, Option<i64>) = self.read(|c| {
            Ok(c.query_row(
                "SELECT MIN(second), MAX(second) FROM throughput WHERE ?1 IS NULL OR link_id = ?1",
                [&link],
                |r| Ok((r.get(0)?, r.get(1)?)),
            )?)
        })?;
        let start = match from {
            Some(f) => f.timestamp().max(0),
            None => extent.0.unwrap_or(0),
        };
        let end = match to {
            // Seconds whose start lies before `to`.
            Some(t) => t.timestamp() + i64::from(t.timestamp_subsec_nanos() > 0),
            None => extent.1.map_or(start, |m| m + 1),
        }
        .max(start);
        let n = ((end - start) as u64).div_ceil(bin_secs);
        if n > MAX_BINS {
            return Err(ArchiveError::BadWindow);
        }
        let mut bins = vec![0u64; n as usize];
        self.read(|c| {
            let mut st = c.prepare(
                "SELECT second, SUM(bytes) FROM throughput
                 WHERE (?1 IS NULL OR link_id = ?1) AND second >= ?2 AND second < ?3
                 GROUP BY second",
            )?;
            let rows = st.query_map(params![link, start, end], |r| {
                Ok((r.get::<_, i64>(0)?, r.get::<_, i64>(1)?))
            })?;
            for row in rows {
                let (sec, bytes) = row?;
                bins[((sec - start) as u64 / bin_secs) as usize] += bytes as u64;
            }
            Ok(())
        })?;
        Ok(TimeSeries {
            bin_width: Duration::from_secs(bin_secs),
            t0: ErfTimestamp::new(start.clamp(0, u32::MAX as i64) as u32, 0),
            bins,
        })
    }

    /// Number of distinct source addresses seen on `link` in `[from, to)`.
    /// The addresses themselves never leave the catalog.
    pub fn distinct_sources(
        &self,
        link: Option<&str>,
        from: Option<DateTime<Utc>>,
        to: Option<DateTime<Utc>>,
    ) -> Result<u64> {
        window_secs(from, to)?;
        let start = from.map_or(i64::MIN, |f| f.timestamp());
        let end = to.map_or(i64::MAX, |t| t.timestamp() + i64::from(t.timestamp_subsec_nanos() > 0));
        self.read(|c| {
            Ok(c.query_row(
                "SELECT COUNT(DISTINCT addr) FROM sources
                 WHERE (?1 IS NULL OR link_id = ?1) AND second >= ?2 AND second < ?3",
                params![link, start, end],
                |r| r.get::<_, i64>(0),
            )? as u64)
        })
    }
}
