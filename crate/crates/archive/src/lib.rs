//! Persistent archive state: the trace catalog with tiered retention, probe
//! configurations, per-link summaries, and the user/AUP/grant store that
//! gates packet-data downloads.
//!
//! Everything lives in one SQLite file. Writes go through a single
//! connection behind a mutex; reads use a small pool of separate
//! connections so searches do not queue behind an expiry pass.

pub mod access;
pub mod catalog;
pub mod probe;
pub mod retention;

use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, TimeZone, Utc};
use rusqlite::{Connection, OpenFlags};
use thiserror::Error;

pub use access::{AuditEvent, Category, DownloadGrant, Session, User};
pub use catalog::{AuditIssue, CatalogEntry, ExpireReport, IngestReport, SearchFilter};
pub use probe::{parse_probe_xml, ProbeConfig};
pub use retention::{Lifetime, RetentionPolicy};

/// Default catalog file name inside the archive root.
pub const CATALOG_FILE: &str = "catalog.sqlite";

const READ_POOL: usize = 4;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("catalog already has an entry for {0}")]
    DuplicateEntry(String),
    #[error("trace file missing: {0}")]
    MissingFile(PathBuf),
    #[error("{0} is not sealed")]
    NotSealed(String),
    #[error("malformed probe XML: {0}")]
    MalformedXml(String),
    #[error("probe XML lacks {0}")]
    MissingField(&'static str),
    #[error("invalid value for {field}: {value:?}")]
    InvalidField { field: &'static str, value: String },
    #[error("window start is after its end")]
    BadWindow,
    #[error("bin width must be a whole number of seconds, at least 1")]
    BadBin,
    #[error("pinned sample quota of {0} exhausted")]
    QuotaExhausted(u32),
    #[error("no catalog entry for {0}")]
    UnknownFile(String),
    #[error("{0} has expired; only its metadata remains")]
    FileExpired(String),
    #[error("retention policy: {0}")]
    BadPolicy(String),
    #[error("username {0:?} is taken")]
    UsernameTaken(String),
    #[error("username must be 1-64 characters of [A-Za-z0-9._-]")]
    BadUsername,
    #[error("password must not be empty")]
    BadPassword,
    #[error("no such user {0:?}")]
    UnknownUser(String),
    #[error("wrong username or password")]
    BadCredentials,
    #[error("missing or expired session")]
    Unauthenticated,
    #[error("the acceptable use policy has not been accepted")]
    AupRequired,
    #[error("user category has no access to packet data")]
    CategoryForbidden,
    #[error("download grant is unknown, used or expired")]
    GrantInvalid,
    #[error("reading trace {path}: {source}")]
    Trace {
        path: PathBuf,
        source: tracevault::formats::FormatError,
    },
    #[error(transparent)]
    Db(#[from] rusqlite::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ArchiveError>;

/// Handle on an archive root and its catalog database.
pub struct Archive {
    root: PathBuf,
    db_path: PathBuf,
    writer: Mutex<Connection>,
    readers: Mutex<Vec<Connection>>,
    kdf_rounds: u32,
}

impl Archive {
    /// Open (creating if needed) the catalog at `<root>/catalog.sqlite`.
    pub fn open(root: impl AsRef<Path>) -> Result<Archive> {
        let root = root.as_ref().to_path_buf();
        let db = root.join(CATALOG_FILE);
        Archive::open_with_db(root, db)
    }

    pub fn open_with_db(root: impl AsRef<Path>, db_path: impl AsRef<Path>) -> Result<Archive> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root)?;
        let db_path = db_path.as_ref().to_path_buf();
        let conn = Connection::open(&db_path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "FULL")?;
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.busy_timeout(std::time::Duration::from_secs(10))?;
        conn.execute_batch(SCHEMA)?;
        Ok(Archive {
            root,
            db_path,
            writer: Mutex::new(conn),
            readers: Mutex::new(Vec::new()),
            kdf_rounds: access::DEFAULT_KDF_ROUNDS,
        })
    }

    /// PBKDF2 iteration count for newly stored passwords. Existing
    /// verifiers keep the count they were created with.
    pub fn with_kdf_rounds(mut self, rounds: u32) -> Self {
        self.kdf_rounds = rounds.max(1);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub(crate) fn write(&self) -> MutexGuard<'_, Connection> {
        self.writer.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Run `f` on a pooled read-only connection.
    pub(crate) fn read<T>(&self, f: impl FnOnce(&Connection) -> Result<T>) -> Result<T> {
        let conn = self.readers.lock().unwrap_or_else(|e| e.into_inner()).pop();
        let conn = match conn {
            Some(c) => c,
            None => {
                let c = Connection::open_with_flags(
                    &self.db_path,
                    OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
                )?;
                c.busy_timeout(std::time::Duration::from_secs(10))?;
                c
            }
        };
        let out = f(&conn);
        let mut pool = self.readers.lock().unwrap_or_else(|e| e.into_inner());
        if pool.len() < READ_POOL {
            pool.push(conn);
        }
        out
    }
}

pub(crate) fn to_nanos(t: &DateTime<Utc>) -> i64 {
    t.timestamp_nanos_opt().expect("timestamp within 1677..2262")
}

pub(crate) fn from_nanos(n: i64) -> DateTime<Utc> {
    Utc.timestamp_nanos(n)
}

const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS entries (
    file_name     TEXT PRIMARY KEY,
    probe_id      TEXT NOT NULL,
    link_id       TEXT NOT NULL,
    t_start       INTEGER NOT NULL,
    t_end         INTEGER NOT NULL,
    packet_count  INTEGER NOT NULL,
    byte_count    INTEGER NOT NULL,
    wire_bytes    INTEGER NOT NULL,
    lost_packets  INTEGER NOT NULL,
    anonymized    INTEGER NOT NULL,
    state         TEXT NOT NULL,
    tier          TEXT NOT NULL,
    ingested_at   INTEGER NOT NULL,
    file_present  INTEGER NOT NULL,
    pinned        INTEGER NOT NULL DEFAULT 0
);
CREATE INDEX IF NOT EXISTS entries_window ON entries (t_start, t_end);
CREATE INDEX IF NOT EXISTS entries_probe_link ON entries (probe_id, link_id);

CREATE TABLE IF NOT EXISTS probe_configs (
    probe_id       TEXT NOT NULL,
    version        INTEGER NOT NULL,
    hardware_desc  TEXT NOT NULL,
    software_desc  TEXT NOT NULL,
    link_id        TEXT NOT NULL,
    bandwidth_bps  INTEGER NOT NULL,
    ingested_at    INTEGER NOT NULL,
    PRIMARY KEY (probe_id, version)
);

CREATE TABLE IF NOT EXISTS throughput (
    link_id  TEXT NOT NULL,
    second   INTEGER NOT NULL,
    bytes    INTEGER NOT NULL,
    packets  INTEGER NOT NULL,
    PRIMARY KEY (link_id, second)
);

CREATE TABLE IF NOT EXISTS sources (
    link_id  TEXT NOT NULL,
    second   INTEGER NOT NULL,
    addr     INTEGER NOT NULL,
    PRIMARY KEY (link_id, second, addr)
);

CREATE TABLE IF NOT EXISTS users (
    username         TEXT PRIMARY KEY,
    verifier         TEXT NOT NULL,
    category         TEXT NOT NULL,
    created_at       INTEGER NOT NULL,
    aup_accepted_at  INTEGER,
    aup_version      TEXT
);

CREATE TABLE IF NOT EXISTS sessions (
    token_hash  TEXT PRIMARY KEY,
    username    TEXT NOT NULL REFERENCES users (username),
    expires_at  INTEGER NOT NULL
);

CREATE TABLE IF NOT EXISTS grants (
    grant_hash  TEXT PRIMARY KEY,
    username    TEXT NOT NULL REFERENCES users (username),
    file_name   TEXT NOT NULL REFERENCES entries (file_name),
    issued_at   INTEGER NOT NULL,
    expires_at  INTEGER NOT NULL,
    used_at     INTEGER
);

CREATE TABLE IF NOT EXISTS audit_events (
    id      INTEGER PRIMARY KEY AUTOINCREMENT,
    at      INTEGER NOT NULL,
    actor   TEXT NOT NULL,
    kind    TEXT NOT NULL,
    detail  TEXT NOT NULL
);
CREATE TRIGGER IF NOT EXISTS audit_no_update BEFORE UPDATE ON audit_events
BEGIN SELECT RAISE(ABORT, 'audit log is append-only'); END;
CREATE TRIGGER IF NOT EXISTS audit_no_delete BEFORE DELETE ON audit_events
BEGIN SELECT RAISE(ABORT, 'audit log is append-only'); END;
CREATE TRIGGER IF NOT EXISTS entries_no_delete BEFORE DELETE ON entries
BEGIN SELECT RAISE(ABORT, 'catalog metadata is never deleted'); END;
"#;
