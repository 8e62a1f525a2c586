//! Users, acceptable-use acceptance, sessions, download grants and the
//! append-only audit log.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use rand::RngCore;
use rusqlite::{params, Connection, OptionalExtension, Row};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracevault::time::iso_format;

use crate::catalog::CatalogEntry;
use crate::{from_nanos, to_nanos, Archive, ArchiveError, Result};

pub const DEFAULT_KDF_ROUNDS: u32 = 100_000;
pub const SESSION_LIFETIME: Duration = Duration::hours(24);
pub const GRANT_LIFETIME: Duration = Duration::minutes(5);
const SALT_LEN: usize = 16;
const KDF_TAG: &str = "pbkdf2-sha256";

/// The five kinds of user or organisation. Only the last is confined to
/// summary data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Operator,
    HostSite,
    ProjectMember,
    ExternalPacket,
    ExternalSummary,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Operator,
        Category::HostSite,
        Category::ProjectMember,
        Category::ExternalPacket,
        Category::ExternalSummary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Operator => "operator",
            Category::HostSite => "host_site",
            Category::ProjectMember => "project_member",
            Category::ExternalPacket => "external_packet",
            Category::ExternalSummary => "external_summary",
        }
    }

    pub fn packet_access(self) -> bool {
        self != Category::ExternalSummary
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = ArchiveError;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| ArchiveError::InvalidField {
                field: "category",
                value: s.to_string(),
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct User {
    pub username: String,
    pub category: Category,
    #[serde(with = "iso_format")]
    pub created_at: DateTime<Utc>,
    #[serde(with = "opt_iso")]
    pub aup_accepted_at: Option<DateTime<Utc>>,
    pub aup_version: Option<String>,
}

mod opt_iso {
    use chrono::{DateTime, Utc};
    use serde::Serializer;

    pub fn serialize<S: Serializer>(t: &Option<DateTime<Utc>>, s: S) -> Result<S::Ok, S::Error> {
        match t {
            Some(t) => s.serialize_str(&tracevault::time::iso(t)),
            None => s.serialize_none(),
        }
    }
}

/// Bearer session. `token` is only available when the session is created;
/// the store keeps a hash.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Session {
    pub token: String,
    pub username: String,
    #[serde(with = "iso_format")]
    pub expires_at: DateTime<Utc>,
}

/// Single-use permission to fetch one file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DownloadGrant {
    pub token: String,
    pub username: String,
    pub file_name: String,
    #[serde(with = "iso_format")]
    pub issued_at: DateTime<Utc>,
    #[serde(with = "iso_format")]
    pub expires_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuditEvent {
    pub id: i64,
    #[serde(with = "iso_format")]
    pub at: DateTime<Utc>,
    pub actor: String,
    pub kind: String,
    pub detail: String,
}

/// Hex SHA-256 of an AUP text, recorded on acceptance.
pub fn aup_version(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn hash_token(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

fn new_token() -> String {
    let mut b = [0u8; 32];
    rand::rngs::OsRng.fill_bytes(&mut b);
    hex::encode(b)
}

fn derive(password: &str, salt: &[u8], rounds: u32) -> [u8; 32] {
    let mut out = [0u8; 32];
    pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), salt, rounds, &mut out);
    out
}

fn make_verifier(password: &str, rounds: u32) -> String {
    let mut salt = [0u8; SALT_LEN];
    rand::rngs::OsRng.fill_bytes(&mut salt);
    let hash = derive(password, &salt, rounds);
    format!("{KDF_TAG}${rounds}${}${}", hex::encode(salt), hex::encode(hash))
}

fn check_verifier(verifier: &str, password: &str) -> bool {
    let parts: Vec<&str> = verifier.split('$').collect();
    let [tag, rounds, salt, hash] = parts.as_slice() else {
        return false;
    };
    let (Ok(rounds), Ok(salt), Ok(hash)) = (rounds.parse::<u32>(), hex::decode(salt), hex::decode(hash)) else {
        return false;
    };
    if *tag != KDF_TAG || hash.len() != 32 {
        return false;
    }
    let got = derive(password, &salt, rounds);
    got.iter().zip(&hash).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0
}

fn valid_username(name: &str) -> bool {
    (1..=64).contains(&name.len())
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

const USER_COLS: &str = "username, category, created_at, aup_accepted_at, aup_version";

fn user_from_row(r: &Row<'_>) -> rusqlite::Result<User> {
    let cat: String = r.get(1)?;
    Ok(User {
        username: r.get(0)?,
        category: cat.parse().map_err(|_| {
            rusqlite::Error::FromSqlConversionFailure(1, rusqlite::types::Type::Text, "bad category".into())
        })?,
        created_at: from_nanos(r.get(2)?),
        aup_accepted_at: r.get::<_, Option<i64>>(3)?.map(from_nanos),
        aup_version: r.get(4)?,
    })
}

fn user_in(conn: &Connection, name: &str) -> Result<Option<User>> {
    Ok(conn
        .query_row(
            &format!("SELECT {USER_COLS} FROM users WHERE username = ?1"),
            [name],
            user_from_row,
        )
        .optional()?)
}

pub(crate) fn log_event(conn: &Connection, at: DateTime<Utc>, actor: &str, kind: &str, detail: &str) -> Result<()> {
    conn.execute(
        "INSERT INTO audit_events (at, actor, kind, detail) VALUES (?1, ?2, ?3, ?4)",
        params![to_nanos(&at), actor, kind, detail],
    )?;
    Ok(())
}

impl Archive {
    pub fn register(&self, username: &str, password: &str, category: Category, now: DateTime<Utc>) -> Result<User> {
        if !valid_username(username) {
            return Err(ArchiveError::BadUsername);
        }
        if password.is_empty() {
            return Err(ArchiveError::BadPassword);
        }
        let verifier = make_verifier(password, self.kdf_rounds);
        let mut conn = self.write();
        let tx = conn.transaction()?;
        if user_in(&tx, username)?.is_some() {
            return Err(ArchiveError::UsernameTaken(username.into()));
        }
        tx.execute(
            "INSERT INTO users (username, verifier, category, created_at) VALUES (?1, ?2, ?3, ?4)",
            params![username, verifier, category.as_str(), to_nanos(&now)],
        )?;
        log_event(&tx, now, username, "register", category.as_str())?;
        let u = user_in(&tx, username)?.expect("just inserted");
        tx.commit()?;
        Ok(u)
    }

    pub fn user(&self, username: &str) -> Result<Option<User>> {
        self.read(|c| user_in(c, username))
    }

    /// Record acceptance of the AUP identified by `version`. Accepting
    /// again keeps the first timestamp and logs nothing.
    pub fn accept_aup(&self, username: &str, version: &str, now: DateTime<Utc>) -> Result<User> {
        let mut conn = self.write();
        let tx = conn.transaction()?;
        let u = user_in(&tx, username)?.ok_or_else(|| ArchiveError::UnknownUser(username.into()))?;
        if u.aup_accepted_at.is_some() {
            return Ok(u);
        }
        tx.execute(
            "UPDATE users SET aup_accepted_at = ?2, aup_version = ?3 WHERE username = ?1",
            params![username, to_nanos(&now), version],
        )?;
        log_event(&tx, now, username, "aup_accept", version)?;
        let u = user_in(&tx, username)?.expect("exists");
        tx.commit()?;
        Ok(u)
    }

    /// Check a password and open a session.
    pub fn login(&self, username: &str, password: &str, now: DateTime<Utc>) -> Result<Session> {
        let verifier: Option<String> = self.read(|c| {
            Ok(c.query_row("SELECT verifier FROM users WHERE username = ?1", [username], |r| r.get(0))
                .optional()?)
        })?;
        match verifier {
            Some(v) if check_verifier(&v, password) => {}
            _ => return Err(ArchiveError::BadCredentials),
        }
        let token = new_token();
        let expires_at = now + SESSION_LIFETIME;
        let conn = self.write();
        conn.execute(
            "DELETE FROM sessions WHERE expires_at <= ?1",
            [to_nanos(&now)],
        )?;
        conn.execute(
            "INSERT INTO sessions (token_hash, username, expires_at) VALUES (?1, ?2, ?3)",
            params![hash_token(&token), username, to_nanos(&expires_at)],
        )?;
        Ok(Session {
            token,
            username: username.into(),
            expires_at,
        })
    }

    /// The user behind a bearer token.
    pub fn session_user(&self, token: &str, now: DateTime<Utc>) -> Result<User> {
        self.read(|c| {
            let name: Option<String> = c
                .query_row(
                    "SELECT username FROM sessions WHERE token_hash = ?1 AND expires_at > ?2",
                    params![hash_token(token), to_nanos(&now)],
                    |r| r.get(0),
                )
                .optional()?;
            let name = name.ok_or(ArchiveError::Unauthenticated)?;
            user_in(c, &name)?.ok_or(ArchiveError::Unauthenticated)
        })
    }

    /// Issue a single-use grant for `file_name`. Checks run in a fixed
    /// order: unknown file, category, AUP, expired file.
    pub fn authorize_download(&self, username: &str, file_name: &str, now: DateTime<Utc>) -> Result<DownloadGrant> {
        let conn = self.write();
        let u = user_in(&conn, username)?.ok_or_else(|| ArchiveError::UnknownUser(username.into()))?;
        let present: Option<bool> = conn
            .query_row(
                "SELECT file_present FROM entries WHERE file_name = ?1",
                [file_name],
                |r| r.get(0),
            )
            .optional()?;
        let present = present.ok_or_else(|| ArchiveError::UnknownFile(file_name.into()))?;
        if !u.category.packet_access() {
            return Err(ArchiveError::CategoryForbidden);
        }
        if u.aup_accepted_at.is_none() {
            return Err(ArchiveError::AupRequired);
        }
        if !present {
            return Err(ArchiveError::FileExpired(file_name.into()));
        }
        let token = new_token();
        let hash = hash_token(&token);
        let expires_at = now + GRANT_LIFETIME;
        conn.execute(
            "INSERT INTO grants (grant_hash, username, file_name, issued_at, expires_at) VALUES (?1, ?2, ?3, ?4, ?5)",
            params![hash, username, file_name, to_nanos(&now), to_nanos(&expires_at)],
        )?;
        log_event(&conn, now, username, "grant_issued", &format!("{file_name} grant={}", &hash[..16]))?;
        Ok(DownloadGrant {
            token,
            username: username.into(),
            file_name: file_name.into(),
            issued_at: now,
            expires_at,
        })
    }

    /// Spend a grant. Succeeds at most once per grant, only for its owner
    /// and before it expires; returns the entry to deliver.
    pub fn consume_grant(&self, token: &str, username: &str, now: DateTime<Utc>) -> Result<CatalogEntry> {
        let hash = hash_token(token);
        let mut conn = self.write();
        let tx = conn.transaction()?;
        let file: Option<String> = tx
            .query_row(
                "SELECT file_name FROM grants
                 WHERE grant_hash = ?1 AND username = ?2 AND used_at IS NULL AND expires_at > ?3",
                params![hash, username, to_nanos(&now)],
                |r| r.get(0),
            )
            .optional()?;
        let file = file.ok_or(ArchiveError::GrantInvalid)?;
        tx.execute(
            "UPDATE grants SET used_at = ?2 WHERE grant_hash = ?1 AND used_at IS NULL",
            params![hash, to_nanos(&now)],
        )?;
        log_event(&tx, now, username, "download", &format!("{file} grant={}", &hash[..16]))?;
        tx.commit()?;
        drop(conn);
        let entry = self.entry(&file)?.ok_or(ArchiveError::UnknownFile(file.clone()))?;
        if !entry.file_present {
            return Err(ArchiveError::FileExpired(file));
        }
        Ok(entry)
    }

    /// Audit events in insertion order, optionally for one actor.
    pub fn audit_events(&self, actor: Option<&str>) -> Result<Vec<AuditEvent>> {
        self.read(|c| {
            let mut st = c.prepare(
                "SELECT id, at, actor, kind, detail FROM audit_events
                 WHERE ?1 IS NULL OR actor = ?1 ORDER BY id",
            )?;
            let rows = st.query_map([actor], |r| {
                Ok(AuditEvent {
                    id: r.get(0)?,
                    at: from_nanos(r.get(1)?),
                    actor: r.get(2)?,
                    kind: r.get(3)?,
                    detail: r.get(4)?,
                })
            })?;
            Ok(rows.collect::<rusqlite::Result<_>>()?)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verifier_round_trip() {
        let v = make_verifier("hunter2", 10);
        assert!(v.starts_with("pbkdf2-sha256$10$"));
        assert!(!v.contains("hunter2"));
        assert!(check_verifier(&v, "hunter2"));
        assert!(!check_verifier(&v, "hunter3"));
        assert!(!check_verifier("garbage", "hunter2"));
    }

    #[test]
    fn salts_differ() {
        assert_ne!(make_verifier("pw", 10), make_verifier("pw", 10));
    }

    #[test]
    fn usernames() {
        assert!(valid_username("alice.b-c_1"));
        assert!(!valid_username(""));
        assert!(!valid_username("a b"));
        assert!(!valid_username(&"x".repeat(65)));
    }

    #[test]
    fn category_rights() {
        for c in Category::ALL {
            assert_eq!(c.packet_access(), c != Category::ExternalSummary);
            assert_eq!(c.as_str().parse::<Category>().unwrap(), c);
        }
    }
}
