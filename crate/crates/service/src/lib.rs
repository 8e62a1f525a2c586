//! HTTP access service for a trace archive.
//!
//! Summary routes are open to anyone. Packet-data downloads need a bearer
//! session, an accepted acceptable use policy and a user category with
//! packet access; each download spends a single-use grant.
//!
//! | route | auth |
//! |---|---|
//! | `POST /users` | none for external categories, operator otherwise |
//! | `POST /users/{name}/aup` | that user or an operator |
//! | `POST /sessions` | password in body |
//! | `GET /aup` | none |
//! | `GET /traces?probe=&link=&from=&to=&tier=` | none |
//! | `POST /traces/{file}/grants` | bearer |
//! | `GET /traces/{file}/download[?grant=]` | bearer |
//! | `GET /summary/throughput?link=&from=&to=&bin=` | none |
//! | `GET /summary/sources?link=&from=&to=` | none |
//! | `GET /probes` | none |

pub mod config;
pub mod error;
pub mod ratelimit;

use std::collections::HashMap;
use std::io;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tracevault::summary::TierName;
use tracevault::time::{iso, parse_iso};
use tracevault_archive::access::aup_version;
use tracevault_archive::{Archive, ArchiveError, CatalogEntry, Category, SearchFilter, User};

pub use config::Config;
pub use error::ApiError;
use ratelimit::RateLimiter;

pub const DEFAULT_AUP: &str = "Trace data is provided for research only. Acknowledge the source of \
the data in any publication. Do not attempt to reverse the anonymisation of addresses or to \
identify individual hosts or users. Do not redistribute packet data.\n";

const DEFAULT_BIN_SECS: u64 = 60;

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Clone)]
pub struct AppState {
    archive: Arc<Archive>,
    aup_text: Arc<str>,
    aup_version: Arc<str>,
    limiter: Arc<RateLimiter>,
    clock: Clock,
}

impl AppState {
    pub fn new(archive: Archive, aup_text: &str, downloads_per_minute: u32) -> Self {
        AppState {
            archive: Arc::new(archive),
            aup_version: aup_version(aup_text).into(),
            aup_text: aup_text.into(),
            limiter: Arc::new(RateLimiter::new(downloads_per_minute)),
            clock: Arc::new(Utc::now),
        }
    }

    /// Replace the wall clock, for tests.
    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    /// Open the archive named by `config`, repair half-finished expiry
    /// passes and load the AUP text.
    pub fn from_config(config: &Config) -> Result<Self, ServeError> {
        let archive = Archive::open_with_db(&config.archive_root, config.catalog_path())?
            .with_kdf_rounds(config.service.kdf_rounds);
        archive.reconcile(Utc::now())?;
        let aup = match &config.aup_path {
            Some(p) => std::fs::read_to_string(p)?,
            None => DEFAULT_AUP.to_string(),
        };
        Ok(AppState::new(archive, &aup, config.service.downloads_per_minute))
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    pub fn aup_version(&self) -> &str {
        &self.aup_version
    }

    fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/users", post(register))
        .route("/users/{name}/aup", post(accept_aup))
        .route("/sessions", post(login))
        .route("/aup", get(aup))
        .route("/traces", get(search))
        .route("/traces/{file}/grants", post(grant))
        .route("/traces/{file}/download", get(download))
        .route("/summary/throughput", get(throughput))
        .route("/summary/sources", get(sources))
        .route("/probes", get(probes))
        .with_state(state)
}

/// Bind `config.listen` and serve until the process ends.
pub async fn serve(config: &Config) -> Result<(), ServeError> {
    let state = AppState::from_config(config)?;
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}

async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Archive, DateTime<Utc>) -> Result<T, ApiError> + Send + 'static,
{
    let archive = state.archive.clone();
    let now = state.now();
    tokio::task::spawn_blocking(move || f(&archive, now))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn parse_json<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("bad JSON body: {e}")))
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    let v = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    v.strip_prefix("Bearer ").map(|t| t.trim().to_string())
}

async fn current_user(state: &AppState, headers: &HeaderMap) -> Result<User, ApiError> {
    let token = bearer(headers).ok_or_else(ApiError::unauthenticated)?;
    blocking(state, move |a, now| Ok(a.session_user(&token, now)?)).await
}

type Window = (Option<DateTime<Utc>>, Option<DateTime<Utc>>);

/// Query parameters restricted to `allowed` names.
struct Params(HashMap<String, String>);

impl Params {
    fn new(q: HashMap<String, String>, allowed: &[&str]) -> Result<Self, ApiError> {
        if let Some(k) = q.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(ApiError::bad_request(format!("unknown parameter {k:?}")));
        }
        Ok(Params(q))
    }

    fn text(&self, name: &str) -> Option<String> {
        self.0.get(name).filter(|v| !v.is_empty()).cloned()
    }

    fn time(&self, name: &str) -> Result<Option<DateTime<Utc>>, ApiError> {
        self.text(name)
            .map(|v| parse_iso(&v).map_err(|_| ApiError::bad_request(format!("{name} is not an ISO-8601 time"))))
            .transpose()
    }

    fn window(&self) -> Result<Window, ApiError> {
        let (from, to) = (self.time("from")?, self.time("to")?);
        if let (Some(f), Some(t)) = (from, to) {
            if f > t {
                return Err(ApiError::bad_request("from is after to"));
            }
        }
        Ok((from, to))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterBody {
    username: String,
    password: String,
    #[serde(default = "default_category")]
    category: Category,
}

fn default_category() -> Category {
    Category::ExternalPacket
}

async fn register(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let b: RegisterBody = parse_json(&body)?;
    let external = matches!(b.category, Category::ExternalPacket | Category::ExternalSummary);
    if !external {
        let u = current_user(&st, &headers).await?;
        if u.category != Category::Operator {
            return Err(ApiError::forbidden("only operators may register this category"));
        }
    }
    let user = blocking(&st, move |a, now| Ok(a.register(&b.username, &b.password, b.category, now)?)).await?;
    Ok((StatusCode::CREATED, Json(user)).into_response())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct AupBody {
    version: Option<String>,
}

async fn accept_aup(
    State(st): State<AppState>,
    Path(name): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<User>, ApiError> {
    let me = current_user(&st, &headers).await?;
    if me.username != name && me.category != Category::Operator {
        return Err(ApiError::forbidden("cannot accept the AUP for another user"));
    }
    let b: AupBody = if body.is_empty() { AupBody::default() } else { parse_json(&body)? };
    let current = st.aup_version.to_string();
    if b.version.as_ref().is_some_and(|v| *v != current) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "aup_outdated",
            "the AUP has changed; fetch GET /aup and accept the current version",
        ));
    }
    let u = blocking(&st, move |a, now| Ok(a.accept_aup(&name, &current, now)?)).await?;
    Ok(Json(u))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LoginBody {
    username: String,
    password: String,
}

async fn login(State(st): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let b: LoginBody = parse_json(&body)?;
    let s = blocking(&st, move |a, now| Ok(a.login(&b.username, &b.password, now)?)).await?;
    Ok((StatusCode::CREATED, Json(s)).into_response())
}

async fn aup(State(st): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "version": &*st.aup_version, "text": &*st.aup_text }))
}

async fn search(
    State(st): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<Vec<CatalogEntry>>, ApiError> {
    let p = Params::new(q, &["probe", "link", "from", "to", "tier"])?;
    let (from, to) = p.window()?;
    let tier = p
        .text("tier")
        .map(|t| t.parse::<TierName>().map_err(|e| ApiError::bad_request(e.to_string())))
        .transpose()?;
    let filter = SearchFilter {
        probe: p.text("probe"),
        link: p.text("link"),
        from,
        to,
        tier,
    };
    let rows = blocking(&st, move |a, _| Ok(a.search(&filter)?)).await?;
    Ok(Json(rows))
}

async fn grant(
    State(st): State<AppState>,
    Path(file): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let u = current_user(&st, &headers).await?;
    let g = blocking(&st, move |a, now| Ok(a.authorize_download(&u.username, &file, now)?)).await?;
    Ok((StatusCode::CREATED, Json(g)).into_response())
}

fn tar_bundle(archive: &Archive, e: &CatalogEntry) -> Result<Vec<u8>, ApiError> {
    let gone = |err: io::Error| {
        if err.kind() == io::ErrorKind::NotFound {
            ApiError::from(ArchiveError::FileExpired(e.meta.file_name.clone()))
        } else {
            ApiError::internal(err.to_string())
        }
    };
    let path = archive.trace_path(&e.meta);
    let mut b = tar::Builder::new(Vec::new());
    b.mode(tar::HeaderMode::Deterministic);
    b.append_path_with_name(&path, &e.meta.file_name).map_err(gone)?;
    let sidecar = e.meta.sidecar_name();
    let sidecar_path = path.with_file_name(&sidecar);
    match std::fs::read(&sidecar_path) {
        Ok(bytes) => {
            let mut h = tar::Header::new_gnu();
            h.set_size(bytes.len() as u64);
            h.set_mode(0o644);
            h.set_mtime(0);
            b.append_data(&mut h, &sidecar, bytes.as_slice()).map_err(gone)?;
        }
        Err(err) => return Err(gone(err)),
    }
    b.into_inner().map_err(gone)
}

#[derive(Deserialize)]
struct DownloadQuery {
    grant: Option<String>,
}

async fn download(
    State(st): State<AppState>,
    Path(file): Path<String>,
    Query(q): Query<DownloadQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let u = current_user(&st, &headers).await?;
    if !st.limiter.try_take(&u.username, st.now()) {
        return Err(ApiError::new(
            StatusCode::TOO_MANY_REQUESTS,
            "rate_limited",
            "download rate limit reached; try again shortly",
        ));
    }
    let (bytes, name) = blocking(&st, move |a, now| {
        let token = match q.grant {
            Some(t) => t,
            None => a.authorize_download(&u.username, &file, now)?.token,
        };
        let e = a.consume_grant(&token, &u.username, now)?;
        if e.meta.file_name != file {
            return Err(ArchiveError::GrantInvalid.into());
        }
        let stem = file.strip_suffix(".erf").unwrap_or(&file).to_string();
        Ok((tar_bundle(a, &e)?, stem))
    })
    .await?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/x-tar".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{name}.tar\"")),
        ],
        bytes,
    )
        .into_response())
}

async fn throughput(
    State(st): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let p = Params::new(q, &["link", "from", "to", "bin"])?;
    let (from, to) = p.window()?;
    let bin = match p.text("bin") {
        None => DEFAULT_BIN_SECS,
        Some(b) => b
            .parse::<u64>()
            .ok()
            .filter(|b| *b > 0)
            .ok_or_else(|| ApiError::bad_request("bin must be a positive number of seconds"))?,
    };
    let link = p.text("link");
    let series = blocking(&st, move |a, _| Ok(a.throughput(link.as_deref(), from, to, bin)?)).await?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], series.to_csv()).into_response())
}

async fn sources(
    State(st): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let p = Params::new(q, &["link", "from", "to"])?;
    let (from, to) = p.window()?;
    let link = p.text("link");
    let l = link.clone();
    let n = blocking(&st, move |a, _| Ok(a.distinct_sources(l.as_deref(), from, to)?)).await?;
    Ok(Json(serde_json::json!({
        "link": link,
        "from": from.map(|t| iso(&t)),
        "to": to.map(|t| iso(&t)),
        "distinct_sources": n,
    })))
}

async fn probes(State(st): State<AppState>) -> Result<Response, ApiError> {
    let list = blocking(&st, |a, _| Ok(a.probes()?)).await?;
    Ok(Json(list).into_response())
}
