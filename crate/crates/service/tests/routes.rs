mod common;

use std::io::Read;
use std::sync::{Arc, Mutex};

use axum::http::StatusCode;
use axum::Router;
use chrono::{DateTime, Duration, Utc};
use common::{at, get, make_file, post};
use serde_json::json;
use tempfile::TempDir;
use tracevault::capture::TraceFileMeta;
use tracevault::summary::TierName;
use tracevault_archive::{Archive, Category, RetentionPolicy};
use tracevault_service::{router, AppState};

const PROBE_XML: &str = r#"<probe id="p1"><hardware>DAG</hardware><software>dagsnap</software>
<link id="l1" bandwidth_bps="1000000000"/></probe>"#;

struct Fixture {
    _dir: TempDir,
    app: Router,
    state: AppState,
    clock: Arc<Mutex<DateTime<Utc>>>,
    live: TraceFileMeta,
    expired: TraceFileMeta,
    root_token: String,
}

fn open_state(dir: &std::path::Path, clock: Arc<Mutex<DateTime<Utc>>>) -> AppState {
    let archive = Archive::open(dir).unwrap().with_kdf_rounds(10);
    let c = clock.clone();
    AppState::new(archive, "Be nice.", 10).with_clock(Arc::new(move || *c.lock().unwrap()))
}

async fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(Mutex::new(at(0)));
    let state = open_state(dir.path(), clock.clone());
    let a = state.archive();
    let live = make_file(dir.path(), "p1", "l1", 0, 250, 0);
    let expired = make_file(dir.path(), "p1", "l1", 100, 50, 1);
    a.ingest(&live, TierName::Headers, at(0)).unwrap();
    a.ingest(&expired, TierName::Headers, at(-30 * 86_400)).unwrap();
    a.expire(at(0), &RetentionPolicy::default()).unwrap();
    a.ingest_probe_config(PROBE_XML, at(0)).unwrap();
    a.register("root", "rootpw", Category::Operator, at(0)).unwrap();
    let app = router(state.clone());
    let root_token = login(&app, "root", "rootpw").await;
    Fixture {
        _dir: dir,
        app,
        state,
        clock,
        live,
        expired,
        root_token,
    }
}

async fn login(app: &Router, user: &str, pw: &str) -> String {
    let r = post(app, "/sessions", None, json!({"username": user, "password": pw})).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
    r.json()["token"].as_str().unwrap().to_string()
}

/// Register through the API (operator-created where needed), log in and
/// optionally accept the AUP. Returns the bearer token.
async fn user(f: &Fixture, name: &str, cat: Category, accept: bool) -> String {
    let r = post(
        &f.app,
        "/users",
        Some(&f.root_token),
        json!({"username": name, "password": "pw", "category": cat}),
    )
    .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
    let t = login(&f.app, name, "pw").await;
    if accept {
        let r = post(&f.app, &format!("/users/{name}/aup"), Some(&t), json!({})).await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    }
    t
}

#[tokio::test]
async fn summary_is_open() {
    let f = fixture().await;
    let r = get(&f.app, "/summary/throughput?link=l1&bin=1&to=2008-01-01T00:00:03Z", None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.headers["content-type"], "text/csv");
    assert_eq!(
        r.text(),
        "bin_start,bytes\n2008-01-01T00:00:00Z,10000\n2008-01-01T00:00:01Z,10000\n2008-01-01T00:00:02Z,5000\n"
    );
    let r = get(&f.app, "/summary/sources?link=l1", None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["distinct_sources"], 250);
    let r = get(&f.app, "/summary/throughput?link=l1&bin=3600", None).await;
    assert_eq!(r.text(), "bin_start,bytes\n2008-01-01T00:00:00Z,30000\n");
    assert_eq!(get(&f.app, "/probes", None).await.json()[0]["probe_id"], "p1");
    assert_eq!(get(&f.app, "/aup", None).await.json()["text"], "Be nice.");
}

#[tokio::test]
async fn bad_filters_are_400() {
    let f = fixture().await;
    for uri in [
        "/traces?from=2008-01-02T00:00:00Z&to=2008-01-01T00:00:00Z",
        "/traces?from=yesterday",
        "/traces?tier=gold",
        "/traces?colour=red",
        "/summary/throughput?bin=0",
        "/summary/sources?from=2008-01-02T00:00:00Z&to=2008-01-01T00:00:00Z",
    ] {
        let r = get(&f.app, uri, None).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{uri}");
        assert_eq!(r.json()["error"], "bad_request");
    }
}

#[tokio::test]
async fn search_lists_expired_metadata() {
    let f = fixture().await;
    let r = get(&f.app, "/traces?probe=p1&link=l1", None).await;
    assert_eq!(r.status, StatusCode::OK);
    let rows = r.json();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["file_name"], f.live.file_name.as_str());
    assert_eq!(rows[0]["file_present"], true);
    assert_eq!(rows[1]["state"], "expired");
    assert_eq!(rows[1]["file_present"], false);
    let r = get(&f.app, "/traces?from=2008-01-01T00:00:50Z&to=2008-01-01T00:00:59Z", None).await;
    assert!(r.json().as_array().unwrap().is_empty());
}

#[tokio::test]
async fn download_needs_session() {
    let f = fixture().await;
    let uri = format!("/traces/{}/download", f.live.file_name);
    assert_eq!(get(&f.app, &uri, None).await.status, StatusCode::UNAUTHORIZED);
    assert_eq!(get(&f.app, &uri, Some("nonsense")).await.status, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn download_delivers_trace_and_sidecar() {
    let f = fixture().await;
    let t = user(&f, "ext", Category::ExternalPacket, true).await;
    let r = get(&f.app, &format!("/traces/{}/download", f.live.file_name), Some(&t)).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_eq!(r.headers["content-type"], "application/x-tar");
    let mut tar = tar::Archive::new(r.body.as_slice());
    let mut names = Vec::new();
    for e in tar.entries().unwrap() {
        let mut e = e.unwrap();
        let name = e.path().unwrap().to_string_lossy().into_owned();
        let mut bytes = Vec::new();
        e.read_to_end(&mut bytes).unwrap();
        let on_disk = f.state.archive().root().join("p1/l1").join(&name);
        assert_eq!(bytes, std::fs::read(on_disk).unwrap());
        names.push(name);
    }
    assert_eq!(names, vec![f.live.file_name.clone(), f.live.sidecar_name()]);
}

#[tokio::test]
async fn error_mapping() {
    let f = fixture().await;
    let pending = user(&f, "pending", Category::ExternalPacket, false).await;
    let summary = user(&f, "summary", Category::ExternalSummary, true).await;
    let ext = user(&f, "ext", Category::ExternalPacket, true).await;
    let dl = |file: &str| format!("/traces/{file}/download");

    let r = get(&f.app, &dl(&f.live.file_name), Some(&pending)).await;
    assert_eq!((r.status, r.json()["error"].clone()), (StatusCode::FORBIDDEN, json!("aup_required")));
    let r = get(&f.app, &dl(&f.live.file_name), Some(&summary)).await;
    assert_eq!((r.status, r.json()["error"].clone()), (StatusCode::FORBIDDEN, json!("category_forbidden")));
    let r = get(&f.app, &dl("p1_l1_20080101T000000_999999.erf"), Some(&ext)).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = get(&f.app, &dl(&f.expired.file_name), Some(&ext)).await;
    assert_eq!(r.status, StatusCode::GONE);
}

#[tokio::test]
async fn grants_are_single_use_and_expire() {
    let f = fixture().await;
    let t = user(&f, "ext", Category::ProjectMember, true).await;
    let r = post(&f.app, &format!("/traces/{}/grants", f.live.file_name), Some(&t), json!({})).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let g = r.json()["token"].as_str().unwrap().to_string();
    let uri = format!("/traces/{}/download?grant={g}", f.live.file_name);
    assert_eq!(get(&f.app, &uri, Some(&t)).await.status, StatusCode::OK);
    let again = get(&f.app, &uri, Some(&t)).await;
    assert_eq!((again.status, again.json()["error"].clone()), (StatusCode::FORBIDDEN, json!("grant_invalid")));

    let r = post(&f.app, &format!("/traces/{}/grants", f.live.file_name), Some(&t), json!({})).await;
    let g = r.json()["token"].as_str().unwrap().to_string();
    *f.clock.lock().unwrap() += Duration::minutes(10);
    let uri = format!("/traces/{}/download?grant={g}", f.live.file_name);
    assert_eq!(get(&f.app, &uri, Some(&t)).await.status, StatusCode::FORBIDDEN);

    let downloads = f
        .state
        .archive()
        .audit_events(Some("ext"))
        .unwrap()
        .into_iter()
        .filter(|e| e.kind == "download")
        .count();
    assert_eq!(downloads, 1);
}

#[tokio::test]
async fn downloads_are_rate_limited() {
    let f = fixture().await;
    let t = user(&f, "ext", Category::HostSite, true).await;
    let uri = format!("/traces/{}/download", f.live.file_name);
    for _ in 0..10 {
        assert_eq!(get(&f.app, &uri, Some(&t)).await.status, StatusCode::OK);
    }
    assert_eq!(get(&f.app, &uri, Some(&t)).await.status, StatusCode::TOO_MANY_REQUESTS);
    *f.clock.lock().unwrap() += Duration::seconds(6);
    assert_eq!(get(&f.app, &uri, Some(&t)).await.status, StatusCode::OK);
}

#[tokio::test]
async fn registration_rules() {
    let f = fixture().await;
    let r = post(&f.app, "/users", None, json!({"username": "eve", "password": "pw", "category": "operator"})).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
    let r = post(&f.app, "/users", None, json!({"username": "eve", "password": "pw"})).await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert_eq!(r.json()["category"], "external_packet");
    assert!(r.json().get("verifier").is_none());
    let eve = login(&f.app, "eve", "pw").await;
    let r = post(&f.app, "/users", Some(&eve), json!({"username": "mallory", "password": "pw", "category": "host_site"})).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    let r = post(&f.app, "/users", None, json!({"username": "eve", "password": "pw"})).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let r = post(&f.app, "/users/root/aup", Some(&eve), json!({})).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    let r = post(&f.app, "/users/eve/aup", Some(&eve), json!({"version": "old"})).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let r = post(&f.app, "/sessions", None, json!({"username": "eve", "password": "wrong"})).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
    assert_eq!(r.json()["error"], "bad_credentials");
}

#[tokio::test]
async fn restart_keeps_users_and_audit() {
    let f = fixture().await;
    user(&f, "ext", Category::ExternalPacket, true).await;
    let before = f.state.archive().audit_events(None).unwrap();
    let dir = f.state.archive().root().to_path_buf();
    let state = open_state(&dir, f.clock.clone());
    assert_eq!(state.archive().audit_events(None).unwrap(), before);
    let app = router(state);
    let t = login(&app, "ext", "pw").await;
    let r = get(&app, &format!("/traces/{}/download", f.live.file_name), Some(&t)).await;
    assert_eq!(r.status, StatusCode::OK);
}
