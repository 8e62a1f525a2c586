#![allow(dead_code)]

use std::net::Ipv4Addr;
use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use chrono::{DateTime, TimeZone, Utc};
use http_body_util::BodyExt;
use tower::ServiceExt;
use tracevault::capture::{RotatingWriter, RotationPolicy, TraceFileMeta};
use tracevault::formats::erf::{ErfTimestamp, TraceRecord};
use tracevault::headers::build::{ipv4_frame, udp_header};
use tracevault::headers::IPPROTO_UDP;

pub const BASE: u32 = 1_199_145_600;

pub fn at(secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(BASE as i64 + secs, 0).unwrap()
}

/// One sealed file of `n` UDP packets 10 ms apart from distinct sources.
pub fn make_file(root: &Path, probe: &str, link: &str, start: u32, n: u32, seq: u32) -> TraceFileMeta {
    let policy = RotationPolicy::new(u64::MAX / 2, Duration::from_secs(3600)).unwrap();
    let mut w = RotatingWriter::new(root, probe, link, policy, true)
        .unwrap()
        .with_start_seq(seq);
    for i in 0..n {
        let frame = ipv4_frame(
            Ipv4Addr::from(0x0a00_0000 + i),
            Ipv4Addr::new(192, 0, 2, 1),
            IPPROTO_UDP,
            &[],
            &udp_header(1000, 53, 58),
            &[],
        );
        let ts = ErfTimestamp::from_nanos((BASE + start) as u128 * 1_000_000_000 + i as u128 * 10_000_000);
        let mut rec = TraceRecord::ethernet(ts, frame);
        rec.wlen = 100;
        w.append(&rec).unwrap();
    }
    w.finish().unwrap().expect("file sealed")
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap()
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

pub async fn send(app: &Router, method: Method, uri: &str, token: Option<&str>, body: Option<serde_json::Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

pub async fn get(app: &Router, uri: &str, token: Option<&str>) -> Reply {
    send(app, Method::GET, uri, token, None).await
}

pub async fn post(app: &Router, uri: &str, token: Option<&str>, body: serde_json::Value) -> Reply {
    send(app, Method::POST, uri, token, Some(body)).await
}
