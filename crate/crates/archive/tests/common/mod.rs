#![allow(dead_code)]

use std::net::Ipv4Addr;
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};
use tracevault::capture::{RotatingWriter, RotationPolicy, TraceFileMeta};
use tracevault::formats::erf::{ErfTimestamp, TraceRecord};
use tracevault::headers::build::{ipv4_frame, udp_header};
use tracevault::headers::IPPROTO_UDP;

pub const BASE: u32 = 1_199_145_600; // 2008-01-01T00:00:00Z

pub fn at(secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(BASE as i64 + secs, 0).unwrap()
}

/// Write one sealed file on `probe`/`link` holding `n` 100-byte UDP packets
/// from distinct sources, one per 10 ms starting at `start` seconds past
/// the base time.
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
            &[0; 58],
        );
        let ts = ErfTimestamp::from_nanos((BASE + start) as u128 * 1_000_000_000 + i as u128 * 10_000_000);
        let mut rec = TraceRecord::ethernet(ts, frame);
        rec.wlen = 100;
        w.append(&rec).unwrap();
    }
    w.finish().unwrap().expect("file sealed")
}
