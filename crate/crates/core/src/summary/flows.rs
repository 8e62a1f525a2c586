//! Netflow-style 5-tuple flow aggregation with active and inactive
//! timeouts.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::net::Ipv4Addr;
use std::time::Duration;

use serde::Serialize;

use crate::formats::erf::ErfTimestamp;
use crate::headers::{HeaderSummary, IPPROTO_TCP, IPPROTO_UDP};
use crate::time::iso_erf;

pub const DEFAULT_ACTIVE_TIMEOUT: Duration = Duration::from_secs(1800);
pub const DEFAULT_INACTIVE_TIMEOUT: Duration = Duration::from_secs(15);

/// Expired flows are looked for at most this often (in trace time).
const SWEEP_INTERVAL_RAW: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct FlowKey {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
}

impl FlowKey {
    /// Key of an IPv4 packet; `None` for anything else. Ports are 0 unless
    /// the protocol is TCP or UDP.
    pub fn from_headers(h: &HeaderSummary) -> Option<FlowKey> {
        let (src_ip, dst_ip, protocol) = (h.src_ip?, h.dst_ip?, h.protocol?);
        let ported = matches!(protocol, IPPROTO_TCP | IPPROTO_UDP);
        let port = |p: Option<u16>| if ported { p.unwrap_or(0) } else { 0 };
        Some(FlowKey {
            src_ip,
            dst_ip,
            src_port: port(h.src_port),
            dst_port: port(h.dst_port),
            protocol,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowRecord {
    pub key: FlowKey,
    pub packets: u64,
    pub bytes: u64,
    pub t_first: ErfTimestamp,
    pub t_last: ErfTimestamp,
    pub tcp_flags_or: u8,
}

impl FlowRecord {
    /// One line of the flow export:
    /// `src,dst,sport,dport,proto,packets,bytes,t_first,t_last,flags`.
    pub fn export_line(&self) -> String {
        let k = &self.key;
        let mut s = String::with_capacity(128);
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            k.src_ip,
            k.dst_ip,
            k.src_port,
            k.dst_port,
            k.protocol,
            self.packets,
            self.bytes,
            iso_erf(self.t_first),
            iso_erf(self.t_last),
            self.tcp_flags_or
        );
        s
    }
}

pub const FLOW_EXPORT_HEADER: &str = "src,dst,sport,dport,proto,packets,bytes,t_first,t_last,flags";

/// Single-writer flow cache.
pub struct FlowTable {
    active_raw: u64,
    inactive_raw: u64,
    flows: HashMap<FlowKey, FlowRecord>,
    last_sweep: Option<ErfTimestamp>,
}

fn to_raw(d: Duration) -> u64 {
    ((d.as_nanos() << 32) / 1_000_000_000).min(u64::MAX as u128) as u64
}

impl FlowTable {
    pub fn new(active_timeout: Duration, inactive_timeout: Duration) -> Self {
        FlowTable {
            active_raw: to_raw(active_timeout),
            inactive_raw: to_raw(inactive_timeout),
            flows: HashMap::new(),
            last_sweep: None,
        }
    }

    /// Timeouts so large nothing expires before the final flush.
    pub fn unbounded() -> Self {
        FlowTable {
            active_raw: u64::MAX,
            inactive_raw: u64::MAX,
            flows: HashMap::new(),
            last_sweep: None,
        }
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    fn expired(&self, f: &FlowRecord, now: ErfTimestamp) -> bool {
        now.0.saturating_sub(f.t_last.0) > self.inactive_raw
            || now.0.saturating_sub(f.t_first.0) > self.active_raw
    }

    /// Account one packet of `len` wire bytes. Returns flows that timed
    /// out as of `ts`.
    pub fn update(&mut self, hdr: &HeaderSummary, ts: ErfTimestamp, len: u64) -> Vec<FlowRecord> {
        let mut out = Vec::new();
        let due = self
            .last_sweep
            .is_none_or(|t| ts.0.saturating_sub(t.0) >= SWEEP_INTERVAL_RAW);
        if due {
            self.last_sweep = Some(ts);
            let (active, inactive) = (self.active_raw, self.inactive_raw);
            let is_expired = |f: &FlowRecord| {
                ts.0.saturating_sub(f.t_last.0) > inactive
                    || ts.0.saturating_sub(f.t_first.0) > active
            };
            let gone: Vec<FlowKey> = self
                .flows
                .values()
                .filter(|f| is_expired(f))
                .map(|f| f.key)
                .collect();
            for k in gone {
                out.extend(self.flows.remove(&k));
            }
        }
        let Some(key) = FlowKey::from_headers(hdr) else {
            return sorted(out);
        };
        if let Some(f) = self.flows.get(&key) {
            if self.expired(f, ts) {
                out.extend(self.flows.remove(&key));
            }
        }
        let f = self.flows.entry(key).or_insert_with(|| FlowRecord {
            key,
            packets: 0,
            bytes: 0,
            t_first: ts,
            t_last: ts,
            tcp_flags_or: 0,
        });
        f.packets += 1;
        f.bytes += len;
        f.t_first = f.t_first.min(ts);
        f.t_last = f.t_last.max(ts);
        f.tcp_flags_or |= hdr.tcp_flags.unwrap_or(0);
        sorted(out)
    }

    /// Drain every remaining flow, ordered by first-seen time then key.
    pub fn flush(&mut self) -> Vec<FlowRecord> {
        sorted(self.flows.drain().map(|(_, f)| f).collect())
    }
}

fn sorted(mut v: Vec<FlowRecord>) -> Vec<FlowRecord> {
    v.sort_by_key(|f| (f.t_first, f.key));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::headers::build::*;
    use crate::headers::parse_headers;

    fn hdr(sport: u16, flags: u8) -> HeaderSummary {
        let f = ipv4_frame(
            Ipv4Addr::new(1, 2, 3, 4),
            Ipv4Addr::new(5, 6, 7, 8),
            IPPROTO_TCP,
            &[],
            &tcp_header(sport, 80, flags, &[]),
            &[],
        );
        parse_headers(&f).unwrap()
    }

    fn secs(s: f64) -> ErfTimestamp {
        ErfTimestamp::from_secs_f64(s)
    }

    #[test]
    fn single_packet() {
        let mut t = FlowTable::new(DEFAULT_ACTIVE_TIMEOUT, DEFAULT_INACTIVE_TIMEOUT);
        assert!(t.update(&hdr(1000, 0x02), secs(1.0), 60).is_empty());
        let flows = t.flush();
        assert_eq!(flows.len(), 1);
        assert_eq!(flows[0].packets, 1);
        assert!(t.is_empty());
    }

    #[test]
    fn same_tuple_accumulates() {
        let mut t = FlowTable::new(DEFAULT_ACTIVE_TIMEOUT, DEFAULT_INACTIVE_TIMEOUT);
        t.update(&hdr(1000, 0x02), secs(1.0), 60);
        t.update(&hdr(1000, 0x10), secs(2.0), 1500);
        let flows = t.flush();
        assert_eq!(flows.len(), 1);
        assert_eq!(flows[0].packets, 2);
        assert_eq!(flows[0].bytes, 1560);
        assert_eq!(flows[0].tcp_flags_or, 0x12);
        assert_eq!(flows[0].t_first, secs(1.0));
        assert_eq!(flows[0].t_last, secs(2.0));
    }

    #[test]
    fn inactive_timeout_splits() {
        let mut t = FlowTable::new(DEFAULT_ACTIVE_TIMEOUT, Duration::from_secs(15));
        t.update(&hdr(1000, 0), secs(1.0), 60);
        let out = t.update(&hdr(1000, 0), secs(17.0), 60);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].packets, 1);
        assert_eq!(t.flush()[0].t_first, secs(17.0));
    }

    #[test]
    fn active_timeout_splits_long_flows() {
        let mut t = FlowTable::new(Duration::from_secs(10), Duration::from_secs(15));
        let mut expired = Vec::new();
        for i in 0..25 {
            expired.extend(t.update(&hdr(1000, 0), secs(i as f64), 100));
        }
        expired.extend(t.flush());
        assert_eq!(expired.len(), 3);
        assert_eq!(expired.iter().map(|f| f.packets).sum::<u64>(), 25);
    }

    #[test]
    fn sweep_expires_idle_flows_of_other_keys() {
        let mut t = FlowTable::new(DEFAULT_ACTIVE_TIMEOUT, Duration::from_secs(5));
        t.update(&hdr(1, 0), secs(0.0), 60);
        let out = t.update(&hdr(2, 0), secs(10.0), 60);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].key.src_port, 1);
    }

    #[test]
    fn non_ip_is_ignored() {
        let mut t = FlowTable::unbounded();
        let arp = HeaderSummary {
            ethertype: 0x0806,
            l2_len: 14,
            snap_len: 14,
            ..Default::default()
        };
        t.update(&arp, secs(0.0), 60);
        assert!(t.flush().is_empty());
    }

    #[test]
    fn export_line_format() {
        let mut t = FlowTable::unbounded();
        t.update(&hdr(1000, 0x02), ErfTimestamp::new(1_199_145_600, 0), 60);
        let line = t.flush()[0].export_line();
        assert_eq!(
            line,
            "1.2.3.4,5.6.7.8,1000,80,6,1,60,2008-01-01T00:00:00Z,2008-01-01T00:00:00Z,2"
        );
    }
}
