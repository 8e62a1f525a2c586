//! Seeded synthetic traffic: Ethernet/IPv4 TCP and UDP packets with
//! exponential inter-arrival times.

use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::formats::erf::{ErfTimestamp, TraceRecord};
use crate::headers::build::{ipv4_frame, tcp_header, udp_header};
use crate::headers::{IPPROTO_TCP, IPPROTO_UDP};

/// Largest untagged Ethernet frame without FCS.
pub const MAX_FRAME: usize = 1514;
const TCP_HEADERS: usize = 54;
const UDP_HEADERS: usize = 42;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("bad synthetic source configuration: {0}")]
    BadConfig(String),
}

/// Frame size distribution (bytes, Ethernet header included).
#[derive(Clone, Debug, PartialEq)]
pub enum SizeDist {
    Fixed(usize),
    Uniform { min: usize, max: usize },
    /// Classic 7:4:1 mix of 60, 590 and 1514 byte frames.
    Imix,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PayloadFill {
    Zero,
    /// Payload bytes cycle through this pattern.
    Pattern(Vec<u8>),
    Random,
}

/// Address pool: `count` consecutive addresses starting at `base`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AddrPool {
    pub base: Ipv4Addr,
    pub count: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    /// Number of packets to emit.
    pub packets: u64,
    /// Mean packet rate; 0 yields an empty stream.
    pub rate_pps: f64,
    pub start: ErfTimestamp,
    pub sizes: SizeDist,
    pub src_pool: AddrPool,
    pub dst_pool: AddrPool,
    pub flows: u32,
    /// Share of flows that are TCP; the rest are UDP.
    pub tcp_fraction: f64,
    pub payload: PayloadFill,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            packets: 10_000,
            rate_pps: 1_000.0,
            // 2008-01-01T00:00:00Z
            start: ErfTimestamp::new(1_199_145_600, 0),
            sizes: SizeDist::Imix,
            src_pool: AddrPool {
                base: Ipv4Addr::new(10, 0, 0, 0),
                count: 1 << 16,
            },
            dst_pool: AddrPool {
                base: Ipv4Addr::new(192, 168, 0, 0),
                count: 1 << 16,
            },
            flows: 256,
            tcp_fraction: 0.8,
            payload: PayloadFill::Zero,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::BadConfig(m.to_string()));
        if !self.rate_pps.is_finite() || self.rate_pps < 0.0 {
            return bad("rate must be finite and non-negative");
        }
        if self.flows == 0 && self.packets > 0 && self.rate_pps > 0.0 {
            return bad("at least one flow is required");
        }
        if !(0.0..=1.0).contains(&self.tcp_fraction) {
            return bad("tcp fraction must lie in [0, 1]");
        }
        for pool in [self.src_pool, self.dst_pool] {
            if pool.count == 0 || (u32::from(pool.base) as u64 + pool.count as u64) > 1 << 32 {
                return bad("address pool is empty or runs past 255.255.255.255");
            }
        }
        match self.sizes {
            SizeDist::Fixed(n) if !(UDP_HEADERS..=MAX_FRAME).contains(&n) => {
                return bad("fixed size outside 42..=1514")
            }
            SizeDist::Uniform { min, max }
                if min > max || min < UDP_HEADERS || max > MAX_FRAME =>
            {
                return bad("uniform sizes must satisfy 42 <= min <= max <= 1514")
            }
            _ => {}
        }
        if matches!(&self.payload, PayloadFill::Pattern(p) if p.is_empty()) {
            return bad("payload pattern is empty");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Flow {
    src: Ipv4Addr,
    dst: Ipv4Addr,
    sport: u16,
    dport: u16,
    tcp: bool,
}

/// Iterator of synthetic records.
pub struct SynthSource {
    cfg: SynthConfig,
    rng: ChaCha8Rng,
    flows: Vec<Flow>,
    now: ErfTimestamp,
    emitted: u64,
    pattern_pos: usize,
}

pub fn synth_source(cfg: SynthConfig) -> Result<SynthSource, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pick = |rng: &mut ChaCha8Rng, pool: AddrPool| {
        Ipv4Addr::from(u32::from(pool.base) + rng.gen_range(0..pool.count))
    };
    let flows = (0..cfg.flows)
        .map(|_| Flow {
            src: pick(&mut rng, cfg.src_pool),
            dst: pick(&mut rng, cfg.dst_pool),
            sport: rng.gen_range(1024..=u16::MAX),
            dport: [80, 443, 53, 22, 25, 8080][rng.gen_range(0..6)],
            tcp: rng.gen_bool(cfg.tcp_fraction),
        })
        .collect();
    Ok(SynthSource {
        now: cfg.start,
        cfg,
        rng,
        flows,
        emitted: 0,
        pattern_pos: 0,
    })
}

impl SynthSource {
    fn frame_size(&mut self) -> usize {
        match self.cfg.sizes {
            SizeDist::Fixed(n) => n,
            SizeDist::Uniform { min, max } => self.rng.gen_range(min..=max),
            SizeDist::Imix => match self.rng.gen_range(0..12) {
                0..=6 => 60,
                7..=10 => 590,
                _ => 1514,
            },
        }
    }

    fn payload(&mut self, len: usize) -> Vec<u8> {
        match &self.cfg.payload {
            PayloadFill::Zero => vec![0; len],
            PayloadFill::Random => (0..len).map(|_| self.rng.gen()).collect(),
            PayloadFill::Pattern(p) => {
                let out = p.iter().copied().cycle().skip(self.pattern_pos).take(len).collect();
                self.pattern_pos = (self.pattern_pos + len) % p.len();
                out
            }
        }
    }
}

impl Iterator for SynthSource {
    type Item = TraceRecord;

    fn next(&mut self) -> Option<TraceRecord> {
        if self.emitted >= self.cfg.packets || self.cfg.rate_pps == 0.0 {
            return None;
        }
        // exponential gap; 1 - u keeps the argument of ln in (0, 1]
        let u: f64 = self.rng.gen();
        self.now = self.now.saturating_add_secs_f64(-(1.0 - u).ln() / self.cfg.rate_pps);
        let flow = self.flows[self.rng.gen_range(0..self.flows.len())];
        let size = self.frame_size();
        let frame = if flow.tcp {
            let size = size.max(TCP_HEADERS);
            let flags = if self.rng.gen_bool(0.3) { 0x18 } else { 0x10 };
            let l4 = tcp_header(flow.sport, flow.dport, flags, &[]);
            let payload = self.payload(size - TCP_HEADERS);
            ipv4_frame(flow.src, flow.dst, IPPROTO_TCP, &[], &l4, &payload)
        } else {
            let payload = self.payload(size - UDP_HEADERS);
            let l4 = udp_header(flow.sport, flow.dport, payload.len());
            ipv4_frame(flow.src, flow.dst, IPPROTO_UDP, &[], &l4, &payload)
        };
        self.emitted += 1;
        Some(TraceRecord::ethernet(self.now, frame))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = if self.cfg.rate_pps == 0.0 {
            0
        } else {
            (self.cfg.packets - self.emitted) as usize
        };
        (left, Some(left))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::headers::parse_headers;

    #[test]
    fn zero_rate_is_empty() {
        let cfg = SynthConfig {
            rate_pps: 0.0,
            ..Default::default()
        };
        assert_eq!(synth_source(cfg).unwrap().count(), 0);
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig {
            seed: 42,
            packets: 500,
            payload: PayloadFill::Random,
            ..Default::default()
        };
        let a: Vec<_> = synth_source(cfg.clone()).unwrap().collect();
        let b: Vec<_> = synth_source(cfg.clone()).unwrap().collect();
        assert_eq!(a, b);
        let c: Vec<_> = synth_source(SynthConfig { seed: 43, ..cfg }).unwrap().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn duration_matches_rate() {
        let cfg = SynthConfig {
            seed: 7,
            packets: 10_000,
            rate_pps: 1_000.0,
            ..Default::default()
        };
        let start = cfg.start;
        let recs: Vec<_> = synth_source(cfg).unwrap().collect();
        assert_eq!(recs.len(), 10_000);
        assert!(recs.windows(2).all(|w| w[0].ts <= w[1].ts));
        let dur = recs.last().unwrap().ts.seconds_since(start);
        assert!((9.0..=11.0).contains(&dur), "duration {dur}");
    }

    #[test]
    fn frames_parse_and_sizes_hold() {
        let cfg = SynthConfig {
            seed: 1,
            packets: 300,
            sizes: SizeDist::Uniform { min: 60, max: 1514 },
            ..Default::default()
        };
        for r in synth_source(cfg).unwrap() {
            let s = parse_headers(&r.frame).unwrap();
            assert!(s.src_port.is_some());
            assert!((60..=1514).contains(&r.frame.len()));
            assert_eq!(r.wlen as usize, r.frame.len());
        }
    }

    #[test]
    fn bad_configs() {
        for cfg in [
            SynthConfig { rate_pps: -1.0, ..Default::default() },
            SynthConfig { rate_pps: f64::NAN, ..Default::default() },
            SynthConfig { flows: 0, ..Default::default() },
            SynthConfig { tcp_fraction: 1.5, ..Default::default() },
            SynthConfig { sizes: SizeDist::Fixed(10), ..Default::default() },
            SynthConfig { sizes: SizeDist::Uniform { min: 900, max: 100 }, ..Default::default() },
            SynthConfig { payload: PayloadFill::Pattern(vec![]), ..Default::default() },
            SynthConfig {
                src_pool: AddrPool { base: Ipv4Addr::new(255, 255, 255, 0), count: 512 },
                ..Default::default()
            },
        ] {
            assert!(synth_source(cfg).is_err());
        }
    }
}
