//! wasm-bindgen bindings for the browser demo in `www/`.
//!
//! Each export takes plain values and returns a JSON string; the plain
//! Rust functions behind them are public so they can be tested natively.

use std::net::Ipv4Addr;
use std::time::Duration;

use serde::Serialize;
use tracevault::anon::{common_prefix_len, Anonymizer};
use tracevault::capture::synth::SizeDist;
use tracevault::capture::{synth_source, SynthConfig};
use tracevault::summary::{budget_report, parse_bytes, reference_tiers, BudgetRow, SeriesBuilder};
use tracevault::time::iso;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize, PartialEq)]
pub struct PrefixView {
    pub a: String,
    pub b: String,
    pub anon_a: String,
    pub anon_b: String,
    pub bits_a: String,
    pub bits_b: String,
    pub anon_bits_a: String,
    pub anon_bits_b: String,
    /// Shared leading bits, equal before and after.
    pub prefix_len: u32,
    pub anon_prefix_len: u32,
}

fn bits(addr: u32) -> String {
    format!("{addr:032b}")
}

pub fn prefix_view(key_hex: &str, a: &str, b: &str) -> Result<PrefixView, String> {
    let key = hex::decode(key_hex.trim()).map_err(|_| "key must be 64 hex digits".to_string())?;
    let anon = Anonymizer::from_key_bytes(&key).map_err(|e| e.to_string())?;
    let parse = |s: &str| {
        s.trim()
            .parse::<Ipv4Addr>()
            .map(u32::from)
            .map_err(|_| format!("{s:?} is not an IPv4 address"))
    };
    let (x, y) = (parse(a)?, parse(b)?);
    let (ax, ay) = (anon.anonymize_u32(x), anon.anonymize_u32(y));
    Ok(PrefixView {
        a: Ipv4Addr::from(x).to_string(),
        b: Ipv4Addr::from(y).to_string(),
        anon_a: Ipv4Addr::from(ax).to_string(),
        anon_b: Ipv4Addr::from(ay).to_string(),
        bits_a: bits(x),
        bits_b: bits(y),
        anon_bits_a: bits(ax),
        anon_bits_b: bits(ay),
        prefix_len: common_prefix_len(x, y),
        anon_prefix_len: common_prefix_len(ax, ay),
    })
}

pub fn budget_rows(capacity: &str) -> Result<Vec<BudgetRow>, String> {
    let bytes = parse_bytes(capacity).map_err(|e| e.to_string())?;
    budget_report(&reference_tiers(), bytes).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Throughput {
    pub start: String,
    pub bin_ms: u64,
    /// Wire bytes per bin.
    pub bins: Vec<u64>,
    pub total_bytes: u64,
    pub packets: u64,
}

const MAX_PACKETS: u32 = 2_000_000;

/// Throughput of the synthetic generator with IMIX frame sizes.
pub fn synth_throughput(seed: u64, packets: u32, rate_pps: f64, bin_ms: u32) -> Result<Throughput, String> {
    if bin_ms == 0 {
        return Err("bin width must be positive".into());
    }
    if packets > MAX_PACKETS {
        return Err(format!("at most {MAX_PACKETS} packets"));
    }
    let cfg = SynthConfig {
        seed,
        packets: packets as u64,
        rate_pps,
        sizes: SizeDist::Imix,
        ..SynthConfig::default()
    };
    let start = cfg.start;
    let mut b = SeriesBuilder::new(Duration::from_millis(bin_ms as u64), Some(start)).map_err(|e| e.to_string())?;
    let mut n = 0;
    for rec in synth_source(cfg).map_err(|e| e.to_string())? {
        b.add(rec.ts, rec.wlen as u64);
        n += 1;
    }
    let s = b.finish();
    Ok(Throughput {
        start: iso(&tracevault::time::erf_to_utc(start)),
        bin_ms: bin_ms as u64,
        total_bytes: s.total(),
        bins: s.bins,
        packets: n,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = prefixView)]
pub fn prefix_view_js(key_hex: &str, a: &str, b: &str) -> Result<String, JsError> {
    to_js(prefix_view(key_hex, a, b))
}

#[wasm_bindgen(js_name = budgetTable)]
pub fn budget_table_js(capacity: &str) -> Result<String, JsError> {
    to_js(budget_rows(capacity))
}

#[wasm_bindgen(js_name = synthThroughput)]
pub fn synth_throughput_js(seed: u32, packets: u32, rate_pps: f64, bin_ms: u32) -> Result<String, JsError> {
    to_js(synth_throughput(seed as u64, packets, rate_pps, bin_ms))
}
