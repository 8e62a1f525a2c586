//! Bytes-per-interval throughput series.

use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};

use super::SummaryError;
use crate::formats::erf::{ErfTimestamp, TraceRecord};
use crate::time::iso;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimeSeries {
    pub bin_width: Duration,
    pub t0: ErfTimestamp,
    /// Wire bytes per bin; bin `i` covers `[t0 + i*w, t0 + (i+1)*w)`.
    pub bins: Vec<u64>,
}

impl TimeSeries {
    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }

    pub fn bin_start(&self, i: usize) -> DateTime<Utc> {
        let ns = self.t0.to_nanos() + i as u128 * self.bin_width.as_nanos();
        Utc.timestamp_opt((ns / 1_000_000_000) as i64, (ns % 1_000_000_000) as u32)
            .single()
            .expect("in range")
    }

    /// CSV export, `bin_start,bytes` with ISO-8601 bin starts.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start,bytes\n");
        for (i, b) in self.bins.iter().enumerate() {
            out.push_str(&iso(&self.bin_start(i)));
            out.push(',');
            out.push_str(&b.to_string());
            out.push('\n');
        }
        out
    }
}

/// Incremental series construction.
#[derive(Clone, Debug)]
pub struct SeriesBuilder {
    bin_ns: u128,
    bin_width: Duration,
    t0: Option<ErfTimestamp>,
    bins: Vec<u64>,
    /// Bytes of records stamped before `t0`.
    pub underflow: u64,
}

impl SeriesBuilder {
    /// `t0` of `None` starts the series at the first record.
    pub fn new(bin_width: Duration, t0: Option<ErfTimestamp>) -> Result<Self, SummaryError> {
        if bin_width.is_zero() {
            return Err(SummaryError::BadBinWidth);
        }
        Ok(SeriesBuilder {
            bin_ns: bin_width.as_nanos(),
            bin_width,
            t0,
            bins: Vec::new(),
            underflow: 0,
        })
    }

    /// Bin index of `ts`: floor((ts - t0) / width), computed exactly on the
    /// fixed-point value.
    fn index(&self, t0: ErfTimestamp, ts: ErfTimestamp) -> usize {
        let diff = (ts.0 - t0.0) as u128;
        (diff * 1_000_000_000 / (self.bin_ns << 32)) as usize
    }

    pub fn add(&mut self, ts: ErfTimestamp, bytes: u64) {
        let t0 = *self.t0.get_or_insert(ts);
        if ts < t0 {
            self.underflow += bytes;
            return;
        }
        let i = self.index(t0, ts);
        if i >= self.bins.len() {
            self.bins.resize(i + 1, 0);
        }
        self.bins[i] += bytes;
    }

    /// Pad with empty bins so the series reaches `end` (exclusive).
    pub fn extend_to(&mut self, end: ErfTimestamp) {
        let Some(t0) = self.t0 else { return };
        if end <= t0 {
            return;
        }
        let diff = (end.0 - t0.0) as u128 * 1_000_000_000;
        let n = diff.div_ceil(self.bin_ns << 32) as usize;
        if n > self.bins.len() {
            self.bins.resize(n, 0);
        }
    }

    pub fn finish(self) -> TimeSeries {
        TimeSeries {
            bin_width: self.bin_width,
            t0: self.t0.unwrap_or_default(),
            bins: self.bins,
        }
    }
}

/// Series of wire bytes per bin, starting at the first record.
pub fn timeseries<'a, I>(records: I, bin_width: Duration) -> Result<TimeSeries, SummaryError>
where
    I: IntoIterator<Item = &'a TraceRecord>,
{
    let mut b = SeriesBuilder::new(bin_width, None)?;
    for r in records {
        b.add(r.ts, r.wlen as u64);
    }
    Ok(b.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec_at_ns(ns: u128, wlen: u16) -> TraceRecord {
        let mut r = TraceRecord::ethernet(ErfTimestamp::from_nanos(ns), vec![0; 14]);
        r.wlen = wlen;
        r
    }

    #[test]
    fn empty() {
        let s = timeseries(&[], Duration::from_millis(1)).unwrap();
        assert!(s.bins.is_empty());
        assert_eq!(s.total(), 0);
    }

    #[test]
    fn millisecond_bins() {
        let base = 1_000_000_000_000u128;
        let recs = [
            rec_at_ns(base, 100),
            rec_at_ns(base + 400_000, 100),
            rec_at_ns(base + 1_200_000, 100),
        ];
        let s = timeseries(&recs, Duration::from_millis(1)).unwrap();
        assert_eq!(s.bins, vec![200, 100]);
    }

    #[test]
    fn zero_width_rejected() {
        assert!(SeriesBuilder::new(Duration::ZERO, None).is_err());
    }

    #[test]
    fn csv_export() {
        let recs = [rec_at_ns(1_199_145_600_000_000_000, 60)];
        let s = timeseries(&recs, Duration::from_secs(1)).unwrap();
        assert_eq!(s.to_csv(), "bin_start,bytes\n2008-01-01T00:00:00Z,60\n");
    }

    #[test]
    fn extend_covers_window() {
        let mut b = SeriesBuilder::new(Duration::from_millis(1), Some(ErfTimestamp::new(10, 0))).unwrap();
        b.add(ErfTimestamp::new(10, 0), 5);
        b.extend_to(ErfTimestamp::new(11, 0));
        assert_eq!(b.finish().bins.len(), 1000);
    }

    proptest! {
        #[test]
        fn conserves_bytes(
            gaps in proptest::collection::vec(0u64..5_000_000, 0..200),
            width_us in 1u64..100_000,
        ) {
            let mut t = 0u128;
            let recs: Vec<_> = gaps.iter().map(|g| { t += *g as u128; rec_at_ns(t, (*g % 1500) as u16) }).collect();
            let s = timeseries(&recs, Duration::from_micros(width_us)).unwrap();
            prop_assert_eq!(s.total(), recs.iter().map(|r| r.wlen as u64).sum::<u64>());
        }
    }
}
