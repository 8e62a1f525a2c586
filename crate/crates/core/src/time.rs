//! Conversions between ERF timestamps and UTC wall-clock values.

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};

use crate::formats::erf::ErfTimestamp;

/// ERF timestamp to UTC, rounded to the nearest nanosecond.
pub fn erf_to_utc(ts: ErfTimestamp) -> DateTime<Utc> {
    let nanos = ts.to_nanos();
    let secs = (nanos / 1_000_000_000) as i64;
    let sub = (nanos % 1_000_000_000) as u32;
    Utc.timestamp_opt(secs, sub)
        .single()
        .expect("32-bit ERF seconds are always representable")
}

/// UTC to the nearest ERF timestamp. Instants before the epoch clamp to 0.
pub fn utc_to_erf(t: DateTime<Utc>) -> ErfTimestamp {
    let secs = t.timestamp();
    if secs < 0 {
        return ErfTimestamp(0);
    }
    let nanos = secs as u128 * 1_000_000_000 + t.timestamp_subsec_nanos() as u128;
    ErfTimestamp::from_nanos(nanos)
}

/// ISO-8601 UTC with a `Z` suffix and only as many fractional digits as
/// needed.
pub fn iso(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn iso_erf(ts: ErfTimestamp) -> String {
    iso(&erf_to_utc(ts))
}

/// Parse an RFC 3339 / ISO-8601 timestamp into UTC.
pub fn parse_iso(s: &str) -> Result<DateTime<Utc>, chrono::ParseError> {
    DateTime::parse_from_rfc3339(s).map(|t| t.with_timezone(&Utc))
}

/// Serde adapter writing `DateTime<Utc>` as ISO-8601 with a `Z` suffix.
pub mod iso_format {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::iso(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_iso(&s).map_err(serde::de::Error::custom)
    }
}
