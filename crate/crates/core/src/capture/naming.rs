//! Trace file naming: `<probe>_<link>_<yyyymmddThhmmss>_<seq>.erf`.

use chrono::{DateTime, NaiveDateTime, Utc};
use thiserror::Error;

pub const TRACE_EXT: &str = "erf";
const TIME_FORMAT: &str = "%Y%m%dT%H%M%S";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NameError {
    #[error("identifier {0:?} must be non-empty ASCII alphanumerics, '-' or '.'")]
    BadIdentifier(String),
    #[error("not a trace file name: {0:?}")]
    BadName(String),
}

/// Parsed components of a trace file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceName {
    pub probe_id: String,
    pub link_id: String,
    /// Whole seconds; sub-second precision is not part of the name.
    pub open_time: DateTime<Utc>,
    pub seq: u32,
}

/// Identifiers end up in file names and directory paths, so the accepted
/// alphabet excludes separators and the `_` field delimiter.
pub fn validate_identifier(id: &str) -> Result<(), NameError> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'.');
    if ok {
        Ok(())
    } else {
        Err(NameError::BadIdentifier(id.to_string()))
    }
}

pub fn file_name(
    probe_id: &str,
    link_id: &str,
    open_time: DateTime<Utc>,
    seq: u32,
) -> Result<String, NameError> {
    validate_identifier(probe_id)?;
    validate_identifier(link_id)?;
    Ok(format!(
        "{probe_id}_{link_id}_{}_{seq:06}.{TRACE_EXT}",
        open_time.format(TIME_FORMAT)
    ))
}

pub fn parse_file_name(name: &str) -> Result<TraceName, NameError> {
    let bad = || NameError::BadName(name.to_string());
    let stem = name
        .strip_suffix(TRACE_EXT)
        .and_then(|s| s.strip_suffix('.'))
        .ok_or_else(bad)?;
    let parts: Vec<&str> = stem.split('_').collect();
    let [probe, link, time, seq] = parts[..] else {
        return Err(bad());
    };
    validate_identifier(probe).map_err(|_| bad())?;
    validate_identifier(link).map_err(|_| bad())?;
    if seq.len() < 6 || !seq.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let seq: u32 = seq.parse().map_err(|_| bad())?;
    if time.len() != 15 {
        return Err(bad());
    }
    let open_time = NaiveDateTime::parse_from_str(time, TIME_FORMAT)
        .map_err(|_| bad())?
        .and_utc();
    let parsed = TraceName {
        probe_id: probe.to_string(),
        link_id: link.to_string(),
        open_time,
        seq,
    };
    // only canonical spellings are accepted, e.g. no extra leading zeros
    if file_name(probe, link, open_time, seq).as_deref() != Ok(name) {
        return Err(bad());
    }
    Ok(parsed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Timelike};
    use proptest::prelude::*;

    #[test]
    fn formats_example() {
        let t = Utc.with_ymd_and_hms(2008, 1, 2, 3, 4, 5).unwrap();
        assert_eq!(
            file_name("p1", "l1", t, 7).unwrap(),
            "p1_l1_20080102T030405_000007.erf"
        );
    }

    #[test]
    fn rejects_junk() {
        for junk in [
            "junk.erf",
            "p1_l1_20080102T030405_000007.pcap",
            "p1_l1_20080102T030405_7.erf",
            "p1_l1_20081302T030405_000007.erf",
            "p1_l1_20080102T030405_0000007.erf",
            "p_1_l1_20080102T030405_000007.erf",
            "p1_l1_20080102T030405_000007.erf.tmp",
        ] {
            assert!(
                matches!(parse_file_name(junk), Err(NameError::BadName(_))),
                "{junk}"
            );
        }
    }

    #[test]
    fn identifiers_are_checked() {
        let t = Utc.with_ymd_and_hms(2008, 1, 2, 3, 4, 5).unwrap();
        assert!(file_name("a/b", "l", t, 0).is_err());
        assert!(file_name("a_b", "l", t, 0).is_err());
        assert!(file_name("", "l", t, 0).is_err());
        assert!(file_name("..", "l", t, 0).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(
            probe in "[A-Za-z0-9][A-Za-z0-9.-]{0,11}",
            link in "[A-Za-z0-9][A-Za-z0-9.-]{0,11}",
            secs in 0i64..4_000_000_000,
            seq in any::<u32>(),
        ) {
            let t = Utc.timestamp_opt(secs, 0).unwrap();
            let name = file_name(&probe, &link, t, seq).unwrap();
            let parsed = parse_file_name(&name).unwrap();
            prop_assert_eq!(parsed.probe_id, probe);
            prop_assert_eq!(parsed.link_id, link);
            prop_assert_eq!(parsed.open_time, t.with_nanosecond(0).unwrap());
            prop_assert_eq!(parsed.seq, seq);
        }
    }
}
