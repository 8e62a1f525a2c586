//! Header-only packet trace handling for a long-running link monitor.
//!
//! The crate covers the data path from captured records to archived files:
//!
//! * [`formats`]: ERF and classic pcap codecs plus conversion between them.
//! * [`headers`]: layer 2/3/4 header parsing and payload stripping.
//! * [`anon`]: keyed prefix-preserving IPv4 anonymization.
//! * [`capture`]: rotation into bounded files with sidecar metadata, the
//!   dual-direction merge and a synthetic traffic source.
//! * [`summary`]: flow records, packet sampling, throughput series and the
//!   storage budget arithmetic for the retention tiers.

pub mod anon;
pub mod capture;
pub mod formats;
pub mod headers;
pub mod summary;
pub mod time;

pub use anon::{AnonKey, Anonymizer};
pub use formats::erf::{ErfFlags, ErfTimestamp, TraceRecord};
pub use headers::HeaderSummary;
