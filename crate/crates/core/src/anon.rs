//! Prefix-preserving IPv4 anonymization (Crypto-PAn construction).
//!
//! Bit `i` of the output is bit `i` of the input XOR the most significant
//! bit of `AES_k(prefix_i || pad[i..])`, where `prefix_i` is the first `i`
//! input bits and `pad` is `AES_k` of the second half of the key. Two
//! addresses sharing a `k`-bit prefix therefore share exactly a `k`-bit
//! anonymized prefix, and the mapping is a bijection for a fixed key.

use std::fmt;
use std::net::Ipv4Addr;
use std::path::Path;

use aes::cipher::{generic_array::GenericArray, BlockEncrypt, KeyInit};
use aes::Aes128;
use thiserror::Error;

use crate::formats::erf::TraceRecord;
use crate::headers::{parse_headers, HeaderError, HeaderSummary, ETHERTYPE_IPV4};

pub const KEY_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum AnonError {
    #[error("anonymization key must be {KEY_LEN} bytes, got {0}")]
    BadKeyLength(usize),
    #[error("key file is not {} hex characters", KEY_LEN * 2)]
    BadKeyFile,
    #[error("reading key file: {0}")]
    Io(#[from] std::io::Error),
    #[error("record carries no IPv4 header")]
    NotIp,
    /// The IPv4 header is cut before the addresses end; whatever address
    /// bytes were present have been zeroed.
    #[error("IPv4 header truncated before the address fields")]
    TruncatedAddress,
}

/// 256 bits of secret: AES-128 key followed by the pad seed.
///
/// Deliberately not `Serialize`; `Debug` never prints the material.
#[derive(Clone, PartialEq, Eq)]
pub struct AnonKey([u8; KEY_LEN]);

impl AnonKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AnonError> {
        let arr: [u8; KEY_LEN] = bytes
            .try_into()
            .map_err(|_| AnonError::BadKeyLength(bytes.len()))?;
        Ok(AnonKey(arr))
    }

    /// Parse the key file format: 64 hex characters on one line.
    pub fn from_hex(text: &str) -> Result<Self, AnonError> {
        let line = text.trim_end_matches(['\n', '\r']);
        if line.len() != KEY_LEN * 2 || line.contains(char::is_whitespace) {
            return Err(AnonError::BadKeyFile);
        }
        let bytes = hex::decode(line).map_err(|_| AnonError::BadKeyFile)?;
        Self::from_bytes(&bytes)
    }

    pub fn load(path: &Path) -> Result<Self, AnonError> {
        Self::from_hex(&std::fs::read_to_string(path)?)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for AnonKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("AnonKey(..)")
    }
}

/// Keyed prefix-preserving address mapping. Immutable once built.
#[derive(Clone)]
pub struct Anonymizer {
    cipher: Aes128,
    pad: [u8; 16],
}

impl fmt::Debug for Anonymizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Anonymizer(..)")
    }
}

impl Anonymizer {
    pub fn new(key: &AnonKey) -> Self {
        let cipher = Aes128::new(GenericArray::from_slice(&key.0[..16]));
        let mut pad = GenericArray::clone_from_slice(&key.0[16..]);
        cipher.encrypt_block(&mut pad);
        Anonymizer {
            cipher,
            pad: pad.into(),
        }
    }

    pub fn from_key_bytes(bytes: &[u8]) -> Result<Self, AnonError> {
        Ok(Self::new(&AnonKey::from_bytes(bytes)?))
    }

    pub fn anonymize_u32(&self, addr: u32) -> u32 {
        let pad_head = u32::from_be_bytes(self.pad[..4].try_into().unwrap());
        let mut block = GenericArray::clone_from_slice(&self.pad);
        let mut otp = 0u32;
        for pos in 0..32 {
            // first `pos` bits from the address, remaining bits from the pad
            let head = if pos == 0 {
                pad_head
            } else {
                let keep = u32::MAX << (32 - pos);
                (addr & keep) | (pad_head & !keep)
            };
            block[..4].copy_from_slice(&head.to_be_bytes());
            block[4..].copy_from_slice(&self.pad[4..]);
            self.cipher.encrypt_block(&mut block);
            otp |= ((block[0] >> 7) as u32) << (31 - pos);
        }
        addr ^ otp
    }

    pub fn anonymize_v4(&self, addr: Ipv4Addr) -> Ipv4Addr {
        Ipv4Addr::from(self.anonymize_u32(u32::from(addr)))
    }

    /// Rewrite source and destination addresses in place and recompute the
    /// IPv4 header checksum. No other byte changes. Transport checksums are
    /// left as they were; they cover a pseudo-header with the old addresses
    /// and a payload that is usually gone.
    pub fn anonymize_record(&self, rec: &mut TraceRecord) -> Result<(), AnonError> {
        let summary = match parse_headers(&rec.frame) {
            Ok(s) => s,
            Err(HeaderError::TruncatedLayer { partial, .. }) => *partial,
            Err(HeaderError::FrameTooShort(_)) => return Err(AnonError::NotIp),
        };
        if summary.ethertype != ETHERTYPE_IPV4 {
            return Err(AnonError::NotIp);
        }
        let Some(ip) = summary.ip_offset() else {
            return self.scrub_partial(rec, &summary);
        };
        let frame = &mut rec.frame;
        for field in [ip + 12, ip + 16] {
            let old = u32::from_be_bytes(frame[field..field + 4].try_into().unwrap());
            frame[field..field + 4].copy_from_slice(&self.anonymize_u32(old).to_be_bytes());
        }
        let end = ip + summary.ip_header_len;
        if end <= frame.len() {
            frame[ip + 10] = 0;
            frame[ip + 11] = 0;
            let csum = ipv4_checksum(&frame[ip..end]);
            frame[ip + 10..ip + 12].copy_from_slice(&csum.to_be_bytes());
        }
        Ok(())
    }

    /// An IPv4 ethertype whose header did not yield addresses: either the
    /// version/IHL is bogus (then the bytes are not treated as IP) or the
    /// header is cut short, in which case any address bytes are zeroed.
    fn scrub_partial(&self, rec: &mut TraceRecord, s: &HeaderSummary) -> Result<(), AnonError> {
        let ip = s.l2_len;
        let ip_bytes = &rec.frame[ip.min(rec.frame.len())..];
        let looks_ipv4 = ip_bytes.first().is_some_and(|b| b >> 4 == 4 && b & 0x0f >= 5);
        if !looks_ipv4 || rec.frame.len() <= ip + 12 {
            return Err(AnonError::NotIp);
        }
        let end = rec.frame.len().min(ip + 20);
        rec.frame[ip + 12..end].fill(0);
        Err(AnonError::TruncatedAddress)
    }
}

/// Number of leading bits on which two addresses agree.
pub fn common_prefix_len(x: u32, y: u32) -> u32 {
    (x ^ y).leading_zeros()
}

/// RFC 791 header checksum: ones' complement of the ones' complement sum.
/// Computing it over a header whose checksum field is already set yields 0
/// for a valid header.
pub fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    for chunk in header.chunks(2) {
        let word = match chunk {
            [a, b] => u16::from_be_bytes([*a, *b]),
            [a] => u16::from_be_bytes([*a, 0]),
            _ => unreachable!(),
        };
        sum += word as u32;
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Anonymization stage with the skipped-record tally the pipeline reports.
#[derive(Debug)]
pub struct AnonStage {
    anon: Anonymizer,
    pub anonymized: u64,
    pub skipped: u64,
}

impl AnonStage {
    pub fn new(anon: Anonymizer) -> Self {
        AnonStage {
            anon,
            anonymized: 0,
            skipped: 0,
        }
    }

    pub fn apply(&mut self, rec: &mut TraceRecord) {
        match self.anon.anonymize_record(rec) {
            Ok(()) => self.anonymized += 1,
            Err(_) => self.skipped += 1,
        }
    }

    pub fn anonymizer(&self) -> &Anonymizer {
        &self.anon
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::erf::ErfTimestamp;
    use crate::headers::build::*;
    use crate::headers::{IPPROTO_TCP, IPPROTO_UDP};

    /// Key and vectors published with the reference Crypto-PAn distribution
    /// (sample_trace_raw.txt / sample_trace_sanitized.txt).
    pub(crate) const REFERENCE_KEY: [u8; 32] = [
        21, 34, 23, 141, 51, 164, 207, 128, 19, 10, 91, 22, 73, 144, 125, 16, 216, 152, 143, 131,
        121, 121, 101, 39, 98, 87, 76, 45, 42, 132, 34, 2,
    ];

    pub(crate) const REFERENCE_VECTORS: &[(&str, &str)] = &[
        ("128.11.68.132", "135.242.180.132"),
        ("129.118.74.4", "134.136.186.123"),
        ("130.132.252.244", "133.68.164.234"),
        ("141.223.7.43", "141.167.8.160"),
        ("141.233.145.108", "141.129.237.235"),
        ("152.163.225.39", "151.140.114.167"),
        ("156.29.3.236", "147.225.12.42"),
        ("165.247.96.84", "162.9.99.234"),
        ("166.107.77.190", "160.132.178.185"),
        ("192.102.249.13", "252.138.62.131"),
        ("192.215.32.125", "252.43.47.189"),
        ("192.233.80.103", "252.25.108.8"),
        ("192.41.57.43", "252.222.221.184"),
        ("193.150.244.223", "253.169.52.216"),
        ("195.205.63.100", "255.186.223.5"),
        ("198.200.171.101", "249.199.68.213"),
        ("198.26.132.101", "249.36.123.202"),
        ("198.36.213.5", "249.7.21.132"),
        ("198.51.77.238", "249.18.186.254"),
        ("199.217.79.101", "248.38.184.213"),
        ("202.49.198.20", "245.206.7.234"),
        ("203.12.160.252", "244.248.163.4"),
        ("204.184.162.189", "243.192.77.90"),
        ("204.202.136.230", "243.178.4.198"),
        ("204.29.20.4", "243.33.20.123"),
        ("205.178.38.67", "242.108.198.51"),
        ("205.188.147.153", "242.96.16.101"),
        ("205.188.248.25", "242.96.88.27"),
        ("205.245.121.43", "242.21.121.163"),
        ("207.105.49.5", "241.118.205.138"),
        ("207.135.65.238", "241.202.129.222"),
        ("207.155.9.214", "241.220.250.22"),
        ("207.188.7.45", "241.255.249.220"),
        ("207.25.71.27", "241.33.119.156"),
        ("207.33.151.131", "241.1.233.131"),
        ("208.147.89.59", "227.237.98.191"),
        ("208.234.120.210", "227.154.67.17"),
        ("208.28.185.184", "227.39.94.90"),
        ("208.52.56.122", "227.8.63.165"),
        ("209.12.231.7", "226.243.167.8"),
        ("209.238.72.3", "226.6.119.243"),
        ("209.246.74.109", "226.22.124.76"),
        ("209.68.60.238", "226.184.220.233"),
        ("209.85.249.6", "226.170.70.6"),
        ("212.120.124.31", "228.135.163.231"),
        ("212.146.8.236", "228.19.4.234"),
        ("212.186.227.154", "228.59.98.98"),
        ("212.204.172.118", "228.71.195.169"),
        ("212.206.130.201", "228.69.242.193"),
        ("216.148.237.145", "235.84.194.111"),
        ("216.157.30.252", "235.89.31.26"),
        ("216.184.159.48", "235.96.225.78"),
        ("216.227.10.221", "235.28.253.36"),
        ("216.254.18.172", "235.7.16.162"),
        ("216.32.132.250", "235.192.139.38"),
        ("216.35.217.178", "235.195.157.81"),
        ("24.0.250.221", "100.15.198.226"),
        ("24.13.62.231", "100.2.192.247"),
        ("24.14.213.138", "100.1.42.141"),
        ("24.5.0.80", "100.9.15.210"),
        ("24.7.198.88", "100.10.6.25"),
        ("24.94.26.44", "100.88.228.35"),
        ("38.15.67.68", "64.3.66.187"),
        ("4.3.88.225", "124.60.155.63"),
        ("63.14.55.111", "95.9.215.7"),
        ("63.195.241.44", "95.179.238.44"),
        ("63.97.7.140", "95.97.9.123"),
        ("64.14.118.196", "0.255.183.58"),
        ("64.34.154.117", "0.221.154.117"),
        ("64.39.15.238", "0.219.7.41"),
    ];

    fn reference() -> Anonymizer {
        Anonymizer::from_key_bytes(&REFERENCE_KEY).unwrap()
    }

    #[test]
    fn published_vectors() {
        let a = reference();
        for (raw, anon) in REFERENCE_VECTORS {
            let raw: Ipv4Addr = raw.parse().unwrap();
            assert_eq!(a.anonymize_v4(raw).to_string(), *anon, "input {raw}");
        }
    }

    #[test]
    fn key_parsing() {
        assert!(matches!(
            AnonKey::from_bytes(&[0; 16]),
            Err(AnonError::BadKeyLength(16))
        ));
        let text = hex::encode(REFERENCE_KEY) + "\n";
        assert_eq!(AnonKey::from_hex(&text).unwrap().as_bytes(), &REFERENCE_KEY);
        assert!(AnonKey::from_hex("abcd").is_err());
        assert!(AnonKey::from_hex(&"zz".repeat(32)).is_err());
        assert_eq!(format!("{:?}", AnonKey::from_hex(&text).unwrap()), "AnonKey(..)");
    }

    #[test]
    fn zero_key_is_usable_and_deterministic() {
        let a = Anonymizer::from_key_bytes(&[0; 32]).unwrap();
        let b = Anonymizer::from_key_bytes(&[0; 32]).unwrap();
        let x = Ipv4Addr::new(10, 0, 0, 1);
        assert_eq!(a.anonymize_v4(x), b.anonymize_v4(x));
        assert_eq!(a.anonymize_v4(x), a.anonymize_v4(x));
    }

    #[test]
    fn prefix_len_examples() {
        assert_eq!(common_prefix_len(0x0a00_0001, 0x0a00_0001), 32);
        assert_eq!(common_prefix_len(0, 0x8000_0000), 0);
        let x = u32::from(Ipv4Addr::new(192, 168, 0, 1));
        let y = u32::from(Ipv4Addr::new(192, 168, 255, 254));
        assert_eq!(common_prefix_len(x, y), 16);
    }

    fn tcp_record() -> TraceRecord {
        let f = ipv4_frame(
            Ipv4Addr::new(10, 1, 2, 3),
            Ipv4Addr::new(172, 16, 5, 6),
            IPPROTO_TCP,
            &[1, 1, 1, 0],
            &tcp_header(4000, 443, 0x18, &[]),
            &[0x77; 40],
        );
        TraceRecord::ethernet(ErfTimestamp::new(3, 0), f)
    }

    #[test]
    fn record_only_address_and_checksum_bytes_change() {
        let a = reference();
        let orig = tcp_record();
        let mut rec = orig.clone();
        a.anonymize_record(&mut rec).unwrap();
        let changed: Vec<usize> = (0..orig.frame.len())
            .filter(|&i| orig.frame[i] != rec.frame[i])
            .collect();
        let allowed = 14 + 10..14 + 20;
        assert!(changed.iter().all(|i| allowed.contains(i)), "{changed:?}");
        assert_eq!(ipv4_checksum(&rec.frame[14..14 + 24]), 0);
        let s = parse_headers(&rec.frame).unwrap();
        assert_eq!(s.src_ip, Some(a.anonymize_v4(Ipv4Addr::new(10, 1, 2, 3))));
        assert_eq!(s.dst_ip, Some(a.anonymize_v4(Ipv4Addr::new(172, 16, 5, 6))));
        assert_eq!(rec.wlen, orig.wlen);
    }

    #[test]
    fn twice_composes() {
        let a = reference();
        let mut rec = tcp_record();
        a.anonymize_record(&mut rec).unwrap();
        a.anonymize_record(&mut rec).unwrap();
        let s = parse_headers(&rec.frame).unwrap();
        let src = Ipv4Addr::new(10, 1, 2, 3);
        assert_eq!(s.src_ip, Some(a.anonymize_v4(a.anonymize_v4(src))));
        assert_ne!(s.src_ip, Some(a.anonymize_v4(src)));
    }

    #[test]
    fn non_ip_is_skipped_unchanged() {
        let mut f = vec![0xff; 12];
        f.extend_from_slice(&0x0806u16.to_be_bytes());
        f.extend_from_slice(&[9; 28]);
        let mut rec = TraceRecord::ethernet(ErfTimestamp::default(), f);
        let before = rec.clone();
        let mut stage = AnonStage::new(reference());
        stage.apply(&mut rec);
        assert_eq!(stage.skipped, 1);
        assert_eq!(stage.anonymized, 0);
        assert_eq!(rec, before);
        assert!(matches!(reference().anonymize_record(&mut rec), Err(AnonError::NotIp)));
    }

    #[test]
    fn truncated_addresses_are_zeroed() {
        let f = ipv4_frame(
            Ipv4Addr::new(10, 9, 8, 7),
            Ipv4Addr::new(10, 6, 5, 4),
            IPPROTO_UDP,
            &[],
            &udp_header(1, 2, 0),
            &[],
        );
        let mut rec = TraceRecord::ethernet(ErfTimestamp::default(), f[..14 + 18].to_vec());
        assert!(matches!(
            reference().anonymize_record(&mut rec),
            Err(AnonError::TruncatedAddress)
        ));
        assert!(rec.frame[14 + 12..].iter().all(|&b| b == 0));
    }

    #[test]
    fn checksum_known_header() {
        // RFC 1071 style example header
        let h = [
            0x45, 0x00, 0x00, 0x73, 0x00, 0x00, 0x40, 0x00, 0x40, 0x11, 0x00, 0x00, 0xc0, 0xa8,
            0x00, 0x01, 0xc0, 0xa8, 0x00, 0xc7,
        ];
        assert_eq!(ipv4_checksum(&h), 0xb861);
    }
}
