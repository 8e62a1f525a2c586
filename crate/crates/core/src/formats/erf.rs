//! Extensible Record Format (ERF) records.
//!
//! An ERF file is a plain concatenation of records with no file header.
//! Each record starts with a 16 byte header:
//!
//! ```text
//!  0       8    9     10      12      14      16
//!  | ts LE | type | flags | rlen BE | lctr BE | wlen BE |
//! ```
//!
//! Ethernet records (type 2) carry two more bytes (offset, pad) before the
//! frame, so the smallest legal Ethernet record is 18 bytes.

use std::fmt;
use std::io::{self, Read, Write};

use super::FormatError;

/// Size of the generic ERF record header.
pub const ERF_HEADER_LEN: usize = 16;
/// Offset and pad bytes following the header of an Ethernet record.
pub const ETH_PAD_LEN: usize = 2;
/// Header plus Ethernet pad: the minimum `rlen` of an Ethernet record.
pub const ERF_ETH_OVERHEAD: usize = ERF_HEADER_LEN + ETH_PAD_LEN;
/// ERF type byte for Ethernet framing.
pub const TYPE_ETH: u8 = 2;

const FRAC_SCALE: u128 = 1 << 32;

/// 64-bit fixed point timestamp: seconds in the upper word, 2^-32 s units in
/// the lower word.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ErfTimestamp(pub u64);

impl ErfTimestamp {
    pub fn new(secs: u32, frac: u32) -> Self {
        ErfTimestamp(((secs as u64) << 32) | frac as u64)
    }

    pub fn secs(self) -> u32 {
        (self.0 >> 32) as u32
    }

    pub fn frac(self) -> u32 {
        self.0 as u32
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// Microsecond view, rounded to nearest. A fraction that rounds up to a
    /// full second carries into the seconds field, so the error is always
    /// at most half a microsecond.
    pub fn to_micros(self) -> (u64, u32) {
        let usec = (self.frac() as u128 * 1_000_000 + FRAC_SCALE / 2) >> 32;
        if usec == 1_000_000 {
            (self.secs() as u64 + 1, 0)
        } else {
            (self.secs() as u64, usec as u32)
        }
    }

    /// Inverse of [`to_micros`](Self::to_micros) for a microsecond value.
    pub fn from_micros(secs: u32, usec: u32) -> Self {
        debug_assert!(usec < 1_000_000);
        let frac = ((usec as u128) << 32).div_ceil(1_000_000);
        ErfTimestamp::new(secs, frac as u32)
    }

    /// Nanoseconds since the epoch, rounded to nearest.
    pub fn to_nanos(self) -> u128 {
        let frac_ns = (self.frac() as u128 * 1_000_000_000 + FRAC_SCALE / 2) >> 32;
        self.secs() as u128 * 1_000_000_000 + frac_ns
    }

    /// Nearest ERF timestamp to a nanosecond count. Saturates outside the
    /// 32-bit seconds range.
    pub fn from_nanos(nanos: u128) -> Self {
        let raw = ((nanos << 32) + 500_000_000) / 1_000_000_000;
        ErfTimestamp(raw.min(u64::MAX as u128) as u64)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        ErfTimestamp((secs * FRAC_SCALE as f64).round() as u64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / FRAC_SCALE as f64
    }

    /// Signed difference `self - earlier` in seconds.
    pub fn seconds_since(self, earlier: ErfTimestamp) -> f64 {
        (self.0 as i128 - earlier.0 as i128) as f64 / FRAC_SCALE as f64
    }

    pub fn saturating_add_secs_f64(self, secs: f64) -> Self {
        let delta = (secs * FRAC_SCALE as f64).round();
        if delta <= 0.0 {
            return self;
        }
        ErfTimestamp(self.0.saturating_add(delta as u64))
    }
}

impl fmt::Debug for ErfTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ErfTimestamp({}+{:#010x})", self.secs(), self.frac())
    }
}

/// ERF flags byte.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Debug)]
pub struct ErfFlags(pub u8);

impl ErfFlags {
    pub const IFACE_MASK: u8 = 0b0000_0011;
    pub const VARLEN: u8 = 0b0000_0100;
    pub const TRUNCATED: u8 = 0b0000_1000;
    pub const RX_ERROR: u8 = 0b0001_0000;
    pub const DS_ERROR: u8 = 0b0010_0000;

    pub fn interface(self) -> u8 {
        self.0 & Self::IFACE_MASK
    }

    pub fn with_interface(self, iface: u8) -> Self {
        ErfFlags((self.0 & !Self::IFACE_MASK) | (iface & Self::IFACE_MASK))
    }

    pub fn truncated(self) -> bool {
        self.0 & Self::TRUNCATED != 0
    }

    pub fn rx_error(self) -> bool {
        self.0 & Self::RX_ERROR != 0
    }
}

/// Link framing of a record. Only Ethernet is supported.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum LinkType {
    #[default]
    Ethernet,
}

/// One captured packet.
///
/// `rlen` is not stored; it is always `18 + frame.len()` so the record can
/// never disagree with its own frame.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct TraceRecord {
    pub ts: ErfTimestamp,
    pub link_type: LinkType,
    pub flags: ErfFlags,
    /// Packets dropped by the capture card since the previous record.
    pub lctr: u16,
    /// Original length on the wire.
    pub wlen: u16,
    /// Ethernet offset byte (usually 0).
    pub eth_offset: u8,
    /// Ethernet pad byte (usually 0).
    pub eth_pad: u8,
    pub frame: Vec<u8>,
}

impl TraceRecord {
    /// An Ethernet record whose frame is complete on the wire.
    pub fn ethernet(ts: ErfTimestamp, frame: Vec<u8>) -> Self {
        let wlen = frame.len().min(u16::MAX as usize) as u16;
        TraceRecord {
            ts,
            wlen,
            frame,
            ..Default::default()
        }
    }

    /// Record length as it appears in the header.
    pub fn rlen(&self) -> usize {
        ERF_ETH_OVERHEAD + self.frame.len()
    }

    /// Encode into `out`, returning the number of bytes written.
    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<usize, FormatError> {
        let rlen = self.rlen();
        if rlen > u16::MAX as usize {
            return Err(FormatError::FrameTooLarge(rlen));
        }
        out.reserve(rlen);
        out.extend_from_slice(&self.ts.0.to_le_bytes());
        out.push(TYPE_ETH);
        out.push(self.flags.0);
        out.extend_from_slice(&(rlen as u16).to_be_bytes());
        out.extend_from_slice(&self.lctr.to_be_bytes());
        out.extend_from_slice(&self.wlen.to_be_bytes());
        out.push(self.eth_offset);
        out.push(self.eth_pad);
        out.extend_from_slice(&self.frame);
        Ok(rlen)
    }

    pub fn encode(&self) -> Result<Vec<u8>, FormatError> {
        let mut out = Vec::with_capacity(self.rlen());
        self.encode_into(&mut out)?;
        Ok(out)
    }

    /// Decode one record from the front of `bytes`, returning it together
    /// with the number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(TraceRecord, usize), FormatError> {
        if bytes.len() < ERF_HEADER_LEN {
            return Err(FormatError::TruncatedRecord {
                needed: ERF_HEADER_LEN,
                available: bytes.len(),
            });
        }
        let header: &[u8; ERF_HEADER_LEN] = bytes[..ERF_HEADER_LEN].try_into().unwrap();
        let rlen = parse_header(header)?;
        if bytes.len() < rlen {
            return Err(FormatError::TruncatedRecord {
                needed: rlen,
                available: bytes.len(),
            });
        }
        Ok((build_record(header, &bytes[ERF_HEADER_LEN..rlen]), rlen))
    }
}

/// Validate the fixed header, returning `rlen`.
fn parse_header(header: &[u8; ERF_HEADER_LEN]) -> Result<usize, FormatError> {
    let ty = header[8];
    if ty != TYPE_ETH {
        return Err(FormatError::UnsupportedType(ty));
    }
    let rlen = u16::from_be_bytes([header[10], header[11]]) as usize;
    if rlen < ERF_ETH_OVERHEAD {
        return Err(FormatError::MalformedLength(rlen));
    }
    Ok(rlen)
}

/// `body` is everything after the 16 byte header: pad bytes then frame.
fn build_record(header: &[u8; ERF_HEADER_LEN], body: &[u8]) -> TraceRecord {
    TraceRecord {
        ts: ErfTimestamp(u64::from_le_bytes(header[..8].try_into().unwrap())),
        link_type: LinkType::Ethernet,
        flags: ErfFlags(header[9]),
        lctr: u16::from_be_bytes([header[12], header[13]]),
        wlen: u16::from_be_bytes([header[14], header[15]]),
        eth_offset: body[0],
        eth_pad: body[1],
        frame: body[ETH_PAD_LEN..].to_vec(),
    }
}

/// Streaming ERF reader. Yields records until a clean end of stream; a
/// partial record at the end is reported as [`FormatError::TruncatedRecord`].
pub struct ErfReader<R> {
    inner: R,
    offset: u64,
    failed: bool,
}

impl<R: Read> ErfReader<R> {
    pub fn new(inner: R) -> Self {
        ErfReader {
            inner,
            offset: 0,
            failed: false,
        }
    }

    /// Byte offset of the next record.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn read_record(&mut self) -> Result<Option<TraceRecord>, FormatError> {
        let mut header = [0u8; ERF_HEADER_LEN];
        let got = read_full(&mut self.inner, &mut header)?;
        if got == 0 {
            return Ok(None);
        }
        if got < ERF_HEADER_LEN {
            return Err(FormatError::TruncatedRecord {
                needed: ERF_HEADER_LEN,
                available: got,
            });
        }
        let rlen = parse_header(&header)?;
        let mut body = vec![0u8; rlen - ERF_HEADER_LEN];
        let got = read_full(&mut self.inner, &mut body)?;
        if got < body.len() {
            return Err(FormatError::TruncatedRecord {
                needed: rlen,
                available: ERF_HEADER_LEN + got,
            });
        }
        self.offset += rlen as u64;
        Ok(Some(build_record(&header, &body)))
    }
}

impl<R: Read> Iterator for ErfReader<R> {
    type Item = Result<TraceRecord, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let res = self.read_record().transpose();
        if matches!(res, Some(Err(_))) {
            self.failed = true;
        }
        res
    }
}

/// Streaming ERF writer.
pub struct ErfWriter<W> {
    inner: W,
    buf: Vec<u8>,
    bytes_written: u64,
}

impl<W: Write> ErfWriter<W> {
    pub fn new(inner: W) -> Self {
        ErfWriter {
            inner,
            buf: Vec::new(),
            bytes_written: 0,
        }
    }

    pub fn write_record(&mut self, rec: &TraceRecord) -> Result<usize, FormatError> {
        self.buf.clear();
        let n = rec.encode_into(&mut self.buf)?;
        self.inner.write_all(&self.buf)?;
        self.bytes_written += n as u64;
        Ok(n)
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes_written
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Like `read_exact` but reports how many bytes were read before EOF.
pub(crate) fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(ts: u64, ty: u8, rlen: u16, lctr: u16, wlen: u16) -> Vec<u8> {
        let mut v = ts.to_le_bytes().to_vec();
        v.push(ty);
        v.push(0);
        v.extend_from_slice(&rlen.to_be_bytes());
        v.extend_from_slice(&lctr.to_be_bytes());
        v.extend_from_slice(&wlen.to_be_bytes());
        v
    }

    #[test]
    fn decode_minimal_record() {
        let mut bytes = header(0x0000_0001_0000_0000, 2, 18, 0, 60);
        bytes.extend_from_slice(&[0, 0]);
        let (rec, used) = TraceRecord::decode(&bytes).unwrap();
        assert_eq!(used, 18);
        assert_eq!(rec.ts.secs(), 1);
        assert_eq!(rec.ts.frac(), 0);
        assert_eq!(rec.wlen, 60);
        assert!(rec.frame.is_empty());
    }

    #[test]
    fn rejects_short_rlen() {
        let mut bytes = header(0, 2, 10, 0, 60);
        bytes.extend_from_slice(&[0; 8]);
        assert!(matches!(
            TraceRecord::decode(&bytes),
            Err(FormatError::MalformedLength(10))
        ));
    }

    #[test]
    fn rejects_other_types() {
        let mut bytes = header(0, 1, 18, 0, 60);
        bytes.extend_from_slice(&[0, 0]);
        assert!(matches!(
            TraceRecord::decode(&bytes),
            Err(FormatError::UnsupportedType(1))
        ));
    }

    #[test]
    fn truncated_body() {
        let mut bytes = header(0, 2, 40, 0, 60);
        bytes.extend_from_slice(&[0; 4]);
        assert!(matches!(
            TraceRecord::decode(&bytes),
            Err(FormatError::TruncatedRecord { needed: 40, .. })
        ));
        let mut reader = ErfReader::new(&bytes[..]);
        assert!(reader.next().unwrap().is_err());
        assert!(reader.next().is_none());
    }

    #[test]
    fn encode_sizes() {
        let rec = TraceRecord::ethernet(ErfTimestamp::new(5, 0), Vec::new());
        assert_eq!(rec.encode().unwrap().len(), 18);
        let rec = TraceRecord::ethernet(ErfTimestamp::new(5, 0), vec![0xab; 54]);
        let bytes = rec.encode().unwrap();
        assert_eq!(bytes.len(), 72);
        assert_eq!(u16::from_be_bytes([bytes[10], bytes[11]]), 72);
    }

    #[test]
    fn oversized_frame() {
        let rec = TraceRecord::ethernet(ErfTimestamp::default(), vec![0; 65_530]);
        assert!(matches!(rec.encode(), Err(FormatError::FrameTooLarge(65_548))));
    }

    #[test]
    fn micros_rounding() {
        assert_eq!(ErfTimestamp::new(7, 0).to_micros(), (7, 0));
        assert_eq!(ErfTimestamp::new(7, 0x8000_0000).to_micros(), (7, 500_000));
        // 0xFFFF_FFFF * 10^6 / 2^32 = 999_999.99977 -> rounds to 10^6 and carries
        assert_eq!(ErfTimestamp::new(7, 0xFFFF_FFFF).to_micros(), (8, 0));
        assert_eq!(ErfTimestamp::new(u32::MAX, 0xFFFF_FFFF).to_micros(), (1 << 32, 0));
    }

    proptest! {
        #[test]
        fn timestamp_parts_round_trip(raw in any::<u64>()) {
            let ts = ErfTimestamp(raw);
            prop_assert_eq!(ErfTimestamp::new(ts.secs(), ts.frac()), ts);
            let (_, usec) = ts.to_micros();
            prop_assert!(usec < 1_000_000);
        }

        #[test]
        fn micros_error_bound(raw in any::<u64>()) {
            let ts = ErfTimestamp(raw);
            let (s, us) = ts.to_micros();
            // |(s*10^6 + us) * 2^32 - raw * 10^6| <= 2^31
            let lhs = (s as i128 * 1_000_000 + us as i128) << 32;
            let rhs = raw as i128 * 1_000_000;
            prop_assert!((lhs - rhs).abs() <= 1 << 31);
        }

        #[test]
        fn micros_inverse(secs in any::<u32>(), usec in 0u32..1_000_000) {
            prop_assert_eq!(ErfTimestamp::from_micros(secs, usec).to_micros(), (secs as u64, usec));
        }

        #[test]
        fn nanos_round_trip(raw in 0u64..(u64::MAX >> 1)) {
            // half a nanosecond is ~2.15 raw units, plus the final rounding
            let ts = ErfTimestamp(raw);
            let back = ErfTimestamp::from_nanos(ts.to_nanos());
            prop_assert!(back.0.abs_diff(raw) <= 3);
        }
    }
}
