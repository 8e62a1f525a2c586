//! Classic libpcap files with microsecond timestamps.
//!
//! Files are written little-endian. The reader accepts either byte order of
//! the microsecond magic; nanosecond pcap and pcapng are rejected.

use std::io::{Read, Seek, SeekFrom, Write};

use super::erf::read_full;
use super::FormatError;

pub const PCAP_MAGIC: u32 = 0xa1b2_c3d4;
const PCAP_MAGIC_NSEC: u32 = 0xa1b2_3c4d;
pub const PCAP_GLOBAL_HEADER_LEN: usize = 24;
pub const PCAP_RECORD_HEADER_LEN: usize = 16;
pub const LINKTYPE_ETHERNET: u32 = 1;
/// Snap length written when no cap is configured and no record was seen.
pub const DEFAULT_SNAPLEN: u32 = 65_535;

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PcapRecord {
    pub ts_sec: u32,
    pub ts_usec: u32,
    pub orig_len: u32,
    pub frame: Vec<u8>,
}

impl PcapRecord {
    pub fn incl_len(&self) -> u32 {
        self.frame.len() as u32
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct PcapHeader {
    pub version_major: u16,
    pub version_minor: u16,
    pub snaplen: u32,
    pub linktype: u32,
    pub big_endian: bool,
}

/// Pcap writer. The global header is written up front; when no snap length
/// cap was configured the header's snaplen is patched on [`finish`] to the
/// largest frame written.
///
/// [`finish`]: PcapWriter::finish
pub struct PcapWriter<W: Write + Seek> {
    inner: W,
    cap: Option<u32>,
    max_seen: u32,
    records: u64,
}

impl<W: Write + Seek> PcapWriter<W> {
    pub fn new(inner: W, snaplen_cap: Option<u32>) -> Result<Self, FormatError> {
        let mut w = PcapWriter {
            inner,
            cap: snaplen_cap,
            max_seen: 0,
            records: 0,
        };
        w.inner.seek(SeekFrom::Start(0))?;
        let snaplen = snaplen_cap.unwrap_or(DEFAULT_SNAPLEN);
        w.inner.write_all(&global_header(snaplen))?;
        Ok(w)
    }

    /// Write a record, truncating its frame to the configured cap.
    pub fn write_record(&mut self, rec: &PcapRecord) -> Result<(), FormatError> {
        if rec.ts_usec >= 1_000_000 {
            return Err(FormatError::BadTimestamp(rec.ts_usec));
        }
        let frame = match self.cap {
            Some(cap) if rec.frame.len() > cap as usize => &rec.frame[..cap as usize],
            _ => &rec.frame[..],
        };
        let incl = frame.len() as u32;
        let orig = rec.orig_len.max(incl);
        let mut hdr = [0u8; PCAP_RECORD_HEADER_LEN];
        hdr[0..4].copy_from_slice(&rec.ts_sec.to_le_bytes());
        hdr[4..8].copy_from_slice(&rec.ts_usec.to_le_bytes());
        hdr[8..12].copy_from_slice(&incl.to_le_bytes());
        hdr[12..16].copy_from_slice(&orig.to_le_bytes());
        self.inner.write_all(&hdr)?;
        self.inner.write_all(frame)?;
        self.max_seen = self.max_seen.max(incl);
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn finish(mut self) -> Result<W, FormatError> {
        if self.cap.is_none() && self.records > 0 {
            let end = self.inner.stream_position()?;
            self.inner.seek(SeekFrom::Start(16))?;
            self.inner.write_all(&self.max_seen.to_le_bytes())?;
            self.inner.seek(SeekFrom::Start(end))?;
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

fn global_header(snaplen: u32) -> [u8; PCAP_GLOBAL_HEADER_LEN] {
    let mut h = [0u8; PCAP_GLOBAL_HEADER_LEN];
    h[0..4].copy_from_slice(&PCAP_MAGIC.to_le_bytes());
    h[4..6].copy_from_slice(&2u16.to_le_bytes());
    h[6..8].copy_from_slice(&4u16.to_le_bytes());
    // thiszone and sigfigs stay zero
    h[16..20].copy_from_slice(&snaplen.to_le_bytes());
    h[20..24].copy_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
    h
}

pub struct PcapReader<R> {
    inner: R,
    header: PcapHeader,
    failed: bool,
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self, FormatError> {
        let mut h = [0u8; PCAP_GLOBAL_HEADER_LEN];
        let got = read_full(&mut inner, &mut h)?;
        if got < PCAP_GLOBAL_HEADER_LEN {
            return Err(FormatError::TruncatedRecord {
                needed: PCAP_GLOBAL_HEADER_LEN,
                available: got,
            });
        }
        let le = u32::from_le_bytes(h[0..4].try_into().unwrap());
        let big_endian = match le {
            PCAP_MAGIC => false,
            m if m.swap_bytes() == PCAP_MAGIC => true,
            m if m == PCAP_MAGIC_NSEC || m.swap_bytes() == PCAP_MAGIC_NSEC => {
                return Err(FormatError::UnsupportedPcap("nanosecond pcap".into()))
            }
            m => return Err(FormatError::UnsupportedPcap(format!("bad magic {m:#010x}"))),
        };
        let u16_at = |i: usize| {
            let b = [h[i], h[i + 1]];
            if big_endian {
                u16::from_be_bytes(b)
            } else {
                u16::from_le_bytes(b)
            }
        };
        let u32_at = |i: usize| {
            let b: [u8; 4] = h[i..i + 4].try_into().unwrap();
            if big_endian {
                u32::from_be_bytes(b)
            } else {
                u32::from_le_bytes(b)
            }
        };
        let header = PcapHeader {
            version_major: u16_at(4),
            version_minor: u16_at(6),
            snaplen: u32_at(16),
            linktype: u32_at(20),
            big_endian,
        };
        if header.linktype != LINKTYPE_ETHERNET {
            return Err(FormatError::UnsupportedPcap(format!(
                "link type {}",
                header.linktype
            )));
        }
        Ok(PcapReader {
            inner,
            header,
            failed: false,
        })
    }

    pub fn header(&self) -> &PcapHeader {
        &self.header
    }

    pub fn read_record(&mut self) -> Result<Option<PcapRecord>, FormatError> {
        let mut h = [0u8; PCAP_RECORD_HEADER_LEN];
        let got = read_full(&mut self.inner, &mut h)?;
        if got == 0 {
            return Ok(None);
        }
        if got < PCAP_RECORD_HEADER_LEN {
            return Err(FormatError::TruncatedRecord {
                needed: PCAP_RECORD_HEADER_LEN,
                available: got,
            });
        }
        let field = |i: usize| {
            let b: [u8; 4] = h[i..i + 4].try_into().unwrap();
            if self.header.big_endian {
                u32::from_be_bytes(b)
            } else {
                u32::from_le_bytes(b)
            }
        };
        let (ts_sec, ts_usec, incl, orig_len) = (field(0), field(4), field(8), field(12));
        if ts_usec >= 1_000_000 {
            return Err(FormatError::BadTimestamp(ts_usec));
        }
        if incl > u16::MAX as u32 * 4 {
            return Err(FormatError::MalformedLength(incl as usize));
        }
        let mut frame = vec![0u8; incl as usize];
        let got = read_full(&mut self.inner, &mut frame)?;
        if got < frame.len() {
            return Err(FormatError::TruncatedRecord {
                needed: frame.len(),
                available: got,
            });
        }
        Ok(Some(PcapRecord {
            ts_sec,
            ts_usec,
            orig_len,
            frame,
        }))
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<PcapRecord, FormatError>;

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

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn empty_file_is_header_only() {
        let w = PcapWriter::new(Cursor::new(Vec::new()), None).unwrap();
        let bytes = w.finish().unwrap().into_inner();
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[0..4], &[0xd4, 0xc3, 0xb2, 0xa1]);
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 2);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 4);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 65_535);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 1);
        let mut r = PcapReader::new(&bytes[..]).unwrap();
        assert!(r.next().is_none());
    }

    #[test]
    fn snaplen_is_patched_to_max_frame() {
        let mut w = PcapWriter::new(Cursor::new(Vec::new()), None).unwrap();
        for len in [54, 90, 42] {
            w.write_record(&PcapRecord {
                ts_sec: 1,
                ts_usec: 2,
                orig_len: 1500,
                frame: vec![0; len],
            })
            .unwrap();
        }
        let bytes = w.finish().unwrap().into_inner();
        let r = PcapReader::new(&bytes[..]).unwrap();
        assert_eq!(r.header().snaplen, 90);
        let recs: Vec<_> = r.collect::<Result<_, _>>().unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].incl_len(), 90);
        assert_eq!(recs[1].orig_len, 1500);
    }

    #[test]
    fn cap_truncates_frames() {
        let mut w = PcapWriter::new(Cursor::new(Vec::new()), Some(64)).unwrap();
        w.write_record(&PcapRecord {
            ts_sec: 0,
            ts_usec: 0,
            orig_len: 100,
            frame: vec![1; 100],
        })
        .unwrap();
        let bytes = w.finish().unwrap().into_inner();
        let mut r = PcapReader::new(&bytes[..]).unwrap();
        assert_eq!(r.header().snaplen, 64);
        let rec = r.next().unwrap().unwrap();
        assert_eq!(rec.incl_len(), 64);
        assert_eq!(rec.orig_len, 100);
    }

    #[test]
    fn reads_big_endian_files() {
        let mut bytes = PCAP_MAGIC.to_be_bytes().to_vec();
        bytes.extend_from_slice(&2u16.to_be_bytes());
        bytes.extend_from_slice(&4u16.to_be_bytes());
        bytes.extend_from_slice(&[0; 8]);
        bytes.extend_from_slice(&96u32.to_be_bytes());
        bytes.extend_from_slice(&1u32.to_be_bytes());
        for v in [10u32, 20, 2, 60] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        bytes.extend_from_slice(&[7, 8]);
        let mut r = PcapReader::new(&bytes[..]).unwrap();
        assert!(r.header().big_endian);
        let rec = r.next().unwrap().unwrap();
        assert_eq!((rec.ts_sec, rec.ts_usec, rec.orig_len), (10, 20, 60));
        assert_eq!(rec.frame, vec![7, 8]);
    }

    #[test]
    fn rejects_nanosecond_magic() {
        let mut bytes = PCAP_MAGIC_NSEC.to_le_bytes().to_vec();
        bytes.extend_from_slice(&[0; 20]);
        assert!(matches!(
            PcapReader::new(&bytes[..]),
            Err(FormatError::UnsupportedPcap(_))
        ));
    }
}
