//! Trace file codecs and ERF/pcap conversion.

pub mod erf;
pub mod pcap;

use std::io::{self, Read, Seek, Write};

use serde::Serialize;
use thiserror::Error;

use erf::{ErfReader, ErfTimestamp, ErfWriter, TraceRecord};
use pcap::{PcapReader, PcapRecord, PcapWriter};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("truncated record: need {needed} bytes, {available} available")]
    TruncatedRecord { needed: usize, available: usize },
    #[error("unsupported ERF record type {0}")]
    UnsupportedType(u8),
    #[error("malformed record length {0}")]
    MalformedLength(usize),
    #[error("record of {0} bytes exceeds the 16-bit length field")]
    FrameTooLarge(usize),
    #[error("unsupported pcap file: {0}")]
    UnsupportedPcap(String),
    #[error("microsecond field {0} out of range")]
    BadTimestamp(u32),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Which file format a path holds.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TraceFormat {
    Erf,
    Pcap,
}

impl TraceFormat {
    /// Sniff the format from the first four bytes.
    pub fn sniff(head: &[u8]) -> TraceFormat {
        if head.len() >= 4 {
            let m = u32::from_le_bytes(head[..4].try_into().unwrap());
            if m == pcap::PCAP_MAGIC || m.swap_bytes() == pcap::PCAP_MAGIC {
                return TraceFormat::Pcap;
            }
            if m == 0xa1b2_3c4d || m.swap_bytes() == 0xa1b2_3c4d {
                return TraceFormat::Pcap;
            }
        }
        TraceFormat::Erf
    }
}

/// Totals gathered while converting, including what pcap cannot carry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConversionStats {
    pub records: u64,
    /// Sum of ERF loss counters.
    pub total_lost: u64,
    /// Records whose rx-error flag was dropped by the conversion.
    pub rx_error_records: u64,
    pub max_frame: u32,
}

/// Map one ERF record to pcap. ERF flags and the loss counter have no pcap
/// equivalent and are dropped.
pub fn erf_to_pcap_record(rec: &TraceRecord) -> PcapRecord {
    let (sec, usec) = rec.ts.to_micros();
    PcapRecord {
        // seconds past 2106 wrap, matching the 32-bit pcap field
        ts_sec: sec as u32,
        ts_usec: usec,
        orig_len: rec.wlen as u32,
        frame: rec.frame.clone(),
    }
}

pub fn pcap_to_erf_record(rec: &PcapRecord) -> Result<TraceRecord, FormatError> {
    if rec.orig_len > u16::MAX as u32 {
        return Err(FormatError::FrameTooLarge(rec.orig_len as usize));
    }
    let out = TraceRecord {
        ts: ErfTimestamp::from_micros(rec.ts_sec, rec.ts_usec),
        wlen: rec.orig_len as u16,
        frame: rec.frame.clone(),
        ..Default::default()
    };
    if out.rlen() > u16::MAX as usize {
        return Err(FormatError::FrameTooLarge(out.rlen()));
    }
    Ok(out)
}

/// Stream ERF records into a pcap file.
pub fn convert_erf_to_pcap<I, W>(
    records: I,
    out: W,
    snaplen_cap: Option<u32>,
) -> Result<(W, ConversionStats), FormatError>
where
    I: IntoIterator<Item = Result<TraceRecord, FormatError>>,
    W: Write + Seek,
{
    let mut writer = PcapWriter::new(out, snaplen_cap)?;
    let mut stats = ConversionStats::default();
    for rec in records {
        let rec = rec?;
        stats.records += 1;
        stats.total_lost += rec.lctr as u64;
        if rec.flags.rx_error() {
            stats.rx_error_records += 1;
        }
        stats.max_frame = stats.max_frame.max(rec.frame.len() as u32);
        writer.write_record(&erf_to_pcap_record(&rec))?;
    }
    Ok((writer.finish()?, stats))
}

/// Stream a pcap file into ERF records.
pub fn convert_pcap_to_erf<R, W>(input: R, out: W) -> Result<(W, ConversionStats), FormatError>
where
    R: Read,
    W: Write,
{
    let reader = PcapReader::new(input)?;
    let mut writer = ErfWriter::new(out);
    let mut stats = ConversionStats::default();
    for rec in reader {
        let rec = pcap_to_erf_record(&rec?)?;
        stats.records += 1;
        stats.max_frame = stats.max_frame.max(rec.frame.len() as u32);
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok((writer.into_inner(), stats))
}

/// Open any supported trace file as a stream of ERF records. Pcap input is
/// converted on the fly.
pub fn open_trace<R: Read + 'static>(
    mut input: R,
) -> Result<Box<dyn Iterator<Item = Result<TraceRecord, FormatError>>>, FormatError> {
    let mut head = [0u8; 4];
    let got = erf::read_full(&mut input, &mut head)?;
    let chained = io::Cursor::new(head[..got].to_vec()).chain(input);
    match TraceFormat::sniff(&head[..got]) {
        TraceFormat::Erf => Ok(Box::new(ErfReader::new(chained))),
        TraceFormat::Pcap => {
            let reader = PcapReader::new(chained)?;
            Ok(Box::new(
                reader.map(|r| r.and_then(|rec| pcap_to_erf_record(&rec))),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn field_mapping() {
        let mut rec = TraceRecord::ethernet(ErfTimestamp::new(1, 0x8000_0000), vec![0; 54]);
        rec.wlen = 1500;
        rec.lctr = 3;
        let p = erf_to_pcap_record(&rec);
        assert_eq!((p.ts_sec, p.ts_usec), (1, 500_000));
        assert_eq!(p.incl_len(), 54);
        assert_eq!(p.orig_len, 1500);
    }

    #[test]
    fn stats_carry_loss_and_rx_errors() {
        let mut a = TraceRecord::ethernet(ErfTimestamp::new(1, 0), vec![0; 60]);
        a.lctr = 4;
        a.flags.0 |= erf::ErfFlags::RX_ERROR;
        let mut b = TraceRecord::ethernet(ErfTimestamp::new(2, 0), vec![0; 70]);
        b.lctr = 1;
        let (out, stats) =
            convert_erf_to_pcap(vec![Ok(a), Ok(b)], Cursor::new(Vec::new()), None).unwrap();
        assert_eq!(stats.records, 2);
        assert_eq!(stats.total_lost, 5);
        assert_eq!(stats.rx_error_records, 1);
        // flagged record still emitted
        let n = PcapReader::new(&out.get_ref()[..]).unwrap().count();
        assert_eq!(n, 2);
    }

    #[test]
    fn open_trace_sniffs_both_formats() {
        let recs: Vec<_> = (0..3)
            .map(|i| TraceRecord::ethernet(ErfTimestamp::new(i, 0), vec![i as u8; 20]))
            .collect();
        let mut erf_bytes = Vec::new();
        for r in &recs {
            r.encode_into(&mut erf_bytes).unwrap();
        }
        let back: Vec<_> = open_trace(Cursor::new(erf_bytes.clone()))
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(back, recs);

        let (pcap, _) =
            convert_erf_to_pcap(recs.iter().cloned().map(Ok), Cursor::new(Vec::new()), None)
                .unwrap();
        let back: Vec<_> = open_trace(Cursor::new(pcap.into_inner()))
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(back, recs);
    }
}
