//! Streaming trace input and output for the file-to-file subcommands.

use std::cell::RefCell;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::rc::Rc;

use tracevault::formats::erf::{ErfWriter, TraceRecord};
use tracevault::formats::pcap::PcapWriter;
use tracevault::formats::{erf_to_pcap_record, open_trace, FormatError, TraceFormat};

use crate::error::CliError;

pub type Records = Box<dyn Iterator<Item = Result<TraceRecord, FormatError>>>;

pub fn open(path: &Path) -> Result<Records, CliError> {
    let f = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(open_trace(BufReader::new(f))?)
}

pub fn sniff(path: &Path) -> Result<TraceFormat, CliError> {
    use std::io::Read;
    let mut head = Vec::with_capacity(4);
    File::open(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?
        .take(4)
        .read_to_end(&mut head)?;
    Ok(TraceFormat::sniff(&head))
}

/// Output format named by a path's extension.
pub fn format_for(path: &Path) -> Option<TraceFormat> {
    match path.extension()?.to_str()? {
        "pcap" | "cap" => Some(TraceFormat::Pcap),
        "erf" => Some(TraceFormat::Erf),
        _ => None,
    }
}

pub enum Sink {
    Erf(ErfWriter<BufWriter<File>>),
    Pcap(PcapWriter<BufWriter<File>>),
}

impl Sink {
    pub fn create(path: &Path, format: TraceFormat, snaplen: Option<u32>) -> Result<Sink, CliError> {
        let f = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let w = BufWriter::new(f);
        Ok(match format {
            TraceFormat::Erf => Sink::Erf(ErfWriter::new(w)),
            TraceFormat::Pcap => Sink::Pcap(PcapWriter::new(w, snaplen)?),
        })
    }

    pub fn write(&mut self, rec: &TraceRecord) -> Result<(), CliError> {
        match self {
            Sink::Erf(w) => {
                w.write_record(rec)?;
            }
            Sink::Pcap(w) => w.write_record(&erf_to_pcap_record(rec))?,
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(), CliError> {
        use std::io::Write;
        match self {
            Sink::Erf(mut w) => {
                w.flush()?;
                w.into_inner().flush()?;
            }
            Sink::Pcap(w) => {
                w.finish()?.flush()?;
            }
        }
        Ok(())
    }
}

/// Adapts a fallible record stream into a plain one for consumers that take
/// `Iterator<Item = TraceRecord>`. The first error ends the stream and is
/// kept for [`ErrorSlot::take`].
#[derive(Clone, Default)]
pub struct ErrorSlot(Rc<RefCell<Option<FormatError>>>);

impl ErrorSlot {
    pub fn guard(&self, records: Records) -> impl Iterator<Item = TraceRecord> {
        let slot = self.0.clone();
        records.map_while(move |r| match r {
            Ok(rec) => Some(rec),
            Err(e) => {
                slot.borrow_mut().get_or_insert(e);
                None
            }
        })
    }

    pub fn take(&self) -> Result<(), CliError> {
        match self.0.borrow_mut().take() {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    }
}
