//! Subcommands that work on trace files without the catalog.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use tracevault::anon::{AnonKey, Anonymizer};
use tracevault::capture::synth::PayloadFill;
use tracevault::capture::{
    merge_directions, synth_source, CapturePipeline, PipelineStats, RotatingWriter, RotationPolicy,
    SkewBound, SynthConfig, TraceFileMeta,
};
use tracevault::formats::erf::TraceRecord;
use tracevault::formats::TraceFormat;
use tracevault::headers::{parse_headers, HeaderError};
use tracevault::summary::flows::{FlowRecord, FLOW_EXPORT_HEADER};
use tracevault::summary::{
    budget_report, parse_bytes, reference_tiers, FlowTable, PacketSampler, SampleMode,
    SeriesBuilder, TierSpec,
};
use tracevault::summary::budget::format_rate;
use tracevault::time::iso_erf;

use crate::traceio::{self, ErrorSlot, Sink};
use crate::{
    AnonymizeArgs, BudgetArgs, CaptureArgs, CliError, ConvertArgs, Ctx, FlowsArgs, OutFormat,
    SeriesArgs,
};

fn load_key(ctx: &Ctx, flag: &Option<PathBuf>) -> Result<Anonymizer, CliError> {
    let path = match flag {
        Some(p) => p.clone(),
        None => ctx
            .config
            .as_ref()
            .and_then(|c| c.key_path.clone())
            .ok_or_else(|| CliError::Usage("no anonymization key: pass --key-file or set key_path".into()))?,
    };
    Ok(Anonymizer::new(&AnonKey::load(&path)?))
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

#[derive(Serialize)]
struct CaptureReport {
    #[serde(flatten)]
    stats: PipelineStats,
    files: Vec<TraceFileMeta>,
}

pub fn capture(ctx: &Ctx, a: CaptureArgs) -> Result<(), CliError> {
    let defaults = ctx.config.as_ref().map(|c| c.capture.clone()).unwrap_or_default();
    let root = match &a.out {
        Some(p) => p.clone(),
        None => ctx.archive_root(&None)?,
    };
    let probe = a.probe.clone().unwrap_or(defaults.probe_id);
    let link = a.link.clone().unwrap_or(defaults.link_id);
    let policy = RotationPolicy::new(
        a.max_file_bytes.unwrap_or(defaults.max_file_bytes),
        Duration::from_secs(a.max_file_secs.unwrap_or(defaults.max_file_secs)),
    )?;
    let anon = if a.no_anonymize {
        None
    } else {
        Some(load_key(ctx, &a.key_file)?)
    };
    let writer = RotatingWriter::new(&root, &probe, &link, policy, anon.is_some())?;
    let mut pipeline = CapturePipeline::new(writer, anon);
    let mut files = Vec::new();
    let mut feed = |rec: TraceRecord| -> Result<(), CliError> {
        if let Some(meta) = pipeline.ingest(rec)? {
            files.push(meta);
        }
        Ok(())
    };

    if a.synth {
        let payload = match &a.payload_pattern {
            Some(h) => PayloadFill::Pattern(
                hex::decode(h).map_err(|e| CliError::Usage(format!("--payload-pattern: {e}")))?,
            ),
            None => PayloadFill::Zero,
        };
        let cfg = SynthConfig {
            seed: a.seed,
            packets: a.packets,
            rate_pps: a.rate,
            payload,
            ..SynthConfig::default()
        };
        for rec in synth_source(cfg)? {
            feed(rec)?;
        }
    } else {
        let input = a.input.as_deref().expect("clap requires input without --synth");
        match &a.merge_with {
            None => {
                for rec in traceio::open(input)? {
                    feed(rec?)?;
                }
            }
            Some(other) => {
                let slot = ErrorSlot::default();
                let merged = merge_directions(
                    slot.guard(traceio::open(input)?),
                    slot.guard(traceio::open(other)?),
                    SkewBound::new(Duration::from_nanos(a.skew_ns)),
                );
                for rec in merged {
                    slot.take()?;
                    feed(rec?)?;
                }
                slot.take()?;
            }
        }
    }
    if let Some(meta) = pipeline.finish()? {
        files.push(meta);
    }
    let report = CaptureReport {
        stats: pipeline.stats().clone(),
        files,
    };
    ctx.report(&report, || {
        let s = &report.stats;
        let mut out = format!(
            "{} records, {} files, {} stored bytes of {} on the wire, {} anonymized, {} not anonymized\n",
            s.records, s.files_sealed, s.stored_bytes, s.wire_bytes, s.anonymized, s.anon_skipped
        );
        for f in &report.files {
            out.push_str(&format!("{}\n", root.join(f.relative_path()).display()));
        }
        out
    });
    Ok(())
}

#[derive(Serialize)]
struct RewriteReport {
    records: u64,
    anonymized: u64,
    skipped: u64,
}

pub fn anonymize(ctx: &Ctx, a: AnonymizeArgs) -> Result<(), CliError> {
    let anon = load_key(ctx, &a.key_file)?;
    let format = traceio::sniff(&a.input)?;
    let mut sink = Sink::create(&a.output, format, None)?;
    let mut report = RewriteReport {
        records: 0,
        anonymized: 0,
        skipped: 0,
    };
    for rec in traceio::open(&a.input)? {
        let mut rec = rec?;
        match anon.anonymize_record(&mut rec) {
            Ok(()) => report.anonymized += 1,
            Err(_) => report.skipped += 1,
        }
        sink.write(&rec)?;
        report.records += 1;
    }
    sink.finish()?;
    ctx.report(&report, || {
        format!(
            "{} records, {} anonymized, {} left as they were\n",
            report.records, report.anonymized, report.skipped
        )
    });
    Ok(())
}

pub fn convert(ctx: &Ctx, a: ConvertArgs) -> Result<(), CliError> {
    let input_format = traceio::sniff(&a.input)?;
    let format = match a.to {
        Some(OutFormat::Erf) => TraceFormat::Erf,
        Some(OutFormat::Pcap) => TraceFormat::Pcap,
        None => traceio::format_for(&a.output).unwrap_or(match input_format {
            TraceFormat::Erf => TraceFormat::Pcap,
            TraceFormat::Pcap => TraceFormat::Erf,
        }),
    };
    if a.snaplen.is_some() && format != TraceFormat::Pcap {
        return Err(CliError::Usage("--snaplen applies to pcap output only".into()));
    }
    let mut sink = Sink::create(&a.output, format, a.snaplen)?;
    let mut records = 0u64;
    let mut lost = 0u64;
    for rec in traceio::open(&a.input)? {
        let rec = rec?;
        lost += rec.lctr as u64;
        sink.write(&rec)?;
        records += 1;
    }
    sink.finish()?;
    let value = json!({ "records": records, "lost_packets": lost });
    ctx.report(&value, || {
        let mut s = format!("{records} records converted\n");
        if lost > 0 && format == TraceFormat::Pcap {
            s.push_str(&format!("{lost} lost packets recorded in ERF headers are not representable in pcap\n"));
        }
        s
    });
    Ok(())
}

fn flow_json(f: &FlowRecord) -> serde_json::Value {
    let k = &f.key;
    json!({
        "src": k.src_ip.to_string(),
        "dst": k.dst_ip.to_string(),
        "sport": k.src_port,
        "dport": k.dst_port,
        "proto": k.protocol,
        "packets": f.packets,
        "bytes": f.bytes,
        "t_first": iso_erf(f.t_first),
        "t_last": iso_erf(f.t_last),
        "flags": f.tcp_flags_or,
    })
}

pub fn flows(ctx: &Ctx, a: FlowsArgs) -> Result<(), CliError> {
    let mode = if a.stride { SampleMode::Stride } else { SampleMode::Random };
    let mut sampler = PacketSampler::new(a.sample_n, a.seed, mode)?;
    let mut table = FlowTable::new(
        Duration::from_secs(a.active_timeout),
        Duration::from_secs(a.inactive_timeout),
    );
    let mut out = output(&a.output)?;
    let emit = |flows: Vec<FlowRecord>, out: &mut dyn Write| -> io::Result<()> {
        for f in flows {
            if ctx.json {
                writeln!(out, "{}", flow_json(&f))?;
            } else {
                writeln!(out, "{}", f.export_line())?;
            }
        }
        Ok(())
    };
    if !ctx.json {
        writeln!(out, "{FLOW_EXPORT_HEADER}")?;
    }
    for rec in traceio::open(&a.input)? {
        let rec = rec?;
        if !sampler.keep() {
            continue;
        }
        let hdr = match parse_headers(&rec.frame) {
            Ok(h) => h,
            Err(HeaderError::TruncatedLayer { partial, .. }) => *partial,
            Err(HeaderError::FrameTooShort(_)) => continue,
        };
        let done = table.update(&hdr, rec.ts, rec.wlen as u64);
        emit(done, &mut out)?;
    }
    emit(table.flush(), &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn series(_ctx: &Ctx, a: SeriesArgs) -> Result<(), CliError> {
    let mut b = SeriesBuilder::new(Duration::from_millis(a.bin_ms), None)?;
    for rec in traceio::open(&a.input)? {
        let rec = rec?;
        b.add(rec.ts, rec.wlen as u64);
    }
    let mut out = output(&a.output)?;
    out.write_all(b.finish().to_csv().as_bytes())?;
    out.flush()?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TierFile {
    tier: Vec<TierSpec>,
}

fn load_tiers(path: &Path) -> Result<Vec<TierSpec>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let file: TierFile = toml::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(file.tier)
}

pub fn budget(ctx: &Ctx, a: BudgetArgs) -> Result<(), CliError> {
    let capacity = parse_bytes(&a.capacity).map_err(|e| CliError::Usage(format!("--capacity: {e}")))?;
    let tiers = match &a.tiers {
        Some(p) => load_tiers(p)?,
        None => reference_tiers(),
    };
    let rows = budget_report(&tiers, capacity)?;
    ctx.report(&rows, || {
        let mut s = format!(
            "{:<14} {:>9} {:>10} {:>10} {:>10}\n",
            "format", "max rate", "mean rate", "exact", "fill time"
        );
        for r in &rows {
            s.push_str(&format!(
                "{:<14} {:>9} {:>10} {:>10} {:>10}\n",
                r.label,
                format_rate(r.max_rate_bps),
                format_rate(r.mean_rate_bps),
                r.exact,
                r.rounded
            ));
        }
        s
    });
    Ok(())
}
