//! `tracevault` command-line tool.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 I/O error.

mod commands;
mod error;
mod store;
mod traceio;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tracevault_service::Config;

pub use error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "tracevault",
    version,
    about = "Header-only packet trace capture, anonymization, summaries and archive management"
)]
pub struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true, env = "MASTS_CONFIG", value_name = "PATH")]
    config: Option<PathBuf>,

    /// Print machine-readable JSON instead of a human report.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Strip, anonymize and rotate packets into an archive.
    Capture(CaptureArgs),
    /// Rewrite the IPv4 addresses of a trace file.
    Anonymize(AnonymizeArgs),
    /// Convert between ERF and pcap.
    Convert(ConvertArgs),
    /// Aggregate a trace into 5-tuple flow records.
    Flows(FlowsArgs),
    /// Bytes-per-interval throughput series as CSV.
    Series(SeriesArgs),
    /// Time to fill a given capacity for each data format.
    Budget(BudgetArgs),
    /// Add sealed trace files and probe configurations to the catalog.
    Ingest(IngestArgs),
    /// Delete files past their tier lifetime and audit the archive.
    Expire(ExpireArgs),
    /// Keep a file as a long-term sample.
    Pin(PinArgs),
    /// Create a user account.
    Adduser(AdduserArgs),
    /// Run the HTTP access service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct CaptureArgs {
    /// Trace file to read (ERF or pcap).
    #[arg(required_unless_present = "synth", conflicts_with = "synth")]
    input: Option<PathBuf>,
    /// Trace of the opposite direction, merged by timestamp.
    #[arg(long, value_name = "PATH", requires = "input")]
    merge_with: Option<PathBuf>,
    /// Largest timestamp skew between the two directions, in nanoseconds.
    #[arg(long, default_value_t = 15_625, value_name = "NS")]
    skew_ns: u64,
    /// Use the synthetic traffic generator instead of a file.
    #[arg(long)]
    synth: bool,
    /// Generator seed.
    #[arg(long, default_value_t = 1, requires = "synth")]
    seed: u64,
    /// Number of synthetic packets.
    #[arg(long, default_value_t = 10_000, requires = "synth")]
    packets: u64,
    /// Mean synthetic packet rate, packets per second.
    #[arg(long, default_value_t = 1000.0, requires = "synth")]
    rate: f64,
    /// Fill synthetic payloads with this hex byte pattern.
    #[arg(long, value_name = "HEX", requires = "synth")]
    payload_pattern: Option<String>,
    /// Archive root to write into [default: archive_root from the config].
    #[arg(long, short, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Probe identifier [default: capture.probe_id from the config].
    #[arg(long)]
    probe: Option<String>,
    /// Link identifier [default: capture.link_id from the config].
    #[arg(long)]
    link: Option<String>,
    /// Largest trace file in bytes.
    #[arg(long, value_name = "BYTES")]
    max_file_bytes: Option<u64>,
    /// Longest time span of one trace file, in seconds.
    #[arg(long, value_name = "SECS")]
    max_file_secs: Option<u64>,
    /// Anonymization key file [default: key_path from the config].
    #[arg(long, value_name = "PATH")]
    key_file: Option<PathBuf>,
    /// Keep real addresses (files are marked as not anonymized).
    #[arg(long, conflicts_with = "key_file")]
    no_anonymize: bool,
}

#[derive(Args, Debug)]
pub struct AnonymizeArgs {
    /// Input trace (ERF or pcap).
    input: PathBuf,
    /// Output trace, written in the input's format.
    output: PathBuf,
    /// Anonymization key file [default: key_path from the config].
    #[arg(long, value_name = "PATH")]
    key_file: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OutFormat {
    Erf,
    Pcap,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// Input trace (ERF or pcap).
    input: PathBuf,
    /// Output trace.
    output: PathBuf,
    /// Output format [default: from the output extension].
    #[arg(long, value_enum)]
    to: Option<OutFormat>,
    /// Cap on captured bytes per pcap record.
    #[arg(long, value_name = "BYTES")]
    snaplen: Option<u32>,
}

#[derive(Args, Debug)]
pub struct FlowsArgs {
    /// Input trace (ERF or pcap).
    input: PathBuf,
    /// Keep one packet in N before aggregation.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    sample_n: u64,
    /// Sampling seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Sample every Nth packet instead of at random.
    #[arg(long)]
    stride: bool,
    /// Active timeout, seconds.
    #[arg(long, default_value_t = 1800)]
    active_timeout: u64,
    /// Inactive timeout, seconds.
    #[arg(long, default_value_t = 15)]
    inactive_timeout: u64,
    /// Write flows here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SeriesArgs {
    /// Input trace (ERF or pcap).
    input: PathBuf,
    /// Bin width in milliseconds.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    bin_ms: u64,
    /// Write the CSV here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BudgetArgs {
    /// Storage capacity, e.g. 10TB or 500GiB.
    #[arg(long, default_value = "10TB")]
    capacity: String,
    /// TOML file of [[tier]] tables replacing the built-in formats.
    #[arg(long, value_name = "PATH")]
    tiers: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Directory to scan for .meta.json sidecars [default: the archive root].
    dir: Option<PathBuf>,
    /// Archive root [default: archive_root from the config].
    #[arg(long, value_name = "DIR")]
    archive: Option<PathBuf>,
    /// Retention tier of the ingested files.
    #[arg(long, default_value = "headers")]
    tier: String,
    /// Probe configuration XML documents to load.
    #[arg(long, value_name = "PATH")]
    probe_xml: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExpireArgs {
    /// Archive root [default: archive_root from the config].
    #[arg(long, value_name = "DIR")]
    archive: Option<PathBuf>,
    /// Evaluate lifetimes at this ISO-8601 time instead of now.
    #[arg(long, value_name = "TIME")]
    now: Option<String>,
    /// Print the consistency audit as JSON lines.
    #[arg(long)]
    audit: bool,
}

#[derive(Args, Debug)]
pub struct PinArgs {
    /// Trace file name.
    file: String,
    /// Archive root [default: archive_root from the config].
    #[arg(long, value_name = "DIR")]
    archive: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AdduserArgs {
    username: String,
    /// operator, host_site, project_member, external_packet or external_summary.
    #[arg(long)]
    category: String,
    /// File whose first line is the password.
    #[arg(long, value_name = "PATH")]
    password_file: PathBuf,
    /// Archive root [default: archive_root from the config].
    #[arg(long, value_name = "DIR")]
    archive: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Listen address [default: listen from the config].
    #[arg(long)]
    listen: Option<std::net::SocketAddr>,
}

/// Global options every subcommand sees.
pub(crate) struct Ctx {
    config: Option<Config>,
    json: bool,
}

impl Ctx {
    fn config(&self) -> Result<&Config, CliError> {
        self.config
            .as_ref()
            .ok_or_else(|| CliError::Usage("this command needs --config or MASTS_CONFIG".into()))
    }

    fn archive_root(&self, flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
        match flag {
            Some(p) => Ok(p.clone()),
            None => Ok(self.config()?.archive_root.clone()),
        }
    }

    /// Print a report: JSON when requested, otherwise the human text.
    fn report<T: Serialize>(&self, value: &T, human: impl FnOnce() -> String) {
        if self.json {
            println!("{}", serde_json::to_string_pretty(value).expect("plain data"));
        } else {
            print!("{}", human());
        }
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("tracevault: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let config = cli.config.as_deref().map(Config::load).transpose()?;
    let ctx = Ctx {
        config,
        json: cli.json,
    };
    match cli.command {
        Command::Capture(a) => commands::capture(&ctx, a),
        Command::Anonymize(a) => commands::anonymize(&ctx, a),
        Command::Convert(a) => commands::convert(&ctx, a),
        Command::Flows(a) => commands::flows(&ctx, a),
        Command::Series(a) => commands::series(&ctx, a),
        Command::Budget(a) => commands::budget(&ctx, a),
        Command::Ingest(a) => store::ingest(&ctx, a),
        Command::Expire(a) => store::expire(&ctx, a),
        Command::Pin(a) => store::pin(&ctx, a),
        Command::Adduser(a) => store::adduser(&ctx, a),
        Command::Serve(a) => store::serve(&ctx, a),
    }
}
