//! `bsf`: cost-model curves, simulation, farm runs and calibration from the
//! command line.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid arguments, 3 transport
//! failure, 4 adequacy or agreement verdict failed.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use bsf_core::transport::{TransportError, VirtualCost};
use bsf_core::{Backend, CostParams, Error, FarmError, KRange, SimMode, VRatio};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "bsf",
    version,
    about = "Bulk-synchronous farm cost model, simulator and runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Speedup, derivative and efficiency curves plus the scalability bound.
    Model(ModelArgs),
    /// Classify scalability from the growth exponents of t_s and t_w.
    Classify(ClassifyArgs),
    /// Simulate farm iterations on the virtual clock.
    Simulate(SimulateArgs),
    /// Simulated speedup over a range of worker counts.
    Sweep(SweepArgs),
    /// Run a workload on the farm skeleton.
    Run(RunArgs),
    /// Fit message latency and per-byte cost from ping-pong round trips.
    Calibrate(CalibrateArgs),
}

/// Cost-model parameters. Give either `--ts` or `--v`, not both.
#[derive(Args, Clone)]
struct ParamArgs {
    /// Compute time of one iteration on one worker (t_w).
    #[arg(long, allow_negative_numbers = true)]
    tw: f64,
    /// Time to send one job to one worker (t_s).
    #[arg(
        long,
        conflicts_with = "v",
        required_unless_present = "v",
        allow_negative_numbers = true
    )]
    ts: Option<f64>,
    /// v-ratio log10(t_w/t_s); a comma-separated list sweeps several values.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    v: Vec<f64>,
    /// Message initiation latency (L).
    #[arg(long = "L", default_value_t = 0.0, allow_negative_numbers = true)]
    latency: f64,
    /// Result transfer time (t_r).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    tr: f64,
    /// Result processing time on the master (t_p).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    tp: f64,
}

impl ParamArgs {
    /// One parameter set per v value, or the single `--ts` set. Labels are
    /// `None` unless several v values were given.
    fn param_sets(&self) -> anyhow::Result<Vec<(Option<f64>, CostParams)>> {
        if let Some(ts) = self.ts {
            return Ok(vec![(
                None,
                CostParams::new(self.latency, ts, self.tr, self.tp, self.tw)?,
            )]);
        }
        let many = self.v.len() > 1;
        self.v
            .iter()
            .map(|&v| {
                let p =
                    CostParams::with_v(self.latency, VRatio::new(v)?, self.tr, self.tp, self.tw)?;
                Ok((many.then_some(v), p))
            })
            .collect()
    }

    fn single(&self) -> anyhow::Result<CostParams> {
        let mut sets = self.param_sets()?;
        if sets.len() != 1 {
            return Err(Usage("this command takes a single --v value".into()).into());
        }
        Ok(sets.remove(0).1)
    }
}

#[derive(Args)]
struct ModelArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Worker range lo:hi[:step].
    #[arg(long = "k", default_value = "1:2000", value_parser = parse_range)]
    range: KRange,
    /// Directory for the curve files and summary.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Exponent of t_s growth in the problem size.
    #[arg(long, allow_negative_numbers = true)]
    alpha: f64,
    /// Exponent of t_w growth in the problem size.
    #[arg(long, allow_negative_numbers = true)]
    beta: f64,
    /// Print JSON instead of a verdict line.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "phase-seq")]
    PhaseSeq,
    Overlapped,
}

impl From<ModeArg> for SimMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::PhaseSeq => SimMode::PhaseSequential,
            ModeArg::Overlapped => SimMode::Overlapped,
        }
    }
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::PhaseSeq)]
    mode: ModeArg,
    /// Relative noise amplitude in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    iterations: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Number of workers.
    #[arg(long = "K")]
    workers: u64,
    #[command(flatten)]
    sim: SimArgs,
    /// JSON report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long = "k", default_value = "1:2000", value_parser = parse_range)]
    range: KRange,
    #[command(flatten)]
    sim: SimArgs,
    /// CSV path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Inproc,
    Tcp,
    Virtual,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Inproc)]
    backend: BackendKind,
    /// Listen address of the TCP master.
    #[arg(long, default_value = "127.0.0.1:0")]
    bind: SocketAddr,
    /// Virtual backend: latency per message.
    #[arg(long, default_value_t = 0.0)]
    net_latency: f64,
    /// Virtual backend: transfer time per payload byte.
    #[arg(long, default_value_t = 0.0)]
    net_per_byte: f64,
    /// Virtual backend: compute per iteration on one worker.
    #[arg(long, default_value_t = 0.0)]
    net_work: f64,
    /// Virtual backend: result processing on the master.
    #[arg(long, default_value_t = 0.0)]
    net_processing: f64,
    /// Virtual backend: also charge the continue/stop broadcast.
    #[arg(long)]
    charge_control: bool,
}

impl BackendArgs {
    fn backend(&self) -> anyhow::Result<Backend> {
        Ok(match self.backend {
            BackendKind::Inproc => Backend::InProcess,
            BackendKind::Tcp => Backend::Tcp(self.bind),
            BackendKind::Virtual => {
                for (name, v) in [
                    ("--net-latency", self.net_latency),
                    ("--net-per-byte", self.net_per_byte),
                    ("--net-work", self.net_work),
                    ("--net-processing", self.net_processing),
                ] {
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(
                            Usage(format!("{name} must be a finite value >= 0, got {v}")).into(),
                        );
                    }
                }
                Backend::Virtual(VirtualCost {
                    latency: self.net_latency,
                    per_byte: self.net_per_byte,
                    work: self.net_work,
                    processing: self.net_processing,
                    charge_control: self.charge_control,
                })
            }
        })
    }

    fn name(&self) -> &'static str {
        match self.backend {
            BackendKind::Inproc => "inproc",
            BackendKind::Tcp => "tcp",
            BackendKind::Virtual => "virtual",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Workload {
    Quadratic,
    Synthetic,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    workload: Workload,
    /// Worker counts, comma separated.
    #[arg(long = "K", value_delimiter = ',', num_args = 1.., default_value = "1,2,4,8")]
    workers: Vec<u16>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Quadratic: built-in fixture name.
    #[arg(long, conflicts_with_all = ["matrix", "rhs"])]
    fixture: Option<String>,
    /// Quadratic: matrix file (`m n` header, then rows).
    #[arg(long, requires = "rhs")]
    matrix: Option<PathBuf>,
    /// Quadratic: right-hand side file (an `m 1` matrix).
    #[arg(long, requires = "matrix")]
    rhs: Option<PathBuf>,
    /// Synthetic: JSON spec with work, job_bytes, result_bytes, iterations.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Synthetic: largest tolerated relative speedup error.
    #[arg(long, default_value_t = bsf_core::simulator::DEFAULT_ADEQUACY_THRESHOLD)]
    threshold: f64,
    /// Directory for per-run trace CSVs.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// JSON report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    backend: BackendArgs,
    /// Payload sizes, comma separated; `k` and `M` suffixes mean 10^3 and 10^6.
    #[arg(long, value_delimiter = ',', num_args = 1.., value_parser = parse_size,
          default_value = "1k,10k,100k,1M")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 7)]
    reps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<KRange, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_size(s: &str) -> Result<usize, String> {
    let s = s.trim();
    let (digits, scale) = match s.strip_suffix(['k', 'K']) {
        Some(d) => (d, 1_000),
        None => match s.strip_suffix('M') {
            Some(d) => (d, 1_000_000),
            None => (s, 1),
        },
    };
    digits
        .parse::<usize>()
        .ok()
        .and_then(|n| n.checked_mul(scale))
        .ok_or_else(|| format!("bad payload size {s:?}"))
}

/// Argument problems found after parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// A run finished but its verdict is negative.
#[derive(Debug)]
struct Verdict(String);

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Verdict {}

fn farm_code(e: &FarmError) -> u8 {
    match e {
        FarmError::Config(_) => 2,
        e if e.is_transport() => 3,
        _ => 1,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if cause.is::<Verdict>() {
            return 4;
        }
        if cause.is::<TransportError>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<FarmError>() {
            return farm_code(e);
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::InvalidParameter(_)
                | Error::UndefinedRatio(_)
                | Error::UnboundedScalability
                | Error::NotCalibrated => 2,
                Error::Transport(_) => 3,
                Error::Farm(f) => farm_code(f),
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Model(a) => commands::model(&a),
        Command::Classify(a) => commands::classify(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Run(a) => commands::run(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bsf: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
