//! `shm`: run nodes, the gateway and the inference server; train and
//! evaluate models; align recordings; benchmark push against poll.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shm_net::gateway::TriggerRule;

#[derive(Debug, Parser)]
#[command(name = "shm", version, about = "Structural health monitoring stack")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an emulated sensor node and stream frames to a gateway.
    SimulateNode(SimulateNodeArgs),
    /// Run the inference server.
    Serve(ServeArgs),
    /// Run the gateway between nodes and the inference server.
    Gateway(GatewayArgs),
    /// Grid-search a strain regressor on a synchronised table.
    Train(TrainArgs),
    /// Score a saved model on a synchronised table.
    Evaluate(EvaluateArgs),
    /// Measure trigger-to-response latency over loopback.
    BenchLatency(BenchArgs),
    /// Align a mechanical export with a resistance log.
    Sync(SyncArgs),
    /// Write synthetic datasets.
    #[command(subcommand)]
    Generate(GenerateCommand),
}

#[derive(Debug, Args)]
struct SimulateNodeArgs {
    #[arg(long, default_value_t = 8, value_parser = parse_channels)]
    channels: usize,
    /// Seconds between ticks.
    #[arg(long, default_value_t = 10.0)]
    tick: f64,
    /// fixture, ramp, ramp:OHM_PER_S or replay:FILE
    #[arg(long, default_value = "fixture")]
    profile: String,
    #[arg(long, default_value = "127.0.0.1:7421")]
    connect: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    node_id: u16,
    /// Sensor noise standard deviation, ohm.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Stop after this many frames.
    #[arg(long)]
    frames: Option<u64>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = shm_net::protocol::DEFAULT_SERVER_ADDR)]
    addr: String,
    /// Model file loaded at startup.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = shm_net::protocol::DEFAULT_MODEL_ID)]
    model_id: String,
    #[arg(long, default_value = "uploads")]
    upload_dir: PathBuf,
    /// Start the directory poller with this interval, seconds.
    #[arg(long)]
    poll_interval: Option<f64>,
    /// Exit after this many seconds instead of running until killed.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GatewayModeArg {
    Push,
    PollCompat,
}

#[derive(Debug, Args)]
struct GatewayArgs {
    /// Address nodes connect to; repeatable.
    #[arg(long = "listen", default_value = "127.0.0.1:7421")]
    listen: Vec<String>,
    #[arg(long, default_value = shm_net::protocol::DEFAULT_SERVER_ADDR)]
    server: String,
    #[arg(long, value_enum, default_value_t = GatewayModeArg::Push)]
    mode: GatewayModeArg,
    #[arg(long, default_value = "tables")]
    persist: PathBuf,
    /// every-frame or delta:OHM
    #[arg(long, default_value = "every-frame")]
    trigger: TriggerRule,
    #[arg(long)]
    latency_log: Option<PathBuf>,
    #[arg(long, default_value = shm_net::protocol::DEFAULT_MODEL_ID)]
    model_id: String,
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_channels)]
    channels: usize,
    /// Hyperparameter grid JSON; the built-in grid when omitted.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the model path with `.report.json` appended.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchModeArg {
    Push,
    Poll,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    mode: BenchModeArg,
    #[arg(long, default_value_t = shm_net::bench::BenchConfig::DEFAULT_POLL_INTERVAL)]
    poll_interval: f64,
    #[arg(long, default_value_t = 200)]
    frames: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep server uploads, gateway tables and the latency log here.
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SyncArgs {
    #[arg(long)]
    mech: PathBuf,
    #[arg(long)]
    res: PathBuf,
    /// Logger clock minus mechanical clock, seconds; estimated when omitted.
    #[arg(long, allow_hyphen_values = true)]
    offset: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum GenerateCommand {
    /// Resistance-to-strain training table.
    Training {
        #[arg(long, default_value_t = 1000)]
        rows: usize,
        #[arg(long, default_value_t = 2)]
        channels: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mechanical export and resistance log with a known clock offset.
    SyncPair {
        #[arg(long, default_value_t = 164.038, allow_hyphen_values = true)]
        offset: f64,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 2)]
        channels: usize,
        #[arg(long, default_value_t = 600.0)]
        duration: f64,
        #[arg(long, default_value_t = 10.0)]
        mech_rate: f64,
        #[arg(long, default_value_t = 2.0)]
        res_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        mech_out: PathBuf,
        #[arg(long)]
        res_out: PathBuf,
        /// Exact alignment; requires equal rates.
        #[arg(long)]
        truth_out: Option<PathBuf>,
    },
}

fn parse_channels(s: &str) -> Result<usize, String> {
    match s {
        "2" => Ok(2),
        "8" => Ok(8),
        _ => Err(format!("{s:?} is not 2 or 8")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
