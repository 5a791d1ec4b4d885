use std::fs;
use std::net::ToSocketAddrs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use log::info;
use serde::Serialize;
use shm_core::dataset::synthetic::{generate_sync_pair, generate_training_set, SyncPairSpec, TrainingSetSpec};
use shm_core::dataset::{
    estimate_offset_detailed, parse_mechanical_csv, parse_resistance_csv, read_table1_csv, split_chronological,
    synchronize, table1_header, write_table1_csv, MechanicalSample,
};
use shm_core::firmware::ChannelMode;
use shm_core::ml::{evaluate, grid_search, load_model, save_model, Dataset, HyperGrid, MlError, TrainReport, TrialSummary};
use shm_net::bench::{run_bench, BenchConfig, BenchMode};
use shm_net::gateway::{self, GatewayConfig, GatewayMode, RetryPolicy};
use shm_net::node::{stream_frames, NodeConfig, NodeError, NodeProfile};
use shm_net::server::{serve, ModelRegistry, ServerConfig};
use thiserror::Error;

use crate::{
    BenchArgs, BenchModeArg, Command, EvaluateArgs, GatewayArgs, GatewayModeArg, GenerateCommand, ServeArgs,
    SimulateNodeArgs, SyncArgs, TrainArgs,
};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input, configuration or data; exit status 2.
    #[error("{0}")]
    Config(String),
    /// Failure while running; exit status 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn config(e: impl ToString) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime(e: impl ToString) -> CliError {
    CliError::Runtime(e.to_string())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    write_text(path, &text)
}

fn seconds(value: f64, what: &str) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(value).map_err(|_| config(format!("{what} {value} is not a valid duration")))
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::SimulateNode(a) => simulate_node(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Gateway(a) => gateway_cmd(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::BenchLatency(a) => bench(a),
        Command::Sync(a) => sync(a),
        Command::Generate(g) => generate(g),
    }
}

fn simulate_node(a: SimulateNodeArgs) -> Result<(), CliError> {
    let profile = NodeProfile::parse(&a.profile).map_err(config)?;
    let channels = ChannelMode::from_count(a.channels).ok_or_else(|| config("channels must be 2 or 8"))?;
    let addr = a
        .connect
        .to_socket_addrs()
        .map_err(|e| config(format!("{}: {e}", a.connect)))?
        .next()
        .ok_or_else(|| config(format!("{} resolves to nothing", a.connect)))?;
    let node = NodeConfig {
        node_id: a.node_id,
        channels,
        tick: a.tick,
        profile,
        noise_std: a.noise,
        seed: a.seed,
        arrivals: None,
        max_frames: a.frames,
    };
    match stream_frames(&node, addr, &AtomicBool::new(false)) {
        Ok(sent) => {
            info!("sent {sent} frame(s)");
            Ok(())
        }
        Err(e @ (NodeError::InvalidConfig(_) | NodeError::Replay(_) | NodeError::Firmware(_) | NodeError::Adc(_))) => {
            Err(config(e))
        }
        Err(e) => Err(runtime(e)),
    }
}

fn serve_cmd(a: ServeArgs) -> Result<(), CliError> {
    let registry = Arc::new(ModelRegistry::new());
    if let Some(path) = &a.model {
        registry.load_file(&a.model_id, path).map_err(config)?;
    }
    let handle = serve(
        ServerConfig { addr: a.addr, upload_dir: a.upload_dir, default_model: a.model_id },
        registry,
    )
    .map_err(runtime)?;
    if let Some(interval) = a.poll_interval {
        handle.configure_polling(Some(interval), None).map_err(config)?;
    }
    println!("listening on {}", handle.addr());
    match a.duration {
        Some(d) => {
            thread::sleep(seconds(d, "duration")?);
            handle.shutdown();
        }
        None => handle.wait(),
    }
    Ok(())
}

fn gateway_cmd(a: GatewayArgs) -> Result<(), CliError> {
    let mode = match a.mode {
        GatewayModeArg::Push => GatewayMode::Push,
        GatewayModeArg::PollCompat => GatewayMode::poll_compat(),
    };
    let handle = gateway::start(GatewayConfig {
        node_endpoints: a.listen,
        server: a.server,
        model_id: a.model_id,
        mode,
        persist_dir: a.persist,
        trigger: a.trigger,
        latency_log: a.latency_log,
        retry: RetryPolicy::default(),
    })
    .map_err(|e| match e {
        gateway::GatewayError::Bind { .. } => runtime(e),
        other => config(other),
    })?;
    for addr in handle.node_addrs() {
        println!("listening for nodes on {addr}");
    }
    let deadline = a.duration.map(|d| seconds(d, "duration")).transpose()?;
    let started = std::time::Instant::now();
    loop {
        if let Some(msg) = handle.fatal_error() {
            handle.shutdown();
            return Err(config(msg));
        }
        if deadline.is_some_and(|d| started.elapsed() >= d) {
            break;
        }
        thread::sleep(Duration::from_millis(50));
    }
    let stats = handle.stats();
    let records = handle.shutdown();
    println!("{}", serde_json::to_string(&stats).map_err(runtime)?);
    if let Ok(summary) = gateway::latency_summary(&records) {
        println!("{}", serde_json::to_string(&summary).map_err(runtime)?);
    }
    Ok(())
}

fn load_records(path: &Path) -> Result<Vec<shm_core::dataset::AlignedRecord>, CliError> {
    read_table1_csv(&read_text(path)?).map_err(|e| config(format!("{}: {e}", path.display())))
}

fn dataset(records: &[shm_core::dataset::AlignedRecord], channels: Option<usize>) -> Result<Dataset, CliError> {
    Dataset::from_records(records, channels).map_err(config)
}

#[derive(Debug, Serialize)]
struct TrainOutput<'a> {
    #[serde(flatten)]
    report: &'a TrainReport,
    trials: &'a [TrialSummary],
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let records = load_records(&a.data)?;
    let grid: HyperGrid = match &a.grid {
        Some(path) => serde_json::from_str(&read_text(path)?).map_err(|e| config(format!("{}: {e}", path.display())))?,
        None => HyperGrid::default(),
    };
    grid.validate().map_err(config)?;
    let (train_rows, test_rows) = split_chronological(&records, a.train_fraction).map_err(config)?;
    let train_set = dataset(&train_rows, Some(a.channels))?;
    let test_set = dataset(&test_rows, Some(a.channels))?;
    let outcome = grid_search(&train_set, &test_set, &grid, a.seed).map_err(|e| match e {
        MlError::NonFiniteLoss { .. } => runtime(e),
        other => config(other),
    })?;
    save_model(&outcome.model, &a.out).map_err(runtime)?;
    let report_path = a.report.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".report.json");
        PathBuf::from(p)
    });
    write_json(&report_path, &TrainOutput { report: &outcome.report, trials: &outcome.trials })?;
    let hp = &outcome.report.hyperparameters;
    println!(
        "test MSE {:.6} MAE {:.6} (hidden {}, lr {}, batch {:?}, {} epochs)",
        outcome.report.test_mse, outcome.report.test_mae, hp.hidden, hp.learning_rate, hp.batch, outcome.report.epochs_run
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvaluationOutput {
    rows: usize,
    mse: f64,
    mae: f64,
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<(), CliError> {
    let model = load_model(&a.model).map_err(config)?;
    let records = load_records(&a.data)?;
    let data = dataset(&records, Some(model.input_width()))?;
    let m = evaluate(&model, &data).map_err(config)?;
    let out = EvaluationOutput { rows: data.len(), mse: m.mse, mae: m.mae };
    println!("{}", serde_json::to_string(&out).map_err(runtime)?);
    Ok(())
}

fn bench(a: BenchArgs) -> Result<(), CliError> {
    let mode = match a.mode {
        BenchModeArg::Push => BenchMode::Push,
        BenchModeArg::Poll => BenchMode::Poll,
    };
    let scratch;
    let work_dir = match a.work_dir {
        Some(d) => {
            fs::create_dir_all(&d).map_err(|e| runtime(format!("{}: {e}", d.display())))?;
            d
        }
        None => {
            scratch = tempfile::tempdir().map_err(runtime)?;
            scratch.path().to_path_buf()
        }
    };
    let mut config = BenchConfig::new(mode, a.frames, work_dir);
    config.poll_interval = a.poll_interval;
    config.seed = a.seed;
    let report = run_bench(&config).map_err(|e| match e {
        shm_net::bench::BenchError::InvalidConfig(_) => self::config(e),
        other => runtime(other),
    })?;
    write_json(&a.out, &report)?;
    println!(
        "{mode}: {} records, mean {:.6} s, p50 {:.6} s, p95 {:.6} s, max {:.6} s",
        report.records, report.summary.mean, report.summary.p50, report.summary.p95, report.summary.max
    );
    Ok(())
}

fn sync(a: SyncArgs) -> Result<(), CliError> {
    let mech = parse_mechanical_csv(&read_text(&a.mech)?).map_err(|e| config(format!("{}: {e}", a.mech.display())))?;
    let res = parse_resistance_csv(&read_text(&a.res)?).map_err(|e| config(format!("{}: {e}", a.res.display())))?;
    let offset = match a.offset {
        Some(o) => o,
        None => {
            let est = estimate_offset_detailed(&mech, &res).map_err(config)?;
            info!("estimated offset {:.6} s (correlation {:.4})", est.offset, est.correlation);
            est.offset
        }
    };
    let aligned = synchronize(&mech, &res, offset).map_err(config)?;
    write_text(&a.out, &write_table1_csv(&aligned).map_err(runtime)?)?;
    println!("offset {offset} s, {} aligned rows", aligned.len());
    Ok(())
}

/// Two-column testing-machine export: time in seconds, strain as a fraction.
pub fn format_mechanical_csv(samples: &[MechanicalSample]) -> String {
    let mut out = String::from("Time [s],Strain\n");
    for s in samples {
        out.push_str(&format!("{},{}\n", s.time, s.strain));
    }
    out
}

fn generate(g: GenerateCommand) -> Result<(), CliError> {
    match g {
        GenerateCommand::Training { rows, channels, noise, seed, out } => {
            if !(1..=8).contains(&channels) {
                return Err(config("channels must be 1..=8"));
            }
            let spec = TrainingSetSpec { rows, channels, noise_fraction: noise, ..TrainingSetSpec::default() };
            let records = generate_training_set(&spec, seed);
            write_text(&out, &write_table1_csv(&records).map_err(runtime)?)?;
            println!("{} rows written to {}", records.len(), out.display());
        }
        GenerateCommand::SyncPair {
            offset,
            noise,
            channels,
            duration,
            mech_rate,
            res_rate,
            seed,
            mech_out,
            res_out,
            truth_out,
        } => {
            if !(1..=8).contains(&channels) {
                return Err(config("channels must be 1..=8"));
            }
            if !(duration > 0.0 && mech_rate > 0.0 && res_rate > 0.0) {
                return Err(config("duration and rates must be positive"));
            }
            let spec = SyncPairSpec {
                offset,
                noise_fraction: noise,
                channels,
                duration,
                mech_rate,
                res_rate,
                ..SyncPairSpec::default()
            };
            let pair = generate_sync_pair(&spec, seed);
            write_text(&mech_out, &format_mechanical_csv(&pair.mechanical))?;
            let mut res = table1_header(channels);
            res.push('\n');
            for (i, s) in pair.resistance.iter().enumerate() {
                res.push_str(&shm_core::dataset::format_table_row(i as u64, None, None, s.t, &s.resistances));
                res.push('\n');
            }
            write_text(&res_out, &res)?;
            if let Some(path) = truth_out {
                let aligned = pair
                    .aligned
                    .ok_or_else(|| config("ground truth needs equal mechanical and resistance rates"))?;
                write_text(&path, &write_table1_csv(&aligned).map_err(runtime)?)?;
            }
        }
    }
    Ok(())
}
