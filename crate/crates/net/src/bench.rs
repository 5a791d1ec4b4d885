//! Push versus poll trigger-to-response benchmark: server, gateway and one
//! node run in-process over loopback.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use shm_core::adc::FIXTURE_OHMS;
use shm_core::firmware::ChannelMode;
use shm_core::ml::{MlError, MlpModel, Normalizer};
use thiserror::Error;

use crate::gateway::{self, GatewayError, GatewayMode, GatewayStats, LatencySummary, RetryPolicy, TriggerRule};
use crate::node::{stream_frames, NodeConfig, NodeError, NodeProfile};
use crate::protocol::DEFAULT_MODEL_ID;
use crate::server::{serve, ModelRegistry, ServerConfig, ServerError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("server: {0}")]
    Server(#[from] ServerError),
    #[error("gateway: {0}")]
    Gateway(#[from] GatewayError),
    #[error("node: {0}")]
    Node(#[from] NodeError),
    #[error("model: {0}")]
    Model(#[from] MlError),
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    Push,
    Poll,
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchMode::Push => "push",
            BenchMode::Poll => "poll",
        })
    }
}

impl FromStr for BenchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "push" => Ok(BenchMode::Push),
            "poll" => Ok(BenchMode::Poll),
            _ => Err(format!("unknown mode {s:?}, expected push or poll")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub mode: BenchMode,
    pub frames: usize,
    /// Server scan interval in poll mode, seconds.
    pub poll_interval: f64,
    /// Node tick in push mode, seconds.
    pub push_tick: f64,
    /// Poll-mode arrivals are uniform over this many scan intervals.
    pub arrival_intervals: f64,
    pub seed: u64,
    /// Holds the server upload directory and the gateway tables.
    pub work_dir: PathBuf,
}

impl BenchConfig {
    pub const DEFAULT_POLL_INTERVAL: f64 = 5.0;

    pub fn new(mode: BenchMode, frames: usize, work_dir: PathBuf) -> Self {
        Self {
            mode,
            frames,
            poll_interval: Self::DEFAULT_POLL_INTERVAL,
            push_tick: 0.005,
            arrival_intervals: 4.0,
            seed: 0,
            work_dir,
        }
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.frames == 0 {
            return Err(BenchError::InvalidConfig("zero frames".into()));
        }
        for (name, v) in [
            ("poll interval", self.poll_interval),
            ("push tick", self.push_tick),
            ("arrival window", self.arrival_intervals),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(BenchError::InvalidConfig(format!("{name} {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyReport {
    pub mode: BenchMode,
    pub frames_requested: usize,
    pub records: usize,
    pub poll_interval: Option<f64>,
    pub summary: LatencySummary,
    pub end_to_end: Vec<f64>,
    pub stats: BenchStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchStats {
    pub frames: u64,
    pub stored: u64,
    pub triggers: u64,
    pub predictions: u64,
    pub prediction_failures: u64,
}

impl From<GatewayStats> for BenchStats {
    fn from(s: GatewayStats) -> Self {
        Self {
            frames: s.frames,
            stored: s.stored,
            triggers: s.triggers,
            predictions: s.predictions,
            prediction_failures: s.prediction_failures,
        }
    }
}

/// Seeded stand-in regressor over the eight fixture channels.
pub fn bench_model(seed: u64) -> Result<MlpModel, MlError> {
    let normalizer = Normalizer { mean: FIXTURE_OHMS.to_vec(), std: vec![1.0; FIXTURE_OHMS.len()] };
    MlpModel::new(normalizer, 16, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Sorted uniform send times over `[0, window)`.
pub fn uniform_arrivals(count: usize, window: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times: Vec<f64> = (0..count).map(|_| rng.random_range(0.0..window)).collect();
    times.sort_by(f64::total_cmp);
    times
}

pub fn run_bench(config: &BenchConfig) -> Result<LatencyReport, BenchError> {
    config.validate()?;
    let registry = Arc::new(ModelRegistry::new());
    registry.insert(DEFAULT_MODEL_ID, bench_model(config.seed)?);
    let server = serve(
        ServerConfig {
            addr: "127.0.0.1:0".into(),
            upload_dir: config.work_dir.join("uploads"),
            default_model: DEFAULT_MODEL_ID.into(),
        },
        registry,
    )?;

    let (mode, arrivals, expected_span) = match config.mode {
        BenchMode::Push => (
            GatewayMode::Push,
            None,
            config.frames as f64 * config.push_tick,
        ),
        BenchMode::Poll => {
            server.configure_polling(Some(config.poll_interval), None)?;
            let window = config.arrival_intervals * config.poll_interval;
            (
                GatewayMode::poll_compat(),
                Some(uniform_arrivals(config.frames, window, config.seed ^ 0x5eed)),
                window + config.poll_interval,
            )
        }
    };

    let gateway = gateway::start(gateway::GatewayConfig {
        node_endpoints: vec!["127.0.0.1:0".into()],
        server: server.addr().to_string(),
        model_id: DEFAULT_MODEL_ID.into(),
        mode,
        persist_dir: config.work_dir.join("gateway"),
        trigger: TriggerRule::EveryFrame,
        latency_log: Some(config.work_dir.join("latency.csv")),
        retry: RetryPolicy::default(),
    })?;

    let node = NodeConfig {
        node_id: 1,
        channels: ChannelMode::Eight,
        tick: config.push_tick,
        profile: NodeProfile::Fixture,
        noise_std: 0.0,
        seed: config.seed,
        arrivals,
        max_frames: Some(config.frames as u64),
    };
    let node_addr = gateway.node_addrs()[0];
    info!("bench {}: {} frames", config.mode, config.frames);
    let stop = AtomicBool::new(false);
    let sent = stream_frames(&node, node_addr, &stop)?;

    let patience = Duration::from_secs_f64(expected_span + 30.0);
    gateway.wait_for_latency(sent as usize, patience);
    let stats = gateway.stats();
    let records = gateway.shutdown();
    server.shutdown();

    let summary = gateway::latency_summary(&records)?;
    Ok(LatencyReport {
        mode: config.mode,
        frames_requested: config.frames,
        records: records.len(),
        poll_interval: (config.mode == BenchMode::Poll).then_some(config.poll_interval),
        summary,
        end_to_end: records.iter().map(|r| r.end_to_end).collect(),
        stats: stats.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arrivals_sorted_within_window() {
        let a = uniform_arrivals(200, 20.0, 1);
        assert_eq!(a.len(), 200);
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.iter().all(|&t| (0.0..20.0).contains(&t)));
        assert_eq!(a, uniform_arrivals(200, 20.0, 1));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("push".parse::<BenchMode>().unwrap(), BenchMode::Push);
        assert!("both".parse::<BenchMode>().is_err());
    }
}
