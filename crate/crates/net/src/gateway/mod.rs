//! Gateway: accepts node connections, persists every decoded frame, and turns
//! trigger events into inference requests while timing each one.
//!
//! Threads: one acceptor per node endpoint, one reader per node connection,
//! a single writer that owns the CSV tables, and one prediction worker per
//! node so requests for a node go out in trigger order. In poll-compat mode a
//! watcher thread waits for the server's result files.

mod client;
mod ingest;
mod latency;
mod store;

pub use client::{resolve, Exchange, PredictionClient, RetryPolicy};
pub use ingest::{node_table_name, DuplicateFilter, IngestOutcome, Ingestor, TriggerRule, TriggerState};
pub use latency::{
    latency_summary, nearest_rank, summarize, LatencyLog, LatencyRecord, LatencySummary, LATENCY_LOG_HEADER,
};
pub use store::{quarantine_path, CsvStore, Recovery};

use std::collections::HashMap;
use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, error, info, warn};
use serde::{Deserialize, Serialize};
use shm_core::dataset::{format_table_row, table1_header};
use shm_core::wire::framing::read_message;
use shm_core::wire::{decode, TelemetryFrame, MAX_FRAME_LEN};
use thiserror::Error;

use crate::poll::{result_path, PollResult};
use crate::protocol::{unix_time, ErrorCode};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("persistence failure: {0}")]
    Persistence(String),
    #[error("{path}: unusable table: {reason}")]
    CorruptStore { path: PathBuf, reason: String },
    #[error("latency stamps out of order: received {received}, sent {sent}, responded {responded}")]
    NonMonotonicLatency { received: f64, sent: f64, responded: f64 },
    #[error("no latency records")]
    NoRecords,
    #[error("server {addr} unreachable after {attempts} attempts: {last_error}")]
    ServerUnreachable { addr: SocketAddr, attempts: u32, last_error: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("server error {code:?}: {message}")]
    Server { code: ErrorCode, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: io::Error },
}

/// How predictions are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum GatewayMode {
    /// The gateway sends each trigger straight to the server.
    Push,
    /// The gateway uploads a data file and waits for the server's directory
    /// poller to write the result.
    PollCompat {
        check_interval: Duration,
        timeout: Duration,
    },
}

impl GatewayMode {
    pub fn poll_compat() -> Self {
        GatewayMode::PollCompat {
            check_interval: Duration::from_millis(2),
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Addresses the gateway listens on for node connections.
    pub node_endpoints: Vec<String>,
    pub server: String,
    pub model_id: String,
    pub mode: GatewayMode,
    pub persist_dir: PathBuf,
    pub trigger: TriggerRule,
    pub latency_log: Option<PathBuf>,
    pub retry: RetryPolicy,
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.node_endpoints.is_empty() {
            return Err(GatewayError::InvalidConfig("no node endpoint".into()));
        }
        if self.retry.attempts == 0 {
            return Err(GatewayError::InvalidConfig("retry attempts 0".into()));
        }
        if let GatewayMode::PollCompat { check_interval, .. } = self.mode {
            if check_interval.is_zero() {
                return Err(GatewayError::InvalidConfig("zero result check interval".into()));
            }
        }
        self.trigger.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GatewayStats {
    pub frames: u64,
    pub decode_errors: u64,
    pub duplicates: u64,
    pub stored: u64,
    pub persistence_failures: u64,
    pub triggers: u64,
    pub predictions: u64,
    pub prediction_failures: u64,
}

struct Shared {
    origin: Instant,
    stopping: AtomicBool,
    stats: Mutex<GatewayStats>,
    latency: Mutex<LatencyLog>,
    latency_changed: Condvar,
    connections: Mutex<Vec<TcpStream>>,
    fatal: Mutex<Option<String>>,
}

impl Shared {
    fn seconds(&self, at: Instant) -> f64 {
        at.saturating_duration_since(self.origin).as_secs_f64()
    }

    fn bump(&self, f: impl FnOnce(&mut GatewayStats)) {
        f(&mut self.stats.lock().expect("stats lock"));
    }

    fn record_latency(&self, frame: &TelemetryFrame, received: Instant, sent: Instant, responded: Instant) {
        match LatencyRecord::new(
            frame.counter,
            frame.node_id,
            self.seconds(received),
            self.seconds(sent),
            self.seconds(responded),
        ) {
            Ok(rec) => {
                self.latency.lock().expect("latency lock").push(rec);
                self.latency_changed.notify_all();
            }
            Err(e) => error!("dropping latency record: {e}"),
        }
    }

    fn set_fatal(&self, message: String) {
        let mut f = self.fatal.lock().expect("fatal lock");
        if f.is_none() {
            *f = Some(message);
        }
    }
}

struct Arrival {
    frame: TelemetryFrame,
    received: Instant,
}

/// Running gateway.
pub struct GatewayHandle {
    node_addrs: Vec<SocketAddr>,
    shared: Arc<Shared>,
    acceptors: Vec<JoinHandle<()>>,
    writer: Option<JoinHandle<()>>,
}

pub fn start(config: GatewayConfig) -> Result<GatewayHandle, GatewayError> {
    config.validate()?;
    let server = resolve(&config.server)?;
    let ingestor = Ingestor::new(config.persist_dir.clone(), config.trigger)?;
    let shared = Arc::new(Shared {
        origin: Instant::now(),
        stopping: AtomicBool::new(false),
        stats: Mutex::new(GatewayStats::default()),
        latency: Mutex::new(LatencyLog::create(config.latency_log.as_deref())?),
        latency_changed: Condvar::new(),
        connections: Mutex::new(Vec::new()),
        fatal: Mutex::new(None),
    });

    let mut listeners = Vec::new();
    for endpoint in &config.node_endpoints {
        let listener = TcpListener::bind(endpoint.as_str())
            .map_err(|source| GatewayError::Bind { addr: endpoint.clone(), source })?;
        listeners.push(listener);
    }
    let node_addrs: Vec<SocketAddr> = listeners
        .iter()
        .map(|l| l.local_addr())
        .collect::<io::Result<_>>()
        .map_err(|e| GatewayError::InvalidConfig(e.to_string()))?;

    let (tx, rx) = mpsc::channel::<Arrival>();
    let writer = {
        let shared = Arc::clone(&shared);
        let config = config.clone();
        thread::Builder::new()
            .name("gateway-writer".into())
            .spawn(move || run_writer(rx, ingestor, config, server, shared))
            .expect("spawn writer")
    };
    let acceptors = listeners
        .into_iter()
        .zip(&node_addrs)
        .map(|(listener, addr)| {
            info!("waiting for nodes on {addr}");
            let shared = Arc::clone(&shared);
            let tx = tx.clone();
            thread::Builder::new()
                .name(format!("gateway-accept-{addr}"))
                .spawn(move || run_acceptor(listener, tx, shared))
                .expect("spawn acceptor")
        })
        .collect();
    Ok(GatewayHandle { node_addrs, shared, acceptors, writer: Some(writer) })
}

fn run_acceptor(listener: TcpListener, tx: Sender<Arrival>, shared: Arc<Shared>) {
    let mut readers = Vec::new();
    for stream in listener.incoming() {
        if shared.stopping.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        if let Ok(clone) = stream.try_clone() {
            shared.connections.lock().expect("connections lock").push(clone);
        }
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        info!("node connected from {peer}");
        let tx = tx.clone();
        let shared = Arc::clone(&shared);
        readers.push(
            thread::Builder::new()
                .name(format!("gateway-read-{peer}"))
                .spawn(move || run_reader(stream, peer, tx, shared))
                .expect("spawn reader"),
        );
    }
    for r in readers {
        let _ = r.join();
    }
}

fn run_reader(mut stream: TcpStream, peer: String, tx: Sender<Arrival>, shared: Arc<Shared>) {
    loop {
        let bytes = match read_message(&mut stream, MAX_FRAME_LEN) {
            Ok(Some(b)) => b,
            Ok(None) => break,
            Err(e) => {
                if !shared.stopping.load(Ordering::SeqCst) {
                    warn!("{peer}: link error: {e}");
                }
                break;
            }
        };
        let received = Instant::now();
        shared.bump(|s| s.frames += 1);
        match decode(&bytes) {
            Ok(frame) => {
                debug!("node {} #{}: {:?}", frame.node_id, frame.counter, frame.resistances);
                if tx.send(Arrival { frame, received }).is_err() {
                    break;
                }
            }
            Err(e) => {
                shared.bump(|s| s.decode_errors += 1);
                warn!("{peer}: dropping undecodable frame: {e}");
            }
        }
    }
    info!("{peer}: disconnected");
}

struct Job {
    frame: TelemetryFrame,
    received: Instant,
}

fn run_writer(rx: Receiver<Arrival>, mut ingestor: Ingestor, config: GatewayConfig, server: SocketAddr, shared: Arc<Shared>) {
    let mut workers: HashMap<u16, (Sender<Job>, JoinHandle<()>)> = HashMap::new();
    let (watch_tx, watcher) = match config.mode {
        GatewayMode::PollCompat { check_interval, timeout } => {
            let (tx, rx) = mpsc::channel::<Pending>();
            let shared = Arc::clone(&shared);
            let handle = thread::Builder::new()
                .name("gateway-watch".into())
                .spawn(move || run_watcher(rx, check_interval, timeout, shared))
                .expect("spawn watcher");
            (Some(tx), Some(handle))
        }
        GatewayMode::Push => (None, None),
    };

    for Arrival { frame, received } in rx {
        match ingestor.ingest(&frame, unix_time()) {
            Ok(IngestOutcome::Duplicate) => {
                shared.bump(|s| s.duplicates += 1);
                debug!("node {} #{}: duplicate dropped", frame.node_id, frame.counter);
            }
            Ok(IngestOutcome::Stored { row, trigger }) => {
                shared.bump(|s| {
                    s.stored += 1;
                    s.triggers += u64::from(trigger);
                });
                debug!("node {} #{} stored as row {row}", frame.node_id, frame.counter);
                if trigger {
                    let node_id = frame.node_id;
                    let (job_tx, _) = workers.entry(node_id).or_insert_with(|| {
                        spawn_predictor(node_id, &config, server, watch_tx.clone(), Arc::clone(&shared))
                    });
                    let _ = job_tx.send(Job { frame, received });
                }
            }
            Err(e) => {
                shared.bump(|s| s.persistence_failures += 1);
                error!("node {} #{}: {e}", frame.node_id, frame.counter);
            }
        }
    }

    for (_, (job_tx, handle)) in workers.drain() {
        drop(job_tx);
        let _ = handle.join();
    }
    drop(watch_tx);
    if let Some(w) = watcher {
        let _ = w.join();
    }
}

fn spawn_predictor(
    node_id: u16,
    config: &GatewayConfig,
    server: SocketAddr,
    watch_tx: Option<Sender<Pending>>,
    shared: Arc<Shared>,
) -> (Sender<Job>, JoinHandle<()>) {
    let (tx, rx) = mpsc::channel::<Job>();
    let client = PredictionClient::new(server, config.retry.clone());
    let model_id = config.model_id.clone();
    let handle = thread::Builder::new()
        .name(format!("gateway-predict-{node_id}"))
        .spawn(move || run_predictor(rx, client, model_id, watch_tx, shared))
        .expect("spawn predictor");
    (tx, handle)
}

fn run_predictor(
    rx: Receiver<Job>,
    mut client: PredictionClient,
    model_id: String,
    watch_tx: Option<Sender<Pending>>,
    shared: Arc<Shared>,
) {
    let session = (unix_time() * 1e3) as u64;
    let mut seq: u64 = 0;
    let mut disabled = false;
    for Job { frame, received } in rx {
        if disabled || shared.stopping.load(Ordering::SeqCst) {
            continue;
        }
        let outcome = match &watch_tx {
            None => client.predict(&model_id, vec![frame.resistances.clone()]).map(|ex| {
                info!(
                    "node {} #{}: prediction {:?}",
                    frame.node_id, frame.counter, ex.value
                );
                shared.bump(|s| s.predictions += 1);
                shared.record_latency(&frame, received, ex.sent, ex.received);
            }),
            Some(watch) => {
                seq += 1;
                let name = format!("node{}_{session}_{seq}.csv", frame.node_id);
                let content = format!(
                    "{}\n{}\n",
                    table1_header(frame.resistances.len()),
                    format_table_row(0, None, None, unix_time(), &frame.resistances)
                );
                client.upload(&name, &content).map(|ex| {
                    let _ = watch.send(Pending {
                        result: result_path(&ex.value),
                        frame: frame.clone(),
                        received,
                        sent: ex.sent,
                    });
                })
            }
        };
        if let Err(e) = outcome {
            shared.bump(|s| s.prediction_failures += 1);
            match e {
                GatewayError::ShapeMismatch(msg) => {
                    error!("node {}: model rejects its frames, predictions stopped: {msg}", frame.node_id);
                    shared.set_fatal(format!("shape mismatch for node {}: {msg}", frame.node_id));
                    disabled = true;
                }
                other => error!("node {} #{}: {other}", frame.node_id, frame.counter),
            }
        }
    }
}

struct Pending {
    result: PathBuf,
    frame: TelemetryFrame,
    received: Instant,
    sent: Instant,
}

fn run_watcher(rx: Receiver<Pending>, check_interval: Duration, timeout: Duration, shared: Arc<Shared>) {
    let mut pending: Vec<Pending> = Vec::new();
    let mut open = true;
    while open || !pending.is_empty() {
        if shared.stopping.load(Ordering::SeqCst) {
            break;
        }
        match rx.recv_timeout(check_interval) {
            Ok(p) => {
                pending.push(p);
                pending.extend(rx.try_iter());
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => {
                open = false;
                if !pending.is_empty() {
                    thread::sleep(check_interval);
                }
            }
        }
        let now = Instant::now();
        pending.retain(|p| {
            if p.result.exists() {
                match std::fs::read(&p.result)
                    .map_err(|e| e.to_string())
                    .and_then(|b| serde_json::from_slice::<PollResult>(&b).map_err(|e| e.to_string()))
                {
                    Ok(result) => {
                        info!(
                            "node {} #{}: prediction {:?}",
                            p.frame.node_id, p.frame.counter, result.predictions
                        );
                        shared.bump(|s| s.predictions += 1);
                        shared.record_latency(&p.frame, p.received, p.sent, now);
                    }
                    Err(e) => {
                        shared.bump(|s| s.prediction_failures += 1);
                        error!("{}: unreadable result: {e}", p.result.display());
                    }
                }
                false
            } else if now.duration_since(p.sent) > timeout {
                shared.bump(|s| s.prediction_failures += 1);
                error!("no result for node {} #{} after {timeout:?}", p.frame.node_id, p.frame.counter);
                false
            } else {
                true
            }
        });
    }
}

impl GatewayHandle {
    pub fn node_addrs(&self) -> &[SocketAddr] {
        &self.node_addrs
    }

    pub fn stats(&self) -> GatewayStats {
        self.shared.stats.lock().expect("stats lock").clone()
    }

    pub fn latency_records(&self) -> Vec<LatencyRecord> {
        self.shared.latency.lock().expect("latency lock").records().to_vec()
    }

    /// First unrecoverable configuration problem seen, if any.
    pub fn fatal_error(&self) -> Option<String> {
        self.shared.fatal.lock().expect("fatal lock").clone()
    }

    /// Blocks until at least `count` latency records exist or `timeout`
    /// passes; returns the number recorded.
    pub fn wait_for_latency(&self, count: usize, timeout: Duration) -> usize {
        let deadline = Instant::now() + timeout;
        let mut log = self.shared.latency.lock().expect("latency lock");
        loop {
            let n = log.records().len();
            let now = Instant::now();
            if n >= count || now >= deadline {
                return n;
            }
            log = self
                .shared
                .latency_changed
                .wait_timeout(log, deadline - now)
                .expect("latency lock")
                .0;
        }
    }

    /// Stops accepting, closes node connections and joins every thread.
    pub fn shutdown(mut self) -> Vec<LatencyRecord> {
        self.halt();
        self.latency_records()
    }

    fn halt(&mut self) {
        if self.shared.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        for addr in &self.node_addrs {
            let _ = TcpStream::connect_timeout(addr, Duration::from_millis(200));
        }
        for c in self.shared.connections.lock().expect("connections lock").drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        for a in self.acceptors.drain(..) {
            let _ = a.join();
        }
        if let Some(w) = self.writer.take() {
            let _ = w.join();
        }
    }
}

impl Drop for GatewayHandle {
    fn drop(&mut self) {
        self.halt();
    }
}
