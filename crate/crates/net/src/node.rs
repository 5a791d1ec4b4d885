//! Emulated sensor node: firmware plus converter, streaming encoded frames
//! to a gateway over TCP.

use std::fmt;
use std::io;
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info};
use shm_core::adc::{AdcConfig, AdcEmulator, AdcError, SensorModel, CHANNELS, FIXTURE_OHMS};
use shm_core::dataset::parse_resistance_csv;
use shm_core::firmware::{ChannelMode, Firmware, FirmwareConfig, FirmwareError};
use shm_core::wire::framing::write_message;
use shm_core::wire::{encode, TelemetryFrame, WireError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NodeError {
    #[error(transparent)]
    Firmware(#[from] FirmwareError),
    #[error(transparent)]
    Adc(#[from] AdcError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("cannot connect to {addr}: {source}")]
    Connect { addr: SocketAddr, source: io::Error },
    #[error("link error: {0}")]
    Link(#[from] io::Error),
    #[error("replay data: {0}")]
    Replay(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// What the emulated sensors present to the converter over time.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeProfile {
    /// The bench fixture resistors, constant.
    Fixture,
    /// One recorded row of resistances per tick; the node stops at the end.
    Replay(Vec<Vec<f64>>),
    /// Fixture values drifting by `slope` ohm per second of node time.
    Ramp { slope: f64 },
}

impl NodeProfile {
    pub const DEFAULT_RAMP_SLOPE: f64 = 0.1;

    /// `fixture`, `ramp`, `ramp:SLOPE` or `replay:FILE` (logger-table CSV).
    pub fn parse(spec: &str) -> Result<Self, NodeError> {
        match spec {
            "fixture" => Ok(NodeProfile::Fixture),
            "ramp" => Ok(NodeProfile::Ramp { slope: Self::DEFAULT_RAMP_SLOPE }),
            _ => {
                if let Some(slope) = spec.strip_prefix("ramp:") {
                    let slope: f64 = slope
                        .parse()
                        .map_err(|e| NodeError::InvalidConfig(format!("ramp slope {slope:?}: {e}")))?;
                    if !slope.is_finite() {
                        return Err(NodeError::InvalidConfig(format!("ramp slope {slope}")));
                    }
                    Ok(NodeProfile::Ramp { slope })
                } else if let Some(file) = spec.strip_prefix("replay:") {
                    Self::replay_file(Path::new(file))
                } else {
                    Err(NodeError::InvalidConfig(format!("unknown profile {spec:?}")))
                }
            }
        }
    }

    pub fn replay_file(path: &Path) -> Result<Self, NodeError> {
        let text = std::fs::read_to_string(path).map_err(|e| NodeError::Replay(format!("{}: {e}", path.display())))?;
        let rows = parse_resistance_csv(&text).map_err(|e| NodeError::Replay(format!("{}: {e}", path.display())))?;
        if rows.is_empty() {
            return Err(NodeError::Replay(format!("{}: no rows", path.display())));
        }
        Ok(NodeProfile::Replay(rows.into_iter().map(|r| r.resistances).collect()))
    }
}

impl fmt::Display for NodeProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeProfile::Fixture => f.write_str("fixture"),
            NodeProfile::Replay(rows) => write!(f, "replay ({} rows)", rows.len()),
            NodeProfile::Ramp { slope } => write!(f, "ramp:{slope}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub node_id: u16,
    pub channels: ChannelMode,
    /// Seconds between ticks.
    pub tick: f64,
    pub profile: NodeProfile,
    /// White-noise standard deviation added to every channel, ohm.
    pub noise_std: f64,
    pub seed: u64,
    /// Explicit send times in seconds after start, overriding the periodic
    /// tick schedule.
    pub arrivals: Option<Vec<f64>>,
    pub max_frames: Option<u64>,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            node_id: 0,
            channels: ChannelMode::Eight,
            tick: FirmwareConfig::fast().tick_period,
            profile: NodeProfile::Fixture,
            noise_std: 0.0,
            seed: 0,
            arrivals: None,
            max_frames: None,
        }
    }
}

/// Firmware driving its own converter.
pub struct NodeRunner {
    firmware: Firmware<AdcEmulator>,
    profile: NodeProfile,
    produced: u64,
}

impl NodeRunner {
    pub fn new(config: &NodeConfig) -> Result<Self, NodeError> {
        if !(config.noise_std.is_finite() && config.noise_std >= 0.0) {
            return Err(NodeError::InvalidConfig(format!("noise std {}", config.noise_std)));
        }
        if let NodeProfile::Replay(rows) = &config.profile {
            let n = config.channels.count();
            if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
                return Err(NodeError::Replay(format!(
                    "row {i} has {} channels, node scans {n}",
                    row.len()
                )));
            }
        }
        let mut sensor = SensorModel::fixture();
        for c in 0..CHANNELS {
            sensor.set_noise(c, config.noise_std)?;
        }
        let adc = AdcEmulator::new(sensor, AdcConfig { seed: config.seed, ..AdcConfig::default() })?;
        let fw_config = FirmwareConfig {
            node_id: config.node_id,
            tick_period: config.tick,
            channels: config.channels,
            ..FirmwareConfig::default()
        };
        let mut firmware = Firmware::new(adc, fw_config)?;
        firmware.init()?;
        Ok(Self { firmware, profile: config.profile.clone(), produced: 0 })
    }

    pub fn firmware(&self) -> &Firmware<AdcEmulator> {
        &self.firmware
    }

    /// Sets the sensors for node time `now` and runs one tick. `None` once a
    /// replay is exhausted.
    pub fn next_frame(&mut self, now: f64) -> Result<Option<TelemetryFrame>, NodeError> {
        let sensor = self.firmware.bus_mut().sensor_mut();
        match &self.profile {
            NodeProfile::Fixture => {}
            NodeProfile::Ramp { slope } => {
                for (c, base) in FIXTURE_OHMS.iter().enumerate() {
                    sensor.set_resistance(c, base + slope * now)?;
                }
            }
            NodeProfile::Replay(rows) => {
                let Some(row) = usize::try_from(self.produced).ok().and_then(|i| rows.get(i)) else {
                    return Ok(None);
                };
                for (c, &r) in row.iter().enumerate() {
                    sensor.set_resistance(c, r)?;
                }
            }
        }
        let frame = self.firmware.run_tick(now)?;
        self.produced += 1;
        Ok(Some(frame))
    }
}

/// Connects to `addr` and streams frames on schedule until `max_frames`,
/// the end of a replay, or `stop`. Returns the number of frames sent.
pub fn stream_frames(config: &NodeConfig, addr: SocketAddr, stop: &AtomicBool) -> Result<u64, NodeError> {
    let mut runner = NodeRunner::new(config)?;
    let mut stream = TcpStream::connect(addr).map_err(|source| NodeError::Connect { addr, source })?;
    stream.set_nodelay(true)?;
    info!("node {} streaming {} to {addr}", config.node_id, config.profile);
    let start = Instant::now();
    let mut sent: u64 = 0;
    loop {
        if stop.load(Ordering::SeqCst) || config.max_frames.is_some_and(|m| sent >= m) {
            break;
        }
        let at = match &config.arrivals {
            Some(times) => match usize::try_from(sent).ok().and_then(|i| times.get(i)) {
                Some(&t) => t,
                None => break,
            },
            None => sent as f64 * config.tick,
        };
        if !sleep_until(start + Duration::from_secs_f64(at.max(0.0)), stop) {
            break;
        }
        let Some(frame) = runner.next_frame(at)? else { break };
        debug!("node {} #{}: {:?}", frame.node_id, frame.counter, frame.resistances);
        write_message(&mut stream, &encode(&frame)?)?;
        sent += 1;
    }
    Ok(sent)
}

fn sleep_until(deadline: Instant, stop: &AtomicBool) -> bool {
    loop {
        if stop.load(Ordering::SeqCst) {
            return false;
        }
        let now = Instant::now();
        if now >= deadline {
            return true;
        }
        thread::sleep((deadline - now).min(Duration::from_millis(20)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use shm_core::adc::LSB_OHMS;

    #[test]
    fn profile_parsing() {
        assert_eq!(NodeProfile::parse("fixture").unwrap(), NodeProfile::Fixture);
        assert_eq!(NodeProfile::parse("ramp:0.5").unwrap(), NodeProfile::Ramp { slope: 0.5 });
        assert!(NodeProfile::parse("replay:/does/not/exist.csv").is_err());
        assert!(NodeProfile::parse("bogus").is_err());
    }

    #[test]
    fn fixture_within_half_lsb() {
        let mut node = NodeRunner::new(&NodeConfig::default()).unwrap();
        let frame = node.next_frame(0.0).unwrap().unwrap();
        for (r, truth) in frame.resistances.iter().zip(FIXTURE_OHMS) {
            assert!((r - truth).abs() <= LSB_OHMS / 2.0, "{r} vs {truth}");
        }
        assert_eq!(node.next_frame(0.2).unwrap().unwrap().counter, 1);
    }

    #[test]
    fn replay_reproduces_rows_then_stops() {
        let rows = vec![vec![50.0, 42.0], vec![50.5, 42.25]];
        let config = NodeConfig {
            channels: ChannelMode::Two,
            profile: NodeProfile::Replay(rows.clone()),
            ..NodeConfig::default()
        };
        let mut node = NodeRunner::new(&config).unwrap();
        for row in &rows {
            let f = node.next_frame(0.0).unwrap().unwrap();
            for (a, b) in f.resistances.iter().zip(row) {
                assert!((a - b).abs() <= LSB_OHMS / 2.0);
            }
        }
        assert!(node.next_frame(0.0).unwrap().is_none());

        let wide = NodeConfig { channels: ChannelMode::Eight, ..config };
        assert!(matches!(NodeRunner::new(&wide), Err(NodeError::Replay(_))));
    }

    #[test]
    fn ramp_drifts() {
        let config = NodeConfig { profile: NodeProfile::Ramp { slope: 1.0 }, ..NodeConfig::default() };
        let mut node = NodeRunner::new(&config).unwrap();
        let a = node.next_frame(0.0).unwrap().unwrap();
        let b = node.next_frame(2.0).unwrap().unwrap();
        assert!((b.resistances[0] - a.resistances[0] - 2.0).abs() < 1e-3);
    }
}
