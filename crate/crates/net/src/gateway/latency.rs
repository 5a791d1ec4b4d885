use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GatewayError;

pub const LATENCY_LOG_HEADER: &str =
    "counter,node_id,t_frame_received,t_request_sent,t_response_received,end_to_end";

/// Trigger-to-response timing of one frame. Times are seconds on the
/// gateway's monotonic clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub counter: u32,
    pub node_id: u16,
    pub t_frame_received: f64,
    pub t_request_sent: f64,
    pub t_response_received: f64,
    pub end_to_end: f64,
}

impl LatencyRecord {
    pub fn new(
        counter: u32,
        node_id: u16,
        t_frame_received: f64,
        t_request_sent: f64,
        t_response_received: f64,
    ) -> Result<Self, GatewayError> {
        if !(t_frame_received <= t_request_sent && t_request_sent <= t_response_received) {
            return Err(GatewayError::NonMonotonicLatency {
                received: t_frame_received,
                sent: t_request_sent,
                responded: t_response_received,
            });
        }
        Ok(Self {
            counter,
            node_id,
            t_frame_received,
            t_request_sent,
            t_response_received,
            end_to_end: t_response_received - t_frame_received,
        })
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.counter,
            self.node_id,
            self.t_frame_received,
            self.t_request_sent,
            self.t_response_received,
            self.end_to_end
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

/// Nearest-rank percentile of ascending `sorted`: the value at rank
/// `ceil(p * n / 100)`, 1-based.
pub fn nearest_rank(sorted: &[f64], percent: usize) -> f64 {
    let n = sorted.len();
    let rank = (percent * n).div_ceil(100).clamp(1, n);
    sorted[rank - 1]
}

pub fn summarize(values: &[f64]) -> Option<LatencySummary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(LatencySummary {
        count: sorted.len(),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        p50: nearest_rank(&sorted, 50),
        p95: nearest_rank(&sorted, 95),
        max: sorted[sorted.len() - 1],
    })
}

pub fn latency_summary(records: &[LatencyRecord]) -> Result<LatencySummary, GatewayError> {
    let values: Vec<f64> = records.iter().map(|r| r.end_to_end).collect();
    summarize(&values).ok_or(GatewayError::NoRecords)
}

/// In-memory record list with an optional CSV mirror.
#[derive(Debug, Default)]
pub struct LatencyLog {
    file: Option<File>,
    records: Vec<LatencyRecord>,
}

impl LatencyLog {
    pub fn create(path: Option<&Path>) -> Result<Self, GatewayError> {
        let file = match path {
            Some(p) => {
                let mut f = OpenOptions::new()
                    .create(true)
                    .write(true)
                    .truncate(true)
                    .open(p)
                    .map_err(|e| GatewayError::Persistence(e.to_string()))?;
                writeln!(f, "{LATENCY_LOG_HEADER}").map_err(|e| GatewayError::Persistence(e.to_string()))?;
                Some(f)
            }
            None => None,
        };
        Ok(Self { file, records: Vec::new() })
    }

    pub fn push(&mut self, record: LatencyRecord) {
        if let Some(f) = self.file.as_mut() {
            if let Err(e) = writeln!(f, "{}", record.csv_line()) {
                log::warn!("latency log write failed: {e}");
            }
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[LatencyRecord] {
        &self.records
    }
}
