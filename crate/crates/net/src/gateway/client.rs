use std::io;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::PathBuf;
use std::thread;
use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::protocol::{unix_time, Client, ErrorCode, PredictRequest, ProtocolError, Request, Response};

use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub connect_timeout: Duration,
    pub io_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 5,
            initial_backoff: Duration::from_millis(50),
            max_backoff: Duration::from_secs(2),
            connect_timeout: Duration::from_secs(2),
            io_timeout: Duration::from_secs(10),
        }
    }
}

impl RetryPolicy {
    /// Pause after failed attempt `k` (0-based).
    pub fn backoff(&self, k: u32) -> Duration {
        let factor = 1u32.checked_shl(k.min(16)).unwrap_or(u32::MAX);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

/// A server reply with the instants the request left and the reply arrived.
#[derive(Debug, Clone)]
pub struct Exchange<T> {
    pub value: T,
    pub sent: Instant,
    pub received: Instant,
}

/// Persistent connection to the inference server, reopened on transport
/// failure.
pub struct PredictionClient {
    addr: SocketAddr,
    policy: RetryPolicy,
    conn: Option<Client>,
    next_request: u64,
}

pub fn resolve(addr: &str) -> Result<SocketAddr, GatewayError> {
    addr.to_socket_addrs()
        .map_err(|e| GatewayError::InvalidConfig(format!("server address {addr:?}: {e}")))?
        .next()
        .ok_or_else(|| GatewayError::InvalidConfig(format!("server address {addr:?} resolves to nothing")))
}

impl PredictionClient {
    pub fn new(addr: SocketAddr, policy: RetryPolicy) -> Self {
        Self { addr, policy, conn: None, next_request: 1 }
    }

    pub fn predict(&mut self, model_id: &str, rows: Vec<Vec<f64>>) -> Result<Exchange<Vec<f64>>, GatewayError> {
        let expected = rows.len();
        let ex = self.exchange(|request_id| {
            Request::Predict(PredictRequest {
                request_id,
                model_id: model_id.to_owned(),
                rows: rows.clone(),
                timestamp: unix_time(),
            })
        })?;
        match ex.value {
            Response::Prediction(p) if p.predictions.len() == expected => Ok(Exchange {
                value: p.predictions,
                sent: ex.sent,
                received: ex.received,
            }),
            other => Err(unexpected(other)),
        }
    }

    /// Sends a data file for the server's directory poller; returns the path
    /// the server stored it under.
    pub fn upload(&mut self, file_name: &str, content: &str) -> Result<Exchange<PathBuf>, GatewayError> {
        let ex = self.exchange(|request_id| Request::UploadData {
            request_id,
            file_name: file_name.to_owned(),
            content: content.to_owned(),
        })?;
        match ex.value {
            Response::UploadOk { path, .. } => Ok(Exchange { value: path, sent: ex.sent, received: ex.received }),
            other => Err(unexpected(other)),
        }
    }

    fn exchange(&mut self, build: impl Fn(u64) -> Request) -> Result<Exchange<Response>, GatewayError> {
        let mut last_error = String::new();
        for attempt in 0..self.policy.attempts {
            if attempt > 0 {
                thread::sleep(self.policy.backoff(attempt - 1));
            }
            let request_id = self.next_request;
            self.next_request += 1;
            let request = build(request_id);
            match self.try_once(&request) {
                Ok(ex) => return Ok(ex),
                Err(e) => {
                    self.conn = None;
                    warn!("request to {} failed (attempt {}): {e}", self.addr, attempt + 1);
                    last_error = e.to_string();
                }
            }
        }
        Err(GatewayError::ServerUnreachable {
            addr: self.addr,
            attempts: self.policy.attempts,
            last_error,
        })
    }

    fn try_once(&mut self, request: &Request) -> Result<Exchange<Response>, ProtocolError> {
        if self.conn.is_none() {
            let c = Client::connect_timeout(&self.addr, self.policy.connect_timeout)?;
            c.set_read_timeout(Some(self.policy.io_timeout))?;
            self.conn = Some(c);
        }
        let conn = self.conn.as_mut().ok_or_else(|| ProtocolError::Io(io::ErrorKind::NotConnected.into()))?;
        let sent = Instant::now();
        let value = conn.call(request)?;
        Ok(Exchange { value, sent, received: Instant::now() })
    }
}

fn unexpected(response: Response) -> GatewayError {
    match response {
        Response::Error { code: ErrorCode::ShapeMismatch, message, .. } => GatewayError::ShapeMismatch(message),
        Response::Error { code, message, .. } => GatewayError::Server { code, message },
        other => GatewayError::Protocol(format!("unexpected reply {other:?}")),
    }
}
