//! Inference-service messages: JSON documents tagged by `"type"`, each
//! carried in one length-prefixed message.

use std::io;
use std::net::{TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use shm_core::wire::framing::{read_message, write_message, DEFAULT_MAX_MESSAGE};
use thiserror::Error;

pub const DEFAULT_SERVER_ADDR: &str = "127.0.0.1:7420";
pub const DEFAULT_MODEL_ID: &str = "default";

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed message: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("peer closed the connection")]
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub request_id: u64,
    pub model_id: String,
    pub rows: Vec<Vec<f64>>,
    /// Seconds since the Unix epoch at the sender.
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub request_id: u64,
    pub model_id: String,
    pub predictions: Vec<f64>,
    /// Seconds spent in the server between decode and reply.
    pub processing_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Predict(PredictRequest),
    UploadData {
        request_id: u64,
        file_name: String,
        content: String,
    },
    LoadModel {
        request_id: u64,
        model_id: String,
        path: PathBuf,
    },
    /// Starts (with `interval`) or stops (without) the directory poller.
    PollConfig {
        request_id: u64,
        #[serde(default)]
        interval: Option<f64>,
        #[serde(default)]
        model_id: Option<String>,
    },
    Health,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    ShapeMismatch,
    ModelNotLoaded,
    Malformed,
    InvalidUpload,
    LoadFailed,
    InvalidConfig,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    HealthOk {
        model_id: Option<String>,
        models: Vec<String>,
    },
    Prediction(PredictResponse),
    UploadOk {
        request_id: u64,
        path: PathBuf,
    },
    ModelLoaded {
        request_id: u64,
        model_id: String,
        input_width: usize,
    },
    PollConfig {
        request_id: u64,
        interval: Option<f64>,
    },
    Error {
        request_id: Option<u64>,
        code: ErrorCode,
        message: String,
    },
}

pub fn send<T: Serialize>(stream: &mut TcpStream, message: &T) -> Result<(), ProtocolError> {
    let bytes = serde_json::to_vec(message)?;
    write_message(stream, &bytes)?;
    Ok(())
}

/// Reads one raw message; `Closed` on a clean end of stream.
pub fn recv_bytes(stream: &mut TcpStream) -> Result<Vec<u8>, ProtocolError> {
    read_message(stream, DEFAULT_MAX_MESSAGE)?.ok_or(ProtocolError::Closed)
}

pub fn recv<T: DeserializeOwned>(stream: &mut TcpStream) -> Result<T, ProtocolError> {
    Ok(serde_json::from_slice(&recv_bytes(stream)?)?)
}

pub fn unix_time() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Blocking request/response connection to an inference server.
pub struct Client {
    stream: TcpStream,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ProtocolError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    pub fn connect_timeout(addr: &std::net::SocketAddr, timeout: Duration) -> Result<Self, ProtocolError> {
        let stream = TcpStream::connect_timeout(addr, timeout)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    pub fn set_read_timeout(&self, timeout: Option<Duration>) -> Result<(), ProtocolError> {
        self.stream.set_read_timeout(timeout)?;
        Ok(())
    }

    pub fn call(&mut self, request: &Request) -> Result<Response, ProtocolError> {
        send(&mut self.stream, request)?;
        recv(&mut self.stream)
    }

    /// Sends arbitrary bytes as one message and reads the reply.
    pub fn call_raw(&mut self, payload: &[u8]) -> Result<Response, ProtocolError> {
        write_message(&mut self.stream, payload)?;
        recv(&mut self.stream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn wire_shapes() {
        let req = Request::Predict(PredictRequest {
            request_id: 7,
            model_id: "default".into(),
            rows: vec![vec![50.988, 42.881]],
            timestamp: 1.5,
        });
        assert_eq!(
            serde_json::to_value(&req).unwrap(),
            json!({"type": "predict", "request_id": 7, "model_id": "default", "rows": [[50.988, 42.881]], "timestamp": 1.5})
        );
        assert_eq!(serde_json::to_value(Request::Health).unwrap(), json!({"type": "health"}));
        let err = Response::Error { request_id: Some(3), code: ErrorCode::ShapeMismatch, message: "x".into() };
        assert_eq!(
            serde_json::to_value(&err).unwrap(),
            json!({"type": "error", "request_id": 3, "code": "shape_mismatch", "message": "x"})
        );
        let poll: Request = serde_json::from_value(json!({"type": "poll_config", "request_id": 1})).unwrap();
        assert_eq!(poll, Request::PollConfig { request_id: 1, interval: None, model_id: None });
    }

    #[test]
    fn round_trip_all_requests() {
        let reqs = vec![
            Request::Health,
            Request::UploadData { request_id: 1, file_name: "a.csv".into(), content: "t,R1\n".into() },
            Request::LoadModel { request_id: 2, model_id: "m".into(), path: "/tmp/m.json".into() },
            Request::PollConfig { request_id: 3, interval: Some(5.0), model_id: Some("m".into()) },
        ];
        for r in reqs {
            let text = serde_json::to_string(&r).unwrap();
            assert_eq!(serde_json::from_str::<Request>(&text).unwrap(), r);
        }
    }
}
