//! Inference service: one thread per client connection, models shared
//! read-only and swapped atomically on load.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use shm_core::ml::{load_model, MlError, MlpModel};
use thiserror::Error;

use crate::poll::PollWorker;
use crate::protocol::{
    recv_bytes, send, ErrorCode, PredictRequest, PredictResponse, ProtocolError, Request, Response,
    DEFAULT_MODEL_ID,
};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("cannot load model {id:?}: {source}")]
    Model { id: String, source: MlError },
    #[error("upload directory {path}: {source}")]
    UploadDir { path: PathBuf, source: io::Error },
    #[error("invalid poll interval {0}")]
    InvalidInterval(f64),
}

/// Failure of a single request; maps onto an error reply.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RequestError {
    #[error("row {row} has {found} features, model {model_id:?} expects {expected}")]
    ShapeMismatch { model_id: String, row: usize, expected: usize, found: usize },
    #[error("model {0:?} is not loaded")]
    ModelNotLoaded(String),
}

impl RequestError {
    pub fn code(&self) -> ErrorCode {
        match self {
            RequestError::ShapeMismatch { .. } => ErrorCode::ShapeMismatch,
            RequestError::ModelNotLoaded(_) => ErrorCode::ModelNotLoaded,
        }
    }
}

#[derive(Default)]
pub struct ModelRegistry {
    models: RwLock<HashMap<String, Arc<MlpModel>>>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, id: impl Into<String>, model: MlpModel) {
        self.models.write().expect("registry lock").insert(id.into(), Arc::new(model));
    }

    pub fn load_file(&self, id: &str, path: &Path) -> Result<usize, ServerError> {
        let model = load_model(path).map_err(|source| ServerError::Model { id: id.into(), source })?;
        let width = model.input_width();
        self.insert(id, model);
        Ok(width)
    }

    pub fn get(&self, id: &str) -> Option<Arc<MlpModel>> {
        self.models.read().expect("registry lock").get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.models.read().expect("registry lock").keys().cloned().collect();
        ids.sort();
        ids
    }
}

/// Pure prediction: `predictions[i] = forward(model, rows[i])`.
pub fn predict_rows(model_id: &str, model: &MlpModel, rows: &[Vec<f64>]) -> Result<Vec<f64>, RequestError> {
    let expected = model.input_width();
    if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != expected) {
        return Err(RequestError::ShapeMismatch {
            model_id: model_id.into(),
            row,
            expected,
            found: r.len(),
        });
    }
    Ok(rows
        .iter()
        .map(|r| model.forward(r).expect("width checked above"))
        .collect())
}

pub fn handle_predict(registry: &ModelRegistry, req: &PredictRequest) -> Result<PredictResponse, RequestError> {
    let start = Instant::now();
    let model = registry
        .get(&req.model_id)
        .ok_or_else(|| RequestError::ModelNotLoaded(req.model_id.clone()))?;
    let predictions = predict_rows(&req.model_id, &model, &req.rows)?;
    Ok(PredictResponse {
        request_id: req.request_id,
        model_id: req.model_id.clone(),
        predictions,
        processing_time: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub addr: String,
    pub upload_dir: PathBuf,
    /// Model reported by `health`.
    pub default_model: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            addr: crate::protocol::DEFAULT_SERVER_ADDR.into(),
            upload_dir: PathBuf::from("uploads"),
            default_model: DEFAULT_MODEL_ID.into(),
        }
    }
}

struct Shared {
    registry: Arc<ModelRegistry>,
    config: ServerConfig,
    poller: Mutex<Option<PollWorker>>,
    connections: Mutex<Vec<TcpStream>>,
    stopping: AtomicBool,
}

pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn registry(&self) -> &Arc<ModelRegistry> {
        &self.shared.registry
    }

    pub fn upload_dir(&self) -> &Path {
        &self.shared.config.upload_dir
    }

    /// Starts or stops directory polling without a client round trip.
    pub fn configure_polling(&self, interval: Option<f64>, model_id: Option<String>) -> Result<(), ServerError> {
        configure_polling(&self.shared, interval, model_id)
    }

    /// Blocks until the acceptor exits, i.e. until another thread calls
    /// [`ServerHandle::shutdown`] or the listener fails.
    pub fn wait(mut self) {
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if self.shared.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
        for c in self.shared.connections.lock().expect("connections lock").drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        if let Some(p) = self.shared.poller.lock().expect("poller lock").take() {
            p.stop();
        }
        info!("server on {} stopped", self.addr);
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.acceptor.is_some() {
            self.stop();
        }
    }
}

pub fn serve(config: ServerConfig, registry: Arc<ModelRegistry>) -> Result<ServerHandle, ServerError> {
    fs::create_dir_all(&config.upload_dir).map_err(|source| ServerError::UploadDir {
        path: config.upload_dir.clone(),
        source,
    })?;
    let listener = TcpListener::bind(&config.addr).map_err(|source| ServerError::Bind {
        addr: config.addr.clone(),
        source,
    })?;
    let addr = listener.local_addr().map_err(|source| ServerError::Bind {
        addr: config.addr.clone(),
        source,
    })?;
    info!("inference server listening on {addr}, models {:?}", registry.ids());
    let shared = Arc::new(Shared {
        registry,
        config,
        poller: Mutex::new(None),
        connections: Mutex::new(Vec::new()),
        stopping: AtomicBool::new(false),
    });
    let acceptor = {
        let shared = Arc::clone(&shared);
        thread::Builder::new()
            .name("server-accept".into())
            .spawn(move || accept_loop(listener, shared))
            .expect("spawn acceptor")
    };
    Ok(ServerHandle { addr, shared, acceptor: Some(acceptor) })
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
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
        if let Ok(c) = stream.try_clone() {
            let mut conns = shared.connections.lock().expect("connections lock");
            conns.retain(|s| s.peer_addr().is_ok());
            conns.push(c);
        }
        let shared = Arc::clone(&shared);
        let spawned = thread::Builder::new()
            .name("server-conn".into())
            .spawn(move || handle_connection(stream, &shared));
        if let Err(e) = spawned {
            warn!("cannot spawn connection thread: {e}");
        }
    }
}

fn handle_connection(mut stream: TcpStream, shared: &Shared) {
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    debug!("client {peer} connected");
    loop {
        let bytes = match recv_bytes(&mut stream) {
            Ok(b) => b,
            Err(ProtocolError::Closed) => break,
            Err(e) => {
                debug!("client {peer}: {e}");
                break;
            }
        };
        let response = match serde_json::from_slice::<Request>(&bytes) {
            Ok(req) => dispatch(shared, req),
            Err(e) => Response::Error {
                request_id: request_id_hint(&bytes),
                code: ErrorCode::Malformed,
                message: e.to_string(),
            },
        };
        if let Err(e) = send(&mut stream, &response) {
            debug!("client {peer}: reply failed: {e}");
            break;
        }
        if shared.stopping.load(Ordering::SeqCst) {
            break;
        }
    }
    debug!("client {peer} disconnected");
}

fn request_id_hint(bytes: &[u8]) -> Option<u64> {
    serde_json::from_slice::<serde_json::Value>(bytes)
        .ok()?
        .get("request_id")?
        .as_u64()
}

fn error_reply(request_id: u64, code: ErrorCode, message: impl ToString) -> Response {
    Response::Error { request_id: Some(request_id), code, message: message.to_string() }
}

fn dispatch(shared: &Shared, request: Request) -> Response {
    match request {
        Request::Health => Response::HealthOk {
            model_id: shared
                .registry
                .get(&shared.config.default_model)
                .map(|_| shared.config.default_model.clone()),
            models: shared.registry.ids(),
        },
        Request::Predict(req) => match handle_predict(&shared.registry, &req) {
            Ok(resp) => Response::Prediction(resp),
            Err(e) => error_reply(req.request_id, e.code(), e),
        },
        Request::UploadData { request_id, file_name, content } => {
            match store_upload(&shared.config.upload_dir, &file_name, &content) {
                Ok(path) => Response::UploadOk { request_id, path },
                Err(e) => error_reply(request_id, ErrorCode::InvalidUpload, e),
            }
        }
        Request::LoadModel { request_id, model_id, path } => match shared.registry.load_file(&model_id, &path) {
            Ok(input_width) => {
                info!("loaded model {model_id:?} from {}", path.display());
                Response::ModelLoaded { request_id, model_id, input_width }
            }
            Err(e) => error_reply(request_id, ErrorCode::LoadFailed, e),
        },
        Request::PollConfig { request_id, interval, model_id } => match configure_polling(shared, interval, model_id) {
            Ok(()) => Response::PollConfig { request_id, interval },
            Err(e) => error_reply(request_id, ErrorCode::InvalidConfig, e),
        },
    }
}

fn configure_polling(shared: &Shared, interval: Option<f64>, model_id: Option<String>) -> Result<(), ServerError> {
    let mut slot = shared.poller.lock().expect("poller lock");
    if let Some(old) = slot.take() {
        old.stop();
    }
    if let Some(interval) = interval {
        if !(interval.is_finite() && interval > 0.0) {
            return Err(ServerError::InvalidInterval(interval));
        }
        let model_id = model_id.unwrap_or_else(|| shared.config.default_model.clone());
        *slot = Some(PollWorker::start(
            shared.config.upload_dir.clone(),
            Duration::from_secs_f64(interval),
            Arc::clone(&shared.registry),
            model_id,
        ));
    }
    Ok(())
}

/// Writes an uploaded file under a temporary name and renames it into place,
/// so the poller never sees a partial file.
pub fn store_upload(dir: &Path, file_name: &str, content: &str) -> io::Result<PathBuf> {
    let valid = !file_name.is_empty()
        && !file_name.starts_with('.')
        && file_name.ends_with(".csv")
        && file_name.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c));
    if !valid {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("file name {file_name:?} must be a plain *.csv name"),
        ));
    }
    let target = dir.join(file_name);
    let tmp = dir.join(format!(".{file_name}.part"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(content.as_bytes())?;
        f.sync_data()?;
    }
    fs::rename(&tmp, &target)?;
    Ok(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use shm_core::ml::Normalizer;

    fn model(width: usize) -> MlpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        MlpModel::new(Normalizer::identity(width), 4, &mut rng).unwrap()
    }

    #[test]
    fn predict_checks_model_and_shape() {
        let reg = ModelRegistry::new();
        reg.insert("m", model(2));
        let req = |rows: Vec<Vec<f64>>, id: &str| PredictRequest { request_id: 9, model_id: id.into(), rows, timestamp: 0.0 };
        let ok = handle_predict(&reg, &req(vec![vec![1.0, 2.0], vec![1.0, 2.0]], "m")).unwrap();
        assert_eq!(ok.request_id, 9);
        assert_eq!(ok.predictions[0], ok.predictions[1]);
        assert_eq!(
            handle_predict(&reg, &req(vec![vec![1.0]], "m")).unwrap_err().code(),
            ErrorCode::ShapeMismatch
        );
        assert_eq!(
            handle_predict(&reg, &req(vec![vec![1.0, 2.0]], "other")).unwrap_err(),
            RequestError::ModelNotLoaded("other".into())
        );
    }

    #[test]
    fn upload_names_are_restricted() {
        let dir = tempfile::tempdir().unwrap();
        let p = store_upload(dir.path(), "node_1_7.csv", "t,R1\n0,1\n").unwrap();
        assert_eq!(fs::read_to_string(p).unwrap(), "t,R1\n0,1\n");
        for bad in ["../x.csv", "a/b.csv", ".hidden.csv", "x.txt", ""] {
            assert!(store_upload(dir.path(), bad, "").is_err(), "{bad}");
        }
    }
}
