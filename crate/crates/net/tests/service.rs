use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shm_core::ml::{save_model, MlpModel, Normalizer};
use shm_net::protocol::{Client, ErrorCode, PredictRequest, Request, Response};
use shm_net::server::{serve, ModelRegistry, ServerConfig, ServerHandle};

fn model(width: usize, seed: u64) -> MlpModel {
    let norm = Normalizer { mean: vec![50.0; width], std: vec![2.0; width] };
    MlpModel::new(norm, 8, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn start(dir: &std::path::Path) -> ServerHandle {
    let registry = Arc::new(ModelRegistry::new());
    registry.insert("default", model(2, 3));
    serve(
        ServerConfig {
            addr: "127.0.0.1:0".into(),
            upload_dir: dir.join("uploads"),
            default_model: "default".into(),
        },
        registry,
    )
    .unwrap()
}

fn predict(id: u64, model_id: &str, rows: Vec<Vec<f64>>) -> Request {
    Request::Predict(PredictRequest { request_id: id, model_id: model_id.into(), rows, timestamp: 0.0 })
}

#[test]
fn health_reports_default_model() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path());
    let mut c = Client::connect(server.addr()).unwrap();
    match c.call(&Request::Health).unwrap() {
        Response::HealthOk { model_id, models } => {
            assert_eq!(model_id.as_deref(), Some("default"));
            assert_eq!(models, vec!["default".to_string()]);
        }
        other => panic!("{other:?}"),
    }
    server.shutdown();
}

#[test]
fn predictions_match_local_forward_of_the_same_file() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path());
    let local = model(3, 11);
    let path = dir.path().join("m.json");
    save_model(&local, &path).unwrap();

    let mut c = Client::connect(server.addr()).unwrap();
    let loaded = c
        .call(&Request::LoadModel { request_id: 1, model_id: "m3".into(), path: path.clone() })
        .unwrap();
    assert_eq!(
        loaded,
        Response::ModelLoaded { request_id: 1, model_id: "m3".into(), input_width: 3 }
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(45.0..55.0)).collect()).collect();
    match c.call(&predict(42, "m3", rows.clone())).unwrap() {
        Response::Prediction(p) => {
            assert_eq!(p.request_id, 42);
            assert_eq!(p.model_id, "m3");
            assert_eq!(p.predictions.len(), 5);
            for (row, y) in rows.iter().zip(&p.predictions) {
                assert_eq!(local.forward(row).unwrap().to_bits(), y.to_bits());
            }
            assert!(p.processing_time >= 0.0);
        }
        other => panic!("{other:?}"),
    }

    let bad_load = c
        .call(&Request::LoadModel { request_id: 2, model_id: "x".into(), path: dir.path().join("none.json") })
        .unwrap();
    assert!(matches!(bad_load, Response::Error { code: ErrorCode::LoadFailed, .. }));
    server.shutdown();
}

#[test]
fn errors_keep_the_connection_open() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path());
    let mut c = Client::connect(server.addr()).unwrap();
    let mut other = Client::connect(server.addr()).unwrap();

    match c.call(&predict(7, "default", vec![vec![1.0, 2.0, 3.0]])).unwrap() {
        Response::Error { request_id, code, .. } => {
            assert_eq!(request_id, Some(7));
            assert_eq!(code, ErrorCode::ShapeMismatch);
        }
        other => panic!("{other:?}"),
    }
    match c.call(&predict(8, "missing", vec![vec![1.0, 2.0]])).unwrap() {
        Response::Error { code, .. } => assert_eq!(code, ErrorCode::ModelNotLoaded),
        other => panic!("{other:?}"),
    }
    match c.call_raw(br#"{"type":"predict","request_id":9,"rows":"#).unwrap() {
        Response::Error { code, .. } => assert_eq!(code, ErrorCode::Malformed),
        other => panic!("{other:?}"),
    }
    match c.call_raw(br#"{"type":"teleport","request_id":10}"#).unwrap() {
        Response::Error { request_id, code, .. } => {
            assert_eq!(code, ErrorCode::Malformed);
            assert_eq!(request_id, Some(10));
        }
        other => panic!("{other:?}"),
    }
    // Same connection still serves, and so does an unrelated one.
    let rows = vec![vec![50.0, 51.0]; 2];
    for client in [&mut c, &mut other] {
        match client.call(&predict(11, "default", rows.clone())).unwrap() {
            Response::Prediction(p) => assert_eq!(p.predictions[0], p.predictions[1]),
            r => panic!("{r:?}"),
        }
    }
    server.shutdown();
}

#[test]
fn upload_and_poll_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path());
    let mut c = Client::connect(server.addr()).unwrap();
    let content = "index,Time,Strain,t,R1,R2\n0,,,1,50,51\n";
    let path = match c
        .call(&Request::UploadData { request_id: 3, file_name: "a.csv".into(), content: content.into() })
        .unwrap()
    {
        Response::UploadOk { request_id, path } => {
            assert_eq!(request_id, 3);
            path
        }
        other => panic!("{other:?}"),
    };
    assert_eq!(std::fs::read_to_string(&path).unwrap(), content);
    let bad = c
        .call(&Request::UploadData { request_id: 4, file_name: "../a.csv".into(), content: String::new() })
        .unwrap();
    assert!(matches!(bad, Response::Error { code: ErrorCode::InvalidUpload, .. }));

    let ok = c
        .call(&Request::PollConfig { request_id: 5, interval: Some(0.05), model_id: None })
        .unwrap();
    assert_eq!(ok, Response::PollConfig { request_id: 5, interval: Some(0.05) });
    let result = shm_net::poll::result_path(&path);
    let t0 = std::time::Instant::now();
    while !result.exists() {
        assert!(t0.elapsed().as_secs() < 5, "poller never wrote {}", result.display());
        std::thread::sleep(std::time::Duration::from_millis(5));
    }
    let bad = c
        .call(&Request::PollConfig { request_id: 6, interval: Some(-1.0), model_id: None })
        .unwrap();
    assert!(matches!(bad, Response::Error { code: ErrorCode::InvalidConfig, .. }));
    server.shutdown();
}
