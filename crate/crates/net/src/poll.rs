//! Server-initiated processing: every interval the upload directory is
//! scanned, each new `*.csv` is predicted and `<file>.pred.json` is written
//! beside it. A file arriving between scans waits for the next one.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use shm_core::dataset::parse_resistance_csv;

use crate::protocol::unix_time;
use crate::server::{predict_rows, ModelRegistry};

pub const RESULT_SUFFIX: &str = ".pred.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollResult {
    pub file: String,
    pub model_id: String,
    pub predictions: Vec<f64>,
    pub processing_time: f64,
    pub processed_at: f64,
}

pub fn result_path(data_file: &Path) -> PathBuf {
    let mut name = data_file.as_os_str().to_owned();
    name.push(RESULT_SUFFIX);
    PathBuf::from(name)
}

#[derive(Debug, Default)]
pub struct ScanReport {
    pub processed: Vec<PathBuf>,
    pub failed: Vec<(PathBuf, String)>,
}

fn process_file(path: &Path, registry: &ModelRegistry, model_id: &str) -> Result<PathBuf, String> {
    let start = Instant::now();
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = parse_resistance_csv(&text)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|s| s.resistances)
        .collect();
    let model = registry
        .get(model_id)
        .ok_or_else(|| format!("model {model_id:?} is not loaded"))?;
    let predictions = predict_rows(model_id, &model, &rows).map_err(|e| e.to_string())?;
    let result = PollResult {
        file: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        model_id: model_id.into(),
        predictions,
        processing_time: start.elapsed().as_secs_f64(),
        processed_at: unix_time(),
    };
    let out = result_path(path);
    let tmp = out.with_file_name(format!(
        ".{}.part",
        out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    let body = serde_json::to_vec(&result).map_err(|e| e.to_string())?;
    fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(&body))
        .and_then(|()| fs::rename(&tmp, &out))
        .map_err(|e| e.to_string())?;
    Ok(out)
}

/// One pass over `dir`. Files in `seen`, hidden files and files that already
/// have a result are skipped; everything attempted is added to `seen`.
pub fn scan_once(dir: &Path, registry: &ModelRegistry, model_id: &str, seen: &mut HashSet<PathBuf>) -> ScanReport {
    let mut report = ScanReport::default();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) => {
            warn!("cannot scan {}: {e}", dir.display());
            return report;
        }
    };
    let mut candidates: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            !name.starts_with('.') && name.ends_with(".csv") && p.is_file()
        })
        .filter(|p| !seen.contains(p) && !result_path(p).exists())
        .collect();
    candidates.sort();
    for path in candidates {
        seen.insert(path.clone());
        match process_file(&path, registry, model_id) {
            Ok(_) => report.processed.push(path),
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                report.failed.push((path, e));
            }
        }
    }
    report
}

/// Background scanner; scans happen at `start + k * interval`.
pub struct PollWorker {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl PollWorker {
    pub fn start(dir: PathBuf, interval: Duration, registry: Arc<ModelRegistry>, model_id: String) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = thread::Builder::new()
            .name("poll-worker".into())
            .spawn(move || {
                info!("polling {} every {:?}", dir.display(), interval);
                let mut seen = HashSet::new();
                let start = Instant::now();
                let mut scans: u32 = 0;
                while !flag.load(Ordering::SeqCst) {
                    let next = start + interval * (scans + 1);
                    if !sleep_until(next, &flag) {
                        break;
                    }
                    scans += 1;
                    let report = scan_once(&dir, &registry, &model_id, &mut seen);
                    if !report.processed.is_empty() {
                        info!("scan {scans}: processed {} file(s)", report.processed.len());
                    }
                }
            })
            .expect("spawn poll worker");
        Self { stop, thread: Some(thread) }
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for PollWorker {
    fn drop(&mut self) {
        self.halt();
    }
}

/// Sleeps in short slices so a stop request is noticed promptly. Returns
/// false when stopped.
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
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use shm_core::dataset::{format_table_row, table1_header};
    use shm_core::ml::{MlpModel, Normalizer};

    fn registry() -> ModelRegistry {
        let reg = ModelRegistry::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        reg.insert("default", MlpModel::new(Normalizer::identity(2), 4, &mut rng).unwrap());
        reg
    }

    fn table(rows: &[[f64; 2]]) -> String {
        let mut s = table1_header(2) + "\n";
        for (i, r) in rows.iter().enumerate() {
            s += &format_table_row(i as u64, None, None, i as f64, r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn empty_dir_produces_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let report = scan_once(dir.path(), &registry(), "default", &mut HashSet::new());
        assert!(report.processed.is_empty() && report.failed.is_empty());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn new_files_processed_once() {
        let dir = tempfile::tempdir().unwrap();
        let reg = registry();
        fs::write(dir.path().join("a.csv"), table(&[[1.0, 2.0], [3.0, 4.0]])).unwrap();
        fs::write(dir.path().join("bad.csv"), "nonsense").unwrap();
        let mut seen = HashSet::new();
        let report = scan_once(dir.path(), &reg, "default", &mut seen);
        assert_eq!(report.processed.len(), 1);
        assert_eq!(report.failed.len(), 1);
        let result: PollResult =
            serde_json::from_slice(&fs::read(dir.path().join("a.csv.pred.json")).unwrap()).unwrap();
        assert_eq!(result.predictions.len(), 2);
        let model = reg.get("default").unwrap();
        assert_eq!(result.predictions[1], model.forward(&[3.0, 4.0]).unwrap());

        let again = scan_once(dir.path(), &reg, "default", &mut seen);
        assert!(again.processed.is_empty() && again.failed.is_empty());
        // A fresh scanner also skips files that already have results.
        let fresh = scan_once(dir.path(), &reg, "default", &mut HashSet::new());
        assert!(fresh.processed.is_empty());
    }

    #[test]
    fn worker_picks_up_file_on_next_scan() {
        let dir = tempfile::tempdir().unwrap();
        let reg = Arc::new(registry());
        let interval = Duration::from_millis(150);
        let worker = PollWorker::start(dir.path().to_path_buf(), interval, Arc::clone(&reg), "default".into());
        thread::sleep(Duration::from_millis(40));
        let written = Instant::now();
        fs::write(dir.path().join("x.csv"), table(&[[1.0, 1.0]])).unwrap();
        let out = dir.path().join("x.csv.pred.json");
        while !out.exists() {
            assert!(written.elapsed() < Duration::from_secs(2));
            thread::sleep(Duration::from_millis(2));
        }
        let delay = written.elapsed();
        worker.stop();
        assert!(delay <= interval + Duration::from_millis(60), "{delay:?}");
    }
}
