//! Append-only per-node CSV in the synchronised-table layout.
//!
//! Each row goes out in a single write followed by a flush. On open, a final
//! line without its newline (a write cut short by a crash) is moved to a
//! `.quarantine` file and cut from the table instead of being parsed.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use log::warn;
use shm_core::dataset::{format_table_row, parse_resistance_csv, table1_header};

use super::GatewayError;

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub quarantine_path: PathBuf,
    pub torn_bytes: usize,
}

#[derive(Debug)]
pub struct CsvStore {
    path: PathBuf,
    file: File,
    channels: usize,
    next_index: u64,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> GatewayError {
    GatewayError::CorruptStore { path: path.to_path_buf(), reason: reason.into() }
}

pub fn quarantine_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".quarantine");
    PathBuf::from(name)
}

impl CsvStore {
    pub fn open(path: &Path, channels: usize) -> Result<(Self, Option<Recovery>), GatewayError> {
        let header = table1_header(channels);
        let existing = match fs::read(path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(GatewayError::Persistence(e.to_string())),
        };

        let mut recovery = None;
        let keep = match existing.iter().rposition(|&b| b == b'\n') {
            Some(pos) => pos + 1,
            None => 0,
        };
        if keep < existing.len() {
            let torn = &existing[keep..];
            let qpath = quarantine_path(path);
            let mut q = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&qpath)
                .map_err(|e| GatewayError::Persistence(e.to_string()))?;
            q.write_all(torn)
                .and_then(|()| q.write_all(b"\n"))
                .map_err(|e| GatewayError::Persistence(e.to_string()))?;
            warn!(
                "{}: quarantined {} byte(s) of a torn final line to {}",
                path.display(),
                torn.len(),
                qpath.display()
            );
            recovery = Some(Recovery { quarantine_path: qpath, torn_bytes: torn.len() });
        }
        let kept = &existing[..keep];

        let mut next_index = 0;
        if !kept.is_empty() {
            let text = std::str::from_utf8(kept).map_err(|e| corrupt(path, e.to_string()))?;
            let first = text.lines().next().unwrap_or("");
            if first != header {
                return Err(corrupt(path, format!("header {first:?}, expected {header:?}")));
            }
            next_index = parse_resistance_csv(text).map_err(|e| corrupt(path, e.to_string()))?.len() as u64;
        }

        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(false)
            .open(path)
            .map_err(|e| GatewayError::Persistence(e.to_string()))?;
        file.set_len(keep as u64).map_err(|e| GatewayError::Persistence(e.to_string()))?;
        drop(file);
        let mut file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::Persistence(e.to_string()))?;
        if kept.is_empty() {
            file.write_all(format!("{header}\n").as_bytes())
                .map_err(|e| GatewayError::Persistence(e.to_string()))?;
        }
        Ok((
            Self { path: path.to_path_buf(), file, channels, next_index },
            recovery,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> u64 {
        self.next_index
    }

    /// Appends one logger row and returns its index.
    pub fn append(&mut self, t: f64, resistances: &[f64]) -> Result<u64, GatewayError> {
        if resistances.len() != self.channels {
            return Err(GatewayError::Persistence(format!(
                "{} channels for a {}-channel table",
                resistances.len(),
                self.channels
            )));
        }
        let index = self.next_index;
        let mut line = format_table_row(index, None, None, t, resistances);
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|()| self.file.flush())
            .map_err(|e| GatewayError::Persistence(e.to_string()))?;
        self.next_index += 1;
        Ok(index)
    }
}
