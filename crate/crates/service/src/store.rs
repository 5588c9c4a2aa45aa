//! Append-only JSON-lines event logs, one file per entity.
//!
//! Layout: `<root>/<kind>/<id>.jsonl`. Each line is one event; state is
//! rebuilt by folding the events in file order.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone)]
pub struct EventStore {
    root: PathBuf,
}

impl EventStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(EventStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, kind: &str, id: &str) -> PathBuf {
        self.root.join(kind).join(format!("{id}.jsonl"))
    }

    /// Appends one event and syncs it to disk.
    pub fn append<E: Serialize>(&self, kind: &str, id: &str, event: &E) -> Result<()> {
        let path = self.path(kind, id);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut line = serde_json::to_vec(event).map_err(|e| ServiceError::Corrupt {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        line.push(b'\n');
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        file.write_all(&line)?;
        file.sync_data()?;
        Ok(())
    }

    /// All logs of `kind`, sorted by id. A final line without its newline is a
    /// torn write and is dropped; any other unreadable line is an error.
    pub fn load<E: DeserializeOwned>(&self, kind: &str) -> Result<Vec<(String, Vec<E>)>> {
        let dir = self.root.join(kind);
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        let mut logs = Vec::with_capacity(paths.len());
        for path in paths {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            logs.push((id, read_log(&path)?));
        }
        Ok(logs)
    }
}

fn read_log<E: DeserializeOwned>(path: &Path) -> Result<Vec<E>> {
    let corrupt = |message: String| ServiceError::Corrupt {
        path: path.display().to_string(),
        message,
    };
    let mut reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        number += 1;
        let complete = line.ends_with('\n');
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(event) => events.push(event),
            Err(_) if !complete => {
                log::warn!("{}: dropping torn final line {number}", path.display());
                break;
            }
            Err(e) => return Err(corrupt(format!("line {number}: {e}"))),
        }
    }
    Ok(events)
}
