//! Sources of new swap specs offered at transfer points.

use std::collections::VecDeque;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::Diagnostic;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("transfer directory {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// A swap spec offered for transfer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Applied,
    Rejected(Vec<Diagnostic>),
}

pub trait TransferSource {
    /// The next swap spec available at `iteration`, if any. Polling
    /// does not consume it; [`TransferSource::resolve`] does.
    fn poll(&mut self, iteration: u64) -> Result<Option<Candidate>, TransferError>;

    fn resolve(&mut self, candidate: &Candidate, outcome: &Outcome) -> Result<(), TransferError>;
}

/// A fixed schedule of swap specs, each available from a given
/// iteration on. Used for reproducible runs.
#[derive(Debug, Clone, Default)]
pub struct ScriptedTransfers {
    pending: VecDeque<(u64, Candidate)>,
    resolved: Vec<(Candidate, Outcome)>,
}

impl ScriptedTransfers {
    pub fn new(mut schedule: Vec<(u64, String, String)>) -> Self {
        schedule.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
        ScriptedTransfers {
            pending: schedule
                .into_iter()
                .map(|(i, name, text)| (i, Candidate { name, text }))
                .collect(),
            resolved: Vec::new(),
        }
    }

    pub fn pending(&self) -> impl Iterator<Item = &Candidate> {
        self.pending.iter().map(|(_, c)| c)
    }

    pub fn resolved(&self) -> &[(Candidate, Outcome)] {
        &self.resolved
    }
}

impl TransferSource for ScriptedTransfers {
    fn poll(&mut self, iteration: u64) -> Result<Option<Candidate>, TransferError> {
        Ok(self
            .pending
            .front()
            .filter(|(at, _)| *at <= iteration)
            .map(|(_, c)| c.clone()))
    }

    fn resolve(&mut self, candidate: &Candidate, outcome: &Outcome) -> Result<(), TransferError> {
        if let Some(pos) = self.pending.iter().position(|(_, c)| c == candidate) {
            self.pending.remove(pos);
        }
        self.resolved.push((candidate.clone(), outcome.clone()));
        Ok(())
    }
}

/// Lexicographically sorted `*.json` files in `dir`. Renamed files
/// (`.applied`, `.rejected`) no longer match.
pub fn scan_transfer_dir(dir: &Path) -> Result<Vec<PathBuf>, TransferError> {
    let io_err = |source| TransferError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        let path = entry.path();
        let is_json = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(".json"));
        if is_json && entry.file_type().map_err(io_err)?.is_file() {
            found.push(path);
        }
    }
    found.sort();
    Ok(found)
}

/// Watches a directory. Consumed files are renamed `.applied`; rejected ones
/// are renamed `.rejected` with the diagnostics written next to them.
#[derive(Debug, Clone)]
pub struct DirectoryTransferSource {
    dir: PathBuf,
}

impl DirectoryTransferSource {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DirectoryTransferSource { dir: dir.into() }
    }

    fn suffixed(path: &str, suffix: &str) -> PathBuf {
        PathBuf::from(format!("{path}{suffix}"))
    }
}

impl TransferSource for DirectoryTransferSource {
    fn poll(&mut self, _iteration: u64) -> Result<Option<Candidate>, TransferError> {
        let Some(path) = scan_transfer_dir(&self.dir)?.into_iter().next() else {
            return Ok(None);
        };
        let text = fs::read_to_string(&path).map_err(|source| TransferError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(Some(Candidate {
            name: path.display().to_string(),
            text,
        }))
    }

    fn resolve(&mut self, candidate: &Candidate, outcome: &Outcome) -> Result<(), TransferError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| TransferError::Io { path, source }
        };
        let from = Path::new(&candidate.name);
        match outcome {
            Outcome::Applied => {
                let to = Self::suffixed(&candidate.name, ".applied");
                fs::rename(from, &to).map_err(io_err(from))
            }
            Outcome::Rejected(diags) => {
                let to = Self::suffixed(&candidate.name, ".rejected");
                fs::rename(from, &to).map_err(io_err(from))?;
                let sidecar = Self::suffixed(&candidate.name, ".rejected.diagnostics");
                let body: String = diags.iter().map(|d| format!("{d}\n")).collect();
                fs::write(&sidecar, body).map_err(io_err(&sidecar))
            }
        }
    }
}
