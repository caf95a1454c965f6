//! Append-only journal of accepted fleet inputs, one JSON object per line.
//!
//! Field order is fixed: `index`, `time`, `conn`, `event`, then `message`
//! for message records.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::protocol::ConnId;
use super::state::{FleetInput, FleetState};
use crate::error::{RangeError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub index: u64,
    pub time: f64,
    pub conn: ConnId,
    #[serde(flatten)]
    pub input: FleetInput,
}

impl JournalRecord {
    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("journal records serialize");
        line.push('\n');
        line
    }
}

/// A journal backed by a file, or held only in memory.
#[derive(Debug)]
pub struct Journal {
    file: Option<(PathBuf, File)>,
    records: Vec<JournalRecord>,
}

impl Journal {
    pub fn in_memory() -> Self {
        Self { file: None, records: Vec::new() }
    }

    /// Opens `path` for appending, loading whatever it already holds.
    pub fn open(path: &Path) -> Result<Self> {
        let records = if path.exists() { read_journal(path)? } else { Vec::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| RangeError::Write { path: path.into(), source })?;
        Ok(Self { file: Some((path.into(), file)), records })
    }

    pub fn records(&self) -> &[JournalRecord] {
        &self.records
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    /// Writes and flushes one record. Returns only once the line has been
    /// handed to the operating system.
    pub fn append(&mut self, time: f64, conn: ConnId, input: FleetInput) -> Result<&JournalRecord> {
        let record = JournalRecord { index: self.records.len() as u64, time, conn, input };
        if let Some((path, file)) = &mut self.file {
            file.write_all(record.to_line().as_bytes())
                .and_then(|()| file.flush())
                .map_err(|source| RangeError::Write { path: path.clone(), source })?;
        }
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }
}

pub fn read_journal(path: &Path) -> Result<Vec<JournalRecord>> {
    let file = File::open(path).map_err(|source| RangeError::Read { path: path.into(), source })?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| RangeError::Read { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JournalRecord = serde_json::from_str(&line)
            .map_err(|e| RangeError::parse(format!("{}:{}", path.display(), i + 1), e))?;
        if record.index != records.len() as u64 {
            return Err(RangeError::parse(
                format!("{}:{}", path.display(), i + 1),
                format!("journal index {} out of order", record.index),
            ));
        }
        records.push(record);
    }
    Ok(records)
}

/// Rebuilds fleet state by folding the journal through [`FleetState::apply`].
pub fn replay(records: &[JournalRecord]) -> Result<FleetState> {
    let mut state = FleetState::new();
    for record in records {
        state.apply(record.conn, &record.input, record.time).map_err(|reason| {
            RangeError::Invalid(format!("journal record {} does not replay: {reason}", record.index))
        })?;
    }
    Ok(state)
}
