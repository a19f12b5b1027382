//! Append-only JSONL run log.
//!
//! One [`ResponseRecord`] per line, UTF-8. A final line without a trailing
//! newline is an interrupted write: readers skip it and [`JsonlSink::open`]
//! truncates it before appending. Any other unparseable line is corruption.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::design::{FactorAssignment, VignetteId};
use crate::error::RunnerError;
use crate::providers::QueryParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Valid,
    ParseFailed,
    ProviderError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub vignette_id: VignetteId,
    pub run_index: u32,
    pub scenario: String,
    pub assignment: FactorAssignment,
    pub model_name: String,
    pub params: QueryParams,
    pub raw_text: String,
    pub score: Option<u8>,
    pub status: RecordStatus,
    #[serde(default)]
    pub error_detail: Option<String>,
    #[serde(default)]
    pub transport_meta: Option<String>,
    pub timestamp: DateTime<Utc>,
}

/// (vignette_id, run_index, model_name)
pub type RecordKey = (VignetteId, u32, String);

impl ResponseRecord {
    pub fn key(&self) -> RecordKey {
        (self.vignette_id.clone(), self.run_index, self.model_name.clone())
    }

    pub fn is_valid(&self) -> bool {
        self.status == RecordStatus::Valid
    }

    /// Valid ⟺ score present, and scores stay in range.
    pub fn check(&self) -> Result<(), String> {
        match (self.status, self.score) {
            (RecordStatus::Valid, Some(s)) if s <= 100 => Ok(()),
            (RecordStatus::Valid, Some(s)) => Err(format!("score {s} out of range")),
            (RecordStatus::Valid, None) => Err("valid record without a score".into()),
            (_, Some(_)) => Err("failed record carries a score".into()),
            (_, None) => Ok(()),
        }
    }
}

pub trait RecordSink: Send {
    fn append(&mut self, record: &ResponseRecord) -> io::Result<()>;
}

#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Vec<ResponseRecord>,
}

impl RecordSink for MemorySink {
    fn append(&mut self, record: &ResponseRecord) -> io::Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
}

#[derive(Debug)]
pub struct JsonlSink {
    path: PathBuf,
    file: File,
    fsync: bool,
}

impl JsonlSink {
    /// Opens (creating if needed) for appending. A torn trailing line is
    /// dropped first so the next record starts on a fresh line.
    pub fn open(path: &Path, fsync: bool) -> io::Result<Self> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().read(true).create(true).append(true).open(path)?;
        let len = file.metadata()?.len();
        if len > 0 {
            let mut contents = Vec::with_capacity(len as usize);
            file.seek(SeekFrom::Start(0))?;
            file.read_to_end(&mut contents)?;
            if contents.last() != Some(&b'\n') {
                let keep = contents.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                file.set_len(keep as u64)?;
            }
        }
        Ok(JsonlSink {
            path: path.to_path_buf(),
            file,
            fsync,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl RecordSink for JsonlSink {
    fn append(&mut self, record: &ResponseRecord) -> io::Result<()> {
        let mut line = serde_json::to_string(record).map_err(io::Error::other)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        if self.fsync {
            self.file.sync_data()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct LogContents {
    pub records: Vec<ResponseRecord>,
    /// An unterminated final line was skipped.
    pub torn_tail: bool,
}

pub fn read_log_from<R: Read>(reader: R) -> Result<LogContents, RunnerError> {
    let mut reader = BufReader::new(reader);
    let mut out = LogContents::default();
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| RunnerError::CorruptLog {
            line: number + 1,
            reason: e.to_string(),
        })?;
        if n == 0 {
            break;
        }
        number += 1;
        if !line.ends_with('\n') {
            out.torn_tail = true;
            break;
        }
        let body = line.trim_end_matches(['\n', '\r']);
        if body.trim().is_empty() {
            continue;
        }
        let record: ResponseRecord = serde_json::from_str(body).map_err(|e| RunnerError::CorruptLog {
            line: number,
            reason: e.to_string(),
        })?;
        record
            .check()
            .map_err(|reason| RunnerError::CorruptLog { line: number, reason })?;
        out.records.push(record);
    }
    Ok(out)
}

/// Reads a run log; a missing file is an empty log.
pub fn read_log(path: &Path) -> Result<LogContents, RunnerError> {
    match File::open(path) {
        Ok(f) => read_log_from(f),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(LogContents::default()),
        Err(e) => Err(RunnerError::Io(e)),
    }
}

/// One outcome per key: the first Valid record if any, otherwise the most
/// recent failure. Output is sorted by key, so physical log order is
/// irrelevant.
pub fn settled_records(records: &[ResponseRecord]) -> Vec<ResponseRecord> {
    let mut best: HashMap<RecordKey, &ResponseRecord> = HashMap::new();
    for r in records {
        match best.get(&r.key()) {
            Some(prev) if prev.is_valid() => {}
            _ => {
                best.insert(r.key(), r);
            }
        }
    }
    let mut out: Vec<ResponseRecord> = best.into_values().cloned().collect();
    out.sort_by(|a, b| {
        (&a.model_name, &a.vignette_id, a.run_index).cmp(&(&b.model_name, &b.vignette_id, b.run_index))
    });
    out
}
