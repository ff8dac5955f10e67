//! Append-only record log (`records.jsonl`) with a per-record index
//! (`records.idx`: `offset<TAB>length<TAB>kind<TAB>station`).

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rwis_core::anomaly::AnomalyLabel;
use rwis_core::data::Forcing;
use rwis_core::{Channel, ChannelValues, Horizon};
use serde::{Deserialize, Serialize};

pub const LOG_FILE: &str = "records.jsonl";
pub const INDEX_FILE: &str = "records.idx";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: record at byte {offset}: {source}")]
    Corrupt {
        path: String,
        offset: u64,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestStatus {
    Accepted,
    Flagged,
    QuarantinedDrop,
}

/// A forecast served for one channel and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRecord {
    pub station_id: String,
    pub issue_time: DateTime<Utc>,
    pub channel: Channel,
    pub horizon: Horizon,
    pub physical: f64,
    pub corrected: f64,
    /// Label of the observation at the issue slot; `None` before the
    /// detector has a full lag window.
    pub label: Option<AnomalyLabel>,
    pub grid_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationEntry {
    pub station_id: String,
    /// Slot time after snapping to the cadence grid.
    pub timestamp: DateTime<Utc>,
    pub values: ChannelValues,
    pub forcing: Option<Forcing>,
    pub predicted: Option<ChannelValues>,
    pub labels: Option<[AnomalyLabel; 4]>,
    /// Channels whose value the detector history replaced by the
    /// prediction.
    pub screened: Vec<Channel>,
    pub status: IngestStatus,
}

impl ObservationEntry {
    /// Observation-level label: anomalous if any channel is.
    pub fn label(&self) -> Option<AnomalyLabel> {
        self.labels.map(|ls| {
            if ls.iter().any(|l| l.is_anomaly()) {
                AnomalyLabel::Anomaly
            } else {
                AnomalyLabel::Normal
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingEntry {
    pub station_id: String,
    pub timestamp: DateTime<Utc>,
    pub forcing: Forcing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoreEntry {
    Observation(ObservationEntry),
    Forcing(ForcingEntry),
    Forecast(PipelineRecord),
    Reset { station_id: String },
}

impl StoreEntry {
    pub fn station_id(&self) -> &str {
        match self {
            StoreEntry::Observation(o) => &o.station_id,
            StoreEntry::Forcing(f) => &f.station_id,
            StoreEntry::Forecast(r) => &r.station_id,
            StoreEntry::Reset { station_id } => station_id,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            StoreEntry::Observation(_) => "observation",
            StoreEntry::Forcing(_) => "forcing",
            StoreEntry::Forecast(_) => "forecast",
            StoreEntry::Reset { .. } => "reset",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub offset: u64,
    pub len: u64,
    pub kind: String,
    pub station_id: String,
}

impl IndexEntry {
    fn line(&self) -> String {
        format!("{}\t{}\t{}\t{}\n", self.offset, self.len, self.kind, self.station_id)
    }

    fn parse(line: &str) -> Option<Self> {
        let mut it = line.splitn(4, '\t');
        Some(IndexEntry {
            offset: it.next()?.parse().ok()?,
            len: it.next()?.parse().ok()?,
            kind: it.next()?.to_string(),
            station_id: it.next()?.to_string(),
        })
    }
}

#[derive(Debug)]
pub struct RecordStore {
    dir: PathBuf,
    log: File,
    index_file: File,
    end: u64,
    index: Vec<IndexEntry>,
}

impl RecordStore {
    /// Opens (or creates) the store in `dir` and returns every persisted
    /// entry in append order. A torn final line from an interrupted write
    /// is cut off; the index is rebuilt whenever it disagrees with the log.
    pub fn open(dir: impl AsRef<Path>) -> Result<(Self, Vec<StoreEntry>), StoreError> {
        let dir = dir.as_ref().to_path_buf();
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| StoreError::Io { path, source }
        };
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let log_path = dir.join(LOG_FILE);
        let idx_path = dir.join(INDEX_FILE);
        let mut log = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&log_path)
            .map_err(io(&log_path))?;
        let mut bytes = Vec::new();
        log.read_to_end(&mut bytes).map_err(io(&log_path))?;
        let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1);
        if complete < bytes.len() {
            tracing::warn!(dropped = bytes.len() - complete, "truncating torn record at end of log");
            log.set_len(complete as u64).map_err(io(&log_path))?;
            bytes.truncate(complete);
        }

        let mut entries = Vec::new();
        let mut index = Vec::new();
        let mut offset = 0u64;
        for line in bytes.split_inclusive(|b| *b == b'\n') {
            let entry: StoreEntry =
                serde_json::from_slice(&line[..line.len() - 1]).map_err(|source| StoreError::Corrupt {
                    path: log_path.display().to_string(),
                    offset,
                    source,
                })?;
            index.push(IndexEntry {
                offset,
                len: line.len() as u64 - 1,
                kind: entry.kind().into(),
                station_id: entry.station_id().into(),
            });
            entries.push(entry);
            offset += line.len() as u64;
        }

        let on_disk: Option<Vec<IndexEntry>> = fs::read_to_string(&idx_path)
            .ok()
            .and_then(|t| t.lines().map(IndexEntry::parse).collect());
        if on_disk.as_ref() != Some(&index) {
            if on_disk.is_some() {
                tracing::warn!("index disagrees with log; rebuilding");
            }
            let text: String = index.iter().map(IndexEntry::line).collect();
            fs::write(&idx_path, text).map_err(io(&idx_path))?;
        }
        let index_file = OpenOptions::new()
            .append(true)
            .open(&idx_path)
            .map_err(io(&idx_path))?;
        Ok((
            RecordStore {
                dir,
                log,
                index_file,
                end: offset,
                index,
            },
            entries,
        ))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn index(&self) -> &[IndexEntry] {
        &self.index
    }

    pub fn append(&mut self, entry: &StoreEntry) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(entry).expect("entries serialize");
        let len = line.len() as u64;
        line.push('\n');
        let log_path = self.dir.join(LOG_FILE);
        self.log.write_all(line.as_bytes()).map_err(|source| StoreError::Io {
            path: log_path.display().to_string(),
            source,
        })?;
        let ix = IndexEntry {
            offset: self.end,
            len,
            kind: entry.kind().into(),
            station_id: entry.station_id().into(),
        };
        let idx_path = self.dir.join(INDEX_FILE);
        self.index_file
            .write_all(ix.line().as_bytes())
            .map_err(|source| StoreError::Io {
                path: idx_path.display().to_string(),
                source,
            })?;
        self.end += len + 1;
        self.index.push(ix);
        Ok(())
    }

    /// Entries of one station in append order, read through the index.
    pub fn entries_for(&self, station_id: &str) -> Result<Vec<StoreEntry>, StoreError> {
        let log_path = self.dir.join(LOG_FILE);
        let io = |source| StoreError::Io {
            path: log_path.display().to_string(),
            source,
        };
        let mut f = File::open(&log_path).map_err(io)?;
        let mut out = Vec::new();
        for ix in self.index.iter().filter(|i| i.station_id == station_id) {
            let mut buf = vec![0; ix.len as usize];
            f.seek(SeekFrom::Start(ix.offset)).map_err(io)?;
            f.read_exact(&mut buf).map_err(io)?;
            out.push(serde_json::from_slice(&buf).map_err(|source| StoreError::Corrupt {
                path: log_path.display().to_string(),
                offset: ix.offset,
                source,
            })?);
        }
        Ok(out)
    }
}
