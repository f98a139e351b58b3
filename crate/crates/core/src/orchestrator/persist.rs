//! Event log and snapshot files.
//!
//! The log is JSON lines, one event per line, appended in command batches.
//! A crash can leave a torn last line or an uncommitted batch tail; both are
//! dropped on load.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::event::Event;
use super::state::State;

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: corrupt event line: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("{path}: bad snapshot: {message}")]
    Snapshot { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Result of reading a log: the committed prefix and its byte length.
#[derive(Debug)]
pub struct LoadedLog {
    pub events: Vec<Event>,
    pub committed_bytes: u64,
    pub discarded_bytes: u64,
}

pub fn event_line(e: &Event) -> String {
    let mut s = serde_json::to_string(e).expect("event serializes");
    s.push('\n');
    s
}

pub fn events_to_jsonl(events: &[Event]) -> String {
    events.iter().map(event_line).collect()
}

/// Parses log text. A malformed line is tolerated only as the final line
/// (a torn write); anything after the last committed event is discarded.
pub fn parse_log(text: &str, path: &Path) -> Result<LoadedLog, PersistError> {
    let mut events = Vec::new();
    let mut committed_len = 0usize;
    let mut committed_bytes = 0u64;
    let mut offset = 0u64;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, raw) in lines.iter().enumerate() {
        offset += raw.len() as u64;
        let complete = raw.ends_with('\n');
        let body = raw.trim_end_matches('\n');
        if body.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Event>(body) {
            Ok(e) if complete => {
                let commit = e.commit;
                events.push(e);
                if commit {
                    committed_len = events.len();
                    committed_bytes = offset;
                }
            }
            Ok(_) => break,
            Err(err) => {
                if i + 1 == lines.len() {
                    break;
                }
                return Err(PersistError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: err.to_string(),
                });
            }
        }
    }
    events.truncate(committed_len);
    Ok(LoadedLog {
        events,
        committed_bytes,
        discarded_bytes: text.len() as u64 - committed_bytes,
    })
}

pub fn read_log(path: &Path) -> Result<LoadedLog, PersistError> {
    match std::fs::read_to_string(path) {
        Ok(text) => parse_log(&text, path),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(LoadedLog {
            events: Vec::new(),
            committed_bytes: 0,
            discarded_bytes: 0,
        }),
        Err(e) => Err(io_err(path)(e)),
    }
}

/// Append-only writer. Opening truncates any uncommitted tail.
pub struct LogWriter {
    path: PathBuf,
    file: File,
    sync: bool,
}

impl LogWriter {
    pub fn open(path: &Path, committed_bytes: u64, sync: bool) -> Result<Self, PersistError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        file.set_len(committed_bytes).map_err(io_err(path))?;
        Ok(LogWriter {
            path: path.to_path_buf(),
            file,
            sync,
        })
    }

    /// Writes one batch with a single write call.
    pub fn append(&mut self, events: &[Event]) -> Result<(), PersistError> {
        if events.is_empty() {
            return Ok(());
        }
        let text = events_to_jsonl(events);
        self.file.write_all(text.as_bytes()).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))?;
        if self.sync {
            self.file.sync_data().map_err(io_err(&self.path))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub state: State,
}

impl Snapshot {
    pub fn last_seq(&self) -> u64 {
        self.state.last_seq
    }
}

/// Writes atomically via a temporary file and rename.
pub fn write_snapshot(path: &Path, snap: &Snapshot) -> Result<(), PersistError> {
    let tmp = path.with_extension("json.tmp");
    let text = serde_json::to_string(snap).expect("snapshot serializes");
    std::fs::write(&tmp, text).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_snapshot(path: &Path) -> Result<Option<Snapshot>, PersistError> {
    match std::fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| PersistError::Snapshot {
            path: path.to_path_buf(),
            message: e.to_string(),
        }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path)(e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::event::EventKind;

    fn ev(seq: u64, commit: bool) -> Event {
        Event {
            seq,
            ts: seq,
            commit,
            kind: EventKind::HitCancelled { hit: format!("h{seq}") },
        }
    }

    #[test]
    fn torn_tail_and_uncommitted_batch_are_dropped() {
        let mut text = events_to_jsonl(&[ev(1, true), ev(2, false), ev(3, true), ev(4, false)]);
        let keep = events_to_jsonl(&[ev(1, true), ev(2, false), ev(3, true)]).len() as u64;
        text.push_str("{\"seq\":5,\"ts\"");
        let log = parse_log(&text, Path::new("x")).unwrap();
        assert_eq!(log.events.iter().map(|e| e.seq).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(log.committed_bytes, keep);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let text = format!("{}garbage\n{}", event_line(&ev(1, true)), event_line(&ev(2, true)));
        assert!(matches!(parse_log(&text, Path::new("x")), Err(PersistError::Corrupt { line: 2, .. })));
    }

    #[test]
    fn writer_truncates_to_committed_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        std::fs::write(&path, format!("{}{}", event_line(&ev(1, true)), event_line(&ev(2, false)))).unwrap();
        let log = read_log(&path).unwrap();
        let mut w = LogWriter::open(&path, log.committed_bytes, false).unwrap();
        w.append(&[ev(2, true)]).unwrap();
        let again = read_log(&path).unwrap();
        assert_eq!(again.events, vec![ev(1, true), ev(2, true)]);
        assert_eq!(again.discarded_bytes, 0);
    }

    #[test]
    fn missing_files_are_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_log(&dir.path().join("none")).unwrap().events.is_empty());
        assert!(read_snapshot(&dir.path().join("none")).unwrap().is_none());
    }
}
