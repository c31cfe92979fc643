//! Append-only event journal, one JSON document per line.
//!
//! Each state change is written and synced before the daemon acts on it or
//! answers the client. Replaying the journal rebuilds the job ledger.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::jobspec::JobSpec;
use crate::sched::{Allocation, ClusterState, JobId, JobState, Node, Outcome, Policy};

/// Reason recorded for jobs that were running when the daemon died.
pub const DAEMON_RESTART: &str = "daemon-restart";
pub const SESSION_LOST: &str = "lost";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JournalEvent {
    Submitted {
        job_id: JobId,
        spec: JobSpec,
        submit_dir: PathBuf,
    },
    Started {
        job_id: JobId,
        allocation: Allocation,
    },
    Ended {
        job_id: JobId,
        state: JobState,
    },
    SessionCreated {
        name: String,
    },
    SessionEnded {
        name: String,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    /// Wall-clock milliseconds since the Unix epoch.
    pub at: Timestamp,
    pub event: JournalEvent,
}

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("journal I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("journal corrupt at seq {seq}: {reason}")]
    Corrupt { seq: u64, reason: String },
}

/// Writer end of the journal. Only the daemon's command loop holds one.
#[derive(Debug)]
pub struct Journal {
    file: File,
    path: PathBuf,
    next_seq: u64,
}

impl Journal {
    /// Opens `path` for appending, continuing at `next_seq`. Anything past
    /// `valid_len` (a torn final write) is cut off first.
    pub fn open(path: &Path, next_seq: u64, valid_len: u64) -> Result<Self, JournalError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(path)?;
        if file.metadata()?.len() > valid_len {
            file.set_len(valid_len)?;
            file.sync_all()?;
        }
        Ok(Self {
            file,
            path: path.to_path_buf(),
            next_seq,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Writes one entry and syncs it to disk before returning its seq.
    pub fn append(&mut self, at: Timestamp, event: JournalEvent) -> Result<u64, JournalError> {
        let entry = JournalEntry {
            seq: self.next_seq,
            at,
            event,
        };
        let mut line = serde_json::to_vec(&entry).map_err(io::Error::other)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.next_seq += 1;
        Ok(entry.seq)
    }
}

/// Parsed journal contents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JournalContents {
    pub entries: Vec<JournalEntry>,
    /// Byte length of the well-formed prefix.
    pub valid_len: u64,
}

/// Reads every entry, checking that seq runs 1, 2, 3, ... without gaps.
///
/// A final line with no trailing newline that fails to parse is treated as
/// a torn write and dropped. Any other unreadable line is corruption.
pub fn read_journal(path: &Path) -> Result<JournalContents, JournalError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(JournalContents::default()),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut contents = JournalContents::default();
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = reader.by_ref().read_until(b'\n', &mut line)?;
        if n == 0 {
            break;
        }
        let expected = contents.entries.len() as u64 + 1;
        let complete = line.ends_with(b"\n");
        let text = String::from_utf8_lossy(&line);
        if text.trim().is_empty() && complete {
            contents.valid_len += n as u64;
            continue;
        }
        match serde_json::from_str::<JournalEntry>(text.trim_end()) {
            Ok(entry) if !complete => {
                // Parsed but unterminated: keep it and terminate it on append.
                let _ = entry;
                break;
            }
            Ok(entry) => {
                if entry.seq != expected {
                    return Err(JournalError::Corrupt {
                        seq: expected,
                        reason: format!("expected seq {expected}, found {}", entry.seq),
                    });
                }
                contents.entries.push(entry);
                contents.valid_len += n as u64;
            }
            Err(_) if !complete => break,
            Err(e) => {
                return Err(JournalError::Corrupt {
                    seq: expected,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(contents)
}

/// State rebuilt from a journal.
#[derive(Debug, Clone)]
pub struct Recovered {
    pub state: ClusterState,
    /// Jobs that were running at the crash, now Failed("daemon-restart").
    pub crashed: Vec<JobId>,
    /// Sessions created but never ended; their processes died with the daemon.
    pub lost_sessions: Vec<String>,
    pub next_seq: u64,
    pub valid_len: u64,
}

/// Replays a journal onto a fresh cluster built from `nodes`.
///
/// Jobs started but never ended become Failed("daemon-restart"), and open
/// sessions are reported as lost. Pending jobs keep their submission order.
pub fn recover(path: &Path, nodes: Vec<Node>, policy: Policy) -> Result<Recovered, JournalError> {
    let contents = read_journal(path)?;
    let mut state = ClusterState::new(nodes, policy);
    let mut sessions = BTreeSet::new();
    let mut last_at = Timestamp::default();
    for entry in &contents.entries {
        let corrupt = |e: crate::sched::SchedError| JournalError::Corrupt {
            seq: entry.seq,
            reason: e.to_string(),
        };
        last_at = last_at.max(entry.at);
        match &entry.event {
            JournalEvent::Submitted {
                job_id,
                spec,
                submit_dir,
            } => state
                .restore_submitted(*job_id, spec.clone(), submit_dir.clone(), entry.at)
                .map_err(corrupt)?,
            JournalEvent::Started { job_id, allocation } => state
                .restore_started(*job_id, allocation.clone(), entry.at)
                .map_err(corrupt)?,
            JournalEvent::Ended { job_id, state: end } => state
                .restore_ended(*job_id, end.clone(), entry.at)
                .map_err(corrupt)?,
            JournalEvent::SessionCreated { name } => {
                sessions.insert(name.clone());
            }
            JournalEvent::SessionEnded { name, .. } => {
                sessions.remove(name);
            }
        }
    }
    let crashed: Vec<JobId> = state.running().map(|j| j.id).collect();
    for id in &crashed {
        state
            .transition(*id, Outcome::DaemonFailure(DAEMON_RESTART.into()), last_at)
            .expect("running job accepts failure");
    }
    Ok(Recovered {
        state,
        crashed,
        lost_sessions: sessions.into_iter().collect(),
        next_seq: contents.entries.len() as u64 + 1,
        valid_len: contents.valid_len,
    })
}
