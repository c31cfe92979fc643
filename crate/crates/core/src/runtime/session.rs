use std::collections::BTreeMap;
use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver, UnboundedSender};

use crate::clock::Timestamp;
use crate::jobspec::validate_name;

use super::ring::RingBuffer;
use super::{exit_code, terminate_group, RuntimeError, KILL_GRACE};

pub const DEFAULT_RING_CAPACITY: usize = 1024 * 1024;

pub type ClientId = u64;

/// What an attached client receives after the replay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamEvent {
    Data(Vec<u8>),
    /// No more data for this client; the text says why.
    End(String),
}

pub const END_DETACHED: &str = "detached";
pub const END_EXITED: &str = "exited";
pub const END_KILLED: &str = "killed";

/// Sent when a session process is reaped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionExit {
    pub name: String,
    pub generation: u64,
    pub code: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRow {
    pub name: String,
    pub live: bool,
    pub attached: usize,
    pub created_at: Timestamp,
    pub pid: u32,
}

pub struct Attachment {
    pub client: ClientId,
    /// Stream offset of the first replayed byte.
    pub offset: u64,
    pub replay: Vec<u8>,
    pub truncated: bool,
    pub events: UnboundedReceiver<StreamEvent>,
}

struct OutputState {
    ring: RingBuffer,
    subscribers: BTreeMap<ClientId, UnboundedSender<StreamEvent>>,
    ended: Option<String>,
}

/// Single producer (the pump thread), many consumers (attached clients).
struct SharedOutput {
    state: Mutex<OutputState>,
    killed: AtomicBool,
}

impl SharedOutput {
    fn publish(&self, bytes: &[u8]) {
        let mut st = self.state.lock().unwrap();
        st.ring.push(bytes);
        st.subscribers
            .retain(|_, tx| tx.send(StreamEvent::Data(bytes.to_vec())).is_ok());
    }

    fn finish(&self) {
        let reason = if self.killed.load(Ordering::SeqCst) {
            END_KILLED
        } else {
            END_EXITED
        };
        let mut st = self.state.lock().unwrap();
        st.ended = Some(reason.to_string());
        for (_, tx) in std::mem::take(&mut st.subscribers) {
            let _ = tx.send(StreamEvent::End(reason.to_string()));
        }
    }
}

struct Session {
    generation: u64,
    pid: u32,
    created_at: Timestamp,
    output: Arc<SharedOutput>,
    exited: Arc<AtomicBool>,
}

impl Session {
    fn row(&self, name: &str) -> SessionRow {
        SessionRow {
            name: name.to_string(),
            live: !self.exited.load(Ordering::SeqCst),
            attached: self.output.state.lock().unwrap().subscribers.len(),
            created_at: self.created_at,
            pid: self.pid,
        }
    }

    fn is_live(&self) -> bool {
        !self.exited.load(Ordering::SeqCst)
    }
}

/// Named sessions owned by the daemon.
pub struct SessionRegistry {
    sessions: BTreeMap<String, Session>,
    workdir: PathBuf,
    ring_capacity: usize,
    next_client: ClientId,
    next_generation: u64,
}

impl SessionRegistry {
    pub fn new(workdir: impl Into<PathBuf>) -> Self {
        Self::with_capacity(workdir, DEFAULT_RING_CAPACITY)
    }

    pub fn with_capacity(workdir: impl Into<PathBuf>, ring_capacity: usize) -> Self {
        Self {
            sessions: BTreeMap::new(),
            workdir: workdir.into(),
            ring_capacity,
            next_client: 1,
            next_generation: 1,
        }
    }

    /// Spawns `command` at once, capturing stdout and stderr through one pipe.
    ///
    /// A finished session's name may be reused; a live one's may not.
    pub fn create(
        &mut self,
        name: &str,
        command: &[String],
        now: Timestamp,
        on_exit: impl FnOnce(SessionExit) + Send + 'static,
    ) -> Result<SessionRow, RuntimeError> {
        validate_name(name)?;
        let (program, args) = command.split_first().ok_or(RuntimeError::InvalidCommand)?;
        if program.is_empty() {
            return Err(RuntimeError::InvalidCommand);
        }
        if self.sessions.get(name).is_some_and(Session::is_live) {
            return Err(RuntimeError::DuplicateSession(name.to_string()));
        }

        let spawn_err = |e: std::io::Error| RuntimeError::SpawnFailed(e.to_string());
        let (mut reader, writer) = std::io::pipe().map_err(spawn_err)?;
        let writer_err = writer.try_clone().map_err(spawn_err)?;
        let mut cmd = Command::new(program);
        cmd.args(args)
            .current_dir(&self.workdir)
            .env("MINIQ_SESSION", name)
            .stdin(Stdio::null())
            .stdout(writer)
            .stderr(writer_err)
            .process_group(0);
        let mut child = cmd.spawn().map_err(spawn_err)?;
        let pid = child.id();
        // Close the parent's copies of the write end so EOF arrives on exit.
        drop(cmd);

        let generation = self.next_generation;
        self.next_generation += 1;
        let output = Arc::new(SharedOutput {
            state: Mutex::new(OutputState {
                ring: RingBuffer::new(self.ring_capacity),
                subscribers: BTreeMap::new(),
                ended: None,
            }),
            killed: AtomicBool::new(false),
        });
        let exited = Arc::new(AtomicBool::new(false));

        let pump_output = output.clone();
        thread::Builder::new()
            .name(format!("session-{name}-pump"))
            .spawn(move || {
                let mut buf = [0u8; 8192];
                loop {
                    match reader.read(&mut buf) {
                        Ok(0) => break,
                        Ok(n) => pump_output.publish(&buf[..n]),
                        Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                        Err(_) => break,
                    }
                }
                pump_output.finish();
            })
            .map_err(spawn_err)?;

        let flag = exited.clone();
        let owned_name = name.to_string();
        thread::Builder::new()
            .name(format!("session-{name}-wait"))
            .spawn(move || {
                let code = child.wait().map(exit_code).unwrap_or(-1);
                flag.store(true, Ordering::SeqCst);
                on_exit(SessionExit {
                    name: owned_name,
                    generation,
                    code,
                });
            })
            .map_err(spawn_err)?;

        let session = Session {
            generation,
            pid,
            created_at: now,
            output,
            exited,
        };
        let row = session.row(name);
        self.sessions.insert(name.to_string(), session);
        Ok(row)
    }

    fn get(&self, name: &str) -> Result<&Session, RuntimeError> {
        self.sessions
            .get(name)
            .ok_or_else(|| RuntimeError::UnknownSession(name.to_string()))
    }

    /// Replays buffered output, then streams live output until the process
    /// ends or the client detaches.
    ///
    /// With `since`, replay resumes from that stream offset so a returning
    /// client sees each byte once.
    pub fn attach(&mut self, name: &str, since: Option<u64>) -> Result<Attachment, RuntimeError> {
        let client = self.next_client;
        let session = self.get(name)?;
        let (tx, rx) = unbounded_channel();
        let mut st = session.output.state.lock().unwrap();
        let replay = st.ring.replay(since);
        match &st.ended {
            Some(reason) => {
                let _ = tx.send(StreamEvent::End(reason.clone()));
            }
            None => {
                st.subscribers.insert(client, tx);
            }
        }
        drop(st);
        self.next_client += 1;
        Ok(Attachment {
            client,
            offset: replay.offset,
            replay: replay.bytes,
            truncated: replay.truncated,
            events: rx,
        })
    }

    /// Stops streaming to `client`. The process keeps running.
    pub fn detach(&mut self, name: &str, client: ClientId) -> Result<(), RuntimeError> {
        let session = self.get(name)?;
        let tx = session
            .output
            .state
            .lock()
            .unwrap()
            .subscribers
            .remove(&client)
            .ok_or_else(|| RuntimeError::NotAttached {
                name: name.to_string(),
                client,
            })?;
        let _ = tx.send(StreamEvent::End(END_DETACHED.to_string()));
        Ok(())
    }

    /// All sessions, sorted by name.
    pub fn list(&self) -> Vec<SessionRow> {
        self.sessions.iter().map(|(name, s)| s.row(name)).collect()
    }

    pub fn row(&self, name: &str) -> Result<SessionRow, RuntimeError> {
        Ok(self.get(name)?.row(name))
    }

    /// Terminates the session and forgets its name. Attached clients still
    /// receive whatever the process writes until its output closes.
    pub fn kill(&mut self, name: &str) -> Result<SessionRow, RuntimeError> {
        let session = self
            .sessions
            .remove(name)
            .ok_or_else(|| RuntimeError::UnknownSession(name.to_string()))?;
        let row = session.row(name);
        if session.is_live() {
            session.output.killed.store(true, Ordering::SeqCst);
            terminate_group(session.pid, session.exited.clone(), KILL_GRACE);
        }
        Ok(row)
    }

    /// Whether `exit` belongs to the session currently registered under its
    /// name (a killed or replaced session's exit does not).
    pub fn is_current(&self, exit: &SessionExit) -> bool {
        self.sessions
            .get(&exit.name)
            .is_some_and(|s| s.generation == exit.generation)
    }

    /// Kills every session; used at shutdown.
    pub fn kill_all(&mut self) {
        let names: Vec<String> = self.sessions.keys().cloned().collect();
        for name in names {
            let _ = self.kill(&name);
        }
    }
}
