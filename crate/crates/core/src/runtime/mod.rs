//! Process execution: batch jobs with walltime enforcement, and named
//! sessions whose output outlives any attached client.

mod job;
mod ring;
mod session;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

pub use job::{launch_job, poll_walltime, JobExit, RunningJob};
pub use ring::{Replay, RingBuffer};
pub use session::{
    Attachment, ClientId, SessionExit, SessionRegistry, SessionRow, StreamEvent,
    DEFAULT_RING_CAPACITY, END_DETACHED, END_EXITED, END_KILLED,
};

/// Time between the polite signal and the hard kill.
pub const KILL_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("failed to start process: {0}")]
    SpawnFailed(String),
    #[error("a live session named {0:?} already exists")]
    DuplicateSession(String),
    #[error("no session named {0:?}")]
    UnknownSession(String),
    #[error("client {client} is not attached to session {name:?}")]
    NotAttached { name: String, client: ClientId },
    #[error("session command is empty")]
    InvalidCommand,
    #[error(transparent)]
    InvalidName(#[from] crate::jobspec::ParseError),
}

/// Exit code of a finished process, using `128 + signal` for signal deaths.
pub(crate) fn exit_code(status: std::process::ExitStatus) -> i32 {
    use std::os::unix::process::ExitStatusExt;
    status
        .code()
        .or_else(|| status.signal().map(|s| 128 + s))
        .unwrap_or(-1)
}

fn signal_group(pgid: u32, signal: libc::c_int) {
    // SAFETY: kill(2) has no memory-safety preconditions.
    unsafe {
        libc::kill(-(pgid as libc::pid_t), signal);
    }
}

/// Sends SIGTERM to the process group led by `pid`, then SIGKILL after
/// `grace` unless the leader has exited by then.
pub(crate) fn terminate_group(pid: u32, exited: Arc<AtomicBool>, grace: Duration) {
    if exited.load(Ordering::SeqCst) {
        return;
    }
    signal_group(pid, libc::SIGTERM);
    thread::spawn(move || {
        let deadline = Instant::now() + grace;
        while Instant::now() < deadline {
            if exited.load(Ordering::SeqCst) {
                return;
            }
            thread::sleep(Duration::from_millis(20));
        }
        if !exited.load(Ordering::SeqCst) {
            signal_group(pid, libc::SIGKILL);
        }
    });
}
