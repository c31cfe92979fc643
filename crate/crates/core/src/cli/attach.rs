use std::io::{self, IsTerminal, Read, Write};
use std::os::fd::AsRawFd;
use std::thread;
use std::time::{Duration, Instant};

use crate::daemon::protocol::encode_line;
use crate::daemon::{AttachInfo, Frame, Request};

use super::client::{Client, ClientError};

const CTRL_A: u8 = 0x01;
/// Longest pause allowed between Ctrl+A and D.
pub const CHORD_WINDOW: Duration = Duration::from_secs(1);

/// Recognizes Ctrl+A followed by `d` or `D` within [`CHORD_WINDOW`].
#[derive(Debug, Default)]
pub struct ChordDetector {
    armed_at: Option<Instant>,
}

impl ChordDetector {
    /// Feeds one input byte; returns true when the chord completes.
    pub fn feed(&mut self, byte: u8, now: Instant) -> bool {
        let armed = self
            .armed_at
            .take()
            .is_some_and(|at| now.duration_since(at) <= CHORD_WINDOW);
        if armed && matches!(byte, b'd' | b'D') {
            return true;
        }
        if byte == CTRL_A {
            self.armed_at = Some(now);
        }
        false
    }
}

/// Puts a terminal in non-canonical, no-echo mode until dropped.
struct RawMode {
    fd: i32,
    saved: libc::termios,
}

impl RawMode {
    fn enable(fd: i32) -> Option<Self> {
        // SAFETY: termios is plain data; tcgetattr fills it for a valid fd.
        let mut saved: libc::termios = unsafe { std::mem::zeroed() };
        if unsafe { libc::tcgetattr(fd, &mut saved) } != 0 {
            return None;
        }
        let mut raw = saved;
        raw.c_lflag &= !(libc::ICANON | libc::ECHO);
        raw.c_cc[libc::VMIN] = 1;
        raw.c_cc[libc::VTIME] = 0;
        // SAFETY: raw is a valid termios derived from the current settings.
        if unsafe { libc::tcsetattr(fd, libc::TCSANOW, &raw) } != 0 {
            return None;
        }
        Some(Self { fd, saved })
    }
}

impl Drop for RawMode {
    fn drop(&mut self) {
        // SAFETY: restores settings captured in enable().
        unsafe {
            libc::tcsetattr(self.fd, libc::TCSANOW, &self.saved);
        }
    }
}

/// How an attach ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttachEnd {
    Detached,
    Ended(String),
}

/// Streams a session to stdout until the chord is typed or the process
/// ends. Keyboard input other than the chord is discarded.
pub fn attach(mut client: Client, name: &str, info: AttachInfo) -> Result<AttachEnd, ClientError> {
    let stdin = io::stdin();
    let _raw = stdin
        .is_terminal()
        .then(|| RawMode::enable(stdin.as_raw_fd()))
        .flatten();
    if info.truncated {
        eprintln!("[earlier output truncated]");
    }

    let mut detach_writer = client.writer()?;
    let detach_line = encode_line(&Request::Detach {
        name: name.to_string(),
        client: Some(info.client),
    });
    thread::spawn(move || {
        let mut detector = ChordDetector::default();
        let mut stdin = io::stdin().lock();
        let mut byte = [0u8; 1];
        while let Ok(1) = stdin.read(&mut byte) {
            if detector.feed(byte[0], Instant::now()) {
                let _ = detach_writer.write_all(&detach_line);
                return;
            }
        }
    });

    let mut stdout = io::stdout().lock();
    loop {
        match client.read_frame()? {
            Some(Frame::Data { bytes }) => {
                stdout.write_all(&bytes)?;
                stdout.flush()?;
            }
            Some(Frame::End { reason }) if reason == crate::runtime::END_DETACHED => {
                return Ok(AttachEnd::Detached)
            }
            Some(Frame::End { reason }) => return Ok(AttachEnd::Ended(reason)),
            None => {
                return Err(ClientError::Protocol(
                    "daemon closed the stream without an end frame".into(),
                ))
            }
        }
    }
}
