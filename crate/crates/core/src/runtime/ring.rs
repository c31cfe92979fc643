use std::collections::VecDeque;

/// Bounded byte history addressed by absolute stream offset.
///
/// Offset 0 is the first byte the process ever wrote; the buffer holds the
/// newest `capacity` bytes, i.e. offsets `start()..end()`.
#[derive(Debug, Clone)]
pub struct RingBuffer {
    buf: VecDeque<u8>,
    capacity: usize,
    total: u64,
    /// Bytes were dropped since the last full replay.
    truncated: bool,
}

/// Bytes handed to an attaching client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replay {
    pub offset: u64,
    pub bytes: Vec<u8>,
    /// Some bytes the client asked for are no longer buffered.
    pub truncated: bool,
}

impl RingBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "ring capacity must be positive");
        Self {
            buf: VecDeque::with_capacity(capacity.min(64 * 1024)),
            capacity,
            total: 0,
            truncated: false,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn start(&self) -> u64 {
        self.total - self.buf.len() as u64
    }

    pub fn end(&self) -> u64 {
        self.total
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.total += bytes.len() as u64;
        let bytes = if bytes.len() > self.capacity {
            self.truncated = true;
            self.buf.clear();
            &bytes[bytes.len() - self.capacity..]
        } else {
            bytes
        };
        let overflow = (self.buf.len() + bytes.len()).saturating_sub(self.capacity);
        if overflow > 0 {
            self.truncated = true;
            self.buf.drain(..overflow);
        }
        self.buf.extend(bytes);
    }

    /// Buffered bytes from `since` onward, or everything when `since` is
    /// `None`. A full replay consumes the truncation flag.
    pub fn replay(&mut self, since: Option<u64>) -> Replay {
        match since {
            None => {
                let truncated = std::mem::take(&mut self.truncated);
                Replay {
                    offset: self.start(),
                    bytes: self.buf.iter().copied().collect(),
                    truncated,
                }
            }
            Some(from) if from >= self.start() => {
                let from = from.min(self.total);
                let skip = (from - self.start()) as usize;
                Replay {
                    offset: from,
                    bytes: self.buf.iter().skip(skip).copied().collect(),
                    truncated: false,
                }
            }
            Some(_) => Replay {
                offset: self.start(),
                bytes: self.buf.iter().copied().collect(),
                truncated: true,
            },
        }
    }
}
