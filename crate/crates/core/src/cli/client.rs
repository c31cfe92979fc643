use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use crate::daemon::protocol::{encode_line, MAX_LINE};
use crate::daemon::{Code, Frame, Request, Response};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot connect to {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("connection error: {0}")]
    Io(#[from] io::Error),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Blocking connection to a daemon, authenticated on construction.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(addr: &str, token: &str) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).map_err(|source| ClientError::Connect {
            addr: addr.to_string(),
            source,
        })?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        let mut client = Self {
            reader: BufReader::new(stream),
            writer,
        };
        let response = client.request(&Request::Auth {
            token: token.to_string(),
        })?;
        if response.code == Code::AuthFailed || !response.ok {
            return Err(ClientError::Auth(
                response.message().unwrap_or("rejected").to_string(),
            ));
        }
        Ok(client)
    }

    pub fn send(&mut self, request: &Request) -> Result<(), ClientError> {
        self.writer.write_all(&encode_line(request))?;
        Ok(())
    }

    /// Sends `request` and waits for its response.
    pub fn request(&mut self, request: &Request) -> Result<Response, ClientError> {
        self.send(request)?;
        let line = self
            .read_line()?
            .ok_or_else(|| ClientError::Protocol("daemon closed the connection".into()))?;
        serde_json::from_str(&line).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    /// Next frame of an attached stream, or `None` if the daemon hung up.
    pub fn read_frame(&mut self) -> Result<Option<Frame>, ClientError> {
        match self.read_line()? {
            None => Ok(None),
            Some(line) => serde_json::from_str(&line)
                .map(Some)
                .map_err(|e| ClientError::Protocol(e.to_string())),
        }
    }

    /// A second handle on the same socket for writing, e.g. to detach while
    /// another thread reads frames.
    pub fn writer(&self) -> Result<TcpStream, ClientError> {
        Ok(self.writer.try_clone()?)
    }

    pub fn set_read_timeout(&self, timeout: Option<Duration>) -> Result<(), ClientError> {
        self.reader.get_ref().set_read_timeout(timeout)?;
        Ok(())
    }

    fn read_line(&mut self) -> Result<Option<String>, ClientError> {
        let mut buf = Vec::new();
        let n = (&mut self.reader)
            .take(MAX_LINE as u64 + 1)
            .read_until(b'\n', &mut buf)?;
        if n == 0 {
            return Ok(None);
        }
        if !buf.ends_with(b"\n") {
            return Err(ClientError::Protocol("truncated message".into()));
        }
        String::from_utf8(buf)
            .map(Some)
            .map_err(|e| ClientError::Protocol(e.to_string()))
    }
}
