//! Wire format: one JSON document per line over TCP.
//!
//! The first request on a connection must be `auth`. Every request gets one
//! [`Response`], except a successful `attach`, after which the server sends
//! [`Frame`]s until an `end` frame.

use std::path::PathBuf;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::jobspec::{Dialect, ParseError};
use crate::runtime::{ClientId, RuntimeError};
use crate::sched::{JobId, SchedError, StatusFilter};

/// Longest accepted request line, in bytes.
pub const MAX_LINE: usize = 4 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Auth {
        token: String,
    },
    Submit {
        script: String,
        /// Directory the job runs in; defaults to the daemon's workdir.
        #[serde(default)]
        submit_dir: Option<PathBuf>,
        #[serde(default)]
        dialect: Option<Dialect>,
        /// Name used when the script sets none.
        #[serde(default)]
        default_name: Option<String>,
    },
    Status {
        #[serde(default)]
        filter: StatusFilter,
    },
    Cancel {
        job_id: JobId,
    },
    SessionCreate {
        name: String,
        command: Vec<String>,
    },
    SessionList,
    SessionKill {
        name: String,
    },
    Attach {
        name: String,
        /// Resume from this stream offset instead of replaying the buffer.
        #[serde(default)]
        since: Option<u64>,
    },
    /// On the attached connection itself `client` may be omitted.
    Detach {
        name: String,
        #[serde(default)]
        client: Option<ClientId>,
    },
    /// Diagnostic: the daemon's job ledger.
    Ledger,
}

/// Machine-readable result code carried by every response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Code {
    Ok,
    AuthFailed,
    BadRequest,
    UnknownRequest,
    ParseError,
    InvalidName,
    InvalidCommand,
    Unsatisfiable,
    NoSuchJob,
    InvalidTransition,
    UnknownSession,
    DuplicateSession,
    NotAttached,
    Internal,
}

impl Code {
    /// Process exit status the CLI uses for this code.
    pub fn exit_status(self) -> i32 {
        match self {
            Code::Ok => 0,
            Code::ParseError | Code::InvalidName | Code::InvalidCommand => 1,
            Code::AuthFailed | Code::BadRequest | Code::UnknownRequest | Code::Internal => 2,
            Code::Unsatisfiable => 3,
            Code::NoSuchJob
            | Code::InvalidTransition
            | Code::UnknownSession
            | Code::DuplicateSession
            | Code::NotAttached => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    pub code: Code,
    #[serde(default)]
    pub payload: Value,
}

impl Response {
    pub fn ok(payload: Value) -> Self {
        Self {
            ok: true,
            code: Code::Ok,
            payload,
        }
    }

    pub fn error(code: Code, message: impl Into<String>) -> Self {
        Self {
            ok: false,
            code,
            payload: serde_json::json!({ "message": message.into() }),
        }
    }

    /// The error message of a failed response.
    pub fn message(&self) -> Option<&str> {
        self.payload.get("message").and_then(Value::as_str)
    }
}

impl From<&ParseError> for Response {
    fn from(e: &ParseError) -> Self {
        let mut r = Response::error(Code::ParseError, e.to_string());
        if let Some(line) = e.line() {
            r.payload["line"] = line.into();
        }
        r
    }
}

impl From<&SchedError> for Response {
    fn from(e: &SchedError) -> Self {
        let code = match e {
            SchedError::Unsatisfiable(_) => Code::Unsatisfiable,
            SchedError::NoSuchJob(_) => Code::NoSuchJob,
            SchedError::InvalidTransition { .. } => Code::InvalidTransition,
            SchedError::Restore(_) => Code::Internal,
        };
        Response::error(code, e.to_string())
    }
}

impl From<&RuntimeError> for Response {
    fn from(e: &RuntimeError) -> Self {
        let code = match e {
            RuntimeError::SpawnFailed(_) => Code::InvalidCommand,
            RuntimeError::DuplicateSession(_) => Code::DuplicateSession,
            RuntimeError::UnknownSession(_) => Code::UnknownSession,
            RuntimeError::NotAttached { .. } => Code::NotAttached,
            RuntimeError::InvalidCommand => Code::InvalidCommand,
            RuntimeError::InvalidName(_) => Code::InvalidName,
        };
        Response::error(code, e.to_string())
    }
}

/// Payload of a successful attach response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachInfo {
    pub client: ClientId,
    /// Stream offset of the first byte the client will receive.
    pub offset: u64,
    /// Output was lost to the ring buffer since the last full replay.
    pub truncated: bool,
}

/// Server-to-client message on an attached connection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Frame {
    Data {
        #[serde(with = "b64")]
        bytes: Vec<u8>,
    },
    End {
        reason: String,
    },
}

mod b64 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

/// Decodes one request line. Unknown `type` values and malformed documents
/// produce the response to send back.
pub fn decode_request(line: &str) -> Result<Request, Response> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| Response::error(Code::BadRequest, format!("malformed request: {e}")))?;
    let kind = value
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| Response::error(Code::BadRequest, "request has no type"))?
        .to_string();
    const KNOWN: &[&str] = &[
        "auth",
        "submit",
        "status",
        "cancel",
        "session_create",
        "session_list",
        "session_kill",
        "attach",
        "detach",
        "ledger",
    ];
    if !KNOWN.contains(&kind.as_str()) {
        return Err(Response::error(
            Code::UnknownRequest,
            format!("unknown request type {kind:?}"),
        ));
    }
    serde_json::from_value(value)
        .map_err(|e| Response::error(Code::BadRequest, format!("malformed {kind} request: {e}")))
}

/// Serializes `msg` as one line, newline included.
pub fn encode_line<T: Serialize>(msg: &T) -> Vec<u8> {
    let mut line = serde_json::to_vec(msg).expect("protocol types serialize");
    line.push(b'\n');
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_shapes() {
        let r = decode_request(r#"{"type":"cancel","job_id":3}"#).unwrap();
        assert_eq!(r, Request::Cancel { job_id: JobId(3) });
        let r = decode_request(r#"{"type":"status"}"#).unwrap();
        assert_eq!(r, Request::Status { filter: StatusFilter::default() });
        let r = decode_request(r#"{"type":"status","filter":{"state":"R"}}"#).unwrap();
        assert!(matches!(r, Request::Status { filter } if filter.state.is_some()));
        let line = encode_line(&Request::SessionList);
        assert_eq!(line, b"{\"type\":\"session_list\"}\n");
    }

    #[test]
    fn unknown_and_malformed() {
        let e = decode_request(r#"{"type":"reboot"}"#).unwrap_err();
        assert_eq!(e.code, Code::UnknownRequest);
        assert_eq!(decode_request("not json").unwrap_err().code, Code::BadRequest);
        assert_eq!(decode_request(r#"{"type":"cancel"}"#).unwrap_err().code, Code::BadRequest);
        assert_eq!(decode_request("[1]").unwrap_err().code, Code::BadRequest);
    }

    #[test]
    fn frames_carry_base64() {
        let f = Frame::Data { bytes: b"hi\n".to_vec() };
        let text = String::from_utf8(encode_line(&f)).unwrap();
        assert_eq!(text, "{\"type\":\"data\",\"bytes\":\"aGkK\"}\n");
        assert_eq!(serde_json::from_str::<Frame>(text.trim()).unwrap(), f);
        let end: Frame = serde_json::from_str(r#"{"type":"end","reason":"exited"}"#).unwrap();
        assert_eq!(end, Frame::End { reason: "exited".into() });
    }

    #[test]
    fn parse_errors_carry_line() {
        let r = Response::from(&ParseError::BadWalltime { line: 4, value: "9:99:00".into() });
        assert_eq!(r.code, Code::ParseError);
        assert_eq!(r.payload["line"], 4);
        assert!(r.message().unwrap().contains("line 4"));
    }

    #[test]
    fn exit_status_contract() {
        assert_eq!(Code::Ok.exit_status(), 0);
        assert_eq!(Code::ParseError.exit_status(), 1);
        assert_eq!(Code::AuthFailed.exit_status(), 2);
        assert_eq!(Code::Unsatisfiable.exit_status(), 3);
        assert_eq!(Code::NoSuchJob.exit_status(), 4);
        assert_eq!(Code::DuplicateSession.exit_status(), 4);
    }
}
