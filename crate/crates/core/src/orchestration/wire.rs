//! Framed JSON messages exchanged between aggregator and clients.
//!
//! A frame is one version byte (`0x01`), a 4-byte big-endian payload length
//! and a UTF-8 JSON object `{type, round?, id?, body}`. Group elements and
//! scalars travel as lowercase hex of their canonical encodings; parameter
//! vectors as base64 of the little-endian `f64` sequence, with the element
//! count alongside as `len`.

use std::io::{self, Read, Write};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::nn::ParamVector;

pub const PROTOCOL_VERSION: u8 = 0x01;
/// Frames above this size are refused before allocation.
pub const MAX_FRAME_LEN: u32 = 64 << 20;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("connection closed")]
    Closed,
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("unsupported protocol version {0:#04x}")]
    Version(u8),
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(u32),
    #[error("invalid JSON payload: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed message: {0}")]
    Malformed(String),
}

fn malformed(msg: impl Into<String>) -> WireError {
    WireError::Malformed(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    AuthHello { id: String, cmt: Vec<u8> },
    AuthRegister { usk: Vec<u8> },
    AuthChallenge { cha: Vec<u8> },
    AuthResponse { rsp: Vec<u8> },
    AuthResult { accepted: bool, reason: Option<String> },
    ModelBroadcast { round: usize, params: ParamVector },
    UpdateSubmit { round: usize, params: ParamVector },
    ForceDisconnect { reason: String },
    Bye,
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::AuthHello { .. } => "AUTH_HELLO",
            Message::AuthRegister { .. } => "AUTH_REGISTER",
            Message::AuthChallenge { .. } => "AUTH_CHALLENGE",
            Message::AuthResponse { .. } => "AUTH_RESPONSE",
            Message::AuthResult { .. } => "AUTH_RESULT",
            Message::ModelBroadcast { .. } => "MODEL_BROADCAST",
            Message::UpdateSubmit { .. } => "UPDATE_SUBMIT",
            Message::ForceDisconnect { .. } => "FORCE_DISCONNECT",
            Message::Bye => "BYE",
        }
    }

    pub fn to_json(&self) -> Value {
        let mut envelope = Map::new();
        envelope.insert("type".into(), self.kind().into());
        let body = match self {
            Message::AuthHello { id, cmt } => {
                envelope.insert("id".into(), id.as_str().into());
                json!({ "cmt": hex::encode(cmt) })
            }
            Message::AuthRegister { usk } => json!({ "usk": hex::encode(usk) }),
            Message::AuthChallenge { cha } => json!({ "cha": hex::encode(cha) }),
            Message::AuthResponse { rsp } => json!({ "rsp": hex::encode(rsp) }),
            Message::AuthResult { accepted, reason } => match reason {
                Some(r) => json!({ "accepted": accepted, "reason": r }),
                None => json!({ "accepted": accepted }),
            },
            Message::ModelBroadcast { round, params } | Message::UpdateSubmit { round, params } => {
                envelope.insert("round".into(), (*round).into());
                json!({
                    "round": round,
                    "len": params.len(),
                    "params": BASE64.encode(params.to_le_bytes()),
                })
            }
            Message::ForceDisconnect { reason } => json!({ "reason": reason }),
            Message::Bye => json!({}),
        };
        envelope.insert("body".into(), body);
        Value::Object(envelope)
    }

    pub fn from_json(value: &Value) -> Result<Self, WireError> {
        let obj = value.as_object().ok_or_else(|| malformed("frame is not a JSON object"))?;
        let kind = obj.get("type").and_then(Value::as_str).ok_or_else(|| malformed("missing type"))?;
        let empty = Map::new();
        let body = match obj.get("body") {
            None => &empty,
            Some(b) => b.as_object().ok_or_else(|| malformed("body is not an object"))?,
        };
        let str_field = |name: &str| -> Result<&str, WireError> {
            body.get(name)
                .and_then(Value::as_str)
                .ok_or_else(|| malformed(format!("{kind}: missing string field {name}")))
        };
        let hex_field = |name: &str| -> Result<Vec<u8>, WireError> {
            let s = str_field(name)?;
            if s.bytes().any(|b| b.is_ascii_uppercase()) {
                return Err(malformed(format!("{kind}: {name} must be lowercase hex")));
            }
            hex::decode(s).map_err(|e| malformed(format!("{kind}: {name}: {e}")))
        };
        let round = || -> Result<usize, WireError> {
            let r = body
                .get("round")
                .or_else(|| obj.get("round"))
                .and_then(Value::as_u64)
                .ok_or_else(|| malformed(format!("{kind}: missing round")))?;
            usize::try_from(r).map_err(|_| malformed("round out of range"))
        };
        let params = || -> Result<ParamVector, WireError> {
            let bytes = BASE64
                .decode(str_field("params")?)
                .map_err(|e| malformed(format!("{kind}: params: {e}")))?;
            let p = ParamVector::from_le_bytes(&bytes)
                .ok_or_else(|| malformed(format!("{kind}: params length not a multiple of 8")))?;
            if let Some(len) = body.get("len") {
                if len.as_u64() != Some(p.len() as u64) {
                    return Err(malformed(format!("{kind}: len {len} but {} values", p.len())));
                }
            }
            Ok(p)
        };
        Ok(match kind {
            "AUTH_HELLO" => {
                let id = obj
                    .get("id")
                    .or_else(|| body.get("id"))
                    .and_then(Value::as_str)
                    .ok_or_else(|| malformed("AUTH_HELLO: missing id"))?;
                Message::AuthHello { id: id.to_owned(), cmt: hex_field("cmt")? }
            }
            "AUTH_REGISTER" => Message::AuthRegister { usk: hex_field("usk")? },
            "AUTH_CHALLENGE" => Message::AuthChallenge { cha: hex_field("cha")? },
            "AUTH_RESPONSE" => Message::AuthResponse { rsp: hex_field("rsp")? },
            "AUTH_RESULT" => Message::AuthResult {
                accepted: body
                    .get("accepted")
                    .and_then(Value::as_bool)
                    .ok_or_else(|| malformed("AUTH_RESULT: missing accepted"))?,
                reason: body.get("reason").and_then(Value::as_str).map(str::to_owned),
            },
            "MODEL_BROADCAST" => Message::ModelBroadcast { round: round()?, params: params()? },
            "UPDATE_SUBMIT" => Message::UpdateSubmit { round: round()?, params: params()? },
            "FORCE_DISCONNECT" => Message::ForceDisconnect { reason: str_field("reason")?.to_owned() },
            "BYE" => Message::Bye,
            other => return Err(malformed(format!("unknown message type {other}"))),
        })
    }
}

pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let payload = serde_json::to_vec(&msg.to_json()).expect("JSON values serialize");
    let mut frame = Vec::with_capacity(5 + payload.len());
    frame.push(PROTOCOL_VERSION);
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(&payload);
    frame
}

fn parse_header(header: [u8; 5]) -> Result<usize, WireError> {
    if header[0] != PROTOCOL_VERSION {
        return Err(WireError::Version(header[0]));
    }
    let len = u32::from_be_bytes(header[1..].try_into().expect("4 bytes"));
    if len > MAX_FRAME_LEN {
        return Err(WireError::TooLarge(len));
    }
    Ok(len as usize)
}

fn parse_payload(payload: &[u8]) -> Result<Message, WireError> {
    Message::from_json(&serde_json::from_slice(payload)?)
}

/// Decodes exactly one frame; trailing bytes are an error.
pub fn decode_frame(bytes: &[u8]) -> Result<Message, WireError> {
    let header: [u8; 5] = bytes
        .get(..5)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| malformed("truncated frame header"))?;
    let len = parse_header(header)?;
    let payload = &bytes[5..];
    if payload.len() != len {
        return Err(malformed(format!("header says {len} bytes, frame has {}", payload.len())));
    }
    parse_payload(payload)
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> Result<(), WireError> {
    w.write_all(&encode_frame(msg))?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. A clean end of stream before the header is [`WireError::Closed`].
pub fn read_frame<R: Read>(r: &mut R) -> Result<Message, WireError> {
    let mut header = [0u8; 5];
    let mut filled = 0;
    while filled < header.len() {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Err(WireError::Closed),
            Ok(0) => return Err(malformed("truncated frame header")),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = parse_header(header)?;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    parse_payload(&payload)
}
