//! Wire records and their framing.

use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sender {
    A,
    B,
    Scorer,
}

impl Sender {
    pub fn as_str(self) -> &'static str {
        match self {
            Sender::A => "A",
            Sender::B => "B",
            Sender::Scorer => "scorer",
        }
    }
}

impl fmt::Display for Sender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sender {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Sender::A),
            "B" => Ok(Sender::B),
            "scorer" => Ok(Sender::Scorer),
            other => Err(Error::invalid(format!("unknown sender {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    /// m context-attentive graph vectors.
    Messages,
    /// One fused vector.
    Obfuscated,
    /// One graph-level vector.
    GraphRep,
    /// One vector per node.
    NodeReps,
    /// One real.
    Score,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Messages => "messages",
            Kind::Obfuscated => "obfuscated",
            Kind::GraphRep => "graph_rep",
            Kind::NodeReps => "node_reps",
            Kind::Score => "score",
        }
    }

    /// Whether the record carries a row count in `m`.
    pub fn has_rows(self) -> bool {
        matches!(self, Kind::Messages | Kind::NodeReps)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "messages" => Ok(Kind::Messages),
            "obfuscated" => Ok(Kind::Obfuscated),
            "graph_rep" => Ok(Kind::GraphRep),
            "node_reps" => Ok(Kind::NodeReps),
            "score" => Ok(Kind::Score),
            other => Err(Error::invalid(format!("unknown message kind {other:?}"))),
        }
    }
}

/// One boundary crossing. `payload` is row-major, `rows() × dim` reals.
#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub session_id: String,
    pub step: u64,
    pub sender: Sender,
    pub kind: Kind,
    /// Row count for `messages` and `node_reps`.
    pub m: Option<usize>,
    pub dim: usize,
    pub payload: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    session_id: String,
    step: u64,
    sender: String,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    m: Option<usize>,
    dim: usize,
    payload_b64: String,
}

impl WireMessage {
    pub fn rows(&self) -> usize {
        self.m.unwrap_or(1)
    }

    /// Row `i` of the payload.
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.payload[i * self.dim..(i + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::Protocol {
            step: self.step,
            msg,
        };
        if self.kind.has_rows() != self.m.is_some() {
            return Err(bad(format!("kind {} with m={:?}", self.kind, self.m)));
        }
        if self.kind == Kind::Score && self.dim != 1 {
            return Err(bad(format!("score with dim {}", self.dim)));
        }
        if self.dim == 0 || self.m == Some(0) {
            return Err(bad("empty payload shape".into()));
        }
        let expected = self.rows() * self.dim;
        if self.payload.len() != expected {
            return Err(bad(format!(
                "payload has {} reals, expected {expected} for kind {}",
                self.payload.len(),
                self.kind
            )));
        }
        Ok(())
    }

    /// The record as one line of JSON (no trailing newline).
    pub fn to_json(&self) -> String {
        let mut bytes = Vec::with_capacity(self.payload.len() * 8);
        for x in &self.payload {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        let rec = Record {
            session_id: self.session_id.clone(),
            step: self.step,
            sender: self.sender.as_str().into(),
            kind: self.kind.as_str().into(),
            m: self.m,
            dim: self.dim,
            payload_b64: B64.encode(bytes),
        };
        serde_json::to_string(&rec).expect("record serializes")
    }

    /// Parses and validates one JSON record. `offset` locates `text` in the
    /// surrounding stream for error messages.
    pub fn from_json(text: &str, offset: usize) -> Result<Self> {
        let rec: Record = serde_json::from_str(text).map_err(|e| Error::Wire {
            offset: offset + line_col_offset(text, e.line(), e.column()),
            msg: e.to_string(),
        })?;
        let wire = |msg: String| Error::Wire { offset, msg };
        let bytes = B64
            .decode(&rec.payload_b64)
            .map_err(|e| wire(format!("payload: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(wire(format!(
                "payload of {} bytes is not a whole number of reals",
                bytes.len()
            )));
        }
        let payload = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let msg = WireMessage {
            session_id: rec.session_id,
            step: rec.step,
            sender: rec.sender.parse().map_err(|e: Error| wire(e.to_string()))?,
            kind: rec.kind.parse().map_err(|e: Error| wire(e.to_string()))?,
            m: rec.m,
            dim: rec.dim,
            payload,
        };
        msg.validate().map_err(|e| wire(e.to_string()))?;
        Ok(msg)
    }
}

fn line_col_offset(text: &str, line: usize, col: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let before: usize = text.split('\n').take(line - 1).map(|l| l.len() + 1).sum();
    (before + col.saturating_sub(1)).min(text.len())
}

/// 4-byte little-endian length followed by the JSON record.
pub fn encode(msg: &WireMessage) -> Vec<u8> {
    let body = msg.to_json().into_bytes();
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

/// Decodes one frame from the start of `bytes`; returns the message and the
/// number of bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(WireMessage, usize)> {
    if bytes.len() < 4 {
        return Err(Error::Wire {
            offset: bytes.len(),
            msg: "truncated length prefix".into(),
        });
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    let end = 4 + len;
    if bytes.len() < end {
        return Err(Error::Wire {
            offset: bytes.len(),
            msg: format!(
                "frame declares {len} bytes, only {} present",
                bytes.len() - 4
            ),
        });
    }
    let text = std::str::from_utf8(&bytes[4..end]).map_err(|e| Error::Wire {
        offset: 4 + e.valid_up_to(),
        msg: "invalid UTF-8".into(),
    })?;
    Ok((WireMessage::from_json(text, 4)?, end))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WireMessage {
        WireMessage {
            session_id: "s1".into(),
            step: 0,
            sender: Sender::A,
            kind: Kind::Messages,
            m: Some(2),
            dim: 3,
            payload: vec![0.1, -2.0, f64::MIN_POSITIVE, 1e300, -0.0, 1.0 / 3.0],
        }
    }

    #[test]
    fn round_trip_bitwise() {
        let msg = sample();
        let bytes = encode(&msg);
        let (back, used) = decode(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back.session_id, msg.session_id);
        for (a, b) in back.payload.iter().zip(&msg.payload) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn truncated_frames_report_offset() {
        let bytes = encode(&sample());
        match decode(&bytes[..2]) {
            Err(Error::Wire { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("{other:?}"),
        }
        match decode(&bytes[..bytes.len() - 5]) {
            Err(Error::Wire { offset, .. }) => assert_eq!(offset, bytes.len() - 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inconsistent_payload_rejected() {
        let mut msg = sample();
        msg.m = Some(3);
        assert!(decode(&encode(&msg)).is_err());
        let mut msg = sample();
        msg.kind = Kind::Obfuscated;
        assert!(msg.validate().is_err());
    }

    #[test]
    fn corrupt_json_rejected() {
        let mut bytes = encode(&sample());
        bytes[10] = b'}';
        assert!(matches!(decode(&bytes), Err(Error::Wire { .. })));
    }
}
