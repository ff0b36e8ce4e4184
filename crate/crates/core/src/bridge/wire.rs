//! Binary framing: `PBL1` | u32 LE payload length | u8 type | payload.
//!
//! All integers and floats are little-endian. Strings are a u32 byte length
//! followed by UTF-8. A pose is seven f64: tx ty tz qw qx qy qz.

use std::io::{self, Read};

use serde::{Deserialize, Serialize};

use crate::frames::{RigidTransform, Timestamp};

pub const WIRE_MAGIC: &[u8; 4] = b"PBL1";
/// Bytes before the payload: magic, length, type.
pub const HEADER_LEN: usize = 9;
/// Frames declaring a larger payload are rejected before allocation.
pub const MAX_PAYLOAD: usize = 64 << 20;

pub const TAG_TRANSFORM_UPDATE: u8 = 1;
pub const TAG_AGENT_STATE: u8 = 2;
pub const TAG_TRIGGER_FIRED: u8 = 3;
pub const TAG_MAP_CHUNK: u8 = 4;
pub const TAG_HEARTBEAT: u8 = 5;
pub const TAG_SUBSCRIBE: u8 = 6;
pub const TAG_ACK: u8 = 7;

/// JSON form (tagged by `type`) exists for tooling and the C API; the wire
/// itself is always the binary layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WireMessage {
    TransformUpdate { parent: String, child: String, stamp: Timestamp, transform: RigidTransform },
    AgentState { agent_id: String, stamp: Timestamp, pose: RigidTransform, visible: bool },
    TriggerFired { trigger_id: String, stamp: Timestamp, pose: RigidTransform },
    MapChunk { offset: u64, points: Vec<[f64; 3]> },
    Heartbeat { stamp: Timestamp, publish_rate_hz: f64 },
    Subscribe { request_id: u32, topics: Vec<String> },
    Ack { request_id: u32 },
}

impl WireMessage {
    pub fn tag(&self) -> u8 {
        match self {
            WireMessage::TransformUpdate { .. } => TAG_TRANSFORM_UPDATE,
            WireMessage::AgentState { .. } => TAG_AGENT_STATE,
            WireMessage::TriggerFired { .. } => TAG_TRIGGER_FIRED,
            WireMessage::MapChunk { .. } => TAG_MAP_CHUNK,
            WireMessage::Heartbeat { .. } => TAG_HEARTBEAT,
            WireMessage::Subscribe { .. } => TAG_SUBSCRIBE,
            WireMessage::Ack { .. } => TAG_ACK,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("frame error: {0}")]
    Frame(String),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("malformed payload: {0}")]
    Payload(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn frame_err(msg: impl Into<String>) -> WireError {
    WireError::Frame(msg.into())
}

fn payload_err(msg: impl Into<String>) -> WireError {
    WireError::Payload(msg.into())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn pose(&mut self, t: &RigidTransform) {
        for v in t.translation_array() {
            self.f64(v);
        }
        for v in t.quaternion_wxyz() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() - self.pos < n {
            return Err(payload_err(format!("truncated at payload byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, WireError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| payload_err("string is not UTF-8"))
    }
    fn bool(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(payload_err(format!("flag byte must be 0 or 1, got {v}"))),
        }
    }
    fn pose(&mut self) -> Result<RigidTransform, WireError> {
        let t = [self.f64()?, self.f64()?, self.f64()?];
        let q = [self.f64()?, self.f64()?, self.f64()?, self.f64()?];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm - 1.0).abs().le(&1e-6) {
            return Err(payload_err(format!("quaternion norm {norm} is not 1")));
        }
        Ok(RigidTransform::from_wxyz_exact(q, t))
    }
    fn finish(&self) -> Result<(), WireError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(payload_err(format!("{} trailing payload bytes", self.buf.len() - self.pos)))
        }
    }
}

/// Serializes the payload only (no frame header).
pub fn encode_payload(msg: &WireMessage) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    match msg {
        WireMessage::TransformUpdate { parent, child, stamp, transform } => {
            w.str(parent);
            w.str(child);
            w.u64(stamp.0);
            w.pose(transform);
        }
        WireMessage::AgentState { agent_id, stamp, pose, visible } => {
            w.str(agent_id);
            w.u64(stamp.0);
            w.pose(pose);
            w.u8(*visible as u8);
        }
        WireMessage::TriggerFired { trigger_id, stamp, pose } => {
            w.str(trigger_id);
            w.u64(stamp.0);
            w.pose(pose);
        }
        WireMessage::MapChunk { offset, points } => {
            w.u64(*offset);
            w.u32(points.len() as u32);
            for p in points {
                for v in p {
                    w.f64(*v);
                }
            }
        }
        WireMessage::Heartbeat { stamp, publish_rate_hz } => {
            w.u64(stamp.0);
            w.f64(*publish_rate_hz);
        }
        WireMessage::Subscribe { request_id, topics } => {
            w.u32(*request_id);
            w.u32(topics.len() as u32);
            for t in topics {
                w.str(t);
            }
        }
        WireMessage::Ack { request_id } => w.u32(*request_id),
    }
    w.0
}

/// Full frame: header plus payload.
pub fn encode(msg: &WireMessage) -> Vec<u8> {
    let payload = encode_payload(msg);
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(WIRE_MAGIC);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.push(msg.tag());
    out.extend_from_slice(&payload);
    out
}

pub fn decode_payload(tag: u8, payload: &[u8]) -> Result<WireMessage, WireError> {
    let mut r = Reader { buf: payload, pos: 0 };
    let msg = match tag {
        TAG_TRANSFORM_UPDATE => WireMessage::TransformUpdate {
            parent: r.str()?,
            child: r.str()?,
            stamp: Timestamp(r.u64()?),
            transform: r.pose()?,
        },
        TAG_AGENT_STATE => WireMessage::AgentState {
            agent_id: r.str()?,
            stamp: Timestamp(r.u64()?),
            pose: r.pose()?,
            visible: r.bool()?,
        },
        TAG_TRIGGER_FIRED => WireMessage::TriggerFired { trigger_id: r.str()?, stamp: Timestamp(r.u64()?), pose: r.pose()? },
        TAG_MAP_CHUNK => {
            let offset = r.u64()?;
            let count = r.u32()? as usize;
            if count.checked_mul(24) != Some(payload.len() - r.pos) {
                return Err(payload_err(format!("map chunk declares {count} points but carries {} bytes", payload.len() - r.pos)));
            }
            let mut points = Vec::with_capacity(count);
            for _ in 0..count {
                points.push([r.f64()?, r.f64()?, r.f64()?]);
            }
            WireMessage::MapChunk { offset, points }
        }
        TAG_HEARTBEAT => WireMessage::Heartbeat { stamp: Timestamp(r.u64()?), publish_rate_hz: r.f64()? },
        TAG_SUBSCRIBE => {
            let request_id = r.u32()?;
            let n = r.u32()? as usize;
            let mut topics = Vec::with_capacity(n.min(64));
            for _ in 0..n {
                topics.push(r.str()?);
            }
            WireMessage::Subscribe { request_id, topics }
        }
        TAG_ACK => WireMessage::Ack { request_id: r.u32()? },
        other => return Err(WireError::UnknownType(other)),
    };
    r.finish()?;
    Ok(msg)
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<WireMessage, WireError> {
    let (msg, used) = decode_prefix(bytes)?.ok_or_else(|| frame_err("incomplete frame"))?;
    if used != bytes.len() {
        return Err(frame_err(format!("length mismatch: frame is {used} bytes, buffer has {}", bytes.len())));
    }
    Ok(msg)
}

/// Decodes the first frame in `bytes`, returning it with its size, or `None`
/// if more bytes are needed.
pub fn decode_prefix(bytes: &[u8]) -> Result<Option<(WireMessage, usize)>, WireError> {
    if bytes.len() >= 4 && &bytes[..4] != WIRE_MAGIC {
        return Err(frame_err(format!("bad magic {:02x?}", &bytes[..4])));
    }
    if bytes.len() < HEADER_LEN {
        return Ok(None);
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(frame_err(format!("payload length {len} exceeds limit")));
    }
    if bytes.len() < HEADER_LEN + len {
        return Ok(None);
    }
    let msg = decode_payload(bytes[8], &bytes[HEADER_LEN..HEADER_LEN + len])?;
    Ok(Some((msg, HEADER_LEN + len)))
}

/// Reads one frame from a stream. Returns `Ok(None)` on a clean end of stream
/// at a frame boundary.
pub fn read_frame(r: &mut impl Read) -> Result<Option<WireMessage>, WireError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(frame_err("stream ended inside a frame header")),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    if &header[..4] != WIRE_MAGIC {
        return Err(frame_err(format!("bad magic {:02x?}", &header[..4])));
    }
    let len = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(frame_err(format!("payload length {len} exceeds limit")));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            frame_err("length mismatch: stream ended inside a payload")
        } else {
            e.into()
        }
    })?;
    decode_payload(header[8], &payload).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heartbeat_golden() {
        let bytes = encode(&WireMessage::Heartbeat { stamp: Timestamp(0), publish_rate_hz: 10.0 });
        let mut expected = b"PBL1".to_vec();
        expected.extend([16, 0, 0, 0, 5]);
        expected.extend([0; 8]);
        expected.extend([0, 0, 0, 0, 0, 0, 0x24, 0x40]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn bad_magic_and_length() {
        let mut bytes = encode(&WireMessage::Ack { request_id: 7 });
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(WireError::Frame(_))));
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(WireError::Frame(_))));
        bytes.pop();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&bytes), Err(WireError::Frame(_))));
    }

    #[test]
    fn unknown_type() {
        let mut bytes = encode(&WireMessage::Ack { request_id: 7 });
        bytes[8] = 42;
        assert!(matches!(decode(&bytes), Err(WireError::UnknownType(42))));
    }

    #[test]
    fn stream_reads_consecutive_frames() {
        let a = WireMessage::Ack { request_id: 1 };
        let b = WireMessage::Subscribe { request_id: 2, topics: vec!["tf".into(), "triggers".into()] };
        let mut buf = encode(&a);
        buf.extend(encode(&b));
        let mut cur = io::Cursor::new(buf);
        assert_eq!(read_frame(&mut cur).unwrap(), Some(a));
        assert_eq!(read_frame(&mut cur).unwrap(), Some(b));
        assert_eq!(read_frame(&mut cur).unwrap(), None);
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        let msg = WireMessage::TriggerFired { trigger_id: "t".into(), stamp: Timestamp(1), pose: RigidTransform::identity() };
        let mut bytes = encode(&msg);
        let qw = HEADER_LEN + 4 + 1 + 8 + 24;
        bytes[qw..qw + 8].copy_from_slice(&2.0f64.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(WireError::Payload(_))));
    }
}
