//! Frame layout (all integers little-endian):
//!
//! ```text
//! 0..4    magic "MLKP"
//! 4       version (0x01)
//! 5       msg_type
//! 6..8    flags
//! 8..12   payload_len
//! 12..    payload
//! +0..4   CRC32 (IEEE, reflected) over bytes 4 .. end of payload
//! ```

use alloc::vec::Vec;

pub const MAGIC: [u8; 4] = *b"MLKP";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 12;
pub const TRAILER_LEN: usize = 4;
pub const MAX_PAYLOAD: usize = 1_048_576;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    HelloAck = 0x02,
    DatasetRequest = 0x03,
    DatasetBatch = 0x04,
    Recommendation = 0x05,
    RecommendationAck = 0x06,
    Feedback = 0x07,
    ControlCmd = 0x08,
    ControlAck = 0x09,
    StatsSnapshot = 0x0A,
}

impl MsgType {
    pub const ALL: [MsgType; 10] = [
        MsgType::Hello,
        MsgType::HelloAck,
        MsgType::DatasetRequest,
        MsgType::DatasetBatch,
        MsgType::Recommendation,
        MsgType::RecommendationAck,
        MsgType::Feedback,
        MsgType::ControlCmd,
        MsgType::ControlAck,
        MsgType::StatsSnapshot,
    ];

    pub fn from_u8(v: u8) -> Option<MsgType> {
        MsgType::ALL.into_iter().find(|t| *t as u8 == v)
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::Hello => "HELLO",
            MsgType::HelloAck => "HELLO_ACK",
            MsgType::DatasetRequest => "DATASET_REQUEST",
            MsgType::DatasetBatch => "DATASET_BATCH",
            MsgType::Recommendation => "RECOMMENDATION",
            MsgType::RecommendationAck => "RECOMMENDATION_ACK",
            MsgType::Feedback => "FEEDBACK",
            MsgType::ControlCmd => "CONTROL_CMD",
            MsgType::ControlAck => "CONTROL_ACK",
            MsgType::StatsSnapshot => "STATS_SNAPSHOT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0:#04x}")]
    BadVersion(u8),
    #[error("CRC mismatch")]
    CrcMismatch,
    #[error("truncated frame: need {needed} more bytes")]
    Truncated { needed: usize },
    #[error("unknown message type {0:#04x}")]
    UnknownMessage(u8),
    #[error("payload of {0} bytes exceeds the frame limit")]
    PayloadTooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub flags: u16,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, payload: Vec<u8>) -> Self {
        Frame { msg_type, flags: 0, payload }
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        encode_frame(self.msg_type, self.flags, &self.payload)
    }
}

pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

pub fn encode_frame(msg_type: MsgType, flags: u16, payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(FrameError::PayloadTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + TRAILER_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg_type as u8);
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    let crc = crc32(&out[4..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Decode one frame from the front of `buf`. Returns the frame and the
/// number of bytes it occupied.
pub fn decode_frame(buf: &[u8]) -> Result<(Frame, usize), FrameError> {
    let magic_seen = buf.len().min(4);
    if buf[..magic_seen] != MAGIC[..magic_seen] {
        return Err(FrameError::BadMagic);
    }
    if buf.len() > 4 && buf[4] != VERSION {
        return Err(FrameError::BadVersion(buf[4]));
    }
    if buf.len() < HEADER_LEN {
        return Err(FrameError::Truncated { needed: HEADER_LEN + TRAILER_LEN - buf.len() });
    }
    let len = u32::from_le_bytes([buf[8], buf[9], buf[10], buf[11]]) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::PayloadTooLarge(len));
    }
    let total = HEADER_LEN + len + TRAILER_LEN;
    if buf.len() < total {
        return Err(FrameError::Truncated { needed: total - buf.len() });
    }
    let body_end = HEADER_LEN + len;
    let want = u32::from_le_bytes([buf[body_end], buf[body_end + 1], buf[body_end + 2], buf[body_end + 3]]);
    if crc32(&buf[4..body_end]) != want {
        return Err(FrameError::CrcMismatch);
    }
    let msg_type = MsgType::from_u8(buf[5]).ok_or(FrameError::UnknownMessage(buf[5]))?;
    let flags = u16::from_le_bytes([buf[6], buf[7]]);
    Ok((Frame { msg_type, flags, payload: buf[HEADER_LEN..body_end].to_vec() }, total))
}

/// Reassembles frames from a byte stream delivered in arbitrary chunks.
#[derive(Debug, Default, Clone)]
pub struct StreamDecoder {
    buf: Vec<u8>,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete frame, `Ok(None)` when more bytes are needed. Any other
    /// error leaves the stream unusable.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, FrameError> {
        if self.buf.is_empty() {
            return Ok(None);
        }
        match decode_frame(&self.buf) {
            Ok((frame, used)) => {
                self.buf.drain(..used);
                Ok(Some(frame))
            }
            Err(FrameError::Truncated { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}
