//! Session handshake, sans IO. The agent opens with HELLO carrying its
//! schema id; the proxy answers HELLO_ACK, flagged as refused on mismatch.

use super::frame::{Frame, MsgType};
use super::messages::{Hello, HelloAck, FLAG_REFUSED};

pub const PROXY_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("protocol violation: {0}")]
    ProtocolViolation(&'static str),
    #[error("schema {offered} rejected, proxy expects {expected}")]
    SchemaRejected { offered: u16, expected: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    AwaitingHello,
    Established { schema_id: u16, agent_version: u16 },
    Closed,
}

/// Proxy side of the handshake.
#[derive(Debug, Clone)]
pub struct Handshake {
    schema_id: u16,
    state: SessionState,
}

impl Handshake {
    pub fn new(schema_id: u16) -> Self {
        Handshake { schema_id, state: SessionState::AwaitingHello }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn is_established(&self) -> bool {
        matches!(self.state, SessionState::Established { .. })
    }

    /// Consume the first frame of a session. On success returns the
    /// HELLO_ACK to send. On `SchemaRejected`, send [`Self::refusal`] and
    /// close.
    pub fn accept(&mut self, frame: &Frame) -> Result<Frame, SessionError> {
        if self.state != SessionState::AwaitingHello {
            return Err(SessionError::ProtocolViolation("handshake already done"));
        }
        if frame.msg_type != MsgType::Hello {
            self.state = SessionState::Closed;
            return Err(SessionError::ProtocolViolation("first message must be HELLO"));
        }
        let hello = Hello::decode(&frame.payload).map_err(|_| {
            self.state = SessionState::Closed;
            SessionError::ProtocolViolation("malformed HELLO")
        })?;
        if hello.schema_id != self.schema_id {
            self.state = SessionState::Closed;
            return Err(SessionError::SchemaRejected { offered: hello.schema_id, expected: self.schema_id });
        }
        self.state =
            SessionState::Established { schema_id: hello.schema_id, agent_version: hello.agent_version };
        Ok(Frame::new(
            MsgType::HelloAck,
            HelloAck { proxy_version: PROXY_VERSION, schema_id: self.schema_id }.encode(),
        ))
    }

    pub fn refusal(&self) -> Frame {
        Frame {
            msg_type: MsgType::HelloAck,
            flags: FLAG_REFUSED,
            payload: HelloAck { proxy_version: PROXY_VERSION, schema_id: self.schema_id }.encode(),
        }
    }

    pub fn close(&mut self) {
        self.state = SessionState::Closed;
    }
}

/// Agent side: the opening frame.
pub fn hello(schema_id: u16, agent_version: u16) -> Frame {
    Frame::new(MsgType::Hello, Hello { schema_id, agent_version }.encode())
}

/// Agent side: validate the proxy's reply.
pub fn check_ack(frame: &Frame, schema_id: u16) -> Result<HelloAck, SessionError> {
    if frame.msg_type != MsgType::HelloAck {
        return Err(SessionError::ProtocolViolation("expected HELLO_ACK"));
    }
    let ack = HelloAck::decode(&frame.payload)
        .map_err(|_| SessionError::ProtocolViolation("malformed HELLO_ACK"))?;
    if frame.flags & FLAG_REFUSED != 0 || ack.schema_id != schema_id {
        return Err(SessionError::SchemaRejected { offered: schema_id, expected: ack.schema_id });
    }
    Ok(ack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn matching_schema_establishes() {
        let mut hs = Handshake::new(7);
        let ack = hs.accept(&hello(7, 1)).unwrap();
        assert!(hs.is_established());
        assert_eq!(check_ack(&ack, 7).unwrap().schema_id, 7);
    }

    #[test]
    fn mismatched_schema_is_rejected() {
        let mut hs = Handshake::new(7);
        assert_eq!(hs.accept(&hello(9, 1)), Err(SessionError::SchemaRejected { offered: 9, expected: 7 }));
        assert!(check_ack(&hs.refusal(), 9).is_err());
        assert_eq!(hs.state(), SessionState::Closed);
    }

    #[test]
    fn request_before_hello_is_a_violation() {
        let mut hs = Handshake::new(7);
        let f = Frame::new(MsgType::DatasetRequest, 10u32.to_le_bytes().to_vec());
        assert!(matches!(hs.accept(&f), Err(SessionError::ProtocolViolation(_))));
        let f = Frame::new(MsgType::Hello, Vec::new());
        let mut hs = Handshake::new(7);
        assert!(matches!(hs.accept(&f), Err(SessionError::ProtocolViolation(_))));
    }
}
