//! Kernel/user boundary emulation: framed data plane, message payloads,
//! handshake, and the sysfs-like attribute tree.

pub mod attrs;
pub mod frame;
pub mod messages;
pub mod session;

pub use attrs::{AttrEffect, AttrError, AttributeTree};
pub use frame::{decode_frame, encode_frame, Frame, FrameError, MsgType, StreamDecoder};
pub use session::{Handshake, SessionError};

use crate::fxp::Fx32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShortRead;

/// Little-endian cursor over a payload.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], ShortRead> {
        if self.buf.len() < n {
            return Err(ShortRead);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ShortRead> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    pub fn u8(&mut self) -> Result<u8, ShortRead> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16, ShortRead> {
        self.array().map(u16::from_le_bytes)
    }

    pub fn u32(&mut self) -> Result<u32, ShortRead> {
        self.array().map(u32::from_le_bytes)
    }

    pub fn u64(&mut self) -> Result<u64, ShortRead> {
        self.array().map(u64::from_le_bytes)
    }

    pub fn fx(&mut self) -> Result<Fx32, ShortRead> {
        self.array().map(Fx32::from_le_bytes)
    }

    pub fn remaining(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}
