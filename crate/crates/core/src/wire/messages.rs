//! Payload codecs for the control messages. DATASET_BATCH lives in
//! `dataset`, RECOMMENDATION in `policy`, FEEDBACK in `efficiency`.

use alloc::vec::Vec;

use super::{Reader, ShortRead};
use crate::fxp::Fx32;
use crate::proxy::{Lifecycle, Mode, StatsSnapshot};

/// HELLO_ACK flag: schema refused, session will close.
pub const FLAG_REFUSED: u16 = 0x0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("malformed {0} payload")]
pub struct PayloadError(pub &'static str);

fn exact<T>(
    what: &'static str,
    b: &[u8],
    f: impl FnOnce(&mut Reader<'_>) -> Result<T, ShortRead>,
) -> Result<T, PayloadError> {
    let mut r = Reader::new(b);
    let v = f(&mut r).map_err(|_| PayloadError(what))?;
    if !r.is_empty() {
        return Err(PayloadError(what));
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hello {
    pub schema_id: u16,
    pub agent_version: u16,
}

impl Hello {
    pub fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(4);
        v.extend_from_slice(&self.schema_id.to_le_bytes());
        v.extend_from_slice(&self.agent_version.to_le_bytes());
        v
    }

    pub fn decode(b: &[u8]) -> Result<Self, PayloadError> {
        exact("HELLO", b, |r| Ok(Hello { schema_id: r.u16()?, agent_version: r.u16()? }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HelloAck {
    pub proxy_version: u16,
    pub schema_id: u16,
}

impl HelloAck {
    pub fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(4);
        v.extend_from_slice(&self.proxy_version.to_le_bytes());
        v.extend_from_slice(&self.schema_id.to_le_bytes());
        v
    }

    pub fn decode(b: &[u8]) -> Result<Self, PayloadError> {
        exact("HELLO_ACK", b, |r| Ok(HelloAck { proxy_version: r.u16()?, schema_id: r.u16()? }))
    }
}

pub fn encode_dataset_request(max_records: u32) -> Vec<u8> {
    max_records.to_le_bytes().to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControlOp {
    Start = 1,
    Stop = 2,
    Reinit = 3,
    Publish = 4,
}

impl ControlOp {
    pub fn from_u8(v: u8) -> Option<ControlOp> {
        match v {
            1 => Some(ControlOp::Start),
            2 => Some(ControlOp::Stop),
            3 => Some(ControlOp::Reinit),
            4 => Some(ControlOp::Publish),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlStatus {
    Ok = 0,
    IllegalTransition = 1,
    UnknownOp = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlAck {
    pub op: u8,
    pub status: ControlStatus,
}

impl ControlAck {
    pub fn encode(&self) -> Vec<u8> {
        alloc::vec![self.op, self.status as u8]
    }

    pub fn decode(b: &[u8]) -> Result<Self, PayloadError> {
        exact("CONTROL_ACK", b, |r| Ok((r.u8()?, r.u8()?))).and_then(|(op, st)| {
            let status = match st {
                0 => ControlStatus::Ok,
                1 => ControlStatus::IllegalTransition,
                2 => ControlStatus::UnknownOp,
                _ => return Err(PayloadError("CONTROL_ACK")),
            };
            Ok(ControlAck { op, status })
        })
    }
}

pub const STATS_SNAPSHOT_LEN: usize = 31;

impl StatsSnapshot {
    /// state, mode, decisions, ml, baseline (8 B each), ratio flag, ratio raw.
    pub fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(STATS_SNAPSHOT_LEN);
        v.push(self.state.code());
        v.push(self.mode.code());
        v.extend_from_slice(&self.decision_counter.to_le_bytes());
        v.extend_from_slice(&self.ml_decisions.to_le_bytes());
        v.extend_from_slice(&self.baseline_decisions.to_le_bytes());
        v.push(self.efficiency_ratio.is_some() as u8);
        v.extend_from_slice(&self.efficiency_ratio.unwrap_or(Fx32::ZERO).to_le_bytes());
        v
    }

    pub fn decode(b: &[u8]) -> Result<Self, PayloadError> {
        let bad = PayloadError("STATS_SNAPSHOT");
        let (state, mode, dc, ml, bl, has, ratio) = exact("STATS_SNAPSHOT", b, |r| {
            Ok((r.u8()?, r.u8()?, r.u64()?, r.u64()?, r.u64()?, r.u8()?, r.fx()?))
        })?;
        Ok(StatsSnapshot {
            state: *Lifecycle::ALL.get(state as usize).ok_or(bad)?,
            mode: Mode::from_code(mode).ok_or(bad)?,
            decision_counter: dc,
            ml_decisions: ml,
            baseline_decisions: bl,
            efficiency_ratio: (has == 1).then_some(ratio),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_roundtrip() {
        let h = Hello { schema_id: 7, agent_version: 3 };
        assert_eq!(h.encode(), [7, 0, 3, 0]);
        assert_eq!(Hello::decode(&h.encode()), Ok(h));
        assert!(Hello::decode(&[7, 0, 3]).is_err());
        assert!(Hello::decode(&[7, 0, 3, 0, 0]).is_err());
    }

    #[test]
    fn snapshot_roundtrip() {
        let s = StatsSnapshot {
            state: Lifecycle::Stopped,
            mode: Mode::Collaboration,
            decision_counter: 10,
            ml_decisions: 5,
            baseline_decisions: 5,
            efficiency_ratio: Some(Fx32::from_raw(70000)),
        };
        let b = s.encode();
        assert_eq!(b.len(), STATS_SNAPSHOT_LEN);
        assert_eq!(StatsSnapshot::decode(&b), Ok(s));
    }

    #[test]
    fn control_ack_roundtrip() {
        let a = ControlAck { op: ControlOp::Start as u8, status: ControlStatus::IllegalTransition };
        assert_eq!(ControlAck::decode(&a.encode()), Ok(a));
        assert_eq!(ControlOp::from_u8(9), None);
    }
}
