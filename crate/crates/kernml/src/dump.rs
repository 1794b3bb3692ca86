//! `protocol dump`: decode a frame file (concatenated frames, as written by
//! a capture or an agent's training store) into one line per frame.

use std::io::{self, Write};
use std::path::Path;

use kernml_core::dataset::DatasetBatch;
use kernml_core::efficiency::FeedbackRecord;
use kernml_core::policy::{RecAck, RecBody, Recommendation};
use kernml_core::proxy::StatsSnapshot;
use kernml_core::wire::frame::{decode_frame, FrameError};
use kernml_core::wire::messages::{ControlAck, Hello, HelloAck};
use kernml_core::wire::{Frame, MsgType};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DumpSummary {
    pub frames: u64,
    pub bad_payloads: u64,
    /// Offset and cause of the first undecodable byte, if any.
    pub stopped_at: Option<(usize, FrameError)>,
}

fn describe(f: &Frame) -> Option<String> {
    let p = &f.payload;
    Some(match f.msg_type {
        MsgType::Hello => {
            let h = Hello::decode(p).ok()?;
            format!("schema {} agent_version {}", h.schema_id, h.agent_version)
        }
        MsgType::HelloAck => {
            let a = HelloAck::decode(p).ok()?;
            format!("schema {} proxy_version {} flags {:#06x}", a.schema_id, a.proxy_version, f.flags)
        }
        MsgType::DatasetRequest => {
            let max: [u8; 4] = p.as_slice().try_into().ok()?;
            format!("max_records {}", u32::from_le_bytes(max))
        }
        MsgType::DatasetBatch => {
            let b = DatasetBatch::decode(p).ok()?;
            let span = match (b.records.first(), b.records.last()) {
                (Some(a), Some(z)) => format!(" t {}..{}", a.timestamp, z.timestamp),
                _ => String::new(),
            };
            format!("schema {} records {}{span}", b.schema_id, b.records.len())
        }
        MsgType::Recommendation => {
            let r = Recommendation::decode(p).ok()?;
            match r.body {
                RecBody::Config(c) => {
                    let kv: Vec<String> = c.entries.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    format!("rec {} config {}", r.rec_id, kv.join(" "))
                }
                RecBody::Logic(t) => format!(
                    "rec {} logic nodes {} features {} default {}",
                    r.rec_id,
                    t.nodes.len(),
                    t.feature_count,
                    t.default_action
                ),
            }
        }
        MsgType::RecommendationAck => {
            let a = RecAck::decode(p).ok()?;
            format!("rec {} {:?} codes {:?}", a.rec_id, a.status, a.codes)
        }
        MsgType::Feedback => {
            let fb = FeedbackRecord::decode(p)?;
            format!(
                "decision {} rec {} {} reward {} mode {}",
                fb.decision_id,
                fb.rec_id,
                if fb.applied { "ml" } else { "baseline" },
                fb.reward,
                fb.mode
            )
        }
        MsgType::ControlCmd => match p.as_slice() {
            [op] => format!("op {op}"),
            _ => return None,
        },
        MsgType::ControlAck => {
            let a = ControlAck::decode(p).ok()?;
            format!("op {} {:?}", a.op, a.status)
        }
        MsgType::StatsSnapshot => {
            let s = StatsSnapshot::decode(p).ok()?;
            let ratio = s.efficiency_ratio.map(|r| r.to_string()).unwrap_or_else(|| "unavailable".into());
            format!(
                "state {} mode {} decisions {} ml {} baseline {} ratio {ratio}",
                s.state, s.mode, s.decision_counter, s.ml_decisions, s.baseline_decisions
            )
        }
    })
}

/// Decode `bytes` frame by frame. Stops at the first framing error.
pub fn dump_bytes(bytes: &[u8], out: &mut impl Write) -> io::Result<DumpSummary> {
    let mut s = DumpSummary::default();
    let mut off = 0;
    while off < bytes.len() {
        match decode_frame(&bytes[off..]) {
            Ok((f, used)) => {
                let detail = describe(&f).unwrap_or_else(|| {
                    s.bad_payloads += 1;
                    format!("malformed payload ({} bytes)", f.payload.len())
                });
                writeln!(out, "{off:>8} {:<18} len {:<6} {detail}", f.msg_type.name(), f.payload.len())?;
                s.frames += 1;
                off += used;
            }
            Err(e) => {
                writeln!(out, "{off:>8} error: {e}")?;
                s.stopped_at = Some((off, e));
                break;
            }
        }
    }
    writeln!(out, "{} frames, {} malformed payloads", s.frames, s.bad_payloads)?;
    Ok(s)
}

pub fn dump_file(path: &Path, out: &mut impl Write) -> Result<DumpSummary> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    dump_bytes(&bytes, out).map_err(|e| HarnessError::io("stdout", e))
}
