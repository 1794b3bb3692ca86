//! Built-in user-space agents. They speak the same wire protocol as an
//! external agent, so the loop runs end to end without one.

use std::time::Duration;

use kernml_core::dataset::DatasetBatch;
use kernml_core::efficiency::FeedbackRecord;
use kernml_core::gc_sim::{utilization_tree, FEATURE_SCHEMA_ID};
use kernml_core::policy::{AckStatus, RecAck, RecBody, Recommendation, TreeProgram};
use kernml_core::proxy::StatsSnapshot;
use kernml_core::wire::messages::ControlAck;
use kernml_core::wire::session::{check_ack, hello};
use kernml_core::wire::{Frame, MsgType};

use crate::transport::{self, Endpoint, FrameLink, Inbound};

pub const AGENT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("agent protocol violation: {0}")]
pub struct AgentError(pub String);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentCounters {
    pub feedback: u64,
    pub feedback_applied: u64,
    pub batches: u64,
    pub records: u64,
    pub recs_sent: u64,
    pub acks_installed: u64,
    pub acks_refused: u64,
    pub control_acks: u64,
    pub last_snapshot: Option<StatsSnapshot>,
}

/// Agent that installs one fixed decision program and keeps it fresh.
#[derive(Debug, Clone)]
pub struct TreeAgent {
    name: &'static str,
    tree: TreeProgram,
    /// Re-send after this many feedback frames; 0 sends only once.
    refresh: u64,
    next_rec_id: u64,
    since_send: u64,
    established: bool,
    finished: bool,
    counters: AgentCounters,
}

impl TreeAgent {
    fn new(name: &'static str, tree: TreeProgram, refresh: u64) -> Self {
        TreeAgent {
            name,
            tree,
            refresh,
            next_rec_id: 1,
            since_send: 0,
            established: false,
            finished: false,
            counters: AgentCounters::default(),
        }
    }

    /// Scores candidates by `1 - u`: the greedy heuristic as a program.
    pub fn reference(blocks_per_segment: u32, refresh: u64) -> Self {
        Self::new("reference", utilization_tree(blocks_per_segment, true), refresh)
    }

    /// Scores candidates by `u`: always the fullest segment.
    pub fn adversarial(blocks_per_segment: u32, refresh: u64) -> Self {
        Self::new("adversarial", utilization_tree(blocks_per_segment, false), refresh)
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn program(&self) -> &TreeProgram {
        &self.tree
    }

    pub fn counters(&self) -> &AgentCounters {
        &self.counters
    }

    pub fn is_established(&self) -> bool {
        self.established
    }

    /// The proxy sent its final snapshot; the session is over.
    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn hello(&self) -> Frame {
        hello(FEATURE_SCHEMA_ID, AGENT_VERSION)
    }

    fn recommendation(&mut self) -> Frame {
        let rec = Recommendation { rec_id: self.next_rec_id, body: RecBody::Logic(self.tree.clone()) };
        self.next_rec_id += 1;
        self.since_send = 0;
        self.counters.recs_sent += 1;
        Frame::new(MsgType::Recommendation, rec.encode())
    }

    /// Handle one frame from the proxy, returning the replies.
    pub fn on_frame(&mut self, frame: &Frame) -> Result<Vec<Frame>, AgentError> {
        let bad = |what: &str| AgentError(format!("malformed {what}"));
        if !self.established {
            check_ack(frame, FEATURE_SCHEMA_ID).map_err(|e| AgentError(e.to_string()))?;
            self.established = true;
            log::debug!("{} agent: session established", self.name);
            return Ok(vec![self.recommendation()]);
        }
        match frame.msg_type {
            MsgType::Feedback => {
                let fb = FeedbackRecord::decode(&frame.payload).ok_or_else(|| bad("FEEDBACK"))?;
                self.counters.feedback += 1;
                self.counters.feedback_applied += fb.applied as u64;
                self.since_send += 1;
                if self.refresh > 0 && self.since_send >= self.refresh {
                    return Ok(vec![self.recommendation()]);
                }
            }
            MsgType::DatasetBatch => {
                let batch = DatasetBatch::decode(&frame.payload).map_err(|_| bad("DATASET_BATCH"))?;
                self.counters.batches += 1;
                self.counters.records += batch.records.len() as u64;
            }
            MsgType::RecommendationAck => {
                let ack = RecAck::decode(&frame.payload).map_err(|_| bad("RECOMMENDATION_ACK"))?;
                if ack.status == AckStatus::Installed {
                    self.counters.acks_installed += 1;
                } else {
                    self.counters.acks_refused += 1;
                    log::warn!(
                        "{} agent: rec {} refused: {:?} {:?}",
                        self.name,
                        ack.rec_id,
                        ack.status,
                        ack.codes
                    );
                }
            }
            MsgType::ControlAck => {
                ControlAck::decode(&frame.payload).map_err(|_| bad("CONTROL_ACK"))?;
                self.counters.control_acks += 1;
            }
            MsgType::StatsSnapshot => {
                let snap = StatsSnapshot::decode(&frame.payload).map_err(|_| bad("STATS_SNAPSHOT"))?;
                self.counters.last_snapshot = Some(snap);
                self.finished = true;
            }
            other => return Err(AgentError(format!("unexpected {} from proxy", other.name()))),
        }
        Ok(Vec::new())
    }
}

/// Run `agent` as a stream client against `endpoint` until the proxy closes
/// the session. Returns the agent with its final counters.
pub fn run_client(
    mut agent: TreeAgent,
    endpoint: &Endpoint,
    timeout: Duration,
) -> std::io::Result<TreeAgent> {
    let conn = transport::connect(endpoint, timeout)?;
    let mut link = FrameLink::new(conn, 1024)?;
    link.send(&agent.hello())?;
    loop {
        match link.recv_timeout(Duration::from_secs(30)) {
            Some(Inbound::Frame(f)) => match agent.on_frame(&f) {
                Ok(replies) => {
                    for r in replies {
                        if link.send(&r).is_err() {
                            break;
                        }
                    }
                }
                Err(e) => {
                    log::warn!("{}", e);
                    break;
                }
            },
            Some(Inbound::Corrupt(e)) => {
                log::warn!("{} agent: corrupt stream: {e}", agent.name);
                break;
            }
            Some(Inbound::Closed) | None => break,
        }
        if agent.is_finished() {
            break;
        }
    }
    link.close(Duration::from_millis(500));
    Ok(agent)
}
