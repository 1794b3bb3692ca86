//! Kernel side of the loop, sans IO: the proxy plus everything it owns
//! (sample ring, knob table, feedback queue, attribute tree, agent session)
//! and the per-GC decision callout.
//!
//! Transports feed decoded frames into [`KernelSide::receive`] and ship
//! whatever [`KernelSide::take_outbound`] returns.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::{DatasetError, FeatureSchema, SampleRing, DEFAULT_RING_CAPACITY};
use crate::efficiency::{
    assess_and_notify, build_feedback, record_outcome, Assessment, EfficiencyError, FeedbackQueue,
    FEEDBACK_QUEUE_CAPACITY, NO_REC_ID,
};
use crate::fxp::Fx32;
use crate::gc_sim::{self, GcError, VolumeState, FEATURE_COUNT, KNOB_GC_BATCH, KNOB_WATERMARK};
use crate::policy::{self, KnobTable, PolicyError, RecAck, Recommendation};
use crate::proxy::{Arm, MlModelProxy, Mode, ModeTransition, ProxyConfig, ProxyError};
use crate::wire::messages::{ControlAck, ControlOp, ControlStatus};
use crate::wire::{
    attrs, AttrEffect, AttrError, AttributeTree, Frame, FrameError, Handshake, MsgType, SessionError,
};

/// Heuristic used on the baseline arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Greedy,
    CostBenefit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelConfig {
    pub proxy: ProxyConfig,
    pub baseline: Baseline,
    pub ring_capacity: usize,
    pub feedback_capacity: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            proxy: ProxyConfig::default(),
            baseline: Baseline::Greedy,
            ring_capacity: DEFAULT_RING_CAPACITY,
            feedback_capacity: FEEDBACK_QUEUE_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KernelError {
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error(transparent)]
    Gc(#[from] GcError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Efficiency(#[from] EfficiencyError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("an agent session is already active")]
    SessionBusy,
}

/// Why the agent session ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloseReason {
    Protocol(&'static str),
    SchemaRejected { offered: u16, expected: u16 },
    Stream(FrameError),
    Disconnected,
    Stopped,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionCounters {
    pub sessions_opened: u64,
    pub frames_in: u64,
    pub feedback_sent: u64,
    pub recs_installed: u64,
    pub recs_refused: u64,
    pub batches_sent: u64,
    pub records_sent: u64,
    pub closes: Vec<CloseReason>,
}

/// Outcome of one GC decision callout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GcDecision {
    pub decision_id: u64,
    /// Mode in force when the arm was chosen.
    pub mode: Mode,
    pub arm: Arm,
    pub rec_id: Option<u64>,
    pub victim: u32,
    pub valid: u32,
    pub reward: Fx32,
    /// Victim the greedy heuristic picks on the same state.
    pub greedy_victim: u32,
    pub critical: bool,
    pub critical_transition: Option<ModeTransition>,
    pub assessment: Assessment,
}

pub struct KernelSide {
    config: KernelConfig,
    proxy: MlModelProxy,
    schema: FeatureSchema,
    ring: SampleRing,
    knobs: KnobTable,
    feedback: FeedbackQueue,
    attrs: AttributeTree,
    session: Option<Handshake>,
    outbox: VecDeque<Frame>,
    counters: SessionCounters,
}

impl KernelSide {
    /// The proxy starts out `Created`; drive it through the attribute tree.
    pub fn new(config: KernelConfig) -> Result<Self, KernelError> {
        let proxy = MlModelProxy::create(config.proxy.clone())?;
        Ok(KernelSide {
            schema: gc_sim::feature_schema(),
            ring: SampleRing::new(config.ring_capacity),
            knobs: gc_sim::knob_table(),
            feedback: FeedbackQueue::new(config.feedback_capacity),
            attrs: AttributeTree::new(),
            session: None,
            outbox: VecDeque::new(),
            counters: SessionCounters::default(),
            proxy,
            config,
        })
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn proxy(&self) -> &MlModelProxy {
        &self.proxy
    }

    pub fn proxy_mut(&mut self) -> &mut MlModelProxy {
        &mut self.proxy
    }

    pub fn ring(&self) -> &SampleRing {
        &self.ring
    }

    pub fn knobs(&self) -> &KnobTable {
        &self.knobs
    }

    pub fn feedback(&self) -> &FeedbackQueue {
        &self.feedback
    }

    pub fn counters(&self) -> &SessionCounters {
        &self.counters
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn attributes(&self) -> &AttributeTree {
        &self.attrs
    }

    /// Free-segment ratio below which the subsystem runs GC.
    pub fn watermark(&self) -> Fx32 {
        self.knobs.value(KNOB_WATERMARK).unwrap_or(Fx32::ZERO)
    }

    /// Segments reclaimed per GC burst.
    pub fn gc_batch(&self) -> u32 {
        self.knobs.value(KNOB_GC_BATCH).map(|v| (v.raw() >> 16).max(1) as u32).unwrap_or(1)
    }

    /// Set knob values directly, with the same bounds checks a ConfigSet
    /// recommendation gets.
    pub fn preset_knobs(&mut self, entries: &[(u16, Fx32)]) -> Result<(), policy::ValidationReport> {
        let rec = Recommendation {
            rec_id: 0,
            body: policy::RecBody::Config(policy::ConfigSet { entries: entries.to_vec() }),
        };
        let report = policy::validate(&rec, &self.knobs, FEATURE_COUNT);
        if !report.ok() {
            return Err(report);
        }
        for &(k, v) in entries {
            self.knobs.set(k, v);
        }
        Ok(())
    }

    pub fn session_active(&self) -> bool {
        self.session.is_some()
    }

    pub fn session_established(&self) -> bool {
        self.session.as_ref().is_some_and(Handshake::is_established)
    }

    pub fn open_session(&mut self) -> Result<(), KernelError> {
        if self.session.is_some() {
            return Err(KernelError::SessionBusy);
        }
        self.session = Some(Handshake::new(self.schema.schema_id));
        self.counters.sessions_opened += 1;
        Ok(())
    }

    /// End the session. Installed programs go with it, so arbitration falls
    /// back to the baseline arm until a new agent installs one.
    pub fn close_session(&mut self, reason: CloseReason) {
        if let Some(mut hs) = self.session.take() {
            hs.close();
            self.proxy.end_session();
            self.counters.closes.push(reason);
        }
    }

    /// Undecodable bytes on the stream: resync is impossible, drop the session.
    pub fn stream_error(&mut self, err: FrameError) {
        self.close_session(CloseReason::Stream(err));
    }

    fn send(&mut self, msg_type: MsgType, payload: Vec<u8>) {
        self.outbox.push_back(Frame::new(msg_type, payload));
    }

    /// Frames queued for the agent, with pending feedback appended when a
    /// session is established.
    pub fn take_outbound(&mut self) -> Vec<Frame> {
        if self.session_established() {
            for payload in self.feedback.drain() {
                self.outbox.push_back(Frame::new(MsgType::Feedback, payload.to_vec()));
                self.counters.feedback_sent += 1;
            }
        }
        self.outbox.drain(..).collect()
    }

    /// Push the whole sample ring to the agent as one DATASET_BATCH.
    pub fn publish(&mut self) {
        if self.session_established() {
            let payload = self.ring.publish_batch(self.schema.schema_id, u32::MAX);
            self.note_batch(&payload);
            self.send(MsgType::DatasetBatch, payload);
        }
    }

    fn note_batch(&mut self, payload: &[u8]) {
        self.counters.batches_sent += 1;
        if let Some(n) = payload.get(2..6) {
            self.counters.records_sent += u32::from_le_bytes([n[0], n[1], n[2], n[3]]) as u64;
        }
    }

    /// Dispatch one frame from the agent. Frames with no session are ignored.
    pub fn receive(&mut self, frame: Frame) {
        let Some(hs) = self.session.as_mut() else {
            return;
        };
        self.counters.frames_in += 1;
        if !hs.is_established() {
            match hs.accept(&frame) {
                Ok(ack) => self.outbox.push_back(ack),
                Err(SessionError::SchemaRejected { offered, expected }) => {
                    let refusal = hs.refusal();
                    self.outbox.push_back(refusal);
                    self.close_session(CloseReason::SchemaRejected { offered, expected });
                }
                Err(SessionError::ProtocolViolation(m)) => self.close_session(CloseReason::Protocol(m)),
            }
            return;
        }
        match frame.msg_type {
            MsgType::DatasetRequest => {
                match self.ring.handle_dataset_request(self.schema.schema_id, &frame.payload) {
                    Ok(payload) => {
                        self.note_batch(&payload);
                        self.send(MsgType::DatasetBatch, payload);
                    }
                    Err(_) => self.close_session(CloseReason::Protocol("malformed DATASET_REQUEST")),
                }
            }
            MsgType::Recommendation => {
                let ack = self.install(&frame.payload);
                self.send(MsgType::RecommendationAck, ack.encode());
            }
            MsgType::ControlCmd => self.control(&frame.payload),
            MsgType::Hello => self.close_session(CloseReason::Protocol("repeated HELLO")),
            _ => self.close_session(CloseReason::Protocol("message not accepted from agent")),
        }
    }

    fn install(&mut self, payload: &[u8]) -> RecAck {
        let ack = match Recommendation::decode(payload) {
            Ok(rec) => {
                let id = rec.rec_id;
                policy::install(&mut self.proxy, rec, &mut self.knobs, FEATURE_COUNT)
                    .unwrap_or_else(|e| RecAck::for_error(id, &e))
            }
            Err(e) => {
                let id =
                    payload.get(..8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes"))).unwrap_or(0);
                RecAck::for_error(id, &e)
            }
        };
        if ack.status == policy::AckStatus::Installed {
            self.counters.recs_installed += 1;
        } else {
            self.counters.recs_refused += 1;
        }
        ack
    }

    fn control(&mut self, payload: &[u8]) {
        let (op_byte, op) = match payload {
            [b] => (*b, ControlOp::from_u8(*b)),
            _ => {
                self.close_session(CloseReason::Protocol("malformed CONTROL_CMD"));
                return;
            }
        };
        let path = match op {
            Some(ControlOp::Start) => attrs::START,
            Some(ControlOp::Stop) => attrs::STOP,
            Some(ControlOp::Reinit) => attrs::REINIT,
            Some(ControlOp::Publish) => attrs::DATASET_PUBLISH,
            None => {
                let ack = ControlAck { op: op_byte, status: ControlStatus::UnknownOp };
                self.send(MsgType::ControlAck, ack.encode());
                return;
            }
        };
        let before = self.outbox.len();
        let status = match self.write_attr(path, "1") {
            Ok(()) => ControlStatus::Ok,
            Err(_) => ControlStatus::IllegalTransition,
        };
        // The ack precedes anything the command itself queued.
        let ack = ControlAck { op: op_byte, status };
        self.outbox.insert(before, Frame::new(MsgType::ControlAck, ack.encode()));
    }

    pub fn read_attr(&self, path: &str) -> Result<String, AttrError> {
        self.attrs.read(&self.proxy, path)
    }

    /// Write a trigger attribute and carry out its side effect. A stop
    /// sends the final STATS_SNAPSHOT and closes the agent session.
    pub fn write_attr(&mut self, path: &str, text: &str) -> Result<(), AttrError> {
        match self.attrs.write(&mut self.proxy, path, text)? {
            AttrEffect::None => {}
            AttrEffect::PublishRequested => self.publish(),
            AttrEffect::Stopped(snapshot) => {
                if self.session_established() {
                    self.take_feedback_into_outbox();
                    self.send(MsgType::StatsSnapshot, snapshot.encode());
                }
                self.close_session(CloseReason::Stopped);
            }
        }
        Ok(())
    }

    fn take_feedback_into_outbox(&mut self) {
        let frames = self.take_outbound();
        self.outbox.extend(frames);
    }

    /// Every readable attribute and its value.
    pub fn dump_attrs(&self) -> Vec<(&'static str, String)> {
        self.attrs.dump(&self.proxy)
    }

    /// One GC decision: critical check, arbitration, victim selection by the
    /// chosen arm, reclamation, outcome bookkeeping, dataset sample,
    /// feedback, and the periodic efficiency assessment.
    pub fn decide_gc(&mut self, volume: &mut VolumeState) -> Result<GcDecision, KernelError> {
        let greedy_victim = gc_sim::select_victim_greedy(volume)?;
        let critical = volume.is_critical();
        let critical_transition = self.proxy.handle_critical(critical)?;
        let fresh = self.proxy.has_fresh_logic();
        let mode = self.proxy.mode();
        let arm = self.proxy.arbitrate(fresh)?;
        let decision_id = self.proxy.stats().decision_counter;

        let (victim, rec_id) = match arm {
            Arm::Ml => {
                let (rec_id, program) =
                    self.proxy.installed().active_logic().ok_or(PolicyError::NoCandidates)?;
                let (idx, feats) = gc_sim::candidate_features(volume);
                let pick = policy::select_by_logic(&program, feats.iter().map(|f| f.as_slice()))?;
                (idx[pick], Some(rec_id))
            }
            Arm::Baseline => match self.config.baseline {
                Baseline::Greedy => (greedy_victim, None),
                Baseline::CostBenefit => (gc_sim::select_victim_cost_benefit(volume)?, None),
            },
        };

        let valid = volume.segments()[victim as usize].valid_count();
        let features = gc_sim::extract_features(volume, victim)?;
        let reward = volume.run_gc(victim)?;
        record_outcome(&mut self.proxy, decision_id, arm, reward, rec_id)?;
        self.ring.collect_fixed(&self.schema, volume.tick(), &features, reward)?;
        build_feedback(
            &mut self.feedback,
            decision_id,
            arm == Arm::Ml,
            reward,
            rec_id.unwrap_or(NO_REC_ID),
            mode,
        );
        self.attrs.set_feedback_dropped(self.feedback.dropped());
        let assessment = assess_and_notify(&mut self.proxy);

        Ok(GcDecision {
            decision_id,
            mode,
            arm,
            rec_id,
            victim,
            valid,
            reward,
            greedy_victim,
            critical,
            critical_transition,
            assessment,
        })
    }
}
