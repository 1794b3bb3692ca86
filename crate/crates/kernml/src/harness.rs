//! Scenario runner: volume + workload + kernel side + agent, one thread
//! driving the simulator, decisions made synchronously per GC event.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use kernml_core::efficiency::{recount, Assessment};
use kernml_core::gc_sim::{
    self, GcError, SplitMix64, VolumeState, Workload, WorkloadSpec, KNOB_GC_BATCH, KNOB_WATERMARK,
};
use kernml_core::kernel::{CloseReason, GcDecision, KernelSide};
use kernml_core::wire::{attrs, Frame, StreamDecoder};
use kernml_core::{Arm, Fx32, Lifecycle, Mode};

use crate::agent::{self, TreeAgent};
use crate::attrfs::AttrMirror;
use crate::config::{AgentKind, ScenarioConfig, TransportKind};
use crate::error::{HarnessError, Result};
use crate::report::{ArmGc, FeedbackCounts, RunReport, StepRecord};
use crate::transport::{FrameLink, Inbound, Listener};

/// GC always runs below this many free segments, whatever the watermark,
/// so a victim's valid blocks always have somewhere to go.
const FREE_FLOOR: u32 = 2;
const LINK_QUEUE: usize = 1024;
const SHUTDOWN_DEADLINE: Duration = Duration::from_secs(2);

/// Built-in agent wired through an in-memory byte pipe. Bytes cross in
/// seeded random chunk sizes so both decoders do real reassembly.
struct InprocPeer {
    agent: TreeAgent,
    to_agent: StreamDecoder,
    to_kernel: StreamDecoder,
    chunks: SplitMix64,
    connected: bool,
}

impl InprocPeer {
    fn chunked(chunks: &mut SplitMix64, dec: &mut StreamDecoder, bytes: &[u8]) {
        let mut rest = bytes;
        while !rest.is_empty() {
            let n = (1 + chunks.below(64) as usize).min(rest.len());
            dec.push(&rest[..n]);
            rest = &rest[n..];
        }
    }
}

struct StreamPeer {
    listener: Listener,
    link: Option<FrameLink>,
    client: Option<JoinHandle<io::Result<TreeAgent>>>,
    finished_agent: Option<TreeAgent>,
}

enum Link {
    Detached,
    Inproc(Box<InprocPeer>),
    Stream(Box<StreamPeer>),
}

pub struct Testbed {
    cfg: ScenarioConfig,
    volume: VolumeState,
    workload: Workload,
    kernel: KernelSide,
    link: Link,
    capture: Option<BufWriter<File>>,
    mirror: Option<AttrMirror>,
    step: u64,
    records: Vec<StepRecord>,
    ml_gc: ArmGc,
    baseline_gc: ArmGc,
    ml_greedy_agree: u64,
    decisions_while_critical: u64,
    ml_while_critical: u64,
    first_low_ratio_at: Option<u64>,
    started: Instant,
}

fn frame_bytes(f: &Frame) -> Vec<u8> {
    f.encode().expect("kernel and agents only build frames within the size bound")
}

impl Testbed {
    /// Build the volume and kernel side, bring the proxy to Running through
    /// the attribute tree, and connect the configured agent.
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let logical = cfg.effective_logical_blocks();
        let volume = gc_sim::init_volume(cfg.n_segments, cfg.blocks_per_segment, logical)
            .map_err(|e| HarnessError::config(e.to_string()))?;
        let spec = WorkloadSpec {
            hot_fraction: cfg.hot_fraction,
            hot_write_share: cfg.hot_write_share,
            total_logical_blocks: logical,
            seed: cfg.seed,
            steps: cfg.steps,
        };
        let workload = Workload::new(spec).map_err(|e| HarnessError::config(e.to_string()))?;
        let mut kernel =
            KernelSide::new(cfg.kernel.clone()).map_err(|e| HarnessError::config(e.to_string()))?;
        kernel
            .preset_knobs(&[
                (KNOB_WATERMARK, cfg.gc_watermark),
                (KNOB_GC_BATCH, Fx32::from_int(cfg.gc_batch.min(i16::MAX as u32) as i32)),
            ])
            .map_err(|r| HarnessError::config(format!("knob out of bounds: {r:?}")))?;
        for trigger in [attrs::REINIT, attrs::START] {
            kernel.write_attr(trigger, "1").map_err(|e| HarnessError::Invariant(e.to_string()))?;
        }
        if cfg.initial_mode != Mode::Learning {
            kernel.proxy_mut().force_mode(cfg.initial_mode);
        }
        let capture = match &cfg.capture {
            Some(p) => Some(BufWriter::new(
                OpenOptions::new().create(true).append(true).open(p).map_err(|e| HarnessError::io(p, e))?,
            )),
            None => None,
        };
        let mirror = match &cfg.attr_root {
            Some(root) => Some(AttrMirror::new(root).map_err(|e| HarnessError::io(root, e))?),
            None => None,
        };
        let mut tb = Testbed {
            volume,
            workload,
            kernel,
            link: Link::Detached,
            capture,
            mirror,
            step: 0,
            records: Vec::new(),
            ml_gc: ArmGc::default(),
            baseline_gc: ArmGc::default(),
            ml_greedy_agree: 0,
            decisions_while_critical: 0,
            ml_while_critical: 0,
            first_low_ratio_at: None,
            started: Instant::now(),
            cfg,
        };
        tb.connect()?;
        tb.sync_mirror()?;
        Ok(tb)
    }

    fn builtin_agent(&self) -> Option<TreeAgent> {
        let b = self.cfg.blocks_per_segment;
        match self.cfg.agent {
            AgentKind::Reference => Some(TreeAgent::reference(b, self.cfg.agent_refresh)),
            AgentKind::Adversarial => Some(TreeAgent::adversarial(b, self.cfg.agent_refresh)),
            AgentKind::External | AgentKind::None => None,
        }
    }

    fn connect(&mut self) -> Result<()> {
        if self.cfg.agent == AgentKind::None {
            return Ok(());
        }
        match self.cfg.transport {
            TransportKind::Inproc => {
                let agent = self.builtin_agent().expect("validated: inproc agents are built in");
                self.kernel.open_session()?;
                let mut peer = InprocPeer {
                    agent,
                    to_agent: StreamDecoder::new(),
                    to_kernel: StreamDecoder::new(),
                    chunks: SplitMix64::new(self.cfg.seed ^ 0x6368_756E_6B73),
                    connected: true,
                };
                let hello = frame_bytes(&peer.agent.hello());
                InprocPeer::chunked(&mut peer.chunks, &mut peer.to_kernel, &hello);
                self.link = Link::Inproc(Box::new(peer));
                self.pump()
            }
            TransportKind::Stream => self.connect_stream(),
        }
    }

    fn connect_stream(&mut self) -> Result<()> {
        let ep = &self.cfg.listen;
        let listener =
            Listener::bind(ep).map_err(|e| HarnessError::transport(format!("listen on {ep}"), e))?;
        let bound = listener.endpoint().map_err(|e| HarnessError::transport("resolve listen address", e))?;
        let timeout = Duration::from_millis(self.cfg.accept_timeout_ms);
        let client = self.builtin_agent().map(|agent| {
            let bound = bound.clone();
            thread::spawn(move || agent::run_client(agent, &bound, timeout))
        });
        log::info!("waiting for agent on {bound}");
        let conn = listener
            .accept_timeout(timeout)
            .map_err(|e| HarnessError::transport(format!("accept on {bound}"), e))?;
        let link =
            FrameLink::new(conn, LINK_QUEUE).map_err(|e| HarnessError::transport("start frame reader", e))?;
        self.kernel.open_session()?;
        self.link =
            Link::Stream(Box::new(StreamPeer { listener, link: Some(link), client, finished_agent: None }));
        let deadline = Instant::now() + timeout;
        while !self.kernel.session_established() {
            if !self.kernel.session_active() || Instant::now() >= deadline {
                return Err(HarnessError::transport(
                    "handshake",
                    io::Error::new(io::ErrorKind::TimedOut, "agent did not complete the handshake"),
                ));
            }
            self.pump()?;
            thread::sleep(Duration::from_millis(1));
        }
        self.pump()
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn kernel(&self) -> &KernelSide {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut KernelSide {
        &mut self.kernel
    }

    pub fn volume(&self) -> &VolumeState {
        &self.volume
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    /// The in-process agent, if one is attached.
    pub fn agent(&self) -> Option<&TreeAgent> {
        match &self.link {
            Link::Inproc(p) => Some(&p.agent),
            Link::Stream(s) => s.finished_agent.as_ref(),
            Link::Detached => None,
        }
    }

    pub fn agent_connected(&self) -> bool {
        match &self.link {
            Link::Inproc(p) => p.connected,
            Link::Stream(s) => s.link.is_some(),
            Link::Detached => false,
        }
    }

    fn sync_mirror(&self) -> Result<()> {
        if let Some(m) = &self.mirror {
            m.sync(&self.kernel).map_err(|e| HarnessError::io(m.root(), e))?;
        }
        Ok(())
    }

    fn decisions_done(&self) -> bool {
        self.cfg.max_decisions > 0 && self.kernel.proxy().stats().decision_counter >= self.cfg.max_decisions
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.steps || self.decisions_done()
    }

    fn needs_gc(&self) -> bool {
        let free = self.volume.free_segments() as i64;
        let n = self.volume.n_segments() as i64;
        (free << 16) < self.kernel.watermark().raw() as i64 * n || free < FREE_FLOOR as i64
    }

    fn has_candidates(&self) -> bool {
        self.volume.candidates().next().is_some()
    }

    /// One workload step, preceded by a GC burst when free space is below
    /// the watermark. Returns false once the run is complete.
    pub fn advance(&mut self) -> Result<bool> {
        if self.is_done() {
            return Ok(false);
        }
        if self.needs_gc() {
            for _ in 0..self.kernel.gc_batch() {
                if self.decisions_done() || !self.has_candidates() || !self.needs_gc() {
                    break;
                }
                self.gc_once()?;
            }
        }
        if self.decisions_done() {
            return Ok(false);
        }
        loop {
            match self.workload.step(&mut self.volume) {
                Ok(_) => break,
                Err(GcError::VolumeFull) if self.has_candidates() => {
                    self.gc_once()?;
                }
                Err(e) => return Err(e.into()),
            }
        }
        self.step += 1;
        Ok(true)
    }

    /// One GC decision through the kernel side, then a transport pump.
    pub fn gc_once(&mut self) -> Result<GcDecision> {
        let d = self.kernel.decide_gc(&mut self.volume)?;
        let b = self.volume.blocks_per_segment() as u64;
        let arm_gc = match d.arm {
            Arm::Ml => &mut self.ml_gc,
            Arm::Baseline => &mut self.baseline_gc,
        };
        arm_gc.decisions += 1;
        arm_gc.copies += d.valid as u64;
        arm_gc.reclaimed_slots += b - d.valid as u64;
        if d.arm == Arm::Ml && d.victim == d.greedy_victim {
            self.ml_greedy_agree += 1;
        }
        if d.critical {
            self.decisions_while_critical += 1;
            self.ml_while_critical += (d.arm == Arm::Ml) as u64;
        }
        let mut transitioned = d.critical_transition.is_some();
        if let Assessment::Ratio { ratio, transition } = d.assessment {
            if ratio < self.cfg.kernel.proxy.demote_threshold && self.first_low_ratio_at.is_none() {
                self.first_low_ratio_at = Some(d.decision_id);
            }
            transitioned |= transition.is_some();
        }
        let stats = self.kernel.proxy().stats();
        self.records.push(StepRecord {
            step: self.step,
            mode: d.mode,
            arm: d.arm,
            reward: d.reward,
            ratio: stats.current_efficiency_ratio,
            free_segments: self.volume.free_segments(),
            wa: self.volume.stats().write_amplification(),
        });
        if self.cfg.publish_interval > 0 && d.decision_id % self.cfg.publish_interval == 0 {
            self.kernel.publish();
        }
        if transitioned {
            log::info!("decision {}: mode now {}", d.decision_id, self.kernel.proxy().mode());
            self.sync_mirror()?;
        }
        self.pump()?;
        Ok(d)
    }

    fn capture(&mut self, frame: &Frame) -> Result<()> {
        if let Some(w) = self.capture.as_mut() {
            w.write_all(&frame_bytes(frame)).map_err(|e| {
                HarnessError::io(self.cfg.capture.as_deref().unwrap_or("capture".as_ref()), e)
            })?;
        }
        Ok(())
    }

    /// Move frames both ways until the link is quiet.
    pub fn pump(&mut self) -> Result<()> {
        match &self.link {
            Link::Detached => {
                for f in self.kernel.take_outbound() {
                    self.capture(&f)?;
                }
                Ok(())
            }
            Link::Inproc(_) => self.pump_inproc(),
            Link::Stream(_) => self.pump_stream(),
        }
    }

    fn pump_inproc(&mut self) -> Result<()> {
        loop {
            self.kernel_reads_inproc();
            let out = self.kernel.take_outbound();
            if out.is_empty() {
                break;
            }
            for f in &out {
                self.capture(f)?;
            }
            let Link::Inproc(peer) = &mut self.link else { unreachable!() };
            if !peer.connected {
                continue;
            }
            for f in &out {
                InprocPeer::chunked(&mut peer.chunks, &mut peer.to_agent, &frame_bytes(f));
            }
            let mut replies = Vec::new();
            loop {
                match peer.to_agent.next_frame() {
                    Ok(Some(f)) => match peer.agent.on_frame(&f) {
                        Ok(r) => replies.extend(r),
                        Err(e) => {
                            log::warn!("{} agent: {e}", peer.agent.name());
                            peer.connected = false;
                            break;
                        }
                    },
                    Ok(None) => break,
                    Err(e) => {
                        log::warn!("agent side stream error: {e}");
                        peer.connected = false;
                        break;
                    }
                }
            }
            for r in &replies {
                InprocPeer::chunked(&mut peer.chunks, &mut peer.to_kernel, &frame_bytes(r));
            }
            if !peer.connected {
                self.kernel.close_session(CloseReason::Disconnected);
            }
        }
        Ok(())
    }

    fn kernel_reads_inproc(&mut self) {
        let Link::Inproc(peer) = &mut self.link else { return };
        loop {
            match peer.to_kernel.next_frame() {
                Ok(Some(f)) => self.kernel.receive(f),
                Ok(None) => break,
                Err(e) => {
                    log::warn!("kernel side stream error: {e}; closing session");
                    peer.to_kernel = StreamDecoder::new();
                    self.kernel.stream_error(e);
                    break;
                }
            }
        }
        if !self.kernel.session_active() && peer.connected {
            peer.connected = false;
        }
    }

    /// Feed raw bytes into the kernel side as if the agent had sent them.
    pub fn inject_to_kernel(&mut self, bytes: &[u8]) -> Result<()> {
        match &mut self.link {
            Link::Inproc(peer) => peer.to_kernel.push(bytes),
            _ => return Err(HarnessError::config("byte injection needs the in-process transport")),
        }
        self.pump()
    }

    /// Send a frame on the agent's behalf.
    pub fn send_as_agent(&mut self, frame: &Frame) -> Result<()> {
        self.inject_to_kernel(&frame_bytes(frame))
    }

    fn pump_stream(&mut self) -> Result<()> {
        let Link::Stream(peer) = &mut self.link else { unreachable!() };
        while let Some(conn) = peer.listener.try_accept().map_err(|e| HarnessError::transport("accept", e))? {
            if self.kernel.session_active() {
                log::warn!("refusing second agent connection while a session is active");
                conn.shutdown();
            } else {
                peer.link = Some(
                    FrameLink::new(conn, LINK_QUEUE)
                        .map_err(|e| HarnessError::transport("start frame reader", e))?,
                );
                self.kernel.open_session()?;
            }
        }
        let mut inbound = Vec::new();
        if let Some(link) = &peer.link {
            while let Some(i) = link.try_recv() {
                let closed = matches!(i, Inbound::Closed | Inbound::Corrupt(_));
                inbound.push(i);
                if closed {
                    break;
                }
            }
        }
        for i in inbound {
            match i {
                Inbound::Frame(f) => self.kernel.receive(f),
                Inbound::Corrupt(e) => self.kernel.stream_error(e),
                Inbound::Closed => self.kernel.close_session(CloseReason::Disconnected),
            }
        }
        let out = self.kernel.take_outbound();
        for f in &out {
            self.capture(f)?;
        }
        let Link::Stream(peer) = &mut self.link else { unreachable!() };
        if let Some(link) = peer.link.as_mut() {
            for f in &out {
                if let Err(e) = link.send(f) {
                    log::warn!("send to agent failed: {e}");
                    self.kernel.close_session(CloseReason::Disconnected);
                    break;
                }
            }
        }
        if !self.kernel.session_active() {
            if let Some(link) = peer.link.take() {
                link.close(SHUTDOWN_DEADLINE);
            }
        }
        Ok(())
    }

    /// Recompute everything the run maintains incrementally and compare.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if !self.volume.check_consistency() {
            return Err("segment valid counts disagree with the block map".into());
        }
        let live: u64 = self.volume.segments().iter().map(|s| s.valid_count() as u64).sum();
        if live != self.volume.logical_blocks() as u64 {
            return Err(format!("{live} live blocks, expected {}", self.volume.logical_blocks()));
        }
        let w = self.kernel.proxy().windows();
        for (name, win) in [("ml", w.ml()), ("baseline", w.baseline())] {
            if recount(win) != win.sum() {
                return Err(format!("{name} window running sum drifted"));
            }
        }
        let fq = self.kernel.feedback();
        let sent = self.kernel.counters().feedback_sent;
        if fq.enqueued() != sent + fq.dropped() + fq.len() as u64 {
            return Err(format!(
                "feedback enqueued {} != sent {sent} + dropped {} + pending {}",
                fq.enqueued(),
                fq.dropped(),
                fq.len()
            ));
        }
        if let Link::Inproc(p) = &self.link {
            if p.agent.counters().feedback != sent {
                return Err(format!(
                    "agent saw {} feedback frames, kernel sent {sent}",
                    p.agent.counters().feedback
                ));
            }
        }
        let s = self.kernel.proxy().stats();
        let by_mode: u64 = s.mode_decisions.iter().sum();
        if s.ml_decisions + s.baseline_decisions != s.decision_counter || by_mode != s.decision_counter {
            return Err("decision counters do not reconcile".into());
        }
        if self.ml_gc.decisions + self.baseline_gc.decisions != s.decision_counter {
            return Err("harness and proxy disagree on GC decision count".into());
        }
        if self.volume.stats().gc_copies != self.ml_gc.copies + self.baseline_gc.copies {
            return Err("GC copy count does not reconcile".into());
        }
        Ok(())
    }

    /// Run to completion and stop the proxy.
    pub fn run(mut self) -> Result<RunReport> {
        while self.advance()? {}
        self.finish()
    }

    /// Stop the proxy (which closes the agent session), drain the link, and
    /// build the report.
    pub fn finish(mut self) -> Result<RunReport> {
        if self.kernel.proxy().lifecycle() == Lifecycle::Running {
            self.kernel.write_attr(attrs::STOP, "1").map_err(|e| HarnessError::Invariant(e.to_string()))?;
        }
        self.pump()?;
        if let Link::Stream(peer) = &mut self.link {
            if let Some(link) = peer.link.take() {
                link.close(SHUTDOWN_DEADLINE);
            }
            if let Some(h) = peer.client.take() {
                match h.join() {
                    Ok(Ok(agent)) => peer.finished_agent = Some(agent),
                    Ok(Err(e)) => log::warn!("built-in agent client failed: {e}"),
                    Err(_) => log::warn!("built-in agent client panicked"),
                }
            }
        }
        if let Some(w) = self.capture.as_mut() {
            w.flush().map_err(|e| HarnessError::io("capture", e))?;
        }
        self.sync_mirror()?;
        let report = self.report();
        if let Some(path) = &self.cfg.report {
            report.write_to_path(self.cfg.format, path)?;
        }
        Ok(report)
    }

    fn report(&self) -> RunReport {
        let p = self.kernel.proxy();
        let s = p.stats();
        let fq = self.kernel.feedback();
        RunReport {
            seed: self.cfg.seed,
            steps: self.step,
            gc_decisions: s.decision_counter,
            final_state: p.lifecycle(),
            final_mode: p.mode(),
            mode_decisions: s.mode_decisions,
            ml_decisions: s.ml_decisions,
            baseline_decisions: s.baseline_decisions,
            transitions: s.mode_transitions.clone(),
            final_ratio: s.current_efficiency_ratio,
            write_amplification: self.volume.stats().write_amplification(),
            ml_gc: self.ml_gc,
            baseline_gc: self.baseline_gc,
            feedback: FeedbackCounts {
                enqueued: fq.enqueued(),
                sent: self.kernel.counters().feedback_sent,
                dropped: fq.dropped(),
                pending: fq.len() as u64,
                agent_received: self.agent().map(|a| a.counters().feedback),
            },
            ml_greedy_agree: self.ml_greedy_agree,
            decisions_while_critical: self.decisions_while_critical,
            ml_while_critical: self.ml_while_critical,
            first_low_ratio_at: self.first_low_ratio_at,
            session_closes: self.kernel.counters().closes.iter().map(|c| format!("{c:?}")).collect(),
            records: self.records.clone(),
            wall_time: self.started.elapsed(),
        }
    }
}

/// Build, run, stop and report.
pub fn run_scenario(cfg: ScenarioConfig) -> Result<RunReport> {
    Testbed::new(cfg)?.run()
}
