//! The ML model proxy: lifecycle, interaction modes and per-decision
//! arbitration between the ML arm and the baseline heuristic arm.

use alloc::vec::Vec;
use core::fmt;

use crate::efficiency::ArmWindows;
use crate::fxp::Fx32;
use crate::policy::Installed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lifecycle {
    Created,
    Initialized,
    Running,
    Stopped,
    Destroyed,
}

impl Lifecycle {
    pub const ALL: [Lifecycle; 5] = [
        Lifecycle::Created,
        Lifecycle::Initialized,
        Lifecycle::Running,
        Lifecycle::Stopped,
        Lifecycle::Destroyed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Lifecycle::Created => "created",
            Lifecycle::Initialized => "initialized",
            Lifecycle::Running => "running",
            Lifecycle::Stopped => "stopped",
            Lifecycle::Destroyed => "destroyed",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Lifecycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Interaction mode. The discriminant is the wire encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Emergency = 0,
    Learning = 1,
    Collaboration = 2,
    Recommendation = 3,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Emergency, Mode::Learning, Mode::Collaboration, Mode::Recommendation];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Mode> {
        Mode::ALL.get(c as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Emergency => "emergency",
            Mode::Learning => "learning",
            Mode::Collaboration => "collaboration",
            Mode::Recommendation => "recommendation",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Ml,
    Baseline,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Ml => "ml",
            Arm::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransitionReason {
    Promoted = 1,
    Demoted = 2,
    Critical = 3,
    Recovered = 4,
    Reinitialized = 5,
    Forced = 6,
}

impl TransitionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TransitionReason::Promoted => "promoted",
            TransitionReason::Demoted => "demoted",
            TransitionReason::Critical => "critical",
            TransitionReason::Recovered => "recovered",
            TransitionReason::Reinitialized => "reinitialized",
            TransitionReason::Forced => "forced",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeTransition {
    /// Decision counter value when the transition happened.
    pub tick: u64,
    pub from: Mode,
    pub to: Mode,
    pub reason: TransitionReason,
}

/// Operations gated by the lifecycle table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Initialize,
    Start,
    Stop,
    Destroy,
    Arbitrate,
    EfficiencyUpdate,
    HandleCritical,
    Install,
}

impl Op {
    pub const ALL: [Op; 8] = [
        Op::Initialize,
        Op::Start,
        Op::Stop,
        Op::Destroy,
        Op::Arbitrate,
        Op::EfficiencyUpdate,
        Op::HandleCritical,
        Op::Install,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProxyError {
    #[error("invalid proxy config: {0}")]
    Config(&'static str),
    #[error("illegal transition: {op:?} from {from}")]
    IllegalTransition { from: Lifecycle, op: Op },
    #[error("illegal state: {op:?} requires running, proxy is {state}")]
    IllegalState { state: Lifecycle, op: Op },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProxyConfig {
    pub learn_numerator: u32,
    pub learn_denominator: u32,
    pub promote_collab_threshold: Fx32,
    pub promote_rec_threshold: Fx32,
    pub demote_threshold: Fx32,
    pub min_ml_samples_collab: u32,
    pub min_ml_samples_rec: u32,
    pub max_rec_age_decisions: u64,
    pub feature_schema_id: u16,
    /// Per-arm reward window length.
    pub window_capacity: usize,
    /// Decisions between efficiency assessments.
    pub assessment_interval: u64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            learn_numerator: 1,
            learn_denominator: 8,
            promote_collab_threshold: Fx32::from_raw(65536),
            promote_rec_threshold: Fx32::from_raw(68813),
            demote_threshold: Fx32::from_raw(58982),
            min_ml_samples_collab: 64,
            min_ml_samples_rec: 128,
            max_rec_age_decisions: 10_000,
            feature_schema_id: crate::gc_sim::FEATURE_SCHEMA_ID,
            window_capacity: 256,
            assessment_interval: 32,
        }
    }
}

impl ProxyConfig {
    pub fn validate(&self) -> Result<(), ProxyError> {
        if self.demote_threshold >= self.promote_collab_threshold {
            return Err(ProxyError::Config("demote_threshold must be below promote_collab_threshold"));
        }
        if self.promote_collab_threshold > self.promote_rec_threshold {
            return Err(ProxyError::Config("promote_collab_threshold must not exceed promote_rec_threshold"));
        }
        if self.learn_numerator == 0
            || self.learn_denominator == 0
            || 2 * self.learn_numerator as u64 > self.learn_denominator as u64
        {
            return Err(ProxyError::Config("learn fraction must lie in (0, 1/2]"));
        }
        if self.window_capacity == 0 {
            return Err(ProxyError::Config("window_capacity must be positive"));
        }
        if self.assessment_interval == 0 {
            return Err(ProxyError::Config("assessment_interval must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProxyStats {
    pub decision_counter: u64,
    pub ml_decisions: u64,
    pub baseline_decisions: u64,
    /// Decisions taken in each mode, indexed by `Mode::code`.
    pub mode_decisions: [u64; 4],
    pub mode_transitions: Vec<ModeTransition>,
    pub current_efficiency_ratio: Option<Fx32>,
}

/// Point-in-time view emitted on stop and in STATS_SNAPSHOT frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatsSnapshot {
    pub state: Lifecycle,
    pub mode: Mode,
    pub decision_counter: u64,
    pub ml_decisions: u64,
    pub baseline_decisions: u64,
    pub efficiency_ratio: Option<Fx32>,
}

pub struct MlModelProxy {
    lifecycle: Lifecycle,
    mode: Mode,
    config: ProxyConfig,
    stats: ProxyStats,
    installed: Installed,
    windows: ArmWindows,
    last_rec_id: Option<u64>,
    last_snapshot: Option<StatsSnapshot>,
    mode_before_emergency: Option<Mode>,
}

impl fmt::Debug for MlModelProxy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MlModelProxy")
            .field("lifecycle", &self.lifecycle)
            .field("mode", &self.mode)
            .field("decisions", &self.stats.decision_counter)
            .finish_non_exhaustive()
    }
}

impl MlModelProxy {
    pub fn create(config: ProxyConfig) -> Result<Self, ProxyError> {
        config.validate()?;
        let windows = ArmWindows::new(config.window_capacity);
        Ok(MlModelProxy {
            lifecycle: Lifecycle::Created,
            mode: Mode::Learning,
            config,
            stats: ProxyStats::default(),
            installed: Installed::default(),
            windows,
            last_rec_id: None,
            last_snapshot: None,
            mode_before_emergency: None,
        })
    }

    pub fn lifecycle(&self) -> Lifecycle {
        self.lifecycle
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &ProxyConfig {
        &self.config
    }

    pub fn stats(&self) -> &ProxyStats {
        &self.stats
    }

    pub fn installed(&self) -> &Installed {
        &self.installed
    }

    pub fn windows(&self) -> &ArmWindows {
        &self.windows
    }

    pub fn last_snapshot(&self) -> Option<&StatsSnapshot> {
        self.last_snapshot.as_ref()
    }

    pub fn mode_before_emergency(&self) -> Option<Mode> {
        self.mode_before_emergency
    }

    pub(crate) fn installed_mut(&mut self) -> &mut Installed {
        &mut self.installed
    }

    pub(crate) fn windows_mut(&mut self) -> &mut ArmWindows {
        &mut self.windows
    }

    pub(crate) fn last_rec_id(&self) -> Option<u64> {
        self.last_rec_id
    }

    pub(crate) fn set_last_rec_id(&mut self, id: u64) {
        self.last_rec_id = Some(id);
    }

    pub(crate) fn set_efficiency_ratio(&mut self, r: Option<Fx32>) {
        self.stats.current_efficiency_ratio = r;
    }

    /// Forget per-session state: rec id ordering and installed programs.
    /// With nothing installed, arbitration falls back to the baseline arm.
    pub fn end_session(&mut self) {
        self.last_rec_id = None;
        self.installed = Installed::default();
    }

    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            state: self.lifecycle,
            mode: self.mode,
            decision_counter: self.stats.decision_counter,
            ml_decisions: self.stats.ml_decisions,
            baseline_decisions: self.stats.baseline_decisions,
            efficiency_ratio: self.stats.current_efficiency_ratio,
        }
    }

    fn gate(&self, op: Op, legal: &[Lifecycle]) -> Result<(), ProxyError> {
        if legal.contains(&self.lifecycle) {
            Ok(())
        } else {
            Err(ProxyError::IllegalTransition { from: self.lifecycle, op })
        }
    }

    pub(crate) fn require_running(&self, op: Op) -> Result<(), ProxyError> {
        if self.lifecycle == Lifecycle::Running {
            Ok(())
        } else {
            Err(ProxyError::IllegalState { state: self.lifecycle, op })
        }
    }

    /// Created → Initialized, or Stopped → Initialized (reinitialize).
    pub fn initialize(&mut self) -> Result<(), ProxyError> {
        self.gate(Op::Initialize, &[Lifecycle::Created, Lifecycle::Stopped])?;
        let reinit = self.lifecycle == Lifecycle::Stopped;
        self.installed = Installed::default();
        self.windows.clear();
        self.stats.current_efficiency_ratio = None;
        self.mode_before_emergency = None;
        if reinit && self.mode != Mode::Learning {
            self.transition(Mode::Learning, TransitionReason::Reinitialized);
        }
        self.lifecycle = Lifecycle::Initialized;
        Ok(())
    }

    pub fn start(&mut self) -> Result<(), ProxyError> {
        self.gate(Op::Start, &[Lifecycle::Initialized, Lifecycle::Stopped])?;
        self.lifecycle = Lifecycle::Running;
        Ok(())
    }

    /// Running → Stopped. Returns the final stats snapshot.
    pub fn stop(&mut self) -> Result<StatsSnapshot, ProxyError> {
        self.gate(Op::Stop, &[Lifecycle::Running])?;
        self.lifecycle = Lifecycle::Stopped;
        let snap = self.snapshot();
        self.last_snapshot = Some(snap);
        Ok(snap)
    }

    pub fn destroy(&mut self) -> Result<(), ProxyError> {
        self.gate(
            Op::Destroy,
            &[Lifecycle::Created, Lifecycle::Initialized, Lifecycle::Running, Lifecycle::Stopped],
        )?;
        self.lifecycle = Lifecycle::Destroyed;
        self.installed = Installed::default();
        Ok(())
    }

    /// A logic recommendation is installed and younger than
    /// `max_rec_age_decisions`.
    pub fn has_fresh_logic(&self) -> bool {
        self.installed.logic.as_ref().is_some_and(|l| {
            self.stats.decision_counter - l.installed_at_decision <= self.config.max_rec_age_decisions
        })
    }

    /// Choose the arm for the next decision and advance the counter.
    pub fn arbitrate(&mut self, has_fresh_recommendation: bool) -> Result<Arm, ProxyError> {
        self.require_running(Op::Arbitrate)?;
        let n = self.stats.decision_counter;
        let wants_ml = match self.mode {
            Mode::Emergency => false,
            Mode::Learning => {
                n % (self.config.learn_denominator as u64) < (self.config.learn_numerator as u64)
            }
            Mode::Collaboration => n.is_multiple_of(2),
            Mode::Recommendation => true,
        };
        let arm = if wants_ml && has_fresh_recommendation { Arm::Ml } else { Arm::Baseline };
        self.stats.decision_counter += 1;
        self.stats.mode_decisions[self.mode.code() as usize] += 1;
        match arm {
            Arm::Ml => self.stats.ml_decisions += 1,
            Arm::Baseline => self.stats.baseline_decisions += 1,
        }
        Ok(arm)
    }

    /// Apply one promotion/demotion step from an efficiency assessment.
    pub fn on_efficiency_update(
        &mut self,
        ratio: Fx32,
        ml_samples: u64,
    ) -> Result<Option<ModeTransition>, ProxyError> {
        self.require_running(Op::EfficiencyUpdate)?;
        let c = &self.config;
        let next = match self.mode {
            Mode::Emergency => None,
            Mode::Learning => (ratio >= c.promote_collab_threshold
                && ml_samples >= c.min_ml_samples_collab as u64)
                .then_some((Mode::Collaboration, TransitionReason::Promoted)),
            Mode::Collaboration => {
                if ratio < c.demote_threshold {
                    Some((Mode::Learning, TransitionReason::Demoted))
                } else if ratio >= c.promote_rec_threshold && ml_samples >= c.min_ml_samples_rec as u64 {
                    Some((Mode::Recommendation, TransitionReason::Promoted))
                } else {
                    None
                }
            }
            Mode::Recommendation => {
                (ratio < c.demote_threshold).then_some((Mode::Collaboration, TransitionReason::Demoted))
            }
        };
        Ok(next.map(|(to, why)| self.transition(to, why)))
    }

    /// Enter Emergency on a critical signal; leave it for Learning once the
    /// signal clears.
    pub fn handle_critical(&mut self, critical: bool) -> Result<Option<ModeTransition>, ProxyError> {
        self.require_running(Op::HandleCritical)?;
        match (critical, self.mode) {
            (true, Mode::Emergency) | (false, Mode::Learning) => Ok(None),
            (true, prev) => {
                self.mode_before_emergency = Some(prev);
                Ok(Some(self.transition(Mode::Emergency, TransitionReason::Critical)))
            }
            (false, Mode::Emergency) => {
                Ok(Some(self.transition(Mode::Learning, TransitionReason::Recovered)))
            }
            (false, _) => Ok(None),
        }
    }

    /// Put the proxy into `mode` directly. Used by scenarios that start from
    /// a given mode; recorded with reason `Forced`.
    pub fn force_mode(&mut self, mode: Mode) -> Option<ModeTransition> {
        (self.mode != mode).then(|| self.transition(mode, TransitionReason::Forced))
    }

    fn transition(&mut self, to: Mode, reason: TransitionReason) -> ModeTransition {
        let t = ModeTransition { tick: self.stats.decision_counter, from: self.mode, to, reason };
        self.mode = to;
        self.stats.mode_transitions.push(t);
        t
    }
}
