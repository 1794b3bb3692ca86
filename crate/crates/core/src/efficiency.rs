//! Reward windows, the ML/baseline efficiency ratio, and feedback records
//! sent back to the agent.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::fxp::Fx32;
use crate::proxy::{Arm, MlModelProxy, Mode, ModeTransition};

pub const DEFAULT_WINDOW: usize = 256;
pub const FEEDBACK_QUEUE_CAPACITY: usize = 4096;
pub const FEEDBACK_PAYLOAD_LEN: usize = 22;

/// Rec id carried by feedback for decisions taken with nothing installed.
pub const NO_REC_ID: u64 = 0;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EfficiencyError {
    #[error("ML reward sample without a recommendation id")]
    ContractViolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RewardSample {
    pub decision_id: u64,
    pub source: Arm,
    pub reward: Fx32,
    pub rec_id: Option<u64>,
}

impl RewardSample {
    pub fn ml(decision_id: u64, reward: Fx32, rec_id: u64) -> Self {
        RewardSample { decision_id, source: Arm::Ml, reward, rec_id: Some(rec_id) }
    }

    pub fn baseline(decision_id: u64, reward: Fx32) -> Self {
        RewardSample { decision_id, source: Arm::Baseline, reward, rec_id: None }
    }
}

/// Ring of the last K rewards with an exact running sum of raw values.
#[derive(Debug, Clone)]
pub struct ArmWindow {
    capacity: usize,
    rewards: VecDeque<i32>,
    sum: i64,
}

impl ArmWindow {
    pub fn new(capacity: usize) -> Self {
        ArmWindow { capacity, rewards: VecDeque::with_capacity(capacity), sum: 0 }
    }

    pub fn push(&mut self, reward: Fx32) {
        if self.rewards.len() == self.capacity {
            if let Some(old) = self.rewards.pop_front() {
                self.sum -= old as i64;
            }
        }
        self.rewards.push_back(reward.raw());
        self.sum += reward.raw() as i64;
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn sum(&self) -> i64 {
        self.sum
    }

    pub fn iter(&self) -> impl Iterator<Item = Fx32> + '_ {
        self.rewards.iter().map(|&r| Fx32::from_raw(r))
    }

    /// Mean raw value, truncated toward zero; `None` when empty.
    pub fn mean_raw(&self) -> Option<i64> {
        (!self.is_empty()).then(|| self.sum / self.rewards.len() as i64)
    }

    pub fn clear(&mut self) {
        self.rewards.clear();
        self.sum = 0;
    }
}

#[derive(Debug, Clone)]
pub struct ArmWindows {
    ml: ArmWindow,
    baseline: ArmWindow,
}

impl ArmWindows {
    pub fn new(capacity: usize) -> Self {
        ArmWindows { ml: ArmWindow::new(capacity), baseline: ArmWindow::new(capacity) }
    }

    pub fn ml(&self) -> &ArmWindow {
        &self.ml
    }

    pub fn baseline(&self) -> &ArmWindow {
        &self.baseline
    }

    pub fn record(&mut self, sample: RewardSample) -> Result<(), EfficiencyError> {
        match sample.source {
            Arm::Ml => {
                if sample.rec_id.is_none() {
                    return Err(EfficiencyError::ContractViolation);
                }
                self.ml.push(sample.reward);
            }
            Arm::Baseline => self.baseline.push(sample.reward),
        }
        Ok(())
    }

    /// Ratio of the two window means, or `None` (unavailable) when either arm
    /// is empty or the baseline mean is not positive.
    pub fn efficiency_ratio(&self) -> Option<Fx32> {
        ratio_of_means(&self.ml, &self.baseline)
    }

    pub fn swapped(&self) -> ArmWindows {
        ArmWindows { ml: self.baseline.clone(), baseline: self.ml.clone() }
    }

    pub fn clear(&mut self) {
        self.ml.clear();
        self.baseline.clear();
    }
}

fn ratio_of_means(num: &ArmWindow, den: &ArmWindow) -> Option<Fx32> {
    if num.is_empty() || den.is_empty() || den.sum <= 0 {
        return None;
    }
    // (sum_n / cnt_n) / (sum_d / cnt_d) as one rounded division.
    let n = num.sum as i128 * den.len() as i128;
    let d = den.sum as i128 * num.len() as i128;
    Some(Fx32::from_wide_ratio(n, d))
}

/// Record an outcome in the proxy's windows.
pub fn record_outcome(
    proxy: &mut MlModelProxy,
    decision_id: u64,
    source: Arm,
    reward: Fx32,
    rec_id: Option<u64>,
) -> Result<(), EfficiencyError> {
    proxy.windows_mut().record(RewardSample { decision_id, source, reward, rec_id })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedbackRecord {
    pub rec_id: u64,
    pub decision_id: u64,
    /// ML decision executed (true) or baseline executed (false).
    pub applied: bool,
    pub reward: Fx32,
    pub mode: Mode,
}

impl FeedbackRecord {
    pub fn encode(&self) -> [u8; FEEDBACK_PAYLOAD_LEN] {
        let mut b = [0u8; FEEDBACK_PAYLOAD_LEN];
        b[0..8].copy_from_slice(&self.rec_id.to_le_bytes());
        b[8..16].copy_from_slice(&self.decision_id.to_le_bytes());
        b[16] = self.applied as u8;
        b[17..21].copy_from_slice(&self.reward.to_le_bytes());
        b[21] = self.mode.code();
        b
    }

    pub fn decode(b: &[u8]) -> Option<FeedbackRecord> {
        if b.len() != FEEDBACK_PAYLOAD_LEN || b[16] > 1 {
            return None;
        }
        Some(FeedbackRecord {
            rec_id: u64::from_le_bytes(b[0..8].try_into().ok()?),
            decision_id: u64::from_le_bytes(b[8..16].try_into().ok()?),
            applied: b[16] == 1,
            reward: Fx32::from_le_bytes(b[17..21].try_into().ok()?),
            mode: Mode::from_code(b[21])?,
        })
    }
}

/// Bounded outbound feedback queue; overflow drops the oldest record.
#[derive(Debug, Clone)]
pub struct FeedbackQueue {
    capacity: usize,
    queue: VecDeque<[u8; FEEDBACK_PAYLOAD_LEN]>,
    enqueued: u64,
    dropped: u64,
}

impl Default for FeedbackQueue {
    fn default() -> Self {
        FeedbackQueue::new(FEEDBACK_QUEUE_CAPACITY)
    }
}

impl FeedbackQueue {
    pub fn new(capacity: usize) -> Self {
        FeedbackQueue { capacity, queue: VecDeque::new(), enqueued: 0, dropped: 0 }
    }

    pub fn push(&mut self, payload: [u8; FEEDBACK_PAYLOAD_LEN]) {
        if self.queue.len() == self.capacity {
            self.queue.pop_front();
            self.dropped += 1;
        }
        self.queue.push_back(payload);
        self.enqueued += 1;
    }

    pub fn drain(&mut self) -> impl Iterator<Item = [u8; FEEDBACK_PAYLOAD_LEN]> + '_ {
        self.queue.drain(..)
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn enqueued(&self) -> u64 {
        self.enqueued
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

/// Encode a FEEDBACK payload and queue it for transmission.
pub fn build_feedback(
    queue: &mut FeedbackQueue,
    decision_id: u64,
    applied: bool,
    reward: Fx32,
    rec_id: u64,
    mode: Mode,
) -> [u8; FEEDBACK_PAYLOAD_LEN] {
    let payload = FeedbackRecord { rec_id, decision_id, applied, reward, mode }.encode();
    queue.push(payload);
    payload
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assessment {
    /// Interval not reached.
    Skipped,
    Unavailable,
    Ratio {
        ratio: Fx32,
        transition: Option<ModeTransition>,
    },
}

/// Runs once every `assessment_interval` decisions: computes the ratio,
/// publishes it to stats, and feeds it to the mode state machine.
pub fn assess_and_notify(proxy: &mut MlModelProxy) -> Assessment {
    let n = proxy.stats().decision_counter;
    if n == 0 || !n.is_multiple_of(proxy.config().assessment_interval) {
        return Assessment::Skipped;
    }
    let ratio = proxy.windows().efficiency_ratio();
    proxy.set_efficiency_ratio(ratio);
    match ratio {
        None => Assessment::Unavailable,
        Some(ratio) => {
            let ml_samples = proxy.windows().ml().len() as u64;
            let transition = if proxy.mode() == Mode::Emergency {
                None
            } else {
                proxy.on_efficiency_update(ratio, ml_samples).ok().flatten()
            };
            Assessment::Ratio { ratio, transition }
        }
    }
}

/// Recompute a window's sum from its contents.
pub fn recount(window: &ArmWindow) -> i64 {
    window.iter().map(|r| r.raw() as i64).sum()
}

/// Collect window contents, oldest first.
pub fn contents(window: &ArmWindow) -> Vec<Fx32> {
    window.iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proxy::ProxyConfig;
    use proptest::prelude::*;

    fn fx(r: i32) -> Fx32 {
        Fx32::from_raw(r)
    }

    #[test]
    fn constant_baseline_mean() {
        let mut w = ArmWindows::new(DEFAULT_WINDOW);
        for i in 0..3 {
            w.record(RewardSample::baseline(i, fx(65536))).unwrap();
        }
        assert_eq!(w.baseline().mean_raw(), Some(65536));
    }

    #[test]
    fn window_evicts_oldest() {
        let mut w = ArmWindow::new(4);
        for r in 1..=6 {
            w.push(fx(r));
        }
        assert_eq!(w.sum(), 3 + 4 + 5 + 6);
        assert_eq!(contents(&w), [3, 4, 5, 6].map(fx).to_vec());
    }

    #[test]
    fn ml_without_rec_id_is_rejected() {
        let mut w = ArmWindows::new(8);
        let s = RewardSample { decision_id: 0, source: Arm::Ml, reward: Fx32::ONE, rec_id: None };
        assert_eq!(w.record(s), Err(EfficiencyError::ContractViolation));
    }

    #[test]
    fn ratio_examples() {
        let mut w = ArmWindows::new(8);
        assert_eq!(w.efficiency_ratio(), None);
        w.record(RewardSample::baseline(0, fx(65536))).unwrap();
        assert_eq!(w.efficiency_ratio(), None);
        w.record(RewardSample::ml(1, fx(65536), 1)).unwrap();
        assert_eq!(w.efficiency_ratio(), Some(fx(65536)));

        let mut w = ArmWindows::new(8);
        w.record(RewardSample::ml(0, fx(98304), 1)).unwrap();
        w.record(RewardSample::baseline(1, fx(65536))).unwrap();
        // 98304 * 65536 / 65536
        assert_eq!(w.efficiency_ratio(), Some(fx(98304)));
    }

    #[test]
    fn non_positive_baseline_is_unavailable() {
        let mut w = ArmWindows::new(8);
        w.record(RewardSample::ml(0, fx(100), 1)).unwrap();
        w.record(RewardSample::baseline(1, fx(0))).unwrap();
        assert_eq!(w.efficiency_ratio(), None);
    }

    #[test]
    fn feedback_payload_layout() {
        let mut q = FeedbackQueue::default();
        let p = build_feedback(&mut q, 9, true, fx(70000), 3, Mode::Collaboration);
        assert_eq!(p.len(), 8 + 8 + 1 + 4 + 1);
        assert_eq!(p[16], 1);
        assert_eq!(p[21], 2);
        assert_eq!(&p[0..8], &3u64.to_le_bytes());
        assert_eq!(&p[17..21], &70000i32.to_le_bytes());
        let back = FeedbackRecord::decode(&p).unwrap();
        assert_eq!(back.decision_id, 9);

        let p = build_feedback(&mut q, 10, false, fx(1), 3, Mode::Learning);
        assert_eq!(p[16], 0);
        assert_eq!(&p[0..8], &3u64.to_le_bytes());
    }

    #[test]
    fn feedback_queue_drops_oldest() {
        let mut q = FeedbackQueue::new(2);
        for i in 0..5 {
            build_feedback(&mut q, i, false, Fx32::ZERO, 0, Mode::Learning);
        }
        assert_eq!(q.dropped(), 3);
        let ids: Vec<u64> = q.drain().map(|p| FeedbackRecord::decode(&p).unwrap().decision_id).collect();
        assert_eq!(ids, [3, 4]);
    }

    fn running() -> MlModelProxy {
        let mut p = MlModelProxy::create(ProxyConfig::default()).unwrap();
        p.initialize().unwrap();
        p.start().unwrap();
        p
    }

    #[test]
    fn assess_respects_interval_and_forwards_ratio() {
        let mut p = running();
        assert_eq!(assess_and_notify(&mut p), Assessment::Skipped);
        for i in 0..32u64 {
            p.arbitrate(true).unwrap();
            let (arm, rec) = if i % 2 == 0 { (Arm::Ml, Some(1)) } else { (Arm::Baseline, None) };
            let r = if arm == Arm::Ml { 70000 } else { 65536 };
            record_outcome(&mut p, i, arm, fx(r), rec).unwrap();
            if i < 31 {
                assert_eq!(assess_and_notify(&mut p), Assessment::Skipped);
            }
        }
        match assess_and_notify(&mut p) {
            Assessment::Ratio { ratio, transition } => {
                assert_eq!(ratio, fx(70000));
                // 16 ML samples < 64: no promotion
                assert_eq!(transition, None);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(p.stats().current_efficiency_ratio, Some(fx(70000)));
    }

    #[test]
    fn assess_unavailable_clears_stat() {
        let mut p = running();
        for _ in 0..32 {
            p.arbitrate(false).unwrap();
        }
        assert_eq!(assess_and_notify(&mut p), Assessment::Unavailable);
        assert_eq!(p.stats().current_efficiency_ratio, None);
    }

    proptest! {
        #[test]
        fn running_sum_is_exact(cap in 1usize..64, xs in proptest::collection::vec(any::<i32>(), 0..300)) {
            let mut w = ArmWindow::new(cap);
            for &x in &xs {
                w.push(fx(x));
                prop_assert_eq!(w.sum(), recount(&w));
            }
            let tail: i64 = xs.iter().rev().take(cap).map(|&x| x as i64).sum();
            prop_assert_eq!(w.sum(), tail);
        }

        #[test]
        fn ratio_swap_is_reciprocal(
            ml in proptest::collection::vec(1000i32..500_000, 1..50),
            bl in proptest::collection::vec(1000i32..500_000, 1..50),
        ) {
            let mut w = ArmWindows::new(64);
            for (i, &r) in ml.iter().enumerate() { w.record(RewardSample::ml(i as u64, fx(r), 1)).unwrap(); }
            for (i, &r) in bl.iter().enumerate() { w.record(RewardSample::baseline(i as u64, fx(r))).unwrap(); }
            let r = w.efficiency_ratio().unwrap();
            let inv = w.swapped().efficiency_ratio().unwrap();
            let expect = Fx32::ONE.div(r).unwrap();
            // Reciprocal of a rounded quotient: error bounded by one raw unit
            // of the quotient scaled by 1/r^2.
            let slack = 1 + ((expect.raw() as i64 * expect.raw() as i64) >> 16) / 65536;
            prop_assert!((inv.raw() as i64 - expect.raw() as i64).abs() <= slack,
                "inv {} expect {} slack {}", inv.raw(), expect.raw(), slack);
        }
    }
}
