//! Simulated log-structured storage subsystem: segment cleaning with
//! baseline victim-selection heuristics, the feature schema, and the reward.

mod volume;
mod workload;

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

pub use volume::{GcStats, Segment, SegmentState, VolumeState};
pub use workload::{Ratio, SplitMix64, Workload, WorkloadSpec, WriteEvent};

use crate::dataset::{FeatureSchema, FeatureSpec};
use crate::fxp::Fx32;
use crate::policy::{Knob, KnobTable, TreeNode, TreeProgram};

pub const FEATURE_SCHEMA_ID: u16 = 1;
pub const FEATURE_COUNT: usize = 4;
/// Ages saturate at this many ticks.
pub const AGE_SCALE: i64 = 65536;

pub const KNOB_WATERMARK: u16 = 1;
pub const KNOB_GC_BATCH: u16 = 2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GcError {
    #[error("volume config: {0}")]
    Config(&'static str),
    #[error("no free segment to append into")]
    VolumeFull,
    #[error("no GC candidate")]
    NoCandidates,
    #[error("segment {0} is not a valid victim")]
    InvalidVictim(u32),
    #[error("index {0} out of range")]
    Range(u32),
}

pub fn init_volume(
    n_segments: u32,
    blocks_per_segment: u32,
    total_logical_blocks: u32,
) -> Result<VolumeState, GcError> {
    VolumeState::new(n_segments, blocks_per_segment, total_logical_blocks)
}

/// `(B - valid) / (1 + valid)`.
pub fn gc_reward(blocks_per_segment: u32, valid: u32) -> Fx32 {
    Fx32::from_ratio(blocks_per_segment as i64 - valid as i64, 1 + valid as i64).unwrap_or(Fx32::ZERO)
}

/// Minimum valid count, lowest index on ties.
pub fn select_victim_greedy(volume: &VolumeState) -> Result<u32, GcError> {
    let mut best: Option<(u32, u32)> = None;
    for i in volume.candidates() {
        let v = volume.segments()[i as usize].valid_count();
        if best.is_none_or(|(_, bv)| v < bv) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i).ok_or(GcError::NoCandidates)
}

/// Segment age in ticks, capped below `AGE_SCALE`, as a fraction of it.
fn age_fraction(volume: &VolumeState, seg: &Segment) -> Fx32 {
    let age = volume.tick().saturating_sub(seg.last_write()).min(AGE_SCALE as u64 - 1);
    Fx32::from_ratio(age as i64, AGE_SCALE).unwrap_or(Fx32::ZERO)
}

fn utilization(volume: &VolumeState, seg: &Segment) -> Fx32 {
    Fx32::from_ratio(seg.valid_count() as i64, volume.blocks_per_segment() as i64).unwrap_or(Fx32::ZERO)
}

/// Cost-benefit score `age * (1 - u) / (1 + u)`.
pub fn cost_benefit_score(volume: &VolumeState, idx: u32) -> Fx32 {
    let seg = &volume.segments()[idx as usize];
    let u = utilization(volume, seg);
    let benefit = (Fx32::ONE - u).div(Fx32::ONE + u).unwrap_or(Fx32::ZERO);
    age_fraction(volume, seg).mul(benefit)
}

/// Maximum cost-benefit score, lowest index on ties.
pub fn select_victim_cost_benefit(volume: &VolumeState) -> Result<u32, GcError> {
    let mut best: Option<(u32, Fx32)> = None;
    for i in volume.candidates() {
        let s = cost_benefit_score(volume, i);
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i).ok_or(GcError::NoCandidates)
}

/// `[utilization, age / 65536, write temperature, free segment ratio]`,
/// each clipped to `[0, 1]`.
pub fn extract_features(volume: &VolumeState, idx: u32) -> Result<[Fx32; FEATURE_COUNT], GcError> {
    let seg = volume.segment(idx).ok_or(GcError::Range(idx))?;
    let free =
        Fx32::from_ratio(volume.free_segments() as i64, volume.n_segments() as i64).unwrap_or(Fx32::ZERO);
    let f = [utilization(volume, seg), age_fraction(volume, seg), seg.temperature_at(volume.tick()), free];
    Ok(f.map(|x| x.clamp_to(Fx32::ZERO, Fx32::ONE)))
}

pub fn feature_schema() -> FeatureSchema {
    let spec = |id: u16, name: &str| FeatureSpec {
        id,
        name: name.to_string(),
        scale_den: 1,
        clip_min: Fx32::ZERO,
        clip_max: Fx32::ONE,
    };
    FeatureSchema::new(
        FEATURE_SCHEMA_ID,
        vec![
            spec(0, "utilization"),
            spec(1, "age"),
            spec(2, "write_temperature"),
            spec(3, "free_segment_ratio"),
        ],
    )
    .expect("static schema is valid")
}

pub fn knob_table() -> KnobTable {
    KnobTable::new(vec![
        Knob {
            key_id: KNOB_WATERMARK,
            name: "gc_watermark_free_ratio".to_string(),
            min: Fx32::ZERO,
            max: Fx32::from_ratio(1, 2).unwrap_or(Fx32::ONE),
            integral: false,
            value: Fx32::from_ratio(1, 10).unwrap_or(Fx32::ZERO),
        },
        Knob {
            key_id: KNOB_GC_BATCH,
            name: "gc_batch".to_string(),
            min: Fx32::ONE,
            max: Fx32::from_int(64),
            integral: true,
            value: Fx32::ONE,
        },
    ])
}

/// Balanced threshold tree over the utilization feature with one leaf per
/// possible valid count `k` in `0..=B`, scoring `1 - k/B` (prefers empty
/// segments) or `k/B` (prefers full ones).
pub fn utilization_tree(blocks_per_segment: u32, prefer_empty: bool) -> TreeProgram {
    fn build(nodes: &mut Vec<TreeNode>, lo: u32, hi: u32, b: u32, prefer_empty: bool) -> u16 {
        let at = nodes.len() as u16;
        let u = |k: u32| Fx32::from_ratio(k as i64, b as i64).unwrap_or(Fx32::ZERO);
        if lo == hi {
            let score = if prefer_empty { Fx32::ONE - u(lo) } else { u(lo) };
            nodes.push(TreeNode::leaf(score));
            return at;
        }
        let mid = lo + (hi - lo) / 2;
        nodes.push(TreeNode::split(0, u(mid), 0, 0));
        let left = build(nodes, lo, mid, b, prefer_empty);
        let right = build(nodes, mid + 1, hi, b, prefer_empty);
        nodes[at as usize].left = left;
        nodes[at as usize].right = right;
        at
    }
    let mut nodes = Vec::new();
    build(&mut nodes, 0, blocks_per_segment, blocks_per_segment, prefer_empty);
    TreeProgram { feature_count: FEATURE_COUNT as u16, default_action: Fx32::ZERO, nodes }
}

/// Features of every candidate, in candidate order.
pub fn candidate_features(volume: &VolumeState) -> (Vec<u32>, Vec<[Fx32; FEATURE_COUNT]>) {
    volume.candidates().map(|i| (i, extract_features(volume, i).expect("candidate index in range"))).unzip()
}

#[cfg(test)]
mod tests;
