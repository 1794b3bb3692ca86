//! Reproducibility digest over the full decision path
//! (features → tree evaluation → reward → efficiency ratio). Identical on
//! every target because every step is integer arithmetic.

use alloc::vec::Vec;

use crate::efficiency::{ArmWindows, RewardSample};
use crate::fxp::Fx32;
use crate::gc_sim::{self, GcError, SplitMix64, VolumeState, Workload, WorkloadSpec, FEATURE_COUNT};
use crate::policy::{eval_tree, select_by_logic, TreeNode, TreeProgram};

/// Random valid program over `FEATURE_COUNT` features, at most `max_depth`
/// nodes deep.
pub fn random_tree(rng: &mut SplitMix64, max_depth: u32) -> TreeProgram {
    fn grow(rng: &mut SplitMix64, nodes: &mut Vec<TreeNode>, depth: u32, max_depth: u32) -> u16 {
        let at = nodes.len() as u16;
        if depth + 1 >= max_depth || rng.below(4) == 0 {
            let v = rng.below(8 * 65536) as i32 - 4 * 65536;
            nodes.push(TreeNode::leaf(Fx32::from_raw(v)));
            return at;
        }
        let feature = rng.below(FEATURE_COUNT as u64) as u16;
        let threshold = Fx32::from_raw(rng.below(65537) as i32);
        nodes.push(TreeNode::split(feature, threshold, 0, 0));
        let left = grow(rng, nodes, depth + 1, max_depth);
        let right = grow(rng, nodes, depth + 1, max_depth);
        nodes[at as usize].left = left;
        nodes[at as usize].right = right;
        at
    }
    let mut nodes = Vec::new();
    grow(rng, &mut nodes, 0, max_depth.max(1));
    TreeProgram { feature_count: FEATURE_COUNT as u16, default_action: Fx32::ZERO, nodes }
}

/// Drive a small volume through `states` GC decisions made by random trees
/// and fold every intermediate value into a CRC32.
pub fn decision_path_digest(seed: u64, states: u32) -> Result<u32, GcError> {
    const SEGMENTS: u32 = 64;
    const BPS: u32 = 8;
    const LOGICAL: u32 = 400;

    let mut rng = SplitMix64::new(seed);
    let mut volume = VolumeState::new(SEGMENTS, BPS, LOGICAL)?;
    let mut workload = Workload::new(WorkloadSpec::new(LOGICAL, rng.next_u64(), 0))?;
    let mut windows = ArmWindows::new(256);
    let mut h = crc32fast::Hasher::new();
    let mut tree = random_tree(&mut rng, 8);

    for i in 0..states {
        if i % 64 == 0 {
            tree = random_tree(&mut rng, 8);
        }
        for _ in 0..rng.below(24) {
            while volume.free_segments() < 4 {
                let v = gc_sim::select_victim_greedy(&volume)?;
                volume.run_gc(v)?;
            }
            workload.step(&mut volume)?;
        }
        let (idx, feats) = gc_sim::candidate_features(&volume);
        for f in &feats {
            let score = eval_tree(&tree, f).map_err(|_| GcError::NoCandidates)?;
            h.update(&score.to_le_bytes());
        }
        let pick =
            select_by_logic(&tree, feats.iter().map(|f| f.as_slice())).map_err(|_| GcError::NoCandidates)?;
        for x in feats[pick] {
            h.update(&x.to_le_bytes());
        }
        let victim = idx[pick];
        let reward = volume.run_gc(victim)?;
        let sample = if rng.next_u64() & 1 == 0 {
            RewardSample::ml(i as u64, reward, 1)
        } else {
            RewardSample::baseline(i as u64, reward)
        };
        windows.record(sample).expect("samples are well-formed");
        h.update(&victim.to_le_bytes());
        h.update(&reward.to_le_bytes());
        match windows.efficiency_ratio() {
            Some(r) => h.update(&r.to_le_bytes()),
            None => h.update(b"NA"),
        }
    }
    Ok(h.finalize())
}
