//! Recommendations from the agent: validation, installation, and execution
//! of synthesized decision-tree logic in fixed point.
//!
//! A [`TreeProgram`] is verified once before installation (bounded size,
//! forward-only child links, bounded depth, in-range features) so that
//! [`eval_tree`] needs no further checks to terminate.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::fxp::Fx32;
use crate::proxy::{MlModelProxy, Op, ProxyError};
use crate::wire::Reader;

pub const MAX_NODES: usize = 1024;
/// Longest root-to-leaf path, counted in nodes.
pub const MAX_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("feature arity mismatch: expected {expected}, got {got}")]
    Schema { expected: usize, got: usize },
    #[error("no candidates")]
    NoCandidates,
    #[error("recommendation {rec_id} rejected")]
    Rejected { rec_id: u64, report: ValidationReport },
    #[error("malformed recommendation payload")]
    Malformed,
    #[error(transparent)]
    Proxy(#[from] ProxyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecKind {
    Config = 0,
    Logic = 1,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigSet {
    pub entries: Vec<(u16, Fx32)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TreeNode {
    pub is_leaf: bool,
    pub feature_idx: u16,
    pub threshold: Fx32,
    pub left: u16,
    pub right: u16,
    pub leaf_value: Fx32,
}

impl TreeNode {
    pub fn leaf(value: Fx32) -> Self {
        TreeNode { is_leaf: true, leaf_value: value, ..TreeNode::default() }
    }

    pub fn split(feature_idx: u16, threshold: Fx32, left: u16, right: u16) -> Self {
        TreeNode { is_leaf: false, feature_idx, threshold, left, right, leaf_value: Fx32::ZERO }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeProgram {
    pub feature_count: u16,
    pub default_action: Fx32,
    pub nodes: Vec<TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecBody {
    Config(ConfigSet),
    Logic(TreeProgram),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recommendation {
    pub rec_id: u64,
    pub body: RecBody,
}

impl Recommendation {
    pub fn kind(&self) -> RecKind {
        match self.body {
            RecBody::Config(_) => RecKind::Config,
            RecBody::Logic(_) => RecKind::Logic,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&self.rec_id.to_le_bytes());
        v.push(self.kind() as u8);
        match &self.body {
            RecBody::Config(c) => {
                v.extend_from_slice(&(c.entries.len() as u16).to_le_bytes());
                for (k, val) in &c.entries {
                    v.extend_from_slice(&k.to_le_bytes());
                    v.extend_from_slice(&val.to_le_bytes());
                }
            }
            RecBody::Logic(t) => {
                v.extend_from_slice(&(t.nodes.len() as u16).to_le_bytes());
                v.extend_from_slice(&t.feature_count.to_le_bytes());
                v.extend_from_slice(&t.default_action.to_le_bytes());
                for n in &t.nodes {
                    v.push(n.is_leaf as u8);
                    v.extend_from_slice(&n.feature_idx.to_le_bytes());
                    v.extend_from_slice(&n.threshold.to_le_bytes());
                    v.extend_from_slice(&n.left.to_le_bytes());
                    v.extend_from_slice(&n.right.to_le_bytes());
                    v.extend_from_slice(&n.leaf_value.to_le_bytes());
                }
            }
        }
        v
    }

    pub fn decode(b: &[u8]) -> Result<Recommendation, PolicyError> {
        let mut r = Reader::new(b);
        let bad = |_| PolicyError::Malformed;
        let rec_id = r.u64().map_err(bad)?;
        let body = match r.u8().map_err(bad)? {
            0 => {
                let n = r.u16().map_err(bad)?;
                let entries =
                    (0..n).map(|_| Ok((r.u16()?, r.fx()?))).collect::<Result<Vec<_>, _>>().map_err(bad)?;
                RecBody::Config(ConfigSet { entries })
            }
            1 => {
                let node_count = r.u16().map_err(bad)?;
                let feature_count = r.u16().map_err(bad)?;
                let default_action = r.fx().map_err(bad)?;
                // 15 bytes per node; reject counts the payload cannot hold.
                if r.remaining() != node_count as usize * 15 {
                    return Err(PolicyError::Malformed);
                }
                let nodes = (0..node_count)
                    .map(|_| {
                        let flag = r.u8()?;
                        Ok(TreeNode {
                            is_leaf: flag != 0,
                            feature_idx: r.u16()?,
                            threshold: r.fx()?,
                            left: r.u16()?,
                            right: r.u16()?,
                            leaf_value: r.fx()?,
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(bad)?;
                RecBody::Logic(TreeProgram { feature_count, default_action, nodes })
            }
            _ => return Err(PolicyError::Malformed),
        };
        if !r.is_empty() {
            return Err(PolicyError::Malformed);
        }
        Ok(Recommendation { rec_id, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationCode {
    TooManyNodes = 1,
    IndexOutOfRange = 2,
    CycleRisk = 3,
    FeatureOutOfRange = 4,
    DepthExceeded = 5,
    SchemaMismatch = 6,
    UnknownKnob = 7,
    KnobOutOfBounds = 8,
    DuplicateKnob = 9,
    StaleRecId = 10,
}

impl ViolationCode {
    pub fn from_u8(v: u8) -> Option<ViolationCode> {
        use ViolationCode::*;
        [
            TooManyNodes,
            IndexOutOfRange,
            CycleRisk,
            FeatureOutOfRange,
            DepthExceeded,
            SchemaMismatch,
            UnknownKnob,
            KnobOutOfBounds,
            DuplicateKnob,
            StaleRecId,
        ]
        .into_iter()
        .find(|c| *c as u8 == v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub code: ViolationCode,
    /// Node index or knob key id.
    pub at: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, code: ViolationCode, at: usize) {
        self.violations.push(Violation { code, at: at as u32 });
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Knob {
    pub key_id: u16,
    pub name: String,
    pub min: Fx32,
    pub max: Fx32,
    /// Value must be a whole number.
    pub integral: bool,
    pub value: Fx32,
}

/// Registry of tunable subsystem parameters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnobTable {
    knobs: Vec<Knob>,
}

impl KnobTable {
    pub fn new(knobs: Vec<Knob>) -> Self {
        KnobTable { knobs }
    }

    pub fn get(&self, key_id: u16) -> Option<&Knob> {
        self.knobs.iter().find(|k| k.key_id == key_id)
    }

    pub fn value(&self, key_id: u16) -> Option<Fx32> {
        self.get(key_id).map(|k| k.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Knob> {
        self.knobs.iter()
    }

    pub(crate) fn set(&mut self, key_id: u16, value: Fx32) {
        if let Some(k) = self.knobs.iter_mut().find(|k| k.key_id == key_id) {
            k.value = value;
        }
    }
}

pub fn validate(rec: &Recommendation, knobs: &KnobTable, feature_count: usize) -> ValidationReport {
    let mut report = ValidationReport::default();
    match &rec.body {
        RecBody::Config(c) => validate_config(c, knobs, &mut report),
        RecBody::Logic(t) => validate_tree(t, feature_count, &mut report),
    }
    report
}

fn validate_config(c: &ConfigSet, knobs: &KnobTable, report: &mut ValidationReport) {
    for (i, &(key, value)) in c.entries.iter().enumerate() {
        if c.entries[..i].iter().any(|(k, _)| *k == key) {
            report.push(ViolationCode::DuplicateKnob, key as usize);
        }
        match knobs.get(key) {
            None => report.push(ViolationCode::UnknownKnob, key as usize),
            Some(k) => {
                let whole = value.raw() & 0xFFFF == 0;
                if value < k.min || value > k.max || (k.integral && !whole) {
                    report.push(ViolationCode::KnobOutOfBounds, key as usize);
                }
            }
        }
    }
}

fn validate_tree(t: &TreeProgram, feature_count: usize, report: &mut ValidationReport) {
    let n = t.nodes.len();
    if n > MAX_NODES {
        report.push(ViolationCode::TooManyNodes, n);
        return;
    }
    if t.feature_count as usize != feature_count {
        report.push(ViolationCode::SchemaMismatch, t.feature_count as usize);
    }
    let mut links_ok = true;
    for (i, node) in t.nodes.iter().enumerate() {
        if node.is_leaf {
            continue;
        }
        if node.feature_idx >= t.feature_count {
            report.push(ViolationCode::FeatureOutOfRange, i);
        }
        for child in [node.left as usize, node.right as usize] {
            if child <= i {
                report.push(ViolationCode::CycleRisk, i);
                links_ok = false;
            } else if child >= n {
                report.push(ViolationCode::IndexOutOfRange, i);
                links_ok = false;
            }
        }
    }
    if links_ok && n > 0 && tree_depth(t) > MAX_DEPTH {
        report.push(ViolationCode::DepthExceeded, 0);
    }
}

/// Nodes on the longest path from the root. Requires forward, in-range
/// child links.
pub fn tree_depth(t: &TreeProgram) -> usize {
    let mut depth = alloc::vec![0usize; t.nodes.len()];
    for i in (0..t.nodes.len()).rev() {
        let node = &t.nodes[i];
        depth[i] =
            if node.is_leaf { 1 } else { 1 + depth[node.left as usize].max(depth[node.right as usize]) };
    }
    depth.first().copied().unwrap_or(0)
}

/// Walk from the root: `features[idx] <= threshold` goes left.
pub fn eval_tree(program: &TreeProgram, features: &[Fx32]) -> Result<Fx32, PolicyError> {
    if features.len() != program.feature_count as usize {
        return Err(PolicyError::Schema { expected: program.feature_count as usize, got: features.len() });
    }
    Ok(walk(program, features).0)
}

/// Score and number of nodes visited.
pub fn walk(program: &TreeProgram, features: &[Fx32]) -> (Fx32, usize) {
    let mut idx = 0usize;
    for visits in 1..=MAX_DEPTH {
        let Some(node) = program.nodes.get(idx) else {
            return (program.default_action, visits - 1);
        };
        if node.is_leaf {
            return (node.leaf_value, visits);
        }
        let Some(&x) = features.get(node.feature_idx as usize) else {
            return (program.default_action, visits);
        };
        idx = if x <= node.threshold { node.left as usize } else { node.right as usize };
    }
    (program.default_action, MAX_DEPTH)
}

/// Index of the highest-scoring candidate; ties go to the lowest index.
pub fn select_by_logic<'a, I>(program: &TreeProgram, candidates: I) -> Result<usize, PolicyError>
where
    I: IntoIterator<Item = &'a [Fx32]>,
{
    let mut best: Option<(usize, Fx32)> = None;
    for (i, features) in candidates.into_iter().enumerate() {
        let score = eval_tree(program, features)?;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    best.map(|(i, _)| i).ok_or(PolicyError::NoCandidates)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstalledRec<T> {
    pub rec_id: u64,
    pub installed_at_decision: u64,
    pub body: Arc<T>,
}

/// One active recommendation per kind.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Installed {
    pub config: Option<InstalledRec<ConfigSet>>,
    pub logic: Option<InstalledRec<TreeProgram>>,
}

impl Installed {
    /// Shared handle to the active program; a later install swaps the handle
    /// and leaves this one intact.
    pub fn active_logic(&self) -> Option<(u64, Arc<TreeProgram>)> {
        self.logic.as_ref().map(|l| (l.rec_id, Arc::clone(&l.body)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckStatus {
    Installed = 0,
    Rejected = 1,
    IllegalState = 2,
    Malformed = 3,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecAck {
    pub rec_id: u64,
    pub status: AckStatus,
    pub codes: Vec<u8>,
}

impl RecAck {
    pub fn installed(rec_id: u64) -> Self {
        RecAck { rec_id, status: AckStatus::Installed, codes: Vec::new() }
    }

    pub fn for_error(rec_id: u64, err: &PolicyError) -> Self {
        let (status, codes) = match err {
            PolicyError::Rejected { report, .. } => {
                (AckStatus::Rejected, report.violations.iter().map(|v| v.code as u8).collect())
            }
            PolicyError::Proxy(_) => (AckStatus::IllegalState, Vec::new()),
            _ => (AckStatus::Malformed, Vec::new()),
        };
        RecAck { rec_id, status, codes }
    }

    pub fn encode(&self) -> Vec<u8> {
        let n = self.codes.len().min(u8::MAX as usize);
        let mut v = Vec::with_capacity(10 + n);
        v.extend_from_slice(&self.rec_id.to_le_bytes());
        v.push(self.status as u8);
        v.push(n as u8);
        v.extend_from_slice(&self.codes[..n]);
        v
    }

    pub fn decode(b: &[u8]) -> Result<RecAck, PolicyError> {
        let mut r = Reader::new(b);
        let bad = |_| PolicyError::Malformed;
        let rec_id = r.u64().map_err(bad)?;
        let status = match r.u8().map_err(bad)? {
            0 => AckStatus::Installed,
            1 => AckStatus::Rejected,
            2 => AckStatus::IllegalState,
            3 => AckStatus::Malformed,
            _ => return Err(PolicyError::Malformed),
        };
        let n = r.u8().map_err(bad)?;
        let codes = r.take(n as usize).map_err(bad)?.to_vec();
        if !r.is_empty() {
            return Err(PolicyError::Malformed);
        }
        Ok(RecAck { rec_id, status, codes })
    }
}

/// Validate and install `rec`, replacing any active recommendation of the
/// same kind. Config recommendations are applied to `knobs` immediately.
pub fn install(
    proxy: &mut MlModelProxy,
    rec: Recommendation,
    knobs: &mut KnobTable,
    feature_count: usize,
) -> Result<RecAck, PolicyError> {
    proxy.require_running(Op::Install)?;
    let mut report = validate(&rec, knobs, feature_count);
    if proxy.last_rec_id().is_some_and(|last| rec.rec_id <= last) {
        report.push(ViolationCode::StaleRecId, 0);
    }
    if !report.ok() {
        return Err(PolicyError::Rejected { rec_id: rec.rec_id, report });
    }
    let at = proxy.stats().decision_counter;
    let rec_id = rec.rec_id;
    proxy.set_last_rec_id(rec_id);
    match rec.body {
        RecBody::Config(c) => {
            for &(k, v) in &c.entries {
                knobs.set(k, v);
            }
            proxy.installed_mut().config =
                Some(InstalledRec { rec_id, installed_at_decision: at, body: Arc::new(c) });
        }
        RecBody::Logic(t) => {
            proxy.installed_mut().logic =
                Some(InstalledRec { rec_id, installed_at_decision: at, body: Arc::new(t) });
        }
    }
    Ok(RecAck::installed(rec_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proxy::ProxyConfig;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn fx(r: i32) -> Fx32 {
        Fx32::from_raw(r)
    }

    fn knobs() -> KnobTable {
        KnobTable::new(vec![Knob {
            key_id: 1,
            name: "k".to_string(),
            min: Fx32::ZERO,
            max: Fx32::ONE,
            integral: false,
            value: fx(100),
        }])
    }

    fn logic(rec_id: u64, t: TreeProgram) -> Recommendation {
        Recommendation { rec_id, body: RecBody::Logic(t) }
    }

    fn single_leaf(v: i32) -> TreeProgram {
        TreeProgram { feature_count: 1, default_action: Fx32::ZERO, nodes: vec![TreeNode::leaf(fx(v))] }
    }

    fn stump() -> TreeProgram {
        TreeProgram {
            feature_count: 1,
            default_action: Fx32::ZERO,
            nodes: vec![
                TreeNode::split(0, fx(32768), 1, 2),
                TreeNode::leaf(fx(100)),
                TreeNode::leaf(fx(200)),
            ],
        }
    }

    fn running() -> MlModelProxy {
        let mut p = MlModelProxy::create(ProxyConfig::default()).unwrap();
        p.initialize().unwrap();
        p.start().unwrap();
        p
    }

    #[test]
    fn validation_examples() {
        let k = knobs();
        assert!(validate(&logic(1, single_leaf(1)), &k, 1).ok());

        let mut t = stump();
        t.nodes[0].left = 0;
        let r = validate(&logic(1, t), &k, 1);
        assert_eq!(r.violations, vec![Violation { code: ViolationCode::CycleRisk, at: 0 }]);

        let cfg =
            Recommendation { rec_id: 1, body: RecBody::Config(ConfigSet { entries: vec![(9, Fx32::ZERO)] }) };
        assert!(validate(&cfg, &k, 1).has(ViolationCode::UnknownKnob));

        let cfg =
            Recommendation { rec_id: 1, body: RecBody::Config(ConfigSet { entries: vec![(1, fx(70000))] }) };
        assert!(validate(&cfg, &k, 1).has(ViolationCode::KnobOutOfBounds));
    }

    #[test]
    fn structural_violations() {
        let k = knobs();
        let mut t = stump();
        t.nodes[0].right = 7;
        assert!(validate(&logic(1, t), &k, 1).has(ViolationCode::IndexOutOfRange));
        let mut t = stump();
        t.nodes[0].feature_idx = 3;
        assert!(validate(&logic(1, t), &k, 1).has(ViolationCode::FeatureOutOfRange));
        assert!(validate(&logic(1, stump()), &k, 4).has(ViolationCode::SchemaMismatch));
        let big = TreeProgram {
            feature_count: 1,
            default_action: Fx32::ZERO,
            nodes: vec![TreeNode::leaf(Fx32::ZERO); MAX_NODES + 1],
        };
        assert!(validate(&logic(1, big), &k, 1).has(ViolationCode::TooManyNodes));
    }

    fn chain(depth: usize) -> TreeProgram {
        // `depth` nodes on the right spine: splits then a final leaf.
        let mut nodes = Vec::new();
        for i in 0..depth - 1 {
            let at = nodes.len() as u16;
            let _ = i;
            nodes.push(TreeNode::split(0, Fx32::ZERO, at + 1, at + 2));
            nodes.push(TreeNode::leaf(fx(i as i32)));
        }
        nodes.push(TreeNode::leaf(fx(-1)));
        TreeProgram { feature_count: 1, default_action: Fx32::ZERO, nodes }
    }

    #[test]
    fn depth_bound() {
        assert_eq!(tree_depth(&chain(16)), 16);
        assert!(validate(&logic(1, chain(16)), &knobs(), 1).ok());
        assert!(validate(&logic(1, chain(17)), &knobs(), 1).has(ViolationCode::DepthExceeded));
        let (score, visits) = walk(&chain(16), &[Fx32::ONE]);
        assert_eq!((score, visits), (fx(-1), 16));
    }

    #[test]
    fn eval_examples() {
        assert_eq!(eval_tree(&single_leaf(42), &[fx(999)]).unwrap(), fx(42));
        assert_eq!(eval_tree(&stump(), &[fx(32768)]).unwrap(), fx(100));
        assert_eq!(eval_tree(&stump(), &[fx(32769)]).unwrap(), fx(200));
        let empty = TreeProgram { feature_count: 0, default_action: fx(7), nodes: vec![] };
        assert_eq!(eval_tree(&empty, &[]).unwrap(), fx(7));
        assert!(matches!(eval_tree(&stump(), &[]), Err(PolicyError::Schema { .. })));
    }

    #[test]
    fn select_examples() {
        // identity-ish tree: score = leaf chosen by feature value
        let t = TreeProgram {
            feature_count: 1,
            default_action: Fx32::ZERO,
            nodes: vec![
                TreeNode::split(0, fx(15), 1, 2),
                TreeNode::leaf(fx(10)),
                TreeNode::split(0, fx(25), 3, 4),
                TreeNode::leaf(fx(20)),
                TreeNode::leaf(fx(30)),
            ],
        };
        let c = [[fx(10)], [fx(30)], [fx(20)]];
        assert_eq!(select_by_logic(&t, c.iter().map(|v| &v[..])).unwrap(), 1);
        let same = [[fx(10)], [fx(10)]];
        assert_eq!(select_by_logic(&t, same.iter().map(|v| &v[..])).unwrap(), 0);
        assert_eq!(select_by_logic(&t, core::iter::empty::<&[Fx32]>()), Err(PolicyError::NoCandidates));
    }

    #[test]
    fn install_replaces_same_kind() {
        let mut p = running();
        let mut k = knobs();
        install(&mut p, logic(5, single_leaf(5)), &mut k, 1).unwrap();
        install(&mut p, logic(6, single_leaf(6)), &mut k, 1).unwrap();
        let (id, prog) = p.installed().active_logic().unwrap();
        assert_eq!(id, 6);
        assert_eq!(prog.nodes[0].leaf_value, fx(6));
    }

    #[test]
    fn install_requires_running() {
        let mut p = running();
        p.stop().unwrap();
        let err = install(&mut p, logic(1, single_leaf(1)), &mut knobs(), 1).unwrap_err();
        assert!(matches!(err, PolicyError::Proxy(ProxyError::IllegalState { .. })));
        assert_eq!(RecAck::for_error(1, &err).status, AckStatus::IllegalState);
    }

    #[test]
    fn install_config_updates_knobs() {
        let mut p = running();
        let mut k = knobs();
        let rec =
            Recommendation { rec_id: 1, body: RecBody::Config(ConfigSet { entries: vec![(1, fx(500))] }) };
        install(&mut p, rec, &mut k, 1).unwrap();
        assert_eq!(k.value(1), Some(fx(500)));
    }

    #[test]
    fn install_rejects_invalid_and_stale() {
        let mut p = running();
        let mut k = knobs();
        let mut t = stump();
        t.nodes[0].left = 0;
        let err = install(&mut p, logic(3, t), &mut k, 1).unwrap_err();
        let ack = RecAck::for_error(3, &err);
        assert_eq!(ack.status, AckStatus::Rejected);
        assert_eq!(ack.codes, vec![ViolationCode::CycleRisk as u8]);
        assert!(p.installed().logic.is_none());

        install(&mut p, logic(3, single_leaf(1)), &mut k, 1).unwrap();
        let err = install(&mut p, logic(3, single_leaf(1)), &mut k, 1).unwrap_err();
        assert!(
            matches!(err, PolicyError::Rejected { ref report, .. } if report.has(ViolationCode::StaleRecId))
        );
    }

    #[test]
    fn ack_roundtrip() {
        let a = RecAck { rec_id: 9, status: AckStatus::Rejected, codes: vec![3, 4] };
        assert_eq!(RecAck::decode(&a.encode()).unwrap(), a);
    }

    #[test]
    fn recommendation_codec() {
        let r = logic(77, stump());
        let b = r.encode();
        assert_eq!(b.len(), 8 + 1 + 2 + 2 + 4 + 3 * 15);
        assert_eq!(Recommendation::decode(&b).unwrap(), r);
        assert_eq!(Recommendation::decode(&b[..b.len() - 1]), Err(PolicyError::Malformed));
        let c = Recommendation {
            rec_id: 1,
            body: RecBody::Config(ConfigSet { entries: vec![(1, fx(5)), (2, fx(6))] }),
        };
        assert_eq!(c.encode().len(), 8 + 1 + 2 + 2 * 6);
        assert_eq!(Recommendation::decode(&c.encode()).unwrap(), c);
    }

    fn arb_tree() -> impl Strategy<Value = TreeProgram> {
        (1usize..40, 1u16..4).prop_flat_map(|(n, fc)| {
            proptest::collection::vec(
                (
                    any::<bool>(),
                    0..fc,
                    any::<i32>(),
                    0u16..(n as u16 + 2),
                    0u16..(n as u16 + 2),
                    any::<i32>(),
                ),
                n,
            )
            .prop_map(move |raw| TreeProgram {
                feature_count: fc,
                default_action: Fx32::from_raw(-7),
                nodes: raw
                    .into_iter()
                    .map(|(l, f, t, a, b, v)| TreeNode {
                        is_leaf: l,
                        feature_idx: f,
                        threshold: Fx32::from_raw(t),
                        left: a,
                        right: b,
                        leaf_value: Fx32::from_raw(v),
                    })
                    .collect(),
            })
        })
    }

    proptest! {
        #[test]
        fn valid_programs_terminate_within_bound(t in arb_tree(), xs in proptest::collection::vec(any::<i32>(), 3)) {
            let fc = t.feature_count as usize;
            let feats: Vec<Fx32> = xs[..fc].iter().map(|&x| Fx32::from_raw(x)).collect();
            let (_, visits) = walk(&t, &feats);
            prop_assert!(visits <= MAX_DEPTH);
            if validate(&logic(1, t.clone()), &KnobTable::default(), fc).ok() {
                let (score, visits) = walk(&t, &feats);
                prop_assert!(visits <= tree_depth(&t));
                // a verified program always ends on a leaf
                prop_assert!(t.nodes.iter().any(|n| n.is_leaf && n.leaf_value == score));
            }
        }

        #[test]
        fn appending_a_lower_candidate_keeps_selection(scores in proptest::collection::vec(0i32..14, 1..20), extra in 0i32..14) {
            // score = feature value, through a full threshold ladder
            let t = ladder(14);
            let cands: Vec<[Fx32; 1]> = scores.iter().map(|&s| [Fx32::from_raw(s)]).collect();
            let best = select_by_logic(&t, cands.iter().map(|c| &c[..])).unwrap();
            let max = *scores.iter().max().unwrap();
            prop_assume!(extra < max);
            let mut more = cands.clone();
            more.push([Fx32::from_raw(extra)]);
            prop_assert_eq!(select_by_logic(&t, more.iter().map(|c| &c[..])).unwrap(), best);
        }

        #[test]
        fn codec_roundtrip(t in arb_tree(), id in any::<u64>()) {
            let r = logic(id, t);
            prop_assert_eq!(Recommendation::decode(&r.encode()).unwrap(), r);
        }
    }

    // Chain of splits x <= k -> leaf k, for k in 0..n: scores raw feature value.
    fn ladder(n: i32) -> TreeProgram {
        let mut nodes = Vec::new();
        for k in 0..n {
            let at = nodes.len() as u16;
            nodes.push(TreeNode::split(0, Fx32::from_raw(k), at + 1, at + 2));
            nodes.push(TreeNode::leaf(Fx32::from_raw(k)));
        }
        nodes.push(TreeNode::leaf(Fx32::from_raw(n)));
        TreeProgram { feature_count: 1, default_action: Fx32::ZERO, nodes }
    }
}
