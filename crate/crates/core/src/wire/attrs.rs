//! sysfs-like control plane. Read-only attributes mirror proxy state;
//! write-only attributes are triggers that accept "1".

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::proxy::{MlModelProxy, ProxyError, StatsSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    ReadOnly,
    WriteOnly,
}

pub const STATE: &str = "state";
pub const MODE: &str = "mode";
pub const START: &str = "start";
pub const STOP: &str = "stop";
pub const REINIT: &str = "reinit";
pub const DATASET_PUBLISH: &str = "dataset/publish";
pub const STATS_DECISIONS: &str = "stats/decision_counter";
pub const STATS_ML: &str = "stats/ml_decisions";
pub const STATS_BASELINE: &str = "stats/baseline_decisions";
pub const STATS_RATIO: &str = "stats/efficiency_ratio_raw";
pub const STATS_FEEDBACK_DROPPED: &str = "stats/feedback_dropped";

const LAYOUT: [(&str, Access); 11] = [
    (STATE, Access::ReadOnly),
    (MODE, Access::ReadOnly),
    (STATS_DECISIONS, Access::ReadOnly),
    (STATS_ML, Access::ReadOnly),
    (STATS_BASELINE, Access::ReadOnly),
    (STATS_RATIO, Access::ReadOnly),
    (STATS_FEEDBACK_DROPPED, Access::ReadOnly),
    (START, Access::WriteOnly),
    (STOP, Access::WriteOnly),
    (REINIT, Access::WriteOnly),
    (DATASET_PUBLISH, Access::WriteOnly),
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AttrError {
    #[error("no such attribute: {0}")]
    NoSuchAttribute(String),
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("invalid value for {0}")]
    InvalidValue(String),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
}

/// Side effect of a successful write the caller must carry out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttrEffect {
    None,
    /// `stop` flushed this snapshot.
    Stopped(StatsSnapshot),
    /// `dataset/publish` requested a push of the sample ring.
    PublishRequested,
}

#[derive(Debug, Clone)]
pub struct AttributeTree {
    layout: BTreeMap<&'static str, Access>,
    feedback_dropped: u64,
}

impl Default for AttributeTree {
    fn default() -> Self {
        AttributeTree { layout: LAYOUT.into_iter().collect(), feedback_dropped: 0 }
    }
}

impl AttributeTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn paths(&self) -> impl Iterator<Item = (&'static str, Access)> + '_ {
        self.layout.iter().map(|(p, a)| (*p, *a))
    }

    pub fn set_feedback_dropped(&mut self, n: u64) {
        self.feedback_dropped = n;
    }

    fn access(&self, path: &str) -> Result<Access, AttrError> {
        self.layout.get(path).copied().ok_or_else(|| AttrError::NoSuchAttribute(path.to_string()))
    }

    pub fn read(&self, proxy: &MlModelProxy, path: &str) -> Result<String, AttrError> {
        if self.access(path)? == Access::WriteOnly {
            return Err(AttrError::PermissionDenied(path.to_string()));
        }
        let stats = proxy.stats();
        let value = match path {
            STATE => proxy.lifecycle().as_str().to_string(),
            MODE => proxy.mode().as_str().to_string(),
            STATS_DECISIONS => stats.decision_counter.to_string(),
            STATS_ML => stats.ml_decisions.to_string(),
            STATS_BASELINE => stats.baseline_decisions.to_string(),
            STATS_RATIO => match stats.current_efficiency_ratio {
                Some(r) => r.raw().to_string(),
                None => "unavailable".to_string(),
            },
            STATS_FEEDBACK_DROPPED => self.feedback_dropped.to_string(),
            _ => unreachable!("layout and reader disagree on {path}"),
        };
        Ok(format!("{value}\n"))
    }

    pub fn write(
        &mut self,
        proxy: &mut MlModelProxy,
        path: &str,
        text: &str,
    ) -> Result<AttrEffect, AttrError> {
        if self.access(path)? == Access::ReadOnly {
            return Err(AttrError::PermissionDenied(path.to_string()));
        }
        if text.trim_end_matches('\n') != "1" {
            return Err(AttrError::InvalidValue(path.to_string()));
        }
        match path {
            START => proxy.start().map(|_| AttrEffect::None),
            STOP => proxy.stop().map(AttrEffect::Stopped),
            REINIT => proxy.initialize().map(|_| AttrEffect::None),
            DATASET_PUBLISH => Ok(AttrEffect::PublishRequested),
            _ => unreachable!("layout and writer disagree on {path}"),
        }
        .map_err(AttrError::from)
    }

    /// Every readable attribute with its current value.
    pub fn dump(&self, proxy: &MlModelProxy) -> Vec<(&'static str, String)> {
        self.paths()
            .filter(|(_, a)| *a == Access::ReadOnly)
            .filter_map(|(p, _)| self.read(proxy, p).ok().map(|v| (p, v)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proxy::{Lifecycle, ProxyConfig};

    fn proxy() -> MlModelProxy {
        MlModelProxy::create(ProxyConfig::default()).unwrap()
    }

    #[test]
    fn reads_mirror_proxy() {
        let tree = AttributeTree::new();
        let p = proxy();
        assert_eq!(tree.read(&p, MODE).unwrap(), "learning\n");
        assert_eq!(tree.read(&p, STATE).unwrap(), "created\n");
        assert_eq!(tree.read(&p, STATS_RATIO).unwrap(), "unavailable\n");
    }

    #[test]
    fn start_trigger() {
        let mut tree = AttributeTree::new();
        let mut p = proxy();
        p.initialize().unwrap();
        tree.write(&mut p, START, "1").unwrap();
        assert_eq!(tree.read(&p, STATE).unwrap(), "running\n");
        assert!(matches!(
            tree.write(&mut p, START, "1"),
            Err(AttrError::Proxy(ProxyError::IllegalTransition { .. }))
        ));
        match tree.write(&mut p, STOP, "1\n").unwrap() {
            AttrEffect::Stopped(s) => assert_eq!(s.state, Lifecycle::Stopped),
            other => panic!("{other:?}"),
        }
        tree.write(&mut p, REINIT, "1").unwrap();
        assert_eq!(p.lifecycle(), Lifecycle::Initialized);
    }

    #[test]
    fn permission_and_lookup_errors() {
        let mut tree = AttributeTree::new();
        let mut p = proxy();
        assert!(matches!(tree.read(&p, START), Err(AttrError::PermissionDenied(_))));
        assert!(matches!(tree.write(&mut p, MODE, "1"), Err(AttrError::PermissionDenied(_))));
        assert!(matches!(tree.read(&p, "nope"), Err(AttrError::NoSuchAttribute(_))));
        assert!(matches!(tree.write(&mut p, START, "0"), Err(AttrError::InvalidValue(_))));
        assert_eq!(tree.write(&mut p, DATASET_PUBLISH, "1"), Ok(AttrEffect::PublishRequested));
    }
}
