use kernml_core::gc_sim::{knob_table, utilization_tree, FEATURE_COUNT};
use kernml_core::policy::{install, PolicyError, RecBody, Recommendation};
use kernml_core::proxy::Op;
use kernml_core::{Fx32, Lifecycle, MlModelProxy, ProxyConfig, ProxyError};
use proptest::prelude::*;
use std::sync::atomic::{AtomicU64, Ordering};

static REC_ID: AtomicU64 = AtomicU64::new(1);

/// Expected successor state, or None when the pair must be refused.
fn oracle(from: Lifecycle, op: Op) -> Option<Lifecycle> {
    use Lifecycle::*;
    match (op, from) {
        (Op::Initialize, Created | Stopped) => Some(Initialized),
        (Op::Start, Initialized | Stopped) => Some(Running),
        (Op::Stop, Running) => Some(Stopped),
        (Op::Destroy, Created | Initialized | Running | Stopped) => Some(Destroyed),
        (Op::Arbitrate | Op::EfficiencyUpdate | Op::HandleCritical | Op::Install, Running) => Some(Running),
        _ => None,
    }
}

type Step = fn(&mut MlModelProxy) -> Result<(), ProxyError>;

fn proxy_in(state: Lifecycle) -> MlModelProxy {
    let mut p = MlModelProxy::create(ProxyConfig::default()).unwrap();
    let path: &[Step] = match state {
        Lifecycle::Created => &[],
        Lifecycle::Initialized => &[MlModelProxy::initialize],
        Lifecycle::Running => &[MlModelProxy::initialize, MlModelProxy::start],
        Lifecycle::Stopped => &[MlModelProxy::initialize, MlModelProxy::start, |p| p.stop().map(|_| ())],
        Lifecycle::Destroyed => &[MlModelProxy::destroy],
    };
    for step in path {
        step(&mut p).unwrap();
    }
    assert_eq!(p.lifecycle(), state);
    p
}

/// Apply `op`; Ok(true) when it succeeded, Ok(false) on a refusal of the
/// expected kind, Err on anything else.
fn apply(p: &mut MlModelProxy, op: Op) -> Result<bool, String> {
    let from = p.lifecycle();
    let res: Result<(), ProxyError> = match op {
        Op::Initialize => p.initialize(),
        Op::Start => p.start(),
        Op::Stop => p.stop().map(|_| ()),
        Op::Destroy => p.destroy(),
        Op::Arbitrate => p.arbitrate(false).map(|_| ()),
        Op::EfficiencyUpdate => p.on_efficiency_update(Fx32::ONE, 0).map(|_| ()),
        Op::HandleCritical => p.handle_critical(false).map(|_| ()),
        Op::Install => {
            let rec = Recommendation {
                rec_id: REC_ID.fetch_add(1, Ordering::Relaxed),
                body: RecBody::Logic(utilization_tree(8, true)),
            };
            match install(p, rec, &mut knob_table(), FEATURE_COUNT) {
                Ok(_) => Ok(()),
                Err(PolicyError::Proxy(e)) => Err(e),
                Err(e) => return Err(format!("install from {from}: unexpected {e:?}")),
            }
        }
    };
    match res {
        Ok(()) => Ok(true),
        Err(ProxyError::IllegalTransition { from: f, op: o }) if f == from && o == op => Ok(false),
        Err(ProxyError::IllegalState { state, op: o }) if state == from && o == op => Ok(false),
        Err(e) => Err(format!("{op:?} from {from}: unexpected {e:?}")),
    }
}

#[test]
fn every_state_operation_pair_matches_the_table() {
    let mut checked = 0;
    for state in Lifecycle::ALL {
        for op in Op::ALL {
            let mut p = proxy_in(state);
            let ok = apply(&mut p, op).unwrap();
            match oracle(state, op) {
                Some(next) => {
                    assert!(ok, "{op:?} from {state} should succeed");
                    assert_eq!(p.lifecycle(), next, "{op:?} from {state}");
                }
                None => {
                    assert!(!ok, "{op:?} from {state} should be refused");
                    assert_eq!(p.lifecycle(), state, "refused {op:?} changed state");
                }
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 40);
}

#[test]
fn reinitialize_empties_windows() {
    let mut p = proxy_in(Lifecycle::Running);
    p.arbitrate(false).unwrap();
    p.stop().unwrap();
    p.initialize().unwrap();
    assert_eq!(p.lifecycle(), Lifecycle::Initialized);
    assert_eq!(p.windows().ml().len() + p.windows().baseline().len(), 0);
    assert_eq!(p.stats().current_efficiency_ratio, None);
}

proptest! {
    #[test]
    fn random_sequences_follow_the_model(ops in proptest::collection::vec(0usize..8, 0..60)) {
        let mut p = MlModelProxy::create(ProxyConfig::default()).unwrap();
        let mut model = Lifecycle::Created;
        for i in ops {
            let op = Op::ALL[i];
            let ok = apply(&mut p, op).map_err(TestCaseError::fail)?;
            match oracle(model, op) {
                Some(next) => {
                    prop_assert!(ok);
                    model = next;
                }
                None => prop_assert!(!ok),
            }
            prop_assert_eq!(p.lifecycle(), model);
        }
    }
}
