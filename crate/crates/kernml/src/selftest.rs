//! `selftest`: short seeded runs with every maintained invariant recounted
//! after each step, plus a determinism and a framing check.

use kernml_core::gc_sim::SplitMix64;
use kernml_core::wire::{Frame, MsgType, StreamDecoder};
use kernml_core::Mode;

use crate::config::{AgentKind, ScenarioConfig};
use crate::harness::Testbed;
use crate::report::RunReport;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub name: String,
    pub outcome: Result<(), String>,
}

fn small(seed: u64, agent: AgentKind, mode: Mode) -> ScenarioConfig {
    ScenarioConfig {
        n_segments: 64,
        seed,
        steps: 4000,
        agent,
        initial_mode: mode,
        ..ScenarioConfig::default()
    }
}

fn checked_run(cfg: ScenarioConfig) -> Result<RunReport, String> {
    let mut tb = Testbed::new(cfg).map_err(|e| e.to_string())?;
    while tb.advance().map_err(|e| e.to_string())? {
        tb.check_invariants().map_err(|e| format!("step {}: {e}", tb.step()))?;
    }
    let report = tb.finish().map_err(|e| e.to_string())?;
    if report.ml_decisions + report.baseline_decisions != report.gc_decisions {
        return Err("report counts do not reconcile".into());
    }
    Ok(report)
}

fn csv(r: &RunReport) -> Vec<u8> {
    let mut out = Vec::new();
    r.write_csv(&mut out).expect("writing to a Vec cannot fail");
    out
}

fn framing(seed: u64) -> Result<(), String> {
    let mut rng = SplitMix64::new(seed);
    let frames: Vec<Frame> = (0..200)
        .map(|i| {
            let t = MsgType::ALL[i % MsgType::ALL.len()];
            let len = rng.below(300) as usize;
            Frame::new(t, (0..len).map(|_| rng.next_u64() as u8).collect())
        })
        .collect();
    let bytes: Vec<u8> = frames.iter().flat_map(|f| f.encode().unwrap()).collect();
    let mut dec = StreamDecoder::new();
    let mut got = Vec::new();
    let mut rest = &bytes[..];
    while !rest.is_empty() {
        let n = (1 + rng.below(97) as usize).min(rest.len());
        dec.push(&rest[..n]);
        rest = &rest[n..];
        while let Some(f) = dec.next_frame().map_err(|e| e.to_string())? {
            got.push(f);
        }
    }
    if got != frames {
        return Err(format!("reassembled {} of {} frames", got.len(), frames.len()));
    }
    Ok(())
}

pub fn run_selftest() -> Vec<CheckResult> {
    let mut results = Vec::new();
    let mut push = |name: String, outcome: Result<(), String>| {
        results.push(CheckResult { name, outcome });
    };
    for (seed, agent, mode) in [
        (1, AgentKind::Reference, Mode::Learning),
        (2, AgentKind::Reference, Mode::Recommendation),
        (3, AgentKind::Adversarial, Mode::Collaboration),
        (4, AgentKind::None, Mode::Learning),
    ] {
        let name = format!("invariants seed {seed} agent {agent:?} from {mode}");
        push(name, checked_run(small(seed, agent, mode)).map(|_| ()));
    }
    let twice = (|| {
        let a = checked_run(small(7, AgentKind::Reference, Mode::Learning))?;
        let b = checked_run(small(7, AgentKind::Reference, Mode::Learning))?;
        (csv(&a) == csv(&b)).then_some(()).ok_or_else(|| "CSV reports differ".to_string())
    })();
    push("determinism seed 7".into(), twice);
    push("frame reassembly".into(), framing(11));
    results
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        for r in run_selftest() {
            assert_eq!(r.outcome, Ok(()), "{}", r.name);
        }
    }
}
