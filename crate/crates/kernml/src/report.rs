use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use kernml_core::proxy::ModeTransition;
use kernml_core::{Arm, Fx32, Lifecycle, Mode};

use crate::config::ReportFormat;
use crate::error::{HarnessError, Result};

pub const CSV_HEADER: &str = "step,mode,arm,reward_raw,ratio_raw,free_segments,wa_raw";

/// One row per GC decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRecord {
    pub step: u64,
    pub mode: Mode,
    pub arm: Arm,
    pub reward: Fx32,
    pub ratio: Option<Fx32>,
    pub free_segments: u32,
    pub wa: Option<Fx32>,
}

/// GC work attributed to one arm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ArmGc {
    pub decisions: u64,
    pub copies: u64,
    pub reclaimed_slots: u64,
}

impl ArmGc {
    /// `(reclaimed + copied) / reclaimed`: slots moved per slot the arm
    /// freed for user writes.
    pub fn write_amplification(&self) -> Option<Fx32> {
        (self.reclaimed_slots > 0).then(|| {
            Fx32::from_ratio((self.reclaimed_slots + self.copies) as i64, self.reclaimed_slots as i64)
                .unwrap_or(Fx32::MAX)
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeedbackCounts {
    pub enqueued: u64,
    pub sent: u64,
    pub dropped: u64,
    pub pending: u64,
    /// As counted by a built-in agent; absent for external agents.
    pub agent_received: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub seed: u64,
    pub steps: u64,
    pub gc_decisions: u64,
    pub final_state: Lifecycle,
    pub final_mode: Mode,
    /// Indexed by `Mode::code`.
    pub mode_decisions: [u64; 4],
    pub ml_decisions: u64,
    pub baseline_decisions: u64,
    pub transitions: Vec<ModeTransition>,
    pub final_ratio: Option<Fx32>,
    pub write_amplification: Option<Fx32>,
    pub ml_gc: ArmGc,
    pub baseline_gc: ArmGc,
    pub feedback: FeedbackCounts,
    /// ML decisions whose victim matched the greedy pick on the same state.
    pub ml_greedy_agree: u64,
    pub decisions_while_critical: u64,
    pub ml_while_critical: u64,
    /// Decision id of the first assessment whose ratio fell below the
    /// demotion threshold.
    pub first_low_ratio_at: Option<u64>,
    pub session_closes: Vec<String>,
    pub records: Vec<StepRecord>,
    pub wall_time: Duration,
}

fn raw(v: Option<Fx32>) -> String {
    v.map(|x| x.raw().to_string()).unwrap_or_else(|| "NA".into())
}

fn fx(v: Option<Fx32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "unavailable".into())
}

impl RunReport {
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.step,
                r.mode,
                r.arm.as_str(),
                r.reward.raw(),
                raw(r.ratio),
                r.free_segments,
                raw(r.wa),
            )?;
        }
        Ok(())
    }

    pub fn write_text(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "seed {} steps {} gc_decisions {}", self.seed, self.steps, self.gc_decisions)?;
        writeln!(w, "final state {} mode {}", self.final_state, self.final_mode)?;
        for m in Mode::ALL {
            writeln!(w, "decisions in {m}: {}", self.mode_decisions[m.code() as usize])?;
        }
        writeln!(w, "ml decisions {} baseline decisions {}", self.ml_decisions, self.baseline_decisions)?;
        writeln!(w, "efficiency ratio {}", fx(self.final_ratio))?;
        writeln!(w, "write amplification {}", fx(self.write_amplification))?;
        writeln!(w, "write amplification ml arm {}", fx(self.ml_gc.write_amplification()))?;
        writeln!(w, "write amplification baseline arm {}", fx(self.baseline_gc.write_amplification()))?;
        let f = &self.feedback;
        writeln!(
            w,
            "feedback enqueued {} sent {} dropped {} pending {} agent_received {}",
            f.enqueued,
            f.sent,
            f.dropped,
            f.pending,
            f.agent_received.map(|n| n.to_string()).unwrap_or_else(|| "n/a".into()),
        )?;
        writeln!(w, "ml decisions matching greedy {}", self.ml_greedy_agree)?;
        writeln!(
            w,
            "decisions while critical {} (ml {})",
            self.decisions_while_critical, self.ml_while_critical
        )?;
        for c in &self.session_closes {
            writeln!(w, "session closed: {c}")?;
        }
        writeln!(w, "mode transitions {}", self.transitions.len())?;
        for t in &self.transitions {
            writeln!(w, "transition at decision {}: {} -> {} ({})", t.tick, t.from, t.to, t.reason.as_str())?;
        }
        writeln!(w, "wall time {:.3} s", self.wall_time.as_secs_f64())?;
        Ok(())
    }

    pub fn write(&self, format: ReportFormat, w: &mut impl Write) -> io::Result<()> {
        match format {
            ReportFormat::Csv => self.write_csv(w),
            ReportFormat::Text => self.write_text(w),
        }
    }

    pub fn write_to_path(&self, format: ReportFormat, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(format, &mut w).and_then(|_| w.flush()).map_err(|e| HarnessError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kernml_core::proxy::TransitionReason;

    fn empty() -> RunReport {
        RunReport {
            seed: 1,
            steps: 0,
            gc_decisions: 0,
            final_state: Lifecycle::Stopped,
            final_mode: Mode::Learning,
            mode_decisions: [0; 4],
            ml_decisions: 0,
            baseline_decisions: 0,
            transitions: Vec::new(),
            final_ratio: None,
            write_amplification: None,
            ml_gc: ArmGc::default(),
            baseline_gc: ArmGc::default(),
            feedback: FeedbackCounts::default(),
            ml_greedy_agree: 0,
            decisions_while_critical: 0,
            ml_while_critical: 0,
            first_low_ratio_at: None,
            session_closes: Vec::new(),
            records: Vec::new(),
            wall_time: Duration::ZERO,
        }
    }

    #[test]
    fn empty_run_is_header_only() {
        let mut out = Vec::new();
        empty().write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn csv_rows() {
        let mut r = empty();
        r.records.push(StepRecord {
            step: 12,
            mode: Mode::Collaboration,
            arm: Arm::Ml,
            reward: Fx32::from_raw(52429),
            ratio: None,
            free_segments: 40,
            wa: Some(Fx32::ONE),
        });
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().nth(1), Some("12,collaboration,ml,52429,NA,40,65536"));
    }

    #[test]
    fn one_text_line_per_transition() {
        let mut r = empty();
        for (i, (from, to)) in [(Mode::Learning, Mode::Collaboration), (Mode::Collaboration, Mode::Learning)]
            .into_iter()
            .enumerate()
        {
            r.transitions.push(ModeTransition {
                tick: 32 * (i as u64 + 1),
                from,
                to,
                reason: TransitionReason::Promoted,
            });
        }
        let mut out = Vec::new();
        r.write_text(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("transition at")).count(), 2);
        assert!(text.contains("transition at decision 32: learning -> collaboration (promoted)"));
    }

    #[test]
    fn arm_write_amplification() {
        let a = ArmGc { decisions: 2, copies: 6, reclaimed_slots: 10 };
        assert_eq!(a.write_amplification(), Some(Fx32::from_ratio(16, 10).unwrap()));
        assert_eq!(ArmGc::default().write_amplification(), None);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let e =
            empty().write_to_path(ReportFormat::Csv, Path::new("/nonexistent-dir/x/report.csv")).unwrap_err();
        assert!(matches!(e, HarnessError::Io { .. }));
    }
}
