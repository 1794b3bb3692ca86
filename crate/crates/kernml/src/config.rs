//! Line-based `key = value` scenario configuration. `#` starts a comment,
//! unknown keys are rejected, every key has a default.

use std::path::PathBuf;
use std::str::FromStr;

use kernml_core::gc_sim::Ratio;
use kernml_core::kernel::{Baseline, KernelConfig};
use kernml_core::{Fx32, Mode};

use crate::error::{HarnessError, Result};
use crate::transport::Endpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    /// Built-in agent installing the greedy-equivalent program.
    Reference,
    /// Built-in stub installing a program that picks the fullest segment.
    Adversarial,
    /// Out-of-process agent connecting to `listen`.
    External,
    /// No agent; the proxy runs baseline-only.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    Inproc,
    Stream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioConfig {
    pub n_segments: u32,
    pub blocks_per_segment: u32,
    /// Defaults to 80% of raw capacity.
    pub logical_blocks: Option<u32>,
    pub hot_fraction: Ratio,
    pub hot_write_share: Ratio,
    pub seed: u64,
    pub steps: u64,
    /// Stop after this many GC decisions; 0 means no limit.
    pub max_decisions: u64,
    pub initial_mode: Mode,
    pub kernel: KernelConfig,
    pub gc_watermark: Fx32,
    pub gc_batch: u32,
    /// GC decisions between unsolicited dataset publications; 0 disables.
    pub publish_interval: u64,
    pub transport: TransportKind,
    pub agent: AgentKind,
    pub listen: Endpoint,
    pub accept_timeout_ms: u64,
    /// Feedback frames between built-in agent re-sends; 0 sends once.
    pub agent_refresh: u64,
    pub report: Option<PathBuf>,
    pub format: ReportFormat,
    /// Append every frame sent to the agent to this store file.
    pub capture: Option<PathBuf>,
    /// Mirror the attribute tree as files under this directory.
    pub attr_root: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_segments: 512,
            blocks_per_segment: 8,
            logical_blocks: None,
            hot_fraction: Ratio::new(1, 10),
            hot_write_share: Ratio::new(9, 10),
            seed: 1,
            steps: 100_000,
            max_decisions: 0,
            initial_mode: Mode::Learning,
            kernel: KernelConfig::default(),
            gc_watermark: Fx32::from_raw(6554),
            gc_batch: 1,
            publish_interval: 256,
            transport: TransportKind::Inproc,
            agent: AgentKind::Reference,
            listen: Endpoint::Tcp("127.0.0.1:7878".into()),
            accept_timeout_ms: 5000,
            agent_refresh: 1024,
            report: None,
            format: ReportFormat::Csv,
            capture: None,
            attr_root: None,
        }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ScenarioConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| HarnessError::config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    /// Apply one `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let p = &mut self.kernel.proxy;
        match key {
            "n_segments" => self.n_segments = int(value)?,
            "blocks_per_segment" => self.blocks_per_segment = int(value)?,
            "logical_blocks" => self.logical_blocks = Some(int(value)?),
            "hot_fraction" => self.hot_fraction = ratio(value)?,
            "hot_write_share" => self.hot_write_share = ratio(value)?,
            "seed" => self.seed = int(value)?,
            "steps" => self.steps = int(value)?,
            "max_decisions" => self.max_decisions = int(value)?,
            "initial_mode" => {
                self.initial_mode = Mode::parse(value).ok_or_else(|| format!("unknown mode {value:?}"))?
            }
            "learn_fraction" => {
                let r = ratio(value)?;
                p.learn_numerator = r.num;
                p.learn_denominator = r.den;
            }
            "promote_collab_threshold" => p.promote_collab_threshold = fixed(value)?,
            "promote_rec_threshold" => p.promote_rec_threshold = fixed(value)?,
            "demote_threshold" => p.demote_threshold = fixed(value)?,
            "min_ml_samples_collab" => p.min_ml_samples_collab = int(value)?,
            "min_ml_samples_rec" => p.min_ml_samples_rec = int(value)?,
            "max_rec_age_decisions" => p.max_rec_age_decisions = int(value)?,
            "window" => p.window_capacity = int(value)?,
            "assessment_interval" => p.assessment_interval = int(value)?,
            "baseline" => {
                self.kernel.baseline = match value {
                    "greedy" => Baseline::Greedy,
                    "cost_benefit" => Baseline::CostBenefit,
                    _ => return Err(format!("unknown baseline {value:?}")),
                }
            }
            "ring_capacity" => self.kernel.ring_capacity = int(value)?,
            "feedback_capacity" => self.kernel.feedback_capacity = int(value)?,
            "gc_watermark" => self.gc_watermark = fixed(value)?,
            "gc_batch" => self.gc_batch = int(value)?,
            "publish_interval" => self.publish_interval = int(value)?,
            "transport" => {
                self.transport = match value {
                    "inproc" => TransportKind::Inproc,
                    "stream" => TransportKind::Stream,
                    _ => return Err(format!("unknown transport {value:?}")),
                }
            }
            "agent" => self.agent = agent(value)?,
            "listen" => self.listen = value.parse()?,
            "accept_timeout_ms" => self.accept_timeout_ms = int(value)?,
            "agent_refresh" => self.agent_refresh = int(value)?,
            "report" => self.report = Some(PathBuf::from(value)),
            "format" => self.format = format(value)?,
            "capture" => self.capture = Some(PathBuf::from(value)),
            "attr_root" => self.attr_root = Some(PathBuf::from(value)),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.proxy.validate().map_err(|e| HarnessError::config(e.to_string()))?;
        if self.blocks_per_segment == 0 || self.n_segments < 2 {
            return Err(HarnessError::config("need n_segments >= 2 and blocks_per_segment >= 1"));
        }
        if !self.hot_fraction.is_proper() || !self.hot_write_share.is_proper() {
            return Err(HarnessError::config("hot_fraction and hot_write_share must lie in (0, 1)"));
        }
        if self.kernel.ring_capacity == 0 || self.kernel.feedback_capacity == 0 {
            return Err(HarnessError::config("queue capacities must be positive"));
        }
        if self.agent == AgentKind::External && self.transport != TransportKind::Stream {
            return Err(HarnessError::config("agent = external needs transport = stream"));
        }
        Ok(())
    }

    pub fn effective_logical_blocks(&self) -> u32 {
        self.logical_blocks
            .unwrap_or((self.n_segments as u64 * self.blocks_per_segment as u64 * 4 / 5) as u32)
    }
}

fn int<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.replace('_', "").parse().map_err(|_| format!("expected an integer, got {v:?}"))
}

/// `a/b` or a plain decimal, as an exact fraction.
fn fraction(v: &str) -> std::result::Result<(i64, i64), String> {
    let bad = || format!("expected a decimal or a/b ratio, got {v:?}");
    if let Some((n, d)) = v.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| bad())?;
        let d: i64 = d.trim().parse().map_err(|_| bad())?;
        if d <= 0 {
            return Err(bad());
        }
        return Ok((n, d));
    }
    let (neg, digits) = match v.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, v),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if frac_part.len() > 9
        || int_part.is_empty() && frac_part.is_empty()
        || !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    let den = 10i64.pow(frac_part.len() as u32);
    let whole: i64 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| bad())? };
    let frac: i64 = if frac_part.is_empty() { 0 } else { frac_part.parse().map_err(|_| bad())? };
    let num = whole.checked_mul(den).and_then(|w| w.checked_add(frac)).ok_or_else(bad)?;
    Ok((if neg { -num } else { num }, den))
}

/// Fixed-point value: decimal, `a/b`, or `raw:N`.
fn fixed(v: &str) -> std::result::Result<Fx32, String> {
    if let Some(raw) = v.strip_prefix("raw:") {
        return int::<i32>(raw).map(Fx32::from_raw);
    }
    let (n, d) = fraction(v)?;
    Fx32::from_ratio(n, d).map_err(|e| e.to_string())
}

fn ratio(v: &str) -> std::result::Result<Ratio, String> {
    let (n, d) = fraction(v)?;
    let g = gcd(n.unsigned_abs(), d as u64).max(1);
    let (n, d) = (n / g as i64, d / g as i64);
    match (u32::try_from(n), u32::try_from(d)) {
        (Ok(num), Ok(den)) => Ok(Ratio::new(num, den)),
        _ => Err(format!("ratio {v:?} out of range")),
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn agent(v: &str) -> std::result::Result<AgentKind, String> {
    match v {
        "reference" => Ok(AgentKind::Reference),
        "adversarial" => Ok(AgentKind::Adversarial),
        "external" => Ok(AgentKind::External),
        "none" => Ok(AgentKind::None),
        _ => Err(format!("unknown agent {v:?}")),
    }
}

fn format(v: &str) -> std::result::Result<ReportFormat, String> {
    match v {
        "text" => Ok(ReportFormat::Text),
        "csv" => Ok(ReportFormat::Csv),
        _ => Err(format!("unknown format {v:?}")),
    }
}

impl FromStr for AgentKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        agent(s)
    }
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        format(s)
    }
}

/// Convenience for tests and the CLI: defaults with a few overrides.
pub fn with_overrides(pairs: &[(&str, &str)]) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::default();
    for (k, v) in pairs {
        cfg.set(k, v).map_err(HarnessError::Config)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty() {
        assert_eq!(ScenarioConfig::parse("").unwrap(), ScenarioConfig::default());
        assert_eq!(ScenarioConfig::default().effective_logical_blocks(), 3276);
    }

    #[test]
    fn keys_and_comments() {
        let c = ScenarioConfig::parse(
            "# geometry\nn_segments = 128\nblocks_per_segment=16 # inline\n\
             hot_fraction = 0.2\nseed = 7\ngc_watermark = 1/20\ninitial_mode = collaboration\n",
        )
        .unwrap();
        assert_eq!(c.n_segments, 128);
        assert_eq!(c.blocks_per_segment, 16);
        assert_eq!(c.hot_fraction, Ratio::new(1, 5));
        assert_eq!(c.seed, 7);
        assert_eq!(c.gc_watermark, Fx32::from_raw(3277));
        assert_eq!(c.initial_mode, Mode::Collaboration);
    }

    #[test]
    fn unknown_key_rejected() {
        let e = ScenarioConfig::parse("colour = blue").unwrap_err();
        assert!(e.to_string().contains("unknown key"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn malformed_values_rejected() {
        assert!(ScenarioConfig::parse("steps = many").is_err());
        assert!(ScenarioConfig::parse("hot_fraction = 1.5").is_err());
        assert!(ScenarioConfig::parse("no equals sign").is_err());
        assert!(ScenarioConfig::parse("demote_threshold = 2.0").is_err());
        assert!(ScenarioConfig::parse("agent = external").is_err());
    }

    #[test]
    fn fixed_point_forms() {
        assert_eq!(fixed("0.9").unwrap(), Fx32::from_raw(58982));
        assert_eq!(fixed("1.05").unwrap(), Fx32::from_raw(68813));
        assert_eq!(fixed("raw:65536").unwrap(), Fx32::ONE);
        assert_eq!(fixed("-.5").unwrap(), Fx32::from_raw(-32768));
        assert!(fixed(".").is_err());
        assert!(fixed("1/0").is_err());
    }
}
