use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kernml::config::{AgentKind, ReportFormat, ScenarioConfig, TransportKind};
use kernml::{dump, harness, selftest, HarnessError};

#[derive(Parser)]
#[command(name = "kernml", version, about = "GC proxy testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its report.
    Run(RunArgs),
    /// Wire protocol tools.
    Protocol {
        #[command(subcommand)]
        command: ProtocolCommand,
    },
    /// Run the invariant suite.
    Selftest,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// reference | adversarial | external | none
    #[arg(long)]
    agent: Option<String>,
    /// tcp:HOST:PORT or unix:PATH; selects the stream transport.
    #[arg(long)]
    listen: Option<String>,
    /// Report file; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// text | csv
    #[arg(long)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum ProtocolCommand {
    /// Decode a frame file.
    Dump { frame_file: PathBuf },
}

fn scenario(args: RunArgs) -> kernml::Result<ScenarioConfig> {
    let mut cfg = match &args.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    let mut set =
        |k: &str, v: String| cfg.set(k, &v).map_err(|e| HarnessError::config(format!("--{k}: {e}")));
    if let Some(s) = args.seed {
        set("seed", s.to_string())?;
    }
    if let Some(s) = args.steps {
        set("steps", s.to_string())?;
    }
    if let Some(a) = args.agent {
        set("agent", a)?;
    }
    if let Some(l) = args.listen {
        set("listen", l)?;
        set("transport", "stream".into())?;
    }
    if let Some(f) = args.format {
        set("format", f)?;
    }
    if let Some(r) = args.report {
        cfg.report = Some(r);
    }
    if cfg.agent == AgentKind::External {
        cfg.transport = TransportKind::Stream;
    }
    Ok(cfg)
}

fn run(args: RunArgs) -> kernml::Result<()> {
    let cfg = scenario(args)?;
    let format = cfg.format;
    let to_stdout = cfg.report.is_none();
    let report = harness::run_scenario(cfg)?;
    log::info!(
        "{} steps, {} GC decisions ({} ml), final mode {}",
        report.steps,
        report.gc_decisions,
        report.ml_decisions,
        report.final_mode
    );
    if to_stdout {
        let mut out = io::stdout().lock();
        report
            .write(format, &mut out)
            .and_then(|_| out.flush())
            .map_err(|e| HarnessError::io("stdout", e))?;
    } else if format == ReportFormat::Csv {
        let mut err = io::stderr().lock();
        let _ = report.write_text(&mut err);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KERNML_LOG", "error")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Protocol { command: ProtocolCommand::Dump { frame_file } } => {
            dump::dump_file(&frame_file, &mut io::stdout().lock()).and_then(|s| match s.stopped_at {
                Some((off, e)) => {
                    Err(HarnessError::Invariant(format!("undecodable frame at offset {off}: {e}")))
                }
                None => Ok(()),
            })
        }
        Command::Selftest => {
            let results = selftest::run_selftest();
            let failed = results.iter().filter(|r| r.outcome.is_err()).count();
            for r in &results {
                match &r.outcome {
                    Ok(()) => println!("ok   {}", r.name),
                    Err(e) => println!("FAIL {}: {e}", r.name),
                }
            }
            if failed == 0 {
                Ok(())
            } else {
                Err(HarnessError::Invariant(format!("{failed} of {} checks failed", results.len())))
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kernml: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
