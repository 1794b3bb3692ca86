//! Host-side harness for the kernel proxy: scenario config, transports,
//! built-in agents, the simulation driver and reports.

pub mod agent;
pub mod attrfs;
pub mod config;
pub mod dump;
pub mod error;
pub mod harness;
pub mod report;
pub mod selftest;
pub mod transport;

pub use config::ScenarioConfig;
pub use error::{HarnessError, Result};
pub use harness::{run_scenario, Testbed};
pub use report::RunReport;
