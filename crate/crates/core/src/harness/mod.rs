//! Configuration loading, simulation, verification suites and the CLI.

pub mod cli;
pub mod config;
pub mod simulate;
pub mod verify;

pub use cli::run_cli;
pub use config::{load_scenario, parse_scenario, ScenarioConfig};
pub use simulate::{simulate, SimulationOutput, StepResult};
pub use verify::{run_suite, SuiteReport, SUITES};
