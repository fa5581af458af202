//! Scenario files, figure runners and CSV/JSON output.

pub mod config;
pub mod figures;
pub mod runner;
pub mod selftest;

pub use config::{ScenarioConfig, ScenarioPoint, Scheme, SweepAxis};
pub use figures::{run_fig1, run_fig2, run_fig3, Fig2Report};
pub use runner::{run_scenario, ResultRow, ScenarioReport};
