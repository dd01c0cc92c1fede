//! Scenario files, synthetic instances, experiments and their outputs.

pub mod emit;
pub mod experiment;
pub mod generate;
pub mod scenario;

pub use emit::{execute, replay, Command, Execution, RunManifest};
pub use experiment::{
    paired_one_sided_p, run_dgap_experiment, run_experiment, run_sweep, sweep_values, ExperimentOptions, ExperimentOutcome, NBestMode,
    RunStats, SweepParam,
};
pub use generate::{generate_scenario, Preset, ScenarioSpec};
pub use scenario::{load_scenario, save_scenario, scenario_from_json, scenario_to_json};
