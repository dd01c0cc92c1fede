//! Output files and the run manifest that reproduces them.
//!
//! Every output except wall times is a function of the scenario and the
//! manifest. With `timing` off the time column is left empty, so a replay of
//! `run.json` rewrites every file byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiment::{
    run_dgap_experiment, run_experiment, run_sweep, ExperimentOptions, ExperimentOutcome, NBestMode, RunStats, SweepParam,
};
use crate::error::{Error, Result};
use crate::learning::{Game, IterationTrace, LearnerConfig, Variant};
use crate::model::Scenario;
use crate::multistage::{segment_timeline, DgapConfig};
use crate::oracle::{brute_force_optimum_in, DEFAULT_JOINT_CAP};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    /// Learner runs on one stage, one batch per variant.
    Run { variants: Vec<Variant>, stage: usize, oracle: bool },
    /// Chained runs over the whole horizon.
    Dgap { warm_start: bool },
    /// One batch per value of a learner parameter.
    Sweep { param: SweepParam, values: Vec<f64>, stage: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    /// Scenario path as given on the command line.
    pub scenario: String,
    pub config: LearnerConfig,
    pub runs: usize,
    pub parallel: bool,
    pub timing: bool,
    pub traces: bool,
}

impl RunManifest {
    pub fn new(command: Command, scenario: impl Into<String>, config: LearnerConfig, runs: usize) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            scenario: scenario.into(),
            config,
            runs,
            parallel: false,
            timing: true,
            traces: false,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Parse { path: path.to_path_buf(), source })
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    fn options(&self) -> ExperimentOptions {
        ExperimentOptions { runs: self.runs, parallel: self.parallel, keep_traces: self.traces, reference_optimum: None }
    }
}

/// Results of [`execute`], one outcome per batch (per stage for `Dgap`).
#[derive(Clone, Debug)]
pub struct Execution {
    pub outcomes: Vec<ExperimentOutcome>,
    pub files: Vec<PathBuf>,
}

fn stage_game(scenario: &Scenario, stage: usize, config: &LearnerConfig) -> Result<Game> {
    let schedule = segment_timeline(scenario)?;
    let stage = schedule
        .stages()
        .get(stage)
        .cloned()
        .ok_or_else(|| Error::validation("stage", format!("scenario has {} stages, stage {stage} requested", schedule.len())))?;
    Game::new(stage, config.action_cap)
}

/// Runs what the manifest describes and writes every output into `dir`.
pub fn execute(manifest: &RunManifest, scenario: &Scenario, dir: &Path) -> Result<Execution> {
    if manifest.runs == 0 {
        return Err(Error::validation("runs", "at least one run is required"));
    }
    manifest.config.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Writer { dir, files: Vec::new() };
    let options = manifest.options();
    let outcomes = match &manifest.command {
        Command::Run { variants, stage, oracle } => {
            if variants.is_empty() {
                return Err(Error::validation("variants", "at least one variant is required"));
            }
            let game = stage_game(scenario, *stage, &manifest.config)?;
            let reference = match oracle {
                true => match brute_force_optimum_in(&game, DEFAULT_JOINT_CAP) {
                    Ok(report) => Some(report.optimum),
                    Err(Error::CapacityExceeded { .. }) => None,
                    Err(e) => return Err(e),
                },
                false => None,
            };
            let options = ExperimentOptions { reference_optimum: reference, ..options };
            let outcomes =
                variants.iter().map(|&v| run_experiment(&game, &manifest.config.with_variant(v), &options)).collect::<Result<Vec<_>>>()?;
            out.write("summary.csv", summary_csv(&outcomes, None, manifest.timing))?;
            out.write("convergence.csv", convergence_csv(&outcomes, "variant", |o, _| o.label.clone()))?;
            for o in &outcomes {
                for rec in &o.records {
                    if let Some(trace) = &rec.trace {
                        let name = match variants.len() {
                            1 => format!("trace_{}.csv", rec.run),
                            _ => format!("trace_{}_{}.csv", o.label, rec.run),
                        };
                        out.write(&name, trace_csv(trace))?;
                    }
                }
            }
            outcomes
        }
        Command::Dgap { warm_start } => {
            let config = DgapConfig { learner: manifest.config, warm_start: *warm_start };
            let outcomes = run_dgap_experiment(scenario, &config, &options)?;
            out.write("summary.csv", summary_csv(&outcomes, Some(0), manifest.timing))?;
            out.write("convergence.csv", convergence_csv(&outcomes, "stage", |_, k| k.to_string()))?;
            for (k, o) in outcomes.iter().enumerate() {
                for rec in &o.records {
                    if let Some(trace) = &rec.trace {
                        out.write(&format!("trace_{}_stage{k}.csv", rec.run), trace_csv(trace))?;
                    }
                }
            }
            outcomes
        }
        Command::Sweep { param, values, stage } => {
            let game = stage_game(scenario, *stage, &manifest.config)?;
            let rows = run_sweep(&game, &manifest.config, *param, values, &options)?;
            out.write("sweep.csv", sweep_csv(*param, &rows, manifest.timing))?;
            let outcomes: Vec<ExperimentOutcome> = rows.into_iter().map(|(_, o)| o).collect();
            out.write("convergence.csv", convergence_csv(&outcomes, "setting", |o, _| o.label.clone()))?;
            outcomes
        }
    };
    out.write("run.json", manifest.to_json())?;
    Ok(Execution { outcomes, files: out.files })
}

/// Re-executes a saved manifest into `dir`.
pub fn replay(manifest_path: &Path, scenario: &Scenario, dir: &Path) -> Result<Execution> {
    execute(&RunManifest::load(manifest_path)?, scenario, dir)
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn write(&mut self, name: &str, content: String) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }
}

fn stats_fields(s: &RunStats, timing: bool) -> String {
    let time = if timing { s.time_s.to_string() } else { String::new() };
    let mode = match s.n_best_mode {
        NBestMode::Oracle => "oracle",
        NBestMode::BestObserved => "best_observed",
    };
    format!("{},{},{},{},{},{},{mode},{}", s.worst, s.best, s.mean, time, s.variance, s.n_best, s.n_best_observed)
}

/// `variant,worst,best,mean,time_s,variance,n_best,n_best_mode,n_best_observed`;
/// with a leading `stage` column when `stage_from` is set.
pub fn summary_csv(outcomes: &[ExperimentOutcome], stage_from: Option<usize>, timing: bool) -> String {
    let mut csv = String::new();
    if stage_from.is_some() {
        csv.push_str("stage,");
    }
    csv.push_str("variant,worst,best,mean,time_s,variance,n_best,n_best_mode,n_best_observed\n");
    for (k, o) in outcomes.iter().enumerate() {
        if let Some(first) = stage_from {
            let _ = write!(csv, "{},", first + k);
        }
        let _ = writeln!(csv, "{},{}", o.label, stats_fields(&o.stats, timing));
    }
    csv
}

pub fn sweep_csv(param: SweepParam, rows: &[(f64, ExperimentOutcome)], timing: bool) -> String {
    let mut csv = format!("{},worst,best,mean,time_s,variance,n_best,n_best_mode,n_best_observed\n", param.name());
    for (v, o) in rows {
        let _ = writeln!(csv, "{v},{}", stats_fields(&o.stats, timing));
    }
    csv
}

fn convergence_csv(outcomes: &[ExperimentOutcome], key: &str, label: impl Fn(&ExperimentOutcome, usize) -> String) -> String {
    let mut csv = format!("{key},iteration,mean,min,max\n");
    for (k, o) in outcomes.iter().enumerate() {
        let name = label(o, k);
        for p in &o.convergence {
            let _ = writeln!(csv, "{name},{},{},{},{}", p.iteration, p.mean, p.min, p.max);
        }
    }
    csv
}

pub fn trace_csv(trace: &IterationTrace) -> String {
    let mut csv = String::from("t,satellite,epsilon,omega,sampled,better,accepted,objective,phi_before,phi\n");
    for s in &trace.steps {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            s.t, s.satellite, s.epsilon, s.omega, s.sampled, s.better, s.accepted, s.objective, s.phi_before, s.phi
        );
    }
    csv
}
