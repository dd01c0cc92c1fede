//! Repeated seeded runs, summary statistics and convergence curves.

use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::actions::greedy_init;
use crate::error::{Error, Result};
use crate::learning::{run_learner_from, Game, IterationTrace, LearnerConfig};
use crate::model::Scenario;
use crate::multistage::{run_dgap, DgapConfig, DgapResult};

/// Objectives within this distance of the reference count as hits.
const HIT_TOLERANCE: f64 = 1e-9;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NBestMode {
    /// Hits of an exhaustively certified optimum.
    Oracle,
    /// Hits of the best value any run reached.
    BestObserved,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub runs: usize,
    pub worst: f64,
    pub best: f64,
    pub mean: f64,
    /// Population variance of the final objectives.
    pub variance: f64,
    /// Mean wall time per run in seconds.
    pub time_s: f64,
    pub n_best: usize,
    pub n_best_mode: NBestMode,
    /// Hits of the best observed value, whatever `n_best_mode` is.
    pub n_best_observed: usize,
}

impl RunStats {
    pub fn from_runs(objectives: &[f64], times: &[f64], reference: Option<f64>) -> Result<Self> {
        if objectives.is_empty() {
            return Err(Error::validation("runs", "at least one run is required"));
        }
        let n = objectives.len() as f64;
        let worst = objectives.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let best = objectives.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = objectives.iter().sum::<f64>() / n;
        let variance = objectives.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let hits = |target: f64| objectives.iter().filter(|&&v| v <= target + HIT_TOLERANCE).count();
        let (target, n_best_mode) = match reference {
            Some(r) => (r, NBestMode::Oracle),
            None => (best, NBestMode::BestObserved),
        };
        Ok(Self {
            runs: objectives.len(),
            worst,
            best,
            mean,
            variance,
            time_s: if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 },
            n_best: hits(target),
            n_best_mode,
            n_best_observed: hits(best),
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub objective: f64,
    pub wall_time_s: f64,
    pub iterations: usize,
    pub last_improvement: usize,
    pub certified_nash: bool,
    pub trace: Option<IterationTrace>,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct ConvergencePoint {
    pub iteration: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub label: String,
    pub stats: RunStats,
    pub records: Vec<RunRecord>,
    pub convergence: Vec<ConvergencePoint>,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct ExperimentOptions {
    pub runs: usize,
    /// Run seeds in parallel. Wall times then include contention.
    pub parallel: bool,
    pub keep_traces: bool,
    /// Certified optimum for `n_best`, when known.
    pub reference_optimum: Option<f64>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self { runs: 50, parallel: false, keep_traces: false, reference_optimum: None }
    }
}

/// Seed of run `r` for base seed `base`. Shared across variants so that
/// runs can be compared pairwise.
pub fn run_seed(base: u64, r: usize) -> u64 {
    base.wrapping_add(r as u64)
}

fn map_runs<T: Send>(runs: usize, parallel: bool, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    if parallel {
        (0..runs).into_par_iter().map(&f).collect()
    } else {
        (0..runs).map(f).collect()
    }
}

/// Per-iteration mean/min/max of the objective across traces. A trace that
/// stopped early keeps its last value.
pub fn convergence_curve(traces: &[&IterationTrace], t_max: usize) -> Vec<ConvergencePoint> {
    if traces.is_empty() {
        return Vec::new();
    }
    (0..=t_max)
        .map(|t| {
            let values: Vec<f64> = traces
                .iter()
                .map(|tr| match t.checked_sub(1) {
                    None => tr.initial_objective,
                    Some(k) => tr.steps.get(k).or(tr.steps.last()).map_or(tr.initial_objective, |s| s.objective),
                })
                .collect();
            ConvergencePoint {
                iteration: t,
                mean: values.iter().sum::<f64>() / values.len() as f64,
                min: values.iter().copied().fold(f64::INFINITY, f64::min),
                max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

fn assemble(
    label: String,
    mut records: Vec<RunRecord>,
    traces: Vec<IterationTrace>,
    t_max: usize,
    options: &ExperimentOptions,
) -> Result<ExperimentOutcome> {
    let objectives: Vec<f64> = records.iter().map(|r| r.objective).collect();
    let times: Vec<f64> = records.iter().map(|r| r.wall_time_s).collect();
    let stats = RunStats::from_runs(&objectives, &times, options.reference_optimum)?;
    let convergence = convergence_curve(&traces.iter().collect::<Vec<_>>(), t_max);
    if options.keep_traces {
        for (rec, tr) in records.iter_mut().zip(traces) {
            rec.trace = Some(tr);
        }
    }
    Ok(ExperimentOutcome { label, stats, records, convergence })
}

/// Runs `options.runs` seeded learners on one stage from the greedy profile.
pub fn run_experiment(game: &Game, config: &LearnerConfig, options: &ExperimentOptions) -> Result<ExperimentOutcome> {
    config.validate()?;
    let initial = greedy_init(game.stage());
    let results = map_runs(options.runs, options.parallel, |r| {
        let seed = run_seed(config.seed, r);
        let started = Instant::now();
        let (_, trace) = run_learner_from(game, &config.with_seed(seed), &initial)?;
        Ok((r, seed, started.elapsed().as_secs_f64(), trace))
    })?;
    let mut records = Vec::with_capacity(results.len());
    let mut traces = Vec::with_capacity(results.len());
    for (run, seed, wall_time_s, trace) in results {
        records.push(RunRecord {
            run,
            seed,
            objective: trace.final_objective(),
            wall_time_s,
            iterations: trace.steps.len(),
            last_improvement: trace.last_improvement,
            certified_nash: trace.certified_nash,
            trace: None,
        });
        traces.push(trace);
    }
    assemble(config.variant.to_string(), records, traces, config.schedule.t_max, options)
}

/// Runs `options.runs` seeded multi-stage allocations and reports each stage
/// separately, labelled by the variant.
pub fn run_dgap_experiment(scenario: &Scenario, config: &DgapConfig, options: &ExperimentOptions) -> Result<Vec<ExperimentOutcome>> {
    let results: Vec<(u64, DgapResult)> = map_runs(options.runs, options.parallel, |r| {
        let seed = run_seed(config.learner.seed, r);
        let cfg = DgapConfig { learner: config.learner.with_seed(seed), ..*config };
        Ok((seed, run_dgap(scenario, &cfg)?))
    })?;
    let stage_count = results.first().map_or(0, |(_, d)| d.stages.len());
    let per_stage_options = ExperimentOptions { reference_optimum: None, ..*options };
    (0..stage_count)
        .map(|k| {
            let mut records = Vec::new();
            let mut traces = Vec::new();
            for (run, (seed, result)) in results.iter().enumerate() {
                let out = &result.stages[k];
                records.push(RunRecord {
                    run,
                    seed: *seed,
                    objective: out.objective,
                    wall_time_s: out.wall_time_s,
                    iterations: out.trace.steps.len(),
                    last_improvement: out.trace.last_improvement,
                    certified_nash: out.trace.certified_nash,
                    trace: None,
                });
                traces.push(out.trace.clone());
            }
            assemble(config.learner.variant.to_string(), records, traces, config.learner.schedule.t_max, &per_stage_options)
        })
        .collect()
}

/// p-value of the one-sided paired t-test with alternative `mean(a − b) < 0`.
pub fn paired_one_sided_p(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::validation("paired test", "need two equally long samples of at least two values"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(if mean < 0.0 { 0.0 } else { 1.0 });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("degrees of freedom are positive");
    Ok(dist.cdf(t))
}

/// A learner parameter that a sweep varies.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Tau,
    Theta,
    Xi,
    OmegaGrowth,
    EpsilonUpper,
    EpsilonLower,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Tau => "tau",
            SweepParam::Theta => "theta",
            SweepParam::Xi => "xi",
            SweepParam::OmegaGrowth => "phi",
            SweepParam::EpsilonUpper => "eps_upper",
            SweepParam::EpsilonLower => "eps_lower",
        }
    }

    pub fn apply(self, config: &LearnerConfig, value: f64) -> LearnerConfig {
        let mut c = *config;
        match self {
            SweepParam::Tau => c.schedule.tau = value,
            SweepParam::Theta => c.inertia = value,
            SweepParam::Xi => c.schedule.epsilon_decay = value,
            SweepParam::OmegaGrowth => c.schedule.omega_growth = value,
            SweepParam::EpsilonUpper => c.schedule.epsilon_upper = value,
            SweepParam::EpsilonLower => c.schedule.epsilon_lower = value,
        }
        c
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SweepParam::Tau, SweepParam::Theta, SweepParam::Xi, SweepParam::OmegaGrowth, SweepParam::EpsilonUpper, SweepParam::EpsilonLower]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::validation("param", format!("unknown sweep parameter {s:?}; expected tau, theta, xi, phi, eps_upper or eps_lower"))
            })
    }
}

/// Evenly spaced values from `from` to `to` inclusive, rounded to 12 decimals
/// so that accumulated steps land on the intended grid.
pub fn sweep_values(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 || to < from {
        return Err(Error::validation("sweep", format!("need step > 0 and from ≤ to, got {from}..{to} step {step}")));
    }
    let count = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| ((from + k as f64 * step) * 1e12).round() / 1e12).collect())
}

pub fn run_sweep(
    game: &Game,
    config: &LearnerConfig,
    param: SweepParam,
    values: &[f64],
    options: &ExperimentOptions,
) -> Result<Vec<(f64, ExperimentOutcome)>> {
    values
        .iter()
        .map(|&v| {
            let mut outcome = run_experiment(game, &param.apply(config, v), options)?;
            outcome.label = format!("{}={v}", param.name());
            Ok((v, outcome))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::Variant;
    use crate::model::{GridId, SatelliteId, StageState};
    use crate::oracle::{brute_force_optimum_in, DEFAULT_JOINT_CAP};

    fn game() -> Game {
        let s = SatelliteId;
        let g = GridId;
        let pairs = [(s(0), g(0), 2.0), (s(0), g(1), 3.0), (s(1), g(1), 2.0), (s(1), g(2), 3.0), (s(2), g(0), 3.0), (s(2), g(2), 2.0)];
        let stage = StageState::new(3, vec![14.0, 17.0, 12.0], 6, 1, pairs).unwrap();
        Game::new(stage, 10_000).unwrap()
    }

    #[test]
    fn stats_by_hand() {
        let stats = RunStats::from_runs(&[1.0, 2.0, 3.0, 2.0], &[0.5, 1.5], None).unwrap();
        assert_eq!((stats.worst, stats.best, stats.mean), (3.0, 1.0, 2.0));
        assert_eq!(stats.variance, 0.5);
        assert_eq!(stats.time_s, 1.0);
        assert_eq!(stats.n_best, 1);
        assert_eq!(stats.n_best_mode, NBestMode::BestObserved);
        let with_ref = RunStats::from_runs(&[1.0, 2.0], &[], Some(2.0)).unwrap();
        assert_eq!(with_ref.n_best, 2);
        assert_eq!(with_ref.n_best_mode, NBestMode::Oracle);
    }

    #[test]
    fn n_best_matches_oracle_hits() {
        let game = game();
        let optimum = brute_force_optimum_in(&game, DEFAULT_JOINT_CAP).unwrap().optimum;
        let options = ExperimentOptions { runs: 20, reference_optimum: Some(optimum), ..ExperimentOptions::default() };
        let out = run_experiment(&game, &LearnerConfig::default(), &options).unwrap();
        let hits = out.records.iter().filter(|r| r.objective <= optimum + 1e-9).count();
        assert_eq!(out.stats.n_best, hits);
        assert!(out.records.iter().all(|r| r.objective >= optimum - 1e-9));
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let game = game();
        let config = LearnerConfig::default().with_variant(Variant::Brp);
        let seq = run_experiment(&game, &config, &ExperimentOptions { runs: 8, ..ExperimentOptions::default() }).unwrap();
        let par = run_experiment(&game, &config, &ExperimentOptions { runs: 8, parallel: true, ..ExperimentOptions::default() }).unwrap();
        let a: Vec<f64> = seq.records.iter().map(|r| r.objective).collect();
        let b: Vec<f64> = par.records.iter().map(|r| r.objective).collect();
        assert_eq!(a, b);
        assert_eq!(seq.convergence, par.convergence);
    }

    #[test]
    fn convergence_carries_last_value() {
        let game = game();
        let out = run_experiment(&game, &LearnerConfig::default(), &ExperimentOptions { runs: 3, ..ExperimentOptions::default() }).unwrap();
        assert_eq!(out.convergence.len(), 501);
        let last = out.convergence.last().unwrap();
        assert!((last.mean - out.stats.mean).abs() < 1e-9);
        assert_eq!((last.min, last.max), (out.stats.best, out.stats.worst));
    }

    #[test]
    fn paired_test_direction() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [1.5, 2.4, 3.6, 4.5, 5.2];
        assert!(paired_one_sided_p(&a, &b).unwrap() < 0.05);
        assert!(paired_one_sided_p(&b, &a).unwrap() > 0.95);
        assert_eq!(paired_one_sided_p(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn sweep_grid() {
        let v = sweep_values(0.0, 1.0, 0.05).unwrap();
        assert_eq!(v.len(), 21);
        assert_eq!(v[6], 0.3);
        assert_eq!(*v.last().unwrap(), 1.0);
        assert_eq!("tau".parse::<SweepParam>().unwrap(), SweepParam::Tau);
    }
}
