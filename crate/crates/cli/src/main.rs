use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use satgame::io::{
    execute, generate_scenario, load_scenario, replay, save_scenario, sweep_values, Command, Execution, Preset, RunManifest, ScenarioSpec,
    SweepParam,
};
use satgame::learning::{run_learner_from, validate_schedules, Game, LearnerConfig, Variant};
use satgame::model::objective;
use satgame::multistage::segment_timeline;
use satgame::oracle::{
    brute_force_optimum_in, check_exact_potential, is_nash_equilibrium_in, random_profile, sandwich_bound_check, utility_maximizer_in,
    DEFAULT_JOINT_CAP,
};
use satgame::potential::SmoothingParams;
use satgame::{Error, Result};

/// Distributed allocation of satellite observation time to ground grids.
#[derive(Parser)]
#[command(name = "satgame", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic scenario file.
    Generate(GenerateArgs),
    /// Run learner batches on one stage.
    Run(RunArgs),
    /// Run the multistage chain over the whole horizon.
    Dgap(DgapArgs),
    /// Check the game properties and, when tractable, the exact optimum.
    Verify(VerifyArgs),
    /// Run one batch per value of a learner parameter.
    Sweep(SweepArgs),
    /// Re-run a saved run.json manifest.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "regional")]
    preset: Preset,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Override the pair visibility probability.
    #[arg(long)]
    visibility: Option<f64>,
    /// Spread the scenario over this many stages.
    #[arg(long)]
    stages: Option<usize>,
    /// Per-stage load multipliers, comma separated.
    #[arg(long, value_delimiter = ',', requires = "stages")]
    growth: Vec<f64>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct LearnerArgs {
    /// Iterations per run.
    #[arg(long, default_value_t = 500)]
    tmax: usize,
    /// Fraction of the iterations spent at the upper ε.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Inertia: probability of keeping the current action.
    #[arg(long, default_value_t = 0.2)]
    theta: f64,
    /// Per-iteration decrease of ε.
    #[arg(long, default_value_t = 0.1)]
    xi: f64,
    #[arg(long, default_value_t = 15.4)]
    eps_upper: f64,
    #[arg(long, default_value_t = 1.0)]
    eps_lower: f64,
    #[arg(long, default_value_t = 0.06)]
    omega_lower: f64,
    #[arg(long, default_value_t = 1.0)]
    omega_upper: f64,
    /// Per-iteration growth of the sampled fraction.
    #[arg(long, default_value_t = 0.005)]
    phi: f64,
    /// Base seed; run r uses seed + r.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Always run all iterations.
    #[arg(long)]
    no_early_stop: bool,
    /// Largest action space enumerated per satellite.
    #[arg(long)]
    action_cap: Option<usize>,
}

impl LearnerArgs {
    fn config(&self, variant: Variant) -> LearnerConfig {
        let mut c =
            LearnerConfig { variant, inertia: self.theta, seed: self.seed, early_stop: !self.no_early_stop, ..LearnerConfig::default() };
        if let Some(cap) = self.action_cap {
            c.action_cap = cap;
        }
        let s = &mut c.schedule;
        s.t_max = self.tmax;
        s.tau = self.tau;
        s.epsilon_decay = self.xi;
        s.epsilon_upper = self.eps_upper;
        s.epsilon_lower = self.eps_lower;
        s.omega_lower = self.omega_lower;
        s.omega_upper = self.omega_upper;
        s.omega_growth = self.phi;
        c
    }
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long, default_value_t = 50)]
    runs: usize,
    /// Run seeds in parallel.
    #[arg(long)]
    parallel: bool,
    /// Leave the time column empty so that outputs are reproducible byte for byte.
    #[arg(long)]
    no_timing: bool,
    /// Write one trace file per run.
    #[arg(long)]
    traces: bool,
    #[arg(short, long, default_value = "out")]
    output: PathBuf,
}

impl BatchArgs {
    fn manifest(&self, command: Command, scenario: &Path, config: LearnerConfig) -> RunManifest {
        let mut m = RunManifest::new(command, scenario.display().to_string(), config, self.runs);
        m.parallel = self.parallel;
        m.timing = !self.no_timing;
        m.traces = self.traces;
        m
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Variants to run, comma separated, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "setvbrp")]
    variant: Vec<String>,
    #[arg(long, default_value_t = 0)]
    stage: usize,
    /// Count N_best against the exhaustive optimum when it is tractable.
    #[arg(long)]
    oracle: bool,
    #[command(flatten)]
    learner: LearnerArgs,
    #[command(flatten)]
    batch: BatchArgs,
}

#[derive(Args)]
struct DgapArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "setvbrp")]
    variant: Variant,
    /// Start each stage from the previous allocation instead of greedy.
    #[arg(long)]
    warm_start: bool,
    #[command(flatten)]
    learner: LearnerArgs,
    #[command(flatten)]
    batch: BatchArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    param: SweepParam,
    #[arg(long, default_value_t = 0.0)]
    from: f64,
    #[arg(long, default_value_t = 1.0)]
    to: f64,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long, default_value = "setvbrp")]
    variant: Variant,
    #[arg(long, default_value_t = 0)]
    stage: usize,
    #[command(flatten)]
    learner: LearnerArgs,
    #[command(flatten)]
    batch: BatchArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    stage: usize,
    /// Random profiles per property check.
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    /// Smoothing parameters to check, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,15.4")]
    epsilon: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_JOINT_CAP)]
    joint_cap: u128,
    /// Fail instead of skipping when the joint space exceeds the cap.
    #[arg(long)]
    require_oracle: bool,
    #[command(flatten)]
    learner: LearnerArgs,
}

#[derive(Args)]
struct ReplayArgs {
    /// Path to a run.json written by run, dgap or sweep.
    #[arg(long)]
    manifest: PathBuf,
    /// Scenario file; defaults to the path recorded in the manifest.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(short, long, default_value = "replay")]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Runs a subcommand; `Ok(false)` means a verification check failed.
fn dispatch(command: Cmd) -> Result<bool> {
    match command {
        Cmd::Generate(a) => generate(a).map(|_| true),
        Cmd::Run(a) => {
            let variants = parse_variants(&a.variant)?;
            let config = a.learner.config(variants[0]);
            let command = Command::Run { variants, stage: a.stage, oracle: a.oracle };
            batch(&a.scenario, a.batch.manifest(command, &a.scenario, config), &a.batch.output)
        }
        Cmd::Dgap(a) => {
            let command = Command::Dgap { warm_start: a.warm_start };
            let manifest = a.batch.manifest(command, &a.scenario, a.learner.config(a.variant));
            batch(&a.scenario, manifest, &a.batch.output)
        }
        Cmd::Sweep(a) => {
            let values = sweep_values(a.from, a.to, a.step)?;
            let command = Command::Sweep { param: a.param, values, stage: a.stage };
            let manifest = a.batch.manifest(command, &a.scenario, a.learner.config(a.variant));
            batch(&a.scenario, manifest, &a.batch.output)
        }
        Cmd::Replay(a) => {
            let manifest = RunManifest::load(&a.manifest)?;
            let path = a.scenario.unwrap_or_else(|| PathBuf::from(&manifest.scenario));
            let exec = replay(&a.manifest, &load_scenario(&path)?, &a.output)?;
            report(&exec);
            Ok(true)
        }
        Cmd::Verify(a) => verify(a),
    }
}

fn parse_variants(names: &[String]) -> Result<Vec<Variant>> {
    if names.iter().any(|n| n.eq_ignore_ascii_case("all")) {
        return Ok(Variant::ALL.to_vec());
    }
    names.iter().map(|n| n.parse()).collect()
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut spec = ScenarioSpec::preset(a.preset, a.seed);
    if let Some(p) = a.visibility {
        spec.visibility = p;
    }
    if let Some(k) = a.stages {
        spec = spec.with_stages(k, a.growth);
    }
    let scenario = generate_scenario(&spec)?;
    save_scenario(&scenario, &a.output)?;
    println!(
        "wrote {}: {} satellites, {} grids, {} windows",
        a.output.display(),
        scenario.satellite_count(),
        scenario.grid_count(),
        scenario.windows().len()
    );
    Ok(())
}

fn batch(scenario: &Path, manifest: RunManifest, dir: &Path) -> Result<bool> {
    let exec = execute(&manifest, &load_scenario(scenario)?, dir)?;
    report(&exec);
    Ok(true)
}

fn report(exec: &Execution) {
    println!("{:<10} {:>12} {:>12} {:>12} {:>12} {:>7}", "label", "worst", "best", "mean", "variance", "n_best");
    for o in &exec.outcomes {
        let s = &o.stats;
        println!("{:<10} {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>7}", o.label, s.worst, s.best, s.mean, s.variance, s.n_best);
    }
    for f in &exec.files {
        println!("wrote {}", f.display());
    }
}

struct Checks {
    failed: usize,
}

impl Checks {
    fn record(&mut self, ok: bool, line: String) {
        println!("{} {line}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed += 1;
        }
    }
}

fn verify(a: VerifyArgs) -> Result<bool> {
    let scenario = load_scenario(&a.scenario)?;
    let config = a.learner.config(Variant::Setvbrp);
    let mut checks = Checks { failed: 0 };

    let schedule = validate_schedules(&config.schedule);
    for w in &schedule.warnings {
        println!("WARN schedule: {w}");
    }
    checks.record(schedule.is_valid(), format!("schedules monotone and within bounds ({} violations)", schedule.violations.len()));

    let stages = segment_timeline(&scenario)?;
    let stage = stages.stages().get(a.stage).cloned().ok_or_else(|| Error::Validation {
        path: "stage".into(),
        message: format!("scenario has {} stages, stage {} requested", stages.len(), a.stage),
    })?;
    let game = Game::new(stage, config.action_cap)?;
    let stage = game.stage();
    let m = stage.grid_count() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    for &eps in &a.epsilon {
        let sp = SmoothingParams::new(eps)?;
        let mut worst = 0.0f64;
        for _ in 0..a.samples {
            let profile = random_profile(&game, &mut rng);
            let b = sandwich_bound_check(stage, &profile, sp)?;
            worst = worst.max(b.violation() / (1.0 + b.objective.abs()));
        }
        checks.record(worst <= 1e-9, format!("ε={eps}: max y ≤ h ≤ max y + ε ln m on {} profiles (worst {worst:.2e})", a.samples));
        let pc = check_exact_potential(stage, sp, a.samples, &mut rng)?;
        checks.record(
            pc.max_rel <= 1e-9,
            format!("ε={eps}: local utility changes equal potential changes on {} deviations (worst rel {:.2e})", pc.samples, pc.max_rel),
        );
    }

    let optimum = match brute_force_optimum_in(&game, a.joint_cap) {
        Ok(report) => report,
        Err(e @ Error::CapacityExceeded { .. }) if !a.require_oracle => {
            println!("SKIP oracle: {e}");
            return Ok(checks.failed == 0);
        }
        Err(e) => return Err(e),
    };
    println!(
        "oracle: optimum {} over {} joint profiles, {} optimal, {:.3}s",
        optimum.optimum, optimum.joint_size, optimum.optimal_count, optimum.elapsed_s
    );

    let eps = config.schedule.epsilon_lower;
    let sp = SmoothingParams::new(eps)?;
    let maximizer = utility_maximizer_in(&game, sp, a.joint_cap)?;
    let profile = &maximizer.profiles[0];
    let value = objective(stage, profile)?;
    checks.record(is_nash_equilibrium_in(&game, profile, sp)?, format!("ε={eps}: global utility maximizer is a Nash equilibrium"));
    checks.record(
        value - optimum.optimum <= eps * m.ln() + 1e-9,
        format!("ε={eps}: maximizer objective {value} within ε ln m of the optimum"),
    );

    let initial = satgame::actions::greedy_init(stage);
    let (learned, trace) = run_learner_from(&game, &config, &initial)?;
    let value = objective(stage, &learned)?;
    checks.record(value >= optimum.optimum - 1e-9, format!("learner objective {value} is not below the optimum"));
    if trace.certified_nash {
        let sp = SmoothingParams::new(config.epsilon_at(config.schedule.t_max))?;
        checks.record(is_nash_equilibrium_in(&game, &learned, sp)?, "certified learner end point is a Nash equilibrium".into());
    }
    Ok(checks.failed == 0)
}
