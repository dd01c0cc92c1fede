//! Selective time-variant better-reply learning and its ablations.
//!
//! Satellites act in a fixed relay order. On its turn a satellite samples a
//! fraction `ω(t)` of its action space, collects the sampled actions whose
//! local utility under `ε(t)` beats its current one, and switches to a random
//! member of that set unless inertia keeps it in place.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actions::{enumerate_actions, greedy_init, ActionSpace, SubsetSampler, DEFAULT_ACTION_CAP};
use crate::error::{Error, Result};
use crate::model::{max_of, AllocationFile, StageState};
use crate::potential::{
    capacity_factors, normalizer, potential_from_remaining, Normalizer, ReplyScorer, SmoothingParams, IMPROVEMENT_TOLERANCE,
};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Selective sampling and time-variant ε.
    Setvbrp,
    /// Time-variant ε, full action sets.
    Tvbrp,
    /// Selective sampling, constant ε.
    Sebrp,
    /// Plain better-reply process.
    Brp,
    /// Best response: always move to the best sampled improvement.
    Bra,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Setvbrp, Variant::Tvbrp, Variant::Sebrp, Variant::Brp, Variant::Bra];

    pub fn selective(self) -> bool {
        matches!(self, Variant::Setvbrp | Variant::Sebrp)
    }

    pub fn time_variant(self) -> bool {
        matches!(self, Variant::Setvbrp | Variant::Tvbrp)
    }

    pub fn best_response(self) -> bool {
        self == Variant::Bra
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Setvbrp => "setvbrp",
            Variant::Tvbrp => "tvbrp",
            Variant::Sebrp => "sebrp",
            Variant::Brp => "brp",
            Variant::Bra => "bra",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::validation("variant", format!("unknown variant {s:?}")))
    }
}

/// Parameters of the ε(t) and ω(t) schedules.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub epsilon_upper: f64,
    pub epsilon_lower: f64,
    /// ξ: per-iteration decrease of ε once it starts falling.
    pub epsilon_decay: f64,
    /// τ: fraction of `t_max` spent at `epsilon_upper`.
    pub tau: f64,
    pub omega_lower: f64,
    pub omega_upper: f64,
    /// Per-iteration growth of ω.
    pub omega_growth: f64,
    pub t_max: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            epsilon_upper: 15.4,
            epsilon_lower: 1.0,
            epsilon_decay: 0.1,
            tau: 0.5,
            omega_lower: 0.06,
            omega_upper: 1.0,
            omega_growth: 0.005,
            t_max: 500,
        }
    }
}

/// Piecewise-linear nonincreasing ε(t): flat at the upper bound before
/// `τ·t_max`, then falling by ξ per iteration down to the lower bound.
pub fn epsilon_schedule(t: usize, p: &ScheduleParams) -> f64 {
    let start = p.tau * p.t_max as f64;
    let t = t as f64;
    if t < start {
        p.epsilon_upper
    } else {
        (p.epsilon_upper - (t - start) * p.epsilon_decay).max(p.epsilon_lower)
    }
}

/// ω(t) = clamp(t·growth, ω_L, ω_U).
pub fn omega_schedule(t: usize, p: &ScheduleParams) -> f64 {
    (t as f64 * p.omega_growth).clamp(p.omega_lower, p.omega_upper)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScheduleReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ScheduleReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the schedule bounds and monotonicity by sweeping `t = 1..=t_max`.
pub fn validate_schedules(p: &ScheduleParams) -> ScheduleReport {
    let mut report = ScheduleReport::default();
    if !(p.epsilon_lower >= 0.0 && p.epsilon_lower <= p.epsilon_upper) {
        report.violations.push(format!("ε bounds: need 0 ≤ ε_L ≤ ε_U, got ε_L={} ε_U={}", p.epsilon_lower, p.epsilon_upper));
    }
    if !(p.omega_lower > 0.0 && p.omega_lower <= p.omega_upper && p.omega_upper <= 1.0) {
        report.violations.push(format!("ω bounds: need 0 < ω_L ≤ ω_U ≤ 1, got ω_L={} ω_U={}", p.omega_lower, p.omega_upper));
    }
    if !(0.0..=1.0).contains(&p.tau) {
        report.violations.push(format!("τ must lie in [0, 1], got {}", p.tau));
    }
    let mut prev: Option<(f64, f64)> = None;
    for t in 1..=p.t_max {
        let (e, w) = (epsilon_schedule(t, p), omega_schedule(t, p));
        if let Some((pe, pw)) = prev {
            if e > pe {
                report.violations.push(format!("ε increases at t={t}: {pe} → {e}"));
                break;
            }
            if w < pw {
                report.violations.push(format!("ω decreases at t={t}: {pw} → {w}"));
                break;
            }
        }
        if e < p.epsilon_lower || e > p.epsilon_upper {
            report.violations.push(format!("ε({t})={e} leaves [ε_L, ε_U]"));
            break;
        }
        if w < p.omega_lower || w > p.omega_upper {
            report.violations.push(format!("ω({t})={w} leaves [ω_L, ω_U]"));
            break;
        }
        prev = Some((e, w));
    }
    if p.omega_growth <= 0.0 && p.omega_lower < p.omega_upper {
        report.warnings.push("ω growth is not positive: ω stays at ω_L and never reaches ω_U".to_string());
    }
    if p.epsilon_decay <= 0.0 && p.epsilon_lower < p.epsilon_upper {
        report.warnings.push("ε decay is not positive: ε stays at ε_U and never reaches ε_L".to_string());
    } else if p.t_max > 0 && epsilon_schedule(p.t_max, p) > p.epsilon_lower {
        report.warnings.push(format!("ε only reaches {} by t_max; ε_L={} is never used", epsilon_schedule(p.t_max, p), p.epsilon_lower));
    }
    report
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub variant: Variant,
    pub schedule: ScheduleParams,
    /// ϑ: probability of keeping the current action when a better reply exists.
    pub inertia: f64,
    pub seed: u64,
    /// Stop once the relay certifies a Nash equilibrium at the final ε.
    pub early_stop: bool,
    pub action_cap: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Setvbrp,
            schedule: ScheduleParams::default(),
            inertia: 0.2,
            seed: 0,
            early_stop: true,
            action_cap: DEFAULT_ACTION_CAP,
        }
    }
}

impl LearnerConfig {
    pub fn with_variant(self, variant: Variant) -> Self {
        Self { variant, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.inertia) {
            return Err(Error::validation("inertia", format!("must lie in [0, 1), got {}", self.inertia)));
        }
        let report = validate_schedules(&self.schedule);
        if let Some(v) = report.violations.first() {
            return Err(Error::validation("schedule", v.clone()));
        }
        Ok(())
    }

    /// ε used at iteration `t`; constant `ε_U` without the time-variant method.
    pub fn epsilon_at(&self, t: usize) -> f64 {
        if self.variant.time_variant() {
            epsilon_schedule(t, &self.schedule)
        } else {
            self.schedule.epsilon_upper
        }
    }

    /// ω used at iteration `t`; one without selective sampling.
    pub fn omega_at(&self, t: usize) -> f64 {
        if self.variant.selective() {
            omega_schedule(t, &self.schedule)
        } else {
            1.0
        }
    }

    pub fn effective_inertia(&self) -> f64 {
        if self.variant.best_response() {
            0.0
        } else {
            self.inertia
        }
    }

    /// First iteration from which ε stays constant through `t_max`.
    pub fn epsilon_settled_at(&self) -> Option<usize> {
        let t_max = self.schedule.t_max;
        if t_max == 0 {
            return None;
        }
        let last = self.epsilon_at(t_max);
        let mut t = t_max;
        while t > 1 && self.epsilon_at(t - 1) == last {
            t -= 1;
        }
        Some(t)
    }
}

/// A stage together with the enumerated action space of every satellite.
#[derive(Clone, Debug)]
pub struct Game {
    stage: StageState,
    spaces: Vec<ActionSpace>,
    alpha: Vec<Vec<f64>>,
}

impl Game {
    pub fn new(stage: StageState, action_cap: usize) -> Result<Self> {
        let spaces = stage.satellites().map(|i| enumerate_actions(&stage, i, action_cap)).collect::<Result<Vec<_>>>()?;
        let alpha = stage.satellites().map(|i| stage.visible_grids(i).iter().map(|&(_, a)| a).collect()).collect();
        Ok(Self { stage, spaces, alpha })
    }

    pub fn stage(&self) -> &StageState {
        &self.stage
    }

    pub fn spaces(&self) -> &[ActionSpace] {
        &self.spaces
    }

    /// Capacities of satellite `i`, aligned with its visible grids.
    pub(crate) fn alpha_of(&self, i: usize) -> &[f64] {
        &self.alpha[i]
    }

    /// Number of joint profiles, saturating.
    pub fn joint_size(&self) -> u128 {
        self.spaces.iter().fold(1u128, |acc, s| acc.saturating_mul(s.len() as u128))
    }

    pub(crate) fn indices_of(&self, a: &AllocationFile) -> Result<Vec<usize>> {
        self.stage.check_feasible(a)?;
        self.spaces
            .iter()
            .zip(a.iter())
            .map(|(space, act)| {
                space
                    .index_of(act)
                    .ok_or_else(|| Error::validation(format!("allocation[{}]", act.owner()), "action not in the action space"))
            })
            .collect()
    }

    pub(crate) fn file_of(&self, indices: &[usize]) -> AllocationFile {
        AllocationFile::new(self.spaces.iter().zip(indices).map(|(s, &k)| s.action(k)).collect()).expect("owners follow satellite order")
    }

    /// Work delivered to each grid, accumulated in satellite order.
    pub(crate) fn served(&self, indices: &[usize]) -> Vec<f64> {
        let mut served = vec![0.0; self.stage.grid_count()];
        for (i, (space, &k)) in self.spaces.iter().zip(indices).enumerate() {
            for &(pos, x) in space.entries(k) {
                served[space.grids()[pos as usize].0] += self.alpha[i][pos as usize] * x as f64;
            }
        }
        served
    }

    fn remaining(&self, served: &[f64]) -> Vec<f64> {
        self.stage.beta().iter().zip(served).map(|(b, s)| b - s).collect()
    }

    /// Scorer for satellite `i` against the other satellites in `indices`.
    /// Load left on each of `i`'s visible grids by the other satellites.
    fn residual(&self, indices: &[usize], served: &[f64], i: usize) -> Vec<f64> {
        let space = &self.spaces[i];
        let mut residual: Vec<f64> = space.grids().iter().map(|j| self.stage.beta()[j.0] - served[j.0]).collect();
        for &(pos, x) in space.entries(indices[i]) {
            residual[pos as usize] += self.alpha[i][pos as usize] * x as f64;
        }
        residual
    }
}

/// What happened at one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub satellite: usize,
    pub epsilon: f64,
    pub omega: f64,
    pub sampled: usize,
    pub better: usize,
    /// A trial action was drawn and adopted.
    pub accepted: bool,
    /// Min-max objective after the step.
    pub objective: f64,
    /// Potential before and after the step, both at this step's ε.
    pub phi_before: f64,
    pub phi: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub initial_objective: f64,
    pub steps: Vec<StepRecord>,
    /// Last iteration at which the profile changed (0 if never).
    pub last_improvement: usize,
    /// First iteration of the constant-ε tail, if any.
    pub settled_at: Option<usize>,
    /// The run ended on a relay sweep proving a Nash equilibrium.
    pub certified_nash: bool,
    pub stopped_early: bool,
}

impl IterationTrace {
    pub fn final_objective(&self) -> f64 {
        self.steps.last().map_or(self.initial_objective, |s| s.objective)
    }
}

/// Runs the relay process over one prepared game.
pub struct Learner<'g> {
    game: &'g Game,
    config: LearnerConfig,
    indices: Vec<usize>,
    rng: ChaCha8Rng,
    t: usize,
    settled_at: Option<usize>,
    /// ε-independent part of the normalizer.
    base_norm: Normalizer,
    /// Per satellite: the ε its capacity factors were computed for.
    factors: Vec<(f64, Vec<f64>)>,
    sampler: SubsetSampler,
    subset: Vec<usize>,
    better: Vec<(usize, f64)>,
    /// Consecutive steps that saw the full action space and no better reply.
    verified: usize,
    /// Consecutive steps without a better reply in the sampled subset.
    quiet: usize,
    trace: IterationTrace,
}

impl<'g> Learner<'g> {
    pub fn new(game: &'g Game, config: LearnerConfig, initial: &AllocationFile) -> Result<Self> {
        config.validate()?;
        let indices = game.indices_of(initial)?;
        let served = game.served(&indices);
        let trace = IterationTrace {
            initial_objective: max_of(&game.remaining(&served)),
            settled_at: config.epsilon_settled_at(),
            ..IterationTrace::default()
        };
        Ok(Self {
            game,
            config,
            indices,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            t: 0,
            settled_at: config.epsilon_settled_at(),
            base_norm: normalizer(&game.stage, SmoothingParams::new(config.schedule.epsilon_upper)?)?,
            factors: vec![(f64::NAN, Vec::new()); game.stage.satellite_count()],
            sampler: SubsetSampler::default(),
            subset: Vec::new(),
            better: Vec::new(),
            verified: 0,
            quiet: 0,
            trace,
        })
    }

    pub fn profile(&self) -> AllocationFile {
        self.game.file_of(&self.indices)
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    fn normalizer_at(&self, epsilon: f64) -> Normalizer {
        Normalizer { epsilon, ..self.base_norm }
    }

    fn scorer(&mut self, served: &[f64], i: usize, norm: &Normalizer) -> ReplyScorer {
        let game = self.game;
        let length = game.stage.length();
        let cached = &mut self.factors[i];
        if cached.0 != norm.epsilon {
            *cached = (norm.epsilon, capacity_factors(&game.alpha[i], length, norm.epsilon));
        }
        ReplyScorer::from_factors(&game.residual(&self.indices, served, i), &cached.1, length, norm)
    }

    /// Performs iteration `t + 1`.
    pub fn step(&mut self) -> Result<StepRecord> {
        self.t += 1;
        let t = self.t;
        let game = self.game;
        let n = game.stage.satellite_count();
        let i = (t - 1) % n;
        let epsilon = self.config.epsilon_at(t);
        let omega = self.config.omega_at(t);
        SmoothingParams::new(epsilon)?;
        let norm = self.normalizer_at(epsilon);

        let served = game.served(&self.indices);
        let phi_before = potential_from_remaining(&game.remaining(&served), &norm);
        let scorer = self.scorer(&served, i, &norm);
        let space = &game.spaces[i];
        let incumbent = self.indices[i];
        let current = scorer.score(space.entries(incumbent));

        self.sampler.sample_into(space.len(), omega, incumbent, &mut self.rng, &mut self.subset);
        let full_subset = self.subset.len() == space.len();
        self.better.clear();
        for &k in &self.subset {
            let score = scorer.score(space.entries(k));
            if score > current + IMPROVEMENT_TOLERANCE {
                self.better.push((k, score));
            }
        }
        let better = &self.better;

        let mut accepted = false;
        if !better.is_empty() {
            let trial = if self.config.variant.best_response() {
                better.iter().fold(better[0], |best, &cand| if cand.1 > best.1 { cand } else { best }).0
            } else {
                better[self.rng.gen_range(0..better.len())].0
            };
            accepted =
                if self.config.variant.best_response() { true } else { self.rng.gen::<f64>() < 1.0 - self.config.effective_inertia() };
            if accepted {
                self.indices[i] = trial;
            }
        }
        let changed = self.indices[i] != incumbent;

        if self.settled_at.is_some_and(|s| t > s) {
            let quiet = !changed && self.better.is_empty();
            self.quiet = if quiet { self.quiet + 1 } else { 0 };
            self.verified = if quiet && full_subset { self.verified + 1 } else { 0 };
        }

        let remaining = if changed { game.remaining(&game.served(&self.indices)) } else { game.remaining(&served) };
        let record = StepRecord {
            t,
            satellite: i,
            epsilon,
            omega,
            sampled: self.subset.len(),
            better: self.better.len(),
            accepted,
            objective: max_of(&remaining),
            phi_before,
            phi: potential_from_remaining(&remaining, &norm),
        };
        if changed {
            self.trace.last_improvement = t;
        }
        self.trace.steps.push(record.clone());
        Ok(record)
    }

    /// Whether the current profile is a certified Nash equilibrium at the
    /// current ε. After `n` quiet turns with sampled subsets this runs one
    /// relay sweep over the full action spaces; it never draws randomness.
    pub fn certified(&mut self) -> Result<bool> {
        let n = self.game.stage.satellite_count();
        if self.verified >= n {
            return Ok(true);
        }
        if self.quiet < n {
            return Ok(false);
        }
        let norm = self.normalizer_at(self.config.epsilon_at(self.t));
        let served = self.game.served(&self.indices);
        for i in 0..n {
            let scorer = self.scorer(&served, i, &norm);
            let space = &self.game.spaces[i];
            let current = scorer.score(space.entries(self.indices[i]));
            if (0..space.len()).any(|k| scorer.score(space.entries(k)) > current + IMPROVEMENT_TOLERANCE) {
                self.quiet = 0;
                return Ok(false);
            }
        }
        self.verified = n;
        Ok(true)
    }

    pub fn run(mut self) -> Result<(AllocationFile, IterationTrace)> {
        while self.t < self.config.schedule.t_max {
            self.step()?;
            if self.config.early_stop && self.certified()? {
                self.trace.certified_nash = true;
                self.trace.stopped_early = self.t < self.config.schedule.t_max;
                break;
            }
        }
        Ok((self.profile(), self.trace))
    }
}

/// One iteration on a standalone profile. Builds the action spaces, so prefer
/// [`Learner`] for repeated steps.
pub fn setvbrp_step<R: Rng + ?Sized>(
    stage: &StageState,
    a: &AllocationFile,
    t: usize,
    config: &LearnerConfig,
    rng: &mut R,
) -> Result<(AllocationFile, StepRecord)> {
    if t == 0 {
        return Err(Error::validation("t", "iterations start at 1"));
    }
    let game = Game::new(stage.clone(), config.action_cap)?;
    let seeded = LearnerConfig { seed: rng.gen(), ..*config };
    let mut learner = Learner::new(&game, seeded, a)?;
    learner.t = t - 1;
    let record = learner.step()?;
    Ok((learner.profile(), record))
}

/// Runs from the greedy profile.
pub fn run_learner(stage: &StageState, config: &LearnerConfig) -> Result<(AllocationFile, IterationTrace)> {
    let game = Game::new(stage.clone(), config.action_cap)?;
    let initial = greedy_init(stage);
    run_learner_from(&game, config, &initial)
}

/// Runs from an injected profile. A stage where nobody can allocate anything
/// returns the profile untouched.
pub fn run_learner_from(game: &Game, config: &LearnerConfig, initial: &AllocationFile) -> Result<(AllocationFile, IterationTrace)> {
    if normalizer(game.stage(), SmoothingParams::new(config.schedule.epsilon_upper)?).is_err() {
        config.validate()?;
        game.stage().check_feasible(initial)?;
        let trace = IterationTrace {
            initial_objective: max_of(&crate::model::remaining_loads(game.stage(), initial)),
            certified_nash: true,
            ..IterationTrace::default()
        };
        return Ok((initial.clone(), trace));
    }
    Learner::new(game, *config, initial)?.run()
}
