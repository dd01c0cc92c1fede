//! Chaining single-stage games over the mission horizon.
//!
//! The horizon is cut into `Δt` slots. A slot is split further wherever a
//! visibility window opens or closes inside it, so that the visible set is
//! fixed within every stage. Each satellite pays the transfer penalty `H` in
//! stage `k` when none of the grids it served in stage `k − 1` is visible to
//! it any more.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::actions::{greedy_init, warm_start};
use crate::error::{Error, Result};
use crate::learning::{run_learner_from, Game, IterationTrace, LearnerConfig};
use crate::model::{max_of, objective, payload_transfer_time, visible_grids, AllocationFile, GridId, Minutes, Scenario, StageState};

/// The stages of a scenario in timeline order, all with zero transfer penalty.
#[derive(Clone, Debug)]
pub struct StageSchedule {
    stages: Vec<StageState>,
}

impl StageSchedule {
    pub fn stages(&self) -> &[StageState] {
        &self.stages
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }
}

pub fn segment_timeline(scenario: &Scenario) -> Result<StageSchedule> {
    let constants = scenario.constants();
    let span = constants.horizon.1.saturating_sub(constants.horizon.0);
    if constants.stage_length > span {
        return Err(Error::validation(
            "constants.dt",
            format!("stage length {} exceeds the horizon length {span}", constants.stage_length),
        ));
    }
    let mut stages = Vec::new();
    for slot in 0..constants.slot_count() {
        let (a, b) = constants.slot_bounds(slot);
        let mut cuts: BTreeSet<Minutes> = [a, b].into();
        for w in scenario.windows() {
            for p in [w.begin, w.end] {
                if a < p && p < b {
                    cuts.insert(p);
                }
            }
        }
        let cuts: Vec<Minutes> = cuts.into_iter().collect();
        for pair in cuts.windows(2) {
            let (start, end) = (pair[0], pair[1]);
            let stage = build_stage(scenario, slot, start, end - start)?.with_position(stages.len(), slot, start);
            stages.push(stage);
        }
    }
    Ok(StageSchedule { stages })
}

fn build_stage(scenario: &Scenario, slot: usize, start: Minutes, length: Minutes) -> Result<StageState> {
    let beta = (0..scenario.grid_count())
        .map(|j| {
            scenario
                .load_at(GridId(j), slot)
                .ok_or_else(|| Error::validation(format!("load[{}]", scenario.grid_names()[j]), format!("no load for slot {slot}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for (i, grids) in visible_grids(scenario.windows(), start, length) {
        for j in grids {
            let alpha = scenario.capacity_at(i, j, slot).ok_or_else(|| {
                Error::validation(
                    format!("capacity[{},{}]", scenario.satellite_names()[i.0], scenario.grid_names()[j.0]),
                    format!("no capacity for slot {slot}"),
                )
            })?;
            pairs.push((i, j, alpha));
        }
    }
    StageState::new(scenario.satellite_count(), beta, length, scenario.constants().transition_constant, pairs)
}

/// Transfer penalty of every satellite entering `stage` after playing
/// `previous`, capped at the stage length. No previous stage means no penalty.
pub fn chain_transition_times(previous: Option<&AllocationFile>, stage: &StageState, h: Minutes) -> Vec<Minutes> {
    stage
        .satellites()
        .map(|i| match previous {
            None => 0,
            Some(prev) if i.0 >= prev.len() => 0,
            Some(prev) => {
                let visible: BTreeSet<GridId> = stage.visible_grids(i).iter().map(|&(j, _)| j).collect();
                payload_transfer_time(&prev.action(i).support(), &visible, h).min(stage.length())
            }
        })
        .collect()
}

/// Per-stage seed; stage 0 uses the base seed unchanged.
pub fn stage_seed(seed: u64, stage: usize) -> u64 {
    seed.wrapping_add((stage as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DgapConfig {
    pub learner: LearnerConfig,
    /// Start every stage from the previous allocation instead of greedy.
    pub warm_start: bool,
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    /// The stage as played, with its transfer penalties.
    pub stage: StageState,
    pub allocation: AllocationFile,
    pub objective: f64,
    pub trace: IterationTrace,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct DgapResult {
    pub stages: Vec<StageOutcome>,
}

impl DgapResult {
    /// Largest stage objective over the horizon.
    pub fn worst_objective(&self) -> f64 {
        max_of(&self.stages.iter().map(|s| s.objective).collect::<Vec<_>>())
    }
}

pub fn run_dgap(scenario: &Scenario, config: &DgapConfig) -> Result<DgapResult> {
    config.learner.validate()?;
    let schedule = segment_timeline(scenario)?;
    let h = scenario.constants().transfer_penalty;
    let mut previous: Option<AllocationFile> = None;
    let mut stages = Vec::with_capacity(schedule.len());
    for (k, nominal) in schedule.stages.into_iter().enumerate() {
        let started = Instant::now();
        let wrap = |e: Error| Error::Stage { stage: k, source: Box::new(e) };
        let eta = chain_transition_times(previous.as_ref(), &nominal, h);
        let stage = nominal.with_eta(eta).map_err(wrap)?;
        let initial = match (&previous, config.warm_start) {
            (Some(prev), true) => warm_start(&stage, prev),
            _ => greedy_init(&stage),
        };
        let learner = LearnerConfig { seed: stage_seed(config.learner.seed, k), ..config.learner };
        let game = Game::new(stage.clone(), learner.action_cap).map_err(wrap)?;
        let (allocation, trace) = run_learner_from(&game, &learner, &initial).map_err(wrap)?;
        let objective = objective(&stage, &allocation).map_err(wrap)?;
        stages.push(StageOutcome { stage, allocation: allocation.clone(), objective, trace, wall_time_s: started.elapsed().as_secs_f64() });
        previous = Some(allocation);
    }
    Ok(DgapResult { stages })
}
