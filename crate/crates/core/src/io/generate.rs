//! Seeded synthetic scenarios.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::draw;
use crate::error::{Error, Result};
use crate::model::{CapacityEntry, Constants, GridId, LoadEntry, Minutes, SatelliteId, Scenario, TimeWindow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub satellites: usize,
    pub grids: usize,
    /// Probability that a satellite passes over a given grid.
    pub visibility: f64,
    /// Window length range in minutes; clipped to the horizon.
    pub window_length: (Minutes, Minutes),
    /// Window starts are drawn from `[0, spread]` after the horizon start.
    pub window_start_spread: Minutes,
    pub load_range: (f64, f64),
    pub capacity_range: (f64, f64),
    /// Draw integer loads and capacities.
    pub integral: bool,
    pub transfer_penalty: Minutes,
    pub transition_constant: Minutes,
    pub stage_length: Minutes,
    pub stages: usize,
    /// Multiplier on every load per stage; empty means 1 throughout.
    pub load_growth: Vec<f64>,
    pub seed: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 25 satellites over 9 grids.
    Regional,
    /// 100 satellites over 30 grids.
    Global,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "regional" => Ok(Preset::Regional),
            "global" => Ok(Preset::Global),
            _ => Err(Error::validation("preset", format!("unknown preset {s:?}; expected regional or global"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Regional => "regional",
            Preset::Global => "global",
        })
    }
}

impl ScenarioSpec {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let (satellites, grids, visibility) = match preset {
            Preset::Regional => (25, 9, 0.3),
            Preset::Global => (100, 30, 0.1),
        };
        Self {
            satellites,
            grids,
            visibility,
            window_length: (10, 10),
            window_start_spread: 0,
            load_range: (30.0, 80.0),
            capacity_range: (2.0, 3.0),
            integral: true,
            transfer_penalty: 2,
            transition_constant: 1,
            stage_length: 10,
            stages: 1,
            load_growth: Vec::new(),
            seed,
        }
    }

    /// Same spec spread over `stages` stages with per-stage load multipliers.
    /// Windows are stretched to cover the whole horizon.
    pub fn with_stages(mut self, stages: usize, load_growth: Vec<f64>) -> Self {
        let horizon = self.stage_length * stages as Minutes;
        self.stages = stages;
        self.load_growth = load_growth;
        self.window_length = (horizon, horizon);
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: String| Err(Error::validation(format!("spec.{path}"), msg));
        if self.satellites == 0 || self.grids == 0 {
            return bad("satellites", "need at least one satellite and one grid".into());
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return bad("visibility", format!("must lie in [0, 1], got {}", self.visibility));
        }
        if self.window_length.0 == 0 || self.window_length.0 > self.window_length.1 {
            return bad("window_length", format!("need 0 < lo ≤ hi, got {:?}", self.window_length));
        }
        if self.stage_length == 0 || self.stages == 0 {
            return bad("stages", "need a positive stage length and at least one stage".into());
        }
        if !self.load_growth.is_empty() && self.load_growth.len() != self.stages {
            return bad("load_growth", format!("expected {} entries, got {}", self.stages, self.load_growth.len()));
        }
        let (lo, hi) = self.load_range;
        if !(lo >= 0.0 && lo <= hi) {
            return bad("load_range", format!("need 0 ≤ lo ≤ hi, got [{lo}, {hi}]"));
        }
        let (lo, hi) = self.capacity_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad("capacity_range", format!("need 0 < lo ≤ hi, got [{lo}, {hi}]"));
        }
        if self.integral
            && (self.capacity_range.0.ceil() > self.capacity_range.1.floor() || self.load_range.0.ceil() > self.load_range.1.floor())
        {
            return bad("integral", "a range contains no integer".into());
        }
        Ok(())
    }
}

/// Draws a scenario. Every satellite gets at least one window starting at the
/// horizon start. Capacities are drawn once per pair and shared by all stages.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let horizon_end = spec.stage_length * spec.stages as Minutes;
    let window = |rng: &mut ChaCha8Rng, i: usize, j: usize, spread: Minutes| {
        let begin = rng.gen_range(0..=spread.min(horizon_end - 1));
        let length = rng.gen_range(spec.window_length.0..=spec.window_length.1);
        TimeWindow::new(SatelliteId(i), GridId(j), begin, (begin + length).min(horizon_end))
    };
    let mut windows = Vec::new();
    for i in 0..spec.satellites {
        let before = windows.len();
        for j in 0..spec.grids {
            if rng.gen::<f64>() < spec.visibility {
                windows.push(window(&mut rng, i, j, spec.window_start_spread)?);
            }
        }
        if windows.len() == before {
            let j = rng.gen_range(0..spec.grids);
            windows.push(window(&mut rng, i, j, 0)?);
        }
    }

    let growth = |k: usize| spec.load_growth.get(k).copied().unwrap_or(1.0);
    let per_stage = spec.stages > 1;
    let stage_tag = |k: usize| per_stage.then_some(k);
    let round = |v: f64| if spec.integral { v.round() } else { v };

    let mut load = Vec::new();
    for j in 0..spec.grids {
        let base = draw(&mut rng, spec.load_range.0, spec.load_range.1, spec.integral);
        for k in 0..spec.stages {
            load.push(LoadEntry { grid: GridId(j), stage: stage_tag(k), beta: round(base * growth(k)) });
        }
    }
    let pairs: BTreeSet<(SatelliteId, GridId)> = windows.iter().map(|w| (w.satellite, w.grid)).collect();
    let mut capacity = Vec::new();
    for (satellite, grid) in pairs {
        let alpha = draw(&mut rng, spec.capacity_range.0, spec.capacity_range.1, spec.integral);
        capacity.push(CapacityEntry { satellite, grid, stage: None, alpha });
    }

    Scenario::new(
        (1..=spec.satellites).map(|i| format!("s{i}")).collect(),
        (1..=spec.grids).map(|j| format!("g{j}")).collect(),
        windows,
        capacity,
        load,
        Constants {
            transfer_penalty: spec.transfer_penalty,
            transition_constant: spec.transition_constant,
            stage_length: spec.stage_length,
            horizon: (0, horizon_end),
        },
    )
}
