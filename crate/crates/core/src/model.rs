//! Domain types and the raw single-stage allocation model.
//!
//! Time is measured in integer minutes. A satellite splits the allocatable
//! time of a stage across the grids it can see; every grid it opens costs the
//! transition constant `C`, and a stage-level payload transfer penalty `η`
//! is charged against the same budget.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Minutes = u32;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SatelliteId(pub usize);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridId(pub usize);

impl fmt::Display for SatelliteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl fmt::Display for GridId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

/// Interval `[begin, end]` during which `satellite` can observe `grid`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TimeWindow {
    pub satellite: SatelliteId,
    pub grid: GridId,
    pub begin: Minutes,
    pub end: Minutes,
}

impl TimeWindow {
    pub fn new(satellite: SatelliteId, grid: GridId, begin: Minutes, end: Minutes) -> Result<Self> {
        if begin >= end {
            return Err(Error::validation(
                format!("window({satellite},{grid})"),
                format!("begin {begin} must be strictly before end {end}"),
            ));
        }
        Ok(Self { satellite, grid, begin, end })
    }

    /// Whether the window covers the whole interval `[start, start + length]`.
    pub fn covers(&self, start: Minutes, length: Minutes) -> bool {
        self.begin <= start && self.end >= start + length
    }
}

/// Observation capacity α of a satellite for a grid. `stage: None` applies to
/// every stage slot without an explicit entry.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct CapacityEntry {
    pub satellite: SatelliteId,
    pub grid: GridId,
    pub stage: Option<usize>,
    pub alpha: f64,
}

/// Observation load β of a grid, with the same stage defaulting rule as
/// [`CapacityEntry`].
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct LoadEntry {
    pub grid: GridId,
    pub stage: Option<usize>,
    pub beta: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constants {
    /// Payload transfer penalty `H` between stages.
    pub transfer_penalty: Minutes,
    /// Imaging transition time `C` per allocated grid.
    pub transition_constant: Minutes,
    /// Nominal stage length `Δt`.
    pub stage_length: Minutes,
    pub horizon: (Minutes, Minutes),
}

impl Constants {
    /// Number of nominal `Δt` slots needed to tile the horizon.
    pub fn slot_count(&self) -> usize {
        let span = self.horizon.1.saturating_sub(self.horizon.0);
        span.div_ceil(self.stage_length.max(1)) as usize
    }

    /// `[start, end)` of nominal slot `slot`, clipped to the horizon.
    pub fn slot_bounds(&self, slot: usize) -> (Minutes, Minutes) {
        let start = self.horizon.0 + slot as Minutes * self.stage_length;
        (start, (start + self.stage_length).min(self.horizon.1))
    }
}

/// A validated multi-stage problem instance.
#[derive(Clone, Debug)]
pub struct Scenario {
    satellites: Vec<String>,
    grids: Vec<String>,
    windows: Vec<TimeWindow>,
    capacity: Vec<CapacityEntry>,
    load: Vec<LoadEntry>,
    constants: Constants,
    capacity_index: HashMap<(SatelliteId, GridId, Option<usize>), f64>,
    load_index: HashMap<(GridId, Option<usize>), f64>,
}

impl Scenario {
    pub fn new(
        satellites: Vec<String>,
        grids: Vec<String>,
        windows: Vec<TimeWindow>,
        capacity: Vec<CapacityEntry>,
        load: Vec<LoadEntry>,
        constants: Constants,
    ) -> Result<Self> {
        if satellites.is_empty() {
            return Err(Error::validation("satellites", "at least one satellite is required"));
        }
        if grids.is_empty() {
            return Err(Error::validation("grids", "at least one grid is required"));
        }
        check_unique("satellites", &satellites)?;
        check_unique("grids", &grids)?;
        if constants.stage_length < 1 {
            return Err(Error::validation("constants.dt", "stage length must be at least 1 minute"));
        }
        let (h0, h1) = constants.horizon;
        if h0 >= h1 {
            return Err(Error::validation("constants.horizon", format!("horizon [{h0}, {h1}] is empty")));
        }
        if constants.stage_length > h1 - h0 {
            return Err(Error::validation(
                "constants.dt",
                format!("stage length {} exceeds the horizon length {}", constants.stage_length, h1 - h0),
            ));
        }
        let n = satellites.len();
        let m = grids.len();
        let slots = constants.slot_count();

        for (k, w) in windows.iter().enumerate() {
            let path = format!("windows[{k}]");
            if w.satellite.0 >= n || w.grid.0 >= m {
                return Err(Error::validation(path, "unknown satellite or grid"));
            }
            if w.begin >= w.end {
                return Err(Error::validation(path, format!("begin {} must be strictly before end {}", w.begin, w.end)));
            }
            if w.begin < h0 || w.end > h1 {
                return Err(Error::validation(path, format!("window [{}, {}] lies outside the horizon [{h0}, {h1}]", w.begin, w.end)));
            }
        }

        let mut capacity_index = HashMap::new();
        for (k, c) in capacity.iter().enumerate() {
            let path = format!("capacity[{k}]");
            if c.satellite.0 >= n || c.grid.0 >= m {
                return Err(Error::validation(path, "unknown satellite or grid"));
            }
            if c.stage.is_some_and(|s| s >= slots) {
                return Err(Error::validation(path, format!("stage beyond the {slots} stage slots")));
            }
            if !(c.alpha.is_finite() && c.alpha > 0.0) {
                return Err(Error::validation(
                    format!("{path} ({},{})", satellites[c.satellite.0], grids[c.grid.0]),
                    format!("capacity must be positive, got {}", c.alpha),
                ));
            }
            if capacity_index.insert((c.satellite, c.grid, c.stage), c.alpha).is_some() {
                return Err(Error::validation(path, "duplicate capacity entry"));
            }
        }

        let mut load_index = HashMap::new();
        for (k, l) in load.iter().enumerate() {
            let path = format!("load[{k}]");
            if l.grid.0 >= m {
                return Err(Error::validation(path, "unknown grid"));
            }
            if l.stage.is_some_and(|s| s >= slots) {
                return Err(Error::validation(path, format!("stage beyond the {slots} stage slots")));
            }
            if !(l.beta.is_finite() && l.beta >= 0.0) {
                return Err(Error::validation(
                    format!("{path} (grid {})", grids[l.grid.0]),
                    format!("load must be non-negative, got {}", l.beta),
                ));
            }
            if load_index.insert((l.grid, l.stage), l.beta).is_some() {
                return Err(Error::validation(path, "duplicate load entry"));
            }
        }

        let scenario = Self { satellites, grids, windows, capacity, load, constants, capacity_index, load_index };

        for slot in 0..slots {
            for j in 0..m {
                if scenario.load_at(GridId(j), slot).is_none() {
                    return Err(Error::validation(format!("load(grid {}, stage {slot})", scenario.grids[j]), "missing observation load"));
                }
            }
        }
        for (k, w) in scenario.windows.iter().enumerate() {
            for slot in 0..slots {
                let (a, b) = constants.slot_bounds(slot);
                let overlaps = w.begin < b && w.end > a;
                if overlaps && scenario.capacity_at(w.satellite, w.grid, slot).is_none() {
                    return Err(Error::validation(
                        format!("windows[{k}]"),
                        format!("no capacity for ({}, {}) in stage {slot}", scenario.satellites[w.satellite.0], scenario.grids[w.grid.0]),
                    ));
                }
            }
        }
        Ok(scenario)
    }

    pub fn satellite_names(&self) -> &[String] {
        &self.satellites
    }

    pub fn grid_names(&self) -> &[String] {
        &self.grids
    }

    pub fn satellite_count(&self) -> usize {
        self.satellites.len()
    }

    pub fn grid_count(&self) -> usize {
        self.grids.len()
    }

    pub fn windows(&self) -> &[TimeWindow] {
        &self.windows
    }

    pub fn capacity_entries(&self) -> &[CapacityEntry] {
        &self.capacity
    }

    pub fn load_entries(&self) -> &[LoadEntry] {
        &self.load
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    /// α for the pair in `slot`, falling back to the stage-less default.
    pub fn capacity_at(&self, satellite: SatelliteId, grid: GridId, slot: usize) -> Option<f64> {
        self.capacity_index.get(&(satellite, grid, Some(slot))).or_else(|| self.capacity_index.get(&(satellite, grid, None))).copied()
    }

    /// β for the grid in `slot`, falling back to the stage-less default.
    pub fn load_at(&self, grid: GridId, slot: usize) -> Option<f64> {
        self.load_index.get(&(grid, Some(slot))).or_else(|| self.load_index.get(&(grid, None))).copied()
    }

    /// Copy of this scenario with a different payload transfer penalty.
    pub fn with_transfer_penalty(&self, h: Minutes) -> Self {
        let mut s = self.clone();
        s.constants.transfer_penalty = h;
        s
    }
}

fn check_unique(path: &str, names: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for (k, name) in names.iter().enumerate() {
        if !seen.insert(name.as_str()) {
            return Err(Error::validation(format!("{path}[{k}]"), format!("duplicate id {name:?}")));
        }
    }
    Ok(())
}

/// One single-stage problem: who sees what, capacities, loads and the
/// per-satellite transfer penalty charged in this stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageState {
    index: usize,
    slot: usize,
    start: Minutes,
    length: Minutes,
    transition_constant: Minutes,
    visible: Vec<Vec<(GridId, f64)>>,
    visible_sats: Vec<Vec<SatelliteId>>,
    beta: Vec<f64>,
    eta: Vec<Minutes>,
}

impl StageState {
    /// Builds a stage over `satellite_count` satellites and `beta.len()` grids.
    /// `pairs` lists every visible (satellite, grid, α) triple.
    pub fn new(
        satellite_count: usize,
        beta: Vec<f64>,
        length: Minutes,
        transition_constant: Minutes,
        pairs: impl IntoIterator<Item = (SatelliteId, GridId, f64)>,
    ) -> Result<Self> {
        if satellite_count == 0 {
            return Err(Error::validation("stage.satellites", "at least one satellite is required"));
        }
        if beta.is_empty() {
            return Err(Error::validation("stage.beta", "at least one grid is required"));
        }
        if length < 1 {
            return Err(Error::validation("stage.length", "stage length must be at least 1 minute"));
        }
        for (j, b) in beta.iter().enumerate() {
            if !(b.is_finite() && *b >= 0.0) {
                return Err(Error::validation(format!("stage.beta[{j}]"), format!("load must be non-negative, got {b}")));
            }
        }
        let m = beta.len();
        let mut visible: Vec<BTreeMap<GridId, f64>> = vec![BTreeMap::new(); satellite_count];
        for (i, j, alpha) in pairs {
            if i.0 >= satellite_count || j.0 >= m {
                return Err(Error::validation(format!("stage.alpha({i},{j})"), "unknown satellite or grid"));
            }
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(Error::validation(format!("stage.alpha({i},{j})"), format!("capacity must be positive, got {alpha}")));
            }
            if visible[i.0].insert(j, alpha).is_some() {
                return Err(Error::validation(format!("stage.alpha({i},{j})"), "duplicate visible pair"));
            }
        }
        let visible: Vec<Vec<(GridId, f64)>> = visible.into_iter().map(|v| v.into_iter().collect()).collect();
        let mut visible_sats = vec![Vec::new(); m];
        for (i, grids) in visible.iter().enumerate() {
            for &(j, _) in grids {
                visible_sats[j.0].push(SatelliteId(i));
            }
        }
        Ok(Self { index: 0, slot: 0, start: 0, length, transition_constant, visible, visible_sats, beta, eta: vec![0; satellite_count] })
    }

    /// Sets the stage position on the timeline.
    pub fn with_position(mut self, index: usize, slot: usize, start: Minutes) -> Self {
        self.index = index;
        self.slot = slot;
        self.start = start;
        self
    }

    /// Replaces the per-satellite transfer penalties. Each must fit in the stage.
    pub fn with_eta(mut self, eta: Vec<Minutes>) -> Result<Self> {
        if eta.len() != self.satellite_count() {
            return Err(Error::validation("stage.eta", format!("expected {} entries, got {}", self.satellite_count(), eta.len())));
        }
        if let Some((i, e)) = eta.iter().enumerate().find(|(_, e)| **e > self.length) {
            return Err(Error::validation(format!("stage.eta[{i}]"), format!("penalty {e} exceeds the stage length {}", self.length)));
        }
        self.eta = eta;
        Ok(self)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Nominal Δt slot whose capacity/load tables this stage uses.
    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn start(&self) -> Minutes {
        self.start
    }

    /// Allocatable time Δt of this stage.
    pub fn length(&self) -> Minutes {
        self.length
    }

    pub fn transition_constant(&self) -> Minutes {
        self.transition_constant
    }

    pub fn satellite_count(&self) -> usize {
        self.visible.len()
    }

    pub fn grid_count(&self) -> usize {
        self.beta.len()
    }

    pub fn satellites(&self) -> impl Iterator<Item = SatelliteId> {
        (0..self.satellite_count()).map(SatelliteId)
    }

    /// `R_ik` with α, sorted by grid id.
    pub fn visible_grids(&self, i: SatelliteId) -> &[(GridId, f64)] {
        &self.visible[i.0]
    }

    /// `S_jk`, sorted by satellite id.
    pub fn visible_satellites(&self, j: GridId) -> &[SatelliteId] {
        &self.visible_sats[j.0]
    }

    pub fn alpha(&self, i: SatelliteId, j: GridId) -> Option<f64> {
        let row = &self.visible[i.0];
        row.binary_search_by_key(&j, |&(g, _)| g).ok().map(|k| row[k].1)
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn eta(&self) -> &[Minutes] {
        &self.eta
    }

    /// Time left for observation and transitions after the transfer penalty.
    pub fn budget(&self, i: SatelliteId) -> Minutes {
        self.length.saturating_sub(self.eta[i.0])
    }

    pub fn visible_pair_count(&self) -> usize {
        self.visible.iter().map(Vec::len).sum()
    }

    /// A stage with no visible pair has nothing to allocate.
    pub fn is_idle(&self) -> bool {
        self.visible_pair_count() == 0
    }

    /// Checks every action of `a` against this stage, naming the first violation.
    pub fn check_feasible(&self, a: &AllocationFile) -> Result<()> {
        if a.len() != self.satellite_count() {
            return Err(Error::validation("allocation", format!("expected {} actions, got {}", self.satellite_count(), a.len())));
        }
        for (i, action) in a.iter().enumerate() {
            if action.owner() != SatelliteId(i) {
                return Err(Error::validation(format!("allocation[{i}]"), "action owner out of order"));
            }
            if !is_feasible_action(self, action) {
                return Err(Error::validation(
                    format!("allocation[{i}]"),
                    "action exceeds the time budget or uses a grid outside the visible set",
                ));
            }
        }
        Ok(())
    }
}

/// One satellite's allocation: positive integer minutes per grid, sorted by
/// grid id. The null action is the empty allocation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action {
    owner: SatelliteId,
    allocation: Vec<(GridId, Minutes)>,
}

impl Action {
    pub fn null(owner: SatelliteId) -> Self {
        Self { owner, allocation: Vec::new() }
    }

    pub fn new(owner: SatelliteId, allocation: impl IntoIterator<Item = (GridId, Minutes)>) -> Result<Self> {
        let mut allocation: Vec<_> = allocation.into_iter().collect();
        allocation.sort_unstable_by_key(|&(g, _)| g);
        for w in allocation.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::validation(format!("action({owner}).{}", w[0].0), "grid listed twice"));
            }
        }
        if let Some(&(g, _)) = allocation.iter().find(|&&(_, x)| x == 0) {
            return Err(Error::validation(format!("action({owner}).{g}"), "allocated minutes must be positive"));
        }
        Ok(Self { owner, allocation })
    }

    /// Builds from entries already sorted by grid with positive minutes.
    pub(crate) fn from_sorted(owner: SatelliteId, allocation: Vec<(GridId, Minutes)>) -> Self {
        debug_assert!(allocation.windows(2).all(|w| w[0].0 < w[1].0));
        debug_assert!(allocation.iter().all(|&(_, x)| x > 0));
        Self { owner, allocation }
    }

    pub fn owner(&self) -> SatelliteId {
        self.owner
    }

    pub fn entries(&self) -> &[(GridId, Minutes)] {
        &self.allocation
    }

    pub fn is_null(&self) -> bool {
        self.allocation.is_empty()
    }

    /// `N_{a_i}`: grids with positive allocation.
    pub fn support(&self) -> BTreeSet<GridId> {
        self.allocation.iter().map(|&(g, _)| g).collect()
    }

    pub fn support_size(&self) -> usize {
        self.allocation.len()
    }

    pub fn total_minutes(&self) -> Minutes {
        self.allocation.iter().map(|&(_, x)| x).sum()
    }

    pub fn minutes(&self, grid: GridId) -> Minutes {
        self.allocation.binary_search_by_key(&grid, |&(g, _)| g).map(|k| self.allocation[k].1).unwrap_or(0)
    }
}

/// The joint profile: one action per satellite, indexed by satellite id.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AllocationFile {
    actions: Vec<Action>,
}

impl AllocationFile {
    pub fn new(actions: Vec<Action>) -> Result<Self> {
        for (i, a) in actions.iter().enumerate() {
            if a.owner != SatelliteId(i) {
                return Err(Error::validation(format!("allocation[{i}]"), format!("owner {} does not match position", a.owner)));
            }
        }
        Ok(Self { actions })
    }

    pub fn null(satellite_count: usize) -> Self {
        Self { actions: (0..satellite_count).map(|i| Action::null(SatelliteId(i))).collect() }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn action(&self, i: SatelliteId) -> &Action {
        &self.actions[i.0]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Action> {
        self.actions.iter()
    }

    /// Replaces satellite `action.owner()`'s action.
    pub fn set(&mut self, action: Action) {
        let i = action.owner.0;
        self.actions[i] = action;
    }

    /// Same profile with satellite `i` switched to `action`.
    pub fn with_action(&self, action: Action) -> Self {
        let mut out = self.clone();
        out.set(action);
        out
    }

    /// `S_a^j`: satellites with positive time on `grid`.
    pub fn satellites_on(&self, grid: GridId) -> Vec<SatelliteId> {
        self.actions.iter().filter(|a| a.minutes(grid) > 0).map(|a| a.owner).collect()
    }
}

/// Grids visible to each satellite over `[t_k, t_k + dt]`: a window counts
/// when it covers the whole interval. Satellites seeing nothing are omitted.
pub fn visible_grids(windows: &[TimeWindow], t_k: Minutes, dt: Minutes) -> BTreeMap<SatelliteId, BTreeSet<GridId>> {
    let mut out: BTreeMap<SatelliteId, BTreeSet<GridId>> = BTreeMap::new();
    for w in windows.iter().filter(|w| w.covers(t_k, dt)) {
        out.entry(w.satellite).or_default().insert(w.grid);
    }
    out
}

/// Work delivered to each grid, `α_j^T x`.
pub fn served_loads(stage: &StageState, a: &AllocationFile) -> Vec<f64> {
    let mut served = vec![0.0; stage.grid_count()];
    for action in a.iter() {
        for &(j, x) in action.entries() {
            let alpha = stage.alpha(action.owner(), j).unwrap_or(0.0);
            served[j.0] += alpha * x as f64;
        }
    }
    served
}

/// `y_j = β_j − α_j^T x` for every grid. Over-service yields negative values.
pub fn remaining_loads(stage: &StageState, a: &AllocationFile) -> Vec<f64> {
    served_loads(stage, a).into_iter().zip(stage.beta()).map(|(s, b)| b - s).collect()
}

pub fn remaining_load(stage: &StageState, a: &AllocationFile, grid: GridId) -> Result<f64> {
    if grid.0 >= stage.grid_count() {
        return Err(Error::validation(format!("grid {grid}"), "unknown grid"));
    }
    let mut y = stage.beta()[grid.0];
    for i in a.satellites_on(grid) {
        let alpha = stage.alpha(i, grid).unwrap_or(0.0);
        y -= alpha * a.action(i).minutes(grid) as f64;
    }
    Ok(y)
}

/// `ρ_i = |N_{a_i}|·C`.
pub fn imaging_transition_time(action: &Action, c: Minutes) -> Minutes {
    action.support_size() as Minutes * c
}

/// `H` when the satellite had allocated grids before and none of them is in
/// `curr`, otherwise zero.
pub fn payload_transfer_time(prev: &BTreeSet<GridId>, curr: &BTreeSet<GridId>, h: Minutes) -> Minutes {
    if !prev.is_empty() && prev.is_disjoint(curr) {
        h
    } else {
        0
    }
}

/// Whether `action` uses only visible grids and fits `Σx + ρ + η ≤ Δt`.
pub fn is_feasible_action(stage: &StageState, action: &Action) -> bool {
    let i = action.owner();
    if i.0 >= stage.satellite_count() {
        return false;
    }
    let visible = stage.visible_grids(i);
    let all_visible = action.entries().iter().all(|&(j, _)| visible.binary_search_by_key(&j, |&(g, _)| g).is_ok());
    if !all_visible {
        return false;
    }
    let used =
        action.total_minutes() as u64 + imaging_transition_time(action, stage.transition_constant()) as u64 + stage.eta()[i.0] as u64;
    used <= stage.length() as u64
}

/// The min-max objective `max_j (β_j − α_j^T x)`.
pub fn objective(stage: &StageState, a: &AllocationFile) -> Result<f64> {
    stage.check_feasible(a)?;
    Ok(max_of(&remaining_loads(stage, a)))
}

pub(crate) fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(j: usize) -> GridId {
        GridId(j)
    }

    fn s(i: usize) -> SatelliteId {
        SatelliteId(i)
    }

    fn set(grids: &[usize]) -> BTreeSet<GridId> {
        grids.iter().map(|&j| GridId(j)).collect()
    }

    fn single_sat(beta: Vec<f64>, length: Minutes, c: Minutes) -> StageState {
        let m = beta.len();
        StageState::new(1, beta, length, c, (0..m).map(|j| (s(0), g(j), 1.0))).unwrap()
    }

    #[test]
    fn visibility_requires_window_to_cover_stage() {
        let w = TimeWindow::new(s(0), g(0), 0, 20).unwrap();
        assert_eq!(visible_grids(&[w], 5, 10), BTreeMap::from([(s(0), set(&[0]))]));
        let w = TimeWindow::new(s(0), g(0), 0, 8).unwrap();
        assert!(visible_grids(&[w], 5, 10).is_empty());
    }

    #[test]
    fn visibility_enumerated_against_covering_rule() {
        let windows = [TimeWindow::new(s(0), g(0), 0, 30).unwrap(), TimeWindow::new(s(0), g(1), 12, 30).unwrap()];
        let got = visible_grids(&windows, 0, 10);
        // brute force over every minute of the stage
        let mut expected: BTreeMap<SatelliteId, BTreeSet<GridId>> = BTreeMap::new();
        for w in &windows {
            if (0..=10).all(|u| w.begin <= u && u <= w.end) {
                expected.entry(w.satellite).or_default().insert(w.grid);
            }
        }
        assert_eq!(got, expected);
        assert_eq!(got, BTreeMap::from([(s(0), set(&[0]))]));
    }

    #[test]
    fn window_rejects_empty_interval() {
        assert!(TimeWindow::new(s(0), g(0), 5, 5).is_err());
        assert!(TimeWindow::new(s(0), g(0), 6, 5).is_err());
    }

    #[test]
    fn remaining_load_examples() {
        let stage = StageState::new(2, vec![5.0, 6.0], 10, 1, [(s(0), g(0), 2.0), (s(0), g(1), 2.0), (s(1), g(1), 3.0)]).unwrap();
        let mut a = AllocationFile::null(2);
        assert_eq!(remaining_load(&stage, &a, g(0)).unwrap(), 5.0);
        a.set(Action::new(s(0), [(g(0), 1)]).unwrap());
        assert_eq!(remaining_load(&stage, &a, g(0)).unwrap(), 3.0);
        a.set(Action::new(s(0), [(g(1), 2)]).unwrap());
        a.set(Action::new(s(1), [(g(1), 1)]).unwrap());
        assert_eq!(remaining_load(&stage, &a, g(1)).unwrap(), -1.0);
        assert!(remaining_load(&stage, &a, g(7)).is_err());
    }

    #[test]
    fn transition_time_counts_allocated_grids() {
        assert_eq!(imaging_transition_time(&Action::null(s(0)), 1), 0);
        let two = Action::new(s(0), [(g(0), 3), (g(1), 4)]).unwrap();
        assert_eq!(imaging_transition_time(&two, 1), 2);
        let three = Action::new(s(0), [(g(0), 1), (g(1), 1), (g(2), 1)]).unwrap();
        assert_eq!(imaging_transition_time(&three, 2), 6);
    }

    #[test]
    fn payload_transfer_examples() {
        assert_eq!(payload_transfer_time(&set(&[1, 2]), &set(&[3]), 2), 2);
        assert_eq!(payload_transfer_time(&set(&[1]), &set(&[1, 4]), 2), 0);
        assert_eq!(payload_transfer_time(&set(&[]), &set(&[1]), 2), 0);
    }

    #[test]
    fn first_stage_optimum_does_not_depend_on_h() {
        // With no previous allocation the penalty is zero for any H, so the
        // best reachable objective is the same.
        for h in [0, 2, 7] {
            let eta = payload_transfer_time(&BTreeSet::new(), &set(&[0]), h);
            let stage = single_sat(vec![5.0], 4, 1).with_eta(vec![eta]).unwrap();
            let best = (1..=4)
                .map(|x| Action::new(s(0), [(g(0), x)]).unwrap())
                .filter(|a| is_feasible_action(&stage, a))
                .map(|a| 5.0 - a.total_minutes() as f64)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(best, 2.0);
        }
    }

    #[test]
    fn feasibility_boundaries() {
        let stage = single_sat(vec![1.0, 1.0], 10, 1);
        assert!(is_feasible_action(&stage, &Action::new(s(0), [(g(0), 9)]).unwrap()));
        assert!(!is_feasible_action(&stage, &Action::new(s(0), [(g(0), 5), (g(1), 5)]).unwrap()));
        let with_eta = stage.clone().with_eta(vec![2]).unwrap();
        // boundary found by scanning x upward
        let largest = (1..=10).filter(|&x| is_feasible_action(&with_eta, &Action::new(s(0), [(g(0), x)]).unwrap())).max();
        assert_eq!(largest, Some(7));
    }

    #[test]
    fn feasibility_rejects_invisible_grid() {
        let stage = StageState::new(1, vec![1.0, 1.0], 10, 1, [(s(0), g(0), 1.0)]).unwrap();
        assert!(!is_feasible_action(&stage, &Action::new(s(0), [(g(1), 1)]).unwrap()));
    }

    #[test]
    fn objective_examples() {
        let stage = StageState::new(2, vec![4.0, 4.0], 10, 1, [(s(0), g(0), 2.0), (s(1), g(1), 1.0)]).unwrap();
        let null = AllocationFile::null(2);
        assert_eq!(objective(&stage, &null).unwrap(), 4.0);
        let served = AllocationFile::new(vec![Action::new(s(0), [(g(0), 2)]).unwrap(), Action::new(s(1), [(g(1), 4)]).unwrap()]).unwrap();
        assert_eq!(objective(&stage, &served).unwrap(), 0.0);
        let infeasible = AllocationFile::new(vec![Action::new(s(0), [(g(0), 10)]).unwrap(), Action::null(s(1))]).unwrap();
        assert!(objective(&stage, &infeasible).is_err());
    }

    #[test]
    fn two_by_two_optimum_by_enumeration() {
        // 2 satellites, 2 grids, β=(30,40), α=2 everywhere, Δt=10, C=1.
        // One satellite on g1 alone (9 min) and the other splitting 6/2
        // leaves (18, 18); serving both grids from both satellites caps the
        // total work at 32, so max ≥ (70 − 32)/2 = 19 there.
        let pairs = (0..2).flat_map(|i| (0..2).map(move |j| (s(i), g(j), 2.0)));
        let stage = StageState::new(2, vec![30.0, 40.0], 10, 1, pairs).unwrap();
        let mut per_sat = Vec::new();
        for i in 0..2 {
            let mut acts = vec![Action::null(s(i))];
            for x0 in 0..=10 {
                for x1 in 0..=10 {
                    let entries: Vec<_> = [(g(0), x0), (g(1), x1)].into_iter().filter(|e| e.1 > 0).collect();
                    if entries.is_empty() {
                        continue;
                    }
                    let a = Action::new(s(i), entries).unwrap();
                    if is_feasible_action(&stage, &a) {
                        acts.push(a);
                    }
                }
            }
            per_sat.push(acts);
        }
        let mut best = f64::INFINITY;
        for a0 in &per_sat[0] {
            for a1 in &per_sat[1] {
                let file = AllocationFile::new(vec![a0.clone(), a1.clone()]).unwrap();
                best = best.min(objective(&stage, &file).unwrap());
            }
        }
        assert_eq!(best, 18.0);
    }

    #[test]
    fn stage_transpose_is_consistent() {
        let stage = StageState::new(3, vec![1.0; 3], 5, 0, [(s(0), g(2), 1.0), (s(2), g(0), 2.0), (s(2), g(2), 1.5)]).unwrap();
        for i in stage.satellites() {
            for j in (0..3).map(GridId) {
                let forward = stage.alpha(i, j).is_some();
                let backward = stage.visible_satellites(j).contains(&i);
                assert_eq!(forward, backward);
            }
        }
    }

    #[test]
    fn stage_rejects_bad_eta() {
        let stage = single_sat(vec![1.0], 5, 0);
        assert!(stage.clone().with_eta(vec![6]).is_err());
        assert!(stage.with_eta(vec![1, 1]).is_err());
    }

    #[test]
    fn action_rejects_zero_and_duplicates() {
        assert!(Action::new(s(0), [(g(0), 0)]).is_err());
        assert!(Action::new(s(0), [(g(0), 1), (g(0), 2)]).is_err());
        let a = Action::new(s(0), [(g(2), 1), (g(0), 2)]).unwrap();
        assert_eq!(a.entries(), &[(g(0), 2), (g(2), 1)]);
    }

    fn tiny_scenario() -> Result<Scenario> {
        Scenario::new(
            vec!["s1".into()],
            vec!["g1".into()],
            vec![TimeWindow::new(s(0), g(0), 0, 20)?],
            vec![CapacityEntry { satellite: s(0), grid: g(0), stage: None, alpha: 2.0 }],
            vec![LoadEntry { grid: g(0), stage: None, beta: 10.0 }],
            Constants { transfer_penalty: 2, transition_constant: 1, stage_length: 10, horizon: (0, 20) },
        )
    }

    #[test]
    fn scenario_validation() {
        assert!(tiny_scenario().is_ok());
        let base = tiny_scenario().unwrap();
        let bad_load = Scenario::new(
            base.satellite_names().to_vec(),
            base.grid_names().to_vec(),
            base.windows().to_vec(),
            base.capacity_entries().to_vec(),
            vec![LoadEntry { grid: g(0), stage: None, beta: -1.0 }],
            *base.constants(),
        );
        let err = bad_load.unwrap_err().to_string();
        assert!(err.contains("g1"), "{err}");

        let missing_capacity = Scenario::new(
            base.satellite_names().to_vec(),
            base.grid_names().to_vec(),
            base.windows().to_vec(),
            vec![CapacityEntry { satellite: s(0), grid: g(0), stage: Some(0), alpha: 2.0 }],
            base.load_entries().to_vec(),
            *base.constants(),
        );
        assert!(missing_capacity.is_err());

        let long_dt = Scenario::new(
            base.satellite_names().to_vec(),
            base.grid_names().to_vec(),
            base.windows().to_vec(),
            base.capacity_entries().to_vec(),
            base.load_entries().to_vec(),
            Constants { stage_length: 30, ..*base.constants() },
        );
        assert!(long_dt.is_err());
    }

    #[test]
    fn stage_specific_tables_override_defaults() {
        let sc = Scenario::new(
            vec!["s1".into()],
            vec!["g1".into()],
            vec![],
            vec![],
            vec![LoadEntry { grid: g(0), stage: None, beta: 10.0 }, LoadEntry { grid: g(0), stage: Some(1), beta: 12.0 }],
            Constants { transfer_penalty: 0, transition_constant: 1, stage_length: 10, horizon: (0, 20) },
        )
        .unwrap();
        assert_eq!(sc.load_at(g(0), 0), Some(10.0));
        assert_eq!(sc.load_at(g(0), 1), Some(12.0));
    }
}
