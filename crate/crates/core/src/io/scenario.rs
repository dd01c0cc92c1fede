//! Scenario files: JSON with string ids, validated on load.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CapacityEntry, Constants, GridId, LoadEntry, Minutes, SatelliteId, Scenario, TimeWindow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    satellites: Vec<String>,
    grids: Vec<String>,
    windows: Vec<WindowRecord>,
    capacity: CapacitySpec,
    load: Vec<LoadRecord>,
    constants: ConstantsRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WindowRecord {
    sat: String,
    grid: String,
    begin_min: Minutes,
    end_min: Minutes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum CapacitySpec {
    Entries(Vec<CapacityRecord>),
    Uniform(UniformCapacity),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CapacityRecord {
    sat: String,
    grid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stage: Option<usize>,
    alpha: f64,
}

/// Shorthand: α drawn uniformly per visible pair from a seeded generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UniformCapacity {
    uniform: (f64, f64),
    seed: u64,
    #[serde(default)]
    integral: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadRecord {
    grid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stage: Option<usize>,
    beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantsRecord {
    #[serde(rename = "H")]
    h: Minutes,
    #[serde(rename = "C")]
    c: Minutes,
    dt: Minutes,
    horizon: (Minutes, Minutes),
}

struct Ids<'a> {
    kind: &'static str,
    index: HashMap<&'a str, usize>,
}

impl<'a> Ids<'a> {
    fn new(kind: &'static str, names: &'a [String]) -> Self {
        Self { kind, index: names.iter().enumerate().map(|(k, n)| (n.as_str(), k)).collect() }
    }

    fn get(&self, path: String, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| Error::validation(path, format!("unknown {} {name:?}", self.kind)))
    }
}

fn into_scenario(file: ScenarioFile) -> Result<Scenario> {
    let sats = Ids::new("satellite", &file.satellites);
    let grids = Ids::new("grid", &file.grids);
    let windows = file
        .windows
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let i = sats.get(format!("windows[{k}].sat"), &w.sat)?;
            let j = grids.get(format!("windows[{k}].grid"), &w.grid)?;
            TimeWindow::new(SatelliteId(i), GridId(j), w.begin_min, w.end_min)
                .map_err(|e| Error::validation(format!("windows[{k}]"), e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let capacity = match &file.capacity {
        CapacitySpec::Entries(entries) => entries
            .iter()
            .enumerate()
            .map(|(k, c)| {
                Ok(CapacityEntry {
                    satellite: SatelliteId(sats.get(format!("capacity[{k}].sat"), &c.sat)?),
                    grid: GridId(grids.get(format!("capacity[{k}].grid"), &c.grid)?),
                    stage: c.stage,
                    alpha: c.alpha,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        CapacitySpec::Uniform(u) => expand_uniform(u, &windows)?,
    };
    let load = file
        .load
        .iter()
        .enumerate()
        .map(|(k, l)| Ok(LoadEntry { grid: GridId(grids.get(format!("load[{k}].grid"), &l.grid)?), stage: l.stage, beta: l.beta }))
        .collect::<Result<Vec<_>>>()?;
    let c = &file.constants;
    let constants = Constants { transfer_penalty: c.h, transition_constant: c.c, stage_length: c.dt, horizon: c.horizon };
    Scenario::new(file.satellites, file.grids, windows, capacity, load, constants)
}

fn expand_uniform(u: &UniformCapacity, windows: &[TimeWindow]) -> Result<Vec<CapacityEntry>> {
    let (lo, hi) = u.uniform;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::validation("capacity.uniform", format!("need 0 < lo ≤ hi, got [{lo}, {hi}]")));
    }
    let pairs: BTreeSet<(SatelliteId, GridId)> = windows.iter().map(|w| (w.satellite, w.grid)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(u.seed);
    Ok(pairs
        .into_iter()
        .map(|(satellite, grid)| CapacityEntry { satellite, grid, stage: None, alpha: draw(&mut rng, lo, hi, u.integral) })
        .collect())
}

/// Uniform draw on `[lo, hi]`; integers in that range when `integral`.
pub(crate) fn draw<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64, integral: bool) -> f64 {
    if integral {
        rng.gen_range(lo.ceil() as i64..=hi.floor() as i64) as f64
    } else if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn from_scenario(s: &Scenario) -> ScenarioFile {
    let sat = |i: SatelliteId| s.satellite_names()[i.0].clone();
    let grid = |j: GridId| s.grid_names()[j.0].clone();
    let c = s.constants();
    ScenarioFile {
        satellites: s.satellite_names().to_vec(),
        grids: s.grid_names().to_vec(),
        windows: s
            .windows()
            .iter()
            .map(|w| WindowRecord { sat: sat(w.satellite), grid: grid(w.grid), begin_min: w.begin, end_min: w.end })
            .collect(),
        capacity: CapacitySpec::Entries(
            s.capacity_entries()
                .iter()
                .map(|e| CapacityRecord { sat: sat(e.satellite), grid: grid(e.grid), stage: e.stage, alpha: e.alpha })
                .collect(),
        ),
        load: s.load_entries().iter().map(|l| LoadRecord { grid: grid(l.grid), stage: l.stage, beta: l.beta }).collect(),
        constants: ConstantsRecord { h: c.transfer_penalty, c: c.transition_constant, dt: c.stage_length, horizon: c.horizon },
    }
}

pub fn scenario_from_json(text: &str, origin: &Path) -> Result<Scenario> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|source| Error::Parse { path: origin.to_path_buf(), source })?;
    into_scenario(file)
}

/// Canonical JSON: entries in stored order, pretty-printed, trailing newline.
/// Capacity shorthands are written out expanded.
pub fn scenario_to_json(scenario: &Scenario) -> String {
    let mut text = serde_json::to_string_pretty(&from_scenario(scenario)).expect("scenario serializes");
    text.push('\n');
    text
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    scenario_from_json(&text, path)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, scenario_to_json(scenario)).map_err(|e| Error::io(path, e))
}
