//! Exhaustive ground truth for small stages: the min-max optimum, the
//! smoothed-utility maximizer, Nash certification and exact-potential checks.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::actions::DEFAULT_ACTION_CAP;
use crate::error::{Error, Result};
use crate::learning::Game;
use crate::model::{max_of, remaining_loads, AllocationFile, SatelliteId, StageState};
use crate::potential::{local_utility, potential, smooth_max, SmoothingParams, IMPROVEMENT_TOLERANCE};

/// Default bound on the number of joint profiles scanned.
pub const DEFAULT_JOINT_CAP: u128 = 50_000_000;

/// Values closer than this are treated as the same optimum.
const TIE: f64 = 1e-9;

/// How many optimal profiles are kept.
const PROFILE_CAP: usize = 64;

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub optimum: f64,
    /// Optimal profiles in enumeration order, at most 64.
    #[serde(skip)]
    pub profiles: Vec<AllocationFile>,
    pub optimal_count: u64,
    pub joint_size: u128,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug)]
struct ScanBest {
    value: f64,
    hits: u64,
    profiles: Vec<(f64, Vec<usize>)>,
}

impl ScanBest {
    fn empty() -> Self {
        Self { value: f64::INFINITY, hits: 0, profiles: Vec::new() }
    }

    fn offer(&mut self, v: f64, indices: &[usize]) {
        if v < self.value - TIE {
            self.value = v;
            self.hits = 1;
            self.profiles.clear();
            self.profiles.push((v, indices.to_vec()));
        } else if v <= self.value + TIE {
            self.hits += 1;
            self.value = self.value.min(v);
            if self.profiles.len() < PROFILE_CAP {
                self.profiles.push((v, indices.to_vec()));
            }
        }
    }
}

fn check_joint_size(game: &Game, cap: u128) -> Result<u128> {
    let size = game.joint_size();
    if size > cap {
        return Err(Error::CapacityExceeded {
            what: "joint action space",
            count: size,
            cap,
            advice: "use the learner, or shrink the instance or stage length",
        });
    }
    Ok(size)
}

/// Minimizes `score(remaining loads)` over every joint profile. Loads are
/// accumulated in satellite order, matching [`crate::model::served_loads`].
fn scan<F>(game: &Game, score: F) -> ScanBest
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let stage = game.stage();
    let n = stage.satellite_count();
    let m = stage.grid_count();
    let first = &game.spaces()[0];
    let partials: Vec<ScanBest> = (0..first.len())
        .into_par_iter()
        .map(|k0| {
            let mut best = ScanBest::empty();
            let mut levels = vec![vec![0.0; m]; n + 1];
            let mut indices = vec![0; n];
            indices[0] = k0;
            add_action(game, 0, k0, &mut levels);
            descend(game, 1, &mut levels, &mut indices, &score, &mut best);
            best
        })
        .collect();
    let value = partials.iter().map(|p| p.value).fold(f64::INFINITY, f64::min);
    let mut merged = ScanBest { value, hits: 0, profiles: Vec::new() };
    for part in partials.into_iter().filter(|p| p.value <= value + TIE) {
        merged.hits += part.hits;
        for (v, idx) in part.profiles {
            if v <= value + TIE && merged.profiles.len() < PROFILE_CAP {
                merged.profiles.push((v, idx));
            }
        }
    }
    merged
}

fn add_action(game: &Game, i: usize, k: usize, levels: &mut [Vec<f64>]) {
    let (before, after) = levels.split_at_mut(i + 1);
    let next = &mut after[0];
    next.copy_from_slice(&before[i]);
    let space = &game.spaces()[i];
    let alpha = game.alpha_of(i);
    for &(pos, x) in space.entries(k) {
        next[space.grids()[pos as usize].0] += alpha[pos as usize] * x as f64;
    }
}

fn descend<F>(game: &Game, d: usize, levels: &mut [Vec<f64>], indices: &mut [usize], score: &F, best: &mut ScanBest)
where
    F: Fn(&[f64]) -> f64,
{
    let n = indices.len();
    if d == n {
        let remaining: Vec<f64> = game.stage().beta().iter().zip(&levels[n]).map(|(b, s)| b - s).collect();
        best.offer(score(&remaining), indices);
        return;
    }
    for k in 0..game.spaces()[d].len() {
        indices[d] = k;
        add_action(game, d, k, levels);
        descend(game, d + 1, levels, indices, score, best);
    }
}

/// Exhaustive min-max optimum of one stage.
pub fn brute_force_optimum(stage: &StageState, cap: u128) -> Result<OracleReport> {
    let game = Game::new(stage.clone(), DEFAULT_ACTION_CAP)?;
    brute_force_optimum_in(&game, cap)
}

pub fn brute_force_optimum_in(game: &Game, cap: u128) -> Result<OracleReport> {
    let started = Instant::now();
    let joint_size = check_joint_size(game, cap)?;
    let best = scan(game, max_of);
    Ok(report(game, best, joint_size, started))
}

/// Profiles maximizing the smoothed utility `U`, i.e. minimizing `h`.
/// `optimum` holds the minimal `h`.
pub fn utility_maximizer_in(game: &Game, smoothing: SmoothingParams, cap: u128) -> Result<OracleReport> {
    let started = Instant::now();
    let joint_size = check_joint_size(game, cap)?;
    let eps = smoothing.epsilon();
    let best = scan(game, |y| smooth_max(y, eps));
    Ok(report(game, best, joint_size, started))
}

fn report(game: &Game, best: ScanBest, joint_size: u128, started: Instant) -> OracleReport {
    OracleReport {
        optimum: best.value,
        profiles: best.profiles.iter().map(|(_, idx)| game.file_of(idx)).collect(),
        optimal_count: best.hits,
        joint_size,
        elapsed_s: started.elapsed().as_secs_f64(),
    }
}

/// True iff no satellite has a unilateral deviation improving its local
/// utility by more than the improvement tolerance.
pub fn is_nash_equilibrium(stage: &StageState, a: &AllocationFile, smoothing: SmoothingParams) -> Result<bool> {
    let game = Game::new(stage.clone(), DEFAULT_ACTION_CAP)?;
    is_nash_equilibrium_in(&game, a, smoothing)
}

/// Same as [`is_nash_equilibrium`] with prepared action spaces. Gains are
/// computed as differences of exponentials against loads recomputed from
/// the allocation, independently of the learner's scoring tables.
pub fn is_nash_equilibrium_in(game: &Game, a: &AllocationFile, smoothing: SmoothingParams) -> Result<bool> {
    let stage = game.stage();
    stage.check_feasible(a)?;
    let eps = smoothing.epsilon();
    for i in stage.satellites() {
        let visible = stage.visible_grids(i);
        if visible.is_empty() {
            continue;
        }
        let mut others = stage.beta().to_vec();
        for act in a.iter().filter(|act| act.owner() != i) {
            for &(j, x) in act.entries() {
                others[j.0] -= stage.alpha(act.owner(), j).expect("feasible profile") * x as f64;
            }
        }
        let shift = visible.iter().map(|&(j, _)| others[j.0]).fold(f64::NEG_INFINITY, f64::max);
        let current = a.action(i);
        for alt in game.spaces()[i.0].actions() {
            let gain: f64 = visible
                .iter()
                .map(|&(j, alpha)| {
                    let w = ((others[j.0] - shift) / eps).exp();
                    let now = (-alpha * current.minutes(j) as f64 / eps).exp();
                    let then = (-alpha * alt.minutes(j) as f64 / eps).exp();
                    w * (now - then)
                })
                .sum();
            if gain > IMPROVEMENT_TOLERANCE {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// A uniformly random joint profile.
pub fn random_profile<R: Rng + ?Sized>(game: &Game, rng: &mut R) -> AllocationFile {
    let indices: Vec<usize> = game.spaces().iter().map(|s| rng.gen_range(0..s.len())).collect();
    game.file_of(&indices)
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize)]
pub struct PotentialCheck {
    pub samples: usize,
    pub max_abs: f64,
    /// Deviation relative to the largest of `|U_i|` and `|φ|` over the two
    /// profiles, the magnitudes whose differences are compared.
    pub max_rel: f64,
}

/// Samples unilateral deviations `(i, a_−i, a'_i, a''_i)` and compares the
/// change of `U_i` with the change of `φ`.
pub fn check_exact_potential<R: Rng + ?Sized>(
    stage: &StageState,
    smoothing: SmoothingParams,
    samples: usize,
    rng: &mut R,
) -> Result<PotentialCheck> {
    let game = Game::new(stage.clone(), DEFAULT_ACTION_CAP)?;
    let movers: Vec<usize> = (0..stage.satellite_count()).filter(|&i| game.spaces()[i].len() > 1).collect();
    let mut check = PotentialCheck::default();
    if movers.is_empty() {
        return Ok(check);
    }
    for _ in 0..samples {
        let i = movers[rng.gen_range(0..movers.len())];
        let base = random_profile(&game, rng);
        let space = &game.spaces()[i];
        let first = base.with_action(space.action(rng.gen_range(0..space.len())));
        let second = base.with_action(space.action(rng.gen_range(0..space.len())));
        let sat = SatelliteId(i);
        let (u1, u2) = (local_utility(stage, &first, sat, smoothing)?, local_utility(stage, &second, sat, smoothing)?);
        let (p1, p2) = (potential(stage, &first, smoothing)?, potential(stage, &second, smoothing)?);
        let diff = ((u2 - u1) - (p2 - p1)).abs();
        let scale = [u1, u2, p1, p2].iter().fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
        check.samples += 1;
        check.max_abs = check.max_abs.max(diff);
        check.max_rel = check.max_rel.max(diff / scale);
    }
    Ok(check)
}

/// `max_j y_j ≤ h ≤ max_j y_j + ε·ln m` evaluated at one profile.
#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct SandwichBounds {
    pub objective: f64,
    pub smooth: f64,
    pub upper: f64,
}

impl SandwichBounds {
    /// Worst violation of either inequality (zero when both hold).
    pub fn violation(&self) -> f64 {
        (self.objective - self.smooth).max(self.smooth - self.upper).max(0.0)
    }
}

pub fn sandwich_bound_check(stage: &StageState, a: &AllocationFile, smoothing: SmoothingParams) -> Result<SandwichBounds> {
    stage.check_feasible(a)?;
    let y = remaining_loads(stage, a);
    let eps = smoothing.epsilon();
    let objective = max_of(&y);
    Ok(SandwichBounds { objective, smooth: smooth_max(&y, eps), upper: objective + eps * (stage.grid_count() as f64).ln() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::{run_learner, LearnerConfig};
    use crate::model::{objective, Action, GridId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s(i: usize) -> SatelliteId {
        SatelliteId(i)
    }
    fn g(j: usize) -> GridId {
        GridId(j)
    }
    fn eps(e: f64) -> SmoothingParams {
        SmoothingParams::new(e).unwrap()
    }

    fn two_by_two() -> StageState {
        let pairs = (0..2).flat_map(|i| (0..2).map(move |j| (s(i), g(j), 2.0)));
        StageState::new(2, vec![30.0, 40.0], 10, 1, pairs).unwrap()
    }

    #[test]
    fn two_by_two_optimum() {
        let report = brute_force_optimum(&two_by_two(), DEFAULT_JOINT_CAP).unwrap();
        assert_eq!(report.optimum, 18.0);
        for p in &report.profiles {
            assert_eq!(objective(&two_by_two(), p).unwrap(), 18.0);
        }
        assert!(report.optimal_count >= 2);
    }

    #[test]
    fn single_satellite_fills_its_grid() {
        let stage = StageState::new(1, vec![50.0], 6, 1, [(s(0), g(0), 2.0)]).unwrap();
        let report = brute_force_optimum(&stage, DEFAULT_JOINT_CAP).unwrap();
        assert_eq!(report.optimum, 40.0);
        assert_eq!(report.optimal_count, 1);
        assert_eq!(report.joint_size, 6);
    }

    #[test]
    fn symmetric_instance_is_invariant_under_relabeling() {
        let base = StageState::new(2, vec![9.0, 13.0], 6, 1, [(s(0), g(0), 2.0), (s(1), g(1), 3.0), (s(1), g(0), 1.0)]).unwrap();
        let swapped = StageState::new(2, vec![9.0, 13.0], 6, 1, [(s(1), g(0), 2.0), (s(0), g(1), 3.0), (s(0), g(0), 1.0)]).unwrap();
        let a = brute_force_optimum(&base, DEFAULT_JOINT_CAP).unwrap();
        let b = brute_force_optimum(&swapped, DEFAULT_JOINT_CAP).unwrap();
        assert_eq!(a.optimum, b.optimum);
        assert_eq!(a.optimal_count, b.optimal_count);
    }

    #[test]
    fn joint_cap_is_enforced() {
        let err = brute_force_optimum(&two_by_two(), 10).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn utility_maximizer_is_nash() {
        let stage = two_by_two();
        let game = Game::new(stage.clone(), DEFAULT_ACTION_CAP).unwrap();
        for e in [0.5, 1.0, 4.0] {
            let report = utility_maximizer_in(&game, eps(e), DEFAULT_JOINT_CAP).unwrap();
            for p in &report.profiles {
                assert!(is_nash_equilibrium_in(&game, p, eps(e)).unwrap());
            }
        }
    }

    #[test]
    fn null_profile_is_not_nash() {
        assert!(!is_nash_equilibrium(&two_by_two(), &AllocationFile::null(2), eps(1.0)).unwrap());
    }

    #[test]
    fn learner_end_points_are_nash() {
        let stage = two_by_two();
        for seed in 0..5 {
            let (a, trace) = run_learner(&stage, &LearnerConfig::default().with_seed(seed)).unwrap();
            assert!(trace.certified_nash);
            assert!(is_nash_equilibrium(&stage, &a, eps(1.0)).unwrap());
        }
    }

    #[test]
    fn exact_potential_on_two_by_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let check = check_exact_potential(&two_by_two(), eps(1.0), 500, &mut rng).unwrap();
        assert_eq!(check.samples, 500);
        assert!(check.max_rel <= 1e-9, "{check:?}");
    }

    #[test]
    fn sandwich_on_a_profile() {
        let stage = two_by_two();
        let a = AllocationFile::new(vec![Action::new(s(0), [(g(0), 4)]).unwrap(), Action::null(s(1))]).unwrap();
        let b = sandwich_bound_check(&stage, &a, eps(1.0)).unwrap();
        assert_eq!(b.objective, 40.0);
        assert_eq!(b.violation(), 0.0);
    }
}
