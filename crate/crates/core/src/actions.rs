//! Feasible action spaces, greedy initialization, selective sampling and
//! better-reply sets.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{remaining_loads, Action, AllocationFile, GridId, Minutes, SatelliteId, StageState};
use crate::potential::{normalizer, served_by_others, ReplyScorer, SmoothingParams, IMPROVEMENT_TOLERANCE};

/// Per-satellite bound on enumerated actions.
pub const DEFAULT_ACTION_CAP: usize = 200_000;

/// Every feasible action of one satellite in canonical order: support size,
/// then grid ids, then minutes, all lexicographic. The null action is first.
///
/// Allocations are stored flat as (position in the visible list, minutes).
#[derive(Clone, Debug)]
pub struct ActionSpace {
    owner: SatelliteId,
    grids: Vec<GridId>,
    offsets: Vec<u32>,
    entries: Vec<(u16, Minutes)>,
}

impl ActionSpace {
    pub fn owner(&self) -> SatelliteId {
        self.owner
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Visible grids; the positions used by [`ActionSpace::entries`] index this.
    pub fn grids(&self) -> &[GridId] {
        &self.grids
    }

    pub fn entries(&self, idx: usize) -> &[(u16, Minutes)] {
        &self.entries[self.offsets[idx] as usize..self.offsets[idx + 1] as usize]
    }

    pub fn action(&self, idx: usize) -> Action {
        let alloc = self.entries(idx).iter().map(|&(k, x)| (self.grids[k as usize], x)).collect();
        Action::from_sorted(self.owner, alloc)
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> + '_ {
        (0..self.len()).map(|idx| self.action(idx))
    }

    /// Position of `action` in the canonical order.
    pub fn index_of(&self, action: &Action) -> Option<usize> {
        if action.owner() != self.owner {
            return None;
        }
        let mut local = Vec::with_capacity(action.support_size());
        for &(j, x) in action.entries() {
            let k = self.grids.binary_search(&j).ok()?;
            local.push((k as u16, x));
        }
        let mut lo = 0;
        let mut hi = self.len();
        while lo < hi {
            let mid = (lo + hi) / 2;
            match canonical_cmp(self.entries(mid), &local) {
                Ordering::Less => lo = mid + 1,
                Ordering::Greater => hi = mid,
                Ordering::Equal => return Some(mid),
            }
        }
        None
    }
}

fn canonical_cmp(a: &[(u16, Minutes)], b: &[(u16, Minutes)]) -> Ordering {
    a.len()
        .cmp(&b.len())
        .then_with(|| a.iter().map(|e| e.0).cmp(b.iter().map(|e| e.0)))
        .then_with(|| a.iter().map(|e| e.1).cmp(b.iter().map(|e| e.1)))
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for t in 0..k {
        acc = acc.saturating_mul((n - t) as u128) / (t as u128 + 1);
    }
    acc
}

/// Number of feasible actions for `visible` grids, a budget of `budget`
/// minutes and transition constant `c`: over support sizes `k`, choose the
/// grids and a positive minute vector with sum at most `budget − k·c`.
pub fn action_count(visible: usize, budget: Minutes, c: Minutes) -> u128 {
    let mut total: u128 = 0;
    for k in 0..=visible as u64 {
        let overhead = k * c as u64;
        if overhead > budget as u64 {
            break;
        }
        let free = budget as u64 - overhead;
        let vectors = if k == 0 { 1 } else { binomial(free, k) };
        if vectors == 0 {
            break;
        }
        total = total.saturating_add(binomial(visible as u64, k).saturating_mul(vectors));
    }
    total
}

pub fn enumerate_actions(stage: &StageState, i: SatelliteId, cap: usize) -> Result<ActionSpace> {
    if i.0 >= stage.satellite_count() {
        return Err(Error::validation(format!("satellite {i}"), "unknown satellite"));
    }
    let grids: Vec<GridId> = stage.visible_grids(i).iter().map(|&(j, _)| j).collect();
    let budget = stage.budget(i);
    let c = stage.transition_constant();
    let count = action_count(grids.len(), budget, c);
    if count > cap as u128 {
        return Err(Error::CapacityExceeded {
            what: "action space",
            count,
            cap: cap as u128,
            advice: "use a coarser time granularity or fewer visible grids",
        });
    }
    let mut space = ActionSpace { owner: i, grids, offsets: Vec::with_capacity(count as usize + 1), entries: Vec::new() };
    space.offsets.push(0);
    space.offsets.push(0);
    let r = space.grids.len();
    let mut subset = Vec::new();
    let mut minutes = Vec::new();
    for k in 1..=r {
        let overhead = k as u64 * c as u64;
        if overhead + k as u64 > budget as u64 {
            break;
        }
        let free = (budget as u64 - overhead) as Minutes;
        subset.clear();
        subset.extend(0..k as u16);
        loop {
            minutes.clear();
            push_compositions(&mut space, &subset, &mut minutes, free);
            if !next_subset(&mut subset, r) {
                break;
            }
        }
    }
    debug_assert_eq!(space.len() as u128, count);
    Ok(space)
}

/// Appends every positive minute vector over `subset` with sum ≤ `free`, in
/// lexicographic order.
fn push_compositions(space: &mut ActionSpace, subset: &[u16], minutes: &mut Vec<Minutes>, free: Minutes) {
    let depth = minutes.len();
    let left = subset.len() - depth;
    if left == 0 {
        space.entries.extend(subset.iter().copied().zip(minutes.iter().copied()));
        space.offsets.push(space.entries.len() as u32);
        return;
    }
    // leave at least one minute for each remaining grid
    let reserve = (left - 1) as Minutes;
    for x in 1..=free - reserve {
        minutes.push(x);
        push_compositions(space, subset, minutes, free - x);
        minutes.pop();
    }
}

fn next_subset(subset: &mut [u16], r: usize) -> bool {
    let k = subset.len();
    for pos in (0..k).rev() {
        if (subset[pos] as usize) < r - k + pos {
            subset[pos] += 1;
            for q in pos + 1..k {
                subset[q] = subset[q - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Greedy starting profile. Satellites in id order repeatedly give one minute
/// to the visible grid with the largest `α_ij·y_j` (ties to the lowest grid
/// id), opening a grid only when its transition time still fits.
pub fn greedy_init(stage: &StageState) -> AllocationFile {
    greedy_fill(stage, AllocationFile::null(stage.satellite_count()))
}

/// Seeds the profile with `previous` (restricted to grids still visible and
/// trimmed to the budget), then tops it up with the greedy rule.
pub fn warm_start(stage: &StageState, previous: &AllocationFile) -> AllocationFile {
    let n = stage.satellite_count();
    let mut seeded = AllocationFile::null(n);
    for i in stage.satellites() {
        if i.0 >= previous.len() {
            continue;
        }
        let mut alloc: Vec<(GridId, Minutes)> =
            previous.action(i).entries().iter().copied().filter(|&(j, _)| stage.alpha(i, j).is_some()).collect();
        loop {
            let used: u64 = alloc.iter().map(|e| e.1 as u64).sum::<u64>() + (alloc.len() as u64) * stage.transition_constant() as u64;
            if used <= stage.budget(i) as u64 {
                break;
            }
            // drop a minute from the largest allocation, highest grid on ties
            let k = (0..alloc.len()).max_by_key(|&k| (alloc[k].1, k)).unwrap();
            alloc[k].1 -= 1;
            if alloc[k].1 == 0 {
                alloc.remove(k);
            }
        }
        seeded.set(Action::from_sorted(i, alloc));
    }
    greedy_fill(stage, seeded)
}

fn greedy_fill(stage: &StageState, mut file: AllocationFile) -> AllocationFile {
    let mut remaining = remaining_loads(stage, &file);
    let c = stage.transition_constant();
    for i in stage.satellites() {
        let visible = stage.visible_grids(i);
        let budget = stage.budget(i);
        let mut minutes: Vec<Minutes> = visible.iter().map(|&(j, _)| file.action(i).minutes(j)).collect();
        let mut used: Minutes = minutes.iter().sum::<Minutes>() + c * minutes.iter().filter(|&&x| x > 0).count() as Minutes;
        loop {
            let mut best: Option<(usize, f64)> = None;
            for (k, &(j, alpha)) in visible.iter().enumerate() {
                let score = alpha * remaining[j.0];
                if score <= 0.0 {
                    continue;
                }
                let cost = if minutes[k] > 0 { 1 } else { 1 + c };
                if used + cost > budget {
                    continue;
                }
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((k, score));
                }
            }
            let Some((k, _)) = best else { break };
            used += if minutes[k] > 0 { 1 } else { 1 + c };
            minutes[k] += 1;
            let (j, alpha) = visible[k];
            remaining[j.0] -= alpha;
        }
        let alloc = visible.iter().zip(&minutes).filter(|(_, &x)| x > 0).map(|(&(j, _), &x)| (j, x)).collect();
        file.set(Action::from_sorted(i, alloc));
    }
    file
}

/// Indices of a uniform sample of `⌈ω·|A|⌉` actions that always contains the
/// incumbent, in ascending order. `ω ≥ 1`, or a sample covering the whole
/// space, returns every index without touching `rng`.
pub fn sample_subset_indices<R: Rng + ?Sized>(len: usize, omega: f64, incumbent: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::new();
    SubsetSampler::default().sample_into(len, omega, incumbent, rng, &mut out);
    out
}

/// Reusable state for [`sample_subset_indices`].
#[derive(Clone, Debug, Default)]
pub struct SubsetSampler {
    bits: Vec<u64>,
}

impl SubsetSampler {
    /// Same as [`sample_subset_indices`], writing into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&mut self, len: usize, omega: f64, incumbent: usize, rng: &mut R, out: &mut Vec<usize>) {
        debug_assert!(omega > 0.0 && omega <= 1.0, "ω must lie in (0, 1]");
        debug_assert!(incumbent < len);
        out.clear();
        let wanted = ((omega * len as f64) - 1e-9).ceil().max(1.0) as usize;
        if wanted >= len {
            out.extend(0..len);
            return;
        }
        // Floyd's algorithm over the len − 1 positions other than the incumbent;
        // when more than half is wanted, draw the positions to leave out instead
        let skip = |k: usize| if k >= incumbent { k + 1 } else { k };
        self.bits.clear();
        self.bits.resize(len.div_ceil(64), 0);
        let pool = len - 1;
        let keep = wanted - 1;
        let invert = keep > pool / 2;
        let draws = if invert { pool - keep } else { keep };
        for j in (pool - draws)..pool {
            let t = skip(rng.gen_range(0..=j));
            let pick = if self.test(t) { skip(j) } else { t };
            self.bits[pick / 64] |= 1 << (pick % 64);
        }
        if invert {
            for word in &mut self.bits {
                *word = !*word;
            }
            if !len.is_multiple_of(64) {
                *self.bits.last_mut().expect("len > 0") &= (1u64 << (len % 64)) - 1;
            }
        } else {
            self.bits[incumbent / 64] |= 1 << (incumbent % 64);
        }
        for (w, &word) in self.bits.iter().enumerate() {
            let mut word = word;
            while word != 0 {
                out.push(w * 64 + word.trailing_zeros() as usize);
                word &= word - 1;
            }
        }
    }

    fn test(&self, k: usize) -> bool {
        self.bits[k / 64] >> (k % 64) & 1 == 1
    }
}

pub fn sample_action_subset<R: Rng + ?Sized>(space: &ActionSpace, omega: f64, incumbent: &Action, rng: &mut R) -> Result<Vec<Action>> {
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(Error::validation("omega", format!("must lie in (0, 1], got {omega}")));
    }
    let inc = space
        .index_of(incumbent)
        .ok_or_else(|| Error::validation(format!("action({})", incumbent.owner()), "incumbent is not in the action space"))?;
    Ok(sample_subset_indices(space.len(), omega, inc, rng).into_iter().map(|k| space.action(k)).collect())
}

/// Residual load on each of `i`'s visible grids with `i`'s own work removed.
pub(crate) fn residuals_without(stage: &StageState, served_by_others: &[f64], i: SatelliteId) -> (Vec<f64>, Vec<f64>) {
    stage.visible_grids(i).iter().map(|&(j, alpha)| (stage.beta()[j.0] - served_by_others[j.0], alpha)).unzip()
}

/// `B_i`: actions of `subset` whose local utility strictly beats the
/// incumbent's by more than [`IMPROVEMENT_TOLERANCE`].
pub fn better_reply_set(
    stage: &StageState,
    a: &AllocationFile,
    i: SatelliteId,
    subset: &[Action],
    smoothing: SmoothingParams,
) -> Result<Vec<Action>> {
    stage.check_feasible(a)?;
    let norm = normalizer(stage, smoothing)?;
    let others = served_by_others(stage, a, i);
    let (residual, alpha) = residuals_without(stage, &others, i);
    let scorer = ReplyScorer::new(&residual, &alpha, stage.length(), &norm);
    let grids: Vec<GridId> = stage.visible_grids(i).iter().map(|&(j, _)| j).collect();
    let local = |act: &Action| -> Option<Vec<(u16, Minutes)>> {
        act.entries().iter().map(|&(j, x)| grids.binary_search(&j).ok().map(|k| (k as u16, x))).collect()
    };
    let current = scorer.score(&local(a.action(i)).expect("feasible incumbent"));
    let mut better = Vec::new();
    for act in subset {
        let Some(entries) = local(act) else { continue };
        if scorer.score(&entries) > current + IMPROVEMENT_TOLERANCE {
            better.push(act.clone());
        }
    }
    Ok(better)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s(i: usize) -> SatelliteId {
        SatelliteId(i)
    }
    fn g(j: usize) -> GridId {
        GridId(j)
    }

    fn one_sat(grids: usize, length: Minutes, c: Minutes) -> StageState {
        StageState::new(1, vec![10.0; grids.max(1)], length, c, (0..grids).map(|j| (s(0), g(j), 1.0))).unwrap()
    }

    /// Independent recursive count: choose, per grid in turn, to skip it or
    /// give it 1.. minutes plus the transition constant.
    fn recursive_count(grids: usize, budget: i64, c: i64) -> u64 {
        if grids == 0 {
            return 1;
        }
        let mut total = recursive_count(grids - 1, budget, c);
        let mut x = 1;
        while x + c <= budget {
            total += recursive_count(grids - 1, budget - x - c, c);
            x += 1;
        }
        total
    }

    #[test]
    fn no_visible_grid_gives_only_null() {
        let stage = StageState::new(1, vec![1.0], 5, 1, []).unwrap();
        let space = enumerate_actions(&stage, s(0), DEFAULT_ACTION_CAP).unwrap();
        assert_eq!(space.len(), 1);
        assert!(space.action(0).is_null());
    }

    #[test]
    fn single_grid_small_budget() {
        let space = enumerate_actions(&one_sat(1, 3, 1), s(0), DEFAULT_ACTION_CAP).unwrap();
        let got: Vec<Action> = space.actions().collect();
        let expected = vec![Action::null(s(0)), Action::new(s(0), [(g(0), 1)]).unwrap(), Action::new(s(0), [(g(0), 2)]).unwrap()];
        assert_eq!(got, expected);
        assert_eq!(recursive_count(1, 3, 1), 3);
    }

    #[test]
    fn two_grids_budget_four() {
        let space = enumerate_actions(&one_sat(2, 4, 1), s(0), DEFAULT_ACTION_CAP).unwrap();
        assert_eq!(recursive_count(2, 4, 1), 8);
        assert_eq!(space.len(), 8);
        assert_eq!(space.action(7), Action::new(s(0), [(g(0), 1), (g(1), 1)]).unwrap());
    }

    #[test]
    fn counts_match_recursive_oracle() {
        for grids in 0..=5 {
            for length in 1..=12 {
                for c in 0..=2 {
                    for eta in [0, 1, 3] {
                        if eta > length {
                            continue;
                        }
                        let stage = one_sat(grids, length, c).with_eta(vec![eta]).unwrap();
                        let space = enumerate_actions(&stage, s(0), DEFAULT_ACTION_CAP).unwrap();
                        let budget = (length - eta) as i64;
                        assert_eq!(space.len() as u64, recursive_count(grids, budget, c as i64), "grids={grids} Δt={length} C={c} η={eta}");
                    }
                }
            }
        }
    }

    #[test]
    fn enumerated_actions_are_feasible_distinct_and_sorted() {
        let stage = one_sat(4, 10, 1);
        let space = enumerate_actions(&stage, s(0), DEFAULT_ACTION_CAP).unwrap();
        for k in 0..space.len() {
            assert!(crate::model::is_feasible_action(&stage, &space.action(k)));
            if k > 0 {
                assert_eq!(canonical_cmp(space.entries(k - 1), space.entries(k)), Ordering::Less);
            }
            assert_eq!(space.index_of(&space.action(k)), Some(k));
        }
    }

    #[test]
    fn regional_sized_space() {
        // 9 visible grids, Δt=10, C=1
        assert_eq!(action_count(9, 10, 1), 1 + 81 + 1008 + 2940 + 1890 + 126);
    }

    #[test]
    fn cap_is_enforced() {
        let stage = one_sat(9, 10, 1);
        let err = enumerate_actions(&stage, s(0), 100).unwrap_err();
        assert!(matches!(err, Error::CapacityExceeded { .. }));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn greedy_follows_largest_weighted_residual() {
        // β=(10,8), α=2, 5 minutes, C=0: g0, g0 (tie at 8 goes low), g1, g0, g1
        let stage = StageState::new(1, vec![10.0, 8.0], 5, 0, [(s(0), g(0), 2.0), (s(0), g(1), 2.0)]).unwrap();
        let a = greedy_init(&stage);
        assert_eq!(a.action(s(0)), &Action::new(s(0), [(g(0), 3), (g(1), 2)]).unwrap());
    }

    #[test]
    fn greedy_respects_transition_cost() {
        // β=(10,2), 3-minute budget, C=1: open g0 (2 min) then one more minute
        let stage = StageState::new(1, vec![10.0, 2.0], 3, 1, [(s(0), g(0), 1.0), (s(0), g(1), 1.0)]).unwrap();
        let a = greedy_init(&stage);
        assert_eq!(a.action(s(0)), &Action::new(s(0), [(g(0), 2)]).unwrap());
    }

    #[test]
    fn greedy_ties_go_to_lowest_grid() {
        let stage = StageState::new(1, vec![4.0, 4.0], 2, 1, [(s(0), g(0), 1.0), (s(0), g(1), 1.0)]).unwrap();
        let a = greedy_init(&stage);
        assert_eq!(a.action(s(0)), &Action::new(s(0), [(g(0), 1)]).unwrap());
    }

    #[test]
    fn greedy_without_visibility_is_null() {
        let stage = StageState::new(3, vec![4.0, 4.0], 10, 1, []).unwrap();
        assert_eq!(greedy_init(&stage), AllocationFile::null(3));
    }

    #[test]
    fn greedy_is_deterministic_and_feasible() {
        let pairs = [(s(0), g(0), 2.0), (s(0), g(1), 3.0), (s(1), g(1), 2.0), (s(1), g(2), 2.5), (s(2), g(0), 3.0)];
        let stage = StageState::new(3, vec![30.0, 55.0, 41.0], 10, 1, pairs).unwrap().with_eta(vec![0, 2, 0]).unwrap();
        let a = greedy_init(&stage);
        assert_eq!(a, greedy_init(&stage));
        stage.check_feasible(&a).unwrap();
    }

    #[test]
    fn warm_start_trims_and_tops_up() {
        let stage = StageState::new(1, vec![20.0, 20.0], 6, 1, [(s(0), g(0), 1.0), (s(0), g(1), 1.0)]).unwrap();
        let previous = AllocationFile::new(vec![Action::new(s(0), [(g(0), 3), (g(1), 4), (g(5), 2)]).unwrap()]).unwrap();
        let a = warm_start(&stage, &previous);
        stage.check_feasible(&a).unwrap();
        assert_eq!(a.action(s(0)).support(), [g(0), g(1)].into_iter().collect());
    }

    #[test]
    fn full_ratio_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_subset_indices(8, 1.0, 3, &mut rng), (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn half_ratio_keeps_incumbent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let picked = sample_subset_indices(8, 0.5, 5, &mut rng);
            assert_eq!(picked.len(), 4);
            assert!(picked.contains(&5));
            assert!(picked.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn ratio_rounding_is_not_fooled_by_float_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let omega = 0.005 * 12.0; // 0.06 with representation error
        assert_eq!(sample_subset_indices(100, omega, 0, &mut rng).len(), 6);
    }

    #[test]
    fn sampling_is_reproducible() {
        let space = enumerate_actions(&one_sat(3, 6, 1), s(0), DEFAULT_ACTION_CAP).unwrap();
        let inc = space.action(4);
        let a = sample_action_subset(&space, 0.3, &inc, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        let b = sample_action_subset(&space, 0.3, &inc, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        assert_eq!(a, b);
        assert!(a.contains(&inc));
        assert!(sample_action_subset(&space, 0.0, &inc, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn better_replies_from_null_serve_unserved_grid() {
        let stage = StageState::new(1, vec![5.0, 0.0], 4, 1, [(s(0), g(0), 1.0), (s(0), g(1), 1.0)]).unwrap();
        let space = enumerate_actions(&stage, s(0), DEFAULT_ACTION_CAP).unwrap();
        let all: Vec<Action> = space.actions().collect();
        let a = AllocationFile::null(1);
        let sp = SmoothingParams::new(1.0).unwrap();
        let better = better_reply_set(&stage, &a, s(0), &all, sp).unwrap();
        for act in &all {
            if act.minutes(g(0)) > 0 {
                assert!(better.contains(act), "{act:?} should improve");
            }
        }
        assert!(!better.contains(&Action::null(s(0))));
    }

    #[test]
    fn best_response_has_no_better_reply() {
        let stage = StageState::new(1, vec![5.0], 4, 1, [(s(0), g(0), 1.0)]).unwrap();
        let space = enumerate_actions(&stage, s(0), DEFAULT_ACTION_CAP).unwrap();
        let all: Vec<Action> = space.actions().collect();
        let best = AllocationFile::new(vec![Action::new(s(0), [(g(0), 3)]).unwrap()]).unwrap();
        let sp = SmoothingParams::new(1.0).unwrap();
        assert!(better_reply_set(&stage, &best, s(0), &all, sp).unwrap().is_empty());
    }
}
