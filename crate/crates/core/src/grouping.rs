//! Context operator and hierarchy-of-groups construction.
//!
//! A step's level-k context is its current state together with up to `k`
//! preceding states of the same trajectory. Steps whose level-k contexts are
//! elementwise equal share a level-k group. Because a level-(k-1) context is a
//! suffix of the level-k context, every level refines the one below it.
//!
//! Two builders are provided. [`build_hierarchy`] refines level k-1 groups by
//! the one extra state that enters the window at level k, using hash maps
//! whose keys are compared in full on lookup. [`build_hierarchy_bruteforce`]
//! materializes every context tuple and compares them pairwise; it exists to
//! check the fast path.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{HgpoError, Result};
use crate::rollout::{RolloutBatch, StateKey, Trajectory};

/// Largest batch (in total steps) accepted by the quadratic reference builder.
pub const BRUTEFORCE_STEP_LIMIT: usize = 10_000;

/// Position of a step inside a batch: `trajectory` is the 0-based position of
/// the trajectory in the batch, `t` the 1-based time index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct StepId {
    pub trajectory: usize,
    pub t: usize,
}

/// The tuple of states seen by a step at one context level.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContextKey {
    pub level: usize,
    pub states: Vec<StateKey>,
}

/// Level-`k` context of step `t` (1-based) of `trajectory`.
///
/// Returns `(s_{t-k}, ..., s_t)` when `t > k`, otherwise the whole prefix
/// `(s_1, ..., s_t)`.
pub fn context_of(trajectory: &Trajectory, t: usize, k: usize) -> Result<ContextKey> {
    if t == 0 || t > trajectory.len() {
        return Err(HgpoError::OutOfRange {
            trajectory: trajectory.index,
            t,
            reason: format!("t must lie in [1, {}]", trajectory.len()),
        });
    }
    let start = if t > k { t - k } else { 1 };
    let states = trajectory.steps[start - 1..t].iter().map(|s| s.state.clone()).collect();
    Ok(ContextKey { level: k, states })
}

/// Per-level partitions of a batch's steps.
///
/// Group ids at every level follow first-appearance order when scanning
/// trajectories in batch order and steps in time order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierarchicalIndex {
    max_level: usize,
    offsets: Vec<usize>,
    steps: Vec<StepId>,
    assignment: Vec<Vec<u32>>,
    members: Vec<Vec<Vec<usize>>>,
}

impl HierarchicalIndex {
    fn from_assignments(batch: &RolloutBatch, assignment: Vec<Vec<u32>>) -> Self {
        let mut offsets = Vec::with_capacity(batch.trajectories.len() + 1);
        let mut steps = Vec::with_capacity(batch.num_steps());
        offsets.push(0);
        for (i, traj) in batch.trajectories.iter().enumerate() {
            steps.extend((1..=traj.len()).map(|t| StepId { trajectory: i, t }));
            offsets.push(steps.len());
        }
        let members = assignment
            .iter()
            .map(|groups| {
                let count = groups.iter().map(|&g| g as usize + 1).max().unwrap_or(0);
                let mut m = vec![Vec::new(); count];
                for (flat, &g) in groups.iter().enumerate() {
                    m[g as usize].push(flat);
                }
                m
            })
            .collect();
        HierarchicalIndex {
            max_level: assignment.len() - 1,
            offsets,
            steps,
            assignment,
            members,
        }
    }

    /// Deepest level `K`.
    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn num_levels(&self) -> usize {
        self.max_level + 1
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn num_trajectories(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Flat index of step `t` (1-based) in trajectory `trajectory` (0-based).
    pub fn flat(&self, trajectory: usize, t: usize) -> usize {
        let start = self.offsets[trajectory];
        assert!(t >= 1 && start + t <= self.offsets[trajectory + 1], "step out of range");
        start + t - 1
    }

    pub fn step_id(&self, flat: usize) -> StepId {
        self.steps[flat]
    }

    pub fn step_ids(&self) -> &[StepId] {
        &self.steps
    }

    /// Flat index range of one trajectory.
    pub fn trajectory_range(&self, trajectory: usize) -> std::ops::Range<usize> {
        self.offsets[trajectory]..self.offsets[trajectory + 1]
    }

    pub fn num_groups(&self, level: usize) -> usize {
        self.members[level].len()
    }

    /// Group id of every step at `level`, in flat order.
    pub fn assignments(&self, level: usize) -> &[u32] {
        &self.assignment[level]
    }

    pub fn group_of(&self, level: usize, trajectory: usize, t: usize) -> usize {
        self.assignment[level][self.flat(trajectory, t)] as usize
    }

    pub fn group_at(&self, level: usize, flat: usize) -> usize {
        self.assignment[level][flat] as usize
    }

    /// Flat indices of a group's members in first-appearance order.
    pub fn members(&self, level: usize, group: usize) -> &[usize] {
        &self.members[level][group]
    }

    pub fn groups(&self, level: usize) -> impl Iterator<Item = &[usize]> {
        self.members[level].iter().map(Vec::as_slice)
    }

    pub fn group_size_at(&self, level: usize, flat: usize) -> usize {
        self.members[level][self.group_at(level, flat)].len()
    }
}

fn check_batch(batch: &RolloutBatch) -> Result<()> {
    if let Some(pos) = batch.trajectories.iter().position(Trajectory::is_empty) {
        return Err(HgpoError::InvalidBatch(format!("empty trajectory at index {}", pos + 1)));
    }
    Ok(())
}

/// Builds the hierarchy with hash lookups, refining level by level.
pub fn build_hierarchy(batch: &RolloutBatch, max_level: usize) -> Result<HierarchicalIndex> {
    check_batch(batch)?;
    let n = batch.num_steps();

    // Intern states; the map compares full keys, so hash collisions cannot merge states.
    let mut state_ids: HashMap<&StateKey, u32> = HashMap::new();
    let mut state_of = Vec::with_capacity(n);
    for traj in &batch.trajectories {
        for step in &traj.steps {
            let next = state_ids.len() as u32;
            state_of.push(*state_ids.entry(&step.state).or_insert(next));
        }
    }

    let mut assignment = Vec::with_capacity(max_level + 1);
    assignment.push(first_appearance(state_of.iter().copied()));

    const NO_STATE: u32 = u32::MAX;
    for k in 1..=max_level {
        let prev = &assignment[k - 1];
        let mut keys = Vec::with_capacity(n);
        let mut flat = 0;
        for traj in &batch.trajectories {
            for t in 1..=traj.len() {
                // The state entering the window at level k, if the prefix is long enough.
                let extra = if t > k { state_of[flat - k] } else { NO_STATE };
                keys.push((prev[flat], extra));
                flat += 1;
            }
        }
        assignment.push(first_appearance(keys.into_iter()));
    }
    Ok(HierarchicalIndex::from_assignments(batch, assignment))
}

fn first_appearance<K: std::hash::Hash + Eq>(keys: impl Iterator<Item = K>) -> Vec<u32> {
    let mut ids: HashMap<K, u32> = HashMap::new();
    keys.map(|key| {
        let next = ids.len() as u32;
        *ids.entry(key).or_insert(next)
    })
    .collect()
}

/// Reference builder: pairwise comparison of materialized context tuples.
pub fn build_hierarchy_bruteforce(batch: &RolloutBatch, max_level: usize) -> Result<HierarchicalIndex> {
    check_batch(batch)?;
    let n = batch.num_steps();
    if n > BRUTEFORCE_STEP_LIMIT {
        return Err(HgpoError::TooLarge {
            steps: n,
            limit: BRUTEFORCE_STEP_LIMIT,
        });
    }
    let mut assignment = Vec::with_capacity(max_level + 1);
    for k in 0..=max_level {
        let mut contexts = Vec::with_capacity(n);
        for traj in &batch.trajectories {
            for t in 1..=traj.len() {
                contexts.push(context_of(traj, t, k)?);
            }
        }
        let mut groups: Vec<u32> = Vec::with_capacity(n);
        let mut next = 0u32;
        for a in 0..n {
            let earlier = (0..a).find(|&b| contexts[b] == contexts[a]);
            match earlier {
                Some(b) => groups.push(groups[b]),
                None => {
                    groups.push(next);
                    next += 1;
                }
            }
        }
        assignment.push(groups);
    }
    Ok(HierarchicalIndex::from_assignments(batch, assignment))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelStats {
    pub level: usize,
    pub num_groups: usize,
    /// Mean number of members per group.
    pub avg_group_size: f64,
    /// Group size -> number of groups of that size.
    pub size_histogram: BTreeMap<usize, usize>,
    /// Number of steps whose group has at least two members.
    pub utilized_steps: usize,
    /// Fraction of steps whose group has at least two members.
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub num_steps: usize,
    pub levels: Vec<LevelStats>,
    /// Utilization at the deepest level: the share of Oracle steps.
    pub oracle_step_ratio: f64,
}

pub fn group_stats(index: &HierarchicalIndex) -> GroupStats {
    let num_steps = index.num_steps();
    let levels: Vec<LevelStats> = (0..index.num_levels())
        .map(|level| {
            let mut size_histogram = BTreeMap::new();
            let mut utilized_steps = 0;
            for g in index.groups(level) {
                *size_histogram.entry(g.len()).or_insert(0) += 1;
                if g.len() >= 2 {
                    utilized_steps += g.len();
                }
            }
            let num_groups = index.num_groups(level);
            LevelStats {
                level,
                num_groups,
                avg_group_size: if num_groups == 0 { 0.0 } else { num_steps as f64 / num_groups as f64 },
                size_histogram,
                utilized_steps,
                utilization: if num_steps == 0 { 0.0 } else { utilized_steps as f64 / num_steps as f64 },
            }
        })
        .collect();
    let oracle_step_ratio = levels.last().map_or(0.0, |l| l.utilization);
    GroupStats {
        num_steps,
        levels,
        oracle_step_ratio,
    }
}
