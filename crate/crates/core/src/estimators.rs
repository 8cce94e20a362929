//! Group-relative advantage estimators.
//!
//! All estimators share one kernel, [`normalize_group`]: subtract the group
//! mean and divide by the population standard deviation. Singleton groups and
//! groups whose spread falls below `sigma_epsilon` are degenerate and give
//! every member an advantage of exactly 0.
//!
//! * `grpo`: one group per batch over undiscounted episode returns, broadcast
//!   to every step of the trajectory.
//! * `gigpo`: steps grouped by current state, compared on discounted
//!   returns-to-go.
//! * `hgpo`: per-level advantages over the hierarchy of context groups,
//!   combined with `(k+1)^alpha` weights renormalized over the levels whose
//!   group is not degenerate.
//! * `oracle`: the deepest level alone.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{HgpoError, Result};
use crate::grouping::{HierarchicalIndex, StepId};
use crate::rollout::{RolloutBatch, StateKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Grpo,
    Gigpo,
    Hgpo,
    Oracle,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Grpo, Estimator::Gigpo, Estimator::Hgpo, Estimator::Oracle];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Grpo => "grpo",
            Estimator::Gigpo => "gigpo",
            Estimator::Hgpo => "hgpo",
            Estimator::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Estimator {
    type Err = HgpoError;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| HgpoError::invalid(format!("unknown estimator '{s}' (expected grpo|gigpo|hgpo|oracle)")))
    }
}

/// Normalized values of one group, or `None` when the group is degenerate.
fn normalize_live(values: &[f64], sigma_epsilon: f64) -> Option<Vec<f64>> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < sigma_epsilon {
        return None;
    }
    Some(values.iter().map(|v| (v - mean) / std).collect())
}

/// `(v - mean) / std` with the population standard deviation; all zeros when
/// the group is a singleton or its std is below `sigma_epsilon`.
pub fn normalize_group(values: &[f64], sigma_epsilon: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(HgpoError::invalid("normalize_group on an empty group"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(HgpoError::NonFinite(format!("group value {v}")));
    }
    Ok(normalize_live(values, sigma_epsilon).unwrap_or_else(|| vec![0.0; values.len()]))
}

/// Level weights `(k+1)^alpha / sum_j (j+1)^alpha` for `k = 0..=max_level`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for WeightVector {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

pub fn adaptive_weights(max_level: usize, alpha: f64) -> Result<WeightVector> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(HgpoError::invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    let raw: Vec<f64> = (0..=max_level).map(|k| ((k + 1) as f64).powf(alpha)).collect();
    let total: f64 = raw.iter().sum();
    Ok(WeightVector(raw.into_iter().map(|w| w / total).collect()))
}

/// One level's contribution at a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelTerm {
    pub advantage: f64,
    pub contributing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdvantageRecord {
    pub step: StepId,
    /// Per-level advantages. For `grpo` and `gigpo` this holds the single
    /// trajectory-level or state-level value.
    pub level_advantages: Vec<f64>,
    pub contributing_mask: Vec<bool>,
    /// Trajectory-level term, present when it joins the aggregation.
    pub trajectory_term: Option<LevelTerm>,
    pub final_advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdvantageSet {
    pub estimator: Estimator,
    /// One record per step, in flat order (trajectory-major, time-minor).
    pub records: Vec<AdvantageRecord>,
}

impl AdvantageSet {
    pub fn finals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.final_advantage).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Advantages of every step at one level plus whether its group was live.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelAdvantages {
    pub values: Vec<f64>,
    pub live: Vec<bool>,
}

fn step_ids(batch: &RolloutBatch) -> Vec<StepId> {
    batch
        .trajectories
        .iter()
        .enumerate()
        .flat_map(|(i, traj)| (1..=traj.len()).map(move |t| StepId { trajectory: i, t }))
        .collect()
}

fn flat_returns(batch: &RolloutBatch) -> Result<Vec<f64>> {
    let returns: Vec<f64> = batch.discounted_returns()?.into_iter().flatten().collect();
    if let Some(v) = returns.iter().find(|v| !v.is_finite()) {
        return Err(HgpoError::NonFinite(format!("discounted return {v}")));
    }
    Ok(returns)
}

fn require_group(batch: &RolloutBatch) -> Result<()> {
    if batch.trajectories.len() < 2 {
        return Err(HgpoError::InvalidBatch(format!(
            "group size below 2 (N={}) for task '{}'",
            batch.trajectories.len(),
            batch.task_id
        )));
    }
    Ok(())
}

/// Normalizes `values` within each group of flat indices.
fn normalize_groups<'a>(
    values: &[f64],
    groups: impl Iterator<Item = &'a [usize]>,
    sigma_epsilon: f64,
) -> LevelAdvantages {
    let mut out = LevelAdvantages {
        values: vec![0.0; values.len()],
        live: vec![false; values.len()],
    };
    let mut buf = Vec::new();
    for members in groups {
        buf.clear();
        buf.extend(members.iter().map(|&f| values[f]));
        if let Some(normed) = normalize_live(&buf, sigma_epsilon) {
            for (&f, a) in members.iter().zip(normed) {
                out.values[f] = a;
                out.live[f] = true;
            }
        }
    }
    out
}

/// Trajectory-level advantage for every step (the same value along a trajectory).
fn trajectory_level(batch: &RolloutBatch) -> Result<LevelAdvantages> {
    require_group(batch)?;
    let returns: Vec<f64> = batch.trajectories.iter().map(|t| t.total_reward()).collect();
    if let Some(v) = returns.iter().find(|v| !v.is_finite()) {
        return Err(HgpoError::NonFinite(format!("episode return {v}")));
    }
    let normed = normalize_live(&returns, batch.config.sigma_epsilon);
    let mut out = LevelAdvantages {
        values: Vec::new(),
        live: Vec::new(),
    };
    for (i, traj) in batch.trajectories.iter().enumerate() {
        let a = normed.as_ref().map_or(0.0, |n| n[i]);
        out.values.extend(std::iter::repeat_n(a, traj.len()));
        out.live.extend(std::iter::repeat_n(normed.is_some(), traj.len()));
    }
    Ok(out)
}

fn single_level_set(estimator: Estimator, batch: &RolloutBatch, level: LevelAdvantages) -> AdvantageSet {
    let records = step_ids(batch)
        .into_iter()
        .zip(level.values.into_iter().zip(level.live))
        .map(|(step, (a, live))| AdvantageRecord {
            step,
            level_advantages: vec![a],
            contributing_mask: vec![live],
            trajectory_term: None,
            final_advantage: a,
        })
        .collect();
    AdvantageSet { estimator, records }
}

/// Trajectory-level advantages: episode returns normalized over the group.
pub fn grpo_advantages(batch: &RolloutBatch) -> Result<AdvantageSet> {
    Ok(single_level_set(Estimator::Grpo, batch, trajectory_level(batch)?))
}

/// State-level advantages: discounted returns normalized among steps that
/// share the same current state. Groups are formed directly from the batch,
/// independently of any [`HierarchicalIndex`].
pub fn gigpo_advantages(batch: &RolloutBatch) -> Result<AdvantageSet> {
    require_group(batch)?;
    let returns = flat_returns(batch)?;
    let mut order: Vec<Vec<usize>> = Vec::new();
    let mut by_state: HashMap<&StateKey, usize> = HashMap::new();
    for (flat, step) in batch.trajectories.iter().flat_map(|t| &t.steps).enumerate() {
        let next = order.len();
        let g = *by_state.entry(&step.state).or_insert(next);
        if g == next {
            order.push(Vec::new());
        }
        order[g].push(flat);
    }
    let level = normalize_groups(&returns, order.iter().map(Vec::as_slice), batch.config.sigma_epsilon);
    Ok(single_level_set(Estimator::Gigpo, batch, level))
}

fn check_index(batch: &RolloutBatch, index: &HierarchicalIndex) -> Result<()> {
    if index.num_steps() != batch.num_steps() || index.num_trajectories() != batch.trajectories.len() {
        return Err(HgpoError::invalid("hierarchical index was built from a different batch"));
    }
    Ok(())
}

/// Advantages within the level-`k` hierarchical groups.
pub fn hgpo_level_advantages(batch: &RolloutBatch, index: &HierarchicalIndex, k: usize) -> Result<LevelAdvantages> {
    check_index(batch, index)?;
    if k > index.max_level() {
        return Err(HgpoError::invalid(format!("level {k} exceeds index depth {}", index.max_level())));
    }
    require_group(batch)?;
    let returns = flat_returns(batch)?;
    Ok(normalize_groups(&returns, index.groups(k), batch.config.sigma_epsilon))
}

fn all_levels(batch: &RolloutBatch, index: &HierarchicalIndex) -> Result<Vec<LevelAdvantages>> {
    if index.max_level() != batch.config.k {
        return Err(HgpoError::LevelMismatch {
            index: index.max_level(),
            config: batch.config.k,
        });
    }
    (0..=index.max_level())
        .map(|k| hgpo_level_advantages(batch, index, k))
        .collect()
}

/// Weighted aggregation over all levels, dropping degenerate levels and
/// renormalizing the remaining weights.
pub fn hgpo_advantages(batch: &RolloutBatch, index: &HierarchicalIndex) -> Result<AdvantageSet> {
    let cfg = batch.config;
    let levels = all_levels(batch, index)?;
    let traj = if cfg.include_trajectory_level {
        Some(trajectory_level(batch)?)
    } else {
        None
    };
    // With the trajectory term it takes the lowest slot of a (K+2)-entry weight vector.
    let offset = usize::from(traj.is_some());
    let weights = adaptive_weights(cfg.k + offset, cfg.alpha)?;

    let records = step_ids(batch)
        .into_iter()
        .enumerate()
        .map(|(flat, step)| {
            let mut num = 0.0;
            let mut den = 0.0;
            let trajectory_term = traj.as_ref().map(|t| LevelTerm {
                advantage: t.values[flat],
                contributing: t.live[flat],
            });
            if let Some(term) = trajectory_term.filter(|t| t.contributing) {
                num += weights[0] * term.advantage;
                den += weights[0];
            }
            for (k, level) in levels.iter().enumerate() {
                if level.live[flat] {
                    num += weights[k + offset] * level.values[flat];
                    den += weights[k + offset];
                }
            }
            AdvantageRecord {
                step,
                level_advantages: levels.iter().map(|l| l.values[flat]).collect(),
                contributing_mask: levels.iter().map(|l| l.live[flat]).collect(),
                trajectory_term,
                final_advantage: if den > 0.0 { num / den } else { 0.0 },
            }
        })
        .collect();
    Ok(AdvantageSet {
        estimator: Estimator::Hgpo,
        records,
    })
}

/// Deepest-level advantages only: comparisons among steps with identical
/// current state and identical `K`-step history.
pub fn oracle_advantages(batch: &RolloutBatch, index: &HierarchicalIndex) -> Result<AdvantageSet> {
    let levels = all_levels(batch, index)?;
    let deepest = levels.len() - 1;
    let records = step_ids(batch)
        .into_iter()
        .enumerate()
        .map(|(flat, step)| AdvantageRecord {
            step,
            level_advantages: levels.iter().map(|l| l.values[flat]).collect(),
            contributing_mask: (0..levels.len()).map(|k| k == deepest && levels[k].live[flat]).collect(),
            trajectory_term: None,
            final_advantage: levels[deepest].values[flat],
        })
        .collect();
    Ok(AdvantageSet {
        estimator: Estimator::Oracle,
        records,
    })
}

pub fn compute_advantages(estimator: Estimator, batch: &RolloutBatch, index: &HierarchicalIndex) -> Result<AdvantageSet> {
    match estimator {
        Estimator::Grpo => grpo_advantages(batch),
        Estimator::Gigpo => gigpo_advantages(batch),
        Estimator::Hgpo => hgpo_advantages(batch, index),
        Estimator::Oracle => oracle_advantages(batch, index),
    }
}
