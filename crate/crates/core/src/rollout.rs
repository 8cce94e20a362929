//! Rollout data model: states, steps, trajectories and same-task batches.
//!
//! Everything here is immutable once built. Rewards are stored raw and
//! discounting happens on demand so one batch can be analysed under several
//! discount factors.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{HgpoError, Result};

/// Canonical byte encoding of one observation.
///
/// The encoding is a 4-byte little-endian length prefix followed by the UTF-8
/// bytes of the observation string, so equality is plain byte equality.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(Vec<u8>);

impl StateKey {
    pub fn from_observation(observation: &str) -> Self {
        let len = u32::try_from(observation.len()).expect("observation longer than 4 GiB");
        let mut bytes = Vec::with_capacity(4 + observation.len());
        bytes.extend_from_slice(&len.to_le_bytes());
        bytes.extend_from_slice(observation.as_bytes());
        StateKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    /// The observation string this key was built from.
    pub fn observation(&self) -> &str {
        std::str::from_utf8(&self.0[4..]).expect("StateKey holds UTF-8 by construction")
    }
}

impl fmt::Debug for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateKey({:?})", self.observation())
    }
}

impl From<&str> for StateKey {
    fn from(s: &str) -> Self {
        StateKey::from_observation(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: StateKey,
    pub action: String,
    pub raw_reward: f64,
    /// Natural log-probability of `action` under the sampling policy.
    pub old_logprob: f64,
}

impl Step {
    pub fn new(state: &str, action: &str, raw_reward: f64, old_logprob: f64) -> Self {
        Step {
            state: StateKey::from_observation(state),
            action: action.to_string(),
            raw_reward,
            old_logprob,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Terminal {
    Success,
    Failure,
    Truncated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// 1-based position of the trajectory inside its group.
    pub index: usize,
    pub task_id: String,
    pub steps: Vec<Step>,
    /// `None` when the outcome is unknown (e.g. imported from a trace).
    pub terminal: Option<Terminal>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Undiscounted episode return.
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.raw_reward).sum()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.raw_reward).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Deepest context level.
    pub k: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub sigma_epsilon: f64,
    pub include_trajectory_level: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            k: 2,
            alpha: 1.0,
            gamma: 0.95,
            sigma_epsilon: 1e-8,
            include_trajectory_level: false,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(HgpoError::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        check_gamma(self.gamma)?;
        if !(self.sigma_epsilon > 0.0 && self.sigma_epsilon.is_finite()) {
            return Err(HgpoError::invalid(format!(
                "sigma_epsilon must be > 0, got {}",
                self.sigma_epsilon
            )));
        }
        Ok(())
    }
}

/// N same-task trajectories forming one group.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub task_id: String,
    pub trajectories: Vec<Trajectory>,
    pub config: EstimatorConfig,
}

impl RolloutBatch {
    pub fn new(task_id: impl Into<String>, trajectories: Vec<Trajectory>, config: EstimatorConfig) -> Self {
        RolloutBatch {
            task_id: task_id.into(),
            trajectories,
            config,
        }
    }

    /// Convenience constructor from per-trajectory state and reward lists.
    /// Actions are set to `"-"` and old log-probabilities to 0.
    pub fn from_states_and_rewards(
        task_id: &str,
        states: &[Vec<&str>],
        rewards: &[Vec<f64>],
        config: EstimatorConfig,
    ) -> Self {
        assert_eq!(states.len(), rewards.len());
        let trajectories = states
            .iter()
            .zip(rewards)
            .enumerate()
            .map(|(i, (ss, rs))| {
                assert_eq!(ss.len(), rs.len());
                Trajectory {
                    index: i + 1,
                    task_id: task_id.to_string(),
                    steps: ss.iter().zip(rs).map(|(s, &r)| Step::new(s, "-", r, 0.0)).collect(),
                    terminal: None,
                }
            })
            .collect();
        RolloutBatch::new(task_id, trajectories, config)
    }

    pub fn num_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Discounted returns-to-go for every trajectory, using the batch's gamma.
    pub fn discounted_returns(&self) -> Result<Vec<Vec<f64>>> {
        self.trajectories
            .iter()
            .map(|t| discounted_returns(t, self.config.gamma))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Reports every structural problem in `batch`. Never fails.
pub fn validate_batch(batch: &RolloutBatch) -> ValidationReport {
    let mut violations = Vec::new();
    if batch.trajectories.len() < 2 {
        violations.push(format!("group size below 2 (N={})", batch.trajectories.len()));
    }
    for (pos, traj) in batch.trajectories.iter().enumerate() {
        let i = pos + 1;
        if traj.task_id != batch.task_id {
            violations.push(format!(
                "inconsistent task_id at index {i}: '{}' != '{}'",
                traj.task_id, batch.task_id
            ));
        }
        if traj.is_empty() {
            violations.push(format!("empty trajectory at index {i}"));
        }
        for (s, step) in traj.steps.iter().enumerate() {
            let t = s + 1;
            if !step.raw_reward.is_finite() {
                violations.push(format!("non-finite reward at ({i}, {t})"));
            }
            if step.old_logprob.is_nan() || step.old_logprob > 0.0 {
                violations.push(format!("old_logprob must be <= 0 at ({i}, {t}), got {}", step.old_logprob));
            }
        }
    }
    ValidationReport { violations }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(HgpoError::invalid(format!("gamma must lie in (0, 1], got {gamma}")))
    }
}

/// Return-to-go `sum_{j>=t} gamma^(j-t) r_j` for every step of `trajectory`.
pub fn discounted_returns(trajectory: &Trajectory, gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    if trajectory.is_empty() {
        return Err(HgpoError::invalid("discounted_returns on an empty trajectory"));
    }
    Ok(discount_rewards(&trajectory.rewards(), gamma))
}

pub(crate) fn discount_rewards(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(rewards: &[f64]) -> Trajectory {
        Trajectory {
            index: 1,
            task_id: "t".into(),
            steps: rewards.iter().map(|&r| Step::new("s", "a", r, -0.5)).collect(),
            terminal: None,
        }
    }

    #[test]
    fn state_key_round_trips_observation() {
        let k = StateKey::from_observation("cell:3");
        assert_eq!(k.observation(), "cell:3");
        assert_eq!(&k.as_bytes()[..4], &6u32.to_le_bytes());
        assert_ne!(StateKey::from("ab"), StateKey::from("a"));
    }

    #[test]
    fn discounted_returns_examples() {
        assert_eq!(discounted_returns(&traj(&[0.0, 0.0, 10.0]), 0.5).unwrap(), vec![2.5, 5.0, 10.0]);
        assert_eq!(discounted_returns(&traj(&[0.0, 0.0, 10.0]), 1.0).unwrap(), vec![10.0, 10.0, 10.0]);
        assert_eq!(discounted_returns(&traj(&[1.0, 1.0, 1.0]), 1.0).unwrap(), vec![3.0, 2.0, 1.0]);
        assert!(discounted_returns(&traj(&[1.0, 1.0, 1.0]), 0.0).is_err());
        assert!(discounted_returns(&traj(&[1.0]), 1.5).is_err());
        assert!(discounted_returns(&traj(&[]), 0.9).is_err());
    }

    #[test]
    fn validate_reports_violations() {
        let cfg = EstimatorConfig::default();
        let ok = RolloutBatch::new("t", vec![traj(&[1.0]), traj(&[0.0, 2.0])], cfg);
        assert!(validate_batch(&ok).is_ok());

        let mut bad = ok.clone();
        bad.trajectories[1].steps.clear();
        assert_eq!(validate_batch(&bad).violations, vec!["empty trajectory at index 2".to_string()]);

        let single = RolloutBatch::new("t", vec![traj(&[1.0])], cfg);
        assert!(validate_batch(&single).violations[0].starts_with("group size below 2"));

        let mut nan = ok.clone();
        nan.trajectories[0].steps[0].raw_reward = f64::NAN;
        nan.trajectories[1].task_id = "other".into();
        let report = validate_batch(&nan);
        assert_eq!(report.violations.len(), 2);
        assert_eq!(report, validate_batch(&nan));
    }
}
