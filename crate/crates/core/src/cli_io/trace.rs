//! JSON Lines rollout traces: one trajectory per line.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{HgpoError, Result};
use crate::optimizer::GroupRollout;
use crate::rollout::{EstimatorConfig, RolloutBatch, Step, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceStep {
    pub state: String,
    pub action: String,
    pub reward: f64,
    pub old_logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub task_id: String,
    pub group_id: String,
    pub trajectory_id: String,
    pub steps: Vec<TraceStep>,
}

/// Trajectories sharing a `group_id`, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceGroup {
    pub group_id: String,
    pub trajectory_ids: Vec<String>,
    pub batch: RolloutBatch,
}

impl TraceRecord {
    pub fn from_trajectory(group_id: &str, trajectory: &Trajectory) -> Self {
        TraceRecord {
            task_id: trajectory.task_id.clone(),
            group_id: group_id.to_string(),
            trajectory_id: format!("{group_id}-t{}", trajectory.index),
            steps: trajectory
                .steps
                .iter()
                .map(|s| TraceStep {
                    state: s.state.observation().to_string(),
                    action: s.action.clone(),
                    reward: s.raw_reward,
                    old_logprob: s.old_logprob,
                })
                .collect(),
        }
    }

    fn check_finite(&self) -> Result<()> {
        for (t, s) in self.steps.iter().enumerate() {
            if !s.reward.is_finite() || !s.old_logprob.is_finite() {
                return Err(HgpoError::NonFinite(format!(
                    "trajectory {} step {}: reward {}, old_logprob {}",
                    self.trajectory_id,
                    t + 1,
                    s.reward,
                    s.old_logprob
                )));
            }
        }
        Ok(())
    }
}

pub fn write_records<W: Write>(mut writer: W, records: &[TraceRecord]) -> Result<()> {
    for record in records {
        // JSON has no NaN or infinity; refuse rather than emit null.
        record.check_finite()?;
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_trace<W: Write>(writer: W, groups: &[GroupRollout]) -> Result<()> {
    let records: Vec<TraceRecord> = groups
        .iter()
        .flat_map(|g| g.batch.trajectories.iter().map(|t| TraceRecord::from_trajectory(&g.group_id, t)))
        .collect();
    write_records(writer, &records)
}

/// Parses every non-blank line. Errors carry the 1-based line number.
pub fn read_trace<R: BufRead>(reader: R) -> Result<Vec<TraceRecord>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line).map_err(|e| HgpoError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.steps.is_empty() {
            return Err(HgpoError::Parse {
                line: line_no,
                message: format!("trajectory '{}' has no steps", record.trajectory_id),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Collects records into one batch per `group_id`, ordered by first appearance.
pub fn group_records(records: &[TraceRecord], config: EstimatorConfig) -> Result<Vec<TraceGroup>> {
    let mut groups: Vec<TraceGroup> = Vec::new();
    let mut position: HashMap<&str, usize> = HashMap::new();
    for record in records {
        let pos = *position.entry(&record.group_id).or_insert_with(|| {
            groups.push(TraceGroup {
                group_id: record.group_id.clone(),
                trajectory_ids: Vec::new(),
                batch: RolloutBatch::new(record.task_id.clone(), Vec::new(), config),
            });
            groups.len() - 1
        });
        let group = &mut groups[pos];
        if group.batch.task_id != record.task_id {
            return Err(HgpoError::InvalidBatch(format!(
                "group '{}' mixes task ids '{}' and '{}'",
                group.group_id, group.batch.task_id, record.task_id
            )));
        }
        let index = group.batch.trajectories.len() + 1;
        group.trajectory_ids.push(record.trajectory_id.clone());
        group.batch.trajectories.push(Trajectory {
            index,
            task_id: record.task_id.clone(),
            steps: record
                .steps
                .iter()
                .map(|s| Step::new(&s.state, &s.action, s.reward, s.old_logprob))
                .collect(),
            terminal: None,
        });
    }
    for group in &groups {
        if group.batch.trajectories.len() < 2 {
            return Err(HgpoError::InvalidBatch(format!(
                "group '{}' has {} trajectory, need at least 2",
                group.group_id,
                group.batch.trajectories.len()
            )));
        }
    }
    Ok(groups)
}
