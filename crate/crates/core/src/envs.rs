//! Environment contract and the aliased corridor.
//!
//! The corridor is a row of cells `0..L`. The agent starts at cell 0, a key
//! lies at `key_position`, and the door is the last cell. Observations only
//! report the agent's cell, so "at cell 4 holding the key" and "at cell 4
//! without the key" look identical: the same current state recurs under
//! different histories.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HgpoError, Result};
use crate::rng::substream;

pub const SUCCESS_REWARD: f64 = 10.0;
pub const INVALID_ACTION_PENALTY: f64 = -0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: String,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

pub trait Environment {
    /// Starts a new episode and returns the first observation.
    fn reset(&mut self) -> String;
    fn step(&mut self, action: &str) -> Result<Transition>;
    fn admissible_actions(&self) -> &[String];
    fn max_steps(&self) -> usize;
}

/// Creates environments for tasks drawn from a task distribution.
pub trait EnvFactory {
    type Task: Clone;
    type Env: Environment;

    fn name(&self) -> &str;
    fn action_set(&self) -> Vec<String>;
    fn max_steps(&self) -> usize;
    /// Seed-reproducible task draws.
    fn sample_tasks(&self, seed: u64, num_tasks: usize) -> Vec<Self::Task>;
    /// Fixed task set used for evaluation.
    fn eval_tasks(&self) -> Vec<Self::Task>;
    fn task_id(&self, task: &Self::Task) -> String;
    fn make(&self, task: &Self::Task) -> Self::Env;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorridorParams {
    pub length: usize,
    pub max_steps: usize,
}

impl Default for CorridorParams {
    fn default() -> Self {
        CorridorParams { length: 6, max_steps: 12 }
    }
}

impl CorridorParams {
    pub fn validate(&self) -> Result<()> {
        if self.length < 3 {
            return Err(HgpoError::invalid(format!("corridor length must be >= 3, got {}", self.length)));
        }
        if self.max_steps == 0 {
            return Err(HgpoError::invalid("corridor max_steps must be >= 1"));
        }
        Ok(())
    }
}

/// One corridor task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasedCorridorSpec {
    pub length: usize,
    pub key_position: usize,
    pub max_steps: usize,
}

impl AliasedCorridorSpec {
    pub fn door(&self) -> usize {
        self.length - 1
    }
}

pub const CORRIDOR_ACTIONS: [&str; 4] = ["left", "right", "pickup", "open"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Move {
    Left,
    Right,
    Pickup,
    Open,
}

#[derive(Debug, Clone)]
pub struct AliasedCorridor {
    spec: AliasedCorridorSpec,
    actions: Vec<String>,
    position: usize,
    has_key: bool,
    steps_taken: usize,
    done: bool,
}

impl AliasedCorridor {
    pub fn new(spec: AliasedCorridorSpec) -> Self {
        assert!(
            spec.key_position >= 1 && spec.key_position + 2 <= spec.length,
            "key position must lie in [1, L-2]"
        );
        AliasedCorridor {
            spec,
            actions: CORRIDOR_ACTIONS.iter().map(|s| s.to_string()).collect(),
            position: 0,
            has_key: false,
            steps_taken: 0,
            done: false,
        }
    }

    pub fn spec(&self) -> &AliasedCorridorSpec {
        &self.spec
    }

    /// Hidden state, exposed for tests.
    pub fn has_key(&self) -> bool {
        self.has_key
    }

    pub fn position(&self) -> usize {
        self.position
    }

    fn observation(&self) -> String {
        format!("cell:{}", self.position)
    }
}

impl Environment for AliasedCorridor {
    fn reset(&mut self) -> String {
        self.position = 0;
        self.has_key = false;
        self.steps_taken = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: &str) -> Result<Transition> {
        let mv = match action {
            "left" => Move::Left,
            "right" => Move::Right,
            "pickup" => Move::Pickup,
            "open" => Move::Open,
            other => return Err(HgpoError::UnknownAction(other.to_string())),
        };
        if self.done {
            return Err(HgpoError::EpisodeDone);
        }
        self.steps_taken += 1;
        let mut reward = 0.0;
        let mut success = false;
        match mv {
            Move::Left => self.position = self.position.saturating_sub(1),
            Move::Right => self.position = (self.position + 1).min(self.spec.length - 1),
            Move::Pickup => {
                if self.position == self.spec.key_position && !self.has_key {
                    self.has_key = true;
                } else {
                    reward = INVALID_ACTION_PENALTY;
                }
            }
            Move::Open => {
                if self.position == self.spec.door() && self.has_key {
                    reward = SUCCESS_REWARD;
                    success = true;
                } else {
                    reward = INVALID_ACTION_PENALTY;
                }
            }
        }
        self.done = success || self.steps_taken >= self.spec.max_steps;
        Ok(Transition {
            observation: self.observation(),
            reward,
            done: self.done,
            success,
        })
    }

    fn admissible_actions(&self) -> &[String] {
        &self.actions
    }

    fn max_steps(&self) -> usize {
        self.spec.max_steps
    }
}

/// Draws `num_tasks` corridor tasks with key positions uniform over `[1, L-2]`.
pub fn task_sampler(params: CorridorParams, seed: u64, num_tasks: usize) -> Vec<AliasedCorridorSpec> {
    let mut rng = substream(seed, "tasks");
    (0..num_tasks)
        .map(|_| AliasedCorridorSpec {
            length: params.length,
            key_position: rng.random_range(1..=params.length - 2),
            max_steps: params.max_steps,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AliasedCorridorFactory {
    pub params: CorridorParams,
}

impl EnvFactory for AliasedCorridorFactory {
    type Task = AliasedCorridorSpec;
    type Env = AliasedCorridor;

    fn name(&self) -> &str {
        "aliased-corridor"
    }

    fn action_set(&self) -> Vec<String> {
        CORRIDOR_ACTIONS.iter().map(|s| s.to_string()).collect()
    }

    fn max_steps(&self) -> usize {
        self.params.max_steps
    }

    fn sample_tasks(&self, seed: u64, num_tasks: usize) -> Vec<AliasedCorridorSpec> {
        task_sampler(self.params, seed, num_tasks)
    }

    fn eval_tasks(&self) -> Vec<AliasedCorridorSpec> {
        (1..=self.params.length - 2)
            .map(|key_position| AliasedCorridorSpec {
                length: self.params.length,
                key_position,
                max_steps: self.params.max_steps,
            })
            .collect()
    }

    fn task_id(&self, task: &AliasedCorridorSpec) -> String {
        format!("aliased-corridor/L{}/key{}", task.length, task.key_position)
    }

    fn make(&self, task: &AliasedCorridorSpec) -> AliasedCorridor {
        AliasedCorridor::new(*task)
    }
}

/// Registered environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvRegistry {
    AliasedCorridor(AliasedCorridorFactory),
}

pub const REGISTERED_ENVS: [&str; 1] = ["aliased-corridor"];

impl EnvRegistry {
    pub fn lookup(name: &str, params: CorridorParams) -> Result<Self> {
        params.validate()?;
        match name {
            "aliased-corridor" => Ok(EnvRegistry::AliasedCorridor(AliasedCorridorFactory { params })),
            other => Err(HgpoError::UnknownEnvironment(other.to_string())),
        }
    }
}
