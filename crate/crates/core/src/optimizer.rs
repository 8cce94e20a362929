//! Clipped surrogate objective with a KL penalty, and the training loop.
//!
//! Each epoch: snapshot the policy as the rollout policy, sample tasks, roll
//! out `N` trajectories per task, group the steps of each task, compute the
//! configured estimator's advantages, and take gradient-ascent steps on
//!
//! ```text
//! J = mean_steps min(rho * A, clip(rho, 1-eps, 1+eps) * A) - beta * mean_ctx KL(pi || pi_ref)
//! ```

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{bias_vs_oracle, BiasReport};
use crate::envs::{EnvFactory, Environment};
use crate::error::{HgpoError, Result};
use crate::estimators::{compute_advantages, AdvantageSet, Estimator};
use crate::grouping::build_hierarchy;
use crate::policy::{ContextPolicy, PolicyContext, PolicyGradient};
use crate::rng::substream;
use crate::rollout::{validate_batch, EstimatorConfig, RolloutBatch, Step, Terminal, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub estimator: Estimator,
    /// Deepest context level; also the policy's memory length.
    pub k: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub group_size: usize,
    pub tasks_per_epoch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Gradient steps per rollout phase.
    pub update_epochs: usize,
    pub seed: u64,
    pub rollout_temperature: f64,
    pub eval_temperature: f64,
    pub include_trajectory_level: bool,
    pub sigma_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            estimator: Estimator::Hgpo,
            k: 2,
            alpha: 1.0,
            gamma: 0.95,
            clip_epsilon: 0.2,
            kl_beta: 0.01,
            group_size: 8,
            tasks_per_epoch: 16,
            epochs: 300,
            learning_rate: 0.1,
            update_epochs: 1,
            seed: 0,
            rollout_temperature: 1.0,
            eval_temperature: 0.0,
            include_trajectory_level: false,
            sigma_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            k: self.k,
            alpha: self.alpha,
            gamma: self.gamma,
            sigma_epsilon: self.sigma_epsilon,
            include_trajectory_level: self.include_trajectory_level,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.estimator_config().validate()?;
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(HgpoError::invalid(format!("clip epsilon must lie in (0, 1), got {}", self.clip_epsilon)));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return Err(HgpoError::invalid(format!("kl beta must be >= 0, got {}", self.kl_beta)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HgpoError::invalid(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.group_size < 2 {
            return Err(HgpoError::invalid(format!("group size must be >= 2, got {}", self.group_size)));
        }
        if self.tasks_per_epoch == 0 {
            return Err(HgpoError::invalid("tasks per epoch must be >= 1"));
        }
        if self.update_epochs == 0 {
            return Err(HgpoError::invalid("update epochs must be >= 1"));
        }
        for (name, t) in [("rollout", self.rollout_temperature), ("eval", self.eval_temperature)] {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(HgpoError::invalid(format!("{name} temperature must be >= 0, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpdateReport {
    pub pg_loss: f64,
    pub kl_value: f64,
    pub clip_fraction: f64,
    pub mean_advantage: f64,
    pub grad_norm: f64,
}

/// `min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)`.
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> Result<f64> {
    if ratio.is_nan() || ratio <= 0.0 {
        return Err(HgpoError::invalid(format!("importance ratio must be > 0, got {ratio}")));
    }
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    Ok((ratio * advantage).min(clipped * advantage))
}

/// Objective value, its gradient with respect to the policy logits, and
/// update statistics, over every step of every batch in `batches`.
///
/// Each batch is paired with the advantages computed for it; the policy's
/// memory length is `config.k`.
pub fn objective_and_grad(
    batches: &[(&RolloutBatch, &AdvantageSet)],
    policy: &ContextPolicy,
    reference: &ContextPolicy,
    config: &TrainConfig,
) -> Result<(f64, PolicyGradient, UpdateReport)> {
    let total_steps: usize = batches.iter().map(|(b, _)| b.num_steps()).sum();
    if total_steps == 0 {
        return Err(HgpoError::invalid("objective over an empty set of steps"));
    }
    let m = total_steps as f64;
    let eps = config.clip_epsilon;

    let mut grad = PolicyGradient::default();
    let mut surrogate = 0.0;
    let mut clipped_steps = 0usize;
    let mut advantage_sum = 0.0;
    let mut contexts = BTreeSet::new();

    for (batch, advantages) in batches {
        if advantages.len() != batch.num_steps() {
            return Err(HgpoError::InvalidBatch(format!(
                "task '{}': {} advantages for {} steps",
                batch.task_id,
                advantages.len(),
                batch.num_steps()
            )));
        }
        let mut records = advantages.records.iter();
        for traj in &batch.trajectories {
            for t in 1..=traj.len() {
                let step = &traj.steps[t - 1];
                let adv = records.next().expect("length checked").final_advantage;
                let ctx = PolicyContext::for_step(traj, t, config.k);
                let a = policy.action_index(&step.action)?;
                let ratio = (policy.logprob_index(&ctx, a) - step.old_logprob).exp();
                let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
                let unclipped_value = ratio * adv;
                let clipped_value = clipped * adv;
                if clipped_value < unclipped_value {
                    // The clipped branch is constant in theta.
                    clipped_steps += 1;
                    surrogate += clipped_value;
                } else {
                    surrogate += unclipped_value;
                    if adv != 0.0 {
                        // d(rho A) = A rho d(log pi)
                        grad.add_row(&ctx, &policy.grad_logprob_row(&ctx, a), adv * ratio / m);
                    }
                }
                advantage_sum += adv;
                contexts.insert(ctx);
            }
        }
    }

    let mut kl = 0.0;
    if !contexts.is_empty() {
        let c = contexts.len() as f64;
        for ctx in &contexts {
            kl += policy.kl_to_reference(reference, ctx);
            if config.kl_beta > 0.0 {
                grad.add_row(ctx, &policy.grad_kl_row(reference, ctx), -config.kl_beta / c);
            }
        }
        kl /= c;
    }

    let pg = surrogate / m;
    let objective = pg - config.kl_beta * kl;
    let report = UpdateReport {
        pg_loss: -pg,
        kl_value: kl,
        clip_fraction: clipped_steps as f64 / m,
        mean_advantage: advantage_sum / m,
        grad_norm: grad.norm(),
    };
    if !(objective.is_finite() && report.grad_norm.is_finite()) {
        return Err(HgpoError::NonFinite(format!("objective {objective}, grad norm {}", report.grad_norm)));
    }
    Ok((objective, grad, report))
}

/// Plays one episode, recording old log-probabilities at temperature 1.
pub fn play_episode<E: Environment, R: rand::Rng + ?Sized>(
    env: &mut E,
    policy: &ContextPolicy,
    memory: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<(Vec<Step>, Terminal)> {
    let mut steps: Vec<Step> = Vec::with_capacity(env.max_steps());
    let mut observation = env.reset();
    loop {
        let ctx = PolicyContext::after(&steps, &observation, memory);
        let a = policy.sample(&ctx, temperature, rng);
        let action = policy.actions()[a].clone();
        let old_logprob = policy.logprob_index(&ctx, a);
        let tr = env.step(&action)?;
        steps.push(Step::new(&observation, &action, tr.reward, old_logprob));
        if tr.success {
            return Ok((steps, Terminal::Success));
        }
        if tr.done {
            return Ok((steps, Terminal::Truncated));
        }
        observation = tr.observation;
    }
}

/// Rolls out `config.group_size` trajectories of one task.
pub fn rollout_group<F: EnvFactory>(
    factory: &F,
    task: &F::Task,
    policy: &ContextPolicy,
    config: &TrainConfig,
    stream_label: &str,
) -> Result<RolloutBatch> {
    let task_id = factory.task_id(task);
    let trajectories = (0..config.group_size)
        .map(|i| {
            let mut env = factory.make(task);
            let mut rng = substream(config.seed, &format!("{stream_label}/i{i}"));
            let (steps, terminal) = play_episode(&mut env, policy, config.k, config.rollout_temperature, &mut rng)?;
            Ok(Trajectory {
                index: i + 1,
                task_id: task_id.clone(),
                steps,
                terminal: Some(terminal),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RolloutBatch::new(task_id, trajectories, config.estimator_config()))
}

/// Share of `factory.eval_tasks()` solved at the evaluation temperature.
pub fn evaluate<F: EnvFactory>(factory: &F, policy: &ContextPolicy, config: &TrainConfig, label: &str) -> Result<f64> {
    let tasks = factory.eval_tasks();
    let mut solved = 0;
    for (j, task) in tasks.iter().enumerate() {
        let mut env = factory.make(task);
        let mut rng = substream(config.seed, &format!("{label}/task{j}"));
        let (_, terminal) = play_episode(&mut env, policy, config.k, config.eval_temperature, &mut rng)?;
        solved += usize::from(terminal == Terminal::Success);
    }
    Ok(if tasks.is_empty() { 0.0 } else { solved as f64 / tasks.len() as f64 })
}

/// One row of the per-epoch metrics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub mean_reward: f64,
    /// Evaluation success rate after the epoch's update.
    pub success_rate: f64,
    pub mean_advantage: f64,
    pub pg_loss: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub oracle_step_ratio: f64,
    pub avg_group_size: Vec<f64>,
    /// Mean |A - A_oracle| over Oracle steps; `None` without Oracle steps.
    pub bias_traj: Option<f64>,
    pub bias_step: Option<f64>,
    pub bias_hgpo: Option<f64>,
}

impl MetricsRow {
    /// Column names in their fixed order for a run with deepest level `k`.
    pub fn header(k: usize) -> Vec<String> {
        let mut cols: Vec<String> = [
            "epoch",
            "mean_reward",
            "success_rate",
            "mean_advantage",
            "pg_loss",
            "kl",
            "clip_fraction",
            "oracle_step_ratio",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        cols.extend((0..=k).map(|l| format!("avg_group_size_{l}")));
        cols.extend(["bias_traj", "bias_step", "bias_hgpo"].iter().map(|s| s.to_string()));
        cols
    }
}

/// A task group from the last epoch, kept for trace export.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRollout {
    pub group_id: String,
    pub batch: RolloutBatch,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    pub policy: ContextPolicy,
    pub final_rollouts: Vec<GroupRollout>,
}

/// Trains a fresh (uniform) policy.
pub fn run_training<F: EnvFactory>(factory: &F, config: &TrainConfig) -> Result<TrainOutcome> {
    run_training_from(factory, config, ContextPolicy::new(factory.action_set()))
}

/// Trains `policy`; the reference policy for the KL term is its initial state.
pub fn run_training_from<F: EnvFactory>(factory: &F, config: &TrainConfig, mut policy: ContextPolicy) -> Result<TrainOutcome> {
    config.validate()?;
    let reference = policy.clone();
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut final_rollouts = Vec::new();

    for epoch in 1..=config.epochs {
        // The rollout policy is the current policy; old log-probs are recorded during rollout.
        let task_seed: u64 = rand::Rng::random(&mut substream(config.seed, &format!("tasks/e{epoch}")));
        let tasks = factory.sample_tasks(task_seed, config.tasks_per_epoch);

        let mut groups = Vec::with_capacity(tasks.len());
        let mut advantages = Vec::with_capacity(tasks.len());
        let mut bias = BiasReport::empty(config.k + 1);
        for (j, task) in tasks.iter().enumerate() {
            let group_id = format!("e{epoch}-g{j}");
            let batch = rollout_group(factory, task, &policy, config, &format!("rollout/e{epoch}/g{j}"))?;
            let report = validate_batch(&batch);
            if !report.is_ok() {
                return Err(HgpoError::InvalidBatch(report.violations.join("; ")));
            }
            let index = build_hierarchy(&batch, config.k)?;
            advantages.push(compute_advantages(config.estimator, &batch, &index)?);
            bias.merge(&bias_vs_oracle(&batch, &index)?);
            groups.push(GroupRollout { group_id, batch });
        }

        let pairs: Vec<(&RolloutBatch, &AdvantageSet)> = groups.iter().map(|g| &g.batch).zip(&advantages).collect();
        let mut first_report = None;
        for _ in 0..config.update_epochs {
            let (_, grad, report) = objective_and_grad(&pairs, &policy, &reference, config)?;
            policy.apply(&grad, config.learning_rate);
            first_report.get_or_insert(report);
        }
        let report = first_report.expect("update_epochs >= 1");

        let episodes = groups.iter().flat_map(|g| &g.batch.trajectories);
        let (reward_sum, count) = episodes.fold((0.0, 0usize), |(s, c), t| (s + t.total_reward(), c + 1));
        let success_rate = evaluate(factory, &policy, config, &format!("eval/e{epoch}"))?;

        metrics.push(MetricsRow {
            epoch,
            mean_reward: reward_sum / count as f64,
            success_rate,
            mean_advantage: report.mean_advantage,
            pg_loss: report.pg_loss,
            kl: report.kl_value,
            clip_fraction: report.clip_fraction,
            oracle_step_ratio: bias.oracle_step_ratio(),
            avg_group_size: bias.avg_group_size(),
            bias_traj: bias.grpo.mean_abs(),
            bias_step: bias.gigpo.mean_abs(),
            bias_hgpo: bias.hgpo.mean_abs(),
        });
        if epoch == config.epochs {
            final_rollouts = groups;
        }
    }
    Ok(TrainOutcome {
        metrics,
        policy,
        final_rollouts,
    })
}
