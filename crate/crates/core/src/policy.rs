//! Tabular softmax policy keyed by a bounded history window.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HgpoError, Result};
use crate::rollout::{StateKey, Step, Trajectory};

/// Byte key for the policy's conditioning window: the most recent
/// (observation, action) pairs followed by the current observation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PolicyContext(Vec<u8>);

fn push_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

impl PolicyContext {
    /// `history` is ordered oldest first.
    pub fn new(history: &[(&str, &str)], current: &str) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(&(history.len() as u32).to_le_bytes());
        for (obs, action) in history {
            push_str(&mut buf, obs);
            push_str(&mut buf, action);
        }
        push_str(&mut buf, current);
        PolicyContext(buf)
    }

    /// Context seen when acting at step `t` (1-based) of `trajectory`, with a
    /// memory of up to `memory` earlier steps.
    pub fn for_step(trajectory: &Trajectory, t: usize, memory: usize) -> Self {
        PolicyContext::after(&trajectory.steps[..t - 1], trajectory.steps[t - 1].state.observation(), memory)
    }

    /// Context for acting on `current` after the steps in `previous`.
    pub fn after(previous: &[Step], current: &str, memory: usize) -> Self {
        let start = previous.len().saturating_sub(memory);
        let history: Vec<(&str, &str)> = previous[start..]
            .iter()
            .map(|s| (s.state.observation(), s.action.as_str()))
            .collect();
        PolicyContext::new(&history, current)
    }

    pub fn from_window(history: &[(StateKey, String)], current: &StateKey) -> Self {
        let h: Vec<(&str, &str)> = history.iter().map(|(s, a)| (s.observation(), a.as_str())).collect();
        PolicyContext::new(&h, current.observation())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        PolicyContext(bytes)
    }
}

pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 0.0 {
        let mut best = 0;
        for (i, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = i;
            }
        }
        let mut p = vec![0.0; logits.len()];
        p[best] = 1.0;
        return p;
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax_at(logits: &[f64], a: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits[a] - lse
}

/// KL(p || q) for two strictly positive distributions.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Sparse gradient over logit rows, keyed by context.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyGradient {
    pub rows: BTreeMap<PolicyContext, Vec<f64>>,
}

impl PolicyGradient {
    pub fn add_row(&mut self, ctx: &PolicyContext, row: &[f64], scale: f64) {
        let entry = self.rows.entry(ctx.clone()).or_insert_with(|| vec![0.0; row.len()]);
        for (e, r) in entry.iter_mut().zip(row) {
            *e += scale * r;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for row in self.rows.values_mut() {
            row.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn norm(&self) -> f64 {
        self.rows.values().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn get(&self, ctx: &PolicyContext) -> Option<&[f64]> {
        self.rows.get(ctx).map(Vec::as_slice)
    }
}

/// Softmax policy with one logit row per context. Contexts that were never
/// written behave as all-zero logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextPolicy {
    actions: Vec<String>,
    table: BTreeMap<PolicyContext, Vec<f64>>,
}

impl ContextPolicy {
    pub fn new(actions: Vec<String>) -> Self {
        assert!(!actions.is_empty(), "policy needs at least one action");
        ContextPolicy {
            actions,
            table: BTreeMap::new(),
        }
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn num_contexts(&self) -> usize {
        self.table.len()
    }

    pub fn action_index(&self, action: &str) -> Result<usize> {
        self.actions
            .iter()
            .position(|a| a == action)
            .ok_or_else(|| HgpoError::UnknownAction(action.to_string()))
    }

    pub fn logits(&self, ctx: &PolicyContext) -> Vec<f64> {
        self.table.get(ctx).cloned().unwrap_or_else(|| vec![0.0; self.actions.len()])
    }

    pub fn set_logits(&mut self, ctx: &PolicyContext, logits: Vec<f64>) {
        assert_eq!(logits.len(), self.actions.len());
        self.table.insert(ctx.clone(), logits);
    }

    pub fn action_distribution(&self, ctx: &PolicyContext, temperature: f64) -> Vec<f64> {
        softmax(&self.logits(ctx), temperature)
    }

    pub fn logprob(&self, ctx: &PolicyContext, action: &str) -> Result<f64> {
        let a = self.action_index(action)?;
        Ok(self.logprob_index(ctx, a))
    }

    pub fn logprob_index(&self, ctx: &PolicyContext, a: usize) -> f64 {
        match self.table.get(ctx) {
            Some(z) => log_softmax_at(z, a),
            None => -(self.actions.len() as f64).ln(),
        }
    }

    /// Gradient of `logprob(ctx, action)` with respect to the logits of `ctx`:
    /// `1{a' = action} - pi(a' | ctx)`.
    pub fn grad_logprob(&self, ctx: &PolicyContext, action: &str) -> Result<PolicyGradient> {
        let a = self.action_index(action)?;
        let mut grad = PolicyGradient::default();
        grad.rows.insert(ctx.clone(), self.grad_logprob_row(ctx, a));
        Ok(grad)
    }

    pub(crate) fn grad_logprob_row(&self, ctx: &PolicyContext, a: usize) -> Vec<f64> {
        let mut row: Vec<f64> = self.action_distribution(ctx, 1.0).into_iter().map(|p| -p).collect();
        row[a] += 1.0;
        row
    }

    pub fn kl_to_reference(&self, reference: &ContextPolicy, ctx: &PolicyContext) -> f64 {
        kl_divergence(&self.action_distribution(ctx, 1.0), &reference.action_distribution(ctx, 1.0))
    }

    /// d KL(pi || pi_ref) / d logits at `ctx`: `p_j (ln(p_j / q_j) - KL)`.
    pub fn grad_kl_row(&self, reference: &ContextPolicy, ctx: &PolicyContext) -> Vec<f64> {
        let p = self.action_distribution(ctx, 1.0);
        let q = reference.action_distribution(ctx, 1.0);
        let log_ratio: Vec<f64> = p.iter().zip(&q).map(|(pi, qi)| (pi / qi).ln()).collect();
        let kl: f64 = p.iter().zip(&log_ratio).map(|(pi, l)| pi * l).sum();
        p.iter().zip(&log_ratio).map(|(pi, l)| pi * (l - kl)).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, ctx: &PolicyContext, temperature: f64, rng: &mut R) -> usize {
        let probs = self.action_distribution(ctx, temperature);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding left the cumulative sum just below 1.
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// `theta += step * grad`.
    pub fn apply(&mut self, grad: &PolicyGradient, step: f64) {
        let n = self.actions.len();
        for (ctx, row) in &grad.rows {
            let logits = self.table.entry(ctx.clone()).or_insert_with(|| vec![0.0; n]);
            for (z, g) in logits.iter_mut().zip(row) {
                *z += step * g;
            }
        }
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<()> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            actions: self.actions.clone(),
            entries: self
                .table
                .iter()
                .map(|(ctx, logits)| CheckpointEntry {
                    context: hex::encode(ctx.as_bytes()),
                    logits: logits.clone(),
                })
                .collect(),
        };
        serde_json::to_writer_pretty(writer, &file)?;
        Ok(())
    }

    pub fn load<R: Read>(reader: R) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_reader(reader)?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(HgpoError::invalid(format!(
                "unsupported checkpoint {} v{}",
                file.format, file.version
            )));
        }
        let mut policy = ContextPolicy::new(file.actions);
        for entry in file.entries {
            let bytes = hex::decode(&entry.context).map_err(|e| HgpoError::invalid(format!("bad context key: {e}")))?;
            if entry.logits.len() != policy.actions.len() {
                return Err(HgpoError::invalid("checkpoint row length does not match action set"));
            }
            policy.table.insert(PolicyContext(bytes), entry.logits);
        }
        Ok(policy)
    }
}

const CHECKPOINT_FORMAT: &str = "hgpo-policy";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    actions: Vec<String>,
    entries: Vec<CheckpointEntry>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    context: String,
    logits: Vec<f64>,
}
