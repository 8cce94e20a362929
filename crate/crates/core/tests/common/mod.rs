//! Random batch generators shared by the integration tests.
#![allow(dead_code)]

use hgpo::rollout::{EstimatorConfig, RolloutBatch, Step, Trajectory};
use proptest::prelude::*;
use rand::Rng;

pub const ALPHABET: [&str; 5] = ["A", "B", "C", "D", "E"];

/// Batch with `n` trajectories of length `1..=max_len` over the first
/// `alphabet` symbols; rewards are small integers so ties are common.
pub fn random_batch<R: Rng + ?Sized>(rng: &mut R, n: usize, max_len: usize, alphabet: usize, config: EstimatorConfig) -> RolloutBatch {
    let trajectories = (0..n)
        .map(|i| {
            let len = rng.random_range(1..=max_len);
            Trajectory {
                index: i + 1,
                task_id: "task".into(),
                steps: (0..len)
                    .map(|_| {
                        let s = ALPHABET[rng.random_range(0..alphabet)];
                        let r = rng.random_range(-2i32..=2) as f64;
                        Step::new(s, "right", r, -(4f64.ln()))
                    })
                    .collect(),
                terminal: None,
            }
        })
        .collect();
    RolloutBatch::new("task", trajectories, config)
}

pub fn batch_from(states: Vec<Vec<String>>, rewards: Vec<Vec<f64>>, config: EstimatorConfig) -> RolloutBatch {
    let trajectories = states
        .into_iter()
        .zip(rewards)
        .enumerate()
        .map(|(i, (ss, rs))| Trajectory {
            index: i + 1,
            task_id: "task".into(),
            steps: ss.iter().zip(rs).map(|(s, r)| Step::new(s, "right", r, -(4f64.ln()))).collect(),
            terminal: None,
        })
        .collect();
    RolloutBatch::new("task", trajectories, config)
}

/// Proptest strategy for batches of 2..=8 trajectories, length 1..=10,
/// states from `states` and rewards in -2..=2 (integers or fractions).
pub fn arb_batch_over(states: BoxedStrategy<String>, config: EstimatorConfig) -> impl Strategy<Value = RolloutBatch> {
    let step = (states, prop_oneof![(-2i32..=2).prop_map(f64::from), -2.0f64..2.0]);
    prop::collection::vec(prop::collection::vec(step, 1..=10), 2..=8).prop_map(move |trajs| {
        let (states, rewards) = trajs
            .into_iter()
            .map(|t| t.into_iter().unzip::<_, _, Vec<String>, Vec<f64>>())
            .unzip();
        batch_from(states, rewards, config)
    })
}

pub fn arb_batch(k: usize) -> impl Strategy<Value = RolloutBatch> {
    let config = EstimatorConfig { k, ..EstimatorConfig::default() };
    (1..=5usize).prop_flat_map(move |a| {
        arb_batch_over(prop::sample::select(&ALPHABET[..a]).prop_map(String::from).boxed(), config)
    })
}
