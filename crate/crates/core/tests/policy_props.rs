use hgpo::envs::CORRIDOR_ACTIONS;
use hgpo::estimators::compute_advantages;
use hgpo::estimators::Estimator;
use hgpo::grouping::build_hierarchy;
use hgpo::optimizer::{objective_and_grad, TrainConfig};
use hgpo::policy::{kl_divergence, softmax, ContextPolicy, PolicyContext};
use hgpo::rng::substream;
use hgpo::rollout::{EstimatorConfig, RolloutBatch, Step, Trajectory};
use proptest::prelude::*;
use rand::Rng;

fn actions() -> Vec<String> {
    CORRIDOR_ACTIONS.iter().map(|s| s.to_string()).collect()
}

fn random_logits<R: Rng>(rng: &mut R) -> Vec<f64> {
    (0..CORRIDOR_ACTIONS.len()).map(|_| rng.random_range(-3.0..3.0)).collect()
}

#[test]
fn grad_logprob_matches_central_differences() {
    let mut rng = substream(7, "grad-check");
    let mut policy = ContextPolicy::new(actions());
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let ctx = PolicyContext::new(&[("cell:0", "right")], &format!("cell:{i}"));
        policy.set_logits(&ctx, random_logits(&mut rng));
        let action = CORRIDOR_ACTIONS[rng.random_range(0..4)];
        let grad = policy.grad_logprob(&ctx, action).unwrap();
        let row = grad.get(&ctx).unwrap().to_vec();
        for j in 0..4 {
            let mut probe = policy.clone();
            let mut l = policy.logits(&ctx);
            l[j] += h;
            probe.set_logits(&ctx, l.clone());
            let up = probe.logprob(&ctx, action).unwrap();
            l[j] -= 2.0 * h;
            probe.set_logits(&ctx, l);
            let down = probe.logprob(&ctx, action).unwrap();
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((row[j] - fd).abs() / fd.abs().max(1e-12));
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

proptest! {
    #[test]
    fn kl_is_non_negative(
        a in prop::collection::vec(-5.0f64..5.0, 4),
        b in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        let (p, q) = (softmax(&a, 1.0), softmax(&b, 1.0));
        prop_assert!(kl_divergence(&p, &q) >= 0.0);
        prop_assert!(kl_divergence(&p, &p).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_a_distribution(a in prop::collection::vec(-50.0f64..50.0, 1..8), temp in 0.0f64..3.0) {
        let p = softmax(&a, temp);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    }
}

/// Batch whose old log-probs equal the current policy's, so every ratio is 1.
fn on_policy_batch<R: Rng>(rng: &mut R, policy: &mut ContextPolicy, k: usize) -> RolloutBatch {
    let cfg = EstimatorConfig { k, gamma: 0.9, ..EstimatorConfig::default() };
    let mut trajectories = Vec::new();
    for i in 0..6 {
        let len = rng.random_range(3..=8);
        let mut steps: Vec<Step> = Vec::new();
        for _ in 0..len {
            let state = format!("cell:{}", rng.random_range(0..3));
            let action = CORRIDOR_ACTIONS[rng.random_range(0..4)];
            let ctx = PolicyContext::after(&steps, &state, k);
            if policy.logits(&ctx).iter().all(|&x| x == 0.0) {
                policy.set_logits(&ctx, random_logits(rng));
            }
            let lp = policy.logprob(&ctx, action).unwrap();
            steps.push(Step::new(&state, action, rng.random_range(-1.0..1.0), lp));
        }
        trajectories.push(Trajectory { index: i + 1, task_id: "t".into(), steps, terminal: None });
    }
    RolloutBatch::new("t", trajectories, cfg)
}

#[test]
fn objective_gradient_matches_central_differences() {
    let mut rng = substream(11, "objective-check");
    let k = 1;
    let mut policy = ContextPolicy::new(actions());
    let batches: Vec<RolloutBatch> = (0..2).map(|_| on_policy_batch(&mut rng, &mut policy, k)).collect();
    let mut reference = ContextPolicy::new(actions());
    for b in &batches {
        for traj in &b.trajectories {
            for t in 1..=traj.len() {
                let ctx = PolicyContext::for_step(traj, t, k);
                reference.set_logits(&ctx, random_logits(&mut rng));
            }
        }
    }
    let advantages: Vec<_> = batches
        .iter()
        .map(|b| compute_advantages(Estimator::Hgpo, b, &build_hierarchy(b, k).unwrap()).unwrap())
        .collect();
    let pairs: Vec<_> = batches.iter().zip(&advantages).collect();
    let config = TrainConfig { k, kl_beta: 0.05, ..TrainConfig::default() };

    let (_, grad, report) = objective_and_grad(&pairs, &policy, &reference, &config).unwrap();
    assert_eq!(report.clip_fraction, 0.0);

    let h = 1e-5;
    let (mut diff2, mut norm2) = (0.0, 0.0);
    let contexts: Vec<PolicyContext> = grad.rows.keys().cloned().collect();
    for ctx in &contexts {
        let row = grad.get(ctx).unwrap();
        for j in 0..4 {
            let mut probe = policy.clone();
            let mut l = policy.logits(ctx);
            l[j] += h;
            probe.set_logits(ctx, l.clone());
            let up = objective_and_grad(&pairs, &probe, &reference, &config).unwrap().0;
            l[j] -= 2.0 * h;
            probe.set_logits(ctx, l);
            let down = objective_and_grad(&pairs, &probe, &reference, &config).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            diff2 += (row[j] - fd).powi(2);
            norm2 += fd * fd;
        }
    }
    let rel = (diff2 / norm2).sqrt();
    assert!(rel < 1e-3, "relative error {rel}");
}
