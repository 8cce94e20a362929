use hgpo::envs::{task_sampler, AliasedCorridorFactory, CorridorParams, EnvFactory, Environment};
use hgpo::grouping::{build_hierarchy, context_of};
use hgpo::optimizer::{rollout_group, TrainConfig};
use hgpo::policy::ContextPolicy;
use hgpo::rollout::{EstimatorConfig, RolloutBatch, Step, Trajectory};

#[test]
fn task_sampler_is_uniform_over_key_positions() {
    let params = CorridorParams::default();
    let draws = 40_000;
    let mut counts = [0usize; 4];
    for task in task_sampler(params, 2024, draws) {
        counts[task.key_position - 1] += 1;
    }
    let expected = draws as f64 / 4.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 3 degrees of freedom, p = 0.001.
    assert!(chi2 < 16.27, "chi-square {chi2} for counts {counts:?}");
}

#[test]
fn sampler_streams_differ_by_seed() {
    let p = CorridorParams::default();
    assert_ne!(task_sampler(p, 1, 64), task_sampler(p, 2, 64));
}

fn play(factory: &AliasedCorridorFactory, key: usize, script: &[&str]) -> (Trajectory, bool) {
    let task = factory.eval_tasks()[key - 1];
    let mut env = factory.make(&task);
    let mut obs = env.reset();
    let mut steps = Vec::new();
    for a in script {
        let tr = env.step(a).unwrap();
        steps.push(Step::new(&obs, a, tr.reward, 0.0));
        obs = tr.observation;
    }
    steps.push(Step::new(&obs, "open", 0.0, 0.0));
    (
        Trajectory { index: 1, task_id: factory.task_id(&task), steps, terminal: None },
        env.has_key(),
    )
}

/// Same observation, different hidden state: only history tells them apart.
#[test]
fn observations_alias_hidden_state() {
    let factory = AliasedCorridorFactory { params: CorridorParams::default() };
    let (mut without, no_key) = play(&factory, 2, &["right", "right", "right", "left", "right"]);
    let (mut with, has_key) = play(&factory, 2, &["right", "right", "pickup", "pickup", "right"]);
    assert!(!no_key && has_key);
    let t = without.len();
    assert_eq!(without.steps[t - 1].state, with.steps[t - 1].state);
    assert_eq!(context_of(&without, t, 0).unwrap(), context_of(&with, t, 0).unwrap());
    assert_ne!(context_of(&without, t, 2).unwrap(), context_of(&with, t, 2).unwrap());

    with.index = 2;
    without.index = 1;
    let batch = RolloutBatch::new(with.task_id.clone(), vec![without, with], EstimatorConfig::default());
    let index = build_hierarchy(&batch, 2).unwrap();
    let (a, b) = (index.flat(0, t), index.flat(1, t));
    assert_eq!(index.group_at(0, a), index.group_at(0, b));
    assert_ne!(index.group_at(2, a), index.group_at(2, b));
}

#[test]
fn rollout_groups_are_reproducible() {
    let factory = AliasedCorridorFactory { params: CorridorParams::default() };
    let policy = ContextPolicy::new(factory.action_set());
    let config = TrainConfig::default();
    let task = factory.eval_tasks()[1];
    let a = rollout_group(&factory, &task, &policy, &config, "x").unwrap();
    let b = rollout_group(&factory, &task, &policy, &config, "x").unwrap();
    let c = rollout_group(&factory, &task, &policy, &config, "y").unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.trajectories.len(), config.group_size);
    assert!(a.trajectories.iter().all(|t| t.len() <= factory.max_steps()));
}
