mod common;

use std::fs;
use std::io::BufReader;

use common::arb_batch;
use hgpo::cli_io::{analyze, group_records, read_trace, train, write_records, write_trace, AnalyzeConfig, Command, RunConfig};
use hgpo::estimators::Estimator;
use hgpo::optimizer::{GroupRollout, MetricsRow};
use hgpo::policy::ContextPolicy;
use hgpo::rollout::EstimatorConfig;
use proptest::prelude::*;

fn small_run(out: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig { out: out.to_path_buf(), ..RunConfig::default() };
    cfg.train.epochs = 4;
    cfg.train.tasks_per_epoch = 3;
    cfg.train.seed = 9;
    cfg
}

#[test]
fn train_outputs_and_trace_reanalysis_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let run = small_run(&dir.path().join("run"));
    let outcome = train(&run).unwrap();

    let metrics = fs::read_to_string(run.out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), MetricsRow::header(run.train.k).join(","));
    assert_eq!(metrics.lines().count(), run.train.epochs + 1);

    let echoed = RunConfig::from_file(&run.out.join("config.json")).unwrap();
    assert_eq!(echoed, run);

    let policy = ContextPolicy::load(fs::File::open(run.out.join("policy.json")).unwrap()).unwrap();
    assert_eq!(policy, outcome.policy);

    // Re-serialize the parsed trace and analyze both copies.
    let trace = run.out.join("trace.jsonl");
    let records = read_trace(BufReader::new(fs::File::open(&trace).unwrap())).unwrap();
    assert_eq!(records.len(), run.train.tasks_per_epoch * run.train.group_size);
    let copy = dir.path().join("copy.jsonl");
    write_records(fs::File::create(&copy).unwrap(), &records).unwrap();
    assert_eq!(fs::read(&trace).unwrap(), fs::read(&copy).unwrap());

    let estimator = EstimatorConfig { k: 2, ..EstimatorConfig::default() };
    let first = AnalyzeConfig { trace, out: dir.path().join("a1"), estimator };
    let second = AnalyzeConfig { trace: copy, out: dir.path().join("a2"), estimator };
    analyze(&first).unwrap();
    analyze(&second).unwrap();
    for name in ["annotations.csv", "bias_report.csv", "bias_report.json"] {
        assert_eq!(fs::read(first.out.join(name)).unwrap(), fs::read(second.out.join(name)).unwrap(), "{name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn trace_round_trip_preserves_batches(batch in arb_batch(2)) {
        let groups = vec![GroupRollout { group_id: "g".into(), batch: batch.clone() }];
        let mut buf = Vec::new();
        write_trace(&mut buf, &groups).unwrap();
        let records = read_trace(buf.as_slice()).unwrap();
        let back = group_records(&records, batch.config).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0].batch, &batch);
    }

    #[test]
    fn config_echo_parses_back_equal(
        k in 0usize..6,
        alpha in 0.0f64..4.0,
        gamma in 0.01f64..=1.0,
        lr in 1e-4f64..10.0,
        seed in any::<u64>(),
        traj in any::<bool>(),
        est in prop::sample::select(Estimator::ALL.to_vec()),
        seeds in prop::collection::vec(any::<u64>(), 0..4),
    ) {
        let mut cfg = RunConfig { command: Command::Compare, seeds, estimators: vec![est], ..RunConfig::default() };
        cfg.train.k = k;
        cfg.train.alpha = alpha;
        cfg.train.gamma = gamma;
        cfg.train.learning_rate = lr;
        cfg.train.seed = seed;
        cfg.train.include_trajectory_level = traj;
        cfg.train.estimator = est;
        let text = cfg.to_canonical_json().unwrap();
        prop_assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
