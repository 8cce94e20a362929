use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hgpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hgpo")).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const EXAMPLE_TRACE: &str = concat!(
    r#"{"task_id":"t","group_id":"g1","trajectory_id":"a","steps":[{"state":"A","action":"x","reward":0,"old_logprob":0},{"state":"B","action":"x","reward":0,"old_logprob":0},{"state":"C","action":"x","reward":9,"old_logprob":0}]}"#,
    "\n",
    r#"{"task_id":"t","group_id":"g1","trajectory_id":"b","steps":[{"state":"A","action":"x","reward":0,"old_logprob":0},{"state":"D","action":"x","reward":0,"old_logprob":0},{"state":"C","action":"x","reward":0,"old_logprob":0}]}"#,
    "\n",
);

fn train_small(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec!["train", "--env", "aliased-corridor", "--epochs", "5", "--tasks", "4", "--seed", "42", "--out", out];
    args.extend_from_slice(extra);
    hgpo(&args)
}

#[test]
fn train_writes_one_row_per_epoch_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = train_small(out, &["--estimator", "hgpo", "--K", "2", "--alpha", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 6);
    assert!(metrics.starts_with("epoch,mean_reward,success_rate,"));
    for f in ["metrics.csv", "trace.jsonl", "policy.json", "config.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(fs::read(a.join("trace.jsonl")).unwrap(), fs::read(b.join("trace.jsonl")).unwrap());
}

#[test]
fn oracle_estimator_and_config_file_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"train": {"k": 1, "alpha": 2.0}}"#).unwrap();
    let out = dir.path().join("run");
    let o = train_small(&out, &["--estimator", "oracle", "--config", cfg.to_str().unwrap(), "--alpha", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echoed: serde_like::Value = serde_like::parse(&fs::read_to_string(out.join("config.json")).unwrap());
    assert_eq!(echoed.get("estimator"), Some("\"oracle\""));
    assert_eq!(echoed.get("k"), Some("1"));
    assert_eq!(echoed.get("alpha"), Some("0.5"));
}

/// Tiny line-based lookup in pretty-printed JSON; avoids a JSON dependency here.
mod serde_like {
    pub struct Value(Vec<(String, String)>);

    pub fn parse(text: &str) -> Value {
        Value(
            text.lines()
                .filter_map(|l| {
                    let (k, v) = l.trim().split_once(": ")?;
                    Some((k.trim_matches('"').to_string(), v.trim_end_matches(',').to_string()))
                })
                .collect(),
        )
    }

    impl Value {
        pub fn get(&self, key: &str) -> Option<&str> {
            self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
        }
    }
}

#[test]
fn invalid_config_is_a_one_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_small(&dir.path().join("x"), &["--gamma", "1.5"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("gamma"));
}

#[test]
fn analyze_example_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    fs::write(&trace, EXAMPLE_TRACE).unwrap();
    let out = dir.path().join("an");
    let o = hgpo(&[
        "analyze", "--trace", trace.to_str().unwrap(), "--K", "1", "--alpha", "1", "--gamma", "1", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("annotations.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("g1,t,a,3,")).unwrap();
    let cols: Vec<&str> = row.split(',').collect();
    // grpo, gigpo, hgpo, oracle, oracle_degenerate
    assert_eq!(&cols[8..], ["1.0", "1.0", "1.0", "0.0", "true"]);
    assert!(out.join("bias_report.csv").exists());
}

#[test]
fn analyze_errors_name_line_and_group() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, format!("{EXAMPLE_TRACE}{{oops\n")).unwrap();
    let o = hgpo(&["analyze", "--trace", bad.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let single = dir.path().join("single.jsonl");
    fs::write(&single, EXAMPLE_TRACE.lines().next().unwrap()).unwrap();
    let o = hgpo(&["analyze", "--trace", single.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("'g1'"), "{}", stderr(&o));
}

#[test]
fn analyze_identical_batch_gives_zero_advantages() {
    let dir = tempfile::tempdir().unwrap();
    let line = EXAMPLE_TRACE.lines().next().unwrap();
    let trace = dir.path().join("same.jsonl");
    fs::write(&trace, format!("{line}\n{}\n", line.replace("\"a\"", "\"b\""))).unwrap();
    let out = dir.path().join("o");
    let o = hgpo(&["analyze", "--trace", trace.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for row in fs::read_to_string(out.join("annotations.csv")).unwrap().lines().skip(1) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(&cols[8..12], ["0.0"; 4]);
    }
}

#[test]
fn compare_grid_writes_summary_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid");
    let o = hgpo(&[
        "compare", "--estimators", "grpo,gigpo,hgpo", "--seeds", "1,2,3", "--epochs", "2", "--tasks", "2", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(summary.lines().skip(1).all(|l| l.split(',').nth(1) == Some("3")));
    assert_eq!(fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count(), 9);
    assert!(out.join("hgpo-seed2").join("metrics.csv").exists());
}

#[test]
fn prop1_check_flags() {
    let o = hgpo(&["prop1-check", "--K", "0", "--specs", "3", "--samples", "20000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).matches("PASS").count(), 3);

    let o = hgpo(&["prop1-check", "--bias", "0.5,0.2", "--variance", "2,1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("non-decreasing"), "{}", stderr(&o));

    let o = hgpo(&["prop1-check", "--samples", "100"]);
    assert!(!o.status.success());
}
