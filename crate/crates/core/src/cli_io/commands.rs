//! `train`, `analyze`, `compare` and `prop1-check`, as library calls.
//!
//! Every command echoes its resolved configuration to the output directory
//! before doing any work.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;

use rand::Rng;
use serde::Serialize;

use super::config::{write_canonical, Command, RunConfig};
use super::metrics::write_metrics;
use super::trace::{group_records, read_trace, write_trace};
use super::{format_float, format_opt};
use crate::diagnostics::{bias_vs_oracle, prop1_monte_carlo, BiasReport, Prop1Check, SyntheticLevelSpec};
use crate::envs::{EnvFactory, EnvRegistry};
use crate::error::{HgpoError, Result};
use crate::estimators::{adaptive_weights, gigpo_advantages, grpo_advantages, hgpo_advantages, oracle_advantages, Estimator};
use crate::grouping::build_hierarchy;
use crate::optimizer::{run_training, TrainOutcome};
use crate::rng::substream;
use crate::rollout::EstimatorConfig;

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Runs one training job and writes `config.json`, `metrics.csv`,
/// `policy.json` and `trace.jsonl` (the last epoch's rollouts) to `config.out`.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    fs::create_dir_all(&config.out)?;
    config.write_canonical(&config.out.join("config.json"))?;

    let outcome = match EnvRegistry::lookup(&config.env, config.env_params)? {
        EnvRegistry::AliasedCorridor(factory) => train_with(&factory, config)?,
    };

    write_metrics(create_file(&config.out.join("metrics.csv"))?, config.train.k, &outcome.metrics)?;
    let mut policy_file = create_file(&config.out.join("policy.json"))?;
    outcome.policy.save(&mut policy_file)?;
    policy_file.flush()?;
    write_trace(create_file(&config.out.join("trace.jsonl"))?, &outcome.final_rollouts)?;
    Ok(outcome)
}

fn train_with<F: EnvFactory>(factory: &F, config: &RunConfig) -> Result<TrainOutcome> {
    run_training(factory, &config.train)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeConfig {
    pub trace: PathBuf,
    pub out: PathBuf,
    pub estimator: EstimatorConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeSummary {
    pub groups: usize,
    pub steps: usize,
    pub report: BiasReport,
}

#[derive(Serialize)]
struct GroupBias<'a> {
    group_id: &'a str,
    task_id: &'a str,
    report: &'a BiasReport,
}

#[derive(Serialize)]
struct BiasFile<'a> {
    groups: Vec<GroupBias<'a>>,
    total: &'a BiasReport,
}

const ANNOTATION_HEADER: [&str; 13] = [
    "group_id",
    "task_id",
    "trajectory_id",
    "t",
    "state",
    "action",
    "reward",
    "return",
    "grpo",
    "gigpo",
    "hgpo",
    "oracle",
    "oracle_degenerate",
];

fn bias_header(k: usize) -> Vec<String> {
    let mut cols: Vec<String> = [
        "group_id",
        "task_id",
        "total_steps",
        "oracle_steps",
        "oracle_step_ratio",
        "bias_traj",
        "bias_step",
        "bias_hgpo",
        "signed_bias_traj",
        "signed_bias_step",
        "signed_bias_hgpo",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((0..=k).map(|l| format!("avg_group_size_{l}")));
    cols.extend((0..=k).map(|l| format!("utilization_{l}")));
    cols
}

fn bias_record(group_id: &str, task_id: &str, r: &BiasReport) -> Vec<String> {
    let mut record = vec![
        group_id.to_string(),
        task_id.to_string(),
        r.total_steps.to_string(),
        r.oracle_steps.to_string(),
        format_float(r.oracle_step_ratio()),
    ];
    for d in [&r.grpo, &r.gigpo, &r.hgpo] {
        record.push(format_opt(d.mean_abs()));
    }
    for d in [&r.grpo, &r.gigpo, &r.hgpo] {
        record.push(format_opt(d.mean_signed()));
    }
    record.extend(r.avg_group_size().into_iter().map(format_float));
    record.extend(r.utilization().into_iter().map(format_float));
    record
}

/// Offline analysis of a trace: per-step advantages under every estimator
/// (`annotations.csv`) and deviation from the Oracle estimate
/// (`bias_report.csv`, `bias_report.json`). Needs no environment or policy.
pub fn analyze(config: &AnalyzeConfig) -> Result<AnalyzeSummary> {
    config.estimator.validate()?;
    let records = read_trace(BufReader::new(File::open(&config.trace)?))?;
    let groups = group_records(&records, config.estimator)?;
    fs::create_dir_all(&config.out)?;
    write_canonical(config, &config.out.join("config.json"))?;

    let k = config.estimator.k;
    let mut annotations = csv::Writer::from_writer(create_file(&config.out.join("annotations.csv"))?);
    annotations.write_record(ANNOTATION_HEADER)?;
    let mut bias_csv = csv::Writer::from_writer(create_file(&config.out.join("bias_report.csv"))?);
    bias_csv.write_record(bias_header(k))?;

    let mut total = BiasReport::empty(k + 1);
    let mut reports = Vec::with_capacity(groups.len());
    for group in &groups {
        let batch = &group.batch;
        let index = build_hierarchy(batch, k)?;
        let returns = batch.discounted_returns()?;
        let grpo = grpo_advantages(batch)?;
        let gigpo = gigpo_advantages(batch)?;
        let hgpo = hgpo_advantages(batch, &index)?;
        let oracle = oracle_advantages(batch, &index)?;
        for (i, rec) in oracle.records.iter().enumerate() {
            let traj = &batch.trajectories[rec.step.trajectory];
            let step = &traj.steps[rec.step.t - 1];
            annotations.write_record([
                group.group_id.clone(),
                batch.task_id.clone(),
                group.trajectory_ids[rec.step.trajectory].clone(),
                rec.step.t.to_string(),
                step.state.observation().to_string(),
                step.action.clone(),
                format_float(step.raw_reward),
                format_float(returns[rec.step.trajectory][rec.step.t - 1]),
                format_float(grpo.records[i].final_advantage),
                format_float(gigpo.records[i].final_advantage),
                format_float(hgpo.records[i].final_advantage),
                format_float(rec.final_advantage),
                (!rec.contributing_mask[k]).to_string(),
            ])?;
        }
        let report = bias_vs_oracle(batch, &index)?;
        bias_csv.write_record(bias_record(&group.group_id, &batch.task_id, &report))?;
        total.merge(&report);
        reports.push(report);
    }
    bias_csv.write_record(bias_record("all", "", &total))?;
    annotations.flush()?;
    bias_csv.flush()?;

    let file = BiasFile {
        groups: groups
            .iter()
            .zip(&reports)
            .map(|(g, report)| GroupBias {
                group_id: &g.group_id,
                task_id: &g.batch.task_id,
                report,
            })
            .collect(),
        total: &total,
    };
    write_canonical(&file, &config.out.join("bias_report.json"))?;

    Ok(AnalyzeSummary {
        groups: groups.len(),
        steps: total.total_steps,
        report: total,
    })
}

/// Result of one (estimator, seed) cell of a comparison grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub estimator: Estimator,
    pub seed: u64,
    pub out: PathBuf,
    /// Evaluation success rate after the last epoch, `None` for zero epochs.
    pub final_success: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub estimator: Estimator,
    pub runs: usize,
    pub failed: usize,
    pub mean_success: Option<f64>,
    /// Sample standard deviation over seeds; 0 for a single seed.
    pub std_success: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSummary {
    pub cells: Vec<CellOutcome>,
    pub rows: Vec<SummaryRow>,
}

impl CompareSummary {
    pub fn all_failed(&self) -> bool {
        self.cells.iter().all(|c| c.error.is_some())
    }
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (Some(mean), Some(0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

/// Trains every (estimator, seed) cell into `out/<estimator>-seed<seed>/`
/// and writes `summary.csv` (one row per estimator) and `cells.csv`.
/// Cell failures are recorded, not propagated.
pub fn compare(config: &RunConfig) -> Result<CompareSummary> {
    config.validate()?;
    if config.command != Command::Compare {
        return Err(HgpoError::invalid("compare needs a config with command 'compare'"));
    }
    fs::create_dir_all(&config.out)?;
    config.write_canonical(&config.out.join("config.json"))?;

    let cells: Vec<RunConfig> = config
        .estimators
        .iter()
        .flat_map(|&estimator| {
            config.seeds.iter().map(move |&seed| {
                let mut cell = config.clone();
                cell.command = Command::Train;
                cell.estimators.clear();
                cell.seeds.clear();
                cell.train.estimator = estimator;
                cell.train.seed = seed;
                cell.out = config.out.join(format!("{estimator}-seed{seed}"));
                cell
            })
        })
        .collect();

    // Cells share nothing and write to disjoint directories.
    let workers = thread::available_parallelism().map_or(1, |n| n.get());
    let mut outcomes = Vec::with_capacity(cells.len());
    for chunk in cells.chunks(workers) {
        thread::scope(|scope| {
            let handles: Vec<_> = chunk.iter().map(|cell| scope.spawn(move || train(cell))).collect();
            for (cell, handle) in chunk.iter().zip(handles) {
                let result = handle.join().unwrap_or_else(|_| Err(HgpoError::invalid("training thread panicked")));
                let (final_success, error) = match result {
                    Ok(outcome) => (outcome.metrics.last().map(|m| m.success_rate), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                outcomes.push(CellOutcome {
                    estimator: cell.train.estimator,
                    seed: cell.train.seed,
                    out: cell.out.clone(),
                    final_success,
                    error,
                });
            }
        });
    }

    let rows: Vec<SummaryRow> = config
        .estimators
        .iter()
        .map(|&estimator| {
            let mine: Vec<&CellOutcome> = outcomes.iter().filter(|c| c.estimator == estimator).collect();
            let successes: Vec<f64> = mine.iter().filter_map(|c| c.final_success).collect();
            let (mean_success, std_success) = mean_std(&successes);
            SummaryRow {
                estimator,
                runs: mine.len(),
                failed: mine.iter().filter(|c| c.error.is_some()).count(),
                mean_success,
                std_success,
            }
        })
        .collect();

    let mut summary = csv::Writer::from_writer(create_file(&config.out.join("summary.csv"))?);
    summary.write_record(["estimator", "runs", "failed", "mean_success", "std_success"])?;
    for row in &rows {
        summary.write_record([
            row.estimator.to_string(),
            row.runs.to_string(),
            row.failed.to_string(),
            format_opt(row.mean_success),
            format_opt(row.std_success),
        ])?;
    }
    summary.flush()?;

    let mut cells_csv = csv::Writer::from_writer(create_file(&config.out.join("cells.csv"))?);
    cells_csv.write_record(["estimator", "seed", "final_success", "error"])?;
    for cell in &outcomes {
        cells_csv.write_record([
            cell.estimator.to_string(),
            cell.seed.to_string(),
            format_opt(cell.final_success),
            cell.error.clone().unwrap_or_default(),
        ])?;
    }
    cells_csv.flush()?;

    Ok(CompareSummary { cells: outcomes, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Args {
    /// Deepest level for random specs. Inferred from `biases` when those are given.
    pub k: Option<usize>,
    pub alpha: f64,
    pub samples: usize,
    pub specs: usize,
    pub seed: u64,
    /// A user-supplied spec instead of random ones.
    pub biases: Option<Vec<f64>>,
    pub variances: Option<Vec<f64>>,
}

impl Default for Prop1Args {
    fn default() -> Self {
        Prop1Args {
            k: None,
            alpha: 1.0,
            samples: 100_000,
            specs: 50,
            seed: 0,
            biases: None,
            variances: None,
        }
    }
}

pub const DEFAULT_PROP1_K: usize = 4;

/// Monte-Carlo checks of the weighted aggregate's bias and variance, either
/// over random ordered specs or over one user-supplied spec.
pub fn prop1_check(args: &Prop1Args) -> Result<Vec<(SyntheticLevelSpec, Prop1Check)>> {
    match (&args.biases, &args.variances) {
        (Some(biases), Some(variances)) => {
            if let Some(k) = args.k {
                if k + 1 != biases.len() {
                    return Err(HgpoError::invalid(format!(
                        "K={k} needs {} biases, got {}",
                        k + 1,
                        biases.len()
                    )));
                }
            }
            if biases.is_empty() {
                return Err(HgpoError::invalid("biases must not be empty"));
            }
            let spec = SyntheticLevelSpec {
                biases: biases.clone(),
                variances: variances.clone(),
                weights: adaptive_weights(biases.len() - 1, args.alpha)?.as_slice().to_vec(),
                samples: args.samples,
                target: 0.0,
            };
            let check = prop1_monte_carlo(&spec, args.seed)?;
            Ok(vec![(spec, check)])
        }
        (None, None) => {
            if args.specs == 0 {
                return Err(HgpoError::invalid("need at least one spec"));
            }
            let k = args.k.unwrap_or(DEFAULT_PROP1_K);
            let mut rng = substream(args.seed, "prop1/specs");
            (0..args.specs)
                .map(|_| {
                    let spec = SyntheticLevelSpec::random_ordered(&mut rng, k, args.alpha, args.samples)?;
                    let check = prop1_monte_carlo(&spec, rng.random())?;
                    Ok((spec, check))
                })
                .collect()
        }
        _ => Err(HgpoError::invalid("biases and variances must be given together")),
    }
}
