//! `hgpo`: train, analyze traces, compare estimators, and check the
//! bias-variance bounds of the weighted estimator.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hgpo::cli_io::{self, AnalyzeConfig, Command, Prop1Args, RunConfig};
use hgpo::estimators::Estimator;
use hgpo::rollout::EstimatorConfig;

#[derive(Parser)]
#[command(name = "hgpo", version, about = "Hierarchy-of-groups policy optimization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a tabular policy and write metrics, config, checkpoint and trace.
    Train(TrainArgs),
    /// Annotate a rollout trace with every estimator's advantages.
    Analyze(AnalyzeArgs),
    /// Train a grid of estimators x seeds and summarize final success.
    Compare(CompareArgs),
    /// Monte-Carlo check of the weighted estimator's bias and variance.
    #[command(name = "prop1-check")]
    Prop1Check(Prop1CheckArgs),
}

/// Flags shared by `train` and `compare`. Each one overrides the config file.
#[derive(Args)]
struct RunFlags {
    /// JSON config file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long = "corridor-length")]
    corridor_length: Option<usize>,
    #[arg(long = "max-steps")]
    max_steps: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "clip-eps")]
    clip_eps: Option<f64>,
    #[arg(long = "kl-beta")]
    kl_beta: Option<f64>,
    #[arg(long = "group-size")]
    group_size: Option<usize>,
    /// Tasks sampled per epoch.
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "update-epochs")]
    update_epochs: Option<usize>,
    #[arg(long = "rollout-temp")]
    rollout_temp: Option<f64>,
    #[arg(long = "eval-temp")]
    eval_temp: Option<f64>,
    #[arg(long = "sigma-eps")]
    sigma_eps: Option<f64>,
    /// Add the episode-level term to the hgpo aggregate.
    #[arg(long = "include-traj-level")]
    include_traj_level: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunFlags {
    fn resolve(&self, command: Command) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path).with_context(|| format!("reading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        cfg.command = command;
        let t = &mut cfg.train;
        macro_rules! set {
            ($field:expr, $flag:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(cfg.env, self.env);
        set!(cfg.env_params.length, self.corridor_length);
        set!(cfg.env_params.max_steps, self.max_steps);
        set!(t.k, self.k);
        set!(t.alpha, self.alpha);
        set!(t.gamma, self.gamma);
        set!(t.clip_epsilon, self.clip_eps);
        set!(t.kl_beta, self.kl_beta);
        set!(t.group_size, self.group_size);
        set!(t.tasks_per_epoch, self.tasks);
        set!(t.epochs, self.epochs);
        set!(t.learning_rate, self.lr);
        set!(t.update_epochs, self.update_epochs);
        set!(t.rollout_temperature, self.rollout_temp);
        set!(t.eval_temperature, self.eval_temp);
        set!(t.sigma_epsilon, self.sigma_eps);
        if self.include_traj_level {
            t.include_trajectory_level = true;
        }
        set!(cfg.out, self.out);
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunFlags,
    /// grpo | gigpo | hgpo | oracle
    #[arg(long)]
    estimator: Option<Estimator>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Comma-separated estimators, e.g. grpo,gigpo,hgpo
    #[arg(long, value_delimiter = ',')]
    estimators: Vec<Estimator>,
    /// Comma-separated seeds, e.g. 1,2,3
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long = "K", default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.95)]
    gamma: f64,
    #[arg(long = "sigma-eps", default_value_t = 1e-8)]
    sigma_eps: f64,
    #[arg(long = "include-traj-level")]
    include_traj_level: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Prop1CheckArgs {
    /// Deepest level (default 4; inferred from --bias when given).
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 50)]
    specs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-level biases b_0..b_K of a single spec to check.
    #[arg(long = "bias", value_delimiter = ',', allow_negative_numbers = true)]
    bias: Option<Vec<f64>>,
    /// Per-level variances v_0..v_K of a single spec to check.
    #[arg(long = "variance", value_delimiter = ',')]
    variance: Option<Vec<f64>>,
}

fn run_train(args: TrainArgs) -> Result<ExitCode> {
    let mut cfg = args.run.resolve(Command::Train)?;
    if let Some(e) = args.estimator {
        cfg.train.estimator = e;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    let start = Instant::now();
    let outcome = cli_io::train(&cfg)?;
    let last = outcome.metrics.last();
    println!(
        "trained {} epochs with {} in {:.1?}; final success {}; wrote {}",
        outcome.metrics.len(),
        cfg.train.estimator,
        start.elapsed(),
        last.map_or("n/a".to_string(), |m| m.success_rate.to_string()),
        cfg.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_analyze(args: AnalyzeArgs) -> Result<ExitCode> {
    let cfg = AnalyzeConfig {
        trace: args.trace,
        out: args.out,
        estimator: EstimatorConfig {
            k: args.k,
            alpha: args.alpha,
            gamma: args.gamma,
            sigma_epsilon: args.sigma_eps,
            include_trajectory_level: args.include_traj_level,
        },
    };
    let summary = cli_io::analyze(&cfg).with_context(|| format!("analyzing {}", cfg.trace.display()))?;
    let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "{} groups, {} steps, oracle steps {}; mean |A - A_oracle| traj {} step {} hgpo {}; wrote {}",
        summary.groups,
        summary.steps,
        summary.report.oracle_steps,
        fmt(summary.report.grpo.mean_abs()),
        fmt(summary.report.gigpo.mean_abs()),
        fmt(summary.report.hgpo.mean_abs()),
        cfg.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_compare(args: CompareArgs) -> Result<ExitCode> {
    let mut cfg = args.run.resolve(Command::Compare)?;
    if !args.estimators.is_empty() {
        cfg.estimators = args.estimators;
    }
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds;
    }
    let summary = cli_io::compare(&cfg)?;
    for cell in &summary.cells {
        match &cell.error {
            Some(e) => println!("{} seed {}: FAILED {e}", cell.estimator, cell.seed),
            None => println!(
                "{} seed {}: final success {}",
                cell.estimator,
                cell.seed,
                cell.final_success.map_or("n/a".to_string(), |s| s.to_string())
            ),
        }
    }
    println!("wrote {}", cfg.out.join("summary.csv").display());
    if summary.all_failed() {
        eprintln!("error: every cell failed");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn run_prop1(args: Prop1CheckArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let results = cli_io::prop1_check(&Prop1Args {
        k: args.k,
        alpha: args.alpha,
        samples: args.samples,
        specs: args.specs,
        seed: args.seed,
        biases: args.bias,
        variances: args.variance,
    })?;
    let mut failures = 0;
    for (i, (spec, check)) in results.iter().enumerate() {
        let verdict = if check.passed() { "PASS" } else { "FAIL" };
        if !check.passed() {
            failures += 1;
        }
        println!(
            "spec {i:>3} K={} {verdict}: bias {:.5} vs {:.5} (se {:.1e}), variance {:.5} vs {:.5} (se {:.1e}), bounds {}/{}",
            spec.max_level(),
            check.empirical_bias,
            check.analytic_bias,
            check.bias_se,
            check.empirical_variance,
            check.analytic_variance,
            check.variance_se,
            check.bias_bounds,
            check.variance_bounds,
        );
    }
    println!(
        "{}/{} specs passed in {:.2?}",
        results.len() - failures,
        results.len(),
        start.elapsed()
    );
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Train(a) => run_train(a),
        Cmd::Analyze(a) => run_analyze(a),
        Cmd::Compare(a) => run_compare(a),
        Cmd::Prop1Check(a) => run_prop1(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
