//! Estimator diagnostics.
//!
//! [`bias_vs_oracle`] measures how far the trajectory-level, state-level and
//! hierarchical estimates land from the deepest-level (Oracle) estimate on
//! the steps that have an Oracle group. [`prop1_monte_carlo`] checks the
//! bias/variance algebra of weighted aggregation on synthetic, independent
//! per-level estimates.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{HgpoError, Result};
use crate::estimators::{adaptive_weights, gigpo_advantages, grpo_advantages, hgpo_advantages, oracle_advantages};
use crate::grouping::{group_stats, HierarchicalIndex};
use crate::rng::substream;
use crate::rollout::RolloutBatch;

/// Running sums of `A_est - A_oracle` over Oracle steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Deviation {
    pub abs_sum: f64,
    pub signed_sum: f64,
    pub count: usize,
}

impl Deviation {
    fn push(&mut self, diff: f64) {
        self.abs_sum += diff.abs();
        self.signed_sum += diff;
        self.count += 1;
    }

    fn merge(&mut self, other: &Deviation) {
        self.abs_sum += other.abs_sum;
        self.signed_sum += other.signed_sum;
        self.count += other.count;
    }

    /// `None` when there were no Oracle steps.
    pub fn mean_abs(&self) -> Option<f64> {
        (self.count > 0).then(|| self.abs_sum / self.count as f64)
    }

    pub fn mean_signed(&self) -> Option<f64> {
        (self.count > 0).then(|| self.signed_sum / self.count as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasReport {
    pub total_steps: usize,
    /// Steps whose deepest-level group has at least two members.
    pub oracle_steps: usize,
    pub grpo: Deviation,
    pub gigpo: Deviation,
    pub hgpo: Deviation,
    pub groups_per_level: Vec<usize>,
    pub utilized_per_level: Vec<usize>,
}

impl BiasReport {
    pub fn empty(num_levels: usize) -> Self {
        BiasReport {
            total_steps: 0,
            oracle_steps: 0,
            grpo: Deviation::default(),
            gigpo: Deviation::default(),
            hgpo: Deviation::default(),
            groups_per_level: vec![0; num_levels],
            utilized_per_level: vec![0; num_levels],
        }
    }

    /// False when there were no Oracle steps and the means are undefined.
    pub fn is_defined(&self) -> bool {
        self.oracle_steps > 0
    }

    pub fn oracle_step_ratio(&self) -> f64 {
        ratio(self.oracle_steps, self.total_steps)
    }

    pub fn avg_group_size(&self) -> Vec<f64> {
        self.groups_per_level.iter().map(|&g| ratio(self.total_steps, g)).collect()
    }

    pub fn utilization(&self) -> Vec<f64> {
        self.utilized_per_level.iter().map(|&u| ratio(u, self.total_steps)).collect()
    }

    /// Pools another batch's report into this one.
    pub fn merge(&mut self, other: &BiasReport) {
        assert_eq!(self.groups_per_level.len(), other.groups_per_level.len());
        self.total_steps += other.total_steps;
        self.oracle_steps += other.oracle_steps;
        self.grpo.merge(&other.grpo);
        self.gigpo.merge(&other.gigpo);
        self.hgpo.merge(&other.hgpo);
        for (a, b) in self.groups_per_level.iter_mut().zip(&other.groups_per_level) {
            *a += b;
        }
        for (a, b) in self.utilized_per_level.iter_mut().zip(&other.utilized_per_level) {
            *a += b;
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn bias_vs_oracle(batch: &RolloutBatch, index: &HierarchicalIndex) -> Result<BiasReport> {
    let oracle = oracle_advantages(batch, index)?.finals();
    let grpo = grpo_advantages(batch)?.finals();
    let gigpo = gigpo_advantages(batch)?.finals();
    let hgpo = hgpo_advantages(batch, index)?.finals();
    let stats = group_stats(index);
    let deepest = index.max_level();

    let mut report = BiasReport::empty(index.num_levels());
    report.total_steps = index.num_steps();
    report.groups_per_level = stats.levels.iter().map(|l| l.num_groups).collect();
    report.utilized_per_level = stats.levels.iter().map(|l| l.utilized_steps).collect();
    for flat in 0..index.num_steps() {
        if index.group_size_at(deepest, flat) < 2 {
            continue;
        }
        report.oracle_steps += 1;
        report.grpo.push(grpo[flat] - oracle[flat]);
        report.gigpo.push(gigpo[flat] - oracle[flat]);
        report.hgpo.push(hgpo[flat] - oracle[flat]);
    }
    Ok(report)
}

/// Synthetic per-level estimator biases and variances for the Monte-Carlo check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticLevelSpec {
    /// Non-increasing in level, all >= 0.
    pub biases: Vec<f64>,
    /// Non-decreasing in level, all > 0.
    pub variances: Vec<f64>,
    pub weights: Vec<f64>,
    pub samples: usize,
    /// True advantage the biases are measured against.
    pub target: f64,
}

pub const MIN_MONTE_CARLO_SAMPLES: usize = 10_000;

impl SyntheticLevelSpec {
    pub fn max_level(&self) -> usize {
        self.biases.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.biases.len();
        if n == 0 || self.variances.len() != n || self.weights.len() != n {
            return Err(HgpoError::invalid("biases, variances and weights must have equal, non-zero length"));
        }
        if self.samples < MIN_MONTE_CARLO_SAMPLES {
            return Err(HgpoError::invalid(format!(
                "need at least {MIN_MONTE_CARLO_SAMPLES} samples, got {}",
                self.samples
            )));
        }
        if self.biases.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(HgpoError::invalid("biases must be finite and >= 0"));
        }
        if self.biases.windows(2).any(|w| w[0] < w[1]) {
            return Err(HgpoError::invalid(format!("biases must be non-increasing in level: {:?}", self.biases)));
        }
        if self.variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(HgpoError::invalid("variances must be finite and > 0"));
        }
        if self.variances.windows(2).any(|w| w[0] > w[1]) {
            return Err(HgpoError::invalid(format!(
                "variances must be non-decreasing in level: {:?}",
                self.variances
            )));
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(HgpoError::invalid("weights must be non-negative and sum to 1"));
        }
        Ok(())
    }

    pub fn analytic_bias(&self) -> f64 {
        self.weights.iter().zip(&self.biases).map(|(w, b)| w * b).sum()
    }

    pub fn analytic_variance(&self) -> f64 {
        self.weights.iter().zip(&self.variances).map(|(w, v)| w * w * v).sum()
    }

    /// Spec with sorted random biases in [0, 1) and variances in [0.1, 2.1),
    /// weighted by `(k+1)^alpha`.
    pub fn random_ordered<R: Rng + ?Sized>(rng: &mut R, max_level: usize, alpha: f64, samples: usize) -> Result<Self> {
        let mut biases: Vec<f64> = (0..=max_level).map(|_| rng.random::<f64>()).collect();
        biases.sort_by(|a, b| b.total_cmp(a));
        let mut variances: Vec<f64> = (0..=max_level).map(|_| 0.1 + 2.0 * rng.random::<f64>()).collect();
        variances.sort_by(f64::total_cmp);
        Ok(SyntheticLevelSpec {
            biases,
            variances,
            weights: adaptive_weights(max_level, alpha)?.as_slice().to_vec(),
            samples,
            target: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Check {
    pub empirical_bias: f64,
    pub bias_se: f64,
    pub empirical_variance: f64,
    pub variance_se: f64,
    pub analytic_bias: f64,
    pub analytic_variance: f64,
    /// |bias - sum w_k b_k| <= 3 SE.
    pub bias_matches: bool,
    /// |var - sum w_k^2 v_k| <= 3 SE.
    pub variance_matches: bool,
    /// b_K <= bias <= b_0, each side within 3 SE.
    pub bias_bounds: bool,
    /// v_0 / (K+1) <= var <= v_K, each side within 3 SE.
    pub variance_bounds: bool,
}

impl Prop1Check {
    pub fn passed(&self) -> bool {
        self.bias_matches && self.variance_matches && self.bias_bounds && self.variance_bounds
    }
}

/// Aggregates independent Gaussian level estimates `A_k ~ N(target + b_k, v_k)`
/// with the given weights and compares the empirical bias and variance with
/// their closed forms and bounds.
pub fn prop1_monte_carlo(spec: &SyntheticLevelSpec, seed: u64) -> Result<Prop1Check> {
    spec.validate()?;
    let mut rng = substream(seed, "prop1");
    let sds: Vec<f64> = spec.variances.iter().map(|v| v.sqrt()).collect();
    let draws: Vec<f64> = (0..spec.samples)
        .map(|_| {
            spec.weights
                .iter()
                .zip(&spec.biases)
                .zip(&sds)
                .map(|((w, b), sd)| {
                    let z: f64 = rng.sample(StandardNormal);
                    w * (spec.target + b + sd * z)
                })
                .sum()
        })
        .collect();

    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let m2 = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    let m4 = draws.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let variance = m2 / (n - 1.0);
    let bias = mean - spec.target;
    let bias_se = (variance / n).sqrt();
    let variance_se = ((m4 - variance * variance).max(0.0) / n).sqrt();

    let k = spec.max_level();
    let tol_b = 3.0 * bias_se;
    let tol_v = 3.0 * variance_se;
    let analytic_bias = spec.analytic_bias();
    let analytic_variance = spec.analytic_variance();
    Ok(Prop1Check {
        empirical_bias: bias,
        bias_se,
        empirical_variance: variance,
        variance_se,
        analytic_bias,
        analytic_variance,
        bias_matches: (bias - analytic_bias).abs() <= tol_b,
        variance_matches: (variance - analytic_variance).abs() <= tol_v,
        bias_bounds: spec.biases[k] - tol_b <= bias && bias <= spec.biases[0] + tol_b,
        variance_bounds: spec.variances[0] / (k + 1) as f64 - tol_v <= variance && variance <= spec.variances[k] + tol_v,
    })
}
