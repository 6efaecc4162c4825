//! FDP, the plug-in FDR estimate, Monte Carlo FDR and convergence diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{GeneratorSpec, DEFAULT_GRID_POINTS, DEFAULT_MIN_F};
use crate::model::{check_threshold, CountIndex, RejectionSet, TestingProblem};
use crate::procedures::{ProcedureSpec, StepUp};
use crate::rng::derive_seed;
use crate::scalar::Scalar;

/// `#(R ∩ H0) / (#R ∨ 1)`.
pub fn fdp<T: Scalar>(rejections: &RejectionSet<T>, null_mask: &[bool]) -> f64 {
    let false_rejections = rejections.false_rejections(null_mask);
    false_rejections as f64 / rejections.len().max(1) as f64
}

/// `m·t / (R(t) ∨ 1)`, the conservative estimate of the fixed-cutoff FDR.
pub fn fdr_hat<T: Scalar>(problem: &TestingProblem<T>, t: &T) -> Result<T> {
    check_threshold(t)?;
    let r = problem.pvalues().iter().filter(|p| *p <= t).count();
    Ok(T::from_count(problem.m()) * t.clone() / T::from_count(r.max(1)))
}

/// A rule applied in each Monte Carlo replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    StepUp(ProcedureSpec<f64>),
    /// Reject every `p_i <= t`.
    Fixed { t: f64 },
}

impl Rule {
    pub fn label(&self) -> String {
        match self {
            Rule::StepUp(spec) => spec.label(),
            Rule::Fixed { t } => format!("fixed(t={t})"),
        }
    }

    pub fn q(&self) -> Option<f64> {
        match self {
            Rule::StepUp(spec) => Some(spec.q),
            Rule::Fixed { .. } => None,
        }
    }
}

impl From<ProcedureSpec<f64>> for Rule {
    fn from(spec: ProcedureSpec<f64>) -> Self {
        Rule::StepUp(spec)
    }
}

enum PreparedRule {
    StepUp(StepUp<f64>),
    Fixed(f64),
}

impl PreparedRule {
    fn new(rule: &Rule, m: usize) -> Result<Self> {
        Ok(match rule {
            Rule::StepUp(spec) => PreparedRule::StepUp(StepUp::new(spec.clone(), m)?),
            Rule::Fixed { t } => {
                check_threshold(t)?;
                PreparedRule::Fixed(*t)
            }
        })
    }

    fn outcome(&self, problem: &TestingProblem<f64>) -> Result<Outcome> {
        let (rejections, fdr_hat) = match self {
            PreparedRule::StepUp(up) => (up.apply(problem)?, None),
            PreparedRule::Fixed(t) => {
                let set = crate::procedures::fixed_threshold(problem, *t)?;
                let est = problem.m() as f64 * t / set.len().max(1) as f64;
                (set, Some(est))
            }
        };
        Ok(Outcome {
            fdp: fdp(&rejections, problem.null_mask()),
            rejections: rejections.len(),
            false_rejections: rejections.false_rejections(problem.null_mask()),
            fdr_hat,
        })
    }
}

struct Outcome {
    fdp: f64,
    rejections: usize,
    false_rejections: usize,
    fdr_hat: Option<f64>,
}

/// Mean, sample variance and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// `None` when `n < 2`.
    pub variance: Option<f64>,
    pub std_error: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = compensated_sum(values.iter().copied()) / n.max(1) as f64;
        let variance = (n >= 2).then(|| {
            compensated_sum(values.iter().map(|x| (x - mean) * (x - mean))) / (n - 1) as f64
        });
        let std_error = variance.map(|v| (v / n as f64).sqrt());
        Self {
            n,
            mean,
            variance,
            std_error,
        }
    }

    /// Standard error, treating an undefined one as 0.
    pub fn se(&self) -> f64 {
        self.std_error.unwrap_or(0.0)
    }
}

/// Neumaier summation, in iteration order.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            carry += (sum - t) + x;
        } else {
            carry += (x - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Nearest-rank quantile of `values` at level `level ∈ [0, 1]`.
pub fn quantile(values: &[f64], level: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((level * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Monte Carlo estimate of the FDR of one rule on one generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub generator: GeneratorSpec,
    pub rule: Rule,
    pub m: usize,
    pub n_reps: usize,
    pub seed: u64,
    /// Mean FDP, the FDR estimate.
    pub mean_fdp: f64,
    pub variance: Option<f64>,
    pub std_error: Option<f64>,
    /// 95% quantile of the FDP across replications.
    pub fdp_q95: f64,
    pub mean_rejections: f64,
    pub mean_false_rejections: f64,
    /// Fixed-cutoff rules only: mean of `fdr_hat(t)`.
    pub mean_fdr_hat: Option<f64>,
    /// Fixed-cutoff rules only: standard error of the paired difference
    /// `fdr_hat(t) - FDP`.
    pub fdr_hat_gap_se: Option<f64>,
}

impl SimulationReport {
    pub fn se(&self) -> f64 {
        self.std_error.unwrap_or(0.0)
    }

    pub const CSV_HEADER: [&'static str; 14] = [
        "generator",
        "procedure",
        "m",
        "q",
        "n_reps",
        "seed",
        "mean_fdp",
        "variance",
        "std_error",
        "fdp_q95",
        "mean_rejections",
        "mean_false_rejections",
        "mean_fdr_hat",
        "fdr_hat_gap_se",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        vec![
            self.generator.label(),
            self.rule.label(),
            self.m.to_string(),
            opt(self.rule.q()),
            self.n_reps.to_string(),
            self.seed.to_string(),
            self.mean_fdp.to_string(),
            opt(self.variance),
            opt(self.std_error),
            self.fdp_q95.to_string(),
            self.mean_rejections.to_string(),
            self.mean_false_rejections.to_string(),
            opt(self.mean_fdr_hat),
            opt(self.fdr_hat_gap_se),
        ]
    }
}

/// Monte Carlo FDR of `rule` over `n_reps` replications of `generator`.
pub fn mc_fdr(generator: &GeneratorSpec, rule: &Rule, n_reps: usize, seed: u64) -> Result<SimulationReport> {
    Ok(mc_fdr_many(generator, std::slice::from_ref(rule), n_reps, seed)?.remove(0))
}

/// Several rules evaluated on the same replications.
///
/// Replications run on the ambient rayon pool; results are collected in
/// replication order and reduced sequentially, so the report does not depend
/// on the number of workers.
pub fn mc_fdr_many(
    generator: &GeneratorSpec,
    rules: &[Rule],
    n_reps: usize,
    seed: u64,
) -> Result<Vec<SimulationReport>> {
    if n_reps == 0 {
        return Err(Error::InvalidParameter("n_reps must be at least 1".into()));
    }
    let sampler = generator.prepare()?;
    let m = sampler.m();
    let prepared = rules
        .iter()
        .map(|r| PreparedRule::new(r, m))
        .collect::<Result<Vec<_>>>()?;
    let outcomes: Vec<Vec<Outcome>> = (0..n_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let problem = sampler.sample(seed, rep);
            prepared.iter().map(|r| r.outcome(&problem)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(rules
        .iter()
        .enumerate()
        .map(|(k, rule)| {
            let column = || outcomes.iter().map(move |o| &o[k]);
            let fdps: Vec<f64> = column().map(|o| o.fdp).collect();
            let summary = Summary::of(&fdps);
            let mean_of = |f: &dyn Fn(&Outcome) -> f64| {
                compensated_sum(column().map(f)) / n_reps as f64
            };
            let (mean_fdr_hat, fdr_hat_gap_se) = match rule {
                Rule::Fixed { .. } => {
                    let hats: Vec<f64> = column().map(|o| o.fdr_hat.unwrap_or(0.0)).collect();
                    let gaps: Vec<f64> = hats.iter().zip(&fdps).map(|(h, f)| h - f).collect();
                    (Some(Summary::of(&hats).mean), Summary::of(&gaps).std_error)
                }
                Rule::StepUp(_) => (None, None),
            };
            SimulationReport {
                generator: generator.clone(),
                rule: rule.clone(),
                m,
                n_reps,
                seed,
                mean_fdp: summary.mean,
                variance: summary.variance,
                std_error: summary.std_error,
                fdp_q95: quantile(&fdps, 0.95),
                mean_rejections: mean_of(&|o| o.rejections as f64),
                mean_false_rejections: mean_of(&|o| o.false_rejections as f64),
                mean_fdr_hat,
                fdr_hat_gap_se,
            }
        })
        .collect())
}

/// Uniform-deviation diagnostics at one problem size, averaged over
/// replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub m: usize,
    pub n_reps: usize,
    pub t_low: f64,
    pub grid_points: usize,
    /// `sup_t (V(t)/m - t)₊`.
    pub mean_sup_level_excess: f64,
    /// `sup_t |V(t)/m - G(t)|`.
    pub mean_sup_v_dev: f64,
    /// `sup_t |R(t)/m - F(t)|`.
    pub mean_sup_r_dev: f64,
    /// `sup_t |FDP(t) - G(t)/F(t)|`.
    pub mean_sup_fdp_dev: f64,
    /// `min_t (fdr_hat(t) - FDP(t))`.
    pub mean_min_fdr_hat_gap: f64,
    /// 1% quantile over replications of `min_t (fdr_hat(t) - FDP(t))`.
    pub q01_min_fdr_hat_gap: f64,
}

impl ConvergenceRow {
    pub const CSV_HEADER: [&'static str; 10] = [
        "m",
        "n_reps",
        "t_low",
        "grid_points",
        "mean_sup_level_excess",
        "mean_sup_v_dev",
        "mean_sup_r_dev",
        "mean_sup_fdp_dev",
        "mean_min_fdr_hat_gap",
        "q01_min_fdr_hat_gap",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.m.to_string(),
            self.n_reps.to_string(),
            self.t_low.to_string(),
            self.grid_points.to_string(),
            self.mean_sup_level_excess.to_string(),
            self.mean_sup_v_dev.to_string(),
            self.mean_sup_r_dev.to_string(),
            self.mean_sup_fdp_dev.to_string(),
            self.mean_min_fdr_hat_gap.to_string(),
            self.q01_min_fdr_hat_gap.to_string(),
        ]
    }
}

/// For each `m` in `m_list`, rescales `generator` to size `m` and measures
/// how far `V(t)/m`, `R(t)/m` and the fixed-cutoff FDP are from their
/// analytic limits over `t_grid`.
///
/// Without an explicit grid, [`DEFAULT_GRID_POINTS`] cutoffs on `[t̲, 1]`
/// are used with `F(t̲) >= 0.05`. A grid whose smallest cutoff has
/// `F(t̲) = 0` is refused.
pub fn convergence_profile(
    generator: &GeneratorSpec,
    t_grid: Option<&[f64]>,
    m_list: &[usize],
    n_reps: usize,
    seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    if n_reps == 0 {
        return Err(Error::InvalidParameter("n_reps must be at least 1".into()));
    }
    m_list
        .iter()
        .map(|&m| {
            let spec = generator.with_m(m);
            let sampler = spec.prepare()?;
            let limits = spec.limit_functions()?;
            let grid = match t_grid {
                Some(g) => g.to_vec(),
                None => limits.t_grid(DEFAULT_GRID_POINTS, DEFAULT_MIN_F)?,
            };
            let t_low = grid.iter().copied().fold(f64::INFINITY, f64::min);
            if grid.is_empty() || !(t_low > 0.0) || grid.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
                return Err(Error::Precondition("cutoff grid must be a nonempty subset of (0, 1]".into()));
            }
            if !(limits.f(t_low) > 0.0) {
                return Err(Error::Precondition(format!(
                    "F(t_low) = 0 at t_low = {t_low}; the smallest cutoff must reject a positive fraction"
                )));
            }
            let targets: Vec<(f64, f64, f64)> = grid.iter().map(|&t| (t, limits.g(t), limits.f(t))).collect();
            let m_seed = derive_seed(seed, m as u64);
            let mf = m as f64;
            let per_rep: Vec<[f64; 5]> = (0..n_reps as u64)
                .into_par_iter()
                .map(|rep| {
                    let problem = sampler.sample(m_seed, rep);
                    let index = CountIndex::new(&problem);
                    let mut out = [0.0, 0.0, 0.0, 0.0, f64::INFINITY];
                    for &(t, g, f) in &targets {
                        let c = index.counts_at(&t);
                        let vm = c.v as f64 / mf;
                        let rm = c.r as f64 / mf;
                        let fdp_t = c.v as f64 / c.r.max(1) as f64;
                        let hat = mf * t / c.r.max(1) as f64;
                        out[0] = out[0].max(vm - t);
                        out[1] = out[1].max((vm - g).abs());
                        out[2] = out[2].max((rm - f).abs());
                        out[3] = out[3].max((fdp_t - g / f).abs());
                        out[4] = out[4].min(hat - fdp_t);
                    }
                    out
                })
                .collect();
            let mean = |k: usize| compensated_sum(per_rep.iter().map(|r| r[k])) / n_reps as f64;
            let gaps: Vec<f64> = per_rep.iter().map(|r| r[4]).collect();
            Ok(ConvergenceRow {
                m,
                n_reps,
                t_low,
                grid_points: grid.len(),
                mean_sup_level_excess: mean(0),
                mean_sup_v_dev: mean(1),
                mean_sup_r_dev: mean(2),
                mean_sup_fdp_dev: mean(3),
                mean_min_fdr_hat_gap: mean(4),
                q01_min_fdr_hat_gap: quantile(&gaps, 0.01),
            })
        })
        .collect()
}
