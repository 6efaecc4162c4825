//! Seeded p-value generators.
//!
//! Every generator here has independent-or-block-dependent coordinates whose
//! marginal laws are known in closed form, so the average null CDF
//! `(1/m) Σ_{i∈H0} P(p_i <= t)` and the limits `G`, `F` of `V(t)/m`,
//! `R(t)/m` can be evaluated exactly. True nulls occupy the first `m0`
//! indices.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TestingProblem;
use crate::rng::{derive_seed, replication_rng, StreamRng};

/// Slack allowed when checking `(1/m) Σ c_i <= 1` in floating point.
const SLOPE_SUM_TOLERANCE: f64 = 1e-12;

/// Law of a non-null p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AltLaw {
    /// `P(p <= t) = t^exponent`, i.e. Beta(exponent, 1); `exponent < 1`
    /// concentrates mass near 0.
    Power { exponent: f64 },
    Uniform,
}

impl Default for AltLaw {
    fn default() -> Self {
        AltLaw::Power { exponent: 0.2 }
    }
}

impl AltLaw {
    fn law(&self) -> CoordinateLaw {
        match *self {
            AltLaw::Power { exponent } => CoordinateLaw::Power(exponent),
            AltLaw::Uniform => CoordinateLaw::Slope(1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            AltLaw::Power { exponent } if !(exponent.is_finite() && exponent > 0.0) => Err(
                Error::InvalidParameter(format!("power exponent must be positive, got {exponent}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Per-null CDF slopes `c_i` and the alternative law.
///
/// Null `i` has `P(p_i <= t) = min(c_i t, 1)` for `t < 1`; for `c_i < 1` the
/// remaining mass `1 - c_i` is an atom at 1, and `c_i = 0` means `p_i ≡ 1`.
/// The slopes are recycled over the null indices: null `j` gets
/// `slopes[j % slopes.len()]`. The family satisfies average level control
/// exactly when `(1/m) Σ_{i∈H0} c_i <= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeProfile {
    pub slopes: Vec<f64>,
    #[serde(default)]
    pub alternative: AltLaw,
}

impl SlopeProfile {
    pub fn new(slopes: Vec<f64>, alternative: AltLaw) -> Self {
        Self {
            slopes,
            alternative,
        }
    }

    fn slope(&self, null_index: usize) -> f64 {
        self.slopes[null_index % self.slopes.len()]
    }

    fn validate(&self, m: usize, m0: usize) -> Result<()> {
        self.alternative.validate()?;
        if m0 > 0 && self.slopes.is_empty() {
            return Err(Error::InvalidParameter("slope profile is empty".into()));
        }
        if let Some(c) = self.slopes.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::InvalidParameter(format!("slope {c} is not a finite nonnegative number")));
        }
        let average = (0..m0).map(|j| self.slope(j)).sum::<f64>() / m as f64;
        if average > 1.0 + SLOPE_SUM_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "slopes violate average level control: (1/m) Σ c_i = {average} > 1"
            )));
        }
        Ok(())
    }
}

/// Uniform mass on `(lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub mass: f64,
}

/// Marginal law of one coordinate.
#[derive(Debug, Clone, PartialEq)]
pub enum CoordinateLaw {
    /// `min(c t, 1)` on `[0, 1)`, residual atom at 1.
    Slope(f64),
    /// `t^a`.
    Power(f64),
    /// Piecewise-uniform; segment masses sum to 1.
    Piecewise(Vec<Segment>),
}

impl CoordinateLaw {
    pub fn cdf(&self, t: f64) -> f64 {
        if t >= 1.0 {
            return 1.0;
        }
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            CoordinateLaw::Slope(c) => (c * t).min(1.0),
            CoordinateLaw::Power(a) => t.powf(*a),
            CoordinateLaw::Piecewise(segments) => segments
                .iter()
                .map(|s| s.mass * ((t - s.lo) / (s.hi - s.lo)).clamp(0.0, 1.0))
                .sum(),
        }
    }

    /// Generalized inverse of the CDF at `u ∈ [0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            CoordinateLaw::Slope(c) => {
                if u < *c {
                    (u / c).min(1.0)
                } else {
                    1.0
                }
            }
            CoordinateLaw::Power(a) => u.powf(1.0 / a),
            CoordinateLaw::Piecewise(segments) => {
                let mut below = 0.0;
                for s in segments.iter().filter(|s| s.mass > 0.0) {
                    if u <= below + s.mass {
                        let frac = ((u - below) / s.mass).clamp(0.0, 1.0);
                        return s.lo + frac * (s.hi - s.lo);
                    }
                    below += s.mass;
                }
                1.0
            }
        }
    }
}

/// Which family of p-values to draw, with its size and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    /// `m0` iid Uniform(0,1) nulls, `m - m0` iid alternatives.
    ClassicalIid {
        m: usize,
        m0: usize,
        #[serde(default)]
        alternative: AltLaw,
    },
    /// Independent nulls with heterogeneous slopes.
    AverageSlopes {
        m: usize,
        m0: usize,
        profile: SlopeProfile,
    },
    /// All-null law under which BH exceeds `q` for every `m >= 2`.
    Counterexample { m: usize, q: f64 },
    /// The slope marginals of `AverageSlopes`, coupled within consecutive
    /// blocks by an equicorrelated Gaussian copula.
    BlockDependent {
        m: usize,
        m0: usize,
        block_size: usize,
        rho: f64,
        profile: SlopeProfile,
    },
    /// Nulls packed below `lambda` so that Storey's estimate sees almost
    /// none of them; the nulls still satisfy average level control.
    StoreyBreaker {
        m: usize,
        #[serde(default = "default_half")]
        lambda: f64,
        #[serde(default = "default_half")]
        null_fraction: f64,
        #[serde(default = "default_alt_exponent")]
        alt_exponent: f64,
    },
}

fn default_half() -> f64 {
    0.5
}

fn default_alt_exponent() -> f64 {
    0.2
}

impl GeneratorSpec {
    pub fn storey_breaker(m: usize) -> Self {
        GeneratorSpec::StoreyBreaker {
            m,
            lambda: default_half(),
            null_fraction: default_half(),
            alt_exponent: default_alt_exponent(),
        }
    }

    pub fn m(&self) -> usize {
        match *self {
            GeneratorSpec::ClassicalIid { m, .. }
            | GeneratorSpec::AverageSlopes { m, .. }
            | GeneratorSpec::Counterexample { m, .. }
            | GeneratorSpec::BlockDependent { m, .. }
            | GeneratorSpec::StoreyBreaker { m, .. } => m,
        }
    }

    /// The same family at size `m`, keeping the null proportion.
    pub fn with_m(&self, new_m: usize) -> Self {
        let rescale = |m0: usize, m: usize| -> usize {
            ((m0 as f64) * (new_m as f64) / (m as f64)).round() as usize
        };
        let mut spec = self.clone();
        match &mut spec {
            GeneratorSpec::ClassicalIid { m, m0, .. }
            | GeneratorSpec::AverageSlopes { m, m0, .. }
            | GeneratorSpec::BlockDependent { m, m0, .. } => {
                *m0 = rescale(*m0, *m).min(new_m);
                *m = new_m;
            }
            GeneratorSpec::Counterexample { m, .. } | GeneratorSpec::StoreyBreaker { m, .. } => {
                *m = new_m
            }
        }
        spec
    }

    /// Short label for tables, e.g. `slopes[2,0](m=100,m0=50)`.
    pub fn label(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        match self {
            GeneratorSpec::ClassicalIid { m, m0, .. } => format!("classical(m={m},m0={m0})"),
            GeneratorSpec::AverageSlopes { m, m0, profile } => {
                format!("slopes[{}](m={m},m0={m0})", list(&profile.slopes))
            }
            GeneratorSpec::Counterexample { m, q } => format!("counterexample(m={m},q={q})"),
            GeneratorSpec::BlockDependent {
                m,
                m0,
                block_size,
                rho,
                profile,
            } => format!(
                "block[{}](m={m},m0={m0},b={block_size},rho={rho})",
                list(&profile.slopes)
            ),
            GeneratorSpec::StoreyBreaker {
                m,
                lambda,
                null_fraction,
                ..
            } => format!("storey-breaker(m={m},lambda={lambda},pi0={null_fraction})"),
        }
    }

    /// Validates parameters and precomputes per-coordinate laws.
    pub fn prepare(&self) -> Result<Sampler> {
        let m = self.m();
        if m == 0 {
            return Err(Error::InvalidParameter("m must be at least 1".into()));
        }
        let check_m0 = |m0: usize| {
            if m0 > m {
                Err(Error::InvalidParameter(format!("m0 = {m0} exceeds m = {m}")))
            } else {
                Ok(())
            }
        };
        match self {
            GeneratorSpec::ClassicalIid { m0, alternative, .. } => {
                check_m0(*m0)?;
                alternative.validate()?;
                let profile = SlopeProfile::new(vec![1.0], *alternative);
                Ok(Sampler::slopes(m, *m0, &profile, None))
            }
            GeneratorSpec::AverageSlopes { m0, profile, .. } => {
                check_m0(*m0)?;
                profile.validate(m, *m0)?;
                Ok(Sampler::slopes(m, *m0, profile, None))
            }
            GeneratorSpec::BlockDependent {
                m0,
                block_size,
                rho,
                profile,
                ..
            } => {
                check_m0(*m0)?;
                profile.validate(m, *m0)?;
                if *block_size == 0 {
                    return Err(Error::InvalidParameter("block size must be at least 1".into()));
                }
                if !(*rho >= 0.0 && *rho < 1.0) {
                    return Err(Error::InvalidParameter(format!("rho must lie in [0, 1), got {rho}")));
                }
                Ok(Sampler::slopes(m, *m0, profile, Some((*block_size, *rho))))
            }
            GeneratorSpec::Counterexample { q, .. } => Sampler::counterexample(m, *q),
            GeneratorSpec::StoreyBreaker {
                lambda,
                null_fraction,
                alt_exponent,
                ..
            } => {
                if !(*lambda > 0.0 && *lambda < 1.0) {
                    return Err(Error::InvalidParameter(format!("lambda must lie in (0, 1), got {lambda}")));
                }
                if !(*null_fraction > 0.0 && *null_fraction <= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "null fraction must lie in (0, 1], got {null_fraction}"
                    )));
                }
                let m0 = ((null_fraction * m as f64).round() as usize).clamp(1, m);
                // nulls uniform on [0, m0/m]: all of them at or below lambda
                if m0 as f64 / m as f64 > *lambda {
                    return Err(Error::InvalidParameter(format!(
                        "null fraction {null_fraction} must not exceed lambda {lambda}"
                    )));
                }
                let profile = SlopeProfile::new(
                    vec![m as f64 / m0 as f64],
                    AltLaw::Power {
                        exponent: *alt_exponent,
                    },
                );
                profile.validate(m, m0)?;
                Ok(Sampler::slopes(m, m0, &profile, None))
            }
        }
    }

    /// Draws replication `replication` under `seed`.
    pub fn generate(&self, seed: u64, replication: u64) -> Result<TestingProblem<f64>> {
        Ok(self.prepare()?.sample(seed, replication))
    }

    pub fn limit_functions(&self) -> Result<LimitFunctions> {
        if let GeneratorSpec::Counterexample { .. } = self {
            return Err(Error::Unsupported(
                "limit functions for the fixed-m counterexample law".into(),
            ));
        }
        Ok(self.prepare()?.limit_functions())
    }
}

pub fn gen_classical_iid(m: usize, m0: usize, alternative: AltLaw, seed: u64) -> Result<TestingProblem<f64>> {
    GeneratorSpec::ClassicalIid { m, m0, alternative }.generate(seed, 0)
}

pub fn gen_average_slopes(profile: SlopeProfile, m: usize, m0: usize, seed: u64) -> Result<TestingProblem<f64>> {
    GeneratorSpec::AverageSlopes { m, m0, profile }.generate(seed, 0)
}

pub fn gen_counterexample(m: usize, q: f64, seed: u64) -> Result<TestingProblem<f64>> {
    GeneratorSpec::Counterexample { m, q }.generate(seed, 0)
}

pub fn gen_block_dependent(
    m: usize,
    m0: usize,
    block_size: usize,
    rho: f64,
    profile: SlopeProfile,
    seed: u64,
) -> Result<TestingProblem<f64>> {
    GeneratorSpec::BlockDependent {
        m,
        m0,
        block_size,
        rho,
        profile,
    }
    .generate(seed, 0)
}

pub fn gen_storey_breaker(m: usize, seed: u64) -> Result<TestingProblem<f64>> {
    GeneratorSpec::storey_breaker(m).generate(seed, 0)
}

/// A validated generator ready to draw replications.
#[derive(Debug, Clone)]
pub struct Sampler {
    laws: Vec<CoordinateLaw>,
    law_of: Vec<u32>,
    null_mask: Vec<bool>,
    blocks: Option<(usize, f64)>,
}

impl Sampler {
    fn slopes(m: usize, m0: usize, profile: &SlopeProfile, blocks: Option<(usize, f64)>) -> Self {
        let mut laws: Vec<CoordinateLaw> = profile.slopes.iter().map(|&c| CoordinateLaw::Slope(c)).collect();
        let alt = laws.len() as u32;
        laws.push(profile.alternative.law());
        let law_of = (0..m)
            .map(|i| if i < m0 { (i % profile.slopes.len().max(1)) as u32 } else { alt })
            .collect();
        let null_mask = (0..m).map(|i| i < m0).collect();
        Self {
            laws,
            law_of,
            null_mask,
            blocks,
        }
    }

    /// Coordinate 1 has density `m` on `[0, 1.5q/m]`, coordinate 2 density
    /// `m` on `[1.5q/m, 2q/m]`, and every coordinate spreads its remaining
    /// mass uniformly on `(2q/m, 1]`. The average CDF is then exactly the
    /// identity on `[0, 1]`, and `P(BH rejects) >= q + q²/4`.
    fn counterexample(m: usize, q: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidParameter(format!("counterexample needs m >= 2, got {m}")));
        }
        if !(q > 0.0 && q < 2.0 / 3.0) {
            return Err(Error::InvalidParameter(format!(
                "counterexample needs 0 < q < 2/3, got {q}"
            )));
        }
        let mf = m as f64;
        let (b, c) = (1.5 * q / mf, 2.0 * q / mf);
        let tail = |mass: f64| Segment { lo: c, hi: 1.0, mass };
        let first = CoordinateLaw::Piecewise(vec![
            Segment { lo: 0.0, hi: b, mass: 1.5 * q },
            tail(1.0 - 1.5 * q),
        ]);
        let second = CoordinateLaw::Piecewise(vec![
            Segment { lo: b, hi: c, mass: 0.5 * q },
            tail(1.0 - 0.5 * q),
        ]);
        let rest = CoordinateLaw::Piecewise(vec![tail(1.0)]);
        let law_of = (0..m).map(|i| i.min(2) as u32).collect();
        Ok(Self {
            laws: vec![first, second, rest],
            law_of,
            null_mask: vec![true; m],
            blocks: None,
        })
    }

    pub fn m(&self) -> usize {
        self.law_of.len()
    }

    pub fn m0(&self) -> usize {
        self.null_mask.iter().filter(|&&n| n).count()
    }

    pub fn null_mask(&self) -> &[bool] {
        &self.null_mask
    }

    pub fn law(&self, i: usize) -> &CoordinateLaw {
        &self.laws[self.law_of[i] as usize]
    }

    /// `(1/m) Σ_{i∈H0} P(p_i <= t)`.
    pub fn mean_null_cdf(&self, t: f64) -> f64 {
        self.mean_cdf_where(t, |i| self.null_mask[i])
    }

    /// `(1/m) Σ_i P(p_i <= t)`.
    pub fn mean_cdf(&self, t: f64) -> f64 {
        self.mean_cdf_where(t, |_| true)
    }

    fn mean_cdf_where(&self, t: f64, keep: impl Fn(usize) -> bool) -> f64 {
        let mut per_law = vec![0usize; self.laws.len()];
        for (i, &l) in self.law_of.iter().enumerate() {
            if keep(i) {
                per_law[l as usize] += 1;
            }
        }
        per_law
            .iter()
            .zip(&self.laws)
            .map(|(&n, law)| n as f64 * law.cdf(t))
            .sum::<f64>()
            / self.m() as f64
    }

    pub fn limit_functions(&self) -> LimitFunctions {
        let m = self.m() as f64;
        let mut nulls = vec![0usize; self.laws.len()];
        let mut alts = vec![0usize; self.laws.len()];
        for (i, &l) in self.law_of.iter().enumerate() {
            if self.null_mask[i] {
                nulls[l as usize] += 1;
            } else {
                alts[l as usize] += 1;
            }
        }
        let mix = |counts: &[usize]| -> Vec<(f64, CoordinateLaw)> {
            counts
                .iter()
                .zip(&self.laws)
                .filter(|(&n, _)| n > 0)
                .map(|(&n, law)| (n as f64 / m, law.clone()))
                .collect()
        };
        LimitFunctions {
            null_part: mix(&nulls),
            alt_part: mix(&alts),
        }
    }

    /// Draws one problem from `rng`.
    pub fn draw(&self, rng: &mut StreamRng) -> TestingProblem<f64> {
        let m = self.m();
        let mut pvalues = Vec::with_capacity(m);
        match self.blocks {
            None => {
                for i in 0..m {
                    let u: f64 = rng.random();
                    pvalues.push(self.law(i).quantile(u));
                }
            }
            Some((block_size, rho)) => {
                let shared = rho.sqrt();
                let own = (1.0 - rho).sqrt();
                for start in (0..m).step_by(block_size) {
                    let w: f64 = rng.sample(StandardNormal);
                    for i in start..(start + block_size).min(m) {
                        let e: f64 = rng.sample(StandardNormal);
                        let u = normal_cdf(shared * w + own * e);
                        pvalues.push(self.law(i).quantile(u));
                    }
                }
            }
        }
        TestingProblem::new(pvalues, self.null_mask.clone()).expect("quantiles lie in [0, 1]")
    }

    pub fn sample(&self, seed: u64, replication: u64) -> TestingProblem<f64> {
        self.draw(&mut replication_rng(seed, replication))
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Analytic limits `G(t)` of `V(t)/m` and `F(t)` of `R(t)/m`.
#[derive(Debug, Clone)]
pub struct LimitFunctions {
    null_part: Vec<(f64, CoordinateLaw)>,
    alt_part: Vec<(f64, CoordinateLaw)>,
}

impl LimitFunctions {
    pub fn g(&self, t: f64) -> f64 {
        self.null_part.iter().map(|(w, law)| w * law.cdf(t)).sum()
    }

    pub fn f(&self, t: f64) -> f64 {
        self.g(t) + self.alt_part.iter().map(|(w, law)| w * law.cdf(t)).sum::<f64>()
    }

    /// `G(t) / F(t)`, the limiting FDR of the fixed cutoff `t`.
    pub fn fdr_limit(&self, t: f64) -> Option<f64> {
        let f = self.f(t);
        (f > 0.0).then(|| self.g(t) / f)
    }

    /// Smallest `t` with `F(t) >= level` (bisection; `F` is nondecreasing).
    pub fn lower_cutoff(&self, level: f64) -> Option<f64> {
        if self.f(1.0) < level {
            return None;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.f(mid) >= level {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }

    /// `n` equispaced cutoffs on `[t_low, 1]` where `F(t_low) >= min_f`.
    pub fn t_grid(&self, n: usize, min_f: f64) -> Result<Vec<f64>> {
        let low = self.lower_cutoff(min_f).ok_or_else(|| {
            Error::Precondition(format!("F never reaches {min_f} on [0, 1]"))
        })?;
        Ok(equispaced(low, 1.0, n))
    }

    /// A cutoff `t* > 0` with `F(t*) > 0` and `G(t*)/F(t*) < q`, if any
    /// exists on a fine grid.
    pub fn find_t_star(&self, q: f64) -> Option<f64> {
        (1..=10_000)
            .map(|k| k as f64 / 10_000.0)
            .find(|&t| self.fdr_limit(t).is_some_and(|r| r < q))
    }
}

/// Default number of cutoffs in convergence grids.
pub const DEFAULT_GRID_POINTS: usize = 101;
/// Default lower bound for `F` at the smallest grid cutoff.
pub const DEFAULT_MIN_F: f64 = 0.05;

pub(crate) fn equispaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![hi],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// `σ` drawn uniformly from the permutations of the null indices, fixing
/// every non-null index. Returned as a pull map: position `i` reads index
/// `sigma[i]`.
pub fn random_null_permutation(null_mask: &[bool], rng: &mut StreamRng) -> Vec<usize> {
    let nulls: Vec<usize> = (0..null_mask.len()).filter(|&i| null_mask[i]).collect();
    let mut shuffled = nulls.clone();
    shuffled.shuffle(rng);
    let mut sigma: Vec<usize> = (0..null_mask.len()).collect();
    for (&at, &from) in nulls.iter().zip(&shuffled) {
        sigma[at] = from;
    }
    sigma
}

/// `p̃_i = (m/m0) · p_{sigma[i]}` for every `i`, with the null mask kept.
///
/// When `sigma` permutes only the nulls and the input satisfies average level
/// control, each null `p̃_i` satisfies `P(p̃_i <= α) <= α`. Values above 1
/// are kept as they are.
pub fn rescale_with_permutation(problem: &TestingProblem<f64>, sigma: &[usize]) -> Result<TestingProblem<f64>> {
    let m = problem.m();
    let m0 = problem.m0();
    if m0 == 0 {
        return Err(Error::NoNulls);
    }
    if sigma.len() != m {
        return Err(Error::InvalidPermutation(m));
    }
    let mut seen = vec![false; m];
    for &s in sigma {
        if s >= m || std::mem::replace(&mut seen[s], true) {
            return Err(Error::InvalidPermutation(m));
        }
    }
    let scale = m as f64 / m0 as f64;
    let p = problem.pvalues();
    let scaled = sigma.iter().map(|&s| scale * p[s]).collect();
    TestingProblem::with_unbounded_pvalues(scaled, problem.null_mask().to_vec())
}

/// Random null permutation followed by the `m/m0` rescaling.
pub fn null_permutation_transform(
    problem: &TestingProblem<f64>,
    seed: u64,
    replication: u64,
) -> Result<TestingProblem<f64>> {
    let mut rng = replication_rng(derive_seed(seed, 0x7e5f), replication);
    let sigma = random_null_permutation(problem.null_mask(), &mut rng);
    rescale_with_permutation(problem, &sigma)
}
