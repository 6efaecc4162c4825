//! Fixed-cutoff rejection and the step-up family.
//!
//! A step-up procedure with null-proportion multiplier `π`, shape `β` and
//! level `q` rejects every p-value at or below
//!
//! ```text
//! t̂ = max { t : π·m·t / β(R(t)) <= q }
//! ```
//!
//! The ratio increases in `t` between order statistics, so the maximum sits
//! at an order statistic and the scan below is `O(m log m)`:
//! `k* = max { k : π·m·p_(k) <= q·β(k) }`, `t̂ = p_(k*)`, and nothing is
//! rejected when no `k` qualifies. The comparison is kept division-free so a
//! zero `β(k)` simply never admits a positive p-value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_threshold, RejectionSet, TestingProblem};
use crate::scalar::{max_of, min_of, Scalar};
use crate::shape::{ShapeFunction, ShapeTable};

/// Default Storey tuning parameter.
pub const DEFAULT_LAMBDA: f64 = 0.5;

/// How the null-proportion multiplier `π` is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiRule<T> {
    /// A fixed `π ∈ (0, 1]`.
    Constant(T),
    /// Storey's estimate from the p-values exceeding `lambda`.
    Storey {
        lambda: T,
        #[serde(default = "default_normalized")]
        normalized: bool,
    },
}

fn default_normalized() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureSpec<T> {
    pub pi: PiRule<T>,
    pub shape: ShapeFunction<T>,
    pub q: T,
}

impl<T: Scalar> ProcedureSpec<T> {
    /// Benjamini-Hochberg: `π = 1`, identity shape.
    pub fn bh(q: T) -> Self {
        Self {
            pi: PiRule::Constant(T::one()),
            shape: ShapeFunction::Identity,
            q,
        }
    }

    /// Benjamini-Yekutieli: `π = 1`, `β(k) = k / H_m`.
    pub fn by(q: T) -> Self {
        Self {
            pi: PiRule::Constant(T::one()),
            shape: ShapeFunction::Harmonic,
            q,
        }
    }

    /// Storey-adaptive BH with the normalized estimate.
    pub fn storey(q: T, lambda: T) -> Self {
        Self {
            pi: PiRule::Storey {
                lambda,
                normalized: true,
            },
            shape: ShapeFunction::Identity,
            q,
        }
    }

    pub fn with_shape(q: T, shape: ShapeFunction<T>) -> Self {
        Self {
            pi: PiRule::Constant(T::one()),
            shape,
            q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |x: &T| *x > T::zero() && *x < T::one();
        if !open_unit(&self.q) {
            return Err(Error::InvalidParameter(format!(
                "q must lie in (0, 1), got {:?}",
                self.q
            )));
        }
        match &self.pi {
            PiRule::Constant(pi) => {
                if !(*pi > T::zero() && *pi <= T::one()) {
                    return Err(Error::InvalidParameter(format!(
                        "constant pi must lie in (0, 1], got {pi:?}"
                    )));
                }
            }
            PiRule::Storey { lambda, .. } => {
                if !open_unit(lambda) {
                    return Err(Error::InvalidParameter(format!(
                        "lambda must lie in (0, 1), got {lambda:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Short human-readable name, e.g. `bh`, `by`, `storey(0.5)`.
    pub fn label(&self) -> String {
        match (&self.pi, &self.shape) {
            (PiRule::Constant(pi), ShapeFunction::Identity) if *pi == T::one() => "bh".into(),
            (PiRule::Constant(pi), ShapeFunction::Harmonic) if *pi == T::one() => "by".into(),
            (PiRule::Storey { lambda, normalized }, shape) => {
                let raw = if *normalized { "" } else { ",raw" };
                let shape = match shape {
                    ShapeFunction::Identity => String::new(),
                    other => format!(",{}", other.label()),
                };
                format!("storey({}{raw}{shape})", lambda.to_f64_lossy())
            }
            (PiRule::Constant(pi), shape) => {
                format!("step-up(pi={},{})", pi.to_f64_lossy(), shape.label())
            }
        }
    }
}

/// A step-up procedure with its shape function resolved for a fixed `m`.
///
/// Build once and apply to many problems of the same size.
#[derive(Debug, Clone)]
pub struct StepUp<T> {
    spec: ProcedureSpec<T>,
    table: ShapeTable<T>,
}

impl<T: Scalar> StepUp<T> {
    pub fn new(spec: ProcedureSpec<T>, m: usize) -> Result<Self> {
        spec.validate()?;
        if m == 0 {
            return Err(Error::Empty);
        }
        let table = spec.shape.tabulate(m)?;
        Ok(Self { spec, table })
    }

    pub fn spec(&self) -> &ProcedureSpec<T> {
        &self.spec
    }

    pub fn table(&self) -> &ShapeTable<T> {
        &self.table
    }

    /// The multiplier actually used on `problem`.
    pub fn resolve_pi(&self, problem: &TestingProblem<T>) -> T {
        match &self.spec.pi {
            PiRule::Constant(pi) => pi.clone(),
            PiRule::Storey { lambda, normalized } => {
                let floor = T::one() / T::from_count(problem.m());
                max_of(storey_pi(problem, lambda, *normalized), floor)
            }
        }
    }

    pub fn apply(&self, problem: &TestingProblem<T>) -> Result<RejectionSet<T>> {
        let m = problem.m();
        if m != self.table.m() {
            return Err(Error::LengthMismatch {
                what: "problem",
                got: m,
                expected: self.table.m(),
            });
        }
        let pi_m = self.resolve_pi(problem) * T::from_count(m);
        let sorted = problem.sorted_pvalues();
        let q = &self.spec.q;
        let k_star = (1..=m)
            .rev()
            .find(|&k| pi_m.clone() * sorted[k - 1].clone() <= q.clone() * self.table.get(k).clone());
        Ok(match k_star {
            Some(k) => RejectionSet::at_threshold(problem, sorted[k - 1].clone()),
            None => RejectionSet::empty(),
        })
    }
}

/// Rejects every `p_i <= t`.
pub fn fixed_threshold<T: Scalar>(problem: &TestingProblem<T>, t: T) -> Result<RejectionSet<T>> {
    check_threshold(&t)?;
    Ok(RejectionSet::at_threshold(problem, t))
}

pub fn step_up<T: Scalar>(
    problem: &TestingProblem<T>,
    spec: &ProcedureSpec<T>,
) -> Result<RejectionSet<T>> {
    StepUp::new(spec.clone(), problem.m())?.apply(problem)
}

pub fn bh<T: Scalar>(problem: &TestingProblem<T>, q: T) -> Result<RejectionSet<T>> {
    step_up(problem, &ProcedureSpec::bh(q))
}

pub fn by<T: Scalar>(problem: &TestingProblem<T>, q: T) -> Result<RejectionSet<T>> {
    step_up(problem, &ProcedureSpec::by(q))
}

/// Storey's null-proportion estimate.
///
/// With `normalized` this is `#{p_i > λ} / (m (1 - λ))` clamped to
/// `[1/m, 1]`. Without it the raw count `#{p_i > λ}` is returned unchanged.
pub fn storey_pi<T: Scalar>(problem: &TestingProblem<T>, lambda: &T, normalized: bool) -> T {
    let above = problem.pvalues().iter().filter(|p| *p > lambda).count();
    let raw = T::from_count(above);
    if !normalized {
        return raw;
    }
    let m = T::from_count(problem.m());
    let estimate = raw / (m.clone() * (T::one() - lambda.clone()));
    max_of(min_of(estimate, T::one()), T::one() / m)
}

fn check_permutation(sigma: &[usize], m: usize) -> Result<()> {
    if sigma.len() != m {
        return Err(Error::InvalidPermutation(m));
    }
    let mut seen = vec![false; m];
    for &s in sigma {
        if s >= m || std::mem::replace(&mut seen[s], true) {
            return Err(Error::InvalidPermutation(m));
        }
    }
    Ok(())
}

/// Moves the p-value (and null flag) at index `i` to index `sigma[i]`.
///
/// With this convention a permutation-invariant procedure satisfies
/// `i ∈ R(p)` iff `sigma[i] ∈ R(permute(p, sigma))`.
pub fn permute<T: Scalar>(problem: &TestingProblem<T>, sigma: &[usize]) -> Result<TestingProblem<T>> {
    let m = problem.m();
    check_permutation(sigma, m)?;
    let mut pvalues = vec![T::zero(); m];
    let mut mask = vec![false; m];
    for (i, &s) in sigma.iter().enumerate() {
        pvalues[s] = problem.pvalues()[i].clone();
        mask[s] = problem.null_mask()[i];
    }
    TestingProblem::with_unbounded_pvalues(pvalues, mask)
}

/// `{ sigma[i] : i ∈ R }`, keeping the threshold.
pub fn permutation_image<T: Scalar>(rejections: &RejectionSet<T>, sigma: &[usize]) -> Result<RejectionSet<T>> {
    check_permutation(sigma, sigma.len())?;
    let mut image = Vec::with_capacity(rejections.len());
    for &i in rejections.rejected() {
        if i >= sigma.len() {
            return Err(Error::InvalidPermutation(sigma.len()));
        }
        image.push(sigma[i]);
    }
    Ok(RejectionSet::from_parts(image, rejections.threshold().clone()))
}

/// Runs the procedure on `p_i · m0/m`, the oracle version that knows `#H0`.
///
/// With no true nulls every scaled value is 0, so everything the procedure
/// would reject at `p = 0` is rejected; callers should flag that case.
pub fn oracle_scaled<T: Scalar>(
    problem: &TestingProblem<T>,
    spec: &ProcedureSpec<T>,
) -> Result<RejectionSet<T>> {
    let scale = T::from_count(problem.m0()) / T::from_count(problem.m());
    let scaled = problem
        .pvalues()
        .iter()
        .map(|p| p.clone() * scale.clone())
        .collect();
    let scaled = TestingProblem::with_unbounded_pvalues(scaled, problem.null_mask().to_vec())?;
    step_up(&scaled, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::NuMeasure;
    use num_rational::BigRational;
    use proptest::prelude::*;

    fn problem(p: &[f64]) -> TestingProblem<f64> {
        TestingProblem::unlabeled(p.to_vec()).unwrap()
    }

    /// Brute-force oracle: largest candidate cutoff in {0} ∪ {p_i} with
    /// π·m·t <= q·β(R(t)) and R(t) >= 1.
    fn brute_force<T: Scalar>(problem: &TestingProblem<T>, pi: &T, table: &ShapeTable<T>, q: &T) -> (Vec<usize>, T) {
        let m = problem.m();
        let mut best: Option<T> = None;
        let candidates = std::iter::once(T::zero()).chain(problem.pvalues().iter().cloned());
        for t in candidates {
            let r = problem.pvalues().iter().filter(|p| **p <= t).count();
            if r == 0 {
                continue;
            }
            if pi.clone() * T::from_count(m) * t.clone() <= q.clone() * table.get(r).clone()
                && best.as_ref().is_none_or(|b| t > *b)
            {
                best = Some(t);
            }
        }
        match best {
            Some(t) => {
                let rej = (0..m).filter(|&i| problem.pvalues()[i] <= t).collect();
                (rej, t)
            }
            None => (vec![], T::zero()),
        }
    }

    #[test]
    fn bh_example() {
        let r = bh(&problem(&[0.01, 0.02, 0.9]), 0.05).unwrap();
        assert_eq!(r.one_based(), vec![1, 2]);
        assert_eq!(*r.threshold(), 0.02);
        let table = ShapeFunction::Identity.tabulate(3).unwrap();
        let (rej, t) = brute_force(&problem(&[0.01, 0.02, 0.9]), &1.0, &table, &0.05);
        assert_eq!((rej, t), (r.rejected().to_vec(), 0.02));
    }

    #[test]
    fn bh_nothing_below_q() {
        let r = bh(&problem(&[0.9, 0.95, 0.99]), 0.05).unwrap();
        assert!(r.is_empty());
        assert_eq!(*r.threshold(), 0.0);
    }

    #[test]
    fn bh_single_pvalue() {
        assert_eq!(bh(&problem(&[0.04]), 0.05).unwrap().one_based(), vec![1]);
        assert!(bh(&problem(&[0.06]), 0.05).unwrap().is_empty());
    }

    #[test]
    fn by_example_exact() {
        let p: Vec<BigRational> = [1, 20, 900]
            .iter()
            .map(|&n| BigRational::new(n.into(), 1000.into()))
            .collect();
        let p = TestingProblem::unlabeled(p).unwrap();
        let q = BigRational::new(1.into(), 20.into());
        let r = by(&p, q.clone()).unwrap();
        assert_eq!(r.one_based(), vec![1]);
        let table = ShapeFunction::<BigRational>::Harmonic.tabulate(3).unwrap();
        let (rej, t) = brute_force(&p, &BigRational::from_integer(1.into()), &table, &q);
        assert_eq!(rej, r.rejected());
        assert_eq!(&t, r.threshold());
    }

    #[test]
    fn by_equals_bh_for_single_test() {
        for p in [0.01, 0.05, 0.2] {
            assert_eq!(bh(&problem(&[p]), 0.05).unwrap(), by(&problem(&[p]), 0.05).unwrap());
        }
    }

    #[test]
    fn fixed_threshold_examples() {
        let p = problem(&[0.01, 0.5, 0.04]);
        assert_eq!(fixed_threshold(&p, 0.05).unwrap().one_based(), vec![1, 3]);
        assert!(fixed_threshold(&p, 0.0).unwrap().is_empty());
        assert_eq!(fixed_threshold(&p, 1.0).unwrap().len(), 3);
        assert!(fixed_threshold(&p, 1.01).is_err());
    }

    #[test]
    fn storey_examples() {
        let p = problem(&[0.1, 0.6, 0.8]);
        assert_eq!(storey_pi(&p, &0.5, false), 2.0);
        assert_eq!(storey_pi(&p, &0.5, true), 1.0);
        let low = problem(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(storey_pi(&low, &0.5, false), 0.0);
        assert_eq!(storey_pi(&low, &0.5, true), 0.25);
    }

    #[test]
    fn storey_exact_normalization() {
        let p: Vec<BigRational> = [1, 6, 7, 9]
            .iter()
            .map(|&n| BigRational::new(n.into(), 10.into()))
            .collect();
        let p = TestingProblem::unlabeled(p).unwrap();
        let half = BigRational::new(1.into(), 2.into());
        // 3 above λ: 3 / (4 · 1/2) = 3/2 → clamped to 1; λ = 0.8 → 1 / (4 · 0.2) = 5/4 → 1
        assert_eq!(storey_pi(&p, &half, true), BigRational::from_integer(1.into()));
        let lam = BigRational::new(65.into(), 100.into());
        // 2 above 0.65: 2 / (4 · 0.35) = 10/7 → 1; λ = 0.85 → 1 / (4 · 0.15) = 5/3 → 1
        assert_eq!(storey_pi(&p, &lam, true), BigRational::from_integer(1.into()));
        let lam = BigRational::new(1.into(), 20.into());
        // 4 above 0.05: 4 / (4 · 0.95) > 1 → 1
        assert_eq!(storey_pi(&p, &lam, true), BigRational::from_integer(1.into()));
        let lam = BigRational::new(2.into(), 10.into());
        // 3 above 0.2: 3 / (4 · 0.8) = 15/16
        assert_eq!(storey_pi(&p, &lam, true), BigRational::new(15.into(), 16.into()));
    }

    #[test]
    fn spec_validation() {
        assert!(ProcedureSpec::bh(0.0).validate().is_err());
        assert!(ProcedureSpec::bh(1.0).validate().is_err());
        assert!(ProcedureSpec::storey(0.1, 1.0).validate().is_err());
        let bad_pi = ProcedureSpec {
            pi: PiRule::Constant(1.5),
            shape: ShapeFunction::Identity,
            q: 0.1,
        };
        assert!(bad_pi.validate().is_err());
        let zero_pi = ProcedureSpec {
            pi: PiRule::Constant(0.0),
            ..ProcedureSpec::bh(0.1)
        };
        assert!(step_up(&problem(&[0.1]), &zero_pi).is_err());
    }

    #[test]
    fn zero_shape_values_only_admit_zero_pvalues() {
        // ν = δ₂ gives β(1) = 0
        let spec = ProcedureSpec::with_shape(0.5, ShapeFunction::Nu(NuMeasure::Discrete(vec![(2.0, 1.0)])));
        assert!(step_up(&problem(&[0.001, 0.9, 0.95]), &spec).unwrap().is_empty());
        assert_eq!(step_up(&problem(&[0.0, 0.9, 0.95]), &spec).unwrap().one_based(), vec![1]);
    }

    #[test]
    fn permutation_helpers() {
        let r = RejectionSet::from_parts(vec![0], 0.1);
        assert_eq!(permutation_image(&r, &[0, 1, 2]).unwrap(), r);
        assert_eq!(permutation_image(&r, &[1, 0, 2]).unwrap().rejected(), &[1]);
        assert!(permutation_image(&r, &[0, 0, 2]).is_err());
        assert!(permutation_image(&r, &[0, 3, 2]).is_err());
        let p = problem(&[0.1, 0.2, 0.3]);
        assert_eq!(permute(&p, &[2, 0, 1]).unwrap().pvalues(), &[0.2, 0.3, 0.1]);
    }

    #[test]
    fn oracle_scaling() {
        let all_null = TestingProblem::new(vec![0.01, 0.02, 0.9], vec![true; 3]).unwrap();
        let spec = ProcedureSpec::bh(0.05);
        assert_eq!(
            oracle_scaled(&all_null, &spec).unwrap(),
            step_up(&all_null, &spec).unwrap()
        );
        let half = TestingProblem::new(vec![0.2, 0.4, 0.6, 0.8], vec![true, false, true, false]).unwrap();
        // runs on [0.1, 0.2, 0.3, 0.4]
        let r = oracle_scaled(&half, &ProcedureSpec::bh(0.5)).unwrap();
        assert_eq!(r.len(), 4);
        assert_eq!(*r.threshold(), 0.4);
        assert!(oracle_scaled(&half, &ProcedureSpec::bh(0.3)).unwrap().is_empty());
        assert_eq!(bh(&half, 0.3).unwrap().len(), 0);
        let no_nulls = TestingProblem::new(vec![0.5, 0.9], vec![false, false]).unwrap();
        assert_eq!(oracle_scaled(&no_nulls, &spec).unwrap().len(), 2);
    }

    proptest! {
        #[test]
        fn sorted_scan_matches_brute_force(
            p in prop::collection::vec(0.0f64..=1.0, 1..=10),
            q in 0.01f64..0.99,
        ) {
            let prob = problem(&p);
            for spec in [ProcedureSpec::bh(q), ProcedureSpec::by(q), ProcedureSpec::storey(q, 0.5)] {
                let up = StepUp::new(spec, prob.m()).unwrap();
                let got = up.apply(&prob).unwrap();
                let (rej, t) = brute_force(&prob, &up.resolve_pi(&prob), up.table(), &q);
                prop_assert_eq!(got.rejected(), rej.as_slice());
                prop_assert_eq!(*got.threshold(), t);
            }
        }

        #[test]
        fn bh_matches_classical_rule(p in prop::collection::vec(0.0f64..=1.0, 1..=50), q in 0.01f64..0.99) {
            let prob = problem(&p);
            let m = p.len();
            let mut sorted = p.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let k = (1..=m).rev().find(|&k| sorted[k - 1] * m as f64 <= q * k as f64).unwrap_or(0);
            prop_assert_eq!(bh(&prob, q).unwrap().len(), k);
        }

        #[test]
        fn rejections_grow_with_q(p in prop::collection::vec(0.0f64..=1.0, 1..=30), q1 in 0.01f64..0.99, q2 in 0.01f64..0.99) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let prob = problem(&p);
            let small = bh(&prob, lo).unwrap();
            let large = bh(&prob, hi).unwrap();
            prop_assert!(small.rejected().iter().all(|&i| large.contains(i)));
        }

        #[test]
        fn by_within_bh(p in prop::collection::vec(0.0f64..=1.0, 1..=30), q in 0.01f64..0.99) {
            let prob = problem(&p);
            let b = bh(&prob, q).unwrap();
            prop_assert!(by(&prob, q).unwrap().rejected().iter().all(|&i| b.contains(i)));
        }

        #[test]
        fn storey_is_permutation_invariant(p in prop::collection::vec(0.0f64..=1.0, 2..=30), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let prob = problem(&p);
            let mut sigma: Vec<usize> = (0..p.len()).collect();
            sigma.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let spec = ProcedureSpec::storey(0.2, 0.5);
            let direct = step_up(&prob, &spec).unwrap();
            let moved = step_up(&permute(&prob, &sigma).unwrap(), &spec).unwrap();
            prop_assert_eq!(permutation_image(&direct, &sigma).unwrap(), moved);
        }
    }
}
