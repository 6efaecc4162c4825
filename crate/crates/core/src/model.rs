//! Testing problems, rejection sets and the rejection counts `V(t)`, `S(t)`, `R(t)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{ascending, Scalar};

/// A vector of p-values together with the ground-truth null mask.
///
/// Index `i` is a true null iff `null_mask[i]`. Indices are 0-based here and
/// 1-based in anything printed for people.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestingProblem<T> {
    pvalues: Vec<T>,
    null_mask: Vec<bool>,
}

impl<T: Scalar> TestingProblem<T> {
    pub fn new(pvalues: Vec<T>, null_mask: Vec<bool>) -> Result<Self> {
        if pvalues.is_empty() {
            return Err(Error::Empty);
        }
        if null_mask.len() != pvalues.len() {
            return Err(Error::LengthMismatch {
                what: "null mask",
                got: null_mask.len(),
                expected: pvalues.len(),
            });
        }
        for (index, p) in pvalues.iter().enumerate() {
            if !(*p >= T::zero() && *p <= T::one()) {
                return Err(Error::PValueOutOfRange {
                    index,
                    value: format!("{p:?}"),
                });
            }
        }
        Ok(Self { pvalues, null_mask })
    }

    /// P-values without known ground truth; no index is marked null.
    pub fn unlabeled(pvalues: Vec<T>) -> Result<Self> {
        let m = pvalues.len();
        Self::new(pvalues, vec![false; m])
    }

    /// Like [`TestingProblem::new`] but admits values above 1.
    ///
    /// Used for rescaled inputs such as `(m/m0) * p`, which are p-values only
    /// in the formal sense. Step-up procedures never reject a value above
    /// their (at most 1) threshold, so no clamping is applied.
    pub fn with_unbounded_pvalues(pvalues: Vec<T>, null_mask: Vec<bool>) -> Result<Self> {
        if pvalues.is_empty() {
            return Err(Error::Empty);
        }
        if null_mask.len() != pvalues.len() {
            return Err(Error::LengthMismatch {
                what: "null mask",
                got: null_mask.len(),
                expected: pvalues.len(),
            });
        }
        for (index, p) in pvalues.iter().enumerate() {
            if !(*p >= T::zero()) || p.to_f64().is_some_and(|x| !x.is_finite()) {
                return Err(Error::PValueOutOfRange {
                    index,
                    value: format!("{p:?}"),
                });
            }
        }
        Ok(Self { pvalues, null_mask })
    }

    pub fn m(&self) -> usize {
        self.pvalues.len()
    }

    /// Number of true nulls, `#H0`.
    pub fn m0(&self) -> usize {
        self.null_mask.iter().filter(|&&n| n).count()
    }

    pub fn pvalues(&self) -> &[T] {
        &self.pvalues
    }

    pub fn null_mask(&self) -> &[bool] {
        &self.null_mask
    }

    pub fn is_null(&self, i: usize) -> bool {
        self.null_mask[i]
    }

    pub fn into_parts(self) -> (Vec<T>, Vec<bool>) {
        (self.pvalues, self.null_mask)
    }

    pub fn sorted_pvalues(&self) -> Vec<T> {
        let mut sorted = self.pvalues.clone();
        sorted.sort_unstable_by(ascending);
        sorted
    }
}

/// Rejection counts at a fixed cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Counts {
    /// True nulls rejected.
    pub v: usize,
    /// False nulls rejected.
    pub s: usize,
    /// All rejections, `v + s`.
    pub r: usize,
}

pub(crate) fn check_threshold<T: Scalar>(t: &T) -> Result<()> {
    if *t >= T::zero() && *t <= T::one() {
        Ok(())
    } else {
        Err(Error::ThresholdOutOfRange(format!("{t:?}")))
    }
}

/// `V(t)`, `S(t)` and `R(t)` for the fixed cutoff `t` (ties count as rejected).
pub fn counts<T: Scalar>(problem: &TestingProblem<T>, t: &T) -> Result<Counts> {
    check_threshold(t)?;
    let mut v = 0;
    let mut s = 0;
    for (p, &null) in problem.pvalues.iter().zip(&problem.null_mask) {
        if p <= t {
            if null {
                v += 1;
            } else {
                s += 1;
            }
        }
    }
    Ok(Counts { v, s, r: v + s })
}

/// Sorted copies of the null and of all p-values, for evaluating counts on
/// many cutoffs in `O(log m)` each.
#[derive(Debug, Clone)]
pub struct CountIndex<T> {
    nulls: Vec<T>,
    all: Vec<T>,
}

impl<T: Scalar> CountIndex<T> {
    pub fn new(problem: &TestingProblem<T>) -> Self {
        let mut nulls: Vec<T> = problem
            .pvalues
            .iter()
            .zip(&problem.null_mask)
            .filter(|(_, &n)| n)
            .map(|(p, _)| p.clone())
            .collect();
        nulls.sort_unstable_by(ascending);
        Self {
            nulls,
            all: problem.sorted_pvalues(),
        }
    }

    pub fn m(&self) -> usize {
        self.all.len()
    }

    /// Counts at `t` without range checking `t`.
    pub fn counts_at(&self, t: &T) -> Counts {
        let v = self.nulls.partition_point(|p| p <= t);
        let r = self.all.partition_point(|p| p <= t);
        Counts { v, s: r - v, r }
    }
}

/// Rejected indices (0-based, ascending) and the realized cutoff.
///
/// Every rejected index has `p_i <= threshold` and every other index has
/// `p_i > threshold`. An empty set carries threshold 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionSet<T> {
    rejected: Vec<usize>,
    threshold: T,
}

impl<T: Scalar> RejectionSet<T> {
    pub(crate) fn at_threshold(problem: &TestingProblem<T>, threshold: T) -> Self {
        let rejected = problem
            .pvalues
            .iter()
            .enumerate()
            .filter(|(_, p)| **p <= threshold)
            .map(|(i, _)| i)
            .collect();
        Self {
            rejected,
            threshold,
        }
    }

    pub(crate) fn from_parts(mut rejected: Vec<usize>, threshold: T) -> Self {
        rejected.sort_unstable();
        Self {
            rejected,
            threshold,
        }
    }

    pub fn empty() -> Self {
        Self {
            rejected: Vec::new(),
            threshold: T::zero(),
        }
    }

    pub fn rejected(&self) -> &[usize] {
        &self.rejected
    }

    pub fn threshold(&self) -> &T {
        &self.threshold
    }

    pub fn len(&self) -> usize {
        self.rejected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rejected.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.rejected.binary_search(&i).is_ok()
    }

    /// Rejected indices numbered from 1, as used in reports.
    pub fn one_based(&self) -> Vec<usize> {
        self.rejected.iter().map(|i| i + 1).collect()
    }

    /// `#(R ∩ H0)`.
    pub fn false_rejections(&self, null_mask: &[bool]) -> usize {
        self.rejected.iter().filter(|&&i| null_mask[i]).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> TestingProblem<f64> {
        TestingProblem::new(vec![0.01, 0.5, 0.04], vec![false, true, true]).unwrap()
    }

    #[test]
    fn counts_direct() {
        let c = counts(&example(), &0.05).unwrap();
        assert_eq!(c, Counts { v: 1, s: 1, r: 2 });
    }

    #[test]
    fn counts_at_endpoints() {
        let p = example();
        assert_eq!(counts(&p, &0.0).unwrap(), Counts { v: 0, s: 0, r: 0 });
        assert_eq!(counts(&p, &1.0).unwrap(), Counts { v: 2, s: 1, r: 3 });
    }

    #[test]
    fn counts_rejects_bad_threshold() {
        assert!(matches!(
            counts(&example(), &1.5),
            Err(Error::ThresholdOutOfRange(_))
        ));
        assert!(counts(&example(), &-0.1).is_err());
        assert!(counts(&example(), &f64::NAN).is_err());
    }

    #[test]
    fn ties_count_as_rejected() {
        let p = TestingProblem::unlabeled(vec![0.05, 0.05, 0.2]).unwrap();
        assert_eq!(counts(&p, &0.05).unwrap().r, 2);
    }

    #[test]
    fn validation() {
        assert!(matches!(
            TestingProblem::<f64>::unlabeled(vec![]),
            Err(Error::Empty)
        ));
        assert!(matches!(
            TestingProblem::unlabeled(vec![0.1, 1.2]),
            Err(Error::PValueOutOfRange { index: 1, .. })
        ));
        assert!(TestingProblem::unlabeled(vec![f64::NAN]).is_err());
        assert!(TestingProblem::new(vec![0.1], vec![true, false]).is_err());
        // point masses at 0 and 1 are legal
        assert!(TestingProblem::unlabeled(vec![0.0, 1.0]).is_ok());
        assert!(TestingProblem::with_unbounded_pvalues(vec![0.3, 1.7], vec![true; 2]).is_ok());
        assert!(TestingProblem::with_unbounded_pvalues(vec![-0.3], vec![true]).is_err());
    }

    #[test]
    fn count_index_matches_direct_counts() {
        let p = example();
        let idx = CountIndex::new(&p);
        for t in [0.0, 0.01, 0.02, 0.04, 0.3, 0.5, 1.0] {
            assert_eq!(idx.counts_at(&t), counts(&p, &t).unwrap());
        }
    }

    #[test]
    fn rejection_set_round_trip() {
        let p = example();
        let set = RejectionSet::at_threshold(&p, 0.05);
        assert_eq!(set.rejected(), &[0, 2]);
        assert_eq!(set.one_based(), vec![1, 3]);
        assert_eq!(set.len(), counts(&p, &0.05).unwrap().r);
        assert_eq!(set.false_rejections(p.null_mask()), 1);
    }
}
