//! Shape functions `β` and the measures `ν` that induce them.
//!
//! A step-up procedure compares `π·m·p_(k)` against `q·β(k)`. The identity
//! shape gives Benjamini-Hochberg, `k / H_m` gives Benjamini-Yekutieli, and
//! `β(r) = ∫₀^r x dν(x)` for a probability measure `ν` on `(0, ∞)` gives the
//! Blanchard-Roquain family, which controls FDR under arbitrary dependence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Continuous families for `ν`, integrated numerically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuousNu {
    /// Exponential law with the given mean.
    Exponential { mean: f64 },
    /// Uniform law on `(0, upper]`.
    Uniform { upper: f64 },
}

impl ContinuousNu {
    fn density(&self, x: f64) -> f64 {
        match *self {
            ContinuousNu::Exponential { mean } => (-x / mean).exp() / mean,
            ContinuousNu::Uniform { upper } => {
                if x > 0.0 && x <= upper {
                    1.0 / upper
                } else {
                    0.0
                }
            }
        }
    }

    fn support_end(&self) -> f64 {
        match *self {
            ContinuousNu::Exponential { .. } => f64::INFINITY,
            ContinuousNu::Uniform { upper } => upper,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ContinuousNu::Exponential { mean } => mean.is_finite() && mean > 0.0,
            ContinuousNu::Uniform { upper } => upper.is_finite() && upper > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidMeasure(format!("{self:?}")))
        }
    }
}

/// A probability measure `ν` on `(0, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NuMeasure<T> {
    /// Atoms `(x_j, w_j)` with `x_j > 0`, `w_j >= 0`, `Σ w_j = 1`.
    Discrete(Vec<(T, T)>),
    Continuous(ContinuousNu),
}

impl<T: Scalar> NuMeasure<T> {
    pub fn discrete(atoms: Vec<(T, T)>) -> Result<Self> {
        let nu = NuMeasure::Discrete(atoms);
        nu.validate()?;
        Ok(nu)
    }

    /// Equal weight `1/m` on each of `1, ..., m`; `β(k) = k(k+1) / (2m)`.
    pub fn uniform_atoms(m: usize) -> Self {
        let w = T::one() / T::from_count(m);
        NuMeasure::Discrete((1..=m).map(|i| (T::from_count(i), w.clone())).collect())
    }

    /// Weights proportional to `1/i` on `1, ..., m`; induces the
    /// Benjamini-Yekutieli shape `k / H_m`.
    pub fn reciprocal_atoms(m: usize) -> Self {
        let h = harmonic_number::<T>(m);
        NuMeasure::Discrete(
            (1..=m)
                .map(|i| {
                    let x = T::from_count(i);
                    let w = T::one() / (x.clone() * h.clone());
                    (x, w)
                })
                .collect(),
        )
    }

    /// Weights proportional to `m - i + 1` on `1, ..., m`.
    pub fn linear_decay_atoms(m: usize) -> Self {
        let total = T::from_count(m * (m + 1) / 2);
        NuMeasure::Discrete(
            (1..=m)
                .map(|i| (T::from_count(i), T::from_count(m - i + 1) / total.clone()))
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NuMeasure::Discrete(atoms) => {
                if atoms.is_empty() {
                    return Err(Error::InvalidMeasure("no atoms".into()));
                }
                let mut total = T::zero();
                for (x, w) in atoms {
                    if !(*x > T::zero()) {
                        return Err(Error::InvalidMeasure(format!(
                            "atom {x:?} is not strictly positive"
                        )));
                    }
                    if !(*w >= T::zero()) {
                        return Err(Error::InvalidMeasure(format!("negative weight {w:?}")));
                    }
                    total = total + w.clone();
                }
                let tol = T::from_f64(1e-9).unwrap_or_else(T::zero);
                let one = T::one();
                let diff = if total > one {
                    total.clone() - one
                } else {
                    one - total.clone()
                };
                if diff > tol {
                    return Err(Error::InvalidMeasure(format!(
                        "weights sum to {total:?}, not 1"
                    )));
                }
                Ok(())
            }
            NuMeasure::Continuous(c) => c.validate(),
        }
    }
}

/// `H_m = Σ_{i=1}^m 1/i`.
pub fn harmonic_number<T: Scalar>(m: usize) -> T {
    // smallest terms first
    (1..=m)
        .rev()
        .fold(T::zero(), |acc, i| acc + T::one() / T::from_count(i))
}

/// Tabulated `β(0), β(1), ..., β(m)`: nonnegative and nondecreasing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeTable<T> {
    values: Vec<T>,
}

impl<T: Scalar> ShapeTable<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidShape("empty table".into()));
        }
        if !(values[0] >= T::zero()) {
            return Err(Error::InvalidShape(format!(
                "beta(0) = {:?} is negative",
                values[0]
            )));
        }
        for (k, pair) in values.windows(2).enumerate() {
            if !(pair[1] >= pair[0]) {
                return Err(Error::InvalidShape(format!(
                    "not nondecreasing at k = {}: {:?} < {:?}",
                    k + 1,
                    pair[1],
                    pair[0]
                )));
            }
        }
        Ok(Self { values })
    }

    /// Largest `k` covered by the table.
    pub fn m(&self) -> usize {
        self.values.len() - 1
    }

    pub fn get(&self, k: usize) -> &T {
        &self.values[k]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// Which shape function a procedure uses; resolved against `m` by
/// [`ShapeFunction::tabulate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFunction<T> {
    /// `β(k) = k`.
    Identity,
    /// `β(k) = k / H_m`.
    Harmonic,
    /// `β(r) = ∫₀^r x dν(x)`.
    Nu(NuMeasure<T>),
    /// Explicit `β(0..=m)`.
    Table(Vec<T>),
}

impl<T: Scalar> ShapeFunction<T> {
    pub fn tabulate(&self, m: usize) -> Result<ShapeTable<T>> {
        match self {
            ShapeFunction::Identity => ShapeTable::new((0..=m).map(T::from_count).collect()),
            ShapeFunction::Harmonic => {
                let h = harmonic_number::<T>(m);
                ShapeTable::new((0..=m).map(|k| T::from_count(k) / h.clone()).collect())
            }
            ShapeFunction::Nu(nu) => shape_from_nu(nu, m),
            ShapeFunction::Table(values) => {
                if values.len() != m + 1 {
                    return Err(Error::InvalidShape(format!(
                        "table has {} entries, need m + 1 = {}",
                        values.len(),
                        m + 1
                    )));
                }
                ShapeTable::new(values.clone())
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            ShapeFunction::Identity => "identity".into(),
            ShapeFunction::Harmonic => "harmonic".into(),
            ShapeFunction::Nu(NuMeasure::Discrete(atoms)) => format!("nu[{} atoms]", atoms.len()),
            ShapeFunction::Nu(NuMeasure::Continuous(c)) => format!("nu[{c:?}]"),
            ShapeFunction::Table(_) => "table".into(),
        }
    }
}

/// Minimum number of Simpson panels across `(0, m]` for continuous `ν`.
pub const QUADRATURE_PANELS: usize = 1024;

/// Tabulates `β(k) = ∫₀^k x dν(x)` for `k = 0..=m`.
///
/// Discrete measures are summed exactly in `T`. Continuous families use
/// composite Simpson on every unit interval `[k-1, k]`, with at least
/// [`QUADRATURE_PANELS`] panels overall.
pub fn shape_from_nu<T: Scalar>(nu: &NuMeasure<T>, m: usize) -> Result<ShapeTable<T>> {
    nu.validate()?;
    match nu {
        NuMeasure::Discrete(atoms) => {
            let mut values = Vec::with_capacity(m + 1);
            for k in 0..=m {
                let k = T::from_count(k);
                let beta = atoms
                    .iter()
                    .filter(|(x, _)| *x <= k)
                    .fold(T::zero(), |acc, (x, w)| acc + x.clone() * w.clone());
                values.push(beta);
            }
            ShapeTable::new(values)
        }
        NuMeasure::Continuous(c) => {
            let per_unit = {
                let n = QUADRATURE_PANELS.div_ceil(m.max(1)).max(2);
                n + n % 2
            };
            let f = |x: f64| x * c.density(x);
            let end = c.support_end();
            let mut acc = 0.0;
            let mut values = Vec::with_capacity(m + 1);
            values.push(T::zero());
            for k in 1..=m {
                // integrate over the part of [k-1, k] inside the support
                let a = (k - 1) as f64;
                let b = (k as f64).min(end);
                if b > a {
                    let h = (b - a) / per_unit as f64;
                    let mut s = f(a) + f(b);
                    for j in 1..per_unit {
                        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
                        s += w * f(a + j as f64 * h);
                    }
                    acc += s * h / 3.0;
                }
                values.push(T::from_f64(acc).ok_or_else(|| {
                    Error::InvalidShape(format!("beta({k}) = {acc} not representable"))
                })?);
            }
            ShapeTable::new(values)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn point_mass() {
        let nu = NuMeasure::discrete(vec![(2.0, 1.0)]).unwrap();
        assert_eq!(shape_from_nu(&nu, 3).unwrap().values(), &[0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn two_atoms_partial_sums() {
        let nu = NuMeasure::discrete(vec![(1.0, 0.5), (2.0, 0.5)]).unwrap();
        assert_eq!(shape_from_nu(&nu, 3).unwrap().values(), &[0.0, 0.5, 1.5, 1.5]);
    }

    #[test]
    fn reciprocal_weights_reproduce_harmonic_shape_exactly() {
        let m = 10;
        let from_nu = shape_from_nu(&NuMeasure::<BigRational>::reciprocal_atoms(m), m).unwrap();
        let by = ShapeFunction::<BigRational>::Harmonic.tabulate(m).unwrap();
        assert_eq!(from_nu, by);
    }

    #[test]
    fn harmonic_arithmetic() {
        assert_eq!(harmonic_number::<BigRational>(3), rat(11, 6));
        let by = ShapeFunction::<BigRational>::Harmonic.tabulate(3).unwrap();
        assert_eq!(by.get(2), &rat(12, 11));
        let by1 = ShapeFunction::<f64>::Harmonic.tabulate(1).unwrap();
        assert_eq!(by1.values(), &[0.0, 1.0]);
    }

    #[test]
    fn uniform_atoms_closed_form() {
        let m = 7;
        let t = shape_from_nu(&NuMeasure::<BigRational>::uniform_atoms(m), m).unwrap();
        for k in 0..=m {
            assert_eq!(t.get(k), &rat((k * (k + 1)) as i64, (2 * m) as i64));
        }
    }

    #[test]
    fn invalid_measures() {
        assert!(NuMeasure::discrete(vec![(0.0, 1.0)]).is_err());
        assert!(NuMeasure::discrete(vec![(-1.0, 1.0)]).is_err());
        assert!(NuMeasure::discrete(vec![(1.0, 0.6), (2.0, 0.6)]).is_err());
        assert!(NuMeasure::discrete(vec![(1.0, 1.5), (2.0, -0.5)]).is_err());
        assert!(NuMeasure::<f64>::discrete(vec![]).is_err());
        assert!(NuMeasure::<f64>::Continuous(ContinuousNu::Exponential { mean: 0.0 })
            .validate()
            .is_err());
    }

    #[test]
    fn tables_must_be_monotone() {
        assert!(ShapeTable::new(vec![0.0, 1.0, 0.5]).is_err());
        assert!(ShapeTable::new(vec![-1.0, 1.0]).is_err());
        assert!(ShapeFunction::Table(vec![0.0, 1.0]).tabulate(2).is_err());
        assert!(ShapeFunction::Table(vec![0.0, 1.0, 1.0]).tabulate(2).is_ok());
    }

    #[test]
    fn continuous_uniform_is_exact_for_simpson() {
        // ∫₀^k x/b dx = k²/(2b) for k <= b, then b/2
        let b = 4.0;
        let t = shape_from_nu::<f64>(&NuMeasure::Continuous(ContinuousNu::Uniform { upper: b }), 6)
            .unwrap();
        for k in 0..=6 {
            let kf = k as f64;
            let want = if kf <= b { kf * kf / (2.0 * b) } else { b / 2.0 };
            assert!((t.get(k) - want).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn continuous_exponential_matches_closed_form() {
        let mu = 3.0;
        let m = 20;
        let t = shape_from_nu::<f64>(
            &NuMeasure::Continuous(ContinuousNu::Exponential { mean: mu }),
            m,
        )
        .unwrap();
        for k in 0..=m {
            let kf = k as f64;
            let want = mu - (-kf / mu).exp() * (kf + mu);
            assert!((t.get(k) - want).abs() < 1e-10, "k={k}");
        }
    }

    #[test]
    fn json_forms() {
        let s: ShapeFunction<f64> = serde_json::from_str("\"identity\"").unwrap();
        assert_eq!(s, ShapeFunction::Identity);
        let s: ShapeFunction<f64> = serde_json::from_str("\"harmonic\"").unwrap();
        assert_eq!(s, ShapeFunction::Harmonic);
        let s: ShapeFunction<f64> = serde_json::from_str(r#"{"nu": [[1, 0.5], [2, 0.5]]}"#).unwrap();
        assert_eq!(s, ShapeFunction::Nu(NuMeasure::Discrete(vec![(1.0, 0.5), (2.0, 0.5)])));
        let s: ShapeFunction<f64> =
            serde_json::from_str(r#"{"nu": {"exponential": {"mean": 2.0}}}"#).unwrap();
        assert_eq!(
            s,
            ShapeFunction::Nu(NuMeasure::Continuous(ContinuousNu::Exponential { mean: 2.0 }))
        );
    }
}
