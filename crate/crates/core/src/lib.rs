//! Step-up multiple testing under average significance level control.
//!
//! Procedures and metrics are generic over [`Scalar`], so the same code runs
//! on `f32`, `f64` and exact rationals ([`BigRational`]). The generators and
//! the Monte Carlo harness work in `f64`.
//!
//! ```
//! use fdr_forge::{bh, Problem};
//!
//! let p = Problem::unlabeled(vec![0.01, 0.02, 0.9]).unwrap();
//! let r = bh(&p, 0.05).unwrap();
//! assert_eq!(r.one_based(), vec![1, 2]);
//! assert_eq!(*r.threshold(), 0.02);
//! ```

// `!(x >= 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod generators;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod procedures;
pub mod rng;
pub mod scalar;
pub mod shape;

pub use num_rational::BigRational;

pub use error::{Error, Result};
pub use generators::{AltLaw, GeneratorSpec, LimitFunctions, Sampler, SlopeProfile};
pub use metrics::{fdp, fdr_hat, mc_fdr, mc_fdr_many, Rule, SimulationReport};
pub use model::{counts, Counts, RejectionSet, TestingProblem};
pub use procedures::{
    bh, by, fixed_threshold, oracle_scaled, permutation_image, permute, step_up, storey_pi, PiRule,
    ProcedureSpec, StepUp,
};
pub use scalar::Scalar;
pub use shape::{shape_from_nu, NuMeasure, ShapeFunction, ShapeTable};

/// Double-precision testing problem.
pub type Problem = TestingProblem<f64>;
/// Single-precision testing problem.
pub type Problem32 = TestingProblem<f32>;
/// Testing problem over exact rationals.
pub type ExactProblem = TestingProblem<BigRational>;

pub type Procedure = ProcedureSpec<f64>;
pub type ExactProcedure = ProcedureSpec<BigRational>;
pub type Rejections = RejectionSet<f64>;
pub type ExactRejections = RejectionSet<BigRational>;
pub type Shape = ShapeFunction<f64>;
pub type Nu = NuMeasure<f64>;
