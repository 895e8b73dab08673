//! Deterministic equivalents for resolvents of non-centered random Gram
//! matrices with a separable variance profile.
//!
//! The model is `sigma = D^{1/2} X D~^{1/2} / sqrt(n) + A`. The crate
//! provides:
//!
//! - [`model`]: sampling, resolvents, exact rank-one identity checks;
//! - [`solver`]: the canonical fixed-point system for `(delta, delta~)` and
//!   the precoder variant;
//! - [`equivalents`]: the deterministic equivalent matrices `T`, `T~`, the
//!   intermediate pair `R`, `R~`, the spectral-variable change `w(z)`, and
//!   stability diagnostics;
//! - [`mc`]: a seeded Monte Carlo harness verifying the concentration of
//!   bilinear resolvent forms and first-order trace convergence;
//! - [`subspace`]: a contour-integral estimator of noise-subspace projector
//!   quadratic forms in the white-noise regime;
//! - [`mimo`]: post-detection channel capacity, its deterministic
//!   approximation, and a projected-gradient precoder search;
//! - [`schema`]: the JSON/CSV formats shared with the command-line tool.
//!
//! Every stochastic routine takes a 64-bit master seed and derives
//! independent child streams per replicate, so results are bit-identical
//! across runs and thread counts.

pub mod equivalents;
pub mod error;
pub mod linalg;
pub mod mc;
pub mod mimo;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod schema;
pub mod solver;
pub mod subspace;

pub use error::{Error, Result};
pub use linalg::{CMat, CVec, C64};
pub use model::{EntryLaw, EvaluationPoint, ModelSpec, Sample};
pub use solver::{CanonicalSolution, SolverOptions};
