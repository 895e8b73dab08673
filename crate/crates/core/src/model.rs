//! The random matrix model and its resolvents.
//!
//! A model instance is an N x n random matrix
//!
//! ```text
//! sigma = D^{1/2} X D~^{1/2} / sqrt(n) + A
//! ```
//!
//! with non-negative diagonal variance profiles `D` (N x N) and `D~` (n x n),
//! a deterministic signal matrix `A`, and i.i.d. unit-variance complex
//! entries in `X`. The resolvent `Q(z) = (sigma sigma^* - z I)^{-1}` and the
//! co-resolvent `Q~(z) = (sigma^* sigma - z I)^{-1}` are the objects every
//! other module consumes.

use std::sync::OnceLock;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eig, hermitian_gram, spectral_norm, CMat, CVec, ShiftedFactor};
use crate::rng::rng_from_seed;

pub type C64 = Complex64;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Distribution of the i.i.d. entries of `X`.
///
/// All three laws have mean zero, unit variance, and finite moments of every
/// order, so they satisfy the moment assumptions of the concentration bound
/// for any p.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryLaw {
    /// `(g1 + i g2)/sqrt(2)` with independent standard normal `g1, g2`.
    CircularComplexGaussian,
    /// `(+-1 +- i)/sqrt(2)` with independent fair signs.
    ComplexRademacher,
    /// `exp(i theta)` with `theta` uniform on `[0, 2 pi)`.
    UniformPhase,
}

impl EntryLaw {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> C64 {
        match self {
            EntryLaw::CircularComplexGaussian => {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                C64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
            }
            EntryLaw::ComplexRademacher => {
                let re = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
                let im = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
                C64::new(re, im)
            }
            EntryLaw::UniformPhase => {
                let theta = rng.random::<f64>() * std::f64::consts::TAU;
                C64::new(theta.cos(), theta.sin())
            }
        }
    }

    /// `E |X|^4`.
    pub fn fourth_moment(&self) -> f64 {
        match self {
            EntryLaw::CircularComplexGaussian => 2.0,
            EntryLaw::ComplexRademacher | EntryLaw::UniformPhase => 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EntryLaw::CircularComplexGaussian => "circular-complex-gaussian",
            EntryLaw::ComplexRademacher => "complex-rademacher",
            EntryLaw::UniformPhase => "uniform-phase",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "circular-complex-gaussian" => Ok(EntryLaw::CircularComplexGaussian),
            "complex-rademacher" => Ok(EntryLaw::ComplexRademacher),
            "uniform-phase" => Ok(EntryLaw::UniformPhase),
            other => Err(Error::InvalidSpec(format!("unknown entry_law \"{other}\""))),
        }
    }
}

/// Validated model description: dimensions, variance profiles, signal matrix
/// and entry law.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    n_rows: usize,
    n_cols: usize,
    d: Vec<f64>,
    d_tilde: Vec<f64>,
    a: CMat,
    entry_law: EntryLaw,
    a_is_zero: bool,
    a_norm: f64,
}

impl ModelSpec {
    /// Build and validate a spec. `d` has length N, `d_tilde` length n, and
    /// `a` must be N x n.
    pub fn new(d: Vec<f64>, d_tilde: Vec<f64>, a: CMat, entry_law: EntryLaw) -> Result<Self> {
        let n_rows = d.len();
        let n_cols = d_tilde.len();
        if n_rows == 0 {
            return Err(Error::InvalidSpec("d: empty variance profile".into()));
        }
        if n_cols == 0 {
            return Err(Error::InvalidSpec("d_tilde: empty variance profile".into()));
        }
        for (i, &v) in d.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidSpec(format!("d[{i}] = {v} must be finite and >= 0")));
            }
        }
        for (j, &v) in d_tilde.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "d_tilde[{j}] = {v} must be finite and >= 0"
                )));
            }
        }
        if d.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidSpec("d: mean of the profile must be positive".into()));
        }
        if d_tilde.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidSpec(
                "d_tilde: mean of the profile must be positive".into(),
            ));
        }
        if a.nrows() != n_rows || a.ncols() != n_cols {
            return Err(Error::InvalidSpec(format!(
                "A: expected {n_rows}x{n_cols}, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidSpec("A: entries must be finite".into()));
        }
        let a_is_zero = a.iter().all(|c| c.re == 0.0 && c.im == 0.0);
        let a_norm = if a_is_zero { 0.0 } else { spectral_norm(&a) };
        Ok(ModelSpec {
            n_rows,
            n_cols,
            d,
            d_tilde,
            a,
            entry_law,
            a_is_zero,
            a_norm,
        })
    }

    /// Spec with `A = 0`.
    pub fn without_signal(d: Vec<f64>, d_tilde: Vec<f64>, entry_law: EntryLaw) -> Result<Self> {
        let a = CMat::zeros(d.len(), d_tilde.len());
        Self::new(d, d_tilde, a, entry_law)
    }

    /// White-noise spec: `D = I`, `D~ = I`, `A = 0`.
    pub fn white_noise(n_rows: usize, n_cols: usize, entry_law: EntryLaw) -> Result<Self> {
        Self::without_signal(vec![1.0; n_rows], vec![1.0; n_cols], entry_law)
    }

    /// Replace the signal matrix, revalidating dimensions.
    pub fn with_signal(self, a: CMat) -> Result<Self> {
        Self::new(self.d, self.d_tilde, a, self.entry_law)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn d_tilde(&self) -> &[f64] {
        &self.d_tilde
    }

    pub fn a(&self) -> &CMat {
        &self.a
    }

    pub fn a_is_zero(&self) -> bool {
        self.a_is_zero
    }

    pub fn a_norm(&self) -> f64 {
        self.a_norm
    }

    pub fn entry_law(&self) -> EntryLaw {
        self.entry_law
    }

    /// `Tr D / n` — the total mass of the measure represented by `delta`.
    pub fn trace_d_over_n(&self) -> f64 {
        self.d.iter().sum::<f64>() / self.n_cols as f64
    }

    /// `Tr D~ / n` — the total mass of the measure represented by `delta~`.
    pub fn trace_d_tilde_over_n(&self) -> f64 {
        self.d_tilde.iter().sum::<f64>() / self.n_cols as f64
    }

    /// True when both profiles are constant vectors.
    pub fn is_uniform_profile(&self) -> bool {
        self.d.iter().all(|&v| v == self.d[0]) && self.d_tilde.iter().all(|&v| v == self.d_tilde[0])
    }

    /// Draw a realization. Entries of `X` are drawn row-major (row index
    /// varies slowest), which is part of the reproducibility contract.
    pub fn sample(&self, seed: u64) -> Sample {
        let mut rng = rng_from_seed(seed);
        let inv_sqrt_n = 1.0 / (self.n_cols as f64).sqrt();
        let d_sqrt: Vec<f64> = self.d.iter().map(|v| v.sqrt()).collect();
        let dt_sqrt: Vec<f64> = self.d_tilde.iter().map(|v| v.sqrt()).collect();
        let mut sigma = self.a.clone();
        for i in 0..self.n_rows {
            for j in 0..self.n_cols {
                let x = self.entry_law.sample(&mut rng);
                sigma[(i, j)] += x * (d_sqrt[i] * dt_sqrt[j] * inv_sqrt_n);
            }
        }
        Sample {
            sigma,
            seed,
            gram: OnceLock::new(),
            gram_tilde: OnceLock::new(),
            eig: OnceLock::new(),
        }
    }
}

/// A point `z` off the closed positive real axis, together with its distance
/// to that axis (`|Im z|` when `Re z >= 0`, `|z|` otherwise). The distance
/// controls every resolvent norm bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationPoint {
    z: C64,
    dist: f64,
}

impl EvaluationPoint {
    pub fn new(z: C64) -> Result<Self> {
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::InvalidPoint {
                re: z.re,
                im: z.im,
                reason: "must be finite".into(),
            });
        }
        if z.im == 0.0 && z.re >= 0.0 {
            return Err(Error::InvalidPoint {
                re: z.re,
                im: z.im,
                reason: "lies on the closed positive real axis".into(),
            });
        }
        let dist = if z.re >= 0.0 { z.im.abs() } else { z.norm() };
        Ok(EvaluationPoint { z, dist })
    }

    pub fn from_parts(re: f64, im: f64) -> Result<Self> {
        Self::new(C64::new(re, im))
    }

    pub fn z(&self) -> C64 {
        self.z
    }

    /// Distance from `z` to the closed positive real axis.
    pub fn dist_to_real_axis(&self) -> f64 {
        self.dist
    }

    pub fn conj(&self) -> EvaluationPoint {
        EvaluationPoint {
            z: self.z.conj(),
            dist: self.dist,
        }
    }
}

/// One realization of the model. Holds the sampled matrix and lazily caches
/// its Gram matrix, co-Gram matrix and eigendecomposition; everything is
/// immutable after construction and safe to share across threads.
#[derive(Debug)]
pub struct Sample {
    sigma: CMat,
    seed: u64,
    gram: OnceLock<CMat>,
    gram_tilde: OnceLock<CMat>,
    eig: OnceLock<SampleEig>,
}

impl Sample {
    /// Wrap an explicit matrix (used by tests and stubs; `seed` is recorded
    /// but carries no meaning here).
    pub fn from_matrix(sigma: CMat, seed: u64) -> Self {
        Sample {
            sigma,
            seed,
            gram: OnceLock::new(),
            gram_tilde: OnceLock::new(),
            eig: OnceLock::new(),
        }
    }

    pub fn sigma(&self) -> &CMat {
        &self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_rows(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.sigma.ncols()
    }

    /// `sigma sigma^*`, cached.
    pub fn gram(&self) -> &CMat {
        self.gram.get_or_init(|| hermitian_gram(&self.sigma))
    }

    /// `sigma^* sigma`, cached.
    pub fn gram_tilde(&self) -> &CMat {
        self.gram_tilde
            .get_or_init(|| hermitian_gram(&self.sigma.adjoint()))
    }

    /// Eigendecomposition of the Gram matrix, cached. Factor once, then
    /// evaluate resolvent traces and bilinear forms at many `z` cheaply.
    pub fn eig(&self) -> &SampleEig {
        self.eig.get_or_init(|| {
            let (values, vectors) = hermitian_eig(self.gram());
            SampleEig {
                values,
                vectors,
                n_cols: self.n_cols(),
            }
        })
    }

    /// Factorization of `sigma sigma^* - z I` for solve-only access.
    pub fn resolvent_factor(&self, pt: &EvaluationPoint) -> Result<ShiftedFactor> {
        ShiftedFactor::new(self.gram(), pt.z())
    }

    /// Full resolvent `Q(z) = (sigma sigma^* - z I)^{-1}`.
    pub fn resolvent(&self, pt: &EvaluationPoint) -> Result<CMat> {
        self.resolvent_factor(pt)?.inverse()
    }

    /// Full co-resolvent `Q~(z) = (sigma^* sigma - z I)^{-1}`.
    pub fn co_resolvent(&self, pt: &EvaluationPoint) -> Result<CMat> {
        ShiftedFactor::new(self.gram_tilde(), pt.z())?.inverse()
    }

    /// Exact spectral norm of the resolvent (the Gram matrix is normal).
    pub fn resolvent_norm(&self, pt: &EvaluationPoint) -> f64 {
        let z = pt.z();
        self.eig()
            .values
            .iter()
            .map(|&l| 1.0 / (C64::new(l, 0.0) - z).norm())
            .fold(0.0, f64::max)
    }

    /// Column `j` of `sigma`.
    pub fn column(&self, j: usize) -> CVec {
        CVec::from_column_slice(self.sigma.column(j).as_slice())
    }

    /// Residuals of the exact rank-one resolvent identities at column `j`.
    ///
    /// The column-removed resolvent `Q_j` is computed from scratch so the
    /// checks stay independent of the identities under test.
    pub fn rank_one_identity_report(
        &self,
        pt: &EvaluationPoint,
        j: usize,
    ) -> Result<IdentityReport> {
        let n = self.n_cols();
        if j >= n {
            return Err(Error::InvalidArgument(format!(
                "column index {j} out of range (n = {n})"
            )));
        }
        let z = pt.z();
        let q = self.resolvent(pt)?;
        let q_tilde = self.co_resolvent(pt)?;
        let eta = self.column(j);

        let sigma_j = self.sigma.clone().remove_column(j);
        let gram_j = hermitian_gram(&sigma_j);
        let q_j = ShiftedFactor::new(&gram_j, z)?.inverse()?;

        let qj_eta = &q_j * &eta;
        let q_eta = &q * &eta;
        // rows eta^* Q_j and eta^* Q, stored as the adjoint columns
        // Q_j^* eta and Q^* eta (the resolvent is not Hermitian for
        // complex z, so the outer products below need both sides)
        let qj_adj_eta = q_j.adjoint() * &eta;
        let q_adj_eta = q.adjoint() * &eta;
        let quad_j = eta.dotc(&qj_eta); // eta^* Q_j eta
        let quad = eta.dotc(&q_eta); // eta^* Q eta
        let one = C64::new(1.0, 0.0);

        // diagonal entry of the co-resolvent
        let coresolvent_diagonal =
            (q_tilde[(j, j)] + one / (z * (one + quad_j))).norm();

        // Q = Q_j - Q_j eta eta^* Q_j / (1 + eta^* Q_j eta)
        let downdate = &q_j - (&qj_eta * qj_adj_eta.adjoint()) / (one + quad_j);
        let rank_one_downdate = crate::linalg::max_abs(&(&q - &downdate));

        // Q_j = Q + Q eta eta^* Q / (1 - eta^* Q eta)
        let update = &q + (&q_eta * q_adj_eta.adjoint()) / (one - quad);
        let rank_one_update = crate::linalg::max_abs(&(&q_j - &update));

        // 1 + eta^* Q_j eta = 1 / (1 - eta^* Q eta)
        let denominator_reciprocal = ((one + quad_j) - one / (one - quad)).norm();

        // eta^* Q = -z q~_jj eta^* Q_j   (conjugate-transposed form)
        let coeff = -z * q_tilde[(j, j)];
        let row_projection = (&q_adj_eta - &qj_adj_eta * coeff.conj())
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);

        // Stieltjes-transform modulus bound on the denominator
        let stieltjes_bound = z.norm() / pt.dist_to_real_axis();
        let denom_modulus_inv = 1.0 / (one + quad_j).norm();

        Ok(IdentityReport {
            column: j,
            coresolvent_diagonal,
            rank_one_downdate,
            rank_one_update,
            denominator_reciprocal,
            row_projection,
            denom_modulus_inv,
            stieltjes_bound,
        })
    }
}

/// Eigendecomposition view of a sample, for multi-`z` sweeps.
#[derive(Debug, Clone)]
pub struct SampleEig {
    values: Vec<f64>,
    vectors: CMat,
    n_cols: usize,
}

impl SampleEig {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &CMat {
        &self.vectors
    }

    pub fn trace_resolvent(&self, z: C64) -> C64 {
        self.values
            .iter()
            .map(|&l| (C64::new(l, 0.0) - z).inv())
            .sum()
    }

    /// `Tr Q(z)^2`, the exact derivative of `Tr Q` in `z`.
    pub fn trace_resolvent_sq(&self, z: C64) -> C64 {
        self.values
            .iter()
            .map(|&l| {
                let r = (C64::new(l, 0.0) - z).inv();
                r * r
            })
            .sum()
    }

    /// Co-resolvent trace through the shared nonzero spectrum: the co-Gram
    /// matrix has the same eigenvalues plus `n - N` zeros.
    pub fn trace_co_resolvent(&self, z: C64) -> C64 {
        let extra = self.n_cols as f64 - self.values.len() as f64;
        self.trace_resolvent(z) - extra / z
    }

    pub fn trace_co_resolvent_sq(&self, z: C64) -> C64 {
        let extra = self.n_cols as f64 - self.values.len() as f64;
        self.trace_resolvent_sq(z) + extra / (z * z)
    }

    /// Coordinates of `(u, v)` against the eigenbasis, for repeated bilinear
    /// resolvent evaluation: `u^* Q(z) v = sum_i coords_i / (lambda_i - z)`.
    pub fn bilinear_coords(&self, u: &CVec, v: &CVec) -> Vec<C64> {
        let pu = self.vectors.adjoint() * u;
        let pv = self.vectors.adjoint() * v;
        pu.iter()
            .zip(pv.iter())
            .map(|(a, b)| a.conj() * b)
            .collect()
    }

    pub fn bilinear_resolvent(&self, coords: &[C64], z: C64) -> C64 {
        self.values
            .iter()
            .zip(coords)
            .map(|(&l, &c)| c / (C64::new(l, 0.0) - z))
            .sum()
    }

    /// Reconstruct the full resolvent (test oracle path).
    pub fn resolvent(&self, z: C64) -> CMat {
        let n = self.values.len();
        let d = CMat::from_diagonal(&CVec::from_iterator(
            n,
            self.values.iter().map(|&l| (C64::new(l, 0.0) - z).inv()),
        ));
        &self.vectors * d * self.vectors.adjoint()
    }
}

/// Residuals of the five exact rank-one resolvent identities at one column,
/// plus the Stieltjes modulus bound on the perturbation denominator.
#[derive(Debug, Clone)]
pub struct IdentityReport {
    pub column: usize,
    /// `q~_jj = -1 / (z (1 + eta^* Q_j eta))`
    pub coresolvent_diagonal: f64,
    /// `Q = Q_j - Q_j eta eta^* Q_j / (1 + eta^* Q_j eta)`
    pub rank_one_downdate: f64,
    /// `Q_j = Q + Q eta eta^* Q / (1 - eta^* Q eta)`
    pub rank_one_update: f64,
    /// `1 + eta^* Q_j eta = 1 / (1 - eta^* Q eta)`
    pub denominator_reciprocal: f64,
    /// `eta^* Q = -z q~_jj eta^* Q_j`
    pub row_projection: f64,
    /// `1 / |1 + eta^* Q_j eta|`
    pub denom_modulus_inv: f64,
    /// `|z| / dist(z, R+)`, the bound the modulus must respect
    pub stieltjes_bound: f64,
}

impl IdentityReport {
    pub fn max_residual(&self) -> f64 {
        self.coresolvent_diagonal
            .max(self.rank_one_downdate)
            .max(self.rank_one_update)
            .max(self.denominator_reciprocal)
            .max(self.row_projection)
    }

    pub fn stieltjes_bound_ok(&self) -> bool {
        self.denom_modulus_inv <= self.stieltjes_bound * (1.0 + 1e-12)
    }
}

/// `u^* M v` with dimension checking.
pub fn bilinear_form(u: &CVec, m: &CMat, v: &CVec) -> Result<C64> {
    if u.len() != m.nrows() || v.len() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "bilinear form: u is {}, M is {}x{}, v is {}",
            u.len(),
            m.nrows(),
            m.ncols(),
            v.len()
        )));
    }
    Ok(u.dotc(&(m * v)))
}

/// Unit vector `e_k`.
pub fn basis_vector(len: usize, k: usize) -> CVec {
    let mut v = CVec::zeros(len);
    v[k] = C64::new(1.0, 0.0);
    v
}

/// Delocalized unit vector with all entries `1/sqrt(len)`.
pub fn flat_vector(len: usize) -> CVec {
    CVec::from_element(len, C64::new(1.0 / (len as f64).sqrt(), 0.0))
}
