//! Consistent estimation of noise-subspace projector quadratic forms.
//!
//! In the white-noise regime (`D = I`, `D~ = I`, `N < n`) with a low-rank
//! signal matrix `A`, the quadratic form `u^* P u` of the orthogonal
//! projector `P` onto the complement of the column space of `A` admits the
//! contour representation
//!
//! ```text
//! u^* P u = (1/2 pi i) \oint u^* T(z) u  w'(z) / (1 + delta(z)) dz
//! ```
//!
//! over the clockwise rectangle boundary, where `w(z) = z (1+delta)(1+delta~)`
//! maps the rectangle to a curve enclosing the zero eigenvalue of `A A^*` and
//! none of the signal eigenvalues. Replacing `delta` by the empirical trace
//! `Tr Q / n` and `u^* T u` by `u^* Q u` gives a plug-in estimator that is
//! consistent when `N` and `n` grow at the same pace; that estimator is what
//! [`estimate_projector_quadform`] computes, while
//! [`oracle_projector_quadform`] evaluates the deterministic side and
//! [`true_projector`] the exact projector.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eig, hermitian_gram, CMat, CVec};
use crate::model::{EvaluationPoint, Sample};
use crate::quadrature::{winding_number, ContourSpec};
use crate::rng::child_rng;
use crate::solver::{CanonicalSolution, SolverOptions};

pub type C64 = Complex64;

/// Exact orthogonal projector onto the complement of the column space of
/// `a`, with the numerical rank used. Errors when the rank fills the whole
/// space (no noise subspace left).
pub fn true_projector(a: &CMat, rank_tol: Option<f64>) -> Result<(CMat, usize)> {
    let n_rows = a.nrows();
    let svd = a.clone().svd(true, false);
    let s_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = rank_tol.unwrap_or_else(|| {
        s_max * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON
    });
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank >= n_rows {
        return Err(Error::SeparationFailure(format!(
            "signal rank {rank} fills the whole {n_rows}-dimensional space"
        )));
    }
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| Error::Numerical("SVD did not return left vectors".into()))?;
    let mut p = CMat::identity(n_rows, n_rows);
    for k in 0..rank {
        let col = u.column(k);
        for i in 0..n_rows {
            for j in 0..n_rows {
                p[(i, j)] -= col[i] * col[j].conj();
            }
        }
    }
    Ok((p, rank))
}

/// Deterministic low-rank signal matrix with prescribed singular values and
/// seeded orthonormal factors; convenient for planted-subspace experiments.
pub fn planted_low_rank(
    n_rows: usize,
    n_cols: usize,
    singular_values: &[f64],
    seed: u64,
) -> Result<CMat> {
    let r = singular_values.len();
    if r == 0 || r > n_rows.min(n_cols) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} out of range for a {n_rows}x{n_cols} matrix"
        )));
    }
    let law = crate::model::EntryLaw::CircularComplexGaussian;
    let mut rng_u = child_rng(seed, 0);
    let gu = CMat::from_fn(n_rows, r, |_, _| law.sample(&mut rng_u));
    let mut rng_v = child_rng(seed, 1);
    let gv = CMat::from_fn(n_cols, r, |_, _| law.sample(&mut rng_v));
    let qu = gu.qr().q();
    let qv = gv.qr().q();
    let mut a = CMat::zeros(n_rows, n_cols);
    for (k, &s) in singular_values.iter().enumerate() {
        let uk = qu.column(k);
        let vk = qv.column(k);
        for i in 0..n_rows {
            for j in 0..n_cols {
                a[(i, j)] += uk[i] * vk[j].conj() * s;
            }
        }
    }
    Ok(a)
}

/// Empirical Stieltjes transforms of a sample and their exact derivatives,
/// evaluated through the eigendecomposition of the Gram matrix:
/// `delta^ = Tr Q / n`, `delta^' = Tr Q^2 / n`, and the co-resolvent
/// analogues.
#[derive(Debug, Clone, Copy)]
pub struct EmpiricalTransforms {
    pub delta_hat: C64,
    pub delta_tilde_hat: C64,
    pub delta_hat_prime: C64,
    pub delta_tilde_hat_prime: C64,
}

pub fn empirical_stieltjes(sample: &Sample, pt: &EvaluationPoint) -> EmpiricalTransforms {
    let z = pt.z();
    let eig = sample.eig();
    let n = sample.n_cols() as f64;
    EmpiricalTransforms {
        delta_hat: eig.trace_resolvent(z) / n,
        delta_tilde_hat: eig.trace_co_resolvent(z) / n,
        delta_hat_prime: eig.trace_resolvent_sq(z) / n,
        delta_tilde_hat_prime: eig.trace_co_resolvent_sq(z) / n,
    }
}

/// `(w^, w^')` from a set of empirical transforms.
pub fn w_hat_from(z: C64, t: &EmpiricalTransforms) -> (C64, C64) {
    let w = crate::equivalents::w_from_parts(z, t.delta_hat, t.delta_tilde_hat);
    let wp = crate::equivalents::w_derivative_from_parts(
        z,
        t.delta_hat,
        t.delta_tilde_hat,
        t.delta_hat_prime,
        t.delta_tilde_hat_prime,
    );
    (w, wp)
}

pub fn w_hat_and_derivative(sample: &Sample, pt: &EvaluationPoint) -> (C64, C64) {
    w_hat_from(pt.z(), &empirical_stieltjes(sample, pt))
}

/// Result of automatic contour placement.
#[derive(Debug, Clone, Copy)]
pub struct ContourSelection {
    pub contour: ContourSpec,
    /// Signal rank implied by the split (hinted or detected).
    pub rank: usize,
    /// Set when `r_hint = 0` forces a contour around the whole spectrum.
    pub degenerate: bool,
    /// Width of the eigenvalue gap the right edge passes through.
    pub gap: f64,
}

/// Place the rectangle around the noise bulk of a sample spectrum.
///
/// The left edge sits at `-max(0.5, 0.1 lambda_max)`, safely left of the
/// (nonnegative) spectrum. The right edge bisects the gap between the
/// `N - r` smallest and the `r` largest eigenvalues, with `r` taken from
/// `r_hint` or detected as the largest spacing; detection fails loudly when
/// no spacing exceeds twice the median.
pub fn auto_contour(
    sample: &Sample,
    r_hint: Option<usize>,
    y: f64,
    nodes_per_edge: usize,
) -> Result<ContourSelection> {
    let eigs = sample.eig().values();
    let n_rows = eigs.len();
    if n_rows < 2 {
        return Err(Error::SeparationFailure("need at least two eigenvalues".into()));
    }
    let lam_max = eigs[n_rows - 1];
    let x_minus = -(0.5f64.max(0.1 * lam_max));

    let (x_plus, rank, degenerate, gap) = match r_hint {
        Some(0) => (lam_max * 1.1, 0, true, 0.0),
        Some(r) if r < n_rows => {
            let lo = eigs[n_rows - r - 1];
            let hi = eigs[n_rows - r];
            (0.5 * (lo + hi), r, false, hi - lo)
        }
        Some(r) => {
            return Err(Error::SeparationFailure(format!(
                "r_hint = {r} leaves no noise eigenvalues (N = {n_rows})"
            )));
        }
        None => {
            let spacings: Vec<f64> = eigs.windows(2).map(|w| w[1] - w[0]).collect();
            let mut sorted = spacings.clone();
            sorted.sort_by(f64::total_cmp);
            let median = sorted[sorted.len() / 2];
            let (best_idx, &best) = spacings
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("nonempty");
            if best < 2.0 * median {
                return Err(Error::SeparationFailure(format!(
                    "largest eigenvalue spacing {best:.3e} does not exceed twice the \
                     median spacing {median:.3e}; supply r_hint"
                )));
            }
            let rank = n_rows - 1 - best_idx;
            (0.5 * (eigs[best_idx] + eigs[best_idx + 1]), rank, false, best)
        }
    };

    Ok(ContourSelection {
        contour: ContourSpec::new(x_minus, x_plus, y, nodes_per_edge)?,
        rank,
        degenerate,
        gap,
    })
}

/// A plug-in estimate of `u^* P u`.
#[derive(Debug, Clone, Copy)]
pub struct ProjectorEstimate {
    /// Real part of the contour integral.
    pub value: f64,
    /// The raw (unsymmetrized) integral.
    pub raw: C64,
    /// Number of quadrature nodes evaluated.
    pub n_used: usize,
    /// Set when the imaginary residual exceeds 10% of the magnitude.
    pub imag_flag: bool,
    pub contour: ContourSpec,
}

/// Evaluate the plug-in estimator over the contour. `u` is normalized
/// internally. Fails if `1 + delta^` nearly vanishes at a node.
pub fn estimate_projector_quadform(
    sample: &Sample,
    u: &CVec,
    contour: &ContourSpec,
) -> Result<ProjectorEstimate> {
    if u.len() != sample.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "u has length {}, expected {}",
            u.len(),
            sample.n_rows()
        )));
    }
    let norm = u.norm();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("u must be nonzero".into()));
    }
    let unit = u / C64::new(norm, 0.0);
    let eig = sample.eig();
    let coords = eig.bilinear_coords(&unit, &unit);
    let n = sample.n_cols() as f64;
    let one = C64::new(1.0, 0.0);

    let mut acc = C64::new(0.0, 0.0);
    let nodes = contour.nodes();
    for node in &nodes {
        let z = node.z;
        let t = EmpiricalTransforms {
            delta_hat: eig.trace_resolvent(z) / n,
            delta_tilde_hat: eig.trace_co_resolvent(z) / n,
            delta_hat_prime: eig.trace_resolvent_sq(z) / n,
            delta_tilde_hat_prime: eig.trace_co_resolvent_sq(z) / n,
        };
        let denom = one + t.delta_hat;
        if denom.norm() < 1e-10 {
            return Err(Error::Numerical(format!(
                "1 + delta^ vanishes at contour node z = {z}"
            )));
        }
        let (_, wp) = w_hat_from(z, &t);
        let uqu = eig.bilinear_resolvent(&coords, z);
        acc += uqu * wp / denom * node.weight;
    }
    let raw = acc / C64::new(0.0, std::f64::consts::TAU);
    Ok(ProjectorEstimate {
        value: raw.re,
        raw,
        n_used: nodes.len(),
        imag_flag: raw.im.abs() > 0.1 * raw.norm(),
        contour: *contour,
    })
}

/// Scalar form of the canonical system in the white-noise regime, driven by
/// the eigenvalues of `A A^*`. Each right-hand side is an `O(N)` sum, which
/// makes dense per-node solves along a contour cheap.
#[derive(Debug, Clone)]
pub struct WhiteNoiseDetEquiv {
    eigs: Vec<f64>,
    vectors: CMat,
    n_rows: usize,
    n_cols: usize,
}

impl WhiteNoiseDetEquiv {
    pub fn from_signal(a: &CMat) -> Self {
        let gram = hermitian_gram(a);
        let (eigs, vectors) = hermitian_eig(&gram);
        WhiteNoiseDetEquiv {
            eigs,
            vectors,
            n_rows: a.nrows(),
            n_cols: a.ncols(),
        }
    }

    pub fn signal_eigenvalues(&self) -> &[f64] {
        &self.eigs
    }

    fn rhs(&self, z: C64, delta: C64, delta_tilde: C64) -> (C64, C64) {
        let one = C64::new(1.0, 0.0);
        let n = self.n_cols as f64;
        let zc = -z * (one + delta_tilde);
        let zr = -z * (one + delta);
        let f: C64 = self
            .eigs
            .iter()
            .map(|&a| (zc + a / (one + delta)).inv())
            .sum::<C64>()
            / n;
        let extra = self.n_cols as f64 - self.n_rows as f64;
        let ft: C64 = (self
            .eigs
            .iter()
            .map(|&a| (zr + a / (one + delta_tilde)).inv())
            .sum::<C64>()
            + zr.inv() * extra)
            / n;
        (f, ft)
    }

    /// Damped Picard iteration, same scheme and contracts as the dense
    /// canonical solver.
    pub fn solve(
        &self,
        pt: &EvaluationPoint,
        opts: &SolverOptions,
        init: Option<(C64, C64)>,
    ) -> Result<CanonicalSolution> {
        opts.validate()?;
        let z = pt.z();
        let ratio = self.n_rows as f64 / self.n_cols as f64;
        let (mut delta, mut delta_tilde) =
            init.unwrap_or_else(|| (-z.inv() * ratio, -z.inv()));
        let mut gamma = opts.damping;
        let mut prev_proxy = f64::INFINITY;
        let mut growth_streak = 0usize;
        let mut iterations = 0usize;
        while iterations < opts.max_iter {
            iterations += 1;
            let (f, _) = self.rhs(z, delta, delta_tilde);
            let delta_next = f * gamma + delta * (1.0 - gamma);
            let (_, ft) = self.rhs(z, delta_next, delta_tilde);
            let delta_tilde_next = ft * gamma + delta_tilde * (1.0 - gamma);

            let proxy = (f - delta).norm() + (ft - delta_tilde).norm();
            if proxy > prev_proxy {
                growth_streak += 1;
                if growth_streak >= 3 {
                    gamma = (gamma * 0.5).max(9.5367431640625e-7);
                    growth_streak = 0;
                }
            } else {
                growth_streak = 0;
            }
            prev_proxy = proxy;

            let change = (delta_next - delta).norm() + (delta_tilde_next - delta_tilde).norm();
            delta = delta_next;
            delta_tilde = delta_tilde_next;
            if change <= opts.tol * (1.0 + delta.norm() + delta_tilde.norm()) {
                let (rf, rft) = self.rhs(z, delta, delta_tilde);
                let residual = (delta - rf).norm().max((delta_tilde - rft).norm());
                if residual <= opts.tol * (1.0 + delta.norm() + delta_tilde.norm()) {
                    return Ok(CanonicalSolution {
                        z,
                        delta,
                        delta_tilde,
                        residual,
                        iterations,
                        converged: true,
                    });
                }
            }
        }
        let (rf, rft) = self.rhs(z, delta, delta_tilde);
        let residual = (delta - rf).norm().max((delta_tilde - rft).norm());
        Err(Error::NoConvergence {
            z_re: z.re,
            z_im: z.im,
            delta_re: delta.re,
            delta_im: delta.im,
            delta_tilde_re: delta_tilde.re,
            delta_tilde_im: delta_tilde.im,
            residual,
            iterations,
        })
    }

    /// `(w, w')` at a solved point; the derivative comes from central
    /// differences of the scalar solves, warm-started at `sol`.
    pub fn w_and_derivative(
        &self,
        pt: &EvaluationPoint,
        sol: &CanonicalSolution,
        opts: &SolverOptions,
        h: Option<f64>,
    ) -> Result<(C64, C64)> {
        let z = pt.z();
        let h = h.unwrap_or(1e-6 * z.norm().max(1.0));
        let plus = EvaluationPoint::new(z + C64::new(h, 0.0)).map_err(|_| {
            Error::InvalidArgument("derivative step exits the valid region".into())
        })?;
        let minus = EvaluationPoint::new(z - C64::new(h, 0.0)).map_err(|_| {
            Error::InvalidArgument("derivative step exits the valid region".into())
        })?;
        let init = Some((sol.delta, sol.delta_tilde));
        let sp = self.solve(&plus, opts, init)?;
        let sm = self.solve(&minus, opts, init)?;
        let dp = (sp.delta - sm.delta) / (2.0 * h);
        let dtp = (sp.delta_tilde - sm.delta_tilde) / (2.0 * h);
        let w = crate::equivalents::w_from_parts(z, sol.delta, sol.delta_tilde);
        let wp = crate::equivalents::w_derivative_from_parts(z, sol.delta, sol.delta_tilde, dp, dtp);
        Ok((w, wp))
    }

    /// Projections `|V^* u|_i^2` of a unit vector on the signal eigenbasis.
    pub fn coords(&self, u: &CVec) -> Vec<f64> {
        let p = self.vectors.adjoint() * u;
        p.iter().map(|c| c.norm_sqr()).collect()
    }

    /// `u^* T(z) u = (1 + delta) sum_i coords_i / (a_i - w)`.
    pub fn quadform_t(&self, coords: &[f64], sol: &CanonicalSolution) -> C64 {
        let one = C64::new(1.0, 0.0);
        let w = crate::equivalents::w_from_parts(sol.z, sol.delta, sol.delta_tilde);
        let s: C64 = self
            .eigs
            .iter()
            .zip(coords)
            .map(|(&a, &c)| (C64::new(a, 0.0) - w).inv() * c)
            .sum();
        s * (one + sol.delta)
    }
}

/// Deterministic counterpart of the estimator: integrate
/// `u^* T(z) u w'(z) / (1 + delta(z))` over the contour using solved
/// transforms. Matches `u^* P u` up to quadrature error when the contour is
/// admissible.
pub fn oracle_projector_quadform(
    a: &CMat,
    u: &CVec,
    contour: &ContourSpec,
    opts: &SolverOptions,
) -> Result<f64> {
    if u.len() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "u has length {}, expected {}",
            u.len(),
            a.nrows()
        )));
    }
    let norm = u.norm();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("u must be nonzero".into()));
    }
    let unit = u / C64::new(norm, 0.0);
    let sys = WhiteNoiseDetEquiv::from_signal(a);
    let coords = sys.coords(&unit);
    let one = C64::new(1.0, 0.0);

    let mut acc = C64::new(0.0, 0.0);
    let mut carry: Option<(C64, C64)> = None;
    for node in contour.nodes() {
        let pt = EvaluationPoint::new(node.z)
            .map_err(|e| Error::Quadrature(format!("node off the admissible set: {e}")))?;
        let sol = sys.solve(&pt, opts, carry)?;
        carry = Some((sol.delta, sol.delta_tilde));
        let denom = one + sol.delta;
        if denom.norm() < 1e-10 {
            return Err(Error::Numerical(format!(
                "1 + delta vanishes at contour node z = {}",
                node.z
            )));
        }
        let (_, wp) = sys.w_and_derivative(&pt, &sol, opts, None)?;
        acc += sys.quadform_t(&coords, &sol) * wp / denom * node.weight;
    }
    let raw = acc / C64::new(0.0, std::f64::consts::TAU);
    Ok(raw.re)
}

/// Winding diagnostics of the `w`-image of a contour: the image should wind
/// once (clockwise) around zero and not at all around any signal eigenvalue
/// of `A A^*`.
#[derive(Debug, Clone)]
pub struct EnclosureReport {
    pub winding_zero: f64,
    pub winding_signal: Vec<f64>,
    pub admissible: bool,
}

pub fn check_enclosure(
    sys: &WhiteNoiseDetEquiv,
    contour: &ContourSpec,
    opts: &SolverOptions,
    signal_tol: f64,
) -> Result<EnclosureReport> {
    let mut image = Vec::new();
    let mut carry: Option<(C64, C64)> = None;
    for node in contour.nodes() {
        let pt = EvaluationPoint::new(node.z)
            .map_err(|e| Error::Quadrature(format!("node off the admissible set: {e}")))?;
        let sol = sys.solve(&pt, opts, carry)?;
        carry = Some((sol.delta, sol.delta_tilde));
        image.push(crate::equivalents::w_from_parts(node.z, sol.delta, sol.delta_tilde));
    }
    let winding_zero = winding_number(&image, C64::new(0.0, 0.0));
    let winding_signal: Vec<f64> = sys
        .eigs
        .iter()
        .filter(|&&a| a > signal_tol)
        .map(|&a| winding_number(&image, C64::new(a, 0.0)))
        .collect();
    let admissible = (winding_zero + 1.0).abs() < 0.1
        && winding_signal.iter().all(|w| w.abs() < 0.1);
    Ok(EnclosureReport {
        winding_zero,
        winding_signal,
        admissible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cmul, max_abs};
    use crate::model::{basis_vector, EntryLaw, ModelSpec};
    use crate::solver::solve_canonical;

    fn planted_spec(n_rows: usize, n_cols: usize, svals: &[f64], seed: u64) -> (ModelSpec, CMat) {
        let a = planted_low_rank(n_rows, n_cols, svals, seed).unwrap();
        let spec = ModelSpec::white_noise(n_rows, n_cols, EntryLaw::CircularComplexGaussian)
            .unwrap()
            .with_signal(a.clone())
            .unwrap();
        (spec, a)
    }

    #[test]
    fn projector_of_zero_is_identity() {
        let (p, r) = true_projector(&CMat::zeros(6, 4), None).unwrap();
        assert_eq!(r, 0);
        assert!(max_abs(&(p - CMat::identity(6, 6))) < 1e-14);
    }

    #[test]
    fn projector_of_rank_one() {
        let mut a = CMat::zeros(5, 3);
        a[(0, 1)] = C64::new(3.0, 0.0); // 3 e_1 f^*
        let (p, r) = true_projector(&a, None).unwrap();
        assert_eq!(r, 1);
        let mut expected = CMat::identity(5, 5);
        expected[(0, 0)] = C64::new(0.0, 0.0);
        assert!(max_abs(&(p - expected)) < 1e-12);
    }

    #[test]
    fn projector_properties_at_rank_three() {
        let a = planted_low_rank(20, 30, &[3.0, 2.0, 1.0], 5).unwrap();
        let (p, r) = true_projector(&a, None).unwrap();
        assert_eq!(r, 3);
        assert!((p.trace().re - 17.0).abs() < 1e-10);
        assert!(max_abs(&(cmul(&p, &p) - p.clone())) < 1e-12);
        assert!(max_abs(&(p.clone() - p.adjoint())) < 1e-12);
    }

    #[test]
    fn full_rank_signal_is_rejected() {
        let a = CMat::identity(4, 4);
        assert!(true_projector(&a, None).is_err());
    }

    #[test]
    fn empirical_transforms_match_direct_inverses() {
        let spec = ModelSpec::white_noise(8, 12, EntryLaw::CircularComplexGaussian).unwrap();
        let s = spec.sample(3);
        let pt = EvaluationPoint::from_parts(-0.7, 0.4).unwrap();
        let t = empirical_stieltjes(&s, &pt);
        let q = s.resolvent(&pt).unwrap();
        let qt = s.co_resolvent(&pt).unwrap();
        assert!((t.delta_hat - q.trace() / C64::new(12.0, 0.0)).norm() < 1e-11);
        assert!((t.delta_tilde_hat - qt.trace() / C64::new(12.0, 0.0)).norm() < 1e-11);
        let q2 = cmul(&q, &q);
        assert!((t.delta_hat_prime - q2.trace() / C64::new(12.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn empirical_derivative_matches_finite_difference() {
        let spec = ModelSpec::white_noise(10, 15, EntryLaw::UniformPhase).unwrap();
        let s = spec.sample(9);
        let z = C64::new(-1.0, 0.6);
        let h = 1e-5;
        let at = |z: C64| empirical_stieltjes(&s, &EvaluationPoint::new(z).unwrap());
        let base = at(z);
        let fd = (at(z + C64::new(h, 0.0)).delta_hat - at(z - C64::new(h, 0.0)).delta_hat)
            / (2.0 * h);
        assert!((fd - base.delta_hat_prime).norm() < 1e-7);
        // conjugate symmetry
        assert!((at(z.conj()).delta_hat - base.delta_hat.conj()).norm() < 1e-12);
    }

    #[test]
    fn w_hat_stub_values() {
        let t = EmpiricalTransforms {
            delta_hat: C64::new(0.0, 0.0),
            delta_tilde_hat: C64::new(0.0, 0.0),
            delta_hat_prime: C64::new(0.0, 0.0),
            delta_tilde_hat_prime: C64::new(0.0, 0.0),
        };
        let z = C64::new(0.3, 0.4);
        let (w, wp) = w_hat_from(z, &t);
        assert_eq!(w, z);
        assert_eq!(wp, C64::new(1.0, 0.0));
    }

    #[test]
    fn w_hat_derivative_matches_finite_difference() {
        let spec = ModelSpec::white_noise(10, 20, EntryLaw::CircularComplexGaussian).unwrap();
        let s = spec.sample(4);
        let z = C64::new(2.0, 0.8);
        let h = 1e-5;
        let w_at = |z: C64| w_hat_and_derivative(&s, &EvaluationPoint::new(z).unwrap()).0;
        let (_, wp) = w_hat_and_derivative(&s, &EvaluationPoint::new(z).unwrap());
        let fd = (w_at(z + C64::new(h, 0.0)) - w_at(z - C64::new(h, 0.0))) / (2.0 * h);
        assert!((fd - wp).norm() < 1e-6, "fd {fd} vs wp {wp}");
    }

    #[test]
    fn auto_contour_on_planted_instance() {
        let (spec, a) = planted_spec(40, 80, &[5.0, 4.0], 11);
        let s = spec.sample(1);
        let sel = auto_contour(&s, None, 0.5, 16).unwrap();
        assert_eq!(sel.rank, 2);
        assert!(!sel.degenerate);
        // right edge strictly between the noise bulk and the signal spikes
        let eigs = s.eig().values();
        let bulk_edge = eigs[40 - 3]; // largest noise eigenvalue
        let sys = WhiteNoiseDetEquiv::from_signal(&a);
        let smallest_signal = sys.signal_eigenvalues()[40 - 2];
        assert!(sel.contour.x_plus > bulk_edge, "{} vs {}", sel.contour.x_plus, bulk_edge);
        assert!(
            sel.contour.x_plus < smallest_signal,
            "{} vs {}",
            sel.contour.x_plus,
            smallest_signal
        );
        assert!(sel.contour.x_minus < 0.0);
    }

    #[test]
    fn auto_contour_degenerate_and_failure_modes() {
        let (spec, _) = planted_spec(20, 40, &[5.0], 2);
        let s = spec.sample(3);
        let sel = auto_contour(&s, Some(0), 0.5, 8).unwrap();
        assert!(sel.degenerate);
        assert!(sel.contour.x_plus > s.eig().values()[19]);

        // perfectly uniform spectrum: no gap exceeds twice the median spacing
        let diag = CMat::from_fn(10, 10, |i, j| {
            if i == j {
                C64::new(1.0 + i as f64, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let flat = Sample::from_matrix(diag, 0);
        match auto_contour(&flat, None, 0.5, 8) {
            Err(Error::SeparationFailure(_)) => {}
            other => panic!("expected separation failure, got {other:?}"),
        }
    }

    #[test]
    fn scalar_system_matches_dense_solver() {
        let (spec, a) = planted_spec(12, 20, &[3.0, 2.0], 7);
        let sys = WhiteNoiseDetEquiv::from_signal(&a);
        let opts = SolverOptions::default();
        for &(re, im) in &[(-1.0, 0.0), (4.0, 0.5), (-0.4, 0.1)] {
            let pt = EvaluationPoint::from_parts(re, im).unwrap();
            let dense = solve_canonical(&spec, &pt, &opts).unwrap();
            let scalar = sys.solve(&pt, &opts, None).unwrap();
            assert!(
                (dense.delta - scalar.delta).norm() < 1e-10,
                "at {re}+{im}i: {} vs {}",
                dense.delta,
                scalar.delta
            );
            assert!((dense.delta_tilde - scalar.delta_tilde).norm() < 1e-10);
        }
    }

    #[test]
    fn estimator_recovers_projector_on_planted_instance() {
        let (spec, a) = planted_spec(40, 80, &[5.0, 4.0], 23);
        let s = spec.sample(5);
        let sel = auto_contour(&s, Some(2), 0.5, 64).unwrap();
        let (p, _) = true_projector(&a, None).unwrap();

        let sys = WhiteNoiseDetEquiv::from_signal(&a);
        let opts = SolverOptions::default();
        let enc = check_enclosure(&sys, &sel.contour, &opts, 1e-6).unwrap();
        assert!(enc.admissible, "{enc:?}");

        // u orthogonal to col(A): third left singular direction and beyond
        let svd = a.clone().svd(true, false);
        let u_mat = svd.u.unwrap();
        let u_perp = CVec::from_column_slice(u_mat.column(5).as_slice());
        let truth_perp = crate::model::bilinear_form(&u_perp, &p, &u_perp).unwrap().re;
        assert!((truth_perp - 1.0).abs() < 1e-10);
        let est_perp = estimate_projector_quadform(&s, &u_perp, &sel.contour).unwrap();
        assert!(
            (est_perp.value - truth_perp).abs() < 0.15,
            "perp estimate {} vs {}",
            est_perp.value,
            truth_perp
        );

        let u_in = CVec::from_column_slice(u_mat.column(0).as_slice());
        let truth_in = crate::model::bilinear_form(&u_in, &p, &u_in).unwrap().re;
        assert!(truth_in.abs() < 1e-10);
        let est_in = estimate_projector_quadform(&s, &u_in, &sel.contour).unwrap();
        assert!(
            (est_in.value - truth_in).abs() < 0.15,
            "in-subspace estimate {}",
            est_in.value
        );
    }

    #[test]
    fn quadrature_doubling_is_converged() {
        let (spec, _) = planted_spec(40, 80, &[5.0, 4.0], 31);
        let s = spec.sample(8);
        let sel_64 = auto_contour(&s, Some(2), 0.5, 64).unwrap();
        let sel_128 = auto_contour(&s, Some(2), 0.5, 128).unwrap();
        let u = basis_vector(40, 0);
        let e64 = estimate_projector_quadform(&s, &u, &sel_64.contour).unwrap();
        let e128 = estimate_projector_quadform(&s, &u, &sel_128.contour).unwrap();
        assert!(
            (e64.value - e128.value).abs() < 1e-3,
            "{} vs {}",
            e64.value,
            e128.value
        );
    }

    #[test]
    fn contour_height_does_not_matter() {
        // the integrand is a fixed rational function of the sample, so two
        // admissible contours agree up to their quadrature errors, which are
        // estimated by node doubling (a thin rectangle needs far more nodes
        // for the same accuracy)
        let (spec, _) = planted_spec(40, 80, &[5.0, 4.0], 13);
        let s = spec.sample(2);
        let u = basis_vector(40, 3);
        let mut estimates = Vec::new();
        let mut tol = 0.0;
        for &y in &[0.1, 0.5] {
            let sel = auto_contour(&s, Some(2), y, 64).unwrap();
            let coarse = estimate_projector_quadform(&s, &u, &sel.contour).unwrap();
            let fine_contour = auto_contour(&s, Some(2), y, 128).unwrap();
            let fine = estimate_projector_quadform(&s, &u, &fine_contour.contour).unwrap();
            estimates.push(coarse.value);
            tol += (coarse.value - fine.value).abs();
        }
        assert!(
            (estimates[0] - estimates[1]).abs() <= 2.0 * tol + 1e-6,
            "{} vs {} (tol {tol})",
            estimates[0],
            estimates[1]
        );
    }

    #[test]
    fn oracle_matches_closed_form_projector() {
        // rank-one signal: P = I - e1 e1^*
        let mut a = CMat::zeros(12, 24);
        a[(0, 0)] = C64::new(4.0, 0.0);
        let contour = {
            let sys = WhiteNoiseDetEquiv::from_signal(&a);
            let top = sys.signal_eigenvalues()[11];
            ContourSpec::new(-0.5, 0.5 * top, 0.5, 48).unwrap()
        };
        let opts = SolverOptions::default();
        let e2 = basis_vector(12, 1);
        let val = oracle_projector_quadform(&a, &e2, &contour, &opts).unwrap();
        assert!((val - 1.0).abs() < 0.05, "e2: {val}");
        let e1 = basis_vector(12, 0);
        let val0 = oracle_projector_quadform(&a, &e1, &contour, &opts).unwrap();
        assert!(val0.abs() < 0.05, "e1: {val0}");
    }

    #[test]
    fn oracle_and_estimator_agree_at_scale() {
        let (spec, a) = planted_spec(80, 160, &[5.0, 4.0], 3);
        let s = spec.sample(17);
        let sel = auto_contour(&s, Some(2), 0.5, 64).unwrap();
        let u = basis_vector(80, 7);
        let est = estimate_projector_quadform(&s, &u, &sel.contour).unwrap();
        let orc = oracle_projector_quadform(&a, &u, &sel.contour, &SolverOptions::default())
            .unwrap();
        assert!((est.value - orc).abs() < 0.1, "est {} vs oracle {}", est.value, orc);
    }
}
