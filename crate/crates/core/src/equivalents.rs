//! Deterministic equivalents of the resolvent and co-resolvent, and the
//! stability diagnostics attached to them.
//!
//! Given a solved `(delta, delta~)`, the pair
//!
//! ```text
//! T  = ( -z(I + delta~ D) + A (I + delta D~)^{-1} A^* )^{-1}
//! T~ = ( -z(I + delta D~) + A^* (I + delta~ D)^{-1} A )^{-1}
//! ```
//!
//! approximates `Q` and `Q~` in the bilinear-form sense. The intermediate
//! pair `(R, R~)` uses the same construction with externally supplied
//! `(alpha, alpha~)` (typically Monte Carlo estimates of the expected
//! weighted resolvent traces), which keeps this module fully deterministic.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{cmul, frobenius_norm, inverse, max_abs, spectral_norm, CMat};
use crate::model::{EvaluationPoint, ModelSpec};
use crate::solver::CanonicalSolution;

pub type C64 = Complex64;

/// Deterministic equivalent matrices at a point, with the solution they were
/// built from.
#[derive(Debug, Clone)]
pub struct EquivalentPair {
    pub z: C64,
    pub t: CMat,
    pub t_tilde: CMat,
    pub solution: CanonicalSolution,
}

/// The same matrices built from externally supplied `(alpha, alpha~)`.
#[derive(Debug, Clone)]
pub struct IntermediatePair {
    pub z: C64,
    pub r: CMat,
    pub r_tilde: CMat,
    pub alpha: C64,
    pub alpha_tilde: C64,
    pub norm_r: f64,
    pub norm_r_tilde: f64,
    /// Whether both norms respect the `1/dist(z, R+)` resolvent bound. With
    /// noisy Monte Carlo `(alpha, alpha~)` a small excess is possible and is
    /// reported rather than rejected.
    pub norm_bound_ok: bool,
}

/// Shared constructor for `T`-shaped matrices: plug any `(s, s~)` into the
/// canonical formulas. Diagonal closed form when `A = 0`.
fn equivalent_matrices(spec: &ModelSpec, z: C64, s: C64, s_tilde: C64) -> Result<(CMat, CMat)> {
    let one = C64::new(1.0, 0.0);
    let n_rows = spec.n_rows();
    let n_cols = spec.n_cols();
    if spec.a_is_zero() {
        let t = CMat::from_fn(n_rows, n_rows, |i, j| {
            if i == j {
                (-z * (one + s_tilde * spec.d()[i])).inv()
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let t_tilde = CMat::from_fn(n_cols, n_cols, |i, j| {
            if i == j {
                (-z * (one + s * spec.d_tilde()[i])).inv()
            } else {
                C64::new(0.0, 0.0)
            }
        });
        return Ok((t, t_tilde));
    }
    let a = spec.a();
    let mut a_scaled = a.clone();
    for (j, &dj) in spec.d_tilde().iter().enumerate() {
        let w = (one + s * dj).inv();
        a_scaled.column_mut(j).iter_mut().for_each(|c| *c *= w);
    }
    let mut inner = cmul(&a_scaled, &a.adjoint());
    for (i, &di) in spec.d().iter().enumerate() {
        inner[(i, i)] += -z * (one + s_tilde * di);
    }
    let t = inverse(&inner)?;

    let mut a_row_scaled = a.clone();
    for (i, &di) in spec.d().iter().enumerate() {
        let v = (one + s_tilde * di).inv();
        a_row_scaled.row_mut(i).iter_mut().for_each(|c| *c *= v);
    }
    let mut inner_t = cmul(&a.adjoint(), &a_row_scaled);
    for (j, &dj) in spec.d_tilde().iter().enumerate() {
        inner_t[(j, j)] += -z * (one + s * dj);
    }
    let t_tilde = inverse(&inner_t)?;
    Ok((t, t_tilde))
}

/// Build `(T, T~)` from a converged canonical solution.
pub fn build_t(spec: &ModelSpec, sol: &CanonicalSolution) -> Result<EquivalentPair> {
    if !sol.converged {
        return Err(Error::InvalidArgument(
            "build_t requires a converged canonical solution".into(),
        ));
    }
    let (t, t_tilde) = equivalent_matrices(spec, sol.z, sol.delta, sol.delta_tilde)?;
    Ok(EquivalentPair {
        z: sol.z,
        t,
        t_tilde,
        solution: *sol,
    })
}

/// Build `(R, R~)` from externally estimated `(alpha, alpha~)`.
pub fn build_r(
    spec: &ModelSpec,
    pt: &EvaluationPoint,
    alpha: C64,
    alpha_tilde: C64,
) -> Result<IntermediatePair> {
    let z = pt.z();
    let (r, r_tilde) = equivalent_matrices(spec, z, alpha, alpha_tilde)?;
    let bound = 1.0 / pt.dist_to_real_axis();
    let norm_r = spectral_norm(&r);
    let norm_r_tilde = spectral_norm(&r_tilde);
    let norm_bound_ok = norm_r <= bound * (1.0 + 1e-10) && norm_r_tilde <= bound * (1.0 + 1e-10);
    Ok(IntermediatePair {
        z,
        r,
        r_tilde,
        alpha,
        alpha_tilde,
        norm_r,
        norm_r_tilde,
        norm_bound_ok,
    })
}

impl EquivalentPair {
    /// `(Tr D T / n, Tr D~ T~ / n)`; must reproduce `(delta, delta~)` up to
    /// solver tolerance.
    pub fn weighted_traces(&self, spec: &ModelSpec) -> (C64, C64) {
        let n = spec.n_cols() as f64;
        let td: C64 = spec
            .d()
            .iter()
            .enumerate()
            .map(|(i, &di)| self.t[(i, i)] * di)
            .sum();
        let tdt: C64 = spec
            .d_tilde()
            .iter()
            .enumerate()
            .map(|(j, &dj)| self.t_tilde[(j, j)] * dj)
            .sum();
        (td / n, tdt / n)
    }

    /// Max deviation of the weighted traces from the solved `(delta, delta~)`.
    pub fn trace_consistency(&self, spec: &ModelSpec) -> f64 {
        let (td, tdt) = self.weighted_traces(spec);
        (td - self.solution.delta)
            .norm()
            .max((tdt - self.solution.delta_tilde).norm())
    }

    pub fn norm_t(&self) -> f64 {
        spectral_norm(&self.t)
    }

    pub fn norm_t_tilde(&self) -> f64 {
        spectral_norm(&self.t_tilde)
    }

    /// Residual of the exchange identity
    /// `(I + delta D~)^{-1} A^* T = T~ A^* (I + delta~ D)^{-1}`.
    pub fn duality_residual(&self, spec: &ModelSpec) -> f64 {
        let one = C64::new(1.0, 0.0);
        let a = spec.a();
        let mut lhs = cmul(&a.adjoint(), &self.t);
        for (j, &dj) in spec.d_tilde().iter().enumerate() {
            let w = (one + self.solution.delta * dj).inv();
            lhs.row_mut(j).iter_mut().for_each(|c| *c *= w);
        }
        let mut a_scaled = a.adjoint();
        for (i, &di) in spec.d().iter().enumerate() {
            let v = (one + self.solution.delta_tilde * di).inv();
            a_scaled.column_mut(i).iter_mut().for_each(|c| *c *= v);
        }
        let rhs = cmul(&self.t_tilde, &a_scaled);
        max_abs(&(lhs - rhs))
    }
}

/// The spectral-variable change `w(z) = z (1 + delta)(1 + delta~)`.
pub fn w_from_parts(z: C64, delta: C64, delta_tilde: C64) -> C64 {
    let one = C64::new(1.0, 0.0);
    z * (one + delta) * (one + delta_tilde)
}

pub fn w_of_z(pt: &EvaluationPoint, sol: &CanonicalSolution) -> C64 {
    w_from_parts(pt.z(), sol.delta, sol.delta_tilde)
}

/// Derivative of `w` from the transforms and their derivatives.
pub fn w_derivative_from_parts(
    z: C64,
    delta: C64,
    delta_tilde: C64,
    delta_prime: C64,
    delta_tilde_prime: C64,
) -> C64 {
    let one = C64::new(1.0, 0.0);
    (one + delta) * (one + delta_tilde)
        + z * delta_prime * (one + delta_tilde)
        + z * delta_tilde_prime * (one + delta)
}

/// White-noise closed form `T = (1 + delta) (A A^* - w(z) I)^{-1}`.
///
/// Only valid for specs with `D = I`, `D~ = I`; must agree with [`build_t`]
/// there.
pub fn white_noise_t(a: &CMat, pt: &EvaluationPoint, sol: &CanonicalSolution) -> Result<CMat> {
    let one = C64::new(1.0, 0.0);
    let w = w_from_parts(pt.z(), sol.delta, sol.delta_tilde);
    let mut shifted = crate::linalg::hermitian_gram(a);
    for i in 0..shifted.nrows() {
        shifted[(i, i)] -= w;
    }
    let inv = inverse(&shifted)?;
    Ok(inv * (one + sol.delta))
}

/// Scalar diagnostics controlling the stability of the coefficient system
/// behind the equivalents. All six trace quantities are non-negative reals
/// by construction (each is a scaled squared Frobenius norm).
#[derive(Debug, Clone, Copy)]
pub struct StabilityReport {
    pub z: C64,
    pub u1: f64,
    pub u1_tilde: f64,
    pub v1: f64,
    pub v1_tilde: f64,
    pub w1: f64,
    pub w1_tilde: f64,
    /// `(1 - u1)(1 - u1~) - |z|^2 v1 v1~`; strictly positive off the
    /// positive real axis.
    pub det_i_minus_c1: f64,
}

fn scale_rows_real(m: &mut CMat, weights: &[f64]) {
    for (i, &w) in weights.iter().enumerate() {
        m.row_mut(i).iter_mut().for_each(|c| *c *= w);
    }
}

fn scale_cols_complex(m: &mut CMat, weights: &[C64]) {
    for (j, &w) in weights.iter().enumerate() {
        m.column_mut(j).iter_mut().for_each(|c| *c *= w);
    }
}

pub fn stability_report(spec: &ModelSpec, sol: &CanonicalSolution) -> Result<StabilityReport> {
    let pair = build_t(spec, sol)?;
    stability_report_from_pair(spec, &pair)
}

pub fn stability_report_from_pair(
    spec: &ModelSpec,
    pair: &EquivalentPair,
) -> Result<StabilityReport> {
    let z = pair.z;
    let one = C64::new(1.0, 0.0);
    let n = spec.n_cols() as f64;
    let d_sqrt: Vec<f64> = spec.d().iter().map(|v| v.sqrt()).collect();
    let dt_sqrt: Vec<f64> = spec.d_tilde().iter().map(|v| v.sqrt()).collect();
    let delta = pair.solution.delta;
    let delta_tilde = pair.solution.delta_tilde;

    // u1: X = D^{1/2} T A conj(W) D~^{1/2}, W = (I + delta D~)^{-1}
    let (u1, u1_tilde) = if spec.a_is_zero() {
        (0.0, 0.0)
    } else {
        let mut x = cmul(&pair.t, spec.a());
        let col_w: Vec<C64> = spec
            .d_tilde()
            .iter()
            .zip(&dt_sqrt)
            .map(|(&dj, &sq)| (one + delta * dj).inv().conj() * sq)
            .collect();
        scale_cols_complex(&mut x, &col_w);
        scale_rows_real(&mut x, &d_sqrt);
        let u1 = frobenius_norm(&x).powi(2) / n;

        let mut xt = cmul(&pair.t_tilde, &spec.a().adjoint());
        let col_v: Vec<C64> = spec
            .d()
            .iter()
            .zip(&d_sqrt)
            .map(|(&di, &sq)| (one + delta_tilde * di).inv() * sq)
            .collect();
        scale_cols_complex(&mut xt, &col_v);
        scale_rows_real(&mut xt, &dt_sqrt);
        let u1_tilde = frobenius_norm(&xt).powi(2) / n;
        (u1, u1_tilde)
    };

    // v1 = |D^{1/2} T D^{1/2}|_F^2 / n, w1 = |D^{1/2} T|_F^2 / n
    let mut td = pair.t.clone();
    scale_rows_real(&mut td, &d_sqrt);
    let w1 = frobenius_norm(&td).powi(2) / n;
    let col_d: Vec<C64> = d_sqrt.iter().map(|&s| C64::new(s, 0.0)).collect();
    scale_cols_complex(&mut td, &col_d);
    let v1 = frobenius_norm(&td).powi(2) / n;

    let mut tdt = pair.t_tilde.clone();
    scale_rows_real(&mut tdt, &dt_sqrt);
    let w1_tilde = frobenius_norm(&tdt).powi(2) / n;
    let col_dt: Vec<C64> = dt_sqrt.iter().map(|&s| C64::new(s, 0.0)).collect();
    scale_cols_complex(&mut tdt, &col_dt);
    let v1_tilde = frobenius_norm(&tdt).powi(2) / n;

    let det_i_minus_c1 = (1.0 - u1) * (1.0 - u1_tilde) - z.norm_sqr() * v1 * v1_tilde;

    Ok(StabilityReport {
        z,
        u1,
        u1_tilde,
        v1,
        v1_tilde,
        w1,
        w1_tilde,
        det_i_minus_c1,
    })
}

/// Best-effort diagnostics for the mixed and estimated coefficient systems,
/// computed from Monte Carlo `(alpha, alpha~)`. The mixed coefficients are
/// complex; their determinant uses `z^2`, not `|z|^2`.
#[derive(Debug, Clone, Copy)]
pub struct ExtendedStabilityReport {
    pub z: C64,
    pub u0: C64,
    pub u0_tilde: C64,
    pub v0: C64,
    pub v0_tilde: C64,
    pub det_i_minus_c0: C64,
    pub u2: f64,
    pub u2_tilde: f64,
    pub v2: f64,
    pub v2_tilde: f64,
    pub det_i_minus_c2: f64,
}

pub fn extended_stability_report(
    spec: &ModelSpec,
    pt: &EvaluationPoint,
    sol: &CanonicalSolution,
    alpha: C64,
    alpha_tilde: C64,
) -> Result<ExtendedStabilityReport> {
    let z = pt.z();
    let one = C64::new(1.0, 0.0);
    let n = spec.n_cols() as f64;
    let pair = build_t(spec, sol)?;
    let inter = build_r(spec, pt, alpha, alpha_tilde)?;
    let d_sqrt: Vec<f64> = spec.d().iter().map(|v| v.sqrt()).collect();
    let dt_sqrt: Vec<f64> = spec.d_tilde().iter().map(|v| v.sqrt()).collect();

    let diag_c = |vals: &[C64]| -> CMat {
        CMat::from_fn(vals.len(), vals.len(), |i, j| {
            if i == j { vals[i] } else { C64::new(0.0, 0.0) }
        })
    };
    let d_mat = diag_c(&spec.d().iter().map(|&v| C64::new(v, 0.0)).collect::<Vec<_>>());
    let dt_mat = diag_c(&spec.d_tilde().iter().map(|&v| C64::new(v, 0.0)).collect::<Vec<_>>());

    let (u0, u0_tilde, u2, u2_tilde) = if spec.a_is_zero() {
        (C64::new(0.0, 0.0), C64::new(0.0, 0.0), 0.0, 0.0)
    } else {
        let a = spec.a();
        // u0 = Tr[(R A Wa D~ Wd A^*) (T D)] / n
        let mut ra = cmul(&inter.r, a);
        let wa_dt_wd: Vec<C64> = spec
            .d_tilde()
            .iter()
            .map(|&dj| (one + alpha * dj).inv() * dj * (one + sol.delta * dj).inv())
            .collect();
        scale_cols_complex(&mut ra, &wa_dt_wd);
        let lhs = cmul(&ra, &a.adjoint());
        let mut t_d = pair.t.clone();
        let dcol: Vec<C64> = spec.d().iter().map(|&v| C64::new(v, 0.0)).collect();
        scale_cols_complex(&mut t_d, &dcol);
        let u0 = cmul(&lhs, &t_d).trace() / n;

        let mut rta = cmul(&inter.r_tilde, &a.adjoint());
        let va_d_vd: Vec<C64> = spec
            .d()
            .iter()
            .map(|&di| (one + alpha_tilde * di).inv() * di * (one + sol.delta_tilde * di).inv())
            .collect();
        scale_cols_complex(&mut rta, &va_d_vd);
        let lhs_t = cmul(&rta, a);
        let mut tt_dt = pair.t_tilde.clone();
        let dtcol: Vec<C64> = spec.d_tilde().iter().map(|&v| C64::new(v, 0.0)).collect();
        scale_cols_complex(&mut tt_dt, &dtcol);
        let u0_tilde = cmul(&lhs_t, &tt_dt).trace() / n;

        // u2: Frobenius form with (R, alpha) in place of (T, delta)
        let mut x2 = cmul(&inter.r, a);
        let col_w2: Vec<C64> = spec
            .d_tilde()
            .iter()
            .zip(&dt_sqrt)
            .map(|(&dj, &sq)| (one + alpha * dj).inv().conj() * sq)
            .collect();
        scale_cols_complex(&mut x2, &col_w2);
        scale_rows_real(&mut x2, &d_sqrt);
        let u2 = frobenius_norm(&x2).powi(2) / n;

        let mut x2t = cmul(&inter.r_tilde, &a.adjoint());
        let col_v2: Vec<C64> = spec
            .d()
            .iter()
            .zip(&d_sqrt)
            .map(|(&di, &sq)| (one + alpha_tilde * di).inv() * sq)
            .collect();
        scale_cols_complex(&mut x2t, &col_v2);
        scale_rows_real(&mut x2t, &dt_sqrt);
        let u2_tilde = frobenius_norm(&x2t).powi(2) / n;
        (u0, u0_tilde, u2, u2_tilde)
    };

    // v0 = Tr[D R D T] / n, v0~ analog
    let v0 = cmul(&cmul(&d_mat, &inter.r), &cmul(&d_mat, &pair.t)).trace() / n;
    let v0_tilde = cmul(&cmul(&dt_mat, &inter.r_tilde), &cmul(&dt_mat, &pair.t_tilde)).trace() / n;

    let mut rd = inter.r.clone();
    scale_rows_real(&mut rd, &d_sqrt);
    let dcol_sq: Vec<C64> = d_sqrt.iter().map(|&s| C64::new(s, 0.0)).collect();
    scale_cols_complex(&mut rd, &dcol_sq);
    let v2 = frobenius_norm(&rd).powi(2) / n;

    let mut rtd = inter.r_tilde.clone();
    scale_rows_real(&mut rtd, &dt_sqrt);
    let dtcol_sq: Vec<C64> = dt_sqrt.iter().map(|&s| C64::new(s, 0.0)).collect();
    scale_cols_complex(&mut rtd, &dtcol_sq);
    let v2_tilde = frobenius_norm(&rtd).powi(2) / n;

    let det_i_minus_c0 = (one - u0) * (one - u0_tilde) - z * z * v0 * v0_tilde;
    let det_i_minus_c2 = (1.0 - u2) * (1.0 - u2_tilde) - z.norm_sqr() * v2 * v2_tilde;

    Ok(ExtendedStabilityReport {
        z,
        u0,
        u0_tilde,
        v0,
        v0_tilde,
        det_i_minus_c0,
        u2,
        u2_tilde,
        v2,
        v2_tilde,
        det_i_minus_c2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EntryLaw;
    use crate::solver::{solve_canonical, SolverOptions};

    const GOLDEN: f64 = 0.618033988749894848;

    fn mp_spec(n: usize) -> ModelSpec {
        ModelSpec::white_noise(n, n, EntryLaw::CircularComplexGaussian).unwrap()
    }

    fn pt(re: f64, im: f64) -> EvaluationPoint {
        EvaluationPoint::from_parts(re, im).unwrap()
    }

    fn signal_spec() -> ModelSpec {
        let mut a = CMat::zeros(5, 7);
        a[(0, 0)] = C64::new(2.0, 0.5);
        a[(1, 3)] = C64::new(-1.0, 1.0);
        a[(4, 6)] = C64::new(0.0, -1.5);
        ModelSpec::new(
            vec![1.0, 2.0, 0.5, 1.5, 1.0],
            vec![1.0, 0.8, 1.2, 1.0, 0.9, 1.1, 0.6],
            a,
            EntryLaw::CircularComplexGaussian,
        )
        .unwrap()
    }

    #[test]
    fn zero_signal_equivalent_is_diagonal() {
        let spec = ModelSpec::without_signal(
            vec![1.0, 2.0, 3.0],
            vec![1.0, 1.0],
            EntryLaw::UniformPhase,
        )
        .unwrap();
        let p = pt(-1.0, 0.0);
        let sol = solve_canonical(&spec, &p, &SolverOptions::default()).unwrap();
        let pair = build_t(&spec, &sol).unwrap();
        let one = C64::new(1.0, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j {
                    (-p.z() * (one + sol.delta_tilde * spec.d()[i])).inv()
                } else {
                    C64::new(0.0, 0.0)
                };
                assert!((pair.t[(i, j)] - expected).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn mp_equivalent_is_golden_scalar() {
        let spec = mp_spec(4);
        let sol = solve_canonical(&spec, &pt(-1.0, 0.0), &SolverOptions::default()).unwrap();
        let pair = build_t(&spec, &sol).unwrap();
        for i in 0..4 {
            assert!((pair.t[(i, i)].re - GOLDEN).abs() < 1e-11);
        }
    }

    #[test]
    fn trace_consistency_within_tolerance() {
        let spec = signal_spec();
        let opts = SolverOptions::default();
        let sol = solve_canonical(&spec, &pt(-0.8, 0.6), &opts).unwrap();
        let pair = build_t(&spec, &sol).unwrap();
        assert!(pair.trace_consistency(&spec) <= 10.0 * opts.tol);
    }

    #[test]
    fn r_with_solved_inputs_equals_t() {
        let spec = signal_spec();
        let p = pt(-1.0, 0.5);
        let sol = solve_canonical(&spec, &p, &SolverOptions::default()).unwrap();
        let pair = build_t(&spec, &sol).unwrap();
        let inter = build_r(&spec, &p, sol.delta, sol.delta_tilde).unwrap();
        assert!(max_abs(&(&inter.r - &pair.t)) < 1e-13);
        assert!(max_abs(&(&inter.r_tilde - &pair.t_tilde)) < 1e-13);
        assert!(inter.norm_bound_ok);
    }

    #[test]
    fn norm_bound_and_conjugate_symmetry() {
        let spec = signal_spec();
        let opts = SolverOptions::default();
        for &(re, im) in &[(-1.0, 0.0), (0.5, 1.0), (-0.3, 0.2), (2.0, 0.7)] {
            let p = pt(re, im);
            let sol = solve_canonical(&spec, &p, &opts).unwrap();
            let pair = build_t(&spec, &sol).unwrap();
            assert!(pair.norm_t() * p.dist_to_real_axis() <= 1.0 + 1e-10);
            assert!(pair.norm_t_tilde() * p.dist_to_real_axis() <= 1.0 + 1e-10);
            if im != 0.0 {
                let solc = solve_canonical(&spec, &p.conj(), &opts).unwrap();
                let pairc = build_t(&spec, &solc).unwrap();
                assert!(max_abs(&(pairc.t.clone() - pair.t.adjoint())) < 1e-9);
            }
        }
    }

    #[test]
    fn duality_identity_holds() {
        let spec = signal_spec();
        let sol = solve_canonical(&spec, &pt(-1.0, 0.8), &SolverOptions::default()).unwrap();
        let pair = build_t(&spec, &sol).unwrap();
        assert!(pair.duality_residual(&spec) < 1e-10);
    }

    #[test]
    fn w_values() {
        let z = C64::new(0.3, -0.4);
        assert_eq!(w_from_parts(z, C64::new(0.0, 0.0), C64::new(0.0, 0.0)), z);

        let spec = mp_spec(4);
        let p = pt(-1.0, 0.0);
        let sol = solve_canonical(&spec, &p, &SolverOptions::default()).unwrap();
        let w = w_of_z(&p, &sol);
        let phi = 1.0 + GOLDEN;
        assert!((w.re + phi * phi).abs() < 1e-10, "w = {w}");
        assert!(w.im.abs() < 1e-12);

        let p2 = pt(0.4, 0.9);
        let s2 = solve_canonical(&spec, &p2, &SolverOptions::default()).unwrap();
        let s2c = solve_canonical(&spec, &p2.conj(), &SolverOptions::default()).unwrap();
        assert!((w_of_z(&p2, &s2).conj() - w_of_z(&p2.conj(), &s2c)).norm() < 1e-10);
    }

    #[test]
    fn white_noise_form_matches_general_construction() {
        let mut a = CMat::zeros(6, 8);
        // rank-2 signal
        a[(0, 0)] = C64::new(1.5, 0.0);
        a[(1, 1)] = C64::new(0.0, 1.2);
        let spec = ModelSpec::white_noise(6, 8, EntryLaw::CircularComplexGaussian)
            .unwrap()
            .with_signal(a.clone())
            .unwrap();
        for &(re, im) in &[(-1.0, 0.0), (0.0, 1.0)] {
            let p = pt(re, im);
            let sol = solve_canonical(&spec, &p, &SolverOptions::default()).unwrap();
            let pair = build_t(&spec, &sol).unwrap();
            let wn = white_noise_t(&a, &p, &sol).unwrap();
            assert!(max_abs(&(wn - pair.t.clone())) < 1e-10);
        }
    }

    #[test]
    fn stability_zero_signal() {
        let spec = mp_spec(4);
        let p = pt(-1.0, 0.0);
        let sol = solve_canonical(&spec, &p, &SolverOptions::default()).unwrap();
        let rep = stability_report(&spec, &sol).unwrap();
        assert_eq!(rep.u1, 0.0);
        assert_eq!(rep.u1_tilde, 0.0);
        // scalar reduction: v1 = T^2 = GOLDEN^2, det = 1 - GOLDEN^4
        assert!((rep.v1 - GOLDEN * GOLDEN).abs() < 1e-10);
        let expected_det = 1.0 - GOLDEN.powi(4);
        assert!((rep.det_i_minus_c1 - expected_det).abs() < 1e-10);
        assert!((rep.det_i_minus_c1 - 0.854101966249684).abs() < 1e-10);
    }

    #[test]
    fn stability_positive_at_valid_points() {
        let spec = signal_spec();
        let opts = SolverOptions::default();
        for &(re, im) in &[(-2.0, 0.0), (-1.0, 0.05), (0.5, 0.3), (1.5, 1.0), (3.0, -0.5)] {
            let sol = solve_canonical(&spec, &pt(re, im), &opts).unwrap();
            let rep = stability_report(&spec, &sol).unwrap();
            assert!(1.0 - rep.u1 >= 0.0, "u1 = {} at {re}+{im}i", rep.u1);
            assert!(1.0 - rep.u1_tilde >= 0.0);
            assert!(rep.det_i_minus_c1 > 0.0, "det = {} at {re}+{im}i", rep.det_i_minus_c1);
            assert!(rep.w1 > 0.0 && rep.w1_tilde > 0.0);
        }
    }

    #[test]
    fn extended_report_consistent_when_alpha_is_delta() {
        let spec = signal_spec();
        let p = pt(-1.0, 0.4);
        let sol = solve_canonical(&spec, &p, &SolverOptions::default()).unwrap();
        let rep1 = stability_report(&spec, &sol).unwrap();
        let ext = extended_stability_report(&spec, &p, &sol, sol.delta, sol.delta_tilde).unwrap();
        // with alpha = delta, the estimated coefficients coincide with u1/v1
        assert!((ext.u2 - rep1.u1).abs() < 1e-12);
        assert!((ext.v2 - rep1.v1).abs() < 1e-12);
        assert!((ext.det_i_minus_c2 - rep1.det_i_minus_c1).abs() < 1e-12);
        // mixed determinant has modulus at least... just check it is nonzero
        assert!(ext.det_i_minus_c0.norm() > 0.0);
    }
}
