//! Fixed-point solvers for the canonical system
//!
//! ```text
//! delta  = Tr[ D  ( -z(I + delta~ D) + A (I + delta D~)^{-1} A^* )^{-1} ] / n
//! delta~ = Tr[ D~ ( -z(I + delta D~) + A^* (I + delta~ D)^{-1} A )^{-1} ] / n
//! ```
//!
//! whose unique Stieltjes-class solution `(delta, delta~)` parametrizes the
//! deterministic equivalents, and for the precoder variant of the same system
//! used by the MIMO module.
//!
//! The iteration is damped Picard in Gauss-Seidel order (the `delta~` update
//! sees the fresh `delta`). Damping starts at `SolverOptions::damping` and is
//! halved whenever the fixed-point residual grows three times in a row,
//! which restores contraction close to the positive real axis.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{cmul, cmul_adjoint, inverse, CMat};
use crate::model::{EvaluationPoint, ModelSpec};

pub type C64 = Complex64;

/// Iteration controls for every fixed-point solve in the crate.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Relative tolerance on the iterate and on the exit residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial damping factor in `(0, 1]`; halved automatically on
    /// oscillation.
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-12,
            max_iter: 10_000,
            damping: 1.0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol = {} must be > 0", self.tol)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "damping = {} must be in (0, 1]",
                self.damping
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// A solved point of the canonical system.
#[derive(Debug, Clone, Copy)]
pub struct CanonicalSolution {
    pub z: C64,
    pub delta: C64,
    pub delta_tilde: C64,
    /// Max of the two equation residuals, evaluated once at exit.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Right-hand sides of the canonical system at `(delta, delta~)`.
///
/// The inner matrices are formed explicitly and inverted densely; when
/// `A = 0` they are diagonal and the traces collapse to scalar sums.
fn canonical_rhs(spec: &ModelSpec, z: C64, delta: C64, delta_tilde: C64) -> Result<(C64, C64)> {
    let n = spec.n_cols() as f64;
    let one = C64::new(1.0, 0.0);
    if spec.a_is_zero() {
        let f: C64 = spec
            .d()
            .iter()
            .map(|&di| di / (-z * (one + delta_tilde * di)))
            .sum();
        let ft: C64 = spec
            .d_tilde()
            .iter()
            .map(|&dj| dj / (-z * (one + delta * dj)))
            .sum();
        return Ok((f / n, ft / n));
    }

    let a = spec.a();
    // A (I + delta D~)^{-1} A^*: scale columns of A by 1/(1 + delta d~_j).
    let mut a_scaled = a.clone();
    for (j, &dj) in spec.d_tilde().iter().enumerate() {
        let s = (one + delta * dj).inv();
        a_scaled.column_mut(j).iter_mut().for_each(|c| *c *= s);
    }
    let mut inner = cmul_adjoint(&a_scaled, a);
    for (i, &di) in spec.d().iter().enumerate() {
        inner[(i, i)] += -z * (one + delta_tilde * di);
    }
    let t = inverse(&inner)?;
    let f = spec
        .d()
        .iter()
        .enumerate()
        .map(|(i, &di)| t[(i, i)] * di)
        .sum::<C64>()
        / n;

    // A^* (I + delta~ D)^{-1} A: scale rows of A by 1/(1 + delta~ d_i).
    let mut a_row_scaled = a.clone();
    for (i, &di) in spec.d().iter().enumerate() {
        let s = (one + delta_tilde * di).inv();
        a_row_scaled.row_mut(i).iter_mut().for_each(|c| *c *= s);
    }
    let mut inner_t = cmul(&a.adjoint(), &a_row_scaled);
    for (j, &dj) in spec.d_tilde().iter().enumerate() {
        inner_t[(j, j)] += -z * (one + delta * dj);
    }
    let tt = inverse(&inner_t)?;
    let ft = spec
        .d_tilde()
        .iter()
        .enumerate()
        .map(|(j, &dj)| tt[(j, j)] * dj)
        .sum::<C64>()
        / n;

    Ok((f, ft))
}

/// Solve the canonical system at `pt`, starting from the default iterate
/// `delta_0 = -(Tr D / n)/z`, `delta~_0 = -(Tr D~ / n)/z` (exact for the
/// zero-signal, small-profile limit).
pub fn solve_canonical(
    spec: &ModelSpec,
    pt: &EvaluationPoint,
    opts: &SolverOptions,
) -> Result<CanonicalSolution> {
    solve_canonical_with_init(spec, pt, opts, None)
}

/// Solve with an explicit initial iterate, used for warm starts along paths.
pub fn solve_canonical_with_init(
    spec: &ModelSpec,
    pt: &EvaluationPoint,
    opts: &SolverOptions,
    init: Option<(C64, C64)>,
) -> Result<CanonicalSolution> {
    opts.validate()?;
    let z = pt.z();
    let (mut delta, mut delta_tilde) = init.unwrap_or_else(|| {
        let minus_inv_z = -z.inv();
        (
            minus_inv_z * spec.trace_d_over_n(),
            minus_inv_z * spec.trace_d_tilde_over_n(),
        )
    });

    let mut gamma = opts.damping;
    let mut prev_proxy = f64::INFINITY;
    let mut growth_streak = 0usize;
    let mut iterations = 0usize;

    while iterations < opts.max_iter {
        iterations += 1;
        let (f, _) = canonical_rhs(spec, z, delta, delta_tilde)?;
        let delta_next = f * gamma + delta * (1.0 - gamma);
        let (_, ft) = canonical_rhs(spec, z, delta_next, delta_tilde)?;
        let delta_tilde_next = ft * gamma + delta_tilde * (1.0 - gamma);

        let proxy = (f - delta).norm() + (ft - delta_tilde).norm();
        if proxy > prev_proxy {
            growth_streak += 1;
            if growth_streak >= 3 {
                gamma = (gamma * 0.5).max(9.5367431640625e-7); // 2^-20
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
            let (rf, rft) = canonical_rhs(spec, z, delta, delta_tilde)?;
            let residual = (delta - rf).norm().max((delta_tilde - rft).norm());
            if residual <= opts.tol * (1.0 + delta.norm() + delta_tilde.norm()) {
                let sol = CanonicalSolution {
                    z,
                    delta,
                    delta_tilde,
                    residual,
                    iterations,
                    converged: true,
                };
                check_stieltjes_class(&sol, opts)?;
                return Ok(sol);
            }
        }
    }

    let (rf, rft) = canonical_rhs(spec, z, delta, delta_tilde)?;
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

/// Guard against convergence to a non-Stieltjes root: the imaginary parts of
/// `delta` and `delta~` must carry the sign of `Im z`, and both must be
/// positive reals on the negative real axis.
fn check_stieltjes_class(sol: &CanonicalSolution, opts: &SolverOptions) -> Result<()> {
    let slack = 1e3 * opts.tol;
    let bad = if sol.z.im > 0.0 {
        sol.delta.im < -slack * (1.0 + sol.delta.norm())
            || sol.delta_tilde.im < -slack * (1.0 + sol.delta_tilde.norm())
    } else if sol.z.im < 0.0 {
        sol.delta.im > slack * (1.0 + sol.delta.norm())
            || sol.delta_tilde.im > slack * (1.0 + sol.delta_tilde.norm())
    } else {
        sol.delta.re <= 0.0 || sol.delta_tilde.re <= 0.0
    };
    if bad {
        return Err(Error::Numerical(format!(
            "solution left the Stieltjes class at z = {} (delta = {}, delta~ = {})",
            sol.z, sol.delta, sol.delta_tilde
        )));
    }
    Ok(())
}

/// How a grid of points is traversed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridMode {
    /// Sequential; each point starts from the previous solution.
    WarmStart,
    /// Independent solves; points may run in parallel.
    ColdStart,
}

/// Solve the canonical system on an ordered list of points.
pub fn solve_canonical_grid(
    spec: &ModelSpec,
    points: &[EvaluationPoint],
    opts: &SolverOptions,
    mode: GridMode,
) -> Result<Vec<CanonicalSolution>> {
    match mode {
        GridMode::WarmStart => {
            let mut out = Vec::with_capacity(points.len());
            let mut carry: Option<(C64, C64)> = None;
            for (index, pt) in points.iter().enumerate() {
                let sol = solve_canonical_with_init(spec, pt, opts, carry).map_err(|e| {
                    Error::GridPoint {
                        index,
                        source: Box::new(e),
                    }
                })?;
                carry = Some((sol.delta, sol.delta_tilde));
                out.push(sol);
            }
            Ok(out)
        }
        GridMode::ColdStart => points
            .par_iter()
            .enumerate()
            .map(|(index, pt)| {
                solve_canonical(spec, pt, opts).map_err(|e| Error::GridPoint {
                    index,
                    source: Box::new(e),
                })
            })
            .collect(),
    }
}

/// Central finite difference of `z -> (delta(z), delta~(z))` along the real
/// direction. Both transforms are holomorphic off the positive real axis, so
/// the complex derivative does not depend on the step direction; use
/// [`derivative_delta_along`] when a different direction keeps the
/// perturbed points farther from the axis.
pub fn derivative_delta(
    spec: &ModelSpec,
    pt: &EvaluationPoint,
    sol: &CanonicalSolution,
    opts: &SolverOptions,
    h: Option<f64>,
) -> Result<(C64, C64)> {
    derivative_delta_along(spec, pt, sol, opts, h, C64::new(1.0, 0.0))
}

pub fn derivative_delta_along(
    spec: &ModelSpec,
    pt: &EvaluationPoint,
    sol: &CanonicalSolution,
    opts: &SolverOptions,
    h: Option<f64>,
    direction: C64,
) -> Result<(C64, C64)> {
    if direction.norm() == 0.0 {
        return Err(Error::InvalidArgument("derivative direction must be nonzero".into()));
    }
    let z = pt.z();
    let e = direction / direction.norm();
    let h = match h {
        Some(v) if v > 0.0 => v,
        Some(v) => {
            return Err(Error::InvalidArgument(format!("step h = {v} must be > 0")));
        }
        None => 1e-6 * z.norm().max(1.0),
    };
    let step = e * h;
    let plus = EvaluationPoint::new(z + step).map_err(|_| {
        Error::InvalidArgument(format!(
            "perturbed point {} exits the valid region",
            z + step
        ))
    })?;
    let minus = EvaluationPoint::new(z - step).map_err(|_| {
        Error::InvalidArgument(format!(
            "perturbed point {} exits the valid region",
            z - step
        ))
    })?;
    let init = Some((sol.delta, sol.delta_tilde));
    let sp = solve_canonical_with_init(spec, &plus, opts, init)?;
    let sm = solve_canonical_with_init(spec, &minus, opts, init)?;
    let denom = step * 2.0;
    Ok(((sp.delta - sm.delta) / denom, (sp.delta_tilde - sm.delta_tilde) / denom))
}

/// A solved point of the precoder fixed-point system (positive reals).
#[derive(Debug, Clone, Copy)]
pub struct PrecoderSolution {
    pub delta: f64,
    pub delta_tilde: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn hermitize(m: &mut CMat) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..=j {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)].conj());
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

fn real_trace_product(lhs: &CMat, rhs: &CMat) -> f64 {
    // Tr(lhs * rhs) for Hermitian lhs, rhs: real by symmetry.
    let mut acc = 0.0;
    for i in 0..lhs.nrows() {
        for k in 0..lhs.ncols() {
            let p = lhs[(i, k)] * rhs[(k, i)];
            acc += p.re;
        }
    }
    acc
}

/// Solve the precoder system
///
/// ```text
/// delta  = Tr[ K R K^* ( (I + delta~ K R K^*) + K B (I + delta R~)^{-1} B^* K^* )^{-1} ] / n
/// delta~ = Tr[ R~ ( (I + delta R~) + B^* K^* (I + delta~ K R K^*)^{-1} K B )^{-1} ] / n
/// ```
///
/// over positive reals with the same damped Gauss-Seidel scheme as the
/// canonical system. A transiently negative iterate is projected to the
/// floor `1e-14`.
pub fn solve_precoder_system(
    b: &CMat,
    r: &CMat,
    r_tilde: &CMat,
    k: &CMat,
    opts: &SolverOptions,
) -> Result<PrecoderSolution> {
    solve_precoder_system_with_init(b, r, r_tilde, k, opts, None)
}

pub fn solve_precoder_system_with_init(
    b: &CMat,
    r: &CMat,
    r_tilde: &CMat,
    k: &CMat,
    opts: &SolverOptions,
    init: Option<(f64, f64)>,
) -> Result<PrecoderSolution> {
    opts.validate()?;
    let n_rows = r.nrows();
    let n_cols = r_tilde.nrows();
    if r.ncols() != n_rows || r_tilde.ncols() != n_cols {
        return Err(Error::DimensionMismatch("R and R~ must be square".into()));
    }
    if k.nrows() != n_rows || k.ncols() != n_rows {
        return Err(Error::DimensionMismatch(format!(
            "K must be {n_rows}x{n_rows}, got {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    if b.nrows() != n_rows || b.ncols() != n_cols {
        return Err(Error::DimensionMismatch(format!(
            "B must be {n_rows}x{n_cols}, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    let n = n_cols as f64;
    const FLOOR: f64 = 1e-14;

    // M = K R K^*, G = K B; both fixed across the iteration.
    let mut m = cmul_adjoint(&cmul(k, r), k);
    hermitize(&mut m);
    let g = cmul(k, b);
    let g_adj = g.adjoint();

    let eye_n = CMat::identity(n_rows, n_rows);
    let eye_c = CMat::identity(n_cols, n_cols);

    let rhs = |delta: f64, delta_tilde: f64| -> Result<(f64, f64)> {
        // (I + delta R~)^{-1}
        let mut inner_ct = &eye_c + r_tilde * C64::new(delta, 0.0);
        hermitize(&mut inner_ct);
        let inv_ct = inverse(&inner_ct)?;
        let mut denom = &eye_n + &m * C64::new(delta_tilde, 0.0) + cmul(&cmul(&g, &inv_ct), &g_adj);
        hermitize(&mut denom);
        let t = inverse(&denom)?;
        let f = real_trace_product(&m, &t) / n;

        let mut inner_nt = &eye_n + &m * C64::new(delta_tilde, 0.0);
        hermitize(&mut inner_nt);
        let inv_nt = inverse(&inner_nt)?;
        let mut denom_t =
            &eye_c + r_tilde * C64::new(delta, 0.0) + cmul(&cmul(&g_adj, &inv_nt), &g);
        hermitize(&mut denom_t);
        let tt = inverse(&denom_t)?;
        let ft = real_trace_product(r_tilde, &tt) / n;
        Ok((f, ft))
    };

    let (mut delta, mut delta_tilde) = init.unwrap_or_else(|| {
        (
            (0..n_rows).map(|i| m[(i, i)].re).sum::<f64>() / n,
            (0..n_cols).map(|j| r_tilde[(j, j)].re).sum::<f64>() / n,
        )
    });
    delta = delta.max(0.0);
    delta_tilde = delta_tilde.max(0.0);

    let mut gamma = opts.damping;
    let mut prev_proxy = f64::INFINITY;
    let mut growth_streak = 0usize;
    let mut iterations = 0usize;

    while iterations < opts.max_iter {
        iterations += 1;
        let (f, _) = rhs(delta, delta_tilde)?;
        let mut delta_next = gamma * f + (1.0 - gamma) * delta;
        if delta_next < 0.0 {
            delta_next = FLOOR;
        }
        let (_, ft) = rhs(delta_next, delta_tilde)?;
        let mut delta_tilde_next = gamma * ft + (1.0 - gamma) * delta_tilde;
        if delta_tilde_next < 0.0 {
            delta_tilde_next = FLOOR;
        }

        let proxy = (f - delta).abs() + (ft - delta_tilde).abs();
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

        let change = (delta_next - delta).abs() + (delta_tilde_next - delta_tilde).abs();
        delta = delta_next;
        delta_tilde = delta_tilde_next;

        if change <= opts.tol * (1.0 + delta.abs() + delta_tilde.abs()) {
            let (rf, rft) = rhs(delta, delta_tilde)?;
            let residual = (delta - rf).abs().max((delta_tilde - rft).abs());
            if residual <= opts.tol * (1.0 + delta.abs() + delta_tilde.abs()) {
                return Ok(PrecoderSolution {
                    delta,
                    delta_tilde,
                    residual,
                    iterations,
                    converged: true,
                });
            }
        }
    }

    let (rf, rft) = rhs(delta, delta_tilde)?;
    let residual = (delta - rf).abs().max((delta_tilde - rft).abs());
    Err(Error::NoConvergence {
        z_re: -1.0,
        z_im: 0.0,
        delta_re: delta,
        delta_im: 0.0,
        delta_tilde_re: delta_tilde,
        delta_tilde_im: 0.0,
        residual,
        iterations,
    })
}
