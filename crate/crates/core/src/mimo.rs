//! Post-detection capacity of a bi-correlated Ricean channel and its
//! deterministic large-system approximation, plus a finite-difference
//! projected-gradient search over the precoder.
//!
//! The channel is `H = B + R^{1/2} V R~^{1/2} / sqrt(n)` with standard
//! complex Gaussian `V`. For a precoder `K`, the objective is
//!
//! ```text
//! I(K) = E sum_j log [ (I + K H H^* K^*)^{-1} ]_{jj}
//! ```
//!
//! implemented exactly as written (it is <= 0, and `K = 0` attains 0); a
//! sign switch exposes the negated convention `-I(K)` whose maximization is
//! the usual waterfilling-style problem. The deterministic approximation
//! replaces the expectation by the equivalent matrix built from the precoder
//! fixed-point system.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{cmul, hermitian_eig, hermitian_gram, hermitian_sqrt, inverse, CMat};
use crate::model::EntryLaw;
use crate::rng::{child_seed, rng_from_seed};
use crate::solver::{solve_precoder_system_with_init, PrecoderSolution, SolverOptions};

pub type C64 = Complex64;

/// Validated channel description.
#[derive(Debug, Clone)]
pub struct PrecoderProblem {
    b: CMat,
    r: CMat,
    r_tilde: CMat,
    trace_budget: f64,
}

fn check_hermitian_psd(m: &CMat, name: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidSpec(format!("{name}: must be square")));
    }
    let scale = m.iter().map(|c| c.norm()).fold(0.0f64, f64::max).max(1.0);
    let asym = crate::linalg::max_abs(&(m.clone() - m.adjoint()));
    if asym > 1e-10 * scale {
        return Err(Error::InvalidSpec(format!(
            "{name}: not Hermitian (asymmetry {asym:.3e})"
        )));
    }
    let (values, _) = hermitian_eig(m);
    if let Some(&min) = values.first() {
        if min < -1e-12 * scale {
            return Err(Error::InvalidSpec(format!(
                "{name}: not positive semidefinite (eigenvalue {min:.3e})"
            )));
        }
    }
    Ok(())
}

impl PrecoderProblem {
    pub fn new(b: CMat, r: CMat, r_tilde: CMat, trace_budget: f64) -> Result<Self> {
        check_hermitian_psd(&r, "R")?;
        check_hermitian_psd(&r_tilde, "R_tilde")?;
        let n_rows = r.nrows();
        let n_cols = r_tilde.nrows();
        if b.nrows() != n_rows || b.ncols() != n_cols {
            return Err(Error::InvalidSpec(format!(
                "B: expected {n_rows}x{n_cols}, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if !(trace_budget > 0.0 && trace_budget.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "a: trace budget {trace_budget} must be positive and finite"
            )));
        }
        Ok(PrecoderProblem {
            b,
            r,
            r_tilde,
            trace_budget,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.r.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.r_tilde.nrows()
    }

    pub fn b(&self) -> &CMat {
        &self.b
    }

    pub fn r(&self) -> &CMat {
        &self.r
    }

    pub fn r_tilde(&self) -> &CMat {
        &self.r_tilde
    }

    pub fn trace_budget(&self) -> f64 {
        self.trace_budget
    }
}

/// A precoder together with its normalized trace `Tr(K K^*)/N`.
#[derive(Debug, Clone)]
pub struct PrecoderCandidate {
    pub k: CMat,
    pub trace_norm: f64,
}

impl PrecoderCandidate {
    pub fn new(k: CMat) -> Self {
        let trace_norm = k.iter().map(|c| c.norm_sqr()).sum::<f64>() / k.nrows() as f64;
        PrecoderCandidate { k, trace_norm }
    }

    pub fn feasible(&self, budget: f64) -> bool {
        self.trace_norm <= budget + 1e-10
    }
}

/// Exact Euclidean projection onto the trace ball: radial scaling.
pub fn project_to_budget(k: &CMat, budget: f64) -> PrecoderCandidate {
    let cand = PrecoderCandidate::new(k.clone());
    if cand.trace_norm <= budget {
        return cand;
    }
    let scale = (budget / cand.trace_norm).sqrt();
    PrecoderCandidate::new(k * C64::new(scale, 0.0))
}

/// Channel sampler with the correlation square roots precomputed.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    b: CMat,
    r_sqrt: CMat,
    r_tilde_sqrt: CMat,
}

impl ChannelSampler {
    pub fn new(problem: &PrecoderProblem) -> Result<Self> {
        Ok(ChannelSampler {
            b: problem.b.clone(),
            r_sqrt: hermitian_sqrt(&problem.r)?,
            r_tilde_sqrt: hermitian_sqrt(&problem.r_tilde)?,
        })
    }

    /// `H = B + R^{1/2} V R~^{1/2} / sqrt(n)`; `V` entries drawn row-major.
    pub fn sample(&self, seed: u64) -> CMat {
        let n_rows = self.b.nrows();
        let n_cols = self.b.ncols();
        let mut rng = rng_from_seed(seed);
        let law = EntryLaw::CircularComplexGaussian;
        let mut v = CMat::zeros(n_rows, n_cols);
        for i in 0..n_rows {
            for j in 0..n_cols {
                v[(i, j)] = law.sample(&mut rng);
            }
        }
        let scatter = cmul(&cmul(&self.r_sqrt, &v), &self.r_tilde_sqrt)
            / C64::new((n_cols as f64).sqrt(), 0.0);
        &self.b + scatter
    }
}

/// One-off convenience wrapper around [`ChannelSampler`].
pub fn sample_channel(problem: &PrecoderProblem, seed: u64) -> Result<CMat> {
    Ok(ChannelSampler::new(problem)?.sample(seed))
}

fn sum_log_diag_inverse(m: &CMat) -> Result<f64> {
    let inv = inverse(m)?;
    let mut acc = 0.0;
    for j in 0..inv.nrows() {
        let d = inv[(j, j)].re;
        if d <= 0.0 {
            return Err(Error::Numerical(format!(
                "diagonal entry {j} of the inverse is non-positive ({d:.3e})"
            )));
        }
        acc += d.ln();
    }
    Ok(acc)
}

/// Monte Carlo estimate of the post-detection capacity at `K`, with its
/// standard error.
pub fn mmse_capacity_mc(
    problem: &PrecoderProblem,
    k: &CMat,
    replicates: usize,
    master_seed: u64,
) -> Result<(f64, f64)> {
    if replicates < 2 {
        return Err(Error::InvalidArgument("need at least 2 replicates".into()));
    }
    if k.nrows() != problem.n_rows() || k.ncols() != problem.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "K must be {0}x{0}",
            problem.n_rows()
        )));
    }
    let sampler = ChannelSampler::new(problem)?;
    let n_rows = problem.n_rows();
    let raw: Vec<Result<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let h = sampler.sample(child_seed(master_seed, r as u64));
            let kh = cmul(k, &h);
            let mut m = hermitian_gram(&kh);
            for i in 0..n_rows {
                m[(i, i)] += C64::new(1.0, 0.0);
            }
            sum_log_diag_inverse(&m)
        })
        .collect();
    let mut values = Vec::with_capacity(replicates);
    for (index, r) in raw.into_iter().enumerate() {
        match r {
            Ok(v) => values.push(v),
            Err(e) => {
                return Err(Error::Replicate {
                    index,
                    source: Box::new(e),
                })
            }
        }
    }
    let rf = replicates as f64;
    let mean = values.iter().sum::<f64>() / rf;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (rf - 1.0);
    Ok((mean, (var / rf).sqrt()))
}

/// Deterministic equivalent of the capacity at `K`: solve the precoder
/// system, build
/// `T(K) = [(I + delta~ K R K^*) + K B (I + delta R~)^{-1} B^* K^*]^{-1}`,
/// and sum the logs of its diagonal.
pub fn mmse_capacity_equiv(
    problem: &PrecoderProblem,
    k: &CMat,
    opts: &SolverOptions,
) -> Result<(f64, PrecoderSolution)> {
    mmse_capacity_equiv_with_init(problem, k, opts, None)
}

pub fn mmse_capacity_equiv_with_init(
    problem: &PrecoderProblem,
    k: &CMat,
    opts: &SolverOptions,
    init: Option<(f64, f64)>,
) -> Result<(f64, PrecoderSolution)> {
    let sol = solve_precoder_system_with_init(
        &problem.b,
        &problem.r,
        &problem.r_tilde,
        k,
        opts,
        init,
    )?;
    let n_rows = problem.n_rows();
    let m = cmul(&cmul(k, &problem.r), &k.adjoint());
    let g = cmul(k, &problem.b);
    let mut inner_ct = CMat::identity(problem.n_cols(), problem.n_cols());
    inner_ct += &problem.r_tilde * C64::new(sol.delta, 0.0);
    let inv_ct = inverse(&inner_ct)?;
    let mut denom = CMat::identity(n_rows, n_rows);
    denom += &m * C64::new(sol.delta_tilde, 0.0);
    denom += cmul(&cmul(&g, &inv_ct), &g.adjoint());
    let value = sum_log_diag_inverse(&denom)?;
    Ok((value, sol))
}

/// Which sign of the objective the optimizer maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveSign {
    /// The objective exactly as defined (<= 0; maximized by `K -> 0`).
    Literal,
    /// The negated convention `-I(K)` (>= 0; the usual capacity reading).
    Negated,
}

#[derive(Debug, Clone)]
pub struct OptimizerOptions {
    pub max_iter: usize,
    pub step: f64,
    pub fd_step: f64,
    pub restarts: usize,
    pub seed: u64,
    pub sign: ObjectiveSign,
    pub solver: SolverOptions,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_iter: 60,
            step: 0.25,
            fd_step: 1e-5,
            restarts: 1,
            seed: 0,
            sign: ObjectiveSign::Literal,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub restart: usize,
    pub iter: usize,
    pub objective: f64,
    pub trace_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizerResult {
    pub best: PrecoderCandidate,
    pub best_objective: f64,
    pub trace: Vec<IterationRecord>,
}

/// Projected gradient ascent on the deterministic equivalent, with central
/// finite-difference gradients over the real and imaginary parts of `K` and
/// backtracking on the step size. The objective trace is monotone
/// non-decreasing within each restart.
pub fn optimize_precoder(
    problem: &PrecoderProblem,
    opts: &OptimizerOptions,
) -> Result<OptimizerResult> {
    if opts.restarts == 0 {
        return Err(Error::InvalidArgument("need at least one restart".into()));
    }
    if !(opts.fd_step > 0.0) || !(opts.step > 0.0) {
        return Err(Error::InvalidArgument("step sizes must be positive".into()));
    }
    let n_rows = problem.n_rows();
    let budget = problem.trace_budget();

    let objective = |k: &CMat, init: Option<(f64, f64)>| -> Result<(f64, PrecoderSolution)> {
        let (v, sol) = mmse_capacity_equiv_with_init(problem, k, &opts.solver, init)?;
        let v = match opts.sign {
            ObjectiveSign::Literal => v,
            ObjectiveSign::Negated => -v,
        };
        Ok((v, sol))
    };

    let mut best: Option<(f64, PrecoderCandidate)> = None;
    let mut trace = Vec::new();

    for restart in 0..opts.restarts {
        // restart 0 starts on the budget sphere at sqrt(a) I; later restarts
        // perturb it with a seeded Gaussian direction
        let k0 = if restart == 0 {
            CMat::identity(n_rows, n_rows) * C64::new(budget.sqrt(), 0.0)
        } else {
            let law = EntryLaw::CircularComplexGaussian;
            let mut rng = rng_from_seed(child_seed(opts.seed, restart as u64));
            let g = CMat::from_fn(n_rows, n_rows, |_, _| law.sample(&mut rng));
            let base = CMat::identity(n_rows, n_rows) * C64::new(budget.sqrt(), 0.0);
            project_to_budget(&(base + g * C64::new(0.5 * budget.sqrt(), 0.0)), budget).k
        };
        let mut current = project_to_budget(&k0, budget);
        let (mut f_current, mut sol_current) = objective(&current.k, None)?;
        let mut step = opts.step;
        trace.push(IterationRecord {
            restart,
            iter: 0,
            objective: f_current,
            trace_norm: current.trace_norm,
            step,
        });

        for iter in 1..=opts.max_iter {
            // central finite differences on Re and Im of every entry
            let warm = Some((sol_current.delta, sol_current.delta_tilde));
            let entries: Vec<(usize, usize, bool)> = (0..n_rows)
                .flat_map(|i| (0..n_rows).flat_map(move |j| [(i, j, false), (i, j, true)]))
                .collect();
            let partials: Vec<Result<f64>> = entries
                .par_iter()
                .map(|&(i, j, imaginary)| {
                    let bump = if imaginary {
                        C64::new(0.0, opts.fd_step)
                    } else {
                        C64::new(opts.fd_step, 0.0)
                    };
                    let mut kp = current.k.clone();
                    kp[(i, j)] += bump;
                    let mut km = current.k.clone();
                    km[(i, j)] -= bump;
                    let (fp, _) = objective(&kp, warm)?;
                    let (fm, _) = objective(&km, warm)?;
                    Ok((fp - fm) / (2.0 * opts.fd_step))
                })
                .collect();
            let mut grad = CMat::zeros(n_rows, n_rows);
            for (&(i, j, imaginary), partial) in entries.iter().zip(partials) {
                let p = partial?;
                if imaginary {
                    grad[(i, j)] += C64::new(0.0, p);
                } else {
                    grad[(i, j)] += C64::new(p, 0.0);
                }
            }

            // backtracking ascent step with radial projection
            let mut accepted = false;
            for _ in 0..30 {
                let trial = project_to_budget(&(&current.k + &grad * C64::new(step, 0.0)), budget);
                match objective(&trial.k, warm) {
                    Ok((f_trial, sol_trial)) if f_trial >= f_current => {
                        current = trial;
                        f_current = f_trial;
                        sol_current = sol_trial;
                        accepted = true;
                        break;
                    }
                    Ok(_) => step *= 0.5,
                    // solver failure inside an evaluation rejects the step
                    Err(Error::NoConvergence { .. }) => step *= 0.5,
                    Err(e) => return Err(e),
                }
                if step < 1e-14 {
                    break;
                }
            }
            trace.push(IterationRecord {
                restart,
                iter,
                objective: f_current,
                trace_norm: current.trace_norm,
                step,
            });
            if !accepted {
                break;
            }
        }

        match &best {
            Some((f_best, _)) if *f_best >= f_current => {}
            _ => best = Some((f_current, current.clone())),
        }
    }

    let (best_objective, best) = best.expect("at least one restart ran");
    Ok(OptimizerResult {
        best,
        best_objective,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: f64 = 0.618033988749894848;

    fn white_problem(n: usize, budget: f64) -> PrecoderProblem {
        PrecoderProblem::new(
            CMat::zeros(n, n),
            CMat::identity(n, n),
            CMat::identity(n, n),
            budget,
        )
        .unwrap()
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        let n = 3;
        let mut not_psd = CMat::identity(n, n);
        not_psd[(0, 0)] = C64::new(-1.0, 0.0);
        assert!(PrecoderProblem::new(
            CMat::zeros(n, n),
            not_psd,
            CMat::identity(n, n),
            1.0
        )
        .is_err());
        assert!(PrecoderProblem::new(
            CMat::zeros(n, n),
            CMat::identity(n, n),
            CMat::identity(n, n),
            0.0
        )
        .is_err());
    }

    #[test]
    fn zero_correlation_channel_is_the_mean() {
        let n = 3;
        let mut b = CMat::zeros(n, n);
        b[(0, 2)] = C64::new(1.0, -2.0);
        let problem =
            PrecoderProblem::new(b.clone(), CMat::zeros(n, n), CMat::zeros(n, n), 1.0).unwrap();
        let h = sample_channel(&problem, 5).unwrap();
        assert!(crate::linalg::max_abs(&(h - b)) < 1e-14);
    }

    #[test]
    fn channel_sampling_moments_and_determinism() {
        let problem = white_problem(40, 1.0);
        let h1 = sample_channel(&problem, 9).unwrap();
        let h2 = sample_channel(&problem, 9).unwrap();
        assert_eq!(h1, h2);
        // entrywise second moment ~ 1/n
        let mean_sq: f64 = h1.iter().map(|c| c.norm_sqr()).sum::<f64>() / (40.0 * 40.0);
        assert!((mean_sq * 40.0 - 1.0).abs() < 0.1, "{mean_sq}");
    }

    #[test]
    fn zero_precoder_gives_zero_capacity() {
        let problem = white_problem(4, 1.0);
        let k = CMat::zeros(4, 4);
        let (mc, se) = mmse_capacity_mc(&problem, &k, 4, 3).unwrap();
        assert_eq!(mc, 0.0);
        assert_eq!(se, 0.0);
        let (eq, _) = mmse_capacity_equiv(&problem, &k, &SolverOptions::default()).unwrap();
        assert_eq!(eq, 0.0);
    }

    #[test]
    fn scalar_channel_matches_quadrature_oracle() {
        // N = n = 1, B = 0, R = R~ = 1, K = 1: the capacity is
        // -E log(1 + X) with X ~ Exp(1). Oracle by composite Simpson.
        let oracle = {
            let f = |x: f64| (1.0 + x).ln() * (-x).exp();
            let (a, b, m) = (0.0, 60.0, 600_000usize);
            let h = (b - a) / m as f64;
            let mut s = f(a) + f(b);
            for i in 1..m {
                let x = a + i as f64 * h;
                s += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            -(s * h / 3.0)
        };
        assert!((oracle + 0.59634736232319).abs() < 1e-8, "oracle {oracle}");

        let problem = white_problem(1, 1.0);
        let k = CMat::identity(1, 1);
        let (mc, se) = mmse_capacity_mc(&problem, &k, 20_000, 11).unwrap();
        assert!((mc - oracle).abs() < 4.0 * se.max(0.005), "mc {mc} vs oracle {oracle}");
    }

    #[test]
    fn mc_standard_error_shrinks_with_replicates() {
        let problem = white_problem(8, 1.0);
        let k = CMat::identity(8, 8);
        let (_, se_small) = mmse_capacity_mc(&problem, &k, 50, 2).unwrap();
        let (_, se_large) = mmse_capacity_mc(&problem, &k, 800, 2).unwrap();
        assert!(se_large < se_small);
    }

    #[test]
    fn equivalent_capacity_closed_form() {
        let problem = white_problem(8, 1.0);
        let k = CMat::identity(8, 8);
        let (eq, sol) = mmse_capacity_equiv(&problem, &k, &SolverOptions::default()).unwrap();
        assert!((sol.delta - GOLDEN).abs() < 1e-11);
        let expected = -8.0 * (1.0 + GOLDEN).ln();
        assert!((eq - expected).abs() < 1e-8, "{eq} vs {expected}");
    }

    #[test]
    fn unitary_invariance_of_the_objective() {
        let n = 6;
        let problem = white_problem(n, 1.0);
        let mut k = CMat::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = C64::new(0.4 + 0.2 * i as f64, 0.0);
        }
        // a deterministic unitary from the QR of a seeded Gaussian
        let law = EntryLaw::CircularComplexGaussian;
        let mut rng = rng_from_seed(123);
        let g = CMat::from_fn(n, n, |_, _| law.sample(&mut rng));
        let q = g.qr().q();
        let ku = cmul(&k, &q);
        let (f1, se1) = mmse_capacity_mc(&problem, &k, 600, 21).unwrap();
        let (f2, se2) = mmse_capacity_mc(&problem, &ku, 600, 22).unwrap();
        let joint = (se1 * se1 + se2 * se2).sqrt();
        assert!((f1 - f2).abs() < 4.0 * joint, "{f1} vs {f2} (joint se {joint})");
    }

    #[test]
    fn optimizer_respects_constraint_and_beats_baseline() {
        let n = 2;
        let mut r = CMat::identity(n, n);
        r[(0, 0)] = C64::new(2.0, 0.0);
        let problem =
            PrecoderProblem::new(CMat::zeros(n, n), r, CMat::identity(n, n), 1.0).unwrap();
        let opts = OptimizerOptions {
            max_iter: 40,
            restarts: 2,
            ..OptimizerOptions::default()
        };
        let result = optimize_precoder(&problem, &opts).unwrap();
        assert!(result.best.feasible(1.0), "trace {}", result.best.trace_norm);
        let baseline_k = CMat::identity(n, n);
        let (baseline, _) =
            mmse_capacity_equiv(&problem, &baseline_k, &SolverOptions::default()).unwrap();
        assert!(
            result.best_objective >= baseline - 1e-12,
            "{} vs baseline {}",
            result.best_objective,
            baseline
        );
        // objective trace is monotone within each restart
        for w in result.trace.windows(2) {
            if w[0].restart == w[1].restart {
                assert!(w[1].objective >= w[0].objective - 1e-12);
            }
        }
    }

    #[test]
    fn optimizer_is_deterministic() {
        let problem = white_problem(2, 1.0);
        let opts = OptimizerOptions {
            max_iter: 10,
            restarts: 2,
            seed: 5,
            ..OptimizerOptions::default()
        };
        let a = optimize_precoder(&problem, &opts).unwrap();
        let b = optimize_precoder(&problem, &opts).unwrap();
        assert_eq!(a.best_objective, b.best_objective);
        assert_eq!(a.best.k, b.best.k);
    }

    #[test]
    fn vanishing_budget_drives_objective_to_zero() {
        let problem = white_problem(2, 1e-8);
        let opts = OptimizerOptions {
            max_iter: 10,
            ..OptimizerOptions::default()
        };
        let result = optimize_precoder(&problem, &opts).unwrap();
        assert!(result.best_objective.abs() < 1e-4, "{}", result.best_objective);
    }

    #[test]
    fn negated_sign_finds_nontrivial_precoder() {
        let n = 2;
        let mut r = CMat::identity(n, n);
        r[(0, 0)] = C64::new(2.0, 0.0);
        let problem =
            PrecoderProblem::new(CMat::zeros(n, n), r, CMat::identity(n, n), 1.0).unwrap();
        let opts = OptimizerOptions {
            max_iter: 40,
            sign: ObjectiveSign::Negated,
            ..OptimizerOptions::default()
        };
        let result = optimize_precoder(&problem, &opts).unwrap();
        // the negated objective is positive and the precoder stays on the
        // budget sphere
        assert!(result.best_objective > 0.0);
        assert!(result.best.trace_norm > 0.5);
    }
}
