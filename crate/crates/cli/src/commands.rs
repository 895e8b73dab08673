//! Implementations of the subcommands.

use deteq::equivalents::{
    build_t, extended_stability_report, stability_report_from_pair, w_of_z,
};
use deteq::error::Error;
use deteq::linalg::CVec;
use deteq::mc::{estimate_bilinear_moments, rate_regression, trace_gap, MomentEstimate};
use deteq::mimo::{
    mmse_capacity_equiv, mmse_capacity_mc, optimize_precoder, ObjectiveSign, OptimizerOptions,
    PrecoderProblem,
};
use deteq::model::{basis_vector, flat_vector, EvaluationPoint, ModelSpec};
use deteq::rng::child_seed;
use deteq::schema::{
    fmt_f64, moment_csv_row, optimizer_csv_row, stability_csv_row, subspace_csv_row, MatrixJson,
    RateFitJson, SubspaceRecord, MOMENT_CSV_HEADER, OPTIMIZER_CSV_HEADER, STABILITY_CSV_HEADER,
    SUBSPACE_CSV_HEADER,
};
use deteq::solver::{solve_canonical_grid, GridMode, SolverOptions};
use deteq::subspace::{auto_contour, estimate_projector_quadform, true_projector};
use deteq::CMat;
use serde_json::{json, Value};

use crate::util::{complex_json, RunContext};

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    if values.is_empty() {
        f64::NAN
    } else if values.len() % 2 == 1 {
        values[values.len() / 2]
    } else {
        0.5 * (values[values.len() / 2 - 1] + values[values.len() / 2])
    }
}

fn solution_json(sol: &deteq::CanonicalSolution) -> Value {
    json!({
        "z": complex_json(sol.z),
        "delta": complex_json(sol.delta),
        "delta_tilde": complex_json(sol.delta_tilde),
        "residual": sol.residual,
        "iterations": sol.iterations,
        "converged": sol.converged,
    })
}

pub fn run_solve(
    ctx: RunContext,
    spec: &ModelSpec,
    points: &[EvaluationPoint],
    opts: &SolverOptions,
    warm: bool,
) -> Result<(), Error> {
    let mode = if warm { GridMode::WarmStart } else { GridMode::ColdStart };
    let solutions = solve_canonical_grid(spec, points, opts, mode)?;
    let result = if solutions.len() == 1 {
        solution_json(&solutions[0])
    } else {
        json!({"results": solutions.iter().map(solution_json).collect::<Vec<_>>()})
    };
    ctx.finish(result)
}

pub fn run_equiv(
    ctx: RunContext,
    spec: &ModelSpec,
    points: &[EvaluationPoint],
    opts: &SolverOptions,
    export_matrices: bool,
) -> Result<(), Error> {
    let mut entries = Vec::new();
    for (index, pt) in points.iter().enumerate() {
        let sol = deteq::solver::solve_canonical(spec, pt, opts)?;
        let pair = build_t(spec, &sol)?;
        let dist = pt.dist_to_real_axis();
        let norm_t = pair.norm_t();
        let norm_t_tilde = pair.norm_t_tilde();
        entries.push(json!({
            "z": complex_json(pt.z()),
            "delta": complex_json(sol.delta),
            "delta_tilde": complex_json(sol.delta_tilde),
            "w": complex_json(w_of_z(pt, &sol)),
            "trace_residual": pair.trace_consistency(spec),
            "duality_residual": pair.duality_residual(spec),
            "norm_t": norm_t,
            "norm_t_tilde": norm_t_tilde,
            "norm_bound_ok": norm_t * dist <= 1.0 + 1e-10 && norm_t_tilde * dist <= 1.0 + 1e-10,
        }));
        if export_matrices {
            let t_json = serde_json::to_string_pretty(&MatrixJson::from_matrix(&pair.t))
                .expect("serializable");
            ctx.write_file(&format!("t_{index}.json"), &t_json)?;
            let tt_json =
                serde_json::to_string_pretty(&MatrixJson::from_matrix(&pair.t_tilde))
                    .expect("serializable");
            ctx.write_file(&format!("t_tilde_{index}.json"), &tt_json)?;
        }
    }
    let result = if entries.len() == 1 {
        entries.pop().expect("one entry")
    } else {
        json!({"results": entries})
    };
    ctx.finish(result)
}

pub fn run_diagnostics(
    ctx: RunContext,
    spec: &ModelSpec,
    points: &[EvaluationPoint],
    opts: &SolverOptions,
    extended: Option<(usize, u64)>,
) -> Result<(), Error> {
    let mut csv = String::from(STABILITY_CSV_HEADER);
    csv.push('\n');
    let mut min_det = f64::INFINITY;
    let mut all_nonneg = true;
    let mut extended_csv = String::from(
        "z_re,z_im,u0_re,u0_im,u0t_re,u0t_im,v0_re,v0_im,v0t_re,v0t_im,\
         det0_re,det0_im,u2,u2t,v2,v2t,det2,alpha_re,alpha_im",
    );
    extended_csv.push('\n');

    for (index, pt) in points.iter().enumerate() {
        let sol = deteq::solver::solve_canonical(spec, pt, opts).map_err(|e| {
            Error::GridPoint {
                index,
                source: Box::new(e),
            }
        })?;
        let pair = build_t(spec, &sol)?;
        let rep = stability_report_from_pair(spec, &pair)?;
        min_det = min_det.min(rep.det_i_minus_c1);
        all_nonneg &= 1.0 - rep.u1 >= 0.0 && 1.0 - rep.u1_tilde >= 0.0 && rep.det_i_minus_c1 > 0.0;
        csv.push_str(&stability_csv_row(&rep));
        csv.push('\n');

        if let Some((replicates, seed)) = extended {
            let stats = trace_gap(spec, pt, replicates, child_seed(seed, index as u64), opts)?;
            let ext = extended_stability_report(
                spec,
                pt,
                &sol,
                stats.alpha_hat,
                stats.alpha_tilde_hat,
            )?;
            let fields = [
                ext.z.re,
                ext.z.im,
                ext.u0.re,
                ext.u0.im,
                ext.u0_tilde.re,
                ext.u0_tilde.im,
                ext.v0.re,
                ext.v0.im,
                ext.v0_tilde.re,
                ext.v0_tilde.im,
                ext.det_i_minus_c0.re,
                ext.det_i_minus_c0.im,
                ext.u2,
                ext.u2_tilde,
                ext.v2,
                ext.v2_tilde,
                ext.det_i_minus_c2,
                stats.alpha_hat.re,
                stats.alpha_hat.im,
            ];
            extended_csv.push_str(&fields.map(fmt_f64).join(","));
            extended_csv.push('\n');
        }
    }

    ctx.write_file("diagnostics.csv", &csv)?;
    if extended.is_some() {
        ctx.write_file("diagnostics_extended.csv", &extended_csv)?;
    }
    ctx.finish(json!({
        "points": points.len(),
        "min_det": min_det,
        "all_stable": all_nonneg,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum VectorKind {
    E1,
    Flat,
}

impl VectorKind {
    pub fn build(self, len: usize) -> CVec {
        match self {
            VectorKind::E1 => basis_vector(len, 0),
            VectorKind::Flat => flat_vector(len),
        }
    }
}

/// Scale a uniform-profile, zero-signal spec family to a new column count.
fn scaled_spec(base: &ModelSpec, n_cols: usize) -> Result<ModelSpec, Error> {
    if !base.is_uniform_profile() || !base.a_is_zero() {
        return Err(Error::InvalidArgument(
            "dimension sweeps require a uniform variance profile and A = 0 \
             (the family is otherwise ambiguous)"
                .into(),
        ));
    }
    let ratio = base.n_rows() as f64 / base.n_cols() as f64;
    let n_rows = ((ratio * n_cols as f64).round() as usize).max(1);
    ModelSpec::without_signal(
        vec![base.d()[0]; n_rows],
        vec![base.d_tilde()[0]; n_cols],
        base.entry_law(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn run_mc_moments(
    ctx: RunContext,
    spec: &ModelSpec,
    pt: &EvaluationPoint,
    p: u32,
    n_grid: Option<Vec<usize>>,
    replicates: usize,
    seed: u64,
    u_kind: VectorKind,
    v_kind: VectorKind,
    opts: &SolverOptions,
) -> Result<(), Error> {
    let mut estimates: Vec<MomentEstimate> = Vec::new();
    match n_grid {
        Some(grid) => {
            for (index, &n_cols) in grid.iter().enumerate() {
                let family = scaled_spec(spec, n_cols)?;
                let u = u_kind.build(family.n_rows());
                let v = v_kind.build(family.n_rows());
                let est = estimate_bilinear_moments(
                    &family,
                    pt,
                    &u,
                    &v,
                    p,
                    replicates,
                    child_seed(seed, index as u64),
                    opts,
                )?;
                estimates.push(est);
            }
        }
        None => {
            let u = u_kind.build(spec.n_rows());
            let v = v_kind.build(spec.n_rows());
            estimates.push(estimate_bilinear_moments(
                spec, pt, &u, &v, p, replicates, seed, opts,
            )?);
        }
    }

    let mut csv = String::from(MOMENT_CSV_HEADER);
    csv.push('\n');
    for est in &estimates {
        csv.push_str(&moment_csv_row(est));
        csv.push('\n');
    }
    ctx.write_file("moments.csv", &csv)?;

    let mut result = json!({
        "estimates": estimates.iter().map(|e| json!({
            "n": e.n_cols,
            "N": e.n_rows,
            "mean_moment": e.mean_moment,
            "std_error": e.std_error,
        })).collect::<Vec<_>>(),
    });
    if estimates.len() >= 3 {
        let fit = rate_regression(&estimates)?;
        let fit_json = serde_json::to_value(RateFitJson::from(&fit)).expect("serializable");
        ctx.write_file(
            "rate.json",
            &serde_json::to_string_pretty(&fit_json).expect("serializable"),
        )?;
        result["rate"] = fit_json;
    }
    ctx.finish(result)
}

pub fn run_trace_gap(
    ctx: RunContext,
    spec: &ModelSpec,
    pt: &EvaluationPoint,
    replicates: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<(), Error> {
    let stats = trace_gap(spec, pt, replicates, seed, opts)?;
    let mut csv = String::from("replicate,gap_re,gap_im\n");
    for (r, g) in stats.per_replicate_gap.iter().enumerate() {
        csv.push_str(&format!("{r},{},{}\n", fmt_f64(g.re), fmt_f64(g.im)));
    }
    ctx.write_file("trace_gap.csv", &csv)?;
    ctx.finish(json!({
        "N": stats.n_rows,
        "n": stats.n_cols,
        "z": complex_json(stats.z),
        "replicates": stats.replicates,
        "seed": stats.seed,
        "mean_gap": complex_json(stats.mean_gap),
        "abs_mean_gap": stats.abs_mean_gap,
        "mean_weighted_gap": complex_json(stats.mean_weighted_gap),
        "abs_mean_weighted_gap": stats.abs_mean_weighted_gap,
        "alpha_hat": complex_json(stats.alpha_hat),
        "alpha_tilde_hat": complex_json(stats.alpha_tilde_hat),
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SubspaceVector {
    Both,
    Perp,
    In,
}

#[allow(clippy::too_many_arguments)]
pub fn run_subspace(
    ctx: RunContext,
    spec: &ModelSpec,
    r_hint: Option<usize>,
    y: f64,
    nodes_per_edge: usize,
    seeds: &[u64],
    u_choice: SubspaceVector,
) -> Result<(), Error> {
    if spec.a_is_zero() {
        return Err(Error::InvalidArgument(
            "subspace estimation needs a nonzero signal matrix A in the spec".into(),
        ));
    }
    let (projector, rank) = true_projector(spec.a(), None)?;
    let svd = spec.a().clone().svd(true, false);
    let u_mat = svd
        .u
        .ok_or_else(|| Error::Numerical("SVD did not return left vectors".into()))?;
    let u_in = CVec::from_column_slice(u_mat.column(0).as_slice());
    let u_perp = CVec::from_column_slice(u_mat.column(rank).as_slice());

    let mut csv = String::from(SUBSPACE_CSV_HEADER);
    csv.push('\n');
    let mut errs_perp = Vec::new();
    let mut errs_in = Vec::new();

    for &seed in seeds {
        let sample = spec.sample(seed);
        let sel = auto_contour(&sample, r_hint, y, nodes_per_edge)?;
        let mut eval = |u: &CVec, kind: &str, errs: &mut Vec<f64>| -> Result<(), Error> {
            let est = estimate_projector_quadform(&sample, u, &sel.contour)?;
            let oracle = deteq::model::bilinear_form(u, &projector, u)?.re;
            errs.push((est.value - oracle).abs());
            let record = SubspaceRecord {
                seed,
                n_rows: spec.n_rows(),
                n_cols: spec.n_cols(),
                rank: sel.rank,
                u_kind: kind.to_string(),
                estimate: est.value,
                oracle,
                nodes_per_edge,
                x_minus: sel.contour.x_minus,
                x_plus: sel.contour.x_plus,
                y,
            };
            csv.push_str(&subspace_csv_row(&record));
            csv.push('\n');
            Ok(())
        };
        if matches!(u_choice, SubspaceVector::Both | SubspaceVector::Perp) {
            eval(&u_perp, "perp", &mut errs_perp)?;
        }
        if matches!(u_choice, SubspaceVector::Both | SubspaceVector::In) {
            eval(&u_in, "in", &mut errs_in)?;
        }
    }
    ctx.write_file("subspace.csv", &csv)?;
    let mut result = json!({
        "seeds": seeds.len(),
        "rank": rank,
        "nodes_per_edge": nodes_per_edge,
        "y": y,
    });
    if !errs_perp.is_empty() {
        result["median_abs_err_perp"] = json!(median(&mut errs_perp));
    }
    if !errs_in.is_empty() {
        result["median_abs_err_in"] = json!(median(&mut errs_in));
    }
    ctx.finish(result)
}

pub fn run_mimo_eval(
    ctx: RunContext,
    problem: &PrecoderProblem,
    k: &CMat,
    replicates: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<(), Error> {
    let (mc, std_error) = mmse_capacity_mc(problem, k, replicates, seed)?;
    let (equiv, sol) = mmse_capacity_equiv(problem, k, opts)?;
    let n = problem.n_rows() as f64;
    ctx.finish(json!({
        "i_mc": mc,
        "std_error": std_error,
        "i_equiv": equiv,
        "gap_abs": (mc - equiv).abs(),
        "gap_per_row": (mc - equiv).abs() / n,
        "delta": sol.delta,
        "delta_tilde": sol.delta_tilde,
        "replicates": replicates,
        "seed": seed,
    }))
}

#[allow(clippy::too_many_arguments)]
pub fn run_mimo_opt(
    ctx: RunContext,
    problem: &PrecoderProblem,
    max_iter: usize,
    step: f64,
    fd_step: f64,
    restarts: usize,
    seed: u64,
    negate: bool,
    solver: &SolverOptions,
) -> Result<(), Error> {
    let opts = OptimizerOptions {
        max_iter,
        step,
        fd_step,
        restarts,
        seed,
        sign: if negate { ObjectiveSign::Negated } else { ObjectiveSign::Literal },
        solver: *solver,
    };
    let result = optimize_precoder(problem, &opts)?;
    let mut csv = String::from(OPTIMIZER_CSV_HEADER);
    csv.push('\n');
    for rec in &result.trace {
        csv.push_str(&optimizer_csv_row(rec));
        csv.push('\n');
    }
    ctx.write_file("mimo_opt.csv", &csv)?;
    let k_json = serde_json::to_value(MatrixJson::from_matrix(&result.best.k))
        .expect("serializable");
    ctx.finish(json!({
        "best_objective": result.best_objective,
        "trace_norm": result.best.trace_norm,
        "budget": problem.trace_budget(),
        "feasible": result.best.feasible(problem.trace_budget()),
        "negated_convention": negate,
        "iterations": result.trace.len(),
        "restarts": restarts,
        "k": k_json,
    }))
}

pub fn run_identities(
    ctx: RunContext,
    spec: &ModelSpec,
    pt: &EvaluationPoint,
    seed: u64,
    instances: usize,
    fail_above: Option<f64>,
) -> Result<(), Error> {
    let mut csv = String::from(
        "instance,seed,column,coresolvent_diagonal,rank_one_downdate,rank_one_update,\
         denominator_reciprocal,row_projection\n",
    );
    let mut max_residual: f64 = 0.0;
    let mut stieltjes_ok = true;
    for instance in 0..instances {
        let child = child_seed(seed, instance as u64);
        let sample = spec.sample(child);
        for j in 0..spec.n_cols() {
            let rep = sample.rank_one_identity_report(pt, j)?;
            max_residual = max_residual.max(rep.max_residual());
            stieltjes_ok &= rep.stieltjes_bound_ok();
            csv.push_str(&format!(
                "{instance},{child},{j},{},{},{},{},{}\n",
                fmt_f64(rep.coresolvent_diagonal),
                fmt_f64(rep.rank_one_downdate),
                fmt_f64(rep.rank_one_update),
                fmt_f64(rep.denominator_reciprocal),
                fmt_f64(rep.row_projection),
            ));
        }
    }
    ctx.write_file("identities.csv", &csv)?;
    if let Some(threshold) = fail_above {
        if max_residual > threshold {
            return Err(Error::Numerical(format!(
                "identity residual {max_residual:.3e} exceeds threshold {threshold:.3e}"
            )));
        }
    }
    ctx.finish(json!({
        "instances": instances,
        "columns": spec.n_cols(),
        "max_residual": max_residual,
        "stieltjes_bound_ok": stieltjes_ok,
    }))
}
