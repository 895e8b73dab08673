//! `deteq` — batch front end for the deterministic-equivalent library.
//!
//! Every subcommand reads JSON inputs, writes JSON/CSV outputs (plus a
//! manifest echoing the full configuration) and is reproducible from its
//! seed alone: reruns with any worker count produce bit-identical result
//! files.

mod commands;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deteq::error::Error;
use deteq::schema::{problem_from_json, spec_from_json};
use deteq::solver::SolverOptions;
use serde_json::json;

use commands::{SubspaceVector, VectorKind};
use util::{parse_complex, parse_points, parse_seeds, parse_z_grid, read_file, RunContext};

#[derive(Parser)]
#[command(name = "deteq", version, about = "Deterministic equivalents of random Gram-matrix resolvents: solvers, Monte Carlo verification, subspace estimation, MIMO capacity")]
struct Cli {
    /// Worker threads (overrides DETEQ_WORKERS; default: all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory for result/manifest/CSV files
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Relative tolerance of the fixed-point solver
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Iteration cap of the fixed-point solver
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Initial damping in (0, 1]; halved automatically on oscillation
    #[arg(long, default_value_t = 1.0)]
    damping: f64,
}

impl SolverArgs {
    fn to_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            damping: self.damping,
        }
    }

    fn config_json(&self) -> serde_json::Value {
        json!({"tol": self.tol, "max_iter": self.max_iter, "damping": self.damping})
    }
}

#[derive(Args, Clone)]
struct PointArgs {
    /// Evaluation point(s), e.g. "-1+0i" (repeatable or comma-separated)
    #[arg(long, value_delimiter = ',')]
    z: Vec<String>,
    /// Evenly spaced grid start:end:count:im (appended to --z)
    #[arg(long)]
    z_grid: Option<String>,
}

impl PointArgs {
    fn points(&self) -> Result<Vec<deteq::EvaluationPoint>, Error> {
        let mut points = parse_points(&self.z)?;
        if let Some(grid) = &self.z_grid {
            points.extend(parse_z_grid(grid)?);
        }
        if points.is_empty() {
            return Err(Error::InvalidArgument(
                "no evaluation points: pass --z and/or --z-grid".into(),
            ));
        }
        Ok(points)
    }

    fn config_json(&self) -> serde_json::Value {
        json!({"z": self.z, "z_grid": self.z_grid})
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the canonical fixed-point system at one or more points
    Solve {
        /// Model spec JSON file
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        points: PointArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Warm-start each point from the previous one (sequential)
        #[arg(long)]
        warm: bool,
    },
    /// Build the deterministic equivalent pair and report its invariants
    Equiv {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        points: PointArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Also write T and T~ as JSON matrices (needs --out)
        #[arg(long)]
        export_matrices: bool,
    },
    /// Stability diagnostics over a z grid (CSV)
    Diagnostics {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        points: PointArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Also compute the Monte Carlo coefficient diagnostics
        #[arg(long)]
        extended: bool,
        /// Replicates for the extended diagnostics
        #[arg(long, default_value_t = 100)]
        reps: usize,
        /// Master seed for the extended diagnostics
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Monte Carlo moments of bilinear resolvent forms across a dimension grid
    McMoments {
        #[arg(long)]
        spec: PathBuf,
        /// Evaluation point, e.g. "-1+0i"
        #[arg(long)]
        z: String,
        /// Moment order p (the moment is |.|^{2p})
        #[arg(long, default_value_t = 1)]
        p: u32,
        /// Column counts, e.g. 50,100,200,400 (omit to use the spec's size)
        #[arg(long, value_delimiter = ',')]
        ngrid: Option<Vec<usize>>,
        /// Replicates per grid point
        #[arg(long, default_value_t = 400)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = VectorKind::E1)]
        u_kind: VectorKind,
        #[arg(long, value_enum, default_value_t = VectorKind::Flat)]
        v_kind: VectorKind,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// First-order trace statistics and (alpha, alpha~) estimates
    TraceGap {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        z: String,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Noise-subspace projector estimation sweep (CSV per seed)
    Subspace {
        #[arg(long)]
        spec: PathBuf,
        /// Planted signal rank (omit to detect from the spectrum)
        #[arg(long)]
        r_hint: Option<usize>,
        /// Rectangle half-height
        #[arg(long, default_value_t = 0.5)]
        y: f64,
        /// Gauss nodes per rectangle edge
        #[arg(long, default_value_t = 64)]
        nodes: usize,
        /// Seed set: "1..50" or "1,2,9"
        #[arg(long)]
        seeds: String,
        #[arg(long, value_enum, default_value_t = SubspaceVector::Both)]
        u_kind: SubspaceVector,
    },
    /// Compare Monte Carlo and deterministic capacity at a fixed precoder
    MimoEval {
        /// Precoder problem JSON file
        #[arg(long)]
        problem: PathBuf,
        /// Precoder matrix JSON file (default: scaled identity)
        #[arg(long)]
        k: Option<PathBuf>,
        /// Scale for the identity precoder when --k is absent
        #[arg(long, default_value_t = 1.0)]
        k_scale: f64,
        #[arg(long, default_value_t = 500)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Projected-gradient search for a precoder under the trace budget
    MimoOpt {
        #[arg(long)]
        problem: PathBuf,
        /// Override the trace budget from the problem file
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long, default_value_t = 60)]
        max_iter: usize,
        #[arg(long, default_value_t = 0.25)]
        step: f64,
        #[arg(long, default_value_t = 1e-5)]
        fd_step: f64,
        #[arg(long, default_value_t = 1)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Maximize the negated objective (the usual capacity convention)
        #[arg(long)]
        negate: bool,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Verify the exact rank-one resolvent identities on sampled instances
    Identities {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        z: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        /// Exit nonzero if any residual exceeds this threshold
        #[arg(long)]
        fail_above: Option<f64>,
    },
}

fn init_workers(cli_workers: Option<usize>) -> Result<(), Error> {
    let from_env = std::env::var("DETEQ_WORKERS")
        .ok()
        .map(|v| {
            v.parse::<usize>().map_err(|_| {
                Error::InvalidArgument(format!("DETEQ_WORKERS = \"{v}\" is not a number"))
            })
        })
        .transpose()?;
    if let Some(n) = cli_workers.or(from_env) {
        if n == 0 {
            return Err(Error::InvalidArgument("worker count must be >= 1".into()));
        }
        // ignore the error if a pool already exists (tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    init_workers(cli.workers)?;
    let out = cli.out.clone();
    match cli.command {
        Command::Solve {
            spec,
            points,
            solver,
            warm,
        } => {
            let model = spec_from_json(&read_file(&spec)?)?;
            let pts = points.points()?;
            let config = json!({
                "spec_path": spec, "points": points.config_json(),
                "solver": solver.config_json(), "warm": warm,
            });
            let ctx = RunContext::new("solve", config, out)?;
            commands::run_solve(ctx, &model, &pts, &solver.to_options(), warm)
        }
        Command::Equiv {
            spec,
            points,
            solver,
            export_matrices,
        } => {
            let model = spec_from_json(&read_file(&spec)?)?;
            let pts = points.points()?;
            let config = json!({
                "spec_path": spec, "points": points.config_json(),
                "solver": solver.config_json(), "export_matrices": export_matrices,
            });
            let ctx = RunContext::new("equiv", config, out)?;
            commands::run_equiv(ctx, &model, &pts, &solver.to_options(), export_matrices)
        }
        Command::Diagnostics {
            spec,
            points,
            solver,
            extended,
            reps,
            seed,
        } => {
            let model = spec_from_json(&read_file(&spec)?)?;
            let pts = points.points()?;
            let config = json!({
                "spec_path": spec, "points": points.config_json(),
                "solver": solver.config_json(), "extended": extended,
                "reps": reps, "seed": seed,
            });
            let ctx = RunContext::new("diagnostics", config, out)?;
            commands::run_diagnostics(
                ctx,
                &model,
                &pts,
                &solver.to_options(),
                extended.then_some((reps, seed)),
            )
        }
        Command::McMoments {
            spec,
            z,
            p,
            ngrid,
            reps,
            seed,
            u_kind,
            v_kind,
            solver,
        } => {
            let model = spec_from_json(&read_file(&spec)?)?;
            let pt = deteq::EvaluationPoint::new(parse_complex(&z)?)?;
            let config = json!({
                "spec_path": spec, "z": z, "p": p, "ngrid": ngrid, "reps": reps,
                "seed": seed, "u_kind": format!("{u_kind:?}"), "v_kind": format!("{v_kind:?}"),
                "solver": solver.config_json(),
            });
            let ctx = RunContext::new("mc-moments", config, out)?;
            commands::run_mc_moments(
                ctx,
                &model,
                &pt,
                p,
                ngrid,
                reps,
                seed,
                u_kind,
                v_kind,
                &solver.to_options(),
            )
        }
        Command::TraceGap {
            spec,
            z,
            reps,
            seed,
            solver,
        } => {
            let model = spec_from_json(&read_file(&spec)?)?;
            let pt = deteq::EvaluationPoint::new(parse_complex(&z)?)?;
            let config = json!({
                "spec_path": spec, "z": z, "reps": reps, "seed": seed,
                "solver": solver.config_json(),
            });
            let ctx = RunContext::new("trace-gap", config, out)?;
            commands::run_trace_gap(ctx, &model, &pt, reps, seed, &solver.to_options())
        }
        Command::Subspace {
            spec,
            r_hint,
            y,
            nodes,
            seeds,
            u_kind,
        } => {
            let model = spec_from_json(&read_file(&spec)?)?;
            let seed_list = parse_seeds(&seeds)?;
            let config = json!({
                "spec_path": spec, "r_hint": r_hint, "y": y, "nodes": nodes,
                "seeds": seeds, "u_kind": format!("{u_kind:?}"),
            });
            let ctx = RunContext::new("subspace", config, out)?;
            commands::run_subspace(ctx, &model, r_hint, y, nodes, &seed_list, u_kind)
        }
        Command::MimoEval {
            problem,
            k,
            k_scale,
            reps,
            seed,
            solver,
        } => {
            let prob = problem_from_json(&read_file(&problem)?)?;
            let k_mat = match &k {
                Some(path) => {
                    let mj: deteq::schema::MatrixJson = serde_json::from_str(&read_file(path)?)
                        .map_err(|e| {
                            Error::InvalidArgument(format!("K matrix JSON parse error: {e}"))
                        })?;
                    mj.to_matrix(prob.n_rows(), prob.n_rows())?
                }
                None => {
                    deteq::CMat::identity(prob.n_rows(), prob.n_rows())
                        * deteq::C64::new(k_scale, 0.0)
                }
            };
            let config = json!({
                "problem_path": problem, "k_path": k, "k_scale": k_scale,
                "reps": reps, "seed": seed, "solver": solver.config_json(),
            });
            let ctx = RunContext::new("mimo-eval", config, out)?;
            commands::run_mimo_eval(ctx, &prob, &k_mat, reps, seed, &solver.to_options())
        }
        Command::MimoOpt {
            problem,
            budget,
            max_iter,
            step,
            fd_step,
            restarts,
            seed,
            negate,
            solver,
        } => {
            let mut prob = problem_from_json(&read_file(&problem)?)?;
            if let Some(a) = budget {
                prob = deteq::mimo::PrecoderProblem::new(
                    prob.b().clone(),
                    prob.r().clone(),
                    prob.r_tilde().clone(),
                    a,
                )?;
            }
            let config = json!({
                "problem_path": problem, "budget": budget, "max_iter": max_iter,
                "step": step, "fd_step": fd_step, "restarts": restarts,
                "seed": seed, "negate": negate, "solver": solver.config_json(),
            });
            let ctx = RunContext::new("mimo-opt", config, out)?;
            commands::run_mimo_opt(
                ctx,
                &prob,
                max_iter,
                step,
                fd_step,
                restarts,
                seed,
                negate,
                &solver.to_options(),
            )
        }
        Command::Identities {
            spec,
            z,
            seed,
            instances,
            fail_above,
        } => {
            let model = spec_from_json(&read_file(&spec)?)?;
            let pt = deteq::EvaluationPoint::new(parse_complex(&z)?)?;
            let config = json!({
                "spec_path": spec, "z": z, "seed": seed,
                "instances": instances, "fail_above": fail_above,
            });
            let ctx = RunContext::new("identities", config, out)?;
            commands::run_identities(ctx, &model, &pt, seed, instances, fail_above)
        }
    }
}

fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::InvalidSpec(_)
        | Error::InvalidArgument(_)
        | Error::InvalidPoint { .. }
        | Error::DimensionMismatch(_)
        | Error::Quadrature(_) => 2,
        _ => 3,
    }
}

fn error_kind(error: &Error) -> &'static str {
    match error {
        Error::InvalidSpec(_) => "invalid-spec",
        Error::InvalidArgument(_) => "invalid-argument",
        Error::InvalidPoint { .. } => "invalid-point",
        Error::DimensionMismatch(_) => "dimension-mismatch",
        Error::LinearSolve(_) => "linear-solve",
        Error::NoConvergence { .. } => "no-convergence",
        Error::GridPoint { .. } => "grid-point",
        Error::Replicate { .. } => "replicate",
        Error::SeparationFailure(_) => "separation-failure",
        Error::Quadrature(_) => "quadrature",
        Error::Numerical(_) => "numerical",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let doc = json!({"error": {"kind": error_kind(&e), "message": e.to_string()}});
            eprintln!("{}", serde_json::to_string(&doc).expect("serializable"));
            ExitCode::from(exit_code_for(&e))
        }
    }
}
