//! Command-line harness: synthetic data generation, leverage-score
//! inspection, inverse-moment estimation, and convergence experiments with
//! CSV output.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use newton_less::data::{
    cosine_features, gen_coherent, read_matrix_auto, synthesize_targets, write_matrix_auto,
};
use newton_less::experiment::{run_plan, write_csv, ExperimentPlan, RateReport};
use newton_less::leverage::{
    approx_leverage, estimate_deff, exact_leverage_ridge, ApproxParams, DeffMode,
};
use newton_less::moments::estimate_moments;
use newton_less::rng::derive;
use newton_less::sketch::{Scaling, SketchKind, SketchSpec};
use newton_less::solver::{Method, StepMode};
use newton_less::{Error, Objective, ObjectiveKind, Result};

const THREADS_ENV: &str = "NEWTONLESS_THREADS";

#[derive(Parser)]
#[command(
    name = "newton-less",
    about = "Sketched second-order optimization experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver configuration and report its convergence rate.
    Solve(SolveArgs),
    /// Sweep a grid of sketch kinds, sizes, and row sparsities.
    Sweep(SweepArgs),
    /// Monte-Carlo estimates of the inverse moments of the sketched Hessian.
    Moments(MomentsArgs),
    /// Leverage scores, effective dimensions, and coherence of a matrix.
    Levscores(LevscoresArgs),
    /// Generate a synthetic data matrix file.
    GenData(GenDataArgs),
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// Problem family.
    #[arg(long, default_value = "ls", value_parser = ["ls", "ridge", "logistic"])]
    problem: String,
    /// Data source: a matrix file path or "synthetic".
    #[arg(long, default_value = "synthetic")]
    data: String,
    /// Optional targets file; synthesized deterministically when absent.
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Rows of the synthetic matrix.
    #[arg(long, default_value_t = 4096)]
    n: usize,
    /// Columns of the synthetic matrix.
    #[arg(long, default_value_t = 64)]
    d: usize,
    /// Ridge / logistic regularization strength.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Sketch kind, or a baseline: exact-newton | gd.
    #[arg(long, default_value = "less")]
    sketch: String,
    /// Sketch size m.
    #[arg(long, default_value_t = 512)]
    m: usize,
    /// Non-zeros per sketch row (sparsified kinds).
    #[arg(long)]
    nnz_per_row: Option<usize>,
    /// Row scaling: theory | practical.
    #[arg(long, default_value = "theory")]
    scaling: String,
    /// Step policy: auto-simple | auto-sharp | fixed=<v>.
    #[arg(long, default_value = "auto-simple")]
    step: String,
    /// Iterations per trial.
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Workers q for distributed averaging.
    #[arg(long, default_value_t = 1)]
    workers_q: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Thread budget (falls back to NEWTONLESS_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write timing columns as zero so reruns are byte-identical.
    #[arg(long, default_value_t = false)]
    no_timing: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Comma-separated sketch kinds (baselines allowed).
    #[arg(long, default_value = "less,gaussian")]
    sketch: String,
    /// Comma-separated sketch sizes.
    #[arg(long, default_value = "512")]
    m: String,
    /// Comma-separated row sparsities; "default" picks the kind default.
    #[arg(long, default_value = "default")]
    nnz_per_row: String,
    #[arg(long, default_value = "theory")]
    scaling: String,
    #[arg(long, default_value = "auto-simple")]
    step: String,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    workers_q: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = false)]
    no_timing: bool,
}

#[derive(Args)]
struct MomentsArgs {
    /// Sketch kind.
    #[arg(long, default_value = "gaussian")]
    kind: String,
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 4)]
    d: usize,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long)]
    nnz_per_row: Option<usize>,
    #[arg(long, default_value_t = 20000)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Row scaling: theory | unbiased.
    #[arg(long, default_value = "theory")]
    scaling: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LevscoresArgs {
    /// Data source: a matrix file path or "synthetic".
    #[arg(long, default_value = "synthetic")]
    data: String,
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    d: usize,
    /// Ridge regularization of the scores.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// exact | approx.
    #[arg(long, default_value = "exact")]
    mode: String,
    #[arg(long, default_value_t = 8)]
    oversample: usize,
    #[arg(long)]
    jl_dim: Option<usize>,
    /// Effective-dimension estimator: exact | hutchinson.
    #[arg(long, default_value = "exact")]
    deff: String,
    #[arg(long, default_value_t = 64)]
    probes: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Per-row scores CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    /// Generator: coherent | cosine.
    #[arg(long, default_value = "coherent")]
    kind: String,
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Raw input matrix for the cosine feature map.
    #[arg(long)]
    source: Option<PathBuf>,
    /// Gaussian-kernel bandwidth of the cosine feature map.
    #[arg(long, default_value_t = 0.02)]
    bandwidth: f64,
    /// Output path; extension `.nlmx` selects the binary format.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Moments(args) => cmd_moments(args),
        Command::Levscores(args) => cmd_levscores(args),
        Command::GenData(args) => cmd_gen_data(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn resolve_threads(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&t| t > 0)
    })
}

fn parse_kind_or_baseline(s: &str) -> Result<(Option<SketchKind>, Option<Method>)> {
    if let Some(kind) = SketchKind::parse(s) {
        return Ok((Some(kind), None));
    }
    match s {
        "exact-newton" => Ok((None, Some(Method::ExactNewton))),
        "gd" => Ok((None, Some(Method::GradientDescent))),
        _ => Err(Error::InvalidConfig(format!("unknown sketch kind {s:?}"))),
    }
}

fn parse_scaling(s: &str) -> Result<Scaling> {
    Scaling::parse(s).ok_or_else(|| Error::InvalidConfig(format!("unknown scaling {s:?}")))
}

fn parse_step(s: &str) -> Result<StepMode> {
    StepMode::parse(s).ok_or_else(|| Error::InvalidConfig(format!("unknown step policy {s:?}")))
}

fn build_objective(args: &ProblemArgs, seed: u64) -> Result<Objective> {
    let kind = match args.problem.as_str() {
        "ls" => ObjectiveKind::LeastSquares,
        "ridge" => ObjectiveKind::RidgeLeastSquares,
        "logistic" => ObjectiveKind::LogisticL2,
        other => return Err(Error::InvalidConfig(format!("unknown problem {other:?}"))),
    };
    let data = if args.data == "synthetic" {
        gen_coherent(args.n, args.d, derive(seed, &[100]))?
    } else {
        read_matrix_auto(args.data.as_ref())?
    };
    let targets = match &args.targets {
        Some(path) => {
            let mat = read_matrix_auto(path)?;
            if mat.ncols() != 1 {
                return Err(Error::InvalidConfig(format!(
                    "targets file must have one column, got {}",
                    mat.ncols()
                )));
            }
            DVector::from_fn(mat.nrows(), |i, _| mat[(i, 0)])
        }
        None => synthesize_targets(kind, &data, derive(seed, &[101])),
    };
    match kind {
        ObjectiveKind::LeastSquares => Objective::least_squares(data, targets),
        ObjectiveKind::RidgeLeastSquares => {
            Objective::ridge_least_squares(data, targets, args.lambda)
        }
        ObjectiveKind::LogisticL2 => Objective::logistic_l2(data, targets, args.lambda),
    }
}

fn print_report(report: &RateReport) {
    for cell in &report.cells {
        let s = cell
            .s
            .map(|v| v.to_string())
            .unwrap_or_else(|| "default".to_string());
        println!(
            "{} sketch={} m={} s={} q={} trials={}: r_hat={:.6} predicted={:.6} rel_dev={:+.1}% sketch_s={:.6}",
            report.problem,
            cell.sketch,
            cell.m,
            s,
            cell.q,
            cell.trials,
            cell.r_hat,
            cell.predicted,
            100.0 * cell.relative_deviation,
            cell.mean_sketch_seconds,
        );
    }
}

fn finish_plan(plan: &ExperimentPlan, out: Option<&PathBuf>) -> Result<()> {
    let (report, csv, failures) = run_plan(plan)?;
    print_report(&report);
    for f in &failures {
        eprintln!("cell failed: {} ({})", f.label, f.error);
    }
    if let Some(path) = out {
        write_csv(path, &csv)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> Result<()> {
    let objective = build_objective(&args.problem, args.seed)?;
    let (kind, baseline) = parse_kind_or_baseline(&args.sketch)?;
    let mut plan = ExperimentPlan::new(args.problem.problem.clone(), objective);
    if let Some(method) = baseline {
        plan.baselines = vec![method];
    }
    if let Some(kind) = kind {
        plan.sketch_kinds = vec![kind];
        plan.m_values = vec![args.m];
        plan.s_values = vec![args.nnz_per_row];
    }
    plan.scaling = parse_scaling(&args.scaling)?;
    plan.step_mode = parse_step(&args.step)?;
    plan.iters = args.iters;
    plan.trials = args.trials;
    plan.workers = args.workers_q;
    plan.seed = args.seed;
    plan.record_timing = !args.no_timing;
    plan.threads = resolve_threads(args.threads);
    finish_plan(&plan, args.out.as_ref())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let objective = build_objective(&args.problem, args.seed)?;
    let mut plan = ExperimentPlan::new(args.problem.problem.clone(), objective);
    for token in args.sketch.split(',').filter(|t| !t.is_empty()) {
        let (kind, baseline) = parse_kind_or_baseline(token)?;
        if let Some(kind) = kind {
            plan.sketch_kinds.push(kind);
        }
        if let Some(method) = baseline {
            plan.baselines.push(method);
        }
    }
    plan.m_values = args
        .m
        .split(',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad sketch size {t:?}")))
        })
        .collect::<Result<_>>()?;
    plan.s_values = args
        .nnz_per_row
        .split(',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            if t == "default" {
                Ok(None)
            } else {
                t.parse::<usize>()
                    .map(Some)
                    .map_err(|_| Error::InvalidConfig(format!("bad nnz {t:?}")))
            }
        })
        .collect::<Result<_>>()?;
    plan.scaling = parse_scaling(&args.scaling)?;
    plan.step_mode = parse_step(&args.step)?;
    plan.iters = args.iters;
    plan.trials = args.trials;
    plan.workers = args.workers_q;
    plan.seed = args.seed;
    plan.record_timing = !args.no_timing;
    plan.threads = resolve_threads(args.threads);
    finish_plan(&plan, args.out.as_ref())
}

fn cmd_moments(args: MomentsArgs) -> Result<()> {
    let kind = SketchKind::parse(&args.kind)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown sketch kind {:?}", args.kind)))?;
    let scaling = parse_scaling(&args.scaling)?;
    let mut stream = newton_less::rng::Stream::new(derive(args.seed, &[7]));
    let a = DMatrix::from_fn(args.n, args.d, |_, _| stream.next_normal());
    let c = DMatrix::identity(args.d, args.d) * args.lambda;
    let mut spec = SketchSpec::new(kind, args.m).with_scaling(scaling);
    if let Some(s) = args.nnz_per_row {
        spec = spec.with_nnz(s);
    }
    let est = estimate_moments(&a, &c, &spec, args.trials, args.seed)?;
    println!(
        "kind={} m={} d={} lambda={} trials={} dev_first={:.6} dev_second={:.6} failures={}",
        kind.label(),
        args.m,
        args.d,
        args.lambda,
        args.trials,
        est.dev_first,
        est.dev_second,
        est.failures
    );
    if let Some(path) = &args.out {
        let mut csv = String::from("kind,m,d,lambda,trials,devFirst,devSecond,failures\n");
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            kind.label(),
            args.m,
            args.d,
            args.lambda,
            args.trials,
            est.dev_first,
            est.dev_second,
            est.failures
        ));
        std::fs::write(path, csv)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_levscores(args: LevscoresArgs) -> Result<()> {
    let a = if args.data == "synthetic" {
        gen_coherent(args.n, args.d, derive(args.seed, &[100]))?
    } else {
        read_matrix_auto(args.data.as_ref())?
    };
    let profile = match args.mode.as_str() {
        "exact" => exact_leverage_ridge(&a, args.lambda)?,
        "approx" => {
            let c = DMatrix::identity(a.ncols(), a.ncols()) * args.lambda;
            let params = ApproxParams {
                oversample: args.oversample,
                jl_dim: args.jl_dim,
            };
            approx_leverage(&a, &c, params, args.seed)?
        }
        other => return Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
    };
    let deff = match args.deff.as_str() {
        "exact" => estimate_deff(&a, args.lambda, DeffMode::Exact, args.seed)?,
        "hutchinson" => estimate_deff(
            &a,
            args.lambda,
            DeffMode::Hutchinson {
                probes: args.probes,
            },
            args.seed,
        )?,
        other => return Err(Error::InvalidConfig(format!("unknown deff mode {other:?}"))),
    };
    println!(
        "n={} d={} lambda={} exact={} d_eff={:.6} d_eff_tilde={:.6} coherence={:.6} deff_{}={:.6}",
        a.nrows(),
        a.ncols(),
        args.lambda,
        profile.exact,
        profile.d_eff,
        profile.d_eff_tilde,
        profile.coherence,
        args.deff,
        deff
    );
    if let Some(path) = &args.out {
        let mut csv = String::from("row,score\n");
        for (i, s) in profile.scores.iter().enumerate() {
            csv.push_str(&format!("{i},{s}\n"));
        }
        std::fs::write(path, csv)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let mat = match args.kind.as_str() {
        "coherent" => gen_coherent(args.n, args.d, args.seed)?,
        "cosine" => {
            let source = args.source.as_ref().ok_or_else(|| {
                Error::InvalidConfig("cosine features need --source <matrix>".to_string())
            })?;
            let raw = read_matrix_auto(source)?;
            cosine_features(&raw, args.d, args.bandwidth, args.seed)?
        }
        other => return Err(Error::InvalidConfig(format!("unknown generator {other:?}"))),
    };
    write_matrix_auto(&args.out, &mat)?;
    println!(
        "wrote {} ({}x{})",
        args.out.display(),
        mat.nrows(),
        mat.ncols()
    );
    Ok(())
}
