//! Newton Sketch iterations, exact-Newton and gradient-descent baselines,
//! fixed step-size policies, and the distributed-averaging variant.
//!
//! Each iteration draws a fresh sketch, solves the sketched Newton system by
//! symmetric factorization, and moves with a fixed step size chosen by the
//! policy; there is no line search. Trials are independent and run in
//! parallel with per-trial derived seeds, so traces are reproducible
//! bit-for-bit.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::leverage::{effective_dims, exact_leverage_ridge, LeverageProfile};
use crate::linalg::{spd_solve, sym_spectral_norm};
use crate::problem::{HessianSqrtView, Objective, ObjectiveKind};
use crate::rng::derive;
use crate::sketch::{sketched_hessian, SketchSpec};

/// Snapshot of the two effective dimensions used by the automatic step-size
/// policies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveDims {
    pub d_eff: f64,
    pub d_eff_tilde: f64,
}

impl EffectiveDims {
    pub fn ambient(d: usize) -> Self {
        EffectiveDims {
            d_eff: d as f64,
            d_eff_tilde: d as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepMode {
    /// `mu = 1 - d_eff / m`.
    AutoSimple,
    /// `mu = q (m - d_eff_tilde) / (d_eff + q (m - d_eff_tilde))`; with one
    /// worker this is the sharper `1 - d_eff / (m + d_eff - d_eff_tilde)`.
    AutoSharp,
    /// A fixed value in `(0, 1]`.
    Fixed(f64),
}

impl StepMode {
    pub fn parse(s: &str) -> Option<StepMode> {
        match s {
            "auto-simple" => Some(StepMode::AutoSimple),
            "auto-sharp" => Some(StepMode::AutoSharp),
            _ => {
                let v = s.strip_prefix("fixed=")?.parse::<f64>().ok()?;
                Some(StepMode::Fixed(v))
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            StepMode::AutoSimple => "auto-simple".to_string(),
            StepMode::AutoSharp => "auto-sharp".to_string(),
            StepMode::Fixed(v) => format!("fixed={v}"),
        }
    }
}

/// A step-size policy: mode plus the dimension snapshot and worker count it
/// is evaluated with.
#[derive(Clone, Copy, Debug)]
pub struct StepPolicy {
    pub mode: StepMode,
    pub dims: EffectiveDims,
    pub workers: usize,
}

impl StepPolicy {
    pub fn step_size(&self, m: usize) -> Result<f64> {
        let q = self.workers.max(1) as f64;
        let mf = m as f64;
        let EffectiveDims { d_eff, d_eff_tilde } = self.dims;
        match self.mode {
            StepMode::Fixed(v) => {
                if !(v > 0.0 && v <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "fixed step size must be in (0, 1], got {v}"
                    )));
                }
                Ok(v)
            }
            StepMode::AutoSimple => {
                if mf <= d_eff {
                    return Err(Error::InvalidConfig(format!(
                        "auto step sizes need m > d_eff, got m = {m}, d_eff = {d_eff}"
                    )));
                }
                Ok(1.0 - d_eff / mf)
            }
            StepMode::AutoSharp => {
                if mf <= d_eff {
                    return Err(Error::InvalidConfig(format!(
                        "auto step sizes need m > d_eff, got m = {m}, d_eff = {d_eff}"
                    )));
                }
                let spread = q * (mf - d_eff_tilde);
                Ok(spread / (d_eff + spread))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Sketched,
    ExactNewton,
    GradientDescent,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Sketched => "sketched",
            Method::ExactNewton => "exact-newton",
            Method::GradientDescent => "gd",
        }
    }
}

/// Solver configuration. The sketch seed inside `sketch` is the base seed;
/// per-(trial, iteration) seeds are derived from `seed`.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub method: Method,
    pub sketch: SketchSpec,
    pub step_mode: StepMode,
    /// Iteration budget `T`.
    pub iters: usize,
    pub trials: usize,
    pub seed: u64,
    /// Worker count `q` for distributed averaging.
    pub workers: usize,
    /// Known minimizer for error reporting; computed when absent.
    pub ref_point: Option<DVector<f64>>,
}

impl SolverConfig {
    pub fn sketched(sketch: SketchSpec, step_mode: StepMode, iters: usize, trials: usize) -> Self {
        SolverConfig {
            method: Method::Sketched,
            sketch,
            step_mode,
            iters,
            trials,
            seed: 0,
            workers: 1,
            ref_point: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_workers(mut self, q: usize) -> Self {
        self.workers = q;
        self
    }
}

/// One recorded iteration. Iteration 0 is the starting point with `mu = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterRecord {
    pub mu: f64,
    /// `||x - x*||_H^2` with `H` the Hessian at the minimizer.
    pub error_h: f64,
    /// `f(x) - f(x*)`.
    pub f_gap: f64,
    pub sketch_seconds: f64,
    pub step_seconds: f64,
}

/// Per-trial trace of length `iters + 1`.
#[derive(Clone, Debug)]
pub struct TrialTrace {
    pub trial: usize,
    pub records: Vec<IterRecord>,
}

/// Result of a multi-trial solve. Failed trials are excluded from `traces`
/// and counted in `failures`.
#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub traces: Vec<TrialTrace>,
    pub failures: usize,
    pub x_star: DVector<f64>,
    pub f_star: f64,
    pub dims: EffectiveDims,
}

impl SolveOutcome {
    /// Trimmed-mean per-iteration contraction rate of the chosen metric,
    /// `(trimmed_mean(v_T / v_0))^(1/T)`, floored at `1e-16`.
    pub fn rate(&self, metric: RateMetric, trim_fraction: f64) -> Option<f64> {
        let ratios: Vec<f64> = self
            .traces
            .iter()
            .filter_map(|t| {
                let first = t.records.first()?;
                let last = t.records.last()?;
                let (v0, vt) = match metric {
                    RateMetric::ErrorH => (first.error_h, last.error_h),
                    RateMetric::FGap => (first.f_gap, last.f_gap),
                };
                if v0 > 0.0 {
                    Some((vt / v0).max(f64::MIN_POSITIVE))
                } else {
                    None
                }
            })
            .collect();
        if ratios.is_empty() {
            return None;
        }
        let t = (self.traces[0].records.len() - 1).max(1) as f64;
        let mean = trimmed_mean(&ratios, 0.02_f64.max(trim_fraction.min(0.5)));
        Some(mean.powf(1.0 / t).max(1e-16))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateMetric {
    ErrorH,
    FGap,
}

/// Mean after discarding the largest `ceil(fraction * len)` values (the
/// worst trials), keeping at least one value.
pub fn trimmed_mean(values: &[f64], fraction: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let drop = ((fraction * sorted.len() as f64).ceil() as usize).min(sorted.len() - 1);
    let kept = &sorted[..sorted.len() - drop];
    kept.iter().sum::<f64>() / kept.len() as f64
}

fn sketched_direction(
    view: &HessianSqrtView,
    grad: &DVector<f64>,
    spec: &SketchSpec,
    profile: Option<&LeverageProfile>,
    workers: usize,
) -> Result<(DVector<f64>, f64)> {
    let q = workers.max(1);
    let mut dir = DVector::zeros(grad.len());
    let mut sketch_seconds = 0.0;
    for w in 0..q {
        let wspec = spec
            .clone()
            .with_seed(crate::sketch::worker_seed(spec.seed, w));
        let t0 = Instant::now();
        let h = sketched_hessian(view, &wspec, profile)?;
        sketch_seconds += t0.elapsed().as_secs_f64();
        let p = spd_solve(&h, grad, "sketched Newton system")?;
        dir += p;
    }
    dir /= q as f64;
    Ok((dir, sketch_seconds))
}

/// One Newton Sketch step `x - mu * (A^T S^T S A + reg)^{-1} grad f(x)` with
/// a fresh sketch drawn from `spec.seed`.
pub fn newton_sketch_step(
    obj: &Objective,
    x: &DVector<f64>,
    spec: &SketchSpec,
    mu: f64,
    profile: Option<&LeverageProfile>,
) -> Result<DVector<f64>> {
    distributed_step(obj, x, spec, mu, 1, profile)
}

/// Distributed-averaging step: the mean of `q` independently sketched Newton
/// directions, scaled by `mu`. With `q = 1` this is exactly
/// [`newton_sketch_step`].
pub fn distributed_step(
    obj: &Objective,
    x: &DVector<f64>,
    spec: &SketchSpec,
    mu: f64,
    workers: usize,
    profile: Option<&LeverageProfile>,
) -> Result<DVector<f64>> {
    if workers == 0 {
        return Err(Error::InvalidConfig("workers must be >= 1".to_string()));
    }
    let view = obj.hessian_sqrt(x)?;
    let grad = obj.gradient(x)?;
    let (dir, _) = sketched_direction(&view, &grad, spec, profile, workers)?;
    Ok(x - mu * dir)
}

/// Exact damped Newton step `x - mu * H(x)^{-1} grad f(x)`.
pub fn newton_exact_step(obj: &Objective, x: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
    let h = obj.hessian(x)?;
    let g = obj.gradient(x)?;
    let p = spd_solve(&h, &g, "exact Newton system")?;
    Ok(x - mu * p)
}

struct ProblemContext {
    profile: Option<LeverageProfile>,
    dims: EffectiveDims,
    gd_lipschitz: f64,
}

fn context_at(
    obj: &Objective,
    view: &HessianSqrtView,
    needs_profile: bool,
    needs_gd: bool,
) -> Result<ProblemContext> {
    let svals = view.factor.clone().singular_values();
    let (d_eff, d_eff_tilde) = effective_dims(svals.as_slice(), obj.lambda())?;
    let dims = EffectiveDims { d_eff, d_eff_tilde };
    let profile = if needs_profile {
        Some(exact_leverage_ridge(&view.factor, obj.lambda())?)
    } else {
        None
    };
    let gd_lipschitz = if needs_gd {
        sym_spectral_norm(&view.hessian())
    } else {
        0.0
    };
    Ok(ProblemContext {
        profile,
        dims,
        gd_lipschitz,
    })
}

/// Run `trials` independent runs of `iters` iterations from `x0`.
///
/// The minimizer comes from `cfg.ref_point` or a high-precision direct
/// solve. Trials whose sketched Hessian stays singular are dropped and
/// counted; the run fails only if more than 20% of trials fail.
pub fn solve(obj: &Objective, x0: &DVector<f64>, cfg: &SolverConfig) -> Result<SolveOutcome> {
    if cfg.iters == 0 || cfg.trials == 0 {
        return Err(Error::InvalidConfig(
            "iteration and trial counts must be >= 1".to_string(),
        ));
    }
    if cfg.workers == 0 {
        return Err(Error::InvalidConfig("workers must be >= 1".to_string()));
    }
    if cfg.method == Method::ExactNewton && !matches!(cfg.step_mode, StepMode::Fixed(_)) {
        return Err(Error::InvalidConfig(
            "the exact-newton baseline has no sketch size for the automatic step policies; \
             use a fixed step (e.g. fixed=1.0)"
                .to_string(),
        ));
    }
    if x0.len() != obj.dim() {
        return Err(Error::DimensionMismatch(format!(
            "x0 has length {} but the objective dimension is {}",
            x0.len(),
            obj.dim()
        )));
    }

    let x_star = match &cfg.ref_point {
        Some(x) => x.clone(),
        None => obj.reference_solution()?,
    };
    let f_star = obj.value(&x_star)?;
    let h_star = obj.hessian(&x_star)?;

    let hessian_is_constant = matches!(
        obj.kind(),
        ObjectiveKind::LeastSquares | ObjectiveKind::RidgeLeastSquares
    );
    let needs_profile = cfg.method == Method::Sketched
        && (cfg.sketch.kind.needs_profile()
            || matches!(cfg.sketch.scaling, crate::sketch::Scaling::Theory));
    let needs_gd = cfg.method == Method::GradientDescent;

    // For constant-Hessian problems the leverage profile and effective
    // dimensions are computed once; logistic recomputes them per iteration.
    let base_view = obj.hessian_sqrt(x0)?;
    let base_ctx = context_at(obj, &base_view, needs_profile, needs_gd)?;
    let dims0 = base_ctx.dims;

    let record_at = |x: &DVector<f64>, mu: f64, sketch_s: f64, step_s: f64| -> Result<IterRecord> {
        let diff = x - &x_star;
        let error_h = diff.dot(&(&h_star * &diff)).max(0.0);
        let f_gap = (obj.value(x)? - f_star).max(0.0);
        Ok(IterRecord {
            mu,
            error_h,
            f_gap,
            sketch_seconds: sketch_s,
            step_seconds: step_s,
        })
    };

    let run_trial = |trial: usize| -> Result<TrialTrace> {
        let mut x = x0.clone();
        let mut records = Vec::with_capacity(cfg.iters + 1);
        records.push(record_at(&x, 0.0, 0.0, 0.0)?);
        for iter in 1..=cfg.iters {
            let step_start = Instant::now();
            let mut sketch_seconds = 0.0;
            let mu;
            match cfg.method {
                Method::Sketched => {
                    // logistic Hessians move with x, so the view, profile,
                    // and dims are refreshed per iteration
                    let mut local: Option<(HessianSqrtView, ProblemContext)> = None;
                    if !hessian_is_constant {
                        let v = obj.hessian_sqrt(&x)?;
                        let ctx = context_at(obj, &v, needs_profile, false)?;
                        local = Some((v, ctx));
                    }
                    let (view_ref, ctx) = match &local {
                        Some((v, c)) => (v, c),
                        None => (&base_view, &base_ctx),
                    };
                    let policy = StepPolicy {
                        mode: cfg.step_mode,
                        dims: ctx.dims,
                        workers: cfg.workers,
                    };
                    mu = policy.step_size(cfg.sketch.sketch_size)?;
                    let seed = derive(cfg.seed, &[trial as u64, iter as u64]);
                    let spec = cfg.sketch.clone().with_seed(seed);
                    let grad = obj.gradient(&x)?;
                    let (dir, sk) = sketched_direction(
                        view_ref,
                        &grad,
                        &spec,
                        ctx.profile.as_ref(),
                        cfg.workers,
                    )?;
                    sketch_seconds = sk;
                    x -= mu * dir;
                }
                Method::ExactNewton => {
                    let policy = StepPolicy {
                        mode: cfg.step_mode,
                        dims: dims0,
                        workers: 1,
                    };
                    mu = policy.step_size(cfg.sketch.sketch_size.max(1))?;
                    let t0 = Instant::now();
                    let h = obj.hessian(&x)?;
                    sketch_seconds = t0.elapsed().as_secs_f64();
                    let g = obj.gradient(&x)?;
                    let p = spd_solve(&h, &g, "exact Newton system")?;
                    x -= mu * p;
                }
                Method::GradientDescent => {
                    let lipschitz = if hessian_is_constant {
                        base_ctx.gd_lipschitz
                    } else {
                        sym_spectral_norm(&obj.hessian(&x)?)
                    };
                    mu = 1.0 / lipschitz;
                    let g = obj.gradient(&x)?;
                    x -= mu * g;
                }
            }
            let step_seconds = step_start.elapsed().as_secs_f64() - sketch_seconds;
            records.push(record_at(&x, mu, sketch_seconds, step_seconds)?);
        }
        Ok(TrialTrace { trial, records })
    };

    let results: Vec<Result<TrialTrace>> = (0..cfg.trials).into_par_iter().map(run_trial).collect();

    let mut traces = Vec::with_capacity(cfg.trials);
    let mut failures = 0usize;
    let mut first_config_error = None;
    for r in results {
        match r {
            Ok(t) => traces.push(t),
            Err(e @ (Error::InvalidConfig(_) | Error::DimensionMismatch(_))) => {
                // configuration problems affect every trial identically
                first_config_error.get_or_insert(e);
            }
            Err(_) => failures += 1,
        }
    }
    if let Some(e) = first_config_error {
        return Err(e);
    }
    if failures * 5 > cfg.trials {
        return Err(Error::TooManyFailures {
            failed: failures,
            total: cfg.trials,
        });
    }
    Ok(SolveOutcome {
        traces,
        failures,
        x_star,
        f_star,
        dims: dims0,
    })
}

/// Expected per-iteration rate for a policy at sketch size `m` (the fixed
/// point of the step-size formulas).
pub fn predicted_rate(mode: StepMode, dims: EffectiveDims, workers: usize, m: usize) -> f64 {
    let q = workers.max(1) as f64;
    let mf = m as f64;
    match mode {
        StepMode::AutoSimple => dims.d_eff / mf,
        StepMode::AutoSharp => {
            let spread = q * (mf - dims.d_eff_tilde);
            dims.d_eff / (dims.d_eff + spread)
        }
        StepMode::Fixed(v) => {
            let rho = dims.d_eff / (mf - dims.d_eff_tilde);
            (1.0 - v) * (1.0 - v) + rho * v * v / q
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::sketch::{Scaling, SketchKind};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn gaussian_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut s = Stream::new(seed);
        DMatrix::from_fn(n, d, |_, _| s.next_normal())
    }

    fn ls_problem(n: usize, d: usize, seed: u64) -> Objective {
        let a = gaussian_matrix(n, d, seed);
        let mut s = Stream::new(derive(seed, &[9]));
        let b = DVector::from_fn(n, |_, _| s.next_normal());
        Objective::least_squares(a, b).unwrap()
    }

    #[test]
    fn step_size_examples() {
        let dims = EffectiveDims {
            d_eff: 4.0,
            d_eff_tilde: 4.0,
        };
        let p = StepPolicy {
            mode: StepMode::AutoSimple,
            dims,
            workers: 1,
        };
        assert_eq!(p.step_size(32).unwrap(), 0.875);

        let dims = EffectiveDims {
            d_eff: 4.0,
            d_eff_tilde: 4.0,
        };
        let p = StepPolicy {
            mode: StepMode::AutoSharp,
            dims,
            workers: 4,
        };
        // q (m - dt) / (d_eff + q (m - dt)) with d = 4, m = 32: 112/116 = 28/29
        assert!((p.step_size(32).unwrap() - 28.0 / 29.0).abs() < 1e-15);

        let p = StepPolicy {
            mode: StepMode::Fixed(0.7),
            dims,
            workers: 1,
        };
        assert_eq!(p.step_size(10).unwrap(), 0.7);
        let bad = StepPolicy {
            mode: StepMode::Fixed(1.5),
            dims,
            workers: 1,
        };
        assert!(bad.step_size(10).is_err());
        let tight = StepPolicy {
            mode: StepMode::AutoSimple,
            dims,
            workers: 1,
        };
        assert!(tight.step_size(4).is_err());
    }

    #[test]
    fn step_mode_parsing() {
        assert_eq!(StepMode::parse("auto-simple"), Some(StepMode::AutoSimple));
        assert_eq!(StepMode::parse("auto-sharp"), Some(StepMode::AutoSharp));
        assert_eq!(StepMode::parse("fixed=0.5"), Some(StepMode::Fixed(0.5)));
        assert_eq!(StepMode::parse("nope"), None);
    }

    #[test]
    fn mu_zero_is_identity_and_exact_newton_solves_quadratics() {
        let obj = ls_problem(48, 6, 5);
        let x = DVector::from_fn(6, |i, _| i as f64 / 3.0);
        let same = newton_exact_step(&obj, &x, 0.0 + f64::MIN_POSITIVE).unwrap();
        // mu ~ 0 moves by a negligible amount
        assert!((&same - &x).norm() < 1e-250);

        let x1 = newton_exact_step(&obj, &x, 1.0).unwrap();
        let x_star = obj.reference_solution().unwrap();
        assert!((&x1 - &x_star).norm() < 1e-10);

        let spec = SketchSpec::new(SketchKind::Gaussian, 24)
            .with_scaling(Scaling::Practical)
            .with_seed(3);
        let moved = newton_sketch_step(&obj, &x, &spec, 0.0, None).unwrap();
        assert_eq!(moved, x);
    }

    #[test]
    fn logistic_newton_contracts_near_optimum() {
        let a = gaussian_matrix(60, 3, 11);
        let mut s = Stream::new(12);
        let b = DVector::from_fn(60, |_, _| s.next_sign());
        let obj = Objective::logistic_l2(a, b, 1e-2).unwrap();
        let x_star = obj.reference_solution().unwrap();
        let mut x = &x_star + DVector::from_fn(3, |i, _| 0.05 * ((i + 1) as f64));
        let mut dist = (&x - &x_star).norm();
        for _ in 0..3 {
            x = newton_exact_step(&obj, &x, 1.0).unwrap();
            let next = (&x - &x_star).norm();
            assert!(next < dist);
            dist = next;
        }
    }

    #[test]
    fn one_step_gaussian_rate_matches_theory() {
        // mean error ratio after one step is d/m within 30%
        let n = 1024;
        let d = 16;
        let m = 128;
        let obj = ls_problem(n, d, 21);
        let x_star = obj.reference_solution().unwrap();
        let h = obj.hessian(&x_star).unwrap();
        let mut s = Stream::new(77);
        let x0 = &x_star + DVector::from_fn(d, |_, _| s.next_normal());
        let d0 = &x0 - &x_star;
        let e0 = d0.dot(&(&h * &d0));
        let mu = 1.0 - d as f64 / m as f64;
        let trials = 200;
        let mut acc = 0.0;
        for t in 0..trials {
            let spec = SketchSpec::new(SketchKind::Gaussian, m).with_seed(derive(5000, &[t]));
            let x1 = newton_sketch_step(&obj, &x0, &spec, mu, None).unwrap();
            let d1 = &x1 - &x_star;
            acc += d1.dot(&(&h * &d1)) / e0;
        }
        let mean = acc / trials as f64;
        let target = d as f64 / m as f64;
        assert!(
            (mean - target).abs() <= 0.3 * target,
            "mean ratio {mean} vs {target}"
        );
    }

    #[test]
    fn distributed_q1_equals_single_step_bitwise() {
        let obj = ls_problem(128, 8, 31);
        let profile = exact_leverage_ridge(obj.data(), 0.0).unwrap();
        let x = DVector::from_fn(8, |i, _| (i as f64).sin());
        let spec = SketchSpec::new(SketchKind::Less, 64).with_seed(91);
        let a = newton_sketch_step(&obj, &x, &spec, 0.9, Some(&profile)).unwrap();
        let b = distributed_step(&obj, &x, &spec, 0.9, 1, Some(&profile)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distributed_averaging_shrinks_direction_variance() {
        let obj = ls_problem(256, 8, 41);
        let x = DVector::from_fn(8, |i, _| 0.3 * (i as f64 + 1.0));
        let x_exact = newton_exact_step(&obj, &x, 1.0).unwrap();
        let spec_base = SketchSpec::new(SketchKind::Gaussian, 64);
        let repeats = 300;
        let mut var = [0.0f64; 2];
        for (slot, q) in [(0usize, 1usize), (1, 4)] {
            let mut acc = 0.0;
            for rep in 0..repeats {
                let spec = spec_base
                    .clone()
                    .with_seed(derive(600 + q as u64, &[rep as u64]));
                let x1 = distributed_step(&obj, &x, &spec, 1.0, q, None).unwrap();
                acc += (&x1 - &x_exact).norm_squared();
            }
            var[slot] = acc / repeats as f64;
        }
        // averaging q independent directions shrinks variance like 1/q
        let ratio = var[1] / var[0];
        assert!(
            (0.15..=0.40).contains(&ratio),
            "q=4 / q=1 variance ratio {ratio} outside the 1/q band"
        );
    }

    #[test]
    fn solve_exact_newton_converges_in_one_iteration() {
        let obj = ls_problem(64, 5, 3);
        let mut cfg = SolverConfig::sketched(
            SketchSpec::new(SketchKind::Gaussian, 32),
            StepMode::Fixed(1.0),
            1,
            2,
        );
        cfg.method = Method::ExactNewton;
        let x0 = DVector::zeros(5);
        let out = solve(&obj, &x0, &cfg).unwrap();
        for t in &out.traces {
            assert_eq!(t.records.len(), 2);
            let start = t.records[0].f_gap;
            assert!(t.records[1].f_gap <= 1e-10 * start.max(1.0));
        }
    }

    #[test]
    fn solve_gd_decreases_monotonically() {
        let obj = ls_problem(64, 5, 13);
        let mut cfg = SolverConfig::sketched(
            SketchSpec::new(SketchKind::Gaussian, 32),
            StepMode::Fixed(1.0),
            8,
            1,
        );
        cfg.method = Method::GradientDescent;
        let out = solve(&obj, &DVector::zeros(5), &cfg).unwrap();
        let recs = &out.traces[0].records;
        for w in recs.windows(2) {
            assert!(w[1].f_gap <= w[0].f_gap + 1e-12);
        }
    }

    #[test]
    fn solve_traces_are_deterministic() {
        let obj = ls_problem(128, 6, 23);
        let profile_needed = SketchSpec::new(SketchKind::Less, 48).with_seed(0);
        let cfg =
            SolverConfig::sketched(profile_needed, StepMode::AutoSimple, 4, 6).with_seed(2024);
        let x0 = DVector::zeros(6);
        let a = solve(&obj, &x0, &cfg).unwrap();
        let b = solve(&obj, &x0, &cfg).unwrap();
        assert_eq!(a.traces.len(), b.traces.len());
        for (ta, tb) in a.traces.iter().zip(&b.traces) {
            for (ra, rb) in ta.records.iter().zip(&tb.records) {
                assert_eq!(ra.error_h.to_bits(), rb.error_h.to_bits());
                assert_eq!(ra.f_gap.to_bits(), rb.f_gap.to_bits());
                assert_eq!(ra.mu.to_bits(), rb.mu.to_bits());
            }
        }
    }

    #[test]
    fn solve_fails_when_sketches_cannot_span() {
        // all but four rows of the data are zero; two uniformly sampled
        // rows usually land on zeros, leaving a sketched Hessian with no
        // mass at all, which fails even the jitter retry
        let mut a = DMatrix::zeros(32, 4);
        for i in 0..4 {
            a[(i, i)] = 1.0;
        }
        let b = DVector::from_fn(32, |i, _| if i < 4 { 1.0 } else { 0.0 });
        let obj = Objective::least_squares(a, b).unwrap();
        let spec = SketchSpec::new(SketchKind::Rrs, 2).with_scaling(Scaling::Practical);
        let cfg = SolverConfig::sketched(spec, StepMode::Fixed(1.0), 2, 8).with_seed(8);
        match solve(&obj, &DVector::zeros(4), &cfg) {
            Err(Error::TooManyFailures { failed, total }) => {
                assert!(failed * 5 > total, "{failed}/{total}");
                assert_eq!(total, 8);
            }
            other => panic!("expected TooManyFailures, got {other:?}"),
        }
    }

    #[test]
    fn trimmed_mean_drops_worst_tail() {
        let vals = [1.0, 1.0, 1.0, 1.0, 100.0];
        let m = trimmed_mean(&vals, 0.02);
        assert_eq!(m, 1.0);
        assert_eq!(trimmed_mean(&[5.0], 0.02), 5.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn auto_sharp_with_one_worker_matches_closed_form(
            d_eff in 1.0f64..32.0,
            slack in 0.1f64..4.0,
            extra in 1usize..256,
        ) {
            let d_eff_tilde = d_eff * slack.min(1.0);
            let m = (d_eff.ceil() as usize) + extra;
            let dims = EffectiveDims { d_eff, d_eff_tilde };
            let p = StepPolicy { mode: StepMode::AutoSharp, dims, workers: 1 };
            let mu = p.step_size(m).unwrap();
            let closed = 1.0 - d_eff / (m as f64 + d_eff - d_eff_tilde);
            prop_assert!((mu - closed).abs() < 1e-12);
            prop_assert!(mu > 0.0 && mu < 1.0);
        }
    }
}
