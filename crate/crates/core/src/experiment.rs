//! Experiment orchestration: grid plans over sketch kinds, sizes, and
//! sparsities, per-(trial, iteration) CSV emission, and rate reports.
//!
//! The CSV layout is one row per `(trial, iteration)` with the exact header
//! [`CSV_HEADER`]. Reports are derived purely from rows, so parsing an
//! emitted file reproduces the in-memory report exactly. With timing
//! disabled, reruns with identical seeds yield byte-identical files (wall
//! times are the only nondeterministic columns).

use std::fmt::Write as FmtWrite;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problem::Objective;
use crate::rng::derive;
use crate::sketch::{Scaling, SketchKind, SketchSpec};
use crate::solver::{solve, Method, SolverConfig, StepMode};

pub const CSV_HEADER: &str =
    "problem,sketch,m,s,scaling,q,trial,iter,mu,errorH,fgap,sketch_seconds,step_seconds";

/// Floor applied to reported rates so fully converged cells stay plottable
/// on a log axis.
pub const RATE_FLOOR: f64 = 1e-16;

/// A grid of solver runs over one objective.
#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub problem_label: String,
    pub objective: Objective,
    /// Baseline methods run as extra cells (exact Newton, gradient descent).
    pub baselines: Vec<Method>,
    pub sketch_kinds: Vec<SketchKind>,
    pub m_values: Vec<usize>,
    /// Row-sparsity grid; `None` means the kind default. Only sparsified
    /// kinds expand over this axis.
    pub s_values: Vec<Option<usize>>,
    pub scaling: Scaling,
    pub step_mode: StepMode,
    pub iters: usize,
    pub trials: usize,
    pub workers: usize,
    pub seed: u64,
    /// When false, the timing columns are written as zero so reruns are
    /// byte-identical.
    pub record_timing: bool,
    pub threads: Option<usize>,
}

impl ExperimentPlan {
    pub fn new(problem_label: impl Into<String>, objective: Objective) -> Self {
        ExperimentPlan {
            problem_label: problem_label.into(),
            objective,
            baselines: Vec::new(),
            sketch_kinds: Vec::new(),
            m_values: Vec::new(),
            s_values: vec![None],
            scaling: Scaling::Theory,
            step_mode: StepMode::AutoSimple,
            iters: 10,
            trials: 50,
            workers: 1,
            seed: 0,
            record_timing: true,
            threads: None,
        }
    }
}

/// One parsed CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub problem: String,
    pub sketch: String,
    pub m: usize,
    pub s: Option<usize>,
    pub scaling: String,
    pub q: usize,
    pub trial: usize,
    pub iter: usize,
    pub mu: f64,
    pub error_h: f64,
    pub f_gap: f64,
    pub sketch_seconds: f64,
    pub step_seconds: f64,
}

/// Summary of one grid cell, derived entirely from CSV rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CellReport {
    pub sketch: String,
    pub m: usize,
    pub s: Option<usize>,
    pub scaling: String,
    pub q: usize,
    pub trials: usize,
    /// Trimmed-mean per-iteration contraction of `errorH`.
    pub r_hat: f64,
    /// `1 - mean(mu)`, which equals the policy rate for the auto modes.
    pub predicted: f64,
    pub relative_deviation: f64,
    pub mean_sketch_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub problem: String,
    pub cells: Vec<CellReport>,
}

/// A cell that could not run; the rest of the plan continues.
#[derive(Clone, Debug)]
pub struct CellFailure {
    pub label: String,
    pub error: String,
}

/// Execute a plan: every cell solved with fresh derived seeds, rows
/// accumulated in deterministic cell order.
pub fn run_plan(plan: &ExperimentPlan) -> Result<(RateReport, String, Vec<CellFailure>)> {
    let run = || run_plan_inner(plan);
    match plan.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            pool.install(run)
        }
        None => run(),
    }
}

struct Cell {
    method: Method,
    kind: Option<SketchKind>,
    m: usize,
    s: Option<usize>,
}

fn expand_cells(plan: &ExperimentPlan) -> Result<Vec<Cell>> {
    let mut cells = Vec::new();
    for &method in &plan.baselines {
        if method == Method::Sketched {
            return Err(Error::InvalidConfig(
                "baselines must be exact-newton or gd".to_string(),
            ));
        }
        cells.push(Cell {
            method,
            kind: None,
            m: 0,
            s: None,
        });
    }
    for &kind in &plan.sketch_kinds {
        let sparsified = matches!(kind, SketchKind::Less | SketchKind::LessUniform);
        let s_axis: &[Option<usize>] = if sparsified { &plan.s_values } else { &[None] };
        for &m in &plan.m_values {
            for &s in s_axis {
                cells.push(Cell {
                    method: Method::Sketched,
                    kind: Some(kind),
                    m,
                    s,
                });
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::InvalidConfig("empty experiment grid".to_string()));
    }
    Ok(cells)
}

fn run_plan_inner(plan: &ExperimentPlan) -> Result<(RateReport, String, Vec<CellFailure>)> {
    if plan.iters == 0 || plan.trials == 0 {
        return Err(Error::InvalidConfig(
            "iteration and trial counts must be >= 1".to_string(),
        ));
    }
    let cells = expand_cells(plan)?;
    let x_star = plan.objective.reference_solution()?;
    let x0 = DVector::zeros(plan.objective.dim());

    let mut rows: Vec<CsvRow> = Vec::new();
    let mut failures = Vec::new();
    for (cell_idx, cell) in cells.iter().enumerate() {
        let sketch_label = match (cell.method, cell.kind) {
            (Method::Sketched, Some(kind)) => kind.label().to_string(),
            (method, _) => method.label().to_string(),
        };
        let mut spec = SketchSpec::new(cell.kind.unwrap_or(SketchKind::Gaussian), cell.m.max(1))
            .with_scaling(plan.scaling);
        if let Some(s) = cell.s {
            spec = spec.with_nnz(s);
        }
        let cfg = SolverConfig {
            method: cell.method,
            sketch: spec,
            step_mode: plan.step_mode,
            iters: plan.iters,
            trials: plan.trials,
            seed: derive(plan.seed, &[cell_idx as u64]),
            workers: plan.workers,
            ref_point: Some(x_star.clone()),
        };
        let outcome = match solve(&plan.objective, &x0, &cfg) {
            Ok(o) => o,
            Err(e) => {
                failures.push(CellFailure {
                    label: format!("{sketch_label} m={} s={:?}", cell.m, cell.s),
                    error: e.to_string(),
                });
                continue;
            }
        };
        for trace in &outcome.traces {
            for (iter, rec) in trace.records.iter().enumerate() {
                rows.push(CsvRow {
                    problem: plan.problem_label.clone(),
                    sketch: sketch_label.clone(),
                    m: cell.m,
                    s: cell.s,
                    scaling: plan.scaling.label().to_string(),
                    q: plan.workers,
                    trial: trace.trial,
                    iter,
                    mu: rec.mu,
                    error_h: rec.error_h,
                    f_gap: rec.f_gap,
                    sketch_seconds: if plan.record_timing {
                        rec.sketch_seconds
                    } else {
                        0.0
                    },
                    step_seconds: if plan.record_timing {
                        rec.step_seconds
                    } else {
                        0.0
                    },
                });
            }
        }
    }

    let csv = rows_to_csv(&rows);
    let report = report_from_rows(&plan.problem_label, &rows);
    Ok((report, csv, failures))
}

/// Render rows with the exact schema header.
pub fn rows_to_csv(rows: &[CsvRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let s = r.s.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.problem,
            r.sketch,
            r.m,
            s,
            r.scaling,
            r.q,
            r.trial,
            r.iter,
            r.mu,
            r.error_h,
            r.f_gap,
            r.sketch_seconds,
            r.step_seconds
        )
        .expect("string write");
    }
    out
}

/// Parse a CSV emitted by [`rows_to_csv`]; the header must match exactly.
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "bad or missing CSV header: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 13 {
            return Err(Error::Parse(format!(
                "line {}: {} columns, expected 13",
                lineno + 2,
                cols.len()
            )));
        }
        let parse_u = |v: &str, what: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Parse(format!("line {}: bad {what} {v:?}", lineno + 2)))
        };
        let parse_f = |v: &str, what: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {}: bad {what} {v:?}", lineno + 2)))
        };
        rows.push(CsvRow {
            problem: cols[0].to_string(),
            sketch: cols[1].to_string(),
            m: parse_u(cols[2], "m")?,
            s: if cols[3].is_empty() {
                None
            } else {
                Some(parse_u(cols[3], "s")?)
            },
            scaling: cols[4].to_string(),
            q: parse_u(cols[5], "q")?,
            trial: parse_u(cols[6], "trial")?,
            iter: parse_u(cols[7], "iter")?,
            mu: parse_f(cols[8], "mu")?,
            error_h: parse_f(cols[9], "errorH")?,
            f_gap: parse_f(cols[10], "fgap")?,
            sketch_seconds: parse_f(cols[11], "sketch_seconds")?,
            step_seconds: parse_f(cols[12], "step_seconds")?,
        });
    }
    Ok(rows)
}

/// Build the rate report from rows; cells appear in first-row order.
pub fn report_from_rows(problem: &str, rows: &[CsvRow]) -> RateReport {
    let mut order: Vec<(String, usize, Option<usize>)> = Vec::new();
    for r in rows {
        let key = (r.sketch.clone(), r.m, r.s);
        if !order.contains(&key) {
            order.push(key);
        }
    }
    let mut cells = Vec::new();
    for (sketch, m, s) in order {
        let cell_rows: Vec<&CsvRow> = rows
            .iter()
            .filter(|r| r.sketch == sketch && r.m == m && r.s == s)
            .collect();
        let mut trial_ids: Vec<usize> = cell_rows.iter().map(|r| r.trial).collect();
        trial_ids.sort_unstable();
        trial_ids.dedup();

        let mut ratios = Vec::new();
        let mut t_horizon = 0usize;
        for &trial in &trial_ids {
            let mut first = None;
            let mut last: Option<&CsvRow> = None;
            for r in cell_rows.iter().filter(|r| r.trial == trial) {
                if r.iter == 0 {
                    first = Some(*r);
                }
                if last.is_none_or(|l| r.iter > l.iter) {
                    last = Some(*r);
                }
            }
            if let (Some(f), Some(l)) = (first, last) {
                if f.error_h > 0.0 && l.iter > 0 {
                    ratios.push((l.error_h / f.error_h).max(f64::MIN_POSITIVE));
                    t_horizon = t_horizon.max(l.iter);
                }
            }
        }
        let r_hat = if ratios.is_empty() || t_horizon == 0 {
            RATE_FLOOR
        } else {
            crate::solver::trimmed_mean(&ratios, 0.02)
                .powf(1.0 / t_horizon as f64)
                .max(RATE_FLOOR)
        };

        let step_rows: Vec<&&CsvRow> = cell_rows.iter().filter(|r| r.iter > 0).collect();
        let mean_mu = if step_rows.is_empty() {
            0.0
        } else {
            step_rows.iter().map(|r| r.mu).sum::<f64>() / step_rows.len() as f64
        };
        let predicted = (1.0 - mean_mu).clamp(RATE_FLOOR, 1.0);
        let mean_sketch_seconds = if step_rows.is_empty() {
            0.0
        } else {
            step_rows.iter().map(|r| r.sketch_seconds).sum::<f64>() / step_rows.len() as f64
        };
        let (scaling, q) = cell_rows
            .first()
            .map(|r| (r.scaling.clone(), r.q))
            .unwrap_or_default();
        cells.push(CellReport {
            sketch,
            m,
            s,
            scaling,
            q,
            trials: trial_ids.len(),
            r_hat,
            predicted,
            relative_deviation: r_hat / predicted - 1.0,
            mean_sketch_seconds,
        });
    }
    RateReport {
        problem: problem.to_string(),
        cells,
    }
}

/// Write a CSV string to disk.
pub fn write_csv(path: &Path, csv: &str) -> Result<()> {
    std::fs::write(path, csv)?;
    Ok(())
}
