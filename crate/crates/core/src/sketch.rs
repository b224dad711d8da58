//! The sketching-operator family.
//!
//! All operators are `m x n` random matrices `S` with i.i.d. rows `c * s^T`
//! where `E[s s^T] = I`, so `E[S^T S] = m c^2 I`. The row scaling `c` comes
//! in three modes: `theory` uses `1/sqrt(m - d_eff)` (the normalization under
//! which the inverse-moment characterization holds), `practical` uses
//! `1/sqrt(m)`, and `unbiased` is the Gaussian-only `1/sqrt(m - d - 1)` that
//! makes sketched Newton steps exactly unbiased.
//!
//! Sparsified kinds (LESS, LESS-uniform) build each row as random signs
//! masked by a `(p, s)`-sparsifier, so applying the sketch costs
//! `Theta(m * s * d)` multiply-adds instead of `Theta(m * n * d)`. An
//! instrumented counter tracks the actual multiply-add work.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::leverage::LeverageProfile;
use crate::linalg::fwht_columns;
use crate::problem::HessianSqrtView;
use crate::rng::{derive, Categorical, Stream};

// Stream-derivation tags so independent parts of one operator never share
// a stream.
const TAG_ROW: u64 = 0;
const TAG_SELECT: u64 = 1;
const TAG_SIGNS: u64 = 2;
const TAG_WORKER: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SketchKind {
    Gaussian,
    Rademacher,
    Less,
    LessUniform,
    Rrs,
    RrsLev,
    Srht,
}

impl SketchKind {
    pub fn label(&self) -> &'static str {
        match self {
            SketchKind::Gaussian => "gaussian",
            SketchKind::Rademacher => "rademacher",
            SketchKind::Less => "less",
            SketchKind::LessUniform => "less-uniform",
            SketchKind::Rrs => "rrs",
            SketchKind::RrsLev => "rrs-lev",
            SketchKind::Srht => "srht",
        }
    }

    pub fn parse(s: &str) -> Option<SketchKind> {
        Some(match s {
            "gaussian" => SketchKind::Gaussian,
            "rademacher" => SketchKind::Rademacher,
            "less" => SketchKind::Less,
            "less-uniform" => SketchKind::LessUniform,
            "rrs" => SketchKind::Rrs,
            "rrs-lev" => SketchKind::RrsLev,
            "srht" => SketchKind::Srht,
            _ => return None,
        })
    }

    /// Whether the kind needs a leverage profile to be built.
    pub fn needs_profile(&self) -> bool {
        matches!(self, SketchKind::Less | SketchKind::RrsLev)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scaling {
    /// Row scale `1/sqrt(m - d_eff)`.
    Theory,
    /// Row scale `1/sqrt(m)`.
    Practical,
    /// Gaussian-only row scale `1/sqrt(m - d - 1)` for exactly unbiased
    /// sketched Newton steps.
    Unbiased,
}

impl Scaling {
    pub fn label(&self) -> &'static str {
        match self {
            Scaling::Theory => "theory",
            Scaling::Practical => "practical",
            Scaling::Unbiased => "unbiased",
        }
    }

    pub fn parse(s: &str) -> Option<Scaling> {
        Some(match s {
            "theory" => Scaling::Theory,
            "practical" => Scaling::Practical,
            "unbiased" => Scaling::Unbiased,
            _ => return None,
        })
    }
}

/// Row-sampling distribution for sparsified and row-sampling kinds.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum RowDistribution {
    /// Kind-appropriate default: leverage-proportional for `less`/`rrs-lev`,
    /// uniform for `less-uniform`/`rrs`.
    #[default]
    Auto,
    Uniform,
    /// Explicit distribution over the n rows.
    Custom(Vec<f64>),
}

/// Declarative description of a sketching operator.
#[derive(Clone, Debug)]
pub struct SketchSpec {
    pub kind: SketchKind,
    /// Sketch size `m`.
    pub sketch_size: usize,
    /// Non-zeros per row for sparsified kinds; `None` picks the kind default.
    pub nnz_per_row: Option<usize>,
    pub distribution: RowDistribution,
    pub scaling: Scaling,
    pub seed: u64,
}

impl SketchSpec {
    pub fn new(kind: SketchKind, sketch_size: usize) -> Self {
        SketchSpec {
            kind,
            sketch_size,
            nnz_per_row: None,
            distribution: RowDistribution::Auto,
            scaling: Scaling::Theory,
            seed: 0,
        }
    }

    pub fn with_nnz(mut self, s: usize) -> Self {
        self.nnz_per_row = Some(s);
        self
    }

    pub fn with_scaling(mut self, scaling: Scaling) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_distribution(mut self, distribution: RowDistribution) -> Self {
        self.distribution = distribution;
        self
    }
}

/// A `(p, s)`-sparsifier: `s` i.i.d. categorical draws `t_1..t_s` from `p`,
/// merged by multiplicity into entries `xi_i = sqrt(b_i / (s p_i))` where
/// `b_i` counts how often row `i` was drawn.
#[derive(Clone, Debug)]
pub struct Sparsifier {
    /// Number of draws `s`.
    pub draws: usize,
    /// `(row index, xi value)` for rows with `b_i > 0`, ordered by index.
    pub entries: Vec<(usize, f64)>,
}

impl Sparsifier {
    /// Number of non-zero coordinates (`<= draws`).
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

/// Draw a `(p, s)`-sparsifier.
pub fn draw_sparsifier(p: &[f64], s: usize, stream: &mut Stream) -> Result<Sparsifier> {
    if s == 0 {
        return Err(Error::InvalidConfig("sparsifier needs s >= 1".to_string()));
    }
    validate_distribution(p)?;
    let cat = Categorical::new(p)
        .ok_or_else(|| Error::InvalidDistribution("unnormalizable weights".to_string()))?;
    draw_sparsifier_unchecked(&cat, p, s, stream)
}

fn draw_sparsifier_unchecked(
    cat: &Categorical,
    p: &[f64],
    s: usize,
    stream: &mut Stream,
) -> Result<Sparsifier> {
    let mut indices: Vec<usize> = (0..s).map(|_| cat.sample(stream)).collect();
    indices.sort_unstable();
    let mut entries = Vec::with_capacity(indices.len());
    let mut i = 0;
    while i < indices.len() {
        let idx = indices[i];
        let mut count = 1usize;
        while i + count < indices.len() && indices[i + count] == idx {
            count += 1;
        }
        let xi = (count as f64 / (s as f64 * p[idx])).sqrt();
        entries.push((idx, xi));
        i += count;
    }
    Ok(Sparsifier { draws: s, entries })
}

fn validate_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution("empty distribution".to_string()));
    }
    let mut total = 0.0;
    for &w in p {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "weights must be finite and >= 0, got {w}"
            )));
        }
        total += w;
    }
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!(
            "weights must sum to 1, got {total}"
        )));
    }
    Ok(())
}

enum OperatorBody {
    /// Fully materialized `m x n` matrix (Gaussian, Rademacher), scale
    /// folded into the entries.
    Dense(DMatrix<f64>),
    /// One sparse row per sketch row: `(column, coefficient)` pairs with the
    /// scale folded in.
    SparseRows(Vec<Vec<(u32, f64)>>),
    /// Row sampling: one `(column, coefficient)` per sketch row.
    RowSample(Vec<(u32, f64)>),
    /// Subsampled randomized Hadamard transform, applied lazily.
    Srht {
        signs: Vec<f64>,
        rows: Vec<u32>,
        n_pad: usize,
        scale: f64,
    },
    /// Exact selection of all n rows (a degenerate sketch used for
    /// baselines and tests).
    Identity,
}

/// A realized sketching operator. Immutable after construction; application
/// is pure except for the multiply-add counter.
pub struct SketchOperator {
    kind: SketchKind,
    m: usize,
    n: usize,
    nnz_per_row: Option<usize>,
    body: OperatorBody,
    mac_counter: AtomicU64,
}

impl SketchOperator {
    /// The degenerate identity selection `S = I_n` (m = n, scale 1).
    pub fn identity(n: usize) -> Self {
        SketchOperator {
            kind: SketchKind::Rrs,
            m: n,
            n,
            nnz_per_row: Some(1),
            body: OperatorBody::Identity,
            mac_counter: AtomicU64::new(0),
        }
    }

    pub fn kind(&self) -> SketchKind {
        self.kind
    }

    /// Sketch size `m`.
    pub fn nrows(&self) -> usize {
        self.m
    }

    /// Input row count `n`.
    pub fn ncols(&self) -> usize {
        self.n
    }

    /// Resolved non-zeros per row for sparsified kinds.
    pub fn nnz_per_row(&self) -> Option<usize> {
        self.nnz_per_row
    }

    /// Total multiply-adds spent in `apply_sketch` so far.
    pub fn multiply_adds(&self) -> u64 {
        self.mac_counter.load(Ordering::Relaxed)
    }

    /// Materialize row `r` as a dense vector (diagnostics and tests).
    pub fn dense_row(&self, r: usize) -> Vec<f64> {
        assert!(r < self.m);
        let mut out = vec![0.0; self.n];
        match &self.body {
            OperatorBody::Dense(mat) => {
                for j in 0..self.n {
                    out[j] = mat[(r, j)];
                }
            }
            OperatorBody::SparseRows(rows) => {
                for &(j, v) in &rows[r] {
                    out[j as usize] += v;
                }
            }
            OperatorBody::RowSample(rows) => {
                let (j, v) = rows[r];
                out[j as usize] = v;
            }
            OperatorBody::Srht {
                signs, rows, scale, ..
            } => {
                // row r of scale * H D restricted to the first n columns;
                // the Hadamard entry at (src, j) is (-1)^popcount(src & j)
                let src = rows[r] as usize;
                for (j, sign) in signs.iter().enumerate() {
                    let h = if (src & j).count_ones() & 1 == 0 {
                        1.0
                    } else {
                        -1.0
                    };
                    out[j] = scale * h * sign;
                }
            }
            OperatorBody::Identity => {
                out[r] = 1.0;
            }
        }
        out
    }
}

fn resolve_probabilities(
    spec: &SketchSpec,
    n: usize,
    profile: Option<&LeverageProfile>,
) -> Result<Option<Vec<f64>>> {
    let leverage_based = || -> Result<Vec<f64>> {
        let p = profile.ok_or_else(|| {
            Error::InvalidConfig(format!(
                "sketch kind {} requires a leverage profile",
                spec.kind.label()
            ))
        })?;
        if p.scores.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "profile covers {} rows but the sketch needs {n}",
                p.scores.len()
            )));
        }
        Ok(p.sampling_probabilities().as_slice().to_vec())
    };
    match (&spec.distribution, spec.kind) {
        (RowDistribution::Custom(p), _) => {
            if p.len() != n {
                return Err(Error::InvalidDistribution(format!(
                    "distribution over {} rows but the sketch needs {n}",
                    p.len()
                )));
            }
            validate_distribution(p)?;
            Ok(Some(p.clone()))
        }
        (RowDistribution::Uniform, _) => Ok(None),
        (RowDistribution::Auto, SketchKind::Less | SketchKind::RrsLev) => {
            Ok(Some(leverage_based()?))
        }
        (RowDistribution::Auto, _) => Ok(None),
    }
}

/// Build a sketching operator for inputs with `n` rows and `d` columns.
///
/// `profile` supplies leverage scores for the score-dependent kinds and the
/// effective dimension used by `theory` scaling (falling back to `d` when
/// absent, which is exact for unregularized problems).
pub fn build_sketch(
    spec: &SketchSpec,
    n: usize,
    d: usize,
    profile: Option<&LeverageProfile>,
) -> Result<SketchOperator> {
    let m = spec.sketch_size;
    if m == 0 {
        return Err(Error::InvalidConfig("sketch size must be >= 1".to_string()));
    }
    if n == 0 || d == 0 {
        return Err(Error::DimensionMismatch(
            "sketched matrix must be non-empty".to_string(),
        ));
    }
    let d_eff = profile.map(|p| p.d_eff).unwrap_or(d as f64);
    let scale = match spec.scaling {
        Scaling::Practical => 1.0 / (m as f64).sqrt(),
        Scaling::Theory => {
            if m as f64 <= d_eff {
                return Err(Error::InvalidConfig(format!(
                    "theory scaling needs m > d_eff, got m = {m}, d_eff = {d_eff}"
                )));
            }
            1.0 / (m as f64 - d_eff).sqrt()
        }
        Scaling::Unbiased => {
            if spec.kind != SketchKind::Gaussian {
                return Err(Error::InvalidConfig(
                    "unbiased scaling is defined for the gaussian kind only".to_string(),
                ));
            }
            if m <= d + 1 {
                return Err(Error::InvalidConfig(format!(
                    "unbiased scaling needs m > d + 1, got m = {m}, d = {d}"
                )));
            }
            1.0 / (m as f64 - d as f64 - 1.0).sqrt()
        }
    };

    let probs = resolve_probabilities(spec, n, profile)?;
    let body = match spec.kind {
        SketchKind::Gaussian => {
            let mut mat = DMatrix::zeros(m, n);
            for r in 0..m {
                let mut stream = Stream::new(derive(spec.seed, &[TAG_ROW, r as u64]));
                for j in 0..n {
                    mat[(r, j)] = scale * stream.next_normal();
                }
            }
            OperatorBody::Dense(mat)
        }
        SketchKind::Rademacher => {
            let mut mat = DMatrix::zeros(m, n);
            for r in 0..m {
                let mut stream = Stream::new(derive(spec.seed, &[TAG_ROW, r as u64]));
                for j in 0..n {
                    mat[(r, j)] = scale * stream.next_sign();
                }
            }
            OperatorBody::Dense(mat)
        }
        SketchKind::Less | SketchKind::LessUniform => {
            let s = resolve_nnz(spec, n, d, profile)?;
            let cat = probs.as_deref().map(Categorical::new);
            let cat = match cat {
                Some(Some(c)) => Some(c),
                Some(None) => {
                    return Err(Error::InvalidDistribution(
                        "unnormalizable sampling weights".to_string(),
                    ))
                }
                None => None,
            };
            let uniform_p = 1.0 / n as f64;
            let mut rows = Vec::with_capacity(m);
            for r in 0..m {
                let mut stream = Stream::new(derive(spec.seed, &[TAG_ROW, r as u64]));
                let sparsifier = match (&cat, &probs) {
                    (Some(cat), Some(p)) => draw_sparsifier_unchecked(cat, p, s, &mut stream)?,
                    _ => {
                        // uniform draws without materializing p
                        let mut idx: Vec<usize> = (0..s).map(|_| stream.next_range(n)).collect();
                        idx.sort_unstable();
                        let mut entries = Vec::with_capacity(idx.len());
                        let mut i = 0;
                        while i < idx.len() {
                            let row = idx[i];
                            let mut count = 1usize;
                            while i + count < idx.len() && idx[i + count] == row {
                                count += 1;
                            }
                            let xi = (count as f64 / (s as f64 * uniform_p)).sqrt();
                            entries.push((row, xi));
                            i += count;
                        }
                        Sparsifier { draws: s, entries }
                    }
                };
                let row: Vec<(u32, f64)> = sparsifier
                    .entries
                    .iter()
                    .map(|&(idx, xi)| (idx as u32, scale * stream.next_sign() * xi))
                    .collect();
                rows.push(row);
            }
            OperatorBody::SparseRows(rows)
        }
        SketchKind::Rrs | SketchKind::RrsLev => {
            let cat = probs.as_deref().map(Categorical::new);
            let cat = match cat {
                Some(Some(c)) => Some(c),
                Some(None) => {
                    return Err(Error::InvalidDistribution(
                        "unnormalizable sampling weights".to_string(),
                    ))
                }
                None => None,
            };
            let mut rows = Vec::with_capacity(m);
            for r in 0..m {
                let mut stream = Stream::new(derive(spec.seed, &[TAG_ROW, r as u64]));
                let (j, p_j) = match (&cat, &probs) {
                    (Some(cat), Some(p)) => {
                        let j = cat.sample(&mut stream);
                        (j, p[j])
                    }
                    _ => (stream.next_range(n), 1.0 / n as f64),
                };
                rows.push((j as u32, scale / p_j.sqrt()));
            }
            OperatorBody::RowSample(rows)
        }
        SketchKind::Srht => {
            let n_pad = n.next_power_of_two();
            if m > n_pad {
                return Err(Error::InvalidConfig(format!(
                    "srht samples without replacement and needs m <= {n_pad} (padded rows), got {m}"
                )));
            }
            let mut sign_stream = Stream::new(derive(spec.seed, &[TAG_SIGNS]));
            let signs: Vec<f64> = (0..n).map(|_| sign_stream.next_sign()).collect();
            let mut select_stream = Stream::new(derive(spec.seed, &[TAG_SELECT]));
            let rows: Vec<u32> = select_stream
                .sample_without_replacement(n_pad, m)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            OperatorBody::Srht {
                signs,
                rows,
                n_pad,
                scale,
            }
        }
    };

    let nnz_per_row = match spec.kind {
        SketchKind::Less | SketchKind::LessUniform => Some(resolve_nnz(spec, n, d, profile)?),
        SketchKind::Rrs | SketchKind::RrsLev => Some(1),
        _ => None,
    };
    Ok(SketchOperator {
        kind: spec.kind,
        m,
        n,
        nnz_per_row,
        body,
        mac_counter: AtomicU64::new(0),
    })
}

fn resolve_nnz(
    spec: &SketchSpec,
    n: usize,
    d: usize,
    profile: Option<&LeverageProfile>,
) -> Result<usize> {
    let s = match (spec.nnz_per_row, spec.kind) {
        (Some(s), _) => s,
        (None, SketchKind::Less) => {
            let p = profile
                .ok_or_else(|| Error::InvalidConfig("less needs a leverage profile".to_string()))?;
            (p.d_eff.round() as usize).max(1)
        }
        (None, SketchKind::LessUniform) => match (spec.scaling, profile) {
            // the theory prescription for uniform sparsifiers is
            // coherence * d_eff non-zeros per row
            (Scaling::Theory, Some(p)) => ((p.coherence * p.d_eff).round() as usize).max(1),
            _ => d,
        },
        (None, _) => 1,
    };
    if s == 0 || s > n {
        return Err(Error::InvalidConfig(format!(
            "nnz per row must be in [1, {n}], got {s}"
        )));
    }
    Ok(s)
}

/// Apply the sketch: returns the `m x d` matrix `S A`.
pub fn apply_sketch(op: &SketchOperator, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != op.n {
        return Err(Error::DimensionMismatch(format!(
            "operator has {} columns but the matrix has {} rows",
            op.n,
            a.nrows()
        )));
    }
    let d = a.ncols();
    let out = match &op.body {
        OperatorBody::Dense(mat) => {
            op.mac_counter
                .fetch_add((op.m * op.n * d) as u64, Ordering::Relaxed);
            mat * a
        }
        OperatorBody::SparseRows(rows) => {
            let mut out = DMatrix::zeros(op.m, d);
            let mut macs = 0u64;
            for (r, row) in rows.iter().enumerate() {
                macs += (row.len() * d) as u64;
                for &(j, coeff) in row {
                    out.row_mut(r)
                        .zip_apply(&a.row(j as usize), |o, s| *o += coeff * s);
                }
            }
            op.mac_counter.fetch_add(macs, Ordering::Relaxed);
            out
        }
        OperatorBody::RowSample(rows) => {
            let mut out = DMatrix::zeros(op.m, d);
            for (r, &(j, coeff)) in rows.iter().enumerate() {
                out.row_mut(r)
                    .zip_apply(&a.row(j as usize), |o, s| *o = coeff * s);
            }
            op.mac_counter
                .fetch_add((op.m * d) as u64, Ordering::Relaxed);
            out
        }
        OperatorBody::Srht {
            signs,
            rows,
            n_pad,
            scale,
        } => {
            let mut padded = DMatrix::zeros(*n_pad, d);
            for i in 0..op.n {
                let sign = signs[i];
                for j in 0..d {
                    padded[(i, j)] = sign * a[(i, j)];
                }
            }
            fwht_columns(&mut padded);
            let mut out = DMatrix::zeros(op.m, d);
            for (r, &src) in rows.iter().enumerate() {
                for j in 0..d {
                    out[(r, j)] = scale * padded[(src as usize, j)];
                }
            }
            let log = n_pad.trailing_zeros() as u64;
            op.mac_counter.fetch_add(
                (*n_pad as u64) * log * d as u64 + (op.m * d) as u64,
                Ordering::Relaxed,
            );
            out
        }
        OperatorBody::Identity => a.clone(),
    };
    Ok(out)
}

/// Sketched Hessian `(S A)^T (S A) + reg` for a Hessian square-root view.
/// Draws exactly one fresh sketch from `spec.seed`.
pub fn sketched_hessian(
    view: &HessianSqrtView,
    spec: &SketchSpec,
    profile: Option<&LeverageProfile>,
) -> Result<DMatrix<f64>> {
    let op = build_sketch(spec, view.factor.nrows(), view.factor.ncols(), profile)?;
    let sa = apply_sketch(&op, &view.factor)?;
    let mut h = sa.tr_mul(&sa);
    h += &view.reg_hessian;
    crate::linalg::symmetrize(&mut h);
    Ok(h)
}

/// Seed for worker `w` of a distributed step built from a base spec seed.
pub(crate) fn worker_seed(seed: u64, worker: usize) -> u64 {
    derive(seed, &[TAG_WORKER, worker as u64])
}
