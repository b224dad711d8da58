//! Synthetic data generation, random-cosine feature maps, and matrix file
//! formats (plain CSV and the `NLMX` binary layout).

use std::fs;
use std::io::Write as IoWrite;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;
use crate::problem::ObjectiveKind;
use crate::rng::{derive, Stream};

/// Covariance with geometric off-diagonal decay, `Sigma_ij = 2 * 0.5^|i-j|`.
pub fn coherent_covariance(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| 2.0 * 0.5f64.powi((i as i32 - j as i32).abs()))
}

/// High-coherence synthetic matrix: rows `a_i = g_i / sqrt(z_i)` with
/// `g_i ~ N(0, Sigma)` and `z_i ~ Gamma(1/2, 2)` (equivalently a chi-square
/// with one degree of freedom), which produces heavy-tailed row norms and
/// strongly non-uniform leverage scores.
pub fn gen_coherent(n: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n < d || d < 2 {
        return Err(Error::InvalidConfig(format!(
            "coherent generator needs n >= d >= 2, got n = {n}, d = {d}"
        )));
    }
    let sigma_sqrt = psd_sqrt(&coherent_covariance(d))?;
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        let mut stream = Stream::new(derive(seed, &[i as u64]));
        let g = DVector::from_fn(d, |_, _| stream.next_normal());
        let row = &sigma_sqrt * g;
        // Gamma(1/2, 2) == chi-square with 1 dof == squared standard normal
        let z = stream.next_normal().powi(2).max(1e-60);
        let inv = 1.0 / z.sqrt();
        for j in 0..d {
            out[(i, j)] = inv * row[j];
        }
    }
    Ok(out)
}

/// Random-cosine feature map approximating the Gaussian kernel
/// `exp(-gamma ||x - y||^2)`: `phi(x) = sqrt(2/d) cos(W x + u)` with rows of
/// `W` drawn from `N(0, 2 gamma I)` and `u` uniform on `[0, 2 pi)`.
pub fn cosine_features(
    raw: &DMatrix<f64>,
    d: usize,
    gamma: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "bandwidth gamma must be finite and > 0, got {gamma}"
        )));
    }
    if d == 0 {
        return Err(Error::InvalidConfig(
            "feature count must be >= 1".to_string(),
        ));
    }
    let p = raw.ncols();
    let mut stream = Stream::new(derive(seed, &[0]));
    let w_scale = (2.0 * gamma).sqrt();
    let w = DMatrix::from_fn(d, p, |_, _| w_scale * stream.next_normal());
    let u = DVector::from_fn(d, |_, _| 2.0 * std::f64::consts::PI * stream.next_f64());
    let amp = (2.0 / d as f64).sqrt();
    let projected = raw * w.transpose();
    Ok(DMatrix::from_fn(raw.nrows(), d, |i, j| {
        amp * (projected[(i, j)] + u[j]).cos()
    }))
}

/// Deterministic synthetic targets for a data matrix: a planted linear model
/// with additive noise for least squares, and sigmoid-probability labels in
/// `{-1, +1}` for logistic regression.
pub fn synthesize_targets(kind: ObjectiveKind, a: &DMatrix<f64>, seed: u64) -> DVector<f64> {
    let (n, d) = a.shape();
    let mut stream = Stream::new(derive(seed, &[1]));
    let scale = 1.0 / (d as f64).sqrt();
    let w = DVector::from_fn(d, |_, _| scale * stream.next_normal());
    let mean = a * &w;
    match kind {
        ObjectiveKind::LeastSquares | ObjectiveKind::RidgeLeastSquares => {
            DVector::from_fn(n, |i, _| mean[i] + 0.1 * stream.next_normal())
        }
        ObjectiveKind::LogisticL2 => DVector::from_fn(n, |i, _| {
            let p = 1.0 / (1.0 + (-mean[i]).exp());
            if stream.next_f64() < p {
                1.0
            } else {
                -1.0
            }
        }),
    }
}

const NLMX_MAGIC: &[u8; 4] = b"NLMX";

/// Write a matrix in the `NLMX` binary layout: 4-byte magic, two 64-bit
/// little-endian unsigned counts (rows, cols), then row-major 64-bit floats.
pub fn write_matrix_nlmx(path: &Path, mat: &DMatrix<f64>) -> Result<()> {
    let (n, d) = mat.shape();
    let mut buf = Vec::with_capacity(20 + 8 * n * d);
    buf.extend_from_slice(NLMX_MAGIC);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(d as u64).to_le_bytes());
    for i in 0..n {
        for j in 0..d {
            buf.extend_from_slice(&mat[(i, j)].to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Read a matrix in the `NLMX` binary layout.
pub fn read_matrix_nlmx(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path)?;
    parse_nlmx(&bytes)
}

fn parse_nlmx(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 20 || &bytes[..4] != NLMX_MAGIC {
        return Err(Error::Parse("missing NLMX magic".to_string()));
    }
    let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let expected = 20 + 8 * n * d;
    if bytes.len() != expected {
        return Err(Error::Parse(format!(
            "NLMX payload has {} bytes, expected {expected} for {n}x{d}",
            bytes.len()
        )));
    }
    let mut mat = DMatrix::zeros(n, d);
    let mut off = 20;
    for i in 0..n {
        for j in 0..d {
            mat[(i, j)] = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            off += 8;
        }
    }
    Ok(mat)
}

/// Write a matrix as plain CSV of reals, one row per line.
pub fn write_matrix_csv(path: &Path, mat: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..mat.nrows() {
        for j in 0..mat.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", mat[(i, j)]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a plain CSV matrix.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    parse_csv_text(&fs::read_to_string(path)?)
}

/// Read a matrix, sniffing the format from the leading magic bytes.
pub fn read_matrix_auto(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() >= 4 && &bytes[..4] == NLMX_MAGIC {
        parse_nlmx(&bytes)
    } else {
        let text =
            String::from_utf8(bytes).map_err(|_| Error::Parse("not NLMX or CSV".to_string()))?;
        parse_csv_text(&text)
    }
}

fn parse_csv_text(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad number {cell:?}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse(format!(
                    "line {}: {} columns, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("empty matrix file".to_string()));
    }
    let n = rows.len();
    let d = rows[0].len();
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

/// Write a matrix choosing the format by extension (`.nlmx` is binary,
/// anything else is CSV).
pub fn write_matrix_auto(path: &Path, mat: &DMatrix<f64>) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("nlmx") => write_matrix_nlmx(path, mat),
        _ => write_matrix_csv(path, mat),
    }
}
