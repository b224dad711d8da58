//! Objectives exposed through value, gradient, and Hessian square-root
//! access.
//!
//! Every objective decomposes as `f = f0 + g`, where the Hessian of `f0` at
//! `x` is `A(x)^T A(x)` for a tall `n x d` factor `A(x)`, and `g` is the
//! ridge term with Hessian `lambda * I`. The solver and the moments lab only
//! ever touch objectives through this interface.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::spd_solve;

/// Floor for the logistic curvature weights so the square root stays
/// defined when a margin saturates.
const WEIGHT_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveKind {
    LeastSquares,
    RidgeLeastSquares,
    LogisticL2,
}

impl ObjectiveKind {
    pub fn label(&self) -> &'static str {
        match self {
            ObjectiveKind::LeastSquares => "ls",
            ObjectiveKind::RidgeLeastSquares => "ridge",
            ObjectiveKind::LogisticL2 => "logistic",
        }
    }
}

/// Hessian square-root view at a point: `factor^T factor + reg_hessian`
/// equals the full Hessian of the objective there.
#[derive(Clone, Debug)]
pub struct HessianSqrtView {
    /// The `n x d` factor of the data part of the Hessian.
    pub factor: DMatrix<f64>,
    /// The `d x d` symmetric psd Hessian of the regularizer.
    pub reg_hessian: DMatrix<f64>,
}

impl HessianSqrtView {
    /// Reconstruct the full Hessian `factor^T factor + reg_hessian`.
    pub fn hessian(&self) -> DMatrix<f64> {
        let mut h = self.factor.tr_mul(&self.factor);
        h += &self.reg_hessian;
        crate::linalg::symmetrize(&mut h);
        h
    }
}

/// A twice-differentiable objective over `R^d`. Immutable after
/// construction; all evaluations are pure and safe to share across threads.
#[derive(Clone, Debug)]
pub struct Objective {
    kind: ObjectiveKind,
    data: DMatrix<f64>,
    targets: DVector<f64>,
    reg: f64,
}

impl Objective {
    /// Plain least squares, `f(x) = 0.5 * ||Ax - b||^2`.
    pub fn least_squares(data: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        Self::build(ObjectiveKind::LeastSquares, data, targets, 0.0)
    }

    /// Ridge least squares with `lambda > 0`.
    pub fn ridge_least_squares(
        data: DMatrix<f64>,
        targets: DVector<f64>,
        lambda: f64,
    ) -> Result<Self> {
        if lambda.is_nan() || lambda <= 0.0 {
            return Err(Error::InvalidConfig(
                "ridge least squares requires lambda > 0; use least_squares for lambda = 0"
                    .to_string(),
            ));
        }
        Self::build(ObjectiveKind::RidgeLeastSquares, data, targets, lambda)
    }

    /// l2-regularized logistic regression with `lambda >= 0`. Targets must be
    /// in `{-1, +1}`; the common `{0, 1}` file convention is remapped.
    pub fn logistic_l2(data: DMatrix<f64>, targets: DVector<f64>, lambda: f64) -> Result<Self> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "logistic regularization must be finite and >= 0, got {lambda}"
            )));
        }
        let zero_one = targets.iter().all(|&t| t == 0.0 || t == 1.0);
        let mapped = if zero_one {
            targets.map(|t| if t == 1.0 { 1.0 } else { -1.0 })
        } else {
            targets
        };
        if !mapped.iter().all(|&t| t == 1.0 || t == -1.0) {
            return Err(Error::InvalidConfig(
                "logistic targets must be in {-1,+1} (or {0,1})".to_string(),
            ));
        }
        Self::build(ObjectiveKind::LogisticL2, data, mapped, lambda)
    }

    fn build(
        kind: ObjectiveKind,
        data: DMatrix<f64>,
        targets: DVector<f64>,
        reg: f64,
    ) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::DimensionMismatch(
                "data matrix must have at least one row and one column".to_string(),
            ));
        }
        if targets.len() != data.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "targets have length {} but data has {} rows",
                targets.len(),
                data.nrows()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) || !targets.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig(
                "data and targets must be finite".to_string(),
            ));
        }
        Ok(Objective {
            kind,
            data,
            targets,
            reg,
        })
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    /// Number of rows (samples) `n`.
    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn lambda(&self) -> f64 {
        self.reg
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has length {} but objective dimension is {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Objective value `f(x)`.
    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        let ridge = 0.5 * self.reg * x.norm_squared();
        match self.kind {
            ObjectiveKind::LeastSquares | ObjectiveKind::RidgeLeastSquares => {
                let r = &self.data * x - &self.targets;
                Ok(0.5 * r.norm_squared() + ridge)
            }
            ObjectiveKind::LogisticL2 => {
                let margins = &self.data * x;
                let n = self.nrows() as f64;
                let mut loss = 0.0;
                for i in 0..self.nrows() {
                    // softplus(-z) = log(1 + exp(-z)), overflow-safe
                    let z = self.targets[i] * margins[i];
                    loss += softplus(-z);
                }
                Ok(loss / n + ridge)
            }
        }
    }

    /// Exact analytic gradient of `f` at `x`.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        match self.kind {
            ObjectiveKind::LeastSquares | ObjectiveKind::RidgeLeastSquares => {
                let r = &self.data * x - &self.targets;
                let mut g = self.data.tr_mul(&r);
                g.axpy(self.reg, x, 1.0);
                Ok(g)
            }
            ObjectiveKind::LogisticL2 => {
                let margins = &self.data * x;
                let n = self.nrows() as f64;
                let coeffs = DVector::from_fn(self.nrows(), |i, _| {
                    let b = self.targets[i];
                    -b * sigmoid(-b * margins[i]) / n
                });
                let mut g = self.data.tr_mul(&coeffs);
                g.axpy(self.reg, x, 1.0);
                Ok(g)
            }
        }
    }

    /// Hessian square-root view at `x`.
    ///
    /// For least squares the factor is `A` itself (the Hessian is constant);
    /// for logistic regression row `i` is `sqrt(w_i(x)) * a_i^T` with
    /// `w_i = sigma(z_i) (1 - sigma(z_i)) / n`.
    pub fn hessian_sqrt(&self, x: &DVector<f64>) -> Result<HessianSqrtView> {
        self.check_dim(x)?;
        let d = self.dim();
        let reg_hessian = DMatrix::identity(d, d) * self.reg;
        match self.kind {
            ObjectiveKind::LeastSquares | ObjectiveKind::RidgeLeastSquares => Ok(HessianSqrtView {
                factor: self.data.clone(),
                reg_hessian,
            }),
            ObjectiveKind::LogisticL2 => {
                let margins = &self.data * x;
                let n = self.nrows() as f64;
                let mut factor = self.data.clone();
                for i in 0..self.nrows() {
                    let s = sigmoid(self.targets[i] * margins[i]);
                    let w = (s * (1.0 - s) / n).max(WEIGHT_FLOOR);
                    let scale = w.sqrt();
                    for j in 0..d {
                        factor[(i, j)] *= scale;
                    }
                }
                Ok(HessianSqrtView {
                    factor,
                    reg_hessian,
                })
            }
        }
    }

    /// Full Hessian at `x`, assembled from the square-root view.
    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.hessian_sqrt(x)?.hessian())
    }

    /// High-precision minimizer: closed form for (ridge) least squares, and
    /// damped Newton driven to gradient norm `1e-12` for logistic.
    pub fn reference_solution(&self) -> Result<DVector<f64>> {
        match self.kind {
            ObjectiveKind::LeastSquares | ObjectiveKind::RidgeLeastSquares => {
                let mut h = self.data.tr_mul(&self.data);
                for i in 0..self.dim() {
                    h[(i, i)] += self.reg;
                }
                let rhs = self.data.tr_mul(&self.targets);
                spd_solve(&h, &rhs, "least-squares normal equations")
            }
            ObjectiveKind::LogisticL2 => {
                let mut x = DVector::zeros(self.dim());
                let mut fx = self.value(&x)?;
                for _ in 0..200 {
                    let g = self.gradient(&x)?;
                    if g.norm() <= 1e-12 {
                        return Ok(x);
                    }
                    let h = self.hessian(&x)?;
                    let dir = spd_solve(&h, &g, "logistic Newton reference")?;
                    let slope = g.dot(&dir);
                    let mut t = 1.0;
                    // Armijo halving keeps the reference solve globally safe.
                    for _ in 0..60 {
                        let cand = &x - t * &dir;
                        let fc = self.value(&cand)?;
                        if fc <= fx - 1e-4 * t * slope {
                            x = cand;
                            fx = fc;
                            break;
                        }
                        t *= 0.5;
                    }
                }
                let g = self.gradient(&x)?;
                if g.norm() <= 1e-10 {
                    Ok(x)
                } else {
                    Err(Error::NoConvergence(format!(
                        "logistic reference solve stalled at gradient norm {}",
                        g.norm()
                    )))
                }
            }
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}
