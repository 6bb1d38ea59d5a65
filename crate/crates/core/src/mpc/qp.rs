//! Dense convex QP solver: minimize 0.5 x'Px + q'x subject to l <= Ax <= u, by ADMM
//! operator splitting with over-relaxation and adaptive penalty.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("P is not symmetric")]
    NotSymmetric,
    #[error("lower bound exceeds upper bound in row {0}")]
    InvertedBounds(usize),
    #[error("KKT matrix is not positive definite")]
    Factorization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.l.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.q.len();
        let m = self.l.len();
        if self.p.shape() != (n, n) {
            return Err(QpError::Dimension(format!("P is {:?}, expected {n}x{n}", self.p.shape())));
        }
        if self.a.shape() != (m, n) || self.u.len() != m {
            return Err(QpError::Dimension(format!(
                "A is {:?}, l has {m} rows, u has {}; expected A {m}x{n}",
                self.a.shape(),
                self.u.len()
            )));
        }
        let scale = self.p.amax().max(1.0);
        if (&self.p - self.p.transpose()).amax() > 1e-12 * scale {
            return Err(QpError::NotSymmetric);
        }
        if let Some(i) = (0..m).find(|&i| self.l[i] > self.u[i]) {
            return Err(QpError::InvertedBounds(i));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub max_iter: usize,
    /// Iterations between penalty adaptation checks.
    pub adapt_interval: usize,
    /// Penalty multiplier applied to equality rows.
    pub eq_rho_scale: f64,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_primal: 1e-6,
            eps_dual: 1e-6,
            max_iter: 4000,
            adapt_interval: 25,
            eq_rho_scale: 1e3,
        }
    }
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Projected constraint values, always within [l, u].
    pub z: DVector<f64>,
    /// Constraint multipliers.
    pub y: DVector<f64>,
    /// ||Ax - z||_inf
    pub primal_residual: f64,
    /// ||Px + q + A'y||_inf
    pub dual_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rho: f64,
}

impl QpSolution {
    pub fn objective(&self, qp: &QpProblem) -> f64 {
        qp.objective(&self.x)
    }
}

/// Starting point for [`solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub y: DVector<f64>,
}

impl From<&QpSolution> for WarmStart {
    fn from(s: &QpSolution) -> Self {
        Self { x: s.x.clone(), z: s.z.clone(), y: s.y.clone() }
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

fn project(v: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| v[i].clamp(l[i], u[i]))
}

struct Kkt {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    rho_vec: DVector<f64>,
}

fn factor(qp: &QpProblem, rho: f64, s: &AdmmSettings) -> Result<Kkt, QpError> {
    let n = qp.num_vars();
    let rho_vec =
        DVector::from_fn(qp.num_constraints(), |i, _| if qp.l[i] == qp.u[i] { rho * s.eq_rho_scale } else { rho });
    let mut k = &qp.p + DMatrix::identity(n, n) * s.sigma;
    let mut ra = qp.a.clone();
    for (i, mut row) in ra.row_iter_mut().enumerate() {
        row *= rho_vec[i];
    }
    k += qp.a.transpose() * ra;
    let chol = k.cholesky().ok_or(QpError::Factorization)?;
    Ok(Kkt { chol, rho_vec })
}

/// Solves `qp`; non-convergence is reported through [`QpSolution::converged`].
pub fn solve(qp: &QpProblem, settings: &AdmmSettings, warm: Option<&WarmStart>) -> Result<QpSolution, QpError> {
    qp.validate()?;
    let n = qp.num_vars();
    let m = qp.num_constraints();
    let (mut x, mut z, mut y) = match warm {
        Some(w) if w.x.len() == n && w.z.len() == m && w.y.len() == m => {
            (w.x.clone(), project(&w.z, &qp.l, &qp.u), w.y.clone())
        }
        _ => (DVector::zeros(n), DVector::zeros(m), DVector::zeros(m)),
    };
    let mut rho = settings.rho;
    let mut kkt = factor(qp, rho, settings)?;
    let at = qp.a.transpose();
    let alpha = settings.alpha;
    let sigma = settings.sigma;

    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iter {
        iterations += 1;
        let rhs = &x * sigma - &qp.q + &at * (kkt.rho_vec.component_mul(&z) - &y);
        let x_tilde = kkt.chol.solve(&rhs);
        let z_tilde = &qp.a * &x_tilde;
        let x_next = &x_tilde * alpha + &x * (1.0 - alpha);
        let z_relaxed = &z_tilde * alpha + &z * (1.0 - alpha);
        let z_next = project(&(&z_relaxed + y.component_div(&kkt.rho_vec)), &qp.l, &qp.u);
        y += kkt.rho_vec.component_mul(&(&z_relaxed - &z_next));
        x = x_next;
        z = z_next;

        primal = inf_norm(&(&qp.a * &x - &z));
        dual = inf_norm(&(&qp.p * &x + &qp.q + &at * &y));
        if primal < settings.eps_primal && dual < settings.eps_dual {
            converged = true;
            break;
        }
        if settings.adapt_interval > 0 && iterations % settings.adapt_interval == 0 {
            let new_rho = if primal > 10.0 * dual {
                (rho * 10.0).min(RHO_MAX)
            } else if dual > 10.0 * primal {
                (rho / 10.0).max(RHO_MIN)
            } else {
                rho
            };
            if new_rho != rho {
                rho = new_rho;
                kkt = factor(qp, rho, settings)?;
            }
        }
    }
    Ok(QpSolution { x, z, y, primal_residual: primal, dual_residual: dual, iterations, converged, rho })
}
