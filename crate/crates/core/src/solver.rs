//! ADMM for small dense SDPs with linear equalities and entrywise
//! non-negativity.
//!
//! The decision variable is `x = (svec(M), y)` where `svec` stacks the upper
//! triangle with off-diagonals scaled by `sqrt(2)` (so the Euclidean norm is
//! the Frobenius norm) and `y` holds one copy of `sqrt(2) M[i][j]` per
//! non-negative entry. ADMM alternates between the affine set (all
//! equalities plus `y = sqrt(2) M[i][j]`) and the cone `PSD x R+^p`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{sym_eigen, sym_eigen_warm, LinalgError, Matrix};
use crate::relaxation::SdpProblem;

pub const DEFAULT_SIZE_CAP: usize = 2000;

const RHO_BALANCE: f64 = 10.0;
const RHO_CHECK_EVERY: usize = 100;
const LOG_EVERY: usize = 10;
// Periodic cold starts keep the carried eigenbasis from drifting off orthogonality.
const COLD_START_EVERY: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("problem size {n} exceeds the size cap {cap}")]
    SizeCapExceeded { n: usize, cap: usize },
    #[error("iterate became non-finite at iteration {0}")]
    Diverged(usize),
    #[error("equality constraints are inconsistent (residual {0:.3e})")]
    InconsistentConstraints(f64),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub tol_psd: f64,
    pub rho: f64,
    pub over_relaxation: f64,
    pub seed: u64,
    pub size_cap: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            tol_primal: 1e-8,
            tol_dual: 1e-8,
            tol_psd: 1e-8,
            rho: 1.0,
            over_relaxation: 1.6,
            seed: 0,
            size_cap: DEFAULT_SIZE_CAP,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.max_iters == 0 {
            return Err(SolverError::InvalidConfig("max_iters must be >= 1"));
        }
        if !(self.tol_primal > 0.0 && self.tol_dual > 0.0 && self.tol_psd > 0.0) {
            return Err(SolverError::InvalidConfig("tolerances must be positive"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(SolverError::InvalidConfig("rho must be positive"));
        }
        if !(1.0..=2.0).contains(&self.over_relaxation) {
            return Err(SolverError::InvalidConfig("over_relaxation must lie in [1, 2]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub max_eq_violation: f64,
    pub min_eigenvalue: f64,
    pub max_negative_ineq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub m_matrix: Matrix,
    pub objective_value: f64,
    pub residuals: Residuals,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStatus {
    pub converged: bool,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

/// One line of the optional iteration log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub primal_res: f64,
    pub dual_res: f64,
}

/// Frobenius-nearest PSD matrix: clips negative eigenvalues to zero.
pub fn project_psd(m: &Matrix) -> Result<Matrix, SolverError> {
    if !m.is_square() {
        return Err(LinalgError::NotSquare { rows: m.rows(), cols: m.cols() }.into());
    }
    if !m.is_finite() {
        return Err(LinalgError::NonFinite.into());
    }
    let asym = m.max_asymmetry();
    if asym > 1e-12 {
        return Err(LinalgError::NotSymmetric(asym).into());
    }
    let e = sym_eigen(m)?;
    if e.min_value() >= 0.0 {
        return Ok(m.symmetrized());
    }
    Ok(e.reconstruct_with(|x| x.max(0.0)))
}

/// Upper-triangle layout with `sqrt(2)` scaling off the diagonal.
#[derive(Debug, Clone, Copy)]
struct SvecLayout {
    n: usize,
}

impl SvecLayout {
    fn len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = (i.min(j), i.max(j));
        i * self.n - i * (i + 1) / 2 + j
    }

    fn pack(&self, m: &Matrix, out: &mut [f64]) {
        for i in 0..self.n {
            out[self.idx(i, i)] = m[(i, i)];
            for j in i + 1..self.n {
                out[self.idx(i, j)] = std::f64::consts::SQRT_2 * m[(i, j)];
            }
        }
    }

    fn unpack(&self, x: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            m[(i, i)] = x[self.idx(i, i)];
            for j in i + 1..self.n {
                let v = x[self.idx(i, j)] / std::f64::consts::SQRT_2;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }
}

/// Orthonormal basis of the constraint rows, with transformed right-hand
/// sides, so that the projection onto `{x : Ax = b}` is
/// `x - Qᵀ(Qx - beta)`.
struct AffineProjector {
    q: Vec<Vec<f64>>,
    beta: Vec<f64>,
}

impl AffineProjector {
    fn new(rows: Vec<(Vec<f64>, f64)>) -> Result<Self, SolverError> {
        const DEP_TOL: f64 = 1e-10;
        let mut q: Vec<Vec<f64>> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        for (mut r, mut b) in rows {
            let norm0 = crate::linalg::norm(&r);
            if norm0 == 0.0 {
                if b.abs() > 1e-12 {
                    return Err(SolverError::InconsistentConstraints(b.abs()));
                }
                continue;
            }
            // Two passes of modified Gram-Schmidt.
            for _ in 0..2 {
                for (qi, &bi) in q.iter().zip(&beta) {
                    let c = crate::linalg::dot(qi, &r);
                    if c != 0.0 {
                        for (x, y) in r.iter_mut().zip(qi) {
                            *x -= c * y;
                        }
                        b -= c * bi;
                    }
                }
            }
            let nr = crate::linalg::norm(&r);
            if nr <= DEP_TOL * norm0 {
                if b.abs() > 1e-8 * norm0.max(1.0) {
                    return Err(SolverError::InconsistentConstraints(b.abs()));
                }
                continue;
            }
            r.iter_mut().for_each(|x| *x /= nr);
            q.push(r);
            beta.push(b / nr);
        }
        Ok(Self { q, beta })
    }

    fn project(&self, x: &mut [f64]) {
        for (qi, &bi) in self.q.iter().zip(&self.beta) {
            let c = crate::linalg::dot(qi, x) - bi;
            if c != 0.0 {
                for (xv, qv) in x.iter_mut().zip(qi) {
                    *xv -= c * qv;
                }
            }
        }
    }
}

struct Workspace {
    layout: SvecLayout,
    nx: usize,
    cost: Vec<f64>,
    affine: AffineProjector,
}

impl Workspace {
    fn new(problem: &SdpProblem) -> Result<Self, SolverError> {
        let n = problem.n();
        let layout = SvecLayout { n };
        let nt = layout.len();
        let p = problem.ineq_indices.len();
        let nx = nt + p;

        let mut cost = vec![0.0; nx];
        layout.pack(&problem.objective, &mut cost[..nt]);
        // <C, M> = sum_i C_ii M_ii + sum_{i<j} 2 C_ij M_ij = sum svec(C)·svec(M)
        // with the same sqrt(2) scaling on both sides.

        let mut rows = Vec::with_capacity(problem.eq_constraints.len() + p);
        for c in &problem.eq_constraints {
            let mut r = vec![0.0; nx];
            for &(i, j, coef) in &c.terms {
                let scale = if i == j { 1.0 } else { std::f64::consts::FRAC_1_SQRT_2 };
                r[layout.idx(i, j)] += coef * scale;
            }
            rows.push((r, c.rhs));
        }
        for (l, &(i, j)) in problem.ineq_indices.iter().enumerate() {
            let mut r = vec![0.0; nx];
            r[layout.idx(i, j)] = 1.0;
            r[nt + l] = -1.0;
            rows.push((r, 0.0));
        }
        let affine = AffineProjector::new(rows)?;
        Ok(Self { layout, nx, cost, affine })
    }

    /// Projection onto `PSD x R+^p`; returns the PSD block as a matrix too.
    ///
    /// `basis` carries the previous eigenbasis between calls; the
    /// eigensolver starts from it unless it is `None`.
    fn project_cone(&self, x: &mut [f64], basis: &mut Option<Matrix>) -> Result<Matrix, SolverError> {
        let nt = self.layout.len();
        let m = self.layout.unpack(&x[..nt]);
        let e = match basis.as_ref() {
            Some(b) => sym_eigen_warm(&m, b)?,
            None => sym_eigen(&m)?,
        };
        *basis = Some(e.vectors.clone());
        let proj = if e.min_value() >= 0.0 { m } else { e.reconstruct_with(|v| v.max(0.0)) };
        self.layout.pack(&proj, &mut x[..nt]);
        for v in &mut x[nt..] {
            *v = v.max(0.0);
        }
        Ok(proj)
    }
}

pub fn solve(p: &SdpProblem, cfg: &SolverConfig) -> Result<(SdpSolution, SolveStatus), SolverError> {
    solve_with_log(p, cfg, |_| {})
}

/// Runs ADMM, calling `log` every few iterations and once at the end.
pub fn solve_with_log(
    p: &SdpProblem,
    cfg: &SolverConfig,
    mut log: impl FnMut(IterRecord),
) -> Result<(SdpSolution, SolveStatus), SolverError> {
    cfg.validate()?;
    let n = p.n();
    if n > cfg.size_cap {
        return Err(SolverError::SizeCapExceeded { n, cap: cfg.size_cap });
    }
    let ws = Workspace::new(p)?;
    let nx = ws.nx;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y: Vec<f64> = (0..nx).map(|_| 1e-3 * (rng.gen::<f64>() - 0.5)).collect();
    let mut basis = None;
    let mut y_mat = ws.project_cone(&mut y, &mut basis)?;
    let mut u = vec![0.0; nx];
    let mut x = vec![0.0; nx];
    let mut xh = vec![0.0; nx];
    let mut rho = cfg.rho;
    let alpha = cfg.over_relaxation;

    let mut status = SolveStatus {
        converged: false,
        iterations: 0,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
    };

    for it in 1..=cfg.max_iters {
        for i in 0..nx {
            x[i] = y[i] - u[i] + ws.cost[i] / rho;
        }
        ws.affine.project(&mut x);
        for i in 0..nx {
            xh[i] = alpha * x[i] + (1.0 - alpha) * y[i];
        }

        let y_prev = y.clone();
        for i in 0..nx {
            y[i] = xh[i] + u[i];
        }
        if it % COLD_START_EVERY == 0 {
            basis = None;
        }
        y_mat = ws.project_cone(&mut y, &mut basis)?;
        for i in 0..nx {
            u[i] += xh[i] - y[i];
        }

        if !(x.iter().all(|v| v.is_finite()) && y.iter().all(|v| v.is_finite())) {
            return Err(SolverError::Diverged(it));
        }

        let mut r2 = 0.0;
        let mut d2 = 0.0;
        let mut xn = 0.0;
        let mut yn = 0.0;
        let mut un = 0.0;
        for i in 0..nx {
            r2 += (x[i] - y[i]).powi(2);
            d2 += (y[i] - y_prev[i]).powi(2);
            xn += x[i] * x[i];
            yn += y[i] * y[i];
            un += u[i] * u[i];
        }
        let primal = r2.sqrt() / (1.0 + xn.sqrt().max(yn.sqrt()));
        let dual = rho * d2.sqrt() / (1.0 + rho * un.sqrt());
        status = SolveStatus { converged: false, iterations: it, primal_residual: primal, dual_residual: dual };

        if it % LOG_EVERY == 0 {
            log(IterRecord { iter: it, objective: p.objective_value(&y_mat), primal_res: primal, dual_res: dual });
        }

        if primal <= cfg.tol_primal && dual <= cfg.tol_dual {
            status.converged = true;
            break;
        }

        // Rebalance rho when one residual dominates the other by more than
        // RHO_BALANCE; the scaled dual variable is rescaled to match.
        if it % RHO_CHECK_EVERY == 0 && primal > 0.0 && dual > 0.0 {
            let ratio = primal / dual;
            if !(1.0 / RHO_BALANCE..=RHO_BALANCE).contains(&ratio) {
                let f = ratio.sqrt();
                rho *= f;
                u.iter_mut().for_each(|v| *v /= f);
            }
        }
    }

    let objective_value = p.objective_value(&y_mat);
    let min_eigenvalue = sym_eigen(&y_mat)?.min_value();
    let residuals = Residuals {
        max_eq_violation: p.max_eq_violation(&y_mat),
        min_eigenvalue,
        max_negative_ineq: p.max_negative_ineq(&y_mat),
    };
    if status.converged && min_eigenvalue < -cfg.tol_psd {
        status.converged = false;
    }
    log(IterRecord {
        iter: status.iterations,
        objective: objective_value,
        primal_res: status.primal_residual,
        dual_res: status.dual_residual,
    });
    Ok((
        SdpSolution { m_matrix: y_mat, objective_value, residuals, iterations: status.iterations },
        status,
    ))
}
