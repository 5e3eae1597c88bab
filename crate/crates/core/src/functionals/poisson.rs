//! Distributed Poisson control.
//!
//! Minimizes `J(m) = ½‖v − v_d‖² + (α/2)‖m‖²` where `−Δv = m` with `v = 0` on
//! the boundary. The state equation uses the 5-point stencil on interior
//! nodes and is solved matrix-free by conjugate gradients. The gradient is
//! `p + αm` with adjoint `−Δp = v − v_d`, `p = 0` on the boundary.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::hilbert::{self, Field, Space};

use super::Functional;

pub const DEFAULT_ALPHA: f64 = 1e-4;
pub const DEFAULT_SOLVER_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PoissonControlProblem {
    pub space: Space,
    pub desired_state: Field,
    pub alpha: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

impl PoissonControlProblem {
    /// Defaults: `v_d = sin(4πx) sin(πy)`, `α = 1e-4`, CG tolerance `1e-10`.
    pub fn new(space: &Space) -> Self {
        let [ox, oy] = space.origin();
        let lx = space.hx() * (space.nx() - 1) as f64;
        let ly = space.hy() * (space.ny() - 1) as f64;
        let desired_state = Field::from_fn(space, |x, y| {
            (4.0 * PI * (x - ox) / lx).sin() * (PI * (y - oy) / ly).sin()
        });
        Self {
            space: space.clone(),
            desired_state,
            alpha: DEFAULT_ALPHA,
            solver_tol: DEFAULT_SOLVER_TOL,
            solver_max_iter: 20 * space.nx().max(space.ny()) * 4,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_solver(mut self, tol: f64, max_iter: usize) -> Self {
        self.solver_tol = tol;
        self.solver_max_iter = max_iter;
        self
    }
}

#[derive(Debug, Clone)]
pub struct PoissonControl {
    problem: PoissonControlProblem,
}

pub fn poisson_control(problem: PoissonControlProblem) -> Result<PoissonControl> {
    let s = &problem.space;
    if s.nx() < 17 || s.ny() < 17 {
        return Err(Error::invalid(
            "grid",
            format!("Poisson control needs at least 17x17 nodes, got {}x{}", s.nx(), s.ny()),
        ));
    }
    if !hilbert::same_space(s, problem.desired_state.space()) {
        return Err(Error::SpaceMismatch);
    }
    if !(problem.alpha > 0.0 && problem.alpha.is_finite()) {
        return Err(Error::invalid("alpha", "must be positive"));
    }
    if !(problem.solver_tol > 0.0 && problem.solver_tol < 1.0) {
        return Err(Error::invalid("solver_tol", "must lie in (0, 1)"));
    }
    if problem.solver_max_iter == 0 {
        return Err(Error::invalid("solver_max_iter", "must be positive"));
    }
    Ok(PoissonControl { problem })
}

impl PoissonControl {
    pub fn problem(&self) -> &PoissonControlProblem {
        &self.problem
    }

    /// Solves `−Δv = rhs` with homogeneous Dirichlet data. Boundary values of
    /// `rhs` are ignored.
    pub fn solve(&self, rhs: &Field) -> Result<Field> {
        let p = &self.problem;
        let lap = Laplacian::new(&p.space);
        let b = lap.restrict(rhs.values());
        let x = lap.conjugate_gradient(&b, p.solver_tol, p.solver_max_iter)?;
        Field::from_values(&p.space, lap.extend(&x))
    }

    fn objective(&self, m: &Field, v: &Field) -> Result<(f64, Field)> {
        let misfit = v.sub(&self.problem.desired_state)?;
        let j = 0.5 * hilbert::norm(&misfit).powi(2) + 0.5 * self.problem.alpha * hilbert::norm(m).powi(2);
        Ok((j, misfit))
    }
}

impl Functional for PoissonControl {
    fn space(&self) -> &Space {
        &self.problem.space
    }

    fn evaluate(&self, m: &Field) -> Result<f64> {
        let v = self.solve(m)?;
        Ok(self.objective(m, &v)?.0)
    }

    fn gradient(&self, m: &Field) -> Result<Field> {
        Ok(self.value_and_gradient(m)?.1)
    }

    fn value_and_gradient(&self, m: &Field) -> Result<(f64, Field)> {
        let v = self.solve(m)?;
        let (j, misfit) = self.objective(m, &v)?;
        let mut grad = self.solve(&misfit)?;
        grad.axpy(self.problem.alpha, m)?;
        Ok((j, grad))
    }
}

/// Interior 5-point negative Laplacian.
struct Laplacian {
    nx: usize,
    ny: usize,
    inx: usize,
    iny: usize,
    cx: f64,
    cy: f64,
}

impl Laplacian {
    fn new(space: &Space) -> Self {
        Self {
            nx: space.nx(),
            ny: space.ny(),
            inx: space.nx() - 2,
            iny: space.ny() - 2,
            cx: 1.0 / (space.hx() * space.hx()),
            cy: 1.0 / (space.hy() * space.hy()),
        }
    }

    fn restrict(&self, full: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.inx * self.iny);
        for j in 1..self.ny - 1 {
            out.extend_from_slice(&full[j * self.nx + 1..j * self.nx + self.nx - 1]);
        }
        out
    }

    fn extend(&self, interior: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nx * self.ny];
        for j in 0..self.iny {
            let row = (j + 1) * self.nx + 1;
            out[row..row + self.inx].copy_from_slice(&interior[j * self.inx..(j + 1) * self.inx]);
        }
        out
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (n, m) = (self.inx, self.iny);
        let diag = 2.0 * (self.cx + self.cy);
        for j in 0..m {
            for i in 0..n {
                let k = j * n + i;
                let mut acc = diag * x[k];
                if i > 0 {
                    acc -= self.cx * x[k - 1];
                }
                if i + 1 < n {
                    acc -= self.cx * x[k + 1];
                }
                if j > 0 {
                    acc -= self.cy * x[k - n];
                }
                if j + 1 < m {
                    acc -= self.cy * x[k + n];
                }
                y[k] = acc;
            }
        }
    }

    fn conjugate_gradient(&self, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        let n = b.len();
        let mut x = vec![0.0; n];
        let b_norm = dot(b, b).sqrt();
        if b_norm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let mut rr = dot(&r, &r);
        for _ in 0..max_iter {
            if rr.sqrt() <= tol * b_norm {
                return Ok(x);
            }
            self.apply(&p, &mut ap);
            let alpha = rr / dot(&p, &ap);
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            for k in 0..n {
                p[k] = r[k] + beta * p[k];
            }
            rr = rr_new;
        }
        // recompute the true residual before giving up
        self.apply(&x, &mut ap);
        let true_rr: f64 = b.iter().zip(&ap).map(|(b, a)| (b - a) * (b - a)).sum();
        let residual = true_rr.sqrt() / b_norm;
        if residual <= tol {
            Ok(x)
        } else {
            Err(Error::Solver {
                iterations: max_iter,
                residual,
            })
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}
