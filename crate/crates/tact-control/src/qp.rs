//! Dense strictly-convex quadratic programs with box bounds and optional
//! linear equalities, solved by a primal active-set method.
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  lb <= x <= ub,   A_eq x = b_eq
//! ```
//!
//! The working set holds variables pinned at a bound. Each iteration solves
//! the equality-constrained subproblem on the free variables, steps as far as
//! the bounds allow, and adds or releases one bound at a time. All
//! tie-breaking picks the lowest index, so the iteration sequence is
//! reproducible.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("Hessian is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("problem is infeasible: {0}")]
    Infeasible(String),
    #[error("active-set iteration cap {0} exceeded")]
    MaxIterations(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub equalities: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl QpProblem {
    /// Box-constrained problem without equalities. Use `f64::INFINITY` /
    /// `f64::NEG_INFINITY` for absent bounds.
    pub fn boxed(
        hessian: DMatrix<f64>,
        gradient: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> QpProblem {
        QpProblem {
            hessian,
            gradient,
            lower,
            upper,
            equalities: None,
        }
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.gradient.len();
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return Err(QpError::Dimension(format!(
                "H is {}x{}, g has {}",
                self.hessian.nrows(),
                self.hessian.ncols(),
                n
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(QpError::Dimension("bound lengths".into()));
        }
        let scale = self.hessian.amax().max(1.0);
        let mut asym: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                asym = asym.max((self.hessian[(i, j)] - self.hessian[(j, i)]).abs());
            }
        }
        if asym > 1e-12 * scale {
            return Err(QpError::NotSymmetric(asym));
        }
        if self.hessian.clone().cholesky().is_none() {
            return Err(QpError::NotPositiveDefinite);
        }
        for i in 0..n {
            if self.lower[i] > self.upper[i] {
                return Err(QpError::Infeasible(format!("lower[{i}] > upper[{i}]")));
            }
        }
        if let Some((a, b)) = &self.equalities {
            if a.ncols() != n || a.nrows() != b.len() {
                return Err(QpError::Dimension("equality shapes".into()));
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.hessian * x)[0] + self.gradient.dot(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BoundState {
    Free,
    AtLower,
    AtUpper,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of active bounds (0 for free variables), sign-flipped so
    /// that every active bound reports a nonnegative value at optimality.
    pub bound_multipliers: DVector<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// Equality-constrained subproblem on the free variables. Returns the full
/// `x` with working-set variables pinned, plus equality multipliers.
fn solve_subproblem(
    p: &QpProblem,
    state: &[BoundState],
) -> Result<(DVector<f64>, DVector<f64>), QpError> {
    let n = p.gradient.len();
    let free: Vec<usize> = (0..n).filter(|&i| state[i] == BoundState::Free).collect();
    let nf = free.len();
    let m = p.equalities.as_ref().map(|(a, _)| a.nrows()).unwrap_or(0);

    let mut x = DVector::zeros(n);
    for i in 0..n {
        match state[i] {
            BoundState::AtLower => x[i] = p.lower[i],
            BoundState::AtUpper => x[i] = p.upper[i],
            BoundState::Free => {}
        }
    }

    if nf == 0 && m == 0 {
        return Ok((x, DVector::zeros(0)));
    }

    // KKT system [H_FF A_F'; A_F 0] [xF; nu] = [-gF - H_FW xW; b - A_W xW]
    let dim = nf + m;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            kkt[(r, c)] = p.hessian[(i, j)];
        }
        let mut g = p.gradient[i];
        for j in 0..n {
            if state[j] != BoundState::Free {
                g += p.hessian[(i, j)] * x[j];
            }
        }
        rhs[r] = -g;
    }
    if let Some((a, b)) = &p.equalities {
        for r in 0..m {
            for (c, &j) in free.iter().enumerate() {
                kkt[(nf + r, c)] = a[(r, j)];
                kkt[(c, nf + r)] = a[(r, j)];
            }
            let mut bb = b[r];
            for j in 0..n {
                if state[j] != BoundState::Free {
                    bb -= a[(r, j)] * x[j];
                }
            }
            rhs[nf + r] = bb;
        }
    }
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| QpError::Infeasible("singular KKT system".into()))?;
    for (r, &i) in free.iter().enumerate() {
        x[i] = sol[r];
    }
    let nu = DVector::from_fn(m, |r, _| sol[nf + r]);
    Ok((x, nu))
}

/// Feasible start: clamp the unconstrained minimizer into the box, then (when
/// equalities are present) alternate projections between the box and the
/// affine set.
fn initial_point(p: &QpProblem) -> Result<(DVector<f64>, Vec<BoundState>), QpError> {
    let n = p.gradient.len();
    let unconstrained = p
        .hessian
        .clone()
        .cholesky()
        .ok_or(QpError::NotPositiveDefinite)?
        .solve(&(-&p.gradient));
    let clamp = |x: &DVector<f64>| DVector::from_fn(n, |i, _| x[i].max(p.lower[i]).min(p.upper[i]));
    let mut x = clamp(&unconstrained);
    if let Some((a, b)) = &p.equalities {
        let aat = a * a.transpose();
        let lu = aat.lu();
        for _ in 0..200 {
            let resid = b - a * &x;
            if resid.amax() < 1e-12 {
                break;
            }
            let lambda = lu
                .solve(&resid)
                .ok_or_else(|| QpError::Infeasible("rank-deficient equalities".into()))?;
            x += a.transpose() * lambda;
            x = clamp(&x);
        }
        let resid = (b - a * &x).amax();
        if resid > 1e-9 {
            return Err(QpError::Infeasible(format!(
                "no feasible point found (equality residual {resid:e})"
            )));
        }
    }
    let state = (0..n)
        .map(|i| {
            if x[i] <= p.lower[i] {
                BoundState::AtLower
            } else if x[i] >= p.upper[i] {
                BoundState::AtUpper
            } else {
                BoundState::Free
            }
        })
        .collect();
    Ok((x, state))
}

const MULTIPLIER_TOL: f64 = 1e-10;

pub fn solve_qp(p: &QpProblem) -> Result<QpSolution, QpError> {
    p.validate()?;
    let n = p.gradient.len();
    let max_iter = 20 * n + 100;
    let (mut x, mut state) = initial_point(p)?;

    for iter in 0..max_iter {
        let (x_hat, nu_hat) = solve_subproblem(p, &state)?;
        let step = &x_hat - &x;
        if step.amax() < 1e-13 {
            // Stationary on the working set; check bound multipliers.
            let grad_lagrangian = lagrangian_gradient(p, &x_hat, &nu_hat);
            let mut release: Option<usize> = None;
            for i in 0..n {
                let viol = match state[i] {
                    BoundState::Free => false,
                    BoundState::AtLower => grad_lagrangian[i] < -MULTIPLIER_TOL,
                    BoundState::AtUpper => grad_lagrangian[i] > MULTIPLIER_TOL,
                };
                if viol {
                    release = Some(i);
                    break; // lowest index
                }
            }
            match release {
                None => return Ok(finish(p, x_hat, &state, &nu_hat, iter + 1)),
                Some(i) => {
                    state[i] = BoundState::Free;
                    x = x_hat;
                    continue;
                }
            }
        }

        // Step toward the subproblem solution up to the first blocking bound.
        let mut alpha = 1.0;
        let mut blocking: Option<(usize, BoundState)> = None;
        for i in 0..n {
            if state[i] != BoundState::Free {
                continue;
            }
            if step[i] > 0.0 && p.upper[i].is_finite() {
                let a = (p.upper[i] - x[i]) / step[i];
                if a < alpha {
                    alpha = a;
                    blocking = Some((i, BoundState::AtUpper));
                }
            } else if step[i] < 0.0 && p.lower[i].is_finite() {
                let a = (p.lower[i] - x[i]) / step[i];
                if a < alpha {
                    alpha = a;
                    blocking = Some((i, BoundState::AtLower));
                }
            }
        }
        x += step * alpha;
        if let Some((i, bs)) = blocking {
            x[i] = match bs {
                BoundState::AtLower => p.lower[i],
                BoundState::AtUpper => p.upper[i],
                BoundState::Free => unreachable!(),
            };
            state[i] = bs;
        }
    }
    Err(QpError::MaxIterations(max_iter))
}

fn lagrangian_gradient(p: &QpProblem, x: &DVector<f64>, nu: &DVector<f64>) -> DVector<f64> {
    let mut g = &p.hessian * x + &p.gradient;
    if let Some((a, _)) = &p.equalities {
        if nu.len() == a.nrows() {
            g += a.transpose() * nu;
        }
    }
    g
}

fn finish(
    p: &QpProblem,
    x: DVector<f64>,
    state: &[BoundState],
    nu: &DVector<f64>,
    iterations: usize,
) -> QpSolution {
    let n = x.len();
    let grad = lagrangian_gradient(p, &x, nu);
    let mut multipliers = DVector::zeros(n);
    let mut stationarity: f64 = 0.0;
    for i in 0..n {
        match state[i] {
            BoundState::Free => stationarity = stationarity.max(grad[i].abs()),
            BoundState::AtLower => multipliers[i] = grad[i],
            BoundState::AtUpper => multipliers[i] = -grad[i],
        }
    }
    let mut primal: f64 = 0.0;
    for i in 0..n {
        primal = primal.max(p.lower[i] - x[i]).max(x[i] - p.upper[i]);
    }
    if let Some((a, b)) = &p.equalities {
        primal = primal.max((a * &x - b).amax());
    }
    QpSolution {
        x,
        bound_multipliers: multipliers,
        iterations,
        kkt_residual: stationarity.max(primal.max(0.0)),
    }
}
