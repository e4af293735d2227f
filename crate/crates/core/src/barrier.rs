//! Log-barrier interior-point solver for small dense concave programs.
//!
//! Maximizes a concave [`ConcaveExpr`] subject to `f_i(x) >= 0` for concave
//! `f_i`. Each expression is a sum of a constant, a linear part,
//! `w log2(offset + a.x)` terms and `-w x^T M x` terms with `M` PSD, which
//! covers every function the radiation subproblem needs. Centering uses
//! damped Newton with backtracking; the barrier weight is decreased
//! geometrically until `m * mu` falls below the gap tolerance.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct LogTerm {
    pub weight: f64,
    pub offset: f64,
    pub coef: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QuadTerm {
    pub weight: f64,
    pub mat: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct ConcaveExpr {
    pub constant: f64,
    pub linear: DVector<f64>,
    pub logs: Vec<LogTerm>,
    pub quads: Vec<QuadTerm>,
}

#[derive(Debug, Clone)]
pub struct Eval {
    pub value: f64,
    pub grad: DVector<f64>,
    /// Negated Hessian (PSD for concave expressions).
    pub neg_hess: DMatrix<f64>,
}

impl ConcaveExpr {
    pub fn zero(dim: usize) -> Self {
        Self { constant: 0.0, linear: DVector::zeros(dim), logs: Vec::new(), quads: Vec::new() }
    }

    pub fn affine(linear: DVector<f64>, constant: f64) -> Self {
        Self { constant, linear, logs: Vec::new(), quads: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn add_log(&mut self, weight: f64, offset: f64, coef: DVector<f64>) {
        self.logs.push(LogTerm { weight, offset, coef });
    }

    pub fn add_neg_quad(&mut self, weight: f64, mat: DMatrix<f64>) {
        self.quads.push(QuadTerm { weight, mat });
    }

    /// `None` outside the domain of a log term.
    pub fn value(&self, x: &DVector<f64>) -> Option<f64> {
        let mut v = self.constant + self.linear.dot(x);
        for t in &self.logs {
            let arg = t.offset + t.coef.dot(x);
            if !(arg > 0.0) {
                return None;
            }
            v += t.weight * arg.log2();
        }
        for q in &self.quads {
            v -= q.weight * x.dot(&(&q.mat * x));
        }
        Some(v)
    }

    pub fn eval(&self, x: &DVector<f64>) -> Option<Eval> {
        let n = x.len();
        let mut value = self.constant + self.linear.dot(x);
        let mut grad = self.linear.clone();
        let mut neg_hess = DMatrix::zeros(n, n);
        for t in &self.logs {
            let arg = t.offset + t.coef.dot(x);
            if !(arg > 0.0) {
                return None;
            }
            value += t.weight * arg.log2();
            let s = t.weight / (LN_2 * arg);
            grad.axpy(s, &t.coef, 1.0);
            neg_hess.ger(s / arg, &t.coef, &t.coef, 1.0);
        }
        for q in &self.quads {
            let mx = &q.mat * x;
            value -= q.weight * x.dot(&mx);
            grad.axpy(-2.0 * q.weight, &mx, 1.0);
            neg_hess += &q.mat * (2.0 * q.weight);
        }
        Some(Eval { value, grad, neg_hess })
    }

    /// Same expression over `(x, s)` with an extra `-s` term.
    fn with_slack(&self) -> Self {
        let n = self.dim();
        let extend = |v: &DVector<f64>, last: f64| {
            let mut out = DVector::zeros(n + 1);
            out.rows_mut(0, n).copy_from(v);
            out[n] = last;
            out
        };
        Self {
            constant: self.constant,
            linear: extend(&self.linear, -1.0),
            logs: self
                .logs
                .iter()
                .map(|t| LogTerm { weight: t.weight, offset: t.offset, coef: extend(&t.coef, 0.0) })
                .collect(),
            quads: self
                .quads
                .iter()
                .map(|q| {
                    let mut mat = DMatrix::zeros(n + 1, n + 1);
                    mat.view_mut((0, 0), (n, n)).copy_from(&q.mat);
                    QuadTerm { weight: q.weight, mat }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BarrierConfig {
    pub mu_init: f64,
    pub mu_factor: f64,
    /// Stop once `constraints * mu` drops below this.
    pub gap_tol: f64,
    /// Centering stops when half the squared Newton decrement is below this.
    pub newton_tol: f64,
    pub max_newton: usize,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self {
            mu_init: 1.0,
            mu_factor: 0.2,
            gap_tol: 1e-8,
            newton_tol: 1e-11,
            max_newton: 80,
            armijo: 0.25,
            backtrack: 0.5,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierStatus {
    Converged,
    /// Newton failed to reach the centering tolerance at some stage.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct BarrierSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: BarrierStatus,
    pub newton_iterations: usize,
    /// Newton decrement at the final centering.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub objective: ConcaveExpr,
    /// Each must satisfy `f(x) >= 0`.
    pub constraints: Vec<ConcaveExpr>,
}

struct Centering {
    x: DVector<f64>,
    iterations: usize,
    decrement: f64,
    converged: bool,
}

/// `phi + mu sum log f_i`, `None` outside the strict interior.
fn barrier_value(
    objective: &ConcaveExpr,
    constraints: &[ConcaveExpr],
    guards: &[&ConcaveExpr],
    mu: f64,
    x: &DVector<f64>,
) -> Option<f64> {
    let mut v = objective.value(x)?;
    for c in constraints {
        let f = c.value(x)?;
        if !(f > 0.0) {
            return None;
        }
        v += mu * f.ln();
    }
    for g in guards {
        g.value(x)?;
    }
    Some(v)
}

fn solve_spd(mut a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut shift = 0.0;
    for _ in 0..12 {
        if let Some(chol) = a.clone().cholesky() {
            return Some(chol.solve(b));
        }
        let next = if shift == 0.0 { scale * 1e-14 } else { shift * 100.0 };
        for i in 0..a.nrows() {
            a[(i, i)] += next - shift;
        }
        shift = next;
    }
    None
}

fn center(
    objective: &ConcaveExpr,
    constraints: &[ConcaveExpr],
    guards: &[&ConcaveExpr],
    mu: f64,
    mut x: DVector<f64>,
    cfg: &BarrierConfig,
) -> Centering {
    let n = x.len();
    let mut decrement = f64::INFINITY;
    for it in 0..cfg.max_newton {
        let Some(obj) = objective.eval(&x) else {
            return Centering { x, iterations: it, decrement, converged: false };
        };
        let mut grad = obj.grad;
        let mut neg_hess = obj.neg_hess;
        let mut ok = true;
        for c in constraints {
            match c.eval(&x) {
                Some(e) if e.value > 0.0 => {
                    let inv = 1.0 / e.value;
                    grad.axpy(mu * inv, &e.grad, 1.0);
                    neg_hess += e.neg_hess * (mu * inv);
                    neg_hess.ger(mu * inv * inv, &e.grad, &e.grad, 1.0);
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            return Centering { x, iterations: it, decrement, converged: false };
        }
        let Some(step) = solve_spd(neg_hess, &grad) else {
            return Centering { x, iterations: it, decrement, converged: false };
        };
        let lambda2 = grad.dot(&step);
        decrement = lambda2.max(0.0).sqrt();
        if lambda2 / 2.0 <= cfg.newton_tol {
            return Centering { x, iterations: it, decrement, converged: true };
        }
        let Some(current) = barrier_value(objective, constraints, guards, mu, &x) else {
            return Centering { x, iterations: it, decrement, converged: false };
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..cfg.max_backtracks {
            let trial = &x + &step * t;
            if let Some(v) = barrier_value(objective, constraints, guards, mu, &trial) {
                if v >= current + cfg.armijo * t * lambda2 {
                    x = trial;
                    accepted = true;
                    break;
                }
            }
            t *= cfg.backtrack;
        }
        if !accepted {
            // No ascent within floating-point resolution: treat as centred.
            let converged = lambda2 < 1e-8 * (1.0 + current.abs());
            return Centering { x, iterations: it + 1, decrement, converged };
        }
        debug_assert_eq!(x.len(), n);
    }
    Centering { x, iterations: cfg.max_newton, decrement, converged: false }
}

fn run_path(
    objective: &ConcaveExpr,
    constraints: &[ConcaveExpr],
    guards: &[&ConcaveExpr],
    x0: DVector<f64>,
    cfg: &BarrierConfig,
    mut stop: impl FnMut(&DVector<f64>) -> bool,
) -> BarrierSolution {
    let m = constraints.len().max(1) as f64;
    let mut mu = cfg.mu_init;
    let mut x = x0;
    let mut total = 0;
    let mut status = BarrierStatus::Converged;
    let mut residual;
    loop {
        let c = center(objective, constraints, guards, mu, x, cfg);
        x = c.x;
        total += c.iterations;
        residual = c.decrement;
        if !c.converged {
            status = BarrierStatus::Stalled;
        }
        if stop(&x) || m * mu < cfg.gap_tol {
            break;
        }
        mu *= cfg.mu_factor;
    }
    let objective_value = objective.value(&x).unwrap_or(f64::NEG_INFINITY);
    BarrierSolution { x, objective: objective_value, status, newton_iterations: total, residual }
}

impl Problem {
    /// Smallest constraint value at `x` (`-inf` outside a log domain).
    pub fn min_constraint(&self, x: &DVector<f64>) -> f64 {
        self.constraints.iter().map(|c| c.value(x).unwrap_or(f64::NEG_INFINITY)).fold(f64::INFINITY, f64::min)
    }

    /// Phase II from a strictly feasible point.
    pub fn solve_from_interior(&self, x0: DVector<f64>, cfg: &BarrierConfig) -> BarrierSolution {
        run_path(&self.objective, &self.constraints, &[], x0, cfg, |_| false)
    }

    /// Phase I: maximize `s` subject to `f_i(x) >= s`, starting from any
    /// point in the domain of every log term. Stops at the first centred
    /// iterate with `s > margin`. Returns the point and the achieved `s`.
    pub fn find_interior(&self, x0: &DVector<f64>, margin: f64, cfg: &BarrierConfig) -> (DVector<f64>, f64) {
        let n = x0.len();
        let start_min = self.min_constraint(x0);
        if start_min > margin {
            return (x0.clone(), start_min);
        }
        let s0 = if start_min.is_finite() { start_min.min(0.0) - 1.0 } else { -1.0 };
        let mut z0 = DVector::zeros(n + 1);
        z0.rows_mut(0, n).copy_from(x0);
        z0[n] = s0;

        let mut lifted: Vec<ConcaveExpr> = self.constraints.iter().map(|c| c.with_slack()).collect();
        // Cap s so the phase-I problem stays bounded.
        let mut cap = DVector::zeros(n + 1);
        cap[n] = -1.0;
        lifted.push(ConcaveExpr::affine(cap, 1.0));
        let mut objective = DVector::zeros(n + 1);
        objective[n] = 1.0;
        let objective = ConcaveExpr::affine(objective, 0.0);
        let lifted_obj = self.objective.with_slack();
        let guards = [&lifted_obj];

        let sol = run_path(&objective, &lifted, &guards, z0, cfg, |z| z[n] > margin);
        let x = sol.x.rows(0, n).into_owned();
        let s = self.min_constraint(&x);
        (x, s)
    }
}
