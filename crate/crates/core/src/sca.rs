//! Radiation-vector subproblem solved by successive convex approximation.
//!
//! For a fixed power split `alpha` and decoding order, the sum rate is
//! rewritten through the rank-one auxiliaries
//! `Q_m = p p^T S_m / sigma^2` (one per decoding position `m`, with
//! `S_m` the power of the signals decoded at or after `m`):
//!
//! ```text
//! R_sum = sum_m F_m(Q_m),
//! F_m(Q) = log2(1 + h_m Q h_m^H) - log2(1 + h_{m-1} Q h_{m-1}^H),   F_0 without the second term.
//! ```
//!
//! The subtracted logarithms are concave, so replacing them by their
//! tangent at the expansion point gives a concave lower bound `F'`; the
//! SIC conditions `G_{k,j} >= 0` are bounded the same way (`G'`). In the
//! variable `p`, quadratic forms entering with a positive sign are replaced
//! by the first-order expansion of `p p^T` (a lower bound because
//! `(p - p_t)(p - p_t)^T` is PSD), while the tangent terms keep the exact
//! convex quadratic. Each inner problem is therefore a concave minorant of
//! the true problem, tight at `p_t`, and is solved with the log-barrier
//! method in [`crate::barrier`].

use std::f64::consts::LN_2;

use log::debug;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::barrier::{BarrierConfig, BarrierStatus, ConcaveExpr, Problem};
use crate::error::{Error, Result};
use crate::geometry::{project, ChannelMatrix};
use crate::noma::{check_sic_feasibility, user_rates, DecodingOrder, EffectiveGains, PowerAllocation, QosParams};

/// Slack on the power budget.
pub const BUDGET_TOL: f64 = 1e-9;
/// Slack on true QoS when accepting an SCA step.
pub const QOS_TOL: f64 = 1e-9;

/// How the total power budget constrains the radiation vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetReading {
    /// `p` holds amplitudes: `sum p_n^2 <= P_T`.
    #[default]
    Amplitude,
    /// `p` holds powers: `sum p_n <= P_T`.
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiationVector {
    p: Vec<f64>,
    budget: f64,
    reading: BudgetReading,
}

impl RadiationVector {
    pub fn new(p: Vec<f64>, budget: f64, reading: BudgetReading) -> Result<Self> {
        if !(budget.is_finite() && budget > 0.0) {
            return Err(Error::InvalidParameter(format!("power budget must be positive, got {budget}")));
        }
        if p.is_empty() {
            return Err(Error::InvalidParameter("radiation vector is empty".into()));
        }
        if let Some(bad) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!("radiation entry {bad} must be >= 0")));
        }
        let v = Self { p, budget, reading };
        if v.used_budget() > budget * (1.0 + BUDGET_TOL) {
            return Err(Error::InvalidParameter(format!("radiation uses {} of a {budget} budget", v.used_budget())));
        }
        Ok(v)
    }

    /// Equal radiation on every antenna, exhausting the budget.
    pub fn equal(n: usize, budget: f64, reading: BudgetReading) -> Result<Self> {
        Self::equal_on(&vec![true; n], budget, reading)
    }

    /// Equal radiation on the active antennas only.
    pub fn equal_on(active: &[bool], budget: f64, reading: BudgetReading) -> Result<Self> {
        let count = active.iter().filter(|a| **a).count();
        if count == 0 {
            return Err(Error::InvalidParameter("no active antenna".into()));
        }
        let level = match reading {
            BudgetReading::Amplitude => (budget / count as f64).sqrt(),
            BudgetReading::Sum => budget / count as f64,
        };
        let p = active.iter().map(|&a| if a { level } else { 0.0 }).collect();
        Self::new(p, budget, reading)
    }

    /// Uniform sample from the nonnegative part of the feasible set.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize, budget: f64, reading: BudgetReading) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("radiation vector is empty".into()));
        }
        let radius = rng.gen::<f64>().powf(1.0 / n as f64);
        let p = match reading {
            BudgetReading::Amplitude => {
                let dir: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal).abs()).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                dir.iter().map(|v| v / norm * radius * budget.sqrt()).collect()
            }
            BudgetReading::Sum => {
                let w: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                let total: f64 = w.iter().sum();
                w.iter().map(|v| v / total * radius * budget).collect()
            }
        };
        Self::new(p, budget, reading)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn reading(&self) -> BudgetReading {
        self.reading
    }

    pub fn used_budget(&self) -> f64 {
        match self.reading {
            BudgetReading::Amplitude => self.p.iter().map(|v| v * v).sum(),
            BudgetReading::Sum => self.p.iter().sum(),
        }
    }

    /// Factor mapping `p` to the unit-budget variable used by the solver.
    fn scale(&self) -> f64 {
        match self.reading {
            BudgetReading::Amplitude => self.budget.sqrt(),
            BudgetReading::Sum => self.budget,
        }
    }

    /// `(1 - t) self + t other`; stays within budget since both sets are convex.
    pub fn blend(&self, other: &RadiationVector, t: f64) -> RadiationVector {
        let p = self.p.iter().zip(&other.p).map(|(a, b)| ((1.0 - t) * a + t * b).max(0.0)).collect();
        RadiationVector { p, budget: self.budget, reading: self.reading }
    }
}

/// Convex inner bound used for the SIC constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SicSurrogate {
    /// `|h_j p|^2 >= |h_k p|^2` with the left side linearized. Equivalent to
    /// the rate condition whenever the target has power.
    #[default]
    GainOrder,
    /// Tangent bound `G'` on the rate difference. Its slack is of order
    /// `1/SNR`, so at high SNR it limits every step to small relative gain
    /// changes.
    LogTangent,
}

#[derive(Debug, Clone)]
pub struct ScaConfig {
    /// Stop once the true objective improves by less than this (bit/s/Hz).
    pub eps_sca: f64,
    pub max_iters: usize,
    pub barrier: BarrierConfig,
    /// Phase I stops once every constraint clears this margin.
    pub interior_margin: f64,
    /// Halvings of the step toward the inner solution before giving up.
    pub max_step_halvings: usize,
    /// Expansion points may violate a normalized constraint by at most this.
    pub start_tol: f64,
    pub sic_surrogate: SicSurrogate,
}

impl Default for ScaConfig {
    fn default() -> Self {
        Self {
            eps_sca: 1e-6,
            max_iters: 30,
            barrier: BarrierConfig::default(),
            interior_margin: 1e-6,
            max_step_halvings: 40,
            start_tol: 1e-7,
            sic_surrogate: SicSurrogate::GainOrder,
        }
    }
}

/// `h Q h^H` for real symmetric `Q`.
pub fn quad_form(h: &[Complex64], q: &DMatrix<f64>) -> f64 {
    let n = h.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for a in 0..n {
        let mut row = Complex64::new(0.0, 0.0);
        for b in 0..n {
            row += h[b].conj() * q[(a, b)];
        }
        acc += h[a] * row;
    }
    acc.re
}

#[derive(Debug, Clone)]
pub struct Auxiliary {
    /// `Q_k` for user `k`.
    pub q: Vec<DMatrix<f64>>,
    /// `S_m` by decoding position.
    pub tails: Vec<f64>,
}

pub fn build_auxiliary(
    p: &RadiationVector,
    alpha: &PowerAllocation,
    order: &DecodingOrder,
    noise_variance: f64,
) -> Auxiliary {
    let tails = alpha.tail_sums(order);
    let pv = DVector::from_column_slice(p.as_slice());
    let outer = &pv * pv.transpose() / noise_variance;
    let q = (0..alpha.len()).map(|k| &outer * tails[order.position(k)]).collect();
    Auxiliary { q, tails }
}

/// Sum rate from the per-user rate expressions.
pub fn true_objective(
    p: &RadiationVector,
    alpha: &PowerAllocation,
    order: &DecodingOrder,
    channels: &ChannelMatrix,
) -> Result<f64> {
    let gains = EffectiveGains::from_channels(channels, p.as_slice())?;
    Ok(user_rates(&gains, alpha, order)?.iter().sum())
}

/// Sum rate through `sum_m F_m(Q_m)`.
pub fn objective_via_rewrite(
    p: &RadiationVector,
    alpha: &PowerAllocation,
    order: &DecodingOrder,
    channels: &ChannelMatrix,
) -> f64 {
    let aux = build_auxiliary(p, alpha, order, channels.noise_variance());
    (0..order.len())
        .map(|m| {
            let q = &aux.q[order.user_at(m)];
            let mut f = quad_form(channels.row(order.user_at(m)), q).ln_1p();
            if m > 0 {
                f -= quad_form(channels.row(order.user_at(m - 1)), q).ln_1p();
            }
            f / LN_2
        })
        .sum()
}

/// Affine function `coef . p + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineForm {
    pub coef: Vec<f64>,
    pub constant: f64,
}

impl AffineForm {
    pub fn eval(&self, p: &[f64]) -> f64 {
        self.constant + self.coef.iter().zip(p).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// Coefficients of the tangent bound on the SIC pair `(k, j)` (positions).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SicCoefficients {
    pub e: f64,
    pub f: f64,
    pub d: f64,
}

/// Expansion point of one SCA step together with the derived surrogate
/// coefficients. Everything is indexed by decoding position.
#[derive(Debug, Clone)]
pub struct SurrogateState {
    p_t: RadiationVector,
    alpha: PowerAllocation,
    order: DecodingOrder,
    noise_variance: f64,
    tails: Vec<f64>,
    /// Channel rows by position.
    h: Vec<Vec<Complex64>>,
    /// `Q_m^(t)` by position.
    q0: Vec<DMatrix<f64>>,
    /// Scalar factor of `A(Q_m^0)`, position 0 unused.
    a_coef: Vec<f64>,
    b_const: Vec<f64>,
}

impl SurrogateState {
    pub fn new(
        p_t: &RadiationVector,
        alpha: &PowerAllocation,
        order: &DecodingOrder,
        channels: &ChannelMatrix,
    ) -> Result<Self> {
        let k = channels.n_users();
        if alpha.len() != k || order.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: alpha.len().min(order.len()) });
        }
        if p_t.len() != channels.n_antennas() {
            return Err(Error::DimensionMismatch { expected: channels.n_antennas(), got: p_t.len() });
        }
        let aux = build_auxiliary(p_t, alpha, order, channels.noise_variance());
        let h: Vec<Vec<Complex64>> = (0..k).map(|m| channels.row(order.user_at(m)).to_vec()).collect();
        let q0: Vec<DMatrix<f64>> = (0..k).map(|m| aux.q[order.user_at(m)].clone()).collect();
        let mut a_coef = vec![0.0; k];
        let mut b_const = vec![0.0; k];
        for m in 1..k {
            let x0 = quad_form(&h[m - 1], &q0[m]);
            a_coef[m] = 1.0 / (LN_2 * (1.0 + x0));
            b_const[m] = x0.ln_1p() / LN_2 - a_coef[m] * x0;
        }
        Ok(Self {
            p_t: p_t.clone(),
            alpha: alpha.clone(),
            order: order.clone(),
            noise_variance: channels.noise_variance(),
            tails: aux.tails,
            h,
            q0,
            a_coef,
            b_const,
        })
    }

    pub fn expansion_point(&self) -> &RadiationVector {
        &self.p_t
    }

    pub fn n_users(&self) -> usize {
        self.h.len()
    }

    pub fn tails(&self) -> &[f64] {
        &self.tails
    }

    pub fn order(&self) -> &DecodingOrder {
        &self.order
    }

    pub fn alpha(&self) -> &PowerAllocation {
        &self.alpha
    }

    /// `Q_m^(t)`, with a zero matrix one past the last position.
    pub fn q0(&self, m: usize) -> DMatrix<f64> {
        match self.q0.get(m) {
            Some(q) => q.clone(),
            None => DMatrix::zeros(self.p_t.len(), self.p_t.len()),
        }
    }

    /// Channel of the user at position `m`.
    pub fn channel(&self, m: usize) -> &[Complex64] {
        &self.h[m]
    }

    /// `Tr(A Q) = a_m h_{m-1} Q h_{m-1}^H`; returns `a_m`.
    pub fn a_coefficient(&self, m: usize) -> f64 {
        self.a_coef[m]
    }

    pub fn b_constant(&self, m: usize) -> f64 {
        self.b_const[m]
    }

    /// `F_m(Q)`.
    pub fn exact_term(&self, m: usize, q: &DMatrix<f64>) -> f64 {
        let mut v = quad_form(&self.h[m], q).ln_1p();
        if m > 0 {
            v -= quad_form(&self.h[m - 1], q).ln_1p();
        }
        v / LN_2
    }

    /// `F'_m(Q; Q_m^(t))`, identical to `F_0` at position 0.
    pub fn surrogate_term(&self, m: usize, q: &DMatrix<f64>) -> f64 {
        let head = quad_form(&self.h[m], q).ln_1p() / LN_2;
        if m == 0 {
            return head;
        }
        head - self.a_coef[m] * quad_form(&self.h[m - 1], q) - self.b_const[m]
    }

    /// `sum_m F'_m(Q_m)` for position-indexed `Q`.
    pub fn surrogate_objective(&self, q: &[DMatrix<f64>]) -> f64 {
        q.iter().enumerate().map(|(m, qm)| self.surrogate_term(m, qm)).sum()
    }

    pub fn sic_coefficients(&self, k: usize, j: usize) -> SicCoefficients {
        let qk = self.q0(k);
        let qk1 = self.q0(k + 1);
        let x_j = quad_form(&self.h[j], &qk1);
        let x_k = quad_form(&self.h[k], &qk);
        let e = 1.0 / (LN_2 * (1.0 + x_j));
        let f = 1.0 / (LN_2 * (1.0 + x_k));
        let d = (x_j.ln_1p() + x_k.ln_1p()) / LN_2 - e * x_j - f * x_k;
        SicCoefficients { e, f, d }
    }

    /// `G_{k,j}(Q_k, Q_{k+1}) = R_{k->j} - R_k` in auxiliary form.
    pub fn exact_sic(&self, k: usize, j: usize, qk: &DMatrix<f64>, qk1: &DMatrix<f64>) -> f64 {
        let (hj, hk) = (&self.h[j], &self.h[k]);
        (quad_form(hj, qk).ln_1p() - quad_form(hj, qk1).ln_1p() - quad_form(hk, qk).ln_1p()
            + quad_form(hk, qk1).ln_1p())
            / LN_2
    }

    /// `G'_{k,j}`, tight at `(Q_k^(t), Q_{k+1}^(t))`.
    pub fn surrogate_sic(&self, k: usize, j: usize, qk: &DMatrix<f64>, qk1: &DMatrix<f64>) -> f64 {
        let c = self.sic_coefficients(k, j);
        let (hj, hk) = (&self.h[j], &self.h[k]);
        (quad_form(hj, qk).ln_1p() + quad_form(hk, qk1).ln_1p()) / LN_2
            - c.e * quad_form(hj, qk1)
            - c.f * quad_form(hk, qk)
            - c.d
    }

    /// Affine expansion of `h_m Q_m h_m^H` in `p` about `p_t`.
    pub fn linearize_rank1(&self, m: usize) -> AffineForm {
        self.linearize_quadratic(m, m)
    }

    /// Affine expansion of `h_j Q_m h_j^H`:
    /// `(S_m / sigma^2)(2 Re(c0 conj(h_j p)) - |c0|^2)` with `c0 = h_j p_t`.
    pub fn linearize_quadratic(&self, j: usize, m: usize) -> AffineForm {
        let scale = self.tails.get(m).copied().unwrap_or(0.0) / self.noise_variance;
        let c0 = project(&self.h[j], self.p_t.as_slice());
        let coef = self.h[j].iter().map(|hn| scale * 2.0 * (c0 * hn.conj()).re).collect();
        AffineForm { coef, constant: -scale * c0.norm_sqr() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerStatus {
    Converged,
    /// Centering missed its tolerance; best iterate returned.
    Stalled,
    /// The linearized feasible set has no strict interior; `p_t` returned.
    NoInterior,
}

#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub p: RadiationVector,
    /// Value of the concave surrogate at `p`.
    pub surrogate_value: f64,
    pub status: InnerStatus,
    pub newton_iterations: usize,
    pub kkt_residual: f64,
}

/// Per-position data in the unit-budget variable `x = p / scale`.
struct Scaled {
    /// `Re(h~^H h~)` with `h~ = h scale / sigma`.
    gram: Vec<DMatrix<f64>>,
    /// Gradient of the linearized `|h~ x|^2`.
    lin: Vec<DVector<f64>>,
    /// `|h~ x_t|^2`.
    g0: Vec<f64>,
}

impl Scaled {
    fn new(state: &SurrogateState) -> Self {
        let factor = state.p_t.scale() / state.noise_variance.sqrt();
        let x_t: Vec<f64> = state.p_t.as_slice().iter().map(|v| v / state.p_t.scale()).collect();
        let n = x_t.len();
        let mut gram = Vec::new();
        let mut lin = Vec::new();
        let mut g0 = Vec::new();
        for h in &state.h {
            let ht: Vec<Complex64> = h.iter().map(|c| c * factor).collect();
            let c0 = project(&ht, &x_t);
            gram.push(DMatrix::from_fn(n, n, |a, b| (ht[a].conj() * ht[b]).re));
            lin.push(DVector::from_iterator(n, ht.iter().map(|hn| 2.0 * (c0 * hn.conj()).re)));
            g0.push(c0.norm_sqr());
        }
        Self { gram, lin, g0 }
    }
}

struct InnerProblem {
    problem: Problem,
    names: Vec<String>,
}

fn build_inner_problem(state: &SurrogateState, qos: &QosParams, sic_form: SicSurrogate) -> Result<InnerProblem> {
    let k = state.n_users();
    let n = state.p_t.len();
    let sc = Scaled::new(state);
    let s = |m: usize| state.tails.get(m).copied().unwrap_or(0.0);

    let mut objective = ConcaveExpr::zero(n);
    for m in 0..k {
        if s(m) > 0.0 {
            objective.add_log(1.0, 1.0 - s(m) * sc.g0[m], &sc.lin[m] * s(m));
        }
        if m > 0 && s(m) > 0.0 {
            let x0 = s(m) * sc.g0[m - 1];
            let a = 1.0 / (LN_2 * (1.0 + x0));
            objective.add_neg_quad(a * s(m), sc.gram[m - 1].clone());
            objective.constant += a * x0 - x0.ln_1p() / LN_2;
        }
    }

    let mut constraints = Vec::new();
    let mut names = Vec::new();
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        constraints.push(ConcaveExpr::affine(e, 0.0));
        names.push(format!("p[{i}] >= 0"));
    }
    let budget = match state.p_t.reading() {
        BudgetReading::Amplitude => {
            let mut c = ConcaveExpr::affine(DVector::zeros(n), 1.0);
            c.add_neg_quad(1.0, DMatrix::identity(n, n));
            c
        }
        BudgetReading::Sum => ConcaveExpr::affine(DVector::from_element(n, -1.0), 1.0),
    };
    constraints.push(budget);
    names.push("power budget".into());

    // Minimum rates: (S_m - a S_{m+1}) |h_m p|^2 / sigma^2 >= a - 1, with the
    // quadratic replaced by its affine lower bound.
    for m in 0..k {
        let a = qos.a(state.order.user_at(m));
        if a <= 1.0 {
            continue;
        }
        let c = s(m) - a * s(m + 1);
        if c <= 0.0 {
            return Err(Error::InfeasibleStart {
                constraint: format!("QoS of user {}", state.order.user_at(m)),
                violation: -c,
            });
        }
        let w = c / (a - 1.0);
        constraints.push(ConcaveExpr::affine(&sc.lin[m] * w, -w * sc.g0[m] - 1.0));
        names.push(format!("QoS of user {}", state.order.user_at(m)));
    }

    // SIC for every j decoded after k. Pairs with a silent target are vacuous.
    for kp in 0..k.saturating_sub(1) {
        if state.alpha.as_slice()[state.order.user_at(kp)] <= 0.0 {
            continue;
        }
        for j in kp + 1..k {
            let g = match sic_form {
                SicSurrogate::GainOrder => {
                    // R_{j->k} >= R_k  <=>  |h_j p|^2 >= |h_k p|^2 once alpha_k > 0.
                    let w = 1.0 / sc.g0[j].max(f64::MIN_POSITIVE);
                    let mut g = ConcaveExpr::affine(&sc.lin[j] * w, -w * sc.g0[j]);
                    g.add_neg_quad(w, sc.gram[kp].clone());
                    g
                }
                SicSurrogate::LogTangent => {
                    let (sk, sk1) = (s(kp), s(kp + 1));
                    let xj = sk1 * sc.g0[j];
                    let xk = sk * sc.g0[kp];
                    let e = 1.0 / (LN_2 * (1.0 + xj));
                    let f = 1.0 / (LN_2 * (1.0 + xk));
                    let d = (xj.ln_1p() + xk.ln_1p()) / LN_2 - e * xj - f * xk;
                    let mut g = ConcaveExpr::affine(DVector::zeros(n), -d);
                    g.add_log(1.0, 1.0 - sk * sc.g0[j], &sc.lin[j] * sk);
                    if sk1 > 0.0 {
                        g.add_log(1.0, 1.0 - sk1 * sc.g0[kp], &sc.lin[kp] * sk1);
                        g.add_neg_quad(e * sk1, sc.gram[j].clone());
                    }
                    g.add_neg_quad(f * sk, sc.gram[kp].clone());
                    g
                }
            };
            constraints.push(g);
            names.push(format!("SIC of user {} at user {}", state.order.user_at(kp), state.order.user_at(j)));
        }
    }

    Ok(InnerProblem { problem: Problem { objective, constraints }, names })
}

/// One convex step: maximize the concave surrogate around `state`.
pub fn solve_inner(state: &SurrogateState, qos: &QosParams, cfg: &ScaConfig) -> Result<InnerSolution> {
    let inner = build_inner_problem(state, qos, cfg.sic_surrogate)?;
    let scale = state.p_t.scale();
    let x_t = DVector::from_iterator(state.p_t.len(), state.p_t.as_slice().iter().map(|v| v / scale));

    for (c, name) in inner.problem.constraints.iter().zip(&inner.names) {
        let v = c.value(&x_t).unwrap_or(f64::NEG_INFINITY);
        if v < -cfg.start_tol {
            return Err(Error::InfeasibleStart { constraint: name.clone(), violation: -v });
        }
    }
    let start_value = inner.problem.objective.value(&x_t).unwrap_or(f64::NEG_INFINITY);

    let (x_int, margin) = inner.problem.find_interior(&x_t, cfg.interior_margin, &cfg.barrier);
    if !(margin > 0.0) {
        debug!("no strict interior around expansion point (margin {margin:e})");
        return Ok(InnerSolution {
            p: state.p_t.clone(),
            surrogate_value: start_value,
            status: InnerStatus::NoInterior,
            newton_iterations: 0,
            kkt_residual: 0.0,
        });
    }
    let sol = inner.problem.solve_from_interior(x_int, &cfg.barrier);
    let status = match sol.status {
        BarrierStatus::Converged => InnerStatus::Converged,
        BarrierStatus::Stalled => InnerStatus::Stalled,
    };
    let p: Vec<f64> = sol.x.iter().map(|v| (v * scale).max(0.0)).collect();
    let mut p = RadiationVector { p, budget: state.p_t.budget, reading: state.p_t.reading };
    let mut value = sol.objective;
    // The expansion point is feasible, so never hand back a worse surrogate value.
    if !(value >= start_value) {
        p = state.p_t.clone();
        value = start_value;
    }
    Ok(InnerSolution {
        p,
        surrogate_value: value,
        status,
        newton_iterations: sol.newton_iterations,
        kkt_residual: sol.residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaTraceRow {
    pub iteration: usize,
    pub objective: f64,
    /// Fraction of the step toward the inner solution that was kept.
    pub step: f64,
    pub min_qos_margin: f64,
    pub min_sic_margin: f64,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaStatus {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct ScaOutcome {
    pub p: RadiationVector,
    pub objective: f64,
    pub trajectory: Vec<ScaTraceRow>,
    pub status: ScaStatus,
}

struct Assessment {
    objective: f64,
    qos_margin: f64,
    sic_margin: f64,
}

fn assess(
    p: &RadiationVector,
    alpha: &PowerAllocation,
    order: &DecodingOrder,
    channels: &ChannelMatrix,
    qos: &QosParams,
) -> Result<Assessment> {
    let gains = EffectiveGains::from_channels(channels, p.as_slice())?;
    let rates = user_rates(&gains, alpha, order)?;
    let qos_margin = rates.iter().enumerate().map(|(k, r)| r - qos.r_min(k)).fold(f64::INFINITY, f64::min);
    let sic = check_sic_feasibility(&gains, alpha, order)?;
    Ok(Assessment { objective: rates.iter().sum(), qos_margin, sic_margin: sic.min_margin })
}

/// Repeated convex steps, re-expanding at every accepted point.
pub fn sca_loop(
    p_init: &RadiationVector,
    alpha: &PowerAllocation,
    order: &DecodingOrder,
    channels: &ChannelMatrix,
    qos: &QosParams,
    cfg: &ScaConfig,
) -> Result<ScaOutcome> {
    let mut p = p_init.clone();
    let mut current = assess(&p, alpha, order, channels, qos)?;
    let mut trajectory = vec![ScaTraceRow {
        iteration: 0,
        objective: current.objective,
        step: 0.0,
        min_qos_margin: current.qos_margin,
        min_sic_margin: current.sic_margin,
        newton_iterations: 0,
    }];

    for iteration in 1..=cfg.max_iters {
        let state = SurrogateState::new(&p, alpha, order, channels)?;
        let inner = solve_inner(&state, qos, cfg)?;
        if inner.status == InnerStatus::NoInterior {
            return Ok(ScaOutcome { objective: current.objective, p, trajectory, status: ScaStatus::Converged });
        }

        // Shrink toward p until the true objective, QoS and SIC all hold.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_step_halvings {
            let candidate = p.blend(&inner.p, step);
            let a = assess(&candidate, alpha, order, channels, qos)?;
            if a.objective >= current.objective && a.qos_margin >= -QOS_TOL && a.sic_margin >= -QOS_TOL {
                accepted = Some((candidate, a));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, next)) = accepted else {
            debug!("SCA iteration {iteration}: no improving step");
            trajectory.push(ScaTraceRow {
                iteration,
                objective: current.objective,
                step: 0.0,
                min_qos_margin: current.qos_margin,
                min_sic_margin: current.sic_margin,
                newton_iterations: inner.newton_iterations,
            });
            return Ok(ScaOutcome { objective: current.objective, p, trajectory, status: ScaStatus::Converged });
        };
        let improvement = next.objective - current.objective;
        trajectory.push(ScaTraceRow {
            iteration,
            objective: next.objective,
            step,
            min_qos_margin: next.qos_margin,
            min_sic_margin: next.sic_margin,
            newton_iterations: inner.newton_iterations,
        });
        p = candidate;
        current = next;
        if improvement < cfg.eps_sca {
            return Ok(ScaOutcome { objective: current.objective, p, trajectory, status: ScaStatus::Converged });
        }
    }
    Ok(ScaOutcome { objective: current.objective, p, trajectory, status: ScaStatus::MaxIters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_channels(rng: &mut ChaCha8Rng, k: usize, n: usize) -> ChannelMatrix {
        let rows = (0..k)
            .map(|_| {
                (0..n).map(|_| Complex64::from_polar(1e-4 * (0.2 + rng.gen::<f64>()), rng.gen::<f64>() * 6.3)).collect()
            })
            .collect();
        ChannelMatrix::new(rows, 1e-12).unwrap()
    }

    #[test]
    fn equal_radiation_uses_budget() {
        let amp = RadiationVector::equal(4, 2.0, BudgetReading::Amplitude).unwrap();
        assert_relative_eq!(amp.used_budget(), 2.0, epsilon = 1e-15);
        let sum = RadiationVector::equal_on(&[true, false, true], 1.0, BudgetReading::Sum).unwrap();
        assert_eq!(sum.as_slice(), &[0.5, 0.0, 0.5]);
        assert!(RadiationVector::new(vec![1.0, 1.0], 1.0, BudgetReading::Amplitude).is_err());
        assert!(RadiationVector::new(vec![-0.1], 1.0, BudgetReading::Amplitude).is_err());
    }

    #[test]
    fn auxiliary_tails_and_single_tail() {
        let p = RadiationVector::new(vec![0.6, 0.8], 1.0, BudgetReading::Amplitude).unwrap();
        let order = DecodingOrder::identity(2);
        let aux = build_auxiliary(&p, &PowerAllocation::new(vec![0.3, 0.7]).unwrap(), &order, 1.0);
        assert_eq!(aux.tails, vec![1.0, 0.7]);

        let greedy = build_auxiliary(&p, &PowerAllocation::new(vec![0.0, 1.0]).unwrap(), &order, 2.0);
        assert_eq!(greedy.q[0], greedy.q[1]);
        assert_relative_eq!(greedy.q[0][(0, 1)], 0.48 / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn quadratic_form_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let ch = random_channels(&mut rng, 3, 5);
            let p =
                RadiationVector::new((0..5).map(|_| rng.gen::<f64>() * 0.4).collect(), 1.0, BudgetReading::Amplitude)
                    .unwrap();
            let alpha = PowerAllocation::new(vec![0.2, 0.3, 0.5]).unwrap();
            let order = DecodingOrder::from_sequence(vec![2, 0, 1]).unwrap();
            let aux = build_auxiliary(&p, &alpha, &order, ch.noise_variance());
            for k in 0..3 {
                for row in ch.rows() {
                    let lhs = quad_form(row, &aux.q[k]);
                    let g = crate::geometry::effective_gain(row, p.as_slice()).unwrap();
                    let rhs = aux.tails[order.position(k)] * g / ch.noise_variance();
                    assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_user_objective() {
        let ch = ChannelMatrix::new(vec![vec![Complex64::new(1e-5, 2e-5)]], 1e-12).unwrap();
        let p = RadiationVector::new(vec![0.5], 1.0, BudgetReading::Amplitude).unwrap();
        let alpha = PowerAllocation::new(vec![1.0]).unwrap();
        let order = DecodingOrder::identity(1);
        let expected = (1.0 + 5e-10 * 0.25 / 1e-12f64).log2();
        assert_relative_eq!(true_objective(&p, &alpha, &order, &ch).unwrap(), expected, epsilon = 1e-12);
        assert_relative_eq!(objective_via_rewrite(&p, &alpha, &order, &ch), expected, epsilon = 1e-12);

        let silent = RadiationVector::new(vec![0.0], 1.0, BudgetReading::Amplitude).unwrap();
        assert_eq!(true_objective(&silent, &alpha, &order, &ch).unwrap(), 0.0);
    }

    #[test]
    fn rewrite_matches_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..100 {
            let ch = random_channels(&mut rng, 3, 4);
            let p =
                RadiationVector::new((0..4).map(|_| rng.gen::<f64>() * 0.5).collect(), 1.0, BudgetReading::Amplitude)
                    .unwrap();
            let raw: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
            let t: f64 = raw.iter().sum();
            let alpha = PowerAllocation::new(raw.iter().map(|a| a / t).collect()).unwrap();
            let order = EffectiveGains::from_channels(&ch, p.as_slice()).unwrap().ascending_order();
            let a = true_objective(&p, &alpha, &order, &ch).unwrap();
            let b = objective_via_rewrite(&p, &alpha, &order, &ch);
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn linearization_is_exact_at_expansion_and_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let ch = random_channels(&mut rng, 2, 4);
        let p_t = RadiationVector::new(vec![0.4, 0.3, 0.5, 0.2], 1.0, BudgetReading::Amplitude).unwrap();
        let alpha = PowerAllocation::new(vec![0.4, 0.6]).unwrap();
        let order = DecodingOrder::identity(2);
        let state = SurrogateState::new(&p_t, &alpha, &order, &ch).unwrap();
        let aux = build_auxiliary(&p_t, &alpha, &order, ch.noise_variance());
        for m in 0..2 {
            let lin = state.linearize_rank1(m);
            let exact = quad_form(state.channel(m), &aux.q[order.user_at(m)]);
            assert_relative_eq!(lin.eval(p_t.as_slice()), exact, max_relative = 1e-12);
            assert_relative_eq!(lin.eval(&[0.0; 4]), -exact, max_relative = 1e-12);

            let dir: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() - 0.5).collect();
            let err = |t: f64| {
                let p: Vec<f64> = p_t.as_slice().iter().zip(&dir).map(|(a, d)| a + t * d).collect();
                let g = crate::geometry::effective_gain(state.channel(m), &p).unwrap();
                state.tails()[m] * g / ch.noise_variance() - lin.eval(&p)
            };
            let ratio = err(0.1) / err(0.05);
            assert_relative_eq!(ratio, 4.0, max_relative = 1e-6);
        }
    }

    #[test]
    fn surrogate_vanishing_interference_channel() {
        let rows = vec![vec![Complex64::new(0.0, 0.0); 2], vec![Complex64::new(1e-5, 0.0), Complex64::new(0.0, 2e-5)]];
        let ch = ChannelMatrix::new(rows, 1e-12).unwrap();
        let p = RadiationVector::new(vec![0.6, 0.7], 1.0, BudgetReading::Amplitude).unwrap();
        let state =
            SurrogateState::new(&p, &PowerAllocation::new(vec![0.3, 0.7]).unwrap(), &DecodingOrder::identity(2), &ch)
                .unwrap();
        let q = state.q0(1) * 1.7;
        let head = quad_form(state.channel(1), &q).ln_1p() / LN_2;
        assert_relative_eq!(state.surrogate_term(1, &q), head, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_pair_surrogate() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let ch = random_channels(&mut rng, 2, 3);
        let p = RadiationVector::new(vec![0.5, 0.5, 0.5], 1.0, BudgetReading::Amplitude).unwrap();
        let state =
            SurrogateState::new(&p, &PowerAllocation::new(vec![0.4, 0.6]).unwrap(), &DecodingOrder::identity(2), &ch)
                .unwrap();
        let (q0, q1) = (state.q0(0), state.q0(1));
        assert_relative_eq!(state.surrogate_sic(0, 0, &q0, &q1), 0.0, epsilon = 1e-10);
        for _ in 0..100 {
            let v = DVector::from_iterator(3, (0..3).map(|_| rng.gen::<f64>() * 1e6));
            let qa = &q0 + &v * v.transpose();
            assert_relative_eq!(state.exact_sic(0, 0, &qa, &q1), 0.0, epsilon = 1e-9);
            assert!(state.surrogate_sic(0, 0, &qa, &q1) <= 1e-9);
        }
    }

    #[test]
    fn single_antenna_single_user_takes_full_power() {
        let ch = ChannelMatrix::new(vec![vec![Complex64::new(3e-5, -1e-5)]], 1e-12).unwrap();
        let p0 = RadiationVector::new(vec![0.3], 2.0, BudgetReading::Amplitude).unwrap();
        let alpha = PowerAllocation::new(vec![1.0]).unwrap();
        let order = DecodingOrder::identity(1);
        let qos = QosParams::uniform(1, 0.5).unwrap();
        let out = sca_loop(&p0, &alpha, &order, &ch, &qos, &ScaConfig::default()).unwrap();
        assert_relative_eq!(out.p.as_slice()[0], 2f64.sqrt(), max_relative = 1e-7);
    }

    #[test]
    fn two_antennas_match_grid() {
        // Real positive channel: the optimum is maximum-ratio weighting.
        let h = [2e-5, 5e-5];
        let ch = ChannelMatrix::new(vec![h.iter().map(|v| Complex64::new(*v, 0.0)).collect()], 1e-12).unwrap();
        let p0 = RadiationVector::equal(2, 1.0, BudgetReading::Amplitude).unwrap();
        let alpha = PowerAllocation::new(vec![1.0]).unwrap();
        let order = DecodingOrder::identity(1);
        let qos = QosParams::uniform(1, 0.5).unwrap();
        let out = sca_loop(&p0, &alpha, &order, &ch, &qos, &ScaConfig::default()).unwrap();

        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..=1570 {
            let theta = i as f64 * 1e-3;
            let p = RadiationVector::new(vec![theta.cos(), theta.sin()], 1.0 + 1e-9, BudgetReading::Amplitude).unwrap();
            let v = true_objective(&p, &alpha, &order, &ch).unwrap();
            if v > best.0 {
                best = (v, theta);
            }
        }
        assert!(out.objective >= best.0 - 1e-9);
        let norm = (h[0] * h[0] + h[1] * h[1]).sqrt();
        assert_relative_eq!(out.p.as_slice()[0], h[0] / norm, epsilon = 1e-6);
        assert_relative_eq!(out.p.as_slice()[1], h[1] / norm, epsilon = 1e-6);
    }
}
