//! NOMA rates, SIC decoding order and the closed-form power split.
//!
//! Users are indexed `0..K`. A [`DecodingOrder`] assigns each user a
//! decoding position; position 0 is decoded first (the weakest user) and the
//! last position sees no intra-cell interference after SIC.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::ChannelMatrix;

/// Rate slack used when checking QoS and SIC conditions.
pub const RATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DecodingOrder {
    /// `position[k]` is user k's decoding position.
    position: Vec<usize>,
    /// `sequence[m]` is the user decoded at position m.
    sequence: Vec<usize>,
}

impl DecodingOrder {
    pub fn identity(k: usize) -> Self {
        Self { position: (0..k).collect(), sequence: (0..k).collect() }
    }

    /// Build from the users listed weakest first.
    pub fn from_sequence(sequence: Vec<usize>) -> Result<Self> {
        let k = sequence.len();
        let mut position = vec![usize::MAX; k];
        for (m, &u) in sequence.iter().enumerate() {
            if u >= k || position[u] != usize::MAX {
                return Err(Error::InvalidParameter(format!("decoding sequence {sequence:?} is not a permutation")));
            }
            position[u] = m;
        }
        Ok(Self { position, sequence })
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    pub fn position(&self, user: usize) -> usize {
        self.position[user]
    }

    pub fn user_at(&self, position: usize) -> usize {
        self.sequence[position]
    }

    pub fn sequence(&self) -> &[usize] {
        &self.sequence
    }

    pub fn positions(&self) -> &[usize] {
        &self.position
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    alpha: Vec<f64>,
}

impl PowerAllocation {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if let Some(bad) = alpha.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::InvalidParameter(format!("power fraction {bad} must be >= 0")));
        }
        let total: f64 = alpha.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!("power fractions sum to {total} > 1")));
        }
        Ok(Self { alpha })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// `S_m = sum of alpha over positions >= m`, indexed by decoding position.
    pub fn tail_sums(&self, order: &DecodingOrder) -> Vec<f64> {
        let k = self.alpha.len();
        let mut tails = vec![0.0; k];
        let mut acc = 0.0;
        for m in (0..k).rev() {
            acc += self.alpha[order.user_at(m)];
            tails[m] = acc;
        }
        tails
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QosParams {
    r_min: Vec<f64>,
}

impl QosParams {
    pub fn new(r_min: Vec<f64>) -> Result<Self> {
        if let Some(bad) = r_min.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::InvalidParameter(format!("minimum rate {bad} must be >= 0")));
        }
        Ok(Self { r_min })
    }

    pub fn uniform(k: usize, r_min: f64) -> Result<Self> {
        Self::new(vec![r_min; k])
    }

    pub fn r_min(&self, user: usize) -> f64 {
        self.r_min[user]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.r_min
    }

    pub fn len(&self) -> usize {
        self.r_min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_min.is_empty()
    }

    /// `(2^R - 1) / 2^R`, the SINR share a user must keep.
    pub fn beta(&self, user: usize) -> f64 {
        1.0 - (-self.r_min[user]).exp2()
    }

    /// `2^R`.
    pub fn a(&self, user: usize) -> f64 {
        self.r_min[user].exp2()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveGains {
    g: Vec<f64>,
    noise_variance: f64,
}

impl EffectiveGains {
    pub fn new(g: Vec<f64>, noise_variance: f64) -> Result<Self> {
        if let Some(bad) = g.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!("effective gain {bad} must be >= 0")));
        }
        if !(noise_variance > 0.0) {
            return Err(Error::InvalidParameter("noise variance must be positive".into()));
        }
        Ok(Self { g, noise_variance })
    }

    pub fn from_channels(channels: &ChannelMatrix, p: &[f64]) -> Result<Self> {
        Self::new(channels.gains(p)?, channels.noise_variance())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.g
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// `g_k / sigma^2`.
    pub fn normalized(&self, user: usize) -> f64 {
        self.g[user] / self.noise_variance
    }

    /// Users sorted by ascending gain, ties broken by index.
    pub fn ascending_order(&self) -> DecodingOrder {
        let mut sequence: Vec<usize> = (0..self.g.len()).collect();
        sequence.sort_by(|&a, &b| self.g[a].partial_cmp(&self.g[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        DecodingOrder::from_sequence(sequence).expect("sorted indices form a permutation")
    }
}

fn check_dims(gains: &EffectiveGains, alpha: &PowerAllocation, order: &DecodingOrder) -> Result<()> {
    let k = gains.len();
    for got in [alpha.len(), order.len()] {
        if got != k {
            return Err(Error::DimensionMismatch { expected: k, got });
        }
    }
    Ok(())
}

/// Power of the signals decoded after position `m`.
fn interference_after(m: usize, alpha: &PowerAllocation, order: &DecodingOrder) -> f64 {
    (m + 1..order.len()).map(|l| alpha.as_slice()[order.user_at(l)]).sum()
}

/// Rate at which `decoder` decodes the message of `target`.
pub fn cross_rate(
    decoder: usize,
    target: usize,
    gains: &EffectiveGains,
    alpha: &PowerAllocation,
    order: &DecodingOrder,
) -> Result<f64> {
    check_dims(gains, alpha, order)?;
    if order.position(decoder) < order.position(target) {
        return Err(Error::InvalidPair { decoder, target });
    }
    let g = gains.as_slice()[decoder];
    let signal = g * alpha.as_slice()[target];
    let interference = g * interference_after(order.position(target), alpha, order);
    Ok((signal / (interference + gains.noise_variance())).ln_1p() / std::f64::consts::LN_2)
}

pub fn user_rates(gains: &EffectiveGains, alpha: &PowerAllocation, order: &DecodingOrder) -> Result<Vec<f64>> {
    (0..gains.len()).map(|j| cross_rate(j, j, gains, alpha, order)).collect()
}

pub fn order_by_effective_gain(channels: &ChannelMatrix, p: &[f64]) -> Result<DecodingOrder> {
    if p.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateRadiation);
    }
    Ok(EffectiveGains::from_channels(channels, p)?.ascending_order())
}

/// Sum-rate optimal split for a fixed decoding order: every user but the
/// last is held exactly at its minimum rate and the remainder goes to the
/// last-decoded user.
pub fn closed_form_alpha(gains: &EffectiveGains, order: &DecodingOrder, qos: &QosParams) -> Result<PowerAllocation> {
    let k = gains.len();
    if order.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: order.len() });
    }
    if qos.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: qos.len() });
    }
    // Position-indexed beta and normalized gains.
    let beta: Vec<f64> = (0..k).map(|m| qos.beta(order.user_at(m))).collect();
    let hbar: Vec<f64> = (0..k).map(|m| gains.normalized(order.user_at(m))).collect();
    if let Some(m) = (0..k).find(|&m| !(hbar[m] > 0.0)) {
        return Err(Error::QosInfeasible(format!("user {} has zero effective gain", order.user_at(m))));
    }

    let survival = |from: usize, to: usize| -> f64 { (from..to).map(|l| 1.0 - beta[l]).product() };
    let mut unclamped_total = 0.0;
    let mut alpha = vec![0.0; k];
    for i in 0..k.saturating_sub(1) {
        let mut inner = survival(0, i) + 1.0 / hbar[i];
        for j in 0..i {
            inner -= survival(j + 1, i) * beta[j] / hbar[j];
        }
        let term = beta[i] * inner;
        unclamped_total += term;
        alpha[order.user_at(i)] = term.max(0.0);
    }
    if unclamped_total > 1.0 + 1e-12 {
        return Err(Error::QosInfeasible(format!("weaker users need {unclamped_total:.6} of the power budget")));
    }
    alpha[order.user_at(k - 1)] = (1.0 - unclamped_total).max(0.0);

    let alpha = PowerAllocation { alpha };
    let rates = user_rates(gains, &alpha, order)?;
    for (user, rate) in rates.iter().enumerate() {
        if *rate < qos.r_min(user) - RATE_TOL {
            return Err(Error::QosInfeasible(format!("user {user} reaches {rate:.9} < {} bit/s/Hz", qos.r_min(user))));
        }
    }
    Ok(alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SicReport {
    pub feasible: bool,
    /// Smallest `R_{m->j} - R_m` over ordered pairs; `+inf` when there are none.
    pub min_margin: f64,
    /// `(decoder, target)` attaining the minimum.
    pub worst_pair: Option<(usize, usize)>,
}

pub fn check_sic_feasibility(
    gains: &EffectiveGains,
    alpha: &PowerAllocation,
    order: &DecodingOrder,
) -> Result<SicReport> {
    check_dims(gains, alpha, order)?;
    let own = user_rates(gains, alpha, order)?;
    let mut report = SicReport { feasible: true, min_margin: f64::INFINITY, worst_pair: None };
    for m in 0..order.len() {
        let target = order.user_at(m);
        for l in m + 1..order.len() {
            let decoder = order.user_at(l);
            let margin = cross_rate(decoder, target, gains, alpha, order)? - own[target];
            if margin < report.min_margin {
                report.min_margin = margin;
                report.worst_pair = Some((decoder, target));
            }
        }
    }
    report.feasible = report.min_margin >= -RATE_TOL;
    Ok(report)
}

pub fn sum_rate(rates: &[f64]) -> f64 {
    rates.iter().sum()
}
