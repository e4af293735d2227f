//! Alternating optimization of the power split and the radiation vector.
//!
//! Each outer iteration runs the SCA radiation step under the current
//! split, re-derives the decoding order from the new effective gains and
//! re-solves the split in closed form. A re-ordering that would lower the
//! sum rate or break QoS/SIC is rejected, so the outer sequence is
//! non-decreasing.

use itertools::Itertools;
use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::ChannelMatrix;
use crate::noma::{
    check_sic_feasibility, closed_form_alpha, order_by_effective_gain, user_rates, DecodingOrder, EffectiveGains,
    PowerAllocation, QosParams,
};
use crate::sca::{sca_loop, BudgetReading, RadiationVector, ScaConfig};

/// `K!` guard for the exhaustive ordering search.
pub const MAX_EXHAUSTIVE_USERS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SicMode {
    /// Order recomputed from effective gains every outer iteration.
    #[default]
    Dynamic,
    /// Best of all frozen orderings.
    Exhaustive,
}

#[derive(Debug, Clone)]
pub struct AoConfig {
    pub eps_outer: f64,
    pub max_outer: usize,
    pub sic_mode: SicMode,
    pub budget_reading: BudgetReading,
    pub sca: ScaConfig,
    /// Initial QoS margin (bit/s/Hz) of the split used inside the radiation
    /// step; shrinks tenfold whenever progress stalls, down to zero.
    pub qos_slack: f64,
    /// Random starting points screened per ordering in the exhaustive search.
    pub exhaustive_probes: usize,
    pub probe_seed: u64,
}

impl Default for AoConfig {
    fn default() -> Self {
        Self {
            eps_outer: 1e-4,
            max_outer: 50,
            sic_mode: SicMode::Dynamic,
            budget_reading: BudgetReading::Amplitude,
            sca: ScaConfig::default(),
            qos_slack: 0.05,
            exhaustive_probes: 256,
            probe_seed: 0x5eed,
        }
    }
}

impl AoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_outer > 0.0) || !(self.sca.eps_sca > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        if !(self.qos_slack >= 0.0) {
            return Err(Error::InvalidParameter("QoS slack must be non-negative".into()));
        }
        if self.max_outer == 0 || self.sca.max_iters == 0 {
            return Err(Error::InvalidParameter("iteration limits must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AoStatus {
    Converged,
    MaxIters,
    /// No power split meets every minimum rate; rates are reported for an
    /// equal split and must not be averaged.
    QosInfeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterTraceRow {
    pub iteration: usize,
    pub order: Vec<usize>,
    pub alpha: Vec<f64>,
    pub sum_rate: f64,
    pub sca_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct AoResult {
    pub p_star: RadiationVector,
    pub alpha_star: PowerAllocation,
    pub order_star: DecodingOrder,
    pub sum_rate: f64,
    pub per_user_rates: Vec<f64>,
    pub outer_trajectory: Vec<OuterTraceRow>,
    pub status: AoStatus,
}

impl AoResult {
    pub fn is_feasible(&self) -> bool {
        self.status != AoStatus::QosInfeasible
    }

    pub fn outer_iterations(&self) -> usize {
        self.outer_trajectory.len().saturating_sub(1)
    }
}

/// Split and sum rate at a point, if QoS and SIC both hold.
struct Operating {
    alpha: PowerAllocation,
    sum: f64,
}

fn operate(
    channels: &ChannelMatrix,
    p: &RadiationVector,
    order: &DecodingOrder,
    qos: &QosParams,
) -> Result<Option<Operating>> {
    let gains = EffectiveGains::from_channels(channels, p.as_slice())?;
    let alpha = match closed_form_alpha(&gains, order, qos) {
        Ok(a) => a,
        Err(Error::QosInfeasible(reason)) => {
            debug!("order {:?} infeasible: {reason}", order.sequence());
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    if !check_sic_feasibility(&gains, &alpha, order)?.feasible {
        return Ok(None);
    }
    let sum = user_rates(&gains, &alpha, order)?.iter().sum();
    Ok(Some(Operating { alpha, sum }))
}

fn infeasible_result(channels: &ChannelMatrix, p: RadiationVector, order: DecodingOrder) -> Result<AoResult> {
    let k = channels.n_users();
    let alpha = PowerAllocation::new(vec![1.0 / k as f64; k])?;
    let gains = EffectiveGains::from_channels(channels, p.as_slice())?;
    let rates = user_rates(&gains, &alpha, &order)?;
    Ok(AoResult {
        sum_rate: rates.iter().sum(),
        per_user_rates: rates,
        outer_trajectory: Vec::new(),
        p_star: p,
        alpha_star: alpha,
        order_star: order,
        status: AoStatus::QosInfeasible,
    })
}

fn check_problem(channels: &ChannelMatrix, qos: &QosParams, budget: f64, cfg: &AoConfig) -> Result<()> {
    cfg.validate()?;
    if qos.len() != channels.n_users() {
        return Err(Error::DimensionMismatch { expected: channels.n_users(), got: qos.len() });
    }
    if !(budget.is_finite() && budget > 0.0) {
        return Err(Error::InvalidParameter(format!("power budget must be positive, got {budget}")));
    }
    Ok(())
}

/// Alternating optimization from `p_start`, with the order either dynamic
/// or frozen to `frozen`.
pub fn ao_from(
    channels: &ChannelMatrix,
    qos: &QosParams,
    p_start: &RadiationVector,
    frozen: Option<&DecodingOrder>,
    cfg: &AoConfig,
) -> Result<AoResult> {
    check_problem(channels, qos, p_start.budget(), cfg)?;
    let mut p = p_start.clone();
    let mut order = match frozen {
        Some(o) => o.clone(),
        None => order_by_effective_gain(channels, p.as_slice())?,
    };
    let Some(mut op) = operate(channels, &p, &order, qos)? else {
        return infeasible_result(channels, p, order);
    };
    let mut trajectory = vec![OuterTraceRow {
        iteration: 0,
        order: order.sequence().to_vec(),
        alpha: op.alpha.as_slice().to_vec(),
        sum_rate: op.sum,
        sca_iterations: 0,
    }];
    let mut status = AoStatus::MaxIters;

    let mut slack = cfg.qos_slack;
    for iteration in 1..=cfg.max_outer {
        let previous = op.sum;
        // The radiation step runs under a split that leaves the weaker users
        // `slack` above their minimum, so their gains are free to move.
        let step_alpha = if slack > 0.0 {
            let padded = QosParams::new(qos.as_slice().iter().map(|r| r + slack).collect())?;
            operate(channels, &p, &order, &padded)?.map_or_else(|| op.alpha.clone(), |o| o.alpha)
        } else {
            op.alpha.clone()
        };
        let sca = match sca_loop(&p, &step_alpha, &order, channels, qos, &cfg.sca) {
            Ok(s) => s,
            Err(Error::InfeasibleStart { constraint, violation }) => {
                warn!("SCA could not start ({constraint} violated by {violation:e}); keeping current point");
                status = AoStatus::Converged;
                break;
            }
            Err(e) => return Err(e),
        };

        // Best exact operating point at the new radiation vector.
        let mut best: Option<(Operating, DecodingOrder)> = None;
        if slack == 0.0 {
            // The previous split stays QoS-feasible through the SCA step.
            let gains = EffectiveGains::from_channels(channels, sca.p.as_slice())?;
            let sum = user_rates(&gains, &op.alpha, &order)?.iter().sum();
            best = Some((Operating { sum, alpha: op.alpha.clone() }, order.clone()));
        }
        let mut orders = vec![order.clone()];
        if frozen.is_none() {
            let candidate = order_by_effective_gain(channels, sca.p.as_slice())?;
            if candidate != order {
                orders.push(candidate);
            }
        }
        for o in orders {
            if let Some(next) = operate(channels, &sca.p, &o, qos)? {
                if best.as_ref().is_none_or(|(b, _)| next.sum > b.sum) {
                    best = Some((next, o));
                }
            }
        }

        let accepted = match best {
            Some((next, o)) if next.sum >= previous => {
                if o != order {
                    debug!("outer iteration {iteration}: order {:?} -> {:?}", order.sequence(), o.sequence());
                }
                p = sca.p;
                op = next;
                order = o;
                true
            }
            _ => false,
        };
        trajectory.push(OuterTraceRow {
            iteration,
            order: order.sequence().to_vec(),
            alpha: op.alpha.as_slice().to_vec(),
            sum_rate: op.sum,
            sca_iterations: sca.trajectory.len() - 1,
        });
        if !accepted || op.sum - previous < cfg.eps_outer {
            if slack == 0.0 {
                status = AoStatus::Converged;
                break;
            }
            slack = if slack > 10.0 * cfg.eps_outer { slack / 10.0 } else { 0.0 };
        }
    }

    // Reported rates are recomputed from the final triple.
    let gains = EffectiveGains::from_channels(channels, p.as_slice())?;
    let rates = user_rates(&gains, &op.alpha, &order)?;
    Ok(AoResult {
        sum_rate: rates.iter().sum(),
        per_user_rates: rates,
        p_star: p,
        alpha_star: op.alpha,
        order_star: order,
        outer_trajectory: trajectory,
        status,
    })
}

/// Alternating optimization from equal amplitudes. With
/// [`SicMode::Exhaustive`] this delegates to [`ao_exhaustive_sic`].
pub fn ao_optimize(channels: &ChannelMatrix, qos: &QosParams, budget: f64, cfg: &AoConfig) -> Result<AoResult> {
    match cfg.sic_mode {
        SicMode::Dynamic => {
            let p0 = RadiationVector::equal(channels.n_antennas(), budget, cfg.budget_reading)?;
            ao_from(channels, qos, &p0, None, cfg)
        }
        SicMode::Exhaustive => ao_exhaustive_sic(channels, qos, budget, cfg),
    }
}

/// Dynamic-order AO from each start; keeps the best feasible result, the
/// earliest on ties.
pub fn ao_multi_start(
    channels: &ChannelMatrix,
    qos: &QosParams,
    starts: &[RadiationVector],
    cfg: &AoConfig,
) -> Result<AoResult> {
    let (first, rest) =
        starts.split_first().ok_or_else(|| Error::InvalidParameter("need at least one start".into()))?;
    let mut best = ao_from(channels, qos, first, None, cfg)?;
    for p in rest {
        best = better(best, ao_from(channels, qos, p, None, cfg)?);
    }
    Ok(best)
}

fn better(a: AoResult, b: AoResult) -> AoResult {
    match (a.is_feasible(), b.is_feasible()) {
        (true, false) => a,
        (false, true) => b,
        _ if b.sum_rate > a.sum_rate => b,
        _ => a,
    }
}

/// Best frozen-order AO over every decoding order.
///
/// Each ordering is started from equal amplitudes, from the dynamic
/// solution and from the best of a fixed set of random feasible points, so
/// the result never falls below the dynamic scheme.
pub fn ao_exhaustive_sic(channels: &ChannelMatrix, qos: &QosParams, budget: f64, cfg: &AoConfig) -> Result<AoResult> {
    let k = channels.n_users();
    if k > MAX_EXHAUSTIVE_USERS {
        return Err(Error::TooManyUsers { users: k, max: MAX_EXHAUSTIVE_USERS });
    }
    check_problem(channels, qos, budget, cfg)?;
    let n = channels.n_antennas();
    let p0 = RadiationVector::equal(n, budget, cfg.budget_reading)?;
    let dynamic = ao_from(channels, qos, &p0, None, cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.probe_seed);
    let probes = (0..cfg.exhaustive_probes)
        .map(|_| RadiationVector::random(&mut rng, n, budget, cfg.budget_reading))
        .collect::<Result<Vec<_>>>()?;

    let mut best = dynamic.clone();
    for sequence in (0..k).permutations(k) {
        let order = DecodingOrder::from_sequence(sequence)?;
        let mut starts = vec![p0.clone(), dynamic.p_star.clone()];
        let mut best_probe: Option<(f64, &RadiationVector)> = None;
        for probe in &probes {
            if let Some(op) = operate(channels, probe, &order, qos)? {
                if best_probe.is_none_or(|(v, _)| op.sum > v) {
                    best_probe = Some((op.sum, probe));
                }
            }
        }
        starts.extend(best_probe.map(|(_, p)| p.clone()));
        for start in &starts {
            if operate(channels, start, &order, qos)?.is_none() {
                continue;
            }
            best = better(best, ao_from(channels, qos, start, Some(&order), cfg)?);
        }
    }
    Ok(best)
}
