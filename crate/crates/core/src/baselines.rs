//! Equal-radiation benchmark with antenna activation.
//!
//! Active antennas share the budget equally, users are ordered by effective
//! gain and the split is solved in closed form, exactly as in the optimized
//! scheme, so the comparison differs only in the radiation vector.

use crate::error::{Error, Result};
use crate::geometry::ChannelMatrix;
use crate::noma::{closed_form_alpha, order_by_effective_gain, user_rates, EffectiveGains, PowerAllocation, QosParams};
use crate::sca::{BudgetReading, RadiationVector};

/// Largest antenna count searched exhaustively.
pub const MAX_EXHAUSTIVE_ANTENNAS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActivationMask {
    active: Vec<bool>,
}

impl ActivationMask {
    pub fn new(active: Vec<bool>) -> Result<Self> {
        if !active.iter().any(|a| *a) {
            return Err(Error::InvalidParameter("activation mask has no active antenna".into()));
        }
        Ok(Self { active })
    }

    pub fn all(n: usize) -> Result<Self> {
        Self::new(vec![true; n])
    }

    /// Mask from the low `n` bits of `bits`.
    pub fn from_bits(bits: u64, n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| bits >> i & 1 == 1).collect())
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    fn toggled(&self, i: usize) -> Option<Self> {
        let mut active = self.active.clone();
        active[i] = !active[i];
        Self::new(active).ok()
    }
}

#[derive(Debug, Clone)]
pub struct EprOutcome {
    pub p: RadiationVector,
    /// `None` when no split meets every minimum rate.
    pub alpha: Option<PowerAllocation>,
    pub per_user_rates: Vec<f64>,
    pub sum_rate: f64,
}

impl EprOutcome {
    pub fn is_feasible(&self) -> bool {
        self.alpha.is_some()
    }
}

pub fn epr_rate(
    channels: &ChannelMatrix,
    mask: &ActivationMask,
    qos: &QosParams,
    budget: f64,
    reading: BudgetReading,
) -> Result<EprOutcome> {
    if mask.len() != channels.n_antennas() {
        return Err(Error::DimensionMismatch { expected: channels.n_antennas(), got: mask.len() });
    }
    let p = RadiationVector::equal_on(mask.as_slice(), budget, reading)?;
    let order = order_by_effective_gain(channels, p.as_slice())?;
    let gains = EffectiveGains::from_channels(channels, p.as_slice())?;
    match closed_form_alpha(&gains, &order, qos) {
        Ok(alpha) => {
            let rates = user_rates(&gains, &alpha, &order)?;
            Ok(EprOutcome { p, sum_rate: rates.iter().sum(), per_user_rates: rates, alpha: Some(alpha) })
        }
        Err(Error::QosInfeasible(_)) => Ok(EprOutcome { p, alpha: None, per_user_rates: Vec::new(), sum_rate: 0.0 }),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationStrategy {
    Exhaustive,
    Greedy,
}

#[derive(Debug, Clone)]
pub struct ActivationOutcome {
    pub mask: ActivationMask,
    pub outcome: EprOutcome,
    pub masks_evaluated: usize,
}

/// Feasible outcomes beat infeasible ones, then the higher sum rate wins.
fn improves(candidate: &EprOutcome, incumbent: &EprOutcome) -> bool {
    match (candidate.is_feasible(), incumbent.is_feasible()) {
        (true, false) => true,
        (false, true) => false,
        _ => candidate.sum_rate > incumbent.sum_rate,
    }
}

pub fn best_activation(
    channels: &ChannelMatrix,
    qos: &QosParams,
    budget: f64,
    reading: BudgetReading,
    strategy: ActivationStrategy,
) -> Result<ActivationOutcome> {
    let n = channels.n_antennas();
    match strategy {
        ActivationStrategy::Exhaustive => {
            if n > MAX_EXHAUSTIVE_ANTENNAS {
                return Err(Error::TooManyAntennas { antennas: n, max: MAX_EXHAUSTIVE_ANTENNAS });
            }
            let mut best: Option<(ActivationMask, EprOutcome)> = None;
            for bits in 1..(1u64 << n) {
                let mask = ActivationMask::from_bits(bits, n)?;
                let outcome = epr_rate(channels, &mask, qos, budget, reading)?;
                if best.as_ref().is_none_or(|(_, b)| improves(&outcome, b)) {
                    best = Some((mask, outcome));
                }
            }
            let (mask, outcome) = best.expect("at least one mask");
            Ok(ActivationOutcome { mask, outcome, masks_evaluated: (1usize << n) - 1 })
        }
        ActivationStrategy::Greedy => {
            let mut mask = ActivationMask::all(n)?;
            let mut outcome = epr_rate(channels, &mask, qos, budget, reading)?;
            let mut evaluated = 1;
            loop {
                let mut best_flip: Option<(ActivationMask, EprOutcome)> = None;
                for i in 0..n {
                    let Some(candidate) = mask.toggled(i) else { continue };
                    let next = epr_rate(channels, &candidate, qos, budget, reading)?;
                    evaluated += 1;
                    let reference = best_flip.as_ref().map_or(&outcome, |(_, o)| o);
                    if improves(&next, reference) {
                        best_flip = Some((candidate, next));
                    }
                }
                match best_flip {
                    Some((m, o)) => {
                        mask = m;
                        outcome = o;
                    }
                    None => break,
                }
            }
            Ok(ActivationOutcome { mask, outcome, masks_evaluated: evaluated })
        }
    }
}
