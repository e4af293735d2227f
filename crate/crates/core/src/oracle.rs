//! Brute-force references for the closed-form split and the optimizers.
//!
//! Rates are evaluated here from scratch, without the `noma` helpers, so a
//! transcription error in one path shows up as a disagreement.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ChannelMatrix;
use crate::noma::{closed_form_alpha, EffectiveGains, QosParams};
use crate::sca::{BudgetReading, RadiationVector};

pub const MAX_GRID_USERS: usize = 4;
/// Samples drawn from one RNG stream.
const CHUNK: usize = 4096;

/// Users by ascending gain, ties by index.
fn ascending(gains: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..gains.len()).collect();
    idx.sort_by(|&a, &b| gains[a].total_cmp(&gains[b]).then(a.cmp(&b)));
    idx
}

/// Rates by decoding position for position-indexed gains and powers.
fn rates_by_position(g: &[f64], a: &[f64], noise: f64) -> Vec<f64> {
    let k = g.len();
    let mut out = vec![0.0; k];
    let mut after = 0.0;
    for m in (0..k).rev() {
        out[m] = (1.0 + a[m] * g[m] / (g[m] * after + noise)).log2();
        after += a[m];
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    /// User-indexed best split, `None` if no grid point meets every minimum rate.
    pub alpha: Option<Vec<f64>>,
    pub sum_rate: f64,
}

impl GridOutcome {
    pub fn is_feasible(&self) -> bool {
        self.alpha.is_some()
    }
}

/// Maximizes the sum rate over the grid `{alpha_i in {0, r, 2r, ...}, sum <= 1}`
/// under the ascending-gain order.
///
/// With the earlier splits fixed, the sum rate grows with the power of the
/// strongest user, and every other rate shrinks with it. The last grid
/// coordinate is therefore the largest one keeping the earlier users at their
/// minimum rate, which a bisection finds.
pub fn grid_alpha_oracle(gains: &[f64], qos: &QosParams, noise_variance: f64, resolution: f64) -> Result<GridOutcome> {
    let k = gains.len();
    if k == 0 || k > MAX_GRID_USERS {
        return Err(Error::TooManyUsers { users: k, max: MAX_GRID_USERS });
    }
    if qos.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: qos.len() });
    }
    if !(1e-3..=1.0).contains(&resolution) {
        return Err(Error::InvalidParameter(format!("grid resolution {resolution} outside [1e-3, 1]")));
    }
    let steps = (1.0 / resolution).round() as usize;
    let order = ascending(gains);
    let g: Vec<f64> = order.iter().map(|&u| gains[u]).collect();
    let r_min: Vec<f64> = order.iter().map(|&u| qos.r_min(u)).collect();
    let at = |i: usize| i as f64 / steps as f64;

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut head = vec![0usize; k - 1];
    loop {
        let used: usize = head.iter().sum();
        if used <= steps {
            let mut a: Vec<f64> = head.iter().map(|&i| at(i)).collect();
            a.push(0.0);
            let meets = |a: &[f64], upto: usize| {
                rates_by_position(&g, a, noise_variance).iter().zip(&r_min).take(upto).all(|(r, m)| *r >= *m - 1e-12)
            };
            // Largest last coordinate keeping the earlier users feasible.
            if meets(&a, k - 1) {
                let (mut low, mut high) = (0, steps - used);
                while low < high {
                    let mid = (low + high).div_ceil(2);
                    a[k - 1] = at(mid);
                    if meets(&a, k - 1) {
                        low = mid;
                    } else {
                        high = mid - 1;
                    }
                }
                a[k - 1] = at(low);
                let rates = rates_by_position(&g, &a, noise_variance);
                if rates.iter().zip(&r_min).all(|(r, m)| *r >= *m - 1e-12) {
                    let sum: f64 = rates.iter().sum();
                    if best.as_ref().is_none_or(|(b, _)| sum > *b) {
                        best = Some((sum, a));
                    }
                }
            }
        }
        // Next head in lexicographic order.
        let mut pos = 0;
        loop {
            if pos == k - 1 {
                let (sum_rate, alpha) = match best {
                    Some((s, a)) => {
                        let mut user = vec![0.0; k];
                        for (m, &u) in order.iter().enumerate() {
                            user[u] = a[m];
                        }
                        (s, Some(user))
                    }
                    None => (f64::NEG_INFINITY, None),
                };
                return Ok(GridOutcome { alpha, sum_rate });
            }
            head[pos] += 1;
            if head.iter().sum::<usize>() <= steps {
                break;
            }
            head[pos] = 0;
            pos += 1;
        }
    }
}

/// `(sum rate, sample index, p, alpha)` of the best sample in a chunk.
type Candidate = (f64, usize, Vec<f64>, Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct RandomOutcome {
    pub p: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
    /// `-inf` when no sample admits a feasible split.
    pub sum_rate: f64,
    pub feasible_samples: usize,
}

/// Best of `samples` uniform radiation vectors, each with the closed-form
/// split under its own gain order. Deterministic in `seed` and independent
/// of the thread count; the first `n` samples do not depend on `samples`.
pub fn random_p_oracle(
    channels: &ChannelMatrix,
    qos: &QosParams,
    budget: f64,
    reading: BudgetReading,
    samples: usize,
    seed: u64,
) -> Result<RandomOutcome> {
    if qos.len() != channels.n_users() {
        return Err(Error::DimensionMismatch { expected: channels.n_users(), got: qos.len() });
    }
    let n = channels.n_antennas();
    let noise = channels.noise_variance();
    let chunks = samples.div_ceil(CHUNK);
    let best = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<(usize, Option<Candidate>)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut feasible = 0;
            let mut best: Option<Candidate> = None;
            for i in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                let p = RadiationVector::random(&mut rng, n, budget, reading)?;
                let g: Vec<f64> = channels
                    .rows()
                    .iter()
                    .map(|h| {
                        let (re, im) = h
                            .iter()
                            .zip(p.as_slice())
                            .fold((0.0, 0.0), |(re, im), (hn, pn)| (re + hn.re * pn, im + hn.im * pn));
                        re * re + im * im
                    })
                    .collect();
                let order = ascending(&g);
                let Ok(gains) = EffectiveGains::new(g.clone(), noise) else { continue };
                let decoding = gains.ascending_order();
                let Ok(alpha) = closed_form_alpha(&gains, &decoding, qos) else { continue };
                let a_pos: Vec<f64> = order.iter().map(|&u| alpha.as_slice()[u]).collect();
                let g_pos: Vec<f64> = order.iter().map(|&u| g[u]).collect();
                let rates = rates_by_position(&g_pos, &a_pos, noise);
                if !rates.iter().zip(&order).all(|(r, &u)| *r >= qos.r_min(u) - 1e-9) {
                    continue;
                }
                feasible += 1;
                let sum: f64 = rates.iter().sum();
                if best.as_ref().is_none_or(|b| sum > b.0) {
                    best = Some((sum, i, p.as_slice().to_vec(), alpha.as_slice().to_vec()));
                }
            }
            Ok((feasible, best))
        })
        .collect::<Result<Vec<_>>>()?;

    let feasible_samples = best.iter().map(|(f, _)| f).sum();
    // Earliest sample wins ties, whatever the scheduling.
    let winner =
        best.into_iter()
            .filter_map(|(_, b)| b)
            .reduce(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    Ok(match winner {
        Some((sum_rate, _, p, alpha)) => RandomOutcome { p: Some(p), alpha: Some(alpha), sum_rate, feasible_samples },
        None => RandomOutcome { p: None, alpha: None, sum_rate: f64::NEG_INFINITY, feasible_samples },
    })
}
