//! Monte Carlo experiment loop.
//!
//! Trial `t` draws its users from seed `seed + t`, so every scheme and, for
//! antenna sweeps, every sweep value sees the same user positions. Within a
//! (sweep value, trial) job all schemes share one channel matrix.

use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ao::{ao_exhaustive_sic, ao_multi_start, ao_optimize, AoResult, AoStatus, SicMode};
use crate::baselines::{best_activation, epr_rate, ActivationMask, ActivationOutcome, EprOutcome};
use crate::error::{Error, Result};
use crate::geometry::{sample_users, ChannelMatrix, SystemLayout};
use crate::harness::config::{ExperimentConfig, ExperimentKind};
use crate::noma::{check_sic_feasibility, order_by_effective_gain, EffectiveGains, QosParams};
use crate::sca::RadiationVector;

/// Worker-count override for the trial pool.
pub const WORKERS_ENV: &str = "PASS_NOMA_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Optimized radiation with dynamic SIC ordering.
    Gpr,
    /// Equal radiation on every antenna.
    EprAll,
    /// Equal radiation on the best activation mask.
    EprActivation,
    /// Optimized radiation, best frozen SIC ordering.
    ExhaustiveSic,
}

impl Scheme {
    pub fn label(self) -> &'static str {
        match self {
            Self::Gpr => "gpr",
            Self::EprAll => "epr-all",
            Self::EprActivation => "epr-activation",
            Self::ExhaustiveSic => "exhaustive-sic",
        }
    }

    pub fn for_kind(kind: ExperimentKind) -> &'static [Scheme] {
        match kind {
            ExperimentKind::SicCompare => &[Scheme::Gpr, Scheme::ExhaustiveSic],
            _ => &[Scheme::Gpr, Scheme::EprAll, Scheme::EprActivation],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub sweep_value: usize,
    pub n_antennas: usize,
    pub n_users: usize,
    pub scheme: Scheme,
    /// `converged`, `max-iters`, `qos-infeasible` or `error`.
    pub status: String,
    pub feasible: bool,
    pub sum_rate: f64,
    #[serde(with = "rate_list")]
    pub per_user_rates: Vec<f64>,
    /// Every required cross-decoding rate covers its target, checked at the
    /// reported operating point; false when infeasible.
    pub sic_feasible: bool,
    pub outer_iterations: usize,
    /// Fingerprint of the channel matrix the scheme was evaluated on.
    pub channel_hash: String,
}

/// Wall-clock cost of one record, kept apart so records stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub trial: usize,
    pub sweep_value: usize,
    pub scheme: Scheme,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep_value: usize,
    pub scheme: Scheme,
    pub trials: usize,
    pub feasible: usize,
    pub feasible_fraction: f64,
    /// Mean over feasible trials only.
    pub mean_sum_rate: f64,
    pub std_error: f64,
    /// Mean paired relative gain of `gpr` over this scheme on trials where
    /// both are feasible; empty on the `gpr` row.
    pub gpr_relative_gain: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub records: Vec<TrialRecord>,
    pub timings: Vec<TrialTiming>,
    pub summary: Vec<SummaryRow>,
}

/// Semicolon-joined per-user rates inside one CSV field.
mod rate_list {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(rates: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let joined: Vec<String> = rates.iter().map(|r| r.to_string()).collect();
        s.serialize_str(&joined.join(";"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let text = String::deserialize(d)?;
        if text.is_empty() {
            return Ok(Vec::new());
        }
        text.split(';').map(|v| v.parse().map_err(serde::de::Error::custom)).collect()
    }
}

/// (sweep value, antennas, users) for every sweep point.
fn sweep_points(cfg: &ExperimentConfig) -> Vec<(usize, usize, usize)> {
    let e = &cfg.experiment;
    match e.kind {
        ExperimentKind::VaryAntennas => e.sweep.iter().map(|&n| (n, n, e.n_users)).collect(),
        ExperimentKind::VaryUsers => e.sweep.iter().map(|&k| (k, e.n_antennas, k)).collect(),
        ExperimentKind::SicCompare | ExperimentKind::Single => vec![(e.n_antennas, e.n_antennas, e.n_users)],
    }
}

type SchemeResult = (String, bool, f64, Vec<f64>, bool, usize);

fn ao_record(channels: &ChannelMatrix, res: &AoResult) -> Result<SchemeResult> {
    let status = match res.status {
        AoStatus::Converged => "converged",
        AoStatus::MaxIters => "max-iters",
        AoStatus::QosInfeasible => "qos-infeasible",
    };
    let sic = res.is_feasible() && {
        let gains = EffectiveGains::from_channels(channels, res.p_star.as_slice())?;
        check_sic_feasibility(&gains, &res.alpha_star, &res.order_star)?.feasible
    };
    Ok((status.into(), res.is_feasible(), res.sum_rate, res.per_user_rates.clone(), sic, res.outer_iterations()))
}

fn epr_record(channels: &ChannelMatrix, out: &EprOutcome) -> Result<SchemeResult> {
    let (status, sic) = match &out.alpha {
        Some(alpha) => {
            let gains = EffectiveGains::from_channels(channels, out.p.as_slice())?;
            let order = order_by_effective_gain(channels, out.p.as_slice())?;
            ("converged", check_sic_feasibility(&gains, alpha, &order)?.feasible)
        }
        None => ("qos-infeasible", false),
    };
    Ok((status.into(), out.is_feasible(), out.sum_rate, out.per_user_rates.clone(), sic, 0))
}

/// With an activation baseline in the same job, `gpr` also starts from its
/// mask, so the comparison is against a point the optimizer can reach.
fn run_scheme(
    scheme: Scheme,
    cfg: &ExperimentConfig,
    channels: &ChannelMatrix,
    qos: &QosParams,
    activation: Option<&ActivationOutcome>,
) -> Result<SchemeResult> {
    let budget = cfg.physics.power_budget_w;
    let reading = cfg.physics.budget_reading;
    match scheme {
        Scheme::Gpr => {
            let ao = cfg.ao_config(SicMode::Dynamic);
            let res = match activation {
                Some(act) => {
                    let starts = [
                        RadiationVector::equal(channels.n_antennas(), budget, reading)?,
                        RadiationVector::equal_on(act.mask.as_slice(), budget, reading)?,
                    ];
                    ao_multi_start(channels, qos, &starts, &ao)?
                }
                None => ao_optimize(channels, qos, budget, &ao)?,
            };
            ao_record(channels, &res)
        }
        Scheme::ExhaustiveSic => {
            ao_record(channels, &ao_exhaustive_sic(channels, qos, budget, &cfg.ao_config(SicMode::Exhaustive))?)
        }
        Scheme::EprAll => epr_record(
            channels,
            &epr_rate(channels, &ActivationMask::all(channels.n_antennas())?, qos, budget, reading)?,
        ),
        Scheme::EprActivation => match activation {
            Some(act) => epr_record(channels, &act.outcome),
            None => epr_record(
                channels,
                &best_activation(channels, qos, budget, reading, cfg.experiment.activation)?.outcome,
            ),
        },
    }
}

fn run_job(
    cfg: &ExperimentConfig,
    (sweep_value, n_antennas, n_users): (usize, usize, usize),
    trial: usize,
) -> Result<Vec<(TrialRecord, TrialTiming)>> {
    let p = &cfg.physics;
    let layout = SystemLayout::new(&cfg.layout_params(n_antennas))?;
    let users = sample_users(n_users, p.d1_m, p.d2_m, cfg.experiment.seed.wrapping_add(trial as u64))?;
    let channels = layout.channels(&users, cfg.noise_variance())?;
    let qos = QosParams::uniform(n_users, p.r_min)?;
    let channel_hash = channels.fingerprint();

    let schemes = Scheme::for_kind(cfg.experiment.kind);
    let activation_start = Instant::now();
    let activation = if schemes.contains(&Scheme::EprActivation) {
        match best_activation(&channels, &qos, p.power_budget_w, p.budget_reading, cfg.experiment.activation) {
            Ok(act) => Some(act),
            Err(e) => {
                warn!("trial {trial}, sweep {sweep_value}, activation search: {e}");
                None
            }
        }
    } else {
        None
    };
    let activation_time = activation_start.elapsed().as_secs_f64();

    let mut rows = Vec::new();
    for &scheme in schemes {
        let start = Instant::now();
        let (status, feasible, sum_rate, per_user_rates, sic_feasible, outer_iterations) =
            match run_scheme(scheme, cfg, &channels, &qos, activation.as_ref()) {
                Ok(r) => r,
                Err(e) => {
                    warn!("trial {trial}, sweep {sweep_value}, {}: {e}", scheme.label());
                    ("error".into(), false, f64::NAN, Vec::new(), false, 0)
                }
            };
        let mut wall_time_s = start.elapsed().as_secs_f64();
        if matches!(scheme, Scheme::Gpr | Scheme::EprActivation) && activation.is_some() {
            // Both depend on the shared activation search.
            wall_time_s += activation_time;
        }
        rows.push((
            TrialRecord {
                trial,
                sweep_value,
                n_antennas,
                n_users,
                scheme,
                status,
                feasible,
                sum_rate,
                per_user_rates,
                sic_feasible,
                outer_iterations,
                channel_hash: channel_hash.clone(),
            },
            TrialTiming { trial, sweep_value, scheme, wall_time_s },
        ));
    }
    Ok(rows)
}

/// Worker pool sized from [`WORKERS_ENV`]; unset or 0 means one per core.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::InvalidParameter(format!("{WORKERS_ENV}={v:?} is not a count")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let jobs: Vec<((usize, usize, usize), usize)> =
        sweep_points(cfg).into_iter().flat_map(|point| (0..cfg.experiment.trials).map(move |t| (point, t))).collect();
    info!("{}: {} jobs", cfg.experiment.kind.label(), jobs.len());
    let pool = worker_pool()?;
    // Indexed collection keeps job order regardless of completion order.
    let results: Vec<Vec<(TrialRecord, TrialTiming)>> =
        pool.install(|| jobs.par_iter().map(|&(point, trial)| run_job(cfg, point, trial)).collect::<Result<_>>())?;
    let (records, timings): (Vec<_>, Vec<_>) = results.into_iter().flatten().unzip();
    let summary = summarize(&records);
    Ok(ExperimentOutput { records, timings, summary })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn summarize(records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, Scheme)> = records.iter().map(|r| (r.sweep_value, r.scheme)).collect();
    keys.sort();
    keys.dedup();
    // Sweep values in first-appearance order.
    let mut sweeps: Vec<usize> = Vec::new();
    for r in records {
        if !sweeps.contains(&r.sweep_value) {
            sweeps.push(r.sweep_value);
        }
    }
    let mut rows = Vec::new();
    for sweep in sweeps {
        for &(_, scheme) in keys.iter().filter(|(s, _)| *s == sweep) {
            let these: Vec<&TrialRecord> =
                records.iter().filter(|r| r.sweep_value == sweep && r.scheme == scheme).collect();
            let rates: Vec<f64> = these.iter().filter(|r| r.feasible).map(|r| r.sum_rate).collect();
            let n = rates.len();
            let mean_sum_rate = if n > 0 { mean(&rates) } else { f64::NAN };
            let std_error = if n > 1 {
                let var = rates.iter().map(|r| (r - mean_sum_rate).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            let gpr_relative_gain = (scheme != Scheme::Gpr).then(|| {
                let gains: Vec<f64> = these
                    .iter()
                    .filter(|r| r.feasible)
                    .filter_map(|r| {
                        records
                            .iter()
                            .find(|g| {
                                g.scheme == Scheme::Gpr && g.sweep_value == sweep && g.trial == r.trial && g.feasible
                            })
                            .map(|g| (g.sum_rate - r.sum_rate) / r.sum_rate)
                    })
                    .collect();
                if gains.is_empty() {
                    f64::NAN
                } else {
                    mean(&gains)
                }
            });
            rows.push(SummaryRow {
                sweep_value: sweep,
                scheme,
                trials: these.len(),
                feasible: n,
                feasible_fraction: n as f64 / these.len() as f64,
                mean_sum_rate,
                std_error,
                gpr_relative_gain,
            });
        }
    }
    rows
}
