//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Every tolerance is a named constant below.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pass_noma::ao::{ao_optimize, AoConfig};
use pass_noma::geometry::{sample_users, ChannelMatrix, LayoutParams, SystemLayout};
use pass_noma::harness::output::write_records;
use pass_noma::harness::{run_experiment, ExperimentConfig, ExperimentOutput, Scheme, SummaryRow, TrialRecord};
use pass_noma::noma::{closed_form_alpha, user_rates, EffectiveGains, PowerAllocation, QosParams};
use pass_noma::oracle::{grid_alpha_oracle, random_p_oracle};
use pass_noma::power_model::{
    coupling_to_spacing, couplings_to_fractions, epr_couplings, fractions_to_couplings, spacing_to_coupling,
    CouplingPhysicsParams, CouplingVector, PowerFractions,
};
use pass_noma::sca::{sca_loop, BudgetReading, RadiationVector, ScaConfig, SurrogateState};

const NOISE: f64 = 1e-12;
const R_MIN: f64 = 0.5;

const C1_GAIN_BAND: (f64, f64) = (0.05, 0.25);
const C1_WIN_FRACTION: f64 = 0.95;
const C1_WIN_SLACK: f64 = 1e-9;
const C2_ALLOWED_INVERSIONS: usize = 1;
const C4_MEAN_GAP: f64 = 0.02;
const C4_PER_TRIAL_SLACK: f64 = 1e-6;
const C5_INSTANCES: usize = 200;
const C5_RESOLUTION: f64 = 1e-3;
const C5_GRID_SLACK: f64 = 2e-3;
const C5_RATE_TOL: f64 = 1e-9;
const C6_TIGHTNESS: f64 = 1e-10;
const C6_MINORIZATION: f64 = 1e-9;
const C6_INSTANCES: usize = 20;
const C6_PERTURBATIONS: usize = 1000;
const C6_SCA_INSTANCES: usize = 100;
const C6_MONOTONE_SLACK: f64 = 1e-9;
const C7_INSTANCES: u64 = 20;
const C7_SAMPLES: usize = 1_000_000;
const C7_SLACK: f64 = 1e-2;
const C8_ROUND_TRIP: f64 = 1e-10;
const C8_EPR: f64 = 1e-12;
const C8_TELESCOPING: f64 = 1e-12;
const C8_VECTORS: usize = 1000;
const C9_QOS_SLACK: f64 = 1e-6;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, criterion: usize, pass: bool, detail: String, started: Instant) {
        if !pass {
            self.failures += 1;
        }
        println!(
            "criterion {criterion}: {} {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
    }
}

fn load(name: &str) -> ExperimentConfig {
    let path = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/configs")).join(name);
    ExperimentConfig::load(&path, &[]).expect("shipped config loads")
}

fn rows(out: &ExperimentOutput, sweep: usize, scheme: Scheme) -> Vec<&TrialRecord> {
    out.records.iter().filter(|r| r.sweep_value == sweep && r.scheme == scheme).collect()
}

fn summary(out: &ExperimentOutput, sweep: usize, scheme: Scheme) -> &SummaryRow {
    out.summary.iter().find(|r| r.sweep_value == sweep && r.scheme == scheme).expect("summary row")
}

/// `(gpr, other)` sum rates on trials where both are feasible.
fn paired(out: &ExperimentOutput, sweep: usize, other: Scheme) -> Vec<(f64, f64)> {
    let gpr = rows(out, sweep, Scheme::Gpr);
    rows(out, sweep, other)
        .into_iter()
        .filter_map(|o| {
            let g = gpr.iter().find(|g| g.trial == o.trial)?;
            (g.feasible && o.feasible).then_some((g.sum_rate, o.sum_rate))
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_series(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" / ")
}

fn criterion_1(report: &mut Report, sweep_n: &ExperimentOutput, started: Instant) {
    let pairs = paired(sweep_n, 20, Scheme::EprActivation);
    let gain = mean(&pairs.iter().map(|(g, e)| (g - e) / e).collect::<Vec<_>>());
    let wins = pairs.iter().filter(|(g, e)| *g >= e - C1_WIN_SLACK).count();
    let win_fraction = wins as f64 / pairs.len() as f64;
    let all_active = summary(sweep_n, 20, Scheme::EprAll).gpr_relative_gain.unwrap_or(f64::NAN);
    let pass =
        !pairs.is_empty() && (C1_GAIN_BAND.0..=C1_GAIN_BAND.1).contains(&gain) && win_fraction >= C1_WIN_FRACTION;
    report.line(
        1,
        pass,
        format!(
            "mean paired gain over greedy activation {:.2}% (band {:.0}%..{:.0}%), GPR >= EPR on {wins}/{} trials; \
             gain over all-active EPR {:.2}%",
            100.0 * gain,
            100.0 * C1_GAIN_BAND.0,
            100.0 * C1_GAIN_BAND.1,
            pairs.len(),
            100.0 * all_active
        ),
        started,
    );
}

fn criterion_2(report: &mut Report, sweep_n: &ExperimentOutput, started: Instant) {
    let points = [4, 8, 12, 16, 20];
    let gpr: Vec<&SummaryRow> = points.iter().map(|&n| summary(sweep_n, n, Scheme::Gpr)).collect();
    let epr: Vec<f64> = points.iter().map(|&n| summary(sweep_n, n, Scheme::EprActivation).mean_sum_rate).collect();
    let mut inversions = 0;
    let mut within_error = true;
    for w in gpr.windows(2) {
        if w[1].mean_sum_rate < w[0].mean_sum_rate {
            inversions += 1;
            // The larger standard error of the two adjacent means.
            within_error &= w[0].mean_sum_rate - w[1].mean_sum_rate <= w[0].std_error.max(w[1].std_error);
        }
    }
    let first_step = epr[1] - epr[0];
    let last_step = epr[4] - epr[3];
    let pass = inversions <= C2_ALLOWED_INVERSIONS && within_error && last_step < first_step;
    report.line(
        2,
        pass,
        format!(
            "GPR means over N = 4..20: {} ({inversions} inversion(s), within 1 SE: {within_error}); \
             EPR first step {first_step:+.3}, last step {last_step:+.3}",
            fmt_series(&gpr.iter().map(|r| r.mean_sum_rate).collect::<Vec<_>>())
        ),
        started,
    );
}

fn criterion_3(report: &mut Report, sweep_k: &ExperimentOutput, started: Instant) {
    let points = [2, 3, 4, 5];
    let means = |s| points.iter().map(|&k| summary(sweep_k, k, s).mean_sum_rate).collect::<Vec<_>>();
    let gpr = means(Scheme::Gpr);
    let epr = means(Scheme::EprActivation);
    let non_increasing = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    let dominates = gpr.iter().zip(&epr).all(|(g, e)| g >= e);
    let pass = non_increasing(&gpr) && non_increasing(&epr) && dominates;
    report.line(
        3,
        pass,
        format!(
            "K = 2..5 means, GPR {} / EPR {}; GPR >= EPR at every K: {dominates}",
            fmt_series(&gpr),
            fmt_series(&epr)
        ),
        started,
    );
}

fn criterion_4(report: &mut Report, sic: &ExperimentOutput, started: Instant) {
    let n = sic.records[0].sweep_value;
    let pairs = paired(sic, n, Scheme::ExhaustiveSic);
    let dynamic = summary(sic, n, Scheme::Gpr).mean_sum_rate;
    let exhaustive = summary(sic, n, Scheme::ExhaustiveSic).mean_sum_rate;
    let gap = (dynamic - exhaustive).abs() / exhaustive;
    let worst = pairs.iter().map(|(d, e)| e - d).fold(f64::INFINITY, f64::min);
    let pass = !pairs.is_empty() && gap <= C4_MEAN_GAP && worst >= -C4_PER_TRIAL_SLACK;
    report.line(
        4,
        pass,
        format!(
            "dynamic {dynamic:.4} vs exhaustive {exhaustive:.4}, relative gap {:.3}%, \
             worst per-trial exhaustive - dynamic {worst:+.2e} over {} trials",
            100.0 * gap,
            pairs.len()
        ),
        started,
    );
}

fn geometry_channels(rng: &mut ChaCha8Rng, k: usize, n: usize) -> ChannelMatrix {
    let layout = SystemLayout::new(&LayoutParams { n_antennas: n, ..Default::default() }).unwrap();
    let users = sample_users(k, 10.0, 6.0, rng.gen()).unwrap();
    layout.channels(&users, NOISE).unwrap()
}

fn criterion_5(report: &mut Report, started: Instant) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_gap, mut worst_rate, mut evaluated, mut infeasible_agree) = (f64::INFINITY, 0.0f64, 0, 0);
    let mut disagreements = 0;
    for i in 0..C5_INSTANCES {
        let k = 2 + i % 2;
        let n = rng.gen_range(2..=20);
        let ch = geometry_channels(&mut rng, k, n);
        let p = RadiationVector::random(&mut rng, n, 1.0, BudgetReading::Amplitude).unwrap();
        let gains = EffectiveGains::from_channels(&ch, p.as_slice()).unwrap();
        let qos = QosParams::uniform(k, R_MIN).unwrap();
        let order = gains.ascending_order();
        let grid = grid_alpha_oracle(gains.as_slice(), &qos, NOISE, C5_RESOLUTION).unwrap();
        match closed_form_alpha(&gains, &order, &qos) {
            Ok(alpha) => {
                evaluated += 1;
                let rates = user_rates(&gains, &alpha, &order).unwrap();
                let total: f64 = rates.iter().sum();
                if grid.is_feasible() {
                    worst_gap = worst_gap.min(total - grid.sum_rate);
                }
                for m in 0..k - 1 {
                    let user = order.user_at(m);
                    if alpha.as_slice()[user] > 0.0 {
                        worst_rate = worst_rate.max((rates[user] - R_MIN).abs());
                    }
                }
            }
            Err(_) if !grid.is_feasible() => infeasible_agree += 1,
            Err(_) => disagreements += 1,
        }
    }
    let pass = evaluated > 0 && disagreements == 0 && worst_gap >= -C5_GRID_SLACK && worst_rate <= C5_RATE_TOL;
    report.line(
        5,
        pass,
        format!(
            "{evaluated} feasible instances, worst closed-form minus grid {worst_gap:+.2e} (slack {C5_GRID_SLACK:.0e}), \
             worst |R_i - R_min| {worst_rate:.1e}; {infeasible_agree} infeasible on both, {disagreements} disagreements"
        ),
        started,
    );
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let rank = rng.gen_range(1..=n);
    let x = DMatrix::from_fn(n, rank, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    &x * x.transpose() * scale
}

fn criterion_6(report: &mut Report, started: Instant) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst_tight, mut violations, mut checks) = (0.0f64, 0usize, 0usize);
    for _ in 0..C6_INSTANCES {
        let k = rng.gen_range(2..=3);
        let n = rng.gen_range(2..=8);
        let ch = geometry_channels(&mut rng, k, n);
        let p = RadiationVector::random(&mut rng, n, 1.0, BudgetReading::Amplitude).unwrap();
        let w: Vec<f64> = (0..k).map(|_| 0.05 + rng.gen::<f64>()).collect();
        let s: f64 = w.iter().sum();
        let alpha = PowerAllocation::new(w.iter().map(|v| v / s).collect()).unwrap();
        let order = EffectiveGains::from_channels(&ch, p.as_slice()).unwrap().ascending_order();
        let state = SurrogateState::new(&p, &alpha, &order, &ch).unwrap();
        let scale = state.q0(0).norm() / n as f64;
        for m in 0..k {
            let q0 = state.q0(m);
            worst_tight = worst_tight.max((state.surrogate_term(m, &q0) - state.exact_term(m, &q0)).abs());
            for j in m + 1..k {
                let q1 = state.q0(m + 1);
                worst_tight =
                    worst_tight.max((state.surrogate_sic(m, j, &q0, &q1) - state.exact_sic(m, j, &q0, &q1)).abs());
            }
        }
        for _ in 0..C6_PERTURBATIONS {
            // Perturb every expansion matrix by an independent PSD term.
            let q: Vec<DMatrix<f64>> = (0..=k)
                .map(|m| {
                    let size = scale * 4.0 * rng.gen::<f64>();
                    state.q0(m) * rng.gen::<f64>() + random_psd(&mut rng, n, size)
                })
                .collect();
            for m in 0..k {
                checks += 1;
                if state.surrogate_term(m, &q[m]) > state.exact_term(m, &q[m]) + C6_MINORIZATION {
                    violations += 1;
                }
                for j in m + 1..k {
                    checks += 1;
                    if state.surrogate_sic(m, j, &q[m], &q[m + 1])
                        > state.exact_sic(m, j, &q[m], &q[m + 1]) + C6_MINORIZATION
                    {
                        violations += 1;
                    }
                }
            }
        }
    }
    let (mut monotone, mut runs) = (true, 0);
    let mut worst_drop = 0.0f64;
    while runs < C6_SCA_INSTANCES {
        let k = rng.gen_range(2..=3);
        let n = rng.gen_range(2..=12);
        let ch = geometry_channels(&mut rng, k, n);
        let qos = QosParams::uniform(k, R_MIN).unwrap();
        let p0 = RadiationVector::random(&mut rng, n, 1.0, BudgetReading::Amplitude).unwrap();
        let gains = EffectiveGains::from_channels(&ch, p0.as_slice()).unwrap();
        let order = gains.ascending_order();
        let Ok(alpha) = closed_form_alpha(&gains, &order, &qos) else {
            continue;
        };
        runs += 1;
        let out = sca_loop(&p0, &alpha, &order, &ch, &qos, &ScaConfig::default()).unwrap();
        for w in out.trajectory.windows(2) {
            let drop = w[0].objective - w[1].objective;
            worst_drop = worst_drop.max(drop);
            monotone &= drop <= C6_MONOTONE_SLACK;
        }
    }
    let pass = worst_tight <= C6_TIGHTNESS && violations == 0 && monotone;
    report.line(
        6,
        pass,
        format!(
            "worst tightness gap {worst_tight:.1e}, {violations} minorization violations in {checks} checks, \
             {runs} SCA trajectories monotone: {monotone} (worst drop {worst_drop:.1e})"
        ),
        started,
    );
}

fn criterion_7(report: &mut Report, started: Instant) {
    let layout = SystemLayout::new(&LayoutParams { n_antennas: 3, ..Default::default() }).unwrap();
    let qos = QosParams::uniform(2, R_MIN).unwrap();
    let (mut worst, mut compared) = (f64::INFINITY, 0);
    for trial in 0..C7_INSTANCES {
        let users = sample_users(2, 10.0, 6.0, 1000 + trial).unwrap();
        let ch = layout.channels(&users, NOISE).unwrap();
        let ao = ao_optimize(&ch, &qos, 1.0, &AoConfig::default()).unwrap();
        let oracle = random_p_oracle(&ch, &qos, 1.0, BudgetReading::Amplitude, C7_SAMPLES, trial).unwrap();
        if oracle.feasible_samples > 0 {
            compared += 1;
            let ao_rate = if ao.is_feasible() { ao.sum_rate } else { f64::NEG_INFINITY };
            worst = worst.min(ao_rate - oracle.sum_rate);
        }
    }
    let pass = compared > 0 && worst >= -C7_SLACK;
    report.line(
        7,
        pass,
        format!(
            "{compared} instances, worst AO minus best of {C7_SAMPLES} samples {worst:+.2e} (slack {C7_SLACK:.0e})"
        ),
        started,
    );
}

fn criterion_8(report: &mut Report, started: Instant) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst_delta, mut worst_beta, mut worst_tele, mut worst_space, mut worst_epr) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let physics = CouplingPhysicsParams::default();
    for _ in 0..C8_VECTORS {
        let n = rng.gen_range(1..=30);
        // 0.64^30 keeps the guide from draining, where couplings are undetermined.
        let delta: Vec<f64> = (0..n).map(|_| 0.6 * rng.gen::<f64>()).collect();
        let cv = CouplingVector::new(delta.clone()).unwrap();
        let beta = couplings_to_fractions(&cv);
        worst_tele = worst_tele.max((beta.total() + cv.residual() - 1.0).abs());
        let back = fractions_to_couplings(&beta).unwrap();
        for (a, b) in delta.iter().zip(back.as_slice()) {
            worst_delta = worst_delta.max((a - b).abs());
        }

        let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let s: f64 = w.iter().sum::<f64>() / rng.gen_range(0.05..0.999);
        let target: Vec<f64> = w.iter().map(|v| v / s).collect();
        let again =
            couplings_to_fractions(&fractions_to_couplings(&PowerFractions::new(target.clone()).unwrap()).unwrap());
        for (a, b) in target.iter().zip(again.as_slice()) {
            worst_beta = worst_beta.max((a - b).abs());
        }

        let spacing = rng.gen_range(2e-3..2e-2);
        let delta = spacing_to_coupling(spacing, &physics).unwrap();
        worst_space = worst_space.max((coupling_to_spacing(delta, &physics).unwrap() - spacing).abs() / spacing);

        let p_eq = rng.gen_range(0.01..1.0) / n as f64;
        for b in couplings_to_fractions(&epr_couplings(n, p_eq).unwrap()).as_slice() {
            worst_epr = worst_epr.max((b - p_eq).abs());
        }
    }
    let pass = worst_delta <= C8_ROUND_TRIP
        && worst_beta <= C8_ROUND_TRIP
        && worst_space <= C8_ROUND_TRIP
        && worst_epr <= C8_EPR
        && worst_tele <= C8_TELESCOPING;
    report.line(
        8,
        pass,
        format!(
            "couplings {worst_delta:.1e}, fractions {worst_beta:.1e}, spacing {worst_space:.1e} (rel), \
             equal radiation {worst_epr:.1e}, telescoping {worst_tele:.1e} over {C8_VECTORS} vectors"
        ),
        started,
    );
}

fn criterion_9(report: &mut Report, outputs: &[&ExperimentOutput], started: Instant) {
    let ao_rows: Vec<&TrialRecord> = outputs
        .iter()
        .flat_map(|o| o.records.iter())
        .filter(|r| matches!(r.scheme, Scheme::Gpr | Scheme::ExhaustiveSic))
        .collect();
    let feasible: Vec<&&TrialRecord> = ao_rows.iter().filter(|r| r.feasible).collect();
    let qos_bad = feasible.iter().filter(|r| r.per_user_rates.iter().any(|&v| v < R_MIN - C9_QOS_SLACK)).count();
    let sic_bad = feasible.iter().filter(|r| !r.sic_feasible).count();
    let errors = ao_rows.iter().filter(|r| r.status == "error").count();
    let pass = !feasible.is_empty() && qos_bad == 0 && sic_bad == 0 && errors == 0;
    report.line(
        9,
        pass,
        format!(
            "{} optimizer results ({} feasible, {errors} errors): {qos_bad} below R_min, {sic_bad} SIC violations",
            ao_rows.len(),
            feasible.len()
        ),
        started,
    );
}

fn records_bytes(records: &[TrialRecord]) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.csv");
    write_records(&path, records).unwrap();
    std::fs::read(path).unwrap()
}

fn criterion_10(
    report: &mut Report,
    sic_cfg: &ExperimentConfig,
    sic: &ExperimentOutput,
    sweep_n: &ExperimentOutput,
    started: Instant,
) {
    let again = run_experiment(sic_cfg).unwrap();
    let same_rerun = records_bytes(&sic.records) == records_bytes(&again.records);

    // The N = 20 slice of the antenna sweep, recomputed as a standalone run.
    let mut single = load("defaults.toml");
    single.experiment.trials = 20;
    let standalone = run_experiment(&single).unwrap();
    let slice: Vec<TrialRecord> =
        sweep_n.records.iter().filter(|r| r.sweep_value == 20 && r.trial < 20).cloned().collect();
    let same_slice = records_bytes(&slice) == records_bytes(&standalone.records);
    report.line(
        10,
        same_rerun && same_slice,
        format!("re-run byte-identical: {same_rerun}; sweep slice equals standalone run: {same_slice}"),
        started,
    );
}

fn main() -> ExitCode {
    // Skip under `cargo test -- --list` and similar harness probes.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut report = Report { failures: 0 };

    let t = Instant::now();
    let sweep_n = run_experiment(&load("vary_antennas.toml")).unwrap();
    println!("antenna sweep done [{:.1}s]", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let sweep_k = run_experiment(&load("vary_users.toml")).unwrap();
    println!("user sweep done [{:.1}s]", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let sic_cfg = load("sic_compare.toml");
    let sic = run_experiment(&sic_cfg).unwrap();
    println!("ordering comparison done [{:.1}s]", t.elapsed().as_secs_f64());

    criterion_1(&mut report, &sweep_n, Instant::now());
    criterion_2(&mut report, &sweep_n, Instant::now());
    criterion_3(&mut report, &sweep_k, Instant::now());
    criterion_4(&mut report, &sic, Instant::now());
    criterion_5(&mut report, Instant::now());
    criterion_6(&mut report, Instant::now());
    criterion_7(&mut report, Instant::now());
    criterion_8(&mut report, Instant::now());
    criterion_9(&mut report, &[&sweep_n, &sweep_k, &sic], Instant::now());
    criterion_10(&mut report, &sic_cfg, &sic, &sweep_n, Instant::now());

    println!("{} of 10 criteria failed", report.failures);
    if report.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
