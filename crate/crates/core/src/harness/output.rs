//! CSV emission and re-reading. Comma delimiter, dot decimals, LF endings;
//! floats use the shortest representation that parses back exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::ExperimentKind;
use crate::harness::experiment::{ExperimentOutput, Scheme, SummaryRow, TrialRecord, TrialTiming};
use crate::harness::plot::{render_chart, Series};

pub const RECORDS_HEADER: [&str; 12] = [
    "trial",
    "sweep_value",
    "n_antennas",
    "n_users",
    "scheme",
    "status",
    "feasible",
    "sum_rate",
    "per_user_rates",
    "sic_feasible",
    "outer_iterations",
    "channel_hash",
];
pub const SUMMARY_HEADER: [&str; 8] = [
    "sweep_value",
    "scheme",
    "trials",
    "feasible",
    "feasible_fraction",
    "mean_sum_rate",
    "std_error",
    "gpr_relative_gain",
];
pub const TIMINGS_HEADER: [&str; 4] = ["trial", "sweep_value", "scheme", "wall_time_s"];

fn csv_error(path: &Path, source: csv::Error) -> Error {
    Error::Csv { path: path.to_path_buf(), source }
}

/// Header first, written explicitly so empty tables still get one.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    wtr.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        wtr.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    wtr.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    rdr.deserialize().map(|r| r.map_err(|e| csv_error(path, e))).collect()
}

pub fn write_records(path: &Path, records: &[TrialRecord]) -> Result<()> {
    write_csv(path, &RECORDS_HEADER, records)
}

pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    read_csv(path)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_csv(path, &SUMMARY_HEADER, rows)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    read_csv(path)
}

pub fn write_timings(path: &Path, rows: &[TrialTiming]) -> Result<()> {
    write_csv(path, &TIMINGS_HEADER, rows)
}

/// One series per scheme: sweep value against mean sum rate, error bars of
/// one standard error.
pub fn chart_series(summary: &[SummaryRow]) -> Vec<Series> {
    let mut schemes: Vec<Scheme> = summary.iter().map(|r| r.scheme).collect();
    schemes.sort();
    schemes.dedup();
    schemes
        .into_iter()
        .map(|scheme| Series {
            label: scheme.label().to_string(),
            points: summary
                .iter()
                .filter(|r| r.scheme == scheme && r.mean_sum_rate.is_finite())
                .map(|r| (r.sweep_value as f64, r.mean_sum_rate, r.std_error))
                .collect(),
        })
        .collect()
}

fn x_label(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::VaryUsers => "number of users",
        _ => "number of pinching antennas",
    }
}

/// Writes `records.csv`, `summary.csv`, `timings.csv` and, if requested,
/// `<kind>.svg` into `dir`; returns the paths written.
pub fn emit_outputs(output: &ExperimentOutput, kind: ExperimentKind, dir: &Path, plot: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();
    let records = dir.join("records.csv");
    write_records(&records, &output.records)?;
    written.push(records);
    let summary = dir.join("summary.csv");
    write_summary(&summary, &output.summary)?;
    written.push(summary);
    let timings = dir.join("timings.csv");
    write_timings(&timings, &output.timings)?;
    written.push(timings);
    if plot {
        let svg = dir.join(format!("{}.svg", kind.label()));
        let chart = render_chart(
            &format!("Mean sum rate, {}", kind.label()),
            x_label(kind),
            "sum rate (bit/s/Hz)",
            &chart_series(&output.summary),
        );
        fs::write(&svg, chart).map_err(|source| Error::Io { path: svg.clone(), source })?;
        written.push(svg);
    }
    Ok(written)
}
