//! Experiment configuration: TOML with `[experiment]`, `[physics]`,
//! `[solver]` and `[output]` sections, plus dotted `section.key=value`
//! overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ao::{AoConfig, SicMode};
use crate::baselines::ActivationStrategy;
use crate::error::{Error, Result};
use crate::geometry::LayoutParams;
use crate::sca::{BudgetReading, ScaConfig, SicSurrogate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    VaryAntennas,
    VaryUsers,
    SicCompare,
    Single,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::VaryAntennas => "vary-antennas",
            Self::VaryUsers => "vary-users",
            Self::SicCompare => "sic-compare",
            Self::Single => "single",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vary-antennas" => Ok(Self::VaryAntennas),
            "vary-users" => Ok(Self::VaryUsers),
            "sic-compare" => Ok(Self::SicCompare),
            "single" => Ok(Self::Single),
            other => Err(Error::InvalidParameter(format!("unknown experiment kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub trials: usize,
    pub seed: u64,
    pub n_antennas: usize,
    pub n_users: usize,
    /// Values of the swept quantity: antenna counts for `vary-antennas`,
    /// user counts for `vary-users`. Ignored otherwise.
    #[serde(default)]
    pub sweep: Vec<usize>,
    pub activation: ActivationStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    pub carrier_frequency_hz: f64,
    pub n_eff: f64,
    pub kappa_db_per_m: f64,
    pub height_m: f64,
    /// Extent along the waveguide.
    pub d1_m: f64,
    pub d2_m: f64,
    pub noise_dbm: f64,
    pub power_budget_w: f64,
    pub r_min: f64,
    pub free_space_phase: bool,
    pub budget_reading: BudgetReading,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub eps_outer: f64,
    pub max_outer: usize,
    pub eps_sca: f64,
    pub max_sca_iters: usize,
    pub qos_slack: f64,
    pub sic_surrogate: SicSurrogate,
    pub exhaustive_probes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub plot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub physics: PhysicsSection,
    pub solver: SolverSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sca = ScaConfig::default();
        let ao = AoConfig::default();
        Self {
            experiment: ExperimentSection {
                kind: ExperimentKind::Single,
                trials: 100,
                seed: 2025,
                n_antennas: 20,
                n_users: 3,
                sweep: Vec::new(),
                activation: ActivationStrategy::Greedy,
            },
            physics: PhysicsSection {
                carrier_frequency_hz: 28e9,
                n_eff: 1.4,
                kappa_db_per_m: 0.08,
                height_m: 3.0,
                d1_m: 10.0,
                d2_m: 6.0,
                noise_dbm: -90.0,
                power_budget_w: 1.0,
                r_min: 0.5,
                free_space_phase: false,
                budget_reading: BudgetReading::Amplitude,
            },
            solver: SolverSection {
                eps_outer: ao.eps_outer,
                max_outer: ao.max_outer,
                eps_sca: sca.eps_sca,
                max_sca_iters: sca.max_iters,
                qos_slack: ao.qos_slack,
                sic_surrogate: sca.sic_surrogate,
                exhaustive_probes: ao.exhaustive_probes,
            },
            output: OutputSection { dir: PathBuf::from("results"), plot: true },
        }
    }
}

/// `10^((dbm - 30) / 10)` W; exact whenever the exponent is an integer.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    let exponent = (dbm - 30.0) / 10.0;
    if exponent.fract() == 0.0 && exponent.abs() < 300.0 {
        return format!("1e{}", exponent as i64).parse().expect("valid float literal");
    }
    10f64.powf(exponent)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

fn config_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Config { path: path.to_path_buf(), message: message.into() }
}

/// Sets `section.key` in a parsed table; the value is read as a TOML
/// literal, falling back to a bare string.
fn apply_override(table: &mut toml::Table, entry: &str, path: &Path) -> Result<()> {
    let (key, raw) =
        entry.split_once('=').ok_or_else(|| config_error(path, format!("override {entry:?} is not key=value")))?;
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key just parsed"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut cursor = table;
    for section in sections {
        cursor = cursor
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| config_error(path, format!("override {key:?}: {section} is not a section")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses a config; keys missing from the file keep their defaults.
    pub fn from_toml_str(text: &str, path: &Path, overrides: &[String]) -> Result<Self> {
        let mut base = toml::Table::try_from(Self::default()).expect("defaults serialize");
        let file: toml::Table = text.parse().map_err(|e: toml::de::Error| config_error(path, e.to_string()))?;
        merge(&mut base, file);
        for entry in overrides {
            apply_override(&mut base, entry, path)?;
        }
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| config_error(path, e.to_string()))?;
        cfg.validate().map_err(|e| config_error(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text, path, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.trials == 0 {
            return Err(Error::InvalidParameter("experiment.trials must be at least 1".into()));
        }
        if e.n_antennas == 0 || e.n_users == 0 {
            return Err(Error::InvalidParameter("antenna and user counts must be at least 1".into()));
        }
        if matches!(e.kind, ExperimentKind::VaryAntennas | ExperimentKind::VaryUsers) {
            if e.sweep.is_empty() {
                return Err(Error::InvalidParameter("experiment.sweep must not be empty".into()));
            }
            if e.sweep.contains(&0) {
                return Err(Error::InvalidParameter("experiment.sweep values must be positive".into()));
            }
        }
        let p = &self.physics;
        for (name, v) in [
            ("physics.carrier_frequency_hz", p.carrier_frequency_hz),
            ("physics.n_eff", p.n_eff),
            ("physics.height_m", p.height_m),
            ("physics.d1_m", p.d1_m),
            ("physics.d2_m", p.d2_m),
            ("physics.power_budget_w", p.power_budget_w),
            ("physics.r_min", p.r_min),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(p.kappa_db_per_m.is_finite() && p.kappa_db_per_m >= 0.0) {
            return Err(Error::InvalidParameter("physics.kappa_db_per_m must be non-negative".into()));
        }
        if !p.noise_dbm.is_finite() {
            return Err(Error::InvalidParameter("physics.noise_dbm must be finite".into()));
        }
        self.ao_config(SicMode::Dynamic).validate()
    }

    pub fn noise_variance(&self) -> f64 {
        dbm_to_watts(self.physics.noise_dbm)
    }

    pub fn layout_params(&self, n_antennas: usize) -> LayoutParams {
        let p = &self.physics;
        LayoutParams {
            d1: p.d1_m,
            d2: p.d2_m,
            height: p.height_m,
            n_antennas,
            carrier_frequency: p.carrier_frequency_hz,
            n_eff: p.n_eff,
            kappa_db_per_m: p.kappa_db_per_m,
            free_space_phase: p.free_space_phase,
        }
    }

    pub fn ao_config(&self, sic_mode: SicMode) -> AoConfig {
        let s = &self.solver;
        AoConfig {
            eps_outer: s.eps_outer,
            max_outer: s.max_outer,
            sic_mode,
            budget_reading: self.physics.budget_reading,
            sca: ScaConfig {
                eps_sca: s.eps_sca,
                max_iters: s.max_sca_iters,
                sic_surrogate: s.sic_surrogate,
                ..ScaConfig::default()
            },
            qos_slack: s.qos_slack,
            exhaustive_probes: s.exhaustive_probes,
            ..AoConfig::default()
        }
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
