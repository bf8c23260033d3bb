//! Experiment configuration files (TOML).

use std::fmt;
use std::marker::PhantomData;
use std::path::PathBuf;

use bitstab::params::{InitialState, Overrides, Scheme, SystemModel};
use bitstab::{NoiseSpec, Real, TransmissionSchedule};
use nalgebra::DMatrix;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

pub const SCHEMA_VERSION: u32 = 1;

/// A constant that is either fixed in the file or derived (`"auto"`).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum Auto<T> {
    #[default]
    Auto,
    Value(T),
}

impl<T: Copy> Auto<T> {
    pub fn value(self) -> Option<T> {
        match self {
            Auto::Auto => None,
            Auto::Value(v) => Some(v),
        }
    }
}

impl<T: Serialize> Serialize for Auto<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Auto::Auto => s.serialize_str("auto"),
            Auto::Value(v) => v.serialize(s),
        }
    }
}

struct AutoVisitor<T>(PhantomData<T>);

impl<'de, T: Deserialize<'de>> Visitor<'de> for AutoVisitor<T> {
    type Value = Auto<T>;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a number or \"auto\"")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
        if v == "auto" {
            Ok(Auto::Auto)
        } else {
            Err(E::invalid_value(de::Unexpected::Str(v), &self))
        }
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Self::Value, E> {
        T::deserialize(de::value::I64Deserializer::new(v)).map(Auto::Value)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Self::Value, E> {
        T::deserialize(de::value::U64Deserializer::new(v)).map(Auto::Value)
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Self::Value, E> {
        T::deserialize(de::value::F64Deserializer::new(v)).map(Auto::Value)
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Auto<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(AutoVisitor(PhantomData))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Scalar plant `X <- gain X + Z - U`.
    #[serde(default)]
    pub gain: Option<f64>,
    /// Vector plant matrix, row major.
    #[serde(default)]
    pub a: Option<Vec<Vec<f64>>>,
    /// Control matrix; the identity when omitted.
    #[serde(default)]
    pub control: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub initial: InitialState,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSection {
    #[default]
    EveryStep,
    Periodic { pattern: Vec<bool>, density: f64, window: usize },
    /// `members` evenly spread slots in every `period` steps.
    EvenlySpread { members: usize, period: usize, density: f64 },
}

impl ScheduleSection {
    pub fn build(&self) -> bitstab::Result<TransmissionSchedule> {
        match self {
            Self::EveryStep => Ok(TransmissionSchedule::EveryStep),
            Self::Periodic { pattern, density, window } => {
                Ok(TransmissionSchedule::Periodic { pattern: pattern.clone(), density: *density, window: *window })
            }
            Self::EvenlySpread { members, period, density } => TransmissionSchedule::evenly_spread(*members, *period, *density),
        }
    }
}

fn default_delta() -> f64 {
    0.05
}

fn default_beta() -> f64 {
    1.0
}

fn default_failure_rate() -> f64 {
    1e-3
}

fn default_budget() -> usize {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(default)]
    pub bins: Auto<u32>,
    #[serde(default)]
    pub round_len: Auto<u32>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub moment_gap: Auto<f64>,
    #[serde(default)]
    pub noise_bound: Auto<f64>,
    #[serde(default)]
    pub probe: Auto<f64>,
    #[serde(default)]
    pub initial_bound: Auto<f64>,
    /// Moment order the constants are derived for; the noise's declared order
    /// when omitted, or 2 for noise with every moment finite.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub delay: u32,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_failure_rate")]
    pub failure_rate: f64,
    #[serde(default = "default_budget")]
    pub search_budget: usize,
}

impl Default for ControllerSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expectation {
    /// The moment plateaus and no trajectory diverges.
    Stable,
    /// The moment keeps growing.
    Unstable,
}

fn default_grid_points() -> usize {
    64
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Hard pathwise certificates; a failure makes the run fail.
    #[serde(default = "yes")]
    pub certificates: bool,
    #[serde(default = "yes")]
    pub tau_tail: bool,
    #[serde(default)]
    pub contraction: bool,
    #[serde(default)]
    pub noise_lags: Option<usize>,
    /// Largest `tau` tolerated in any round; exceeding it fails the run.
    #[serde(default)]
    pub max_tau: Option<u64>,
    #[serde(default)]
    pub expect: Option<Expectation>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub traces_dir: Option<PathBuf>,
    #[serde(default)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    pub horizon: usize,
    pub trajectories: usize,
    #[serde(default)]
    pub precision: Precision,
    pub model: ModelSection,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(format!("model.{name} must be a non-empty rectangular matrix"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.check_shape()?;
        Ok(cfg)
    }

    /// Structural problems the core validator cannot see.
    fn check_shape(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.horizon == 0 || self.trajectories == 0 {
            return Err("horizon and trajectories must be positive".into());
        }
        match (&self.model.gain, &self.model.a) {
            (Some(_), None) if self.model.control.is_none() => {}
            (Some(_), None) => return Err("model.control only applies to a matrix plant".into()),
            (None, Some(_)) if self.precision == Precision::F32 => return Err("matrix plants run in f64 only".into()),
            (None, Some(_)) => {}
            _ => return Err("model needs exactly one of `gain` and `a`".into()),
        }
        Ok(())
    }

    pub fn is_vector(&self) -> bool {
        self.model.a.is_some()
    }

    pub fn alpha(&self) -> f64 {
        self.controller.alpha.unwrap_or(if self.noise.alpha.is_finite() { self.noise.alpha } else { 2.0 })
    }

    pub fn scalar_model<R: Real>(&self) -> SystemModel<R> {
        let gain = self.model.gain.expect("scalar plant");
        SystemModel::scalar(R::lit(gain), self.noise.clone(), self.model.initial.clone())
    }

    pub fn vector_model(&self) -> Result<SystemModel<f64>, String> {
        let a = matrix("a", self.model.a.as_deref().expect("matrix plant"))?;
        let control = match &self.model.control {
            Some(rows) => matrix("control", rows)?,
            None => DMatrix::identity(a.nrows(), a.nrows()),
        };
        Ok(SystemModel::vector(a, control, self.noise.clone(), self.model.initial.clone()))
    }

    pub fn overrides<R: Real>(&self) -> Result<Overrides<R>, String> {
        let c = &self.controller;
        let lit = |v: Auto<f64>| v.value().map(R::lit);
        Ok(Overrides {
            bins: c.bins.value(),
            round_len: c.round_len.value(),
            delta: R::lit(c.delta),
            moment_gap: lit(c.moment_gap),
            noise_bound: lit(c.noise_bound),
            probe: lit(c.probe),
            initial_bound: lit(c.initial_bound),
            delay: c.delay,
            schedule: c.schedule.build().map_err(|e| e.to_string())?,
            scheme: c.scheme,
            failure_rate: c.failure_rate,
            search_budget: c.search_budget,
        })
    }
}
