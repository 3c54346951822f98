//! Run configuration: a single JSON document describing one protocol and an
//! optional one-parameter sweep.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twist_echo::metrology::DetectionModel;
use twist_echo::oat_opt::{OatVariant, ReadoutObjective};
use twist_echo::spinor::{SpinorMeasurement, SpinorVariant};

/// Upper bound on the number of points a sweep may expand to.
pub const MAX_SWEEP_POINTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    TactEcho,
    OatEcho,
    OatEchoOpt,
    SpinorEcho,
    QfiScan,
    OneMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaPolicy {
    Fixed,
    Optimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    #[default]
    None,
    /// σ in units of the `J_z` eigenvalue spacing.
    Constant { sigma: f64 },
    /// σ = coefficient · √N.
    SqrtNScaled { coefficient: f64 },
    /// σ = √N / 2.
    CssLevel,
}

impl NoiseSpec {
    pub fn model(&self) -> Result<DetectionModel, ConfigError> {
        let model = match *self {
            NoiseSpec::None => Ok(DetectionModel::none()),
            NoiseSpec::Constant { sigma } => DetectionModel::constant(sigma),
            NoiseSpec::SqrtNScaled { coefficient } => DetectionModel::sqrt_n_scaled(coefficient),
            NoiseSpec::CssLevel => Ok(DetectionModel::css_level()),
        };
        model.map_err(|e| ConfigError::new("noise", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpinorOptions {
    pub variant: SpinorVariant,
    pub measurement: SpinorMeasurement,
}

impl Default for SpinorOptions {
    fn default() -> Self {
        Self {
            variant: SpinorVariant::Full,
            measurement: SpinorMeasurement::Cropped,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OatOptions {
    pub alignment: bool,
    pub readout: bool,
    pub objective: ReadoutObjective,
}

impl Default for OatOptions {
    fn default() -> Self {
        Self {
            alignment: true,
            readout: true,
            objective: ReadoutObjective::Snr,
        }
    }
}

impl OatOptions {
    pub fn variant(&self) -> OatVariant {
        match (self.alignment, self.readout) {
            (false, false) => OatVariant::Clean,
            (true, false) => OatVariant::Aligned,
            (false, true) => OatVariant::ReadoutOptimized,
            (true, true) => OatVariant::Combined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepParameter {
    #[serde(rename = "n_atoms")]
    NAtoms,
    #[serde(rename = "squeezing_db")]
    SqueezingDb,
    #[serde(rename = "t_chi")]
    TChi,
    #[serde(rename = "echo_ratio")]
    EchoRatio,
    #[serde(rename = "theta")]
    Theta,
    #[serde(rename = "noise.sigma")]
    NoiseSigma,
    #[serde(rename = "noise.coefficient")]
    NoiseCoefficient,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::NAtoms => "n_atoms",
            SweepParameter::SqueezingDb => "squeezing_db",
            SweepParameter::TChi => "t_chi",
            SweepParameter::EchoRatio => "echo_ratio",
            SweepParameter::Theta => "theta",
            SweepParameter::NoiseSigma => "noise.sigma",
            SweepParameter::NoiseCoefficient => "noise.coefficient",
        }
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Inclusive range `start, start + step, …` up to `stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl SweepRange {
    pub fn values(&self) -> Result<Vec<f64>, ConfigError> {
        let SweepRange { start, stop, step } = *self;
        if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
            return Err(ConfigError::new("sweep.range", "bounds and step must be finite"));
        }
        if step <= 0.0 {
            return Err(ConfigError::new("sweep.range.step", "must be positive"));
        }
        if stop < start {
            return Err(ConfigError::new("sweep.range.stop", "must not be below start"));
        }
        let span = (stop - start) / step;
        if span + 1.0 > MAX_SWEEP_POINTS as f64 {
            return Err(ConfigError::new(
                "sweep.range",
                format!("expands to more than {MAX_SWEEP_POINTS} points"),
            ));
        }
        let count = (span + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|i| start + i as f64 * step).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParameter,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub range: Option<SweepRange>,
}

impl Sweep {
    /// Sweep values in ascending order.
    pub fn values(&self) -> Result<Vec<f64>, ConfigError> {
        let mut values = match (&self.values, &self.range) {
            (Some(v), None) => v.clone(),
            (None, Some(r)) => r.values()?,
            _ => return Err(ConfigError::new("sweep", "exactly one of values / range is required")),
        };
        if values.is_empty() {
            return Err(ConfigError::new("sweep.values", "must not be empty"));
        }
        if values.len() > MAX_SWEEP_POINTS {
            return Err(ConfigError::new(
                "sweep.values",
                format!("more than {MAX_SWEEP_POINTS} points"),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ConfigError::new(format!("sweep.values[{i}]"), "must be finite"));
        }
        values.sort_by(f64::total_cmp);
        Ok(values)
    }
}

/// How the twisting strength is specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Twisting {
    SqueezingDb(f64),
    TChi(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: Protocol,
    pub n_atoms: usize,
    #[serde(default)]
    pub squeezing_db: Option<f64>,
    #[serde(default)]
    pub t_chi: Option<f64>,
    #[serde(default = "default_echo_ratio")]
    pub echo_ratio: f64,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub theta_policy: Option<ThetaPolicy>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub spinor: Option<SpinorOptions>,
    #[serde(default)]
    pub oat: Option<OatOptions>,
    #[serde(default)]
    pub output: Option<OutputSpec>,
}

fn default_echo_ratio() -> f64 {
    1.0
}

/// Schema or validation failure, located by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(if path.is_empty() { ".".to_string() } else { path }, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(path.display().to_string(), format!("cannot read config: {e}")))?;
        Self::from_json(&text)
    }

    /// Validates the configuration and expands it into sweep points, sorted by sweep value.
    pub fn points(&self) -> Result<Vec<Point>, ConfigError> {
        let twisting = match (self.squeezing_db, self.t_chi) {
            (Some(db), None) => Twisting::SqueezingDb(db),
            (None, Some(t)) => Twisting::TChi(t),
            _ => {
                return Err(ConfigError::new(
                    "squeezing_db",
                    "exactly one of squeezing_db / t_chi must be given",
                ))
            }
        };
        let theta_policy = self.theta_policy.unwrap_or(ThetaPolicy::Fixed);
        if self.spinor.is_some() && self.protocol != Protocol::SpinorEcho {
            return Err(ConfigError::new("spinor", "only valid for protocol spinor_echo"));
        }
        if self.oat.is_some() && self.protocol != Protocol::OatEchoOpt {
            return Err(ConfigError::new("oat", "only valid for protocol oat_echo_opt"));
        }
        let base = Point {
            protocol: self.protocol,
            n_atoms: self.n_atoms,
            twisting,
            echo_ratio: self.echo_ratio,
            theta: self.theta,
            theta_policy,
            noise: self.noise,
            spinor: self.spinor.unwrap_or_default(),
            oat: self.oat.unwrap_or_default(),
            sweep: None,
        };
        let Some(sweep) = &self.sweep else {
            base.validate()?;
            return Ok(vec![base]);
        };
        let values = sweep.values()?;
        let mut points = Vec::with_capacity(values.len());
        for v in values {
            let p = base.with_sweep(sweep.parameter, v)?;
            p.validate().map_err(|e| {
                if e.path == sweep.parameter.name() {
                    ConfigError::new("sweep.values", format!("{} = {v}: {}", sweep.parameter, e.message))
                } else {
                    e
                }
            })?;
            points.push(p);
        }
        Ok(points)
    }

    pub fn output(&self) -> OutputSpec {
        self.output.clone().unwrap_or_default()
    }
}

/// One fully specified evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub protocol: Protocol,
    pub n_atoms: usize,
    pub twisting: Twisting,
    pub echo_ratio: f64,
    pub theta: Option<f64>,
    pub theta_policy: ThetaPolicy,
    pub noise: NoiseSpec,
    pub spinor: SpinorOptions,
    pub oat: OatOptions,
    pub sweep: Option<(SweepParameter, f64)>,
}

impl Point {
    pub fn new(protocol: Protocol, n_atoms: usize, twisting: Twisting, echo_ratio: f64) -> Self {
        Self {
            protocol,
            n_atoms,
            twisting,
            echo_ratio,
            theta: None,
            theta_policy: ThetaPolicy::Fixed,
            noise: NoiseSpec::None,
            spinor: SpinorOptions::default(),
            oat: OatOptions::default(),
            sweep: None,
        }
    }

    pub fn fixed_theta(mut self, theta: f64) -> Self {
        self.theta = Some(theta);
        self.theta_policy = ThetaPolicy::Fixed;
        self
    }

    pub fn optimized_theta(mut self) -> Self {
        self.theta = None;
        self.theta_policy = ThetaPolicy::Optimize;
        self
    }

    pub fn noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self
    }

    pub fn spinor(mut self, variant: SpinorVariant, measurement: SpinorMeasurement) -> Self {
        self.spinor = SpinorOptions { variant, measurement };
        self
    }

    pub fn tagged(mut self, parameter: SweepParameter, value: f64) -> Self {
        self.sweep = Some((parameter, value));
        self
    }

    /// Copy with the swept field replaced by `value`.
    pub fn with_sweep(&self, parameter: SweepParameter, value: f64) -> Result<Self, ConfigError> {
        let mut p = *self;
        match parameter {
            SweepParameter::NAtoms => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(ConfigError::new(
                        "sweep.values",
                        format!("n_atoms = {value}: must be a positive integer"),
                    ));
                }
                p.n_atoms = value as usize;
            }
            SweepParameter::SqueezingDb => match p.twisting {
                Twisting::SqueezingDb(_) => p.twisting = Twisting::SqueezingDb(value),
                Twisting::TChi(_) => {
                    return Err(ConfigError::new(
                        "sweep.parameter",
                        "squeezing_db sweep requires squeezing_db in the base config",
                    ))
                }
            },
            SweepParameter::TChi => match p.twisting {
                Twisting::TChi(_) => p.twisting = Twisting::TChi(value),
                Twisting::SqueezingDb(_) => {
                    return Err(ConfigError::new(
                        "sweep.parameter",
                        "t_chi sweep requires t_chi in the base config",
                    ))
                }
            },
            SweepParameter::EchoRatio => p.echo_ratio = value,
            SweepParameter::Theta => {
                if p.theta_policy == ThetaPolicy::Optimize {
                    return Err(ConfigError::new(
                        "sweep.parameter",
                        "theta sweep requires theta_policy fixed",
                    ));
                }
                p.theta = Some(value);
            }
            SweepParameter::NoiseSigma => match p.noise {
                NoiseSpec::Constant { .. } => p.noise = NoiseSpec::Constant { sigma: value },
                _ => {
                    return Err(ConfigError::new(
                        "sweep.parameter",
                        "noise.sigma sweep requires constant noise",
                    ))
                }
            },
            SweepParameter::NoiseCoefficient => match p.noise {
                NoiseSpec::SqrtNScaled { .. } => p.noise = NoiseSpec::SqrtNScaled { coefficient: value },
                _ => {
                    return Err(ConfigError::new(
                        "sweep.parameter",
                        "noise.coefficient sweep requires sqrt_n_scaled noise",
                    ))
                }
            },
        }
        p.sweep = Some((parameter, value));
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let min_atoms = if self.protocol == Protocol::QfiScan { 2 } else { 1 };
        if self.n_atoms < min_atoms {
            return Err(ConfigError::new("n_atoms", format!("must be at least {min_atoms}")));
        }
        match self.twisting {
            Twisting::SqueezingDb(db) => {
                if !db.is_finite() || db >= 0.0 {
                    return Err(ConfigError::new("squeezing_db", "must be finite and negative"));
                }
            }
            Twisting::TChi(t) => {
                if !t.is_finite() {
                    return Err(ConfigError::new("t_chi", "must be finite"));
                }
            }
        }
        if !self.echo_ratio.is_finite() || self.echo_ratio < 0.0 {
            return Err(ConfigError::new("echo_ratio", "must be finite and non-negative"));
        }
        match (self.protocol, self.theta_policy, self.theta) {
            (Protocol::QfiScan, _, _) => {}
            (Protocol::OneMode, ThetaPolicy::Optimize, _) => {
                return Err(ConfigError::new(
                    "theta_policy",
                    "one_mode Fisher information does not depend on theta",
                ))
            }
            (_, ThetaPolicy::Fixed, None) => {
                return Err(ConfigError::new("theta", "required when theta_policy is fixed"))
            }
            (_, ThetaPolicy::Fixed, Some(t)) if !t.is_finite() => {
                return Err(ConfigError::new("theta", "must be finite"))
            }
            (_, ThetaPolicy::Optimize, Some(_)) => {
                return Err(ConfigError::new("theta", "must be absent when theta_policy is optimize"))
            }
            _ => {}
        }
        self.noise.model()?;
        if self.protocol == Protocol::SpinorEcho
            && self.spinor.measurement == SpinorMeasurement::Separate
            && !matches!(self.noise, NoiseSpec::None)
        {
            let zero = matches!(self.noise, NoiseSpec::Constant { sigma } if sigma == 0.0)
                || matches!(self.noise, NoiseSpec::SqrtNScaled { coefficient } if coefficient == 0.0);
            if !zero {
                return Err(ConfigError::new(
                    "noise",
                    "the separate spinor measurement is modelled without detection noise",
                ));
            }
        }
        if self.protocol == Protocol::OatEchoOpt && !self.oat.alignment && !self.oat.readout {
            return Err(ConfigError::new("oat", "at least one of alignment / readout must be enabled"));
        }
        Ok(())
    }

    pub fn sweep_value(&self) -> Option<f64> {
        self.sweep.map(|(_, v)| v)
    }
}
