//! Evaluation of sweep points into self-describing result rows.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use twist_echo::error::Error;
use twist_echo::metrology::{self, NoiseKind};
use twist_echo::oat_opt::{OatVariant, OatVariantEcho, ReadoutObjective};
use twist_echo::one_mode::{self, OneModeParams};
use twist_echo::protocols::{
    best_quadrature_squeezing, calibrate_twisting, css_fidelity, squeezing_parameter, EchoSequence, EchoSpec,
};
use twist_echo::spin::{build_twisting_hamiltonian, DickeState, SpinSystem, TwistingKind};
use twist_echo::spinor::{SpinorEcho, SpinorMeasurement, SpinorParams, SpinorVariant, ThreeModeSystem};

use crate::config::{Point, Protocol, SweepParameter, ThetaPolicy, Twisting};

/// Largest tolerated mismatch between `gain_db` and `10 log₁₀(F̃/N)`.
pub const GAIN_TOLERANCE_DB: f64 = 1e-9;

/// One evaluated sweep point: resolved inputs, outputs, and the error if the evaluation failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRow {
    pub index: usize,
    pub protocol: Protocol,
    pub n_atoms: usize,
    pub sweep_parameter: Option<SweepParameter>,
    pub sweep_value: Option<f64>,
    pub target_squeezing_db: Option<f64>,
    pub t_chi: Option<f64>,
    pub gamma: Option<f64>,
    pub echo_ratio: f64,
    pub theta_policy: ThetaPolicy,
    pub theta: Option<f64>,
    pub noise_kind: NoiseKind,
    pub noise_parameter: f64,
    pub sigma: f64,
    pub spinor_variant: Option<SpinorVariant>,
    pub spinor_measurement: Option<SpinorMeasurement>,
    pub oat_variant: Option<OatVariant>,
    pub oat_objective: Option<ReadoutObjective>,
    pub fisher_information: Option<f64>,
    pub noisy_fisher_information: Option<f64>,
    pub gain_db: Option<f64>,
    pub qfi: Option<f64>,
    pub magnification: Option<f64>,
    pub snr: Option<f64>,
    pub squeezing_db: Option<f64>,
    pub css_fidelity: Option<f64>,
    pub wall_time_ms: Option<f64>,
    pub error: Option<String>,
}

/// Column order of the tabular output.
pub const COLUMNS: [&str; 28] = [
    "index",
    "protocol",
    "n_atoms",
    "sweep_parameter",
    "sweep_value",
    "target_squeezing_db",
    "t_chi",
    "gamma",
    "echo_ratio",
    "theta_policy",
    "theta",
    "noise_kind",
    "noise_parameter",
    "sigma",
    "spinor_variant",
    "spinor_measurement",
    "oat_variant",
    "oat_objective",
    "fisher_information",
    "noisy_fisher_information",
    "gain_db",
    "qfi",
    "magnification",
    "snr",
    "squeezing_db",
    "css_fidelity",
    "wall_time_ms",
    "error",
];

fn label<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(v) => v.to_string(),
        Err(_) => String::new(),
    }
}

/// Floats at 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_float(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

fn opt_label<T: Serialize>(x: &Option<T>) -> String {
    x.as_ref().map(label).unwrap_or_default()
}

impl ResultRow {
    /// Fields in [`COLUMNS`] order.
    pub fn fields(&self) -> Vec<String> {
        vec![
            self.index.to_string(),
            label(&self.protocol),
            self.n_atoms.to_string(),
            opt_label(&self.sweep_parameter),
            opt_float(self.sweep_value),
            opt_float(self.target_squeezing_db),
            opt_float(self.t_chi),
            opt_float(self.gamma),
            format_float(self.echo_ratio),
            label(&self.theta_policy),
            opt_float(self.theta),
            label(&self.noise_kind),
            format_float(self.noise_parameter),
            format_float(self.sigma),
            opt_label(&self.spinor_variant),
            opt_label(&self.spinor_measurement),
            opt_label(&self.oat_variant),
            opt_label(&self.oat_objective),
            opt_float(self.fisher_information),
            opt_float(self.noisy_fisher_information),
            opt_float(self.gain_db),
            opt_float(self.qfi),
            opt_float(self.magnification),
            opt_float(self.snr),
            opt_float(self.squeezing_db),
            opt_float(self.css_fidelity),
            opt_float(self.wall_time_ms),
            self.error.clone().unwrap_or_default(),
        ]
    }

    /// Checks the row-level invariants.
    pub fn check(&self) -> Result<(), String> {
        if self.n_atoms == 0 {
            return Err("n_atoms must be positive".into());
        }
        let model = metrology::DetectionModel {
            kind: self.noise_kind,
            coefficient: self.noise_parameter,
        };
        let sigma = model.sigma(self.n_atoms);
        if (sigma - self.sigma).abs() > 1e-12 * sigma.max(1.0) {
            return Err(format!("sigma {} does not match the noise model ({sigma})", self.sigma));
        }
        if self.sweep_parameter.is_some() != self.sweep_value.is_some() {
            return Err("sweep parameter and value must be given together".into());
        }
        match (self.noisy_fisher_information, self.gain_db) {
            (Some(f), Some(g)) => {
                let expected = gain_db(f, self.n_atoms);
                if (g - expected).abs() > GAIN_TOLERANCE_DB {
                    return Err(format!("gain_db {g} inconsistent with F̃ = {f} ({expected})"));
                }
            }
            (None, None) => {}
            _ => return Err("gain_db and noisy_fisher_information must be given together".into()),
        }
        if self.error.is_some() && self.fisher_information.is_some() {
            return Err("failed rows carry no outputs".into());
        }
        Ok(())
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

pub fn gain_db(fisher: f64, n_atoms: usize) -> f64 {
    10.0 * (fisher / n_atoms as f64).log10()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Outputs {
    pub t_chi: Option<f64>,
    pub theta: Option<f64>,
    pub fisher_information: Option<f64>,
    pub noisy_fisher_information: Option<f64>,
    pub qfi: Option<f64>,
    pub magnification: Option<f64>,
    pub snr: Option<f64>,
    pub squeezing_db: Option<f64>,
    pub css_fidelity: Option<f64>,
}

/// Errors that point at a defect in the numerics rather than at the requested parameters.
pub fn is_internal(e: &Error) -> bool {
    matches!(
        e,
        Error::Numerical(_) | Error::NotHermitian { .. } | Error::ContractViolation(_) | Error::DimensionMismatch { .. }
    )
}

fn resolve_t_chi(point: &Point, kind: TwistingKind) -> Result<f64, Error> {
    match point.twisting {
        Twisting::TChi(t) => Ok(t),
        Twisting::SqueezingDb(db) => calibrate_twisting(SpinSystem::new(point.n_atoms)?, kind, db),
    }
}

fn prepared_squeezing(kind: TwistingKind, state: &DickeState) -> Option<f64> {
    match kind {
        TwistingKind::Tact => squeezing_parameter(state).ok().map(|s| s.db),
        TwistingKind::Oat => best_quadrature_squeezing(state).ok().map(|s| s.db),
    }
}

fn resolve_theta<F>(point: &Point, optimize: F) -> Result<(f64, Option<f64>), Error>
where
    F: FnOnce() -> Result<(f64, f64), Error>,
{
    match point.theta_policy {
        ThetaPolicy::Fixed => Ok((point.theta.unwrap_or(0.0), None)),
        ThetaPolicy::Optimize => optimize().map(|(t, f)| (t, Some(f))),
    }
}

fn evaluate_sequence(point: &Point, seq: &EchoSequence, kind: TwistingKind) -> Result<Outputs, Error> {
    let model = point.noise.model().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let (theta, noisy) = resolve_theta(point, || seq.fisher_optimal_theta(&model))?;
    let noisy = match noisy {
        Some(f) => f,
        None => seq.fisher(theta, &model)?,
    };
    let echoed = seq.echoed(theta)?;
    Ok(Outputs {
        t_chi: Some(seq.spec().t_chi),
        theta: Some(theta),
        fisher_information: Some(seq.fisher(theta, &metrology::DetectionModel::none())?),
        noisy_fisher_information: Some(noisy),
        qfi: Some(metrology::quantum_fisher_information(seq.prepared()).optimal),
        magnification: seq.magnification(theta).ok(),
        snr: seq.signal_to_noise(theta).ok(),
        squeezing_db: prepared_squeezing(kind, seq.prepared()),
        css_fidelity: Some(css_fidelity(&echoed).fidelity),
    })
}

fn evaluate_oat_variant(point: &Point) -> Result<Outputs, Error> {
    let t_chi = resolve_t_chi(point, TwistingKind::Oat)?;
    let echo = OatVariantEcho::new(point.n_atoms, t_chi, point.echo_ratio, point.oat.variant(), point.oat.objective)?;
    let model = point.noise.model().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let (theta, noisy) = resolve_theta(point, || echo.fisher_optimal_theta(&model))?;
    let seq = echo.configured(theta)?;
    let noisy = match noisy {
        Some(f) => f,
        None => seq.fisher(theta, &model)?,
    };
    let echoed = seq.echoed(theta)?;
    Ok(Outputs {
        t_chi: Some(t_chi),
        theta: Some(theta),
        fisher_information: Some(seq.fisher(theta, &metrology::DetectionModel::none())?),
        noisy_fisher_information: Some(noisy),
        qfi: Some(metrology::quantum_fisher_information(seq.prepared()).optimal),
        magnification: seq.magnification(theta).ok(),
        snr: seq.signal_to_noise(theta).ok(),
        squeezing_db: prepared_squeezing(TwistingKind::Oat, seq.prepared()),
        css_fidelity: Some(css_fidelity(&echoed).fidelity),
    })
}

fn evaluate_spinor(point: &Point) -> Result<Outputs, Error> {
    let t_chi = resolve_t_chi(point, TwistingKind::Tact)?;
    let system = ThreeModeSystem::new(point.n_atoms)?;
    let model = point.noise.model().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let measurement = point.spinor.measurement;
    let params = SpinorParams::compensated(system, t_chi, point.echo_ratio, point.theta.unwrap_or(0.0))?;
    let echo = SpinorEcho::new(system, params, point.spinor.variant)?;
    let (theta, noisy) = resolve_theta(point, || echo.fisher_optimal_theta(measurement, &model))?;
    let noisy = match noisy {
        Some(f) => f,
        None => echo.fisher(theta, measurement, &model)?,
    };
    Ok(Outputs {
        t_chi: Some(t_chi),
        theta: Some(theta),
        fisher_information: Some(echo.fisher(theta, measurement, &metrology::DetectionModel::none())?),
        noisy_fisher_information: Some(noisy),
        ..Outputs::default()
    })
}

fn evaluate_qfi(point: &Point) -> Result<Outputs, Error> {
    let t_chi = resolve_t_chi(point, TwistingKind::Tact)?;
    let system = SpinSystem::new(point.n_atoms)?;
    let h = build_twisting_hamiltonian(system, TwistingKind::Tact);
    let state = DickeState::pole(system).evolve(&h, t_chi)?;
    Ok(Outputs {
        t_chi: Some(t_chi),
        qfi: Some(metrology::quantum_fisher_information(&state).optimal),
        squeezing_db: prepared_squeezing(TwistingKind::Tact, &state),
        ..Outputs::default()
    })
}

fn evaluate_one_mode(point: &Point) -> Result<Outputs, Error> {
    let n = point.n_atoms as f64;
    let t_chi = match point.twisting {
        Twisting::TChi(t) => t,
        Twisting::SqueezingDb(db) => -db * std::f64::consts::LN_10 / (20.0 * n),
    };
    let model = point.noise.model().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let theta = point.theta.unwrap_or(0.0);
    let p = OneModeParams::from_two_mode(point.n_atoms, t_chi, theta, point.echo_ratio, model.sigma(point.n_atoms))?;
    let ideal = one_mode::ideal_phase_variance(&p)?;
    Ok(Outputs {
        t_chi: Some(t_chi),
        theta: Some(theta),
        fisher_information: Some(1.0 / ideal),
        noisy_fisher_information: Some(1.0 / one_mode::noisy_phase_variance(&p)?),
        qfi: Some(1.0 / ideal),
        magnification: Some(one_mode::one_mode_magnification(&p)?),
        snr: Some(one_mode::one_mode_snr(&p)?),
        squeezing_db: Some(-20.0 * p.gamma / std::f64::consts::LN_10),
        css_fidelity: None,
    })
}

pub fn evaluate(point: &Point) -> Result<Outputs, Error> {
    match point.protocol {
        Protocol::TactEcho | Protocol::OatEcho => {
            let kind = if point.protocol == Protocol::TactEcho {
                TwistingKind::Tact
            } else {
                TwistingKind::Oat
            };
            let t_chi = resolve_t_chi(point, kind)?;
            let spec = if kind == TwistingKind::Tact {
                EchoSpec::tact(point.n_atoms, t_chi, point.echo_ratio, point.theta.unwrap_or(0.0))?
            } else {
                EchoSpec::oat(point.n_atoms, t_chi, point.echo_ratio, point.theta.unwrap_or(0.0))?
            };
            evaluate_sequence(point, &EchoSequence::new(spec)?, kind)
        }
        Protocol::OatEchoOpt => evaluate_oat_variant(point),
        Protocol::SpinorEcho => evaluate_spinor(point),
        Protocol::QfiScan => evaluate_qfi(point),
        Protocol::OneMode => evaluate_one_mode(point),
    }
}

/// Row for `point`, timed if `timing` is set.
pub fn evaluate_row(index: usize, point: &Point, timing: bool) -> (ResultRow, Option<Error>) {
    let start = Instant::now();
    let result = evaluate(point);
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let model = point.noise.model().unwrap_or_else(|_| metrology::DetectionModel::none());
    let mut row = ResultRow {
        index,
        protocol: point.protocol,
        n_atoms: point.n_atoms,
        sweep_parameter: point.sweep.map(|(p, _)| p),
        sweep_value: point.sweep_value(),
        target_squeezing_db: match point.twisting {
            Twisting::SqueezingDb(db) => Some(db),
            Twisting::TChi(_) => None,
        },
        t_chi: match point.twisting {
            Twisting::TChi(t) => Some(t),
            Twisting::SqueezingDb(_) => None,
        },
        gamma: None,
        echo_ratio: point.echo_ratio,
        theta_policy: point.theta_policy,
        theta: point.theta,
        noise_kind: model.kind,
        noise_parameter: model.coefficient,
        sigma: model.sigma(point.n_atoms),
        spinor_variant: (point.protocol == Protocol::SpinorEcho).then_some(point.spinor.variant),
        spinor_measurement: (point.protocol == Protocol::SpinorEcho).then_some(point.spinor.measurement),
        oat_variant: (point.protocol == Protocol::OatEchoOpt).then(|| point.oat.variant()),
        oat_objective: (point.protocol == Protocol::OatEchoOpt).then_some(point.oat.objective),
        fisher_information: None,
        noisy_fisher_information: None,
        gain_db: None,
        qfi: None,
        magnification: None,
        snr: None,
        squeezing_db: None,
        css_fidelity: None,
        wall_time_ms: timing.then_some(elapsed),
        error: None,
    };
    match result {
        Ok(out) => {
            if out.t_chi.is_some() {
                row.t_chi = out.t_chi;
            }
            if out.theta.is_some() {
                row.theta = out.theta;
            }
            row.fisher_information = out.fisher_information;
            row.noisy_fisher_information = out.noisy_fisher_information;
            row.gain_db = out.noisy_fisher_information.map(|f| gain_db(f, point.n_atoms));
            row.qfi = out.qfi;
            row.magnification = out.magnification;
            row.snr = out.snr;
            row.squeezing_db = out.squeezing_db;
            row.css_fidelity = out.css_fidelity;
            row.gamma = row.t_chi.map(|t| t * point.n_atoms as f64);
            (row, None)
        }
        Err(e) => {
            row.gamma = row.t_chi.map(|t| t * point.n_atoms as f64);
            row.error = Some(e.to_string());
            (row, Some(e))
        }
    }
}

/// Outcome of a batch: rows in input order and the errors of failed rows.
#[derive(Debug, Clone)]
pub struct Batch {
    pub rows: Vec<ResultRow>,
    pub errors: Vec<Error>,
}

impl Batch {
    pub fn all_failed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(ResultRow::failed)
    }

    pub fn internal_failure(&self) -> bool {
        self.errors.iter().any(is_internal)
    }
}

/// Evaluates every point on a pool of `threads` workers (machine parallelism if `None`).
/// Results are collected by index, so the output does not depend on the worker count.
pub fn run_points(points: &[Point], threads: Option<usize>, timing: bool) -> Result<Batch, rayon::ThreadPoolBuildError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build()?;
    let results: Vec<(ResultRow, Option<Error>)> = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(i, p)| evaluate_row(i, p, timing))
            .collect()
    });
    let (rows, errors): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(Batch {
        rows,
        errors: errors.into_iter().flatten().collect(),
    })
}
