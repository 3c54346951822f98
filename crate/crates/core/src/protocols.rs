//! Twisting-echo sequences and their protocol-level observables.
//!
//! The echo starts from the coherent state at the `+J_z` pole and applies
//!
//! 1. `U = exp(-i tχ H)` (squeezing),
//! 2. an optional pre-imprint rotation, then the phase imprint `exp(-iθ J_y)`,
//! 3. `U^{-r} = exp(+i r tχ H)` and an optional pre-readout rotation,
//! 4. a π/2 readout rotation (about y for TACT, about x for OAT) so that the
//!    final `J_z` count sits at mid-fringe.
//!
//! After the echo the TACT signal sits in `J_x`, the OAT signal in `J_y`;
//! the readout rotation maps that component onto `J_z`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::{self, Propagator};
use crate::metrology::{self, DetectionModel, OutcomeDistribution};
use crate::optimize::linspace;
use crate::spin::{
    build_spin_operator, build_twisting_hamiltonian, coherent_amplitudes, rotate_amplitudes, Axis, BandedOperator,
    DickeState, SpinComponent, SpinSystem, TwistingKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EchoProtocol {
    TactEcho,
    OatEcho,
}

impl EchoProtocol {
    pub fn twisting(self) -> TwistingKind {
        match self {
            EchoProtocol::TactEcho => TwistingKind::Tact,
            EchoProtocol::OatEcho => TwistingKind::Oat,
        }
    }

    /// Axis of the final π/2 mid-fringe rotation.
    pub fn readout_axis(self) -> Axis {
        match self {
            EchoProtocol::TactEcho => Axis::Y,
            EchoProtocol::OatEcho => Axis::X,
        }
    }

    /// Spin component carrying the signal just before the readout rotation.
    pub fn signal_axis(self) -> Axis {
        match self {
            EchoProtocol::TactEcho => Axis::X,
            EchoProtocol::OatEcho => Axis::Y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub axis: Axis,
    pub angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutRotation {
    Standard,
    None,
}

/// Full description of one echo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoSpec {
    pub protocol: EchoProtocol,
    pub n_atoms: usize,
    pub t_chi: f64,
    pub echo_ratio: f64,
    pub theta: f64,
    pub pre_imprint_rotation: Option<Rotation>,
    pub pre_readout_rotation: Option<Rotation>,
    pub readout_rotation: ReadoutRotation,
}

impl EchoSpec {
    pub fn new(protocol: EchoProtocol, n_atoms: usize, t_chi: f64, echo_ratio: f64, theta: f64) -> Result<Self> {
        let spec = Self {
            protocol,
            n_atoms,
            t_chi,
            echo_ratio,
            theta,
            pre_imprint_rotation: None,
            pre_readout_rotation: None,
            readout_rotation: ReadoutRotation::Standard,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn tact(n_atoms: usize, t_chi: f64, echo_ratio: f64, theta: f64) -> Result<Self> {
        Self::new(EchoProtocol::TactEcho, n_atoms, t_chi, echo_ratio, theta)
    }

    pub fn oat(n_atoms: usize, t_chi: f64, echo_ratio: f64, theta: f64) -> Result<Self> {
        Self::new(EchoProtocol::OatEcho, n_atoms, t_chi, echo_ratio, theta)
    }

    pub fn with_pre_imprint_rotation(mut self, axis: Axis, angle: f64) -> Self {
        self.pre_imprint_rotation = Some(Rotation { axis, angle });
        self
    }

    pub fn with_pre_readout_rotation(mut self, axis: Axis, angle: f64) -> Self {
        self.pre_readout_rotation = Some(Rotation { axis, angle });
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_echo_ratio(mut self, echo_ratio: f64) -> Self {
        self.echo_ratio = echo_ratio;
        self
    }

    pub fn without_readout(mut self) -> Self {
        self.readout_rotation = ReadoutRotation::None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_atoms == 0 {
            return Err(Error::InvalidArgument("atom number must be positive".into()));
        }
        if !(self.t_chi >= 0.0) || !self.t_chi.is_finite() {
            return Err(Error::InvalidArgument(format!("t_chi must be >= 0, got {}", self.t_chi)));
        }
        if !(self.echo_ratio >= 0.0) || !self.echo_ratio.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "echo ratio must be >= 0, got {}",
                self.echo_ratio
            )));
        }
        if !self.theta.is_finite() {
            return Err(Error::InvalidArgument("theta must be finite".into()));
        }
        for rot in [self.pre_imprint_rotation, self.pre_readout_rotation].into_iter().flatten() {
            if !rot.angle.is_finite() {
                return Err(Error::InvalidArgument("rotation angle must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn system(&self) -> Result<SpinSystem> {
        SpinSystem::new(self.n_atoms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// After the squeezing evolution.
    Prepared,
    /// After the optional pre-imprint rotation and the phase imprint.
    Imprinted,
    /// After the inverse evolution and the optional pre-readout rotation.
    Echoed,
    /// After the π/2 readout rotation.
    Readout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSnapshot {
    pub label: Stage,
    pub state: DickeState,
}

/// Reusable echo machinery for one `(protocol, N, tχ)` triple.
///
/// Keeps the Hamiltonian (and its cached eigendecomposition for small
/// systems) and the θ-independent prepared state, so scans over θ, r, or
/// rotation angles only pay for the downstream part.
#[derive(Debug, Clone)]
pub struct EchoSequence {
    spec: EchoSpec,
    system: SpinSystem,
    hamiltonian: BandedOperator,
    jy: BandedOperator,
    prepared: DickeState,
    aligned: DickeState,
}

impl EchoSequence {
    pub fn new(spec: EchoSpec) -> Result<Self> {
        spec.validate()?;
        let system = spec.system()?;
        let hamiltonian = build_twisting_hamiltonian(system, spec.protocol.twisting());
        let prepared = DickeState::pole(system).evolve(&hamiltonian, spec.t_chi)?;
        let aligned = match spec.pre_imprint_rotation {
            Some(r) => prepared.rotate(r.axis, r.angle)?,
            None => prepared.clone(),
        };
        Ok(Self {
            spec,
            system,
            hamiltonian,
            jy: build_spin_operator(system, SpinComponent::Jy),
            prepared,
            aligned,
        })
    }

    pub fn spec(&self) -> &EchoSpec {
        &self.spec
    }

    pub fn system(&self) -> SpinSystem {
        self.system
    }

    pub fn prepared(&self) -> &DickeState {
        &self.prepared
    }

    /// Replaces the parameters that act after the imprint, keeping the prepared state.
    pub fn set_downstream(&mut self, echo_ratio: f64, pre_readout_rotation: Option<Rotation>) -> Result<()> {
        let mut spec = self.spec;
        spec.echo_ratio = echo_ratio;
        spec.pre_readout_rotation = pre_readout_rotation;
        spec.validate()?;
        self.spec = spec;
        Ok(())
    }

    pub fn imprinted(&self, theta: f64) -> Result<DickeState> {
        self.aligned.rotate(Axis::Y, theta)
    }

    fn echo_amplitudes(&self, amps: &[Complex64]) -> Result<Vec<Complex64>> {
        let scale = -self.spec.echo_ratio * self.spec.t_chi;
        let mut out = expm::propagate(&self.hamiltonian, amps, scale, Propagator::Auto)?;
        if let Some(r) = self.spec.pre_readout_rotation {
            out = rotate_amplitudes(self.system, &out, r.axis, r.angle)?;
        }
        Ok(out)
    }

    fn readout_amplitudes(&self, amps: &[Complex64]) -> Result<Vec<Complex64>> {
        match self.spec.readout_rotation {
            ReadoutRotation::Standard => rotate_amplitudes(
                self.system,
                amps,
                self.spec.protocol.readout_axis(),
                std::f64::consts::FRAC_PI_2,
            ),
            ReadoutRotation::None => Ok(amps.to_vec()),
        }
    }

    /// Linear map from the imprinted state to the measured state.
    pub fn downstream(&self, amps: &[Complex64]) -> Result<Vec<Complex64>> {
        let echoed = self.echo_amplitudes(amps)?;
        self.readout_amplitudes(&echoed)
    }

    pub fn echoed(&self, theta: f64) -> Result<DickeState> {
        let imprinted = self.imprinted(theta)?;
        Ok(DickeState::from_raw(self.system, self.echo_amplitudes(imprinted.amplitudes())?))
    }

    pub fn run(&self, theta: f64) -> Result<Vec<StageSnapshot>> {
        let imprinted = self.imprinted(theta)?;
        let echoed = DickeState::from_raw(self.system, self.echo_amplitudes(imprinted.amplitudes())?);
        let mut out = vec![
            StageSnapshot {
                label: Stage::Prepared,
                state: self.prepared.clone(),
            },
            StageSnapshot {
                label: Stage::Imprinted,
                state: imprinted,
            },
        ];
        if self.spec.readout_rotation == ReadoutRotation::Standard {
            let readout = DickeState::from_raw(self.system, self.readout_amplitudes(echoed.amplitudes())?);
            out.push(StageSnapshot {
                label: Stage::Echoed,
                state: echoed,
            });
            out.push(StageSnapshot {
                label: Stage::Readout,
                state: readout,
            });
        } else {
            out.push(StageSnapshot {
                label: Stage::Echoed,
                state: echoed,
            });
        }
        Ok(out)
    }

    /// Distribution of the final `J_z` count with its exact θ-derivative.
    pub fn distribution(&self, theta: f64) -> Result<OutcomeDistribution> {
        let imprinted = self.imprinted(theta)?;
        metrology::outcome_distribution(
            imprinted.amplitudes(),
            &self.jy,
            |a| self.downstream(a),
            self.system.eigenvalues(),
        )
    }

    pub fn fisher(&self, theta: f64, model: &DetectionModel) -> Result<f64> {
        metrology::fisher_with_noise(&self.distribution(theta)?, model, self.system.n_atoms())
    }

    /// Fisher information maximized over the imprinted phase.
    pub fn fisher_optimal_theta(&self, model: &DetectionModel) -> Result<(f64, f64)> {
        metrology::optimize_theta(|theta| self.fisher(theta, model))
    }

    /// `⟨J_sig⟩_echoed / ⟨J_x⟩_imprinted` in magnitude.
    pub fn magnification(&self, theta: f64) -> Result<f64> {
        let before = self.imprinted(theta)?.moments().mean[0];
        if before.abs() < 1e-12 {
            return Err(Error::UndefinedSignal(
                "⟨J_x⟩ after the imprint vanishes (θ = 0?)".into(),
            ));
        }
        let after = self.echoed(theta)?.moments().mean[self.spec.protocol.signal_axis() as usize];
        Ok((after / before).abs())
    }

    /// `|⟨J_sig⟩| / ΔJ_sig` on the echoed state.
    pub fn signal_to_noise(&self, theta: f64) -> Result<f64> {
        let m = self.echoed(theta)?.moments();
        let axis = self.spec.protocol.signal_axis();
        let var = m.variance(axis);
        if !(var > 1e-300) {
            return Err(Error::DegenerateState("signal variance vanishes".into()));
        }
        Ok(m.mean[axis as usize].abs() / var.sqrt())
    }
}

/// Runs the echo and returns the intermediate states in sequence order.
pub fn run_echo(spec: &EchoSpec) -> Result<Vec<StageSnapshot>> {
    EchoSequence::new(*spec)?.run(spec.theta)
}

pub fn magnification_factor(spec: &EchoSpec) -> Result<f64> {
    EchoSequence::new(*spec)?.magnification(spec.theta)
}

pub fn signal_to_noise(spec: &EchoSpec) -> Result<f64> {
    EchoSequence::new(*spec)?.signal_to_noise(spec.theta)
}

/// Spin-squeezing parameter `ξ² = N Var(J_x) / ⟨J_z⟩²`, linear and in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Squeezing {
    pub linear: f64,
    pub db: f64,
}

impl Squeezing {
    fn from_linear(linear: f64) -> Self {
        Self {
            linear,
            db: 10.0 * linear.log10(),
        }
    }
}

pub fn squeezing_parameter(state: &DickeState) -> Result<Squeezing> {
    let m = state.moments();
    let jz = m.mean[2];
    if jz.abs() < 1e-12 {
        return Err(Error::UndefinedSignal("⟨J_z⟩ vanishes; state is not polarized".into()));
    }
    let n = state.system().n_atoms() as f64;
    Ok(Squeezing::from_linear(n * m.variance(Axis::X) / (jz * jz)))
}

/// Squeezing parameter with the variance minimized over the quadrature angle in the x–y plane.
pub fn best_quadrature_squeezing(state: &DickeState) -> Result<Squeezing> {
    let m = state.moments();
    let jz = m.mean[2];
    if jz.abs() < 1e-12 {
        return Err(Error::UndefinedSignal("⟨J_z⟩ vanishes; state is not polarized".into()));
    }
    let (a, b, c) = (m.covariance[0][0], m.covariance[1][1], m.covariance[0][1]);
    let min_var = 0.5 * (a + b) - (0.25 * (a - b) * (a - b) + c * c).sqrt();
    let n = state.system().n_atoms() as f64;
    Ok(Squeezing::from_linear(n * min_var / (jz * jz)))
}

fn calibration_metric(kind: TwistingKind, state: &DickeState) -> Result<f64> {
    Ok(match kind {
        TwistingKind::Tact => squeezing_parameter(state)?.db,
        TwistingKind::Oat => best_quadrature_squeezing(state)?.db,
    })
}

/// Step of the squeezing scan in units of `tχ N`.
const CALIBRATION_STEP: f64 = 0.01;
const CALIBRATION_MAX_GAMMA: f64 = 60.0;

/// One sample of the squeezing scan used by [`calibrate_twisting`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqueezingSample {
    pub t_chi: f64,
    pub db: f64,
}

/// Squeezing (dB) along the initial branch, from `tχ = 0` until the first
/// minimum is passed or `stop_db` is reached.
pub fn squeezing_scan(system: SpinSystem, kind: TwistingKind, stop_db: f64) -> Result<Vec<SqueezingSample>> {
    let h = build_twisting_hamiltonian(system, kind);
    let n = system.n_atoms() as f64;
    let dt = CALIBRATION_STEP / n;
    let mut state = DickeState::pole(system);
    let mut samples = vec![SqueezingSample { t_chi: 0.0, db: 0.0 }];
    let mut k = 0usize;
    loop {
        k += 1;
        let t = k as f64 * dt;
        if t * n > CALIBRATION_MAX_GAMMA {
            break;
        }
        state = state.evolve(&h, dt)?;
        let db = match calibration_metric(kind, &state) {
            Ok(v) => v,
            Err(_) => break,
        };
        let prev = samples.last().expect("non-empty").db;
        samples.push(SqueezingSample { t_chi: t, db });
        if db <= stop_db || db > prev {
            break;
        }
    }
    Ok(samples)
}

/// Smallest `tχ > 0` whose squeezing equals `target_db` (within 0.01 dB),
/// found by scanning the monotone initial branch and bisecting the bracket.
pub fn calibrate_twisting(system: SpinSystem, kind: TwistingKind, target_db: f64) -> Result<f64> {
    if target_db > 0.0 || !target_db.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "squeezing target must be <= 0 dB, got {target_db}"
        )));
    }
    if target_db == 0.0 {
        return Ok(0.0);
    }
    let samples = squeezing_scan(system, kind, target_db)?;
    let last = *samples.last().expect("non-empty");
    if last.db > target_db {
        let achievable = samples.iter().map(|s| s.db).fold(f64::INFINITY, f64::min);
        return Err(Error::CalibrationUnreachable {
            target_db,
            achievable_db: achievable,
        });
    }
    let prev = samples[samples.len() - 2];
    let h = build_twisting_hamiltonian(system, kind);
    let base = DickeState::pole(system).evolve(&h, prev.t_chi)?;
    let (mut lo, mut hi) = (prev.t_chi, last.t_chi);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let db = calibration_metric(kind, &base.evolve(&h, mid - prev.t_chi)?)?;
        if (db - target_db).abs() < 1e-7 {
            return Ok(mid);
        }
        if db > target_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Husimi distribution `Q(ϑ, φ) = |⟨CSS(ϑ, φ)|ψ⟩|²` on a regular grid.
///
/// Rows are polar angles `ϑ_i = π i / (n_polar - 1)`, columns azimuths
/// `φ_k = 2π k / n_azimuth`.
pub fn husimi(state: &DickeState, n_polar: usize, n_azimuth: usize) -> Result<Vec<Vec<f64>>> {
    if n_polar < 2 || n_azimuth < 2 {
        return Err(Error::InvalidArgument("Husimi grid needs at least 2 points per axis".into()));
    }
    let polar = linspace(0.0, std::f64::consts::PI, n_polar);
    let azimuth: Vec<f64> = (0..n_azimuth)
        .map(|k| 2.0 * std::f64::consts::PI * k as f64 / n_azimuth as f64)
        .collect();
    Ok(polar
        .iter()
        .map(|&th| azimuth.iter().map(|&ph| husimi_point(state, th, ph)).collect())
        .collect())
}

pub fn husimi_point(state: &DickeState, polar: f64, azimuth: f64) -> f64 {
    let css = coherent_amplitudes(state.system().n_atoms(), polar, azimuth);
    let overlap: Complex64 = css.iter().zip(state.amplitudes()).map(|(c, a)| c.conj() * a).sum();
    overlap.norm_sqr().min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CssFidelity {
    pub fidelity: f64,
    pub polar: f64,
    pub azimuth: f64,
}

/// Largest overlap with any coherent spin state: 90×180 grid, then compass
/// search down to an angular step of 1e-6.
pub fn css_fidelity(state: &DickeState) -> CssFidelity {
    let (n_polar, n_azimuth) = (90usize, 180usize);
    let dth = std::f64::consts::PI / (n_polar - 1) as f64;
    let dph = 2.0 * std::f64::consts::PI / n_azimuth as f64;
    let mut best = (0.0, 0.0, f64::NEG_INFINITY);
    for i in 0..n_polar {
        for k in 0..n_azimuth {
            let (th, ph) = (i as f64 * dth, k as f64 * dph);
            let q = husimi_point(state, th, ph);
            if q > best.2 {
                best = (th, ph, q);
            }
        }
    }
    let (mut th, mut ph, mut q) = best;
    let mut step = dth.max(dph);
    while step >= 1e-6 {
        let mut improved = false;
        for (a, b) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let cand = husimi_point(state, th + a, ph + b);
            if cand > q {
                th += a;
                ph += b;
                q = cand;
                improved = true;
                break;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    // Fold the direction back into the canonical ranges.
    let two_pi = 2.0 * std::f64::consts::PI;
    if th < 0.0 {
        th = -th;
        ph += std::f64::consts::PI;
    }
    CssFidelity {
        fidelity: q,
        polar: th,
        azimuth: ph.rem_euclid(two_pi),
    }
}
