//! Optional rotations for the OAT echo: aligning the squeezing ellipse before
//! the imprint and choosing the readout direction before detection.
//!
//! Both are rotations about `z`. The alignment angle minimizes `Var(J_x)` of
//! the twisted state; the readout angle `β` picks the in-plane direction
//! `J_y cos β + J_x sin β` that the final π/2 pulse about `x` maps onto `J_z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrology::{self, DetectionModel};
use crate::optimize::golden_max;
use crate::protocols::{EchoProtocol, EchoSequence, EchoSpec, Rotation};
use crate::spin::{build_twisting_hamiltonian, Axis, DickeState, SpinMoments, SpinSystem, TwistingKind};

/// Samples of the angle grid over `[−π/2, π/2)`.
pub const ANGLE_GRID_POINTS: usize = 721;
pub const ANGLE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutObjective {
    Snr,
    Magnification,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OatOptimizationSpec {
    pub base: EchoSpec,
    pub optimize_alignment: bool,
    pub optimize_readout: bool,
    pub readout_objective: ReadoutObjective,
}

impl OatOptimizationSpec {
    pub fn new(
        base: EchoSpec,
        optimize_alignment: bool,
        optimize_readout: bool,
        readout_objective: ReadoutObjective,
    ) -> Result<Self> {
        if base.protocol != EchoProtocol::OatEcho {
            return Err(Error::InvalidArgument("optimizations apply to the OAT echo only".into()));
        }
        if !optimize_alignment && !optimize_readout {
            return Err(Error::InvalidArgument("at least one optimization must be enabled".into()));
        }
        base.validate()?;
        Ok(Self {
            base,
            optimize_alignment,
            optimize_readout,
            readout_objective,
        })
    }
}

/// Angle over `[−π/2, π/2)` maximizing `f`: grid scan, then golden-section
/// refinement around the best sample (accepted only if it improves on it).
fn maximize_angle<F>(f: F) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    let half = std::f64::consts::FRAC_PI_2;
    let step = std::f64::consts::PI / ANGLE_GRID_POINTS as f64;
    let grid: Vec<f64> = (0..ANGLE_GRID_POINTS).map(|i| -half + i as f64 * step).collect();
    let (best_x, best_v) = grid
        .iter()
        .map(|&x| (x, f(x)))
        .fold((grid[0], f64::NEG_INFINITY), |b, (x, v)| if v > b.1 { (x, v) } else { b });
    let (x, v) = golden_max(|x| Ok(f(x)), best_x - step, best_x + step, ANGLE_TOLERANCE)?;
    let (x, v) = if v >= best_v { (x, v) } else { (best_x, best_v) };
    // Fold back into [−π/2, π/2): the objectives are π-periodic.
    let folded = (x + half).rem_euclid(std::f64::consts::PI) - half;
    Ok((folded, v))
}

/// `Var(J_x)` after `exp(-iα J_z)`, i.e. the variance along `J_x cos α − J_y sin α`.
fn rotated_x_variance(m: &SpinMoments, alpha: f64) -> f64 {
    let (c, s) = (alpha.cos(), alpha.sin());
    let cov = &m.covariance;
    c * c * cov[0][0] - 2.0 * c * s * cov[0][1] + s * s * cov[1][1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Rotation angle about `z`.
    pub angle: f64,
    /// `Var(J_x)` after the rotation.
    pub variance: f64,
    /// The in-plane covariance is isotropic; `angle` is then 0.
    pub degenerate: bool,
}

/// Rotation about `z` that brings the narrowest in-plane quadrature of `state` onto `J_x`.
pub fn alignment_for_state(state: &DickeState) -> Result<Alignment> {
    let m = state.moments();
    let cov = &m.covariance;
    let spread = ((cov[0][0] - cov[1][1]).powi(2) + 4.0 * cov[0][1].powi(2)).sqrt();
    let scale = cov[0][0].abs() + cov[1][1].abs();
    if spread <= 1e-12 * scale.max(1e-300) {
        return Ok(Alignment {
            angle: 0.0,
            variance: cov[0][0],
            degenerate: true,
        });
    }
    let (angle, neg) = maximize_angle(|a| -rotated_x_variance(&m, a))?;
    Ok(Alignment {
        angle,
        variance: -neg,
        degenerate: false,
    })
}

/// Alignment angle for the OAT state twisted for `tχ` from the pole.
pub fn optimal_alignment_angle(system: SpinSystem, t_chi: f64) -> Result<Alignment> {
    let h = build_twisting_hamiltonian(system, TwistingKind::Oat);
    alignment_for_state(&DickeState::pole(system).evolve(&h, t_chi)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutOptimum {
    /// Rotation angle about `z` applied before the π/2 pulse.
    pub angle: f64,
    pub objective: ReadoutObjective,
    pub value: f64,
}

/// `(⟨J_β⟩, Var(J_β))` for `J_β = J_y cos β + J_x sin β`, the component read out after `exp(-iβJ_z)`.
fn readout_moments(m: &SpinMoments, beta: f64) -> (f64, f64) {
    let (c, s) = (beta.cos(), beta.sin());
    let cov = &m.covariance;
    let mean = c * m.mean[1] + s * m.mean[0];
    let var = c * c * cov[1][1] + 2.0 * c * s * cov[0][1] + s * s * cov[0][0];
    (mean, var)
}

/// Readout angle for echoed-state moments `m` and post-imprint `⟨J_x⟩`.
pub fn readout_for_moments(m: &SpinMoments, imprinted_jx: f64, objective: ReadoutObjective) -> Result<ReadoutOptimum> {
    let scale = (m.mean[0].powi(2) + m.mean[1].powi(2)).sqrt();
    if scale < 1e-12 {
        return Err(Error::UndefinedSignal("echoed state carries no in-plane signal".into()));
    }
    let f = |beta: f64| {
        let (mean, var) = readout_moments(m, beta);
        match objective {
            ReadoutObjective::Snr => mean.abs() / var.max(1e-300).sqrt(),
            ReadoutObjective::Magnification => mean.abs() / imprinted_jx.abs().max(1e-300),
        }
    };
    let (angle, value) = maximize_angle(f)?;
    Ok(ReadoutOptimum { angle, objective, value })
}

/// Readout angle for the spec's base point (with the alignment applied first if requested).
pub fn optimal_readout_angle(spec: &OatOptimizationSpec) -> Result<ReadoutOptimum> {
    if spec.base.theta == 0.0 {
        return Err(Error::UndefinedSignal("readout optimization needs θ ≠ 0".into()));
    }
    let seq = EchoSequence::new(aligned_base(spec)?)?;
    let imprinted_jx = seq.imprinted(spec.base.theta)?.moments().mean[0];
    let m = seq.echoed(spec.base.theta)?.moments();
    readout_for_moments(&m, imprinted_jx, spec.readout_objective)
}

fn aligned_base(spec: &OatOptimizationSpec) -> Result<EchoSpec> {
    let mut base = spec.base;
    base.pre_readout_rotation = None;
    if spec.optimize_alignment {
        let a = optimal_alignment_angle(base.system()?, base.t_chi)?;
        base.pre_imprint_rotation = Some(Rotation {
            axis: Axis::Z,
            angle: a.angle,
        });
    }
    Ok(base)
}

/// The base echo with the requested rotations filled in, evaluated at the base θ.
pub fn optimized_spec(spec: &OatOptimizationSpec) -> Result<EchoSpec> {
    let mut base = aligned_base(spec)?;
    if spec.optimize_readout {
        let r = optimal_readout_angle(spec)?;
        base.pre_readout_rotation = Some(Rotation {
            axis: Axis::Z,
            angle: r.angle,
        });
    }
    Ok(base)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OatVariant {
    Clean,
    Aligned,
    ReadoutOptimized,
    Combined,
}

impl OatVariant {
    pub const ALL: [OatVariant; 4] = [
        OatVariant::Clean,
        OatVariant::Aligned,
        OatVariant::ReadoutOptimized,
        OatVariant::Combined,
    ];

    fn flags(self) -> (bool, bool) {
        match self {
            OatVariant::Clean => (false, false),
            OatVariant::Aligned => (true, false),
            OatVariant::ReadoutOptimized => (false, true),
            OatVariant::Combined => (true, true),
        }
    }
}

/// OAT echo with a variant's rotations, re-optimizing the readout angle for
/// every evaluated θ.
#[derive(Debug, Clone)]
pub struct OatVariantEcho {
    sequence: EchoSequence,
    variant: OatVariant,
    objective: ReadoutObjective,
}

impl OatVariantEcho {
    pub fn new(
        n_atoms: usize,
        t_chi: f64,
        echo_ratio: f64,
        variant: OatVariant,
        objective: ReadoutObjective,
    ) -> Result<Self> {
        let mut base = EchoSpec::oat(n_atoms, t_chi, echo_ratio, 0.0)?;
        let (align, _) = variant.flags();
        if align {
            let a = optimal_alignment_angle(base.system()?, t_chi)?;
            base = base.with_pre_imprint_rotation(Axis::Z, a.angle);
        }
        Ok(Self {
            sequence: EchoSequence::new(base)?,
            variant,
            objective,
        })
    }

    pub fn variant(&self) -> OatVariant {
        self.variant
    }

    pub fn sequence(&self) -> &EchoSequence {
        &self.sequence
    }

    /// Sequence configured for `θ`, with the readout rotation chosen at that θ if the variant asks for it.
    pub fn configured(&self, theta: f64) -> Result<EchoSequence> {
        let mut seq = self.sequence.clone();
        let (_, readout) = self.variant.flags();
        if readout {
            let imprinted_jx = seq.imprinted(theta)?.moments().mean[0];
            let m = seq.echoed(theta)?.moments();
            let opt = readout_for_moments(&m, imprinted_jx, self.objective)?;
            let r = seq.spec().echo_ratio;
            seq.set_downstream(
                r,
                Some(Rotation {
                    axis: Axis::Z,
                    angle: opt.angle,
                }),
            )?;
        }
        Ok(seq)
    }

    pub fn fisher(&self, theta: f64, model: &DetectionModel) -> Result<f64> {
        self.configured(theta)?.fisher(theta, model)
    }

    pub fn fisher_optimal_theta(&self, model: &DetectionModel) -> Result<(f64, f64)> {
        metrology::optimize_theta(|theta| self.fisher(theta, model))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_maximizer_finds_shifted_cosine() {
        let (x, v) = maximize_angle(|a| (2.0 * (a - 0.3)).cos()).unwrap();
        assert!((x - 0.3).abs() < 1e-5);
        assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn spec_requires_some_optimization() {
        let base = EchoSpec::oat(10, 0.01, 1.0, 0.01).unwrap();
        assert!(OatOptimizationSpec::new(base, false, false, ReadoutObjective::Snr).is_err());
        let tact = EchoSpec::tact(10, 0.01, 1.0, 0.01).unwrap();
        assert!(OatOptimizationSpec::new(tact, true, false, ReadoutObjective::Snr).is_err());
    }
}
