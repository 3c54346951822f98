//! Closed-form one-mode (quadrature) model of the TACT echo.
//!
//! Near the pole the collective spin is replaced by a single bosonic mode `b`:
//! twisting becomes the squeezing operator `S(γ) = exp(γ/2 (b² − b†²))` and
//! the phase imprint the displacement `D(φ) = exp(φ (b† − b))`, with
//! `γ = tχ N` and `φ = θ √N / 2`. The echo output is `S(rγ)⁻¹ D(φ) S(γ)|0⟩`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `γ · max(r, 1)` accepted before the hyperbolic functions are
/// considered out of the model's window.
pub const MAX_EXPONENT: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneModeParams {
    pub n_atoms: usize,
    pub gamma: f64,
    pub phi: f64,
    pub echo_ratio: f64,
    pub sigma: f64,
}

impl OneModeParams {
    pub fn new(n_atoms: usize, gamma: f64, phi: f64, echo_ratio: f64, sigma: f64) -> Result<Self> {
        let p = Self {
            n_atoms,
            gamma,
            phi,
            echo_ratio,
            sigma,
        };
        p.validate()?;
        Ok(p)
    }

    /// Maps two-mode parameters: `γ = tχ N`, `φ = θ √N / 2`.
    pub fn from_two_mode(n_atoms: usize, t_chi: f64, theta: f64, echo_ratio: f64, sigma: f64) -> Result<Self> {
        let n = n_atoms as f64;
        Self::new(n_atoms, t_chi * n, theta * n.sqrt() / 2.0, echo_ratio, sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_atoms == 0 {
            return Err(Error::InvalidArgument("atom number must be positive".into()));
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("phi", self.phi),
            ("echo ratio", self.echo_ratio),
            ("sigma", self.sigma),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite")));
            }
        }
        if self.echo_ratio < 0.0 {
            return Err(Error::InvalidArgument("echo ratio must be >= 0".into()));
        }
        if self.sigma < 0.0 {
            return Err(Error::InvalidArgument("sigma must be >= 0".into()));
        }
        if self.gamma.abs() * self.echo_ratio.max(1.0) > MAX_EXPONENT {
            return Err(Error::OutOfWindow(format!(
                "γ·max(r,1) = {} exceeds {MAX_EXPONENT}",
                self.gamma.abs() * self.echo_ratio.max(1.0)
            )));
        }
        Ok(())
    }

    fn n(&self) -> f64 {
        self.n_atoms as f64
    }
}

/// `(Δθ)² = e^{−2γ} / N`, independent of the echo ratio.
pub fn ideal_phase_variance(p: &OneModeParams) -> Result<f64> {
    p.validate()?;
    Ok((-2.0 * p.gamma).exp() / p.n())
}

/// `M = e^{rγ}`.
pub fn one_mode_magnification(p: &OneModeParams) -> Result<f64> {
    p.validate()?;
    Ok((p.echo_ratio * p.gamma).exp())
}

/// `e^{−2γ}/N + 4σ² / (N² M²)`.
pub fn noisy_phase_variance(p: &OneModeParams) -> Result<f64> {
    let m = one_mode_magnification(p)?;
    let n = p.n();
    Ok(ideal_phase_variance(p)? + 4.0 * p.sigma * p.sigma / (n * n * m * m))
}

/// `SNR = 2 φ e^{γ}`.
pub fn one_mode_snr(p: &OneModeParams) -> Result<f64> {
    p.validate()?;
    Ok(2.0 * p.phi * p.gamma.exp())
}

/// Second-order moments of the echo output state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeMoments {
    pub mean_bdag: Complex64,
    pub n_b: f64,
    pub bdag_sq: f64,
    pub b_sq: f64,
}

pub fn appendix_a_moments(p: &OneModeParams) -> Result<ModeMoments> {
    p.validate()?;
    let (mu1, nu1) = (p.gamma.cosh(), p.gamma.sinh());
    let rg = p.echo_ratio * p.gamma;
    let (mu2, nu2) = (rg.cosh(), rg.sinh());
    let phi = p.phi;
    let n_b = (mu1 * nu2 - nu1 * mu2).powi(2) + phi * phi * (mu2 + nu2).powi(2);
    let bdag_sq = (phi * phi - mu1 * nu1) * (mu2 * mu2 + nu2 * nu2) + (mu1 * mu1 + nu1 * nu1 + 2.0 * phi * phi) * mu2 * nu2;
    Ok(ModeMoments {
        mean_bdag: Complex64::new(phi * rg.exp(), 0.0),
        n_b,
        bdag_sq,
        b_sq: bdag_sq,
    })
}

/// Phase variance assembled from the moments by the method of moments for
/// `X = b + b†`: `Var(X) / |∂_θ⟨X⟩|²`, with `∂_θ⟨X⟩ = √N e^{rγ}`.
pub fn assembled_phase_variance(p: &OneModeParams) -> Result<f64> {
    let m = appendix_a_moments(p)?;
    let mean_x = 2.0 * m.mean_bdag.re;
    let var_x = m.bdag_sq + m.b_sq + 2.0 * m.n_b + 1.0 - mean_x * mean_x;
    let slope_sq = p.n() * (2.0 * p.echo_ratio * p.gamma).exp();
    Ok(var_x / slope_sq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sql_without_squeezing() {
        let p = OneModeParams::new(50, 0.0, 0.1, 2.0, 0.0).unwrap();
        assert!((ideal_phase_variance(&p).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(noisy_phase_variance(&p).unwrap(), ideal_phase_variance(&p).unwrap());
    }

    #[test]
    fn out_of_window_is_an_error() {
        assert!(matches!(
            OneModeParams::new(10, 5.0, 0.0, 5.0, 0.0),
            Err(Error::OutOfWindow(_))
        ));
    }

    #[test]
    fn vacuum_moments_vanish() {
        let m = appendix_a_moments(&OneModeParams::new(10, 0.0, 0.0, 1.0, 0.0).unwrap()).unwrap();
        assert_eq!(m.n_b, 0.0);
        assert_eq!(m.bdag_sq, 0.0);
        assert_eq!(m.mean_bdag, Complex64::new(0.0, 0.0));
    }
}
