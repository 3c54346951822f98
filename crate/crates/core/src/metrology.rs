//! Outcome statistics and information measures.
//!
//! Phase derivatives are exact: the tangent vector `∂_θ ψ_θ = -i G ψ_θ` of the
//! phase imprint is pushed through the same (linear) downstream map as the
//! state itself, so `∂_θ P(μ) = 2 Re[conj(Ψ_μ) Φ_μ]` with `Ψ` the final state
//! and `Φ` the propagated tangent.

use nalgebra::{Matrix3, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::LinearOperator;
use crate::optimize::{golden_max, grid_then_golden, linspace, logspace};
use crate::spin::{build_twisting_hamiltonian, Axis, DickeState, SpinSystem, TwistingKind};

/// Probabilities at or below this value are skipped in Fisher-information sums.
pub const DEFAULT_PROBABILITY_FLOOR: f64 = 1e-14;

/// Discrete distribution of measurement outcomes and its exact phase derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    eigenvalues: Vec<f64>,
    probabilities: Vec<f64>,
    derivative: Vec<f64>,
}

impl OutcomeDistribution {
    pub fn new(eigenvalues: Vec<f64>, probabilities: Vec<f64>, derivative: Vec<f64>) -> Result<Self> {
        if probabilities.len() != eigenvalues.len() {
            return Err(Error::DimensionMismatch {
                expected: eigenvalues.len(),
                found: probabilities.len(),
            });
        }
        if derivative.len() != eigenvalues.len() {
            return Err(Error::DimensionMismatch {
                expected: eigenvalues.len(),
                found: derivative.len(),
            });
        }
        if probabilities.iter().any(|&p| p < -1e-15 || !p.is_finite()) {
            return Err(Error::InvalidArgument("probabilities must be non-negative".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            eigenvalues,
            probabilities,
            derivative,
        })
    }

    /// `P(μ) = |Ψ_μ|²`, `∂P(μ) = 2 Re[conj(Ψ_μ) Φ_μ]`, one outcome per amplitude.
    pub fn from_amplitudes(eigenvalues: Vec<f64>, state: &[Complex64], tangent: &[Complex64]) -> Result<Self> {
        let groups: Vec<usize> = (0..state.len()).collect();
        Self::from_grouped_amplitudes(eigenvalues, &groups, state, tangent)
    }

    /// Merges amplitudes that share an outcome: `group[i]` is the outcome index of amplitude `i`.
    pub fn from_grouped_amplitudes(
        eigenvalues: Vec<f64>,
        group: &[usize],
        state: &[Complex64],
        tangent: &[Complex64],
    ) -> Result<Self> {
        if state.len() != tangent.len() || state.len() != group.len() {
            return Err(Error::DimensionMismatch {
                expected: state.len(),
                found: tangent.len().min(group.len()),
            });
        }
        let mut p = vec![0.0; eigenvalues.len()];
        let mut d = vec![0.0; eigenvalues.len()];
        for ((&g, a), t) in group.iter().zip(state).zip(tangent) {
            if g >= eigenvalues.len() {
                return Err(Error::InvalidArgument(format!("outcome index {g} out of range")));
            }
            p[g] += a.norm_sqr();
            d[g] += 2.0 * (a.conj() * t).re;
        }
        Self::new(eigenvalues, p, d)
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn derivative(&self) -> &[f64] {
        &self.derivative
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn derivative_sum(&self) -> f64 {
        self.derivative.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.eigenvalues.iter().zip(&self.probabilities).map(|(x, p)| x * p).sum()
    }
}

/// Builds the outcome distribution of a phase-imprinted state.
///
/// `state` is the state right after the imprint, `generator` the imprint
/// generator and `downstream` the (linear) map from the imprinted state to the
/// measured state. `eigenvalues` label the measurement basis of the output.
pub fn outcome_distribution<G, F>(
    state: &[Complex64],
    generator: &G,
    downstream: F,
    eigenvalues: Vec<f64>,
) -> Result<OutcomeDistribution>
where
    G: LinearOperator + ?Sized,
    F: Fn(&[Complex64]) -> Result<Vec<Complex64>>,
{
    let (fin, tan) = propagate_with_tangent(state, generator, downstream)?;
    OutcomeDistribution::from_amplitudes(eigenvalues, &fin, &tan)
}

/// Returns `(downstream(ψ), downstream(-i G ψ))`.
pub fn propagate_with_tangent<G, F>(
    state: &[Complex64],
    generator: &G,
    downstream: F,
) -> Result<(Vec<Complex64>, Vec<Complex64>)>
where
    G: LinearOperator + ?Sized,
    F: Fn(&[Complex64]) -> Result<Vec<Complex64>>,
{
    if state.len() != generator.dim() {
        return Err(Error::DimensionMismatch {
            expected: generator.dim(),
            found: state.len(),
        });
    }
    let mut tangent = vec![Complex64::new(0.0, 0.0); state.len()];
    generator.apply(state, &mut tangent);
    tangent.iter_mut().for_each(|c| *c *= Complex64::new(0.0, -1.0));
    Ok((downstream(state)?, downstream(&tangent)?))
}

/// `F = Σ (∂P)² / P` over outcomes with `P > floor`.
pub fn fisher_information(dist: &OutcomeDistribution, floor: f64) -> f64 {
    dist.probabilities
        .iter()
        .zip(&dist.derivative)
        .filter(|(&p, _)| p > floor)
        .map(|(&p, &d)| d * d / p)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Constant,
    SqrtNScaled,
}

/// Gaussian detection noise on the final `J_z` counting variable.
///
/// For [`NoiseKind::Constant`] the coefficient is σ in units of the `J_z`
/// eigenvalue spacing; for [`NoiseKind::SqrtNScaled`] σ = coefficient · √N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    pub kind: NoiseKind,
    pub coefficient: f64,
}

impl DetectionModel {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            coefficient: 0.0,
        }
    }

    pub fn constant(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid noise width {sigma}")));
        }
        Ok(if sigma == 0.0 {
            Self::none()
        } else {
            Self {
                kind: NoiseKind::Constant,
                coefficient: sigma,
            }
        })
    }

    pub fn sqrt_n_scaled(coefficient: f64) -> Result<Self> {
        if !(coefficient >= 0.0) || !coefficient.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid noise coefficient {coefficient}")));
        }
        Ok(if coefficient == 0.0 {
            Self::none()
        } else {
            Self {
                kind: NoiseKind::SqrtNScaled,
                coefficient,
            }
        })
    }

    /// Noise equal to the projection noise of a coherent state on the equator, √N/2.
    pub fn css_level() -> Self {
        Self {
            kind: NoiseKind::SqrtNScaled,
            coefficient: 0.5,
        }
    }

    pub fn sigma(&self, n_atoms: usize) -> f64 {
        match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::Constant => self.coefficient,
            NoiseKind::SqrtNScaled => self.coefficient * (n_atoms as f64).sqrt(),
        }
    }
}

/// Continuous outcome density after Gaussian smearing, on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySmearedDistribution {
    origin: f64,
    step: f64,
    density: Vec<f64>,
    derivative: Vec<f64>,
}

impl NoisySmearedDistribution {
    pub fn grid(&self) -> Vec<f64> {
        (0..self.density.len())
            .map(|i| self.origin + i as f64 * self.step)
            .collect()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn derivative(&self) -> &[f64] {
        &self.derivative
    }

    fn trapezoid<F: Fn(usize) -> f64>(&self, f: F) -> f64 {
        let n = self.density.len();
        if n < 2 {
            return 0.0;
        }
        let inner: f64 = (1..n - 1).map(&f).sum();
        self.step * (inner + 0.5 * (f(0) + f(n - 1)))
    }

    pub fn integral(&self) -> f64 {
        self.trapezoid(|i| self.density[i])
    }

    pub fn mean(&self) -> f64 {
        self.trapezoid(|i| (self.origin + i as f64 * self.step) * self.density[i])
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.trapezoid(|i| {
            let x = self.origin + i as f64 * self.step - m;
            x * x * self.density[i]
        })
    }
}

/// Convolves the outcome distribution (and its derivative) with a normal density.
pub fn smear(dist: &OutcomeDistribution, model: &DetectionModel, n_atoms: usize) -> Result<NoisySmearedDistribution> {
    let sigma = model.sigma(n_atoms);
    if !(sigma > 0.0) {
        return Err(Error::ContractViolation(
            "smearing needs sigma > 0; use the discrete distribution for noiseless detection".into(),
        ));
    }
    let lo = dist.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min) - 6.0 * sigma;
    let hi = dist.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 6.0 * sigma;
    let target = (sigma / 10.0).min(0.5);
    let n = ((hi - lo) / target).ceil() as usize + 1;
    let step = (hi - lo) / (n - 1) as f64;
    let mut density = vec![0.0; n];
    let mut derivative = vec![0.0; n];
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let reach = 10.0 * sigma;
    for ((&mu, &p), &d) in dist.eigenvalues.iter().zip(&dist.probabilities).zip(&dist.derivative) {
        if p == 0.0 && d == 0.0 {
            continue;
        }
        let first = (((mu - reach - lo) / step).floor().max(0.0)) as usize;
        let last = (((mu + reach - lo) / step).ceil() as usize).min(n - 1);
        for i in first..=last {
            let z = (lo + i as f64 * step - mu) / sigma;
            let g = norm * (-0.5 * z * z).exp();
            density[i] += p * g;
            derivative[i] += d * g;
        }
    }
    Ok(NoisySmearedDistribution {
        origin: lo,
        step,
        density,
        derivative,
    })
}

/// `F̃ = ∫ (∂P̃)² / P̃ dx` by the trapezoidal rule.
pub fn noisy_fisher_information(smeared: &NoisySmearedDistribution) -> f64 {
    let floor = DEFAULT_PROBABILITY_FLOOR;
    smeared.trapezoid(|i| {
        let p = smeared.density[i];
        if p > floor {
            smeared.derivative[i] * smeared.derivative[i] / p
        } else {
            0.0
        }
    })
}

/// Fisher information under the given detection model; the discrete sum when σ = 0.
pub fn fisher_with_noise(dist: &OutcomeDistribution, model: &DetectionModel, n_atoms: usize) -> Result<f64> {
    if model.sigma(n_atoms) > 0.0 {
        Ok(noisy_fisher_information(&smear(dist, model, n_atoms)?))
    } else {
        Ok(fisher_information(dist, DEFAULT_PROBABILITY_FLOOR))
    }
}

/// Quantum Fisher information of a pure state under collective rotations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumFisher {
    /// `4 Var(J_y)`.
    pub generator_y: f64,
    /// `4 λ_max` of the spin covariance matrix.
    pub optimal: f64,
}

pub fn quantum_fisher_information(state: &DickeState) -> QuantumFisher {
    let m = state.moments();
    let cov = Matrix3::from_fn(|i, j| m.covariance[i][j]);
    let eig = SymmetricEigen::new(cov);
    let lmax = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    QuantumFisher {
        generator_y: 4.0 * m.variance(Axis::Y),
        optimal: 4.0 * lmax,
    }
}

/// Twin-Fock reference value `N²/2 + N`.
pub fn twin_fock_qfi(n_atoms: usize) -> f64 {
    let n = n_atoms as f64;
    n * n / 2.0 + n
}

/// Analytic estimate of the optimal TACT strength, `ln(2πN) / 2N`.
pub fn optimal_twisting_seed(n_atoms: usize) -> f64 {
    let n = n_atoms as f64;
    (2.0 * std::f64::consts::PI * n).ln() / (2.0 * n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalTwisting {
    /// Scanned maximizer of the optimal QFI.
    pub t_chi: f64,
    pub seed: f64,
    pub qfi: f64,
}

/// Locates the TACT strength maximizing the QFI: a 101-point scan over
/// `seed · [0.5, 1.5]` followed by golden-section refinement.
pub fn optimal_twisting(system: SpinSystem) -> Result<OptimalTwisting> {
    if system.n_atoms() < 2 {
        return Err(Error::InvalidArgument("optimal twisting needs N >= 2".into()));
    }
    let seed = optimal_twisting_seed(system.n_atoms());
    let h = build_twisting_hamiltonian(system, TwistingKind::Tact);
    let grid = linspace(0.5 * seed, 1.5 * seed, 101);
    let mut states = Vec::with_capacity(grid.len());
    let mut state = DickeState::pole(system).evolve(&h, grid[0])?;
    for (i, &t) in grid.iter().enumerate() {
        if i > 0 {
            state = state.evolve(&h, t - grid[i - 1])?;
        }
        states.push(state.clone());
    }
    let values: Vec<f64> = states.iter().map(|s| quantum_fisher_information(s).optimal).collect();
    let best = values
        .iter()
        .enumerate()
        .fold(0, |b, (i, v)| if *v > values[b] { i } else { b });
    let lo_i = best.saturating_sub(1);
    let hi_i = (best + 1).min(grid.len() - 1);
    let base = &states[lo_i];
    let t0 = grid[lo_i];
    let (t, q) = golden_max(
        |t| Ok(quantum_fisher_information(&base.evolve(&h, t - t0)?).optimal),
        grid[lo_i],
        grid[hi_i],
        1e-4 * seed,
    )?;
    let (t_chi, qfi) = if q >= values[best] { (t, q) } else { (grid[best], values[best]) };
    Ok(OptimalTwisting { t_chi, seed, qfi })
}

/// Maximizes `f(θ)` over `θ ∈ (0, 0.1]`: 21-point log grid from 1e-4, then golden-section refinement in `ln θ`.
pub fn optimize_theta<F>(mut f: F) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let grid: Vec<f64> = logspace(1e-4, 0.1, 21).into_iter().map(f64::ln).collect();
    let (lt, v) = grid_then_golden(|lt| f(lt.exp()), &grid, 1e-3)?;
    Ok((lt.exp(), v))
}
