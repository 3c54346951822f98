//! Three-mode (`m_F = 0`, symmetric, antisymmetric) model of the TACT echo
//! driven by spin-changing collisions in an `F = 1` condensate.
//!
//! Basis states `|i;k⟩ = |N − (i+k), i, k⟩` hold `i` atoms in the symmetric
//! side mode S and `k` in the antisymmetric mode A. They are ordered by
//! `l = i + k` and then by `i`, so `|i;k⟩` has index `l(l+1)/2 + i`.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::{self, DenseEigen, LinearOperator, Propagator, SectorEigen, TridiagonalBlock};
use crate::metrology::{self, DetectionModel, OutcomeDistribution};
use crate::spin::{rotate_amplitudes, Axis, SpinSystem};

type C64 = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThreeModeSystem {
    n_atoms: usize,
}

impl ThreeModeSystem {
    pub fn new(n_atoms: usize) -> Result<Self> {
        if n_atoms == 0 {
            return Err(Error::InvalidArgument("atom number must be positive".into()));
        }
        Ok(Self { n_atoms })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn dim(&self) -> usize {
        (self.n_atoms + 1) * (self.n_atoms + 2) / 2
    }

    /// Index of `|i;k⟩`; `None` if `i + k > N`.
    pub fn index(&self, i: usize, k: usize) -> Option<usize> {
        let l = i + k;
        (l <= self.n_atoms).then(|| l * (l + 1) / 2 + i)
    }

    /// `(i, k)` of a basis index.
    pub fn pair(&self, index: usize) -> (usize, usize) {
        let l = (((8 * index + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
        let l = if (l + 1) * (l + 2) / 2 <= index { l + 1 } else { l };
        let i = index - l * (l + 1) / 2;
        (i, l - i)
    }

    /// Eigenvalue of `J_z3 = (N₀ − N_S − N_A)/2` for total side-mode number `l`.
    pub fn jz3(&self, l: usize) -> f64 {
        (self.n_atoms as f64 - 2.0 * l as f64) / 2.0
    }

    fn k_block(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        (0..=self.n_atoms - k).map(move |i| self.index(i, k).expect("in range"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThreeModeState {
    system: ThreeModeSystem,
    amplitudes: Vec<C64>,
}

impl ThreeModeState {
    /// All atoms in `m_F = 0`.
    pub fn vacuum(system: ThreeModeSystem) -> Self {
        let mut amplitudes = vec![C64::new(0.0, 0.0); system.dim()];
        amplitudes[0] = C64::new(1.0, 0.0);
        Self { system, amplitudes }
    }

    pub fn from_amplitudes(system: ThreeModeSystem, amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() != system.dim() {
            return Err(Error::DimensionMismatch {
                expected: system.dim(),
                found: amplitudes.len(),
            });
        }
        let norm: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("state norm² is {norm}, expected 1")));
        }
        Ok(Self { system, amplitudes })
    }

    pub fn system(&self) -> ThreeModeSystem {
        self.system
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn fidelity(&self, other: &Self) -> f64 {
        let overlap: C64 = self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum();
        overlap.norm_sqr()
    }

    pub fn mean_side_populations(&self) -> (f64, f64) {
        let mut ns = 0.0;
        let mut na = 0.0;
        for (idx, a) in self.amplitudes.iter().enumerate() {
            let (i, k) = self.system.pair(idx);
            ns += i as f64 * a.norm_sqr();
            na += k as f64 * a.norm_sqr();
        }
        (ns, na)
    }
}

/// Sparse Hermitian operator on the three-mode basis: a real diagonal plus
/// strictly upper-triangular entries whose adjoints are implied.
#[derive(Debug, Clone)]
pub struct SpinorOperator {
    dim: usize,
    diagonal: Vec<f64>,
    upper: Vec<(usize, usize, C64)>,
    eigen: OnceLock<Arc<DenseEigen>>,
    magnetization: Option<MagnetizationForm>,
    sectors: OnceLock<Option<Arc<SectorEigen>>>,
}

/// Coefficients of an operator of the form
/// `zeeman·L + shift·(2N₀ − 1)·L + 2·mixing·(a₀†² a₊ a₋ + h.c.)`, with
/// `L = N_S + N_A`, which conserves `N₊ − N₋`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct MagnetizationForm {
    n_atoms: usize,
    zeeman: f64,
    shift: f64,
    mixing: f64,
}

/// Largest atom number for which the magnetization-sector propagator is used.
pub const SECTOR_MAX_ATOMS: usize = 400;

impl MagnetizationForm {
    fn sectors(&self, system: ThreeModeSystem) -> SectorEigen {
        let n = self.n_atoms as isize;
        let blocks = (-n..=n)
            .map(|m| {
                let (up, down) = (m.max(0) as usize, (-m).max(0) as usize);
                let pairs = (self.n_atoms - m.unsigned_abs()) / 2;
                let states: Vec<(usize, usize)> = (0..=pairs).map(|p| (up + p, down + p)).collect();
                let indices = states.iter().map(|&(a, b)| system.index(a, b).expect("in range")).collect();
                let diagonal = states
                    .iter()
                    .map(|&(a, b)| {
                        let l = (a + b) as f64;
                        let n0 = self.n_atoms as f64 - l;
                        self.zeeman * l + self.shift * (2.0 * n0 - 1.0) * l
                    })
                    .collect();
                let off_diagonal = states
                    .iter()
                    .skip(1)
                    .map(|&(a, b)| {
                        let n0 = self.n_atoms as f64 - (a + b) as f64;
                        let v = 2.0 * self.mixing * ((a * b) as f64 * (n0 + 1.0) * (n0 + 2.0)).sqrt();
                        C64::new(v, 0.0)
                    })
                    .collect();
                TridiagonalBlock {
                    indices,
                    diagonal,
                    off_diagonal,
                }
            })
            .collect();
        SectorEigen::new(system.dim(), blocks)
    }
}

/// Maps symmetric/antisymmetric amplitudes to the `m_F = ±1` basis, stored
/// with `|N₊, N₋⟩` at [`ThreeModeSystem::index`]`(N₊, N₋)`.
///
/// With `a_S = (a₊ + a₋)/√2` and `a_A = (a₊ − a₋)/√2`, every block of fixed
/// `l` is a spin of `l` atoms and the map is `exp(-i π/2 J_y)` after a sign
/// `(−1)^k`.
pub fn to_magnetization_basis(system: ThreeModeSystem, amplitudes: &[C64]) -> Result<Vec<C64>> {
    let mut out = amplitudes.to_vec();
    for l in 1..=system.n_atoms() {
        let idx: Vec<usize> = (0..=l).map(|k| system.index(l - k, k).expect("in range")).collect();
        let block: Vec<C64> = idx
            .iter()
            .enumerate()
            .map(|(k, &j)| if k % 2 == 0 { amplitudes[j] } else { -amplitudes[j] })
            .collect();
        let rotated = rotate_amplitudes(SpinSystem::new(l)?, &block, Axis::Y, std::f64::consts::FRAC_PI_2)?;
        for (&j, v) in idx.iter().zip(rotated) {
            out[j] = v;
        }
    }
    Ok(out)
}

/// Inverse of [`to_magnetization_basis`].
pub fn from_magnetization_basis(system: ThreeModeSystem, amplitudes: &[C64]) -> Result<Vec<C64>> {
    let mut out = amplitudes.to_vec();
    for l in 1..=system.n_atoms() {
        let idx: Vec<usize> = (0..=l).map(|k| system.index(l - k, k).expect("in range")).collect();
        let block: Vec<C64> = idx.iter().map(|&j| amplitudes[j]).collect();
        let rotated = rotate_amplitudes(SpinSystem::new(l)?, &block, Axis::Y, -std::f64::consts::FRAC_PI_2)?;
        for (k, (&j, v)) in idx.iter().zip(rotated).enumerate() {
            out[j] = if k % 2 == 0 { v } else { -v };
        }
    }
    Ok(out)
}

impl SpinorOperator {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            diagonal: vec![0.0; dim],
            upper: Vec::new(),
            eigen: OnceLock::new(),
            magnetization: None,
            sectors: OnceLock::new(),
        }
    }

    fn push(&mut self, row: usize, col: usize, value: C64) {
        if row == col {
            self.diagonal[row] += value.re;
        } else if row < col {
            self.upper.push((row, col, value));
        } else {
            self.upper.push((col, row, value.conj()));
        }
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    /// Matrix element `⟨row|H|col⟩`.
    pub fn get(&self, row: usize, col: usize) -> C64 {
        if row == col {
            return C64::new(self.diagonal[row], 0.0);
        }
        let (r, c, conj) = if row < col { (row, col, false) } else { (col, row, true) };
        let v: C64 = self
            .upper
            .iter()
            .filter(|(a, b, _)| *a == r && *b == c)
            .map(|(_, _, v)| *v)
            .sum();
        if conj {
            v.conj()
        } else {
            v
        }
    }

    pub fn nnz(&self) -> usize {
        self.dim + 2 * self.upper.len()
    }
}

impl LinearOperator for SpinorOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        for ((yi, xi), d) in y.iter_mut().zip(x).zip(&self.diagonal) {
            *yi = xi * d;
        }
        for &(r, c, v) in &self.upper {
            y[r] += v * x[c];
            y[c] += v.conj() * x[r];
        }
    }

    fn norm_bound(&self) -> f64 {
        let mut rows: Vec<f64> = self.diagonal.iter().map(|d| d.abs()).collect();
        for &(r, c, v) in &self.upper {
            rows[r] += v.norm();
            rows[c] += v.norm();
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.dim,
            self.diagonal.iter().map(|&d| C64::new(d, 0.0)),
        ));
        for &(r, c, v) in &self.upper {
            m[(r, c)] += v;
            m[(c, r)] += v.conj();
        }
        m
    }

    fn eigen_cache(&self) -> Option<&OnceLock<Arc<DenseEigen>>> {
        Some(&self.eigen)
    }

    fn structured_propagate(&self, x: &[C64], scale: f64) -> Option<Vec<C64>> {
        let form = self.magnetization?;
        if form.n_atoms > SECTOR_MAX_ATOMS {
            return None;
        }
        let system = ThreeModeSystem::new(form.n_atoms).ok()?;
        let sectors = self.sectors.get_or_init(|| Some(Arc::new(form.sectors(system))));
        let sectors = sectors.as_ref()?;
        let mf = to_magnetization_basis(system, x).ok()?;
        from_magnetization_basis(system, &sectors.propagate(&mf, scale)).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HamiltonianPart {
    /// `q (N_S + N_A)`.
    QuadraticZeeman,
    /// `λ (2N₀ − 1)(N_S + N_A)`.
    CollisionalShift,
    /// `λ [(a₀†)² a_S² − (a₀†)² a_A² + h.c.]`.
    FourWaveMixing,
    /// Only the symmetric half of the four-wave mixing term.
    FourWaveMixingSymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinorParams {
    pub lambda: f64,
    pub q: f64,
    /// Effective TACT strength `tχ` with `χ = 2λ`.
    pub t_chi_equivalent: f64,
    pub echo_ratio: f64,
    pub theta: f64,
}

impl SpinorParams {
    /// `λ = 1` and the quadratic Zeeman shift cancelling the initial collisional shift, `q = −λ(2N − 1)`.
    pub fn compensated(system: ThreeModeSystem, t_chi_equivalent: f64, echo_ratio: f64, theta: f64) -> Result<Self> {
        let lambda = 1.0;
        let p = Self {
            lambda,
            q: -lambda * (2.0 * system.n_atoms() as f64 - 1.0),
            t_chi_equivalent,
            echo_ratio,
            theta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument("λ must be positive".into()));
        }
        if !self.q.is_finite() || !self.theta.is_finite() {
            return Err(Error::InvalidArgument("q and θ must be finite".into()));
        }
        if !(self.t_chi_equivalent >= 0.0) || !self.t_chi_equivalent.is_finite() {
            return Err(Error::InvalidArgument("t_chi must be >= 0".into()));
        }
        if !(self.echo_ratio >= 0.0) || !self.echo_ratio.is_finite() {
            return Err(Error::InvalidArgument("echo ratio must be >= 0".into()));
        }
        Ok(())
    }

    /// Evolution time of the squeezing stage, `t = tχ / (2λ)`.
    pub fn time(&self) -> f64 {
        self.t_chi_equivalent / (2.0 * self.lambda)
    }
}

pub fn build_spinor_hamiltonian(
    system: ThreeModeSystem,
    params: &SpinorParams,
    parts: &[HamiltonianPart],
) -> SpinorOperator {
    let n = system.n_atoms();
    let lambda = params.lambda;
    let mut h = SpinorOperator::new(system.dim());
    let mut form = MagnetizationForm {
        n_atoms: n,
        ..Default::default()
    };
    for part in parts {
        match part {
            HamiltonianPart::QuadraticZeeman => form.zeeman += params.q,
            HamiltonianPart::CollisionalShift => form.shift += lambda,
            HamiltonianPart::FourWaveMixing => form.mixing += lambda,
            HamiltonianPart::FourWaveMixingSymmetric => {}
        }
    }
    if !parts.contains(&HamiltonianPart::FourWaveMixingSymmetric) {
        h.magnetization = Some(form);
    }
    for part in parts {
        for l in 0..=n {
            let n0 = (n - l) as f64;
            for i in 0..=l {
                let k = l - i;
                let idx = system.index(i, k).expect("in range");
                match part {
                    HamiltonianPart::QuadraticZeeman => h.diagonal[idx] += params.q * l as f64,
                    HamiltonianPart::CollisionalShift => {
                        h.diagonal[idx] += lambda * (2.0 * n0 - 1.0) * l as f64
                    }
                    HamiltonianPart::FourWaveMixing | HamiltonianPart::FourWaveMixingSymmetric => {
                        let pair = ((n0 + 1.0) * (n0 + 2.0)).sqrt();
                        if i >= 2 {
                            let to = system.index(i - 2, k).expect("in range");
                            let v = lambda * ((i * (i - 1)) as f64).sqrt() * pair;
                            h.push(to, idx, C64::new(v, 0.0));
                        }
                        if k >= 2 && *part == HamiltonianPart::FourWaveMixing {
                            let to = system.index(i, k - 2).expect("in range");
                            let v = -lambda * ((k * (k - 1)) as f64).sqrt() * pair;
                            h.push(to, idx, C64::new(v, 0.0));
                        }
                    }
                }
            }
        }
    }
    h
}

/// `J_{y,S} = (a₀† a_S − a_S† a₀) / 2i` on the three-mode basis.
pub fn build_jy_symmetric(system: ThreeModeSystem) -> SpinorOperator {
    let n = system.n_atoms();
    let mut op = SpinorOperator::new(system.dim());
    for k in 0..=n {
        for i in 1..=(n - k) {
            let n0 = (n - i - k) as f64;
            let from = system.index(i, k).expect("in range");
            let to = system.index(i - 1, k).expect("in range");
            let v = ((n0 + 1.0) * i as f64).sqrt() / 2.0;
            op.push(to, from, C64::new(0.0, -v));
        }
    }
    op
}

/// Applies `exp(-i angle J_{axis,S})` inside every fixed-`k` block, where the
/// `(0, S)` pair forms a spin of `N − k` atoms with `J_z = (N₀ − N_S)/2`.
pub fn rotate_symmetric(system: ThreeModeSystem, amplitudes: &[C64], axis: Axis, angle: f64) -> Result<Vec<C64>> {
    if amplitudes.len() != system.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            found: amplitudes.len(),
        });
    }
    let mut out = amplitudes.to_vec();
    for k in 0..system.n_atoms() {
        let idx: Vec<usize> = system.k_block(k).collect();
        let block: Vec<C64> = idx.iter().map(|&j| amplitudes[j]).collect();
        let spin = SpinSystem::new(system.n_atoms() - k)?;
        let rotated = rotate_amplitudes(spin, &block, axis, angle)?;
        for (&j, v) in idx.iter().zip(rotated) {
            out[j] = v;
        }
    }
    Ok(out)
}

/// Multiplies by `exp(-i phase (N_S + N_A))`.
pub fn side_mode_phase(system: ThreeModeSystem, amplitudes: &[C64], phase: f64) -> Vec<C64> {
    amplitudes
        .iter()
        .enumerate()
        .map(|(idx, a)| {
            let (i, k) = system.pair(idx);
            a * C64::from_polar(1.0, -phase * (i + k) as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinorVariant {
    /// Four-wave mixing, collisional shift and the compensating Zeeman shift.
    Full,
    /// Four-wave mixing alone.
    FwmOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinorMeasurement {
    /// Only `N_S + N_A` is counted (outcomes merged over `l = i + k`).
    Cropped,
    /// `N_S` and `N_A` are counted separately.
    Separate,
}

/// `P_l` over `l = i + k`, labelled by the `J_z3` eigenvalues `(N − 2l)/2`.
pub fn effective_jz3_distribution(state: &[C64], tangent: &[C64], system: ThreeModeSystem) -> Result<OutcomeDistribution> {
    let eigenvalues: Vec<f64> = (0..=system.n_atoms()).map(|l| system.jz3(l)).collect();
    let group: Vec<usize> = (0..system.dim())
        .map(|idx| {
            let (i, k) = system.pair(idx);
            i + k
        })
        .collect();
    OutcomeDistribution::from_grouped_amplitudes(eigenvalues, &group, state, tangent)
}

/// Joint `P_{ik}` in basis order, each outcome labelled by its `J_z3` eigenvalue.
pub fn separate_mode_distribution(
    state: &[C64],
    tangent: &[C64],
    system: ThreeModeSystem,
) -> Result<OutcomeDistribution> {
    let eigenvalues: Vec<f64> = (0..system.dim())
        .map(|idx| {
            let (i, k) = system.pair(idx);
            system.jz3(i + k)
        })
        .collect();
    OutcomeDistribution::from_amplitudes(eigenvalues, state, tangent)
}

/// Echo sequence on the three-mode system:
///
/// 1. evolve for `t`;
/// 2. side-mode phase `π/4` aligning the squeezing with the imprint axis;
/// 3. imprint `exp(-iθ J_{y,S})`;
/// 4. side-mode phase `π/4`, which undoes the alignment and adds the `π/2`
///    turn that flips the sign of the four-wave mixing term;
/// 5. evolve for `r t`;
/// 6. side-mode phase `−π/4` restoring the imprint frame;
/// 7. π/2 pulse about `J_{y,S}`;
/// 8. count atoms.
#[derive(Debug, Clone)]
pub struct SpinorEcho {
    system: ThreeModeSystem,
    params: SpinorParams,
    variant: SpinorVariant,
    hamiltonian: SpinorOperator,
    jy: SpinorOperator,
    aligned: Vec<C64>,
}

impl SpinorEcho {
    pub fn new(system: ThreeModeSystem, params: SpinorParams, variant: SpinorVariant) -> Result<Self> {
        let parts: &[HamiltonianPart] = match variant {
            SpinorVariant::Full => &[
                HamiltonianPart::QuadraticZeeman,
                HamiltonianPart::CollisionalShift,
                HamiltonianPart::FourWaveMixing,
            ],
            SpinorVariant::FwmOnly => &[HamiltonianPart::FourWaveMixing],
        };
        Self::with_parts(system, params, variant, parts)
    }

    /// Uses an explicit set of Hamiltonian parts; `variant` is kept only as a label.
    pub fn with_parts(
        system: ThreeModeSystem,
        params: SpinorParams,
        variant: SpinorVariant,
        parts: &[HamiltonianPart],
    ) -> Result<Self> {
        params.validate()?;
        let hamiltonian = build_spinor_hamiltonian(system, &params, parts);
        let start = ThreeModeState::vacuum(system).amplitudes;
        let squeezed = expm::propagate(&hamiltonian, &start, params.time(), Propagator::Auto)?;
        let aligned = side_mode_phase(system, &squeezed, std::f64::consts::FRAC_PI_4);
        Ok(Self {
            system,
            params,
            variant,
            hamiltonian,
            jy: build_jy_symmetric(system),
            aligned,
        })
    }

    pub fn system(&self) -> ThreeModeSystem {
        self.system
    }

    pub fn params(&self) -> &SpinorParams {
        &self.params
    }

    pub fn variant(&self) -> SpinorVariant {
        self.variant
    }

    pub fn set_echo_ratio(&mut self, echo_ratio: f64) -> Result<()> {
        let mut p = self.params;
        p.echo_ratio = echo_ratio;
        p.validate()?;
        self.params = p;
        Ok(())
    }

    /// State after the alignment phase, ready for the imprint.
    pub fn aligned(&self) -> ThreeModeState {
        ThreeModeState {
            system: self.system,
            amplitudes: self.aligned.clone(),
        }
    }

    pub fn imprinted(&self, theta: f64) -> Result<Vec<C64>> {
        rotate_symmetric(self.system, &self.aligned, Axis::Y, theta)
    }

    fn echo(&self, amps: &[C64]) -> Result<Vec<C64>> {
        let quarter = std::f64::consts::FRAC_PI_4;
        let turned = side_mode_phase(self.system, amps, quarter);
        let scale = self.params.echo_ratio * self.params.time();
        let evolved = expm::propagate(&self.hamiltonian, &turned, scale, Propagator::Auto)?;
        Ok(side_mode_phase(self.system, &evolved, -quarter))
    }

    fn downstream(&self, amps: &[C64]) -> Result<Vec<C64>> {
        let echoed = self.echo(amps)?;
        rotate_symmetric(self.system, &echoed, Axis::Y, std::f64::consts::FRAC_PI_2)
    }

    /// State after the echo, before the readout pulse.
    pub fn echoed(&self, theta: f64) -> Result<ThreeModeState> {
        Ok(ThreeModeState {
            system: self.system,
            amplitudes: self.echo(&self.imprinted(theta)?)?,
        })
    }

    pub fn final_state(&self, theta: f64) -> Result<ThreeModeState> {
        Ok(ThreeModeState {
            system: self.system,
            amplitudes: self.downstream(&self.imprinted(theta)?)?,
        })
    }

    pub fn distribution(&self, theta: f64, measurement: SpinorMeasurement) -> Result<OutcomeDistribution> {
        let imprinted = self.imprinted(theta)?;
        let (fin, tan) = metrology::propagate_with_tangent(&imprinted, &self.jy, |a| self.downstream(a))?;
        match measurement {
            SpinorMeasurement::Cropped => effective_jz3_distribution(&fin, &tan, self.system),
            SpinorMeasurement::Separate => separate_mode_distribution(&fin, &tan, self.system),
        }
    }

    /// Fisher information of the chosen measurement. Detection noise is
    /// applied to the `J_z3` count and is only available for the cropped measurement.
    pub fn fisher(&self, theta: f64, measurement: SpinorMeasurement, model: &DetectionModel) -> Result<f64> {
        let n = self.system.n_atoms();
        if measurement == SpinorMeasurement::Separate && model.sigma(n) > 0.0 {
            return Err(Error::InvalidArgument(
                "detection noise is modelled only for the cropped measurement".into(),
            ));
        }
        metrology::fisher_with_noise(&self.distribution(theta, measurement)?, model, n)
    }

    pub fn fisher_optimal_theta(&self, measurement: SpinorMeasurement, model: &DetectionModel) -> Result<(f64, f64)> {
        metrology::optimize_theta(|theta| self.fisher(theta, measurement, model))
    }
}

#[derive(Debug, Clone)]
pub struct SpinorEchoResult {
    pub final_state: ThreeModeState,
    pub distribution: OutcomeDistribution,
}

pub fn run_spinor_echo(
    system: ThreeModeSystem,
    params: &SpinorParams,
    variant: SpinorVariant,
    measurement: SpinorMeasurement,
) -> Result<SpinorEchoResult> {
    let echo = SpinorEcho::new(system, *params, variant)?;
    Ok(SpinorEchoResult {
        final_state: echo.final_state(params.theta)?,
        distribution: echo.distribution(params.theta, measurement)?,
    })
}
