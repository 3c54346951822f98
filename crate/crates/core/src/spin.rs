//! Symmetric two-mode ensembles in the Dicke basis.
//!
//! Basis index `i` labels the `J_z` eigenvalue `μ_i = j - i`, so index 0 is
//! `μ = +N/2` (all atoms in mode `a`) and the last index is `μ = -N/2`.
//!
//! Operators are stored by diagonal band. A band offset is `row - col`, so
//! `J_+` (which lowers the index) sits on band `-1` and `J_-` on band `+1`.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::{self, DenseEigen, LinearOperator, Propagator, SectorEigen, TridiagonalBlock};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Largest atom number for which y-rotations use the closed-form small-d matrix.
pub const ROTATION_DENSE_MAX_ATOMS: usize = 1024;

/// An ensemble of `N` atoms restricted to the symmetric (`j = N/2`) sector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpinSystem {
    n_atoms: usize,
}

impl SpinSystem {
    pub fn new(n_atoms: usize) -> Result<Self> {
        if n_atoms == 0 {
            return Err(Error::InvalidArgument("atom number must be positive".into()));
        }
        Ok(Self { n_atoms })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    /// Twice the total spin; always equal to `N`.
    pub fn two_j(&self) -> usize {
        self.n_atoms
    }

    pub fn j(&self) -> f64 {
        self.n_atoms as f64 / 2.0
    }

    pub fn dim(&self) -> usize {
        self.n_atoms + 1
    }

    /// `J_z` eigenvalue of basis index `i`.
    pub fn mu(&self, index: usize) -> f64 {
        (self.n_atoms as f64 - 2.0 * index as f64) / 2.0
    }

    /// All `J_z` eigenvalues in basis order (descending).
    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.mu(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpinComponent {
    Jx,
    Jy,
    Jz,
    Jplus,
    Jminus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn component(self) -> SpinComponent {
        match self {
            Axis::X => SpinComponent::Jx,
            Axis::Y => SpinComponent::Jy,
            Axis::Z => SpinComponent::Jz,
        }
    }
}

/// Nonlinear interaction used to squeeze and to echo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TwistingKind {
    /// Two-axis countertwisting, `-(J_x J_y + J_y J_x)`.
    Tact,
    /// One-axis twisting about x, `J_x^2`.
    Oat,
}

/// Twisting strength as the dimensionless product `t χ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwistingParams {
    pub kind: TwistingKind,
    t_chi: f64,
}

impl TwistingParams {
    pub fn new(kind: TwistingKind, t_chi: f64) -> Result<Self> {
        if !(t_chi >= 0.0) || !t_chi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "twisting strength must be finite and non-negative, got {t_chi}"
            )));
        }
        Ok(Self { kind, t_chi })
    }

    pub fn t_chi(&self) -> f64 {
        self.t_chi
    }
}

/// Banded operator on the Dicke basis.
///
/// Band `d` holds the elements `M[r][c]` with `r - c = d`, ordered by
/// `min(r, c)`.
#[derive(Debug, Clone)]
pub struct BandedOperator {
    system: SpinSystem,
    bands: BTreeMap<isize, Vec<Complex64>>,
    eigen: Arc<OnceLock<Arc<DenseEigen>>>,
    sectors: Arc<OnceLock<Option<Arc<SectorEigen>>>>,
}

impl BandedOperator {
    pub fn zero(system: SpinSystem) -> Self {
        Self {
            system,
            bands: BTreeMap::new(),
            eigen: Arc::default(),
            sectors: Arc::default(),
        }
    }

    /// Builds an operator from explicit bands; each band must have length `dim - |offset|`.
    pub fn from_bands(system: SpinSystem, bands: BTreeMap<isize, Vec<Complex64>>) -> Result<Self> {
        let dim = system.dim();
        for (&d, band) in &bands {
            let expected = dim.saturating_sub(d.unsigned_abs());
            if d.unsigned_abs() >= dim || band.len() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    found: band.len(),
                });
            }
        }
        Ok(Self {
            system,
            bands,
            eigen: Arc::default(),
            sectors: Arc::default(),
        })
    }

    pub fn system(&self) -> SpinSystem {
        self.system
    }

    pub fn bands(&self) -> &BTreeMap<isize, Vec<Complex64>> {
        &self.bands
    }

    pub fn band(&self, offset: isize) -> Option<&[Complex64]> {
        self.bands.get(&offset).map(Vec::as_slice)
    }

    /// Offsets whose band holds at least one entry above `tol` in magnitude.
    pub fn occupied_bands(&self, tol: f64) -> Vec<isize> {
        self.bands
            .iter()
            .filter(|(_, b)| b.iter().any(|c| c.norm() > tol))
            .map(|(&d, _)| d)
            .collect()
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        let d = row as isize - col as isize;
        self.bands
            .get(&d)
            .map(|b| b[row.min(col)])
            .unwrap_or(ZERO)
    }

    /// Largest `|M - M†|` entry.
    pub fn hermiticity_defect(&self) -> f64 {
        let dim = self.system.dim();
        let mut worst: f64 = 0.0;
        for (&d, band) in &self.bands {
            let mirror = self.bands.get(&-d);
            for (k, &v) in band.iter().enumerate() {
                let other = mirror.map(|m| m[k]).unwrap_or(ZERO);
                worst = worst.max((v - other.conj()).norm());
            }
            debug_assert_eq!(band.len(), dim - d.unsigned_abs());
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        let bands = self
            .bands
            .iter()
            .map(|(&d, b)| (d, b.iter().map(|c| c * factor).collect()))
            .collect();
        Self {
            system: self.system,
            bands,
            eigen: Arc::default(),
            sectors: Arc::default(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let mut bands = self.bands.clone();
        for (&d, b) in &other.bands {
            let entry = bands
                .entry(d)
                .or_insert_with(|| vec![ZERO; b.len()]);
            for (e, v) in entry.iter_mut().zip(b) {
                *e += v;
            }
        }
        Ok(Self {
            system: self.system,
            bands,
            eigen: Arc::default(),
            sectors: Arc::default(),
        })
    }

    /// Matrix product `self * other`; band offsets add.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let dim = self.system.dim() as isize;
        let mut bands: BTreeMap<isize, Vec<Complex64>> = BTreeMap::new();
        for (&da, a) in &self.bands {
            for (&db, b) in &other.bands {
                let d = da + db;
                if d.abs() >= dim {
                    continue;
                }
                let out = bands
                    .entry(d)
                    .or_insert_with(|| vec![ZERO; (dim - d.abs()) as usize]);
                // A[r][s] B[s][c] with r - s = da, s - c = db.
                for (ka, &va) in a.iter().enumerate() {
                    let (r, s) = band_position(da, ka);
                    let c = s as isize - db;
                    if c < 0 || c >= dim {
                        continue;
                    }
                    let c = c as usize;
                    let kb = s.min(c);
                    out[r.min(c)] += va * b[kb];
                }
            }
        }
        Ok(Self {
            system: self.system,
            bands,
            eigen: Arc::default(),
            sectors: Arc::default(),
        })
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.system != other.system {
            return Err(Error::DimensionMismatch {
                expected: self.system.dim(),
                found: other.system.dim(),
            });
        }
        Ok(())
    }

    /// `⟨ψ|M|ψ⟩`.
    pub fn expectation(&self, amplitudes: &[Complex64]) -> Complex64 {
        let mut y = vec![ZERO; amplitudes.len()];
        self.apply(amplitudes, &mut y);
        amplitudes.iter().zip(&y).map(|(a, b)| a.conj() * b).sum()
    }
}

fn band_position(offset: isize, k: usize) -> (usize, usize) {
    if offset >= 0 {
        (k + offset as usize, k)
    } else {
        (k, k + offset.unsigned_abs())
    }
}

impl LinearOperator for BandedOperator {
    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        y.iter_mut().for_each(|v| *v = ZERO);
        for (&d, band) in &self.bands {
            if d >= 0 {
                let d = d as usize;
                for (k, &v) in band.iter().enumerate() {
                    y[k + d] += v * x[k];
                }
            } else {
                let d = d.unsigned_abs();
                for (k, &v) in band.iter().enumerate() {
                    y[k] += v * x[k + d];
                }
            }
        }
    }

    fn norm_bound(&self) -> f64 {
        // Max absolute row sum.
        let mut rows = vec![0.0; self.system.dim()];
        for (&d, band) in &self.bands {
            for (k, v) in band.iter().enumerate() {
                let (r, _) = band_position(d, k);
                rows[r] += v.norm();
            }
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    fn to_dense(&self) -> DMatrix<Complex64> {
        let dim = self.system.dim();
        let mut m = DMatrix::from_element(dim, dim, ZERO);
        for (&d, band) in &self.bands {
            for (k, &v) in band.iter().enumerate() {
                let (r, c) = band_position(d, k);
                m[(r, c)] = v;
            }
        }
        m
    }

    fn eigen_cache(&self) -> Option<&OnceLock<Arc<DenseEigen>>> {
        Some(self.eigen.as_ref())
    }

    fn structured_propagate(&self, x: &[Complex64], scale: f64) -> Option<Vec<Complex64>> {
        let sectors = self.sectors.get_or_init(|| self.stride_sectors().map(Arc::new));
        sectors.as_ref().map(|s| s.propagate(x, scale))
    }
}

/// Largest block handled by the stride-sector decomposition.
pub const SECTOR_MAX_DIM: usize = 1200;

impl BandedOperator {
    /// Splits a Hermitian operator whose only bands are `0` and `±s` into
    /// `s` interleaved tridiagonal blocks.
    fn stride_sectors(&self) -> Option<SectorEigen> {
        let dim = self.system.dim();
        let occupied = self.occupied_bands(0.0);
        let stride = occupied.iter().map(|d| d.unsigned_abs()).max().unwrap_or(0).max(1);
        if stride > 2 || occupied.iter().any(|&d| d != 0 && d.unsigned_abs() != stride) {
            return None;
        }
        if dim.div_ceil(stride) > SECTOR_MAX_DIM || self.hermiticity_defect() > 1e-12 * self.norm_bound().max(1.0) {
            return None;
        }
        let blocks = (0..stride.min(dim))
            .map(|start| {
                let indices: Vec<usize> = (start..dim).step_by(stride).collect();
                let diagonal = indices.iter().map(|&i| self.get(i, i).re).collect();
                let off_diagonal = indices.windows(2).map(|w| self.get(w[0], w[1])).collect();
                TridiagonalBlock {
                    indices,
                    diagonal,
                    off_diagonal,
                }
            })
            .collect();
        Some(SectorEigen::new(dim, blocks))
    }
}

/// Collective spin operator in the fixed Dicke ordering.
pub fn build_spin_operator(system: SpinSystem, which: SpinComponent) -> BandedOperator {
    let dim = system.dim();
    let j = system.j();
    let ladder = |k: usize| {
        // ⟨m+1|J_+|m⟩ with m = μ_{k+1}, i.e. coupling of indices k and k+1.
        let m = system.mu(k + 1);
        Complex64::new((j * (j + 1.0) - m * (m + 1.0)).max(0.0).sqrt(), 0.0)
    };
    let ladder_band: Vec<Complex64> = (0..dim - 1).map(ladder).collect();
    let mut bands = BTreeMap::new();
    match which {
        SpinComponent::Jz => {
            bands.insert(0, (0..dim).map(|i| Complex64::new(system.mu(i), 0.0)).collect());
        }
        SpinComponent::Jplus => {
            bands.insert(-1, ladder_band);
        }
        SpinComponent::Jminus => {
            bands.insert(1, ladder_band);
        }
        SpinComponent::Jx => {
            let half: Vec<Complex64> = ladder_band.iter().map(|c| c * 0.5).collect();
            bands.insert(-1, half.clone());
            bands.insert(1, half);
        }
        SpinComponent::Jy => {
            // (J_+ - J_-) / 2i
            let up: Vec<Complex64> = ladder_band.iter().map(|c| c / Complex64::new(0.0, 2.0)).collect();
            let down: Vec<Complex64> = up.iter().map(|c| -c).collect();
            bands.insert(-1, up);
            bands.insert(1, down);
        }
    }
    if dim == 1 {
        bands.retain(|&d, _| d == 0);
    }
    BandedOperator::from_bands(system, bands).expect("band lengths are consistent by construction")
}

/// Twisting Hamiltonian with `χ` factored out.
///
/// Operators are shared per `(N, kind)`, so clones reuse one lazily built
/// decomposition.
pub fn build_twisting_hamiltonian(system: SpinSystem, kind: TwistingKind) -> BandedOperator {
    static CACHE: OnceLock<Mutex<HashMap<(usize, TwistingKind), BandedOperator>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(h) = cache.lock().expect("cache lock").get(&(system.n_atoms, kind)) {
        return h.clone();
    }
    let h = twisting_hamiltonian(system, kind);
    cache
        .lock()
        .expect("cache lock")
        .entry((system.n_atoms, kind))
        .or_insert(h)
        .clone()
}

fn twisting_hamiltonian(system: SpinSystem, kind: TwistingKind) -> BandedOperator {
    match kind {
        TwistingKind::Tact => {
            let jp = build_spin_operator(system, SpinComponent::Jplus);
            let jm = build_spin_operator(system, SpinComponent::Jminus);
            let jp2 = jp.matmul(&jp).expect("same system");
            let jm2 = jm.matmul(&jm).expect("same system");
            // -(J_+^2 - J_-^2) / 2i = (i/2)(J_+^2 - J_-^2)
            let diff = jp2.add(&jm2.scaled(Complex64::new(-1.0, 0.0))).expect("same system");
            diff.scaled(Complex64::new(0.0, 0.5))
        }
        TwistingKind::Oat => {
            let jx = build_spin_operator(system, SpinComponent::Jx);
            jx.matmul(&jx).expect("same system")
        }
    }
}

/// Pure state of the symmetric ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct DickeState {
    system: SpinSystem,
    amplitudes: Vec<Complex64>,
}

/// Norm tolerance for [`DickeState::from_amplitudes`].
pub const NORM_TOLERANCE: f64 = 1e-10;

impl DickeState {
    /// Coherent spin state at the `+J_z` pole.
    pub fn pole(system: SpinSystem) -> Self {
        let mut amplitudes = vec![ZERO; system.dim()];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Self { system, amplitudes }
    }

    /// Dicke state with all weight on basis index `index`.
    pub fn basis(system: SpinSystem, index: usize) -> Result<Self> {
        if index >= system.dim() {
            return Err(Error::InvalidArgument(format!(
                "basis index {index} out of range for dimension {}",
                system.dim()
            )));
        }
        let mut amplitudes = vec![ZERO; system.dim()];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(Self { system, amplitudes })
    }

    /// Coherent spin state with amplitudes
    /// `√C(N,k) cos(ϑ/2)^(N-k) sin(ϑ/2)^k e^(-ikφ)` on `μ = j - k`.
    pub fn coherent(system: SpinSystem, polar: f64, azimuth: f64) -> Self {
        Self {
            system,
            amplitudes: coherent_amplitudes(system.n_atoms, polar, azimuth),
        }
    }

    pub fn from_amplitudes(system: SpinSystem, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != system.dim() {
            return Err(Error::DimensionMismatch {
                expected: system.dim(),
                found: amplitudes.len(),
            });
        }
        let n2: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
        if (n2 - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "state norm squared {n2} differs from 1"
            )));
        }
        Ok(Self { system, amplitudes })
    }

    pub(crate) fn from_raw(system: SpinSystem, amplitudes: Vec<Complex64>) -> Self {
        debug_assert_eq!(amplitudes.len(), system.dim());
        Self { system, amplitudes }
    }

    pub fn system(&self) -> SpinSystem {
        self.system
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }

    /// `|⟨self|other⟩|^2`.
    pub fn fidelity(&self, other: &DickeState) -> f64 {
        let o: Complex64 = self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum();
        o.norm_sqr()
    }

    /// `exp(-i scale H) |ψ⟩`.
    pub fn evolve(&self, h: &BandedOperator, scale: f64) -> Result<Self> {
        self.evolve_with(h, scale, Propagator::Auto)
    }

    pub fn evolve_with(&self, h: &BandedOperator, scale: f64, method: Propagator) -> Result<Self> {
        if h.system() != self.system {
            return Err(Error::DimensionMismatch {
                expected: self.system.dim(),
                found: h.system().dim(),
            });
        }
        let defect = h.hermiticity_defect();
        if defect > 1e-12 * h.norm_bound().max(1.0) {
            return Err(Error::NotHermitian { deviation: defect });
        }
        let amplitudes = expm::propagate(h, &self.amplitudes, scale, method)?;
        Ok(Self {
            system: self.system,
            amplitudes,
        })
    }

    /// `exp(-i angle J_axis) |ψ⟩`.
    pub fn rotate(&self, axis: Axis, angle: f64) -> Result<Self> {
        Ok(Self {
            system: self.system,
            amplitudes: rotate_amplitudes(self.system, &self.amplitudes, axis, angle)?,
        })
    }

    /// First and second moments of `(J_x, J_y, J_z)`.
    pub fn moments(&self) -> SpinMoments {
        SpinMoments::of(self)
    }
}

/// Applies `exp(-i angle J_axis)` to a raw amplitude vector (not necessarily normalized).
///
/// z-rotations are diagonal phases. For `N <= ROTATION_DENSE_MAX_ATOMS`,
/// x-rotations use the cached eigenbasis of `J_x` and y-rotations conjugate
/// them with quarter turns about z; larger systems exponentiate the generator.
pub fn rotate_amplitudes(system: SpinSystem, amplitudes: &[Complex64], axis: Axis, angle: f64) -> Result<Vec<Complex64>> {
    if amplitudes.len() != system.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            found: amplitudes.len(),
        });
    }
    if angle == 0.0 {
        return Ok(amplitudes.to_vec());
    }
    let small = system.n_atoms <= ROTATION_DENSE_MAX_ATOMS;
    match axis {
        Axis::Z => Ok(z_phase(system, amplitudes, angle)),
        Axis::X if small => Ok(jx_eigenbasis(system.n_atoms).rotate(amplitudes, angle)),
        Axis::Y if small => {
            // exp(-iβJy) = exp(-iπ/2 Jz) exp(-iβJx) exp(+iπ/2 Jz)
            let quarter = std::f64::consts::FRAC_PI_2;
            let a = z_phase(system, amplitudes, -quarter);
            let b = jx_eigenbasis(system.n_atoms).rotate(&a, angle);
            Ok(z_phase(system, &b, quarter))
        }
        _ => expm::propagate(
            &build_spin_operator(system, axis.component()),
            amplitudes,
            angle,
            Propagator::Auto,
        ),
    }
}

fn z_phase(system: SpinSystem, amplitudes: &[Complex64], angle: f64) -> Vec<Complex64> {
    amplitudes
        .iter()
        .enumerate()
        .map(|(i, a)| a * Complex64::from_polar(1.0, -angle * system.mu(i)))
        .collect()
}

/// `J_x = W diag(m) Wᵀ` with real orthogonal `W`; the eigenvalues are snapped
/// to the exact values `m ∈ {−j, …, j}`.
#[derive(Debug)]
struct JxEigenbasis {
    vectors: DMatrix<f64>,
    values: Vec<f64>,
}

impl JxEigenbasis {
    fn new(n_atoms: usize) -> Self {
        let system = SpinSystem { n_atoms };
        let dim = system.dim();
        let j = system.j();
        let mut m = DMatrix::<f64>::zeros(dim, dim);
        for i in 1..dim {
            // ⟨i−1|J_x|i⟩ = ½ √((j + μ + 1)(j − μ)) with μ = μ(i)
            let mu = system.mu(i);
            let v = 0.5 * ((j + mu + 1.0) * (j - mu)).sqrt();
            m[(i - 1, i)] = v;
            m[(i, i - 1)] = v;
        }
        let eig = nalgebra::SymmetricEigen::new(m);
        let values = eig.eigenvalues.iter().map(|&l| (l + j).round() - j).collect();
        Self {
            vectors: eig.eigenvectors,
            values,
        }
    }

    fn rotate(&self, amplitudes: &[Complex64], angle: f64) -> Vec<Complex64> {
        let w = &self.vectors;
        let dim = amplitudes.len();
        let coeffs: Vec<Complex64> = (0..dim)
            .map(|k| {
                let c: Complex64 = (0..dim).map(|i| amplitudes[i] * w[(i, k)]).sum();
                c * Complex64::from_polar(1.0, -angle * self.values[k])
            })
            .collect();
        (0..dim)
            .map(|i| (0..dim).map(|k| coeffs[k] * w[(i, k)]).sum())
            .collect()
    }
}

fn jx_eigenbasis(n_atoms: usize) -> Arc<JxEigenbasis> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<JxEigenbasis>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(e) = cache.lock().expect("cache lock").get(&n_atoms) {
        return Arc::clone(e);
    }
    let e = Arc::new(JxEigenbasis::new(n_atoms));
    cache
        .lock()
        .expect("cache lock")
        .entry(n_atoms)
        .or_insert(e)
        .clone()
}

/// Coherent-state amplitudes computed in log space so large `N` does not overflow.
pub fn coherent_amplitudes(n_atoms: usize, polar: f64, azimuth: f64) -> Vec<Complex64> {
    let dim = n_atoms + 1;
    let c = (polar / 2.0).cos();
    let s = (polar / 2.0).sin();
    let mut out = vec![ZERO; dim];
    let ln_c = c.abs().ln();
    let ln_s = s.abs().ln();
    let mut ln_binom = 0.0;
    for k in 0..dim {
        if k > 0 {
            ln_binom += ((n_atoms - k + 1) as f64).ln() - (k as f64).ln();
        }
        let cos_pow = (n_atoms - k) as i32;
        let sin_pow = k as i32;
        let mag = if (c == 0.0 && cos_pow > 0) || (s == 0.0 && sin_pow > 0) {
            0.0
        } else {
            let mut l = 0.5 * ln_binom;
            if cos_pow > 0 {
                l += cos_pow as f64 * ln_c;
            }
            if sin_pow > 0 {
                l += sin_pow as f64 * ln_s;
            }
            let sign = if (c < 0.0 && cos_pow % 2 == 1) ^ (s < 0.0 && sin_pow % 2 == 1) {
                -1.0
            } else {
                1.0
            };
            sign * l.exp()
        };
        out[k] = Complex64::from_polar(mag, -(k as f64) * azimuth);
    }
    out
}

/// Dense small-d matrix `d(β) = exp(-iβ J_y)` for `N <= ROTATION_DENSE_MAX_ATOMS` atoms, row-major.
pub fn wigner_small_d(n_atoms: usize, beta: f64) -> Result<Vec<f64>> {
    let system = SpinSystem::new(n_atoms)?;
    let dim = system.dim();
    let mut d = vec![0.0; dim * dim];
    for c in 0..dim {
        let mut e = vec![Complex64::new(0.0, 0.0); dim];
        e[c] = Complex64::new(1.0, 0.0);
        for (r, v) in rotate_amplitudes(system, &e, Axis::Y, beta)?.into_iter().enumerate() {
            d[r * dim + c] = v.re;
        }
    }
    Ok(d)
}

/// Means and symmetrized covariance of the collective spin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinMoments {
    /// `⟨J_x⟩, ⟨J_y⟩, ⟨J_z⟩`.
    pub mean: [f64; 3],
    /// `½⟨{J_a, J_b}⟩ - ⟨J_a⟩⟨J_b⟩`.
    pub covariance: [[f64; 3]; 3],
}

impl SpinMoments {
    pub fn of(state: &DickeState) -> Self {
        let system = state.system();
        let psi = state.amplitudes();
        let applied: Vec<Vec<Complex64>> = [SpinComponent::Jx, SpinComponent::Jy, SpinComponent::Jz]
            .iter()
            .map(|&c| {
                let op = build_spin_operator(system, c);
                let mut y = vec![ZERO; psi.len()];
                op.apply(psi, &mut y);
                y
            })
            .collect();
        let inner = |a: &[Complex64], b: &[Complex64]| -> Complex64 {
            a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
        };
        let mut mean = [0.0; 3];
        for (a, m) in applied.iter().zip(mean.iter_mut()) {
            *m = inner(psi, a).re;
        }
        let mut covariance = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in a..3 {
                // ⟨J_a J_b⟩ = (J_a ψ)† (J_b ψ); the real part is the symmetrized product.
                let v = inner(&applied[a], &applied[b]).re - mean[a] * mean[b];
                covariance[a][b] = v;
                covariance[b][a] = v;
            }
        }
        Self { mean, covariance }
    }

    pub fn variance(&self, axis: Axis) -> f64 {
        let i = axis as usize;
        self.covariance[i][i]
    }
}
