//! Propagation of state vectors under `exp(-i s H)` for Hermitian `H`.
//!
//! Two propagators are provided. Small systems use a cached dense
//! eigendecomposition of `H`; everything else goes through a Lanczos
//! (Krylov subspace) propagator with adaptive sub-stepping, which only needs
//! matrix-vector products and therefore works for the banded Dicke-basis
//! operators and for the sparse three-mode operators alike.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest dimension for which [`Propagator::Auto`] diagonalizes densely.
pub const DENSE_MAX_DIM: usize = 128;

/// Target accuracy of the Krylov propagator (vector 2-norm, relative to the input norm).
pub const KRYLOV_TOLERANCE: f64 = 1e-12;

const KRYLOV_MAX_SUBSPACE: usize = 40;

const ROUNDOFF_COEFFICIENT: f64 = 1e-14;

/// Anything that can act linearly on a complex amplitude vector.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// `y = A x`. `y` is overwritten.
    fn apply(&self, x: &[Complex64], y: &mut [Complex64]);

    /// Upper bound on the operator norm (any induced norm bound is fine).
    fn norm_bound(&self) -> f64;

    fn to_dense(&self) -> DMatrix<Complex64>;

    /// Cache slot for the dense eigendecomposition, if the operator keeps one.
    fn eigen_cache(&self) -> Option<&OnceLock<Arc<DenseEigen>>> {
        None
    }

    /// Exact `exp(-i scale A) x` through a decomposition that exploits the
    /// operator's structure, when one is available.
    fn structured_propagate(&self, _x: &[Complex64], _scale: f64) -> Option<Vec<Complex64>> {
        None
    }
}

/// Eigendecomposition `H = V diag(values) V†` of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct DenseEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<Complex64>,
}

impl DenseEigen {
    pub fn new(matrix: DMatrix<Complex64>) -> Self {
        let eig = SymmetricEigen::new(matrix);
        Self {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    /// `exp(-i scale H) x`.
    pub fn propagate(&self, x: &[Complex64], scale: f64) -> Vec<Complex64> {
        let v = &self.vectors;
        let n = x.len();
        let xv = DVector::from_column_slice(x);
        let mut coeff = v.ad_mul(&xv);
        for (c, &lam) in coeff.iter_mut().zip(self.values.iter()) {
            *c *= Complex64::from_polar(1.0, -scale * lam);
        }
        let out = v * coeff;
        let mut res = Vec::with_capacity(n);
        res.extend(out.iter().copied());
        res
    }
}

/// One Hermitian tridiagonal block of a [`SectorEigen`].
#[derive(Debug, Clone)]
struct Sector {
    indices: Vec<usize>,
    phases: Vec<Complex64>,
    vectors: DMatrix<f64>,
    values: Vec<f64>,
}

/// Spectral decomposition of an operator that splits into independent
/// Hermitian tridiagonal blocks.
///
/// Each block `H_b` is brought to a real symmetric tridiagonal `T_b` by a
/// diagonal phase transform, `H_b = D T_b D†`, and `T_b` is diagonalized.
#[derive(Debug, Clone)]
pub struct SectorEigen {
    dim: usize,
    sectors: Vec<Sector>,
}

/// A tridiagonal block: basis indices, real diagonal, and the couplings
/// `H[indices[k], indices[k+1]]`.
#[derive(Debug, Clone)]
pub struct TridiagonalBlock {
    pub indices: Vec<usize>,
    pub diagonal: Vec<f64>,
    pub off_diagonal: Vec<Complex64>,
}

impl SectorEigen {
    pub fn new(dim: usize, blocks: Vec<TridiagonalBlock>) -> Self {
        let sectors = blocks
            .into_iter()
            .filter(|b| !b.indices.is_empty())
            .map(|b| {
                let n = b.indices.len();
                let mut phases = vec![Complex64::new(1.0, 0.0); n];
                let mut t = DMatrix::<f64>::from_diagonal(&DVector::from_vec(b.diagonal.clone()));
                for k in 0..n - 1 {
                    let c = b.off_diagonal[k];
                    let mag = c.norm();
                    phases[k + 1] = if mag > 0.0 { phases[k] * c.conj() / mag } else { phases[k] };
                    t[(k, k + 1)] = mag;
                    t[(k + 1, k)] = mag;
                }
                let eig = SymmetricEigen::new(t);
                Sector {
                    indices: b.indices,
                    phases,
                    vectors: eig.eigenvectors,
                    values: eig.eigenvalues.iter().copied().collect(),
                }
            })
            .collect();
        Self { dim, sectors }
    }

    /// `exp(-i scale H) x`; components outside every block are left unchanged.
    pub fn propagate(&self, x: &[Complex64], scale: f64) -> Vec<Complex64> {
        debug_assert_eq!(x.len(), self.dim);
        let mut out = x.to_vec();
        for s in &self.sectors {
            let n = s.indices.len();
            let local: Vec<Complex64> = s.indices.iter().zip(&s.phases).map(|(&i, d)| d.conj() * x[i]).collect();
            let w = &s.vectors;
            let coeffs: Vec<Complex64> = (0..n)
                .map(|k| {
                    let c: Complex64 = w.column(k).iter().zip(&local).map(|(wv, l)| l * *wv).sum();
                    c * Complex64::from_polar(1.0, -scale * s.values[k])
                })
                .collect();
            for (r, (&i, d)) in s.indices.iter().zip(&s.phases).enumerate() {
                let v: Complex64 = (0..n).map(|k| coeffs[k] * w[(r, k)]).sum();
                out[i] = d * v;
            }
        }
        out
    }
}

/// Choice of matrix-exponential strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Propagator {
    /// Structured decomposition when the operator offers one, otherwise
    /// dense for `dim <= DENSE_MAX_DIM` and Krylov above.
    #[default]
    Auto,
    Dense,
    Krylov,
}

/// Applies `exp(-i scale H)` to `x`.
pub fn propagate<O: LinearOperator + ?Sized>(
    op: &O,
    x: &[Complex64],
    scale: f64,
    method: Propagator,
) -> Result<Vec<Complex64>> {
    if x.len() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            found: x.len(),
        });
    }
    if !scale.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "evolution scale must be finite, got {scale}"
        )));
    }
    if scale == 0.0 {
        return Ok(x.to_vec());
    }
    if method == Propagator::Auto {
        if let Some(out) = op.structured_propagate(x, scale) {
            return Ok(out);
        }
    }
    let dense = match method {
        Propagator::Auto => op.dim() <= DENSE_MAX_DIM,
        Propagator::Dense => true,
        Propagator::Krylov => false,
    };
    if dense {
        Ok(match op.eigen_cache() {
            Some(cell) => cell
                .get_or_init(|| Arc::new(DenseEigen::new(op.to_dense())))
                .propagate(x, scale),
            None => DenseEigen::new(op.to_dense()).propagate(x, scale),
        })
    } else {
        krylov_propagate(op, x, scale, KRYLOV_TOLERANCE)
    }
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Lanczos propagation of `exp(-i scale H) x` with a posteriori step control.
///
/// The total error is kept below `tol * |x|` by bounding the local error of
/// each sub-step by `tol * |x| * tau / |scale|`.
pub fn krylov_propagate<O: LinearOperator + ?Sized>(
    op: &O,
    x: &[Complex64],
    scale: f64,
    tol: f64,
) -> Result<Vec<Complex64>> {
    let dim = op.dim();
    let x_norm = norm(x);
    if x_norm == 0.0 || scale == 0.0 {
        return Ok(x.to_vec());
    }
    let m_max = KRYLOV_MAX_SUBSPACE.min(dim);
    let total = scale.abs();
    let sign = scale.signum();
    let h_norm = op.norm_bound().max(f64::MIN_POSITIVE);

    let mut w = x.to_vec();
    let mut done = 0.0;
    let mut tau = total.min(0.5 * m_max as f64 / h_norm);
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m_max + 1);
    let mut scratch = vec![Complex64::new(0.0, 0.0); dim];
    let mut steps = 0usize;

    while done < total {
        steps += 1;
        if steps > 1_000_000 {
            return Err(Error::Numerical("Krylov propagation did not converge".into()));
        }
        let beta0 = norm(&w);
        if beta0 == 0.0 {
            break;
        }
        // Lanczos with full reorthogonalization.
        basis.clear();
        basis.push(w.iter().map(|c| c / beta0).collect());
        let mut alpha = Vec::with_capacity(m_max);
        let mut beta = Vec::with_capacity(m_max);
        let mut breakdown = false;
        for j in 0..m_max {
            op.apply(&basis[j], &mut scratch);
            let a = dot(&basis[j], &scratch).re;
            for _ in 0..2 {
                for q in basis.iter() {
                    let c = dot(q, &scratch);
                    for (s, qv) in scratch.iter_mut().zip(q) {
                        *s -= c * qv;
                    }
                }
            }
            alpha.push(a);
            let b = norm(&scratch);
            beta.push(b);
            if b <= 1e-13 * h_norm {
                breakdown = true;
                break;
            }
            basis.push(scratch.iter().map(|c| c / b).collect());
        }
        let m = alpha.len();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let small_exp = |tau: f64| -> Vec<Complex64> {
            // exp(-i sign tau T) e1 = S exp(-i sign tau Λ) S^T e1
            let s = &eig.eigenvectors;
            let mut out = vec![Complex64::new(0.0, 0.0); m];
            for k in 0..m {
                let phase = Complex64::from_polar(s[(0, k)], -sign * tau * eig.eigenvalues[k]);
                for (i, o) in out.iter_mut().enumerate() {
                    *o += s[(i, k)] * phase;
                }
            }
            out
        };

        let remaining = total - done;
        let mut step = if breakdown { remaining } else { tau.min(remaining) };
        let coeffs = loop {
            let y = small_exp(step);
            if breakdown {
                break y;
            }
            let err = beta0 * beta[m - 1] * y[m - 1].norm();
            let allowed = tol * x_norm * step / total;
            // Below this the last coefficient is roundoff of the small eigenproblem
            // and shrinking the step cannot reduce the estimate any further.
            let at_roundoff = y[m - 1].norm() <= ROUNDOFF_COEFFICIENT;
            if err <= allowed || at_roundoff {
                // Grow the next step when the estimate leaves plenty of room.
                tau = if err < 0.1 * allowed || at_roundoff { step * 1.5 } else { step };
                break y;
            }
            step *= 0.6;
        };

        w.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (c, q) in coeffs.iter().zip(basis.iter()) {
            let c = c * beta0;
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi += c * qi;
            }
        }
        done += step;
        if breakdown {
            break;
        }
    }
    Ok(w)
}
