use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use twist_echo::error::Error;
use twist_echo::one_mode::{
    appendix_a_moments, assembled_phase_variance, ideal_phase_variance, noisy_phase_variance, one_mode_magnification,
    one_mode_snr, OneModeParams,
};

const GAMMA_10DB: f64 = 1.151_292_546_497_022_8;

fn params(n: usize, gamma: f64, phi: f64, r: f64, sigma: f64) -> OneModeParams {
    OneModeParams::new(n, gamma, phi, r, sigma).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn unsqueezed_variance_is_the_standard_quantum_limit() {
    let p = params(250, 0.0, 0.2, 1.0, 0.0);
    assert!((ideal_phase_variance(&p).unwrap() - 1.0 / 250.0).abs() < 1e-15);
}

#[test]
fn ten_db_squeezing_reduces_variance_tenfold() {
    let p = params(1000, GAMMA_10DB, 0.0, 1.0, 0.0);
    assert!(rel(ideal_phase_variance(&p).unwrap(), 1e-4) < 1e-12);
}

#[test]
fn noise_term_vanishes_without_noise_and_under_strong_echo() {
    let p = params(1000, 1.0, 0.01, 2.0, 0.0);
    assert_eq!(noisy_phase_variance(&p).unwrap(), ideal_phase_variance(&p).unwrap());
    let ideal = ideal_phase_variance(&p).unwrap();
    let mut prev = f64::INFINITY;
    for r in [0.0, 1.0, 3.0, 6.0, 12.0] {
        let v = noisy_phase_variance(&params(1000, 1.0, 0.01, r, 10.0)).unwrap();
        assert!(v < prev && v >= ideal);
        prev = v;
    }
    assert!(rel(prev, ideal) < 1e-3);
}

#[test]
fn snr_closed_form() {
    assert_eq!(one_mode_snr(&params(100, 0.8, 0.0, 1.0, 0.0)).unwrap(), 0.0);
    let theta = 0.01;
    let p = OneModeParams::from_two_mode(400, 0.0, theta, 1.0, 0.0).unwrap();
    assert!((one_mode_snr(&p).unwrap() - theta * 20.0).abs() < 1e-15);
    let p = OneModeParams::from_two_mode(1000, GAMMA_10DB / 1000.0, 0.001, 1.0, 0.0).unwrap();
    assert!((one_mode_snr(&p).unwrap() - 0.1).abs() < 1e-12);
}

#[test]
fn magnification_is_exponential_in_echo_strength() {
    let p = params(10, 0.7, 0.0, 2.5, 0.0);
    assert!((one_mode_magnification(&p).unwrap() - 1.75f64.exp()).abs() < 1e-12);
}

#[test]
fn out_of_window_and_invalid_parameters() {
    assert!(matches!(
        OneModeParams::new(10, 4.0, 0.0, 6.0, 0.0),
        Err(Error::OutOfWindow(_))
    ));
    assert!(OneModeParams::new(0, 1.0, 0.0, 1.0, 0.0).is_err());
    assert!(OneModeParams::new(10, 1.0, 0.0, -1.0, 0.0).is_err());
    assert!(OneModeParams::new(10, 1.0, 0.0, 1.0, -2.0).is_err());
}

#[test]
fn perfect_unsqueezing_leaves_vacuum() {
    for gamma in [0.1, 0.9, 2.0] {
        let m = appendix_a_moments(&params(10, gamma, 0.0, 1.0, 0.0)).unwrap();
        assert!(m.n_b.abs() < 1e-12);
        assert!(m.bdag_sq.abs() < 1e-12);
    }
}

/// Ladder operator on a Fock space truncated at `dim` levels.
fn annihilation(dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |r, c| if c == r + 1 { (c as f64).sqrt() } else { 0.0 })
}

/// Moments of `S(rγ)⁻¹ D(φ) S(γ)|0⟩` in a truncated Fock space.
fn truncated_moments(gamma: f64, phi: f64, r: f64) -> (f64, f64, f64) {
    let dim = 160;
    let b = annihilation(dim);
    let bd = b.transpose();
    let sq = &b * &b - &bd * &bd;
    let squeeze = |g: f64| (&sq * (g / 2.0)).exp();
    let displace = ((&bd - &b) * phi).exp();
    let mut vac = DVector::zeros(dim);
    vac[0] = 1.0;
    let psi = squeeze(-r * gamma) * displace * squeeze(gamma) * vac;
    let expect = |op: &DMatrix<f64>| psi.dot(&(op * &psi));
    (expect(&bd), expect(&(&bd * &b)), expect(&(&bd * &bd)))
}

#[test]
fn mode_moments_match_truncated_fock_evolution() {
    for (gamma, phi, r) in [(0.3, 0.2, 1.0), (0.8, 0.4, 0.5), (0.5, 0.1, 2.0), (1.0, 0.0, 1.5)] {
        let m = appendix_a_moments(&params(100, gamma, phi, r, 0.0)).unwrap();
        let (mean, n_b, bdag_sq) = truncated_moments(gamma, phi, r);
        assert!((m.mean_bdag.re - mean).abs() < 1e-8, "{gamma} {phi} {r}: {} vs {mean}", m.mean_bdag.re);
        assert!(m.mean_bdag.im.abs() < 1e-15);
        assert!((m.n_b - n_b).abs() < 1e-8, "{gamma} {phi} {r}: {} vs {n_b}", m.n_b);
        assert!((m.bdag_sq - bdag_sq).abs() < 1e-8, "{gamma} {phi} {r}: {} vs {bdag_sq}", m.bdag_sq);
        assert_eq!(m.b_sq, m.bdag_sq);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn assembled_variance_equals_ideal(
        n in 1usize..5000,
        gamma in 0.0f64..2.0,
        phi in 0.0f64..0.5,
        r in 0.0f64..3.0,
    ) {
        let p = params(n, gamma, phi, r, 0.0);
        let assembled = assembled_phase_variance(&p).unwrap();
        let ideal = ideal_phase_variance(&p).unwrap();
        prop_assert!(rel(assembled, ideal) < 1e-9, "{} vs {}", assembled, ideal);
    }

    #[test]
    fn noisy_variance_decomposes(
        n in 1usize..5000,
        gamma in 0.0f64..2.0,
        r in 0.0f64..3.0,
        sigma in 0.0f64..50.0,
    ) {
        let p = params(n, gamma, 0.0, r, sigma);
        let nf = n as f64;
        let expected = (-2.0 * gamma).exp() / nf + 4.0 * sigma * sigma / (nf * nf * (2.0 * r * gamma).exp());
        prop_assert!(rel(noisy_phase_variance(&p).unwrap(), expected) < 1e-12);
    }
}
