use num_complex::Complex64;
use twist_echo::expm::{self, LinearOperator, Propagator};
use twist_echo::metrology::DetectionModel;
use twist_echo::protocols::{calibrate_twisting, EchoSequence, EchoSpec};
use twist_echo::spin::{SpinSystem, TwistingKind};
use twist_echo::spinor::{
    build_spinor_hamiltonian, from_magnetization_basis, to_magnetization_basis, HamiltonianPart, SpinorEcho,
    SpinorMeasurement, SpinorParams, SpinorVariant, ThreeModeState, ThreeModeSystem,
};

type C64 = Complex64;

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// `m_F` amplitudes of `|i;k⟩` from expanding `(a₊† + a₋†)^i (a₊† − a₋†)^k`.
fn expanded_basis_state(system: ThreeModeSystem, i: usize, k: usize) -> Vec<C64> {
    let l = i + k;
    let mut poly = vec![0.0; l + 1];
    for a in 0..=i {
        for b in 0..=k {
            let sign = if (k - b) % 2 == 0 { 1.0 } else { -1.0 };
            poly[a + b] += binomial(i, a) * binomial(k, b) * sign;
        }
    }
    let norm = 2f64.powf(l as f64 / 2.0) * (factorial(i) * factorial(k)).sqrt();
    let mut out = vec![C64::new(0.0, 0.0); system.dim()];
    for (p, c) in poly.iter().enumerate() {
        let idx = system.index(p, l - p).unwrap();
        out[idx] = C64::new(c * (factorial(p) * factorial(l - p)).sqrt() / norm, 0.0);
    }
    out
}

fn dist(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

fn random_amplitudes(dim: usize, seed: u64) -> Vec<C64> {
    let mut x = seed;
    let mut next = || {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((x >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    };
    let v: Vec<C64> = (0..dim).map(|_| C64::new(next(), next())).collect();
    let n = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|c| c / n).collect()
}

#[test]
fn magnetization_basis_matches_mode_expansion() {
    let s = ThreeModeSystem::new(6).unwrap();
    for idx in 0..s.dim() {
        let (i, k) = s.pair(idx);
        let mut e = vec![C64::new(0.0, 0.0); s.dim()];
        e[idx] = C64::new(1.0, 0.0);
        let mapped = to_magnetization_basis(s, &e).unwrap();
        assert!(dist(&mapped, &expanded_basis_state(s, i, k)) < 1e-12, "|{i};{k}⟩");
    }
    let v = random_amplitudes(s.dim(), 3);
    let back = from_magnetization_basis(s, &to_magnetization_basis(s, &v).unwrap()).unwrap();
    assert!(dist(&v, &back) < 1e-12);
}

#[test]
fn sector_propagation_matches_krylov() {
    for n in [5, 40] {
        let s = ThreeModeSystem::new(n).unwrap();
        let p = SpinorParams {
            lambda: 0.7,
            q: -3.1,
            t_chi_equivalent: 0.0,
            echo_ratio: 1.0,
            theta: 0.0,
        };
        let all = [
            HamiltonianPart::QuadraticZeeman,
            HamiltonianPart::CollisionalShift,
            HamiltonianPart::FourWaveMixing,
        ];
        for parts in [&all[..], &all[2..], &all[..2]] {
            let h = build_spinor_hamiltonian(s, &p, parts);
            let v = random_amplitudes(s.dim(), n as u64);
            for t in [0.004, -0.02] {
                let a = expm::propagate(&h, &v, t, Propagator::Auto).unwrap();
                let b = expm::propagate(&h, &v, t, Propagator::Krylov).unwrap();
                assert!(dist(&a, &b) < 1e-9, "{n} {parts:?} {t}");
            }
        }
    }
}

#[test]
fn four_wave_mixing_couples_vacuum_to_symmetric_pair() {
    let n = 9;
    let s = ThreeModeSystem::new(n).unwrap();
    let p = SpinorParams::compensated(s, 0.0, 1.0, 0.0).unwrap();
    let h = build_spinor_hamiltonian(s, &p, &[HamiltonianPart::FourWaveMixing]);
    let to = s.index(2, 0).unwrap();
    let expected = (2.0 * (n * (n - 1)) as f64).sqrt();
    assert!((h.get(to, 0).re - expected).abs() < 1e-12);
    let anti = s.index(0, 2).unwrap();
    assert!((h.get(anti, 0).re + expected).abs() < 1e-12);
}

#[test]
fn spinor_hamiltonian_is_hermitian() {
    let s = ThreeModeSystem::new(8).unwrap();
    let p = SpinorParams::compensated(s, 0.1, 1.0, 0.0).unwrap();
    let h = build_spinor_hamiltonian(
        s,
        &p,
        &[
            HamiltonianPart::QuadraticZeeman,
            HamiltonianPart::CollisionalShift,
            HamiltonianPart::FourWaveMixing,
            HamiltonianPart::FourWaveMixingSymmetric,
        ],
    )
    .to_dense();
    assert!((&h - h.adjoint()).iter().all(|c| c.norm() < 1e-12));
}

#[test]
fn mixing_only_echo_returns_to_vacuum() {
    let s = ThreeModeSystem::new(60).unwrap();
    let p = SpinorParams::compensated(s, 0.03, 1.0, 0.0).unwrap();
    let echo = SpinorEcho::new(s, p, SpinorVariant::FwmOnly).unwrap();
    let f = echo.echoed(0.0).unwrap().fidelity(&ThreeModeState::vacuum(s));
    assert!(f > 1.0 - 1e-6, "{f}");
}

#[test]
fn cropped_measurement_is_less_informative_than_separate() {
    let s = ThreeModeSystem::new(30).unwrap();
    let p = SpinorParams::compensated(s, 0.05, 1.0, 0.0).unwrap();
    let echo = SpinorEcho::new(s, p, SpinorVariant::Full).unwrap();
    let none = DetectionModel::none();
    for theta in [0.01, 0.05, 0.2] {
        let c = echo.fisher(theta, SpinorMeasurement::Cropped, &none).unwrap();
        let sep = echo.fisher(theta, SpinorMeasurement::Separate, &none).unwrap();
        assert!(c <= sep * (1.0 + 1e-9), "{theta}: {c} > {sep}");
    }
    assert!(echo
        .fisher(0.05, SpinorMeasurement::Separate, &DetectionModel::constant(1.0).unwrap())
        .is_err());
}

#[test]
fn antisymmetric_population_stays_small_at_moderate_squeezing() {
    let n = 100;
    let t_chi = calibrate_twisting(SpinSystem::new(n).unwrap(), TwistingKind::Tact, -6.0).unwrap();
    let s = ThreeModeSystem::new(n).unwrap();
    let p = SpinorParams::compensated(s, t_chi, 1.0, 0.0).unwrap();
    let echo = SpinorEcho::new(s, p, SpinorVariant::Full).unwrap();
    let (_, na) = echo.aligned().mean_side_populations();
    assert!(na / (n as f64) < 0.05, "{na}");
}

#[test]
fn symmetric_mixing_reduces_to_two_mode_echo() {
    let n = 30;
    let (t_chi, r) = (0.04, 1.5);
    let s = ThreeModeSystem::new(n).unwrap();
    let p = SpinorParams::compensated(s, t_chi, r, 0.0).unwrap();
    let spinor = SpinorEcho::with_parts(s, p, SpinorVariant::FwmOnly, &[HamiltonianPart::FourWaveMixingSymmetric]).unwrap();
    let two_mode = EchoSequence::new(EchoSpec::tact(n, t_chi, r, 0.0).unwrap()).unwrap();
    let none = DetectionModel::none();
    for theta in [0.02, 0.1] {
        let a = spinor.fisher(theta, SpinorMeasurement::Cropped, &none).unwrap();
        let b = two_mode.fisher(theta, &none).unwrap();
        assert!((a - b).abs() < 1e-8 * b.max(1.0), "{theta}: {a} vs {b}");
    }
}

#[test]
fn operator_dimension_counts_three_mode_states() {
    let s = ThreeModeSystem::new(10).unwrap();
    let p = SpinorParams::compensated(s, 0.0, 1.0, 0.0).unwrap();
    let h = build_spinor_hamiltonian(s, &p, &[HamiltonianPart::FourWaveMixing]);
    assert_eq!(h.dim(), 66);
}
