use proptest::prelude::*;
use twist_echo::error::Error;
use twist_echo::metrology::{
    fisher_information, fisher_with_noise, noisy_fisher_information, optimal_twisting, optimal_twisting_seed,
    quantum_fisher_information, smear, twin_fock_qfi, DetectionModel, OutcomeDistribution, DEFAULT_PROBABILITY_FLOOR,
};
use twist_echo::one_mode::{noisy_phase_variance, OneModeParams};
use twist_echo::protocols::{calibrate_twisting, squeezing_parameter, EchoSequence, EchoSpec};
use twist_echo::spin::{DickeState, SpinSystem, TwistingKind};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn system(n: usize) -> SpinSystem {
    SpinSystem::new(n).unwrap()
}

fn tact(n: usize, t_chi: f64, r: f64) -> EchoSequence {
    EchoSequence::new(EchoSpec::tact(n, t_chi, r, 0.0).unwrap()).unwrap()
}

fn oat(n: usize, t_chi: f64, r: f64) -> EchoSequence {
    EchoSequence::new(EchoSpec::oat(n, t_chi, r, 0.0).unwrap()).unwrap()
}

/// Coherent state rotated about `y` and counted in `J_z`.
fn rotated_css(n: usize) -> EchoSequence {
    EchoSequence::new(EchoSpec::tact(n, 0.0, 0.0, 0.0).unwrap().without_readout()).unwrap()
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    let lf = |m: usize| (1..=m).map(|x| (x as f64).ln()).sum::<f64>();
    lf(n) - lf(k) - lf(n - k)
}

#[test]
fn rotated_coherent_state_gives_binomial_counts() {
    let n = 40;
    let seq = rotated_css(n);
    for theta in [0.3, 1.0, 2.5] {
        let dist = seq.distribution(theta).unwrap();
        let p = (theta / 2.0).sin().powi(2);
        for (mu, prob) in dist.eigenvalues().iter().zip(dist.probabilities()) {
            let k = (n as f64 / 2.0 - mu).round() as usize;
            let expected = (ln_binomial(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp();
            assert!((prob - expected).abs() < 1e-12, "θ={theta} k={k}");
        }
        let f = fisher_information(&dist, DEFAULT_PROBABILITY_FLOOR);
        assert!(rel(f, n as f64) < 1e-9, "θ={theta}: {f}");
    }
}

#[test]
fn pole_distribution_at_zero_phase() {
    let seq = rotated_css(12);
    let dist = seq.distribution(0.0).unwrap();
    assert!((dist.probabilities()[0] - 1.0).abs() < 1e-15);
    assert_eq!(dist.eigenvalues()[0], 6.0);
    assert!(dist.derivative_sum().abs() < 1e-12);
}

#[test]
fn constant_distribution_carries_no_information() {
    let d = OutcomeDistribution::new(vec![-1.0, 0.0, 1.0], vec![0.2, 0.5, 0.3], vec![0.0; 3]).unwrap();
    assert_eq!(fisher_information(&d, DEFAULT_PROBABILITY_FLOOR), 0.0);
}

fn assert_derivative_matches_finite_difference(dist_at: impl Fn(f64) -> OutcomeDistribution, theta: f64, label: &str) {
    let h = 1e-5;
    let exact = dist_at(theta);
    let (up, down) = (dist_at(theta + h), dist_at(theta - h));
    let worst = exact
        .derivative()
        .iter()
        .zip(up.probabilities().iter().zip(down.probabilities()))
        .map(|(d, (a, b))| (d - (a - b) / (2.0 * h)).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "{label}: {worst}");
}

#[test]
fn exact_derivative_matches_finite_difference() {
    let t = calibrate_twisting(system(100), TwistingKind::Tact, -6.0).unwrap();
    let seq = tact(100, t, 1.0);
    assert_derivative_matches_finite_difference(|th| seq.distribution(th).unwrap(), 0.2, "tact");
    let seq = oat(80, 0.02, 1.3);
    assert_derivative_matches_finite_difference(|th| seq.distribution(th).unwrap(), 0.05, "oat");
}

#[test]
fn classical_fisher_never_exceeds_quantum_fisher() {
    for (n, t) in [(10, 0.1), (60, 0.01), (60, 0.06), (200, 0.004)] {
        for seq in [tact(n, t, 1.0), tact(n, t, 2.5), oat(n, t, 1.0)] {
            let fq = quantum_fisher_information(seq.prepared()).generator_y;
            for theta in [1e-3, 0.05, 0.4] {
                let f = seq.fisher(theta, &DetectionModel::none()).unwrap();
                assert!(f <= fq * (1.0 + 1e-6), "N={n} tχ={t} θ={theta}: {f} > {fq}");
            }
        }
    }
}

#[test]
fn smeared_spike_is_a_gaussian() {
    let d = OutcomeDistribution::new(vec![-2.0, 3.0, 8.0], vec![0.0, 1.0, 0.0], vec![0.0; 3]).unwrap();
    let sigma = 1.7;
    let s = smear(&d, &DetectionModel::constant(sigma).unwrap(), 10).unwrap();
    assert!((s.integral() - 1.0).abs() < 1e-6);
    assert!((s.mean() - 3.0).abs() < 1e-6);
    assert!((s.variance() - sigma * sigma).abs() < 1e-6);
    assert!(s.step() <= sigma / 10.0 + 1e-15);
}

#[test]
fn smearing_requires_positive_width() {
    let d = OutcomeDistribution::new(vec![0.0], vec![1.0], vec![0.0]).unwrap();
    assert!(matches!(smear(&d, &DetectionModel::none(), 10), Err(Error::ContractViolation(_))));
}

#[test]
fn well_separated_spikes_keep_their_information() {
    let (p, dp) = ([0.3, 0.7], [0.21, -0.21]);
    let d = OutcomeDistribution::new(vec![-50.0, 50.0], p.to_vec(), dp.to_vec()).unwrap();
    let s = smear(&d, &DetectionModel::constant(2.0).unwrap(), 100).unwrap();
    let oracle: f64 = p.iter().zip(dp).map(|(p, d)| d * d / p).sum();
    assert!(rel(noisy_fisher_information(&s), oracle) < 1e-6);
}

#[test]
fn smearing_never_adds_information() {
    let t = calibrate_twisting(system(100), TwistingKind::Tact, -6.0).unwrap();
    let seq = tact(100, t, 1.0);
    let dist = seq.distribution(0.02).unwrap();
    let f0 = fisher_information(&dist, DEFAULT_PROBABILITY_FLOOR);
    let mut prev = f0;
    for sigma in [0.05, 0.2, 0.5, 1.0, 3.0, 10.0, 30.0] {
        let f = fisher_with_noise(&dist, &DetectionModel::constant(sigma).unwrap(), 100).unwrap();
        assert!(f <= prev * (1.0 + 1e-3), "σ={sigma}: {f} > {prev}");
        prev = f;
    }
}

#[test]
fn large_noise_limit_matches_magnified_signal_slope() {
    let n = 200;
    let t = calibrate_twisting(system(n), TwistingKind::Tact, -6.0).unwrap();
    let theta = 0.005;
    let seq = tact(n, t, 1.0);
    let m = seq.magnification(theta).unwrap();
    let var = seq.echoed(theta).unwrap().moments().variance(twist_echo::spin::Axis::X);
    let sigma = 10.0 * var.sqrt();
    let f = seq.fisher(theta, &DetectionModel::constant(sigma).unwrap()).unwrap();
    let oracle = 4.0 * sigma * sigma / ((n * n) as f64 * m * m);
    assert!(rel(1.0 / f, oracle) < 0.1, "{} vs {oracle}", 1.0 / f);
}

#[test]
fn squeezing_regime_fisher_equals_n_over_xi() {
    let n = 1000;
    let t = calibrate_twisting(system(n), TwistingKind::Tact, -6.0).unwrap();
    let seq = tact(n, t, 1.0);
    let xi = squeezing_parameter(seq.prepared()).unwrap().linear;
    let f = seq.fisher(1e-3, &DetectionModel::none()).unwrap();
    assert!(rel(f, n as f64 / xi) < 0.05, "{f} vs {}", n as f64 / xi);
}

#[test]
fn noisy_fisher_follows_one_mode_variance() {
    let n = 1000;
    let theta = 1e-3;
    for db in [-6.0, -10.0] {
        let t = calibrate_twisting(system(n), TwistingKind::Tact, db).unwrap();
        let base = tact(n, t, 1.0);
        for r in [1.0, 2.0, 3.0] {
            let mut seq = base.clone();
            seq.set_downstream(r, None).unwrap();
            let dist = seq.distribution(theta).unwrap();
            for sigma in [0.0, 1.0, 5.0, 15.0, (n as f64).sqrt()] {
                let f = fisher_with_noise(&dist, &DetectionModel::constant(sigma).unwrap(), n).unwrap();
                let p = OneModeParams::from_two_mode(n, t, theta, r, sigma).unwrap();
                let v = noisy_phase_variance(&p).unwrap();
                assert!(rel(1.0 / f, v) < 0.1, "{db} dB r={r} σ={sigma}: {} vs {v}", 1.0 / f);
            }
        }
    }
}

#[test]
fn optimal_echo_is_close_to_heisenberg() {
    let n = 100;
    let opt = optimal_twisting(system(n)).unwrap();
    let f = tact(n, opt.t_chi, 1.0).fisher(0.01, &DetectionModel::none()).unwrap();
    let ratio = f / (n * n) as f64;
    assert!(ratio > 0.5 && ratio <= 1.0, "{ratio}");
}

#[test]
fn unechoed_optimal_state_is_fragile_to_noise() {
    let n = 1000;
    let opt = optimal_twisting(system(n)).unwrap();
    let seq = tact(n, opt.t_chi, 0.0);
    let best = |sigma: f64| {
        let model = DetectionModel::constant(sigma).unwrap();
        seq.fisher_optimal_theta(&model).unwrap().1
    };
    let f0 = best(0.0);
    assert!(best(0.05) > 0.9 * f0);
    assert!(best(1.0) < 0.5 * f0);
}

#[test]
fn coherent_and_twin_fock_quantum_fisher() {
    let n = 50;
    let q = quantum_fisher_information(&DickeState::pole(system(n)));
    assert!((q.optimal - n as f64).abs() < 1e-9);
    let middle = DickeState::basis(system(n), n / 2).unwrap();
    let q = quantum_fisher_information(&middle);
    assert!((q.generator_y - twin_fock_qfi(n)).abs() < 1e-9);
    assert_eq!(twin_fock_qfi(n), 1300.0);
}

#[test]
fn optimal_twisting_tracks_the_seed() {
    let seed = optimal_twisting_seed(1000);
    assert!((seed - (2.0 * std::f64::consts::PI * 1000.0).ln() / 2000.0).abs() < 1e-15);
    assert!((seed - 4.372e-3).abs() < 1e-6);
    let mut scaled = Vec::new();
    for n in [100, 1000] {
        let opt = optimal_twisting(system(n)).unwrap();
        assert!(rel(opt.t_chi, opt.seed) < 0.15, "N={n}");
        assert!(opt.qfi > twin_fock_qfi(n));
        scaled.push(opt.t_chi / opt.seed);
    }
    assert!(rel(scaled[0], scaled[1]) < 0.05, "{scaled:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noise_monotonicity_holds_for_random_echoes(
        n in 4usize..60,
        gamma in 0.05f64..1.5,
        r in 0.0f64..3.0,
        theta in 1e-3f64..0.3,
        s1 in 0.05f64..5.0,
        ds in 0.1f64..5.0,
    ) {
        let seq = tact(n, gamma / n as f64, r);
        let dist = seq.distribution(theta).unwrap();
        let f0 = fisher_information(&dist, DEFAULT_PROBABILITY_FLOOR);
        let f1 = fisher_with_noise(&dist, &DetectionModel::constant(s1).unwrap(), n).unwrap();
        let f2 = fisher_with_noise(&dist, &DetectionModel::constant(s1 + ds).unwrap(), n).unwrap();
        prop_assert!(f1 <= f0 * (1.0 + 1e-3) + 1e-12);
        prop_assert!(f2 <= f1 * (1.0 + 1e-3) + 1e-12);
    }

    #[test]
    fn distributions_are_normalized(n in 1usize..80, t in 0.0f64..0.2, r in 0.0f64..3.0, theta in -1.0f64..1.0) {
        for seq in [tact(n, t, r), oat(n, t, r)] {
            let d = seq.distribution(theta).unwrap();
            let total: f64 = d.probabilities().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
            prop_assert!(d.derivative_sum().abs() < 1e-8);
        }
    }
}
