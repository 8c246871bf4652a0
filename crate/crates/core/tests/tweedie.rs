use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tweedie_spatial::tweedie::{convert_params, cp_deviance, deviance_kernel, loglik_kernel, sample_cp, KernelTerms};

/// `2 ∫_μ^y (y − t) / t^p dt` by composite Simpson.
fn deviance_by_quadrature(y: f64, mu: f64, p: f64) -> f64 {
    let n = 20_000;
    let (a, b) = (mu, y);
    let h = (b - a) / n as f64;
    let f = |t: f64| (y - t) / t.powf(p);
    let mut s = f(a) + f(b);
    for i in 1..n {
        let t = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 * f(t) } else { 2.0 * f(t) };
    }
    2.0 * s * h / 3.0
}

#[test]
fn deviance_matches_quadrature() {
    for &(y, mu, p) in &[(1.0, 2.0, 1.5), (3.5, 0.4, 1.2), (0.2, 7.0, 1.8), (10.0, 10.0, 1.5), (5.0, 1.0, 1.9)] {
        let d = cp_deviance(y, mu, p).unwrap();
        assert_relative_eq!(d, deviance_by_quadrature(y, mu, p), epsilon = 1e-9, max_relative = 1e-8);
    }
}

#[test]
fn deviance_at_zero_response() {
    for &(mu, p) in &[(0.5, 1.3), (2.0, 1.5), (9.0, 1.7)] {
        let d = cp_deviance(0.0, mu, p).unwrap();
        assert_relative_eq!(d, 2.0 * mu.powf(2.0 - p) / (2.0 - p), max_relative = 1e-12);
    }
}

#[test]
fn deviance_kernel_differences_track_unit_deviance() {
    // The kernel drops terms that depend on y only, so differences in the
    // linear predictor must agree with the full deviance scaled by 1/phi.
    let (y, phi, p) = (2.5, 1.7, 1.45);
    let (l1, l2) = (0.3f64, -0.8f64);
    let k = deviance_kernel(y, l1, phi, p).unwrap() - deviance_kernel(y, l2, phi, p).unwrap();
    let d = (cp_deviance(y, l1.exp(), p).unwrap() - cp_deviance(y, l2.exp(), p).unwrap()) / phi;
    assert_relative_eq!(k, d, max_relative = 1e-12);
}

#[test]
fn zero_probability_is_poisson_mass_at_zero() {
    let (mu, phi, p) = (1.3f64, 0.9f64, 1.6f64);
    let xi = mu.powf(2.0 - p) / (phi * (2.0 - p));
    let params = convert_params(mu, phi, p).unwrap();
    assert_relative_eq!(params.xi, xi, max_relative = 1e-12);
    assert_relative_eq!(params.zero_probability(), (-xi).exp(), max_relative = 1e-12);
}

#[test]
fn sampler_zero_iff_no_events() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5000 {
        let (y, n) = sample_cp(0.8, 1.4, 1.5, &mut rng).unwrap();
        assert_eq!(y == 0.0, n == 0);
        assert!(y >= 0.0);
    }
}

#[test]
fn sampler_event_count_is_poisson() {
    let (mu, phi, p) = (2.0, 1.5, 1.4);
    let xi = convert_params(mu, phi, p).unwrap().xi;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draws = 50_000;
    let counts: Vec<f64> = (0..draws).map(|_| sample_cp(mu, phi, p, &mut rng).unwrap().1 as f64).collect();
    let m = counts.iter().sum::<f64>() / draws as f64;
    let v = counts.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (draws - 1) as f64;
    assert!((m - xi).abs() < 4.0 * (xi / draws as f64).sqrt(), "mean {m} vs {xi}");
    assert!((v / xi - 1.0).abs() < 0.05, "variance {v} vs {xi}");
}

#[test]
fn rejects_index_outside_open_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for p in [1.0, 2.0, 0.5, 2.5, f64::NAN] {
        assert!(sample_cp(1.0, 1.0, p, &mut rng).is_err());
    }
    // The deviance also covers the Poisson and gamma endpoints.
    for p in [0.5, 2.5, f64::NAN] {
        assert!(cp_deviance(1.0, 1.0, p).is_err());
    }
    assert_relative_eq!(cp_deviance(2.0, 1.0, 1.0).unwrap(), 2.0 * (2.0 * 2f64.ln() - 1.0), max_relative = 1e-12);
    assert!(sample_cp(1.0, 0.0, 1.5, &mut rng).is_err());
    assert!(sample_cp(-1.0, 1.0, 1.5, &mut rng).is_err());
}

#[test]
fn kernel_overflow_is_a_numeric_error() {
    let err = KernelTerms::at(1.0, 5000.0, 1.0, 1.5).unwrap_err();
    assert!(err.is_numeric());
}

proptest! {
    #[test]
    fn kernel_derivatives_match_finite_differences(
        y in 0.0f64..20.0, lp in -3.0f64..3.0, phi in 0.2f64..5.0, p in 1.05f64..1.95
    ) {
        let h = 1e-5;
        let t = KernelTerms::at(y, lp, phi, p).unwrap();
        let up = KernelTerms::at(y, lp + h, phi, p).unwrap();
        let dn = KernelTerms::at(y, lp - h, phi, p).unwrap();
        let d1 = (up.value - dn.value) / (2.0 * h);
        let d2 = (up.d1 - dn.d1) / (2.0 * h);
        prop_assert!((d1 - t.d1).abs() <= 1e-6 * t.d1.abs().max(1.0));
        prop_assert!((d2 - t.d2).abs() <= 1e-6 * t.d2.abs().max(1.0));
        prop_assert!(t.d2 > 0.0);
    }

    #[test]
    fn deviance_is_nonnegative_and_zero_at_fit(y in 0.01f64..50.0, p in 1.05f64..1.95) {
        prop_assert!(cp_deviance(y, y, p).unwrap().abs() < 1e-9 * y.max(1.0));
        prop_assert!(cp_deviance(y, 1.3 * y, p).unwrap() > 0.0);
        prop_assert!(cp_deviance(y, 0.7 * y, p).unwrap() > 0.0);
    }
}

#[test]
fn deviance_approaches_poisson_and_gamma_limits() {
    for &(y, mu) in &[(1.0f64, 2.0f64), (3.0, 0.7), (7.0, 7.5)] {
        let poisson = 2.0 * (y * (y / mu).ln() - (y - mu));
        let gamma = 2.0 * (-(y / mu).ln() + (y - mu) / mu);
        assert!((cp_deviance(y, mu, 1.0 + 1e-6).unwrap() - poisson).abs() < 1e-4);
        assert!((cp_deviance(y, mu, 2.0 - 1e-6).unwrap() - gamma).abs() < 1e-4);
    }
}

#[test]
fn recombine_inverts_convert() {
    for &(mu, phi, p) in &[(0.3, 0.2, 1.1), (4.0, 1.0, 1.5), (120.0, 9.0, 1.85)] {
        let (m, f) = convert_params(mu, phi, p).unwrap().recombine(p);
        assert_relative_eq!(m, mu, max_relative = 1e-12);
        assert_relative_eq!(f, phi, max_relative = 1e-12);
    }
}

#[test]
fn likelihood_kernel_values() {
    assert_relative_eq!(loglik_kernel(0.0, 0.0, 1.0, 1.5).unwrap(), 2.0, max_relative = 1e-14);
    assert_relative_eq!(loglik_kernel(1.0, 0.0, 1.0, 1.5).unwrap(), 4.0, max_relative = 1e-14);
    assert_relative_eq!(loglik_kernel(1.0, 0.0, 2.0, 1.5).unwrap(), 2.0, max_relative = 1e-14);
    assert_relative_eq!(deviance_kernel(0.0, 0.0, 1.0, 1.5).unwrap(), 4.0, max_relative = 1e-14);
    let (y, lp, p) = (2.0, 0.4, 1.3);
    assert_relative_eq!(
        deviance_kernel(y, lp, 0.5, p).unwrap(),
        2.0 * deviance_kernel(y, lp, 1.0, p).unwrap(),
        max_relative = 1e-14
    );
}
