//! Compound Poisson-gamma (Tweedie, `1 < p < 2`) mathematics.
//!
//! Everything here is parameterised by the index `p` and assumes logarithmic
//! links for both the mean and the dispersion. The optimizer works with the
//! linear predictor of the mean (`lp = log μ`), never with `μ` itself.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::error::{Error, Result};

/// Largest exponent accepted before the kernel reports a range error.
pub const MAX_EXPONENT: f64 = 700.0;

/// A validated Tweedie index in the compound Poisson-gamma range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TweedieSpec {
    p: f64,
}

impl TweedieSpec {
    pub fn new(p: f64) -> Result<Self> {
        check_index(p)?;
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Variance function `V(μ) = μ^p`.
    pub fn variance(&self, mu: f64) -> f64 {
        mu.powf(self.p)
    }

    /// Gamma shape of the individual claim sizes, `(2-p)/(p-1)`.
    pub fn gamma_shape(&self) -> f64 {
        (2.0 - self.p) / (self.p - 1.0)
    }
}

pub(crate) fn check_index(p: f64) -> Result<()> {
    if p.is_finite() && p > 1.0 && p < 2.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "index p = {p} outside the compound Poisson-gamma range (1, 2)"
        )))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {v} must be positive and finite")))
    }
}

/// Unit deviance `d(y, μ)`.
///
/// The endpoints `p = 1` (Poisson) and `p = 2` (gamma) are accepted and use
/// their limiting forms; anything outside `[1, 2]` is rejected.
pub fn cp_deviance(y: f64, mu: f64, p: f64) -> Result<f64> {
    if !(y.is_finite() && y >= 0.0) {
        return Err(Error::Domain(format!("response y = {y} must be >= 0")));
    }
    check_positive("mu", mu)?;
    if !(p.is_finite() && (1.0..=2.0).contains(&p)) {
        return Err(Error::Domain(format!("index p = {p} outside [1, 2]")));
    }
    let d = if p == 1.0 {
        let ylog = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
        2.0 * (ylog - (y - mu))
    } else if p == 2.0 {
        if y == 0.0 {
            return Err(Error::Domain("gamma deviance undefined at y = 0".into()));
        }
        2.0 * (-(y / mu).ln() + (y - mu) / mu)
    } else {
        let a = 1.0 - p;
        let b = 2.0 - p;
        2.0 * (y.powf(b) / (a * b) - y * mu.powf(a) / a + mu.powf(b) / b)
    };
    // Rounding can push an exact fit a hair below zero.
    Ok(d.max(0.0))
}

/// Mean from the canonical parameter, `μ = ((1-p)θ)^{1/(1-p)}`, for `θ < 0`.
pub fn theta_to_mu(theta: f64, p: f64) -> Result<f64> {
    check_index(p)?;
    if !(theta.is_finite() && theta < 0.0) {
        return Err(Error::Domain(format!(
            "canonical parameter theta = {theta} must be negative"
        )));
    }
    Ok(((1.0 - p) * theta).powf(1.0 / (1.0 - p)))
}

/// Canonical parameter from the mean, `θ = μ^{1-p}/(1-p)`.
pub fn mu_to_theta(mu: f64, p: f64) -> Result<f64> {
    check_index(p)?;
    check_positive("mu", mu)?;
    Ok(mu.powf(1.0 - p) / (1.0 - p))
}

/// Poisson rate, gamma shape and gamma scale of the compound representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonGammaParams {
    pub xi: f64,
    pub eta: f64,
    pub zeta: f64,
}

impl PoissonGammaParams {
    /// Maps back to `(μ, φ)`.
    pub fn recombine(&self, p: f64) -> (f64, f64) {
        let mean_claim = self.eta * self.zeta;
        let mu = self.xi * mean_claim;
        let phi = self.xi.powf(1.0 - p) * mean_claim.powf(2.0 - p) / (2.0 - p);
        (mu, phi)
    }

    /// Probability of an exact zero, `e^{-ξ}`.
    pub fn zero_probability(&self) -> f64 {
        (-self.xi).exp()
    }
}

pub fn convert_params(mu: f64, phi: f64, p: f64) -> Result<PoissonGammaParams> {
    check_index(p)?;
    check_positive("mu", mu)?;
    check_positive("phi", phi)?;
    Ok(PoissonGammaParams {
        xi: mu.powf(2.0 - p) / (phi * (2.0 - p)),
        eta: (2.0 - p) / (p - 1.0),
        zeta: phi * (p - 1.0) * mu.powf(p - 1.0),
    })
}

/// One draw `(y, m)`: `m ~ Poisson(ξ)` claims, `y` the sum of `m` gamma sizes.
pub fn sample_cp<R: Rng + ?Sized>(mu: f64, phi: f64, p: f64, rng: &mut R) -> Result<(f64, u64)> {
    let pg = convert_params(mu, phi, p)?;
    let count = Poisson::new(pg.xi)
        .map_err(|e| Error::Domain(format!("poisson rate {}: {e}", pg.xi)))?
        .sample(rng);
    let m = count as u64;
    if m == 0 {
        return Ok((0.0, 0));
    }
    let size = Gamma::new(pg.eta, pg.zeta)
        .map_err(|e| Error::Domain(format!("gamma({}, {}): {e}", pg.eta, pg.zeta)))?;
    let y = (0..m).map(|_| size.sample(rng)).sum();
    Ok((y, m))
}

/// Seeded sampler owning its generator.
pub struct CpSampler<R> {
    rng: R,
}

impl<R: Rng> CpSampler<R> {
    pub fn new(rng: R) -> Self {
        Self { rng }
    }

    pub fn sample(&mut self, mu: f64, phi: f64, p: f64) -> Result<(f64, u64)> {
        sample_cp(mu, phi, p, &mut self.rng)
    }
}

/// Value and first two `lp`-derivatives of the per-observation
/// negative log-likelihood term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelTerms {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

#[inline]
fn kernel_exponentials(lp: f64, p: f64) -> Result<(f64, f64)> {
    let up = (2.0 - p) * lp;
    let down = -(p - 1.0) * lp;
    if up > MAX_EXPONENT || down > MAX_EXPONENT || !lp.is_finite() {
        return Err(Error::NumericRange(format!(
            "linear predictor {lp} overflows the kernel exponentials at p = {p}"
        )));
    }
    Ok((down.exp(), up.exp()))
}

impl KernelTerms {
    #[inline]
    pub fn at(y: f64, lp: f64, phi: f64, p: f64) -> Result<Self> {
        let (e_down, e_up) = kernel_exponentials(lp, p)?;
        let inv_phi = 1.0 / phi;
        Ok(Self {
            value: inv_phi * (y * e_down / (p - 1.0) + e_up / (2.0 - p)),
            d1: inv_phi * (-y * e_down + e_up),
            d2: inv_phi * ((p - 1.0) * y * e_down + (2.0 - p) * e_up),
        })
    }
}

/// `φ⁻¹[y e^{-(p-1)lp}/(p-1) + e^{(2-p)lp}/(2-p)]`: the α-dependent part of
/// the negative log-likelihood. The normalizing term in `(y, φ, p)` is omitted.
pub fn loglik_kernel(y: f64, lp: f64, phi: f64, p: f64) -> Result<f64> {
    check_index(p)?;
    check_positive("phi", phi)?;
    Ok(KernelTerms::at(y, lp, phi, p)?.value)
}

/// Unit contribution to the predictive deviance, i.e. the unit deviance with
/// its `y`-only term removed and scaled by `1/φ`.
#[inline]
pub fn deviance_kernel(y: f64, lp: f64, phi: f64, p: f64) -> Result<f64> {
    let (e_down, e_up) = kernel_exponentials(lp, p)?;
    Ok(2.0 / phi * (-y * e_down / (1.0 - p) + e_up / (2.0 - p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deviance_examples() {
        assert_eq!(cp_deviance(1.0, 1.0, 1.5).unwrap(), 0.0);
        assert_relative_eq!(cp_deviance(0.0, 1.0, 1.5).unwrap(), 4.0, epsilon = 1e-12);
        assert_relative_eq!(cp_deviance(2.0, 1.0, 1.5).unwrap(), 0.686292, epsilon = 1e-6);
    }

    #[test]
    fn deviance_matches_integral_form() {
        // d(y, μ) = 2 ∫_μ^y (y-u)/u^p du, by composite Simpson.
        let (y, mu, p) = (2.0f64, 1.0f64, 1.5f64);
        let n = 2000;
        let h = (y - mu) / n as f64;
        let f = |u: f64| (y - u) / u.powf(p);
        let mut s = f(mu) + f(y);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(mu + i as f64 * h);
        }
        let integral = 2.0 * s * h / 3.0;
        assert_relative_eq!(cp_deviance(y, mu, p).unwrap(), integral, epsilon = 1e-10);
    }

    #[test]
    fn deviance_rejects_bad_inputs() {
        assert!(cp_deviance(-1.0, 1.0, 1.5).is_err());
        assert!(cp_deviance(1.0, 0.0, 1.5).is_err());
        assert!(cp_deviance(1.0, 1.0, 2.5).is_err());
        assert!(cp_deviance(1.0, 1.0, 0.9).is_err());
    }

    #[test]
    fn deviance_limits() {
        for &(y, mu) in &[(3.0, 1.7), (1.0, 4.0), (7.0, 7.5)] {
            let poisson = 2.0 * (y * (y / mu as f64).ln() - (y - mu));
            let near_one = cp_deviance(y, mu, 1.0 + 1e-6).unwrap();
            assert!((near_one - poisson).abs() < 1e-4, "{near_one} vs {poisson}");
            assert_relative_eq!(cp_deviance(y, mu, 1.0).unwrap(), poisson, epsilon = 1e-12);

            let gamma = 2.0 * (-(y / mu as f64).ln() + (y - mu) / mu);
            let near_two = cp_deviance(y, mu, 2.0 - 1e-6).unwrap();
            assert!((near_two - gamma).abs() < 1e-4, "{near_two} vs {gamma}");
            assert_relative_eq!(cp_deviance(y, mu, 2.0).unwrap(), gamma, epsilon = 1e-12);
        }
    }

    #[test]
    fn canonical_parameter_examples() {
        assert_relative_eq!(theta_to_mu(-0.16, 1.5).unwrap(), 156.25, max_relative = 1e-12);
        assert_relative_eq!(theta_to_mu(-2.0, 1.5).unwrap(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(theta_to_mu(-0.2, 1.5).unwrap(), 100.0, max_relative = 1e-12);
        assert!(theta_to_mu(0.0, 1.5).is_err());
        assert!(theta_to_mu(0.3, 1.5).is_err());
        let theta = mu_to_theta(37.0, 1.3).unwrap();
        assert_relative_eq!(theta_to_mu(theta, 1.3).unwrap(), 37.0, max_relative = 1e-12);
    }

    #[test]
    fn convert_params_examples() {
        let pg = convert_params(1.0, 2.0, 1.5).unwrap();
        assert_relative_eq!(pg.xi, 1.0, max_relative = 1e-12);
        assert_relative_eq!(pg.eta, 1.0, max_relative = 1e-12);
        assert_relative_eq!(pg.zeta, 1.0, max_relative = 1e-12);

        let pg = convert_params(4.0, 2.0, 1.5).unwrap();
        assert_relative_eq!(pg.xi, 2.0, max_relative = 1e-12);
        assert_relative_eq!(pg.eta * pg.zeta, 2.0, max_relative = 1e-12);

        assert!(convert_params(-1.0, 2.0, 1.5).is_err());
        assert!(convert_params(1.0, 0.0, 1.5).is_err());
        assert!(convert_params(1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn kernel_examples() {
        assert_relative_eq!(loglik_kernel(0.0, 0.0, 1.0, 1.5).unwrap(), 2.0);
        assert_relative_eq!(loglik_kernel(1.0, 0.0, 1.0, 1.5).unwrap(), 4.0);
        assert_relative_eq!(loglik_kernel(1.0, 0.0, 2.0, 1.5).unwrap(), 2.0);
    }

    #[test]
    fn kernel_overflow_is_an_error() {
        assert!(matches!(
            loglik_kernel(1.0, 1500.0, 1.0, 1.5),
            Err(Error::NumericRange(_))
        ));
        assert!(matches!(
            loglik_kernel(1.0, -1500.0, 1.0, 1.5),
            Err(Error::NumericRange(_))
        ));
        assert!(loglik_kernel(1.0, 1300.0, 1.0, 1.5).is_ok());
    }

    #[test]
    fn kernel_derivative_matches_finite_differences() {
        for &(y, lp, phi, p) in &[(0.0, 0.3, 1.0, 1.5), (4.2, 1.1, 3.0, 1.2), (10.0, -2.0, 0.5, 1.8)] {
            let h = 1e-5;
            let f = |x: f64| loglik_kernel(y, x, phi, p).unwrap();
            let fd1 = (f(lp + h) - f(lp - h)) / (2.0 * h);
            let k = KernelTerms::at(y, lp, phi, p).unwrap();
            assert_relative_eq!(k.d1, fd1, max_relative = 1e-6);
            let g = |x: f64| KernelTerms::at(y, x, phi, p).unwrap().d1;
            let fd2 = (g(lp + h) - g(lp - h)) / (2.0 * h);
            assert_relative_eq!(k.d2, fd2, max_relative = 1e-6);
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let draw = |seed| {
            let mut s = CpSampler::new(ChaCha8Rng::seed_from_u64(seed));
            (0..50).map(|_| s.sample(3.0, 1.2, 1.4).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn sampler_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| sample_cp(1.0, 2.0, 1.5, &mut rng).unwrap().0 == 0.0)
            .count();
        let p0 = (-1.0f64).exp();
        let se = (p0 * (1.0 - p0) / n as f64).sqrt();
        assert!(((zeros as f64 / n as f64) - p0).abs() < 3.0 * se);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn deviance_nonnegative_and_zero_only_at_mean(
                y in 0.0f64..50.0, mu in 0.01f64..50.0, p in 1.01f64..1.99
            ) {
                let d = cp_deviance(y, mu, p).unwrap();
                prop_assert!(d >= 0.0);
                if (y - mu).abs() > 1e-3 * mu.max(1.0) {
                    prop_assert!(d > 0.0);
                }
                prop_assert!(cp_deviance(mu, mu, p).unwrap().abs() < 1e-9 * (1.0 + mu));
            }

            #[test]
            fn convert_then_recombine_is_identity(
                mu in 1e-3f64..1e4, phi in 1e-2f64..1e3, p in 1.01f64..1.99
            ) {
                let pg = convert_params(mu, phi, p).unwrap();
                let (m2, f2) = pg.recombine(p);
                prop_assert!(((m2 - mu) / mu).abs() < 1e-12);
                prop_assert!(((f2 - phi) / phi).abs() < 1e-12);
            }
        }
    }
}
