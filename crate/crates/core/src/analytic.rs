//! Closed-form Black–Scholes call, the oracle for the linear limit.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::pde::ValueFunction;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn d1_d2(s: f64, k: f64, tau: f64, rate: f64, sigma: f64) -> (f64, f64) {
    let vol = sigma * tau.sqrt();
    let d1 = ((s / k).ln() + (rate + 0.5 * sigma * sigma) * tau) / vol;
    (d1, d1 - vol)
}

/// Black–Scholes call with flat rate and proportional volatility.
pub fn bs_closed_form(s: f64, k: f64, maturity: f64, rate: f64, sigma_prop: f64) -> f64 {
    if maturity <= 0.0 {
        return (s - k).max(0.0);
    }
    if s <= 0.0 {
        return 0.0;
    }
    let (d1, d2) = d1_d2(s, k, maturity, rate, sigma_prop);
    let n = std_normal();
    s * n.cdf(d1) - k * (-rate * maturity).exp() * n.cdf(d2)
}

pub fn bs_call_delta(s: f64, k: f64, maturity: f64, rate: f64, sigma_prop: f64) -> f64 {
    if maturity <= 0.0 {
        return if s > k { 1.0 } else { 0.0 };
    }
    if s <= 0.0 {
        return 0.0;
    }
    std_normal().cdf(d1_d2(s, k, maturity, rate, sigma_prop).0)
}

pub fn bs_call_gamma(s: f64, k: f64, maturity: f64, rate: f64, sigma_prop: f64) -> f64 {
    if maturity <= 0.0 || s <= 0.0 {
        return 0.0;
    }
    let d1 = d1_d2(s, k, maturity, rate, sigma_prop).0;
    std_normal().pdf(d1) / (s * sigma_prop * maturity.sqrt())
}

/// Analytic value function u(t, s) of a call in the linear limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlackScholesCall {
    pub strike: f64,
    pub maturity: f64,
    pub rate: f64,
    pub sigma: f64,
}

impl BlackScholesCall {
    fn tau(&self, t: f64, s: f64) -> Result<f64> {
        if t < 0.0 || t > self.maturity || s < 0.0 {
            return Err(Error::OutOfHull { t, s });
        }
        Ok(self.maturity - t)
    }
}

impl ValueFunction for BlackScholesCall {
    fn maturity(&self) -> f64 {
        self.maturity
    }

    fn value(&self, t: f64, s: f64) -> Result<f64> {
        let tau = self.tau(t, s)?;
        Ok(bs_closed_form(s, self.strike, tau, self.rate, self.sigma))
    }

    fn delta(&self, t: f64, s: f64) -> Result<f64> {
        let tau = self.tau(t, s)?;
        Ok(bs_call_delta(s, self.strike, tau, self.rate, self.sigma))
    }

    fn gamma(&self, t: f64, s: f64) -> Result<f64> {
        let tau = self.tau(t, s)?;
        Ok(bs_call_gamma(s, self.strike, tau, self.rate, self.sigma))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reference_value() {
        // d1 = 0.2, d2 = 0: 100 N(0.2) - 100 e^{-0.02} / 2
        let v = bs_closed_form(100.0, 100.0, 1.0, 0.02, 0.2);
        assert_relative_eq!(v, 8.9160, epsilon = 5e-5);
    }

    #[test]
    fn limits() {
        assert_relative_eq!(bs_closed_form(110.0, 100.0, 1e-12, 0.02, 0.2), 10.0, epsilon = 1e-6);
        assert_eq!(bs_closed_form(90.0, 100.0, 0.0, 0.02, 0.2), 0.0);
        let det = 120.0 - 100.0 * (-0.02f64).exp();
        assert_relative_eq!(bs_closed_form(120.0, 100.0, 1.0, 0.02, 1e-6), det, epsilon = 1e-8);
        assert!(bs_closed_form(90.0, 100.0, 1.0, 0.02, 1e-6) < 1e-12);
    }

    #[test]
    fn greeks_match_finite_differences() {
        let h = 1e-3;
        let f = |s: f64| bs_closed_form(s, 100.0, 0.7, 0.03, 0.25);
        let fd_delta = (f(101.0 + h) - f(101.0 - h)) / (2.0 * h);
        let fd_gamma = (f(101.0 + h) - 2.0 * f(101.0) + f(101.0 - h)) / (h * h);
        assert_relative_eq!(bs_call_delta(101.0, 100.0, 0.7, 0.03, 0.25), fd_delta, epsilon = 1e-7);
        assert_relative_eq!(bs_call_gamma(101.0, 100.0, 0.7, 0.03, 0.25), fd_gamma, epsilon = 1e-4);
    }
}
