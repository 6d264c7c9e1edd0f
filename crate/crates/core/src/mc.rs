//! Regression Monte Carlo for the backward SDE, and the funding-discounted
//! representation check of a PDE surface.
//!
//! The backward pass is pathwise: each path carries its own Y, updated by
//! `Y_i = Y_{i+1} + Δt · f(t_i, S_i, v̂_i, ẑ_i)` where the conditional value
//! v̂ and the martingale density ẑ come from least-squares regressions on
//! monomials of `S / s0`. The estimate is the sample mean of `Y_0`, so its
//! standard error is an honest sample statistic.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deal::DealSpec;
use crate::driver::{DriverContext, HedgeMode, RateSlice};
use crate::error::{Error, Result};
use crate::market::{simulate_with, MarketSpec, Paths, SimOptions, TimeGrid};
use crate::pde::{fmt12, ValueSurface};
use crate::schedule::Schedule;

const CHUNK: usize = 4096;
const MAX_DEGREE: usize = 12;
/// Condition numbers of the design matrix above this are reported as warnings.
pub const CONDITION_WARNING: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub basis_degree: usize,
    pub picard_inner: usize,
    pub antithetic: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            n_steps: 100,
            seed: 42,
            basis_degree: 4,
            picard_inner: 3,
            antithetic: false,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.basis_degree < 1 || self.basis_degree > MAX_DEGREE {
            return Err(Error::InvalidConfig(format!(
                "mc.basis_degree = {} outside [1, {MAX_DEGREE}]",
                self.basis_degree
            )));
        }
        if self.n_paths < self.basis_degree + 1 {
            return Err(Error::InvalidConfig(format!(
                "mc.n_paths = {} must be at least basis_degree + 1",
                self.n_paths
            )));
        }
        if self.antithetic && self.n_paths % 2 == 1 {
            return Err(Error::InvalidConfig("mc.n_paths must be even with antithetic draws".into()));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidConfig("mc.n_steps must be >= 1".into()));
        }
        if self.picard_inner == 0 {
            return Err(Error::InvalidConfig("mc.picard_inner must be >= 1".into()));
        }
        Ok(())
    }

    fn sim_options(&self) -> SimOptions {
        SimOptions {
            n_paths: self.n_paths,
            seed: self.seed,
            antithetic: self.antithetic,
        }
    }
}

/// Forward drift of the asset in the backward solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftChoice {
    /// Risk-free drift r with driver B and an explicit hedge term.
    #[serde(rename = "r")]
    RiskFree,
    /// Repo drift h with driver B′.
    #[serde(rename = "h")]
    Repo,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct McDiagnostics {
    /// Condition number of the regression design matrix per time step.
    pub condition_numbers: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub diagnostics: McDiagnostics,
}

pub const ESTIMATE_CSV_HEADER: &str = "label,value,std_error,n_paths,n_steps,seed";

impl McEstimate {
    pub fn csv_row(&self, label: &str) -> String {
        format!(
            "{label},{},{},{},{},{}",
            fmt12(self.value),
            fmt12(self.std_error),
            self.n_paths,
            self.n_steps,
            self.seed
        )
    }
}

/// Mean and standard error; with antithetic draws the pair averages are the samples.
fn mean_and_error(samples: &[f64], antithetic: bool) -> (f64, f64) {
    let pooled: Vec<f64>;
    let xs: &[f64] = if antithetic {
        pooled = samples.chunks(2).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        &pooled
    } else {
        samples
    };
    let n = xs.len() as f64;
    let mean = chunked_sum(xs.len(), |p| xs[p]) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = chunked_sum(xs.len(), |p| (xs[p] - mean).powi(2)) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sum with a fixed chunking so the rounding does not depend on thread count.
fn chunked_sum(n: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    let partial: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| (c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f).sum())
        .collect();
    partial.iter().sum()
}

#[inline]
fn powers(x: f64, deg: usize) -> [f64; MAX_DEGREE + 1] {
    let mut out = [0.0; MAX_DEGREE + 1];
    out[0] = 1.0;
    for k in 1..=deg {
        out[k] = out[k - 1] * x;
    }
    out
}

/// Least-squares fit of several targets on `1, x, …, x^deg` with a shared
/// normal matrix.
struct Regression {
    gram: DMatrix<f64>,
    condition: f64,
}

impl Regression {
    fn new(xs: &[f64], deg: usize) -> Self {
        let k = deg + 1;
        let partial: Vec<DMatrix<f64>> = xs
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = DMatrix::zeros(k, k);
                for &x in chunk {
                    let phi = powers(x, deg);
                    for a in 0..k {
                        for b in a..k {
                            g[(a, b)] += phi[a] * phi[b];
                        }
                    }
                }
                g
            })
            .collect();
        let mut gram = DMatrix::zeros(k, k);
        for g in partial {
            gram += g;
        }
        for a in 0..k {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let hi = eig.iter().cloned().fold(0.0, f64::max);
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let condition = if lo > 0.0 { (hi / lo).sqrt() } else { f64::INFINITY };
        Self { gram, condition }
    }

    fn fit(&self, xs: &[f64], deg: usize, target: impl Fn(usize) -> f64 + Sync) -> DVector<f64> {
        let k = deg + 1;
        let partial: Vec<DVector<f64>> = (0..xs.len().div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut b = DVector::zeros(k);
                for p in c * CHUNK..((c + 1) * CHUNK).min(xs.len()) {
                    let phi = powers(xs[p], deg);
                    let y = target(p);
                    for a in 0..k {
                        b[a] += phi[a] * y;
                    }
                }
                b
            })
            .collect();
        let mut rhs = DVector::zeros(k);
        for b in partial {
            rhs += b;
        }
        match self.gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => self
                .gram
                .clone()
                .svd(true, true)
                .solve(&rhs, 1e-12 * self.gram.norm())
                .expect("SVD with both factors computed"),
        }
    }
}

#[inline]
fn eval_poly(coef: &DVector<f64>, x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Driver evaluated with a precomputed rate slice.
struct StepDriver<'a> {
    deal: &'a DealSpec,
    sl: RateSlice,
    t: f64,
    kind: Kind<'a>,
}

enum Kind<'a> {
    /// B′ plus the change-of-drift term when paths were simulated under `h_sim`.
    Repo { h_sim: f64 },
    RiskFree { hedge: &'a HedgeMode },
}

impl StepDriver<'_> {
    #[inline]
    fn eval(&self, s: f64, sigma: f64, v: f64, z: f64) -> f64 {
        let sl = &self.sl;
        let pi = self.deal.dividend.value(self.t, s);
        match self.kind {
            Kind::Repo { h_sim } => {
                let h = sl.h(z);
                let shift = if h != h_sim && sigma > 0.0 {
                    (h - h_sim) * s * z / sigma
                } else {
                    0.0
                };
                pi + sl.bprime_linear(v) + shift
            }
            Kind::RiskFree { hedge } => {
                let s_delta = if sigma > 0.0 { s * z / sigma } else { 0.0 };
                let position = hedge.position(self.t, s, v, z, s_delta);
                let h = match hedge {
                    HedgeMode::Custom(_) => sl.h(position),
                    _ => sl.h(z),
                };
                pi + sl.theta_tilde(v) + (sl.f(v) * (sl.alpha - 1.0) - sl.lambda - sl.c(v) * sl.alpha) * v
                    - (sl.r - h) * position
            }
        }
    }
}

/// Backward regression Monte Carlo with the delta hedge on the risk-free path.
pub fn solve_backward(
    deal: &DealSpec,
    market: &MarketSpec,
    drift: DriftChoice,
    config: &McConfig,
) -> Result<McEstimate> {
    solve_backward_with(deal, market, drift, config, &HedgeMode::Delta)
}

/// Backward regression Monte Carlo with an explicit hedge map (used only
/// for [`DriftChoice::RiskFree`]).
///
/// Under [`DriftChoice::Repo`] with `h⁺ ≠ h⁻` the paths are simulated with
/// drift h⁺ and the driver carries `(h(z) − h⁺) s z / σ`, which moves the
/// sign-selected drift into the source term.
pub fn solve_backward_with(
    deal: &DealSpec,
    market: &MarketSpec,
    drift: DriftChoice,
    config: &McConfig,
    hedge: &HedgeMode,
) -> Result<McEstimate> {
    config.validate()?;
    deal.check()?;
    market.validate()?;
    let grid = TimeGrid::new(0.0, deal.maturity, config.n_steps)?;
    let sim_rate: &Schedule = match drift {
        DriftChoice::Repo => &deal.leg_h.plus,
        DriftChoice::RiskFree => &market.r,
    };
    let paths = simulate_with(market, &grid, config.sim_options(), |_, t1, t2, _| {
        sim_rate.integral_unchecked(t1, t2)
    });
    let ctx = DriverContext::new(deal, market);
    backward(deal, market, &ctx, &paths, drift, hedge, config)
}

fn backward(
    deal: &DealSpec,
    market: &MarketSpec,
    ctx: &DriverContext<'_>,
    paths: &Paths,
    drift: DriftChoice,
    hedge: &HedgeMode,
    config: &McConfig,
) -> Result<McEstimate> {
    let grid = *paths.grid();
    let n = paths.n_paths();
    let steps = grid.n_steps();
    let deg = config.basis_degree;
    let mut y: Vec<f64> = paths.terminal().map(|s| deal.payoff.value(s)).collect();
    let mut diagnostics = McDiagnostics {
        condition_numbers: vec![1.0; steps],
        warnings: Vec::new(),
    };
    let mut xs = vec![0.0; n];
    let mut v_hat = vec![0.0; n];
    let mut z_hat = vec![0.0; n];

    for i in (0..steps).rev() {
        let t = grid.node(i);
        let dt = grid.node(i + 1) - t;
        let dw = |p: usize| paths.increment(p, i);
        if i == 0 {
            // every path starts at s0: conditional expectations are sample means
            let e = chunked_sum(n, |p| y[p]) / n as f64;
            let z = chunked_sum(n, |p| (y[p] - e) * dw(p)) / (n as f64 * dt);
            v_hat.fill(e);
            z_hat.fill(z);
        } else {
            xs.par_iter_mut()
                .enumerate()
                .for_each(|(p, x)| *x = paths.value(p, i) / market.s0);
            let reg = Regression::new(&xs, deg);
            diagnostics.condition_numbers[i] = reg.condition;
            if !(reg.condition < CONDITION_WARNING) {
                diagnostics.warnings.push(format!(
                    "step {i}: regression condition number {:.3e}",
                    reg.condition
                ));
            }
            let ce = reg.fit(&xs, deg, |p| y[p]);
            v_hat
                .par_iter_mut()
                .zip(&xs)
                .for_each(|(v, &x)| *v = eval_poly(&ce, x));
            let cz = reg.fit(&xs, deg, |p| (y[p] - v_hat[p]) * dw(p) / dt);
            z_hat
                .par_iter_mut()
                .zip(&xs)
                .for_each(|(z, &x)| *z = eval_poly(&cz, x));
        }

        let driver = StepDriver {
            deal,
            sl: ctx.slice(t),
            t,
            kind: match drift {
                DriftChoice::Repo => Kind::Repo {
                    h_sim: deal.leg_h.plus.value_at(t),
                },
                DriftChoice::RiskFree => Kind::RiskFree { hedge },
            },
        };
        let picard = config.picard_inner;
        y.par_iter_mut().enumerate().for_each(|(p, yp)| {
            let s = paths.value(p, i);
            let sigma = market.vol.sigma_at(t, s);
            let (e, z) = (v_hat[p], z_hat[p]);
            let mut v = e;
            for _ in 0..picard {
                v = e + dt * driver.eval(s, sigma, v, z);
            }
            *yp += dt * driver.eval(s, sigma, v, z);
        });
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: i });
        }
    }

    let (value, std_error) = mean_and_error(&y, config.antithetic);
    Ok(McEstimate {
        value,
        std_error,
        n_paths: n,
        n_steps: steps,
        seed: config.seed,
        diagnostics,
    })
}

/// Result of checking a surface against the funding-discounted representation
/// `u(0, s0) = E^h[ ∫ D(0,t;f) (π + θ̃ − λV + (f − c) C) dt + D(0,T;f) Φ(S_T) ]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepresentationReport {
    pub estimate: f64,
    pub std_error: f64,
    pub pde_value: f64,
    pub residual: f64,
    /// |residual| / std_error (0 when both vanish).
    pub z_score: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl RepresentationReport {
    pub fn passes(&self, n_sigma: f64) -> bool {
        self.z_score <= n_sigma
    }
}

fn check_surface(surface: &ValueSurface, deal: &DealSpec, market: &MarketSpec) -> Result<()> {
    let tg = surface.time();
    let sg = surface.space();
    if (tg.maturity() - deal.maturity).abs() > 1e-12 || tg.t0() > 0.0 {
        return Err(Error::SurfaceMismatch(format!(
            "surface covers [{}, {}] but the deal needs [0, {}]",
            tg.t0(),
            tg.maturity(),
            deal.maturity
        )));
    }
    if market.s0 < sg.s_min() || market.s0 > sg.s_max() {
        return Err(Error::SurfaceMismatch(format!("s0 = {} outside the surface", market.s0)));
    }
    let last = surface.row(tg.n_steps());
    for (j, s) in sg.nodes().into_iter().enumerate() {
        if last[j] != deal.payoff.value(s) {
            return Err(Error::SurfaceMismatch(format!(
                "terminal row differs from the payoff at s = {s}"
            )));
        }
    }
    Ok(())
}

/// Simulates under the repo drift (leg chosen by the sign of the surface's
/// z), accumulates the funding-discounted integrand along each path and
/// compares the mean with `u(0, s0)`.
pub fn representation_check(
    surface: &ValueSurface,
    deal: &DealSpec,
    market: &MarketSpec,
    config: &McConfig,
) -> Result<RepresentationReport> {
    config.validate()?;
    check_surface(surface, deal, market)?;
    let grid = TimeGrid::new(0.0, deal.maturity, config.n_steps)?;
    let leg_h = &deal.leg_h;
    let paths = simulate_with(market, &grid, config.sim_options(), |_, t1, t2, s| {
        let leg = if surface.delta_extrapolated(t1, s) > 0.0 {
            &leg_h.plus
        } else {
            &leg_h.minus
        };
        leg.integral_unchecked(t1, t2)
    });
    let ctx = DriverContext::new(deal, market);
    let slices: Vec<RateSlice> = grid.nodes().map(|t| ctx.slice(t)).collect();
    let steps = grid.n_steps();

    let totals: Vec<f64> = (0..paths.n_paths())
        .into_par_iter()
        .map(|p| {
            let integrand = |i: usize| -> (f64, f64) {
                let t = grid.node(i);
                let s = paths.value(p, i);
                let v = surface.value_extrapolated(t, s);
                let sl = &slices[i];
                let g = deal.dividend.value(t, s) + sl.theta_tilde(v) - sl.lambda * v
                    + (sl.f(v) - sl.c(v)) * sl.alpha * v;
                (g, sl.f(v))
            };
            let mut discount = 1.0;
            let (mut g_prev, mut f_prev) = integrand(0);
            let mut acc = 0.0;
            for i in 0..steps {
                let dt = grid.node(i + 1) - grid.node(i);
                let next_discount = discount * (-f_prev * dt).exp();
                let (g_next, f_next) = integrand(i + 1);
                acc += 0.5 * (discount * g_prev + next_discount * g_next) * dt;
                discount = next_discount;
                g_prev = g_next;
                f_prev = f_next;
            }
            acc + discount * deal.payoff.value(paths.value(p, steps))
        })
        .collect();
    if totals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: 0 });
    }

    let (estimate, std_error) = mean_and_error(&totals, config.antithetic);
    let pde_value = surface.value_at(0.0, market.s0)?;
    let residual = estimate - pde_value;
    let z_score = if std_error > 0.0 {
        residual.abs() / std_error
    } else if residual == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(RepresentationReport {
        estimate,
        std_error,
        pde_value,
        residual,
        z_score,
        n_paths: paths.n_paths(),
        n_steps: steps,
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::bs_closed_form;
    use crate::deal::{CreditSpec, Payoff, RateLeg};
    use crate::market::VolModel;
    use crate::pde::{solve_independent, PdeConfig, PdeGrids};

    fn market(r: f64) -> MarketSpec {
        MarketSpec::new(100.0, Schedule::constant(r), VolModel::default()).unwrap()
    }

    fn small(seed: u64) -> McConfig {
        McConfig {
            n_paths: 20_000,
            n_steps: 50,
            seed,
            ..McConfig::default()
        }
    }

    fn linear_call() -> DealSpec {
        DealSpec::new(Payoff::Call { strike: 100.0 }, 1.0).with_legs(
            RateLeg::symmetric(0.02),
            RateLeg::symmetric(0.02),
            RateLeg::symmetric(0.02),
        )
    }

    #[test]
    fn config_validation() {
        assert!(McConfig::default().validate().is_ok());
        let bad = McConfig {
            n_paths: 3,
            basis_degree: 4,
            ..McConfig::default()
        };
        assert!(bad.validate().is_err());
        let odd = McConfig {
            n_paths: 1001,
            antithetic: true,
            ..McConfig::default()
        };
        assert!(odd.validate().is_err());
        assert!(McConfig { basis_degree: 0, ..McConfig::default() }.validate().is_err());
    }

    #[test]
    fn zero_deal_is_exactly_zero() {
        let deal = DealSpec::new(Payoff::Constant { value: 0.0 }, 1.0)
            .with_alpha(0.4)
            .with_credit(CreditSpec::flat(0.02, 0.03, 0.6, 0.4));
        for drift in [DriftChoice::Repo, DriftChoice::RiskFree] {
            let est = solve_backward(&deal, &market(0.03), drift, &small(1)).unwrap();
            assert_eq!(est.value, 0.0);
            assert_eq!(est.std_error, 0.0);
        }
    }

    #[test]
    fn linear_limit_is_near_black_scholes() {
        let est = solve_backward(&linear_call(), &market(0.02), DriftChoice::Repo, &small(7)).unwrap();
        let oracle = bs_closed_form(100.0, 100.0, 1.0, 0.02, 0.2);
        assert!((est.value - oracle).abs() < 4.0 * est.std_error, "{est:?}");
        assert!(est.diagnostics.warnings.is_empty());
        assert_eq!(est.diagnostics.condition_numbers.len(), 50);
    }

    #[test]
    fn estimates_are_deterministic() {
        let deal = linear_call().with_alpha(0.5);
        let a = solve_backward(&deal, &market(0.05), DriftChoice::RiskFree, &small(3)).unwrap();
        let b = solve_backward(&deal, &market(0.05), DriftChoice::RiskFree, &small(3)).unwrap();
        assert_eq!(a, b);
        let c = solve_backward(&deal, &market(0.05), DriftChoice::RiskFree, &small(4)).unwrap();
        assert_ne!(a.value, c.value);
    }

    #[test]
    fn antithetic_pairs_reduce_error_for_monotone_payoff() {
        let plain = solve_backward(&linear_call(), &market(0.02), DriftChoice::Repo, &small(9)).unwrap();
        let anti = solve_backward(
            &linear_call(),
            &market(0.02),
            DriftChoice::Repo,
            &McConfig { antithetic: true, ..small(9) },
        )
        .unwrap();
        assert!(anti.std_error < plain.std_error);
    }

    #[test]
    fn csv_row_layout() {
        let est = McEstimate {
            value: 8.916,
            std_error: 0.05,
            n_paths: 10,
            n_steps: 5,
            seed: 3,
            diagnostics: McDiagnostics::default(),
        };
        assert_eq!(est.csv_row("x"), "x,8.91600000000e0,5.00000000000e-2,10,5,3");
        assert_eq!(ESTIMATE_CSV_HEADER.split(',').count(), est.csv_row("x").split(',').count());
    }

    #[test]
    fn representation_zero_deal() {
        let deal = DealSpec::new(Payoff::Constant { value: 0.0 }, 1.0);
        let m = market(0.0);
        let grids = PdeGrids::for_market(&m, 1.0, 60, 40).unwrap();
        let surface = solve_independent(&deal, &m.vol, &grids, &PdeConfig::default()).unwrap();
        let rep = representation_check(&surface, &deal, &m, &small(1)).unwrap();
        assert_eq!(rep.residual, 0.0);
        assert_eq!(rep.z_score, 0.0);
    }

    #[test]
    fn representation_rejects_foreign_surface() {
        let m = market(0.0);
        let grids = PdeGrids::for_market(&m, 1.0, 60, 40).unwrap();
        let surface = solve_independent(&linear_call(), &m.vol, &grids, &PdeConfig::default()).unwrap();
        let put = DealSpec::new(Payoff::Put { strike: 100.0 }, 1.0);
        assert!(matches!(
            representation_check(&surface, &put, &m, &small(1)),
            Err(Error::SurfaceMismatch(_))
        ));
    }

    #[test]
    fn regression_recovers_polynomial() {
        let xs: Vec<f64> = (0..1000).map(|i| 0.5 + i as f64 / 1000.0).collect();
        let reg = Regression::new(&xs, 3);
        let coef = reg.fit(&xs, 3, |p| 1.0 - 2.0 * xs[p] + 0.5 * xs[p].powi(3));
        assert!((coef[0] - 1.0).abs() < 1e-8);
        assert!((coef[1] + 2.0).abs() < 1e-8);
        assert!(coef[2].abs() < 1e-8);
        assert!((coef[3] - 0.5).abs() < 1e-8);
        assert!(reg.condition.is_finite() && reg.condition > 1.0);
    }
}
