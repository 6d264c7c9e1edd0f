//! Discrete replay of the hedged trading accounts along a price path.
//!
//! Per interval `[t, t + dt]` the desk holds the derivative worth `V`,
//! receives collateral `C = αV`, repos `Δ` units of stock (`H = ΔS`) and
//! funds the rest `F = V − H − C` through the treasury. The recorded flows are
//!
//! ```text
//! repo_net         = H (1 + h dt) − Δ S_{t+dt}
//! derivative_net   = V_{t+dt} − V_t
//! funding_interest = −f (V − C) dt
//! collateral_net   = −c C dt
//! treasury_net     = derivative_net + funding_interest + collateral_net
//! ```
//!
//! In continuous time their sum equals `−(π + θ̃ − λV) dt` plus the
//! martingale part of the gamma term. The residual subtracts both, using the
//! realized squared increment, so it is the Taylor remainder of the model and
//! vanishes under refinement.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::deal::DealSpec;
use crate::driver::{collateral, funding_account, DriverContext};
use crate::error::{Error, Result};
use crate::market::{simulate_paths, MarketSpec, Paths, TimeGrid};
use crate::pde::{fmt12, ValueFunction};
use crate::schedule::Schedule;

/// Funding-cost rate `(h − f) H + (r − f) F + (r − c) C`.
pub fn dphi(hedge: f64, funding: f64, collateral: f64, h: f64, f: f64, c: f64, r: f64) -> f64 {
    (h - f) * hedge + (r - f) * funding + (r - c) * collateral
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerStep {
    pub t: f64,
    pub s: f64,
    pub value: f64,
    pub delta: f64,
    pub collateral: f64,
    pub hedge: f64,
    pub funding: f64,
    pub repo_net: f64,
    pub derivative_net: f64,
    pub funding_interest: f64,
    pub collateral_net: f64,
    pub treasury_net: f64,
    /// dφ · dt over the interval.
    pub dphi_dt: f64,
    /// Model accrual `−(π + θ̃ − λV) dt + ½ Γ (ΔS² − σ² dt)`.
    pub expected: f64,
    pub residual: f64,
    /// E_t[residual] under the risk-free one-step transition.
    pub conditional_residual: f64,
}

impl LedgerStep {
    pub fn total_net(&self) -> f64 {
        self.repo_net + self.treasury_net
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerReport {
    pub steps: Vec<LedgerStep>,
    pub max_abs_residual: f64,
    /// Sum of the per-step residuals over the life of the trade.
    pub total_residual: f64,
    /// Sum of the per-step conditional residuals.
    pub total_conditional_residual: f64,
}

pub const LEDGER_CSV_HEADER: &str = "t,s,value,delta,collateral,hedge,funding,repo_net,derivative_net,\
funding_interest,collateral_net,treasury_net,dphi_dt,expected,residual,conditional_residual";

impl LedgerReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{LEDGER_CSV_HEADER}")?;
        for st in &self.steps {
            let cells = [
                st.t,
                st.s,
                st.value,
                st.delta,
                st.collateral,
                st.hedge,
                st.funding,
                st.repo_net,
                st.derivative_net,
                st.funding_interest,
                st.collateral_net,
                st.treasury_net,
                st.dphi_dt,
                st.expected,
                st.residual,
                st.conditional_residual,
            ];
            let line: Vec<String> = cells.iter().map(|v| fmt12(*v)).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Replays the accounts along `path`, sampled every `dt` from 0 to maturity.
pub fn replay(
    path: &[f64],
    surface: &dyn ValueFunction,
    deal: &DealSpec,
    market: &MarketSpec,
    dt: f64,
) -> Result<LedgerReport> {
    if path.len() < 2 || !(dt > 0.0) {
        return Err(Error::InvalidGrid("ledger path needs at least one step and dt > 0".into()));
    }
    let n = path.len() - 1;
    if ((n as f64) * dt - deal.maturity).abs() > 1e-9 * deal.maturity.max(1.0) {
        return Err(Error::InvalidGrid(format!(
            "{n} steps of {dt} do not span the maturity {}",
            deal.maturity
        )));
    }
    if (surface.maturity() - deal.maturity).abs() > 1e-12 {
        return Err(Error::SurfaceMismatch(format!(
            "surface maturity {} differs from deal maturity {}",
            surface.maturity(),
            deal.maturity
        )));
    }
    let grid = TimeGrid::new(0.0, deal.maturity, n)?;
    let ctx = DriverContext::new(deal, market);
    let smooth = Quadrature::gauss_hermite(QUADRATURE_NODES);
    let mut steps = Vec::with_capacity(n);
    let mut value = surface.value(0.0, path[0])?;
    for i in 0..n {
        let (t, t_next) = (grid.node(i), grid.node(i + 1));
        let step = t_next - t;
        let (s, s_next) = (path[i], path[i + 1]);
        let delta = surface.delta(t, s)?;
        let gamma = surface.gamma(t, s)?;

        let sl = ctx.slice(t);
        let coll = collateral(deal, t, value);
        let hedge = delta * s;
        let funding = funding_account(deal, value, hedge, coll);
        let h = sl.h(delta);
        let f = sl.f(value);
        let c = sl.c(value);
        let (funding_interest, collateral_net) = if deal.rehypothecation {
            (-f * (value - coll) * step, -c * coll * step)
        } else {
            // segregated collateral: its remuneration passes straight through
            (-f * value * step, 0.0)
        };
        let sigma = market.vol.sigma_at(t, s);
        let carry = deal.dividend.value(t, s) + sl.theta_tilde(value) - sl.lambda * value;
        let accrual = hedge * (1.0 + h * step) + funding_interest + collateral_net + carry * step;

        // residual as a function of the next price
        let residual_at = |s1: f64, v1: f64| {
            let ds = s1 - s;
            accrual - delta * s1 + v1 - value - 0.5 * gamma * (ds * ds - sigma * sigma * step)
        };

        let value_next = surface.value(t_next, s_next)?;
        let repo_net = hedge * (1.0 + h * step) - delta * s_next;
        let derivative_net = value_next - value;
        let treasury_net = derivative_net + funding_interest + collateral_net;
        let ds = s_next - s;
        let expected = -carry * step + 0.5 * gamma * (ds * ds - sigma * sigma * step);
        let residual = repo_net + treasury_net - expected;
        debug_assert!((residual - residual_at(s_next, value_next)).abs() <= 1e-9 * (1.0 + residual.abs()));

        // the payoff is only Lipschitz: split the last step at its kinks
        let terminal;
        let quad = if i + 1 == n {
            let breaks: Vec<f64> = deal
                .payoff
                .kinks()
                .into_iter()
                .filter_map(|k| inverse_transition(market, &market.r, t, t_next, s, k))
                .collect();
            terminal = Quadrature::piecewise_normal(&breaks);
            &terminal
        } else {
            &smooth
        };
        let mut conditional_residual = 0.0;
        for (x, w) in quad.nodes.iter().zip(&quad.weights) {
            let s1 = transition(market, &market.r, t, t_next, s, *x);
            conditional_residual += w * residual_at(s1, surface.value(t_next, s1)?);
        }

        steps.push(LedgerStep {
            t,
            s,
            value,
            delta,
            collateral: coll,
            hedge,
            funding,
            repo_net,
            derivative_net,
            funding_interest,
            collateral_net,
            treasury_net,
            dphi_dt: dphi(hedge, funding, coll, h, f, c, sl.r) * step,
            expected,
            residual,
            conditional_residual,
        });
        value = value_next;
    }
    if steps
        .iter()
        .any(|st| !st.residual.is_finite() || !st.conditional_residual.is_finite())
    {
        return Err(Error::NonFinite { step: n });
    }
    let max_abs_residual = steps.iter().map(|st| st.residual.abs()).fold(0.0, f64::max);
    let total_residual = steps.iter().map(|st| st.residual).sum();
    let total_conditional_residual = steps.iter().map(|st| st.conditional_residual).sum();
    Ok(LedgerReport {
        steps,
        max_abs_residual,
        total_residual,
        total_conditional_residual,
    })
}

const QUADRATURE_NODES: usize = 24;

/// Nodes and weights for expectations of functions of a standard normal.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// Gauss–Hermite rule for the weight `exp(−x²/2) / √(2π)` (Golub–Welsch).
    pub fn gauss_hermite(n: usize) -> Self {
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }
}

impl Quadrature {
    /// Gauss–Legendre rule on `[−1, 1]`.
    pub fn gauss_legendre(n: usize) -> Self {
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                let k = i.max(j) as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|k| (eig.eigenvalues[k], 2.0 * eig.eigenvectors[(0, k)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// Standard-normal expectation rule on `[−10, 10]` built from Gauss–Legendre
    /// panels, with panel edges at every point of `breaks`.
    pub fn piecewise_normal(breaks: &[f64]) -> Self {
        const RANGE: f64 = 10.0;
        const PANEL: f64 = 0.5;
        let base = Self::gauss_legendre(8);
        let mut edges: Vec<f64> = breaks.iter().copied().filter(|b| b.abs() < RANGE).collect();
        edges.push(-RANGE);
        edges.push(RANGE);
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for seg in edges.windows(2) {
            let panels = ((seg[1] - seg[0]) / PANEL).ceil().max(1.0) as usize;
            let width = (seg[1] - seg[0]) / panels as f64;
            for k in 0..panels {
                let mid = seg[0] + (k as f64 + 0.5) * width;
                for (x, w) in base.nodes.iter().zip(&base.weights) {
                    let node = mid + 0.5 * width * x;
                    nodes.push(node);
                    weights.push(0.5 * width * w * norm * (-0.5 * node * node).exp());
                }
            }
        }
        Self { nodes, weights }
    }
}

/// Normal draw at which [`transition`] lands exactly on `target`.
fn inverse_transition(market: &MarketSpec, drift: &Schedule, t1: f64, t2: f64, s: f64, target: f64) -> Option<f64> {
    let mu = drift.integral_unchecked(t1, t2);
    match market.vol.proportional_variance(t1, t2) {
        Some(var) if var > 0.0 && target > 0.0 && s > 0.0 => {
            Some(((target / s).ln() - mu + 0.5 * var) / var.sqrt())
        }
        Some(_) => None,
        None => {
            let scale = market.vol.sigma_at(t1, s) * (t2 - t1).sqrt();
            (scale > 0.0).then(|| (target - s * mu.exp()) / scale)
        }
    }
}

/// One-step price map used by the simulator, driven by the standard normal `x`.
fn transition(market: &MarketSpec, drift: &Schedule, t1: f64, t2: f64, s: f64, x: f64) -> f64 {
    let mu = drift.integral_unchecked(t1, t2);
    let dt = t2 - t1;
    match market.vol.proportional_variance(t1, t2) {
        Some(var) => s * (mu - 0.5 * var + var.sqrt() * x).exp(),
        None => s * mu.exp() + market.vol.sigma_at(t1, s) * dt.sqrt() * x,
    }
}

/// Least-squares slope of `log(residual)` against `log(dt)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderFit {
    /// NaN when the residuals vanish identically.
    pub order: f64,
    pub warnings: Vec<String>,
}

pub fn convergence_order(dts: &[f64], residuals: &[f64]) -> Result<OrderFit> {
    if dts.len() != residuals.len() || dts.len() < 3 {
        return Err(Error::InvalidConfig(
            "convergence order needs at least three (dt, residual) pairs".into(),
        ));
    }
    let mut warnings = Vec::new();
    if residuals.iter().all(|r| *r == 0.0) {
        warnings.push("residuals are identically zero; order undefined".into());
        return Ok(OrderFit {
            order: f64::NAN,
            warnings,
        });
    }
    let mut pairs: Vec<(f64, f64)> = dts.iter().copied().zip(residuals.iter().map(|r| r.abs())).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pairs.windows(2).any(|w| w[1].1 < w[0].1) {
        warnings.push("residuals are not monotone in dt".into());
    }
    let pts: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|(_, r)| *r > 0.0)
        .map(|(d, r)| (d.ln(), r.ln()))
        .collect();
    if pts.len() < 2 {
        warnings.push("fewer than two non-zero residuals".into());
        return Ok(OrderFit {
            order: f64::NAN,
            warnings,
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(OrderFit {
        order: sxy / sxx,
        warnings,
    })
}

/// Residual statistics over many paths at one step size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSummary {
    pub dt: f64,
    pub n_steps: usize,
    /// Mean over paths and steps of the per-step conditional residual.
    pub mean_residual: f64,
    /// Mean over paths of the accumulated conditional residual.
    pub mean_accumulated_residual: f64,
    /// Mean over paths of the accumulated realized residual.
    pub mean_realized_residual: f64,
    /// Mean over paths of |accumulated realized residual|.
    pub mean_abs_realized_residual: f64,
    /// Largest realized per-step residual over all paths.
    pub max_abs_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementReport {
    pub levels: Vec<LevelSummary>,
    /// Order of `mean_residual`.
    pub order_mean: OrderFit,
    /// Order of `mean_accumulated_residual`.
    pub order_accumulated: OrderFit,
    /// Order of `max_abs_residual`.
    pub order_max: OrderFit,
}

/// Paths on the finest grid, subsampled for the coarser levels so every level
/// sees the same Brownian motion.
pub fn refinement_paths(market: &MarketSpec, maturity: f64, steps: &[usize], n_paths: usize, seed: u64) -> Result<Paths> {
    let finest = *steps.iter().max().ok_or_else(|| Error::InvalidConfig("no ledger step counts".into()))?;
    if steps.iter().any(|&n| n == 0 || finest % n != 0) {
        return Err(Error::InvalidConfig(format!(
            "ledger step counts {steps:?} must all divide the finest one"
        )));
    }
    let grid = TimeGrid::new(0.0, maturity, finest)?;
    Ok(simulate_paths(market, &market.r, &grid, n_paths, seed))
}

/// Replays `n_paths` paths at each step count and fits convergence orders.
pub fn refinement_study(
    surface: &dyn ValueFunction,
    deal: &DealSpec,
    market: &MarketSpec,
    steps: &[usize],
    n_paths: usize,
    seed: u64,
) -> Result<RefinementReport> {
    let paths = refinement_paths(market, deal.maturity, steps, n_paths, seed)?;
    let finest = paths.grid().n_steps();
    let mut levels = Vec::with_capacity(steps.len());
    for &n in steps {
        let stride = finest / n;
        let dt = deal.maturity / n as f64;
        let reports: Vec<LedgerReport> = (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let sub: Vec<f64> = paths.path(p).iter().step_by(stride).copied().collect();
                replay(&sub, surface, deal, market, dt)
            })
            .collect::<Result<_>>()?;
        let np = n_paths as f64;
        let accumulated = reports.iter().map(|r| r.total_conditional_residual).sum::<f64>() / np;
        levels.push(LevelSummary {
            dt,
            n_steps: n,
            mean_residual: accumulated / n as f64,
            mean_accumulated_residual: accumulated,
            mean_realized_residual: reports.iter().map(|r| r.total_residual).sum::<f64>() / np,
            mean_abs_realized_residual: reports.iter().map(|r| r.total_residual.abs()).sum::<f64>() / np,
            max_abs_residual: reports.iter().map(|r| r.max_abs_residual).fold(0.0, f64::max),
        });
    }
    let dts: Vec<f64> = levels.iter().map(|l| l.dt).collect();
    let fit = |g: fn(&LevelSummary) -> f64| -> Result<OrderFit> {
        let ys: Vec<f64> = levels.iter().map(g).collect();
        convergence_order(&dts, &ys)
    };
    Ok(RefinementReport {
        order_mean: fit(|l| l.mean_residual)?,
        order_accumulated: fit(|l| l.mean_accumulated_residual)?,
        order_max: fit(|l| l.max_abs_residual)?,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::BlackScholesCall;
    use crate::deal::{Payoff, RateLeg};
    use crate::market::VolModel;
    use crate::schedule::Schedule;
    use approx::assert_relative_eq;

    #[test]
    fn dphi_examples() {
        assert_eq!(dphi(5.0, -3.0, 8.0, 0.02, 0.02, 0.02, 0.02), 0.0);
        assert_eq!(dphi(0.0, 0.0, 0.0, 0.03, 0.02, 0.01, 0.025), 0.0);
        let rate = dphi(5.0, -3.0, 8.0, 0.03, 0.02, 0.01, 0.025);
        assert_relative_eq!(rate, 0.155, epsilon = 1e-14);
        assert_relative_eq!(rate * 0.01, 0.00155, epsilon = 1e-15);
    }

    struct Zero;
    impl ValueFunction for Zero {
        fn maturity(&self) -> f64 {
            1.0
        }
        fn value(&self, _: f64, _: f64) -> Result<f64> {
            Ok(0.0)
        }
        fn delta(&self, _: f64, _: f64) -> Result<f64> {
            Ok(0.0)
        }
        fn gamma(&self, _: f64, _: f64) -> Result<f64> {
            Ok(0.0)
        }
    }

    #[test]
    fn zero_deal_zero_flows() {
        let deal = DealSpec::new(Payoff::Constant { value: 0.0 }, 1.0);
        let m = MarketSpec::new(100.0, Schedule::zero(), VolModel::Proportional { level: 0.0 }).unwrap();
        let rep = replay(&[100.0; 11], &Zero, &deal, &m, 0.1).unwrap();
        assert_eq!(rep.steps.len(), 10);
        for st in &rep.steps {
            assert_eq!(st.total_net(), 0.0);
            assert_eq!(st.residual, 0.0);
            assert_eq!(st.dphi_dt, 0.0);
        }
    }

    #[test]
    fn account_identity_holds() {
        let deal = DealSpec::new(Payoff::Call { strike: 100.0 }, 1.0)
            .with_alpha(0.8)
            .with_legs(RateLeg::symmetric(0.02), RateLeg::symmetric(0.02), RateLeg::symmetric(0.02));
        let m = MarketSpec::new(100.0, Schedule::constant(0.02), VolModel::default()).unwrap();
        let bs = BlackScholesCall {
            strike: 100.0,
            maturity: 1.0,
            rate: 0.02,
            sigma: 0.2,
        };
        let path: Vec<f64> = (0..=20).map(|i| 100.0 + 3.0 * (i as f64 * 0.7).sin()).collect();
        let rep = replay(&path, &bs, &deal, &m, 0.05).unwrap();
        for st in &rep.steps {
            assert_relative_eq!(st.funding, st.value - st.hedge - st.collateral, epsilon = 1e-12);
            assert_relative_eq!(st.residual, st.total_net() - st.expected, epsilon = 1e-12);
            // all spreads vanish
            assert!(st.dphi_dt.abs() < 1e-14);
        }
        assert!(rep.max_abs_residual < 1.0);
    }

    #[test]
    fn path_length_must_match_maturity() {
        let deal = DealSpec::new(Payoff::Constant { value: 0.0 }, 1.0);
        let m = MarketSpec::new(100.0, Schedule::zero(), VolModel::default()).unwrap();
        assert!(replay(&[100.0; 5], &Zero, &deal, &m, 0.1).is_err());
    }

    #[test]
    fn quadrature_rules_integrate_moments() {
        for q in [
            Quadrature::gauss_hermite(24),
            Quadrature::piecewise_normal(&[]),
            Quadrature::piecewise_normal(&[0.37, -1.2]),
        ] {
            let m = |k: i32| q.nodes.iter().zip(&q.weights).map(|(x, w)| w * x.powi(k)).sum::<f64>();
            assert_relative_eq!(m(0), 1.0, epsilon = 1e-12);
            assert!(m(1).abs() < 1e-12);
            assert_relative_eq!(m(2), 1.0, epsilon = 1e-12);
            assert_relative_eq!(m(4), 3.0, epsilon = 1e-10);
        }
        // E[(X − a)^+] with the kink on a panel edge
        let a = 0.37;
        let q = Quadrature::piecewise_normal(&[a]);
        let e: f64 = q.nodes.iter().zip(&q.weights).map(|(x, w)| w * (x - a).max(0.0)).sum();
        let pdf = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let exact = pdf - a * 0.5 * libm_erfc(a / std::f64::consts::SQRT_2);
        assert_relative_eq!(e, exact, epsilon = 1e-12);
    }

    fn libm_erfc(x: f64) -> f64 {
        use statrs::function::erf::erfc;
        erfc(x)
    }

    #[test]
    fn order_fit() {
        let dts = [0.1, 0.05, 0.025];
        let fit = convergence_order(&dts, &dts.map(|d| 3.0 * d * d)).unwrap();
        assert_relative_eq!(fit.order, 2.0, epsilon = 1e-12);
        assert!(fit.warnings.is_empty());
        let zero = convergence_order(&dts, &[0.0; 3]).unwrap();
        assert!(zero.order.is_nan() && !zero.warnings.is_empty());
        let bumpy = convergence_order(&dts, &[1.0, 2.0, 0.5]).unwrap();
        assert!(!bumpy.warnings.is_empty());
        assert!(convergence_order(&dts[..2], &[1.0, 2.0]).is_err());
    }
}
