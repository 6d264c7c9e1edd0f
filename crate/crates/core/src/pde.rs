//! θ-scheme finite differences for the semilinear valuation PDEs
//!
//! ```text
//! ∂t u + ½σ²∂ss u + h s ∂s u + B′(t, s, u)          = 0   (repo drift)
//! ∂t u + ½σ²∂ss u + r s ∂s u + B(t, s, u, σ ∂s u)   = 0   (risk-free drift)
//! u(T, s) = Φ(s)
//! ```
//!
//! Each backward step solves a tridiagonal system. The piecewise-linear
//! source is handled by Picard iteration: every sign selection (closeout kink,
//! c/f/h legs) and the lagged hedge term are frozen at the current iterate,
//! the linear part goes on the diagonal, and the step is re-solved until the
//! max-norm change drops below `picard_tol`.
//!
//! Boundaries: at `s_min = 0` with lognormal volatility the equation reduces
//! to the ODE ∂t u + B′(t, 0, u) = 0; otherwise (and always at `s_max`) the
//! linearity condition ∂ss u = 0 is imposed by extrapolation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::deal::DealSpec;
use crate::driver::{DriverContext, HedgeMode, RateSlice};
use crate::error::{Error, Result};
use crate::market::{MarketSpec, TimeGrid, VolModel};
use crate::schedule::Schedule;
use crate::tridiag;

/// Anything that can be queried like a pricing function u(t, s).
pub trait ValueFunction: Sync {
    fn maturity(&self) -> f64;
    fn value(&self, t: f64, s: f64) -> Result<f64>;
    fn delta(&self, t: f64, s: f64) -> Result<f64>;
    fn gamma(&self, t: f64, s: f64) -> Result<f64>;
}

/// Uniform price grid on `[s_min, s_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    s_min: f64,
    s_max: f64,
    n_space: usize,
}

impl SpatialGrid {
    pub fn new(s_min: f64, s_max: f64, n_space: usize) -> Result<Self> {
        if !(s_min >= 0.0) || !(s_max > s_min) || !s_max.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "spatial grid needs 0 <= s_min < s_max (got [{s_min}, {s_max}])"
            )));
        }
        if n_space < 3 {
            return Err(Error::InvalidGrid(format!("n_space = {n_space} < 3")));
        }
        Ok(Self { s_min, s_max, n_space })
    }

    /// Grid on `[s_min, ≈ s_max]` whose spacing is adjusted so that `s0` is a node.
    pub fn through(s_min: f64, s_max: f64, n_space: usize, s0: f64) -> Result<Self> {
        let raw = Self::new(s_min, s_max, n_space)?;
        if !(s0 > s_min && s0 < s_max) {
            return Err(Error::InvalidGrid(format!(
                "s0 = {s0} must lie strictly inside [{s_min}, {s_max}]"
            )));
        }
        let k = ((s0 - s_min) / raw.ds()).round().clamp(1.0, (n_space - 2) as f64);
        let ds = (s0 - s_min) / k;
        Self::new(s_min, s_min + ds * (n_space - 1) as f64, n_space)
    }

    /// Default domain `[0, s0 · exp(5 σ̂ √T)]` with `s0` on a node.
    pub fn for_market(market: &MarketSpec, maturity: f64, n_space: usize) -> Result<Self> {
        let s_max = match &market.vol {
            VolModel::Constant { sigma } => market.s0 + 5.0 * sigma * maturity.sqrt(),
            VolModel::Proportional { level } => market.s0 * (5.0 * level * maturity.sqrt()).exp(),
            VolModel::TermStructure { levels } => {
                market.s0 * (5.0 * levels.max_on(0.0, maturity) * maturity.sqrt()).exp()
            }
        };
        // keep a usable domain for degenerate volatility
        let s_max = s_max.max(2.0 * market.s0);
        Self::through(0.0, s_max, n_space, market.s0)
    }

    pub fn s_min(&self) -> f64 {
        self.s_min
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    pub fn ds(&self) -> f64 {
        (self.s_max - self.s_min) / (self.n_space - 1) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j + 1 == self.n_space {
            self.s_max
        } else {
            self.s_min + j as f64 * self.ds()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_space).map(|j| self.node(j)).collect()
    }

    /// Refined grid with the same bounds and `factor` times the intervals.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            n_space: (self.n_space - 1) * factor + 1,
            ..*self
        }
    }
}

/// Time and space discretization of one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeGrids {
    pub time: TimeGrid,
    pub space: SpatialGrid,
}

impl PdeGrids {
    /// `n_time` steps on `[0, T]` and the default spatial domain.
    pub fn for_market(market: &MarketSpec, maturity: f64, n_space: usize, n_time: usize) -> Result<Self> {
        Ok(Self {
            time: TimeGrid::new(0.0, maturity, n_time)?,
            space: SpatialGrid::for_market(market, maturity, n_space)?,
        })
    }

    pub fn refined(&self, factor: usize) -> Result<Self> {
        Ok(Self {
            time: TimeGrid::new(self.time.t0(), self.time.maturity(), self.time.n_steps() * factor)?,
            space: self.space.refined(factor),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeConfig {
    /// 0 explicit, 0.5 Crank–Nicolson, 1 fully implicit.
    pub theta: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// Fully implicit steps taken first from maturity.
    pub rannacher_steps: usize,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            picard_tol: 1e-10,
            picard_max_iter: 50,
            rannacher_steps: 2,
        }
    }
}

impl PdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidConfig(format!("pde.theta = {} outside [0, 1]", self.theta)));
        }
        if !(self.picard_tol > 0.0) {
            return Err(Error::InvalidConfig("pde.picard_tol must be positive".into()));
        }
        if self.picard_max_iter == 0 {
            return Err(Error::InvalidConfig("pde.picard_max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// u(t, s) on the grid with ∂s u and z = σ ∂s u.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSurface {
    grids: PdeGrids,
    u: Vec<f64>,
    delta: Vec<f64>,
    z: Vec<f64>,
}

fn derivative(row: &[f64], ds: f64, out: &mut [f64]) {
    let n = row.len();
    for j in 1..n - 1 {
        out[j] = (row[j + 1] - row[j - 1]) / (2.0 * ds);
    }
    out[0] = (-3.0 * row[0] + 4.0 * row[1] - row[2]) / (2.0 * ds);
    out[n - 1] = (3.0 * row[n - 1] - 4.0 * row[n - 2] + row[n - 3]) / (2.0 * ds);
}

impl ValueSurface {
    fn from_rows(grids: PdeGrids, vol: &VolModel, u: Vec<f64>) -> Self {
        let ns = grids.space.n_space;
        let ds = grids.space.ds();
        let mut delta = vec![0.0; u.len()];
        for (urow, drow) in u.chunks(ns).zip(delta.chunks_mut(ns)) {
            derivative(urow, ds, drow);
        }
        let mut z = vec![0.0; u.len()];
        for i in 0..=grids.time.n_steps() {
            let t = grids.time.node(i);
            for j in 0..ns {
                z[i * ns + j] = vol.sigma_at(t, grids.space.node(j)) * delta[i * ns + j];
            }
        }
        Self { grids, u, delta, z }
    }

    pub fn grids(&self) -> &PdeGrids {
        &self.grids
    }

    pub fn time(&self) -> &TimeGrid {
        &self.grids.time
    }

    pub fn space(&self) -> &SpatialGrid {
        &self.grids.space
    }

    fn width(&self) -> usize {
        self.grids.space.n_space
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.u[i * w..(i + 1) * w]
    }

    pub fn delta_row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.delta[i * w..(i + 1) * w]
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.z[i * w..(i + 1) * w]
    }

    pub fn initial_row(&self) -> &[f64] {
        self.row(0)
    }

    fn locate(&self, t: f64, s: f64) -> Result<(usize, f64, usize, f64)> {
        let tg = &self.grids.time;
        let sg = &self.grids.space;
        let eps = 1e-12 * (1.0 + tg.maturity().abs());
        if t < tg.t0() - eps || t > tg.maturity() + eps || s < sg.s_min || s > sg.s_max || s.is_nan() {
            return Err(Error::OutOfHull { t, s });
        }
        let (ti, tw) = bracket((t - tg.t0()) / tg.dt(), tg.n_steps());
        let (sj, sw) = bracket((s - sg.s_min) / sg.ds(), sg.n_space - 1);
        Ok((ti, tw, sj, sw))
    }

    fn interp(&self, data: &[f64], t: f64, s: f64) -> Result<f64> {
        let (i, tw, j, sw) = self.locate(t, s)?;
        let w = self.width();
        let at = |ii: usize| {
            let a = data[ii * w + j];
            let b = data[ii * w + j + 1];
            a + sw * (b - a)
        };
        let lo = at(i);
        let hi = at(i + 1);
        Ok(lo + tw * (hi - lo))
    }

    /// Bilinear interpolation of u.
    pub fn value_at(&self, t: f64, s: f64) -> Result<f64> {
        self.interp(&self.u, t, s)
    }

    /// Bilinear interpolation of ∂s u = z / σ.
    pub fn extract_delta(&self, t: f64, s: f64) -> Result<f64> {
        self.interp(&self.delta, t, s)
    }

    pub fn z_at(&self, t: f64, s: f64) -> Result<f64> {
        self.interp(&self.z, t, s)
    }

    /// u with the time clamped to the grid and linear extrapolation in s
    /// outside `[s_min, s_max]` (consistent with the ∂ss u = 0 boundary).
    pub fn value_extrapolated(&self, t: f64, s: f64) -> f64 {
        let tg = &self.grids.time;
        let sg = &self.grids.space;
        let t = t.clamp(tg.t0(), tg.maturity());
        let inside = s.clamp(sg.s_min, sg.s_max);
        let base = self.value_at(t, inside).expect("clamped query is inside the hull");
        if s == inside {
            return base;
        }
        let slope = self.extract_delta(t, inside).expect("clamped query is inside the hull");
        base + slope * (s - inside)
    }

    /// ∂s u with the same clamping as [`value_extrapolated`](Self::value_extrapolated).
    pub fn delta_extrapolated(&self, t: f64, s: f64) -> f64 {
        let tg = &self.grids.time;
        let sg = &self.grids.space;
        self.extract_delta(t.clamp(tg.t0(), tg.maturity()), s.clamp(sg.s_min, sg.s_max))
            .expect("clamped query is inside the hull")
    }

    /// Second derivative from differences of the stored delta, interpolated.
    pub fn gamma_at(&self, t: f64, s: f64) -> Result<f64> {
        let (i, tw, j, sw) = self.locate(t, s)?;
        let w = self.width();
        let ds = self.grids.space.ds();
        let g = |ii: usize, jj: usize| -> f64 {
            let row = &self.u[ii * w..(ii + 1) * w];
            let jj = jj.clamp(1, w - 2);
            (row[jj + 1] - 2.0 * row[jj] + row[jj - 1]) / (ds * ds)
        };
        let at = |ii: usize| g(ii, j) + sw * (g(ii, j + 1) - g(ii, j));
        Ok(at(i) + tw * (at(i + 1) - at(i)))
    }

    /// Writes u and z as CSV: header `t,s_0,…`, one row per time node,
    /// 12 significant digits.
    pub fn write_csv(&self, u_path: &Path, z_path: &Path) -> Result<()> {
        self.write_matrix(&self.u, u_path)?;
        self.write_matrix(&self.z, z_path)
    }

    fn write_matrix(&self, data: &[f64], path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        write!(out, "t")?;
        for s in self.grids.space.nodes() {
            write!(out, ",{}", fmt12(s))?;
        }
        writeln!(out)?;
        let w = self.width();
        for (i, row) in data.chunks(w).enumerate() {
            write!(out, "{}", fmt12(self.grids.time.node(i)))?;
            for v in row {
                write!(out, ",{}", fmt12(*v))?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}

impl ValueFunction for ValueSurface {
    fn maturity(&self) -> f64 {
        self.grids.time.maturity()
    }

    fn value(&self, t: f64, s: f64) -> Result<f64> {
        self.value_at(t, s)
    }

    fn delta(&self, t: f64, s: f64) -> Result<f64> {
        self.extract_delta(t, s)
    }

    fn gamma(&self, t: f64, s: f64) -> Result<f64> {
        self.gamma_at(t, s)
    }
}

/// 12 significant digits, scientific notation.
pub fn fmt12(x: f64) -> String {
    format!("{x:.11e}")
}

fn bracket(x: f64, cells: usize) -> (usize, f64) {
    let k = (x.floor().max(0.0) as usize).min(cells - 1);
    (k, (x - k as f64).clamp(0.0, 1.0))
}

/// Sign branch forced on every selection by [`solve_linear`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

#[derive(Clone, Copy)]
enum Drift<'a> {
    /// Advection at h, selected by the sign of ∂s u.
    Repo,
    /// Advection at r with the hedge-financing source −(r − h) H.
    RiskFree(&'a Schedule, &'a HedgeMode),
}

struct Problem<'a> {
    ctx: DriverContext<'a>,
    vol: &'a VolModel,
    drift: Drift<'a>,
    forced: Option<Branch>,
}

/// Per-node coefficients of the spatial operator plus reaction and source.
struct Operator {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    source: Vec<f64>,
}

impl Operator {
    fn new(n: usize) -> Self {
        Self {
            sub: vec![0.0; n],
            diag: vec![0.0; n],
            sup: vec![0.0; n],
            source: vec![0.0; n],
        }
    }

    fn apply(&self, u: &[f64], j: usize) -> f64 {
        self.sub[j] * u[j - 1] + self.diag[j] * u[j] + self.sup[j] * u[j + 1] + self.source[j]
    }
}

impl<'a> Problem<'a> {
    fn reference(&self, v: f64) -> f64 {
        match self.forced {
            Some(Branch::Plus) => 1.0,
            Some(Branch::Minus) => -1.0,
            None => v,
        }
    }

    /// Fills `op` with L + κ and the source at time `t`, with all nonlinear
    /// selections frozen at `u`.
    fn assemble(&self, t: f64, grid: &SpatialGrid, u: &[f64], scratch_delta: &mut [f64], op: &mut Operator) {
        let sl: RateSlice = self.ctx.slice(t);
        let ds = grid.ds();
        derivative(u, ds, scratch_delta);
        let deal = self.ctx.deal;
        let n = grid.n_space;
        for j in 0..n {
            let s = grid.node(j);
            let sigma = self.vol.sigma_at(t, s);
            let diff = 0.5 * sigma * sigma / (ds * ds);
            let slope = scratch_delta[j];
            let (mu, hedge_src) = match self.drift {
                Drift::Repo => (sl.h(self.reference(slope)), 0.0),
                Drift::RiskFree(r, hedge) => {
                    let r_t = r.value_at(t);
                    let v = u[j];
                    let position = hedge.position(t, s, v, sigma * slope, s * slope);
                    let indicator = match hedge {
                        HedgeMode::Custom(_) => position,
                        _ => slope,
                    };
                    let h = sl.h(self.reference(indicator));
                    (r_t, -(r_t - h) * position)
                }
            };
            let adv = mu * s / (2.0 * ds);
            op.sub[j] = diff - adv;
            op.sup[j] = diff + adv;
            op.diag[j] = -2.0 * diff + sl.bprime_coefficient(self.reference(u[j]));
            op.source[j] = deal.dividend.value(t, s) + hedge_src;
        }
    }
}

fn march(problem: &Problem<'_>, grids: &PdeGrids, config: &PdeConfig) -> Result<ValueSurface> {
    config.validate()?;
    let deal = problem.ctx.deal;
    if (grids.time.maturity() - deal.maturity).abs() > 1e-12 {
        return Err(Error::InvalidGrid(format!(
            "time grid ends at {} but the deal matures at {}",
            grids.time.maturity(),
            deal.maturity
        )));
    }
    let sg = grids.space;
    let tg = grids.time;
    let n = sg.n_space;
    let steps = tg.n_steps();
    let dt = tg.dt();
    let degenerate_lower = sg.s_min == 0.0 && problem.vol.is_proportional();
    let lo = if degenerate_lower { 0 } else { 1 };
    let hi = n - 2;
    if hi < lo + 1 {
        return Err(Error::InvalidGrid(format!(
            "n_space = {n} too small for the boundary treatment"
        )));
    }
    let m = hi - lo + 1;

    let mut u = vec![0.0; (steps + 1) * n];
    let terminal: Vec<f64> = sg.nodes().iter().map(|&s| deal.payoff.value(s)).collect();
    u[steps * n..].copy_from_slice(&terminal);

    let mut op_old = Operator::new(n);
    let mut op_new = Operator::new(n);
    let mut scratch = vec![0.0; n];
    let mut explicit = vec![0.0; n];
    let mut iterate = vec![0.0; n];
    let (mut a, mut b, mut c, mut rhs, mut work) =
        (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);

    for step in (0..steps).rev() {
        let t_old = tg.node(step + 1);
        let t_new = tg.node(step);
        let theta = if steps - 1 - step < config.rannacher_steps {
            1.0
        } else {
            config.theta
        };
        let (done, rest) = u.split_at_mut((step + 1) * n);
        let u_old = &rest[..n];
        let u_new = &mut done[step * n..];

        problem.assemble(t_old, &sg, u_old, &mut scratch, &mut op_old);
        for j in lo..=hi {
            let lu = if j == 0 {
                op_old.diag[0] * u_old[0] + op_old.source[0]
            } else {
                op_old.apply(u_old, j)
            };
            explicit[j] = u_old[j] + (1.0 - theta) * dt * lu;
        }

        iterate.copy_from_slice(u_old);
        let mut converged = false;
        let mut change = f64::INFINITY;
        for _ in 0..config.picard_max_iter {
            problem.assemble(t_new, &sg, &iterate, &mut scratch, &mut op_new);
            for (k, j) in (lo..=hi).enumerate() {
                a[k] = -theta * dt * op_new.sub[j];
                b[k] = 1.0 - theta * dt * op_new.diag[j];
                c[k] = -theta * dt * op_new.sup[j];
                rhs[k] = explicit[j] + theta * dt * op_new.source[j];
            }
            if degenerate_lower {
                // s = 0: advection and diffusion vanish
                a[0] = 0.0;
                c[0] = 0.0;
            } else {
                // u_0 = 2 u_1 − u_2
                b[0] += 2.0 * a[0];
                c[0] -= a[0];
                a[0] = 0.0;
            }
            // u_{n−1} = 2 u_{n−2} − u_{n−3}
            b[m - 1] += 2.0 * c[m - 1];
            a[m - 1] -= c[m - 1];
            c[m - 1] = 0.0;

            if !tridiag::solve_in_place(&a, &b, &c, &mut rhs, &mut work) {
                return Err(Error::NonFinite { step });
            }
            let mut next = iterate.clone();
            next[lo..=hi].copy_from_slice(&rhs);
            if !degenerate_lower {
                next[0] = 2.0 * next[1] - next[2];
            }
            next[n - 1] = 2.0 * next[n - 2] - next[n - 3];
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { step });
            }
            change = next
                .iter()
                .zip(&iterate)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            iterate = next;
            if change < config.picard_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::PicardNonConvergence { step, residual: change });
        }
        u_new[..n].copy_from_slice(&iterate);
    }

    Ok(ValueSurface::from_rows(*grids, problem.vol, u))
}

/// Solves the repo-drift PDE with driver B′. The risk-free rate never enters.
pub fn solve_independent(
    deal: &DealSpec,
    vol: &VolModel,
    grids: &PdeGrids,
    config: &PdeConfig,
) -> Result<ValueSurface> {
    // r is not used on this path; the context only needs a placeholder
    let market = MarketSpec {
        s0: 1.0,
        r: Schedule::zero(),
        vol: vol.clone(),
    };
    let problem = Problem {
        ctx: DriverContext::new(deal, &market),
        vol,
        drift: Drift::Repo,
        forced: None,
    };
    march(&problem, grids, config)
}

/// Solves the risk-free-drift PDE with driver B and the given hedge map.
pub fn solve_dependent(
    deal: &DealSpec,
    market: &MarketSpec,
    grids: &PdeGrids,
    config: &PdeConfig,
    hedge: &HedgeMode,
) -> Result<ValueSurface> {
    let problem = Problem {
        ctx: DriverContext::new(deal, market).with_hedge(hedge.clone()),
        vol: &market.vol,
        drift: Drift::RiskFree(&market.r, hedge),
        forced: None,
    };
    march(&problem, grids, config)
}

/// Repo-drift solve with every sign selection pinned to one branch, which
/// makes the equation linear.
pub fn solve_linear(
    deal: &DealSpec,
    vol: &VolModel,
    grids: &PdeGrids,
    config: &PdeConfig,
    branch: Branch,
) -> Result<ValueSurface> {
    let market = MarketSpec {
        s0: 1.0,
        r: Schedule::zero(),
        vol: vol.clone(),
    };
    let problem = Problem {
        ctx: DriverContext::new(deal, &market),
        vol,
        drift: Drift::Repo,
        forced: Some(branch),
    };
    march(&problem, grids, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{bs_call_delta, bs_closed_form};
    use crate::deal::{CreditSpec, Payoff, RateLeg};
    use approx::assert_relative_eq;

    fn market(r: f64) -> MarketSpec {
        MarketSpec::new(100.0, Schedule::constant(r), VolModel::Proportional { level: 0.2 }).unwrap()
    }

    fn linear_call() -> DealSpec {
        DealSpec::new(Payoff::Call { strike: 100.0 }, 1.0).with_legs(
            RateLeg::symmetric(0.02),
            RateLeg::symmetric(0.02),
            RateLeg::symmetric(0.02),
        )
    }

    fn grids(n: usize) -> PdeGrids {
        PdeGrids::for_market(&market(0.02), 1.0, n, n).unwrap()
    }

    #[test]
    fn grid_passes_through_spot() {
        let g = SpatialGrid::for_market(&market(0.0), 1.0, 400).unwrap();
        let j = ((100.0 - g.s_min()) / g.ds()).round() as usize;
        assert!((g.node(j) - 100.0).abs() < 1e-9);
        assert!((g.s_max() - 100.0 * 1f64.exp()).abs() / g.s_max() < 0.01);
        assert!(SpatialGrid::new(0.0, 1.0, 2).is_err());
        assert!(SpatialGrid::new(2.0, 1.0, 10).is_err());
    }

    #[test]
    fn zero_deal_gives_zero_surface() {
        let deal = DealSpec::new(Payoff::Constant { value: 0.0 }, 1.0)
            .with_alpha(0.3)
            .with_credit(CreditSpec::flat(0.02, 0.01, 0.6, 0.4))
            .with_legs(RateLeg::flat(0.01, 0.0), RateLeg::flat(0.03, 0.01), RateLeg::symmetric(0.02));
        let surf = solve_independent(&deal, &VolModel::default(), &grids(60), &PdeConfig::default()).unwrap();
        assert!(surf.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn terminal_row_is_payoff() {
        let deal = linear_call();
        let g = grids(80);
        let surf = solve_independent(&deal, &VolModel::default(), &g, &PdeConfig::default()).unwrap();
        let last = surf.row(g.time.n_steps());
        for (j, s) in g.space.nodes().into_iter().enumerate() {
            assert_eq!(last[j], (s - 100.0f64).max(0.0));
        }
    }

    #[test]
    fn linear_limit_matches_black_scholes() {
        let surf = solve_independent(&linear_call(), &VolModel::default(), &grids(200), &PdeConfig::default())
            .unwrap();
        let v = surf.value_at(0.0, 100.0).unwrap();
        assert_relative_eq!(v, bs_closed_form(100.0, 100.0, 1.0, 0.02, 0.2), max_relative = 2e-3);
    }

    #[test]
    fn fully_collateralized_discounts_at_collateral_rate() {
        // α = 1: B′ = −c v, so u = e^{−cT} E^h[(S_T − K)^+] = e^{(h−c)T} BS(h)
        let (h, c) = (0.03, 0.01);
        let deal = DealSpec::new(Payoff::Call { strike: 100.0 }, 1.0)
            .with_alpha(1.0)
            .with_credit(CreditSpec::flat(0.05, 0.02, 0.6, 0.6))
            .with_legs(RateLeg::symmetric(c), RateLeg::flat(0.08, 0.0), RateLeg::symmetric(h));
        let surf = solve_independent(&deal, &VolModel::default(), &grids(300), &PdeConfig::default()).unwrap();
        let oracle = ((h - c) * 1.0f64).exp() * bs_closed_form(100.0, 100.0, 1.0, h, 0.2);
        assert_relative_eq!(surf.value_at(0.0, 100.0).unwrap(), oracle, max_relative = 1e-3);
    }

    #[test]
    fn extract_delta_on_linear_surface() {
        let deal = DealSpec::new(Payoff::Forward { strike: 0.0 }, 1.0);
        let g = grids(60);
        let surf = solve_independent(&deal, &VolModel::default(), &g, &PdeConfig::default()).unwrap();
        // zero rates: u(t, s) = s exactly
        for s in [10.0, 57.3, 150.0] {
            assert_relative_eq!(surf.extract_delta(0.3, s).unwrap(), 1.0, epsilon = 1e-9);
            assert_relative_eq!(surf.value_at(0.3, s).unwrap(), s, epsilon = 1e-9);
        }
        assert!(matches!(surf.extract_delta(0.3, 1e6), Err(Error::OutOfHull { .. })));
        assert!(matches!(surf.extract_delta(1.5, 100.0), Err(Error::OutOfHull { .. })));
    }

    #[test]
    fn delta_limits_near_maturity() {
        let g = grids(300);
        let surf = solve_independent(&linear_call(), &VolModel::default(), &g, &PdeConfig::default()).unwrap();
        let t = 1.0 - 5.0 * g.time.dt();
        let tau = 1.0 - t;
        let itm = surf.extract_delta(t, 160.0).unwrap();
        let otm = surf.extract_delta(t, 50.0).unwrap();
        assert_relative_eq!(itm, bs_call_delta(160.0, 100.0, tau, 0.02, 0.2), epsilon = 1e-6);
        assert!((itm - 1.0).abs() < 1e-6);
        assert!(otm.abs() < 1e-6);
    }

    #[test]
    fn repeated_solves_are_bit_identical() {
        let deal = linear_call().with_alpha(0.5).with_legs(
            RateLeg::flat(0.02, 0.005),
            RateLeg::flat(0.04, 0.01),
            RateLeg::symmetric(0.025),
        );
        let a = solve_independent(&deal, &VolModel::default(), &grids(80), &PdeConfig::default()).unwrap();
        let b = solve_independent(&deal, &VolModel::default(), &grids(80), &PdeConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dependent_without_hedge_and_r_equal_h_matches_independent() {
        let deal = linear_call().with_alpha(0.5).with_legs(
            RateLeg::flat(0.02, 0.005),
            RateLeg::flat(0.04, 0.01),
            RateLeg::symmetric(0.02),
        );
        let g = grids(100);
        let ind = solve_independent(&deal, &VolModel::default(), &g, &PdeConfig::default()).unwrap();
        let dep = solve_dependent(&deal, &market(0.02), &g, &PdeConfig::default(), &HedgeMode::None).unwrap();
        for (x, y) in ind.initial_row().iter().zip(dep.initial_row()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn picard_failure_is_reported() {
        let deal = linear_call().with_legs(
            RateLeg::flat(0.02, 0.005),
            RateLeg::flat(0.04, 0.01),
            RateLeg::symmetric(0.02),
        );
        let cfg = PdeConfig {
            picard_tol: 1e-300,
            picard_max_iter: 1,
            ..PdeConfig::default()
        };
        let err = solve_independent(&deal, &VolModel::default(), &grids(40), &cfg).unwrap_err();
        assert!(matches!(err, Error::PicardNonConvergence { step: 39, .. }), "{err}");
    }

    #[test]
    fn maturity_mismatch_is_rejected() {
        let deal = DealSpec::new(Payoff::Call { strike: 100.0 }, 2.0);
        assert!(solve_independent(&deal, &VolModel::default(), &grids(40), &PdeConfig::default()).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let g = PdeGrids {
            time: TimeGrid::new(0.0, 1.0, 4).unwrap(),
            space: SpatialGrid::new(0.0, 200.0, 5).unwrap(),
        };
        let surf = solve_independent(&linear_call(), &VolModel::default(), &g, &PdeConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (up, zp) = (dir.path().join("u.csv"), dir.path().join("z.csv"));
        surf.write_csv(&up, &zp).unwrap();
        let text = std::fs::read_to_string(&up).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0], "t,0.00000000000e0,5.00000000000e1,1.00000000000e2,1.50000000000e2,2.00000000000e2");
        assert!(lines[5].starts_with("1.00000000000e0,0.00000000000e0,"));
        assert!(std::fs::read_to_string(&zp).unwrap().lines().count() == 6);
    }
}
