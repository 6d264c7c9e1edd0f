//! Risky-asset dynamics, volatility, time grids and discount factors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::PathNormals;
use crate::schedule::Schedule;

/// Uniform grid on `[t0, maturity]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    maturity: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, maturity: f64, n_steps: usize) -> Result<Self> {
        if !(maturity > t0) || !t0.is_finite() || !maturity.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "time grid needs T > t0 (got t0 = {t0}, T = {maturity})"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidGrid("time grid needs n_steps >= 1".into()));
        }
        Ok(Self {
            t0,
            maturity,
            n_steps,
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        (self.maturity - self.t0) / self.n_steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.maturity
        } else {
            self.t0 + i as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|i| self.node(i))
    }
}

/// Volatility function σ(t, s), in absolute (currency / √year) units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VolModel {
    /// σ(t, s) = sigma.
    Constant { sigma: f64 },
    /// σ(t, s) = level · s.
    Proportional { level: f64 },
    /// σ(t, s) = level(t) · s with piecewise-constant levels.
    TermStructure { levels: Schedule },
}

impl VolModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            VolModel::Constant { sigma } => sigma.is_finite() && *sigma >= 0.0,
            VolModel::Proportional { level } => level.is_finite() && *level >= 0.0,
            VolModel::TermStructure { levels } => levels.pairs().all(|(_, v)| v >= 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "volatility levels must be finite and non-negative".into(),
            ))
        }
    }

    pub fn sigma_eval(&self, t: f64, s: f64) -> Result<f64> {
        if s < 0.0 || s.is_nan() {
            return Err(Error::Domain(format!("volatility queried at s = {s} < 0")));
        }
        Ok(self.sigma_at(t, s))
    }

    #[inline]
    pub(crate) fn sigma_at(&self, t: f64, s: f64) -> f64 {
        match self {
            VolModel::Constant { sigma } => *sigma,
            VolModel::Proportional { level } => level * s,
            VolModel::TermStructure { levels } => levels.value_at(t) * s,
        }
    }

    /// Proportional level at `t`, if the model is lognormal.
    pub fn proportional_level(&self, t: f64) -> Option<f64> {
        match self {
            VolModel::Constant { .. } => None,
            VolModel::Proportional { level } => Some(*level),
            VolModel::TermStructure { levels } => Some(levels.value_at(t)),
        }
    }

    /// Integrated proportional variance over `[t1, t2]`.
    pub(crate) fn proportional_variance(&self, t1: f64, t2: f64) -> Option<f64> {
        match self {
            VolModel::Constant { .. } => None,
            VolModel::Proportional { level } => Some(level * level * (t2 - t1)),
            VolModel::TermStructure { levels } => Some(
                levels
                    .zip_with(levels, |a, _| a * a)
                    .expect("squared levels are finite")
                    .integral_unchecked(t1, t2),
            ),
        }
    }

    pub fn is_proportional(&self) -> bool {
        !matches!(self, VolModel::Constant { .. })
    }

    /// Smallest σ(t, s) / s over `[t1, t2]` for lognormal models.
    pub fn min_proportional_level(&self, t1: f64, t2: f64) -> Option<f64> {
        match self {
            VolModel::Constant { .. } => None,
            VolModel::Proportional { level } => Some(*level),
            VolModel::TermStructure { levels } => Some(levels.min_on(t1, t2)),
        }
    }
}

impl Default for VolModel {
    fn default() -> Self {
        VolModel::Proportional { level: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub s0: f64,
    pub r: Schedule,
    #[serde(default)]
    pub vol: VolModel,
}

impl MarketSpec {
    pub fn new(s0: f64, r: Schedule, vol: VolModel) -> Result<Self> {
        let m = Self { s0, r, vol };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0) || !self.s0.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "market.s0 must be positive (got {})",
                self.s0
            )));
        }
        self.vol.validate()
    }
}

/// D(t1, t2, x) = exp(-∫ x du), exact for piecewise-constant schedules.
pub fn discount(t1: f64, t2: f64, rate: &Schedule) -> Result<f64> {
    Ok((-rate.integral(t1, t2)?).exp())
}

/// Simulated asset paths plus the Brownian increments that drove them.
#[derive(Debug, Clone)]
pub struct Paths {
    grid: TimeGrid,
    n_paths: usize,
    values: Vec<f64>,
    increments: Vec<f64>,
}

impl Paths {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let w = self.grid.n_steps + 1;
        &self.values[p * w..(p + 1) * w]
    }

    #[inline]
    pub fn value(&self, p: usize, i: usize) -> f64 {
        self.values[p * (self.grid.n_steps + 1) + i]
    }

    /// Brownian increment over step `i` (from node i to node i + 1).
    #[inline]
    pub fn increment(&self, p: usize, i: usize) -> f64 {
        self.increments[p * self.grid.n_steps + i]
    }

    pub fn terminal(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_paths).map(move |p| self.value(p, self.grid.n_steps))
    }
}

/// Options for [`simulate_with`].
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub n_paths: usize,
    pub seed: u64,
    /// Odd paths reuse the negated normals of the preceding even path.
    pub antithetic: bool,
}

/// Simulates S under a deterministic drift schedule.
///
/// Lognormal models step exactly in log space using integrated drift and
/// variance, so constant proportional volatility gives exact GBM; absolute
/// volatility uses Euler steps in level space.
pub fn simulate_paths(
    market: &MarketSpec,
    drift: &Schedule,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Paths {
    simulate_with(
        market,
        grid,
        SimOptions {
            n_paths,
            seed,
            antithetic: false,
        },
        |_, t1, t2, _| drift.integral_unchecked(t1, t2),
    )
}

/// Like [`simulate_paths`] but the integrated drift over each step may depend
/// on the state: `drift_integral(step, t1, t2, s)`.
pub fn simulate_with<F>(market: &MarketSpec, grid: &TimeGrid, opts: SimOptions, drift_integral: F) -> Paths
where
    F: Fn(usize, f64, f64, f64) -> f64 + Sync,
{
    let n = grid.n_steps;
    let w = n + 1;
    let mut values = vec![0.0; opts.n_paths * w];
    let mut increments = vec![0.0; opts.n_paths * n];
    let sqrt_dt: Vec<f64> = (0..n).map(|i| (grid.node(i + 1) - grid.node(i)).sqrt()).collect();
    let step_var: Vec<Option<f64>> = (0..n)
        .map(|i| market.vol.proportional_variance(grid.node(i), grid.node(i + 1)))
        .collect();

    values
        .par_chunks_mut(w)
        .zip(increments.par_chunks_mut(n.max(1)))
        .enumerate()
        .for_each(|(p, (row, dws))| {
            let (stream, sign) = if opts.antithetic {
                ((p / 2) as u64, if p % 2 == 0 { 1.0 } else { -1.0 })
            } else {
                (p as u64, 1.0)
            };
            let mut normals = PathNormals::new(opts.seed, stream);
            let mut s = market.s0;
            row[0] = s;
            for i in 0..n {
                let t1 = grid.node(i);
                let t2 = grid.node(i + 1);
                let dw = sign * normals.next_normal() * sqrt_dt[i];
                dws[i] = dw;
                let mu = drift_integral(i, t1, t2, s);
                s = match step_var[i] {
                    Some(var) => {
                        let vol = if t2 > t1 { (var / (t2 - t1)).sqrt() } else { 0.0 };
                        s * (mu - 0.5 * var + vol * dw).exp()
                    }
                    None => s * mu.exp() + market.vol.sigma_at(t1, s) * dw,
                };
                row[i + 1] = s;
            }
        });

    Paths {
        grid: *grid,
        n_paths: opts.n_paths,
        values,
        increments,
    }
}
