//! Contract description: payoff, dividends, collateral fraction, credit data
//! and the three two-sided rate legs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{MarketSpec, VolModel};
use crate::schedule::Schedule;

/// Terminal cash flow Φ(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Payoff {
    Call { strike: f64 },
    Put { strike: f64 },
    Forward { strike: f64 },
    Straddle { strike: f64 },
    Constant { value: f64 },
    /// Piecewise-linear through `(s, value)` knots, extended linearly past the ends.
    Tabulated { points: Vec<(f64, f64)> },
}

impl Payoff {
    pub fn validate(&self) -> Result<()> {
        match self {
            Payoff::Call { strike }
            | Payoff::Put { strike }
            | Payoff::Forward { strike }
            | Payoff::Straddle { strike } => {
                if !strike.is_finite() {
                    return Err(Error::InvalidConfig("payoff strike must be finite".into()));
                }
            }
            Payoff::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::InvalidConfig("payoff value must be finite".into()));
                }
            }
            Payoff::Tabulated { points } => {
                if points.len() < 2 {
                    return Err(Error::InvalidConfig(
                        "tabulated payoff needs at least two points".into(),
                    ));
                }
                if points.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::InvalidConfig(
                        "tabulated payoff abscissae must be strictly increasing".into(),
                    ));
                }
                if points.iter().any(|(s, v)| !s.is_finite() || !v.is_finite()) {
                    return Err(Error::InvalidConfig("tabulated payoff must be finite".into()));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, s: f64) -> Result<f64> {
        if s < 0.0 || s.is_nan() {
            return Err(Error::Domain(format!("payoff evaluated at s = {s} < 0")));
        }
        Ok(self.value(s))
    }

    #[inline]
    pub(crate) fn value(&self, s: f64) -> f64 {
        match self {
            Payoff::Call { strike } => (s - strike).max(0.0),
            Payoff::Put { strike } => (strike - s).max(0.0),
            Payoff::Forward { strike } => s - strike,
            Payoff::Straddle { strike } => (s - strike).abs(),
            Payoff::Constant { value } => *value,
            Payoff::Tabulated { points } => {
                let k = points
                    .partition_point(|&(x, _)| x <= s)
                    .clamp(1, points.len() - 1);
                let (x0, y0) = points[k - 1];
                let (x1, y1) = points[k];
                y0 + (y1 - y0) * (s - x0) / (x1 - x0)
            }
        }
    }

    /// Prices where the payoff is not differentiable.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            Payoff::Call { strike } | Payoff::Put { strike } | Payoff::Straddle { strike } => vec![*strike],
            Payoff::Forward { .. } | Payoff::Constant { .. } => Vec::new(),
            Payoff::Tabulated { points } => points.iter().map(|p| p.0).collect(),
        }
    }

    /// Global Lipschitz constant of the closed-form payoff.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Payoff::Call { .. } | Payoff::Put { .. } | Payoff::Forward { .. } | Payoff::Straddle { .. } => {
                1.0
            }
            Payoff::Constant { .. } => 0.0,
            Payoff::Tabulated { points } => points
                .windows(2)
                .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
                .fold(0.0, f64::max),
        }
    }
}

/// Contract dividend rate π(t, s), currency per year.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dividend {
    #[default]
    None,
    /// π = q · s.
    Proportional { q: f64 },
    /// π = amount.
    Constant { amount: f64 },
}

impl Dividend {
    #[inline]
    pub(crate) fn value(&self, _t: f64, s: f64) -> f64 {
        match self {
            Dividend::None => 0.0,
            Dividend::Proportional { q } => q * s,
            Dividend::Constant { amount } => *amount,
        }
    }
}

/// Two-sided rate: `plus` applies when the governing indicator is > 0,
/// `minus` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateLeg {
    pub plus: Schedule,
    pub minus: Schedule,
}

impl RateLeg {
    pub fn new(plus: Schedule, minus: Schedule) -> Self {
        Self { plus, minus }
    }

    pub fn flat(plus: f64, minus: f64) -> Self {
        Self::new(Schedule::constant(plus), Schedule::constant(minus))
    }

    pub fn symmetric(rate: f64) -> Self {
        Self::flat(rate, rate)
    }

    pub fn is_symmetric(&self) -> bool {
        self.plus == self.minus
    }

    pub fn sup_abs_on(&self, t1: f64, t2: f64) -> f64 {
        self.plus.sup_abs_on(t1, t2).max(self.minus.sup_abs_on(t1, t2))
    }
}

impl Default for RateLeg {
    fn default() -> Self {
        Self::symmetric(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditSpec {
    pub lambda_i: Schedule,
    pub lambda_c: Schedule,
    pub lgd_i: f64,
    pub lgd_c: f64,
}

impl CreditSpec {
    pub fn flat(lambda_i: f64, lambda_c: f64, lgd_i: f64, lgd_c: f64) -> Self {
        Self {
            lambda_i: Schedule::constant(lambda_i),
            lambda_c: Schedule::constant(lambda_c),
            lgd_i,
            lgd_c,
        }
    }

    /// Total first-to-default intensity λ = λ_I + λ_C.
    pub fn total_intensity(&self) -> Schedule {
        self.lambda_i.plus(&self.lambda_c)
    }
}

impl Default for CreditSpec {
    fn default() -> Self {
        Self::flat(0.0, 0.0, 0.0, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DealSpec {
    pub payoff: Payoff,
    #[serde(default)]
    pub dividend: Dividend,
    pub alpha: Schedule,
    #[serde(default)]
    pub credit: CreditSpec,
    #[serde(default)]
    pub leg_c: RateLeg,
    #[serde(default)]
    pub leg_f: RateLeg,
    #[serde(default)]
    pub leg_h: RateLeg,
    #[serde(default = "default_rehypothecation")]
    pub rehypothecation: bool,
    pub maturity: f64,
}

fn default_rehypothecation() -> bool {
    true
}

impl DealSpec {
    /// Uncollateralized, default-free deal with all rates at zero.
    pub fn new(payoff: Payoff, maturity: f64) -> Self {
        Self {
            payoff,
            dividend: Dividend::None,
            alpha: Schedule::zero(),
            credit: CreditSpec::default(),
            leg_c: RateLeg::default(),
            leg_f: RateLeg::default(),
            leg_h: RateLeg::default(),
            rehypothecation: true,
            maturity,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Schedule::constant(alpha);
        self
    }

    pub fn with_dividend(mut self, dividend: Dividend) -> Self {
        self.dividend = dividend;
        self
    }

    pub fn with_credit(mut self, credit: CreditSpec) -> Self {
        self.credit = credit;
        self
    }

    pub fn with_legs(mut self, leg_c: RateLeg, leg_f: RateLeg, leg_h: RateLeg) -> Self {
        self.leg_c = leg_c;
        self.leg_f = leg_f;
        self.leg_h = leg_h;
        self
    }

    pub fn with_rehypothecation(mut self, on: bool) -> Self {
        self.rehypothecation = on;
        self
    }

    pub fn payoff_eval(&self, s: f64) -> Result<f64> {
        self.payoff.eval(s)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.maturity).contains(&t) {
            return Err(Error::Domain(format!(
                "t = {t} outside [0, {}]",
                self.maturity
            )));
        }
        Ok(())
    }

    pub fn alpha_eval(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.alpha.value_at(t))
    }

    pub fn dividend_eval(&self, t: f64, s: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.dividend.value(t, s))
    }

    /// Structural checks that cannot be deferred to [`validate`].
    pub fn check(&self) -> Result<()> {
        if !(self.maturity > 0.0) || !self.maturity.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "deal.maturity must be positive (got {})",
                self.maturity
            )));
        }
        self.payoff.validate()
    }
}

/// Outcome of [`validate`]; failures are listed rather than thrown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    /// Sup of |rate| over every rate and intensity schedule on [0, T].
    pub rate_bound: f64,
    /// Sampled Lipschitz estimate of Φ on the price lattice.
    pub payoff_lipschitz: f64,
    /// Sampled Lipschitz estimate of π(t, ·) over a few times.
    pub dividend_lipschitz: f64,
    pub h_symmetric: bool,
    pub sigma_bounded_below: bool,
    /// Classical (C^{1,2}) regime: symmetric repo leg and σ bounded below.
    pub classical_regime: bool,
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Sampled Lipschitz estimate of `f` on `[lo, hi]` with spacing `step`.
pub fn sampled_lipschitz(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).round() as usize;
    let mut best: f64 = 0.0;
    let mut prev = f(lo);
    for i in 1..=n {
        let x = lo + i as f64 * step;
        let y = f(x);
        best = best.max((y - prev).abs() / step);
        prev = y;
    }
    best
}

/// Checks the hypotheses the solvers rely on. Never mutates its inputs.
pub fn validate(deal: &DealSpec, market: &MarketSpec) -> ValidationReport {
    let t_end = deal.maturity;
    let mut failures = Vec::new();
    let mut warnings = Vec::new();

    if let Err(e) = deal.check() {
        failures.push(e.to_string());
    }

    let legs = [("c", &deal.leg_c), ("f", &deal.leg_f), ("h", &deal.leg_h)];
    let mut rate_bound = market.r.sup_abs_on(0.0, t_end);
    for (_, leg) in &legs {
        rate_bound = rate_bound.max(leg.sup_abs_on(0.0, t_end));
    }
    rate_bound = rate_bound
        .max(deal.credit.lambda_i.sup_abs_on(0.0, t_end))
        .max(deal.credit.lambda_c.sup_abs_on(0.0, t_end));

    let mut schedules: Vec<(&str, &Schedule)> = vec![
        ("r", &market.r),
        ("alpha", &deal.alpha),
        ("lambda_i", &deal.credit.lambda_i),
        ("lambda_c", &deal.credit.lambda_c),
    ];
    for (name, leg) in &legs {
        schedules.push((name, &leg.plus));
        schedules.push((name, &leg.minus));
    }
    for (name, sched) in schedules {
        if sched.first_start() > 0.0 {
            failures.push(format!(
                "schedule {name} starts at {} and does not cover t = 0",
                sched.first_start()
            ));
        }
    }

    let (a_lo, a_hi) = (deal.alpha.min_on(0.0, t_end), deal.alpha.max_on(0.0, t_end));
    if a_lo < 0.0 || a_hi > 1.0 {
        failures.push(format!("alpha must lie in [0, 1] (found range [{a_lo}, {a_hi}])"));
    }
    for (name, lam) in [("lambda_i", &deal.credit.lambda_i), ("lambda_c", &deal.credit.lambda_c)] {
        if lam.min_on(0.0, t_end) < 0.0 {
            failures.push(format!("intensity {name} must be non-negative"));
        }
    }
    for (name, lgd) in [("lgd_i", deal.credit.lgd_i), ("lgd_c", deal.credit.lgd_c)] {
        if !(0.0..=1.0).contains(&lgd) {
            failures.push(format!("{name} = {lgd} outside [0, 1]"));
        }
    }

    let hi = 4.0 * market.s0;
    let step = market.s0 / 100.0;
    let payoff_lipschitz = sampled_lipschitz(|s| deal.payoff.value(s), 0.0, hi, step);
    let dividend_lipschitz = [0.0, 0.5 * t_end, t_end]
        .iter()
        .map(|&t| sampled_lipschitz(|s| deal.dividend.value(t, s), 0.0, hi, step))
        .fold(0.0, f64::max);

    let h_symmetric = deal.leg_h.is_symmetric();
    if !h_symmetric {
        warnings.push(
            "repo leg h+ != h-: only a viscosity solution is guaranteed, classical regime does not apply"
                .into(),
        );
    }
    let sigma_bounded_below = match &market.vol {
        VolModel::Constant { sigma } => *sigma > 0.0,
        _ => false,
    };
    if market.vol.is_proportional() {
        warnings.push(
            "proportional volatility vanishes at s = 0; the lower bound on sigma holds only away from zero"
                .into(),
        );
    }

    ValidationReport {
        rate_bound,
        payoff_lipschitz,
        dividend_lipschitz,
        h_symmetric,
        sigma_bounded_below,
        classical_regime: h_symmetric && sigma_bounded_below,
        failures,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn market() -> MarketSpec {
        MarketSpec::new(100.0, Schedule::constant(0.02), VolModel::Constant { sigma: 20.0 }).unwrap()
    }

    #[test]
    fn payoff_examples() {
        let call = Payoff::Call { strike: 100.0 };
        assert_eq!(call.eval(100.0).unwrap(), 0.0);
        assert_eq!(call.eval(130.0).unwrap(), 30.0);
        assert_eq!(Payoff::Straddle { strike: 100.0 }.eval(80.0).unwrap(), 20.0);
        assert_eq!(Payoff::Put { strike: 100.0 }.eval(80.0).unwrap(), 20.0);
        assert_eq!(Payoff::Forward { strike: 100.0 }.eval(80.0).unwrap(), -20.0);
        assert_eq!(Payoff::Constant { value: 3.0 }.eval(1.0).unwrap(), 3.0);
        assert!(matches!(call.eval(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn tabulated_interpolates_and_extrapolates() {
        let p = Payoff::Tabulated {
            points: vec![(0.0, 0.0), (10.0, 5.0), (20.0, 5.0)],
        };
        p.validate().unwrap();
        assert_eq!(p.eval(5.0).unwrap(), 2.5);
        assert_eq!(p.eval(15.0).unwrap(), 5.0);
        assert_eq!(p.eval(30.0).unwrap(), 5.0);
        assert_eq!(p.lipschitz(), 0.5);
        let bad = Payoff::Tabulated {
            points: vec![(1.0, 0.0), (1.0, 1.0)],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unknown_payoff_kind_is_rejected() {
        let err = serde_json::from_str::<Payoff>(r#"{"kind": "digital", "strike": 1.0}"#);
        assert!(err.is_err());
    }

    #[test]
    fn alpha_and_dividend() {
        let deal = DealSpec::new(Payoff::Call { strike: 100.0 }, 1.0)
            .with_alpha(0.8)
            .with_dividend(Dividend::Proportional { q: 0.01 });
        assert_eq!(deal.alpha_eval(0.5).unwrap(), 0.8);
        assert_eq!(deal.dividend_eval(0.5, 200.0).unwrap(), 2.0);
        assert!(matches!(deal.alpha_eval(1.5), Err(Error::Domain(_))));
        assert!(matches!(deal.dividend_eval(-0.1, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn rate_bound_is_max_abs() {
        let deal = DealSpec::new(Payoff::Call { strike: 100.0 }, 1.0).with_legs(
            RateLeg::flat(0.05, -0.01),
            RateLeg::flat(0.03, 0.0),
            RateLeg::symmetric(0.02),
        );
        let report = validate(&deal, &market());
        assert_eq!(report.rate_bound, 0.05);
        assert!(report.is_valid());
        assert!(report.classical_regime);
    }

    #[test]
    fn asymmetric_h_is_not_classical() {
        let deal = DealSpec::new(Payoff::Call { strike: 100.0 }, 1.0).with_legs(
            RateLeg::default(),
            RateLeg::default(),
            RateLeg::flat(0.02, 0.01),
        );
        let report = validate(&deal, &market());
        assert!(!report.classical_regime);
        assert!(!report.h_symmetric);
        assert!(report.warnings.iter().any(|w| w.contains("viscosity")));
    }

    #[test]
    fn call_lipschitz_is_one() {
        let deal = DealSpec::new(Payoff::Call { strike: 100.0 }, 1.0);
        let report = validate(&deal, &market());
        assert_eq!(report.payoff_lipschitz, 1.0);
    }

    #[test]
    fn failures_are_listed_not_thrown() {
        let mut deal = DealSpec::new(Payoff::Call { strike: 100.0 }, 1.0)
            .with_alpha(1.2)
            .with_credit(CreditSpec::flat(-0.01, 0.0, 1.5, 0.5));
        deal.leg_f.plus = Schedule::new(vec![(0.5, 0.0)]).unwrap();
        let before = deal.clone();
        let report = validate(&deal, &market());
        assert_eq!(report.failures.len(), 4, "{:?}", report.failures);
        assert_eq!(deal, before);
        assert_eq!(report, validate(&deal, &market()));
    }
}
