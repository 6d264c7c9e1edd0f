//! Nonlinear driver mathematics: sign-dependent rate selection, the closeout
//! flow θ̃, the drivers B (risk-free drift, explicit hedge financing) and B′
//! (repo drift), the delta-hedge map and the replication identity.

use std::fmt;
use std::sync::Arc;

use crate::deal::{DealSpec, RateLeg};
use crate::error::{Error, Result};
use crate::market::{MarketSpec, VolModel};
use crate::schedule::Schedule;

/// Plus leg when `indicator > 0`, minus leg otherwise (ties go to minus).
#[inline]
pub fn select_rate(leg: &RateLeg, t: f64, indicator: f64) -> f64 {
    if indicator > 0.0 {
        leg.plus.value_at(t)
    } else {
        leg.minus.value_at(t)
    }
}

/// C = α_t · v.
#[inline]
pub fn collateral(deal: &DealSpec, t: f64, v: f64) -> f64 {
    deal.alpha.value_at(t) * v
}

/// Treasury account F from the replication identity V = F + H + C.
/// Without rehypothecation the collateral does not enter the identity.
#[inline]
pub fn funding_account(deal: &DealSpec, v: f64, hedge: f64, collateral: f64) -> f64 {
    if deal.rehypothecation {
        v - hedge - collateral
    } else {
        v - hedge
    }
}

/// Delta hedge H = s · z / σ.
pub fn delta_hedge(s: f64, z: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("delta hedge needs sigma > 0 (got {sigma})")));
    }
    Ok(s * z / sigma)
}

/// Custom hedge H(t, s, v, z) with declared Lipschitz constants in v and z.
#[derive(Clone)]
pub struct CustomHedge {
    pub func: Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>,
    pub lipschitz_v: f64,
    pub lipschitz_z: f64,
}

impl fmt::Debug for CustomHedge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomHedge")
            .field("lipschitz_v", &self.lipschitz_v)
            .field("lipschitz_z", &self.lipschitz_z)
            .finish_non_exhaustive()
    }
}

/// How the risky-asset position H is tied to the solution.
#[derive(Debug, Clone, Default)]
pub enum HedgeMode {
    /// H = s z / σ(t, s).
    #[default]
    Delta,
    /// H ≡ 0.
    None,
    Custom(CustomHedge),
}

impl HedgeMode {
    /// Hedge position. For the delta hedge `s_delta = s · ∂_s u` is used
    /// directly so the degenerate point σ = 0 needs no division.
    #[inline]
    pub fn position(&self, t: f64, s: f64, v: f64, z: f64, s_delta: f64) -> f64 {
        match self {
            HedgeMode::Delta => s_delta,
            HedgeMode::None => 0.0,
            HedgeMode::Custom(h) => (h.func)(t, s, v, z),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            HedgeMode::Delta => "delta",
            HedgeMode::None => "none",
            HedgeMode::Custom(_) => "custom",
        }
    }
}

/// Rates in force at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSlice {
    pub alpha: f64,
    pub lambda_i: f64,
    pub lambda_c: f64,
    pub lambda: f64,
    pub lgd_i: f64,
    pub lgd_c: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    pub f_plus: f64,
    pub f_minus: f64,
    pub h_plus: f64,
    pub h_minus: f64,
    pub r: f64,
}

#[inline]
fn pick(indicator: f64, plus: f64, minus: f64) -> f64 {
    if indicator > 0.0 {
        plus
    } else {
        minus
    }
}

impl RateSlice {
    #[inline]
    pub fn c(&self, v: f64) -> f64 {
        pick(self.alpha * v, self.c_plus, self.c_minus)
    }

    #[inline]
    pub fn f(&self, v: f64) -> f64 {
        pick((1.0 - self.alpha) * v, self.f_plus, self.f_minus)
    }

    #[inline]
    pub fn h(&self, hedge_indicator: f64) -> f64 {
        pick(hedge_indicator, self.h_plus, self.h_minus)
    }

    /// θ̃ with replacement closeout ε = v and collateral C = α v.
    #[inline]
    pub fn theta_tilde(&self, v: f64) -> f64 {
        let exposure = (1.0 - self.alpha) * v;
        self.lambda * v - self.credit_lgd_c() * exposure.max(0.0)
            + self.credit_lgd_i() * exposure.min(0.0)
    }

    #[inline]
    fn credit_lgd_c(&self) -> f64 {
        self.lgd_c * self.lambda_c
    }

    #[inline]
    fn credit_lgd_i(&self) -> f64 {
        self.lgd_i * self.lambda_i
    }

    /// κ such that B′(t, s, v) = π + κ v, with every sign selection taken at
    /// `v_ref`. Exact when `v_ref` and `v` share their sign.
    #[inline]
    pub fn bprime_coefficient(&self, v_ref: f64) -> f64 {
        let one_minus_alpha = 1.0 - self.alpha;
        let closeout = if one_minus_alpha * v_ref > 0.0 {
            -self.credit_lgd_c() * one_minus_alpha
        } else {
            self.credit_lgd_i() * one_minus_alpha
        };
        // λ v from θ̃ cancels the −λ v discounting term
        closeout - self.f(v_ref) * one_minus_alpha - self.c(v_ref) * self.alpha
    }

    /// B′ without the dividend.
    #[inline]
    pub fn bprime_linear(&self, v: f64) -> f64 {
        self.theta_tilde(v) - self.lambda * v + self.f(v) * v * (self.alpha - 1.0)
            - self.c(v) * self.alpha * v
    }
}

/// Precomputed schedules for driver evaluation.
#[derive(Debug, Clone)]
pub struct DriverContext<'a> {
    pub deal: &'a DealSpec,
    r: Schedule,
    lambda: Schedule,
    vol: VolModel,
    hedge: HedgeMode,
}

/// (c, f, h) after sign selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveRates {
    pub c: f64,
    pub f: f64,
    pub h: f64,
}

impl<'a> DriverContext<'a> {
    pub fn new(deal: &'a DealSpec, market: &MarketSpec) -> Self {
        Self {
            deal,
            r: market.r.clone(),
            lambda: deal.credit.total_intensity(),
            vol: market.vol.clone(),
            hedge: HedgeMode::Delta,
        }
    }

    pub fn with_hedge(mut self, hedge: HedgeMode) -> Self {
        self.hedge = hedge;
        self
    }

    pub fn with_r(mut self, r: Schedule) -> Self {
        self.r = r;
        self
    }

    pub fn hedge(&self) -> &HedgeMode {
        &self.hedge
    }

    pub fn vol(&self) -> &VolModel {
        &self.vol
    }

    pub fn r(&self) -> &Schedule {
        &self.r
    }

    pub fn lambda(&self) -> &Schedule {
        &self.lambda
    }

    pub fn slice(&self, t: f64) -> RateSlice {
        let d = self.deal;
        RateSlice {
            alpha: d.alpha.value_at(t),
            lambda_i: d.credit.lambda_i.value_at(t),
            lambda_c: d.credit.lambda_c.value_at(t),
            lambda: self.lambda.value_at(t),
            lgd_i: d.credit.lgd_i,
            lgd_c: d.credit.lgd_c,
            c_plus: d.leg_c.plus.value_at(t),
            c_minus: d.leg_c.minus.value_at(t),
            f_plus: d.leg_f.plus.value_at(t),
            f_minus: d.leg_f.minus.value_at(t),
            h_plus: d.leg_h.plus.value_at(t),
            h_minus: d.leg_h.minus.value_at(t),
            r: self.r.value_at(t),
        }
    }

    pub fn closeout_theta_tilde(&self, t: f64, v: f64) -> f64 {
        self.slice(t).theta_tilde(v)
    }

    /// c switches on C = α v, f on V − C = (1 − α) v, h on the sign of z.
    pub fn effective_rates(&self, t: f64, v: f64, z: f64) -> EffectiveRates {
        let d = self.deal;
        let alpha = d.alpha.value_at(t);
        EffectiveRates {
            c: select_rate(&d.leg_c, t, alpha * v),
            f: select_rate(&d.leg_f, t, (1.0 - alpha) * v),
            h: select_rate(&d.leg_h, t, z),
        }
    }

    /// Risk-free-drift driver
    /// B = π + θ̃ + (f(α − 1) − λ − cα) v − (r − h) H.
    pub fn driver_b(&self, t: f64, s: f64, v: f64, z: f64, hedge: f64) -> f64 {
        let sl = self.slice(t);
        let h = if matches!(self.hedge, HedgeMode::Custom(_)) {
            sl.h(hedge)
        } else {
            sl.h(z)
        };
        self.deal.dividend.value(t, s) + sl.bprime_linear(v) - (sl.r - h) * hedge
    }

    /// Repo-drift driver B′ = π + θ̃ − λ v + f v (α − 1) − c α v.
    pub fn driver_bprime(&self, t: f64, s: f64, v: f64) -> f64 {
        self.deal.dividend.value(t, s) + self.slice(t).bprime_linear(v)
    }

    /// Hedge position under the context's hedge mode.
    pub fn hedge_position(&self, t: f64, s: f64, v: f64, z: f64) -> Result<f64> {
        match &self.hedge {
            HedgeMode::Delta => delta_hedge(s, z, self.vol.sigma_eval(t, s)?),
            HedgeMode::None => Ok(0.0),
            HedgeMode::Custom(h) => Ok((h.func)(t, s, v, z)),
        }
    }

    /// B evaluated with the context's hedge map.
    pub fn driver_b_hedged(&self, t: f64, s: f64, v: f64, z: f64) -> Result<f64> {
        let hedge = self.hedge_position(t, s, v, z)?;
        Ok(self.driver_b(t, s, v, z, hedge))
    }

    /// Conservative Lipschitz constant of B in (v, z):
    ///
    /// K = sup|λ| + sup|f|(1 + sup α) + sup|c| sup α
    ///     + sup(λ_C lgd_C + λ_I lgd_I)(1 + sup α) + sup|r − h| · L_H
    ///
    /// where L_H is the Lipschitz constant of the hedge map in (v, z).
    pub fn lipschitz_bound(&self) -> Result<f64> {
        let d = self.deal;
        let t_end = d.maturity;
        let sup_alpha = d.alpha.sup_abs_on(0.0, t_end);
        let sup_lambda = self.lambda.sup_abs_on(0.0, t_end);
        let sup_f = d.leg_f.sup_abs_on(0.0, t_end);
        let sup_c = d.leg_c.sup_abs_on(0.0, t_end);
        let credit = d
            .credit
            .lambda_c
            .zip_with(&d.credit.lambda_i, |lc, li| {
                (lc * d.credit.lgd_c).abs() + (li * d.credit.lgd_i).abs()
            })?
            .sup_abs_on(0.0, t_end);
        let spread_plus = self.r.zip_with(&d.leg_h.plus, |r, h| r - h)?.sup_abs_on(0.0, t_end);
        let spread_minus = self.r.zip_with(&d.leg_h.minus, |r, h| r - h)?.sup_abs_on(0.0, t_end);
        let spread = spread_plus.max(spread_minus);

        let hedge_lip = if spread == 0.0 {
            0.0
        } else {
            match &self.hedge {
                HedgeMode::None => 0.0,
                HedgeMode::Custom(h) => h.lipschitz_v + h.lipschitz_z,
                HedgeMode::Delta => match self.vol.min_proportional_level(0.0, t_end) {
                    Some(level) if level > 0.0 => 1.0 / level,
                    _ => {
                        return Err(Error::Unbounded(
                            "delta hedge s z / sigma is not uniformly Lipschitz in z unless sigma is \
                             proportional with a positive level"
                                .into(),
                        ))
                    }
                },
            }
        };

        let k = sup_lambda
            + sup_f * (1.0 + sup_alpha)
            + sup_c * sup_alpha
            + credit * (1.0 + sup_alpha)
            + spread * hedge_lip;
        if !k.is_finite() {
            return Err(Error::Unbounded("rate schedules are not bounded".into()));
        }
        Ok(k)
    }
}
