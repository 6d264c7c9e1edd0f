//! Scenario configuration, read from TOML.
//!
//! ```toml
//! [market]
//! s0 = 100.0
//! r = 0.02                      # or [[0.0, 0.01], [1.0, 0.03]]
//! vol = { kind = "proportional", level = 0.2 }
//!
//! [deal]
//! maturity = 1.0
//! alpha = 0.5
//! payoff = { kind = "straddle", strike = 100.0 }
//! credit = { lambda_i = 0.01, lambda_c = 0.01, lgd_i = 0.6, lgd_c = 0.6 }
//! leg_c = { plus = 0.02, minus = 0.005 }
//! leg_f = { plus = 0.04, minus = 0.01 }
//! leg_h = { plus = 0.025, minus = 0.025 }
//!
//! [pde]      # n_space, n_time, s_min, s_max, theta, picard_tol, ...
//! [mc]       # n_paths, n_steps, seed, basis_degree, picard_inner, antithetic
//! [sweep]    # r = [...], hedge = "delta" | "none"
//! [ledger]   # n_paths, steps = [...], surface = "pde" | "analytic", notional
//! [output]   # dir
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::deal::{self, DealSpec};
use crate::driver::HedgeMode;
use crate::error::{Error, Result};
use crate::market::{MarketSpec, TimeGrid};
use crate::mc::McConfig;
use crate::pde::{PdeConfig, PdeGrids, SpatialGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Value,
    Invariance,
    McCompare,
    Ledger,
    Representation,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Value => "value",
            Mode::Invariance => "invariance",
            Mode::McCompare => "mc_compare",
            Mode::Ledger => "ledger",
            Mode::Representation => "representation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeSection {
    pub n_space: usize,
    pub n_time: usize,
    pub s_min: f64,
    /// Defaults to `s0 · exp(5 σ √T)`.
    pub s_max: Option<f64>,
    pub theta: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub rannacher_steps: usize,
}

impl Default for PdeSection {
    fn default() -> Self {
        let scheme = PdeConfig::default();
        Self {
            n_space: 400,
            n_time: 400,
            s_min: 0.0,
            s_max: None,
            theta: scheme.theta,
            picard_tol: scheme.picard_tol,
            picard_max_iter: scheme.picard_max_iter,
            rannacher_steps: scheme.rannacher_steps,
        }
    }
}

impl PdeSection {
    pub fn scheme(&self) -> PdeConfig {
        PdeConfig {
            theta: self.theta,
            picard_tol: self.picard_tol,
            picard_max_iter: self.picard_max_iter,
            rannacher_steps: self.rannacher_steps,
        }
    }

    pub fn grids(&self, market: &MarketSpec, maturity: f64) -> Result<PdeGrids> {
        let default = SpatialGrid::for_market(market, maturity, self.n_space)?;
        let space = if self.s_min == 0.0 && self.s_max.is_none() {
            default
        } else {
            SpatialGrid::through(
                self.s_min,
                self.s_max.unwrap_or(default.s_max()),
                self.n_space,
                market.s0,
            )?
        };
        Ok(PdeGrids {
            time: TimeGrid::new(0.0, maturity, self.n_time)?,
            space,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HedgeChoice {
    #[default]
    Delta,
    None,
}

impl HedgeChoice {
    pub fn mode(&self) -> HedgeMode {
        match self {
            HedgeChoice::Delta => HedgeMode::Delta,
            HedgeChoice::None => HedgeMode::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub r: Vec<f64>,
    pub hedge: HedgeChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceChoice {
    #[default]
    Pde,
    /// Closed-form call surface; needs a call payoff with flat, equal rates.
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerSection {
    pub n_paths: usize,
    pub steps: Vec<usize>,
    pub surface: SurfaceChoice,
    /// Scale for the residual threshold; defaults to s0.
    pub notional: Option<f64>,
}

impl Default for LedgerSection {
    fn default() -> Self {
        Self {
            n_paths: 100,
            steps: vec![50, 100, 200, 400],
            surface: SurfaceChoice::Pde,
            notional: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub market: MarketSpec,
    pub deal: DealSpec,
    #[serde(default)]
    pub pde: PdeSection,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub ledger: LedgerSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ScenarioConfig {
    /// Parses TOML; errors carry the line, column and offending key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string().trim_end().to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("cannot serialize config: {e}")))
    }

    /// Scales both grid dimensions by `factor`.
    pub fn refine(&mut self, factor: usize) -> Result<()> {
        if factor == 0 {
            return Err(Error::InvalidConfig("--refine must be >= 1".into()));
        }
        self.pde.n_space = (self.pde.n_space - 1) * factor + 1;
        self.pde.n_time *= factor;
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.mc.seed = seed;
    }

    /// Full check for `mode`. Warnings from the deal validation are returned.
    pub fn validate(&self, mode: Mode) -> Result<Vec<String>> {
        self.market.validate()?;
        self.deal.check()?;
        self.pde.scheme().validate()?;
        if self.pde.n_space < 3 || self.pde.n_time < 1 {
            return Err(Error::InvalidConfig("pde.n_space >= 3 and pde.n_time >= 1 required".into()));
        }
        let report = deal::validate(&self.deal, &self.market);
        if !report.is_valid() {
            return Err(Error::InvalidConfig(format!(
                "deal validation failed: {}",
                report.failures.join("; ")
            )));
        }
        match mode {
            Mode::McCompare | Mode::Representation => self.mc.validate()?,
            Mode::Invariance if self.sweep.r.is_empty() => {
                return Err(Error::InvalidConfig("sweep.r must be non-empty in invariance mode".into()))
            }
            Mode::Ledger => {
                if self.ledger.n_paths == 0 || self.ledger.steps.len() < 3 {
                    return Err(Error::InvalidConfig(
                        "ledger needs n_paths >= 1 and at least three step counts".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(report.warnings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deal::Payoff;

    const STRADDLE: &str = r#"
[market]
s0 = 100.0
r = 0.02
vol = { kind = "proportional", level = 0.2 }

[deal]
maturity = 1.0
alpha = 0.5
payoff = { kind = "straddle", strike = 100.0 }
credit = { lambda_i = 0.01, lambda_c = 0.01, lgd_i = 0.6, lgd_c = 0.6 }
leg_c = { plus = 0.02, minus = 0.005 }
leg_f = { plus = 0.04, minus = 0.01 }
leg_h = { plus = 0.025, minus = 0.025 }

[sweep]
r = [-0.01, 0.0, 0.02, 0.05, 0.10]
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ScenarioConfig::from_toml_str(STRADDLE).unwrap();
        assert_eq!(cfg.deal.payoff, Payoff::Straddle { strike: 100.0 });
        assert_eq!(cfg.deal.leg_f.minus.value_at(0.3), 0.01);
        assert_eq!(cfg.pde.n_space, 400);
        assert_eq!(cfg.sweep.hedge, HedgeChoice::Delta);
        assert!(cfg.validate(Mode::Invariance).is_ok());
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn empty_config_is_rejected() {
        let err = ScenarioConfig::from_toml_str("").unwrap_err();
        assert!(err.is_config_error());
        assert!(err.to_string().contains("market"), "{err}");
    }

    #[test]
    fn errors_name_line_and_field() {
        let bad = STRADDLE.replace("level = 0.2", "levle = 0.2");
        let msg = ScenarioConfig::from_toml_str(&bad).unwrap_err().to_string();
        assert!(msg.contains("line 5"), "{msg}");
        let bad = STRADDLE.replace("[sweep]", "[sweep]\nhedgee = \"none\"");
        let msg = ScenarioConfig::from_toml_str(&bad).unwrap_err().to_string();
        assert!(msg.contains("hedgee"), "{msg}");
    }

    #[test]
    fn invariance_needs_sweep() {
        let cfg = ScenarioConfig::from_toml_str(&STRADDLE.replace("r = [-0.01, 0.0, 0.02, 0.05, 0.10]", "")).unwrap();
        assert!(cfg.validate(Mode::Invariance).is_err());
        assert!(cfg.validate(Mode::Value).is_ok());
    }

    #[test]
    fn invalid_deal_is_a_config_error() {
        let cfg = ScenarioConfig::from_toml_str(&STRADDLE.replace("alpha = 0.5", "alpha = 1.5")).unwrap();
        let err = cfg.validate(Mode::Value).unwrap_err();
        assert!(err.is_config_error());
    }

    #[test]
    fn refine_scales_grids() {
        let mut cfg = ScenarioConfig::from_toml_str(STRADDLE).unwrap();
        cfg.refine(2).unwrap();
        assert_eq!((cfg.pde.n_space, cfg.pde.n_time), (799, 800));
        assert!(cfg.refine(0).is_err());
    }
}
