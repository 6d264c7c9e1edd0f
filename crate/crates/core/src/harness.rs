//! Scenario orchestration: invariance sweeps, solver comparisons, ledger
//! studies and reproducible artifact output.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analytic::BlackScholesCall;
use crate::config::{Mode, ScenarioConfig, SurfaceChoice};
use crate::deal::{Dividend, Payoff};
use crate::error::{Error, Result};
use crate::ledger::{refinement_paths, refinement_study, replay, RefinementReport};
use crate::market::{MarketSpec, VolModel};
use crate::mc::{representation_check, solve_backward, DriftChoice, McEstimate, RepresentationReport, ESTIMATE_CSV_HEADER};
use crate::pde::{fmt12, solve_dependent, solve_independent, PdeGrids, ValueFunction, ValueSurface};
use crate::schedule::Schedule;

/// Index range of the interior 80 % of `n` nodes.
pub fn interior(n: usize) -> std::ops::Range<usize> {
    let skip = n / 10;
    skip..n - skip
}

/// Max |a − b| and max |a| over the interior nodes.
fn deviation(a: &[f64], b: &[f64]) -> (f64, f64) {
    let range = interior(a.len());
    let abs = range.clone().map(|j| (a[j] - b[j]).abs()).fold(0.0, f64::max);
    let scale = range.map(|j| a[j].abs()).fold(0.0, f64::max);
    (abs, scale)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepMember {
    pub r: f64,
    pub u0: f64,
    pub max_abs_dev: f64,
    pub max_rel_dev: f64,
    /// Deviation of the same member on the 2× refined grid.
    pub refined_max_abs_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub hedge: String,
    pub independent_u0: f64,
    pub members: Vec<SweepMember>,
    pub max_abs_dev: f64,
    /// `max_abs_dev` divided by the largest |u(0, ·)| of the independent solve
    /// over the same interior nodes.
    pub max_rel_dev: f64,
    /// Largest interior change of the independent solution under 2× refinement.
    pub grid_error_estimate: f64,
    pub refined_max_abs_dev: f64,
    pub pass: bool,
}

/// Solves the r-independent PDE once and the r-dependent one for every r in
/// the sweep; PASS iff the deviation stays within three grid errors.
pub fn run_invariance_sweep(cfg: &ScenarioConfig) -> Result<InvarianceReport> {
    cfg.validate(Mode::Invariance)?;
    let deal = &cfg.deal;
    let scheme = cfg.pde.scheme();
    let grids = cfg.pde.grids(&cfg.market, deal.maturity)?;
    let fine = grids.refined(2)?;
    let hedge = cfg.sweep.hedge.mode();

    let (base, refined) = rayon::join(
        || solve_independent(deal, &cfg.market.vol, &grids, &scheme),
        || solve_independent(deal, &cfg.market.vol, &fine, &scheme),
    );
    let (base, refined) = (base?, refined?);
    let coarse_on_fine: Vec<f64> = refined.initial_row().iter().step_by(2).copied().collect();
    let grid_error_estimate = deviation(base.initial_row(), &coarse_on_fine).0;
    let (_, scale) = deviation(base.initial_row(), base.initial_row());

    let members: Vec<SweepMember> = cfg
        .sweep
        .r
        .par_iter()
        .map(|&r| {
            let market = MarketSpec {
                r: Schedule::constant(r),
                ..cfg.market.clone()
            };
            let member = || -> Result<SweepMember> {
                let dep = solve_dependent(deal, &market, &grids, &scheme, &hedge)?;
                let dep_fine = solve_dependent(deal, &market, &fine, &scheme, &hedge)?;
                let (abs, _) = deviation(base.initial_row(), dep.initial_row());
                let (refined_abs, _) = deviation(refined.initial_row(), dep_fine.initial_row());
                Ok(SweepMember {
                    r,
                    u0: dep.value_at(0.0, cfg.market.s0)?,
                    max_abs_dev: abs,
                    max_rel_dev: if scale > 0.0 { abs / scale } else { 0.0 },
                    refined_max_abs_dev: refined_abs,
                })
            };
            member().map_err(|e| Error::SweepMember { r, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;

    let max_abs_dev = members.iter().map(|m| m.max_abs_dev).fold(0.0, f64::max);
    let refined_max_abs_dev = members.iter().map(|m| m.refined_max_abs_dev).fold(0.0, f64::max);
    Ok(InvarianceReport {
        hedge: hedge.label().to_string(),
        independent_u0: base.value_at(0.0, cfg.market.s0)?,
        max_abs_dev,
        max_rel_dev: if scale > 0.0 { max_abs_dev / scale } else { 0.0 },
        grid_error_estimate,
        refined_max_abs_dev,
        pass: max_abs_dev <= 3.0 * grid_error_estimate,
        members,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub pde_value: f64,
    pub mc_value: f64,
    pub std_error: f64,
    pub z_score: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub estimates: Vec<(String, McEstimate)>,
    pub pass: bool,
}

/// |a − b| / se, with 0 / 0 = 0.
pub fn z_score(diff: f64, std_error: f64) -> f64 {
    if std_error > 0.0 {
        diff.abs() / std_error
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// PDE value at s0 against both backward Monte Carlo formulations.
pub fn compare_pde_mc(cfg: &ScenarioConfig) -> Result<ComparisonTable> {
    cfg.validate(Mode::McCompare)?;
    let deal = &cfg.deal;
    let grids = cfg.pde.grids(&cfg.market, deal.maturity)?;
    let surface = solve_independent(deal, &cfg.market.vol, &grids, &cfg.pde.scheme())?;
    let pde_value = surface.value_at(0.0, cfg.market.s0)?;
    let mut rows = Vec::new();
    let mut estimates = Vec::new();
    for (label, drift) in [
        ("repo_drift", DriftChoice::Repo),
        ("risk_free_drift_delta_hedge", DriftChoice::RiskFree),
    ] {
        let est = solve_backward(deal, &cfg.market, drift, &cfg.mc)?;
        let z = z_score(est.value - pde_value, est.std_error);
        rows.push(ComparisonRow {
            label: label.to_string(),
            pde_value,
            mc_value: est.value,
            std_error: est.std_error,
            z_score: z,
            pass: z <= 3.0,
        });
        estimates.push((label.to_string(), est));
    }
    Ok(ComparisonTable {
        pass: rows.iter().all(|r| r.pass),
        rows,
        estimates,
    })
}

/// Files written by one run plus the overall verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub mode: Mode,
    pub pass: bool,
    pub files: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: &'a str,
    mode: &'a str,
    config_sha256: String,
    seed: u64,
    refine: usize,
    pass: bool,
    files: &'a [String],
    warnings: &'a [String],
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(p, body)?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let body = serde_json::to_string_pretty(value).expect("reports serialize to JSON");
        self.text(name, &(body + "\n"))
    }
}

fn analytic_surface(cfg: &ScenarioConfig) -> Result<BlackScholesCall> {
    let deal = &cfg.deal;
    let Payoff::Call { strike } = deal.payoff else {
        return Err(Error::InvalidConfig("ledger.surface = \"analytic\" needs a call payoff".into()));
    };
    let VolModel::Proportional { level: sigma } = cfg.market.vol else {
        return Err(Error::InvalidConfig(
            "ledger.surface = \"analytic\" needs constant proportional volatility".into(),
        ));
    };
    let rate = deal.leg_h.plus.value_at(0.0);
    let flat = |s: &Schedule| s.pairs().all(|(_, v)| v == rate);
    let linear = [&deal.leg_c, &deal.leg_f, &deal.leg_h]
        .iter()
        .all(|leg| flat(&leg.plus) && flat(&leg.minus))
        && deal.credit.total_intensity().pairs().all(|(_, v)| v == 0.0)
        && matches!(deal.dividend, Dividend::None);
    if !linear {
        return Err(Error::InvalidConfig(
            "ledger.surface = \"analytic\" needs equal flat c, f, h and no credit or dividend".into(),
        ));
    }
    Ok(BlackScholesCall {
        strike,
        maturity: deal.maturity,
        rate,
        sigma,
    })
}

fn solve_value(cfg: &ScenarioConfig) -> Result<(PdeGrids, ValueSurface)> {
    let grids = cfg.pde.grids(&cfg.market, cfg.deal.maturity)?;
    let surface = solve_independent(&cfg.deal, &cfg.market.vol, &grids, &cfg.pde.scheme())?;
    Ok((grids, surface))
}

/// Runs `mode` and writes its artifacts, the resolved config and
/// `manifest.json` into `out_dir`.
pub fn run_scenario(cfg: &ScenarioConfig, mode: Mode, out_dir: &Path, refine: usize) -> Result<RunOutcome> {
    let warnings = cfg.validate(mode)?;
    let mut out = Output::create(out_dir)?;
    let resolved = cfg.to_toml_string()?;
    out.text("config.toml", &resolved)?;

    let pass = match mode {
        Mode::Value => {
            let (_, surface) = solve_value(cfg)?;
            surface.write_csv(&out.path("surface_u.csv"), &out.path("surface_z.csv"))?;
            let u0 = surface.value_at(0.0, cfg.market.s0)?;
            out.text("value.csv", &format!("s0,value\n{},{}\n", fmt12(cfg.market.s0), fmt12(u0)))?;
            true
        }
        Mode::Invariance => {
            let report = run_invariance_sweep(cfg)?;
            let mut csv = String::from("r,u0,max_abs_dev,max_rel_dev,refined_max_abs_dev\n");
            for m in &report.members {
                csv += &format!(
                    "{},{},{},{},{}\n",
                    fmt12(m.r),
                    fmt12(m.u0),
                    fmt12(m.max_abs_dev),
                    fmt12(m.max_rel_dev),
                    fmt12(m.refined_max_abs_dev)
                );
            }
            out.text("invariance.csv", &csv)?;
            out.json("invariance.json", &report)?;
            report.pass
        }
        Mode::McCompare => {
            let table = compare_pde_mc(cfg)?;
            let mut csv = String::from("label,pde_value,mc_value,std_error,z_score\n");
            for r in &table.rows {
                csv += &format!(
                    "{},{},{},{},{}\n",
                    r.label,
                    fmt12(r.pde_value),
                    fmt12(r.mc_value),
                    fmt12(r.std_error),
                    fmt12(r.z_score)
                );
            }
            out.text("comparison.csv", &csv)?;
            let mut est = format!("{ESTIMATE_CSV_HEADER}\n");
            for (label, e) in &table.estimates {
                est += &e.csv_row(label);
                est.push('\n');
            }
            out.text("estimates.csv", &est)?;
            out.json("comparison.json", &table)?;
            table.pass
        }
        Mode::Ledger => {
            let report = run_ledger(cfg, &mut out)?;
            let notional = cfg.ledger.notional.unwrap_or(cfg.market.s0);
            ledger_pass(&report, notional)
        }
        Mode::Representation => {
            let (_, surface) = solve_value(cfg)?;
            let report: RepresentationReport = representation_check(&surface, &cfg.deal, &cfg.market, &cfg.mc)?;
            out.text(
                "representation.csv",
                &format!(
                    "estimate,std_error,pde_value,residual,z_score,n_paths,n_steps,seed\n{},{},{},{},{},{},{},{}\n",
                    fmt12(report.estimate),
                    fmt12(report.std_error),
                    fmt12(report.pde_value),
                    fmt12(report.residual),
                    fmt12(report.z_score),
                    report.n_paths,
                    report.n_steps,
                    report.seed
                ),
            )?;
            out.json("representation.json", &report)?;
            report.passes(3.0)
        }
    };

    let files = out.files.clone();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        mode: mode.label(),
        config_sha256: sha256_hex(resolved.as_bytes()),
        seed: cfg.mc.seed,
        refine,
        pass,
        files: &files,
        warnings: &warnings,
    };
    out.json("manifest.json", &manifest)?;
    Ok(RunOutcome {
        mode,
        pass,
        files: out.files,
        warnings,
    })
}

/// Ledger verdict: mean residual converges at order ≥ 1 and stays below
/// `1e-4 × notional` on the finest level.
pub fn ledger_pass(report: &RefinementReport, notional: f64) -> bool {
    let finest = report
        .levels
        .iter()
        .min_by(|a, b| a.dt.total_cmp(&b.dt))
        .map(|l| l.mean_residual.abs())
        .unwrap_or(f64::INFINITY);
    let order = report.order_mean.order;
    let order_ok = order >= 1.0 || (order.is_nan() && finest == 0.0);
    order_ok && finest < 1e-4 * notional
}

fn run_ledger(cfg: &ScenarioConfig, out: &mut Output) -> Result<RefinementReport> {
    let deal = &cfg.deal;
    let analytic;
    let pde_surface;
    let surface: &dyn ValueFunction = match cfg.ledger.surface {
        SurfaceChoice::Analytic => {
            analytic = analytic_surface(cfg)?;
            &analytic
        }
        SurfaceChoice::Pde => {
            pde_surface = solve_value(cfg)?.1;
            &pde_surface
        }
    };
    let steps = &cfg.ledger.steps;
    let report = refinement_study(surface, deal, &cfg.market, steps, cfg.ledger.n_paths, cfg.mc.seed)?;

    let mut csv = String::from(
        "dt,n_steps,mean_residual,mean_accumulated_residual,mean_realized_residual,mean_abs_realized_residual,max_abs_residual\n",
    );
    for l in &report.levels {
        csv += &format!(
            "{},{},{},{},{},{},{}\n",
            fmt12(l.dt),
            l.n_steps,
            fmt12(l.mean_residual),
            fmt12(l.mean_accumulated_residual),
            fmt12(l.mean_realized_residual),
            fmt12(l.mean_abs_realized_residual),
            fmt12(l.max_abs_residual)
        );
    }
    out.text("ledger_levels.csv", &csv)?;

    // full ledger of the first path on the finest level
    let paths = refinement_paths(&cfg.market, deal.maturity, steps, 1, cfg.mc.seed)?;
    let finest = paths.grid().n_steps();
    let first = replay(paths.path(0), surface, deal, &cfg.market, deal.maturity / finest as f64)?;
    first.write_csv(&out.path("ledger_path0.csv"))?;
    out.json("ledger.json", &report)?;
    Ok(report)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Machine-readable failure record.
#[derive(Debug, Serialize)]
pub struct FailureRecord {
    pub mode: Option<String>,
    pub kind: &'static str,
    pub exit_code: i32,
    pub error: String,
}

impl FailureRecord {
    pub fn new(mode: Option<Mode>, err: &Error) -> Self {
        let config = err.is_config_error();
        Self {
            mode: mode.map(|m| m.label().to_string()),
            kind: if config { "config" } else { "numerical" },
            exit_code: if config { 2 } else { 1 },
            error: err.to_string(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let body = serde_json::to_string_pretty(self).expect("failure record serializes");
        fs::write(dir.join("failure.json"), body + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_drops_ten_percent_each_side() {
        assert_eq!(interior(400), 40..360);
        assert_eq!(interior(401), 40..361);
        assert_eq!(interior(5), 0..5);
    }

    #[test]
    fn z_score_conventions() {
        assert_eq!(z_score(0.0, 0.0), 0.0);
        assert_eq!(z_score(1.0, 0.0), f64::INFINITY);
        assert_eq!(z_score(-0.75, 0.25), 3.0);
    }

    #[test]
    fn sha256_matches_known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn failure_record_kind_follows_error() {
        let rec = FailureRecord::new(Some(Mode::Value), &Error::InvalidConfig("x".into()));
        assert_eq!((rec.kind, rec.exit_code), ("config", 2));
        let rec = FailureRecord::new(None, &Error::NonFinite { step: 3 });
        assert_eq!((rec.kind, rec.exit_code), ("numerical", 1));
    }
}
