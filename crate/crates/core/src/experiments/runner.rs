//! Scenario execution and CSV/JSON output.
//!
//! Every sweep point yields one CSV row. Rates come in two units: `*_norm`
//! columns are per receive antenna (the normalisation of the large-system
//! formulas), the others are in bits/s/Hz. For `K` users the header is
//!
//! ```text
//! x,rho_db,p,
//! rate1,rate1_norm,mc_rate1,mc_rate1_norm,mc_se1,mc_se1_norm, ... (per user)
//! sum_rate,sum_rate_norm,mc_sum_rate,mc_sum_rate_norm,mc_sum_se,mc_sum_se_norm,
//! sud_sum_rate,sud_sum_rate_norm,capacity,capacity_norm,sre,
//! lambda1, ... (per user)
//! converged,rounds,kkt_residual
//! ```
//!
//! `x` is the sweep value (empty without a sweep) and `p` the probability
//! that user 1 is decoded second (empty unless two users share a SIC
//! receiver). `rate*` are large-system utilities at the equilibrium and
//! `mc_*` their Monte-Carlo counterparts for the same powers. `sud_sum_rate`
//! is the equilibrium sum-rate of the same game with single-user decoding.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ScenarioConfig, ScenarioPoint, Scheme};
use crate::channel::sample_channel;
use crate::equilibrium::{
    best_response_ne, sre, sum_capacity, CapacityResult, EquilibriumResult, NeConfig, UserDiagnostics,
};
use crate::game::{sum_rate_exact, utility_sic, CoordinationDistribution, Estimate, GameContext};
use crate::large_system::{solve_block, NormalizedRate};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub x: Option<f64>,
    pub rho_db: f64,
    pub p: Option<f64>,
    pub rates: Vec<NormalizedRate>,
    /// Monte-Carlo utilities in bits/s/Hz.
    pub mc_rates: Vec<Estimate>,
    pub sum_rate: NormalizedRate,
    pub mc_sum_rate: Estimate,
    pub sud_sum_rate: NormalizedRate,
    pub capacity: NormalizedRate,
    pub sre: f64,
    pub lambda: Vec<f64>,
    pub converged: bool,
    pub rounds: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointDiagnostics {
    pub slot: usize,
    pub user: usize,
    pub block_size: usize,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumDiagnostics {
    pub pa_mode: String,
    pub rounds: usize,
    pub converged: bool,
    pub last_change: f64,
    pub kkt_residual: f64,
    pub users: Vec<UserDiagnostics>,
    pub powers: Vec<Vec<Vec<f64>>>,
}

impl From<&EquilibriumResult> for EquilibriumDiagnostics {
    fn from(ne: &EquilibriumResult) -> Self {
        Self {
            pa_mode: ne.pa_mode.clone(),
            rounds: ne.rounds,
            converged: ne.converged,
            last_change: ne.last_change,
            kkt_residual: ne.kkt_residual,
            users: ne.users.clone(),
            powers: ne.powers.powers.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityDiagnostics {
    pub rounds: usize,
    pub converged: bool,
    pub powers: Vec<Vec<f64>>,
}

impl From<&CapacityResult> for CapacityDiagnostics {
    fn from(c: &CapacityResult) -> Self {
        Self {
            rounds: c.rounds,
            converged: c.converged,
            powers: c.powers.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowDiagnostics {
    pub x: Option<f64>,
    pub equilibrium: EquilibriumDiagnostics,
    pub sud_equilibrium: Option<EquilibriumDiagnostics>,
    pub capacity: CapacityDiagnostics,
    /// Fixed points of every user's signal block at the equilibrium.
    pub fixed_points: Vec<FixedPointDiagnostics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub config: ScenarioConfig,
    pub rows: Vec<ResultRow>,
    pub diagnostics: Vec<RowDiagnostics>,
}

/// Format an optional number; missing values are empty cells.
pub(crate) fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Write `<name>.csv` and `<name>.diag.json` into `dir`.
pub(crate) fn write_outputs(dir: &Path, name: &str, csv: &str, diag: &str) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{name}.csv"));
    let diag_path = dir.join(format!("{name}.diag.json"));
    std::fs::write(&csv_path, csv)?;
    std::fs::write(&diag_path, diag)?;
    Ok((csv_path, diag_path))
}

impl ScenarioReport {
    pub fn all_converged(&self) -> bool {
        self.diagnostics.iter().all(|d| {
            d.equilibrium.converged
                && d.capacity.converged
                && d.sud_equilibrium.as_ref().is_none_or(|s| s.converged)
        })
    }

    pub fn csv_header(users: usize) -> Vec<String> {
        let mut h: Vec<String> = vec!["x".into(), "rho_db".into(), "p".into()];
        for k in 1..=users {
            for stem in ["rate", "mc_rate", "mc_se"] {
                h.push(format!("{stem}{k}"));
                h.push(format!("{stem}{k}_norm"));
            }
        }
        for stem in ["sum_rate", "mc_sum_rate", "mc_sum_se", "sud_sum_rate", "capacity"] {
            h.push(stem.into());
            h.push(format!("{stem}_norm"));
        }
        h.push("sre".into());
        h.extend((1..=users).map(|k| format!("lambda{k}")));
        h.extend(["converged", "rounds", "kkt_residual"].map(String::from));
        h
    }

    pub fn csv(&self) -> String {
        let n_r = self.config.n_r as f64;
        let mut out = Self::csv_header(self.config.users).join(",");
        out.push('\n');
        for row in &self.rows {
            let mut cells = vec![cell(row.x), format!("{}", row.rho_db), cell(row.p)];
            let pair = |cells: &mut Vec<String>, raw: f64| {
                cells.push(format!("{raw}"));
                cells.push(format!("{}", raw / n_r));
            };
            for (r, mc) in row.rates.iter().zip(&row.mc_rates) {
                pair(&mut cells, r.total(self.config.n_r));
                pair(&mut cells, mc.mean);
                pair(&mut cells, mc.std_err);
            }
            pair(&mut cells, row.sum_rate.total(self.config.n_r));
            pair(&mut cells, row.mc_sum_rate.mean);
            pair(&mut cells, row.mc_sum_rate.std_err);
            pair(&mut cells, row.sud_sum_rate.total(self.config.n_r));
            pair(&mut cells, row.capacity.total(self.config.n_r));
            cells.push(format!("{}", row.sre));
            cells.extend(row.lambda.iter().map(|l| format!("{l}")));
            cells.push(format!("{}", row.converged));
            cells.push(format!("{}", row.rounds));
            cells.push(format!("{}", row.kkt_residual));
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn diagnostics_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Diag<'a> {
            config: &'a ScenarioConfig,
            rows: &'a [RowDiagnostics],
        }
        Ok(serde_json::to_string_pretty(&Diag {
            config: &self.config,
            rows: &self.diagnostics,
        })?)
    }

    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        write_outputs(dir, &self.config.name, &self.csv(), &self.diagnostics_json()?)
    }
}

fn fixed_point_diagnostics(point: &ScenarioPoint, ne: &EquilibriumResult, cfg: &NeConfig) -> Result<Vec<FixedPointDiagnostics>> {
    let mut out = Vec::new();
    for s in 0..point.coord.num_slots() {
        let slot = ne.powers.slot(s);
        for k in 0..point.coord.num_users() {
            let mut block = point.coord.interferers(s, k);
            block.push(k);
            block.sort_unstable();
            let sol = solve_block(&point.profile, point.rho, &block, &slot, &cfg.solver)?;
            out.push(FixedPointDiagnostics {
                slot: s,
                user: k,
                block_size: block.len(),
                iterations: sol.iterations,
                residual: sol.residual,
            });
        }
    }
    Ok(out)
}

fn run_point(
    cfg: &ScenarioConfig,
    point: &ScenarioPoint,
    ne_cfg: &NeConfig,
    seed: u64,
) -> Result<(ResultRow, RowDiagnostics)> {
    let ne = best_response_ne(&point.profile, point.rho, &point.coord, &point.budgets, ne_cfg)?;
    let sud = match cfg.scheme {
        Scheme::Sic => {
            let coord = CoordinationDistribution::sud(cfg.users);
            Some(best_response_ne(&point.profile, point.rho, &coord, &point.budgets, ne_cfg)?)
        }
        Scheme::Sud => None,
    };
    let cap = sum_capacity(&point.profile, point.rho, &point.budgets, ne_cfg)?;
    let efficiency = sre(ne.sum_rate.0, cap.rate.0)?;

    let samples = sample_channel(&point.profile, cfg.mc_draws, seed)?;
    let ctx = GameContext::new(point.profile.clone(), point.rho, point.coord.clone())?;
    let mc_rates = (0..cfg.users)
        .map(|k| utility_sic(&ctx, &ne.powers, k, &samples))
        .collect::<Result<Vec<_>>>()?;
    let mc_sum_rate = sum_rate_exact(&ctx, &ne.powers, &samples)?;

    let converged = ne.converged && cap.converged && sud.as_ref().is_none_or(|s| s.converged);
    let x = cfg.sweep_axis.map(|_| point.x);
    let row = ResultRow {
        x,
        rho_db: point.rho_db,
        p: point.p,
        rates: ne.rates.clone(),
        mc_rates,
        sum_rate: ne.sum_rate,
        mc_sum_rate,
        sud_sum_rate: sud.as_ref().map_or(ne.sum_rate, |s| s.sum_rate),
        capacity: cap.rate,
        sre: efficiency,
        lambda: ne.lambda.clone(),
        converged,
        rounds: ne.rounds,
        kkt_residual: ne.kkt_residual,
    };
    let diag = RowDiagnostics {
        x,
        equilibrium: (&ne).into(),
        sud_equilibrium: sud.as_ref().map(Into::into),
        capacity: (&cap).into(),
        fixed_points: fixed_point_diagnostics(point, &ne, ne_cfg)?,
    };
    Ok((row, diag))
}

/// Run every sweep point of a scenario. The configured policy overrides
/// `ne_cfg.pa_mode`; `seed` overrides the configured seed. Every row uses
/// the same channel draws. The report records the seed actually used.
pub fn run_scenario(cfg: &ScenarioConfig, ne_cfg: &NeConfig, seed: Option<u64>) -> Result<ScenarioReport> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.seed = seed.unwrap_or(cfg.seed);
    let cfg = &cfg;
    let ne_cfg = NeConfig {
        pa_mode: cfg.pa_mode.clone(),
        ..ne_cfg.clone()
    };
    let seed = cfg.seed;
    let points = cfg.points()?;
    let results = points
        .par_iter()
        .map(|pt| run_point(cfg, pt, &ne_cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    let (rows, diagnostics): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    for (row, d) in rows.iter().zip(&diagnostics) {
        if !row.converged {
            log::warn!("{}: row x = {:?} did not converge", cfg.name, d.x);
        }
    }
    Ok(ScenarioReport {
        config: cfg.clone(),
        rows,
        diagnostics,
    })
}
