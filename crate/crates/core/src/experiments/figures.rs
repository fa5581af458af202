//! The three reference scenarios.
//!
//! All use `n_r = n_t = 10` and exponential correlation profiles whose
//! receive coefficients differ between users, so the shared receive basis is
//! obtained by projection (see [`ReceiveBasis::Project`]).
//!
//! - `fig1`: sum-rate versus `P_1 = P_2 = P` for fair SIC (`p = 1/2`), SUD
//!   and the sum-capacity. Scenario CSV (see [`super::runner`]).
//! - `fig2`: sum-rate efficiency versus `p` for the three policies. Header
//!   `p,capacity,capacity_norm` followed, for each policy `m`, by
//!   `sum_rate_m,sum_rate_m_norm,sre_m,converged_m,rounds_m,kkt_residual_m`.
//! - `fig3`: equilibrium rates `(R_1, R_2)` of the spatial policy versus `p`.
//!   Scenario CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ScenarioConfig, Scheme, SweepAxis};
use super::runner::{run_scenario, write_outputs, EquilibriumDiagnostics, ScenarioReport};
use crate::channel::ReceiveBasis;
use crate::equilibrium::{best_response_ne, sre, sum_capacity, NeConfig, PolicyRegistry};
use crate::large_system::NormalizedRate;
use crate::Result;

/// Policies compared in `fig2`, in column order.
pub const FIG2_MODES: [&str; 3] = ["space_time", "spatial_only", "temporal_only"];

/// `p = 0, 0.1, ..., 1`.
pub fn p_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Nine powers log-spaced over `[10^-2, 10^2]`.
pub fn power_grid() -> Vec<f64> {
    (0..9).map(|i| 10f64.powf(-2.0 + 0.5 * i as f64)).collect()
}

fn base(name: &str, r: [f64; 2], t: [f64; 2], rho_db: f64, budgets: [f64; 2]) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        users: 2,
        n_t: 10,
        n_r: 10,
        r: r.to_vec(),
        t: t.to_vec(),
        rho_db,
        budgets: budgets.to_vec(),
        scheme: Scheme::Sic,
        p: Some(0.5),
        order_probs: None,
        pa_mode: "space_time".into(),
        receive_basis: ReceiveBasis::Project,
        mc_draws: 500,
        seed: 1,
        sweep_axis: None,
        sweep_values: Vec::new(),
    }
}

pub fn fig1_config() -> ScenarioConfig {
    ScenarioConfig {
        sweep_axis: Some(SweepAxis::Power),
        sweep_values: power_grid(),
        ..base("fig1", [0.5, 0.2], [0.5, 0.2], 3.0, [1.0, 1.0])
    }
}

/// Single-point base of `fig2`; the runner sweeps `p` and the policy.
pub fn fig2_config() -> ScenarioConfig {
    base("fig2", [0.3, 0.0], [0.5, 0.2], 4.0, [5.0, 50.0])
}

pub fn fig3_config() -> ScenarioConfig {
    ScenarioConfig {
        pa_mode: "spatial_only".into(),
        sweep_axis: Some(SweepAxis::P),
        sweep_values: p_grid(),
        ..base("fig3", [0.4, 0.2], [0.6, 0.3], 3.0, [5.0, 50.0])
    }
}

pub fn run_fig1(ne_cfg: &NeConfig) -> Result<ScenarioReport> {
    run_scenario(&fig1_config(), ne_cfg, None)
}

pub fn run_fig3(ne_cfg: &NeConfig) -> Result<ScenarioReport> {
    run_scenario(&fig3_config(), ne_cfg, None)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig2Entry {
    pub pa_mode: String,
    pub sum_rate: NormalizedRate,
    pub sre: f64,
    pub converged: bool,
    pub rounds: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig2Row {
    pub p: f64,
    pub capacity: NormalizedRate,
    /// One entry per policy of [`FIG2_MODES`].
    pub modes: Vec<Fig2Entry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig2Report {
    pub config: ScenarioConfig,
    pub rows: Vec<Fig2Row>,
    pub diagnostics: Vec<Vec<EquilibriumDiagnostics>>,
}

impl Fig2Report {
    pub fn entry(&self, row: usize, mode: &str) -> Option<&Fig2Entry> {
        let mode = PolicyRegistry::default().get(mode).ok()?;
        self.rows[row].modes.iter().find(|e| e.pa_mode == mode.name())
    }

    pub fn all_converged(&self) -> bool {
        self.rows.iter().flat_map(|r| &r.modes).all(|e| e.converged)
    }

    pub fn csv_header() -> Vec<String> {
        let mut h: Vec<String> = ["p", "capacity", "capacity_norm"].map(String::from).to_vec();
        for m in FIG2_MODES {
            for stem in ["sum_rate", "sum_rate_norm", "sre", "converged", "rounds", "kkt_residual"] {
                h.push(match stem.strip_prefix("sum_rate") {
                    Some(suffix) => format!("sum_rate_{m}{suffix}"),
                    None => format!("{stem}_{m}"),
                });
            }
        }
        h
    }

    pub fn csv(&self) -> String {
        let n_r = self.config.n_r;
        let mut out = Self::csv_header().join(",");
        out.push('\n');
        for row in &self.rows {
            let mut cells = vec![
                format!("{}", row.p),
                format!("{}", row.capacity.total(n_r)),
                format!("{}", row.capacity.0),
            ];
            for e in &row.modes {
                cells.push(format!("{}", e.sum_rate.total(n_r)));
                cells.push(format!("{}", e.sum_rate.0));
                cells.push(format!("{}", e.sre));
                cells.push(format!("{}", e.converged));
                cells.push(format!("{}", e.rounds));
                cells.push(format!("{}", e.kkt_residual));
            }
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        #[derive(Serialize)]
        struct Diag<'a> {
            config: &'a ScenarioConfig,
            p: Vec<f64>,
            rows: &'a [Vec<EquilibriumDiagnostics>],
        }
        let diag = serde_json::to_string_pretty(&Diag {
            config: &self.config,
            p: self.rows.iter().map(|r| r.p).collect(),
            rows: &self.diagnostics,
        })?;
        write_outputs(dir, &self.config.name, &self.csv(), &diag)
    }
}

pub fn run_fig2(ne_cfg: &NeConfig) -> Result<Fig2Report> {
    let config = fig2_config();
    let profile = config.profile()?;
    let rho = 10f64.powf(config.rho_db / 10.0);
    let capacity = sum_capacity(&profile, rho, &config.budgets, ne_cfg)?;
    let results = p_grid()
        .par_iter()
        .map(|&p| {
            let coord = crate::game::CoordinationDistribution::two_user(p)?;
            let mut modes = Vec::new();
            let mut diags = Vec::new();
            for m in FIG2_MODES {
                let cfg = NeConfig {
                    pa_mode: m.into(),
                    ..ne_cfg.clone()
                };
                let ne = best_response_ne(&profile, rho, &coord, &config.budgets, &cfg)?;
                modes.push(Fig2Entry {
                    pa_mode: ne.pa_mode.clone(),
                    sum_rate: ne.sum_rate,
                    sre: sre(ne.sum_rate.0, capacity.rate.0)?,
                    converged: ne.converged && capacity.converged,
                    rounds: ne.rounds,
                    kkt_residual: ne.kkt_residual,
                });
                diags.push(EquilibriumDiagnostics::from(&ne));
            }
            Ok((
                Fig2Row {
                    p,
                    capacity: capacity.rate,
                    modes,
                },
                diags,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (rows, diagnostics) = results.into_iter().unzip();
    Ok(Fig2Report {
        config,
        rows,
        diagnostics,
    })
}
