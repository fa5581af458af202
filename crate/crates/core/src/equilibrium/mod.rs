//! Nash equilibria of the large-system game.
//!
//! Each user's best response is computed by alternating between the
//! fixed-point parameters of its decoding contexts (which depend on its own
//! powers) and the allocation the selected [`PowerAllocationPolicy`] returns
//! for the resulting gains. Users respond in turn (Gauss–Seidel) until no
//! power moves by more than the outer tolerance.

pub mod policy;
pub mod waterfill;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use policy::{
    PolicyKkt, PolicyRegistry, PowerAllocationPolicy, ResponseProblem, SpaceTime, SpatialOnly,
    TemporalOnly,
};
pub use waterfill::{solve_marginal_allocation, waterfill, Allocation, MarginalVariable};

use crate::channel::UiuProfile;
use crate::game::{CoordinationDistribution, SpaceTimePowerProfile};
use crate::large_system::{
    approx_utility, log_det_equivalent, mode_coefficients, solve_block, NormalizedRate,
    SolverConfig,
};
use crate::{Error, Result};

/// Tolerance on SRE above one attributed to numerical noise.
pub const SRE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeConfig {
    /// Stop when no power changed by more than this in a full round.
    pub outer_tol: f64,
    pub max_rounds: usize,
    /// Relative budget error of the iterative allocators.
    pub bisection_tol: f64,
    /// Registered policy name.
    pub pa_mode: String,
    /// Inner best-response iterations per user and round.
    pub max_inner: usize,
    /// Respond in decreasing user index.
    pub reverse_cycle: bool,
    pub solver: SolverConfig,
}

impl Default for NeConfig {
    fn default() -> Self {
        Self {
            outer_tol: 1e-8,
            max_rounds: 500,
            bisection_tol: 1e-12,
            pa_mode: "space_time".into(),
            max_inner: 200,
            reverse_cycle: false,
            solver: SolverConfig::default(),
        }
    }
}

impl NeConfig {
    pub fn with_mode(mode: &str) -> Self {
        Self {
            pa_mode: mode.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.outer_tol > 0.0) || !(self.bisection_tol > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if self.max_rounds == 0 || self.max_inner == 0 {
            return Err(Error::InvalidInput("iteration limits must be positive".into()));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserDiagnostics {
    pub lambda: f64,
    /// `n_t P̄_k − Σ_s p_s Σ_j P_k^(s)(j)`.
    pub slack: f64,
    pub stationarity: f64,
    pub slackness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub pa_mode: String,
    pub powers: SpaceTimePowerProfile,
    pub lambda: Vec<f64>,
    /// Large-system utilities per user.
    pub rates: Vec<NormalizedRate>,
    pub sum_rate: NormalizedRate,
    pub rounds: usize,
    pub converged: bool,
    /// Largest power change in the last round.
    pub last_change: f64,
    pub users: Vec<UserDiagnostics>,
    pub kkt_residual: f64,
}

/// Assembles and solves best responses for one game instance.
struct Responder<'a> {
    profile: &'a UiuProfile,
    rho: f64,
    coord: &'a CoordinationDistribution,
    policy: &'a dyn PowerAllocationPolicy,
    cfg: &'a NeConfig,
    weights: Vec<f64>,
}

impl<'a> Responder<'a> {
    /// Gains `c = s ρ γ_k^(s)(j)` of user `k` at the current profile.
    fn coefficients(&self, powers: &SpaceTimePowerProfile, k: usize) -> Result<Vec<Vec<f64>>> {
        (0..self.coord.num_slots())
            .into_par_iter()
            .map(|s| {
                let mut block = self.coord.interferers(s, k);
                block.push(k);
                block.sort_unstable();
                let sol = solve_block(self.profile, self.rho, &block, &powers.slot(s), &self.cfg.solver)?;
                Ok(mode_coefficients(self.rho, &sol, k))
            })
            .collect()
    }

    fn problem<'c>(&'c self, coeffs: &'c [Vec<f64>], budget: f64) -> ResponseProblem<'c> {
        ResponseProblem {
            weights: &self.weights,
            coeffs,
            budget,
            n_t: self.profile.n_t(),
            n_r: self.profile.n_r(),
            tol: self.cfg.bisection_tol,
        }
    }

    /// Best response of user `k`; updates `powers` in place and returns the
    /// multiplier and the largest change of the user's powers.
    fn respond(&self, powers: &mut SpaceTimePowerProfile, k: usize) -> Result<(f64, f64)> {
        let start = powers.powers[k].clone();
        let budget = powers.budgets[k];
        let mut lambda = 0.0;
        for _ in 0..self.cfg.max_inner {
            let coeffs = self.coefficients(powers, k)?;
            let alloc = self.policy.allocate(&self.problem(&coeffs, budget))?;
            let change = max_diff(&alloc.powers, &powers.powers[k]);
            powers.powers[k] = alloc.powers;
            lambda = alloc.lambda;
            if change < 0.1 * self.cfg.outer_tol {
                break;
            }
        }
        Ok((lambda, max_diff(&start, &powers.powers[k])))
    }

    fn diagnostics(&self, powers: &SpaceTimePowerProfile, lambda: &[f64]) -> Result<Vec<UserDiagnostics>> {
        (0..powers.num_users())
            .map(|k| {
                let coeffs = self.coefficients(powers, k)?;
                let kkt = self
                    .policy
                    .kkt(&self.problem(&coeffs, powers.budgets[k]), &powers.powers[k], lambda[k]);
                Ok(UserDiagnostics {
                    lambda: lambda[k],
                    slack: powers.slack(k, self.coord, self.profile.n_t()),
                    stationarity: kkt.stationarity,
                    slackness: kkt.slackness,
                })
            })
            .collect()
    }
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn check_budgets(profile: &UiuProfile, budgets: &[f64]) -> Result<()> {
    if budgets.len() != profile.num_users() {
        return Err(Error::InvalidInput(format!(
            "{} budgets for {} users",
            budgets.len(),
            profile.num_users()
        )));
    }
    if budgets.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
        return Err(Error::InvalidInput("budgets must be positive".into()));
    }
    Ok(())
}

/// Equilibrium by best-response dynamics from the uniform allocation.
pub fn best_response_ne(
    profile: &UiuProfile,
    rho: f64,
    coord: &CoordinationDistribution,
    budgets: &[f64],
    cfg: &NeConfig,
) -> Result<EquilibriumResult> {
    check_budgets(profile, budgets)?;
    let init = SpaceTimePowerProfile::uniform(budgets, coord.num_slots(), profile.n_t());
    best_response_ne_from(profile, rho, coord, init, cfg)
}

/// Equilibrium by best-response dynamics from a given starting profile. The
/// start is first projected onto the policy's strategy set.
pub fn best_response_ne_from(
    profile: &UiuProfile,
    rho: f64,
    coord: &CoordinationDistribution,
    init: SpaceTimePowerProfile,
    cfg: &NeConfig,
) -> Result<EquilibriumResult> {
    best_response_with(profile, rho, coord, init, cfg, &PolicyRegistry::default())
}

/// As [`best_response_ne_from`] with a caller-supplied registry.
pub fn best_response_with(
    profile: &UiuProfile,
    rho: f64,
    coord: &CoordinationDistribution,
    init: SpaceTimePowerProfile,
    cfg: &NeConfig,
    registry: &PolicyRegistry,
) -> Result<EquilibriumResult> {
    cfg.validate()?;
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidInput(format!("SNR must be positive, got {rho}")));
    }
    if coord.num_users() != profile.num_users() {
        return Err(Error::InvalidInput("coordination and profile disagree on K".into()));
    }
    check_budgets(profile, &init.budgets)?;
    let policy = registry.get(&cfg.pa_mode)?;
    let weights = coord.weights();
    let n_t = profile.n_t();
    let mut powers = init;
    if powers.num_users() != profile.num_users()
        || powers.powers.iter().any(|u| u.len() != coord.num_slots() || u.iter().any(|p| p.len() != n_t))
    {
        return Err(Error::InvalidInput("initial profile has the wrong shape".into()));
    }
    for k in 0..powers.num_users() {
        powers.powers[k] = policy.project(&weights, &powers.powers[k], powers.budgets[k]);
    }

    let responder = Responder {
        profile,
        rho,
        coord,
        policy: policy.as_ref(),
        cfg,
        weights,
    };
    let users: Vec<usize> = if cfg.reverse_cycle {
        (0..profile.num_users()).rev().collect()
    } else {
        (0..profile.num_users()).collect()
    };
    let mut lambda = vec![0.0; profile.num_users()];
    let mut converged = false;
    let mut rounds = 0;
    let mut last_change = f64::INFINITY;
    while rounds < cfg.max_rounds {
        rounds += 1;
        let mut change = 0.0f64;
        for &k in &users {
            let (l, c) = responder.respond(&mut powers, k)?;
            lambda[k] = l;
            change = change.max(c);
        }
        last_change = change;
        log::debug!("round {rounds}: max power change {change:e}");
        if change < cfg.outer_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("best response did not converge in {rounds} rounds (last change {last_change:e})");
    }

    let users_diag = responder.diagnostics(&powers, &lambda)?;
    let kkt_residual = users_diag
        .iter()
        .map(|u| u.stationarity.max(u.slackness.abs()))
        .fold(0.0, f64::max);
    let rates = (0..profile.num_users())
        .map(|k| approx_utility(profile, rho, coord, &powers, k, &cfg.solver))
        .collect::<Result<Vec<_>>>()?;
    let sum_rate = rates.iter().copied().sum();
    Ok(EquilibriumResult {
        pa_mode: policy.name().to_string(),
        powers,
        lambda,
        rates,
        sum_rate,
        rounds,
        converged,
        last_change,
        users: users_diag,
        kkt_residual,
    })
}

/// Equilibrium under the spatial-only or temporal-only restriction.
pub fn constrained_ne(
    profile: &UiuProfile,
    rho: f64,
    coord: &CoordinationDistribution,
    budgets: &[f64],
    cfg: &NeConfig,
) -> Result<EquilibriumResult> {
    let policy = PolicyRegistry::default().get(&cfg.pa_mode)?;
    if policy.name() == SpaceTime.name() {
        return Err(Error::InvalidInput(
            "constrained_ne needs a restricted policy, not space_time".into(),
        ));
    }
    best_response_ne(profile, rho, coord, budgets, cfg)
}

/// Equilibrium profile in the high-SNR limit: uniform power everywhere.
pub fn ne_high_snr(budgets: &[f64], slots: usize, n_t: usize) -> SpaceTimePowerProfile {
    SpaceTimePowerProfile::uniform(budgets, slots, n_t)
}

/// Equilibrium profile in the low-SNR limit: each user beamforms its whole
/// budget on the mode with the largest column sum of its variance profile,
/// with the same power in every slot.
pub fn ne_low_snr(
    profile: &UiuProfile,
    budgets: &[f64],
    coord: &CoordinationDistribution,
) -> Result<SpaceTimePowerProfile> {
    check_budgets(profile, budgets)?;
    let n_t = profile.n_t();
    let powers = (0..profile.num_users())
        .map(|k| {
            let mut row = vec![0.0; n_t];
            row[profile.strongest_mode(k)] = n_t as f64 * budgets[k];
            vec![row; coord.num_slots()]
        })
        .collect();
    SpaceTimePowerProfile::new(powers, budgets.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub rate: NormalizedRate,
    /// `powers[k][j]`, eigenvalues of the optimal covariances.
    pub powers: Vec<Vec<f64>>,
    pub rounds: usize,
    pub converged: bool,
}

/// Large-system sum-capacity `max E log2|I + ρ Σ_k H_k Ω_k H_k^H| / n_r` under
/// per-user trace constraints, by cyclic per-user water-filling against the
/// all-user fixed point.
pub fn sum_capacity(
    profile: &UiuProfile,
    rho: f64,
    budgets: &[f64],
    cfg: &NeConfig,
) -> Result<CapacityResult> {
    // Under SUD every user's best response maximises the all-user log-det,
    // so the SUD dynamics with joint water-filling is block-coordinate ascent
    // on the common objective.
    let coord = CoordinationDistribution::sud(profile.num_users());
    let team_cfg = NeConfig {
        pa_mode: SpaceTime.name().into(),
        ..cfg.clone()
    };
    let ne = best_response_ne(profile, rho, &coord, budgets, &team_cfg)?;
    let all: Vec<usize> = (0..profile.num_users()).collect();
    let (rate, _) = log_det_equivalent(profile, rho, &all, &ne.powers.slot(0), &cfg.solver)?;
    Ok(CapacityResult {
        rate,
        powers: ne.powers.powers.iter().map(|u| u[0].clone()).collect(),
        rounds: ne.rounds,
        converged: ne.converged,
    })
}

/// Sum-rate efficiency `R_sum^NE / C_sum`.
pub fn sre(ne_sum_rate: f64, capacity: f64) -> Result<f64> {
    if !(capacity > 0.0) {
        return Err(Error::InvalidInput(format!("capacity must be positive, got {capacity}")));
    }
    let ratio = ne_sum_rate / capacity;
    if ratio > 1.0 + SRE_SLACK {
        return Err(Error::InconsistentEfficiency(ratio));
    }
    Ok(ratio.min(1.0))
}
