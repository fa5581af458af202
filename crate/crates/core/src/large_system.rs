//! Deterministic equivalents of the ergodic rates.
//!
//! For a set `S` of users transmitting together, `E log2|I + ρ Σ_{ℓ∈S} H_ℓ
//! Q_ℓ H_ℓ^H| / n_r` is approximated through the coupled fixed point
//!
//! ```text
//! γ_ℓ(j) = 1/(s n_t) Σ_i σ_ℓ(i,j) / (1 + 1/(s n_t) Σ_{r∈S} Σ_m σ_r(i,m) δ_r(m))
//! δ_ℓ(j) = s ρ P_ℓ(j) / (1 + s ρ P_ℓ(j) γ_ℓ(j))
//! ```
//!
//! with `s = |S|`, and evaluated as
//!
//! ```text
//! 1/n_r [ Σ_{ℓ,j} log2(1 + s ρ P_ℓ(j) γ_ℓ(j))
//!       + Σ_i log2(1 + 1/(s n_t) Σ_{ℓ,m} σ_ℓ(i,m) δ_ℓ(m))
//!       − Σ_{ℓ,j} γ_ℓ(j) δ_ℓ(j) log2 e ].
//! ```
//!
//! A SIC rate is the difference between the block of the user together with
//! the users decoded after it (γ/δ) and the block of those later users alone
//! (φ/ψ); a SUD rate uses all users and all other users respectively.
//!
//! All values returned here carry the `1/n_r` factor; [`NormalizedRate::total`]
//! converts them to raw bits/s/Hz.

use serde::{Deserialize, Serialize};

use crate::channel::UiuProfile;
use crate::game::{CoordinationDistribution, DecodingOrder, SpaceTimePowerProfile};
use crate::{Error, Result};

const LOG2_E: f64 = std::f64::consts::LOG2_E;
const HISTORY_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial relaxation factor, halved whenever the residual grows.
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            damping: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput("solver tolerance must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidInput("damping must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// A rate per receive antenna (bits/s/Hz/antenna).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct NormalizedRate(pub f64);

impl NormalizedRate {
    pub fn per_receive_antenna(self) -> f64 {
        self.0
    }

    /// Raw bits/s/Hz, comparable with the Monte-Carlo rates.
    pub fn total(self, n_r: usize) -> f64 {
        self.0 * n_r as f64
    }
}

impl std::ops::Add for NormalizedRate {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl std::ops::Sub for NormalizedRate {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self(self.0 - rhs.0)
    }
}

impl std::iter::Sum for NormalizedRate {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        Self(iter.map(|r| r.0).sum())
    }
}

/// Converged parameters of one block. `gamma[b][j]` and `delta[b][j]` refer
/// to `users[b]`; for an interference block they are the φ/ψ parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSolution {
    pub users: Vec<usize>,
    pub scale: f64,
    pub gamma: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
}

impl BlockSolution {
    fn empty() -> Self {
        Self {
            users: Vec::new(),
            scale: 0.0,
            gamma: Vec::new(),
            delta: Vec::new(),
            iterations: 0,
            residual: 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Parameters of `user`, if it belongs to the block.
    pub fn gamma_of(&self, user: usize) -> Option<&[f64]> {
        self.users
            .iter()
            .position(|&u| u == user)
            .map(|b| self.gamma[b].as_slice())
    }
}

/// Signal-plus-interference (γ/δ) and interference-only (φ/ψ) solutions for
/// one user in one decoding context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointSolution {
    pub signal: BlockSolution,
    pub interference: BlockSolution,
}

fn row_loads(profile: &UiuProfile, users: &[usize], delta: &[Vec<f64>], norm: f64) -> Vec<f64> {
    let n_r = profile.n_r();
    let mut t = vec![0.0; n_r];
    for (b, &u) in users.iter().enumerate() {
        let sigma = profile.sigma(u);
        for (j, &d) in delta[b].iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (i, ti) in t.iter_mut().enumerate() {
                *ti += sigma[(i, j)] * d;
            }
        }
    }
    t.iter_mut().for_each(|x| *x *= norm);
    t
}

fn gammas_from_loads(profile: &UiuProfile, users: &[usize], loads: &[f64], norm: f64) -> Vec<Vec<f64>> {
    let n_t = profile.n_t();
    users
        .iter()
        .map(|&u| {
            let sigma = profile.sigma(u);
            (0..n_t)
                .map(|j| {
                    norm * loads
                        .iter()
                        .enumerate()
                        .map(|(i, t)| sigma[(i, j)] / (1.0 + t))
                        .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

fn deltas_from_gammas(
    users: &[usize],
    powers: &[&[f64]],
    gamma: &[Vec<f64>],
    snr: f64,
) -> Vec<Vec<f64>> {
    users
        .iter()
        .enumerate()
        .map(|(b, &u)| {
            powers[u]
                .iter()
                .zip(&gamma[b])
                .map(|(&p, &g)| {
                    let x = snr * p;
                    x / (1.0 + x * g)
                })
                .collect()
        })
        .collect()
}

fn relative_change(new: &[Vec<f64>], old: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (a, b) in new.iter().zip(old) {
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs() / x.abs().max(1.0));
        }
    }
    worst
}

fn check_powers(profile: &UiuProfile, users: &[usize], powers: &[&[f64]]) -> Result<()> {
    if powers.len() != profile.num_users() {
        return Err(Error::InvalidInput(format!(
            "powers for {} users, profile has {}",
            powers.len(),
            profile.num_users()
        )));
    }
    for &u in users {
        if u >= profile.num_users() {
            return Err(Error::InvalidInput(format!("no user {u}")));
        }
        if powers[u].len() != profile.n_t() {
            return Err(Error::InvalidInput(format!(
                "user {u} needs {} powers",
                profile.n_t()
            )));
        }
        if powers[u].iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidInput(format!("user {u} has a negative power")));
        }
    }
    Ok(())
}

/// Solve the fixed point of a block of users transmitting jointly.
///
/// `powers[ℓ]` must be present for every user of the profile; only the block
/// members are read. Picard iteration from `δ = 0`; the relaxation factor is
/// halved whenever the residual (largest relative change of γ and δ) grows.
pub fn solve_block(
    profile: &UiuProfile,
    rho: f64,
    users: &[usize],
    powers: &[&[f64]],
    cfg: &SolverConfig,
) -> Result<BlockSolution> {
    cfg.validate()?;
    check_powers(profile, users, powers)?;
    if users.is_empty() {
        return Ok(BlockSolution::empty());
    }
    let s = users.len() as f64;
    let norm = 1.0 / (s * profile.n_t() as f64);
    let snr = s * rho;
    let n_t = profile.n_t();

    let mut delta = vec![vec![0.0; n_t]; users.len()];
    let mut gamma = gammas_from_loads(profile, users, &row_loads(profile, users, &delta, norm), norm);
    let mut damping = cfg.damping;
    let mut last = f64::INFINITY;
    let mut history = Vec::new();

    for it in 1..=cfg.max_iter {
        let target = deltas_from_gammas(users, powers, &gamma, snr);
        let next_delta: Vec<Vec<f64>> = if damping < 1.0 {
            delta
                .iter()
                .zip(&target)
                .map(|(d, t)| d.iter().zip(t).map(|(a, b)| a + damping * (b - a)).collect())
                .collect()
        } else {
            target
        };
        let next_gamma =
            gammas_from_loads(profile, users, &row_loads(profile, users, &next_delta, norm), norm);
        let residual = relative_change(&next_delta, &delta).max(relative_change(&next_gamma, &gamma));
        delta = next_delta;
        gamma = next_gamma;
        if history.len() == HISTORY_LEN {
            history.remove(0);
        }
        history.push(residual);
        if residual < cfg.tol {
            // Return a pair that satisfies the δ equation exactly.
            delta = deltas_from_gammas(users, powers, &gamma, snr);
            return Ok(BlockSolution {
                users: users.to_vec(),
                scale: s,
                gamma,
                delta,
                iterations: it,
                residual,
            });
        }
        if residual > last && damping > 1.0 / 1024.0 {
            damping *= 0.5;
        }
        last = residual;
    }
    Err(Error::FixedPointDiverged {
        iterations: cfg.max_iter,
        residual: last,
        history,
    })
}

/// Largest relative mismatch when the solution is plugged back into both
/// fixed-point equations.
pub fn fixed_point_residual(
    profile: &UiuProfile,
    rho: f64,
    sol: &BlockSolution,
    powers: &[&[f64]],
) -> f64 {
    if sol.is_empty() {
        return 0.0;
    }
    let norm = 1.0 / (sol.scale * profile.n_t() as f64);
    let gamma = gammas_from_loads(
        profile,
        &sol.users,
        &row_loads(profile, &sol.users, &sol.delta, norm),
        norm,
    );
    let delta = deltas_from_gammas(&sol.users, powers, &sol.gamma, sol.scale * rho);
    relative_change(&gamma, &sol.gamma).max(relative_change(&delta, &sol.delta))
}

/// Deterministic equivalent of `E log2|I + ρ Σ_{ℓ∈S} H_ℓ Q_ℓ H_ℓ^H| / n_r`
/// evaluated at a solved block.
pub fn block_value(profile: &UiuProfile, rho: f64, sol: &BlockSolution, powers: &[&[f64]]) -> NormalizedRate {
    if sol.is_empty() {
        return NormalizedRate(0.0);
    }
    let n_r = profile.n_r() as f64;
    let norm = 1.0 / (sol.scale * profile.n_t() as f64);
    let snr = sol.scale * rho;
    let mut value = 0.0;
    for (b, &u) in sol.users.iter().enumerate() {
        for (j, &p) in powers[u].iter().enumerate() {
            let g = sol.gamma[b][j];
            value += (snr * p * g).ln_1p() * LOG2_E;
            value -= g * sol.delta[b][j] * LOG2_E;
        }
    }
    for t in row_loads(profile, &sol.users, &sol.delta, norm) {
        value += t.ln_1p() * LOG2_E;
    }
    NormalizedRate(value / n_r)
}

/// Solve and evaluate one block.
pub fn log_det_equivalent(
    profile: &UiuProfile,
    rho: f64,
    users: &[usize],
    powers: &[&[f64]],
    cfg: &SolverConfig,
) -> Result<(NormalizedRate, BlockSolution)> {
    let sol = solve_block(profile, rho, users, powers, cfg)?;
    Ok((block_value(profile, rho, &sol, powers), sol))
}

fn with_user(mut users: Vec<usize>, k: usize) -> Vec<usize> {
    users.push(k);
    users.sort_unstable();
    users
}

/// γ/δ block for user `k` under `order`: `k` and every user decoded after it.
pub fn solve_sic_signal_fp(
    profile: &UiuProfile,
    rho: f64,
    order: &DecodingOrder,
    k: usize,
    slot: &[&[f64]],
    cfg: &SolverConfig,
) -> Result<BlockSolution> {
    solve_block(profile, rho, &with_user(order.decoded_after(k), k), slot, cfg)
}

/// φ/ψ block for user `k` under `order`: the users decoded after `k`. Empty
/// when `k` is decoded last.
pub fn solve_sic_interference_fp(
    profile: &UiuProfile,
    rho: f64,
    order: &DecodingOrder,
    k: usize,
    slot: &[&[f64]],
    cfg: &SolverConfig,
) -> Result<BlockSolution> {
    let mut later = order.decoded_after(k);
    later.sort_unstable();
    solve_block(profile, rho, &later, slot, cfg)
}

/// Rate of `user` given the users still undecoded when it is decoded.
pub fn approx_conditional_rate(
    profile: &UiuProfile,
    rho: f64,
    user: usize,
    interferers: &[usize],
    slot: &[&[f64]],
    cfg: &SolverConfig,
) -> Result<(NormalizedRate, FixedPointSolution)> {
    let mut others = interferers.to_vec();
    others.sort_unstable();
    let (with, signal) = log_det_equivalent(profile, rho, &with_user(others.clone(), user), slot, cfg)?;
    let (without, interference) = log_det_equivalent(profile, rho, &others, slot, cfg)?;
    Ok((
        with - without,
        FixedPointSolution {
            signal,
            interference,
        },
    ))
}

/// Large-system SIC rate of user `k` under `order`.
pub fn approx_rate_sic(
    profile: &UiuProfile,
    rho: f64,
    order: &DecodingOrder,
    k: usize,
    slot: &[&[f64]],
    cfg: &SolverConfig,
) -> Result<NormalizedRate> {
    Ok(approx_conditional_rate(profile, rho, k, &order.decoded_after(k), slot, cfg)?.0)
}

/// γ/δ over all users and φ/ψ over every user but `k`.
pub fn solve_sud_fps(
    profile: &UiuProfile,
    rho: f64,
    k: usize,
    slot: &[&[f64]],
    cfg: &SolverConfig,
) -> Result<FixedPointSolution> {
    let all: Vec<usize> = (0..profile.num_users()).collect();
    let others: Vec<usize> = all.iter().copied().filter(|&l| l != k).collect();
    Ok(FixedPointSolution {
        signal: solve_block(profile, rho, &all, slot, cfg)?,
        interference: solve_block(profile, rho, &others, slot, cfg)?,
    })
}

/// Large-system SUD utility of user `k`.
pub fn approx_utility_sud(
    profile: &UiuProfile,
    rho: f64,
    k: usize,
    slot: &[&[f64]],
    cfg: &SolverConfig,
) -> Result<NormalizedRate> {
    let sol = solve_sud_fps(profile, rho, k, slot, cfg)?;
    Ok(block_value(profile, rho, &sol.signal, slot) - block_value(profile, rho, &sol.interference, slot))
}

/// Large-system utility `Σ_s p_s R̃_k^(s)` under any coordination law.
pub fn approx_utility(
    profile: &UiuProfile,
    rho: f64,
    coord: &CoordinationDistribution,
    powers: &SpaceTimePowerProfile,
    k: usize,
    cfg: &SolverConfig,
) -> Result<NormalizedRate> {
    let mut total = NormalizedRate(0.0);
    for s in 0..coord.num_slots() {
        let w = coord.weight(s);
        if w == 0.0 {
            continue;
        }
        let (r, _) =
            approx_conditional_rate(profile, rho, k, &coord.interferers(s, k), &powers.slot(s), cfg)?;
        total = total + NormalizedRate(w * r.0);
    }
    Ok(total)
}

/// Gain coefficient `c = s ρ γ_k(j)` of every mode of user `k` in a block.
pub fn mode_coefficients(rho: f64, sol: &BlockSolution, k: usize) -> Vec<f64> {
    sol.gamma_of(k)
        .map(|g| g.iter().map(|&x| sol.scale * rho * x).collect())
        .unwrap_or_default()
}

/// `∂ũ_k/∂P_k^(s)(j) = p_s c / (n_r ln2 (1 + c P))` for every user, slot and
/// mode. The fixed-point parameters are stationary, so only the explicit
/// dependence on the own power contributes.
pub fn utility_gradients(
    profile: &UiuProfile,
    rho: f64,
    coord: &CoordinationDistribution,
    powers: &SpaceTimePowerProfile,
    cfg: &SolverConfig,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let n_r = profile.n_r() as f64;
    let mut out = Vec::with_capacity(profile.num_users());
    for k in 0..profile.num_users() {
        let mut per_slot = Vec::with_capacity(coord.num_slots());
        for s in 0..coord.num_slots() {
            let slot = powers.slot(s);
            let block = with_user(coord.interferers(s, k), k);
            let sol = solve_block(profile, rho, &block, &slot, cfg)?;
            let w = coord.weight(s);
            per_slot.push(
                mode_coefficients(rho, &sol, k)
                    .iter()
                    .zip(slot[k])
                    .map(|(&c, &p)| w * c / (n_r * std::f64::consts::LN_2 * (1.0 + c * p)))
                    .collect(),
            );
        }
        out.push(per_slot);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RMatrix;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn zero_power_block_is_column_average() {
        let sigma = RMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 * 0.5 + 0.1);
        let profile = UiuProfile::from_variances(vec![sigma.clone(), sigma.clone()]).unwrap();
        let zero = [0.0, 0.0];
        let sol = solve_block(&profile, 2.0, &[0, 1], &[&zero, &zero], &cfg()).unwrap();
        assert_eq!(sol.iterations, 1);
        for b in 0..2 {
            for j in 0..2 {
                let expect: f64 = (0..3).map(|i| sigma[(i, j)]).sum::<f64>() / (2.0 * 2.0);
                assert!((sol.gamma[b][j] - expect).abs() < 1e-15);
                assert_eq!(sol.delta[b][j], 0.0);
            }
        }
        assert_eq!(block_value(&profile, 2.0, &sol, &[&zero, &zero]).0, 0.0);
    }

    #[test]
    fn scalar_quadratic_oracle() {
        // σ ≡ 1, n_t = n_r = n, s users at equal power P: γ uniform and
        // γ(1 + δ) = 1/s with δ = sρP/(1 + sρPγ), a quadratic in γ.
        let n = 4;
        let s = 2.0;
        let (rho, p) = (3.0, 0.7);
        let profile = UiuProfile::iid(2, n, n).unwrap();
        let pw = vec![p; n];
        let sol = solve_block(&profile, rho, &[0, 1], &[&pw, &pw], &cfg()).unwrap();
        let x = s * rho * p;
        // x γ² + (1 + x - x/s) γ - 1/s = 0 after eliminating δ.
        let (a, b, c) = (x, 1.0 + x - x / s, -1.0 / s);
        let gamma = (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
        for row in &sol.gamma {
            for &g in row {
                assert!((g - gamma).abs() < 1e-9, "{g} vs {gamma}");
            }
        }
    }

    #[test]
    fn self_consistency() {
        let sigma = RMatrix::from_fn(5, 3, |i, j| 1.0 + ((i * 7 + j * 3) % 5) as f64 * 0.3);
        let profile = UiuProfile::from_variances(vec![sigma.clone(), sigma.map(|x| 2.0 / x)]).unwrap();
        let a = [0.3, 1.2, 0.0];
        let b = [2.0, 0.5, 0.9];
        let sol = solve_block(&profile, 10.0, &[0, 1], &[&a, &b], &cfg()).unwrap();
        assert!(fixed_point_residual(&profile, 10.0, &sol, &[&a, &b]) < 1e-9);
        assert!(sol.gamma.iter().flatten().all(|&g| g >= 0.0));
        assert!(sol.delta.iter().flatten().all(|&d| d >= 0.0));
    }

    #[test]
    fn last_decoded_user_has_empty_interference_block() {
        let profile = UiuProfile::iid(2, 3, 3).unwrap();
        let order = DecodingOrder::identity(2);
        let pw = [1.0, 1.0, 1.0];
        let sol = solve_sic_interference_fp(&profile, 2.0, &order, 1, &[&pw, &pw], &cfg()).unwrap();
        assert!(sol.is_empty());
        let (_, fp) = approx_conditional_rate(&profile, 2.0, 1, &[], &[&pw, &pw], &cfg()).unwrap();
        assert!(fp.interference.is_empty());
    }

    #[test]
    fn zero_interferer_power() {
        let profile = UiuProfile::iid(2, 3, 2).unwrap();
        let order = DecodingOrder::identity(2);
        let pw = [1.0, 2.0];
        let zero = [0.0, 0.0];
        let sol = solve_sic_interference_fp(&profile, 2.0, &order, 0, &[&pw, &zero], &cfg()).unwrap();
        for j in 0..2 {
            assert_eq!(sol.delta[0][j], 0.0);
            assert!((sol.gamma[0][j] - 3.0 / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sud_equals_first_decoded_sic() {
        let sigma = RMatrix::from_fn(4, 3, |i, j| 0.5 + ((i + j) % 3) as f64);
        let profile = UiuProfile::from_variances(vec![sigma.clone(), sigma.transpose().resize(4, 3, 1.0)]).unwrap();
        let a = [0.3, 1.2, 0.4];
        let b = [2.0, 0.5, 0.9];
        let order = DecodingOrder::identity(2);
        let sic = approx_rate_sic(&profile, 4.0, &order, 0, &[&a, &b], &cfg()).unwrap();
        let sud = approx_utility_sud(&profile, 4.0, 0, &[&a, &b], &cfg()).unwrap();
        assert!((sic.0 - sud.0).abs() < 1e-12);
    }

    #[test]
    fn single_user_sud_has_no_interference() {
        let profile = UiuProfile::iid(1, 3, 3).unwrap();
        let pw = [1.0, 0.5, 0.0];
        let sol = solve_sud_fps(&profile, 2.0, 0, &[&pw], &cfg()).unwrap();
        assert!(sol.interference.is_empty());
        let sic = approx_rate_sic(&profile, 2.0, &DecodingOrder::identity(1), 0, &[&pw], &cfg()).unwrap();
        let sud = approx_utility_sud(&profile, 2.0, 0, &[&pw], &cfg()).unwrap();
        assert_eq!(sic, sud);
    }

    #[test]
    fn zero_powers_give_zero_rate() {
        let profile = UiuProfile::iid(2, 3, 3).unwrap();
        let z = [0.0; 3];
        let r = approx_rate_sic(&profile, 5.0, &DecodingOrder::identity(2), 0, &[&z, &z], &cfg()).unwrap();
        assert_eq!(r.0, 0.0);
    }

    #[test]
    fn reports_non_convergence() {
        let profile = UiuProfile::iid(1, 4, 4).unwrap();
        let pw = [1e4; 4];
        let cfg = SolverConfig {
            tol: 1e-14,
            max_iter: 3,
            damping: 1.0,
        };
        match solve_block(&profile, 1e3, &[0], &[&pw], &cfg) {
            Err(Error::FixedPointDiverged { iterations, history, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 3);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
