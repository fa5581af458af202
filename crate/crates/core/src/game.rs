//! The exact game: decoding orders, the coordination law, strategies and
//! Monte-Carlo evaluation of the ergodic utilities, plus numeric probes of
//! the structural properties the equilibrium analysis relies on.
//!
//! Rates in this module are raw bits/s/Hz (no `1/n_r` normalisation).

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSamples, UiuProfile};
use crate::linalg::{
    ensure_hermitian, identity, inverse_pd, log_det_pd, precoder, sandwich,
    trace_of_product, CMatrix, C64,
};
use crate::{Error, Result};

/// Slack allowed on the averaged power budget.
pub const BUDGET_TOL: f64 = 1e-9;

/// A decoding order. Rank 0 is decoded first and sees every other user as
/// interference; the last rank is decoded interference-free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecodingOrder {
    sequence: Vec<usize>,
    rank: Vec<usize>,
}

impl DecodingOrder {
    /// `sequence[r]` is the user decoded with rank `r`.
    pub fn from_sequence(sequence: Vec<usize>) -> Result<Self> {
        let n = sequence.len();
        let mut rank = vec![usize::MAX; n];
        for (r, &user) in sequence.iter().enumerate() {
            if user >= n || rank[user] != usize::MAX {
                return Err(Error::InvalidInput(format!(
                    "{sequence:?} is not a permutation of 0..{n}"
                )));
            }
            rank[user] = r;
        }
        Ok(Self { sequence, rank })
    }

    /// `ranks[k]` is the rank of user `k`.
    pub fn from_ranks(ranks: Vec<usize>) -> Result<Self> {
        let n = ranks.len();
        let mut sequence = vec![usize::MAX; n];
        for (user, &r) in ranks.iter().enumerate() {
            if r >= n || sequence[r] != usize::MAX {
                return Err(Error::InvalidInput(format!(
                    "{ranks:?} is not a permutation of 0..{n}"
                )));
            }
            sequence[r] = user;
        }
        Ok(Self {
            sequence,
            rank: ranks,
        })
    }

    pub fn identity(users: usize) -> Self {
        Self::from_sequence((0..users).collect()).expect("identity is a permutation")
    }

    /// All `K!` orders, lexicographic in the decoding sequence.
    pub fn all(users: usize) -> Vec<Self> {
        let mut out = Vec::new();
        let mut seq: Vec<usize> = (0..users).collect();
        permute(&mut seq, 0, &mut out);
        out.sort_by(|a, b| a.sequence.cmp(&b.sequence));
        out
    }

    pub fn num_users(&self) -> usize {
        self.sequence.len()
    }

    pub fn rank(&self, user: usize) -> usize {
        self.rank[user]
    }

    pub fn user_at(&self, rank: usize) -> usize {
        self.sequence[rank]
    }

    pub fn sequence(&self) -> &[usize] {
        &self.sequence
    }

    /// Users decoded after `user`, in decoding order.
    pub fn decoded_after(&self, user: usize) -> Vec<usize> {
        self.sequence[self.rank[user] + 1..].to_vec()
    }
}

fn permute(seq: &mut Vec<usize>, start: usize, out: &mut Vec<DecodingOrder>) {
    if start == seq.len() {
        out.push(DecodingOrder::from_sequence(seq.clone()).expect("permutation"));
        return;
    }
    for i in start..seq.len() {
        seq.swap(start, i);
        permute(seq, start + 1, out);
        seq.swap(start, i);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodingScheme {
    Sic,
    Sud,
}

/// Law of the public coordination signal.
///
/// Under SIC every realisation names a decoding order; under SUD the signal
/// is deterministic. Either way the law is exposed as a list of *slots*, one
/// per realisation, and a strategy holds one power vector per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinationDistribution {
    users: usize,
    orders: Vec<(DecodingOrder, f64)>,
    scheme: DecodingScheme,
}

impl CoordinationDistribution {
    pub fn sic(users: usize, orders: Vec<(DecodingOrder, f64)>) -> Result<Self> {
        if users == 0 {
            return Err(Error::InvalidInput("need at least one user".into()));
        }
        if orders.is_empty() {
            return Err(Error::InvalidInput("SIC needs at least one decoding order".into()));
        }
        let mut seen = HashSet::new();
        let mut total = 0.0;
        for (order, p) in &orders {
            if order.num_users() != users {
                return Err(Error::InvalidInput(format!(
                    "order {:?} does not cover {users} users",
                    order.sequence()
                )));
            }
            if !seen.insert(order.sequence().to_vec()) {
                return Err(Error::InvalidInput(format!(
                    "order {:?} listed twice",
                    order.sequence()
                )));
            }
            if !(*p >= 0.0) || !p.is_finite() {
                return Err(Error::InvalidInput(format!("negative probability {p}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "order probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self {
            users,
            orders,
            scheme: DecodingScheme::Sic,
        })
    }

    pub fn sud(users: usize) -> Self {
        Self {
            users,
            orders: Vec::new(),
            scheme: DecodingScheme::Sud,
        }
    }

    /// One decoding order applied with probability one.
    pub fn fixed(order: DecodingOrder) -> Self {
        let users = order.num_users();
        Self::sic(users, vec![(order, 1.0)]).expect("single order is a valid law")
    }

    /// Two users; `p` is the probability that user 0 is decoded second, i.e.
    /// interference-free. Slot 0 is the order (1, 0), slot 1 is (0, 1).
    pub fn two_user(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("p = {p} outside [0, 1]")));
        }
        Self::sic(
            2,
            vec![
                (DecodingOrder::from_sequence(vec![1, 0])?, p),
                (DecodingOrder::from_sequence(vec![0, 1])?, 1.0 - p),
            ],
        )
    }

    /// Every order equally likely.
    pub fn uniform_sic(users: usize) -> Self {
        let all = DecodingOrder::all(users);
        let p = 1.0 / all.len() as f64;
        Self::sic(users, all.into_iter().map(|o| (o, p)).collect()).expect("uniform law")
    }

    pub fn scheme(&self) -> DecodingScheme {
        self.scheme
    }

    pub fn num_users(&self) -> usize {
        self.users
    }

    pub fn num_slots(&self) -> usize {
        match self.scheme {
            DecodingScheme::Sic => self.orders.len(),
            DecodingScheme::Sud => 1,
        }
    }

    pub fn weight(&self, slot: usize) -> f64 {
        match self.scheme {
            DecodingScheme::Sic => self.orders[slot].1,
            DecodingScheme::Sud => 1.0,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.num_slots()).map(|s| self.weight(s)).collect()
    }

    /// Decoding order of a slot; `None` under SUD.
    pub fn order(&self, slot: usize) -> Option<&DecodingOrder> {
        match self.scheme {
            DecodingScheme::Sic => Some(&self.orders[slot].0),
            DecodingScheme::Sud => None,
        }
    }

    pub fn orders(&self) -> &[(DecodingOrder, f64)] {
        &self.orders
    }

    /// Users whose signal is still present when `user` is decoded in `slot`.
    pub fn interferers(&self, slot: usize, user: usize) -> Vec<usize> {
        match self.scheme {
            DecodingScheme::Sic => self.orders[slot].0.decoded_after(user),
            DecodingScheme::Sud => (0..self.users).filter(|&l| l != user).collect(),
        }
    }
}

/// Diagonal (eigenmode) powers of every user in every slot:
/// `powers[k][s][j]` is the power of user `k` on transmit mode `j` when the
/// coordination signal selects slot `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePowerProfile {
    pub powers: Vec<Vec<Vec<f64>>>,
    /// Per-antenna budget `P̄_k`.
    pub budgets: Vec<f64>,
}

impl SpaceTimePowerProfile {
    pub fn new(powers: Vec<Vec<Vec<f64>>>, budgets: Vec<f64>) -> Result<Self> {
        if powers.len() != budgets.len() {
            return Err(Error::InvalidInput(format!(
                "{} users with powers but {} budgets",
                powers.len(),
                budgets.len()
            )));
        }
        if budgets.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
            return Err(Error::InvalidInput("budgets must be positive".into()));
        }
        for (k, user) in powers.iter().enumerate() {
            for slot in user {
                if slot.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "user {k} has a negative or non-finite power"
                    )));
                }
            }
        }
        Ok(Self { powers, budgets })
    }

    /// `P_k^(s)(j) = P̄_k` everywhere.
    pub fn uniform(budgets: &[f64], slots: usize, n_t: usize) -> Self {
        Self {
            powers: budgets.iter().map(|&b| vec![vec![b; n_t]; slots]).collect(),
            budgets: budgets.to_vec(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.powers.len()
    }

    pub fn user(&self, k: usize) -> &[Vec<f64>] {
        &self.powers[k]
    }

    /// Every user's powers in one slot.
    pub fn slot(&self, s: usize) -> Vec<&[f64]> {
        self.powers.iter().map(|u| u[s].as_slice()).collect()
    }

    /// `Σ_s p_s Σ_j P_k^(s)(j)`.
    pub fn spent(&self, k: usize, coord: &CoordinationDistribution) -> f64 {
        self.powers[k]
            .iter()
            .enumerate()
            .map(|(s, p)| coord.weight(s) * p.iter().sum::<f64>())
            .sum()
    }

    /// `n_t P̄_k − Σ_s p_s Σ_j P_k^(s)(j)`.
    pub fn slack(&self, k: usize, coord: &CoordinationDistribution, n_t: usize) -> f64 {
        n_t as f64 * self.budgets[k] - self.spent(k, coord)
    }

    pub fn check_feasible(&self, coord: &CoordinationDistribution, n_t: usize) -> Result<()> {
        if self.num_users() != coord.num_users() {
            return Err(Error::InvalidInput("user count mismatch".into()));
        }
        for k in 0..self.num_users() {
            if self.powers[k].len() != coord.num_slots() {
                return Err(Error::InvalidInput(format!(
                    "user {k} has {} slots, coordination has {}",
                    self.powers[k].len(),
                    coord.num_slots()
                )));
            }
            if self.powers[k].iter().any(|p| p.len() != n_t) {
                return Err(Error::InvalidInput(format!("user {k} needs {n_t} modes per slot")));
            }
            let slack = self.slack(k, coord, n_t);
            if slack < -BUDGET_TOL * (1.0 + n_t as f64 * self.budgets[k]) {
                return Err(Error::InvalidInput(format!(
                    "user {k} exceeds the power budget by {}",
                    -slack
                )));
            }
        }
        Ok(())
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut worst = 0.0f64;
        for (a, b) in self.powers.iter().zip(&other.powers) {
            for (sa, sb) in a.iter().zip(b) {
                for (x, y) in sa.iter().zip(sb) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        worst
    }
}

#[derive(Debug, Clone)]
pub struct GameContext {
    pub profile: UiuProfile,
    /// `ρ = 1/σ²`.
    pub rho: f64,
    pub coord: CoordinationDistribution,
}

impl GameContext {
    pub fn new(profile: UiuProfile, rho: f64, coord: CoordinationDistribution) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidInput(format!("SNR must be positive, got {rho}")));
        }
        if coord.num_users() != profile.num_users() {
            return Err(Error::InvalidInput(format!(
                "coordination covers {} users, profile has {}",
                coord.num_users(),
                profile.num_users()
            )));
        }
        Ok(Self {
            profile,
            rho,
            coord,
        })
    }
}

/// Monte-Carlo mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std_err = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, std_err }
    }
}

fn per_draw<F>(samples: &ChannelSamples, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[CMatrix]) -> Result<f64> + Sync,
{
    if samples.is_empty() {
        return Err(Error::InvalidInput("no channel draws".into()));
    }
    samples.draws.par_iter().map(|d| f(d)).collect()
}

/// Covariance matrices `W_k diag(P_k) W_k^H` for one slot.
pub fn slot_covariances(profile: &UiuProfile, slot: &[&[f64]]) -> Vec<CMatrix> {
    slot.iter()
        .enumerate()
        .map(|(k, p)| precoder(profile.transmit_basis(k), p))
        .collect()
}

fn interference_plus_noise(
    h: &[CMatrix],
    rho: f64,
    covs: &[CMatrix],
    interferers: &[usize],
) -> CMatrix {
    let n_r = h[0].nrows();
    let mut x = identity(n_r);
    for &l in interferers {
        x += sandwich(&h[l], &covs[l]) * C64::new(rho, 0.0);
    }
    x
}

/// `log2|X + ρ H_k Q_k H_k^H| − log2|X|` with `X = I + ρ Σ_{ℓ∈interferers} H_ℓ Q_ℓ H_ℓ^H`.
fn conditional_rate_draw(
    h: &[CMatrix],
    rho: f64,
    covs: &[CMatrix],
    user: usize,
    interferers: &[usize],
) -> Result<f64> {
    let x = interference_plus_noise(h, rho, covs, interferers);
    let signal = sandwich(&h[user], &covs[user]) * C64::new(rho, 0.0);
    let with = &x + signal;
    Ok((log_det_pd(&with)? - log_det_pd(&x)?) / std::f64::consts::LN_2)
}

/// Per-draw rate of `user` with the given covariance matrices and the given
/// set of undecoded interferers.
pub fn rate_exact_per_draw(
    profile: &UiuProfile,
    rho: f64,
    covs: &[CMatrix],
    user: usize,
    interferers: &[usize],
    samples: &ChannelSamples,
) -> Result<Vec<f64>> {
    if covs.len() != profile.num_users() {
        return Err(Error::InvalidInput("one covariance per user required".into()));
    }
    per_draw(samples, |h| conditional_rate_draw(h, rho, covs, user, interferers))
}

/// Ergodic SIC rate of user `k` under decoding order `order`, for the slot
/// powers `slot[ℓ][j]`.
pub fn rate_sic_exact(
    ctx: &GameContext,
    order: &DecodingOrder,
    slot: &[&[f64]],
    k: usize,
    samples: &ChannelSamples,
) -> Result<Estimate> {
    let covs = slot_covariances(&ctx.profile, slot);
    let v = rate_exact_per_draw(
        &ctx.profile,
        ctx.rho,
        &covs,
        k,
        &order.decoded_after(k),
        samples,
    )?;
    Ok(Estimate::from_samples(&v))
}

/// Ergodic SUD rate of user `k`: every other user is interference.
pub fn rate_sud_exact(
    ctx: &GameContext,
    slot: &[&[f64]],
    k: usize,
    samples: &ChannelSamples,
) -> Result<Estimate> {
    let covs = slot_covariances(&ctx.profile, slot);
    let others: Vec<usize> = (0..ctx.profile.num_users()).filter(|&l| l != k).collect();
    let v = rate_exact_per_draw(&ctx.profile, ctx.rho, &covs, k, &others, samples)?;
    Ok(Estimate::from_samples(&v))
}

/// Per-draw utility `Σ_s p_s R_k^(s)` of user `k`.
pub fn utility_per_draw(
    ctx: &GameContext,
    powers: &SpaceTimePowerProfile,
    k: usize,
    samples: &ChannelSamples,
) -> Result<Vec<f64>> {
    powers.check_feasible(&ctx.coord, ctx.profile.n_t())?;
    let mut acc = vec![0.0; samples.len()];
    for s in 0..ctx.coord.num_slots() {
        let w = ctx.coord.weight(s);
        if w == 0.0 {
            continue;
        }
        let covs = slot_covariances(&ctx.profile, &powers.slot(s));
        let v = rate_exact_per_draw(
            &ctx.profile,
            ctx.rho,
            &covs,
            k,
            &ctx.coord.interferers(s, k),
            samples,
        )?;
        for (a, x) in acc.iter_mut().zip(v) {
            *a += w * x;
        }
    }
    Ok(acc)
}

/// Exact utility of user `k` under the context's coordination law (SIC or SUD).
pub fn utility_sic(
    ctx: &GameContext,
    powers: &SpaceTimePowerProfile,
    k: usize,
    samples: &ChannelSamples,
) -> Result<Estimate> {
    Ok(Estimate::from_samples(&utility_per_draw(ctx, powers, k, samples)?))
}

/// Exact network sum-rate `Σ_k u_k`.
pub fn sum_rate_exact(
    ctx: &GameContext,
    powers: &SpaceTimePowerProfile,
    samples: &ChannelSamples,
) -> Result<Estimate> {
    let mut acc = vec![0.0; samples.len()];
    for k in 0..ctx.profile.num_users() {
        for (a, x) in acc.iter_mut().zip(utility_per_draw(ctx, powers, k, samples)?) {
            *a += x;
        }
    }
    Ok(Estimate::from_samples(&acc))
}

/// Per-draw `log2|I + ρ Σ_k H_k Q_k H_k^H|`.
pub fn joint_log_det_per_draw(
    profile: &UiuProfile,
    rho: f64,
    slot: &[&[f64]],
    samples: &ChannelSamples,
) -> Result<Vec<f64>> {
    let covs = slot_covariances(profile, slot);
    let all: Vec<usize> = (0..profile.num_users()).collect();
    per_draw(samples, |h| {
        let x = interference_plus_noise(h, rho, &covs, &all);
        Ok(log_det_pd(&x)? / std::f64::consts::LN_2)
    })
}

/// `Σ_i Tr{(A_i − B_i)[(Σ_{j≤i} B_j)^{-1} − (Σ_{j≤i} A_j)^{-1}]}`.
///
/// `A_1`, `B_1` must be positive definite and the rest positive semidefinite;
/// the value is then nonnegative and vanishes only when the stacks coincide.
pub fn trace_inequality_gap(a: &[CMatrix], b: &[CMatrix]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::InvalidInput(
            "stacks must be nonempty and of equal length".into(),
        ));
    }
    let n = a[0].nrows();
    for m in a.iter().chain(b) {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::InvalidInput("all matrices must share one size".into()));
        }
        ensure_hermitian(m, 1e-10)?;
    }
    let mut sum_a = CMatrix::zeros(n, n);
    let mut sum_b = CMatrix::zeros(n, n);
    let mut gap = 0.0;
    for (ai, bi) in a.iter().zip(b) {
        sum_a += ai;
        sum_b += bi;
        let diff = ai - bi;
        let inv = inverse_pd(&sum_b)? - inverse_pd(&sum_a)?;
        gap += trace_of_product(&diff, &inv);
    }
    Ok(gap)
}

/// Per-draw value of the diagonally-strict-concavity expression for one slot,
/// in nats.
fn dsc_draw(
    h: &[CMatrix],
    rho: f64,
    coord: &CoordinationDistribution,
    slot: usize,
    covs_a: &[CMatrix],
    covs_b: &[CMatrix],
) -> Result<f64> {
    let users = h.len();
    let n_r = h[0].nrows();
    let scale = C64::new(rho, 0.0);
    let received = |covs: &[CMatrix], k: usize| sandwich(&h[k], &covs[k]) * scale;
    match coord.order(slot) {
        Some(order) => {
            // Users stacked from the last decoded to the first, identity on
            // top, so that partial sums are the matrices inverted for each
            // decoding rank.
            let mut stack_a = Vec::with_capacity(users);
            let mut stack_b = Vec::with_capacity(users);
            for r in (0..users).rev() {
                let k = order.user_at(r);
                let mut ma = received(covs_a, k);
                let mut mb = received(covs_b, k);
                if r == users - 1 {
                    ma += identity(n_r);
                    mb += identity(n_r);
                }
                stack_a.push(ma);
                stack_b.push(mb);
            }
            // Gap(A'', A') with A'' = second profile.
            trace_inequality_gap(&stack_b, &stack_a)
        }
        None => {
            let mut ba = identity(n_r);
            let mut bb = identity(n_r);
            for k in 0..users {
                ba += received(covs_a, k);
                bb += received(covs_b, k);
            }
            trace_inequality_gap(&[ba], &[bb])
        }
    }
}

/// Monte-Carlo estimate of `𝒞 = Σ_s p_s 𝒯_s` for two strategy profiles.
pub fn dsc_gap(
    ctx: &GameContext,
    first: &SpaceTimePowerProfile,
    second: &SpaceTimePowerProfile,
    samples: &ChannelSamples,
) -> Result<Estimate> {
    let n_t = ctx.profile.n_t();
    first.check_feasible(&ctx.coord, n_t)?;
    second.check_feasible(&ctx.coord, n_t)?;
    let slots: Vec<(f64, Vec<CMatrix>, Vec<CMatrix>)> = (0..ctx.coord.num_slots())
        .map(|s| {
            (
                ctx.coord.weight(s),
                slot_covariances(&ctx.profile, &first.slot(s)),
                slot_covariances(&ctx.profile, &second.slot(s)),
            )
        })
        .collect();
    let v = per_draw(samples, |h| {
        let mut acc = 0.0;
        for (s, (w, ca, cb)) in slots.iter().enumerate() {
            if *w > 0.0 {
                acc += w * dsc_draw(h, ctx.rho, &ctx.coord, s, ca, cb)?;
            }
        }
        Ok(acc)
    })?;
    Ok(Estimate::from_samples(&v))
}

/// Second derivative in bits of `λ ↦ R_k(λ Q' + (1−λ) Q'')` with every other
/// user fixed at `covs[ℓ]` and the interferer set given by `order`.
#[allow(clippy::too_many_arguments)]
pub fn concavity_second_derivative(
    profile: &UiuProfile,
    rho: f64,
    order: &DecodingOrder,
    k: usize,
    endpoint_a: &CMatrix,
    endpoint_b: &CMatrix,
    covs: &[CMatrix],
    lambda: f64,
    samples: &ChannelSamples,
) -> Result<Estimate> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("λ = {lambda} outside [0, 1]")));
    }
    let n_t = profile.n_t();
    if covs.len() != profile.num_users() || endpoint_a.shape() != (n_t, n_t) || endpoint_b.shape() != (n_t, n_t) {
        return Err(Error::InvalidInput("covariance shapes do not match the profile".into()));
    }
    let delta = endpoint_a - endpoint_b;
    let q = endpoint_a * C64::new(lambda, 0.0) + endpoint_b * C64::new(1.0 - lambda, 0.0);
    let interferers = order.decoded_after(k);
    let v = per_draw(samples, |h| {
        let mut m = interference_plus_noise(h, rho, covs, &interferers);
        m += sandwich(&h[k], &q) * C64::new(rho, 0.0);
        let d = sandwich(&h[k], &delta) * C64::new(rho, 0.0);
        let md = inverse_pd(&m)? * d;
        Ok(-trace_of_product(&md, &md) / std::f64::consts::LN_2)
    })?;
    Ok(Estimate::from_samples(&v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserKkt {
    /// Largest `|∂u/∂P − p_s λ|` over active modes and `(∂u/∂P − p_s λ)⁺`
    /// over inactive ones.
    pub stationarity: f64,
    /// `λ_k · slack_k`.
    pub slackness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub users: Vec<UserKkt>,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.users
            .iter()
            .map(|u| u.stationarity.max(u.slackness.abs()))
            .fold(0.0, f64::max)
    }
}

/// Threshold below which a mode counts as inactive.
pub const ACTIVE_THRESHOLD: f64 = 1e-12;

/// KKT residuals of a strategy profile. `gradients[k][s][j]` is
/// `∂u_k/∂P_k^(s)(j)` (probability weight included).
pub fn kkt_residual(
    coord: &CoordinationDistribution,
    powers: &SpaceTimePowerProfile,
    n_t: usize,
    multipliers: &[f64],
    gradients: &[Vec<Vec<f64>>],
) -> Result<KktReport> {
    if multipliers.len() != powers.num_users() || gradients.len() != powers.num_users() {
        return Err(Error::InvalidInput("one multiplier and gradient per user".into()));
    }
    let mut users = Vec::with_capacity(powers.num_users());
    for k in 0..powers.num_users() {
        let lambda = multipliers[k];
        if lambda < 0.0 {
            return Err(Error::InvalidInput(format!(
                "negative multiplier {lambda} for user {k}"
            )));
        }
        let mut stationarity = 0.0f64;
        for (s, (ps, gs)) in powers.powers[k].iter().zip(&gradients[k]).enumerate() {
            let target = coord.weight(s) * lambda;
            for (&p, &g) in ps.iter().zip(gs) {
                let r = if p > ACTIVE_THRESHOLD * (1.0 + powers.budgets[k]) {
                    (g - target).abs()
                } else {
                    (g - target).max(0.0)
                };
                stationarity = stationarity.max(r);
            }
        }
        let slackness = lambda * powers.slack(k, coord, n_t);
        users.push(UserKkt {
            stationarity,
            slackness,
        });
    }
    Ok(KktReport { users })
}

/// Multipliers that best explain the gradients on the active modes:
/// `λ_k = Σ g / Σ p_s` over active `(s, j)`.
pub fn fit_multipliers(
    coord: &CoordinationDistribution,
    powers: &SpaceTimePowerProfile,
    gradients: &[Vec<Vec<f64>>],
) -> Vec<f64> {
    (0..powers.num_users())
        .map(|k| {
            let mut num = 0.0;
            let mut den = 0.0;
            for (s, (ps, gs)) in powers.powers[k].iter().zip(&gradients[k]).enumerate() {
                for (&p, &g) in ps.iter().zip(gs) {
                    if p > ACTIVE_THRESHOLD * (1.0 + powers.budgets[k]) {
                        num += g;
                        den += coord.weight(s);
                    }
                }
            }
            if den > 0.0 {
                (num / den).max(0.0)
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_channel;

    fn scalar_ctx(users: usize, coord: CoordinationDistribution) -> GameContext {
        let profile = UiuProfile::iid(users, 1, 1).unwrap();
        GameContext::new(profile, 1.0, coord).unwrap()
    }

    fn unit_channel(users: usize) -> ChannelSamples {
        ChannelSamples {
            draws: vec![vec![CMatrix::from_element(1, 1, C64::new(1.0, 0.0)); users]],
            seed: 0,
            count: 1,
        }
    }

    #[test]
    fn orders_are_bijections() {
        let o = DecodingOrder::from_sequence(vec![2, 0, 1]).unwrap();
        for k in 0..3 {
            assert_eq!(o.user_at(o.rank(k)), k);
        }
        assert_eq!(o.decoded_after(2), vec![0, 1]);
        assert_eq!(o.decoded_after(1), Vec::<usize>::new());
        assert!(DecodingOrder::from_sequence(vec![0, 0]).is_err());
        assert!(DecodingOrder::from_ranks(vec![0, 2]).is_err());
        assert_eq!(DecodingOrder::all(3).len(), 6);
    }

    #[test]
    fn coordination_validates_probabilities() {
        let o = DecodingOrder::identity(2);
        assert!(CoordinationDistribution::sic(2, vec![(o.clone(), 0.9)]).is_err());
        assert!(CoordinationDistribution::sic(2, vec![(o.clone(), 0.5), (o, 0.5)]).is_err());
        assert!(CoordinationDistribution::two_user(1.5).is_err());
        let c = CoordinationDistribution::two_user(0.3).unwrap();
        // Slot 0 decodes user 0 second.
        assert_eq!(c.interferers(0, 0), Vec::<usize>::new());
        assert_eq!(c.interferers(0, 1), vec![0]);
        assert!((c.weight(0) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn scalar_single_user_rate_is_one_bit() {
        let ctx = scalar_ctx(1, CoordinationDistribution::fixed(DecodingOrder::identity(1)));
        let r = rate_sic_exact(&ctx, &DecodingOrder::identity(1), &[&[1.0]], 0, &unit_channel(1))
            .unwrap();
        assert!((r.mean - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_power_gives_exactly_zero_rate() {
        let profile = UiuProfile::iid(2, 3, 2).unwrap();
        let samples = sample_channel(&profile, 50, 3).unwrap();
        let ctx = GameContext::new(
            profile,
            2.0,
            CoordinationDistribution::fixed(DecodingOrder::identity(2)),
        )
        .unwrap();
        let zero = [0.0, 0.0];
        let other = [0.4, 1.3];
        let covs = slot_covariances(&ctx.profile, &[&zero, &other]);
        let v = rate_exact_per_draw(&ctx.profile, ctx.rho, &covs, 0, &[1], &samples).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn last_decoded_rate_ignores_others() {
        let ctx = scalar_ctx(2, CoordinationDistribution::fixed(DecodingOrder::identity(2)));
        let order = DecodingOrder::identity(2);
        let a = rate_sic_exact(&ctx, &order, &[&[0.1], &[1.0]], 1, &unit_channel(2)).unwrap();
        let b = rate_sic_exact(&ctx, &order, &[&[7.0], &[1.0]], 1, &unit_channel(2)).unwrap();
        assert_eq!(a.mean, b.mean);
    }

    #[test]
    fn scalar_sud_closed_form() {
        let ctx = scalar_ctx(2, CoordinationDistribution::sud(2));
        let (p1, p2) = (0.8, 2.5);
        let r = rate_sud_exact(&ctx, &[&[p1], &[p2]], 0, &unit_channel(2)).unwrap();
        let expect = (1.0f64 + p1 + p2).log2() - (1.0f64 + p2).log2();
        assert!((r.mean - expect).abs() < 1e-13);
    }

    #[test]
    fn utility_mixes_orders_linearly() {
        let profile = UiuProfile::iid(2, 2, 2).unwrap();
        let samples = sample_channel(&profile, 40, 5).unwrap();
        let coord = CoordinationDistribution::two_user(0.5).unwrap();
        let ctx = GameContext::new(profile, 3.0, coord.clone()).unwrap();
        let powers = SpaceTimePowerProfile::uniform(&[1.0, 1.0], 2, 2);
        let u = utility_sic(&ctx, &powers, 0, &samples).unwrap();
        let r0 = rate_sic_exact(&ctx, coord.order(0).unwrap(), &powers.slot(0), 0, &samples).unwrap();
        let r1 = rate_sic_exact(&ctx, coord.order(1).unwrap(), &powers.slot(1), 0, &samples).unwrap();
        assert!((u.mean - 0.5 * (r0.mean + r1.mean)).abs() < 1e-12);
    }

    #[test]
    fn trace_gap_scalar_and_equal() {
        let a = CMatrix::from_element(1, 1, C64::new(2.0, 0.0));
        let b = CMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        assert!((trace_inequality_gap(&[a.clone()], &[b]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(trace_inequality_gap(&[a.clone()], &[a]).unwrap(), 0.0);
    }

    #[test]
    fn trace_gap_rejects_non_hermitian() {
        let mut a = CMatrix::identity(2, 2);
        a[(0, 1)] = C64::new(1.0, 0.0);
        let b = CMatrix::identity(2, 2);
        assert!(matches!(
            trace_inequality_gap(&[a], &[b]),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn kkt_rejects_negative_multiplier() {
        let coord = CoordinationDistribution::sud(1);
        let powers = SpaceTimePowerProfile::uniform(&[1.0], 1, 2);
        let g = vec![vec![vec![0.1, 0.1]]];
        assert!(kkt_residual(&coord, &powers, 2, &[-1.0], &g).is_err());
        let rep = kkt_residual(&coord, &powers, 2, &[0.1], &g).unwrap();
        assert!(rep.max_residual() < 1e-15);
    }

    #[test]
    fn feasibility_check() {
        let coord = CoordinationDistribution::two_user(0.5).unwrap();
        let mut p = SpaceTimePowerProfile::uniform(&[1.0, 1.0], 2, 2);
        assert!(p.check_feasible(&coord, 2).is_ok());
        p.powers[0][0] = vec![3.0, 3.0];
        assert!(p.check_feasible(&coord, 2).is_err());
    }
}
