//! Water-filling solvers.
//!
//! [`waterfill`] is the closed form for logarithmic utilities: every mode
//! `(s, j)` with gain `c` and probability weight `p_s` receives
//! `[1/(ln2 n_r λ) − 1/c]⁺`, with a single multiplier `λ` for the weighted
//! budget `Σ_s p_s Σ_j P(s, j) = B`.
//!
//! [`solve_marginal_allocation`] handles the tied variants where one variable
//! feeds several logarithms (a power shared across decoding orders, or a
//! scale factor applied to all antennas): the marginal of every variable is a
//! decreasing sum `Σ a c / (n_r ln2 (1 + c x))` and the multiplier is found
//! by bisection.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// `powers[s][j]`.
    pub powers: Vec<Vec<f64>>,
    /// Multiplier of the power budget, per unit of power.
    pub lambda: f64,
}

impl Allocation {
    /// The common value `1/(ln2 n_r λ)` shared by the active modes.
    pub fn water_level(&self, n_r: usize) -> f64 {
        1.0 / (LN_2 * n_r as f64 * self.lambda)
    }
}

/// Weighted water-filling over the modes `(s, j)`.
///
/// `weights[s]` is the probability of slot `s`, `coeffs[s][j] ≥ 0` the gain
/// of mode `j` in that slot and `budget` the total `n_t P̄`. Modes with a zero
/// gain get no power. Slots with a zero weight do not consume budget; they
/// receive the power the common water level would give them.
pub fn waterfill(weights: &[f64], coeffs: &[Vec<f64>], budget: f64, n_r: usize) -> Result<Allocation> {
    if weights.len() != coeffs.len() {
        return Err(Error::InvalidInput("one weight per slot required".into()));
    }
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(Error::InvalidInput(format!("budget must be positive, got {budget}")));
    }
    if coeffs.iter().flatten().any(|&c| !(c >= 0.0) || !c.is_finite()) {
        return Err(Error::InvalidInput("gains must be nonnegative and finite".into()));
    }
    // (1/c, weight) for every mode that consumes budget.
    let mut active: Vec<(f64, f64)> = Vec::new();
    for (w, row) in weights.iter().zip(coeffs) {
        if *w > 0.0 {
            active.extend(row.iter().filter(|&&c| c > 0.0).map(|&c| (1.0 / c, *w)));
        }
    }
    if active.is_empty() {
        return Err(Error::NoActiveMode);
    }
    active.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut weight_sum = 0.0;
    let mut inv_sum = 0.0;
    let mut level = 0.0;
    for (m, &(inv, w)) in active.iter().enumerate() {
        weight_sum += w;
        inv_sum += w * inv;
        level = (budget + inv_sum) / weight_sum;
        match active.get(m + 1) {
            Some(&(next, _)) if level > next => continue,
            _ => break,
        }
    }
    let powers = coeffs
        .iter()
        .map(|row| {
            row.iter()
                .map(|&c| if c > 0.0 { (level - 1.0 / c).max(0.0) } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(Allocation {
        powers,
        lambda: 1.0 / (LN_2 * n_r as f64 * level),
    })
}

/// A scalar decision variable whose marginal utility is
/// `Σ_t a_t c_t / (n_r ln2 (1 + c_t x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalVariable {
    /// Share of the budget consumed per unit of the variable.
    pub weight: f64,
    /// `(a_t, c_t)` pairs.
    pub terms: Vec<(f64, f64)>,
}

impl MarginalVariable {
    pub fn marginal(&self, x: f64, n_r: usize) -> f64 {
        self.terms
            .iter()
            .map(|&(a, c)| a * c / (1.0 + c * x))
            .sum::<f64>()
            / (n_r as f64 * LN_2)
    }

    fn slope(&self, x: f64, n_r: usize) -> f64 {
        -self
            .terms
            .iter()
            .map(|&(a, c)| a * c * c / (1.0 + c * x).powi(2))
            .sum::<f64>()
            / (n_r as f64 * LN_2)
    }

    /// The `x ≥ 0` whose marginal equals `mu`.
    fn level(&self, mu: f64, n_r: usize) -> f64 {
        if self.marginal(0.0, n_r) <= mu {
            return 0.0;
        }
        let total_a: f64 = self.terms.iter().map(|t| t.0).sum();
        let mut hi = total_a / (n_r as f64 * LN_2 * mu);
        let mut lo = 0.0;
        // Newton from the left is monotone for a convex decreasing marginal;
        // the bracket guards against round-off.
        let mut x = 0.0;
        for _ in 0..200 {
            let f = self.marginal(x, n_r) - mu;
            if f > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let mut next = x - f / self.slope(x, n_r);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-15 * next.abs().max(1e-300) {
                return next;
            }
            x = next;
        }
        x
    }
}

/// Maximise `Σ_v ∫ marginal_v` subject to `Σ_v weight_v x_v = budget`,
/// `x ≥ 0`. Returns the variables and the multiplier `μ` per unit of budget.
pub fn solve_marginal_allocation(
    vars: &[MarginalVariable],
    budget: f64,
    n_r: usize,
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(Error::InvalidInput(format!("budget must be positive, got {budget}")));
    }
    let mu_max = vars
        .iter()
        .filter(|v| v.weight > 0.0)
        .map(|v| v.marginal(0.0, n_r))
        .fold(0.0, f64::max);
    if !(mu_max > 0.0) {
        return Err(Error::NoActiveMode);
    }
    let spent = |mu: f64| -> f64 {
        vars.iter()
            .filter(|v| v.weight > 0.0)
            .map(|v| v.weight * v.level(mu, n_r))
            .sum()
    };
    let mut hi = mu_max;
    let mut lo = mu_max * 0.5;
    while spent(lo) < budget {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::Numerical("could not bracket the multiplier".into()));
        }
    }
    let mut mu = lo;
    for _ in 0..400 {
        mu = (lo * hi).sqrt();
        let used = spent(mu);
        if (used - budget).abs() <= tol * budget {
            break;
        }
        if used > budget {
            lo = mu;
        } else {
            hi = mu;
        }
        if hi / lo - 1.0 < 1e-16 {
            break;
        }
    }
    Ok((vars.iter().map(|v| v.level(mu, n_r)).collect(), mu))
}

/// KKT residuals of an allocation: `(stationarity, complementary slackness)`.
///
/// Stationarity is `w_v |marginal_v(x_v) − μ|` on active variables and
/// `w_v (marginal_v(0) − μ)⁺` on inactive ones.
pub fn marginal_kkt(vars: &[MarginalVariable], x: &[f64], mu: f64, budget: f64, n_r: usize) -> (f64, f64) {
    let mut stationarity = 0.0f64;
    let mut used = 0.0;
    for (v, &xv) in vars.iter().zip(x) {
        used += v.weight * xv;
        let r = if xv > 1e-12 * (1.0 + budget) {
            (v.marginal(xv, n_r) - mu).abs()
        } else {
            (v.marginal(0.0, n_r) - mu).max(0.0)
        };
        stationarity = stationarity.max(v.weight * r);
    }
    (stationarity, mu * (budget - used))
}
