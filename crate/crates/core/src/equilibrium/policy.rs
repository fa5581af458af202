//! Power-allocation policies and their registry.
//!
//! A policy turns the per-mode gains of one user (frozen at the current
//! fixed-point parameters) into that user's powers. The three built-in
//! policies are registered under the names accepted by scenario files and the
//! command line:
//!
//! | name            | strategy set                                              |
//! |-----------------|-----------------------------------------------------------|
//! | `space_time`    | free `P^(s)(j)` per slot and mode                         |
//! | `spatial_only`  | one `P(j)` shared by every slot                           |
//! | `temporal_only` | `P^(s)(j) = α^(s) P̄`, uniform over the antennas           |

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use super::waterfill::{marginal_kkt, solve_marginal_allocation, waterfill, Allocation, MarginalVariable};
use crate::{Error, Result};

/// One user's best-response problem with the gains frozen.
#[derive(Debug, Clone, Copy)]
pub struct ResponseProblem<'a> {
    /// Probability of each slot.
    pub weights: &'a [f64],
    /// `coeffs[s][j] = s_block ρ γ_k^(s)(j)`.
    pub coeffs: &'a [Vec<f64>],
    /// Per-antenna budget `P̄_k`.
    pub budget: f64,
    pub n_t: usize,
    pub n_r: usize,
    /// Relative budget error accepted by iterative allocators.
    pub tol: f64,
}

impl ResponseProblem<'_> {
    pub fn total_budget(&self) -> f64 {
        self.n_t as f64 * self.budget
    }
}

/// Stationarity and complementary-slackness residuals of one user's powers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolicyKkt {
    pub stationarity: f64,
    pub slackness: f64,
}

pub trait PowerAllocationPolicy: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    /// Optimal powers for the frozen gains.
    fn allocate(&self, problem: &ResponseProblem<'_>) -> Result<Allocation>;

    /// KKT residuals of `powers` with multiplier `lambda` (per unit power).
    fn kkt(&self, problem: &ResponseProblem<'_>, powers: &[Vec<f64>], lambda: f64) -> PolicyKkt;

    /// A feasible starting point that saturates the budget.
    fn uniform(&self, problem_slots: usize, n_t: usize, budget: f64) -> Vec<Vec<f64>> {
        vec![vec![budget; n_t]; problem_slots]
    }

    /// Map arbitrary nonnegative powers into this policy's strategy set.
    fn project(&self, weights: &[f64], powers: &[Vec<f64>], budget: f64) -> Vec<Vec<f64>>;
}

fn budget_scale(weights: &[f64], powers: &[Vec<f64>], total: f64) -> f64 {
    let used: f64 = weights
        .iter()
        .zip(powers)
        .map(|(w, p)| w * p.iter().sum::<f64>())
        .sum();
    if used > 0.0 {
        total / used
    } else {
        0.0
    }
}

/// Joint space-time allocation: water-filling over every `(slot, mode)`.
#[derive(Debug, Default, Clone, Copy)]
pub struct SpaceTime;

impl PowerAllocationPolicy for SpaceTime {
    fn name(&self) -> &'static str {
        "space_time"
    }

    fn allocate(&self, problem: &ResponseProblem<'_>) -> Result<Allocation> {
        waterfill(problem.weights, problem.coeffs, problem.total_budget(), problem.n_r)
    }

    fn kkt(&self, problem: &ResponseProblem<'_>, powers: &[Vec<f64>], lambda: f64) -> PolicyKkt {
        let vars: Vec<MarginalVariable> = problem
            .weights
            .iter()
            .zip(problem.coeffs)
            .flat_map(|(&w, row)| {
                row.iter().map(move |&c| MarginalVariable {
                    weight: w,
                    terms: vec![(1.0, c)],
                })
            })
            .collect();
        let x: Vec<f64> = powers.iter().flatten().copied().collect();
        let (stationarity, slackness) = marginal_kkt(&vars, &x, lambda, problem.total_budget(), problem.n_r);
        PolicyKkt {
            stationarity,
            slackness,
        }
    }

    fn project(&self, weights: &[f64], powers: &[Vec<f64>], budget: f64) -> Vec<Vec<f64>> {
        let n_t = powers.first().map_or(0, Vec::len);
        let scale = budget_scale(weights, powers, n_t as f64 * budget);
        if scale == 0.0 {
            return self.uniform(powers.len(), n_t, budget);
        }
        powers.iter().map(|p| p.iter().map(|x| x * scale).collect()).collect()
    }
}

/// Spatial allocation: the same powers whatever the decoding order.
#[derive(Debug, Default, Clone, Copy)]
pub struct SpatialOnly;

impl SpatialOnly {
    fn variables(problem: &ResponseProblem<'_>) -> Vec<MarginalVariable> {
        (0..problem.n_t)
            .map(|j| MarginalVariable {
                weight: 1.0,
                terms: problem
                    .weights
                    .iter()
                    .zip(problem.coeffs)
                    .filter(|(w, row)| **w > 0.0 && row[j] > 0.0)
                    .map(|(&w, row)| (w, row[j]))
                    .collect(),
            })
            .collect()
    }
}

impl PowerAllocationPolicy for SpatialOnly {
    fn name(&self) -> &'static str {
        "spatial_only"
    }

    fn allocate(&self, problem: &ResponseProblem<'_>) -> Result<Allocation> {
        let vars = Self::variables(problem);
        let (x, mu) = solve_marginal_allocation(&vars, problem.total_budget(), problem.n_r, problem.tol)?;
        Ok(Allocation {
            powers: vec![x; problem.weights.len()],
            lambda: mu,
        })
    }

    fn kkt(&self, problem: &ResponseProblem<'_>, powers: &[Vec<f64>], lambda: f64) -> PolicyKkt {
        let vars = Self::variables(problem);
        let (stationarity, slackness) =
            marginal_kkt(&vars, &powers[0], lambda, problem.total_budget(), problem.n_r);
        // Distance from the tied strategy set counts as a violation.
        let untied = powers
            .iter()
            .flat_map(|p| p.iter().zip(&powers[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        PolicyKkt {
            stationarity: stationarity.max(untied),
            slackness,
        }
    }

    fn project(&self, weights: &[f64], powers: &[Vec<f64>], budget: f64) -> Vec<Vec<f64>> {
        let n_t = powers.first().map_or(0, Vec::len);
        let mut avg = vec![0.0; n_t];
        for (w, p) in weights.iter().zip(powers) {
            for (a, x) in avg.iter_mut().zip(p) {
                *a += w * x;
            }
        }
        let used: f64 = avg.iter().sum();
        if used <= 0.0 {
            return self.uniform(powers.len(), n_t, budget);
        }
        let scale = n_t as f64 * budget / used;
        vec![avg.iter().map(|x| x * scale).collect(); powers.len()]
    }
}

/// Temporal allocation: uniform over the antennas, scaled per decoding order.
#[derive(Debug, Default, Clone, Copy)]
pub struct TemporalOnly;

impl TemporalOnly {
    /// One variable `α^(s)` per slot; budget `Σ_s p_s α^(s) = 1`.
    fn variables(problem: &ResponseProblem<'_>) -> Vec<MarginalVariable> {
        problem
            .weights
            .iter()
            .zip(problem.coeffs)
            .map(|(&w, row)| MarginalVariable {
                weight: w,
                terms: row
                    .iter()
                    .filter(|&&c| c > 0.0)
                    .map(|&c| (1.0, c * problem.budget))
                    .collect(),
            })
            .collect()
    }
}

impl PowerAllocationPolicy for TemporalOnly {
    fn name(&self) -> &'static str {
        "temporal_only"
    }

    fn allocate(&self, problem: &ResponseProblem<'_>) -> Result<Allocation> {
        let vars = Self::variables(problem);
        let (alpha, mu) = solve_marginal_allocation(&vars, 1.0, problem.n_r, problem.tol)?;
        Ok(Allocation {
            powers: alpha
                .iter()
                .map(|a| vec![a * problem.budget; problem.n_t])
                .collect(),
            lambda: mu / problem.total_budget(),
        })
    }

    fn kkt(&self, problem: &ResponseProblem<'_>, powers: &[Vec<f64>], lambda: f64) -> PolicyKkt {
        let vars = Self::variables(problem);
        let alpha: Vec<f64> = powers.iter().map(|p| p[0] / problem.budget).collect();
        let total = problem.total_budget();
        let (st, sl) = marginal_kkt(&vars, &alpha, lambda * total, 1.0, problem.n_r);
        let untied = powers
            .iter()
            .flat_map(|p| p.iter().map(move |x| (x - p[0]).abs()))
            .fold(0.0, f64::max);
        PolicyKkt {
            stationarity: (st / total).max(untied),
            slackness: sl,
        }
    }

    fn project(&self, weights: &[f64], powers: &[Vec<f64>], budget: f64) -> Vec<Vec<f64>> {
        let n_t = powers.first().map_or(0, Vec::len);
        let flat: Vec<Vec<f64>> = powers
            .iter()
            .map(|p| vec![p.iter().sum::<f64>() / n_t as f64; n_t])
            .collect();
        let scale = budget_scale(weights, &flat, n_t as f64 * budget);
        if scale == 0.0 {
            return self.uniform(powers.len(), n_t, budget);
        }
        flat.iter().map(|p| p.iter().map(|x| x * scale).collect()).collect()
    }
}

/// Name → policy lookup.
#[derive(Debug, Clone)]
pub struct PolicyRegistry {
    policies: BTreeMap<String, Arc<dyn PowerAllocationPolicy>>,
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(SpaceTime));
        reg.register(Arc::new(SpatialOnly));
        reg.register(Arc::new(TemporalOnly));
        reg
    }
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        Self {
            policies: BTreeMap::new(),
        }
    }

    /// Add or replace a policy under its own name.
    pub fn register(&mut self, policy: Arc<dyn PowerAllocationPolicy>) {
        self.policies.insert(policy.name().to_string(), policy);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn PowerAllocationPolicy>> {
        let key = match name {
            "spatial" => "spatial_only",
            "temporal" => "temporal_only",
            "spacetime" | "space-time" => "space_time",
            other => other,
        };
        self.policies
            .get(key)
            .cloned()
            .ok_or_else(|| Error::UnknownPolicy(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.policies.keys().map(String::as_str).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem<'a>(w: &'a [f64], c: &'a [Vec<f64>]) -> ResponseProblem<'a> {
        ResponseProblem {
            weights: w,
            coeffs: c,
            budget: 2.0,
            n_t: 3,
            n_r: 3,
            tol: 1e-13,
        }
    }

    #[test]
    fn registry_resolves_builtin_names() {
        let reg = PolicyRegistry::default();
        assert_eq!(reg.names(), vec!["space_time", "spatial_only", "temporal_only"]);
        assert_eq!(reg.get("spatial").unwrap().name(), "spatial_only");
        assert!(matches!(reg.get("bogus"), Err(Error::UnknownPolicy(_))));
    }

    #[test]
    fn spatial_powers_are_tied_and_budget_tight() {
        let w = [0.4, 0.6];
        let c = vec![vec![2.0, 1.0, 0.3], vec![0.5, 3.0, 0.1]];
        let p = problem(&w, &c);
        let a = SpatialOnly.allocate(&p).unwrap();
        assert_eq!(a.powers[0], a.powers[1]);
        assert!((a.powers[0].iter().sum::<f64>() - 6.0).abs() < 1e-10);
        let k = SpatialOnly.kkt(&p, &a.powers, a.lambda);
        assert!(k.stationarity < 1e-10, "{k:?}");
    }

    #[test]
    fn temporal_powers_are_flat_per_slot() {
        let w = [0.5, 0.5];
        let c = vec![vec![2.0, 1.0, 0.3], vec![0.5, 3.0, 0.1]];
        let p = problem(&w, &c);
        let a = TemporalOnly.allocate(&p).unwrap();
        for row in &a.powers {
            assert!(row.iter().all(|&x| (x - row[0]).abs() < 1e-15));
        }
        let used: f64 = w.iter().zip(&a.powers).map(|(w, r)| w * r.iter().sum::<f64>()).sum();
        assert!((used - 6.0).abs() < 1e-10);
        let k = TemporalOnly.kkt(&p, &a.powers, a.lambda);
        assert!(k.stationarity < 1e-10, "{k:?}");
    }

    #[test]
    fn projections_land_in_the_strategy_sets() {
        let w = [0.25, 0.75];
        let raw = vec![vec![1.0, 0.0, 5.0], vec![0.3, 0.3, 0.0]];
        for policy in [&SpaceTime as &dyn PowerAllocationPolicy, &SpatialOnly, &TemporalOnly] {
            let p = policy.project(&w, &raw, 2.0);
            let used: f64 = w.iter().zip(&p).map(|(w, r)| w * r.iter().sum::<f64>()).sum();
            assert!((used - 6.0).abs() < 1e-12, "{}", policy.name());
        }
    }
}
