//! Quick structural checks run by `mac-pa selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::{exponential_profile, sample_channel, ReceiveBasis};
use crate::equilibrium::{waterfill, NeConfig, PolicyRegistry, ResponseProblem};
use crate::game::{
    joint_log_det_per_draw, rate_exact_per_draw, slot_covariances, trace_inequality_gap,
    CoordinationDistribution, DecodingOrder, GameContext, SpaceTimePowerProfile,
};
use crate::large_system::{approx_utility, solve_block, fixed_point_residual, SolverConfig};
use crate::linalg::{C64, CMatrix};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> CMatrix {
    let g = CMatrix::from_fn(n, rank, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    &g * g.adjoint()
}

fn trace_gap(rng: &mut ChaCha8Rng) -> Result<SelfCheck> {
    let mut worst = f64::INFINITY;
    for _ in 0..500 {
        let k = rng.random_range(1..=4);
        let n = rng.random_range(1..=6);
        let stack = |rng: &mut ChaCha8Rng| -> Vec<CMatrix> {
            (0..k)
                .map(|i| {
                    let rank = if i == 0 { n } else { rng.random_range(0..=n) };
                    let mut m = random_psd(rng, n, rank);
                    if i == 0 {
                        m += CMatrix::identity(n, n) * C64::new(0.1, 0.0);
                    }
                    m
                })
                .collect()
        };
        let a = stack(rng);
        let b = stack(rng);
        worst = worst.min(trace_inequality_gap(&a, &b)?);
    }
    Ok(SelfCheck {
        name: "trace inequality",
        passed: worst >= -1e-10,
        detail: format!("min gap {worst:e}"),
    })
}

fn waterfill_kkt(rng: &mut ChaCha8Rng) -> Result<SelfCheck> {
    let registry = PolicyRegistry::default();
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let slots = rng.random_range(1..=3);
        let n_t = rng.random_range(1..=5);
        let mut weights: Vec<f64> = (0..slots).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let coeffs: Vec<Vec<f64>> = (0..slots)
            .map(|_| (0..n_t).map(|_| 10f64.powf(rng.random_range(-2.0..2.0))).collect())
            .collect();
        let problem = ResponseProblem {
            weights: &weights,
            coeffs: &coeffs,
            budget: 10f64.powf(rng.random_range(-2.0..2.0)),
            n_t,
            n_r: n_t,
            tol: 1e-13,
        };
        for name in registry.names() {
            let policy = registry.get(name)?;
            let a = policy.allocate(&problem)?;
            let kkt = policy.kkt(&problem, &a.powers, a.lambda);
            // Relative to the multiplier so that scales are comparable.
            worst = worst.max(kkt.stationarity / a.lambda);
        }
    }
    let direct = waterfill(&[1.0], &[vec![1.0, 1.0]], 2.0, 1)?;
    Ok(SelfCheck {
        name: "best-response KKT",
        passed: worst < 1e-8 && direct.powers[0] == vec![1.0, 1.0],
        detail: format!("max relative stationarity {worst:e}"),
    })
}

fn telescoping() -> Result<SelfCheck> {
    let profile = exponential_profile(4, 3, &[0.5, 0.5, 0.5], &[0.6, 0.3, 0.0], ReceiveBasis::Strict)?.profile;
    let samples = sample_channel(&profile, 50, 7)?;
    let powers = [vec![1.0, 2.0, 0.5], vec![0.0, 1.0, 2.0], vec![3.0, 0.0, 0.0]];
    let slot: Vec<&[f64]> = powers.iter().map(Vec::as_slice).collect();
    let covs = slot_covariances(&profile, &slot);
    let order = DecodingOrder::from_sequence(vec![2, 0, 1])?;
    let joint = joint_log_det_per_draw(&profile, 2.0, &slot, &samples)?;
    let mut total = vec![0.0; samples.len()];
    for k in 0..3 {
        let v = rate_exact_per_draw(&profile, 2.0, &covs, k, &order.decoded_after(k), &samples)?;
        total.iter_mut().zip(v).for_each(|(t, x)| *t += x);
    }
    let worst = total
        .iter()
        .zip(&joint)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(SelfCheck {
        name: "SIC telescoping",
        passed: worst < 1e-9,
        detail: format!("max |Σ R_k − log-det| {worst:e}"),
    })
}

fn deterministic_equivalent() -> Result<SelfCheck> {
    let profile = exponential_profile(8, 8, &[0.5, 0.2], &[0.5, 0.2], ReceiveBasis::Project)?.profile;
    let rho = 2.0;
    let coord = CoordinationDistribution::two_user(0.5)?;
    let powers = SpaceTimePowerProfile::uniform(&[1.0, 1.0], 2, 8);
    let cfg = SolverConfig::default();
    let samples = sample_channel(&profile, 500, 3)?;
    let ctx = GameContext::new(profile.clone(), rho, coord.clone())?;
    let mut worst = 0.0f64;
    for k in 0..2 {
        let approx = approx_utility(&profile, rho, &coord, &powers, k, &cfg)?.total(8);
        let mc = crate::game::utility_sic(&ctx, &powers, k, &samples)?;
        worst = worst.max((approx - mc.mean).abs() / mc.mean);
    }
    let sol = solve_block(&profile, rho, &[0, 1], &powers.slot(0), &cfg)?;
    let residual = fixed_point_residual(&profile, rho, &sol, &powers.slot(0));
    Ok(SelfCheck {
        name: "deterministic equivalent",
        passed: worst < 0.05 && residual < 1e-8,
        detail: format!("max relative error {worst:.4}, fixed-point residual {residual:e}"),
    })
}

fn equilibrium() -> Result<SelfCheck> {
    let profile = exponential_profile(6, 6, &[0.5, 0.2], &[0.5, 0.2], ReceiveBasis::Project)?.profile;
    let coord = CoordinationDistribution::two_user(0.5)?;
    let ne = crate::equilibrium::best_response_ne(&profile, 2.0, &coord, &[1.0, 3.0], &NeConfig::default())?;
    let cap = crate::equilibrium::sum_capacity(&profile, 2.0, &[1.0, 3.0], &NeConfig::default())?;
    let sre = crate::equilibrium::sre(ne.sum_rate.0, cap.rate.0)?;
    Ok(SelfCheck {
        name: "equilibrium",
        passed: ne.converged && ne.kkt_residual < 1e-6 && sre > 0.9,
        detail: format!("rounds {}, KKT {:e}, SRE {sre:.6}", ne.rounds, ne.kkt_residual),
    })
}

/// Run every check; errors are reported as failures.
pub fn run_selftest(seed: u64) -> Vec<SelfCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks: Vec<(&'static str, Result<SelfCheck>)> = vec![
        ("trace inequality", trace_gap(&mut rng)),
        ("best-response KKT", waterfill_kkt(&mut rng)),
        ("SIC telescoping", telescoping()),
        ("deterministic equivalent", deterministic_equivalent()),
        ("equilibrium", equilibrium()),
    ];
    checks
        .into_iter()
        .map(|(name, r)| {
            r.unwrap_or_else(|e| SelfCheck {
                name,
                passed: false,
                detail: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        for c in run_selftest(11) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
