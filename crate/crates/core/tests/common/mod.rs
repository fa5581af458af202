#![allow(dead_code)]

use mac_pa::channel::{exponential_profile, ReceiveBasis, UiuProfile};
use mac_pa::equilibrium::{PowerAllocationPolicy, SpaceTime};
use mac_pa::game::{CoordinationDistribution, SpaceTimePowerProfile};
use mac_pa::linalg::{CMatrix, C64};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn db(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

pub fn fig1_profile() -> UiuProfile {
    exponential_profile(10, 10, &[0.5, 0.2], &[0.5, 0.2], ReceiveBasis::Project)
        .unwrap()
        .profile
}

pub fn fig2_profile() -> UiuProfile {
    exponential_profile(10, 10, &[0.3, 0.0], &[0.5, 0.2], ReceiveBasis::Project)
        .unwrap()
        .profile
}

pub fn fig3_profile() -> UiuProfile {
    exponential_profile(10, 10, &[0.4, 0.2], &[0.6, 0.3], ReceiveBasis::Project)
        .unwrap()
        .profile
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// `G G^H` with `G` of size `n × rank`.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> CMatrix {
    let g = CMatrix::from_fn(n, rank, |_, _| gaussian(rng));
    &g * g.adjoint()
}

/// Random PSD matrix with the given trace.
pub fn random_covariance(rng: &mut ChaCha8Rng, n: usize, trace: f64) -> CMatrix {
    let rank = rng.random_range(1..=n);
    let m = random_psd(rng, n, rank);
    let t = m.trace().re;
    m * C64::new(trace / t, 0.0)
}

/// Random feasible profile with a tight budget.
pub fn random_powers(
    rng: &mut ChaCha8Rng,
    coord: &CoordinationDistribution,
    budgets: &[f64],
    n_t: usize,
) -> SpaceTimePowerProfile {
    let w = coord.weights();
    let powers = budgets
        .iter()
        .map(|&b| {
            let raw: Vec<Vec<f64>> = (0..coord.num_slots())
                .map(|_| (0..n_t).map(|_| rng.random_range(0.0..2.0 * b)).collect())
                .collect();
            SpaceTime.project(&w, &raw, b)
        })
        .collect();
    SpaceTimePowerProfile::new(powers, budgets.to_vec()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
