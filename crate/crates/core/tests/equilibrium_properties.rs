mod common;

use common::*;
use mac_pa::channel::{exponential_profile, ReceiveBasis, UiuProfile};
use mac_pa::equilibrium::{
    best_response_ne, best_response_ne_from, constrained_ne, ne_low_snr, sre, sum_capacity, waterfill, NeConfig,
};
use mac_pa::game::CoordinationDistribution;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn weights(rng: &mut ChaCha8Rng, slots: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..slots).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Active modes share the level `1/c + P`; inactive modes sit above it;
    /// the weighted budget is spent exactly.
    #[test]
    fn waterfill_satisfies_kkt(seed in any::<u64>(), slots in 1usize..=3, n_t in 1usize..=6, log_budget in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = weights(&mut rng, slots);
        let coeffs: Vec<Vec<f64>> = (0..slots)
            .map(|_| (0..n_t).map(|_| 10f64.powf(rng.random_range(-2.0..2.0))).collect())
            .collect();
        let budget = 10f64.powf(log_budget);
        let a = waterfill(&w, &coeffs, budget, 4).unwrap();
        let level = a.water_level(4);
        let mut spent = 0.0;
        for s in 0..slots {
            for j in 0..n_t {
                let (p, inv) = (a.powers[s][j], 1.0 / coeffs[s][j]);
                prop_assert!(p >= 0.0);
                if p > 0.0 {
                    prop_assert!((p + inv - level).abs() <= 1e-9 * level);
                } else {
                    prop_assert!(inv >= level * (1.0 - 1e-12));
                }
                spent += w[s] * p;
            }
        }
        prop_assert!((spent - budget).abs() <= 1e-10 * budget);
    }
}

#[test]
fn waterfill_rejects_bad_inputs() {
    assert!(waterfill(&[1.0], &[vec![1.0]], 0.0, 1).is_err());
    assert!(waterfill(&[1.0], &[vec![-1.0]], 1.0, 1).is_err());
    assert!(waterfill(&[1.0], &[vec![0.0, 0.0]], 1.0, 1).is_err());
    assert!(waterfill(&[0.5, 0.5], &[vec![1.0]], 1.0, 1).is_err());
}

#[test]
fn equilibrium_budgets_are_tight() {
    let profile = fig1_profile();
    let coord = CoordinationDistribution::two_user(0.3).unwrap();
    for mode in ["space_time", "spatial_only", "temporal_only"] {
        let ne = best_response_ne(&profile, db(5.0), &coord, &[1.0, 4.0], &NeConfig::with_mode(mode)).unwrap();
        assert!(ne.converged, "{mode}");
        for k in 0..2 {
            assert!(ne.powers.slack(k, &coord, 10).abs() < 1e-9, "{mode}: user {k}");
        }
    }
}

#[test]
fn update_order_and_start_do_not_change_the_equilibrium() {
    let profile = fig3_profile();
    let coord = CoordinationDistribution::two_user(0.7).unwrap();
    let rho = db(3.0);
    let budgets = [5.0, 50.0];
    let forward = best_response_ne(&profile, rho, &coord, &budgets, &NeConfig::default()).unwrap();
    let reverse = best_response_ne(
        &profile,
        rho,
        &coord,
        &budgets,
        &NeConfig {
            reverse_cycle: true,
            ..NeConfig::default()
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let init = random_powers(&mut rng, &coord, &budgets, 10);
    let random = best_response_ne_from(&profile, rho, &coord, init, &NeConfig::default()).unwrap();
    for other in [&reverse, &random] {
        let diff = forward.powers.max_abs_diff(&other.powers);
        assert!(diff < 1e-5 * 50.0, "{diff}");
    }
}

#[test]
fn single_user_equilibrium_is_waterfilling() {
    let profile = exponential_profile(6, 4, &[0.3], &[0.8], ReceiveBasis::Strict).unwrap().profile;
    let coord = CoordinationDistribution::sud(1);
    let rho = db(0.0);
    let ne = best_response_ne(&profile, rho, &coord, &[2.0], &NeConfig::default()).unwrap();
    // A single user's gains depend on its own powers through the fixed
    // point, so the equilibrium is a fixed point of water-filling.
    let sol = mac_pa::large_system::solve_block(
        &profile,
        rho,
        &[0],
        &ne.powers.slot(0),
        &Default::default(),
    )
    .unwrap();
    let c = mac_pa::large_system::mode_coefficients(rho, &sol, 0);
    let wf = waterfill(&[1.0], &[c], 8.0, 6).unwrap();
    assert!(max_abs_diff(&wf.powers[0], &ne.powers.powers[0][0]) < 1e-6);
    // Strongest modes get the most power.
    let p = &ne.powers.powers[0][0];
    assert!(p.windows(2).all(|w| w[0] >= w[1] - 1e-9), "{p:?}");
}

#[test]
fn efficiency_never_exceeds_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..6 {
        let r = [rng.random_range(0.0..0.6), rng.random_range(0.0..0.6)];
        let t = [rng.random_range(0.0..0.8), rng.random_range(0.0..0.8)];
        let profile = exponential_profile(6, 6, &r, &t, ReceiveBasis::Project).unwrap().profile;
        let rho = db(rng.random_range(-5.0..15.0));
        let budgets = [rng.random_range(0.5..5.0), rng.random_range(0.5..5.0)];
        let p = rng.random_range(0.0..=1.0);
        let coord = CoordinationDistribution::two_user(p).unwrap();
        let cap = sum_capacity(&profile, rho, &budgets, &NeConfig::default()).unwrap();
        for c in [coord, CoordinationDistribution::sud(2)] {
            let ne = best_response_ne(&profile, rho, &c, &budgets, &NeConfig::default()).unwrap();
            let e = sre(ne.sum_rate.0, cap.rate.0).unwrap();
            assert!(e <= 1.0 + 1e-6, "{e}");
        }
    }
}

#[test]
fn capacity_powers_flatten_at_high_snr() {
    // Thirty receive antennas keep the joint block non-overloaded.
    let profile = exponential_profile(30, 10, &[0.5, 0.2], &[0.5, 0.2], ReceiveBasis::Project).unwrap().profile;
    let cap = sum_capacity(&profile, db(30.0), &[1.0, 1.0], &NeConfig::default()).unwrap();
    for row in &cap.powers {
        let dev = row.iter().map(|p| (p - 1.0).abs()).fold(0.0, f64::max);
        assert!(dev < 0.02, "{row:?}");
    }
}

#[test]
fn temporal_policy_favours_the_interference_free_slot() {
    let profile = fig1_profile();
    for p in [0.2, 0.5, 0.8] {
        let coord = CoordinationDistribution::two_user(p).unwrap();
        let ne = constrained_ne(&profile, db(5.0), &coord, &[1.0, 1.0], &NeConfig::with_mode("temporal_only")).unwrap();
        // User 0 is decoded last in slot 0, user 1 in slot 1.
        let u0 = &ne.powers.powers[0];
        let u1 = &ne.powers.powers[1];
        assert!(u0[0][0] >= u0[1][0] - 1e-9, "p = {p}: {:?}", u0);
        assert!(u1[1][0] >= u1[0][0] - 1e-9, "p = {p}: {:?}", u1);
        assert!(u0.iter().all(|row| row.iter().all(|&x| (x - row[0]).abs() < 1e-12)));
    }
}

#[test]
fn symmetric_users_get_symmetric_spatial_powers() {
    let profile = exponential_profile(8, 8, &[0.3, 0.3], &[0.5, 0.5], ReceiveBasis::Strict).unwrap().profile;
    let coord = CoordinationDistribution::two_user(0.5).unwrap();
    let ne = constrained_ne(&profile, db(5.0), &coord, &[2.0, 2.0], &NeConfig::with_mode("spatial_only")).unwrap();
    assert!(max_abs_diff(&ne.powers.powers[0][0], &ne.powers.powers[1][0]) < 1e-6);
    assert_eq!(ne.powers.powers[0][0], ne.powers.powers[0][1]);
    assert!((ne.rates[0].0 - ne.rates[1].0).abs() < 1e-8);
    assert!(constrained_ne(&profile, 1.0, &coord, &[1.0, 1.0], &NeConfig::default()).is_err());
}

#[test]
fn low_snr_profile_uses_the_strongest_mode() {
    let coord = CoordinationDistribution::two_user(0.5).unwrap();
    // Kronecker profiles sort the transmit eigenvalues, so mode 0 wins.
    let profile = fig2_profile();
    let ne = ne_low_snr(&profile, &[1.0, 3.0], &coord).unwrap();
    for (k, b) in [(0, 1.0), (1, 3.0)] {
        for row in &ne.powers[k] {
            assert_eq!(row[0], 10.0 * b);
            assert!(row[1..].iter().all(|&x| x == 0.0));
        }
    }
    // Ties go to the lowest index.
    let iid = UiuProfile::iid(2, 3, 3).unwrap();
    let ne = ne_low_snr(&iid, &[1.0, 1.0], &coord).unwrap();
    assert_eq!(ne.powers[1][0], vec![3.0, 0.0, 0.0]);
    // Dynamics at very low SNR agree with the limit on the strongest mode.
    let br = best_response_ne(&profile, db(-30.0), &coord, &[1.0, 3.0], &NeConfig::default()).unwrap();
    for k in 0..2 {
        let share = br.powers.powers[k][0][0] / br.powers.powers[k][0].iter().sum::<f64>();
        assert!(share > 0.99, "user {k}: {share}");
    }
}

#[test]
fn fair_sic_approaches_capacity_at_low_power_and_grows_with_power() {
    let profile = fig1_profile();
    let rho = db(3.0);
    let coord = CoordinationDistribution::two_user(0.5).unwrap();
    let mut last = (0.0, 0.0);
    let mut first_ratio = None;
    for power in [1e-3, 1e-2, 1e-1, 1.0, 10.0] {
        let ne = best_response_ne(&profile, rho, &coord, &[power, power], &NeConfig::default()).unwrap();
        let cap = sum_capacity(&profile, rho, &[power, power], &NeConfig::default()).unwrap();
        assert!(ne.sum_rate.0 > last.0 && cap.rate.0 > last.1);
        last = (ne.sum_rate.0, cap.rate.0);
        first_ratio.get_or_insert(ne.sum_rate.0 / cap.rate.0);
    }
    let r = first_ratio.unwrap();
    assert!((1.0 - r).abs() < 1e-3, "{r}");
}
