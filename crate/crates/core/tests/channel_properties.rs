mod common;

use common::*;
use mac_pa::channel::{
    exp_correlation, exponential_profile, kronecker_to_uiu, sample_channel, CorrelationSpec, ReceiveBasis,
};
use mac_pa::linalg::RMatrix;
use nalgebra::SymmetricEigen;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn exponential_correlation_is_psd(n in 1usize..=12, r in 0.0f64..=1.0) {
        let m = exp_correlation(&CorrelationSpec { n, r }).unwrap();
        let eig = SymmetricEigen::new(m.clone());
        prop_assert!(eig.eigenvalues.min() >= -1e-10);
        prop_assert!((m.trace() - n as f64).abs() < 1e-12);
    }

    #[test]
    fn reduced_variances_are_separable(n_r in 1usize..=8, n_t in 1usize..=8, r in 0.0f64..0.95, t0 in 0.0f64..0.95, t1 in 0.0f64..0.95) {
        let red = exponential_profile(n_r, n_t, &[r, r], &[t0, t1], ReceiveBasis::Strict).unwrap();
        for k in 0..2 {
            let sigma = red.profile.sigma(k);
            let outer = RMatrix::from_fn(n_r, n_t, |i, j| red.d_r[k][i] * red.d_t[k][j]);
            prop_assert!((sigma - outer).amax() < 1e-10);
            // Eigenvalues keep the traces of the correlation matrices.
            prop_assert!((red.d_r[k].iter().sum::<f64>() - n_r as f64).abs() < 1e-9);
            prop_assert!((red.d_t[k].iter().sum::<f64>() - n_t as f64).abs() < 1e-9);
            prop_assert!(red.d_t[k].windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn projection_preserves_receive_trace(n in 2usize..=8, r0 in 0.0f64..0.9, r1 in 0.0f64..0.9) {
        let red = exponential_profile(n, 2, &[r0, r1], &[0.3, 0.3], ReceiveBasis::Project).unwrap();
        for k in 0..2 {
            prop_assert!((red.d_r[k].iter().sum::<f64>() - n as f64).abs() < 1e-9);
        }
    }
}

#[test]
fn strict_basis_rejects_incompatible_receive_correlations() {
    assert!(exponential_profile(4, 2, &[0.2, 0.7], &[0.3, 0.3], ReceiveBasis::Strict).is_err());
    let red = exponential_profile(4, 2, &[0.2, 0.7], &[0.3, 0.3], ReceiveBasis::Project).unwrap();
    assert!(red.off_basis_energy[1] > 0.0);
    assert!(red.off_basis_energy[0] < 1e-12);
}

#[test]
fn kronecker_reduction_validates_inputs() {
    let r = exp_correlation(&CorrelationSpec { n: 3, r: 0.5 }).unwrap();
    let t = exp_correlation(&CorrelationSpec { n: 2, r: 0.5 }).unwrap();
    assert!(kronecker_to_uiu(&[r.clone()], &[], ReceiveBasis::Strict).is_err());
    let mut asym = r.clone();
    asym[(0, 1)] += 0.1;
    assert!(kronecker_to_uiu(&[asym], &[t.clone()], ReceiveBasis::Strict).is_err());
    let mut indefinite = t.clone();
    indefinite[(0, 1)] = 2.0;
    indefinite[(1, 0)] = 2.0;
    assert!(kronecker_to_uiu(&[r], &[indefinite], ReceiveBasis::Strict).is_err());
}

/// Under a shared receive correlation the sampled channel is the Kronecker
/// model `R^{1/2} G T^{1/2} / sqrt(n_t)`, so `E[H^H H] = tr(R) T / n_t`.
#[test]
fn sampled_second_moment_matches_the_kronecker_model() {
    let (n_r, n_t, draws) = (4, 3, 20_000);
    let red = exponential_profile(n_r, n_t, &[0.6], &[0.7], ReceiveBasis::Strict).unwrap();
    let samples = sample_channel(&red.profile, draws, 5).unwrap();
    let t = exp_correlation(&CorrelationSpec { n: n_t, r: 0.7 }).unwrap();
    let expected = t * (n_r as f64 / n_t as f64);
    let mut acc = RMatrix::zeros(n_t, n_t);
    let mut frob = Vec::with_capacity(draws);
    for d in &samples.draws {
        let g = d[0].adjoint() * &d[0];
        acc += g.map(|z| z.re);
        frob.push(d[0].norm_squared());
    }
    acc /= draws as f64;
    // Entries of H^H H have variance of order n_r / n_t^2.
    let se = (n_r as f64).sqrt() / n_t as f64 / (draws as f64).sqrt();
    assert!((acc - expected).amax() < 5.0 * se);

    let mean = frob.iter().sum::<f64>() / draws as f64;
    let var = frob.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    assert!((mean - n_r as f64).abs() < 3.0 * (var / draws as f64).sqrt(), "{mean}");
}

#[test]
fn sampling_is_reproducible_and_thread_independent() {
    let profile = fig1_profile();
    let a = sample_channel(&profile, 16, 77).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| sample_channel(&profile, 16, 77).unwrap());
    let c = sample_channel(&profile, 16, 78).unwrap();
    assert_eq!(a.draws, b.draws);
    assert_ne!(a.draws, c.draws);
    assert!(sample_channel(&profile, 0, 1).is_err());
}
