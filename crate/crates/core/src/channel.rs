//! Antenna correlation models, the UIU variance-profile representation and
//! seeded channel sampling.
//!
//! A channel of user `k` is `H_k = V H̃_k W_k^H` where `V` is the receive
//! eigenbasis shared by all users, `W_k` the transmit eigenbasis of user `k`
//! (columns are eigenvectors) and `H̃_k` has independent circular complex
//! Gaussian entries with `E|H̃_k(i,j)|² = σ_k(i,j) / n_t`. Precoders that are
//! diagonal in the transmit eigenbasis read `Q_k = W_k diag(P_k) W_k^H`.

use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{to_complex, unitarity_defect, CMatrix, RMatrix, C64};
use crate::{Error, Result};

/// Tolerance on `max |U^H U - I|` for the eigenbases.
pub const UNITARY_TOL: f64 = 1e-10;

/// Largest relative off-diagonal energy accepted when a receive correlation
/// has to be diagonal in the shared basis.
pub const OFF_BASIS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    pub n: usize,
    pub r: f64,
}

/// Exponential correlation matrix `M(i,j) = r^|i-j|`.
pub fn exp_correlation(spec: &CorrelationSpec) -> Result<RMatrix> {
    if spec.n == 0 {
        return Err(Error::InvalidInput("antenna count must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&spec.r) || spec.r.is_nan() {
        return Err(Error::InvalidInput(format!(
            "correlation coefficient {} outside [0, 1]",
            spec.r
        )));
    }
    Ok(RMatrix::from_fn(spec.n, spec.n, |i, j| {
        spec.r.powi(i.abs_diff(j) as i32)
    }))
}

/// Per-user variance profiles with their transmit eigenbases and the shared
/// receive eigenbasis.
#[derive(Debug, Clone)]
pub struct UiuProfile {
    n_t: usize,
    n_r: usize,
    sigma: Vec<RMatrix>,
    w: Vec<CMatrix>,
    v: CMatrix,
}

impl UiuProfile {
    pub fn new(sigma: Vec<RMatrix>, w: Vec<CMatrix>, v: CMatrix) -> Result<Self> {
        if sigma.is_empty() {
            return Err(Error::InvalidInput("profile needs at least one user".into()));
        }
        if sigma.len() != w.len() {
            return Err(Error::InvalidInput(format!(
                "{} variance profiles but {} transmit bases",
                sigma.len(),
                w.len()
            )));
        }
        let n_r = sigma[0].nrows();
        let n_t = sigma[0].ncols();
        if n_r == 0 || n_t == 0 {
            return Err(Error::InvalidInput("antenna counts must be positive".into()));
        }
        for (k, s) in sigma.iter().enumerate() {
            if s.nrows() != n_r || s.ncols() != n_t {
                return Err(Error::InvalidInput(format!(
                    "variance profile of user {k} is {}x{}, expected {n_r}x{n_t}",
                    s.nrows(),
                    s.ncols()
                )));
            }
            if s.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "variance profile of user {k} has a negative or non-finite entry"
                )));
            }
        }
        for (k, wk) in w.iter().enumerate() {
            if wk.nrows() != n_t || wk.ncols() != n_t {
                return Err(Error::InvalidInput(format!(
                    "transmit basis of user {k} must be {n_t}x{n_t}"
                )));
            }
            let defect = unitarity_defect(wk);
            if defect > UNITARY_TOL {
                return Err(Error::InvalidInput(format!(
                    "transmit basis of user {k} is not unitary (defect {defect:e})"
                )));
            }
        }
        if v.nrows() != n_r || v.ncols() != n_r {
            return Err(Error::InvalidInput(format!("receive basis must be {n_r}x{n_r}")));
        }
        let defect = unitarity_defect(&v);
        if defect > UNITARY_TOL {
            return Err(Error::InvalidInput(format!(
                "receive basis is not unitary (defect {defect:e})"
            )));
        }
        Ok(Self { n_t, n_r, sigma, w, v })
    }

    /// `K` users with `σ ≡ 1` and identity bases (i.i.d. Rayleigh fading).
    pub fn iid(users: usize, n_r: usize, n_t: usize) -> Result<Self> {
        Self::new(
            vec![RMatrix::from_element(n_r, n_t, 1.0); users],
            vec![CMatrix::identity(n_t, n_t); users],
            CMatrix::identity(n_r, n_r),
        )
    }

    /// Profiles in identity bases; the natural choice for synthetic tests.
    pub fn from_variances(sigma: Vec<RMatrix>) -> Result<Self> {
        let (n_r, n_t) = sigma
            .first()
            .map(|s| (s.nrows(), s.ncols()))
            .ok_or_else(|| Error::InvalidInput("profile needs at least one user".into()))?;
        let users = sigma.len();
        Self::new(
            sigma,
            vec![CMatrix::identity(n_t, n_t); users],
            CMatrix::identity(n_r, n_r),
        )
    }

    pub fn num_users(&self) -> usize {
        self.sigma.len()
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn beta(&self) -> f64 {
        self.n_r as f64 / self.n_t as f64
    }

    pub fn sigma(&self, k: usize) -> &RMatrix {
        &self.sigma[k]
    }

    pub fn transmit_basis(&self, k: usize) -> &CMatrix {
        &self.w[k]
    }

    pub fn receive_basis(&self) -> &CMatrix {
        &self.v
    }

    /// `Σ_i σ_k(i,j)` for every transmit mode `j`.
    pub fn column_sums(&self, k: usize) -> Vec<f64> {
        self.sigma[k].row_sum().iter().cloned().collect()
    }

    /// Mode with the largest column sum, lowest index on ties.
    pub fn strongest_mode(&self, k: usize) -> usize {
        let sums = self.column_sums(k);
        let mut best = 0;
        for (j, &s) in sums.iter().enumerate() {
            if s > sums[best] {
                best = j;
            }
        }
        best
    }
}

/// How the shared receive eigenbasis is obtained when users have different
/// receive correlations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiveBasis {
    /// Use the first user's eigenbasis and reject any other receive
    /// correlation that is not diagonal in it (relative off-diagonal energy
    /// above [`OFF_BASIS_TOL`]).
    #[default]
    Strict,
    /// Use the first user's eigenbasis and keep only the diagonal of
    /// `V^H R_k V` for the other users. This is the circulant approximation
    /// for uniform linear arrays; the dropped energy is reported.
    Project,
}

/// Result of the Kronecker to UIU reduction.
#[derive(Debug, Clone)]
pub struct KroneckerReduction {
    pub profile: UiuProfile,
    /// Receive eigenvalues per user, in the order of the columns of `V`.
    pub d_r: Vec<Vec<f64>>,
    /// Transmit eigenvalues per user, sorted in decreasing order.
    pub d_t: Vec<Vec<f64>>,
    /// Relative off-diagonal energy of `V^H R_k V` per user.
    pub off_basis_energy: Vec<f64>,
}

fn sorted_eigen(m: &RMatrix, what: &str) -> Result<(Vec<f64>, RMatrix)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::InvalidInput(format!("{what} must be square")));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * (1.0 + m.amax()) {
        return Err(Error::NotHermitian { asymmetry: asym });
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let min = values.last().copied().unwrap_or(0.0);
    if min < -1e-10 * (1.0 + values[0].abs()) {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let vectors = RMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, idx[j])]);
    Ok((values.into_iter().map(|x| x.max(0.0)).collect(), vectors))
}

/// Reduce per-user Kronecker correlations `(R_k, T_k)` to a UIU profile with
/// separable variances `σ_k(i,j) = d_k^R(i) d_k^T(j)`.
pub fn kronecker_to_uiu(
    receive: &[RMatrix],
    transmit: &[RMatrix],
    basis: ReceiveBasis,
) -> Result<KroneckerReduction> {
    if receive.is_empty() || receive.len() != transmit.len() {
        return Err(Error::InvalidInput(format!(
            "need one receive and one transmit correlation per user (got {} and {})",
            receive.len(),
            transmit.len()
        )));
    }
    let (_, v) = sorted_eigen(&receive[0], "receive correlation")?;
    let mut d_r = Vec::with_capacity(receive.len());
    let mut d_t = Vec::with_capacity(receive.len());
    let mut w = Vec::with_capacity(receive.len());
    let mut off_basis_energy = Vec::with_capacity(receive.len());
    for (k, (rk, tk)) in receive.iter().zip(transmit).enumerate() {
        if rk.nrows() != v.nrows() {
            return Err(Error::InvalidInput(format!(
                "receive correlation of user {k} has the wrong size"
            )));
        }
        // PSD and symmetry checks on R_k itself.
        sorted_eigen(rk, "receive correlation")?;
        let rotated = v.transpose() * rk * &v;
        let diag: Vec<f64> = (0..rotated.nrows()).map(|i| rotated[(i, i)].max(0.0)).collect();
        let total = rotated.norm();
        let mut off = rotated.clone();
        for i in 0..off.nrows() {
            off[(i, i)] = 0.0;
        }
        let energy = if total > 0.0 { off.norm() / total } else { 0.0 };
        if basis == ReceiveBasis::Strict && energy > OFF_BASIS_TOL {
            return Err(Error::NotJointlyDiagonalizable { user: k, energy });
        }
        let (tvals, tvecs) = sorted_eigen(tk, "transmit correlation")?;
        d_r.push(diag);
        d_t.push(tvals);
        w.push(to_complex(&tvecs));
        off_basis_energy.push(energy);
    }
    let n_t = transmit[0].nrows();
    let sigma = d_r
        .iter()
        .zip(&d_t)
        .map(|(dr, dt)| {
            if dt.len() != n_t {
                return Err(Error::InvalidInput(
                    "all users need the same transmit antenna count".into(),
                ));
            }
            Ok(RMatrix::from_fn(dr.len(), n_t, |i, j| dr[i] * dt[j]))
        })
        .collect::<Result<Vec<_>>>()?;
    let profile = UiuProfile::new(sigma, w, to_complex(&v))?;
    Ok(KroneckerReduction {
        profile,
        d_r,
        d_t,
        off_basis_energy,
    })
}

/// Exponential-profile Kronecker scenario, one `(r_k, t_k)` pair per user.
pub fn exponential_profile(
    n_r: usize,
    n_t: usize,
    r: &[f64],
    t: &[f64],
    basis: ReceiveBasis,
) -> Result<KroneckerReduction> {
    if r.len() != t.len() {
        return Err(Error::InvalidInput(
            "need as many receive as transmit coefficients".into(),
        ));
    }
    let receive = r
        .iter()
        .map(|&r| exp_correlation(&CorrelationSpec { n: n_r, r }))
        .collect::<Result<Vec<_>>>()?;
    let transmit = t
        .iter()
        .map(|&t| exp_correlation(&CorrelationSpec { n: n_t, r: t }))
        .collect::<Result<Vec<_>>>()?;
    kronecker_to_uiu(&receive, &transmit, basis)
}

/// I.i.d. fading draws, `draws[d][k]` is `H_k` in draw `d`.
#[derive(Debug, Clone)]
pub struct ChannelSamples {
    pub draws: Vec<Vec<CMatrix>>,
    pub seed: u64,
    pub count: usize,
}

impl ChannelSamples {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Draw `count` independent realisations of every user's channel.
///
/// Draw `d` uses a ChaCha8 generator seeded with `seed` on stream `d`; within
/// a draw the users are generated in index order, row-major, real part before
/// imaginary part. The output therefore does not depend on the number of
/// worker threads.
pub fn sample_channel(profile: &UiuProfile, count: usize, seed: u64) -> Result<ChannelSamples> {
    if count == 0 {
        return Err(Error::InvalidInput("sample count must be at least 1".into()));
    }
    let draws = (0..count)
        .into_par_iter()
        .map(|d| draw_once(profile, seed, d as u64))
        .collect();
    Ok(ChannelSamples { draws, seed, count })
}

fn draw_once(profile: &UiuProfile, seed: u64, stream: u64) -> Vec<CMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let n_t = profile.n_t();
    let n_r = profile.n_r();
    (0..profile.num_users())
        .map(|k| {
            let sigma = profile.sigma(k);
            let mut tilde = CMatrix::zeros(n_r, n_t);
            for i in 0..n_r {
                for j in 0..n_t {
                    // Real and imaginary parts each carry half the variance.
                    let scale = (sigma[(i, j)] / (2.0 * n_t as f64)).sqrt();
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    tilde[(i, j)] = C64::new(scale * re, scale * im);
                }
            }
            profile.receive_basis() * tilde * profile.transmit_basis(k).adjoint()
        })
        .collect()
}
