//! Scenario files.
//!
//! A scenario is a flat TOML table:
//!
//! ```toml
//! name = "fig1"
//! users = 2
//! n_t = 10
//! n_r = 10
//! r = [0.5, 0.2]
//! t = [0.5, 0.2]
//! rho_db = 3.0
//! budgets = [1.0, 1.0]
//! scheme = "sic"            # or "sud"
//! p = 0.5                   # K = 2: probability that user 1 is decoded second
//! pa_mode = "space_time"    # spatial_only, temporal_only
//! receive_basis = "project" # or "strict"
//! mc_draws = 500
//! seed = 1
//! sweep_axis = "power"      # power, p or rho_db
//! sweep_values = [0.1, 1.0, 10.0]
//! ```
//!
//! Users are numbered from 1 in files and CSV headers and from 0 in code.
//! For more than two users, `order_probs` lists the probability of every
//! decoding order in lexicographic order of the decoding sequence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{exponential_profile, ReceiveBasis, UiuProfile};
use crate::equilibrium::PolicyRegistry;
use crate::game::{CoordinationDistribution, DecodingOrder};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Sic,
    Sud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Every user's budget set to the sweep value.
    Power,
    /// The K = 2 order probability `p`.
    P,
    RhoDb,
}

impl SweepAxis {
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::Power => "power",
            SweepAxis::P => "p",
            SweepAxis::RhoDb => "rho_db",
        }
    }
}

fn default_scheme() -> Scheme {
    Scheme::Sic
}
fn default_pa_mode() -> String {
    "space_time".into()
}
fn default_basis() -> ReceiveBasis {
    ReceiveBasis::Strict
}
fn default_mc_draws() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub users: usize,
    pub n_t: usize,
    pub n_r: usize,
    pub r: Vec<f64>,
    pub t: Vec<f64>,
    pub rho_db: f64,
    pub budgets: Vec<f64>,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub order_probs: Option<Vec<f64>>,
    #[serde(default = "default_pa_mode")]
    pub pa_mode: String,
    #[serde(default = "default_basis")]
    pub receive_basis: ReceiveBasis,
    #[serde(default = "default_mc_draws")]
    pub mc_draws: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sweep_axis: Option<SweepAxis>,
    #[serde(default)]
    pub sweep_values: Vec<f64>,
}

/// One fully specified point of a sweep.
#[derive(Debug, Clone)]
pub struct ScenarioPoint {
    pub x: f64,
    pub profile: UiuProfile,
    pub rho: f64,
    pub rho_db: f64,
    pub coord: CoordinationDistribution,
    /// Probability that user 1 is decoded second, for two-user SIC.
    pub p: Option<f64>,
    pub budgets: Vec<f64>,
}

fn check_unit(field: &str, values: &[f64]) -> Result<()> {
    for (i, &v) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::config(format!("{field}[{i}]"), format!("{v} is outside [0, 1]")));
        }
    }
    Ok(())
}

fn check_len(field: &str, len: usize, users: usize) -> Result<()> {
    if len != users {
        return Err(Error::config(field, format!("expected {users} entries, found {len}")));
    }
    Ok(())
}

fn check_p(field: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(field, format!("probability {p} is outside [0, 1]")));
    }
    Ok(())
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .unwrap_or("<file>")
                .to_string();
            Error::config(field, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialise")
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config("name", "must be a nonempty file stem"));
        }
        if self.users == 0 {
            return Err(Error::config("users", "at least one user required"));
        }
        if self.n_t == 0 {
            return Err(Error::config("n_t", "at least one antenna required"));
        }
        if self.n_r == 0 {
            return Err(Error::config("n_r", "at least one antenna required"));
        }
        check_len("r", self.r.len(), self.users)?;
        check_len("t", self.t.len(), self.users)?;
        check_len("budgets", self.budgets.len(), self.users)?;
        check_unit("r", &self.r)?;
        check_unit("t", &self.t)?;
        for (i, &b) in self.budgets.iter().enumerate() {
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::config(format!("budgets[{i}]"), format!("{b} is not positive")));
            }
        }
        if !self.rho_db.is_finite() {
            return Err(Error::config("rho_db", "must be finite"));
        }
        if let Some(p) = self.p {
            check_p("p", p)?;
        }
        match self.scheme {
            Scheme::Sud => {
                if self.p.is_some() || self.order_probs.is_some() {
                    return Err(Error::config("scheme", "SUD takes no order probabilities"));
                }
            }
            Scheme::Sic => match (&self.order_probs, self.p) {
                (Some(_), Some(_)) => {
                    return Err(Error::config("p", "give either p or order_probs, not both"));
                }
                (Some(probs), None) => {
                    let n = factorial(self.users);
                    if probs.len() != n {
                        return Err(Error::config(
                            "order_probs",
                            format!("expected {n} entries, one per decoding order"),
                        ));
                    }
                    check_unit("order_probs", probs)?;
                    let total: f64 = probs.iter().sum();
                    if (total - 1.0).abs() > 1e-9 {
                        return Err(Error::config("order_probs", format!("sums to {total}, not 1")));
                    }
                }
                (None, Some(_)) if self.users != 2 => {
                    return Err(Error::config("p", "only defined for two users; use order_probs"));
                }
                _ => {}
            },
        }
        PolicyRegistry::default()
            .get(&self.pa_mode)
            .map_err(|e| Error::config("pa_mode", e.to_string()))?;
        if self.mc_draws == 0 {
            return Err(Error::config("mc_draws", "at least one draw required"));
        }
        match self.sweep_axis {
            None if !self.sweep_values.is_empty() => {
                return Err(Error::config("sweep_axis", "sweep_values given without an axis"));
            }
            Some(_) if self.sweep_values.is_empty() => {
                return Err(Error::config("sweep_values", "empty sweep"));
            }
            Some(SweepAxis::Power) => {
                for (i, &v) in self.sweep_values.iter().enumerate() {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(Error::config(format!("sweep_values[{i}]"), "powers must be positive"));
                    }
                }
            }
            Some(SweepAxis::P) => {
                if self.users != 2 || self.scheme != Scheme::Sic || self.order_probs.is_some() {
                    return Err(Error::config("sweep_axis", "a p sweep needs two users under SIC"));
                }
                for (i, &v) in self.sweep_values.iter().enumerate() {
                    check_p(&format!("sweep_values[{i}]"), v)?;
                }
            }
            Some(SweepAxis::RhoDb) => {
                if self.sweep_values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config("sweep_values", "must be finite"));
                }
            }
            None => {}
        }
        Ok(())
    }

    /// Sweep abscissae; a single point at the configured value without a sweep.
    pub fn sweep(&self) -> Vec<f64> {
        match self.sweep_axis {
            Some(_) => self.sweep_values.clone(),
            None => vec![f64::NAN],
        }
    }

    fn coordination(&self, p: Option<f64>) -> Result<CoordinationDistribution> {
        match self.scheme {
            Scheme::Sud => Ok(CoordinationDistribution::sud(self.users)),
            Scheme::Sic => match (&self.order_probs, p) {
                (Some(probs), _) => CoordinationDistribution::sic(
                    self.users,
                    DecodingOrder::all(self.users).into_iter().zip(probs.iter().copied()).collect(),
                ),
                (None, Some(p)) => CoordinationDistribution::two_user(p),
                (None, None) if self.users == 2 => CoordinationDistribution::two_user(0.5),
                (None, None) if self.users == 1 => {
                    Ok(CoordinationDistribution::fixed(DecodingOrder::identity(1)))
                }
                (None, None) => Ok(CoordinationDistribution::uniform_sic(self.users)),
            },
        }
    }

    pub fn profile(&self) -> Result<UiuProfile> {
        Ok(exponential_profile(self.n_r, self.n_t, &self.r, &self.t, self.receive_basis)?.profile)
    }

    /// Resolve every sweep point.
    pub fn points(&self) -> Result<Vec<ScenarioPoint>> {
        let profile = self.profile()?;
        self.sweep()
            .into_iter()
            .map(|x| {
                let mut budgets = self.budgets.clone();
                let mut rho_db = self.rho_db;
                let mut p = match (self.scheme, self.users, &self.order_probs) {
                    (Scheme::Sic, 2, None) => Some(self.p.unwrap_or(0.5)),
                    _ => None,
                };
                match self.sweep_axis {
                    Some(SweepAxis::Power) => budgets = vec![x; self.users],
                    Some(SweepAxis::P) => p = Some(x),
                    Some(SweepAxis::RhoDb) => rho_db = x,
                    None => {}
                }
                Ok(ScenarioPoint {
                    x,
                    profile: profile.clone(),
                    rho: 10f64.powf(rho_db / 10.0),
                    rho_db,
                    coord: self.coordination(p)?,
                    p,
                    budgets,
                })
            })
            .collect()
    }
}
