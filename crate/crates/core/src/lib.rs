//! Power-allocation games on the fast-fading MIMO multiple access channel.
//!
//! Each of `K` mobile terminals with `n_t` antennas picks a space-time power
//! allocation knowing only the channel statistics; the base station (with
//! `n_r` antennas) decodes either by successive interference cancellation
//! (SIC), driven by a public coordination signal that selects the decoding
//! order, or by single-user decoding (SUD).
//!
//! The crate is organised as:
//!
//! - [`channel`]: exponential antenna correlation, Kronecker to UIU reduction
//!   and seeded Rayleigh sampling.
//! - [`game`]: decoding orders, coordination laws, strategies, exact
//!   (Monte-Carlo) utilities and numeric probes of the structural properties
//!   of the game (trace inequality, diagonal strict concavity, concavity,
//!   KKT residuals).
//! - [`large_system`]: deterministic equivalents of the ergodic rates.
//! - [`equilibrium`]: water-filling, best-response dynamics, the registry of
//!   power-allocation policies, limit regimes and sum-capacity.
//! - [`experiments`]: scenario files, figure runners and CSV/JSON output.

pub mod channel;
pub mod equilibrium;
pub mod error;
pub mod experiments;
pub mod game;
pub mod large_system;
pub mod linalg;

pub use error::{Error, Result};
