//! Mean-field principal-agent contracting with power effort costs.
//!
//! The crate solves the linear-quadratic mean-field contracting model in
//! closed form ([`closed_form`]), simulates the resulting McKean-Vlasov
//! equilibrium with particles ([`mfg_sim`]), checks that the closed-form value
//! solves the Hamilton-Jacobi-Bellman equation on moment-parametrised measures
//! ([`hjb_check`]) and compares finite-population games with their mean-field
//! limit ([`nplayer`]).
//!
//! Monte Carlo code draws its normals from a counter-based generator keyed by
//! `(seed, path, step)`, so results do not depend on how work is scheduled.
//! The `parallel` feature (on by default) spreads particles over a rayon pool;
//! without it every loop runs sequentially and produces the same bits.

pub mod closed_form;
pub mod error;
pub mod exec;
pub mod export;
pub mod hamiltonian;
pub mod hjb_check;
pub mod mfg_sim;
pub mod model;
pub mod nplayer;
pub mod optim;
pub mod quad;
pub mod rng;
pub mod sensitivity;
pub mod stats;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{DeterministicCurve, GaussianLaw, MeanFieldModel, ModelParams, RiskAversePenalties, TimeGrid};
