//! Shilling-attack laboratory: a latent-diffusion attack on collaborative
//! filtering recommenders, heuristic baselines, and effectiveness and
//! stealth evaluation.

pub mod attack;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub(crate) mod pairwise;
pub mod projection;
pub mod recommender;
pub mod rng;
pub mod runlog;

pub use error::{DldaError, Result};
