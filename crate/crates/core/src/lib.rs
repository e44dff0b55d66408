//! Exact and asymptotic distributions of segmental-score statistics for
//! finite-state Markovian sequences with integer lattice scores.
//!
//! The pipeline is: [`model`] (validated score model) → [`spectral`] (θ*,
//! u(θ*)) → [`ladder`] (first-descent and first-ascent matrices, z, w, c,
//! c(∞), A*) → [`distributions`] (S⁺ cdf, Q₁ tail, local-score cdf,
//! Karlin–Dembo baseline, p-values). [`montecarlo`] is the seeded
//! simulation oracle used to check all of the above.

pub mod analysis;
pub mod cli;
pub mod distributions;
pub mod error;
pub mod fixtures;
pub mod ladder;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod spectral;

pub use error::{Error, Result};
pub use model::{ScoreModel, StatePartition, ValidationReport};
pub use spectral::SpectralData;
