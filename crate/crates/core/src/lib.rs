//! Contextual multi-layer stochastic block models.
//!
//! Sampling of the planted and null models, closed-form thresholds, the
//! decorated-cycle detection statistic and decorated-path recovery matrix,
//! rounding, brute-force oracles and a seeded experiment harness.

pub mod families;
pub mod model;
pub mod rng;
pub mod thresholds;
pub mod oracles;
pub mod statistics;
pub mod rounding;
pub mod io;
pub mod harness;
pub mod verify;
