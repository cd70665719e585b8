//! Pure Nash equilibria of the strategic-classification manipulation game
//! with pairwise externalities, differentiation through the equilibrium map,
//! and strategy-aware training of norm-constrained linear classifiers.

pub mod diff;
pub mod equilibrium;
pub mod error;
pub mod game;
pub mod learning;

pub use error::{Error, Result};
