//! Equilibria of the adversarial classification game between a linear
//! classifier and a data-manipulating adversary, for Gaussian
//! class-conditional data.
//!
//! - [`game`] evaluates utilities and constraints in closed form.
//! - [`best_response`] computes each player's optimal reply by conic
//!   programming, with a reduced-form search as an independent check.
//! - [`equilibrium`] runs averaged best-response dynamics.
//! - [`montecarlo`] validates the closed forms by simulation.

pub mod best_response;
pub mod conic;
pub mod equilibrium;
pub mod error;
pub mod game;
pub mod model;
pub mod montecarlo;
pub mod numerics;
pub mod policy;
mod rng;

pub use error::{Error, Result};
pub use game::{GameConfig, GameMetrics};
pub use model::{GaussianClassModel, Label, LabeledDataset};
pub use policy::{AdversaryPolicy, ClassifierPolicy};
