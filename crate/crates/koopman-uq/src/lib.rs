//! Koopman surrogate modeling of a controlled nonlinear system with
//! set-valued uncertainty bounds.
//!
//! The pipeline lifts the state of the forced Van der Pol benchmark with an
//! overcomplete autoencoder, fits a linear model in the lifted space, bounds
//! the one-step fitting residual from data, and propagates that bound through
//! a robust positively invariant set and a certified Lipschitz constant of
//! the decoder into a guaranteed ball around each reconstructed prediction.

pub mod artifact;
pub mod autoencoder;
pub mod certify;
pub mod dataset;
pub mod dynamics;
pub mod edmd;
pub mod error;
pub mod koopman;
pub mod linalg;
pub mod pipeline;
pub mod report;
pub mod setcalc;

pub use error::{Error, Result};
