//! Markov counting process models for sums of dependent binary outcomes.
//!
//! A cluster of `n` units with `r` affected is modeled as the state at time
//! one of a pure-birth process on `{0, ..., n}`. The same law can be written
//! as a sum of exchangeable Bernoulli variables, and this crate moves freely
//! between the two views:
//!
//! - [`model`]: cluster observations and the parametric rate families.
//! - [`transition`]: transition probabilities `P_mr(t)` by uniformization.
//! - [`exchangeable`]: joint-success probabilities `lambda_j`, their pmf, and
//!   the bridge from transition rows back to `lambda`.
//! - [`simulate`]: the embedding sampler and synthetic dataset generation.
//! - [`fit`]: maximum likelihood, regression on covariates, relative risk
//!   and goodness of fit.
//! - [`cli`]: CSV datasets, JSON reports and the command implementations.

pub mod cli;
pub mod error;
pub mod exchangeable;
pub mod fit;
pub mod model;
pub mod numeric;
pub mod simulate;
pub mod transition;

pub use error::{Error, Result};
pub use model::{
    rate_vector, validate_observation, ClusterObservation, RateFamily, RateModelSpec, RateSchedule,
};
pub use transition::{
    log_transition, transition_closed_form, transition_distribution, TransitionDistribution,
};
