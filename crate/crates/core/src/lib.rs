//! Doubly robust estimation of direct, spillover, total and overall causal
//! effects for networks made of disjoint components.
//!
//! The pieces are:
//! - [`graph`]: the component-decomposed network and per-node data.
//! - [`allocation`]: Bernoulli allocation weights.
//! - [`propensity`]: random-intercept logistic treatment model and joint
//!   neighbourhood propensities.
//! - [`outcome`]: OLS, weighted LS, and (weighted) random-intercept outcome models.
//! - [`estimators`]: IPW, REG, DR-BC and IP-WLS means and causal contrasts.
//! - [`mestimation`]: stacked estimating equations and sandwich variance.
//! - [`analysis`]: the end-to-end fit, estimate and variance pipeline.
//! - [`simulate`]: data-generating processes and the Monte Carlo harness.

pub mod allocation;
pub mod analysis;
pub mod design;
pub mod error;
pub mod estimators;
pub mod graph;
pub mod mestimation;
mod optim;
pub mod outcome;
pub mod propensity;
pub mod quadrature;
pub mod simulate;

pub use error::{Error, Result};
pub use graph::{ComponentGraph, NodeData};
