//! Stochastic spatial-demand modelling for physical retail.
//!
//! The crate covers the whole pipeline: a truncated-normal demand model with
//! hierarchical priors, gradient-based posterior sampling, an MDP simulator
//! driven by the fitted posterior, and allocation policies (random, naive,
//! tabu search, deep Q-learning) evaluated against it.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod baselines;
pub mod data;
pub mod error;
pub mod features;
pub mod inference;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod policies;
pub mod retail;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
