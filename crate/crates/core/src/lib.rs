//! Incentivized data-centric collaborative learning among self-interested agents.
//!
//! Agents partition each fresh batch of data, share one partition chosen by a
//! softmax policy learned with policy gradient, and fine-tune the model they get
//! back. The arbiter learns a shared logistic model and per-agent weights by a
//! two-timescale bilevel scheme, then hands each agent a copy of the model
//! perturbed by noise whose radius shrinks as the agent's (distorted) weight
//! grows.
//!
//! The crate is `no_std` (it needs `alloc`) and does no IO. File formats, the
//! configuration dialect and the command line live in the `cml` crate.
//!
//! Module map:
//!
//! * [`model`]: sigmoid predictor, weighted log loss and its derivatives, the
//!   arbiter's evaluation function, minibatch SGD.
//! * [`policy`] and [`agent`]: the sharing policy and one agent's round.
//! * [`arbiter`], [`distortion`], [`noise`]: weights, bilevel updates,
//!   incentive shaping and personalization.
//! * [`sim`]: synthetic data laws and the round orchestrator.
//! * [`diagnostics`]: assumption constants, lemma checks, stationarity metrics
//!   and the convergence-bound calculators.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod agent;
pub mod arbiter;
pub mod diagnostics;
pub mod distortion;
mod error;
pub mod math;
pub mod model;
pub mod noise;
pub mod policy;
pub mod rng;
pub mod schedule;
pub mod sim;

pub use error::{Error, Result};
