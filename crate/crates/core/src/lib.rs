//! Intent-privacy control for a goal-directed agent observed by a Bayesian
//! intent-inference filter.
//!
//! The crate contains the observer's Rao-Blackwellized particle filter
//! ([`rbpf`]), KL leakage bounds on its belief ([`leakage`]), the probabilistic
//! barrier budgets ([`barrier`]), the blended privacy/tracking controller
//! ([`controller`]), a closed-loop simulator ([`sim`]) and a Monte Carlo
//! harness that checks the probabilistic guarantees empirically ([`verify`]).

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod cli;
pub mod controller;
pub mod error;
pub mod geom;
pub mod intent;
pub mod leakage;
pub mod miniball;
pub mod numeric;
pub mod rbpf;
pub mod rng;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
