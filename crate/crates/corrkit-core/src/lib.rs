//! Core numerics for predicting *when* a human will correct a robot
//! hand-over and *where* the corrected object will end up.
//!
//! Everything in this crate is deterministic given explicit `u64` seeds:
//! transcendentals go through `libm`, random numbers come from an owned
//! xoshiro256++ stream, and all reductions use fixed association orders.
//! The crate is `no_std`-compatible (with `alloc`); file formats, CLI and
//! parallel drivers live in the companion `corrkit` crate.
//!
//! Module map:
//! * [`matrix`], [`geom`], [`rng`], [`fmath`]: dense row-major matrices,
//!   small fixed-size vectors, seeded PRNG, scalar math.
//! * [`nn`]: layers, Adam with gradient clipping and exponential decay,
//!   and a central-difference gradient checker.
//! * [`trajectory`]: trajectories, correction events, and the PID
//!   reference controller used by the expectation features.
//! * [`features`]: the seven per-timestep anticipation features.
//! * [`timing`]: transformer encoder that maps feature sequences to a
//!   per-timestep correction CDF, plus its training loop.
//! * [`spatial`]: placement MLP and release-residual Gaussian mixture.
//! * [`inference`]: WHEN / WHERE / COMBINED posteriors over a goal grid.
//! * [`simulator`]: synthetic hand-over board, trajectories and
//!   intervener model used for benchmarks.
//! * [`evaluation`]: F1 / MAE / KLD metrics and the split-level
//!   train-evaluate drivers behind the benchmark and ablation suites.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod error;
pub mod evaluation;
pub mod features;
pub mod fmath;
pub mod geom;
pub mod inference;
pub mod matrix;
pub mod nn;
pub mod rng;
pub mod simulator;
pub mod spatial;
pub mod timing;
pub mod trajectory;

pub use error::CoreError;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, CoreError>;
