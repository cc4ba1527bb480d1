//! Core of the underwater multi-agent target tracking simulator.
//!
//! Everything here is pure computation over caller-owned buffers: the
//! simplified vehicle motion model, range-only particle filters and
//! trilateration, the tracking environment and its batched memory layout,
//! the entity transformer actor/critic with analytic gradients, and the
//! MAPPO math. Threads, files and the command line live in the `utrack`
//! crate.
//!
//! The crate is `no_std` + `alloc` when built without the default `std`
//! feature; floating point functions then come from `libm`.
#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::too_many_arguments)]

extern crate alloc;

pub mod batch;
pub mod curriculum;
pub mod env;
pub mod eval;
pub mod error;
pub mod kinematics;
pub mod math;
pub mod nets;
pub mod ppo;
pub mod rng;
pub mod tokens;
pub mod tracking;

pub use error::{Error, Result};
