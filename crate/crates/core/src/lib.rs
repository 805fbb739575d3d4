//! Discrete-token video generation on a synthetic moving-shapes world.
//!
//! The pipeline has two stages. A patch [`codebook`] turns clips into token
//! grids. A bidirectional transformer ([`model`]) is trained on token
//! sequences built by [`sequence`] with masked-token, relevance and
//! video-consistency objectives, and the [`sampler`] generates new grids with
//! an annealed, beam-searched mask-predict loop. [`longgen`] extends clips by
//! extrapolation and interpolation, and [`eval`] scores generations with the
//! world's analytic oracle.

pub mod clip;
pub mod codebook;
pub mod config;
pub mod error;
pub mod eval;
pub mod longgen;
pub mod model;
pub mod rng;
pub mod run;
pub mod sampler;
pub mod sequence;
pub mod world;

pub use error::{Error, Result};
