//! Exact couplings, marker–filler structure and star-coupling constructions
//! for monotone couplings of Bernoulli shifts.

pub mod deljunco;
pub mod dist;
pub mod error;
pub mod flow;
pub mod law;
pub mod markers;
pub mod meshalkin;
pub mod perturb;
pub mod rational;
pub mod reductions;
pub mod report;
pub mod rng;
pub mod star;

pub use error::{Error, Result};
pub use rational::Rational;
