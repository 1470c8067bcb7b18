//! Age of information under semi-persistent slot scheduling.
//!
//! `V` nodes share a frame of `m` slots. Each node holds a slot across frames
//! and, with probability `ending_prob` per frame, releases it and picks a slot
//! that was empty in the previous frame. Collisions persist until one side
//! moves away, which makes the age of a node's information grow in whole
//! frames.
//!
//! The crate offers a frame-level simulator ([`sim`]), trace analysis
//! ([`analysis`]), a closed-form approximation of the age distribution
//! ([`analytic`]) and exact or empirical checks of that approximation
//! ([`validation`]).

mod error;

pub mod analysis;
pub mod analytic;
pub mod config;
pub mod prob;
pub mod sim;
pub mod validation;

pub use config::{CounterModel, SystemConfig};
pub use error::{Error, Result};
pub use prob::{total_variation, Pmf};
