//! Congestion marking clock toolkit.
//!
//! Switches along a path add a small counter to timing packets, one step per
//! queue threshold crossed. The receiver subtracts `counter * threshold_delay`
//! from the measured one-way delay, which removes most of the queuing-induced
//! asymmetry that corrupts two-way offset estimates.
//!
//! Module layout:
//!
//! * [`dist`] per-hop delay laws, grid histograms, goodness of fit
//! * [`cmc`] switch-side marking rules and header capacity arithmetic
//! * [`sync`] four-timestamp offset estimation and compensation
//! * [`propagate`] forward recursion for the corrected error law and MSE
//! * [`criteria`] sufficient conditions for improvement and their regions
//! * [`tune`] M/M/1 model construction and threshold search
//! * [`sim`] discrete-event network simulator and RTT filters

pub mod cmc;
pub mod criteria;
pub mod dist;
mod error;
pub mod propagate;
mod spectral;
pub mod sim;
pub mod sync;
pub mod tune;

pub use error::{Error, Result};
