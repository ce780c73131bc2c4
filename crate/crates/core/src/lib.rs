//! Multi-base-station CSI fingerprint localization.
//!
//! The crate simulates OFDM-MIMO uplink channels between a user and several
//! base stations, turns them into real-valued fingerprints, trains per-station
//! convolutional regressors that also predict their own aleatoric variance,
//! and fuses the per-station estimates with Monte-Carlo-dropout or
//! leave-one-out ensemble certainty weights.

mod binio;
pub mod channel;
pub mod config;
pub mod error;
pub mod fingerprint;
pub mod fusion;
pub mod harness;
pub mod neural;
pub mod seed;
pub mod selftest;
pub mod uncertainty;

pub use error::{Error, Result};
