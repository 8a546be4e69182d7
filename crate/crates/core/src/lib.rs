//! Secure CSI sensing for ISAC networks.
//!
//! The crate simulates a multipath OFDM link, estimates CSI from pilots,
//! plans which transmitter/receiver links to activate with a reward-trained
//! discrete graph diffusion model, generates safeguarding signals with a
//! conditional score-based diffusion model, modulates them onto the pilots,
//! and measures how much this degrades unauthorized activity recognition
//! while authorized receivers recover the true channel.

pub mod channel;
pub mod csi;
pub mod error;
pub mod eval;
pub mod exec;
pub mod modulator;
pub mod nn;
pub mod planner;
pub mod rng;
pub mod safeguard;
pub mod verify;

pub use error::{Error, Result};
