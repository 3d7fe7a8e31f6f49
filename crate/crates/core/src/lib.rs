//! Physical-layer collision recovery for UHF RFID tag replies.
//!
//! The crate synthesizes collided FM0/Miller backscatter replies, estimates the
//! link period and delay of the strongest tag by correlating the received
//! envelope against scaled and translated preamble templates, decodes that tag
//! with a Viterbi sequence detector, subtracts its reconstruction and repeats
//! (successive interference cancellation). On top of the slot decoder sits a
//! framed-slotted-ALOHA (Q-protocol) inventory simulator that counts commands
//! and wall-clock duration for single- and multi-tag readers.
//!
//! Module map:
//!
//! - [`encoding`]: basis functions, state machines and tag control signals.
//! - [`channel`]: backscatter channel, leakage, AWGN, ideal low-pass envelope.
//! - [`estimator`]: mother/daughter templates, scalogram, peak, α and β.
//! - [`decoder`]: cost matrix and Viterbi detection.
//! - [`sic`]: reconstruction and the successive-interference-cancellation loop.
//! - [`qprotocol`]: command timing and inventory rounds.
//! - [`experiment`]: configuration, Monte Carlo drivers and CSV/trace output.

pub mod channel;
pub mod decoder;
pub mod encoding;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod qprotocol;
pub mod rng;
pub mod sic;
pub mod signal;
pub mod slot;

pub use error::{Error, Result};
pub use signal::SampledSignal;
