//! Deterministic simulator for training generative adversarial networks across
//! several users who keep their training data local.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a small dense MLP engine with exact backpropagation.
//! - [`gan`]: generator/discriminator pair, BCE losses and training steps.
//! - [`protocol`]: selective gradient sharing between users and a parameter
//!   server over an auditable message channel.
//! - [`strategies`]: the federated, averaged-output and round-robin training
//!   loops, plus the single-user baseline.
//! - [`data`]: synthetic ring mixtures, IDX reader/writer and partitioning.
//! - [`metrics`] and [`harness`]: mode coverage, CSV reports and the
//!   experiment runner behind the `distgan` binary.

pub mod data;
pub mod error;
pub mod gan;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod protocol;
pub mod rng;
pub mod strategies;

pub use error::{Error, Result};
