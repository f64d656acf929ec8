//! Desk-scale simulator for edge-cloud collaborative video inference.
//!
//! An edge device runs a small student model over a drifting synthetic
//! stream. It samples frames, ships them to a cloud teacher for labeling,
//! and fine-tunes its classification head on-device with a replay memory
//! of stored activations. The cloud also steers the device's frame
//! sampling rate with a feedback controller. The [`harness`] compares this
//! against edge-only, cloud-only, fixed-rate and cloud-training baselines
//! on accuracy and bandwidth.

pub mod cli;
pub mod cloud;
pub mod error;
pub mod harness;
pub mod learner;
pub mod replay;
pub mod seeds;
pub mod stream;
pub mod trainer;
pub mod transport;

pub use error::{ConfigIssue, Error, Result};
