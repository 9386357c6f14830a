//! Time synchronization, calibration and episode packing for multi-sensor
//! handheld demonstration capture.
//!
//! Sensors (an AR-tracked controller, a camera, a gripper encoder and two
//! tactile pads) stream length-prefixed records to a hub that writes one log
//! per stream. A session is then calibrated (pose latency against the
//! camera, encoder counts to jaw width, controller mount offset), resampled
//! onto the video frame clock and written as a checksummed episode.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod episode;
pub mod geometry;
pub mod latency;
pub mod protocol;
pub mod report;
pub mod sim;
pub mod tactile;
pub mod text;
