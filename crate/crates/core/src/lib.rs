//! Scene-grounded fitting of articulated body sequences to egocentric 2D
//! keypoints.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod body;
pub mod config;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod optimizer;
pub mod scene;
pub mod synth;
