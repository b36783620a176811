//! 3D multi-object tracking from per-frame object detections.
//!
//! The crate covers the whole closed loop: similarity pose fitting from
//! normalized object coordinates ([`pose`]), a learned temporal association
//! graph ([`neural`], [`association`]), a deterministic indoor scene
//! simulator that produces ground truth and synthetic detections ([`sim`]),
//! and CLEAR-MOT scoring ([`eval`]).

pub mod association;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod neural;
pub mod pipeline;
pub mod pose;
pub mod sim;

pub use error::{Error, Result};
