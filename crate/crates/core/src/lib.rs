//! OmniTrack: per-video test-time optimization of a dense, globally consistent
//! motion representation.
//!
//! A video is modeled as a canonical quasi-3D volume carrying density and
//! color, connected to every frame's local volume by an invertible mapping
//! network conditioned on per-frame latent codes. Noisy pairwise optical flow
//! is filtered into a supervision set and the representation is optimized
//! against it. Once optimized, any pixel in any frame can be queried for a
//! full-length trajectory with visibility flags and pseudo-depth.
//!
//! Crate layout mirrors the pipeline:
//! - [`synth`]: synthetic scenes with exact ground truth (flows, tracks, occlusion)
//! - [`flow`]: flow collection, cycle/appearance filtering, occlusion rescue, chaining
//! - [`model`]: latent codes, invertible coupling stack, canonical field
//! - [`render`]: ray sampling, alpha compositing, visibility, trajectories
//! - [`train`]: losses, schedules, hard-example mining, Adam loop
//! - [`metrics`]: TAP-style evaluation (AJ, position accuracy, OA, TC)

pub mod container;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod model;
pub mod render;
pub mod synth;
pub mod train;
pub mod video;

pub use error::{Error, Result};
