//! Motion evaluation for generated video built on point trajectories.
//!
//! The crate is organised around [`trackdata::TrackSet`], a set of point
//! tracks with per-frame occlusion flags. On top of it sit:
//!
//! * [`model`]: a trajectory autoencoder that compresses a track set into a
//!   fixed-size [`model::MotionLatent`] and decodes full tracks from query
//!   points.
//! * [`train`]: losses, hand-written reverse-mode gradients and the Adam
//!   training loop for the autoencoder.
//! * [`recon`]: Average Jaccard scoring of reconstructions and error
//!   localisation.
//! * [`dist`]: Fréchet distance, unbiased MMD and latent pair distances.
//! * [`motion`]: motion histograms, track length/radius, warp error.
//! * [`bench`]: synthetic tracks, track-space corruptions, the temporal
//!   sensitivity protocol and rating statistics.

pub mod bench;
pub mod dist;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod motion;
pub mod recon;
pub mod trackdata;
pub mod train;

pub use error::{Error, ErrorClass, Result};
