//! Unsupervised skull segmentation from MR via synthetic CT.
//!
//! The pipeline translates MR to CT with a contrastive unpaired generator
//! ([`cut`]), optionally super-resolves the synthetic CT ([`lapsrn`]), maps
//! it back to Hounsfield units by histogram matching and extracts the bone
//! mask by thresholding and binary morphology ([`postprocess`]).

pub mod checkpoint;
pub mod cut;
pub mod error;
pub mod metrics;
pub mod lapsrn;
pub mod phantom;
pub mod postprocess;
pub mod rng;
pub mod schedule;
pub mod volume;
pub mod volume_io;

pub use error::{Error, Result};
pub use volume::{Domain, SegmentationMask, Spacing, Volume};
