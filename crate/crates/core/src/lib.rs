//! Analysis toolkit for paranasal sinus MRI segmentations.

pub mod augment;
pub mod cohort;
pub mod components;
pub mod edt;
pub mod error;
pub mod features;
pub mod metrics;
pub mod nifti;
pub mod phantom;
pub mod schema;
pub mod scoring;
pub mod volume;

pub use error::{Error, Result};
