//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("not a NIfTI-1 single-file image (magic bytes {found:02x?})")]
    BadMagic { found: [u8; 4] },

    #[error("NIfTI-2 input is not supported; convert to NIfTI-1 first")]
    Nifti2Unsupported,

    #[error("two-file NIfTI (.hdr/.img pair) is not supported; use single-file .nii or .nii.gz")]
    DualFileUnsupported,

    #[error("file truncated: expected at least {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("invalid NIfTI header: {0}")]
    InvalidHeader(String),

    #[error("unsupported NIfTI datatype code {0} (supported: uint8, int16, int32, float32, float64)")]
    UnsupportedDataType(i16),

    #[error("expected a 3-D volume, header declares {0} dimensions")]
    NotThreeDimensional(i16),

    #[error("dimension {axis} is {value}; every axis must have at least one voxel")]
    NonPositiveDimension { axis: usize, value: i64 },

    #[error("voxel spacing along axis {axis} is {value}; spacings must be positive")]
    NonPositiveSpacing { axis: usize, value: f64 },

    #[error(
        "affine column {axis} is oblique (off-axis component {deviation:.6} exceeds tolerance {tolerance}); \
         resample the image to an axis-aligned grid first"
    )]
    ObliqueAffine {
        axis: usize,
        deviation: f64,
        tolerance: f64,
    },

    #[error("affine does not map storage axes onto three distinct anatomical axes")]
    OrientationNotBijective,

    #[error("label value {value} at voxel index {index} is outside the schema range 0..=16")]
    LabelOutOfSchema { value: i64, index: usize },

    #[error("label map declares intensity scaling (slope {slope}, intercept {intercept}); labels must be stored unscaled")]
    ScaledLabelMap { slope: f64, intercept: f64 },

    #[error("label map datatype must be an integer type, got {0:?}")]
    NonIntegerLabelType(crate::volume::DataType),

    #[error("{0}: input must be in canonical RAS orientation (reorient with into_canonical first)")]
    NotCanonical(&'static str),

    #[error("{context}: grids differ ({left} vs {right})")]
    GridMismatch {
        context: &'static str,
        left: String,
        right: String,
    },

    #[error("structure code {0} is outside the schema range 1..=16")]
    InvalidStructureCode(u8),

    #[error("connectivity must be 6, 18, or 26, got {0}")]
    InvalidConnectivity(u32),

    #[error("remap table maps source value {0} more than once")]
    DuplicateRemapEntry(i64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {message}")]
    MalformedInput { path: PathBuf, message: String },

    #[error("no input pairs found ({0})")]
    EmptyCohort(String),
}

impl Error {
    pub(crate) fn grid_mismatch(
        context: &'static str,
        left: (&[usize; 3], &[f64; 3]),
        right: (&[usize; 3], &[f64; 3]),
    ) -> Self {
        Error::GridMismatch {
            context,
            left: format!("dims {:?} spacing {:?}", left.0, left.1),
            right: format!("dims {:?} spacing {:?}", right.0, right.1),
        }
    }
}
