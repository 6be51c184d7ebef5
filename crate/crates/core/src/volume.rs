//! In-memory volume and label-map types.
//!
//! Grids are stored in Fortran (column-major) order: the first index varies
//! fastest. The canonical anatomical orientation is RAS, meaning storage axis
//! 0 increases toward the subject's Right, axis 1 toward Anterior, axis 2
//! toward Superior. Analysis code assumes canonical orientation; anything read
//! from disk can be brought there with [`VolumeImage::into_canonical`] /
//! [`LabelMap::into_canonical`], which is a lossless index permutation (no
//! resampling).
//!
//! [`VolumeImage`] keeps the voxel payload exactly as decoded from disk, plus
//! the intensity scaling declared by the source; scaled values are exposed by
//! [`VolumeImage::value`]. Keeping the raw payload makes write-after-read
//! reproduce the data section byte for byte.

use crate::error::{Error, Result};
use crate::schema::MAX_LABEL;

/// Voxel datatypes supported for I/O.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DataType {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl DataType {
    /// NIfTI-1 datatype code.
    pub fn code(self) -> i16 {
        match self {
            DataType::U8 => 2,
            DataType::I16 => 4,
            DataType::I32 => 8,
            DataType::F32 => 16,
            DataType::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Option<DataType> {
        match code {
            2 => Some(DataType::U8),
            4 => Some(DataType::I16),
            8 => Some(DataType::I32),
            16 => Some(DataType::F32),
            64 => Some(DataType::F64),
            _ => None,
        }
    }

    pub fn byte_size(self) -> usize {
        match self {
            DataType::U8 => 1,
            DataType::I16 => 2,
            DataType::I32 | DataType::F32 => 4,
            DataType::F64 => 8,
        }
    }

    pub fn bitpix(self) -> i16 {
        (self.byte_size() * 8) as i16
    }

    pub fn is_integer(self) -> bool {
        matches!(self, DataType::U8 | DataType::I16 | DataType::I32)
    }

    pub const ALL: [DataType; 5] =
        [DataType::U8, DataType::I16, DataType::I32, DataType::F32, DataType::F64];
}

/// Byte order of the on-disk encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Endianness {
    #[default]
    Little,
    Big,
}

/// Typed voxel payload, exactly as decoded.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ScalarData {
    pub fn len(&self) -> usize {
        match self {
            ScalarData::U8(v) => v.len(),
            ScalarData::I16(v) => v.len(),
            ScalarData::I32(v) => v.len(),
            ScalarData::F32(v) => v.len(),
            ScalarData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data_type(&self) -> DataType {
        match self {
            ScalarData::U8(_) => DataType::U8,
            ScalarData::I16(_) => DataType::I16,
            ScalarData::I32(_) => DataType::I32,
            ScalarData::F32(_) => DataType::F32,
            ScalarData::F64(_) => DataType::F64,
        }
    }

    /// Raw (unscaled) value at a linear index, widened to f64.
    pub fn get(&self, index: usize) -> f64 {
        match self {
            ScalarData::U8(v) => v[index] as f64,
            ScalarData::I16(v) => v[index] as f64,
            ScalarData::I32(v) => v[index] as f64,
            ScalarData::F32(v) => v[index] as f64,
            ScalarData::F64(v) => v[index],
        }
    }

    /// New payload where output element `i` is input element `map(i)`.
    pub(crate) fn gather(&self, len: usize, map: impl Fn(usize) -> usize) -> ScalarData {
        macro_rules! arm {
            ($variant:ident, $v:expr) => {
                ScalarData::$variant((0..len).map(|i| $v[map(i)]).collect())
            };
        }
        match self {
            ScalarData::U8(v) => arm!(U8, v),
            ScalarData::I16(v) => arm!(I16, v),
            ScalarData::I32(v) => arm!(I32, v),
            ScalarData::F32(v) => arm!(F32, v),
            ScalarData::F64(v) => arm!(F64, v),
        }
    }
}

/// World axes of the RAS convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnatomicalAxis {
    Right,
    Anterior,
    Superior,
}

impl AnatomicalAxis {
    fn index(self) -> usize {
        match self {
            AnatomicalAxis::Right => 0,
            AnatomicalAxis::Anterior => 1,
            AnatomicalAxis::Superior => 2,
        }
    }

    fn from_index(i: usize) -> AnatomicalAxis {
        match i {
            0 => AnatomicalAxis::Right,
            1 => AnatomicalAxis::Anterior,
            _ => AnatomicalAxis::Superior,
        }
    }
}

/// Which world axis a storage axis runs along, and in which direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisDirection {
    pub axis: AnatomicalAxis,
    pub toward_positive: bool,
}

impl AxisDirection {
    /// One-letter code: the world direction the storage axis points toward.
    pub fn letter(self) -> char {
        match (self.axis, self.toward_positive) {
            (AnatomicalAxis::Right, true) => 'R',
            (AnatomicalAxis::Right, false) => 'L',
            (AnatomicalAxis::Anterior, true) => 'A',
            (AnatomicalAxis::Anterior, false) => 'P',
            (AnatomicalAxis::Superior, true) => 'S',
            (AnatomicalAxis::Superior, false) => 'I',
        }
    }
}

/// A signed permutation mapping storage axes to world axes.
///
/// Only axis-aligned orientations are representable; oblique acquisitions are
/// rejected at ingestion rather than silently rounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Orientation {
    axes: [AxisDirection; 3],
}

impl Orientation {
    /// Build from per-storage-axis directions. Each world axis must be
    /// claimed exactly once.
    pub fn new(axes: [AxisDirection; 3]) -> Result<Orientation> {
        let mut seen = [false; 3];
        for d in axes {
            let i = d.axis.index();
            if seen[i] {
                return Err(Error::OrientationNotBijective);
            }
            seen[i] = true;
        }
        Ok(Orientation { axes })
    }

    /// The canonical RAS orientation.
    pub fn canonical() -> Orientation {
        Orientation {
            axes: [
                AxisDirection { axis: AnatomicalAxis::Right, toward_positive: true },
                AxisDirection { axis: AnatomicalAxis::Anterior, toward_positive: true },
                AxisDirection { axis: AnatomicalAxis::Superior, toward_positive: true },
            ],
        }
    }

    pub fn is_canonical(&self) -> bool {
        *self == Orientation::canonical()
    }

    pub fn axes(&self) -> &[AxisDirection; 3] {
        &self.axes
    }

    /// Three-letter code such as "RAS" or "LPI".
    pub fn code(&self) -> String {
        self.axes.iter().map(|d| d.letter()).collect()
    }

    /// Classify three affine direction columns (column `j` is the world
    /// displacement per step along storage axis `j`). Each column must be
    /// within `tolerance` of one of the six signed world axes after
    /// normalization; anything farther off is reported as oblique.
    pub fn from_direction_columns(columns: &[[f64; 3]; 3], tolerance: f64) -> Result<Orientation> {
        let mut axes = [AxisDirection { axis: AnatomicalAxis::Right, toward_positive: true }; 3];
        for (j, col) in columns.iter().enumerate() {
            let norm = (col[0] * col[0] + col[1] * col[1] + col[2] * col[2]).sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::OrientationNotBijective);
            }
            let unit = [col[0] / norm, col[1] / norm, col[2] / norm];
            let mut main = 0;
            for i in 1..3 {
                if unit[i].abs() > unit[main].abs() {
                    main = i;
                }
            }
            let deviation = (0..3)
                .filter(|&i| i != main)
                .map(|i| unit[i].abs())
                .fold(0.0f64, f64::max);
            if deviation > tolerance {
                return Err(Error::ObliqueAffine { axis: j, deviation, tolerance });
            }
            axes[j] = AxisDirection {
                axis: AnatomicalAxis::from_index(main),
                toward_positive: unit[main] > 0.0,
            };
        }
        Orientation::new(axes)
    }

    /// The signed permutation as direction columns: entry `j` is the unit
    /// world direction of storage axis `j`, in the same layout
    /// [`Orientation::from_direction_columns`] accepts.
    pub fn direction_matrix(&self) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for (j, d) in self.axes.iter().enumerate() {
            m[j][d.axis.index()] = if d.toward_positive { 1.0 } else { -1.0 };
        }
        m
    }
}

/// Index permutation that reorients a grid to canonical RAS.
struct CanonicalMap {
    new_dims: [usize; 3],
    new_spacing: [f64; 3],
    old_dims: [usize; 3],
    /// World axis `a` is fed by storage axis `source_axis[a]`.
    source_axis: [usize; 3],
    /// Whether that storage axis needs its index reversed.
    reversed: [bool; 3],
}

impl CanonicalMap {
    fn new(dims: [usize; 3], spacing: [f64; 3], orientation: &Orientation) -> CanonicalMap {
        let mut source_axis = [0usize; 3];
        let mut reversed = [false; 3];
        for (j, d) in orientation.axes().iter().enumerate() {
            source_axis[d.axis.index()] = j;
            reversed[d.axis.index()] = !d.toward_positive;
        }
        let new_dims = [dims[source_axis[0]], dims[source_axis[1]], dims[source_axis[2]]];
        let new_spacing =
            [spacing[source_axis[0]], spacing[source_axis[1]], spacing[source_axis[2]]];
        CanonicalMap { new_dims, new_spacing, old_dims: dims, source_axis, reversed }
    }

    /// Linear source index for canonical coordinates (v0, v1, v2).
    fn source_linear(&self, v: [usize; 3]) -> usize {
        let mut u = [0usize; 3];
        for a in 0..3 {
            let j = self.source_axis[a];
            u[j] = if self.reversed[a] { self.old_dims[j] - 1 - v[a] } else { v[a] };
        }
        u[0] + self.old_dims[0] * (u[1] + self.old_dims[1] * u[2])
    }

    fn gather_map(&self) -> impl Fn(usize) -> usize + '_ {
        let [n0, n1, _] = self.new_dims;
        move |linear| {
            let v0 = linear % n0;
            let rest = linear / n0;
            let v1 = rest % n1;
            let v2 = rest / n1;
            self.source_linear([v0, v1, v2])
        }
    }
}

fn validate_grid(dims: [usize; 3], spacing: [f64; 3], len: usize) -> Result<()> {
    for (axis, &d) in dims.iter().enumerate() {
        if d == 0 {
            return Err(Error::NonPositiveDimension { axis, value: 0 });
        }
    }
    for (axis, &s) in spacing.iter().enumerate() {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::NonPositiveSpacing { axis, value: s });
        }
    }
    let expected = dims[0] * dims[1] * dims[2];
    if expected != len {
        return Err(Error::InvalidParameter(format!(
            "payload holds {len} voxels but dims {dims:?} require {expected}"
        )));
    }
    Ok(())
}

fn validate_labels(labels: &[u8]) -> Result<()> {
    for (index, &value) in labels.iter().enumerate() {
        if value > MAX_LABEL {
            return Err(Error::LabelOutOfSchema { value: value as i64, index });
        }
    }
    Ok(())
}

/// A scalar 3-D image on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeImage {
    dims: [usize; 3],
    spacing: [f64; 3],
    orientation: Orientation,
    data: ScalarData,
    slope: f64,
    intercept: f64,
    endianness: Endianness,
    extensions: Vec<u8>,
}

impl VolumeImage {
    /// New canonical-orientation image with identity intensity scaling.
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: ScalarData) -> Result<VolumeImage> {
        VolumeImage::with_orientation(dims, spacing, Orientation::canonical(), data)
    }

    pub fn with_orientation(
        dims: [usize; 3],
        spacing: [f64; 3],
        orientation: Orientation,
        data: ScalarData,
    ) -> Result<VolumeImage> {
        validate_grid(dims, spacing, data.len())?;
        Ok(VolumeImage {
            dims,
            spacing,
            orientation,
            data,
            slope: 1.0,
            intercept: 0.0,
            endianness: Endianness::default(),
            extensions: Vec::new(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        dims: [usize; 3],
        spacing: [f64; 3],
        orientation: Orientation,
        data: ScalarData,
        slope: f64,
        intercept: f64,
        endianness: Endianness,
        extensions: Vec<u8>,
    ) -> Result<VolumeImage> {
        validate_grid(dims, spacing, data.len())?;
        Ok(VolumeImage { dims, spacing, orientation, data, slope, intercept, endianness, extensions })
    }

    /// Same grid and provenance metadata, different payload.
    pub(crate) fn clone_with_data(&self, data: ScalarData) -> VolumeImage {
        debug_assert_eq!(data.len(), self.len());
        VolumeImage { data, extensions: self.extensions.clone(), ..*self }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn orientation(&self) -> &Orientation {
        &self.orientation
    }

    pub fn data_type(&self) -> DataType {
        self.data.data_type()
    }

    pub fn raw_data(&self) -> &ScalarData {
        &self.data
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn endianness(&self) -> Endianness {
        self.endianness
    }

    pub fn extensions(&self) -> &[u8] {
        &self.extensions
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Volume of one voxel in mm^3.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, linear: usize) -> [usize; 3] {
        let i = linear % self.dims[0];
        let rest = linear / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Intensity at a linear index with the source scaling applied.
    pub fn value(&self, linear: usize) -> f64 {
        self.slope * self.data.get(linear) + self.intercept
    }

    /// Unscaled stored value at a linear index.
    pub fn raw_value(&self, linear: usize) -> f64 {
        self.data.get(linear)
    }

    pub fn is_canonical(&self) -> bool {
        self.orientation.is_canonical()
    }

    /// Reorient to canonical RAS by permuting and reversing indices.
    /// Voxel values are moved, never interpolated. No-op when already
    /// canonical.
    pub fn into_canonical(self) -> VolumeImage {
        if self.is_canonical() {
            return self;
        }
        let map = CanonicalMap::new(self.dims, self.spacing, &self.orientation);
        let data = self.data.gather(self.len(), map.gather_map());
        VolumeImage {
            dims: map.new_dims,
            spacing: map.new_spacing,
            orientation: Orientation::canonical(),
            data,
            slope: self.slope,
            intercept: self.intercept,
            endianness: self.endianness,
            extensions: self.extensions,
        }
    }
}

/// A structure label volume; every voxel holds 0 (background) or a schema
/// code 1..=16.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    dims: [usize; 3],
    spacing: [f64; 3],
    orientation: Orientation,
    labels: Vec<u8>,
    source_type: DataType,
    endianness: Endianness,
    extensions: Vec<u8>,
}

impl LabelMap {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], labels: Vec<u8>) -> Result<LabelMap> {
        LabelMap::with_orientation(dims, spacing, Orientation::canonical(), labels)
    }

    pub fn with_orientation(
        dims: [usize; 3],
        spacing: [f64; 3],
        orientation: Orientation,
        labels: Vec<u8>,
    ) -> Result<LabelMap> {
        validate_grid(dims, spacing, labels.len())?;
        validate_labels(&labels)?;
        Ok(LabelMap {
            dims,
            spacing,
            orientation,
            labels,
            source_type: DataType::U8,
            endianness: Endianness::default(),
            extensions: Vec::new(),
        })
    }

    pub(crate) fn from_parts(
        dims: [usize; 3],
        spacing: [f64; 3],
        orientation: Orientation,
        labels: Vec<u8>,
        source_type: DataType,
        endianness: Endianness,
        extensions: Vec<u8>,
    ) -> Result<LabelMap> {
        validate_grid(dims, spacing, labels.len())?;
        validate_labels(&labels)?;
        Ok(LabelMap { dims, spacing, orientation, labels, source_type, endianness, extensions })
    }

    /// Same grid and provenance metadata, different labels. Debug builds
    /// assert the new labels are schema-valid; callers only produce values
    /// that already passed validation.
    pub(crate) fn clone_with_labels(&self, labels: Vec<u8>) -> LabelMap {
        debug_assert_eq!(labels.len(), self.labels.len());
        debug_assert!(validate_labels(&labels).is_ok());
        LabelMap {
            labels,
            extensions: self.extensions.clone(),
            orientation: self.orientation,
            ..*self
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn orientation(&self) -> &Orientation {
        &self.orientation
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn source_type(&self) -> DataType {
        self.source_type
    }

    pub fn endianness(&self) -> Endianness {
        self.endianness
    }

    pub fn extensions(&self) -> &[u8] {
        &self.extensions
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, linear: usize) -> [usize; 3] {
        let i = linear % self.dims[0];
        let rest = linear / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Voxel counts per label value, indexed 0..=16.
    pub fn histogram(&self) -> [u64; 17] {
        let mut hist = [0u64; 17];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }

    pub fn is_canonical(&self) -> bool {
        self.orientation.is_canonical()
    }

    /// Reorient to canonical RAS; see [`VolumeImage::into_canonical`].
    pub fn into_canonical(self) -> LabelMap {
        if self.is_canonical() {
            return self;
        }
        let map = CanonicalMap::new(self.dims, self.spacing, &self.orientation);
        let len = self.labels.len();
        let gather = map.gather_map();
        let labels = (0..len).map(|i| self.labels[gather(i)]).collect();
        LabelMap {
            dims: map.new_dims,
            spacing: map.new_spacing,
            orientation: Orientation::canonical(),
            labels,
            source_type: self.source_type,
            endianness: self.endianness,
            extensions: self.extensions,
        }
    }
}

/// Check two grids agree exactly in dims, spacing, and orientation.
pub(crate) fn check_same_grid(
    context: &'static str,
    a: (&[usize; 3], &[f64; 3], &Orientation),
    b: (&[usize; 3], &[f64; 3], &Orientation),
) -> Result<()> {
    if a.0 != b.0 || a.1 != b.1 || a.2 != b.2 {
        return Err(Error::grid_mismatch(context, (a.0, a.1), (b.0, b.1)));
    }
    Ok(())
}
