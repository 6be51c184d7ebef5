//! Per-structure feature extraction.
//!
//! Works on a paired intensity volume and label map in canonical RAS
//! orientation. Everything except component counting happens in one fused
//! pass over the voxels, with one running accumulator per structure code plus
//! the three union aggregates (air, soft tissue, all); the result is
//! observationally identical to running a separate pass per code because each
//! accumulator sees the same values in the same order either way.
//!
//! Conventions:
//!
//! * volume is voxel count times the voxel volume in mm^3;
//! * intensity mean and standard deviation are over the structure's voxels
//!   with the source intensity scaling applied; the SD is population (divide
//!   by n); both are undefined (never reported as 0) for empty structures;
//! * the bounding box is axis-aligned in canonical space and reported as
//!   physical extents: width along Right, depth along Anterior, height along
//!   Superior, each `(max_index - min_index + 1) * spacing`;
//! * component counts default to the 26-neighborhood
//!   ([`DEFAULT_CONNECTIVITY`]).

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::components::{count_components_where, Connectivity};
use crate::error::{Error, Result};
use crate::schema::{parse_code, MAX_LABEL};
use crate::volume::{check_same_grid, LabelMap, VolumeImage};

/// Measurements for one structure (or one union region).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StructureFeatures {
    pub voxel_count: u64,
    pub volume_mm3: f64,
    pub intensity_mean: Option<f64>,
    pub intensity_sd: Option<f64>,
    pub width_mm: Option<f64>,
    pub depth_mm: Option<f64>,
    pub height_mm: Option<f64>,
    pub component_count: usize,
}

/// All features of one subject: the 16 structures plus union aggregates.
#[derive(Debug, Clone, Serialize)]
pub struct SubjectFeatures {
    pub subject_id: String,
    pub per_code: BTreeMap<u8, StructureFeatures>,
    pub union_air: StructureFeatures,
    pub union_soft_tissue: StructureFeatures,
    pub union_all: StructureFeatures,
}

/// Welford accumulator plus bounding-box tracking.
#[derive(Clone, Copy)]
struct Acc {
    count: u64,
    mean: f64,
    m2: f64,
    min: [usize; 3],
    max: [usize; 3],
}

impl Acc {
    fn new() -> Acc {
        Acc { count: 0, mean: 0.0, m2: 0.0, min: [usize::MAX; 3], max: [0; 3] }
    }

    fn push(&mut self, value: f64, coords: [usize; 3]) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
        for axis in 0..3 {
            self.min[axis] = self.min[axis].min(coords[axis]);
            self.max[axis] = self.max[axis].max(coords[axis]);
        }
    }

    fn finish(&self, spacing: [f64; 3], component_count: usize) -> StructureFeatures {
        let voxel_volume = spacing[0] * spacing[1] * spacing[2];
        if self.count == 0 {
            return StructureFeatures {
                voxel_count: 0,
                volume_mm3: 0.0,
                intensity_mean: None,
                intensity_sd: None,
                width_mm: None,
                depth_mm: None,
                height_mm: None,
                component_count,
            };
        }
        let extent = |axis: usize| (self.max[axis] - self.min[axis] + 1) as f64 * spacing[axis];
        StructureFeatures {
            voxel_count: self.count,
            volume_mm3: self.count as f64 * voxel_volume,
            intensity_mean: Some(self.mean),
            intensity_sd: Some((self.m2 / self.count as f64).sqrt()),
            width_mm: Some(extent(0)),
            depth_mm: Some(extent(1)),
            height_mm: Some(extent(2)),
            component_count,
        }
    }
}

fn check_canonical_pair(
    context: &'static str,
    img: &VolumeImage,
    lm: &LabelMap,
) -> Result<()> {
    if !img.is_canonical() || !lm.is_canonical() {
        return Err(Error::NotCanonical(context));
    }
    check_same_grid(
        context,
        (&img.dims(), &img.spacing(), img.orientation()),
        (&lm.dims(), &lm.spacing(), lm.orientation()),
    )
}

/// Extract all structure and union features for one subject.
pub fn extract_subject(
    img: &VolumeImage,
    lm: &LabelMap,
    subject_id: &str,
    connectivity: Connectivity,
) -> Result<SubjectFeatures> {
    check_canonical_pair("extract_subject", img, lm)?;

    let labels = lm.labels();
    let spacing = lm.spacing();
    let dims = lm.dims();

    let mut per_code = [Acc::new(); MAX_LABEL as usize + 1];
    let mut air = Acc::new();
    let mut soft = Acc::new();
    let mut all = Acc::new();

    let [nx, ny, _] = dims;
    for (linear, &label) in labels.iter().enumerate() {
        if label == 0 {
            continue;
        }
        let i = linear % nx;
        let rest = linear / nx;
        let coords = [i, rest % ny, rest / ny];
        let value = img.value(linear);
        per_code[label as usize].push(value, coords);
        all.push(value, coords);
        if label <= 8 {
            air.push(value, coords);
        } else {
            soft.push(value, coords);
        }
    }

    // Component counting walks the grid once per region; do the 19 regions
    // in parallel.
    let mut jobs: Vec<(i32, &(dyn Fn(usize) -> bool + Sync))> = Vec::new();
    let code_fns: Vec<Box<dyn Fn(usize) -> bool + Sync>> = (1..=MAX_LABEL)
        .map(|code| {
            Box::new(move |i: usize| labels[i] == code) as Box<dyn Fn(usize) -> bool + Sync>
        })
        .collect();
    for (c, f) in code_fns.iter().enumerate() {
        jobs.push((c as i32 + 1, f.as_ref()));
    }
    let is_air = |i: usize| (1..=8).contains(&labels[i]);
    let is_soft = |i: usize| (9..=16).contains(&labels[i]);
    let is_any = |i: usize| labels[i] != 0;
    jobs.push((-1, &is_air));
    jobs.push((-2, &is_soft));
    jobs.push((-3, &is_any));

    let counts: BTreeMap<i32, usize> = jobs
        .into_par_iter()
        .map(|(key, f)| (key, count_components_where(f, dims, connectivity)))
        .collect();

    let per_code: BTreeMap<u8, StructureFeatures> = (1..=MAX_LABEL)
        .map(|code| {
            (code, per_code[code as usize].finish(spacing, counts[&(code as i32)]))
        })
        .collect();

    Ok(SubjectFeatures {
        subject_id: subject_id.to_string(),
        per_code,
        union_air: air.finish(spacing, counts[&-1]),
        union_soft_tissue: soft.finish(spacing, counts[&-2]),
        union_all: all.finish(spacing, counts[&-3]),
    })
}

/// Physical volume of one structure in mm^3 (0 when absent).
pub fn structure_volume(lm: &LabelMap, code: u8) -> Result<f64> {
    parse_code(code)?;
    let count = lm.labels().iter().filter(|&&l| l == code).count();
    Ok(count as f64 * lm.voxel_volume_mm3())
}

/// Mean and population SD of the image intensity over one structure.
/// `None` when the structure is absent.
pub fn intensity_stats(
    img: &VolumeImage,
    lm: &LabelMap,
    code: u8,
) -> Result<Option<(f64, f64)>> {
    parse_code(code)?;
    check_same_grid(
        "intensity_stats",
        (&img.dims(), &img.spacing(), img.orientation()),
        (&lm.dims(), &lm.spacing(), lm.orientation()),
    )?;
    let mut acc = Acc::new();
    for (linear, &label) in lm.labels().iter().enumerate() {
        if label == code {
            acc.push(img.value(linear), [0, 0, 0]);
        }
    }
    if acc.count == 0 {
        return Ok(None);
    }
    Ok(Some((acc.mean, (acc.m2 / acc.count as f64).sqrt())))
}

/// Axis-aligned physical bounding-box extents of a structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxExtents {
    /// Extent along the Anterior axis (canonical axis 1).
    pub depth_mm: f64,
    /// Extent along the Right axis (canonical axis 0).
    pub width_mm: f64,
    /// Extent along the Superior axis (canonical axis 2).
    pub height_mm: f64,
}

/// Bounding box of one structure; `None` when absent. Requires canonical
/// orientation, since the width/depth/height names are anatomical.
pub fn bounding_box(lm: &LabelMap, code: u8) -> Result<Option<BoxExtents>> {
    parse_code(code)?;
    if !lm.is_canonical() {
        return Err(Error::NotCanonical("bounding_box"));
    }
    let mut min = [usize::MAX; 3];
    let mut max = [0usize; 3];
    let mut seen = false;
    for (linear, &label) in lm.labels().iter().enumerate() {
        if label == code {
            seen = true;
            let c = lm.coords(linear);
            for axis in 0..3 {
                min[axis] = min[axis].min(c[axis]);
                max[axis] = max[axis].max(c[axis]);
            }
        }
    }
    if !seen {
        return Ok(None);
    }
    let spacing = lm.spacing();
    let extent = |axis: usize| (max[axis] - min[axis] + 1) as f64 * spacing[axis];
    Ok(Some(BoxExtents { depth_mm: extent(1), width_mm: extent(0), height_mm: extent(2) }))
}

/// Number of connected components of one structure.
pub fn component_count(lm: &LabelMap, code: u8, connectivity: Connectivity) -> Result<usize> {
    parse_code(code)?;
    let labels = lm.labels();
    Ok(count_components_where(|i| labels[i] == code, lm.dims(), connectivity))
}

impl SubjectFeatures {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Rows in CSV order: 16 codes then the three unions.
    pub(crate) fn rows(&self) -> Vec<(String, Option<u8>, &StructureFeatures)> {
        let mut rows: Vec<(String, Option<u8>, &StructureFeatures)> = self
            .per_code
            .iter()
            .map(|(&code, f)| {
                (parse_code(code).expect("stored codes are valid").display_name(), Some(code), f)
            })
            .collect();
        rows.push(("union_air".to_string(), None, &self.union_air));
        rows.push(("union_soft_tissue".to_string(), None, &self.union_soft_tissue));
        rows.push(("union_all".to_string(), None, &self.union_all));
        rows
    }
}

/// Feature table CSV: one row per (subject, structure or union). Undefined
/// values serialize as empty cells, never as 0.
pub fn write_features_csv<'a>(
    subjects: impl IntoIterator<Item = &'a SubjectFeatures>,
    sink: impl Write,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "subject_id",
        "structure",
        "code",
        "voxel_count",
        "volume_mm3",
        "intensity_mean",
        "intensity_sd",
        "width_mm",
        "depth_mm",
        "height_mm",
        "component_count",
    ])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for subject in subjects {
        for (structure, code, f) in subject.rows() {
            w.write_record([
                subject.subject_id.clone(),
                structure,
                code.map(|c| c.to_string()).unwrap_or_default(),
                f.voxel_count.to_string(),
                format!("{}", f.volume_mm3),
                fmt(f.intensity_mean),
                fmt(f.intensity_sd),
                fmt(f.width_mm),
                fmt(f.depth_mm),
                fmt(f.height_mm),
                f.component_count.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
