//! Synthetic phantoms with exact ground truth.
//!
//! A phantom places one ellipsoid per (sinus, side) region on a canonical
//! grid. Each ellipsoid is filled with air-labeled voxels except for a
//! planar cap at its inferior end, which is labeled soft tissue; the cap
//! size realizes a requested opacification fraction. The image assigns a
//! constant intensity band per tissue class plus optional seeded Gaussian
//! noise, so every derived quantity (voxel counts, fractions, extents,
//! component counts, band means) is known exactly at generation time and is
//! returned alongside the volumes as [`GroundTruth`].
//!
//! Generation is deterministic: the same spec always produces bit-identical
//! volumes.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{code_of, Side, Sinus, Tissue};
use crate::volume::{LabelMap, ScalarData, VolumeImage};

/// Axis-aligned ellipsoid in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidSpec {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl EllipsoidSpec {
    fn contains(&self, idx: [usize; 3]) -> bool {
        let mut s = 0.0;
        for a in 0..3 {
            let d = (idx[a] as f64 - self.center[a]) / self.radii[a];
            s += d * d;
        }
        s <= 1.0
    }

    /// Inclusive index bounds of the circumscribing box.
    fn bounds(&self, dims: [usize; 3]) -> Result<([usize; 3], [usize; 3])> {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            if !(self.radii[a].is_finite() && self.radii[a] > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "ellipsoid radius on axis {a} must be positive, got {}",
                    self.radii[a]
                )));
            }
            let min = self.center[a] - self.radii[a];
            let max = self.center[a] + self.radii[a];
            if !(min >= 0.0 && max <= (dims[a] - 1) as f64) {
                return Err(Error::InvalidParameter(format!(
                    "ellipsoid spans [{min}, {max}] on axis {a}, outside grid of {}",
                    dims[a]
                )));
            }
            lo[a] = min.floor() as usize;
            hi[a] = max.ceil() as usize;
        }
        Ok((lo, hi))
    }
}

/// One (sinus, side) region of a phantom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub sinus: Sinus,
    pub side: Side,
    pub ellipsoid: EllipsoidSpec,
    /// Target soft-tissue fraction in [0, 1].
    pub opacification: f64,
}

/// Mean intensity per tissue class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityBands {
    pub background: f32,
    pub air: f32,
    pub soft_tissue: f32,
}

/// Complete description of one phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub subject_id: String,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub bands: IntensityBands,
    /// Standard deviation of the additive Gaussian noise; 0 disables noise
    /// and makes the image exactly piecewise constant.
    pub noise_sd: f32,
    pub seed: u64,
    /// At most one entry per (sinus, side); regions absent from the list are
    /// aplastic in the generated labels.
    pub regions: Vec<RegionSpec>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if self.dims[a] == 0 {
                return Err(Error::NonPositiveDimension { axis: a, value: 0 });
            }
            if !(self.spacing[a].is_finite() && self.spacing[a] > 0.0) {
                return Err(Error::NonPositiveSpacing { axis: a, value: self.spacing[a] });
            }
        }
        for v in [self.bands.background, self.bands.air, self.bands.soft_tissue] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("intensity band {v} is not finite")));
            }
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise standard deviation must be >= 0, got {}",
                self.noise_sd
            )));
        }
        let mut seen = [false; 8];
        for region in &self.regions {
            let slot = code_of(region.sinus, region.side, Tissue::Air) as usize - 1;
            if seen[slot] {
                return Err(Error::InvalidParameter(format!(
                    "duplicate region {} ({})",
                    region.sinus.name(),
                    region.side.name()
                )));
            }
            seen[slot] = true;
            if !(region.opacification.is_finite() && (0.0..=1.0).contains(&region.opacification))
            {
                return Err(Error::InvalidParameter(format!(
                    "opacification target must be in [0, 1], got {}",
                    region.opacification
                )));
            }
            region.ellipsoid.bounds(self.dims)?;
        }
        Ok(())
    }

    /// The frozen reference phantom: 64 voxels cubed at 1 mm isotropic with
    /// all eight regions present at opacification targets spanning every
    /// grade, expected total score 10.
    pub fn standard() -> PhantomSpec {
        let radii: BTreeMap<Sinus, [f64; 3]> = [
            (Sinus::Maxillary, [10.0, 9.0, 10.0]),
            (Sinus::Frontal, [8.0, 7.0, 7.0]),
            (Sinus::Ethmoid, [7.0, 8.0, 8.0]),
            (Sinus::Sphenoid, [7.0, 7.0, 7.0]),
        ]
        .into_iter()
        .collect();
        let planes: BTreeMap<Sinus, (f64, f64)> = [
            (Sinus::Maxillary, (20.0, 20.0)),
            (Sinus::Frontal, (20.0, 46.0)),
            (Sinus::Ethmoid, (44.0, 20.0)),
            (Sinus::Sphenoid, (44.0, 46.0)),
        ]
        .into_iter()
        .collect();
        let targets = [
            (Sinus::Maxillary, Side::Right, 0.02),
            (Sinus::Maxillary, Side::Left, 0.50),
            (Sinus::Frontal, Side::Right, 0.10),
            (Sinus::Frontal, Side::Left, 0.97),
            (Sinus::Ethmoid, Side::Right, 0.30),
            (Sinus::Ethmoid, Side::Left, 0.02),
            (Sinus::Sphenoid, Side::Right, 0.97),
            (Sinus::Sphenoid, Side::Left, 0.60),
        ];
        let regions = targets
            .into_iter()
            .map(|(sinus, side, opacification)| {
                let x = match side {
                    Side::Right => 44.0,
                    Side::Left => 20.0,
                };
                let (y, z) = planes[&sinus];
                RegionSpec {
                    sinus,
                    side,
                    ellipsoid: EllipsoidSpec { center: [x, y, z], radii: radii[&sinus] },
                    opacification,
                }
            })
            .collect();
        PhantomSpec {
            subject_id: "standard".into(),
            dims: [64, 64, 64],
            spacing: [1.0, 1.0, 1.0],
            bands: IntensityBands { background: 70.0, air: 30.0, soft_tissue: 180.0 },
            noise_sd: 5.0,
            seed: 42,
            regions,
        }
    }
}

/// Exact per-region bookkeeping recorded while generating.
#[derive(Debug, Clone, Serialize)]
pub struct RegionTruth {
    pub sinus: Sinus,
    pub side: Side,
    pub air_code: u8,
    pub soft_tissue_code: u8,
    pub total_voxels: u64,
    pub soft_tissue_voxels: u64,
    /// soft / total voxel ratio; `None` for an empty region.
    pub realized_opacification: Option<f64>,
    pub expected_grade: Option<u8>,
}

/// Everything knowable about a phantom without measuring it.
#[derive(Debug, Clone, Serialize)]
pub struct GroundTruth {
    pub subject_id: String,
    pub regions: Vec<RegionTruth>,
    /// Voxels per label value, index 0 holding background.
    pub voxel_counts: [u64; 17],
    /// Inclusive (min, max) index bounds per non-empty label.
    pub bounding_boxes: BTreeMap<u8, ([usize; 3], [usize; 3])>,
    /// Connected components per non-empty label, vertex connectivity,
    /// counted by a flood fill local to the generator.
    pub component_counts: BTreeMap<u8, usize>,
    pub bands: IntensityBands,
    pub noise_sd: f32,
    /// Weighted sum of expected grades.
    pub expected_total_score: u32,
}

/// A generated phantom with its ground truth.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: VolumeImage,
    pub labels: LabelMap,
    pub truth: GroundTruth,
}

fn expected_grade(fraction: f64) -> u8 {
    if fraction < 0.05 {
        0
    } else if fraction <= 0.95 {
        1
    } else {
        2
    }
}

/// Flood fill independent of the component-counting module, for use as a
/// second route to the same quantity in tests.
fn local_component_count(labels: &[u8], dims: [usize; 3], code: u8) -> usize {
    let idx = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
    let mut visited = vec![false; labels.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = idx(i, j, k);
                if labels[p] != code || visited[p] {
                    continue;
                }
                count += 1;
                visited[p] = true;
                stack.push([i, j, k]);
                while let Some([ci, cj, ck]) = stack.pop() {
                    for dk in -1i64..=1 {
                        for dj in -1i64..=1 {
                            for di in -1i64..=1 {
                                if di == 0 && dj == 0 && dk == 0 {
                                    continue;
                                }
                                let ni = ci as i64 + di;
                                let nj = cj as i64 + dj;
                                let nk = ck as i64 + dk;
                                if ni < 0
                                    || nj < 0
                                    || nk < 0
                                    || ni >= dims[0] as i64
                                    || nj >= dims[1] as i64
                                    || nk >= dims[2] as i64
                                {
                                    continue;
                                }
                                let (ni, nj, nk) = (ni as usize, nj as usize, nk as usize);
                                let q = idx(ni, nj, nk);
                                if labels[q] == code && !visited[q] {
                                    visited[q] = true;
                                    stack.push([ni, nj, nk]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    count
}

/// Generate the image, label map, and ground truth for a spec.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let n = spec.dims[0] * spec.dims[1] * spec.dims[2];
    let idx = |i: usize, j: usize, k: usize| i + spec.dims[0] * (j + spec.dims[1] * k);

    let mut labels = vec![0u8; n];
    let mut regions = Vec::with_capacity(spec.regions.len());
    let mut expected_total_score = 0u32;
    for region in &spec.regions {
        let air_code = code_of(region.sinus, region.side, Tissue::Air);
        let soft_code = code_of(region.sinus, region.side, Tissue::SoftTissue);
        let (lo, hi) = region.ellipsoid.bounds(spec.dims)?;
        let mut inside = Vec::new();
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    if region.ellipsoid.contains([i, j, k]) {
                        inside.push(idx(i, j, k));
                    }
                }
            }
        }
        let total = inside.len();
        let soft = ((region.opacification * total as f64).round() as usize).min(total);
        for (rank, &p) in inside.iter().enumerate() {
            if labels[p] != 0 {
                return Err(Error::InvalidParameter(format!(
                    "regions overlap: {} ({}) intersects label {}",
                    region.sinus.name(),
                    region.side.name(),
                    labels[p]
                )));
            }
            labels[p] = if rank < soft { soft_code } else { air_code };
        }
        let realized =
            if total == 0 { None } else { Some(soft as f64 / total as f64) };
        let grade = realized.map(expected_grade);
        expected_total_score += grade.unwrap_or(0) as u32 * region.sinus.score_weight();
        regions.push(RegionTruth {
            sinus: region.sinus,
            side: region.side,
            air_code,
            soft_tissue_code: soft_code,
            total_voxels: total as u64,
            soft_tissue_voxels: soft as u64,
            realized_opacification: realized,
            expected_grade: grade,
        });
    }

    let mut voxel_counts = [0u64; 17];
    let mut bounding_boxes: BTreeMap<u8, ([usize; 3], [usize; 3])> = BTreeMap::new();
    for k in 0..spec.dims[2] {
        for j in 0..spec.dims[1] {
            for i in 0..spec.dims[0] {
                let code = labels[idx(i, j, k)];
                voxel_counts[code as usize] += 1;
                if code == 0 {
                    continue;
                }
                let entry = bounding_boxes
                    .entry(code)
                    .or_insert(([usize::MAX; 3], [0usize; 3]));
                for (a, c) in [i, j, k].into_iter().enumerate() {
                    entry.0[a] = entry.0[a].min(c);
                    entry.1[a] = entry.1[a].max(c);
                }
            }
        }
    }
    let component_counts = bounding_boxes
        .keys()
        .map(|&code| (code, local_component_count(&labels, spec.dims, code)))
        .collect();

    let mut data = Vec::with_capacity(n);
    for &code in &labels {
        data.push(if code == 0 {
            spec.bands.background
        } else if code <= 8 {
            spec.bands.air
        } else {
            spec.bands.soft_tissue
        });
    }
    if spec.noise_sd > 0.0 {
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0f32, spec.noise_sd)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for v in &mut data {
            *v += normal.sample(&mut rng);
        }
    }

    let truth = GroundTruth {
        subject_id: spec.subject_id.clone(),
        regions,
        voxel_counts,
        bounding_boxes,
        component_counts,
        bands: spec.bands,
        noise_sd: spec.noise_sd,
        expected_total_score,
    };
    Ok(Phantom {
        image: VolumeImage::new(spec.dims, spec.spacing, ScalarData::F32(data))?,
        labels: LabelMap::new(spec.dims, spec.spacing, labels)?,
        truth,
    })
}

/// The frozen reference phantom.
pub fn standard_phantom() -> Result<Phantom> {
    generate(&PhantomSpec::standard())
}

/// Derive `n` varied specs from a master seed: per-region opacification
/// targets drawn uniformly from [0, 1] and radii shrunk by factors in
/// [0.8, 1.0]. Deterministic in `master_seed`.
pub fn cohort_specs(n: usize, master_seed: u64) -> Result<Vec<PhantomSpec>> {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    let unit = Uniform::new_inclusive(0.0f64, 1.0)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let shrink = Uniform::new_inclusive(0.8f64, 1.0)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut specs = Vec::with_capacity(n);
    for index in 0..n {
        let mut spec = PhantomSpec::standard();
        spec.subject_id = format!("phantom{:03}", index + 1);
        spec.seed = master_seed
            .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(index as u64 + 1));
        for region in &mut spec.regions {
            region.opacification = unit.sample(&mut rng);
            for r in &mut region.ellipsoid.radii {
                *r *= shrink.sample(&mut rng);
            }
        }
        spec.validate()?;
        specs.push(spec);
    }
    Ok(specs)
}
