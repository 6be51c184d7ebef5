//! Label-aware data augmentation.
//!
//! Two transforms, both operating on canonical-orientation image/label pairs:
//!
//! * Horizontal flip: mirrors the left-right storage axis and swaps each
//!   label for its contralateral partner, so a flipped pair is anatomically
//!   consistent. Applying the flip twice restores the input bit for bit.
//! * Elastic deformation: a random displacement field drawn on a coarse
//!   grid, Gaussian-smoothed, trilinearly upsampled, and applied by
//!   pull-back. Images are sampled trilinearly (integer types rounded and
//!   clamped to their range), labels by nearest neighbor. Smoothing uses a
//!   renormalized truncated kernel, a convex combination, so displacements
//!   never exceed the configured maximum.
//!
//! All randomness is seeded; every function is a pure function of its
//! inputs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::flip_code;
use crate::volume::{check_same_grid, DataType, LabelMap, ScalarData, VolumeImage};

/// Configuration of the elastic deformation field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticParams {
    /// Spacing of the coarse displacement grid.
    pub grid_spacing_mm: f64,
    /// Uniform draw bound per node and axis.
    pub max_displacement_mm: f64,
    /// Gaussian smoothing width; 0 disables smoothing.
    pub smoothing_sigma_mm: f64,
    pub seed: u64,
}

impl ElasticParams {
    /// Default field shape with an explicit seed.
    pub fn with_seed(seed: u64) -> ElasticParams {
        ElasticParams {
            grid_spacing_mm: 32.0,
            max_displacement_mm: 3.0,
            smoothing_sigma_mm: 8.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grid_spacing_mm.is_finite() && self.grid_spacing_mm > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grid spacing must be positive, got {}",
                self.grid_spacing_mm
            )));
        }
        for (name, v) in [
            ("max displacement", self.max_displacement_mm),
            ("smoothing sigma", self.smoothing_sigma_mm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One augmented image/label pair.
#[derive(Debug, Clone)]
pub struct AugmentedPair {
    /// `<subject>__<transform>__seed<seed>`, unique within a subject.
    pub name: String,
    /// `orig`, `flip`, `elastic<n>`, or `flipelastic<n>`.
    pub transform: String,
    /// Elastic field seed; 0 for the deterministic transforms.
    pub seed: u64,
    pub image: VolumeImage,
    pub labels: LabelMap,
}

impl AugmentedPair {
    fn new(subject_id: &str, transform: String, seed: u64, image: VolumeImage, labels: LabelMap) -> AugmentedPair {
        AugmentedPair {
            name: format!("{subject_id}__{transform}__seed{seed}"),
            transform,
            seed,
            image,
            labels,
        }
    }
}

fn require_canonical_image(image: &VolumeImage) -> Result<()> {
    if !image.is_canonical() {
        return Err(Error::NotCanonical("augmentation expects a canonical image"));
    }
    Ok(())
}

fn require_canonical_labels(labels: &LabelMap) -> Result<()> {
    if !labels.is_canonical() {
        return Err(Error::NotCanonical("augmentation expects a canonical label map"));
    }
    Ok(())
}

fn mirrored_index(dims: [usize; 3], linear: usize) -> usize {
    let i = linear % dims[0];
    let rest = linear / dims[0];
    (dims[0] - 1 - i) + dims[0] * rest
}

/// Mirror the left-right axis of a canonical image.
pub fn flip_image(image: &VolumeImage) -> Result<VolumeImage> {
    require_canonical_image(image)?;
    let dims = image.dims();
    let n = image.len();
    macro_rules! mirror {
        ($variant:ident, $v:expr) => {{
            let mut out = $v.clone();
            for (linear, value) in $v.iter().enumerate() {
                out[mirrored_index(dims, linear)] = *value;
            }
            ScalarData::$variant(out)
        }};
    }
    let data = match image.raw_data() {
        ScalarData::U8(v) => mirror!(U8, v),
        ScalarData::I16(v) => mirror!(I16, v),
        ScalarData::I32(v) => mirror!(I32, v),
        ScalarData::F32(v) => mirror!(F32, v),
        ScalarData::F64(v) => mirror!(F64, v),
    };
    debug_assert_eq!(data.len(), n);
    Ok(image.clone_with_data(data))
}

/// Mirror the left-right axis of a canonical label map and swap each code
/// for its contralateral partner.
pub fn flip_labels(labels: &LabelMap) -> Result<LabelMap> {
    require_canonical_labels(labels)?;
    let dims = labels.dims();
    let src = labels.labels();
    let mut out = vec![0u8; src.len()];
    for (linear, &code) in src.iter().enumerate() {
        out[mirrored_index(dims, linear)] = if code == 0 { 0 } else { flip_code(code)? };
    }
    Ok(labels.clone_with_labels(out))
}

/// Smoothed random displacement field, one value per coarse node per axis,
/// in mm. Nodes sit at multiples of the grid spacing from the volume origin
/// and extend one node past the far edge, so trilinear upsampling never
/// extrapolates.
struct DisplacementField {
    coarse_dims: [usize; 3],
    grid_spacing_mm: f64,
    /// Indexed [axis][node], nodes in storage order.
    fields: [Vec<f64>; 3],
}

impl DisplacementField {
    fn draw(dims: [usize; 3], spacing: [f64; 3], params: &ElasticParams) -> DisplacementField {
        let mut coarse_dims = [0usize; 3];
        for a in 0..3 {
            let extent_mm = dims[a] as f64 * spacing[a];
            coarse_dims[a] = (extent_mm / params.grid_spacing_mm).floor() as usize + 2;
        }
        let n = coarse_dims[0] * coarse_dims[1] * coarse_dims[2];
        let mut rng = ChaCha12Rng::seed_from_u64(params.seed);
        let mut fields = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let m = params.max_displacement_mm;
        if m > 0.0 {
            for field in &mut fields {
                for v in field.iter_mut() {
                    *v = rng.random_range(-m..=m);
                }
            }
        }
        let mut out = DisplacementField {
            coarse_dims,
            grid_spacing_mm: params.grid_spacing_mm,
            fields,
        };
        if params.smoothing_sigma_mm > 0.0 && m > 0.0 {
            out.smooth(params.smoothing_sigma_mm / params.grid_spacing_mm);
        }
        out
    }

    /// Separable Gaussian blur with sigma in node units, truncated at three
    /// sigma, kernel renormalized, edges replicated.
    fn smooth(&mut self, sigma_nodes: f64) {
        let radius = (3.0 * sigma_nodes).ceil() as i64;
        let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
        for d in -radius..=radius {
            kernel.push((-0.5 * (d as f64 / sigma_nodes).powi(2)).exp());
        }
        let total: f64 = kernel.iter().sum();
        for w in &mut kernel {
            *w /= total;
        }
        let dims = self.coarse_dims;
        let idx = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
        for field in &mut self.fields {
            for axis in 0..3 {
                let mut blurred = field.clone();
                for k in 0..dims[2] {
                    for j in 0..dims[1] {
                        for i in 0..dims[0] {
                            let mut acc = 0.0;
                            for (t, w) in kernel.iter().enumerate() {
                                let offset = t as i64 - radius;
                                let mut c = [i as i64, j as i64, k as i64];
                                c[axis] =
                                    (c[axis] + offset).clamp(0, dims[axis] as i64 - 1);
                                acc += w
                                    * field[idx(c[0] as usize, c[1] as usize, c[2] as usize)];
                            }
                            blurred[idx(i, j, k)] = acc;
                        }
                    }
                }
                *field = blurred;
            }
        }
    }

    /// Trilinear displacement in mm at a voxel position, per axis.
    fn at(&self, voxel: [usize; 3], spacing: [f64; 3]) -> [f64; 3] {
        let dims = self.coarse_dims;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let t = voxel[a] as f64 * spacing[a] / self.grid_spacing_mm;
            let i0 = (t.floor() as usize).min(dims[a] - 2);
            base[a] = i0;
            frac[a] = t - i0 as f64;
        }
        let idx = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
        let mut out = [0.0; 3];
        for (axis, field) in self.fields.iter().enumerate() {
            let mut acc = 0.0;
            for corner in 0..8 {
                let mut w = 1.0;
                let mut c = [0usize; 3];
                for a in 0..3 {
                    if corner >> a & 1 == 1 {
                        w *= frac[a];
                        c[a] = base[a] + 1;
                    } else {
                        w *= 1.0 - frac[a];
                        c[a] = base[a];
                    }
                }
                acc += w * field[idx(c[0], c[1], c[2])];
            }
            out[axis] = acc;
        }
        out
    }
}

fn quantize(data_type: DataType, samples: Vec<f64>) -> ScalarData {
    match data_type {
        DataType::U8 => ScalarData::U8(
            samples.iter().map(|&v| v.round().clamp(0.0, u8::MAX as f64) as u8).collect(),
        ),
        DataType::I16 => ScalarData::I16(
            samples
                .iter()
                .map(|&v| v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)
                .collect(),
        ),
        DataType::I32 => ScalarData::I32(
            samples
                .iter()
                .map(|&v| v.round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
                .collect(),
        ),
        DataType::F32 => ScalarData::F32(samples.iter().map(|&v| v as f32).collect()),
        DataType::F64 => ScalarData::F64(samples),
    }
}

/// Deform an image/label pair with a seeded random displacement field.
///
/// The pull-back sample position for voxel `v` on axis `a` is
/// `v[a] + displacement_mm[a] / spacing[a]`, so a zero field reproduces the
/// input exactly. Image samples outside the grid clamp to the edge; label
/// samples outside the grid become background.
pub fn elastic_deform(
    image: &VolumeImage,
    labels: &LabelMap,
    params: &ElasticParams,
) -> Result<(VolumeImage, LabelMap)> {
    params.validate()?;
    require_canonical_image(image)?;
    require_canonical_labels(labels)?;
    check_same_grid(
        "elastic deformation",
        (&image.dims(), &image.spacing(), image.orientation()),
        (&labels.dims(), &labels.spacing(), labels.orientation()),
    )?;

    let dims = image.dims();
    let spacing = image.spacing();
    let field = DisplacementField::draw(dims, spacing, params);

    let n = image.len();
    let mut samples = Vec::with_capacity(n);
    let mut warped_labels = Vec::with_capacity(n);
    let src = labels.labels();
    let idx = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let disp = field.at([i, j, k], spacing);
                let mut g = [0.0f64; 3];
                for (a, v) in [i, j, k].into_iter().enumerate() {
                    g[a] = v as f64 + disp[a] / spacing[a];
                }

                let mut base = [0usize; 3];
                let mut frac = [0.0f64; 3];
                for a in 0..3 {
                    let clamped = g[a].clamp(0.0, (dims[a] - 1) as f64);
                    let i0 = (clamped.floor() as usize).min(dims[a].saturating_sub(2));
                    base[a] = i0;
                    frac[a] = if dims[a] == 1 { 0.0 } else { clamped - i0 as f64 };
                }
                let mut acc = 0.0;
                for corner in 0..8u32 {
                    let mut w = 1.0;
                    let mut c = [0usize; 3];
                    for a in 0..3 {
                        if corner >> a & 1 == 1 {
                            w *= frac[a];
                            c[a] = (base[a] + 1).min(dims[a] - 1);
                        } else {
                            w *= 1.0 - frac[a];
                            c[a] = base[a];
                        }
                    }
                    if w != 0.0 {
                        acc += w * image.raw_value(idx(c[0], c[1], c[2]));
                    }
                }
                samples.push(acc);

                let mut nearest = [0usize; 3];
                let mut inside = true;
                for a in 0..3 {
                    let r = g[a].round();
                    if r < 0.0 || r > (dims[a] - 1) as f64 {
                        inside = false;
                        break;
                    }
                    nearest[a] = r as usize;
                }
                warped_labels.push(if inside {
                    src[idx(nearest[0], nearest[1], nearest[2])]
                } else {
                    0
                });
            }
        }
    }

    let out_image = image.clone_with_data(quantize(image.data_type(), samples));
    let out_labels = labels.clone_with_labels(warped_labels);
    Ok((out_image, out_labels))
}

fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in s.as_bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    hash
}

fn derive_seed(master_seed: u64, subject_id: &str, index: usize) -> u64 {
    splitmix64(master_seed ^ fnv1a(subject_id) ^ (index as u64 + 1))
}

/// Expand one subject into `factor` pairs: the original, its horizontal
/// flip, then elastic deformations alternating between the two as base,
/// each with a seed derived from the master seed, the subject id, and the
/// output index.
pub fn multiply_pair(
    image: &VolumeImage,
    labels: &LabelMap,
    subject_id: &str,
    factor: usize,
    master_seed: u64,
) -> Result<Vec<AugmentedPair>> {
    if factor == 0 {
        return Err(Error::InvalidParameter("factor must be at least 1".into()));
    }
    require_canonical_image(image)?;
    require_canonical_labels(labels)?;
    check_same_grid(
        "augmentation",
        (&image.dims(), &image.spacing(), image.orientation()),
        (&labels.dims(), &labels.spacing(), labels.orientation()),
    )?;

    let mut out = Vec::with_capacity(factor);
    out.push(AugmentedPair::new(subject_id, "orig".into(), 0, image.clone(), labels.clone()));
    if factor == 1 {
        return Ok(out);
    }
    let flipped_image = flip_image(image)?;
    let flipped_labels = flip_labels(labels)?;
    out.push(AugmentedPair::new(
        subject_id,
        "flip".into(),
        0,
        flipped_image.clone(),
        flipped_labels.clone(),
    ));

    let mut orig_count = 0usize;
    let mut flip_count = 0usize;
    for index in 2..factor {
        let seed = derive_seed(master_seed, subject_id, index);
        let params = ElasticParams::with_seed(seed);
        let from_original = (index - 2) % 2 == 0;
        let (base_image, base_labels, kind, counter) = if from_original {
            orig_count += 1;
            (image, labels, "elastic", orig_count)
        } else {
            flip_count += 1;
            (&flipped_image, &flipped_labels, "flipelastic", flip_count)
        };
        let (aug_image, aug_labels) = elastic_deform(base_image, base_labels, &params)?;
        out.push(AugmentedPair::new(
            subject_id,
            format!("{kind}{counter}"),
            seed,
            aug_image,
            aug_labels,
        ));
    }
    Ok(out)
}
