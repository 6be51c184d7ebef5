//! Segmentation agreement metrics: Dice similarity and average symmetric
//! surface distance.
//!
//! Empty structures need explicit conventions, applied here and recorded in
//! aggregate exclusion counts rather than silently folded into means:
//!
//! * DSC of two empty masks is undefined; DSC against one empty mask is 0.
//! * ASSD is undefined when either mask is empty (there is no surface to
//!   measure to).
//! * Structures undefined on a given pair are excluded from aggregate means
//!   and standard deviations; every [`SummaryStat`] carries how many values
//!   went in and how many were excluded.
//!
//! Surfaces are foreground voxels with at least one face-adjacent
//! (6-neighborhood) background or out-of-bounds neighbor. Distances run
//! between voxel centers in millimeters. ASSD uses the pooled form: the sum
//! of all nearest-surface distances in both directions divided by the total
//! surface voxel count of both masks. Standard deviations are population
//! (divide by n).

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::edt::squared_edt;
use crate::error::{Error, Result};
use crate::schema::{parse_code, Sinus, StructureId, Tissue, MAX_LABEL};
use crate::volume::{check_same_grid, LabelMap};

/// A single-structure mask on a spaced grid.
#[derive(Debug, Clone)]
pub struct BinaryMask {
    dims: [usize; 3],
    spacing: [f64; 3],
    bits: Vec<bool>,
    count: usize,
}

impl BinaryMask {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], bits: Vec<bool>) -> Result<BinaryMask> {
        if bits.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::InvalidParameter(format!(
                "mask holds {} voxels but dims {dims:?} require {}",
                bits.len(),
                dims[0] * dims[1] * dims[2]
            )));
        }
        let count = bits.iter().filter(|&&b| b).count();
        Ok(BinaryMask { dims, spacing, bits, count })
    }

    /// Mask of one structure code within a label map.
    pub fn from_labelmap(lm: &LabelMap, code: u8) -> Result<BinaryMask> {
        parse_code(code)?;
        let bits: Vec<bool> = lm.labels().iter().map(|&l| l == code).collect();
        BinaryMask::new(lm.dims(), lm.spacing(), bits)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty_mask(&self) -> bool {
        self.count == 0
    }

    fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.bits[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    fn check_paired(&self, other: &BinaryMask, context: &'static str) -> Result<()> {
        if self.dims != other.dims || self.spacing != other.spacing {
            return Err(Error::grid_mismatch(
                context,
                (&self.dims, &self.spacing),
                (&other.dims, &other.spacing),
            ));
        }
        Ok(())
    }
}

/// Dice similarity coefficient.
///
/// `None` when both masks are empty (nothing to compare); 0 when exactly one
/// is empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<Option<f64>> {
    a.check_paired(b, "dice")?;
    if a.count == 0 && b.count == 0 {
        return Ok(None);
    }
    let intersection = a
        .bits
        .iter()
        .zip(&b.bits)
        .filter(|&(&x, &y)| x && y)
        .count();
    Ok(Some(2.0 * intersection as f64 / (a.count + b.count) as f64))
}

/// Coordinates of foreground voxels with at least one face-adjacent
/// background or out-of-bounds neighbor.
pub fn surface_voxels(m: &BinaryMask) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = m.dims;
    let mut out = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if !m.get(i, j, k) {
                    continue;
                }
                let exposed = (i == 0 || !m.get(i - 1, j, k))
                    || (i + 1 == nx || !m.get(i + 1, j, k))
                    || (j == 0 || !m.get(i, j - 1, k))
                    || (j + 1 == ny || !m.get(i, j + 1, k))
                    || (k == 0 || !m.get(i, j, k - 1))
                    || (k + 1 == nz || !m.get(i, j, k + 1));
                if exposed {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}

/// Average symmetric surface distance in millimeters, pooled form:
/// the distances from every surface voxel of each mask to the nearest
/// surface voxel of the other, summed over both directions and divided by
/// the combined surface voxel count. `None` when either mask is empty.
pub fn assd(a: &BinaryMask, b: &BinaryMask) -> Result<Option<f64>> {
    a.check_paired(b, "assd")?;
    if a.count == 0 || b.count == 0 {
        return Ok(None);
    }
    let sa = surface_voxels(a);
    let sb = surface_voxels(b);
    debug_assert!(!sa.is_empty() && !sb.is_empty());

    // Work in the bounding box of both surfaces; the transform is exact, so
    // cropping changes nothing but the grid walked.
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for p in sa.iter().chain(&sb) {
        for axis in 0..3 {
            lo[axis] = lo[axis].min(p[axis]);
            hi[axis] = hi[axis].max(p[axis]);
        }
    }
    let cdims = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
    let cindex = |p: &[usize; 3]| {
        (p[0] - lo[0]) + cdims[0] * ((p[1] - lo[1]) + cdims[1] * (p[2] - lo[2]))
    };

    let n = cdims[0] * cdims[1] * cdims[2];
    let mut sites_a = vec![false; n];
    for p in &sa {
        sites_a[cindex(p)] = true;
    }
    let mut sites_b = vec![false; n];
    for p in &sb {
        sites_b[cindex(p)] = true;
    }

    let to_b = squared_edt(&sites_b, cdims, a.spacing);
    let to_a = squared_edt(&sites_a, cdims, a.spacing);

    // The two directions are summed separately and combined with a single
    // addition, so swapping the arguments returns the identical float.
    let mut from_a = 0.0;
    for p in &sa {
        from_a += to_b[cindex(p)].sqrt();
    }
    let mut from_b = 0.0;
    for p in &sb {
        from_b += to_a[cindex(p)].sqrt();
    }
    Ok(Some((from_a + from_b) / (sa.len() + sb.len()) as f64))
}

/// Both metrics for one structure of one subject pair.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PairMetrics {
    pub dsc: Option<f64>,
    pub assd_mm: Option<f64>,
}

/// Mean and population standard deviation over the defined values of a
/// collection, with bookkeeping for how many were undefined.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SummaryStat {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub included: usize,
    pub excluded: usize,
}

impl SummaryStat {
    pub fn from_options(values: impl IntoIterator<Item = Option<f64>>) -> SummaryStat {
        let mut kept = Vec::new();
        let mut excluded = 0usize;
        for v in values {
            match v {
                Some(x) => kept.push(x),
                None => excluded += 1,
            }
        }
        if kept.is_empty() {
            return SummaryStat { mean: None, sd: None, included: 0, excluded };
        }
        let n = kept.len() as f64;
        let mean = kept.iter().sum::<f64>() / n;
        let var = kept.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        SummaryStat { mean: Some(mean), sd: Some(var.sqrt()), included: kept.len(), excluded }
    }
}

/// Side-pooled metrics for one (tissue, sinus) structure.
#[derive(Debug, Clone, Serialize)]
pub struct StructureRow {
    pub sinus: Sinus,
    pub tissue: Tissue,
    pub dsc: SummaryStat,
    pub assd_mm: SummaryStat,
}

impl StructureRow {
    /// Row label in report style, e.g. "A. maxillaris".
    pub fn label(&self) -> String {
        format!("{} {}", self.tissue.prefix(), self.sinus.latin_name())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupStats {
    pub dsc: SummaryStat,
    pub assd_mm: SummaryStat,
}

/// Full per-pair evaluation: all 16 codes, side-pooled structures, and
/// air / soft-tissue / overall aggregates.
#[derive(Debug, Clone, Serialize)]
pub struct SegmentationReport {
    pub per_code: BTreeMap<u8, PairMetrics>,
    pub per_structure: Vec<StructureRow>,
    pub air: GroupStats,
    pub soft_tissue: GroupStats,
    pub overall: GroupStats,
}

fn group_stats<'a>(
    metrics: impl Iterator<Item = &'a PairMetrics> + Clone,
) -> GroupStats {
    GroupStats {
        dsc: SummaryStat::from_options(metrics.clone().map(|m| m.dsc)),
        assd_mm: SummaryStat::from_options(metrics.map(|m| m.assd_mm)),
    }
}

/// Evaluate a predicted label map against a reference on the same grid.
/// The 16 per-code computations run in parallel.
pub fn evaluate(pred: &LabelMap, reference: &LabelMap) -> Result<SegmentationReport> {
    check_same_grid(
        "evaluate",
        (&pred.dims(), &pred.spacing(), pred.orientation()),
        (&reference.dims(), &reference.spacing(), reference.orientation()),
    )?;

    let per_code_vec: Vec<(u8, PairMetrics)> = (1..=MAX_LABEL)
        .into_par_iter()
        .map(|code| -> Result<(u8, PairMetrics)> {
            let a = BinaryMask::from_labelmap(pred, code)?;
            let b = BinaryMask::from_labelmap(reference, code)?;
            Ok((code, PairMetrics { dsc: dice(&a, &b)?, assd_mm: assd(&a, &b)? }))
        })
        .collect::<Result<_>>()?;
    let per_code: BTreeMap<u8, PairMetrics> = per_code_vec.into_iter().collect();

    let mut per_structure = Vec::with_capacity(8);
    for tissue in Tissue::ALL {
        for sinus in Sinus::ALL {
            let sides: Vec<&PairMetrics> = crate::schema::Side::ALL
                .iter()
                .map(|&side| &per_code[&StructureId::new(sinus, side, tissue).code()])
                .collect();
            per_structure.push(StructureRow {
                sinus,
                tissue,
                dsc: SummaryStat::from_options(sides.iter().map(|m| m.dsc)),
                assd_mm: SummaryStat::from_options(sides.iter().map(|m| m.assd_mm)),
            });
        }
    }

    let air = group_stats(per_code.range(1..=8).map(|(_, m)| m));
    let soft_tissue = group_stats(per_code.range(9..=16).map(|(_, m)| m));
    let overall = group_stats(per_code.values());

    Ok(SegmentationReport { per_code, per_structure, air, soft_tissue, overall })
}

impl SegmentationReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// CSV in report-table form: one row per side-pooled structure, then the
    /// air, soft-tissue, and overall average rows. Undefined cells stay
    /// empty; the n/excluded columns say why.
    pub fn write_csv(&self, sink: impl Write) -> Result<()> {
        write_stat_table(sink, &self.per_structure, &self.air, &self.soft_tissue, &self.overall)
    }
}

fn write_stat_table(
    sink: impl Write,
    structures: &[StructureRow],
    air: &GroupStats,
    soft_tissue: &GroupStats,
    overall: &GroupStats,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "structure",
        "dsc_mean",
        "dsc_sd",
        "dsc_n",
        "dsc_excluded",
        "assd_mean_mm",
        "assd_sd_mm",
        "assd_n",
        "assd_excluded",
    ])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for row in structures {
        w.write_record([
            row.label(),
            fmt(row.dsc.mean),
            fmt(row.dsc.sd),
            row.dsc.included.to_string(),
            row.dsc.excluded.to_string(),
            fmt(row.assd_mm.mean),
            fmt(row.assd_mm.sd),
            row.assd_mm.included.to_string(),
            row.assd_mm.excluded.to_string(),
        ])?;
    }
    for (label, stats) in [
        ("Average (Air)", air),
        ("Average (Soft Tissue)", soft_tissue),
        ("Average (overall)", overall),
    ] {
        w.write_record([
            label.to_string(),
            fmt(stats.dsc.mean),
            fmt(stats.dsc.sd),
            stats.dsc.included.to_string(),
            stats.dsc.excluded.to_string(),
            fmt(stats.assd_mm.mean),
            fmt(stats.assd_mm.sd),
            stats.assd_mm.included.to_string(),
            stats.assd_mm.excluded.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Metrics pooled across many pairs, every (pair, code) value one data
/// point, in the same table shape as a single pair's report.
#[derive(Debug, Clone, Serialize)]
pub struct CohortSummary {
    pub subjects: usize,
    pub per_structure: Vec<StructureRow>,
    pub air: GroupStats,
    pub soft_tissue: GroupStats,
    pub overall: GroupStats,
}

impl CohortSummary {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write_csv(&self, sink: impl Write) -> Result<()> {
        write_stat_table(sink, &self.per_structure, &self.air, &self.soft_tissue, &self.overall)
    }
}

/// Pool the per-code observations of many reports.
pub fn pool_reports<'a>(
    reports: impl IntoIterator<Item = &'a SegmentationReport>,
) -> CohortSummary {
    let maps: Vec<&BTreeMap<u8, PairMetrics>> = reports.into_iter().map(|r| &r.per_code).collect();
    let pooled = |codes: &[u8]| -> Vec<&PairMetrics> {
        maps.iter().flat_map(|m| codes.iter().map(move |c| &m[c])).collect()
    };
    let mut per_structure = Vec::with_capacity(8);
    for tissue in Tissue::ALL {
        for sinus in Sinus::ALL {
            let codes: Vec<u8> = crate::schema::Side::ALL
                .iter()
                .map(|&side| StructureId::new(sinus, side, tissue).code())
                .collect();
            let items = pooled(&codes);
            per_structure.push(StructureRow {
                sinus,
                tissue,
                dsc: SummaryStat::from_options(items.iter().map(|m| m.dsc)),
                assd_mm: SummaryStat::from_options(items.iter().map(|m| m.assd_mm)),
            });
        }
    }
    let air_codes: Vec<u8> = (1..=8).collect();
    let soft_codes: Vec<u8> = (9..=16).collect();
    let all_codes: Vec<u8> = (1..=16).collect();
    let stats = |codes: &[u8]| {
        let items = pooled(codes);
        GroupStats {
            dsc: SummaryStat::from_options(items.iter().map(|m| m.dsc)),
            assd_mm: SummaryStat::from_options(items.iter().map(|m| m.assd_mm)),
        }
    };
    CohortSummary {
        subjects: maps.len(),
        per_structure,
        air: stats(&air_codes),
        soft_tissue: stats(&soft_codes),
        overall: stats(&all_codes),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(dims: [usize; 3], spacing: [f64; 3], fg: &[[usize; 3]]) -> BinaryMask {
        let mut bits = vec![false; dims[0] * dims[1] * dims[2]];
        for c in fg {
            bits[c[0] + dims[0] * (c[1] + dims[1] * c[2])] = true;
        }
        BinaryMask::new(dims, spacing, bits).unwrap()
    }

    #[test]
    fn dice_of_identical_masks_is_one() {
        let a = mask([4, 4, 4], [1.0; 3], &[[0, 0, 0], [1, 0, 0], [2, 3, 3]]);
        assert_eq!(dice(&a, &a.clone()).unwrap(), Some(1.0));
    }

    #[test]
    fn dice_of_disjoint_masks_is_zero() {
        let a = mask([4, 4, 4], [1.0; 3], &[[0, 0, 0]]);
        let b = mask([4, 4, 4], [1.0; 3], &[[3, 3, 3]]);
        assert_eq!(dice(&a, &b).unwrap(), Some(0.0));
    }

    #[test]
    fn dice_partial_overlap_hand_value() {
        let a = mask([4, 1, 1], [1.0; 3], &[[0, 0, 0], [1, 0, 0]]);
        let b = mask([4, 1, 1], [1.0; 3], &[[1, 0, 0]]);
        assert_eq!(dice(&a, &b).unwrap(), Some(2.0 / 3.0));
    }

    #[test]
    fn dice_empty_conventions() {
        let e = mask([2, 2, 2], [1.0; 3], &[]);
        let a = mask([2, 2, 2], [1.0; 3], &[[0, 0, 0]]);
        assert_eq!(dice(&e, &e.clone()).unwrap(), None);
        assert_eq!(dice(&a, &e).unwrap(), Some(0.0));
        assert_eq!(dice(&e, &a).unwrap(), Some(0.0));
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = mask([2, 2, 2], [1.0; 3], &[[0, 0, 0]]);
        let b = mask([2, 2, 3], [1.0; 3], &[[0, 0, 0]]);
        assert!(matches!(dice(&a, &b).unwrap_err(), Error::GridMismatch { .. }));
        let c = mask([2, 2, 2], [1.0, 1.0, 2.0], &[[0, 0, 0]]);
        assert!(matches!(assd(&a, &c).unwrap_err(), Error::GridMismatch { .. }));
    }

    #[test]
    fn surface_of_solid_block_excludes_interior() {
        // 3x3x3 block centered in a 5x5x5 grid: 26 of 27 voxels exposed.
        let mut fg = Vec::new();
        for k in 1..4 {
            for j in 1..4 {
                for i in 1..4 {
                    fg.push([i, j, k]);
                }
            }
        }
        let m = mask([5, 5, 5], [1.0; 3], &fg);
        let s = surface_voxels(&m);
        assert_eq!(s.len(), 26);
        assert!(!s.contains(&[2, 2, 2]));
    }

    #[test]
    fn volume_boundary_counts_as_exposed() {
        // The same block filling the whole grid: everything but the center
        // touches the volume edge.
        let mut fg = Vec::new();
        for k in 0..3 {
            for j in 0..3 {
                for i in 0..3 {
                    fg.push([i, j, k]);
                }
            }
        }
        let m = mask([3, 3, 3], [1.0; 3], &fg);
        assert_eq!(surface_voxels(&m).len(), 26);
    }

    #[test]
    fn assd_identical_masks_is_zero() {
        let a = mask([4, 4, 4], [1.0; 3], &[[1, 1, 1], [2, 1, 1], [1, 2, 1]]);
        assert_eq!(assd(&a, &a.clone()).unwrap(), Some(0.0));
    }

    #[test]
    fn assd_hand_value_single_voxels() {
        // Centers 3 voxels apart along x with 2 mm spacing: 6 mm each way.
        let a = mask([4, 1, 1], [2.0, 1.0, 1.0], &[[0, 0, 0]]);
        let b = mask([4, 1, 1], [2.0, 1.0, 1.0], &[[3, 0, 0]]);
        assert_eq!(assd(&a, &b).unwrap(), Some(6.0));
    }

    #[test]
    fn assd_hand_value_pooled_asymmetric() {
        // a = {x0}; b = {x1, x2}. Nearest distances: a->b = 1;
        // b->a = 1 and 2. Pooled: (1 + 1 + 2) / 3.
        let a = mask([3, 1, 1], [1.0; 3], &[[0, 0, 0]]);
        let b = mask([3, 1, 1], [1.0; 3], &[[1, 0, 0], [2, 0, 0]]);
        let v = assd(&a, &b).unwrap().unwrap();
        assert!((v - 4.0 / 3.0).abs() < 1e-12);
        // Symmetric by construction.
        assert_eq!(assd(&b, &a).unwrap().unwrap(), v);
    }

    #[test]
    fn assd_empty_conventions() {
        let e = mask([2, 2, 2], [1.0; 3], &[]);
        let a = mask([2, 2, 2], [1.0; 3], &[[0, 0, 0]]);
        assert_eq!(assd(&e, &a).unwrap(), None);
        assert_eq!(assd(&a, &e).unwrap(), None);
        assert_eq!(assd(&e, &e.clone()).unwrap(), None);
    }

    #[test]
    fn summary_stat_population_sd_and_exclusions() {
        let s = SummaryStat::from_options([Some(1.0), Some(3.0), None, Some(5.0)]);
        assert_eq!(s.mean, Some(3.0));
        // Population SD of {1,3,5}: sqrt(8/3).
        assert!((s.sd.unwrap() - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(s.included, 3);
        assert_eq!(s.excluded, 1);

        let empty = SummaryStat::from_options([None, None]);
        assert_eq!(empty.mean, None);
        assert_eq!(empty.sd, None);
        assert_eq!(empty.excluded, 2);

        let single = SummaryStat::from_options([Some(2.0)]);
        assert_eq!(single.sd, Some(0.0));
    }

    #[test]
    fn evaluate_reports_all_codes_and_exclusions() {
        // 6x6x6 grid. Code 1 agrees exactly; code 9 overlaps partially;
        // code 2 exists only in the reference; everything else is absent
        // from both.
        let dims = [6, 6, 6];
        let mut pred = vec![0u8; 216];
        let mut reference = vec![0u8; 216];
        let idx = |i: usize, j: usize, k: usize| i + 6 * (j + 6 * k);
        for k in 0..2 {
            for j in 0..2 {
                for i in 0..2 {
                    pred[idx(i, j, k)] = 1;
                    reference[idx(i, j, k)] = 1;
                }
            }
        }
        pred[idx(4, 4, 4)] = 9;
        pred[idx(5, 4, 4)] = 9;
        reference[idx(4, 4, 4)] = 9;
        reference[idx(0, 5, 5)] = 2;

        let p = LabelMap::new(dims, [1.0; 3], pred).unwrap();
        let r = LabelMap::new(dims, [1.0; 3], reference).unwrap();
        let report = evaluate(&p, &r).unwrap();

        assert_eq!(report.per_code[&1].dsc, Some(1.0));
        assert_eq!(report.per_code[&1].assd_mm, Some(0.0));
        assert_eq!(report.per_code[&9].dsc, Some(2.0 / 3.0));
        assert_eq!(report.per_code[&2].dsc, Some(0.0));
        assert_eq!(report.per_code[&2].assd_mm, None);
        assert_eq!(report.per_code[&3].dsc, None);

        // Air group: codes 1..=8. Defined DSC: code 1 (1.0) and code 2 (0.0).
        assert_eq!(report.air.dsc.included, 2);
        assert_eq!(report.air.dsc.excluded, 6);
        assert_eq!(report.air.dsc.mean, Some(0.5));
        // Air ASSD: only code 1 defined.
        assert_eq!(report.air.assd_mm.included, 1);
        assert_eq!(report.air.assd_mm.excluded, 7);

        // Soft tissue: only code 9 defined.
        assert_eq!(report.soft_tissue.dsc.included, 1);
        assert_eq!(report.soft_tissue.dsc.mean, Some(2.0 / 3.0));

        // Overall pools all 16 codes.
        assert_eq!(report.overall.dsc.included, 3);
        assert_eq!(report.overall.dsc.excluded, 13);

        // Per-structure row for maxillary air pools codes 1 and 2.
        let row = &report.per_structure[0];
        assert_eq!(row.sinus, Sinus::Maxillary);
        assert_eq!(row.tissue, Tissue::Air);
        assert_eq!(row.dsc.mean, Some(0.5));
        assert_eq!(row.label(), "A. maxillaris");

        // CSV has a header, 8 structure rows, 3 average rows.
        let mut csv_bytes = Vec::new();
        report.write_csv(&mut csv_bytes).unwrap();
        let text = String::from_utf8(csv_bytes).unwrap();
        assert_eq!(text.lines().count(), 12);
        assert!(text.lines().nth(1).unwrap().starts_with("A. maxillaris,0.5,0.5,2,0,"));
        assert!(text.lines().last().unwrap().starts_with("Average (overall),"));

        // JSON serializes and contains the per-code block.
        let json = report.to_json().unwrap();
        assert!(json.contains("\"per_code\""));
    }

    #[test]
    fn evaluate_requires_same_grid() {
        let a = LabelMap::new([2, 2, 2], [1.0; 3], vec![0; 8]).unwrap();
        let b = LabelMap::new([2, 2, 2], [1.0, 1.0, 2.0], vec![0; 8]).unwrap();
        assert!(matches!(evaluate(&a, &b).unwrap_err(), Error::GridMismatch { .. }));
    }

    #[test]
    fn pooling_counts_every_pair_code_observation() {
        // Two subjects on a 4x4x4 grid. Subject A: code 1 perfect. Subject
        // B: code 1 half-overlapping, code 2 perfect.
        let dims = [4, 4, 4];
        let mut a = vec![0u8; 64];
        a[0] = 1;
        let mut b_pred = vec![0u8; 64];
        let mut b_ref = vec![0u8; 64];
        b_pred[0] = 1;
        b_pred[1] = 1;
        b_ref[1] = 1;
        b_pred[10] = 2;
        b_ref[10] = 2;

        let report_a = evaluate(
            &LabelMap::new(dims, [1.0; 3], a.clone()).unwrap(),
            &LabelMap::new(dims, [1.0; 3], a).unwrap(),
        )
        .unwrap();
        let report_b = evaluate(
            &LabelMap::new(dims, [1.0; 3], b_pred).unwrap(),
            &LabelMap::new(dims, [1.0; 3], b_ref).unwrap(),
        )
        .unwrap();

        let pooled = pool_reports([&report_a, &report_b]);
        assert_eq!(pooled.subjects, 2);
        // Maxillary air row pools codes 1 and 2 over both subjects: DSC
        // observations 1.0 (A code 1), 2/3 (B code 1), 1.0 (B code 2).
        let row = &pooled.per_structure[0];
        assert_eq!(row.dsc.included, 3);
        assert_eq!(row.dsc.excluded, 1);
        assert_eq!(row.dsc.mean, Some((1.0 + 2.0 / 3.0 + 1.0) / 3.0));
        // Air group: 2 subjects x 8 codes.
        assert_eq!(pooled.air.dsc.included + pooled.air.dsc.excluded, 16);
        // Overall: 2 subjects x 16 codes.
        assert_eq!(pooled.overall.dsc.included + pooled.overall.dsc.excluded, 32);

        let mut csv_bytes = Vec::new();
        pooled.write_csv(&mut csv_bytes).unwrap();
        assert_eq!(String::from_utf8(csv_bytes).unwrap().lines().count(), 12);
        assert!(pooled.to_json().unwrap().contains("\"subjects\": 2"));
    }
}
