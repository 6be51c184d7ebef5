//! Volumetric opacification grading (modified Lund-Mackay).
//!
//! Each of the eight (sinus, side) regions gets an opacification fraction
//! `soft_tissue / (air + soft_tissue)` from segmented volumes and a grade:
//!
//! * 0 when the fraction is below 0.05,
//! * 1 on the closed interval [0.05, 0.95],
//! * 2 above 0.95.
//!
//! The subject total is the weighted sum of grades over all regions. The
//! ethmoid label spans what the classical scheme grades as three items
//! (anterior cells, posterior cells, ostiomeatal complex), so its grade
//! counts three times; the maximum total is 24.
//!
//! A region whose combined volume is exactly zero is aplastic: its fraction
//! and grade are undefined, it contributes 0 to the total, and it is flagged
//! rather than silently scored. A region with some volume but less than 5% of
//! the reference volume for its sinus type is flagged as hypoplastic and
//! still scored. Reference volumes default to healthy-cohort means (left plus
//! right, air plus soft tissue) and are configurable.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SubjectFeatures;
use crate::schema::{code_of, Side, Sinus, Tissue};

/// Grade-0 / grade-1 boundary of the opacification fraction.
pub const GRADE_LOW_THRESHOLD: f64 = 0.05;

/// Grade-1 / grade-2 boundary of the opacification fraction.
pub const GRADE_HIGH_THRESHOLD: f64 = 0.95;

/// Fraction of the reference volume below which a non-empty region is
/// flagged as hypoplastic.
pub const HYPOPLASIA_FRACTION: f64 = 0.05;

/// Largest possible subject total.
pub const MAX_TOTAL_SCORE: u32 = 24;

/// Mean modified score of radiologically normal adults; drawn as a reference
/// line on cohort score charts.
pub const NORMAL_COHORT_MEAN_SCORE: f64 = 4.3;

/// Typical combined volume (both sides, air plus soft tissue, mm^3) per
/// sinus type, used for hypoplasia detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceVolumes {
    pub maxillary_mm3: f64,
    pub frontal_mm3: f64,
    pub ethmoid_mm3: f64,
    pub sphenoid_mm3: f64,
}

impl Default for ReferenceVolumes {
    /// Healthy-cohort mean volumes.
    fn default() -> Self {
        ReferenceVolumes {
            maxillary_mm3: 18319.0,
            frontal_mm3: 5237.0,
            ethmoid_mm3: 6495.0,
            sphenoid_mm3: 5921.0,
        }
    }
}

impl ReferenceVolumes {
    pub fn get(&self, sinus: Sinus) -> f64 {
        match sinus {
            Sinus::Maxillary => self.maxillary_mm3,
            Sinus::Frontal => self.frontal_mm3,
            Sinus::Ethmoid => self.ethmoid_mm3,
            Sinus::Sphenoid => self.sphenoid_mm3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for sinus in Sinus::ALL {
            let v = self.get(sinus);
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "reference volume for {} must be positive, got {v}",
                    sinus.name()
                )));
            }
        }
        Ok(())
    }

    /// Load from JSON, e.g. `{"maxillary_mm3": 18319.0, ...}`.
    pub fn from_json_reader(reader: impl Read) -> Result<ReferenceVolumes> {
        let refs: ReferenceVolumes = serde_json::from_reader(reader)?;
        refs.validate()?;
        Ok(refs)
    }
}

/// Opacification fraction `soft / (air + soft)`.
///
/// `None` when both volumes are zero (nothing segmented to grade).
pub fn opacification(air_mm3: f64, soft_tissue_mm3: f64) -> Result<Option<f64>> {
    for (name, v) in [("air", air_mm3), ("soft tissue", soft_tissue_mm3)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidParameter(format!("{name} volume must be >= 0, got {v}")));
        }
    }
    let total = air_mm3 + soft_tissue_mm3;
    if total == 0.0 {
        return Ok(None);
    }
    Ok(Some(soft_tissue_mm3 / total))
}

/// Grade an opacification fraction. The middle interval is closed on both
/// ends: exactly 0.05 and exactly 0.95 are both grade 1.
pub fn lms_grade(fraction: f64) -> Result<u8> {
    if !(fraction.is_finite() && (0.0..=1.0).contains(&fraction)) {
        return Err(Error::InvalidParameter(format!(
            "opacification fraction must be in [0, 1], got {fraction}"
        )));
    }
    Ok(if fraction < GRADE_LOW_THRESHOLD {
        0
    } else if fraction <= GRADE_HIGH_THRESHOLD {
        1
    } else {
        2
    })
}

/// Scoring detail for one (sinus, side) region.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LmsEntry {
    pub sinus: Sinus,
    pub side: Side,
    pub air_volume_mm3: f64,
    pub soft_tissue_volume_mm3: f64,
    pub opacification: Option<f64>,
    /// Undefined for aplastic regions.
    pub grade: Option<u8>,
    /// Grade times the sinus weight; 0 for aplastic regions.
    pub weighted_grade: u32,
    pub aplasia: bool,
    pub hypoplasia: bool,
}

/// Modified Lund-Mackay report for one subject.
#[derive(Debug, Clone, Serialize)]
pub struct LmsReport {
    pub subject_id: String,
    /// Eight regions: sinuses in code order, right before left.
    pub entries: Vec<LmsEntry>,
    pub right_total: u32,
    pub left_total: u32,
    /// right_total + left_total, in 0..=24.
    pub total: u32,
}

impl LmsReport {
    pub fn get(&self, sinus: Sinus, side: Side) -> &LmsEntry {
        self.entries
            .iter()
            .find(|e| e.sinus == sinus && e.side == side)
            .expect("report always holds all eight regions")
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

fn region_volumes(sf: &SubjectFeatures, sinus: Sinus, side: Side) -> (f64, f64) {
    let air = sf.per_code[&code_of(sinus, side, Tissue::Air)].volume_mm3;
    let soft = sf.per_code[&code_of(sinus, side, Tissue::SoftTissue)].volume_mm3;
    (air, soft)
}

/// Score a subject from raw volumes per label code. Codes absent from the
/// map count as zero volume.
pub fn modified_lms_from_volumes(
    subject_id: &str,
    volume_mm3_by_code: &BTreeMap<u8, f64>,
    refs: &ReferenceVolumes,
) -> Result<LmsReport> {
    refs.validate()?;
    if let Some(&code) = volume_mm3_by_code.keys().find(|&&c| c == 0 || c > 16) {
        return Err(Error::InvalidStructureCode(code));
    }
    let volume = |code: u8| volume_mm3_by_code.get(&code).copied().unwrap_or(0.0);
    let mut entries = Vec::with_capacity(8);
    let mut right_total = 0u32;
    let mut left_total = 0u32;
    for sinus in Sinus::ALL {
        for side in Side::ALL {
            let air = volume(code_of(sinus, side, Tissue::Air));
            let soft = volume(code_of(sinus, side, Tissue::SoftTissue));
            let fraction = opacification(air, soft)?;
            let aplasia = fraction.is_none();
            let total_volume = air + soft;
            let hypoplasia =
                !aplasia && total_volume < HYPOPLASIA_FRACTION * refs.get(sinus);
            let grade = match fraction {
                Some(f) => Some(lms_grade(f)?),
                None => None,
            };
            let weighted_grade = grade.unwrap_or(0) as u32 * sinus.score_weight();
            match side {
                Side::Right => right_total += weighted_grade,
                Side::Left => left_total += weighted_grade,
            }
            entries.push(LmsEntry {
                sinus,
                side,
                air_volume_mm3: air,
                soft_tissue_volume_mm3: soft,
                opacification: fraction,
                grade,
                weighted_grade,
                aplasia,
                hypoplasia,
            });
        }
    }
    Ok(LmsReport {
        subject_id: subject_id.to_string(),
        entries,
        right_total,
        left_total,
        total: right_total + left_total,
    })
}

/// Score a subject against explicit reference volumes.
pub fn modified_lms_with(sf: &SubjectFeatures, refs: &ReferenceVolumes) -> Result<LmsReport> {
    let volumes: BTreeMap<u8, f64> =
        sf.per_code.iter().map(|(&code, f)| (code, f.volume_mm3)).collect();
    modified_lms_from_volumes(&sf.subject_id, &volumes, refs)
}

/// Score a subject with the default reference volumes.
pub fn modified_lms(sf: &SubjectFeatures) -> Result<LmsReport> {
    modified_lms_with(sf, &ReferenceVolumes::default())
}

/// Regions whose combined volume is exactly zero.
pub fn detect_aplasia(sf: &SubjectFeatures) -> BTreeMap<(Sinus, Side), bool> {
    let mut out = BTreeMap::new();
    for sinus in Sinus::ALL {
        for side in Side::ALL {
            let (air, soft) = region_volumes(sf, sinus, side);
            out.insert((sinus, side), air + soft == 0.0);
        }
    }
    out
}

/// Regions that exist but are smaller than [`HYPOPLASIA_FRACTION`] of the
/// reference volume for their sinus type.
pub fn detect_hypoplasia(
    sf: &SubjectFeatures,
    refs: &ReferenceVolumes,
) -> Result<BTreeMap<(Sinus, Side), bool>> {
    refs.validate()?;
    let mut out = BTreeMap::new();
    for sinus in Sinus::ALL {
        for side in Side::ALL {
            let (air, soft) = region_volumes(sf, sinus, side);
            let total = air + soft;
            out.insert(
                (sinus, side),
                total > 0.0 && total < HYPOPLASIA_FRACTION * refs.get(sinus),
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::StructureFeatures;
    use std::collections::BTreeMap;

    fn empty_features() -> StructureFeatures {
        StructureFeatures {
            voxel_count: 0,
            volume_mm3: 0.0,
            intensity_mean: None,
            intensity_sd: None,
            width_mm: None,
            depth_mm: None,
            height_mm: None,
            component_count: 0,
        }
    }

    /// SubjectFeatures with given (air, soft) volumes per (sinus, side).
    fn subject(volumes: &[((Sinus, Side), (f64, f64))]) -> SubjectFeatures {
        let mut per_code: BTreeMap<u8, StructureFeatures> =
            (1..=16).map(|c| (c, empty_features())).collect();
        for &((sinus, side), (air, soft)) in volumes {
            per_code.get_mut(&code_of(sinus, side, Tissue::Air)).unwrap().volume_mm3 = air;
            per_code.get_mut(&code_of(sinus, side, Tissue::SoftTissue)).unwrap().volume_mm3 =
                soft;
        }
        SubjectFeatures {
            subject_id: "synthetic".into(),
            per_code,
            union_air: empty_features(),
            union_soft_tissue: empty_features(),
            union_all: empty_features(),
        }
    }

    fn everywhere(air: f64, soft: f64) -> Vec<((Sinus, Side), (f64, f64))> {
        let mut v = Vec::new();
        for sinus in Sinus::ALL {
            for side in Side::ALL {
                v.push(((sinus, side), (air, soft)));
            }
        }
        v
    }

    #[test]
    fn grade_thresholds_closed_middle_interval() {
        let cases = [
            (0.0, 0),
            (0.049, 0),
            (0.05, 1),
            (0.5, 1),
            (0.95, 1),
            (0.951, 2),
            (1.0, 2),
        ];
        for (fraction, grade) in cases {
            assert_eq!(lms_grade(fraction).unwrap(), grade, "fraction {fraction}");
        }
    }

    #[test]
    fn grade_rejects_out_of_range() {
        assert!(lms_grade(-0.01).is_err());
        assert!(lms_grade(1.01).is_err());
        assert!(lms_grade(f64::NAN).is_err());
    }

    #[test]
    fn opacification_values_and_conventions() {
        assert_eq!(opacification(0.0, 0.0).unwrap(), None);
        assert_eq!(opacification(100.0, 0.0).unwrap(), Some(0.0));
        assert_eq!(opacification(0.0, 50.0).unwrap(), Some(1.0));
        assert_eq!(opacification(75.0, 25.0).unwrap(), Some(0.25));
        assert!(opacification(-1.0, 0.0).is_err());
        assert!(opacification(1.0, f64::NAN).is_err());
    }

    #[test]
    fn uniform_grade_one_total_is_twelve() {
        // Every region at fraction exactly 0.05: grade 1, so the total is
        // the sum of weights: (1+1+3+1) per side pair = 6 per side.
        let sf = subject(&everywhere(950.0, 50.0));
        let report = modified_lms(&sf).unwrap();
        assert_eq!(report.total, 12);
        assert_eq!(report.right_total, 6);
        assert_eq!(report.left_total, 6);
        for e in &report.entries {
            assert_eq!(e.grade, Some(1));
            assert!(!e.aplasia);
        }
    }

    #[test]
    fn fully_opacified_subject_hits_the_maximum() {
        let sf = subject(&everywhere(0.0, 5000.0));
        let report = modified_lms(&sf).unwrap();
        assert_eq!(report.total, MAX_TOTAL_SCORE);
    }

    #[test]
    fn clear_subject_scores_zero() {
        let sf = subject(&everywhere(5000.0, 0.0));
        assert_eq!(modified_lms(&sf).unwrap().total, 0);
    }

    #[test]
    fn ethmoid_weight_counts_three_times() {
        // Only the right ethmoid opacified (grade 2).
        let mut volumes = everywhere(5000.0, 0.0);
        for v in &mut volumes {
            if v.0 == (Sinus::Ethmoid, Side::Right) {
                v.1 = (0.0, 5000.0);
            }
        }
        let report = modified_lms(&subject(&volumes)).unwrap();
        assert_eq!(report.right_total, 6);
        assert_eq!(report.left_total, 0);
        assert_eq!(report.get(Sinus::Ethmoid, Side::Right).weighted_grade, 6);
    }

    #[test]
    fn aplastic_region_is_flagged_and_scores_zero() {
        let mut volumes = everywhere(900.0, 100.0);
        volumes.retain(|v| v.0 != (Sinus::Frontal, Side::Left));
        let sf = subject(&volumes);
        let report = modified_lms(&sf).unwrap();
        let entry = report.get(Sinus::Frontal, Side::Left);
        assert!(entry.aplasia);
        assert_eq!(entry.grade, None);
        assert_eq!(entry.opacification, None);
        assert_eq!(entry.weighted_grade, 0);
        // Remaining 7 regions: fraction 0.1 -> grade 1. Weights: right side
        // full (6), left side missing frontal (5).
        assert_eq!(report.total, 11);

        let aplasia = detect_aplasia(&sf);
        assert!(aplasia[&(Sinus::Frontal, Side::Left)]);
        assert_eq!(aplasia.values().filter(|&&a| a).count(), 1);
    }

    #[test]
    fn hypoplastic_region_is_flagged_but_still_scored() {
        let mut volumes = everywhere(10000.0, 0.0);
        // Frontal left: 200 mm^3 total, reference 5237, threshold 261.85.
        for v in &mut volumes {
            if v.0 == (Sinus::Frontal, Side::Left) {
                v.1 = (100.0, 100.0);
            }
        }
        let sf = subject(&volumes);
        let report = modified_lms(&sf).unwrap();
        let entry = report.get(Sinus::Frontal, Side::Left);
        assert!(entry.hypoplasia);
        assert!(!entry.aplasia);
        assert_eq!(entry.grade, Some(1));

        let hypo = detect_hypoplasia(&sf, &ReferenceVolumes::default()).unwrap();
        assert!(hypo[&(Sinus::Frontal, Side::Left)]);
        assert_eq!(hypo.values().filter(|&&h| h).count(), 1);
        // Aplastic regions are not hypoplastic.
        let none = subject(&[]);
        assert!(detect_hypoplasia(&none, &ReferenceVolumes::default())
            .unwrap()
            .values()
            .all(|&h| !h));
    }

    #[test]
    fn totals_are_symmetric_under_side_swap() {
        let volumes = vec![
            ((Sinus::Maxillary, Side::Right), (100.0, 900.0)),
            ((Sinus::Maxillary, Side::Left), (900.0, 100.0)),
            ((Sinus::Ethmoid, Side::Right), (0.0, 10.0)),
            ((Sinus::Ethmoid, Side::Left), (500.0, 500.0)),
            ((Sinus::Frontal, Side::Right), (1000.0, 0.0)),
            ((Sinus::Sphenoid, Side::Left), (10.0, 0.0)),
        ];
        let swapped: Vec<_> = volumes
            .iter()
            .map(|&((sinus, side), v)| ((sinus, side.opposite()), v))
            .collect();
        let a = modified_lms(&subject(&volumes)).unwrap();
        let b = modified_lms(&subject(&swapped)).unwrap();
        assert_eq!(a.total, b.total);
        assert_eq!(a.right_total, b.left_total);
        assert_eq!(a.left_total, b.right_total);
    }

    #[test]
    fn reference_volumes_load_and_validate() {
        let json = r#"{"maxillary_mm3": 20000, "frontal_mm3": 5000,
                       "ethmoid_mm3": 6000, "sphenoid_mm3": 5500}"#;
        let refs = ReferenceVolumes::from_json_reader(json.as_bytes()).unwrap();
        assert_eq!(refs.get(Sinus::Maxillary), 20000.0);

        let bad = r#"{"maxillary_mm3": -1, "frontal_mm3": 5000,
                      "ethmoid_mm3": 6000, "sphenoid_mm3": 5500}"#;
        assert!(ReferenceVolumes::from_json_reader(bad.as_bytes()).is_err());
    }

    #[test]
    fn report_serializes_with_all_regions() {
        let report = modified_lms(&subject(&everywhere(500.0, 500.0))).unwrap();
        let json = report.to_json().unwrap();
        assert_eq!(report.entries.len(), 8);
        assert!(json.contains("\"right_total\""));
        assert!(json.contains("\"maxillary\""));
    }
}
