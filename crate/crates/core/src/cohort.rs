//! Batch operations over directories of subjects.
//!
//! Inputs pair image and mask files by stem (file name minus `.nii` or
//! `.nii.gz`). Subjects run in parallel on the current rayon thread pool;
//! a failure in one subject is recorded and the batch continues. Output
//! files are written atomically (temp file, then rename into place) and
//! every table is sorted, so a rerun over the same inputs produces
//! identical bytes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::augment::multiply_pair;
use crate::components::{Connectivity, DEFAULT_CONNECTIVITY};
use crate::error::{Error, Result};
use crate::features::{extract_subject, write_features_csv, SubjectFeatures};
use crate::metrics::{evaluate, pool_reports, SegmentationReport, SummaryStat};
use crate::nifti::{
    read_labelmap_path_remapped, read_volume_path, write_labelmap, write_labelmap_path,
    write_volume, write_volume_path,
};
use crate::phantom::{cohort_specs, generate, PhantomSpec};
use crate::schema::{code_of, parse_code, RemapTable, Side, Sinus, Tissue};
use crate::scoring::{
    modified_lms_from_volumes, modified_lms_with, opacification, LmsReport, ReferenceVolumes,
    NORMAL_COHORT_MEAN_SCORE,
};

/// Subject stem of a segmentation file name: the name with a `.nii` or
/// `.nii.gz` extension removed (case-insensitive). Other files have none.
pub fn subject_stem(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    let lower = name.to_ascii_lowercase();
    for suffix in [".nii.gz", ".nii"] {
        if lower.ends_with(suffix) && name.len() > suffix.len() {
            return Some(name[..name.len() - suffix.len()].to_string());
        }
    }
    None
}

fn list_segmentations(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::MalformedInput {
        path: dir.to_path_buf(),
        message: format!("cannot list directory: {e}"),
    })?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        if !path.is_file() {
            continue;
        }
        let Some(stem) = subject_stem(&path) else { continue };
        if let Some(previous) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::MalformedInput {
                path: dir.to_path_buf(),
                message: format!(
                    "stem `{stem}` is ambiguous: {} and {}",
                    previous.display(),
                    path.display()
                ),
            });
        }
    }
    Ok(out)
}

/// Result of matching two directories by stem.
#[derive(Debug)]
pub struct Pairing {
    /// (stem, path in first dir, path in second dir), sorted by stem.
    pub pairs: Vec<(String, PathBuf, PathBuf)>,
    pub only_in_first: Vec<String>,
    pub only_in_second: Vec<String>,
}

/// Match the segmentation files of two directories by stem.
pub fn pair_directories(first: &Path, second: &Path) -> Result<Pairing> {
    let mut a = list_segmentations(first)?;
    let b = list_segmentations(second)?;
    let mut pairs = Vec::new();
    let mut only_in_second = Vec::new();
    for (stem, b_path) in b {
        match a.remove(&stem) {
            Some(a_path) => pairs.push((stem, a_path, b_path)),
            None => only_in_second.push(stem),
        }
    }
    let only_in_first = a.into_keys().collect();
    pairs.sort();
    Ok(Pairing { pairs, only_in_first, only_in_second })
}

/// One subject that could not be processed, and why.
#[derive(Debug, Clone, Serialize)]
pub struct SubjectFailure {
    pub subject_id: String,
    pub message: String,
}

/// Which subjects a batch processed and which it had to skip.
#[derive(Debug)]
pub struct BatchOutcome {
    /// Stems processed successfully, sorted.
    pub processed: Vec<String>,
    /// Skipped subjects, sorted by stem.
    pub failures: Vec<SubjectFailure>,
}

impl BatchOutcome {
    pub fn is_clean(&self) -> bool {
        self.failures.is_empty()
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::Builder::new().prefix(".tmp-").tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::from(e.error))?;
    Ok(())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::from(e.into_error()))
}

fn write_failures_csv(out_dir: &Path, failures: &[SubjectFailure]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["subject_id", "message"])?;
    for f in failures {
        w.write_record([&f.subject_id, &f.message])?;
    }
    atomic_write(&out_dir.join("failures.csv"), &finish_csv(w)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn split_results<T>(
    results: Vec<(String, Result<T>)>,
    mut extra_failures: Vec<SubjectFailure>,
) -> (Vec<(String, T)>, Vec<SubjectFailure>, Vec<String>) {
    let mut ok = Vec::new();
    for (stem, result) in results {
        match result {
            Ok(value) => ok.push((stem, value)),
            Err(e) => extra_failures
                .push(SubjectFailure { subject_id: stem, message: e.to_string() }),
        }
    }
    ok.sort_by(|a, b| a.0.cmp(&b.0));
    extra_failures.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let processed = ok.iter().map(|(stem, _)| stem.clone()).collect();
    (ok, extra_failures, processed)
}

fn unmatched_failures(pairing: &Pairing, first_kind: &str, second_kind: &str) -> Vec<SubjectFailure> {
    let mut out = Vec::new();
    for stem in &pairing.only_in_first {
        out.push(SubjectFailure {
            subject_id: stem.clone(),
            message: format!("{first_kind} has no matching {second_kind}"),
        });
    }
    for stem in &pairing.only_in_second {
        out.push(SubjectFailure {
            subject_id: stem.clone(),
            message: format!("{second_kind} has no matching {first_kind}"),
        });
    }
    out
}

fn ensure_nonempty(pairing: &Pairing, first: &Path, second: &Path) -> Result<()> {
    if pairing.pairs.is_empty()
        && pairing.only_in_first.is_empty()
        && pairing.only_in_second.is_empty()
    {
        return Err(Error::EmptyCohort(format!(
            "no .nii or .nii.gz files under {} or {}",
            first.display(),
            second.display()
        )));
    }
    Ok(())
}

/// Options for [`analyze`].
#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    /// Applied to mask values before schema validation.
    pub remap: Option<RemapTable>,
    pub references: ReferenceVolumes,
    pub connectivity: Connectivity,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            remap: None,
            references: ReferenceVolumes::default(),
            connectivity: DEFAULT_CONNECTIVITY,
        }
    }
}

fn intensity_of(features: &SubjectFeatures, code: u8) -> Option<f64> {
    features.per_code.get(&code).and_then(|f| f.intensity_mean)
}

fn write_cohort_csv(
    out_dir: &Path,
    subjects: &[(String, (SubjectFeatures, LmsReport, PathBuf))],
    remap_applied: bool,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "subject_id",
        "structure",
        "side",
        "air_volume_mm3",
        "soft_tissue_volume_mm3",
        "opacification",
        "grade",
        "weighted_grade",
        "aplasia",
        "hypoplasia",
        "air_intensity_mean",
        "soft_tissue_intensity_mean",
        "mask_path",
        "remap_applied",
    ])?;
    for (stem, (features, report, mask_path)) in subjects {
        let provenance = mask_path.display().to_string();
        for e in &report.entries {
            let air_code = code_of(e.sinus, e.side, Tissue::Air);
            w.write_record([
                stem.clone(),
                e.sinus.name().to_string(),
                e.side.name().to_string(),
                format!("{}", e.air_volume_mm3),
                format!("{}", e.soft_tissue_volume_mm3),
                fmt_opt(e.opacification),
                e.grade.map(|g| g.to_string()).unwrap_or_default(),
                e.weighted_grade.to_string(),
                e.aplasia.to_string(),
                e.hypoplasia.to_string(),
                fmt_opt(intensity_of(features, air_code)),
                fmt_opt(intensity_of(features, air_code + 8)),
                provenance.clone(),
                remap_applied.to_string(),
            ])?;
        }
        let air = features.union_air.volume_mm3;
        let soft = features.union_soft_tissue.volume_mm3;
        w.write_record([
            stem.clone(),
            "all".to_string(),
            "both".to_string(),
            format!("{air}"),
            format!("{soft}"),
            fmt_opt(opacification(air, soft)?),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            fmt_opt(features.union_air.intensity_mean),
            fmt_opt(features.union_soft_tissue.intensity_mean),
            provenance,
            remap_applied.to_string(),
        ])?;
    }
    atomic_write(&out_dir.join("cohort.csv"), &finish_csv(w)?)
}

#[derive(Serialize)]
struct SubjectRecord<'a> {
    features: &'a SubjectFeatures,
    score: &'a LmsReport,
}

/// Extract features and scores for every paired subject under two
/// directories. Writes `features.csv`, `cohort.csv`,
/// `per_subject/<stem>.json`, and `failures.csv`.
pub fn analyze(
    images_dir: &Path,
    masks_dir: &Path,
    out_dir: &Path,
    options: &AnalyzeOptions,
) -> Result<BatchOutcome> {
    options.references.validate()?;
    let pairing = pair_directories(images_dir, masks_dir)?;
    ensure_nonempty(&pairing, images_dir, masks_dir)?;

    let results: Vec<(String, Result<(SubjectFeatures, LmsReport, PathBuf)>)> = pairing
        .pairs
        .par_iter()
        .map(|(stem, image_path, mask_path)| {
            let result = (|| {
                let image = read_volume_path(image_path)?.into_canonical();
                let labels =
                    read_labelmap_path_remapped(mask_path, options.remap.as_ref())?
                        .into_canonical();
                let features = extract_subject(&image, &labels, stem, options.connectivity)?;
                let report = modified_lms_with(&features, &options.references)?;
                Ok((features, report, mask_path.clone()))
            })();
            (stem.clone(), result)
        })
        .collect();

    let unmatched = unmatched_failures(&pairing, "image", "mask");
    let (subjects, failures, processed) = split_results(results, unmatched);

    let mut features_bytes = Vec::new();
    write_features_csv(subjects.iter().map(|(_, (f, _, _))| f), &mut features_bytes)?;
    atomic_write(&out_dir.join("features.csv"), &features_bytes)?;
    write_cohort_csv(out_dir, &subjects, options.remap.is_some())?;
    for (stem, (features, report, _)) in &subjects {
        let record = SubjectRecord { features, score: report };
        let mut json = serde_json::to_string_pretty(&record)?;
        json.push('\n');
        atomic_write(
            &out_dir.join("per_subject").join(format!("{stem}.json")),
            json.as_bytes(),
        )?;
    }
    write_failures_csv(out_dir, &failures)?;
    Ok(BatchOutcome { processed, failures })
}

/// Options for [`evaluate_cohort`].
#[derive(Debug, Clone, Default)]
pub struct EvaluateOptions {
    /// Applied to both predicted and reference masks.
    pub remap: Option<RemapTable>,
}

/// Compare predicted masks against references subject by subject. Writes
/// `per_subject/<stem>.metrics.json` for each pair, the pooled
/// `aggregate_metrics.csv` and `aggregate_metrics.json`, and `failures.csv`.
pub fn evaluate_cohort(
    pred_dir: &Path,
    ref_dir: &Path,
    out_dir: &Path,
    options: &EvaluateOptions,
) -> Result<BatchOutcome> {
    let pairing = pair_directories(pred_dir, ref_dir)?;
    ensure_nonempty(&pairing, pred_dir, ref_dir)?;

    let results: Vec<(String, Result<SegmentationReport>)> = pairing
        .pairs
        .par_iter()
        .map(|(stem, pred_path, ref_path)| {
            let result = (|| {
                let pred = read_labelmap_path_remapped(pred_path, options.remap.as_ref())?
                    .into_canonical();
                let reference =
                    read_labelmap_path_remapped(ref_path, options.remap.as_ref())?
                        .into_canonical();
                evaluate(&pred, &reference)
            })();
            (stem.clone(), result)
        })
        .collect();

    let unmatched = unmatched_failures(&pairing, "prediction", "reference");
    let (reports, failures, processed) = split_results(results, unmatched);

    for (stem, report) in &reports {
        atomic_write(
            &out_dir.join("per_subject").join(format!("{stem}.metrics.json")),
            report.to_json()?.as_bytes(),
        )?;
    }
    let pooled = pool_reports(reports.iter().map(|(_, r)| r));
    let mut csv_bytes = Vec::new();
    pooled.write_csv(&mut csv_bytes)?;
    atomic_write(&out_dir.join("aggregate_metrics.csv"), &csv_bytes)?;
    atomic_write(&out_dir.join("aggregate_metrics.json"), pooled.to_json()?.as_bytes())?;
    write_failures_csv(out_dir, &failures)?;
    Ok(BatchOutcome { processed, failures })
}

/// Where [`score`] takes its per-subject volumes from.
#[derive(Debug, Clone, Copy)]
pub enum ScoreInput<'a> {
    /// A directory of label maps; volumes are measured from the voxels.
    Masks(&'a Path),
    /// A `cohort.csv` previously written by [`analyze`].
    CohortCsv(&'a Path),
}

/// Radiology report classification for the score/report comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HealthLabel {
    Healthy,
    NotHealthy,
    Technical,
}

impl HealthLabel {
    fn parse(s: &str) -> Option<HealthLabel> {
        match s.trim().to_ascii_lowercase().as_str() {
            "healthy" => Some(HealthLabel::Healthy),
            "not_healthy" => Some(HealthLabel::NotHealthy),
            "technical" => Some(HealthLabel::Technical),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            HealthLabel::Healthy => "healthy",
            HealthLabel::NotHealthy => "not_healthy",
            HealthLabel::Technical => "technical",
        }
    }
}

/// Options for [`score`].
#[derive(Debug, Clone, Default)]
pub struct ScoreOptions {
    /// Applied to mask values before schema validation (mask input only).
    pub remap: Option<RemapTable>,
    pub references: ReferenceVolumes,
    /// CSV with columns `subject_id,sinus,side,health_label`; enables the
    /// report-comparison outputs.
    pub reports_csv: Option<PathBuf>,
}

fn parse_sinus(s: &str) -> Option<Sinus> {
    Sinus::ALL.into_iter().find(|x| x.name() == s)
}

fn parse_side(s: &str) -> Option<Side> {
    Side::ALL.into_iter().find(|x| x.name() == s)
}

/// Per-subject input to the scorer: label volumes, plus mean image
/// intensities per code when the source carries them (mask files do not).
#[derive(Debug, Default)]
struct SubjectMeasurements {
    volumes: BTreeMap<u8, f64>,
    intensities: BTreeMap<u8, f64>,
}

fn read_cohort_volumes(path: &Path) -> Result<Vec<(String, SubjectMeasurements)>> {
    let malformed = |message: String| Error::MalformedInput {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_reader(File::open(path)?);
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| malformed(format!("missing column `{name}`")))
    };
    let optional = |name: &str| headers.iter().position(|h| h == name);
    let subject_col = column("subject_id")?;
    let structure_col = column("structure")?;
    let side_col = column("side")?;
    let air_col = column("air_volume_mm3")?;
    let soft_col = column("soft_tissue_volume_mm3")?;
    let air_intensity_col = optional("air_intensity_mean");
    let soft_intensity_col = optional("soft_tissue_intensity_mean");

    let mut subjects: BTreeMap<String, SubjectMeasurements> = BTreeMap::new();
    for (index, record) in reader.records().enumerate() {
        let record = record?;
        let row = index + 2;
        let field = |col: usize| record.get(col).unwrap_or("");
        let structure = field(structure_col);
        if structure == "all" {
            continue;
        }
        let sinus = parse_sinus(structure)
            .ok_or_else(|| malformed(format!("row {row}: unknown structure `{structure}`")))?;
        let side = parse_side(field(side_col))
            .ok_or_else(|| malformed(format!("row {row}: unknown side `{}`", field(side_col))))?;
        let parse_volume = |col: usize, name: &str| -> Result<f64> {
            field(col).parse().map_err(|_| {
                malformed(format!("row {row}: bad {name} `{}`", field(col)))
            })
        };
        let air = parse_volume(air_col, "air volume")?;
        let soft = parse_volume(soft_col, "soft tissue volume")?;
        let air_code = code_of(sinus, side, Tissue::Air);
        let subject = subjects.entry(field(subject_col).to_string()).or_default();
        for (code, value) in [(air_code, air), (air_code + 8, soft)] {
            if subject.volumes.insert(code, value).is_some() {
                return Err(malformed(format!(
                    "row {row}: duplicate entry for {structure} {}",
                    side.name()
                )));
            }
        }
        for (col, code) in [(air_intensity_col, air_code), (soft_intensity_col, air_code + 8)] {
            let Some(col) = col else { continue };
            let raw = field(col);
            if raw.is_empty() {
                continue;
            }
            let value = raw
                .parse()
                .map_err(|_| malformed(format!("row {row}: bad intensity mean `{raw}`")))?;
            subject.intensities.insert(code, value);
        }
    }
    Ok(subjects.into_iter().collect())
}

/// Radiology reports, keyed by subject and the air label code of the
/// sinus-side pair the row describes.
fn read_reports_csv(path: &Path) -> Result<BTreeMap<(String, u8), HealthLabel>> {
    let malformed = |message: String| Error::MalformedInput {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_reader(File::open(path)?);
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| malformed(format!("missing column `{name}`")))
    };
    let subject_col = column("subject_id")?;
    let sinus_col = column("sinus")?;
    let side_col = column("side")?;
    let label_col = column("health_label")?;
    let mut out = BTreeMap::new();
    for (index, record) in reader.records().enumerate() {
        let record = record?;
        let row = index + 2;
        let field = |col: usize| record.get(col).unwrap_or("");
        let subject = field(subject_col).to_string();
        let sinus = parse_sinus(field(sinus_col))
            .ok_or_else(|| malformed(format!("row {row}: unknown sinus `{}`", field(sinus_col))))?;
        let side = parse_side(field(side_col))
            .ok_or_else(|| malformed(format!("row {row}: unknown side `{}`", field(side_col))))?;
        let raw = field(label_col);
        let label = HealthLabel::parse(raw)
            .ok_or_else(|| malformed(format!("row {row}: unknown health label `{raw}`")))?;
        let code = code_of(sinus, side, Tissue::Air);
        if out.insert((subject.clone(), code), label).is_some() {
            return Err(malformed(format!(
                "row {row}: duplicate report for `{subject}` {} {}",
                sinus.name(),
                side.name()
            )));
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct ScoreSummary {
    subjects: usize,
    mean_total: Option<f64>,
    sd_total: Option<f64>,
    /// Mean total of radiologically normal adults, for comparison.
    normal_reference_mean: f64,
}

/// Score every subject and write the cohort tables: `totals.csv`,
/// `histogram.csv`, `score_summary.json`, and `failures.csv`. With a
/// reports CSV configured, also writes `scatter.csv` (one row per scored
/// sinus-side pair whose report is healthy or not_healthy) and
/// `exclusions.csv` (everything left out of that comparison, with the
/// reason).
pub fn score(input: ScoreInput, out_dir: &Path, options: &ScoreOptions) -> Result<BatchOutcome> {
    options.references.validate()?;
    let volume_results: Vec<(String, Result<SubjectMeasurements>)> = match input {
        ScoreInput::Masks(dir) => {
            let masks = list_segmentations(dir)?;
            if masks.is_empty() {
                return Err(Error::EmptyCohort(format!(
                    "no .nii or .nii.gz files under {}",
                    dir.display()
                )));
            }
            let masks: Vec<(String, PathBuf)> = masks.into_iter().collect();
            masks
                .par_iter()
                .map(|(stem, path)| {
                    let result = (|| {
                        let labels =
                            read_labelmap_path_remapped(path, options.remap.as_ref())?;
                        let voxel = labels.voxel_volume_mm3();
                        let histogram = labels.histogram();
                        Ok(SubjectMeasurements {
                            volumes: (1..=16u8)
                                .map(|code| (code, histogram[code as usize] as f64 * voxel))
                                .collect(),
                            intensities: BTreeMap::new(),
                        })
                    })();
                    (stem.clone(), result)
                })
                .collect()
        }
        ScoreInput::CohortCsv(path) => {
            let rows = read_cohort_volumes(path)?;
            if rows.is_empty() {
                return Err(Error::EmptyCohort(format!(
                    "no region rows in {}",
                    path.display()
                )));
            }
            rows.into_iter().map(|(stem, m)| (stem, Ok(m))).collect()
        }
    };

    let mut scored: Vec<(String, LmsReport, BTreeMap<u8, f64>)> = Vec::new();
    let mut failures: Vec<SubjectFailure> = Vec::new();
    for (stem, result) in volume_results {
        let outcome = result.and_then(|m| {
            let report = modified_lms_from_volumes(&stem, &m.volumes, &options.references)?;
            Ok((report, m.intensities))
        });
        match outcome {
            Ok((report, intensities)) => scored.push((stem, report, intensities)),
            Err(e) => {
                failures.push(SubjectFailure { subject_id: stem, message: e.to_string() })
            }
        }
    }
    scored.sort_by(|a, b| a.0.cmp(&b.0));
    failures.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "subject_id",
        "right_total",
        "left_total",
        "total",
        "aplastic_regions",
        "hypoplastic_regions",
    ])?;
    for (stem, report, _) in &scored {
        let flagged = |f: fn(&crate::scoring::LmsEntry) -> bool| {
            report
                .entries
                .iter()
                .filter(|e| f(e))
                .map(|e| format!("{}_{}", e.sinus.name(), e.side.name()))
                .collect::<Vec<_>>()
                .join(";")
        };
        w.write_record([
            stem.clone(),
            report.right_total.to_string(),
            report.left_total.to_string(),
            report.total.to_string(),
            flagged(|e| e.aplasia),
            flagged(|e| e.hypoplasia),
        ])?;
    }
    atomic_write(&out_dir.join("totals.csv"), &finish_csv(w)?)?;

    let mut bins = [0usize; 25];
    for (_, report, _) in &scored {
        bins[report.total as usize] += 1;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["total", "count", "percent"])?;
    for (total, &count) in bins.iter().enumerate() {
        let percent = if scored.is_empty() {
            0.0
        } else {
            100.0 * count as f64 / scored.len() as f64
        };
        w.write_record([total.to_string(), count.to_string(), format!("{percent}")])?;
    }
    atomic_write(&out_dir.join("histogram.csv"), &finish_csv(w)?)?;

    let stat = SummaryStat::from_options(scored.iter().map(|(_, r, _)| Some(r.total as f64)));
    let summary = ScoreSummary {
        subjects: scored.len(),
        mean_total: stat.mean,
        sd_total: stat.sd,
        normal_reference_mean: NORMAL_COHORT_MEAN_SCORE,
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    atomic_write(&out_dir.join("score_summary.json"), json.as_bytes())?;

    if let Some(reports_path) = &options.reports_csv {
        let mut labels = read_reports_csv(reports_path)?;
        let mut scatter = csv::Writer::from_writer(Vec::new());
        scatter.write_record([
            "subject_id",
            "sinus",
            "side",
            "air_volume_mm3",
            "soft_tissue_volume_mm3",
            "air_intensity_mean",
            "soft_tissue_intensity_mean",
            "health_label",
        ])?;
        // (subject, air code, sinus, side, reason); the code slot keeps the
        // sort in schema order, 0 for whole-subject rows.
        let mut exclusions: Vec<(String, u8, String, String, String)> = Vec::new();
        for (stem, report, intensities) in &scored {
            let mut matched = 0usize;
            for e in &report.entries {
                let code = code_of(e.sinus, e.side, Tissue::Air);
                match labels.remove(&(stem.clone(), code)) {
                    Some(HealthLabel::Technical) => {
                        matched += 1;
                        exclusions.push((
                            stem.clone(),
                            code,
                            e.sinus.name().to_string(),
                            e.side.name().to_string(),
                            "technical report quality".into(),
                        ));
                    }
                    Some(label) => {
                        matched += 1;
                        scatter.write_record([
                            stem.clone(),
                            e.sinus.name().to_string(),
                            e.side.name().to_string(),
                            format!("{}", e.air_volume_mm3),
                            format!("{}", e.soft_tissue_volume_mm3),
                            fmt_opt(intensities.get(&code).copied()),
                            fmt_opt(intensities.get(&(code + 8)).copied()),
                            label.as_str().to_string(),
                        ])?;
                    }
                    None => {}
                }
            }
            if matched == 0 {
                exclusions.push((
                    stem.clone(),
                    0,
                    String::new(),
                    String::new(),
                    "no report for subject".into(),
                ));
            }
        }
        for ((subject, code), _) in labels {
            let id = parse_code(code)?;
            exclusions.push((
                subject,
                code,
                id.sinus.name().to_string(),
                id.side.name().to_string(),
                "no scored subject for report".into(),
            ));
        }
        exclusions.sort();
        atomic_write(&out_dir.join("scatter.csv"), &finish_csv(scatter)?)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["subject_id", "sinus", "side", "reason"])?;
        for (subject, _, sinus, side, reason) in &exclusions {
            w.write_record([subject, sinus, side, reason])?;
        }
        atomic_write(&out_dir.join("exclusions.csv"), &finish_csv(w)?)?;
    }

    write_failures_csv(out_dir, &failures)?;
    let processed = scored.into_iter().map(|(stem, _, _)| stem).collect();
    Ok(BatchOutcome { processed, failures })
}

/// Options for [`augment_cohort`].
#[derive(Debug, Clone)]
pub struct AugmentOptions {
    /// Applied to mask values before schema validation.
    pub remap: Option<RemapTable>,
    /// Output pairs per subject, original included.
    pub factor: usize,
    pub master_seed: u64,
}

/// Multiply every paired subject into `factor` augmented pairs. Writes
/// `images/<name>.nii.gz`, `masks/<name>.nii.gz`, a `manifest.csv`, and
/// `failures.csv`.
pub fn augment_cohort(
    images_dir: &Path,
    masks_dir: &Path,
    out_dir: &Path,
    options: &AugmentOptions,
) -> Result<BatchOutcome> {
    let pairing = pair_directories(images_dir, masks_dir)?;
    ensure_nonempty(&pairing, images_dir, masks_dir)?;

    type ManifestRows = Vec<[String; 6]>;
    let results: Vec<(String, Result<ManifestRows>)> = pairing
        .pairs
        .par_iter()
        .map(|(stem, image_path, mask_path)| {
            let result = (|| {
                let image = read_volume_path(image_path)?.into_canonical();
                let labels =
                    read_labelmap_path_remapped(mask_path, options.remap.as_ref())?
                        .into_canonical();
                let family =
                    multiply_pair(&image, &labels, stem, options.factor, options.master_seed)?;
                let mut rows = Vec::with_capacity(family.len());
                for pair in family {
                    let image_rel = format!("images/{}.nii.gz", pair.name);
                    let mask_rel = format!("masks/{}.nii.gz", pair.name);
                    let mut bytes = Vec::new();
                    write_volume(&pair.image, &mut bytes, true)?;
                    atomic_write(&out_dir.join(&image_rel), &bytes)?;
                    let mut bytes = Vec::new();
                    write_labelmap(&pair.labels, &mut bytes, true)?;
                    atomic_write(&out_dir.join(&mask_rel), &bytes)?;
                    rows.push([
                        stem.clone(),
                        pair.name,
                        pair.transform,
                        pair.seed.to_string(),
                        image_rel,
                        mask_rel,
                    ]);
                }
                Ok(rows)
            })();
            (stem.clone(), result)
        })
        .collect();

    let unmatched = unmatched_failures(&pairing, "image", "mask");
    let (row_groups, failures, processed) = split_results(results, unmatched);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["subject_id", "name", "transform", "seed", "image", "mask"])?;
    for (_, rows) in &row_groups {
        for row in rows {
            w.write_record(row)?;
        }
    }
    atomic_write(&out_dir.join("manifest.csv"), &finish_csv(w)?)?;
    write_failures_csv(out_dir, &failures)?;
    Ok(BatchOutcome { processed, failures })
}

/// What [`generate_phantoms`] should produce.
#[derive(Debug, Clone, Copy)]
pub enum PhantomRequest<'a> {
    /// The frozen reference phantom.
    Standard,
    /// `count` varied phantoms derived from a master seed.
    Cohort { count: usize, master_seed: u64 },
    /// One phantom from a JSON spec file.
    SpecFile(&'a Path),
}

/// Generate phantoms and write them under `out_dir`: `images/<id>.nii.gz`,
/// `masks/<id>.nii.gz`, and the exact generation record
/// `truth/<id>.json`, plus `failures.csv`.
pub fn generate_phantoms(out_dir: &Path, request: PhantomRequest) -> Result<BatchOutcome> {
    let specs: Vec<PhantomSpec> = match request {
        PhantomRequest::Standard => vec![PhantomSpec::standard()],
        PhantomRequest::Cohort { count, master_seed } => {
            if count == 0 {
                return Err(Error::InvalidParameter("phantom count must be at least 1".into()));
            }
            cohort_specs(count, master_seed)?
        }
        PhantomRequest::SpecFile(path) => {
            let spec: PhantomSpec = serde_json::from_reader(File::open(path)?)?;
            vec![spec]
        }
    };

    fs::create_dir_all(out_dir.join("images"))?;
    fs::create_dir_all(out_dir.join("masks"))?;
    let results: Vec<(String, Result<()>)> = specs
        .par_iter()
        .map(|spec| {
            let result = (|| {
                let phantom = generate(spec)?;
                write_volume_path(
                    &phantom.image,
                    out_dir.join("images").join(format!("{}.nii.gz", spec.subject_id)),
                )?;
                write_labelmap_path(
                    &phantom.labels,
                    out_dir.join("masks").join(format!("{}.nii.gz", spec.subject_id)),
                )?;
                let mut json = serde_json::to_string_pretty(&phantom.truth)?;
                json.push('\n');
                atomic_write(
                    &out_dir.join("truth").join(format!("{}.json", spec.subject_id)),
                    json.as_bytes(),
                )?;
                Ok(())
            })();
            (spec.subject_id.clone(), result)
        })
        .collect();

    let (_done, failures, processed) = split_results(results, Vec::new());
    write_failures_csv(out_dir, &failures)?;
    Ok(BatchOutcome { processed, failures })
}
