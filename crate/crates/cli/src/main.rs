use std::fs::File;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use sinuskit::cohort::{
    analyze, augment_cohort, evaluate_cohort, generate_phantoms, score, AnalyzeOptions,
    AugmentOptions, BatchOutcome, EvaluateOptions, PhantomRequest, ScoreInput, ScoreOptions,
};
use sinuskit::schema::{schema_sidecar_json, RemapTable};
use sinuskit::scoring::ReferenceVolumes;

/// Batch analysis of paranasal sinus MRI segmentations.
#[derive(Parser)]
#[command(name = "sinuskit", version)]
struct Cli {
    /// Worker threads for subject-level parallelism (0 = one per CPU).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PairedInputs {
    /// Directory of image volumes (.nii / .nii.gz).
    #[arg(long)]
    images: PathBuf,
    /// Directory of label masks, matched to images by file stem.
    #[arg(long)]
    masks: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// CSV (`from,to`) applied to mask values before validation.
    #[arg(long)]
    remap: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract per-structure features and opacification scores for a cohort.
    ///
    /// Writes features.csv, cohort.csv, and failures.csv under --out.
    Analyze {
        #[command(flatten)]
        inputs: PairedInputs,
        /// JSON file overriding the normal sinus reference volumes.
        #[arg(long)]
        reference_volumes: Option<PathBuf>,
    },
    /// Compare predicted masks against reference masks.
    ///
    /// Writes per_subject/<stem>.metrics.json, aggregate_metrics.csv,
    /// aggregate_metrics.json, and failures.csv under --out.
    Evaluate {
        /// Directory of predicted masks.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of reference masks, matched by file stem.
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// CSV (`from,to`) applied to both sides before validation.
        #[arg(long)]
        remap: Option<PathBuf>,
    },
    /// Score subjects with the modified Lund-Mackay system.
    ///
    /// Writes totals.csv, histogram.csv, score_summary.json, failures.csv,
    /// and (with --reports) scatter.csv and exclusions.csv under --out.
    Score {
        /// Directory of label masks to measure and score.
        #[arg(long, conflicts_with = "cohort", required_unless_present = "cohort")]
        masks: Option<PathBuf>,
        /// cohort.csv from a previous analyze run, scored without
        /// touching the masks again.
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// CSV (`from,to`) applied to mask values (mask input only).
        #[arg(long)]
        remap: Option<PathBuf>,
        /// JSON file overriding the normal sinus reference volumes.
        #[arg(long)]
        reference_volumes: Option<PathBuf>,
        /// CSV (`subject_id,sinus,side,health_label`) of radiology report
        /// labels.
        #[arg(long)]
        reports: Option<PathBuf>,
    },
    /// Multiply a cohort with label-aware flips and elastic deformations.
    ///
    /// Writes images/, masks/, manifest.csv, and failures.csv under --out.
    Augment {
        #[command(flatten)]
        inputs: PairedInputs,
        /// Output pairs per subject, the original included.
        #[arg(long, default_value_t = 2)]
        factor: usize,
        /// Master seed for the deformation draws.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate synthetic phantoms with exact ground truth.
    ///
    /// Writes images/, masks/, truth/<id>.json, and failures.csv under --out.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        /// Generate the frozen reference phantom.
        #[arg(long, conflicts_with_all = ["count", "spec"], required_unless_present_any = ["count", "spec"])]
        standard: bool,
        /// Generate this many varied phantoms.
        #[arg(long, conflicts_with = "spec")]
        count: Option<usize>,
        /// Master seed for --count.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generate one phantom from a JSON spec file.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Print the 16-structure label schema as JSON.
    Schema,
}

fn load_remap(path: &Option<PathBuf>) -> Result<Option<RemapTable>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let table = RemapTable::from_csv_reader(file)
                .with_context(|| format!("parsing remap table {}", p.display()))?;
            Ok(Some(table))
        }
    }
}

fn load_references(path: &Option<PathBuf>) -> Result<ReferenceVolumes> {
    match path {
        None => Ok(ReferenceVolumes::default()),
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            ReferenceVolumes::from_json_reader(file)
                .with_context(|| format!("parsing reference volumes {}", p.display()))
        }
    }
}

fn report(outcome: &BatchOutcome) -> bool {
    println!("processed {} subject(s)", outcome.processed.len());
    if !outcome.failures.is_empty() {
        eprintln!("{} subject(s) failed:", outcome.failures.len());
        for failure in &outcome.failures {
            eprintln!("  {}: {}", failure.subject_id, failure.message);
        }
    }
    outcome.is_clean()
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Analyze { inputs, reference_volumes } => {
            let options = AnalyzeOptions {
                remap: load_remap(&inputs.remap)?,
                references: load_references(&reference_volumes)?,
                ..AnalyzeOptions::default()
            };
            let outcome = analyze(&inputs.images, &inputs.masks, &inputs.out, &options)?;
            Ok(report(&outcome))
        }
        Command::Evaluate { pred, reference, out, remap } => {
            let options = EvaluateOptions { remap: load_remap(&remap)? };
            let outcome = evaluate_cohort(&pred, &reference, &out, &options)?;
            Ok(report(&outcome))
        }
        Command::Score { masks, cohort, out, remap, reference_volumes, reports } => {
            let options = ScoreOptions {
                remap: load_remap(&remap)?,
                references: load_references(&reference_volumes)?,
                reports_csv: reports,
            };
            let input = match (&masks, &cohort) {
                (Some(dir), None) => ScoreInput::Masks(dir),
                (None, Some(csv)) => ScoreInput::CohortCsv(csv),
                _ => unreachable!("clap enforces exactly one input"),
            };
            let outcome = score(input, &out, &options)?;
            Ok(report(&outcome))
        }
        Command::Augment { inputs, factor, seed } => {
            let options = AugmentOptions {
                remap: load_remap(&inputs.remap)?,
                factor,
                master_seed: seed,
            };
            let outcome = augment_cohort(&inputs.images, &inputs.masks, &inputs.out, &options)?;
            Ok(report(&outcome))
        }
        Command::Phantom { out, standard, count, seed, spec } => {
            let request = if standard {
                PhantomRequest::Standard
            } else if let Some(path) = &spec {
                PhantomRequest::SpecFile(path)
            } else {
                PhantomRequest::Cohort {
                    count: count.expect("clap enforces a selection"),
                    master_seed: seed,
                }
            };
            let outcome = generate_phantoms(&out, request)?;
            Ok(report(&outcome))
        }
        Command::Schema => {
            print!("{}", schema_sidecar_json());
            Ok(true)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let outcome = if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build()
            .map_err(anyhow::Error::from)
            .and_then(|pool| pool.install(|| run(cli.command)))
    } else {
        run(cli.command)
    };
    match outcome {
        Ok(true) => {}
        Ok(false) => std::process::exit(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
