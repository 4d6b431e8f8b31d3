//! symmcal: batch analysis of bilateral postural symmetry.
//!
//! Single-step subcommands (angles, aggregate, agreement, calibrate,
//! classify, factors, simulate) each run one analysis on explicit files.
//! `run` executes the whole flow from a JSON config, writing a
//! provenance-stamped artifact bundle.
//!
//! Exit codes: 0 on success, 2 on invalid arguments or inputs, 3 when a
//! pipeline stage fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use symmcal_core::aggregation::{
    em_binary, em_ordinal, rater_report, BetaPrior, EmConfig, PriorSet, PriorSpec,
};
use symmcal_core::agreement::{agreement_report, AlphaMetric, SourceLabels};
use symmcal_core::calibration::{calibrate, default_theta_grid};
use symmcal_core::error::{Error, Result};
use symmcal_core::factors::{build_cells, factor_report};
use symmcal_core::geometry::{angle_class_of, angle_histogram, angle_profile, AngleProfile};
use symmcal_core::pipeline::{run_pipeline, ThetaGridConfig};
use symmcal_core::skeleton::{
    load_keypoints, load_keypoints_any, load_occlusions, load_ratings, save_keypoints,
    save_occlusions, save_ratings, ItemKey, Posture, Skeleton,
};
use symmcal_core::synth::{generate, SynthSpec};
use symmcal_core::tables::{self, Stamp};

#[derive(Parser)]
#[command(name = "symmcal", version, about = "Bilateral postural symmetry analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LabelKind {
    /// Binary symmetric/asymmetric labels.
    Symmetry,
    /// Ordinal angle classes 0/1/2.
    Angle,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Nominal,
    Ordinal,
}

impl From<MetricArg> for AlphaMetric {
    fn from(m: MetricArg) -> AlphaMetric {
        match m {
            MetricArg::Nominal => AlphaMetric::Nominal,
            MetricArg::Ordinal => AlphaMetric::Ordinal,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ResponseArg {
    /// Response = consensus hard labels; angle covariate = rater classes.
    Bayesian,
    /// Response = thresholded pose angles; angle covariate = degrees / 30.
    Pose3d,
}

#[derive(Subcommand)]
enum Command {
    /// Compute limb-pair symmetry angles from a keypoints file.
    Angles {
        /// Keypoints file (JSON or CSV).
        #[arg(long)]
        keypoints: PathBuf,
        /// Coordinate dimension of the file.
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=3))]
        dim: u8,
        /// Output CSV: image_id,limb,angle_deg,valid.
        #[arg(long)]
        out: PathBuf,
        /// Threshold in degrees; appends a symmetry column to the output.
        #[arg(long, value_name = "DEG")]
        threshold: Option<f64>,
        /// Also write binned angle counts to this CSV.
        #[arg(long, value_name = "CSV")]
        hist: Option<PathBuf>,
        /// Histogram bin width in degrees.
        #[arg(long, default_value_t = 30.0, value_name = "DEG")]
        bin_deg: f64,
    },

    /// Fuse per-rater labels into consensus posteriors by EM.
    Aggregate {
        /// Ratings CSV: rater_id,image_id,limb,symmetry,angle_class.
        #[arg(long)]
        ratings: PathBuf,
        /// Which label column to aggregate.
        #[arg(long, value_enum)]
        label: LabelKind,
        /// Seed for the random prior draw (unused when priors are fixed).
        #[arg(long)]
        seed: u64,
        /// Fixed Beta prior on sensitivity, as "a,b".
        #[arg(long, value_name = "A,B")]
        prior_sens: Option<String>,
        /// Fixed Beta prior on specificity, as "a,b".
        #[arg(long, value_name = "A,B")]
        prior_spec: Option<String>,
        /// Fixed Beta prior on prevalence, as "a,b".
        #[arg(long, value_name = "A,B")]
        prior_prev: Option<String>,
        /// Consensus CSV: image_id,limb,posterior,hard_label (binary) or
        /// image_id,limb,p0,p1,p2,hard_class (ordinal).
        #[arg(long)]
        out: PathBuf,
        /// Companion per-rater diagnostics CSV (symmetry label only).
        #[arg(long, value_name = "CSV")]
        rater_report: Option<PathBuf>,
    },

    /// Inter-rater reliability statistics, optionally with extra sources.
    Agreement {
        /// Ratings CSV.
        #[arg(long)]
        ratings: PathBuf,
        /// Assessment CSVs to include as additional label sources; each
        /// file's stem names its source.
        #[arg(long = "assessments", value_name = "CSV")]
        assessments: Vec<PathBuf>,
        /// Distance metric for the angle-class alpha.
        #[arg(long, value_enum, default_value_t = MetricArg::Nominal)]
        angle_metric: MetricArg,
        /// Agreement report JSON.
        #[arg(long)]
        out: PathBuf,
    },

    /// Relate measured angles to consensus labels: logistic fit, held-out
    /// ROC/AUC, and a kappa-maximizing threshold sweep.
    Calibrate {
        /// Angles CSV (from `angles`).
        #[arg(long)]
        angles: PathBuf,
        /// Binary consensus CSV (from `aggregate --label symmetry`).
        #[arg(long)]
        consensus: PathBuf,
        /// Seed for the train/test split.
        #[arg(long)]
        seed: u64,
        /// Calibration report JSON.
        #[arg(long)]
        out: PathBuf,
        /// Also write the held-out ROC points to this CSV.
        #[arg(long, value_name = "CSV")]
        roc_csv: Option<PathBuf>,
        /// Also write the kappa sweep curve to this CSV.
        #[arg(long, value_name = "CSV")]
        kappa_csv: Option<PathBuf>,
        /// Threshold grid in degrees, "lo,hi,step".
        #[arg(long, value_name = "LO,HI,STEP")]
        grid: Option<String>,
        /// L2 penalty on the logistic fit.
        #[arg(long, default_value_t = 1e-6)]
        ridge: f64,
        /// Also calibrate each limb pair separately.
        #[arg(long)]
        per_limb: bool,
    },

    /// Label skeletons symmetric/asymmetric at a decision threshold.
    Classify {
        /// Keypoints file (JSON or CSV); dimension is auto-detected.
        #[arg(long)]
        keypoints: PathBuf,
        /// Decision threshold: degrees, or a calibration JSON whose
        /// theta_star is used.
        #[arg(long, value_name = "DEG|JSON")]
        theta: String,
        /// Assessments CSV: image_id,limb,angle_deg,symmetry.
        #[arg(long)]
        out: PathBuf,
    },

    /// Logistic factor-importance analysis of symmetry labels.
    Factors {
        /// Binary consensus CSV; response labels for --response bayesian.
        #[arg(long)]
        consensus: Option<PathBuf>,
        /// Ratings CSV; angle covariate for --response bayesian.
        #[arg(long)]
        ratings: Option<PathBuf>,
        /// Angles CSV; response and angle covariate for --response pose3d.
        #[arg(long)]
        angles: Option<PathBuf>,
        /// Occlusion CSV: image_id,limb,occluded.
        #[arg(long)]
        occlusion: Option<PathBuf>,
        /// Keypoints file whose postures label the images.
        #[arg(long)]
        postures: PathBuf,
        /// Which response variable to model.
        #[arg(long, value_enum)]
        response: ResponseArg,
        /// Decision threshold for --response pose3d: degrees or a
        /// calibration JSON.
        #[arg(long, value_name = "DEG|JSON")]
        theta: Option<String>,
        /// One angle-covariate row per rater instead of the class mean.
        #[arg(long)]
        per_rater: bool,
        /// L2 penalty on the logistic fits.
        #[arg(long, default_value_t = 1e-6)]
        ridge: f64,
        /// Factor report JSON.
        #[arg(long)]
        out: PathBuf,
    },

    /// Generate skeletons with known angles and simulated raters.
    Simulate {
        /// Generator settings JSON.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_name = "FILE")]
        out_keypoints: PathBuf,
        #[arg(long, value_name = "CSV")]
        out_ratings: PathBuf,
        #[arg(long, value_name = "CSV")]
        out_truth: PathBuf,
        #[arg(long, value_name = "CSV")]
        out_occlusions: Option<PathBuf>,
    },

    /// Run the full pipeline from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Directory the artifact bundle is written into.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Stage { .. } => 3,
                _ => 2,
            })
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Angles { keypoints, dim, out, threshold, hist, bin_deg } => {
            cmd_angles(&keypoints, dim, &out, threshold, hist.as_deref(), bin_deg)
        }
        Command::Aggregate {
            ratings,
            label,
            seed,
            prior_sens,
            prior_spec,
            prior_prev,
            out,
            rater_report,
        } => cmd_aggregate(
            &ratings,
            label,
            seed,
            prior_sens.as_deref(),
            prior_spec.as_deref(),
            prior_prev.as_deref(),
            &out,
            rater_report.as_deref(),
        ),
        Command::Agreement { ratings, assessments, angle_metric, out } => {
            cmd_agreement(&ratings, &assessments, angle_metric.into(), &out)
        }
        Command::Calibrate {
            angles,
            consensus,
            seed,
            out,
            roc_csv,
            kappa_csv,
            grid,
            ridge,
            per_limb,
        } => cmd_calibrate(
            &angles,
            &consensus,
            seed,
            &out,
            roc_csv.as_deref(),
            kappa_csv.as_deref(),
            grid.as_deref(),
            ridge,
            per_limb,
        ),
        Command::Classify { keypoints, theta, out } => cmd_classify(&keypoints, &theta, &out),
        Command::Factors {
            consensus,
            ratings,
            angles,
            occlusion,
            postures,
            response,
            theta,
            per_rater,
            ridge,
            out,
        } => cmd_factors(
            consensus.as_deref(),
            ratings.as_deref(),
            angles.as_deref(),
            occlusion.as_deref(),
            &postures,
            response,
            theta.as_deref(),
            per_rater,
            ridge,
            &out,
        ),
        Command::Simulate { spec, out_keypoints, out_ratings, out_truth, out_occlusions } => {
            cmd_simulate(&spec, &out_keypoints, &out_ratings, &out_truth, out_occlusions.as_deref())
        }
        Command::Run { config, out_dir } => cmd_run(&config, &out_dir),
    }
}

/// Angle profiles in image-id order, so outputs are input-order invariant.
fn sorted_profiles(skeletons: &[Skeleton]) -> Vec<AngleProfile> {
    let mut profiles: Vec<AngleProfile> = skeletons.iter().map(angle_profile).collect();
    profiles.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    profiles
}

fn check_threshold(theta: f64) -> Result<()> {
    if theta > 0.0 && theta < 180.0 {
        Ok(())
    } else {
        Err(Error::validation(format!("threshold must lie in (0, 180) degrees, got {theta}")))
    }
}

fn write_json_report<T: serde::Serialize>(path: &Path, report: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_angles(
    keypoints: &Path,
    dim: u8,
    out: &Path,
    threshold: Option<f64>,
    hist: Option<&Path>,
    bin_deg: f64,
) -> Result<()> {
    let skeletons = load_keypoints(keypoints, dim)?;
    let profiles = sorted_profiles(&skeletons);
    match threshold {
        Some(theta) => {
            check_threshold(theta)?;
            tables::write_angles_thresholded(out, &profiles, theta, None)?;
        }
        None => tables::write_angles(out, &profiles, None)?,
    }
    if let Some(hist_path) = hist {
        if !(bin_deg > 0.0 && bin_deg <= 180.0) {
            return Err(Error::validation(format!(
                "bin_deg must lie in (0, 180], got {bin_deg}"
            )));
        }
        tables::write_histogram(hist_path, &angle_histogram(&profiles, bin_deg), None)?;
    }
    Ok(())
}

fn parse_beta(flag: &str, raw: &str) -> Result<BetaPrior> {
    let parts: Vec<&str> = raw.split(',').collect();
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::validation(format!("--{flag}: bad number `{s}` in `{raw}`")))
    };
    match parts.as_slice() {
        [a, b] => BetaPrior::new(parse(a)?, parse(b)?),
        _ => Err(Error::validation(format!("--{flag} expects \"a,b\", got `{raw}`"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_aggregate(
    ratings: &Path,
    label: LabelKind,
    seed: u64,
    prior_sens: Option<&str>,
    prior_spec: Option<&str>,
    prior_prev: Option<&str>,
    out: &Path,
    rater_report_path: Option<&Path>,
) -> Result<()> {
    let table = load_ratings(ratings)?;
    let mut config = EmConfig::seeded(seed);
    if prior_sens.is_some() || prior_spec.is_some() || prior_prev.is_some() {
        let defaults = PriorSet::default();
        config.priors = PriorSpec::Fixed(PriorSet {
            sensitivity: prior_sens
                .map(|raw| parse_beta("prior-sens", raw))
                .transpose()?
                .unwrap_or(defaults.sensitivity),
            specificity: prior_spec
                .map(|raw| parse_beta("prior-spec", raw))
                .transpose()?
                .unwrap_or(defaults.specificity),
            prevalence: prior_prev
                .map(|raw| parse_beta("prior-prev", raw))
                .transpose()?
                .unwrap_or(defaults.prevalence),
        });
    }
    match label {
        LabelKind::Symmetry => {
            let matrix = table.symmetry_matrix();
            let aggregate = em_binary(&matrix, &config)?;
            tables::write_binary_consensus(out, &aggregate, None)?;
            if let Some(path) = rater_report_path {
                tables::write_rater_report(path, &rater_report(&matrix, &aggregate), None)?;
            }
        }
        LabelKind::Angle => {
            if rater_report_path.is_some() {
                return Err(Error::validation(
                    "--rater-report requires --label symmetry".to_string(),
                ));
            }
            let aggregate = em_ordinal(&table.angle_class_matrix(), &config)?;
            tables::write_ordinal_consensus(out, &aggregate, None)?;
        }
    }
    Ok(())
}

fn source_name(path: &Path) -> Result<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| {
            Error::validation(format!("cannot derive a source name from `{}`", path.display()))
        })
}

fn cmd_agreement(
    ratings: &Path,
    assessments: &[PathBuf],
    metric: AlphaMetric,
    out: &Path,
) -> Result<()> {
    let table = load_ratings(ratings)?;
    let mut sources = Vec::new();
    for path in assessments {
        let mut source = SourceLabels::new(source_name(path)?);
        for row in tables::read_assessments(path)? {
            if let Some(a) = row.angle_deg {
                if !(0.0..=180.0).contains(&a) {
                    return Err(Error::validation(format!(
                        "{}: angle {a} for {} is outside [0, 180]",
                        path.display(),
                        row.key
                    )));
                }
            }
            source.set(
                &row.key.image_id,
                row.key.limb,
                row.symmetry,
                row.angle_deg.map(angle_class_of),
            );
        }
        sources.push(source);
    }
    let report = agreement_report(&table, &sources, metric)?;
    write_json_report(out, &report)
}

fn parse_grid(raw: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = raw.split(',').collect();
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::validation(format!("--grid: bad number `{s}` in `{raw}`")))
    };
    match parts.as_slice() {
        [lo, hi, step] => {
            ThetaGridConfig { lo: parse(lo)?, hi: parse(hi)?, step: parse(step)? }.build()
        }
        _ => Err(Error::validation(format!("--grid expects \"lo,hi,step\", got `{raw}`"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_calibrate(
    angles: &Path,
    consensus: &Path,
    seed: u64,
    out: &Path,
    roc_csv: Option<&Path>,
    kappa_csv: Option<&Path>,
    grid: Option<&str>,
    ridge: f64,
    per_limb: bool,
) -> Result<()> {
    let profiles = tables::read_angles(angles)?;
    let reference: BTreeMap<ItemKey, u8> = tables::read_binary_consensus(consensus)?
        .into_iter()
        .map(|(key, (_, hard))| (key, hard))
        .collect();
    let grid = match grid {
        Some(raw) => parse_grid(raw)?,
        None => default_theta_grid(),
    };
    let report = calibrate(&profiles, &reference, &grid, ridge, seed, per_limb)?;
    write_json_report(out, &report)?;
    if let Some(path) = roc_csv {
        tables::write_roc(path, &report.roc_points, None)?;
    }
    if let Some(path) = kappa_csv {
        tables::write_kappa_curve(path, &report.kappa_curve, None)?;
    }
    Ok(())
}

/// Threshold argument: a plain number of degrees, or a calibration JSON
/// whose theta_star field (possibly nested under "report") is used.
fn resolve_theta(raw: &str) -> Result<f64> {
    let theta = match raw.parse::<f64>() {
        Ok(v) => v,
        Err(_) => {
            let path = Path::new(raw);
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            let value: serde_json::Value = serde_json::from_slice(&bytes)
                .map_err(|e| Error::parse(path, "calibration json", e.to_string()))?;
            value
                .get("report")
                .and_then(|r| r.get("theta_star"))
                .or_else(|| value.get("theta_star"))
                .and_then(serde_json::Value::as_f64)
                .ok_or_else(|| {
                    Error::parse(path, "calibration json", "no theta_star field".to_string())
                })?
        }
    };
    check_threshold(theta)?;
    Ok(theta)
}

fn cmd_classify(keypoints: &Path, theta: &str, out: &Path) -> Result<()> {
    let theta = resolve_theta(theta)?;
    let skeletons = load_keypoints_any(keypoints)?;
    let profiles = sorted_profiles(&skeletons);
    tables::write_assessments(out, &profiles, theta, None)
}

#[allow(clippy::too_many_arguments)]
fn cmd_factors(
    consensus: Option<&Path>,
    ratings: Option<&Path>,
    angles: Option<&Path>,
    occlusion: Option<&Path>,
    postures_path: &Path,
    response: ResponseArg,
    theta: Option<&str>,
    per_rater: bool,
    ridge: f64,
    out: &Path,
) -> Result<()> {
    let postures: BTreeMap<String, Posture> = load_keypoints_any(postures_path)?
        .into_iter()
        .map(|s| (s.image_id, s.posture))
        .collect();
    let occlusion = occlusion.map(load_occlusions).transpose()?;

    let report = match response {
        ResponseArg::Bayesian => {
            let consensus = consensus.ok_or_else(|| {
                Error::validation("--response bayesian requires --consensus".to_string())
            })?;
            let ratings = ratings.ok_or_else(|| {
                Error::validation("--response bayesian requires --ratings".to_string())
            })?;
            let response_map: BTreeMap<ItemKey, u8> = tables::read_binary_consensus(consensus)?
                .into_iter()
                .map(|(key, (_, hard))| (key, hard))
                .collect();
            let table = load_ratings(ratings)?;
            let (cells, angle_source) = if per_rater {
                let mut cells = Vec::new();
                for r in 0..table.n_raters() {
                    let mut rater_angles = BTreeMap::new();
                    for (i, item) in table.items().iter().enumerate() {
                        if let Some(c) = table.angle_class_label(r, i) {
                            rater_angles.insert(item.clone(), f64::from(c));
                        }
                    }
                    cells.extend(build_cells(
                        &response_map,
                        &postures,
                        occlusion.as_ref(),
                        &rater_angles,
                    ));
                }
                (cells, "per_rater_class")
            } else {
                let cells = build_cells(
                    &response_map,
                    &postures,
                    occlusion.as_ref(),
                    &table.mean_angle_class(),
                );
                (cells, "mean_rater_class")
            };
            factor_report(&cells, "bayesian", angle_source, ridge)?
        }
        ResponseArg::Pose3d => {
            let angles = angles.ok_or_else(|| {
                Error::validation("--response pose3d requires --angles".to_string())
            })?;
            let theta = theta.ok_or_else(|| {
                Error::validation("--response pose3d requires --theta".to_string())
            })?;
            let theta = resolve_theta(theta)?;
            let profiles = tables::read_angles(angles)?;
            let mut response_map = BTreeMap::new();
            let mut angle_map = BTreeMap::new();
            for profile in &profiles {
                for limb in symmcal_core::skeleton::LimbPair::ALL {
                    if let Some(a) = profile.angle(limb) {
                        let key = ItemKey::new(profile.image_id.clone(), limb);
                        response_map.insert(key.clone(), u8::from(a >= theta));
                        angle_map.insert(key, a / 30.0);
                    }
                }
            }
            let cells = build_cells(&response_map, &postures, occlusion.as_ref(), &angle_map);
            factor_report(&cells, "pose3d", "pose_degrees_over_30", ridge)?
        }
    };
    write_json_report(out, &report)
}

fn cmd_simulate(
    spec_path: &Path,
    out_keypoints: &Path,
    out_ratings: &Path,
    out_truth: &Path,
    out_occlusions: Option<&Path>,
) -> Result<()> {
    let raw = std::fs::read(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec: SynthSpec = serde_json::from_slice(&raw)
        .map_err(|e| Error::parse(spec_path, "spec", e.to_string()))?;
    let batch = generate(&spec)?;
    save_keypoints(out_keypoints, &batch.skeletons)?;
    save_ratings(out_ratings, &batch.ratings)?;
    let stamp = Stamp { config_hash: format!("{:x}", Sha256::digest(&raw)), seed: spec.seed };
    tables::write_truth(out_truth, &batch.truth, Some(&stamp))?;
    if let Some(path) = out_occlusions {
        save_occlusions(path, &batch.occlusions)?;
    }
    Ok(())
}

fn cmd_run(config: &Path, out_dir: &Path) -> Result<()> {
    let outcome = run_pipeline(config, out_dir)?;
    for stage in &outcome.summary.stages {
        println!("{}: {} ({})", stage.name, stage.status, stage.detail);
    }
    for notice in &outcome.summary.notices {
        println!("notice: {notice}");
    }
    println!(
        "{} artifacts in {}",
        outcome.summary.outputs.len(),
        outcome.out_dir.display()
    );
    Ok(())
}
