//! One-config orchestration of the full analysis.
//!
//! A JSON config names the keypoint sources and rating/occlusion files and
//! pins every knob (seed, priors, grids, ridge). Stages run in order:
//!
//! 1. angles: per-source angle profiles, CSV + histogram;
//! 2. aggregation: EM consensus (binary + ordinal) and the rater report;
//! 3. calibration: per-source regression, held-out ROC/AUC, kappa sweep,
//!    and thresholded assessments at the winning angle;
//! 4. agreement: rater statistics plus per-source diagnostics, where each
//!    pose source answers at its own calibrated threshold;
//! 5. factors: importance regressions for the consensus response and for
//!    each pose source's own assessments.
//!
//! Calibration runs before agreement because the agreement diagnostics need
//! the calibrated thresholds. Without a ratings file, stages 2..5 are
//! skipped with a notice and the run still succeeds.
//!
//! Determinism: all randomness flows from the master seed through named
//! sub-seeds (first eight bytes of sha256(seed || name)); every artifact is
//! stamped with the config hash and master seed; reruns are byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::{
    em_binary, em_ordinal, majority_hard, rater_report, BinaryAggregate, EmConfig,
    OrdinalAggregate, PriorSet, PriorSpec, RaterPriors,
};
use crate::agreement::{agreement_report, AgreementReport, AlphaMetric, SourceLabels};
use crate::calibration::{calibrate, CalibrationReport};
use crate::error::{Error, Result};
use crate::factors::{build_cells, factor_report, FactorReport};
use crate::geometry::{angle_class_of, angle_histogram, angle_profile, AngleProfile};
use crate::skeleton::{
    load_keypoints, load_keypoints_any, load_occlusions, load_ratings, ItemKey, LimbPair,
    OcclusionTable, Posture, RatingTable, Skeleton,
};
use crate::tables::{self, Stamp};

fn default_ridge() -> f64 {
    1e-6
}

fn default_hist_bin() -> f64 {
    30.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum PoseSourceConfig {
    Path(PathBuf),
    Detailed {
        path: PathBuf,
        #[serde(default)]
        dim: Option<u8>,
    },
}

impl PoseSourceConfig {
    fn path(&self) -> &Path {
        match self {
            PoseSourceConfig::Path(p) => p,
            PoseSourceConfig::Detailed { path, .. } => path,
        }
    }

    fn dim(&self) -> Option<u8> {
        match self {
            PoseSourceConfig::Path(_) => None,
            PoseSourceConfig::Detailed { dim, .. } => *dim,
        }
    }
}

/// Beta priors for EM: the string "random" or an explicit prior set.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum PriorConfig {
    Keyword(String),
    Fixed(PriorSet),
}

impl Default for PriorConfig {
    fn default() -> PriorConfig {
        PriorConfig::Keyword("random".to_string())
    }
}

impl PriorConfig {
    fn to_spec(&self) -> Result<PriorSpec> {
        match self {
            PriorConfig::Fixed(set) => Ok(PriorSpec::Fixed(*set)),
            PriorConfig::Keyword(k) if k == "random" => Ok(PriorSpec::Random),
            PriorConfig::Keyword(k) => Err(Error::validation(format!(
                "priors must be \"random\" or an explicit prior object, got \"{k}\""
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaGridConfig {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for ThetaGridConfig {
    fn default() -> ThetaGridConfig {
        ThetaGridConfig { lo: 1.0, hi: 90.0, step: 1.0 }
    }
}

impl ThetaGridConfig {
    pub fn build(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.lo > 0.0 && self.hi < 180.0 && self.lo <= self.hi) {
            return Err(Error::validation(format!(
                "theta grid must satisfy 0 < lo <= hi < 180 with step > 0, got \
                 lo={} hi={} step={}",
                self.lo, self.hi, self.step
            )));
        }
        let mut grid = Vec::new();
        let mut k = 0u32;
        loop {
            let theta = self.lo + f64::from(k) * self.step;
            if theta > self.hi + 1e-9 {
                break;
            }
            grid.push(theta);
            k += 1;
        }
        Ok(grid)
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmSettings {
    #[serde(default = "EmSettings::default_tol")]
    pub tol: f64,
    #[serde(default = "EmSettings::default_max_iter")]
    pub max_iter: usize,
}

impl EmSettings {
    fn default_tol() -> f64 {
        1e-6
    }

    fn default_max_iter() -> usize {
        500
    }
}

impl Default for EmSettings {
    fn default() -> EmSettings {
        EmSettings { tol: Self::default_tol(), max_iter: Self::default_max_iter() }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub pose_sources: BTreeMap<String, PoseSourceConfig>,
    #[serde(default)]
    pub ratings: Option<PathBuf>,
    #[serde(default)]
    pub occlusion: Option<PathBuf>,
    #[serde(default)]
    pub theta_grid: ThetaGridConfig,
    #[serde(default)]
    pub priors: PriorConfig,
    #[serde(default)]
    pub rater_priors: BTreeMap<String, RaterPriors>,
    #[serde(default)]
    pub em: EmSettings,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_hist_bin")]
    pub hist_bin_deg: f64,
    #[serde(default)]
    pub per_limb: bool,
    #[serde(default)]
    pub per_rater_factors: bool,
    #[serde(default)]
    pub angle_alpha_metric: Option<AlphaMetric>,
}

/// Names reserved for derived sources inside reports.
const RESERVED_SOURCE_NAMES: [&str; 2] = ["voted", "bayesian"];

impl PipelineConfig {
    fn validate(&self) -> Result<()> {
        if self.pose_sources.is_empty() {
            return Err(Error::validation("config needs at least one pose source".to_string()));
        }
        for name in self.pose_sources.keys() {
            if name.is_empty() || name.contains(['/', '\\']) || name.contains(char::is_whitespace)
            {
                return Err(Error::validation(format!(
                    "source name `{name}` must be a nonempty token without separators"
                )));
            }
            if RESERVED_SOURCE_NAMES.contains(&name.as_str()) {
                return Err(Error::validation(format!("source name `{name}` is reserved")));
            }
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::validation(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        if !(self.hist_bin_deg > 0.0 && self.hist_bin_deg <= 180.0) {
            return Err(Error::validation(format!(
                "hist_bin_deg must lie in (0, 180], got {}",
                self.hist_bin_deg
            )));
        }
        self.priors.to_spec()?;
        self.theta_grid.build()?;
        Ok(())
    }
}

/// Named sub-seed: first eight little-endian bytes of sha256(seed || name).
pub fn sub_seed(master: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is long enough"))
}

#[derive(Clone, Debug, Serialize)]
pub struct StageStatus {
    pub name: String,
    pub status: String,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SourceSummary {
    pub n_images: usize,
    pub n_valid_cells: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_at_theta_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AggregationSummary {
    pub n_items: usize,
    pub n_raters: usize,
    pub prevalence: f64,
    pub iterations: usize,
    pub converged: bool,
    pub dropped_raters: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AgreementSummary {
    pub alpha_symmetry: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_angle_class: Option<f64>,
    pub mean_rater_kappa_symmetry: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FactorSummary {
    pub r2_cox_snell: f64,
    pub r2_nagelkerke: f64,
    pub accuracy: f64,
    pub delta_r2_cs_angle: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub sub_seeds: BTreeMap<String, u64>,
    pub stages: Vec<StageStatus>,
    pub outputs: Vec<String>,
    pub sources: BTreeMap<String, SourceSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<AggregationSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agreement: Option<AgreementSummary>,
    pub factors: BTreeMap<String, FactorSummary>,
    pub notices: Vec<String>,
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub summary: Summary,
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct Provenance<'a> {
    config_hash: &'a str,
    seed: u64,
}

#[derive(Serialize)]
struct StampedReport<'a, T: Serialize> {
    provenance: Provenance<'a>,
    report: &'a T,
}

fn write_json<T: Serialize>(path: &Path, stamp: &Stamp, report: &T) -> Result<()> {
    let wrapped = StampedReport {
        provenance: Provenance { config_hash: &stamp.config_hash, seed: stamp.seed },
        report,
    };
    let mut text = serde_json::to_string_pretty(&wrapped)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

struct LoadedSource {
    profiles: Vec<AngleProfile>,
    postures: BTreeMap<String, Posture>,
}

fn load_source(dir: &Path, config: &PoseSourceConfig) -> Result<LoadedSource> {
    let path = resolve(dir, config.path());
    let skeletons: Vec<Skeleton> = match config.dim() {
        Some(dim) => load_keypoints(&path, dim)?,
        None => load_keypoints_any(&path)?,
    };
    let mut postures = BTreeMap::new();
    let mut profiles = Vec::with_capacity(skeletons.len());
    for s in &skeletons {
        profiles.push(angle_profile(s));
        postures.insert(s.image_id.clone(), s.posture);
    }
    profiles.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(LoadedSource { profiles, postures })
}

/// Majority angle class per item, ties toward the lower class.
fn voted_classes(ratings: &RatingTable) -> BTreeMap<ItemKey, u8> {
    let mut map = BTreeMap::new();
    for (i, item) in ratings.items().iter().enumerate() {
        let mut counts = [0usize; 3];
        for r in 0..ratings.n_raters() {
            if let Some(c) = ratings.angle_class_label(r, i) {
                counts[c as usize] += 1;
            }
        }
        if counts.iter().sum::<usize>() == 0 {
            continue;
        }
        let mut best = 0;
        for c in 1..3 {
            if counts[c] > counts[best] {
                best = c;
            }
        }
        map.insert(item.clone(), best as u8);
    }
    map
}

fn source_labels_from_profiles(
    name: &str,
    profiles: &[AngleProfile],
    theta_star: f64,
) -> SourceLabels {
    let mut source = SourceLabels::new(name);
    for profile in profiles {
        for limb in LimbPair::ALL {
            if let Some(angle) = profile.angle(limb) {
                source.set(
                    &profile.image_id,
                    limb,
                    Some(u8::from(angle >= theta_star)),
                    Some(angle_class_of(angle)),
                );
            }
        }
    }
    source
}

pub fn run_pipeline(config_path: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<PipelineOutcome> {
    let config_path = config_path.as_ref();
    let out_dir = out_dir.as_ref();
    let raw = std::fs::read(config_path).map_err(|e| Error::io(config_path, e))?;
    let config: PipelineConfig = serde_json::from_slice(&raw)
        .map_err(|e| Error::parse(config_path, "config", e.to_string()))?;
    config.validate()?;
    let config_dir = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let config_hash = format!("{:x}", Sha256::digest(&raw));
    let stamp = Stamp { config_hash: config_hash.clone(), seed: config.seed };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut summary = Summary {
        config_hash,
        seed: config.seed,
        sub_seeds: BTreeMap::new(),
        stages: Vec::new(),
        outputs: Vec::new(),
        sources: BTreeMap::new(),
        aggregation: None,
        agreement: None,
        factors: BTreeMap::new(),
        notices: Vec::new(),
    };
    let grid = config.theta_grid.build()?;

    // Stage 1: angles and histograms for every pose source.
    let mut sources: BTreeMap<String, LoadedSource> = BTreeMap::new();
    for (name, source_config) in &config.pose_sources {
        let loaded = (|| -> Result<LoadedSource> {
            let loaded = load_source(&config_dir, source_config)?;
            let angles_file = format!("{name}_angles.csv");
            tables::write_angles(out_dir.join(&angles_file), &loaded.profiles, Some(&stamp))?;
            let hist = angle_histogram(&loaded.profiles, config.hist_bin_deg);
            let hist_file = format!("{name}_histogram.csv");
            tables::write_histogram(out_dir.join(&hist_file), &hist, Some(&stamp))?;
            summary.outputs.push(angles_file);
            summary.outputs.push(hist_file);
            Ok(loaded)
        })()
        .map_err(|e| e.in_stage("angles"))?;
        let n_valid = loaded
            .profiles
            .iter()
            .flat_map(|p| LimbPair::ALL.map(|l| p.angle(l)))
            .filter(Option::is_some)
            .count();
        summary.sources.insert(
            name.clone(),
            SourceSummary {
                n_images: loaded.profiles.len(),
                n_valid_cells: n_valid,
                theta_star: None,
                kappa_at_theta_star: None,
                auc: None,
            },
        );
        sources.insert(name.clone(), loaded);
    }
    summary.stages.push(StageStatus {
        name: "angles".to_string(),
        status: "done".to_string(),
        detail: format!("{} source(s)", sources.len()),
    });

    // Merged postures for the factor stage; first source in sorted order
    // wins, conflicts are only noted.
    let mut postures: BTreeMap<String, Posture> = BTreeMap::new();
    for (name, loaded) in &sources {
        for (image, &posture) in &loaded.postures {
            match postures.get(image) {
                None => {
                    postures.insert(image.clone(), posture);
                }
                Some(&existing) if existing != posture => {
                    summary.notices.push(format!(
                        "posture conflict for {image}: keeping {existing}, {name} says {posture}"
                    ));
                }
                _ => {}
            }
        }
    }

    let Some(ratings_path) = &config.ratings else {
        for stage in ["aggregation", "calibration", "agreement", "factors"] {
            summary.stages.push(StageStatus {
                name: stage.to_string(),
                status: "skipped".to_string(),
                detail: "no ratings file configured".to_string(),
            });
        }
        summary.notices.push("ratings absent: angle extraction only".to_string());
        summary.outputs.sort();
        write_summary(out_dir, &stamp, &mut summary)?;
        return Ok(PipelineOutcome { summary, out_dir: out_dir.to_path_buf() });
    };

    // Stage 2: consensus aggregation.
    let (ratings, occlusion, binary, ordinal) = (|| -> Result<(
        RatingTable,
        Option<OcclusionTable>,
        BinaryAggregate,
        OrdinalAggregate,
    )> {
        let ratings = load_ratings(resolve(&config_dir, ratings_path))?;
        let occlusion = match &config.occlusion {
            Some(path) => Some(load_occlusions(resolve(&config_dir, path))?),
            None => None,
        };
        let prior_spec = config.priors.to_spec()?;
        let em_seed = sub_seed(config.seed, "em_binary");
        summary.sub_seeds.insert("em_binary".to_string(), em_seed);
        let em_config = EmConfig {
            priors: prior_spec,
            rater_priors: config.rater_priors.clone(),
            tol: config.em.tol,
            max_iter: config.em.max_iter,
            seed: em_seed,
        };
        let binary = em_binary(&ratings.symmetry_matrix(), &em_config)?;
        tables::write_binary_consensus(out_dir.join("consensus.csv"), &binary, Some(&stamp))?;

        let ordinal_seed = sub_seed(config.seed, "em_ordinal");
        summary.sub_seeds.insert("em_ordinal".to_string(), ordinal_seed);
        let ordinal_config = EmConfig { seed: ordinal_seed, ..em_config.clone() };
        let ordinal = em_ordinal(&ratings.angle_class_matrix(), &ordinal_config)?;
        tables::write_ordinal_consensus(
            out_dir.join("ordinal_consensus.csv"),
            &ordinal,
            Some(&stamp),
        )?;

        let report = rater_report(&ratings.symmetry_matrix(), &binary);
        tables::write_rater_report(out_dir.join("rater_report.csv"), &report, Some(&stamp))?;
        Ok((ratings, occlusion, binary, ordinal))
    })()
    .map_err(|e| e.in_stage("aggregation"))?;
    let _ = &ordinal;
    summary.outputs.extend(
        ["consensus.csv", "ordinal_consensus.csv", "rater_report.csv"].map(String::from),
    );
    summary.aggregation = Some(AggregationSummary {
        n_items: binary.items.len(),
        n_raters: binary.profiles.len(),
        prevalence: binary.prevalence,
        iterations: binary.iterations,
        converged: binary.converged,
        dropped_raters: binary.dropped_raters.clone(),
    });
    summary.stages.push(StageStatus {
        name: "aggregation".to_string(),
        status: "done".to_string(),
        detail: format!(
            "{} items, {} raters",
            binary.items.len(),
            binary.profiles.len()
        ),
    });
    let consensus = binary.hard_label_map();

    // Stage 3: per-source calibration against the consensus.
    let mut calibrations: BTreeMap<String, CalibrationReport> = BTreeMap::new();
    for (name, loaded) in &sources {
        let report = (|| -> Result<CalibrationReport> {
            let split_name = format!("split_{name}");
            let split_seed = sub_seed(config.seed, &split_name);
            summary.sub_seeds.insert(split_name, split_seed);
            let report = calibrate(
                &loaded.profiles,
                &consensus,
                &grid,
                config.ridge,
                split_seed,
                config.per_limb,
            )?;
            write_json(&out_dir.join(format!("{name}_calibration.json")), &stamp, &report)?;
            tables::write_roc(
                out_dir.join(format!("{name}_roc.csv")),
                &report.roc_points,
                Some(&stamp),
            )?;
            tables::write_kappa_curve(
                out_dir.join(format!("{name}_kappa_curve.csv")),
                &report.kappa_curve,
                Some(&stamp),
            )?;
            tables::write_assessments(
                out_dir.join(format!("{name}_assessments.csv")),
                &loaded.profiles,
                report.theta_star,
                Some(&stamp),
            )?;
            Ok(report)
        })()
        .map_err(|e| e.in_stage("calibration"))?;
        for suffix in ["calibration.json", "roc.csv", "kappa_curve.csv", "assessments.csv"] {
            summary.outputs.push(format!("{name}_{suffix}"));
        }
        let entry = summary.sources.get_mut(name).expect("source summarized in stage 1");
        entry.theta_star = Some(report.theta_star);
        entry.kappa_at_theta_star = Some(report.kappa_at_theta_star);
        entry.auc = Some(report.auc);
        calibrations.insert(name.clone(), report);
    }
    summary.stages.push(StageStatus {
        name: "calibration".to_string(),
        status: "done".to_string(),
        detail: format!("{} source(s) calibrated", calibrations.len()),
    });

    // Stage 4: agreement report with voted and pose-based sources.
    let agreement: AgreementReport = (|| -> Result<AgreementReport> {
        let mut extra = Vec::new();
        let symmetry_matrix = ratings.symmetry_matrix();
        let voted_symmetry = majority_hard(&symmetry_matrix)?;
        let voted_class = voted_classes(&ratings);
        let mut voted = SourceLabels::new("voted");
        for (i, item) in ratings.items().iter().enumerate() {
            voted.set(
                &item.image_id,
                item.limb,
                Some(voted_symmetry[i]),
                voted_class.get(item).copied(),
            );
        }
        extra.push(voted);
        for (name, loaded) in &sources {
            let theta_star = calibrations[name].theta_star;
            extra.push(source_labels_from_profiles(name, &loaded.profiles, theta_star));
        }
        let metric = config.angle_alpha_metric.unwrap_or(AlphaMetric::Nominal);
        let report = agreement_report(&ratings, &extra, metric)?;
        write_json(&out_dir.join("agreement.json"), &stamp, &report)?;
        Ok(report)
    })()
    .map_err(|e| e.in_stage("agreement"))?;
    summary.outputs.push("agreement.json".to_string());
    summary.agreement = Some(AgreementSummary {
        alpha_symmetry: agreement.symmetry.krippendorff_alpha,
        alpha_angle_class: agreement.angle_class.as_ref().map(|b| b.krippendorff_alpha),
        mean_rater_kappa_symmetry: agreement.symmetry.mean_per_rater.iter().sum::<f64>()
            / agreement.symmetry.mean_per_rater.len() as f64,
    });
    summary.stages.push(StageStatus {
        name: "agreement".to_string(),
        status: "done".to_string(),
        detail: format!("{} source(s) diagnosed", agreement.inter_limb.len()),
    });

    // Stage 5: factor importance for the consensus and per-source responses.
    let factor_reports = (|| -> Result<Vec<(String, FactorReport)>> {
        let mut reports = Vec::new();
        let angle_source = if config.per_rater_factors {
            "per_rater_class"
        } else {
            "mean_rater_class"
        };
        let bayes_cells = if config.per_rater_factors {
            let mut per_rater = Vec::new();
            for r in 0..ratings.n_raters() {
                let mut angles = BTreeMap::new();
                for (i, item) in ratings.items().iter().enumerate() {
                    if let Some(c) = ratings.angle_class_label(r, i) {
                        angles.insert(item.clone(), f64::from(c));
                    }
                }
                per_rater.extend(build_cells(&consensus, &postures, occlusion.as_ref(), &angles));
            }
            per_rater
        } else {
            build_cells(&consensus, &postures, occlusion.as_ref(), &ratings.mean_angle_class())
        };
        let bayes = factor_report(&bayes_cells, "bayesian", angle_source, config.ridge)?;
        write_json(&out_dir.join("factors_bayesian.json"), &stamp, &bayes)?;
        reports.push(("bayesian".to_string(), bayes));

        for (name, loaded) in &sources {
            let theta_star = calibrations[name].theta_star;
            let mut response = BTreeMap::new();
            let mut angles = BTreeMap::new();
            for profile in &loaded.profiles {
                for limb in LimbPair::ALL {
                    if let Some(angle) = profile.angle(limb) {
                        let key = ItemKey::new(profile.image_id.clone(), limb);
                        response.insert(key.clone(), u8::from(angle >= theta_star));
                        angles.insert(key, angle / 30.0);
                    }
                }
            }
            let cells = build_cells(&response, &postures, occlusion.as_ref(), &angles);
            let report = factor_report(&cells, name, "pose_degrees_over_30", config.ridge)?;
            write_json(&out_dir.join(format!("factors_{name}.json")), &stamp, &report)?;
            reports.push((name.clone(), report));
        }
        Ok(reports)
    })()
    .map_err(|e| e.in_stage("factors"))?;
    for (name, report) in factor_reports {
        summary.outputs.push(format!("factors_{name}.json"));
        summary.factors.insert(
            name,
            FactorSummary {
                r2_cox_snell: report.r2_cox_snell,
                r2_nagelkerke: report.r2_nagelkerke,
                accuracy: report.accuracy,
                delta_r2_cs_angle: report.delta_r2_cs["angle"],
            },
        );
    }
    summary.stages.push(StageStatus {
        name: "factors".to_string(),
        status: "done".to_string(),
        detail: format!("{} response(s)", summary.factors.len()),
    });

    summary.outputs.sort();
    write_summary(out_dir, &stamp, &mut summary)?;
    Ok(PipelineOutcome { summary, out_dir: out_dir.to_path_buf() })
}

fn write_summary(out_dir: &Path, stamp: &Stamp, summary: &mut Summary) -> Result<()> {
    summary.outputs.push("summary.json".to_string());
    summary.outputs.sort();
    let path = out_dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::io(&path, std::io::Error::other(e.to_string())))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let _ = stamp;
    Ok(())
}
