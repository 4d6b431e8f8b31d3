//! Chance-corrected agreement statistics.
//!
//! Cohen's kappa compares two label sequences with pairwise deletion of
//! missing cells; Krippendorff's alpha handles any number of raters with
//! missing cells natively through the coincidence matrix. Both are reported
//! for the symmetry (binary) and angle-class (three-level) questions, plus
//! two within-source diagnostics: the limb-by-limb agreement matrix of a
//! single labeler (elevated off-diagonals indicate a per-image bias) and the
//! internal consistency between a labeler's symmetry answers and their own
//! angle classes binarized at the first class boundary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{ItemKey, LabelMatrix, LimbPair, RatingTable};

/// Cohen's kappa over aligned label pairs. Cells where either side is
/// missing are deleted. Categories are the union of observed labels.
/// A degenerate table where both sequences are one identical constant
/// (expected agreement 1) scores 1.
pub fn cohen_kappa(pairs: &[(Option<u8>, Option<u8>)]) -> Result<f64> {
    let complete: Vec<(u8, u8)> =
        pairs.iter().filter_map(|&(a, b)| Some((a?, b?))).collect();
    if complete.is_empty() {
        return Err(Error::validation("no overlapping labels for kappa".to_string()));
    }
    let n = complete.len() as f64;
    let mut count_a: BTreeMap<u8, u64> = BTreeMap::new();
    let mut count_b: BTreeMap<u8, u64> = BTreeMap::new();
    let mut matches = 0u64;
    for &(a, b) in &complete {
        *count_a.entry(a).or_insert(0) += 1;
        *count_b.entry(b).or_insert(0) += 1;
        matches += u64::from(a == b);
    }
    // Integer accumulation keeps p_o and p_e exact for hand-sized tables.
    let p_o = matches as f64 / n;
    let cross: u64 = count_a
        .iter()
        .map(|(cat, &ca)| ca * count_b.get(cat).copied().unwrap_or(0))
        .sum();
    let p_e = cross as f64 / (n * n);
    if p_e == 1.0 {
        // Both marginals degenerate on the same category, so p_o = 1 too.
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Distance model for Krippendorff's alpha.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMetric {
    Nominal,
    Ordinal,
}

/// Krippendorff's alpha over a rater-by-item matrix with missing cells.
///
/// Each item with m >= 2 observed labels contributes its ordered label pairs
/// to the coincidence matrix with weight 1/(m-1). With marginals n_c and
/// n = sum n_c,
///
///   alpha = 1 - (n - 1) * sum_{c<k} o_ck d2_ck / sum_{c<k} n_c n_k d2_ck,
///
/// where d2 is 1 for nominal data and the squared cumulative-margin distance
/// (sum_{g=c}^{k} n_g - (n_c + n_k)/2)^2 for ordinal data. A vanishing
/// expected disagreement (every observed label identical) yields alpha = 1.
pub fn krippendorff_alpha(labels: &LabelMatrix, metric: AlphaMetric) -> Result<f64> {
    let mut coincidence: BTreeMap<(u8, u8), f64> = BTreeMap::new();
    for i in 0..labels.n_items() {
        let values: Vec<u8> =
            (0..labels.n_raters()).filter_map(|r| labels.get(r, i)).collect();
        if values.len() < 2 {
            continue;
        }
        let w = 1.0 / (values.len() as f64 - 1.0);
        for (x, &a) in values.iter().enumerate() {
            for (y, &b) in values.iter().enumerate() {
                if x != y {
                    *coincidence.entry((a, b)).or_insert(0.0) += w;
                }
            }
        }
    }
    if coincidence.is_empty() {
        return Err(Error::validation(
            "no item carries two or more labels; alpha undefined".to_string(),
        ));
    }
    let mut marginals: BTreeMap<u8, f64> = BTreeMap::new();
    for (&(a, _), &v) in &coincidence {
        *marginals.entry(a).or_insert(0.0) += v;
    }
    let n: f64 = marginals.values().sum();
    let cats: Vec<u8> = marginals.keys().copied().collect();
    let margin: Vec<f64> = cats.iter().map(|c| marginals[c]).collect();
    let delta2 = |ci: usize, ki: usize| match metric {
        AlphaMetric::Nominal => 1.0,
        AlphaMetric::Ordinal => {
            let span: f64 = margin[ci..=ki].iter().sum();
            let d = span - (margin[ci] + margin[ki]) / 2.0;
            d * d
        }
    };
    let (mut observed, mut expected) = (0.0, 0.0);
    for ci in 0..cats.len() {
        for ki in ci + 1..cats.len() {
            let d2 = delta2(ci, ki);
            let o = coincidence.get(&(cats[ci], cats[ki])).copied().unwrap_or(0.0);
            observed += o * d2;
            expected += margin[ci] * margin[ki] * d2;
        }
    }
    if expected == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}

/// Symmetric rater-by-rater kappa matrix with unit diagonal.
#[allow(clippy::needless_range_loop)]
pub fn pairwise_kappa_matrix(labels: &LabelMatrix) -> Result<Vec<Vec<f64>>> {
    let n = labels.n_raters();
    let mut matrix = vec![vec![1.0; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let pairs: Vec<(Option<u8>, Option<u8>)> =
                (0..labels.n_items()).map(|i| (labels.get(a, i), labels.get(b, i))).collect();
            let k = cohen_kappa(&pairs).map_err(|_| {
                Error::validation(format!(
                    "raters `{}` and `{}` share no labeled items",
                    labels.raters()[a],
                    labels.raters()[b]
                ))
            })?;
            matrix[a][b] = k;
            matrix[b][a] = k;
        }
    }
    Ok(matrix)
}

/// Mean of each row excluding the diagonal: each rater's average agreement
/// with the others.
pub fn mean_offdiagonal(matrix: &[Vec<f64>]) -> Vec<f64> {
    let n = matrix.len();
    matrix
        .iter()
        .enumerate()
        .map(|(a, row)| {
            row.iter().enumerate().filter(|&(b, _)| b != a).map(|(_, &v)| v).sum::<f64>()
                / (n as f64 - 1.0)
        })
        .collect()
}

/// Agreement summary for one question (symmetry or angle class).
#[derive(Clone, Debug, Serialize)]
pub struct KappaBlock {
    pub pairwise: Vec<Vec<f64>>,
    pub mean_per_rater: Vec<f64>,
    /// Mean pairwise kappa restricted to each limb's items; limbs where no
    /// rater pair overlaps are omitted.
    pub per_limb_mean: BTreeMap<LimbPair, f64>,
    pub krippendorff_alpha: f64,
    pub alpha_metric: AlphaMetric,
}

pub fn kappa_block(labels: &LabelMatrix, alpha_metric: AlphaMetric) -> Result<KappaBlock> {
    if labels.n_raters() < 2 {
        return Err(Error::validation("agreement needs at least two raters".to_string()));
    }
    let pairwise = pairwise_kappa_matrix(labels)?;
    let mean_per_rater = mean_offdiagonal(&pairwise);
    let alpha = krippendorff_alpha(labels, alpha_metric)?;
    let mut per_limb_mean = BTreeMap::new();
    for limb in LimbPair::ALL {
        let sub = labels.filter_limb(limb);
        let (mut sum, mut count) = (0.0, 0usize);
        for a in 0..sub.n_raters() {
            for b in a + 1..sub.n_raters() {
                let pairs: Vec<(Option<u8>, Option<u8>)> =
                    (0..sub.n_items()).map(|i| (sub.get(a, i), sub.get(b, i))).collect();
                if let Ok(k) = cohen_kappa(&pairs) {
                    sum += k;
                    count += 1;
                }
            }
        }
        if count > 0 {
            per_limb_mean.insert(limb, sum / count as f64);
        }
    }
    Ok(KappaBlock {
        pairwise,
        mean_per_rater,
        per_limb_mean,
        krippendorff_alpha: alpha,
        alpha_metric,
    })
}

/// Limb-by-limb kappa of a single labeler: entry (i, j) compares the
/// labeler's answers on limb i and limb j across images.
pub fn inter_limb_agreement(
    labels: &BTreeMap<String, [Option<u8>; 4]>,
) -> Result<[[f64; 4]; 4]> {
    let mut matrix = [[1.0; 4]; 4];
    for a in 0..4 {
        for b in a + 1..4 {
            let pairs: Vec<(Option<u8>, Option<u8>)> =
                labels.values().map(|row| (row[a], row[b])).collect();
            let k = cohen_kappa(&pairs).map_err(|_| {
                Error::validation(format!(
                    "no images with both `{}` and `{}` labeled",
                    LimbPair::ALL[a],
                    LimbPair::ALL[b]
                ))
            })?;
            matrix[a][b] = k;
            matrix[b][a] = k;
        }
    }
    Ok(matrix)
}

/// Kappa between symmetry answers and angle classes binarized at the first
/// class boundary (class 0 reads as symmetric). Pairs are (symmetry, class).
pub fn internal_consistency(pairs: &[(Option<u8>, Option<u8>)]) -> Result<f64> {
    let binarized: Vec<(Option<u8>, Option<u8>)> =
        pairs.iter().map(|&(s, c)| (s, c.map(|c| u8::from(c >= 1)))).collect();
    cohen_kappa(&binarized)
}

/// One labeler's answers keyed by image, for the within-source diagnostics.
/// Pose-based sources carry thresholded assessments as symmetry and the
/// class of the same angle as angle_class.
#[derive(Clone, Debug)]
pub struct SourceLabels {
    pub name: String,
    pub symmetry: BTreeMap<String, [Option<u8>; 4]>,
    pub angle_class: BTreeMap<String, [Option<u8>; 4]>,
}

impl SourceLabels {
    pub fn new(name: impl Into<String>) -> SourceLabels {
        SourceLabels {
            name: name.into(),
            symmetry: BTreeMap::new(),
            angle_class: BTreeMap::new(),
        }
    }

    pub fn from_rater(table: &RatingTable, rater_idx: usize) -> SourceLabels {
        let mut source = SourceLabels::new(table.raters()[rater_idx].clone());
        for (i, item) in table.items().iter().enumerate() {
            let col = item.limb.index();
            if let Some(v) = table.symmetry_label(rater_idx, i) {
                source.symmetry.entry(item.image_id.clone()).or_insert([None; 4])[col] = Some(v);
            }
            if let Some(v) = table.angle_class_label(rater_idx, i) {
                source.angle_class.entry(item.image_id.clone()).or_insert([None; 4])[col] =
                    Some(v);
            }
        }
        source
    }

    pub fn set(&mut self, image_id: &str, limb: LimbPair, symmetry: Option<u8>, class: Option<u8>) {
        let col = limb.index();
        if symmetry.is_some() {
            self.symmetry.entry(image_id.to_string()).or_insert([None; 4])[col] = symmetry;
        }
        if class.is_some() {
            self.angle_class.entry(image_id.to_string()).or_insert([None; 4])[col] = class;
        }
    }

    fn symmetry_at(&self, key: &ItemKey) -> Option<u8> {
        self.symmetry.get(&key.image_id).and_then(|row| row[key.limb.index()])
    }

    /// Aligned (symmetry, angle_class) pairs over all cells this source
    /// touched with either answer.
    pub fn internal_pairs(&self) -> Vec<(Option<u8>, Option<u8>)> {
        let mut images: Vec<&String> = self.symmetry.keys().collect();
        for k in self.angle_class.keys() {
            if !self.symmetry.contains_key(k) {
                images.push(k);
            }
        }
        images.sort();
        let mut pairs = Vec::new();
        for image in images {
            let sym = self.symmetry.get(image);
            let class = self.angle_class.get(image);
            for col in 0..4 {
                let s = sym.and_then(|r| r[col]);
                let c = class.and_then(|r| r[col]);
                if s.is_some() || c.is_some() {
                    pairs.push((s, c));
                }
            }
        }
        pairs
    }
}

/// Full agreement report: pairwise and collective agreement among raters on
/// both questions, plus per-source diagnostics for the raters and any
/// pose-based sources supplied alongside.
#[derive(Clone, Debug, Serialize)]
pub struct AgreementReport {
    pub raters: Vec<String>,
    pub symmetry: KappaBlock,
    /// Absent when the table carries no angle-class labels.
    pub angle_class: Option<KappaBlock>,
    /// Mean kappa of each extra source against the raters (symmetry).
    pub source_mean_kappa: BTreeMap<String, f64>,
    pub inter_limb: BTreeMap<String, [[f64; 4]; 4]>,
    pub internal_consistency: BTreeMap<String, f64>,
}

pub fn agreement_report(
    ratings: &RatingTable,
    sources: &[SourceLabels],
    angle_alpha_metric: AlphaMetric,
) -> Result<AgreementReport> {
    let symmetry_matrix = ratings.symmetry_matrix();
    let symmetry = kappa_block(&symmetry_matrix, AlphaMetric::Nominal)?;
    let class_matrix = ratings.angle_class_matrix();
    let has_classes = (0..class_matrix.n_raters())
        .any(|r| class_matrix.rater_row(r).iter().any(Option::is_some));
    let angle_class =
        if has_classes { Some(kappa_block(&class_matrix, angle_alpha_metric)?) } else { None };

    let mut inter_limb = BTreeMap::new();
    let mut internal = BTreeMap::new();
    let mut rater_sources = Vec::new();
    for r in 0..ratings.n_raters() {
        rater_sources.push(SourceLabels::from_rater(ratings, r));
    }
    for source in rater_sources.iter().chain(sources) {
        if inter_limb.contains_key(&source.name) {
            return Err(Error::validation(format!("duplicate source name `{}`", source.name)));
        }
        inter_limb.insert(source.name.clone(), inter_limb_agreement(&source.symmetry)?);
        if let Ok(k) = internal_consistency(&source.internal_pairs()) {
            internal.insert(source.name.clone(), k);
        }
    }

    let mut source_mean_kappa = BTreeMap::new();
    for source in sources {
        let (mut sum, mut count) = (0.0, 0usize);
        for r in 0..ratings.n_raters() {
            let pairs: Vec<(Option<u8>, Option<u8>)> = ratings
                .items()
                .iter()
                .enumerate()
                .map(|(i, item)| (source.symmetry_at(item), ratings.symmetry_label(r, i)))
                .collect();
            if let Ok(k) = cohen_kappa(&pairs) {
                sum += k;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::validation(format!(
                "source `{}` shares no labeled cells with any rater",
                source.name
            )));
        }
        source_mean_kappa.insert(source.name.clone(), sum / count as f64);
    }

    Ok(AgreementReport {
        raters: ratings.raters().to_vec(),
        symmetry,
        angle_class,
        source_mean_kappa,
        inter_limb,
        internal_consistency: internal,
    })
}
