//! Which factors drive the symmetry labels?
//!
//! A multi-covariate logistic regression of binary labels on limb part,
//! posture, occlusion, and an angle covariate, summarized by Cox-Snell and
//! Nagelkerke pseudo-R2 and by drop-one importance: refit without each
//! covariate group and report the change in R2_CS (more negative means the
//! group mattered more).
//!
//! Categorical covariates are dummy-coded against fixed references
//! (upper_arm, supine). Cells with unknown posture or no angle value are
//! dropped and counted; cells without an occlusion entry default to
//! not-occluded and are counted too.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::calibration::{fit_logistic_named, LogisticModel};
use crate::error::{Error, Result};
use crate::skeleton::{ItemKey, LimbPair, OcclusionTable, Posture};

/// One (image, limb) observation entering the regression. `occluded: None`
/// means no occlusion annotation exists for the cell.
#[derive(Clone, Debug)]
pub struct FactorCell {
    pub key: ItemKey,
    pub response: u8,
    pub posture: Posture,
    pub occluded: Option<bool>,
    pub angle: Option<f64>,
}

/// Assemble cells from the pipeline's column stores. Every response cell
/// yields one FactorCell; postures default to unknown when the image is
/// absent from the posture map (dropped later, with a count).
pub fn build_cells(
    response: &BTreeMap<ItemKey, u8>,
    postures: &BTreeMap<String, Posture>,
    occlusion: Option<&OcclusionTable>,
    angles: &BTreeMap<ItemKey, f64>,
) -> Vec<FactorCell> {
    response
        .iter()
        .map(|(key, &resp)| FactorCell {
            key: key.clone(),
            response: resp,
            posture: postures.get(&key.image_id).copied().unwrap_or(Posture::Unknown),
            occluded: occlusion.and_then(|t| t.get(key)),
            angle: angles.get(key).copied(),
        })
        .collect()
}

/// Dummy-coded design matrix with named covariate groups.
#[derive(Clone, Debug)]
pub struct DesignInfo {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub y: Vec<u8>,
    /// Covariate group -> column indices into `names`/`rows`.
    pub groups: BTreeMap<String, Vec<usize>>,
    pub n_dropped_unknown_posture: usize,
    pub n_dropped_missing_angle: usize,
    pub n_occlusion_defaulted: usize,
}

pub fn build_design(cells: &[FactorCell]) -> Result<DesignInfo> {
    let mut names = Vec::new();
    for limb in &LimbPair::ALL[1..] {
        names.push(format!("limb_{limb}"));
    }
    for posture in &Posture::KNOWN[1..] {
        names.push(format!("posture_{posture}"));
    }
    names.push("occluded".to_string());
    names.push("angle".to_string());
    let groups: BTreeMap<String, Vec<usize>> = [
        ("limb".to_string(), vec![0, 1, 2]),
        ("posture".to_string(), vec![3, 4, 5]),
        ("occlusion".to_string(), vec![6]),
        ("angle".to_string(), vec![7]),
    ]
    .into();

    let mut rows = Vec::new();
    let mut y = Vec::new();
    let (mut dropped_posture, mut dropped_angle, mut defaulted_occ) = (0, 0, 0);
    for cell in cells {
        if cell.posture == Posture::Unknown {
            dropped_posture += 1;
            continue;
        }
        let Some(angle) = cell.angle else {
            dropped_angle += 1;
            continue;
        };
        if cell.response > 1 {
            return Err(Error::validation(format!(
                "factor response must be 0/1, got {} at {}",
                cell.response, cell.key
            )));
        }
        let occluded = match cell.occluded {
            Some(v) => v,
            None => {
                defaulted_occ += 1;
                false
            }
        };
        let mut row = vec![0.0; 8];
        if cell.key.limb != LimbPair::UpperArm {
            row[cell.key.limb.index() - 1] = 1.0;
        }
        if cell.posture != Posture::Supine {
            let posture_idx = Posture::KNOWN
                .iter()
                .position(|&p| p == cell.posture)
                .expect("known posture");
            row[3 + posture_idx - 1] = 1.0;
        }
        row[6] = f64::from(occluded);
        row[7] = angle;
        rows.push(row);
        y.push(cell.response);
    }
    if rows.is_empty() {
        return Err(Error::validation(
            "no usable cells after dropping unknown postures and missing angles".to_string(),
        ));
    }
    Ok(DesignInfo {
        names,
        rows,
        y,
        groups,
        n_dropped_unknown_posture: dropped_posture,
        n_dropped_missing_angle: dropped_angle,
        n_occlusion_defaulted: defaulted_occ,
    })
}

/// Cox-Snell and Nagelkerke pseudo-R2 from model and null deviances.
pub fn pseudo_r2(deviance_model: f64, deviance_null: f64, n: usize) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::validation("pseudo-R2 needs a nonempty sample".to_string()));
    }
    let r2_cs = 1.0 - ((deviance_model - deviance_null) / n as f64).exp();
    let ceiling = 1.0 - (-deviance_null / n as f64).exp();
    if ceiling <= 0.0 {
        return Err(Error::validation(
            "null deviance is zero; the response has no variance to explain".to_string(),
        ));
    }
    Ok((r2_cs, r2_cs / ceiling))
}

/// Fraction of cells the model classifies correctly at the 0.5 cut.
pub fn classification_accuracy(model: &LogisticModel, rows: &[Vec<f64>], y: &[u8]) -> f64 {
    let hits = rows
        .iter()
        .zip(y)
        .filter(|(row, &yi)| u8::from(model.predict_one(row) >= 0.5) == yi)
        .count();
    hits as f64 / rows.len() as f64
}

#[derive(Clone, Debug)]
pub struct FittedDesign {
    pub model: LogisticModel,
    pub null_deviance: f64,
    pub r2_cs: f64,
    pub r2_n: f64,
    pub accuracy: f64,
}

pub fn fit_design(design: &DesignInfo, ridge: f64) -> Result<FittedDesign> {
    let model = fit_logistic_named(&design.rows, &design.y, ridge, &design.names)?;
    let empty_rows: Vec<Vec<f64>> = vec![Vec::new(); design.rows.len()];
    let null = fit_logistic_named(&empty_rows, &design.y, ridge, &[])?;
    let (r2_cs, r2_n) = pseudo_r2(model.deviance, null.deviance, design.y.len())?;
    let accuracy = classification_accuracy(&model, &design.rows, &design.y);
    Ok(FittedDesign { model, null_deviance: null.deviance, r2_cs, r2_n, accuracy })
}

/// Refit without each covariate group: group -> R2_CS(reduced) - R2_CS(full).
pub fn drop_one_importance(
    design: &DesignInfo,
    ridge: f64,
    full: &FittedDesign,
) -> Result<BTreeMap<String, f64>> {
    let mut deltas = BTreeMap::new();
    for (group, cols) in &design.groups {
        let keep: Vec<usize> =
            (0..design.names.len()).filter(|c| !cols.contains(c)).collect();
        let rows: Vec<Vec<f64>> = design
            .rows
            .iter()
            .map(|row| keep.iter().map(|&c| row[c]).collect())
            .collect();
        let names: Vec<String> = keep.iter().map(|&c| design.names[c].clone()).collect();
        let reduced = fit_logistic_named(&rows, &design.y, ridge, &names)?;
        let (r2_reduced, _) = pseudo_r2(reduced.deviance, full.null_deviance, design.y.len())?;
        deltas.insert(group.clone(), r2_reduced - full.r2_cs);
    }
    Ok(deltas)
}

#[derive(Clone, Debug, Serialize)]
pub struct FactorReport {
    /// Which labels were regressed on, e.g. "bayesian" or "pose3d".
    pub response: String,
    /// Where the angle covariate came from, e.g. "mean_rater_class"
    /// (ordinal class averaged over raters) or "pose_degrees_over_30".
    pub angle_source: String,
    pub model: LogisticModel,
    pub null_deviance: f64,
    pub r2_cox_snell: f64,
    pub r2_nagelkerke: f64,
    pub accuracy: f64,
    pub delta_r2_cs: BTreeMap<String, f64>,
    pub n_cells: usize,
    pub n_dropped_unknown_posture: usize,
    pub n_dropped_missing_angle: usize,
    pub n_occlusion_defaulted: usize,
    /// Covariates with Wald p < 0.05; informational only.
    pub significant_covariates: Vec<String>,
}

pub fn factor_report(
    cells: &[FactorCell],
    response: &str,
    angle_source: &str,
    ridge: f64,
) -> Result<FactorReport> {
    let design = build_design(cells)?;
    let fitted = fit_design(&design, ridge)?;
    let delta_r2_cs = drop_one_importance(&design, ridge, &fitted)?;
    let significant: Vec<String> = fitted
        .model
        .names
        .iter()
        .zip(&fitted.model.p_values)
        .filter(|&(name, &p)| p < 0.05 && name != "intercept")
        .map(|(name, _)| name.clone())
        .collect();
    Ok(FactorReport {
        response: response.to_string(),
        angle_source: angle_source.to_string(),
        model: fitted.model,
        null_deviance: fitted.null_deviance,
        r2_cox_snell: fitted.r2_cs,
        r2_nagelkerke: fitted.r2_n,
        accuracy: fitted.accuracy,
        delta_r2_cs,
        n_cells: design.y.len(),
        n_dropped_unknown_posture: design.n_dropped_unknown_posture,
        n_dropped_missing_angle: design.n_dropped_missing_angle,
        n_occlusion_defaulted: design.n_occlusion_defaulted,
        significant_covariates: significant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cells(n: usize, seed: u64, response_from_angle: bool) -> Vec<FactorCell> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let limb = LimbPair::ALL[rng.gen_range(0..4)];
                let posture = Posture::KNOWN[rng.gen_range(0..4)];
                let angle = rng.gen_range(0.0..2.0_f64);
                let response = if response_from_angle {
                    u8::from(rng.gen_bool(1.0 / (1.0 + (-4.0 * (angle - 1.0)).exp())))
                } else {
                    u8::from(rng.gen_bool(0.4))
                };
                FactorCell {
                    key: ItemKey::new(format!("img{:04}", i / 4), limb),
                    response,
                    posture,
                    occluded: Some(rng.gen_bool(0.2)),
                    angle: Some(angle),
                }
            })
            .collect()
    }

    #[test]
    fn design_layout_and_dummy_coding() {
        let cells = vec![
            FactorCell {
                key: ItemKey::new("a", LimbPair::LowerLeg),
                response: 1,
                posture: Posture::Sitting,
                occluded: Some(true),
                angle: Some(1.5),
            },
            FactorCell {
                key: ItemKey::new("a", LimbPair::UpperArm),
                response: 0,
                posture: Posture::Supine,
                occluded: None,
                angle: Some(0.25),
            },
        ];
        let design = build_design(&cells).unwrap();
        assert_eq!(
            design.names,
            vec![
                "limb_lower_arm",
                "limb_upper_leg",
                "limb_lower_leg",
                "posture_prone",
                "posture_sitting",
                "posture_standing",
                "occluded",
                "angle"
            ]
        );
        assert_eq!(design.rows[0], vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.5]);
        // Reference levels and defaulted occlusion give an all-zero prefix.
        assert_eq!(design.rows[1], vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.25]);
        assert_eq!(design.n_occlusion_defaulted, 1);
        assert_eq!(design.groups["limb"], vec![0, 1, 2]);
        assert_eq!(design.groups["angle"], vec![7]);
    }

    #[test]
    fn unusable_cells_are_dropped_and_counted() {
        let mut cells = random_cells(40, 1, false);
        cells[0].posture = Posture::Unknown;
        cells[1].posture = Posture::Unknown;
        cells[2].angle = None;
        let design = build_design(&cells).unwrap();
        assert_eq!(design.y.len(), 37);
        assert_eq!(design.n_dropped_unknown_posture, 2);
        assert_eq!(design.n_dropped_missing_angle, 1);
    }

    #[test]
    fn pseudo_r2_of_the_null_model_is_zero() {
        let (r2_cs, r2_n) = pseudo_r2(100.0, 100.0, 80).unwrap();
        assert_eq!(r2_cs, 0.0);
        assert_eq!(r2_n, 0.0);
        assert!(pseudo_r2(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn near_perfect_model_drives_nagelkerke_toward_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
        let y: Vec<u8> = rows.iter().map(|r| u8::from(r[0] > 0.0)).collect();
        let model = fit_logistic_named(&rows, &y, 1e-4, &["x".to_string()]).unwrap();
        let null = fit_logistic_named(&vec![Vec::new(); 300], &y, 1e-4, &[]).unwrap();
        let (r2_cs, r2_n) = pseudo_r2(model.deviance, null.deviance, 300).unwrap();
        assert!(r2_n > 0.9, "r2_n = {r2_n}");
        assert!(r2_n >= r2_cs);
        assert!(r2_cs < 1.0);
    }

    #[test]
    fn angle_generated_response_ranks_angle_first() {
        let cells = random_cells(2000, 3, true);
        let report = factor_report(&cells, "synthetic", "mean_rater_class", 1e-6).unwrap();
        let angle_delta = report.delta_r2_cs["angle"];
        for (group, &delta) in &report.delta_r2_cs {
            if group != "angle" {
                assert!(
                    angle_delta.abs() > delta.abs(),
                    "{group} ({delta}) outranked angle ({angle_delta})"
                );
            }
        }
        assert!(angle_delta < -0.1, "angle delta = {angle_delta}");
        assert!(report.r2_nagelkerke >= report.r2_cox_snell);
        assert!(report.significant_covariates.contains(&"angle".to_string()));
        assert!((0.0..=1.0).contains(&report.accuracy));
    }

    #[test]
    fn drop_one_deltas_are_nonpositive_without_ridge() {
        let cells = random_cells(1500, 4, true);
        let design = build_design(&cells).unwrap();
        let fitted = fit_design(&design, 0.0).unwrap();
        let deltas = drop_one_importance(&design, 0.0, &fitted).unwrap();
        for (group, &delta) in &deltas {
            assert!(delta <= 1e-9, "{group} improved the fit when dropped: {delta}");
        }
    }

    #[test]
    fn duplicated_group_has_negligible_importance() {
        let base = random_cells(800, 5, true);
        let mut design = build_design(&base).unwrap();
        // Append a copy of the angle column as its own group; under ridge the
        // copy absorbs the signal whenever the original is dropped.
        design.names.push("angle_copy".to_string());
        for row in &mut design.rows {
            row.push(row[7]);
        }
        design.groups.insert("angle_copy".to_string(), vec![8]);
        let fitted = fit_design(&design, 0.01).unwrap();
        let deltas = drop_one_importance(&design, 0.01, &fitted).unwrap();
        assert!(
            deltas["angle"].abs() < 0.01,
            "duplicated angle still looked important: {}",
            deltas["angle"]
        );
        assert!(deltas["posture"].abs() < deltas["angle_copy"].abs().max(0.05));
    }

    #[test]
    fn importance_is_invariant_to_column_order() {
        let cells = random_cells(1000, 6, true);
        let design = build_design(&cells).unwrap();
        let fitted = fit_design(&design, 1e-6).unwrap();
        let deltas = drop_one_importance(&design, 1e-6, &fitted).unwrap();

        // Same data with the angle column moved to the front.
        let order: Vec<usize> = vec![7, 0, 1, 2, 3, 4, 5, 6];
        let permuted = DesignInfo {
            names: order.iter().map(|&c| design.names[c].clone()).collect(),
            rows: design
                .rows
                .iter()
                .map(|row| order.iter().map(|&c| row[c]).collect())
                .collect(),
            y: design.y.clone(),
            groups: [
                ("angle".to_string(), vec![0]),
                ("limb".to_string(), vec![1, 2, 3]),
                ("posture".to_string(), vec![4, 5, 6]),
                ("occlusion".to_string(), vec![7]),
            ]
            .into(),
            n_dropped_unknown_posture: 0,
            n_dropped_missing_angle: 0,
            n_occlusion_defaulted: 0,
        };
        let fitted_p = fit_design(&permuted, 1e-6).unwrap();
        let deltas_p = drop_one_importance(&permuted, 1e-6, &fitted_p).unwrap();
        for (group, &delta) in &deltas {
            assert!(
                (delta - deltas_p[group]).abs() < 1e-9,
                "{group}: {delta} vs {}",
                deltas_p[group]
            );
        }
    }

    #[test]
    fn build_cells_joins_the_column_stores() {
        let mut response = BTreeMap::new();
        let mut angles = BTreeMap::new();
        let mut postures = BTreeMap::new();
        let mut occlusion = OcclusionTable::default();
        let key = ItemKey::new("img0", LimbPair::LowerArm);
        response.insert(key.clone(), 1u8);
        angles.insert(key.clone(), 1.2);
        postures.insert("img0".to_string(), Posture::Prone);
        occlusion.insert(key.clone(), true).unwrap();
        let other = ItemKey::new("img1", LimbPair::UpperLeg);
        response.insert(other.clone(), 0u8);

        let cells = build_cells(&response, &postures, Some(&occlusion), &angles);
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].key, key);
        assert_eq!(cells[0].occluded, Some(true));
        assert_eq!(cells[0].angle, Some(1.2));
        assert_eq!(cells[1].posture, Posture::Unknown);
        assert_eq!(cells[1].angle, None);

        let report = serde_json::to_string(
            &factor_report(&random_cells(600, 9, true), "bayesian", "mean_rater_class", 1e-6)
                .unwrap(),
        )
        .unwrap();
        assert!(report.contains("delta_r2_cs"));
    }
}
