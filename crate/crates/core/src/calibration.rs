//! Logistic calibration of pose angles against consensus labels.
//!
//! A single-covariate logistic regression (angle in degrees, plus intercept)
//! is fit by Newton/IRLS on a 3:1 train/test split; the held-out fold yields
//! the ROC curve and AUC. Independently of the regression, a threshold sweep
//! over a degree grid finds the decision angle maximizing Cohen's kappa
//! against the reference labels, which is what the thresholded end-to-end
//! classifier uses.
//!
//! The ridge penalty (ridge/2) |beta|^2 applies to every coefficient,
//! intercept included; `penalized_log_likelihood` and `penalized_gradient`
//! are public so the optimum can be audited numerically.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::agreement::cohen_kappa;
use crate::error::{Error, Result};
use crate::geometry::AngleProfile;
use crate::skeleton::{ItemKey, LimbPair};

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;

#[derive(Clone, Debug, Serialize)]
pub struct LogisticModel {
    /// Coefficient names; index 0 is always "intercept".
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub z_values: Vec<f64>,
    /// Two-sided Wald p-values.
    pub p_values: Vec<f64>,
    /// Unpenalized deviance, -2 log likelihood.
    pub deviance: f64,
    pub ridge: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n: usize,
}

impl LogisticModel {
    pub fn predict_one(&self, covariates: &[f64]) -> f64 {
        debug_assert_eq!(covariates.len() + 1, self.coefficients.len());
        let eta = self.coefficients[0]
            + self.coefficients[1..].iter().zip(covariates).map(|(b, x)| b * x).sum::<f64>();
        sigmoid(eta)
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.predict_one(r)).collect()
    }
}

fn sigmoid(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

/// log(1 + e^t) without overflow.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn validate_design(rows: &[Vec<f64>], y: &[u8], ridge: f64) -> Result<usize> {
    if rows.is_empty() {
        return Err(Error::validation("logistic fit needs at least one row".to_string()));
    }
    let width = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::validation(format!(
                "design row {i} has {} columns, expected {width}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!("design row {i} has a non-finite value")));
        }
    }
    if y.len() != rows.len() {
        return Err(Error::validation(format!(
            "{} responses for {} rows",
            y.len(),
            rows.len()
        )));
    }
    if let Some(v) = y.iter().find(|&&v| v > 1) {
        return Err(Error::validation(format!("response must be 0/1, got {v}")));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::validation(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    Ok(width)
}

/// Bernoulli log likelihood minus (ridge/2) |beta|^2. `beta[0]` is the
/// intercept; `rows` carry covariates only.
pub fn penalized_log_likelihood(rows: &[Vec<f64>], y: &[u8], beta: &[f64], ridge: f64) -> f64 {
    let mut ll = 0.0;
    for (row, &yi) in rows.iter().zip(y) {
        let eta = beta[0] + beta[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>();
        // log sigma(eta) = -softplus(-eta), log(1 - sigma(eta)) = -softplus(eta)
        ll -= if yi == 1 { softplus(-eta) } else { softplus(eta) };
    }
    ll - 0.5 * ridge * beta.iter().map(|b| b * b).sum::<f64>()
}

/// Gradient of `penalized_log_likelihood` in beta: X^T (y - p) - ridge beta.
pub fn penalized_gradient(rows: &[Vec<f64>], y: &[u8], beta: &[f64], ridge: f64) -> Vec<f64> {
    let mut grad = vec![0.0; beta.len()];
    for (row, &yi) in rows.iter().zip(y) {
        let eta = beta[0] + beta[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>();
        let resid = yi as f64 - sigmoid(eta);
        grad[0] += resid;
        for (g, x) in grad[1..].iter_mut().zip(row) {
            *g += resid * x;
        }
    }
    for (g, b) in grad.iter_mut().zip(beta) {
        *g -= ridge * b;
    }
    grad
}

pub fn fit_logistic(rows: &[Vec<f64>], y: &[u8], ridge: f64) -> Result<LogisticModel> {
    let width = validate_design(rows, y, ridge)?;
    let names: Vec<String> = (1..=width).map(|k| format!("x{k}")).collect();
    fit_logistic_named(rows, y, ridge, &names)
}

pub fn fit_logistic_named(
    rows: &[Vec<f64>],
    y: &[u8],
    ridge: f64,
    names: &[String],
) -> Result<LogisticModel> {
    let width = validate_design(rows, y, ridge)?;
    if names.len() != width {
        return Err(Error::validation(format!(
            "{} covariate names for {width} columns",
            names.len()
        )));
    }
    let n = rows.len();
    let d = width + 1;
    let x = DMatrix::from_fn(n, d, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });

    let mut beta = vec![0.0; d];
    let mut pen_ll = penalized_log_likelihood(rows, y, &beta, ridge);
    let mut iterations = 0;
    let mut converged = false;
    let mut hessian = None;

    while iterations < MAX_ITER {
        let grad = penalized_gradient(rows, y, &beta, ridge);
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;

        let bv = DVector::from_column_slice(&beta);
        let eta = &x * &bv;
        let wx = DMatrix::from_fn(n, d, |i, j| {
            let p = sigmoid(eta[i]);
            p * (1.0 - p) * x[(i, j)]
        });
        let mut h = x.tr_mul(&wx);
        for k in 0..d {
            h[(k, k)] += ridge;
        }
        let Some(chol) = Cholesky::new(h.clone()) else {
            return Err(Error::Separation);
        };
        hessian = Some(h);
        let step = chol.solve(&DVector::from_column_slice(&grad));

        // Newton with step halving: the penalized likelihood must not drop.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let cand_ll = penalized_log_likelihood(rows, y, &cand, ridge);
            if cand_ll >= pen_ll - 1e-12 * (1.0 + pen_ll.abs()) {
                beta = cand;
                pen_ll = cand_ll;
                accepted = true;
                break;
            }
            t /= 2.0;
        }
        assert!(accepted, "step halving failed to restore ascent at iteration {iterations}");
    }

    // Wald statistics from the curvature at the solution.
    let bv = DVector::from_column_slice(&beta);
    let eta = &x * &bv;
    let wx = DMatrix::from_fn(n, d, |i, j| {
        let p = sigmoid(eta[i]);
        p * (1.0 - p) * x[(i, j)]
    });
    let mut h = x.tr_mul(&wx);
    for k in 0..d {
        h[(k, k)] += ridge;
    }
    let chol = match Cholesky::new(h) {
        Some(c) => c,
        None => match hessian.and_then(Cholesky::new) {
            Some(c) => c,
            None => return Err(Error::Separation),
        },
    };
    let cov = chol.inverse();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let std_errors: Vec<f64> = (0..d).map(|k| cov[(k, k)].max(0.0).sqrt()).collect();
    let z_values: Vec<f64> =
        beta.iter().zip(&std_errors).map(|(b, se)| if *se > 0.0 { b / se } else { 0.0 }).collect();
    let p_values: Vec<f64> = z_values.iter().map(|z| 2.0 * (1.0 - normal.cdf(z.abs()))).collect();

    let deviance = -2.0
        * (penalized_log_likelihood(rows, y, &beta, 0.0));
    let mut full_names = vec!["intercept".to_string()];
    full_names.extend_from_slice(names);
    Ok(LogisticModel {
        names: full_names,
        coefficients: beta,
        std_errors,
        z_values,
        p_values,
        deviance,
        ridge,
        iterations,
        converged,
        n,
    })
}

/// Deterministic 3:1 split of item indices; train takes floor(3n/4).
/// Both halves come back sorted.
pub fn train_test_split(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 4 {
        return Err(Error::validation(format!("need at least 4 items to split, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let n_train = n * 3 / 4;
    let mut train = indices[..n_train].to_vec();
    let mut test = indices[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Score cut; None marks the (0, 0) anchor above every score.
    pub threshold: Option<f64>,
}

/// ROC curve over all distinct score thresholds plus the trapezoid AUC,
/// which equals the tie-corrected Mann-Whitney statistic.
pub fn roc_auc(scores: &[f64], y: &[u8]) -> Result<(Vec<RocPoint>, f64)> {
    if scores.len() != y.len() || scores.is_empty() {
        return Err(Error::validation(format!(
            "{} scores for {} labels",
            scores.len(),
            y.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::validation("scores must be finite".to_string()));
    }
    if let Some(v) = y.iter().find(|&&v| v > 1) {
        return Err(Error::validation(format!("labels must be 0/1, got {v}")));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::validation(
            "ROC undefined: labels contain a single class".to_string(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: None }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if y[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: Some(s),
        });
    }
    Ok((points.clone(), trapezoid(&points)))
}

fn trapezoid(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// 1 iff the ordinal angle class is nonzero.
pub fn binarize_class(class: u8) -> u8 {
    u8::from(class >= 1)
}

/// P(class >= 1) from ordinal class probabilities.
pub fn binarize_class_probs(probs: [f64; 3]) -> f64 {
    probs[1] + probs[2]
}

/// Degree grid for the kappa sweep, 1 degree steps over [1, 90].
pub fn default_theta_grid() -> Vec<f64> {
    (1..=90).map(|d| d as f64).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct KappaSweep {
    /// (theta_deg, kappa) per grid point.
    pub curve: Vec<(f64, f64)>,
    pub theta_star: f64,
    pub kappa_at_star: f64,
}

/// Assess the profiles at every grid angle and score agreement with the
/// reference labels; ties in the maximum go to the smaller angle.
pub fn kappa_threshold_sweep(
    profiles: &[AngleProfile],
    reference: &BTreeMap<ItemKey, u8>,
    grid: &[f64],
) -> Result<KappaSweep> {
    if grid.is_empty() {
        return Err(Error::validation("empty threshold grid".to_string()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("threshold grid must be strictly increasing".to_string()));
    }
    if grid[0] <= 0.0 || *grid.last().unwrap() >= 180.0 {
        return Err(Error::validation("thresholds must lie in (0, 180)".to_string()));
    }
    let mut curve = Vec::with_capacity(grid.len());
    let (mut theta_star, mut kappa_at_star) = (grid[0], f64::NEG_INFINITY);
    for &theta in grid {
        let mut pairs = Vec::new();
        for profile in profiles {
            for limb in LimbPair::ALL {
                let reference_label =
                    reference.get(&ItemKey::new(profile.image_id.clone(), limb)).copied();
                let predicted = profile.angle(limb).map(|a| u8::from(a >= theta));
                if reference_label.is_some() || predicted.is_some() {
                    pairs.push((predicted, reference_label));
                }
            }
        }
        let kappa = cohen_kappa(&pairs)?;
        curve.push((theta, kappa));
        if kappa > kappa_at_star {
            kappa_at_star = kappa;
            theta_star = theta;
        }
    }
    Ok(KappaSweep { curve, theta_star, kappa_at_star })
}

#[derive(Clone, Debug, Serialize)]
pub struct LimbCalibration {
    pub model: LogisticModel,
    pub auc: f64,
    pub roc_points: Vec<RocPoint>,
    pub theta_star: f64,
    pub kappa_at_theta_star: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationReport {
    pub model: LogisticModel,
    pub auc: f64,
    pub roc_points: Vec<RocPoint>,
    pub kappa_curve: Vec<(f64, f64)>,
    pub theta_star: f64,
    pub kappa_at_theta_star: f64,
    pub split_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Reference cells without a usable angle (occluded or missing).
    pub n_excluded: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_limb: Option<BTreeMap<LimbPair, LimbCalibration>>,
}

fn labeled_cells(
    profiles: &[AngleProfile],
    reference: &BTreeMap<ItemKey, u8>,
) -> Vec<(ItemKey, f64, u8)> {
    let mut cells = Vec::new();
    for profile in profiles {
        for limb in LimbPair::ALL {
            let key = ItemKey::new(profile.image_id.clone(), limb);
            if let (Some(angle), Some(&label)) = (profile.angle(limb), reference.get(&key)) {
                cells.push((key, angle, label));
            }
        }
    }
    cells.sort_by(|a, b| a.0.cmp(&b.0));
    cells
}

fn fit_and_roc(
    cells: &[(ItemKey, f64, u8)],
    ridge: f64,
    split_seed: u64,
) -> Result<(LogisticModel, Vec<RocPoint>, f64, usize, usize)> {
    let (train, test) = train_test_split(cells.len(), split_seed)?;
    let rows: Vec<Vec<f64>> = train.iter().map(|&i| vec![cells[i].1]).collect();
    let ys: Vec<u8> = train.iter().map(|&i| cells[i].2).collect();
    let model = fit_logistic_named(&rows, &ys, ridge, &["angle_deg".to_string()])?;
    let test_scores: Vec<f64> = test.iter().map(|&i| model.predict_one(&[cells[i].1])).collect();
    let test_y: Vec<u8> = test.iter().map(|&i| cells[i].2).collect();
    let (points, auc) = roc_auc(&test_scores, &test_y)?;
    Ok((model, points, auc, train.len(), test.len()))
}

/// Full calibration: regression + held-out ROC on the labeled cells, and a
/// kappa sweep over every item. `per_limb` adds a stratified variant for
/// each limb with enough two-class data, silently omitting the rest.
pub fn calibrate(
    profiles: &[AngleProfile],
    reference: &BTreeMap<ItemKey, u8>,
    grid: &[f64],
    ridge: f64,
    split_seed: u64,
    per_limb: bool,
) -> Result<CalibrationReport> {
    let cells = labeled_cells(profiles, reference);
    let n_excluded = reference.len() - cells.len();
    let (model, roc_points, auc, n_train, n_test) = fit_and_roc(&cells, ridge, split_seed)?;
    let sweep = kappa_threshold_sweep(profiles, reference, grid)?;

    let per_limb = if per_limb {
        let mut map = BTreeMap::new();
        for limb in LimbPair::ALL {
            let sub_cells: Vec<(ItemKey, f64, u8)> =
                cells.iter().filter(|(k, _, _)| k.limb == limb).cloned().collect();
            if sub_cells.len() < 4 || sub_cells.iter().all(|c| c.2 == sub_cells[0].2) {
                continue;
            }
            let sub_reference: BTreeMap<ItemKey, u8> =
                reference.iter().filter(|(k, _)| k.limb == limb).map(|(k, &v)| (k.clone(), v)).collect();
            let (model, roc_points, auc, n_train, n_test) =
                fit_and_roc(&sub_cells, ridge, split_seed)?;
            let sweep = kappa_threshold_sweep(profiles, &sub_reference, grid)?;
            map.insert(
                limb,
                LimbCalibration {
                    model,
                    auc,
                    roc_points,
                    theta_star: sweep.theta_star,
                    kappa_at_theta_star: sweep.kappa_at_star,
                    n_train,
                    n_test,
                },
            );
        }
        Some(map)
    } else {
        None
    };

    Ok(CalibrationReport {
        model,
        auc,
        roc_points,
        kappa_curve: sweep.curve,
        theta_star: sweep.theta_star,
        kappa_at_theta_star: sweep.kappa_at_star,
        split_seed,
        n_train,
        n_test,
        n_excluded,
        per_limb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn split_sizes_match_the_three_to_one_rule() {
        let (train, test) = train_test_split(2800, 7).unwrap();
        assert_eq!((train.len(), test.len()), (2100, 700));
        let (train, test) = train_test_split(4, 7).unwrap();
        assert_eq!((train.len(), test.len()), (3, 1));
        assert!(train_test_split(3, 7).is_err());
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let (t1, s1) = train_test_split(100, 42).unwrap();
        let (t2, s2) = train_test_split(100, 42).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(s1, s2);
        let (t3, _) = train_test_split(100, 43).unwrap();
        assert_ne!(t1, t3);
        let mut all: Vec<usize> = t1.iter().chain(&s1).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn constant_response_under_tiny_ridge() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 5.0]).collect();
        let y = vec![0u8; 20];
        let model = fit_logistic(&rows, &y, 1e-6).unwrap();
        assert!(model.converged);
        assert!(model.coefficients[0] < -4.0, "intercept {}", model.coefficients[0]);
        for p in model.predict(&rows) {
            assert!(p < 0.01, "predicted {p}");
        }
    }

    #[test]
    fn collinear_design_without_ridge_reports_separation() {
        let rows: Vec<Vec<f64>> =
            [(1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 4.0)].map(|(a, b)| vec![a, b]).to_vec();
        let y = vec![0, 0, 1, 1];
        match fit_logistic(&rows, &y, 0.0) {
            Err(Error::Separation) => {}
            other => panic!("expected separation error, got {other:?}"),
        }
        // The same design fits once regularized.
        assert!(fit_logistic(&rows, &y, 0.01).unwrap().converged);
    }

    #[test]
    fn wald_stats_flag_a_strong_effect() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.gen_range(-2.0..2.0)]).collect();
        let y: Vec<u8> =
            rows.iter().map(|r| u8::from(rng.gen_bool(sigmoid(2.0 * r[0])))).collect();
        let model = fit_logistic(&rows, &y, 1e-6).unwrap();
        assert!(model.converged);
        assert!(model.p_values[1] < 1e-6, "slope p = {}", model.p_values[1]);
        assert!(model.z_values[1] > 5.0);
        assert!(model.coefficients[1] > 1.0);
    }

    #[test]
    fn roc_on_perfect_scores_is_one() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let y = [0, 0, 1, 1];
        let (points, auc) = roc_auc(&scores, &y).unwrap();
        assert_eq!(auc, 1.0);
        assert_eq!(points[0].threshold, None);
        assert_eq!((points[0].fpr, points[0].tpr), (0.0, 0.0));
        let last = points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in points.windows(2) {
            assert!(w[1].fpr >= w[0].fpr);
        }
    }

    #[test]
    fn roc_on_uninformative_scores_hovers_at_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scores: Vec<f64> = (0..2000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<u8> = (0..2000).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        let (_, auc) = roc_auc(&scores, &y).unwrap();
        assert!((auc - 0.5).abs() < 0.05, "auc = {auc}");
    }

    #[test]
    fn roc_rejects_single_class() {
        assert!(roc_auc(&[0.1, 0.9], &[1, 1]).is_err());
    }

    #[test]
    fn reported_auc_is_the_trapezoid_of_reported_points() {
        let scores = [0.5, 0.5, 0.3, 0.9, 0.3, 0.7];
        let y = [1, 0, 0, 1, 1, 0];
        let (points, auc) = roc_auc(&scores, &y).unwrap();
        assert!((trapezoid(&points) - auc).abs() < 1e-12);
    }

    fn uniform_profiles(n: usize, seed: u64) -> Vec<AngleProfile> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                AngleProfile::new(
                    format!("img{i:04}"),
                    [(); 4].map(|_| Some(rng.gen_range(0.0..180.0))),
                )
            })
            .collect()
    }

    fn threshold_reference(profiles: &[AngleProfile], theta: f64) -> BTreeMap<ItemKey, u8> {
        let mut map = BTreeMap::new();
        for p in profiles {
            for limb in LimbPair::ALL {
                if let Some(a) = p.angle(limb) {
                    map.insert(ItemKey::new(p.image_id.clone(), limb), u8::from(a >= theta));
                }
            }
        }
        map
    }

    #[test]
    fn sweep_recovers_the_generating_threshold() {
        let profiles = uniform_profiles(300, 17);
        let reference = threshold_reference(&profiles, 40.0);
        let sweep =
            kappa_threshold_sweep(&profiles, &reference, &default_theta_grid()).unwrap();
        assert_eq!(sweep.theta_star, 40.0);
        assert_eq!(sweep.kappa_at_star, 1.0);
        for &(theta, kappa) in &sweep.curve {
            assert!(kappa <= 1.0);
            if theta != 40.0 {
                assert!(kappa < 1.0, "kappa 1 away from the cut at {theta}");
            }
        }
    }

    #[test]
    fn sweep_ties_resolve_to_the_smaller_angle() {
        // Angles only at 10 and 80 degrees: every cut in (10, 80] is perfect,
        // so the winner must be the smallest grid angle above 10.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let profiles: Vec<AngleProfile> = (0..50)
            .map(|i| {
                AngleProfile::new(
                    format!("img{i:02}"),
                    [(); 4].map(|_| Some(if rng.gen_bool(0.5) { 10.0 } else { 80.0 })),
                )
            })
            .collect();
        let reference = threshold_reference(&profiles, 45.0);
        let sweep =
            kappa_threshold_sweep(&profiles, &reference, &default_theta_grid()).unwrap();
        assert_eq!(sweep.theta_star, 11.0);
        assert_eq!(sweep.kappa_at_star, 1.0);
    }

    #[test]
    fn sweep_against_unrelated_labels_stays_near_zero() {
        let profiles = uniform_profiles(700, 29);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let reference: BTreeMap<ItemKey, u8> = profiles
            .iter()
            .flat_map(|p| {
                LimbPair::ALL.map(|limb| {
                    (ItemKey::new(p.image_id.clone(), limb), u8::from(rng.gen_bool(0.5)))
                })
            })
            .collect();
        let sweep =
            kappa_threshold_sweep(&profiles, &reference, &default_theta_grid()).unwrap();
        assert!(sweep.kappa_at_star < 0.1, "max kappa = {}", sweep.kappa_at_star);
    }

    #[test]
    fn calibrate_end_to_end_on_noisy_threshold_labels() {
        let profiles = uniform_profiles(400, 37);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut reference = threshold_reference(&profiles, 40.0);
        for v in reference.values_mut() {
            if rng.gen_bool(0.05) {
                *v = 1 - *v;
            }
        }
        let report =
            calibrate(&profiles, &reference, &default_theta_grid(), 1e-6, 99, true).unwrap();
        assert!(report.model.converged);
        assert!(report.model.coefficients[1] > 0.0, "angle raises asymmetry odds");
        // 5 percent flipped labels cap the achievable AUC near 0.91.
        assert!(report.auc > 0.87, "auc = {}", report.auc);
        assert!((report.theta_star - 40.0).abs() <= 3.0, "theta* = {}", report.theta_star);
        assert_eq!(report.n_train + report.n_test, 1600);
        assert_eq!(report.n_excluded, 0);
        let per_limb = report.per_limb.as_ref().unwrap();
        assert_eq!(per_limb.len(), 4);
        for limb_cal in per_limb.values() {
            assert!(limb_cal.auc > 0.8, "per-limb auc = {}", limb_cal.auc);
        }
        let max_kappa = report
            .kappa_curve
            .iter()
            .map(|&(_, k)| k)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max_kappa, report.kappa_at_theta_star);
        serde_json::to_string(&report).unwrap();
    }

    #[test]
    fn occluded_cells_are_counted_not_fit() {
        let mut profiles = uniform_profiles(100, 43);
        let reference = threshold_reference(&profiles, 40.0);
        // Invalidate some angles after the reference was built.
        for p in profiles.iter_mut().take(10) {
            let kept = [
                None,
                p.angle(LimbPair::LowerArm),
                p.angle(LimbPair::UpperLeg),
                p.angle(LimbPair::LowerLeg),
            ];
            *p = AngleProfile::new(p.image_id.clone(), kept);
        }
        let report =
            calibrate(&profiles, &reference, &default_theta_grid(), 1e-6, 3, false).unwrap();
        assert_eq!(report.n_excluded, 10);
        assert_eq!(report.n_train + report.n_test, 390);
        assert!(report.per_limb.is_none());
    }

    #[test]
    fn binarize_rules() {
        assert_eq!(binarize_class(0), 0);
        assert_eq!(binarize_class(1), 1);
        assert_eq!(binarize_class(2), 1);
        assert!((binarize_class_probs([0.2, 0.5, 0.3]) - 0.8).abs() < 1e-15);
    }
}
