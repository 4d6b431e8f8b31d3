//! Consensus labels from noisy raters.
//!
//! The binary model: each item carries a latent label z in {0, 1} with
//! prevalence p = P(z = 1); rater j answers 1 on a truly-1 item with
//! sensitivity alpha_j and answers 0 on a truly-0 item with specificity
//! beta_j. EM alternates
//!
//! * E-step: mu_i = a_i p / (a_i p + b_i (1 - p)) with
//!   a_i = prod_j alpha_j^y_ij (1 - alpha_j)^(1 - y_ij) and
//!   b_i = prod_j (1 - beta_j)^y_ij beta_j^(1 - y_ij), products over the
//!   raters who labeled item i;
//! * M-step (MAP with Beta(a, b) priors):
//!   alpha_j = (a_s - 1 + sum_i mu_i y_ij) / (a_s + b_s - 2 + sum_i mu_i),
//!   beta_j  = (a_c - 1 + sum_i (1 - mu_i)(1 - y_ij)) / (a_c + b_c - 2 + sum_i (1 - mu_i)),
//!   p       = (a_p - 1 + sum_i mu_i) / (a_p + b_p - 2 + N),
//!
//! starting from soft majority vote and stopping when no parameter moves by
//! more than `tol`. The log posterior (marginal likelihood plus Beta prior
//! terms) is tracked every iteration and asserted non-decreasing.
//!
//! Ordinal labels in {0, 1, 2} are aggregated by reducing to the two
//! cumulative binaries 1[class >= 1] and 1[class >= 2] and recombining the
//! posteriors into class probabilities.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agreement::cohen_kappa;
use crate::error::{Error, Result};
use crate::skeleton::{ItemKey, LabelMatrix};

/// Slack allowed in the monotone log-posterior assertion.
const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

impl BetaPrior {
    pub fn new(a: f64, b: f64) -> Result<BetaPrior> {
        if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
            Ok(BetaPrior { a, b })
        } else {
            Err(Error::validation(format!("Beta hyperparameters must be positive, got ({a}, {b})")))
        }
    }

    fn mean(self) -> f64 {
        self.a / (self.a + self.b)
    }

    /// Contribution to the log posterior, with 0 * log(0) read as 0 so that
    /// uniform priors stay finite at the boundary.
    fn log_density_term(self, x: f64) -> f64 {
        let mut lp = 0.0;
        if self.a != 1.0 {
            lp += (self.a - 1.0) * x.ln();
        }
        if self.b != 1.0 {
            lp += (self.b - 1.0) * (1.0 - x).ln();
        }
        lp
    }
}

/// Priors for the three parameter families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSet {
    pub sensitivity: BetaPrior,
    pub specificity: BetaPrior,
    pub prevalence: BetaPrior,
}

impl Default for PriorSet {
    /// Mild optimism that raters beat chance on both rates; flat prevalence.
    fn default() -> PriorSet {
        PriorSet {
            sensitivity: BetaPrior { a: 2.0, b: 1.0 },
            specificity: BetaPrior { a: 2.0, b: 1.0 },
            prevalence: BetaPrior { a: 1.0, b: 1.0 },
        }
    }
}

/// How hyperparameters are chosen: drawn once per run from Uniform[1, 5]
/// (seeded), or fixed by the caller.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PriorSpec {
    Random,
    Fixed(PriorSet),
}

impl PriorSpec {
    /// Resolve to concrete hyperparameters. A random spec consumes exactly
    /// six draws from the seed, before any rater is looked at, so results
    /// are invariant to rater order.
    fn resolve(self, seed: u64) -> PriorSet {
        match self {
            PriorSpec::Fixed(set) => set,
            PriorSpec::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut draw = || BetaPrior {
                    a: rng.gen_range(1.0..=5.0),
                    b: rng.gen_range(1.0..=5.0),
                };
                PriorSet { sensitivity: draw(), specificity: draw(), prevalence: draw() }
            }
        }
    }
}

/// Per-rater override of the sensitivity/specificity priors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaterPriors {
    pub sensitivity: BetaPrior,
    pub specificity: BetaPrior,
}

#[derive(Clone, Debug)]
pub struct EmConfig {
    pub priors: PriorSpec,
    /// Raters not listed here use the shared priors.
    pub rater_priors: BTreeMap<String, RaterPriors>,
    /// Convergence threshold on the largest parameter change.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl EmConfig {
    pub fn seeded(seed: u64) -> EmConfig {
        EmConfig {
            priors: PriorSpec::Random,
            rater_priors: BTreeMap::new(),
            tol: 1e-6,
            max_iter: 500,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::validation(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::validation("max_iter must be at least 1".to_string()));
        }
        if let PriorSpec::Fixed(set) = self.priors {
            for prior in [set.sensitivity, set.specificity, set.prevalence] {
                BetaPrior::new(prior.a, prior.b)?;
            }
        }
        for (id, rp) in &self.rater_priors {
            BetaPrior::new(rp.sensitivity.a, rp.sensitivity.b)
                .and(BetaPrior::new(rp.specificity.a, rp.specificity.b))
                .map_err(|_| {
                    Error::validation(format!("invalid prior override for rater `{id}`"))
                })?;
        }
        Ok(())
    }
}

/// Estimated error rates of one rater.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaterProfile {
    pub rater_id: String,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Result of binary aggregation. `posteriors[i]` is P(item i is positive)
/// for `items[i]`; `hard_labels` thresholds at 0.5 with ties going positive.
#[derive(Clone, Debug)]
pub struct BinaryAggregate {
    pub items: Vec<ItemKey>,
    pub posteriors: Vec<f64>,
    pub hard_labels: Vec<u8>,
    pub prevalence: f64,
    pub profiles: Vec<RaterProfile>,
    /// Raters with no observed labels, excluded from the fit.
    pub dropped_raters: Vec<String>,
    pub iterations: usize,
    pub converged: bool,
    /// Log posterior after each M-step; non-decreasing.
    pub log_posterior: Vec<f64>,
    /// Hyperparameters actually used (after any random draw).
    pub priors: PriorSet,
}

impl BinaryAggregate {
    pub fn posterior_map(&self) -> BTreeMap<ItemKey, f64> {
        self.items.iter().cloned().zip(self.posteriors.iter().copied()).collect()
    }

    pub fn hard_label_map(&self) -> BTreeMap<ItemKey, u8> {
        self.items.iter().cloned().zip(self.hard_labels.iter().copied()).collect()
    }
}

/// Soft majority vote: fraction of observed labels equal to 1, per item.
/// Errors if any item has no labels at all.
pub fn majority_init(labels: &LabelMatrix) -> Result<Vec<f64>> {
    let mut uncovered = Vec::new();
    let mut init = Vec::with_capacity(labels.n_items());
    for i in 0..labels.n_items() {
        let (mut ones, mut n) = (0usize, 0usize);
        for r in 0..labels.n_raters() {
            if let Some(v) = labels.get(r, i) {
                ones += usize::from(v == 1);
                n += 1;
            }
        }
        if n == 0 {
            uncovered.push(labels.items()[i].to_string());
        } else {
            init.push(ones as f64 / n as f64);
        }
    }
    if uncovered.is_empty() {
        Ok(init)
    } else {
        Err(Error::validation(format!("items with no labels: {}", uncovered.join(", "))))
    }
}

/// Majority-vote hard labels (ties go to 1, matching the posterior rule).
pub fn majority_hard(labels: &LabelMatrix) -> Result<Vec<u8>> {
    Ok(majority_init(labels)?.into_iter().map(|f| u8::from(f >= 0.5)).collect())
}

struct Params {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    p: f64,
}

impl Params {
    fn max_change(&self, other: &Params) -> f64 {
        let mut d: f64 = (self.p - other.p).abs();
        for (a, b) in self.alpha.iter().zip(&other.alpha) {
            d = d.max((a - b).abs());
        }
        for (a, b) in self.beta.iter().zip(&other.beta) {
            d = d.max((a - b).abs());
        }
        d
    }
}

/// MAP update of one Beta-Bernoulli rate: (a - 1 + hits) / (a + b - 2 + n).
/// Falls back to the prior mean when the posterior mass `n` vanishes and the
/// prior alone cannot locate a mode.
fn map_rate(prior: BetaPrior, hits: f64, n: f64) -> f64 {
    let den = prior.a + prior.b - 2.0 + n;
    if den <= 0.0 {
        return prior.mean();
    }
    ((prior.a - 1.0 + hits) / den).clamp(0.0, 1.0)
}

fn m_step(labels: &LabelMatrix, mu: &[f64], priors: &PriorSet, per_rater: &[RaterPriors]) -> Params {
    let n_items = labels.n_items();
    let mut alpha = Vec::with_capacity(labels.n_raters());
    let mut beta = Vec::with_capacity(labels.n_raters());
    for (r, rp) in per_rater.iter().enumerate() {
        let (mut pos_hits, mut pos_n) = (0.0, 0.0);
        let (mut neg_hits, mut neg_n) = (0.0, 0.0);
        for (i, &mu_i) in mu.iter().enumerate() {
            if let Some(y) = labels.get(r, i) {
                pos_n += mu_i;
                neg_n += 1.0 - mu_i;
                if y == 1 {
                    pos_hits += mu_i;
                } else {
                    neg_hits += 1.0 - mu_i;
                }
            }
        }
        alpha.push(map_rate(rp.sensitivity, pos_hits, pos_n));
        beta.push(map_rate(rp.specificity, neg_hits, neg_n));
    }
    let total_mu: f64 = mu.iter().sum();
    let p = map_rate(priors.prevalence, total_mu, n_items as f64);
    Params { alpha, beta, p }
}

/// E-step: posteriors and the marginal log likelihood at `params`, computed
/// in the log domain so boundary rates (exactly 0 or 1) stay well-defined.
fn e_step(labels: &LabelMatrix, params: &Params) -> (Vec<f64>, f64) {
    let (lp, lq) = (params.p.ln(), (1.0 - params.p).ln());
    let mut mu = Vec::with_capacity(labels.n_items());
    let mut loglik = 0.0;
    for i in 0..labels.n_items() {
        let (mut la, mut lb) = (lp, lq);
        for r in 0..labels.n_raters() {
            if let Some(y) = labels.get(r, i) {
                if y == 1 {
                    la += params.alpha[r].ln();
                    lb += (1.0 - params.beta[r]).ln();
                } else {
                    la += (1.0 - params.alpha[r]).ln();
                    lb += params.beta[r].ln();
                }
            }
        }
        let post = if la == f64::NEG_INFINITY && lb == f64::NEG_INFINITY {
            // Contradictory labels under boundary rates; unreachable with
            // hyperparameters above 1. Fall back to the prevalence.
            params.p
        } else {
            1.0 / (1.0 + (lb - la).exp())
        };
        mu.push(post);
        loglik += log_sum_exp(la, lb);
    }
    (mu, loglik)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

fn log_posterior(loglik: f64, params: &Params, priors: &PriorSet, per_rater: &[RaterPriors]) -> f64 {
    let mut lp = loglik + priors.prevalence.log_density_term(params.p);
    for (r, rp) in per_rater.iter().enumerate() {
        lp += rp.sensitivity.log_density_term(params.alpha[r]);
        lp += rp.specificity.log_density_term(params.beta[r]);
    }
    lp
}

/// Drop raters that labeled nothing; they carry no information and would
/// make their own parameters undefined.
fn retain_active_raters(labels: &LabelMatrix) -> (LabelMatrix, Vec<String>) {
    let active: Vec<usize> = (0..labels.n_raters())
        .filter(|&r| labels.rater_row(r).iter().any(Option::is_some))
        .collect();
    if active.len() == labels.n_raters() {
        return (labels.clone(), Vec::new());
    }
    let dropped: Vec<String> = (0..labels.n_raters())
        .filter(|r| !active.contains(r))
        .map(|r| labels.raters()[r].clone())
        .collect();
    for id in &dropped {
        log::warn!("rater `{id}` has no labels and was dropped from aggregation");
    }
    let raters: Vec<String> = active.iter().map(|&r| labels.raters()[r].clone()).collect();
    let mut values = Vec::with_capacity(raters.len() * labels.n_items());
    for &r in &active {
        values.extend_from_slice(labels.rater_row(r));
    }
    (LabelMatrix::new(raters, labels.items().to_vec(), values), dropped)
}

/// Aggregate binary labels (values must be 0/1) into consensus posteriors.
pub fn em_binary(labels: &LabelMatrix, config: &EmConfig) -> Result<BinaryAggregate> {
    config.validate()?;
    if labels.n_items() == 0 {
        return Err(Error::validation("label matrix has no items".to_string()));
    }
    let (labels, dropped) = retain_active_raters(labels);
    if labels.n_raters() == 0 {
        return Err(Error::validation("label matrix has no raters with labels".to_string()));
    }
    for r in 0..labels.n_raters() {
        if let Some(v) = labels.rater_row(r).iter().flatten().find(|&&v| v > 1) {
            return Err(Error::validation(format!(
                "binary aggregation got label {v} from rater `{}`",
                labels.raters()[r]
            )));
        }
    }

    let priors = config.priors.resolve(config.seed);
    let per_rater: Vec<RaterPriors> = labels
        .raters()
        .iter()
        .map(|id| {
            config.rater_priors.get(id).copied().unwrap_or(RaterPriors {
                sensitivity: priors.sensitivity,
                specificity: priors.specificity,
            })
        })
        .collect();

    let mu0 = majority_init(&labels)?;
    let mut params = m_step(&labels, &mu0, &priors, &per_rater);
    let (mut mu, loglik) = e_step(&labels, &params);
    let mut lp = log_posterior(loglik, &params, &priors, &per_rater);
    let mut trace = vec![lp];
    let mut iterations = 1usize;
    let mut converged = false;

    while iterations < config.max_iter {
        let next = m_step(&labels, &mu, &priors, &per_rater);
        let (next_mu, loglik) = e_step(&labels, &next);
        let next_lp = log_posterior(loglik, &next, &priors, &per_rater);
        assert!(
            next_lp >= lp - MONOTONE_SLACK,
            "log posterior decreased: {lp} -> {next_lp} at iteration {iterations}"
        );
        let delta = next.max_change(&params);
        params = next;
        mu = next_mu;
        lp = next_lp;
        trace.push(lp);
        iterations += 1;
        if delta < config.tol {
            converged = true;
            break;
        }
    }

    let hard_labels = mu.iter().map(|&m| u8::from(m >= 0.5)).collect();
    let profiles = labels
        .raters()
        .iter()
        .enumerate()
        .map(|(r, id)| RaterProfile {
            rater_id: id.clone(),
            sensitivity: params.alpha[r],
            specificity: params.beta[r],
        })
        .collect();
    Ok(BinaryAggregate {
        items: labels.items().to_vec(),
        posteriors: mu,
        hard_labels,
        prevalence: params.p,
        profiles,
        dropped_raters: dropped,
        iterations,
        converged,
        log_posterior: trace,
        priors,
    })
}

/// Combine cumulative posteriors q1 = P(class >= 1), q2 = P(class >= 2)
/// into class probabilities. A negative middle mass (q2 > q1, possible
/// because the two binary runs are fit separately) is clamped to zero and
/// the remainder renormalized.
pub fn combine_ordinal(q1: f64, q2: f64) -> [f64; 3] {
    debug_assert!((0.0..=1.0).contains(&q1) && (0.0..=1.0).contains(&q2));
    let raw = [1.0 - q1, q1 - q2, q2];
    if raw[1] >= 0.0 {
        raw
    } else {
        let rest = raw[0] + raw[2];
        [raw[0] / rest, 0.0, raw[2] / rest]
    }
}

/// Argmax with ties broken toward the lower class.
pub fn hard_class(probs: [f64; 3]) -> u8 {
    let mut best = 0usize;
    for c in 1..3 {
        if probs[c] > probs[best] {
            best = c;
        }
    }
    best as u8
}

/// Result of ordinal aggregation over classes {0, 1, 2}.
#[derive(Clone, Debug)]
pub struct OrdinalAggregate {
    pub items: Vec<ItemKey>,
    pub class_probs: Vec<[f64; 3]>,
    pub hard_classes: Vec<u8>,
    /// Binary sub-run for 1[class >= 1].
    pub at_least_one: BinaryAggregate,
    /// Binary sub-run for 1[class >= 2].
    pub at_least_two: BinaryAggregate,
}

impl OrdinalAggregate {
    pub fn hard_class_map(&self) -> BTreeMap<ItemKey, u8> {
        self.items.iter().cloned().zip(self.hard_classes.iter().copied()).collect()
    }
}

fn cumulative_matrix(labels: &LabelMatrix, threshold: u8) -> LabelMatrix {
    let values = (0..labels.n_raters())
        .flat_map(|r| {
            labels.rater_row(r).iter().map(move |v| v.map(|c| u8::from(c >= threshold)))
        })
        .collect();
    LabelMatrix::new(labels.raters().to_vec(), labels.items().to_vec(), values)
}

/// Aggregate ordinal labels (values 0/1/2) via the two cumulative binary
/// problems. Both sub-runs share one resolved prior set, so a random prior
/// spec consumes the seed exactly once.
pub fn em_ordinal(labels: &LabelMatrix, config: &EmConfig) -> Result<OrdinalAggregate> {
    config.validate()?;
    for r in 0..labels.n_raters() {
        if let Some(v) = labels.rater_row(r).iter().flatten().find(|&&v| v > 2) {
            return Err(Error::validation(format!(
                "ordinal aggregation got label {v} from rater `{}`",
                labels.raters()[r]
            )));
        }
    }
    let shared = EmConfig {
        priors: PriorSpec::Fixed(config.priors.resolve(config.seed)),
        ..config.clone()
    };
    let at_least_one = em_binary(&cumulative_matrix(labels, 1), &shared)?;
    let at_least_two = em_binary(&cumulative_matrix(labels, 2), &shared)?;
    let class_probs: Vec<[f64; 3]> = at_least_one
        .posteriors
        .iter()
        .zip(&at_least_two.posteriors)
        .map(|(&q1, &q2)| combine_ordinal(q1, q2))
        .collect();
    let hard_classes = class_probs.iter().map(|&p| hard_class(p)).collect();
    Ok(OrdinalAggregate {
        items: at_least_one.items.clone(),
        class_probs,
        hard_classes,
        at_least_one,
        at_least_two,
    })
}

/// One rater's empirical performance against the consensus hard labels,
/// over the cells the rater answered.
#[derive(Clone, Debug, Serialize)]
pub struct RaterReportRow {
    pub rater_id: String,
    pub n_labeled: usize,
    /// EM estimates.
    pub em_sensitivity: f64,
    pub em_specificity: f64,
    /// Empirical rates vs the consensus; undefined when the consensus has
    /// no positive (respectively negative) cell for this rater.
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: f64,
    pub kappa: Option<f64>,
}

pub fn rater_report(labels: &LabelMatrix, aggregate: &BinaryAggregate) -> Vec<RaterReportRow> {
    let item_index: BTreeMap<&ItemKey, usize> =
        aggregate.items.iter().enumerate().map(|(i, k)| (k, i)).collect();
    aggregate
        .profiles
        .iter()
        .map(|profile| {
            let r = labels.raters().iter().position(|id| id == &profile.rater_id).expect("profile rater in matrix");
            let (mut tp, mut fp, mut tn, mut fnn) = (0usize, 0usize, 0usize, 0usize);
            let mut pairs: Vec<(Option<u8>, Option<u8>)> = Vec::new();
            for (i, item) in labels.items().iter().enumerate() {
                let Some(y) = labels.get(r, i) else { continue };
                let truth = aggregate.hard_labels[item_index[item]];
                match (truth, y) {
                    (1, 1) => tp += 1,
                    (1, 0) => fnn += 1,
                    (0, 0) => tn += 1,
                    (0, _) => fp += 1,
                    _ => unreachable!("labels validated binary"),
                }
                pairs.push((Some(y), Some(truth)));
            }
            let n = tp + fp + tn + fnn;
            let ratio = |num: usize, den: usize| {
                (den > 0).then(|| num as f64 / den as f64)
            };
            RaterReportRow {
                rater_id: profile.rater_id.clone(),
                n_labeled: n,
                em_sensitivity: profile.sensitivity,
                em_specificity: profile.specificity,
                sensitivity: ratio(tp, tp + fnn),
                specificity: ratio(tn, tn + fp),
                accuracy: if n > 0 { (tp + tn) as f64 / n as f64 } else { f64::NAN },
                kappa: cohen_kappa(&pairs).ok(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{LimbPair, RatingRow, RatingTable};

    fn key(id: &str) -> ItemKey {
        ItemKey::new(id, LimbPair::UpperArm)
    }

    fn matrix(raters: &[&str], items: &[&str], values: &[Option<u8>]) -> LabelMatrix {
        LabelMatrix::new(
            raters.iter().map(|s| s.to_string()).collect(),
            items.iter().map(|s| key(s)).collect(),
            values.to_vec(),
        )
    }

    #[test]
    fn majority_init_fractions() {
        let m = matrix(
            &["r1", "r2", "r3", "r4"],
            &["a", "b"],
            &[
                Some(1), Some(1),
                Some(1), Some(0),
                Some(1), Some(0),
                Some(0), None,
            ],
        );
        let init = majority_init(&m).unwrap();
        assert_eq!(init, vec![0.75, 1.0 / 3.0]);
    }

    #[test]
    fn majority_tie_is_half() {
        let m = matrix(&["r1", "r2"], &["a"], &[Some(1), Some(0)]);
        assert_eq!(majority_init(&m).unwrap(), vec![0.5]);
        assert_eq!(majority_hard(&m).unwrap(), vec![1]);
    }

    #[test]
    fn unlabeled_item_is_an_error() {
        let m = matrix(&["r1"], &["a", "b"], &[Some(1), None]);
        let err = majority_init(&m).unwrap_err();
        assert!(err.to_string().contains("b/upper_arm"), "got: {err}");
    }

    fn uniform_config(seed: u64) -> EmConfig {
        EmConfig {
            priors: PriorSpec::Fixed(PriorSet {
                sensitivity: BetaPrior { a: 1.0, b: 1.0 },
                specificity: BetaPrior { a: 1.0, b: 1.0 },
                prevalence: BetaPrior { a: 1.0, b: 1.0 },
            }),
            ..EmConfig::seeded(seed)
        }
    }

    #[test]
    fn unanimous_labels_are_a_fixed_point() {
        // 10 raters, unanimous on every item, uniform priors: posteriors hit
        // the observed labels exactly and EM stops after two iterations.
        let rater_names: Vec<String> = (0..10).map(|j| format!("r{j}")).collect();
        let items: Vec<ItemKey> = ["a", "b", "c", "d"].iter().map(|s| key(s)).collect();
        let truth = [1u8, 0, 1, 0];
        let values: Vec<Option<u8>> =
            (0..10).flat_map(|_| truth.iter().map(|&v| Some(v))).collect();
        let m = LabelMatrix::new(rater_names, items, values);
        let result = em_binary(&m, &uniform_config(1)).unwrap();
        assert!(result.converged);
        assert!(result.iterations <= 2, "took {} iterations", result.iterations);
        assert_eq!(result.posteriors, vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(result.hard_labels, vec![1, 0, 1, 0]);
        assert!((result.prevalence - 0.5).abs() < 1e-12);
    }

    #[test]
    fn log_posterior_is_monotone_and_recorded() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..20 {
            let raters: Vec<String> = (0..5).map(|j| format!("r{j}")).collect();
            let items: Vec<ItemKey> = (0..40).map(|i| key(&format!("i{i:02}"))).collect();
            let values: Vec<Option<u8>> = (0..5 * 40)
                .map(|_| {
                    if rng.gen_bool(0.1) {
                        None
                    } else {
                        Some(u8::from(rng.gen_bool(0.5)))
                    }
                })
                .collect();
            let m = LabelMatrix::new(raters, items, values);
            if majority_init(&m).is_err() {
                continue;
            }
            let result = em_binary(&m, &EmConfig::seeded(trial)).unwrap();
            for w in result.log_posterior.windows(2) {
                assert!(w[1] >= w[0] - MONOTONE_SLACK, "trace not monotone: {:?}", result.log_posterior);
            }
            for &mu in &result.posteriors {
                assert!((0.0..=1.0).contains(&mu));
            }
        }
    }

    #[test]
    fn row_order_does_not_change_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rows = Vec::new();
        for j in 0..6 {
            for i in 0..30 {
                if rng.gen_bool(0.9) {
                    rows.push(RatingRow {
                        rater_id: format!("r{j}"),
                        image_id: format!("i{i:02}"),
                        limb: LimbPair::ALL[i % 4],
                        symmetry: Some(u8::from(rng.gen_bool(0.4))),
                        angle_class: None,
                    });
                }
            }
        }
        let forward = RatingTable::from_rows(rows.clone()).unwrap();
        rows.reverse();
        let reversed = RatingTable::from_rows(rows).unwrap();
        let a = em_binary(&forward.symmetry_matrix(), &EmConfig::seeded(9)).unwrap();
        let b = em_binary(&reversed.symmetry_matrix(), &EmConfig::seeded(9)).unwrap();
        // Bit-for-bit: canonical ordering makes arrival order irrelevant.
        assert_eq!(a.posteriors, b.posteriors);
        assert_eq!(a.prevalence, b.prevalence);
    }

    #[test]
    fn label_flip_mirrors_posteriors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let raters: Vec<String> = (0..5).map(|j| format!("r{j}")).collect();
        let items: Vec<ItemKey> = (0..50).map(|i| key(&format!("i{i:02}"))).collect();
        let values: Vec<Option<u8>> =
            (0..5 * 50).map(|_| rng.gen_bool(0.85).then(|| u8::from(rng.gen_bool(0.3)))).collect();
        let m = LabelMatrix::new(raters.clone(), items.clone(), values.clone());
        let flipped = LabelMatrix::new(
            raters,
            items,
            values.iter().map(|v| v.map(|x| 1 - x)).collect(),
        );
        // Symmetric priors: flipping labels swaps the roles of the two rates
        // and mirrors prevalence and posteriors.
        let config = uniform_config(5);
        let a = em_binary(&m, &config).unwrap();
        let b = em_binary(&flipped, &config).unwrap();
        assert!((a.prevalence - (1.0 - b.prevalence)).abs() < 1e-9);
        for (x, y) in a.posteriors.iter().zip(&b.posteriors) {
            assert!((x - (1.0 - y)).abs() < 1e-9);
        }
        for (pa, pb) in a.profiles.iter().zip(&b.profiles) {
            assert!((pa.sensitivity - pb.specificity).abs() < 1e-9);
            assert!((pa.specificity - pb.sensitivity).abs() < 1e-9);
        }
    }

    #[test]
    fn random_priors_are_seed_deterministic() {
        let m = matrix(
            &["r1", "r2", "r3"],
            &["a", "b", "c"],
            &[
                Some(1), Some(0), Some(1),
                Some(1), Some(0), Some(0),
                Some(0), Some(0), Some(1),
            ],
        );
        let a = em_binary(&m, &EmConfig::seeded(11)).unwrap();
        let b = em_binary(&m, &EmConfig::seeded(11)).unwrap();
        assert_eq!(a.posteriors, b.posteriors);
        assert_eq!(a.priors, b.priors);
        let c = em_binary(&m, &EmConfig::seeded(12)).unwrap();
        assert_ne!(a.priors, c.priors);
        for set in [a.priors, c.priors] {
            for prior in [set.sensitivity, set.specificity, set.prevalence] {
                assert!((1.0..=5.0).contains(&prior.a) && (1.0..=5.0).contains(&prior.b));
            }
        }
    }

    #[test]
    fn silent_rater_is_dropped_with_record() {
        let m = matrix(
            &["quiet", "r1", "r2"],
            &["a", "b"],
            &[None, None, Some(1), Some(1), Some(1), Some(0)],
        );
        let result = em_binary(&m, &EmConfig::seeded(1)).unwrap();
        assert_eq!(result.dropped_raters, vec!["quiet".to_string()]);
        assert_eq!(result.profiles.len(), 2);
    }

    #[test]
    fn combine_ordinal_basic_and_clamped() {
        assert_eq!(combine_ordinal(0.9, 0.4), [0.09999999999999998, 0.5, 0.4]);
        let p = combine_ordinal(0.3, 0.5);
        assert!((p[0] - 0.7 / 1.2).abs() < 1e-12);
        assert_eq!(p[1], 0.0);
        assert!((p[2] - 0.5 / 1.2).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hard_class_breaks_ties_low() {
        assert_eq!(hard_class([0.4, 0.4, 0.2]), 0);
        assert_eq!(hard_class([0.2, 0.4, 0.4]), 1);
        assert_eq!(hard_class([0.1, 0.2, 0.7]), 2);
    }

    #[test]
    fn unanimous_ordinal_concentrates_on_observed_class() {
        let rater_names: Vec<String> = (0..6).map(|j| format!("r{j}")).collect();
        let items: Vec<ItemKey> = ["a", "b", "c"].iter().map(|s| key(s)).collect();
        let truth = [2u8, 0, 1];
        let values: Vec<Option<u8>> =
            (0..6).flat_map(|_| truth.iter().map(|&v| Some(v))).collect();
        let m = LabelMatrix::new(rater_names, items, values);
        let result = em_ordinal(&m, &uniform_config(2)).unwrap();
        assert_eq!(result.hard_classes, vec![2, 0, 1]);
        for (probs, &want) in result.class_probs.iter().zip(&truth) {
            assert!(probs[want as usize] > 0.999, "{probs:?} for class {want}");
        }
    }

    #[test]
    fn rater_report_extremes() {
        // r1 matches the consensus everywhere; r3 answers 1 unconditionally.
        let m = matrix(
            &["r1", "r2", "r3", "r4"],
            &["a", "b", "c", "d"],
            &[
                Some(1), Some(0), Some(1), Some(0),
                Some(1), Some(0), Some(1), Some(0),
                Some(1), Some(1), Some(1), Some(1),
                Some(1), Some(0), Some(0), Some(0),
            ],
        );
        let result = em_binary(&m, &uniform_config(3)).unwrap();
        assert_eq!(result.hard_labels, vec![1, 0, 1, 0]);
        let report = rater_report(&m, &result);
        let r1 = &report[0];
        assert_eq!(r1.sensitivity, Some(1.0));
        assert_eq!(r1.specificity, Some(1.0));
        assert_eq!(r1.accuracy, 1.0);
        assert_eq!(r1.kappa, Some(1.0));
        let r3 = &report[2];
        assert_eq!(r3.sensitivity, Some(1.0));
        assert_eq!(r3.specificity, Some(0.0));
        assert_eq!(r3.kappa, Some(0.0));
    }
}
