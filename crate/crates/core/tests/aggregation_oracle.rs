//! EM consensus checked two independent ways: a brute-force grid search of
//! the exact marginal MAP objective on a tiny instance, and recovery of
//! known generative rater parameters at survey scale.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symmcal_core::aggregation::{em_binary, EmConfig, PriorSet, PriorSpec};
use symmcal_core::skeleton::{ItemKey, LabelMatrix, LimbPair};
use symmcal_core::synth::{simulate_ratings, ConfusionSpec, RaterSim, TruthCell};

/// Two items, three raters; raters 1 and 2 agree, rater 3 answers the
/// complement on both items.
fn tiny_matrix() -> LabelMatrix {
    LabelMatrix::new(
        vec!["r1".into(), "r2".into(), "r3".into()],
        vec![ItemKey::new("a", LimbPair::UpperArm), ItemKey::new("b", LimbPair::UpperArm)],
        vec![Some(1), Some(0), Some(1), Some(0), Some(0), Some(1)],
    )
}

/// Marginal MAP objective of the tiny instance, restricted to raters with
/// sensitivity == specificity == t_j: sum over items of
/// log(a_i p + b_i (1 - p)) plus the Beta(2,1) prior terms on both rates
/// (prevalence prior Beta(1,1) contributes nothing).
#[allow(clippy::needless_range_loop)]
fn tiny_objective(t: &[f64; 3], p: f64) -> f64 {
    let y = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]; // rater-major labels
    let mut lp = 0.0;
    for i in 0..2 {
        let (mut a, mut b) = (p, 1.0 - p);
        for j in 0..3 {
            if y[j][i] == 1.0 {
                a *= t[j];
                b *= 1.0 - t[j];
            } else {
                a *= 1.0 - t[j];
                b *= t[j];
            }
        }
        lp += (a + b).ln();
    }
    lp + t.iter().map(|v| 2.0 * v.ln()).sum::<f64>()
}

/// Posterior of item `i` under the E-step formula at given parameters.
fn tiny_posterior(t: &[f64; 3], p: f64, item: usize) -> f64 {
    let y = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let (mut a, mut b) = (p, 1.0 - p);
    for j in 0..3 {
        if y[j][item] == 1.0 {
            a *= t[j];
            b *= 1.0 - t[j];
        } else {
            a *= 1.0 - t[j];
            b *= t[j];
        }
    }
    a / (a + b)
}

/// Nested grid refinement over (t1, t2, t3, p) in (0, 1)^4.
fn grid_search() -> ([f64; 3], f64) {
    const POINTS: usize = 21;
    let mut ranges = [[0.001f64, 0.999]; 4];
    let mut best = ([0.5f64; 3], 0.5f64);
    for _stage in 0..4 {
        let axis: Vec<Vec<f64>> = ranges
            .iter()
            .map(|&[lo, hi]| {
                (0..POINTS).map(|k| lo + (hi - lo) * k as f64 / (POINTS - 1) as f64).collect()
            })
            .collect();
        let mut best_val = f64::NEG_INFINITY;
        for &t1 in &axis[0] {
            for &t2 in &axis[1] {
                for &t3 in &axis[2] {
                    for &p in &axis[3] {
                        let val = tiny_objective(&[t1, t2, t3], p);
                        if val > best_val {
                            best_val = val;
                            best = ([t1, t2, t3], p);
                        }
                    }
                }
            }
        }
        let coords = [best.0[0], best.0[1], best.0[2], best.1];
        for (r, &c) in ranges.iter_mut().zip(&coords) {
            let step = (r[1] - r[0]) / (POINTS - 1) as f64;
            *r = [(c - step).max(1e-6), (c + step).min(1.0 - 1e-6)];
        }
    }
    best
}

#[test]
fn em_matches_grid_search_map_oracle() {
    let (t, p) = grid_search();
    let oracle = [tiny_posterior(&t, p, 0), tiny_posterior(&t, p, 1)];
    // The agreeing raters dominate: item a is confidently asymmetric, item b
    // its complement. Pin the oracle itself so a broken grid edit is caught.
    assert!(oracle[0] > 0.999, "oracle posterior {:?}", oracle);
    assert!(oracle[1] < 0.001, "oracle posterior {:?}", oracle);
    assert!((oracle[0] + oracle[1] - 1.0).abs() < 1e-6);

    let config = EmConfig {
        priors: PriorSpec::Fixed(PriorSet::default()),
        ..EmConfig::seeded(5)
    };
    let result = em_binary(&tiny_matrix(), &config).unwrap();
    assert!(result.converged);
    for (i, (&mu, want)) in result.posteriors.iter().zip(oracle).enumerate() {
        assert!((mu - want).abs() < 1e-3, "item {i}: EM {mu} vs grid {want}");
    }
}

#[test]
fn em_recovers_generating_rater_parameters() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let raters: Vec<RaterSim> = (0..10)
        .map(|j| RaterSim {
            rater_id: format!("r{j:02}"),
            sensitivity: rng.gen_range(0.6..0.95),
            specificity: rng.gen_range(0.6..0.95),
            confusion: ConfusionSpec::Correct { correct: 1.0 },
        })
        .collect();

    // 700 images x 4 limb pairs at prevalence 0.3.
    let mut truth = Vec::new();
    for i in 0..700 {
        for pair in LimbPair::ALL {
            let asym = rng.gen_bool(0.3);
            truth.push(TruthCell {
                key: ItemKey::new(format!("img{i:04}"), pair),
                angle_deg: if asym { 90.0 } else { 0.0 },
                symmetry: u8::from(asym),
                angle_class: if asym { 2 } else { 0 },
            });
        }
    }
    let table = simulate_ratings(&truth, &raters, 99).unwrap();
    let labels = table.symmetry_matrix();
    assert_eq!(labels.n_items(), 2800);

    let config = EmConfig {
        priors: PriorSpec::Fixed(PriorSet::default()),
        ..EmConfig::seeded(7)
    };
    let result = em_binary(&labels, &config).unwrap();
    assert!(result.converged);

    let est: BTreeMap<&str, (f64, f64)> = result
        .profiles
        .iter()
        .map(|p| (p.rater_id.as_str(), (p.sensitivity, p.specificity)))
        .collect();
    for r in &raters {
        let (sens, spec) = est[r.rater_id.as_str()];
        assert!(
            (sens - r.sensitivity).abs() < 0.05,
            "{}: sensitivity {sens} vs true {}",
            r.rater_id,
            r.sensitivity
        );
        assert!(
            (spec - r.specificity).abs() < 0.05,
            "{}: specificity {spec} vs true {}",
            r.rater_id,
            r.specificity
        );
    }
    assert!((result.prevalence - 0.3).abs() < 0.02, "prevalence {}", result.prevalence);

    // Consensus must do at least as well as unweighted majority vote.
    let truth_by_key: BTreeMap<&ItemKey, u8> = truth.iter().map(|t| (&t.key, t.symmetry)).collect();
    let mut em_correct = 0usize;
    let mut mv_correct = 0usize;
    for (i, item) in result.items.iter().enumerate() {
        let want = truth_by_key[item];
        if result.hard_labels[i] == want {
            em_correct += 1;
        }
        let (mut ones, mut n) = (0usize, 0usize);
        for r in 0..labels.n_raters() {
            if let Some(v) = labels.get(r, i) {
                ones += usize::from(v == 1);
                n += 1;
            }
        }
        let mv = u8::from(ones * 2 >= n);
        if mv == want {
            mv_correct += 1;
        }
    }
    assert!(
        em_correct >= mv_correct,
        "EM accuracy {em_correct}/2800 below majority vote {mv_correct}/2800"
    );
    assert!(start.elapsed().as_secs_f64() < 10.0, "took {:?}", start.elapsed());
}
