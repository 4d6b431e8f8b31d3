//! Batch toolkit for bilateral postural symmetry measurement and noisy-rater
//! label analysis.
//!
//! The crate is organized around one flow:
//!
//! 1. [`skeleton`] loads 12-keypoint body poses (2-D or 3-D), per-rater survey
//!    ratings, and occlusion flags.
//! 2. [`geometry`] measures, for each of four bilateral limb pairs, the angle
//!    between the left limb and the mirror image of the right limb, where the
//!    mirror is the perpendicular bisector of the shoulder (arms) or hip
//!    (legs) girdle segment.
//! 3. [`aggregation`] fuses noisy per-rater binary or ordinal labels into
//!    consensus posteriors by EM with Beta priors, estimating each rater's
//!    sensitivity and specificity on the way.
//! 4. [`agreement`] quantifies how well raters (and pose-derived labelers)
//!    agree: Cohen's kappa, Krippendorff's alpha, inter-limb agreement, and
//!    symmetry-vs-angle internal consistency.
//! 5. [`calibration`] relates measured angles to consensus labels: logistic
//!    fit, ROC/AUC on a held-out split, and a kappa-maximizing threshold
//!    sweep that turns raw angles into a binary symmetry classifier.
//! 6. [`factors`] fits a multi-covariate logistic model of the symmetry
//!    labels and ranks covariate groups by drop-one pseudo-R² loss.
//! 7. [`synth`] generates skeletons with exactly known limb-pair angles and
//!    simulates raters with known error rates, so every estimator above can
//!    be checked against ground truth.
//! 8. [`pipeline`] runs the whole flow from one JSON config, writing
//!    deterministic, provenance-stamped artifacts.
//!
//! All randomness is seeded; identical inputs and seeds give bit-identical
//! outputs.

pub mod aggregation;
pub mod agreement;
pub mod calibration;
pub mod error;
pub mod factors;
pub mod geometry;
pub mod pipeline;
pub mod skeleton;
pub mod synth;
pub mod tables;

pub use error::{Error, Result};
