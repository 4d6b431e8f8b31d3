//! Synthetic data with known ground truth.
//!
//! [`make_skeleton`] builds a skeleton whose four limb-pair symmetry angles
//! equal caller-chosen targets: each left limb points in a random direction,
//! and the matching right limb is the mirror image of that direction rotated
//! away by exactly the target angle (about a random axis orthogonal to the
//! mirrored direction in 3-D, in the plane with a random sign in 2-D).
//! Girdle joints are fixed at shoulder width 2 and hip width 1.6 with unit
//! limb lengths, optionally followed by a random rigid motion, which the
//! angle measurement is invariant to.
//!
//! [`simulate_ratings`] corrupts known binary and ordinal labels through
//! per-rater error models, giving EM and agreement statistics a ground truth
//! to recover.
//!
//! Everything is driven by one seed; image `i` uses stream `i` of a counter
//! RNG, so each record is independent of batch size and order.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_class_of, reflect_vector, rotate_axis_angle, Vec3};
use crate::skeleton::{
    ItemKey, JointName, Keypoint, LimbPair, OcclusionTable, Posture, RatingRow, RatingTable, Side,
    Skeleton,
};

const SHOULDER_HALF_WIDTH: f64 = 1.0;
const HIP_HALF_WIDTH: f64 = 0.8;
const HIP_DROP: f64 = 1.5;

/// Target angle for one limb pair: a fixed value or a sampling range.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Fixed(f64),
    Uniform { uniform: [f64; 2] },
}

impl TargetSpec {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            TargetSpec::Fixed(v) => (0.0..=180.0).contains(&v),
            TargetSpec::Uniform { uniform: [lo, hi] } => {
                (0.0..=180.0).contains(&lo) && (0.0..=180.0).contains(&hi) && lo <= hi
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("target angles must lie in [0, 180]: {self:?}")))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            TargetSpec::Fixed(v) => v,
            TargetSpec::Uniform { uniform: [lo, hi] } => {
                if lo == hi {
                    lo
                } else {
                    rng.gen_range(lo..hi)
                }
            }
        }
    }
}

/// One target spec for all pairs, or one per pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetsSpec {
    Shared(TargetSpec),
    PerPair(BTreeMap<LimbPair, TargetSpec>),
}

impl TargetsSpec {
    fn validate(&self) -> Result<()> {
        match self {
            TargetsSpec::Shared(t) => t.validate(),
            TargetsSpec::PerPair(map) => {
                for pair in LimbPair::ALL {
                    map.get(&pair)
                        .ok_or_else(|| {
                            Error::validation(format!("targets missing limb pair `{pair}`"))
                        })?
                        .validate()?;
                }
                Ok(())
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 4] {
        LimbPair::ALL.map(|pair| match self {
            TargetsSpec::Shared(t) => t.sample(rng),
            TargetsSpec::PerPair(map) => map[&pair].sample(rng),
        })
    }
}

impl Default for TargetsSpec {
    fn default() -> Self {
        TargetsSpec::Shared(TargetSpec::Uniform { uniform: [0.0, 180.0] })
    }
}

/// Ordinal error model: explicit row-stochastic confusion rows (row = true
/// class, column = answered class), or a shorthand that puts `correct` mass
/// on the true class and splits the rest evenly.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfusionSpec {
    Correct { correct: f64 },
    Rows([[f64; 3]; 3]),
}

impl ConfusionSpec {
    fn validate(&self) -> Result<()> {
        match *self {
            ConfusionSpec::Correct { correct } => {
                if (0.0..=1.0).contains(&correct) {
                    Ok(())
                } else {
                    Err(Error::validation(format!("confusion `correct` must lie in [0, 1], got {correct}")))
                }
            }
            ConfusionSpec::Rows(rows) => {
                for (i, row) in rows.iter().enumerate() {
                    if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                        return Err(Error::validation(format!("confusion row {i} has entries outside [0, 1]")));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::validation(format!("confusion row {i} sums to {sum}, expected 1")));
                    }
                }
                Ok(())
            }
        }
    }

    fn rows(&self) -> [[f64; 3]; 3] {
        match *self {
            ConfusionSpec::Rows(rows) => rows,
            ConfusionSpec::Correct { correct } => {
                let rest = (1.0 - correct) / 2.0;
                [
                    [correct, rest, rest],
                    [rest, correct, rest],
                    [rest, rest, correct],
                ]
            }
        }
    }
}

impl Default for ConfusionSpec {
    fn default() -> Self {
        ConfusionSpec::Correct { correct: 0.8 }
    }
}

/// Error model of one simulated rater.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RaterSim {
    pub rater_id: String,
    /// P(answer asymmetric | truly asymmetric).
    pub sensitivity: f64,
    /// P(answer symmetric | truly symmetric).
    pub specificity: f64,
    #[serde(default)]
    pub confusion: ConfusionSpec,
}

impl RaterSim {
    fn validate(&self) -> Result<()> {
        for (name, p) in [("sensitivity", self.sensitivity), ("specificity", self.specificity)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!(
                    "rater `{}` {name} must lie in [0, 1], got {p}",
                    self.rater_id
                )));
            }
        }
        self.confusion.validate()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_images: usize,
    pub dim: u8,
    #[serde(default)]
    pub targets: TargetsSpec,
    /// Apply a random rotation and translation to every generated skeleton.
    #[serde(default)]
    pub rigid_transform: bool,
    /// Threshold that converts true angles into true symmetry labels.
    #[serde(default = "default_truth_threshold")]
    pub truth_threshold_deg: f64,
    /// Fraction of cells flagged occluded, sampled independently.
    #[serde(default)]
    pub occlusion_rate: f64,
    #[serde(default)]
    pub raters: Vec<RaterSim>,
}

fn default_truth_threshold() -> f64 {
    30.0
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::validation(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        if self.n_images == 0 {
            return Err(Error::validation("n_images must be at least 1".to_string()));
        }
        if !(self.truth_threshold_deg > 0.0 && self.truth_threshold_deg < 180.0) {
            return Err(Error::validation(format!(
                "truth_threshold_deg must lie in (0, 180), got {}",
                self.truth_threshold_deg
            )));
        }
        if !(0.0..=1.0).contains(&self.occlusion_rate) {
            return Err(Error::validation(format!(
                "occlusion_rate must lie in [0, 1], got {}",
                self.occlusion_rate
            )));
        }
        self.targets.validate()?;
        let mut ids = BTreeSet::new();
        for r in &self.raters {
            r.validate()?;
            if !ids.insert(&r.rater_id) {
                return Err(Error::validation(format!("duplicate rater_id `{}`", r.rater_id)));
            }
        }
        Ok(())
    }
}

/// Ground truth for one (image, limb) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthCell {
    pub key: ItemKey,
    pub angle_deg: f64,
    /// 1 = asymmetric (angle at or above the truth threshold).
    pub symmetry: u8,
    pub angle_class: u8,
}

#[derive(Clone, Debug)]
pub struct SynthBatch {
    pub skeletons: Vec<Skeleton>,
    pub truth: Vec<TruthCell>,
    pub ratings: RatingTable,
    pub occlusions: OcclusionTable,
}

fn random_unit(rng: &mut ChaCha8Rng, dim: u8) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            if dim == 3 { rng.gen_range(-1.0..1.0) } else { 0.0 },
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v * (1.0 / n);
        }
    }
}

/// A unit vector orthogonal to `m`.
fn random_orthogonal(rng: &mut ChaCha8Rng, m: Vec3) -> Vec3 {
    loop {
        let w = random_unit(rng, 3);
        let a = w - m * w.dot(m);
        if a.norm() > 0.1 {
            return a.normalized();
        }
    }
}

/// Direction whose reflection across `n` sits exactly `target` degrees away
/// from `left`.
fn right_direction(rng: &mut ChaCha8Rng, dim: u8, n: Vec3, left: Vec3, target: f64) -> Vec3 {
    let mirrored = reflect_vector(left, n);
    if dim == 2 {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        rotate_axis_angle(mirrored, Vec3::new(0.0, 0.0, 1.0), sign * target)
    } else {
        let axis = random_orthogonal(rng, mirrored);
        rotate_axis_angle(mirrored, axis, target)
    }
}

/// Build one skeleton whose limb-pair angles equal `targets` (degrees).
pub fn make_skeleton(
    image_id: impl Into<String>,
    dim: u8,
    targets: [f64; 4],
    rigid_transform: bool,
    posture: Posture,
    rng: &mut ChaCha8Rng,
) -> Skeleton {
    assert!(dim == 2 || dim == 3);
    let shoulder_l = Vec3::new(-SHOULDER_HALF_WIDTH, 0.0, 0.0);
    let shoulder_r = Vec3::new(SHOULDER_HALF_WIDTH, 0.0, 0.0);
    let hip_l = Vec3::new(-HIP_HALF_WIDTH, -HIP_DROP, 0.0);
    let hip_r = Vec3::new(HIP_HALF_WIDTH, -HIP_DROP, 0.0);
    // Both girdles lie along x before the rigid motion.
    let n = Vec3::new(1.0, 0.0, 0.0);

    let mut joints: BTreeMap<JointName, Vec3> = BTreeMap::new();
    joints.insert(JointName::LeftShoulder, shoulder_l);
    joints.insert(JointName::RightShoulder, shoulder_r);
    joints.insert(JointName::LeftHip, hip_l);
    joints.insert(JointName::RightHip, hip_r);

    for pair in LimbPair::ALL {
        let (lp, ld) = pair.segment(Side::Left);
        let (rp, rd) = pair.segment(Side::Right);
        let left_dir = random_unit(rng, dim);
        let right_dir = right_direction(rng, dim, n, left_dir, targets[pair.index()]);
        let left_prox = joints[&lp];
        let right_prox = joints[&rp];
        joints.insert(ld, left_prox + left_dir);
        joints.insert(rd, right_prox + right_dir);
    }

    if rigid_transform {
        let (axis, angle) = if dim == 2 {
            (Vec3::new(0.0, 0.0, 1.0), rng.gen_range(0.0..360.0))
        } else {
            (random_unit(rng, 3), rng.gen_range(0.0..360.0))
        };
        let shift = Vec3::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            if dim == 3 { rng.gen_range(-3.0..3.0) } else { 0.0 },
        );
        for pos in joints.values_mut() {
            *pos = rotate_axis_angle(*pos, axis, angle) + shift;
        }
    }

    Skeleton::new(
        image_id,
        dim,
        posture,
        joints.into_iter().map(|(name, pos)| {
            (name, Keypoint { pos, confidence: 1.0, visible: true })
        }),
    )
}

/// RNG for one image: stream `index` of the batch seed.
fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Generate the full batch: skeletons, per-cell ground truth, simulated
/// ratings, and occlusion flags.
pub fn generate(spec: &SynthSpec) -> Result<SynthBatch> {
    spec.validate()?;
    let ndigits = spec.n_images.to_string().len().max(4);
    let mut skeletons = Vec::with_capacity(spec.n_images);
    let mut truth = Vec::with_capacity(spec.n_images * 4);
    let mut occlusions = OcclusionTable::default();
    for i in 0..spec.n_images {
        let mut rng = image_rng(spec.seed, i);
        let image_id = format!("img{i:0ndigits$}");
        let targets = spec.targets.sample(&mut rng);
        let posture = Posture::KNOWN[rng.gen_range(0..Posture::KNOWN.len())];
        skeletons.push(make_skeleton(
            image_id.clone(),
            spec.dim,
            targets,
            spec.rigid_transform,
            posture,
            &mut rng,
        ));
        for pair in LimbPair::ALL {
            let angle = targets[pair.index()];
            let key = ItemKey::new(image_id.clone(), pair);
            truth.push(TruthCell {
                key: key.clone(),
                angle_deg: angle,
                symmetry: u8::from(angle >= spec.truth_threshold_deg),
                angle_class: angle_class_of(angle),
            });
            occlusions.insert(key, rng.gen_bool(spec.occlusion_rate))?;
        }
    }
    let ratings = simulate_ratings(&truth, &spec.raters, spec.seed)?;
    Ok(SynthBatch { skeletons, truth, ratings, occlusions })
}

/// Corrupt ground-truth labels through each rater's error model. Binary
/// symmetry answers follow the sensitivity/specificity coin flips; ordinal
/// answers are drawn from the rater's confusion row for the true class.
pub fn simulate_ratings(truth: &[TruthCell], raters: &[RaterSim], seed: u64) -> Result<RatingTable> {
    for r in raters {
        r.validate()?;
    }
    // Separate stream far above any image index, so ratings do not replay
    // skeleton randomness.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut rows = Vec::with_capacity(raters.len() * truth.len());
    for rater in raters {
        let confusion = rater.confusion.rows();
        for cell in truth {
            let symmetry = if cell.symmetry == 1 {
                u8::from(rng.gen_bool(rater.sensitivity))
            } else {
                1 - u8::from(rng.gen_bool(rater.specificity))
            };
            let row = confusion[cell.angle_class as usize];
            let draw: f64 = rng.gen_range(0.0..1.0);
            let angle_class = if draw < row[0] {
                0
            } else if draw < row[0] + row[1] {
                1
            } else {
                2
            };
            rows.push(RatingRow {
                rater_id: rater.rater_id.clone(),
                image_id: cell.key.image_id.clone(),
                limb: cell.key.limb,
                symmetry: Some(symmetry),
                angle_class: Some(angle_class),
            });
        }
    }
    RatingTable::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angle_profile;

    fn spec(seed: u64) -> SynthSpec {
        SynthSpec {
            seed,
            n_images: 8,
            dim: 3,
            targets: TargetsSpec::default(),
            rigid_transform: true,
            truth_threshold_deg: 30.0,
            occlusion_rate: 0.0,
            raters: vec![],
        }
    }

    #[test]
    fn zero_targets_give_mirror_perfect_skeleton() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dim in [2u8, 3] {
            let s = make_skeleton("z", dim, [0.0; 4], false, Posture::Unknown, &mut rng);
            let profile = angle_profile(&s);
            for pair in LimbPair::ALL {
                let a = profile.angle(pair).unwrap();
                assert!(a.abs() < 1e-9, "{dim}-D {pair}: {a}");
            }
        }
    }

    #[test]
    fn fixed_targets_are_reproduced_exactly() {
        let targets = [45.0, 10.0, 80.0, 5.0];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for dim in [2u8, 3] {
            for rigid in [false, true] {
                let s = make_skeleton("t", dim, targets, rigid, Posture::Unknown, &mut rng);
                let profile = angle_profile(&s);
                for pair in LimbPair::ALL {
                    let a = profile.angle(pair).unwrap();
                    let want = targets[pair.index()];
                    assert!(
                        (a - want).abs() < 1e-9,
                        "{dim}-D rigid={rigid} {pair}: {a} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn extreme_targets_survive_measurement() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in [2u8, 3] {
            let s = make_skeleton("e", dim, [0.0, 180.0, 0.001, 179.999], true, Posture::Unknown, &mut rng);
            let profile = angle_profile(&s);
            assert!(profile.angle(LimbPair::UpperArm).unwrap() < 1e-9);
            assert!((profile.angle(LimbPair::LowerArm).unwrap() - 180.0).abs() < 1e-9);
            assert!((profile.angle(LimbPair::UpperLeg).unwrap() - 0.001).abs() < 1e-9);
            assert!((profile.angle(LimbPair::LowerLeg).unwrap() - 179.999).abs() < 1e-9);
        }
    }

    #[test]
    fn generation_is_deterministic_and_order_free() {
        let a = generate(&spec(7)).unwrap();
        let b = generate(&spec(7)).unwrap();
        assert_eq!(a.skeletons, b.skeletons);
        assert_eq!(a.truth, b.truth);
        // Image i depends on (seed, i) only: a longer batch reproduces the
        // shorter one's records verbatim.
        let mut longer = spec(7);
        longer.n_images = 16;
        let c = generate(&longer).unwrap();
        assert_eq!(&c.skeletons[..8], &a.skeletons[..]);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate(&spec(7)).unwrap();
        let b = generate(&spec(8)).unwrap();
        assert_ne!(a.skeletons, b.skeletons);
    }

    #[test]
    fn perfect_raters_echo_truth() {
        let mut s = spec(9);
        s.raters = vec![RaterSim {
            rater_id: "r0".into(),
            sensitivity: 1.0,
            specificity: 1.0,
            confusion: ConfusionSpec::Correct { correct: 1.0 },
        }];
        let batch = generate(&s).unwrap();
        let by_key: BTreeMap<_, _> = batch.truth.iter().map(|t| (t.key.clone(), t)).collect();
        let table = &batch.ratings;
        for (i, item) in table.items().iter().enumerate() {
            let t = by_key[item];
            assert_eq!(table.symmetry_label(0, i), Some(t.symmetry));
            assert_eq!(table.angle_class_label(0, i), Some(t.angle_class));
        }
    }

    #[test]
    fn coin_flip_rater_is_uninformative() {
        let mut s = spec(10);
        s.n_images = 700;
        s.raters = vec![RaterSim {
            rater_id: "r0".into(),
            sensitivity: 0.5,
            specificity: 0.5,
            confusion: ConfusionSpec::Correct { correct: 1.0 / 3.0 },
        }];
        let batch = generate(&s).unwrap();
        let truth_by_key: BTreeMap<_, _> =
            batch.truth.iter().map(|t| (t.key.clone(), t.symmetry)).collect();
        let table = &batch.ratings;
        let (mut agree, mut n) = (0usize, 0usize);
        for (i, item) in table.items().iter().enumerate() {
            if table.symmetry_label(0, i) == Some(truth_by_key[item]) {
                agree += 1;
            }
            n += 1;
        }
        let rate = agree as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.05, "agreement rate {rate}");
    }

    #[test]
    fn confusion_shorthand_rows_are_stochastic() {
        let rows = ConfusionSpec::Correct { correct: 0.8 }.rows();
        for (i, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert_eq!(row[i], 0.8);
            for (j, &p) in row.iter().enumerate() {
                if j != i {
                    assert!((p - 0.1).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = spec(1);
        s.dim = 4;
        assert!(s.validate().is_err());
        let mut s = spec(1);
        s.targets = TargetsSpec::Shared(TargetSpec::Fixed(190.0));
        assert!(s.validate().is_err());
        let mut s = spec(1);
        s.raters = vec![RaterSim {
            rater_id: "r0".into(),
            sensitivity: 1.2,
            specificity: 0.5,
            confusion: ConfusionSpec::default(),
        }];
        assert!(s.validate().is_err());
    }
}
