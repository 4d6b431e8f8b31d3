//! Bilateral limb-pair symmetry angles.
//!
//! For a limb pair the measurement is: reflect the right limb's direction
//! across the mid-perpendicular of its girdle segment (shoulder girdle for
//! arm pairs, hip girdle for leg pairs) and take the angle between that
//! reflection and the left limb's direction. A perfectly mirror-symmetric
//! pose scores 0° on every pair; the angle grows toward 180° as the limbs
//! disagree.
//!
//! Angles are undefined (not an error) when any required joint is invisible,
//! a limb segment has near-zero length, or the girdle joints coincide.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Girdle, LimbPair, Side, Skeleton};

/// Segment lengths below this are treated as degenerate.
pub const EPS_LEN: f64 = 1e-6;

/// Angle-class boundaries in degrees: class 0 below 30, class 1 in
/// [30, 60), class 2 at and above 60.
pub const CLASS_BOUNDS_DEG: [f64; 2] = [30.0, 60.0];

/// Minimal 3-vector. 2-D data is embedded with z = 0, which leaves every
/// angle and reflection identical to the planar computation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit vector in the same direction. Caller must ensure the norm is
    /// bounded away from zero.
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        debug_assert!(n > 0.0);
        self * (1.0 / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self * -1.0
    }
}

/// Unit normal of the girdle's mid-perpendicular mirror, oriented from the
/// left joint toward the right joint.
pub fn mirror_normal(s: &Skeleton, girdle: Girdle) -> Result<Vec3> {
    let (left, right) = girdle.joints();
    for j in [left, right] {
        if !s.keypoint(j).visible {
            return Err(Error::Undefined(format!(
                "girdle joint {j} of image `{}` is not visible",
                s.image_id
            )));
        }
    }
    let g = s.position(right) - s.position(left);
    if g.norm() < EPS_LEN {
        return Err(Error::DegenerateGirdle(format!(
            "{left} and {right} of image `{}` coincide",
            s.image_id
        )));
    }
    Ok(g.normalized())
}

/// Reflect `v` across the plane with unit normal `n`: v - 2 (v . n) n.
pub fn reflect_vector(v: Vec3, n: Vec3) -> Vec3 {
    debug_assert!((n.norm() - 1.0).abs() < 1e-9, "mirror normal must be unit length");
    v - n * (2.0 * v.dot(n))
}

/// Angle between two nonzero vectors in degrees, in [0, 180].
///
/// Equal to `acos` of the clamped normalized inner product, but evaluated in
/// atan2 form so that conditioning stays good near 0° and 180°.
pub fn angle_between_deg(u: Vec3, v: Vec3) -> f64 {
    u.cross(v).norm().atan2(u.dot(v)).to_degrees()
}

/// Symmetry angle of one limb pair, or `None` where undefined.
pub fn limb_angle(s: &Skeleton, pair: LimbPair) -> Option<f64> {
    if pair.required_joints().iter().any(|&j| !s.keypoint(j).visible) {
        return None;
    }
    let n = match mirror_normal(s, pair.girdle()) {
        Ok(n) => n,
        Err(_) => return None,
    };
    let (lp, ld) = pair.segment(Side::Left);
    let (rp, rd) = pair.segment(Side::Right);
    let v_l = s.position(ld) - s.position(lp);
    let v_r = s.position(rd) - s.position(rp);
    if v_l.norm() < EPS_LEN || v_r.norm() < EPS_LEN {
        return None;
    }
    Some(angle_between_deg(reflect_vector(v_r, n), v_l))
}

/// All four limb-pair angles of one skeleton.
#[derive(Clone, Debug, PartialEq)]
pub struct AngleProfile {
    pub image_id: String,
    angles: [Option<f64>; 4],
}

impl AngleProfile {
    pub fn new(image_id: impl Into<String>, angles: [Option<f64>; 4]) -> AngleProfile {
        AngleProfile { image_id: image_id.into(), angles }
    }

    pub fn angle(&self, pair: LimbPair) -> Option<f64> {
        self.angles[pair.index()]
    }

    /// True when the pair's angle is defined.
    pub fn is_valid(&self, pair: LimbPair) -> bool {
        self.angles[pair.index()].is_some()
    }

    pub fn angles(&self) -> &[Option<f64>; 4] {
        &self.angles
    }
}

pub fn angle_profile(s: &Skeleton) -> AngleProfile {
    AngleProfile {
        image_id: s.image_id.clone(),
        angles: LimbPair::ALL.map(|pair| limb_angle(s, pair)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryLabel {
    Symmetric,
    Asymmetric,
}

impl SymmetryLabel {
    /// Binary encoding: asymmetric is the positive class.
    pub fn as_u8(self) -> u8 {
        match self {
            SymmetryLabel::Symmetric => 0,
            SymmetryLabel::Asymmetric => 1,
        }
    }

    pub fn from_u8(v: u8) -> SymmetryLabel {
        if v == 0 { SymmetryLabel::Symmetric } else { SymmetryLabel::Asymmetric }
    }

    /// Asymmetric at and above the threshold.
    pub fn from_angle(angle_deg: f64, threshold_deg: f64) -> SymmetryLabel {
        if angle_deg >= threshold_deg {
            SymmetryLabel::Asymmetric
        } else {
            SymmetryLabel::Symmetric
        }
    }
}

/// Thresholded symmetry labels for one skeleton.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryAssessment {
    pub image_id: String,
    pub threshold_deg: f64,
    labels: [Option<SymmetryLabel>; 4],
}

impl SymmetryAssessment {
    pub fn label(&self, pair: LimbPair) -> Option<SymmetryLabel> {
        self.labels[pair.index()]
    }
}

/// Label each defined pair: asymmetric when its angle is at or above the
/// threshold, symmetric below. `threshold_deg` must lie in (0, 180).
pub fn assess(profile: &AngleProfile, threshold_deg: f64) -> SymmetryAssessment {
    assert!(
        threshold_deg > 0.0 && threshold_deg < 180.0,
        "threshold must lie in (0, 180), got {threshold_deg}"
    );
    SymmetryAssessment {
        image_id: profile.image_id.clone(),
        threshold_deg,
        labels: LimbPair::ALL.map(|pair| {
            profile.angle(pair).map(|a| {
                if a >= threshold_deg {
                    SymmetryLabel::Asymmetric
                } else {
                    SymmetryLabel::Symmetric
                }
            })
        }),
    }
}

/// Ordinal angle class: 0 below 30°, 1 in [30°, 60°), 2 at and above 60°.
pub fn angle_class_of(angle_deg: f64) -> u8 {
    debug_assert!((0.0..=180.0).contains(&angle_deg));
    if angle_deg < CLASS_BOUNDS_DEG[0] {
        0
    } else if angle_deg < CLASS_BOUNDS_DEG[1] {
        1
    } else {
        2
    }
}

/// Per-limb histogram of defined angles over [0, 180].
#[derive(Clone, Debug, PartialEq)]
pub struct AngleHistogram {
    pub bin_width_deg: f64,
    /// `counts[pair.index()][bin]`; the final bin is closed at 180.
    pub counts: [Vec<u32>; 4],
}

impl AngleHistogram {
    pub fn n_bins(&self) -> usize {
        self.counts[0].len()
    }

    pub fn bin_edges(&self, bin: usize) -> (f64, f64) {
        let lo = bin as f64 * self.bin_width_deg;
        (lo, (lo + self.bin_width_deg).min(180.0))
    }
}

pub fn angle_histogram(profiles: &[AngleProfile], bin_width_deg: f64) -> AngleHistogram {
    assert!(bin_width_deg > 0.0 && bin_width_deg <= 180.0);
    let n_bins = (180.0 / bin_width_deg).ceil() as usize;
    let mut counts: [Vec<u32>; 4] = std::array::from_fn(|_| vec![0u32; n_bins]);
    for p in profiles {
        for pair in LimbPair::ALL {
            if let Some(a) = p.angle(pair) {
                let bin = ((a / bin_width_deg) as usize).min(n_bins - 1);
                counts[pair.index()][bin] += 1;
            }
        }
    }
    AngleHistogram { bin_width_deg, counts }
}

/// Rotate `v` by `degrees` about the given unit axis (Rodrigues form).
pub fn rotate_axis_angle(v: Vec3, axis: Vec3, degrees: f64) -> Vec3 {
    debug_assert!((axis.norm() - 1.0).abs() < 1e-9, "rotation axis must be unit length");
    let (sin, cos) = degrees.to_radians().sin_cos();
    v * cos + axis.cross(v) * sin + axis * (axis.dot(v) * (1.0 - cos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{JointName, Keypoint, Posture};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn kp(x: f64, y: f64, z: f64) -> Keypoint {
        Keypoint { pos: Vec3::new(x, y, z), confidence: 1.0, visible: true }
    }

    /// Mirror-perfect skeleton: each right joint is the left joint with x
    /// negated; girdles straddle x = 0 symmetrically.
    fn mirror_skeleton() -> Skeleton {
        let left = [
            (JointName::LeftShoulder, kp(-1.0, 0.0, 0.0)),
            (JointName::LeftElbow, kp(-1.4, -0.8, 0.3)),
            (JointName::LeftWrist, kp(-1.2, -1.7, 0.5)),
            (JointName::LeftHip, kp(-0.8, -1.5, 0.0)),
            (JointName::LeftKnee, kp(-0.9, -2.4, 0.4)),
            (JointName::LeftAnkle, kp(-0.7, -3.3, 0.2)),
        ];
        let all = left.into_iter().flat_map(|(name, k)| {
            let mirrored = Keypoint { pos: Vec3::new(-k.pos.x, k.pos.y, k.pos.z), ..k };
            [(name, k), (name.mirror(), mirrored)]
        });
        Skeleton::new("mirror", 3, Posture::Supine, all)
    }

    #[test]
    fn mirror_normal_of_axis_aligned_girdle() {
        let s = mirror_skeleton();
        let n = mirror_normal(&s, Girdle::Shoulder).unwrap();
        assert_abs_diff_eq!(n.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn coincident_girdle_is_degenerate() {
        let mut s = mirror_skeleton();
        let pos = s.position(JointName::LeftHip);
        s.keypoint_mut(JointName::RightHip).pos = pos;
        let err = mirror_normal(&s, Girdle::Hip).unwrap_err();
        assert!(matches!(err, Error::DegenerateGirdle(_)), "unexpected error: {err}");
        // Both leg pairs lose their mirror; arm pairs keep theirs.
        assert!(limb_angle(&s, LimbPair::UpperLeg).is_none());
        assert!(limb_angle(&s, LimbPair::LowerLeg).is_none());
        assert!(limb_angle(&s, LimbPair::UpperArm).is_some());
    }

    #[test]
    fn reflection_across_x_negates_x() {
        let r = reflect_vector(Vec3::new(1.0, 2.0, 3.0), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(r, Vec3::new(-1.0, 2.0, 3.0));
    }

    #[test]
    fn mirror_pose_scores_zero_on_all_pairs() {
        let profile = angle_profile(&mirror_skeleton());
        for pair in LimbPair::ALL {
            let a = profile.angle(pair).unwrap();
            assert!(a.abs() < 1e-9, "{pair}: {a}");
        }
    }

    #[test]
    fn antiparallel_reflection_scores_180() {
        // Left upper arm along +y; right elbow placed so that the reflected
        // right upper arm points along -y.
        let s = Skeleton::new(
            "anti",
            3,
            Posture::Unknown,
            [
                (JointName::LeftShoulder, kp(-1.0, 0.0, 0.0)),
                (JointName::RightShoulder, kp(1.0, 0.0, 0.0)),
                (JointName::LeftElbow, kp(-1.0, 1.0, 0.0)),
                (JointName::RightElbow, kp(1.0, -1.0, 0.0)),
            ],
        );
        assert_abs_diff_eq!(limb_angle(&s, LimbPair::UpperArm).unwrap(), 180.0, epsilon = 1e-9);
    }

    #[test]
    fn hidden_wrist_undefines_only_lower_arm() {
        let mut s = mirror_skeleton();
        s.keypoint_mut(JointName::LeftWrist).visible = false;
        let profile = angle_profile(&s);
        assert!(!profile.is_valid(LimbPair::LowerArm));
        for pair in [LimbPair::UpperArm, LimbPair::UpperLeg, LimbPair::LowerLeg] {
            assert!(profile.is_valid(pair), "{pair} should stay defined");
        }
    }

    #[test]
    fn zero_length_limb_is_undefined() {
        let mut s = mirror_skeleton();
        let shoulder = s.position(JointName::LeftShoulder);
        s.keypoint_mut(JointName::LeftElbow).pos = shoulder;
        assert_eq!(limb_angle(&s, LimbPair::UpperArm), None);
        assert!(limb_angle(&s, LimbPair::LowerArm).is_some());
    }

    #[test]
    fn assess_thresholds_each_pair() {
        let profile = AngleProfile::new("p", [Some(10.0), Some(35.0), Some(5.0), Some(70.0)]);
        let a = assess(&profile, 30.0);
        assert_eq!(a.label(LimbPair::UpperArm), Some(SymmetryLabel::Symmetric));
        assert_eq!(a.label(LimbPair::LowerArm), Some(SymmetryLabel::Asymmetric));
        assert_eq!(a.label(LimbPair::UpperLeg), Some(SymmetryLabel::Symmetric));
        assert_eq!(a.label(LimbPair::LowerLeg), Some(SymmetryLabel::Asymmetric));
    }

    #[test]
    fn threshold_boundary_is_asymmetric() {
        let profile = AngleProfile::new("p", [Some(29.999), Some(30.0), None, Some(30.001)]);
        let a = assess(&profile, 30.0);
        assert_eq!(a.label(LimbPair::UpperArm), Some(SymmetryLabel::Symmetric));
        assert_eq!(a.label(LimbPair::LowerArm), Some(SymmetryLabel::Asymmetric));
        assert_eq!(a.label(LimbPair::UpperLeg), None);
        assert_eq!(a.label(LimbPair::LowerLeg), Some(SymmetryLabel::Asymmetric));
    }

    #[test]
    fn angle_class_boundaries() {
        assert_eq!(angle_class_of(0.0), 0);
        assert_eq!(angle_class_of(29.999), 0);
        assert_eq!(angle_class_of(30.0), 1);
        assert_eq!(angle_class_of(59.999), 1);
        assert_eq!(angle_class_of(60.0), 2);
        assert_eq!(angle_class_of(180.0), 2);
    }

    #[test]
    fn histogram_bins_cover_0_to_180_inclusive() {
        let profiles = vec![
            AngleProfile::new("a", [Some(0.0), Some(4.999), Some(175.0), Some(180.0)]),
            AngleProfile::new("b", [Some(2.5), None, None, None]),
        ];
        let h = angle_histogram(&profiles, 5.0);
        assert_eq!(h.n_bins(), 36);
        assert_eq!(h.counts[0][0], 2);
        assert_eq!(h.counts[1][0], 1);
        assert_eq!(h.counts[2][35], 1);
        // 180 lands in the final closed bin rather than a phantom 37th.
        assert_eq!(h.counts[3][35], 1);
        assert_eq!(h.bin_edges(35), (175.0, 180.0));
    }

    fn vec3_strategy() -> impl Strategy<Value = Vec3> {
        (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0)
            .prop_map(|(x, y, z)| Vec3::new(x, y, z))
            .prop_filter("nonzero", |v| v.norm() > 1e-3)
    }

    proptest! {
        #[test]
        fn reflection_is_involutive_and_norm_preserving(v in vec3_strategy(), n in vec3_strategy()) {
            let n = n.normalized();
            let r = reflect_vector(v, n);
            prop_assert!((r.norm() - v.norm()).abs() < 1e-9);
            let rr = reflect_vector(r, n);
            prop_assert!((rr - v).norm() < 1e-9);
        }

        #[test]
        fn swapping_sides_preserves_angles(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut pos = |_: usize| kp(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let kps: Vec<_> = JointName::ALL.iter().enumerate().map(|(i, &n)| (n, pos(i))).collect();
            let s = Skeleton::new("fwd", 3, Posture::Unknown, kps.clone());
            let swapped = Skeleton::new(
                "swp",
                3,
                Posture::Unknown,
                kps.into_iter().map(|(n, k)| (n.mirror(), k)),
            );
            for pair in LimbPair::ALL {
                match (limb_angle(&s, pair), limb_angle(&swapped, pair)) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9, "{pair}: {a} vs {b}"),
                    (a, b) => prop_assert!(a.is_none() && b.is_none()),
                }
            }
        }
    }
}
