//! Body data model and input formats.
//!
//! A [`Skeleton`] holds the twelve limb keypoints (left/right shoulder,
//! elbow, wrist, hip, knee, ankle) of one image in 2 or 3 dimensions.
//! Rater survey answers live in a [`RatingTable`]: one row per
//! (rater, image, limb pair) with a binary symmetry judgment and an ordinal
//! angle class. Occlusion flags live in an [`OcclusionTable`].
//!
//! File formats:
//! * keypoints: JSON array of `{image_id, posture, dim, keypoints: [{name,
//!   pos, confidence, visible}]}` records; joints absent from a record are
//!   kept as invisible placeholders with undefined coordinates.
//! * ratings: CSV `rater_id,image_id,limb,symmetry,angle_class`; an empty
//!   `symmetry` or `angle_class` field marks that answer missing.
//! * occlusion: CSV `image_id,limb,occluded`, at most one row per cell.
//!
//! Lines starting with `#` are treated as comments in all CSV inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Left,
    Right,
}

/// The twelve tracked joints, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointName {
    LeftShoulder,
    RightShoulder,
    LeftElbow,
    RightElbow,
    LeftWrist,
    RightWrist,
    LeftHip,
    RightHip,
    LeftKnee,
    RightKnee,
    LeftAnkle,
    RightAnkle,
}

impl JointName {
    pub const ALL: [JointName; 12] = [
        JointName::LeftShoulder,
        JointName::RightShoulder,
        JointName::LeftElbow,
        JointName::RightElbow,
        JointName::LeftWrist,
        JointName::RightWrist,
        JointName::LeftHip,
        JointName::RightHip,
        JointName::LeftKnee,
        JointName::RightKnee,
        JointName::LeftAnkle,
        JointName::RightAnkle,
    ];

    pub fn side(self) -> Side {
        match self {
            JointName::LeftShoulder
            | JointName::LeftElbow
            | JointName::LeftWrist
            | JointName::LeftHip
            | JointName::LeftKnee
            | JointName::LeftAnkle => Side::Left,
            _ => Side::Right,
        }
    }

    /// Same joint on the opposite side of the body.
    pub fn mirror(self) -> JointName {
        use JointName::*;
        match self {
            LeftShoulder => RightShoulder,
            RightShoulder => LeftShoulder,
            LeftElbow => RightElbow,
            RightElbow => LeftElbow,
            LeftWrist => RightWrist,
            RightWrist => LeftWrist,
            LeftHip => RightHip,
            RightHip => LeftHip,
            LeftKnee => RightKnee,
            RightKnee => LeftKnee,
            LeftAnkle => RightAnkle,
            RightAnkle => LeftAnkle,
        }
    }

    fn idx(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        use JointName::*;
        match self {
            LeftShoulder => "left_shoulder",
            RightShoulder => "right_shoulder",
            LeftElbow => "left_elbow",
            RightElbow => "right_elbow",
            LeftWrist => "left_wrist",
            RightWrist => "right_wrist",
            LeftHip => "left_hip",
            RightHip => "right_hip",
            LeftKnee => "left_knee",
            RightKnee => "right_knee",
            LeftAnkle => "left_ankle",
            RightAnkle => "right_ankle",
        }
    }
}

impl fmt::Display for JointName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Girdle segment whose perpendicular bisector serves as the mirror.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Girdle {
    Shoulder,
    Hip,
}

impl Girdle {
    /// (left joint, right joint) spanning the girdle.
    pub fn joints(self) -> (JointName, JointName) {
        match self {
            Girdle::Shoulder => (JointName::LeftShoulder, JointName::RightShoulder),
            Girdle::Hip => (JointName::LeftHip, JointName::RightHip),
        }
    }
}

/// The four bilateral limb pairs whose symmetry is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimbPair {
    UpperArm,
    LowerArm,
    UpperLeg,
    LowerLeg,
}

impl LimbPair {
    pub const ALL: [LimbPair; 4] = [
        LimbPair::UpperArm,
        LimbPair::LowerArm,
        LimbPair::UpperLeg,
        LimbPair::LowerLeg,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Girdle defining the mirror for this pair: shoulders for arm segments,
    /// hips for leg segments.
    pub fn girdle(self) -> Girdle {
        match self {
            LimbPair::UpperArm | LimbPair::LowerArm => Girdle::Shoulder,
            LimbPair::UpperLeg | LimbPair::LowerLeg => Girdle::Hip,
        }
    }

    /// (proximal, distal) joints of this limb on the given side.
    pub fn segment(self, side: Side) -> (JointName, JointName) {
        use JointName::*;
        let (l, r) = match self {
            LimbPair::UpperArm => ((LeftShoulder, LeftElbow), (RightShoulder, RightElbow)),
            LimbPair::LowerArm => ((LeftElbow, LeftWrist), (RightElbow, RightWrist)),
            LimbPair::UpperLeg => ((LeftHip, LeftKnee), (RightHip, RightKnee)),
            LimbPair::LowerLeg => ((LeftKnee, LeftAnkle), (RightKnee, RightAnkle)),
        };
        match side {
            Side::Left => l,
            Side::Right => r,
        }
    }

    /// Every joint whose position and visibility the pair's angle depends on:
    /// both girdle joints plus the proximal and distal joints on both sides.
    pub fn required_joints(self) -> Vec<JointName> {
        let (gl, gr) = self.girdle().joints();
        let (lp, ld) = self.segment(Side::Left);
        let (rp, rd) = self.segment(Side::Right);
        let mut v = vec![gl, gr, lp, ld, rp, rd];
        v.sort();
        v.dedup();
        v
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LimbPair::UpperArm => "upper_arm",
            LimbPair::LowerArm => "lower_arm",
            LimbPair::UpperLeg => "upper_leg",
            LimbPair::LowerLeg => "lower_leg",
        }
    }
}

impl fmt::Display for LimbPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LimbPair {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "upper_arm" => Ok(LimbPair::UpperArm),
            "lower_arm" => Ok(LimbPair::LowerArm),
            "upper_leg" => Ok(LimbPair::UpperLeg),
            "lower_leg" => Ok(LimbPair::LowerLeg),
            other => Err(format!("unknown limb pair `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Posture {
    Supine,
    Prone,
    Sitting,
    Standing,
    #[default]
    Unknown,
}

impl Posture {
    pub const KNOWN: [Posture; 4] = [Posture::Supine, Posture::Prone, Posture::Sitting, Posture::Standing];

    pub fn as_str(self) -> &'static str {
        match self {
            Posture::Supine => "supine",
            Posture::Prone => "prone",
            Posture::Sitting => "sitting",
            Posture::Standing => "standing",
            Posture::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Posture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub pos: Vec3,
    pub confidence: f64,
    pub visible: bool,
}

impl Keypoint {
    /// Placeholder for a joint absent from the input record.
    pub fn missing() -> Keypoint {
        Keypoint { pos: Vec3::new(f64::NAN, f64::NAN, f64::NAN), confidence: 0.0, visible: false }
    }

    pub fn is_missing(&self) -> bool {
        !self.pos.x.is_finite()
    }
}

/// One image's pose: twelve keypoints, indexed by [`JointName`].
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub image_id: String,
    /// 2 or 3. For 2-D skeletons every z coordinate is exactly 0.
    pub dim: u8,
    pub posture: Posture,
    keypoints: [Keypoint; 12],
}

impl Skeleton {
    /// Build a skeleton from explicit keypoints; joints not supplied are
    /// filled with invisible placeholders.
    pub fn new(
        image_id: impl Into<String>,
        dim: u8,
        posture: Posture,
        keypoints: impl IntoIterator<Item = (JointName, Keypoint)>,
    ) -> Skeleton {
        let mut kp = [Keypoint::missing(); 12];
        for (name, k) in keypoints {
            kp[name.idx()] = k;
        }
        Skeleton { image_id: image_id.into(), dim, posture, keypoints: kp }
    }

    pub fn keypoint(&self, name: JointName) -> &Keypoint {
        &self.keypoints[name.idx()]
    }

    pub fn keypoint_mut(&mut self, name: JointName) -> &mut Keypoint {
        &mut self.keypoints[name.idx()]
    }

    pub fn position(&self, name: JointName) -> Vec3 {
        self.keypoints[name.idx()].pos
    }
}

/// One (image, limb pair) cell, the unit all label tables are keyed by.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemKey {
    pub image_id: String,
    pub limb: LimbPair,
}

impl ItemKey {
    pub fn new(image_id: impl Into<String>, limb: LimbPair) -> ItemKey {
        ItemKey { image_id: image_id.into(), limb }
    }
}

impl fmt::Display for ItemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.image_id, self.limb)
    }
}

/// Dense rater-by-item matrix of small integer labels with missing cells.
///
/// Raters and items are kept sorted, so computations that iterate the matrix
/// are invariant to the order labels arrived in.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMatrix {
    raters: Vec<String>,
    items: Vec<ItemKey>,
    /// Row-major by rater: `values[r * items.len() + i]`.
    values: Vec<Option<u8>>,
}

impl LabelMatrix {
    pub fn new(raters: Vec<String>, items: Vec<ItemKey>, values: Vec<Option<u8>>) -> LabelMatrix {
        assert_eq!(values.len(), raters.len() * items.len());
        debug_assert!(raters.windows(2).all(|w| w[0] < w[1]), "raters must be sorted and unique");
        debug_assert!(items.windows(2).all(|w| w[0] < w[1]), "items must be sorted and unique");
        LabelMatrix { raters, items, values }
    }

    pub fn n_raters(&self) -> usize {
        self.raters.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn raters(&self) -> &[String] {
        &self.raters
    }

    pub fn items(&self) -> &[ItemKey] {
        &self.items
    }

    pub fn get(&self, rater: usize, item: usize) -> Option<u8> {
        self.values[rater * self.items.len() + item]
    }

    /// All labels of one rater, indexed by item.
    pub fn rater_row(&self, rater: usize) -> &[Option<u8>] {
        let n = self.items.len();
        &self.values[rater * n..(rater + 1) * n]
    }

    /// Restrict to the items of a single limb pair, preserving order.
    pub fn filter_limb(&self, limb: LimbPair) -> LabelMatrix {
        let keep: Vec<usize> =
            (0..self.items.len()).filter(|&i| self.items[i].limb == limb).collect();
        let items: Vec<ItemKey> = keep.iter().map(|&i| self.items[i].clone()).collect();
        let mut values = Vec::with_capacity(self.raters.len() * items.len());
        for r in 0..self.raters.len() {
            let row = self.rater_row(r);
            values.extend(keep.iter().map(|&i| row[i]));
        }
        LabelMatrix { raters: self.raters.clone(), items, values }
    }
}

/// Parsed ratings file: per-rater symmetry and angle-class answers over
/// (image, limb) cells.
#[derive(Clone, Debug, Default)]
pub struct RatingTable {
    raters: Vec<String>,
    items: Vec<ItemKey>,
    symmetry: Vec<Option<u8>>,
    angle_class: Vec<Option<u8>>,
}

impl RatingTable {
    pub fn n_raters(&self) -> usize {
        self.raters.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn raters(&self) -> &[String] {
        &self.raters
    }

    pub fn items(&self) -> &[ItemKey] {
        &self.items
    }

    pub fn is_empty(&self) -> bool {
        self.raters.is_empty()
    }

    fn cell(&self, rater: usize, item: usize) -> usize {
        rater * self.items.len() + item
    }

    pub fn symmetry_label(&self, rater: usize, item: usize) -> Option<u8> {
        self.symmetry[self.cell(rater, item)]
    }

    pub fn angle_class_label(&self, rater: usize, item: usize) -> Option<u8> {
        self.angle_class[self.cell(rater, item)]
    }

    /// Binary symmetry answers as a label matrix (1 = asymmetric).
    pub fn symmetry_matrix(&self) -> LabelMatrix {
        LabelMatrix::new(self.raters.clone(), self.items.clone(), self.symmetry.clone())
    }

    /// Ordinal angle-class answers as a label matrix (0, 1, 2).
    pub fn angle_class_matrix(&self) -> LabelMatrix {
        LabelMatrix::new(self.raters.clone(), self.items.clone(), self.angle_class.clone())
    }

    /// Per-cell mean of the raters' angle classes, over cells with at least
    /// one answer.
    pub fn mean_angle_class(&self) -> BTreeMap<ItemKey, f64> {
        let mut out = BTreeMap::new();
        for (i, item) in self.items.iter().enumerate() {
            let mut sum = 0.0;
            let mut n = 0usize;
            for r in 0..self.raters.len() {
                if let Some(c) = self.angle_class[self.cell(r, i)] {
                    sum += f64::from(c);
                    n += 1;
                }
            }
            if n > 0 {
                out.insert(item.clone(), sum / n as f64);
            }
        }
        out
    }

    pub fn from_rows(rows: Vec<RatingRow>) -> Result<RatingTable> {
        let raters: Vec<String> = rows
            .iter()
            .map(|r| r.rater_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let items: Vec<ItemKey> = rows
            .iter()
            .map(|r| ItemKey::new(r.image_id.clone(), r.limb))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let rater_idx: BTreeMap<String, usize> =
            raters.iter().enumerate().map(|(i, r)| (r.clone(), i)).collect();
        let item_idx: BTreeMap<ItemKey, usize> =
            items.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();

        let mut table = RatingTable {
            symmetry: vec![None; raters.len() * items.len()],
            angle_class: vec![None; raters.len() * items.len()],
            raters,
            items,
        };
        let mut seen = vec![false; table.symmetry.len()];
        for row in &rows {
            let r = rater_idx[row.rater_id.as_str()];
            let key = ItemKey::new(row.image_id.clone(), row.limb);
            let i = item_idx[&key];
            let cell = table.cell(r, i);
            if seen[cell] {
                return Err(Error::validation(format!(
                    "duplicate rating for rater `{}` on cell {}",
                    row.rater_id, key
                )));
            }
            seen[cell] = true;
            table.symmetry[cell] = row.symmetry;
            table.angle_class[cell] = row.angle_class;
        }
        Ok(table)
    }
}

/// One parsed line of a ratings CSV.
#[derive(Clone, Debug)]
pub struct RatingRow {
    pub rater_id: String,
    pub image_id: String,
    pub limb: LimbPair,
    /// 0 = symmetric, 1 = asymmetric, `None` = unanswered.
    pub symmetry: Option<u8>,
    /// 0, 1, or 2; `None` = unanswered.
    pub angle_class: Option<u8>,
}

/// Per-cell occlusion flags.
#[derive(Clone, Debug, Default)]
pub struct OcclusionTable {
    cells: BTreeMap<ItemKey, bool>,
}

impl OcclusionTable {
    pub fn get(&self, key: &ItemKey) -> Option<bool> {
        self.cells.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn insert(&mut self, key: ItemKey, occluded: bool) -> Result<()> {
        if self.cells.contains_key(&key) {
            return Err(Error::validation(format!("duplicate occlusion label for cell {key}")));
        }
        self.cells.insert(key, occluded);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Keypoint JSON

#[derive(Serialize, Deserialize)]
struct RawSkeleton {
    image_id: String,
    #[serde(default)]
    posture: Posture,
    dim: u8,
    keypoints: Vec<RawKeypoint>,
}

#[derive(Serialize, Deserialize)]
struct RawKeypoint {
    name: JointName,
    pos: Vec<f64>,
    #[serde(default = "default_confidence")]
    confidence: f64,
    #[serde(default = "default_visible")]
    visible: bool,
}

fn default_confidence() -> f64 {
    1.0
}

fn default_visible() -> bool {
    true
}

fn skeleton_from_raw(raw: RawSkeleton, path: &Path, record: usize) -> Result<Skeleton> {
    let ctx = |msg: String| Error::parse(path, format!("record {record}, image `{}`", raw.image_id), msg);
    if raw.dim != 2 && raw.dim != 3 {
        return Err(ctx(format!("dim must be 2 or 3, got {}", raw.dim)));
    }
    let mut skel = Skeleton::new(raw.image_id.clone(), raw.dim, raw.posture, []);
    let mut seen = [false; 12];
    for kp in raw.keypoints {
        if seen[kp.name.idx()] {
            return Err(ctx(format!("duplicate keypoint `{}`", kp.name)));
        }
        seen[kp.name.idx()] = true;
        if kp.pos.len() != raw.dim as usize {
            return Err(ctx(format!(
                "keypoint `{}` has {} coordinates, expected {}",
                kp.name,
                kp.pos.len(),
                raw.dim
            )));
        }
        if kp.pos.iter().any(|c| !c.is_finite()) {
            return Err(ctx(format!("keypoint `{}` has a non-finite coordinate", kp.name)));
        }
        if !(0.0..=1.0).contains(&kp.confidence) {
            return Err(ctx(format!(
                "keypoint `{}` confidence {} outside [0, 1]",
                kp.name, kp.confidence
            )));
        }
        let z = if raw.dim == 3 { kp.pos[2] } else { 0.0 };
        *skel.keypoint_mut(kp.name) = Keypoint {
            pos: Vec3::new(kp.pos[0], kp.pos[1], z),
            confidence: kp.confidence,
            visible: kp.visible,
        };
    }
    Ok(skel)
}

fn load_raw_skeletons(path: &Path) -> Result<Vec<Skeleton>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: Vec<RawSkeleton> = serde_json::from_str(&text).map_err(|e| {
        Error::parse(path, format!("line {}, column {}", e.line(), e.column()), e.to_string())
    })?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for (i, r) in raw.into_iter().enumerate() {
        if !seen.insert(r.image_id.clone()) {
            return Err(Error::validation(format!(
                "duplicate image_id `{}` in {}",
                r.image_id,
                path.display()
            )));
        }
        out.push(skeleton_from_raw(r, path, i)?);
    }
    Ok(out)
}

/// Load a keypoint file, requiring every record to have the given dimension.
pub fn load_keypoints(path: impl AsRef<Path>, dim: u8) -> Result<Vec<Skeleton>> {
    assert!(dim == 2 || dim == 3, "dim must be 2 or 3");
    let path = path.as_ref();
    let skeletons = load_raw_skeletons(path)?;
    for s in &skeletons {
        if s.dim != dim {
            return Err(Error::validation(format!(
                "image `{}` in {} has dim {}, expected {}",
                s.image_id,
                path.display(),
                s.dim,
                dim
            )));
        }
    }
    Ok(skeletons)
}

/// Load a keypoint file, inferring the (necessarily uniform) dimension.
pub fn load_keypoints_any(path: impl AsRef<Path>) -> Result<Vec<Skeleton>> {
    let path = path.as_ref();
    let skeletons = load_raw_skeletons(path)?;
    if let Some(first) = skeletons.first() {
        if let Some(odd) = skeletons.iter().find(|s| s.dim != first.dim) {
            return Err(Error::validation(format!(
                "mixed dimensions in {}: image `{}` is {}-D but image `{}` is {}-D",
                path.display(),
                first.image_id,
                first.dim,
                odd.image_id,
                odd.dim
            )));
        }
    }
    Ok(skeletons)
}

/// Write skeletons back to the keypoint JSON format. Placeholder joints
/// (absent from the original input) are omitted; all finite coordinates
/// round-trip bit-exactly.
pub fn save_keypoints(path: impl AsRef<Path>, skeletons: &[Skeleton]) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<RawSkeleton> = skeletons
        .iter()
        .map(|s| RawSkeleton {
            image_id: s.image_id.clone(),
            posture: s.posture,
            dim: s.dim,
            keypoints: JointName::ALL
                .iter()
                .filter(|&&name| !s.keypoint(name).is_missing())
                .map(|&name| {
                    let kp = s.keypoint(name);
                    let mut pos = vec![kp.pos.x, kp.pos.y];
                    if s.dim == 3 {
                        pos.push(kp.pos.z);
                    }
                    RawKeypoint { name, pos, confidence: kp.confidence, visible: kp.visible }
                })
                .collect(),
        })
        .collect();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut file, &raw)
        .map_err(|e| Error::parse(path, "", format!("serialization failed: {e}")))?;
    file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Ratings CSV

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                Error::io(path, std::io::Error::other(e.to_string()))
            }
            _ => Error::parse(path, "", e.to_string()),
        })
}

pub(crate) fn header_columns(
    path: &Path,
    headers: &csv::StringRecord,
    required: &[&str],
) -> Result<Vec<usize>> {
    required
        .iter()
        .map(|name| {
            headers.iter().position(|h| h == *name).ok_or_else(|| {
                Error::parse(path, "header", format!("missing required column `{name}`"))
            })
        })
        .collect()
}

fn parse_label(
    path: &Path,
    line: u64,
    column: &str,
    field: &str,
    max: u8,
) -> Result<Option<u8>> {
    if field.is_empty() {
        return Ok(None);
    }
    match field.parse::<u8>() {
        Ok(v) if v <= max => Ok(Some(v)),
        _ => Err(Error::parse(
            path,
            format!("line {line}"),
            format!("{column} must be an integer in 0..={max}, got `{field}`"),
        )),
    }
}

/// Load a ratings CSV. An entirely empty file yields an empty table.
pub fn load_ratings(path: impl AsRef<Path>) -> Result<RatingTable> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(path, "header", e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(RatingTable::default());
    }
    let cols = header_columns(
        path,
        &headers,
        &["rater_id", "image_id", "limb", "symmetry", "angle_class"],
    )?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::parse(path, "", e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let limb: LimbPair = record[cols[2]]
            .parse()
            .map_err(|e: String| Error::parse(path, format!("line {line}"), e))?;
        rows.push(RatingRow {
            rater_id: record[cols[0]].to_string(),
            image_id: record[cols[1]].to_string(),
            limb,
            symmetry: parse_label(path, line, "symmetry", &record[cols[3]], 1)?,
            angle_class: parse_label(path, line, "angle_class", &record[cols[4]], 2)?,
        });
    }
    RatingTable::from_rows(rows)
}

/// Write a ratings CSV in the canonical (rater, image, limb) order.
pub fn save_ratings(path: impl AsRef<Path>, table: &RatingTable) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    wtr.write_record(["rater_id", "image_id", "limb", "symmetry", "angle_class"])
        .map_err(|e| Error::parse(path, "", e.to_string()))?;
    let fmt = |v: Option<u8>| v.map_or(String::new(), |x| x.to_string());
    for (r, rater) in table.raters().iter().enumerate() {
        for (i, item) in table.items().iter().enumerate() {
            let sym = table.symmetry_label(r, i);
            let class = table.angle_class_label(r, i);
            if sym.is_none() && class.is_none() {
                continue;
            }
            wtr.write_record([
                rater.as_str(),
                item.image_id.as_str(),
                item.limb.as_str(),
                &fmt(sym),
                &fmt(class),
            ])
            .map_err(|e| Error::parse(path, "", e.to_string()))?;
        }
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Occlusion CSV

pub fn load_occlusions(path: impl AsRef<Path>) -> Result<OcclusionTable> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(path, "header", e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(OcclusionTable::default());
    }
    let cols = header_columns(path, &headers, &["image_id", "limb", "occluded"])?;
    let mut table = OcclusionTable::default();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::parse(path, "", e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let limb: LimbPair = record[cols[1]]
            .parse()
            .map_err(|e: String| Error::parse(path, format!("line {line}"), e))?;
        let occluded = match &record[cols[2]] {
            "0" | "false" => false,
            "1" | "true" => true,
            other => {
                return Err(Error::parse(
                    path,
                    format!("line {line}"),
                    format!("occluded must be 0/1/true/false, got `{other}`"),
                ))
            }
        };
        table.insert(ItemKey::new(record[cols[0]].to_string(), limb), occluded)?;
    }
    Ok(table)
}

pub fn save_occlusions(path: impl AsRef<Path>, table: &OcclusionTable) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    wtr.write_record(["image_id", "limb", "occluded"])
        .map_err(|e| Error::parse(path, "", e.to_string()))?;
    for (key, occ) in &table.cells {
        wtr.write_record([key.image_id.as_str(), key.limb.as_str(), if *occ { "1" } else { "0" }])
            .map_err(|e| Error::parse(path, "", e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
