//! Geometric fingertip features computed from a single hand-tracking frame.
//!
//! Four feature families are produced, all normalized by the palm-to-middle
//! fingertip length `S` where a length is involved:
//!
//! * **A** fingertip angles: signed in-plane angle of each fingertip around the
//!   palm center, measured from the hand direction and mapped onto `[0.5, 1]`.
//! * **D** fingertip distances: `‖F − C‖ / S`.
//! * **E** fingertip elevations: signed offset from the palm plane over `S`.
//! * **T** tip distances: all ten pairwise fingertip distances over `S`,
//!   sorted ascending.
//!
//! Fingertips are unordered on input. They are assigned to five slots by
//! ascending signed angle; unused slots hold exactly zero.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Number of finger slots in the A, D and E segments.
pub const FINGER_SLOTS: usize = 5;
/// Number of unordered fingertip pairs in the T segment.
pub const TIP_PAIRS: usize = FINGER_SLOTS * (FINGER_SLOTS - 1) / 2;

/// Vectors shorter than this (millimeters) are treated as degenerate.
pub const DEGENERATE_EPS: f64 = 1e-9;
const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackingError {
    #[error("no middle fingertip identified in frame")]
    MissingMiddleFinger,
    #[error("degenerate hand geometry: {0}")]
    DegenerateHand(String),
    #[error("invalid hand frame: {0}")]
    InvalidFrame(String),
}

pub type Result<T> = std::result::Result<T, TrackingError>;

/// One tracking snapshot of a hand.
#[derive(Debug, Clone, PartialEq)]
pub struct HandFrame {
    pub palm_center: Vec3,
    pub palm_normal: Vec3,
    pub hand_direction: Vec3,
    pub fingertips: Vec<Vec3>,
    pub middle_index: Option<usize>,
}

impl HandFrame {
    /// Builds a frame, checking unit directions, fingertip count and the
    /// middle index.
    pub fn new(
        palm_center: Vec3,
        palm_normal: Vec3,
        hand_direction: Vec3,
        fingertips: Vec<Vec3>,
        middle_index: Option<usize>,
    ) -> Result<Self> {
        let frame = Self {
            palm_center,
            palm_normal,
            hand_direction,
            fingertips,
            middle_index,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.palm_center, self.palm_normal, self.hand_direction]
            .iter()
            .chain(self.fingertips.iter())
            .all(|v| v.iter().all(|c| c.is_finite()));
        if !all_finite {
            return Err(TrackingError::InvalidFrame("non-finite coordinate".into()));
        }
        if (self.palm_normal.norm() - 1.0).abs() > UNIT_TOL {
            return Err(TrackingError::InvalidFrame(format!(
                "palm normal has length {}",
                self.palm_normal.norm()
            )));
        }
        if (self.hand_direction.norm() - 1.0).abs() > UNIT_TOL {
            return Err(TrackingError::InvalidFrame(format!(
                "hand direction has length {}",
                self.hand_direction.norm()
            )));
        }
        if self.fingertips.len() > FINGER_SLOTS {
            return Err(TrackingError::InvalidFrame(format!(
                "{} fingertips, at most {FINGER_SLOTS} allowed",
                self.fingertips.len()
            )));
        }
        if let Some(m) = self.middle_index {
            if m >= self.fingertips.len() {
                return Err(TrackingError::InvalidFrame(format!(
                    "middle index {m} out of range for {} fingertips",
                    self.fingertips.len()
                )));
            }
        }
        Ok(())
    }

    pub fn middle_fingertip(&self) -> Option<&Vec3> {
        self.middle_index.and_then(|i| self.fingertips.get(i))
    }
}

/// JSON form of a [`HandFrame`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandFrameRecord {
    pub palm_center: [f64; 3],
    pub palm_normal: [f64; 3],
    pub hand_direction: [f64; 3],
    pub fingertips: Vec<[f64; 3]>,
    pub middle_index: Option<usize>,
}

impl From<&HandFrame> for HandFrameRecord {
    fn from(f: &HandFrame) -> Self {
        let arr = |v: &Vec3| [v.x, v.y, v.z];
        Self {
            palm_center: arr(&f.palm_center),
            palm_normal: arr(&f.palm_normal),
            hand_direction: arr(&f.hand_direction),
            fingertips: f.fingertips.iter().map(arr).collect(),
            middle_index: f.middle_index,
        }
    }
}

impl TryFrom<HandFrameRecord> for HandFrame {
    type Error = TrackingError;

    fn try_from(r: HandFrameRecord) -> Result<Self> {
        let v = |a: [f64; 3]| Vec3::new(a[0], a[1], a[2]);
        HandFrame::new(
            v(r.palm_center),
            v(r.palm_normal),
            v(r.hand_direction),
            r.fingertips.into_iter().map(v).collect(),
            r.middle_index,
        )
    }
}

impl HandFrame {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&HandFrameRecord::from(self)).expect("frame serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: HandFrameRecord =
            serde_json::from_str(s).map_err(|e| TrackingError::InvalidFrame(e.to_string()))?;
        rec.try_into()
    }
}

/// One of the four tracking feature families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feature {
    Angle,
    Distance,
    Elevation,
    TipDistance,
}

impl Feature {
    pub const ALL: [Feature; 4] = [
        Feature::Angle,
        Feature::Distance,
        Feature::Elevation,
        Feature::TipDistance,
    ];

    pub fn len(self) -> usize {
        match self {
            Feature::TipDistance => TIP_PAIRS,
            _ => FINGER_SLOTS,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Feature::Angle => 'A',
            Feature::Distance => 'D',
            Feature::Elevation => 'E',
            Feature::TipDistance => 'T',
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// A subset of {A, D, E, T}. Segments always appear in A, D, E, T order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FeatureMask(u8);

impl FeatureMask {
    pub const NONE: FeatureMask = FeatureMask(0);
    pub const ADET: FeatureMask = FeatureMask(0b1111);

    pub fn from_features(features: &[Feature]) -> Self {
        FeatureMask(features.iter().fold(0, |m, f| m | f.bit()))
    }

    pub fn contains(self, f: Feature) -> bool {
        self.0 & f.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn features(self) -> impl Iterator<Item = Feature> {
        Feature::ALL.into_iter().filter(move |f| self.contains(*f))
    }

    /// Length of the feature vector this mask selects.
    pub fn dimension(self) -> usize {
        self.features().map(Feature::len).sum()
    }

    /// The five combinations compared in the tracking-feature ablation.
    pub fn ablation_rows() -> Vec<FeatureMask> {
        ["D+E+T", "A+E+T", "A+D+E", "A+D+T", "A+D+E+T"]
            .iter()
            .map(|s| s.parse().expect("static mask"))
            .collect()
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let s: Vec<String> = self.features().map(|x| x.letter().to_string()).collect();
        f.write_str(&s.join("+"))
    }
}

impl FromStr for FeatureMask {
    type Err = TrackingError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(FeatureMask::NONE);
        }
        let mut mask = FeatureMask::NONE;
        for part in s.split('+') {
            let f = match part.trim().to_ascii_uppercase().as_str() {
                "A" => Feature::Angle,
                "D" => Feature::Distance,
                "E" => Feature::Elevation,
                "T" => Feature::TipDistance,
                other => {
                    return Err(TrackingError::InvalidFrame(format!(
                        "unknown feature '{other}' in mask '{s}'"
                    )))
                }
            };
            mask.0 |= f.bit();
        }
        Ok(mask)
    }
}

impl Serialize for FeatureMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FeatureMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Raw signed-angle span mapped linearly onto `[0.5, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleRange {
    pub min: f64,
    pub max: f64,
}

impl Default for AngleRange {
    fn default() -> Self {
        Self {
            min: -FRAC_PI_2,
            max: FRAC_PI_2,
        }
    }
}

impl AngleRange {
    /// Linear map of a raw angle onto `[0.5, 1]`, clamped.
    pub fn scale(&self, raw: f64) -> f64 {
        let t = (raw - self.min) / (self.max - self.min);
        (0.5 + 0.5 * t).clamp(0.5, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingConfig {
    pub mask: FeatureMask,
    #[serde(default)]
    pub angle_range: AngleRange,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            mask: "A+D+T".parse().expect("static mask"),
            angle_range: AngleRange::default(),
        }
    }
}

/// Which fingertip (index into `HandFrame::fingertips`) occupies each slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SlotAssignment {
    pub slots: [Option<usize>; FINGER_SLOTS],
}

impl SlotAssignment {
    pub fn assigned(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(slot, f)| f.map(|f| (slot, f)))
    }

    pub fn slot_of(&self, fingertip: usize) -> Option<usize> {
        self.slots.iter().position(|s| *s == Some(fingertip))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingFeatures {
    pub angles: [f64; FINGER_SLOTS],
    pub distances: [f64; FINGER_SLOTS],
    pub elevations: [f64; FINGER_SLOTS],
    pub tip_distances: [f64; TIP_PAIRS],
    /// Normalizing length in millimeters; 1.0 for a frame with no fingertips.
    pub scale: f64,
}

impl TrackingFeatures {
    pub fn segment(&self, f: Feature) -> &[f64] {
        match f {
            Feature::Angle => &self.angles,
            Feature::Distance => &self.distances,
            Feature::Elevation => &self.elevations,
            Feature::TipDistance => &self.tip_distances,
        }
    }

    /// Concatenates the masked segments in A, D, E, T order.
    pub fn select(&self, mask: FeatureMask) -> Vec<f64> {
        mask.features()
            .flat_map(|f| self.segment(f).iter().copied())
            .collect()
    }

    fn zero() -> Self {
        Self {
            angles: [0.0; FINGER_SLOTS],
            distances: [0.0; FINGER_SLOTS],
            elevations: [0.0; FINGER_SLOTS],
            tip_distances: [0.0; TIP_PAIRS],
            scale: 1.0,
        }
    }
}

/// `S = ‖F_middle − C‖`.
pub fn compute_scale(frame: &HandFrame) -> Result<f64> {
    let middle = frame
        .middle_fingertip()
        .ok_or(TrackingError::MissingMiddleFinger)?;
    let s = (middle - frame.palm_center).norm();
    if s < DEGENERATE_EPS {
        return Err(TrackingError::DegenerateHand(
            "middle fingertip coincides with palm center".into(),
        ));
    }
    Ok(s)
}

/// Orthogonal projection of `point` onto the palm plane through `C` with
/// normal `n`.
pub fn project_to_palm_plane(point: &Vec3, frame: &HandFrame) -> Vec3 {
    let n = &frame.palm_normal;
    point - n * (point - frame.palm_center).dot(n)
}

/// Signed in-plane angle from the hand direction to the fingertip, in
/// `(−π, π]`. Positive when `h × (F^π − C)` points along `n`.
pub fn signed_palm_angle(fingertip: &Vec3, frame: &HandFrame) -> Result<f64> {
    let v = project_to_palm_plane(fingertip, frame) - frame.palm_center;
    if v.norm() < DEGENERATE_EPS {
        return Err(TrackingError::DegenerateHand(
            "fingertip projects onto palm center".into(),
        ));
    }
    let h = &frame.hand_direction;
    let sin = h.cross(&v).dot(&frame.palm_normal);
    let cos = h.dot(&v);
    let a = sin.atan2(cos);
    Ok(if a == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        a
    })
}

/// Computes the scaled angle feature and the slot assignment.
///
/// Fingertips fill slots in ascending raw-angle order (ties by input order);
/// the remaining slots are zero.
pub fn compute_angle_features(
    frame: &HandFrame,
    range: &AngleRange,
) -> Result<([f64; FINGER_SLOTS], SlotAssignment)> {
    if !(range.min < range.max) {
        return Err(TrackingError::InvalidFrame(format!(
            "angle range [{}, {}] is empty",
            range.min, range.max
        )));
    }
    let mut raw = frame
        .fingertips
        .iter()
        .enumerate()
        .map(|(i, f)| signed_palm_angle(f, frame).map(|a| (a, i)))
        .collect::<Result<Vec<_>>>()?;
    raw.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut angles = [0.0; FINGER_SLOTS];
    let mut assignment = SlotAssignment::default();
    for (slot, (a, idx)) in raw.into_iter().enumerate() {
        angles[slot] = range.scale(a);
        assignment.slots[slot] = Some(idx);
    }
    Ok((angles, assignment))
}

pub fn compute_distance_features(
    frame: &HandFrame,
    assignment: &SlotAssignment,
) -> Result<[f64; FINGER_SLOTS]> {
    let mut out = [0.0; FINGER_SLOTS];
    if assignment.assigned().next().is_none() {
        return Ok(out);
    }
    let s = compute_scale(frame)?;
    for (slot, idx) in assignment.assigned() {
        out[slot] = (frame.fingertips[idx] - frame.palm_center).norm() / s;
    }
    Ok(out)
}

pub fn compute_elevation_features(
    frame: &HandFrame,
    assignment: &SlotAssignment,
) -> Result<[f64; FINGER_SLOTS]> {
    let mut out = [0.0; FINGER_SLOTS];
    if assignment.assigned().next().is_none() {
        return Ok(out);
    }
    let s = compute_scale(frame)?;
    for (slot, idx) in assignment.assigned() {
        let f = &frame.fingertips[idx];
        let offset = f - project_to_palm_plane(f, frame);
        let sign = offset.dot(&frame.palm_normal).signum();
        out[slot] = if offset.norm() == 0.0 {
            0.0
        } else {
            sign * offset.norm() / s
        };
    }
    Ok(out)
}

/// Pairwise fingertip distances over `S`, zero-padded to ten and sorted.
pub fn compute_tip_distances(frame: &HandFrame) -> Result<[f64; TIP_PAIRS]> {
    let mut out = [0.0; TIP_PAIRS];
    let tips = &frame.fingertips;
    if tips.len() < 2 {
        return Ok(out);
    }
    let s = compute_scale(frame)?;
    let mut k = 0;
    for i in 0..tips.len() {
        for j in (i + 1)..tips.len() {
            out[k] = (tips[i] - tips[j]).norm() / s;
            k += 1;
        }
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Computes every feature family for one frame.
///
/// A frame without fingertips yields all-zero features and never errors.
pub fn extract_tracking_features(
    frame: &HandFrame,
    config: &TrackingConfig,
) -> Result<TrackingFeatures> {
    frame.validate()?;
    if frame.fingertips.is_empty() {
        return Ok(TrackingFeatures::zero());
    }
    let scale = compute_scale(frame)?;
    let (angles, assignment) = compute_angle_features(frame, &config.angle_range)?;
    Ok(TrackingFeatures {
        angles,
        distances: compute_distance_features(frame, &assignment)?,
        elevations: compute_elevation_features(frame, &assignment)?,
        tip_distances: compute_tip_distances(frame)?,
        scale,
    })
}

/// Extracts features and returns only the masked vector.
pub fn extract_feature_vector(frame: &HandFrame, config: &TrackingConfig) -> Result<Vec<f64>> {
    extract_tracking_features(frame, config).map(|t| t.select(config.mask))
}
