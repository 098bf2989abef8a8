//! Gesture samples: manifest loading and saving, a synthetic generator and
//! train/test splitting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::{Matrix3, Rotation3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{distort_radial, undistort_radial, GrayImage, ImageError, UndistortionMap};
use crate::tracking::{HandFrame, TrackingError, Vec3, FINGER_SLOTS};

pub const MANIFEST_VERSION: u32 = 1;
pub const NUM_GESTURES: u32 = 10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("missing files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFile(Vec<PathBuf>),
    #[error("manifest version {found}, expected {expected}")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub subject: u32,
    pub gesture: u32,
    pub repetition: u32,
    pub frame: HandFrame,
    /// Raw sensor images, left first.
    pub images: Vec<GrayImage>,
}

impl Sample {
    /// Stable identifier such as `s03_g7_r12`.
    pub fn id(&self) -> String {
        format!("s{:02}_g{}_r{:02}", self.subject, self.gesture, self.repetition)
    }

    fn key(&self) -> (u32, u32, u32) {
        (self.subject, self.gesture, self.repetition)
    }
}

/// Samples plus the calibration map for their raw images, if any.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub undistortion_map: Option<UndistortionMap>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<u32> {
        self.samples.iter().map(|s| s.gesture).collect()
    }

    /// Sample count per `(subject, gesture)`.
    pub fn counts(&self) -> BTreeMap<(u32, u32), usize> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            *out.entry((s.subject, s.gesture)).or_insert(0) += 1;
        }
        out
    }

    fn sort(&mut self) {
        self.samples.sort_by_key(Sample::key);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject: u32,
    pub gesture: u32,
    pub rep: u32,
    pub frame: String,
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undistortion_map: Option<String>,
    #[serde(default)]
    pub samples: Vec<ManifestEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads every sample listed in `manifest_path`. Relative paths resolve
/// against the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;
    let found = raw.get("version").and_then(serde_json::Value::as_u64);
    if found != Some(MANIFEST_VERSION as u64) {
        return Err(DatasetError::SchemaVersionMismatch {
            found: found.map_or(0, |v| v as u32),
            expected: MANIFEST_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(raw).map_err(|e| DatasetError::Parse {
        path: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let mut missing = Vec::new();
    let map_path = manifest.undistortion_map.as_ref().map(|p| base.join(p));
    for path in map_path.iter().cloned().chain(
        manifest
            .samples
            .iter()
            .flat_map(|e| std::iter::once(&e.frame).chain(&e.images))
            .map(|p| base.join(p)),
    ) {
        if !path.is_file() {
            missing.push(path);
        }
    }
    if !missing.is_empty() {
        return Err(DatasetError::MissingFile(missing));
    }

    let samples = manifest
        .samples
        .par_iter()
        .map(|e| {
            if e.gesture >= NUM_GESTURES {
                return Err(DatasetError::InvalidSample(format!("gesture {} out of range", e.gesture)));
            }
            if e.images.is_empty() || e.images.len() > 2 {
                return Err(DatasetError::InvalidSample(format!(
                    "{} images for subject {} gesture {} rep {}",
                    e.images.len(),
                    e.subject,
                    e.gesture,
                    e.rep
                )));
            }
            let frame_path = base.join(&e.frame);
            let text = fs::read_to_string(&frame_path).map_err(io_err(&frame_path))?;
            let frame = HandFrame::from_json(&text).map_err(|err| DatasetError::Parse {
                path: frame_path.display().to_string(),
                message: err.to_string(),
            })?;
            let images = e
                .images
                .iter()
                .map(|p| GrayImage::read_pgm(&base.join(p)))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(Sample {
                subject: e.subject,
                gesture: e.gesture,
                repetition: e.rep,
                frame,
                images,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let undistortion_map = map_path.map(|p| UndistortionMap::read(&p)).transpose()?;
    let mut ds = Dataset {
        samples,
        undistortion_map,
    };
    ds.sort();
    for ((subject, gesture), n) in ds.counts() {
        info!("subject {subject} gesture {gesture}: {n} samples");
    }
    Ok(ds)
}

/// Writes `dataset.json`, one frame JSON per sample and its PGM images into
/// `dir`. Returns the manifest path.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    let frames = dir.join("frames");
    let images = dir.join("images");
    fs::create_dir_all(&frames).map_err(io_err(&frames))?;
    fs::create_dir_all(&images).map_err(io_err(&images))?;

    let entries = ds
        .samples
        .par_iter()
        .map(|s| {
            let id = s.id();
            let frame_rel = format!("frames/{id}.json");
            let frame_path = dir.join(&frame_rel);
            fs::write(&frame_path, s.frame.to_json()).map_err(io_err(&frame_path))?;
            let mut image_rels = Vec::new();
            for (k, img) in s.images.iter().enumerate() {
                let side = if k == 0 { "left" } else { "right" };
                let rel = format!("images/{id}_{side}.pgm");
                img.write_pgm(&dir.join(&rel))?;
                image_rels.push(rel);
            }
            Ok(ManifestEntry {
                subject: s.subject,
                gesture: s.gesture,
                rep: s.repetition,
                frame: frame_rel,
                images: image_rels,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let undistortion_map = match &ds.undistortion_map {
        Some(map) => {
            let rel = "undistortion.lmum".to_string();
            map.write(&dir.join(&rel))?;
            Some(rel)
        }
        None => None,
    };
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        undistortion_map,
        samples: entries,
    };
    let path = dir.join("dataset.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

// Synthetic generator

/// Finger order in templates.
pub const FINGER_NAMES: [&str; FINGER_SLOTS] = ["thumb", "index", "middle", "ring", "pinky"];
const MIDDLE: usize = 2;

/// Hand-local frame: `x` across the palm, `y` along the hand direction,
/// `z` along the palm normal. Millimeters.
const KNUCKLES: [[f64; 3]; FINGER_SLOTS] = [
    [-35.0, -15.0, 5.0],
    [-27.0, 42.0, 0.0],
    [-8.0, 46.0, 0.0],
    [11.0, 44.0, 0.0],
    [28.0, 36.0, 0.0],
];
const EXTENDED_TIPS: [[f64; 3]; FINGER_SLOTS] = [
    [-80.0, 35.0, 10.0],
    [-33.0, 105.0, 0.0],
    [-8.0, 114.0, 0.0],
    [16.0, 108.0, 0.0],
    [42.0, 88.0, 0.0],
];
const FOLDED_TIPS: [[f64; 3]; FINGER_SLOTS] = [
    [-15.0, 10.0, 22.0],
    [-24.0, 38.0, 24.0],
    [-8.0, 40.0, 25.0],
    [11.0, 38.0, 24.0],
    [26.0, 30.0, 22.0],
];
const FINGER_RADIUS: [f64; FINGER_SLOTS] = [9.0, 8.0, 8.0, 8.0, 7.0];
/// Palm silhouette as capsules `(from, to, radius)` in the local `xy` plane.
const PALM_CAPSULES: [([f64; 2], [f64; 2], f64); 3] = [
    ([-20.0, -15.0], [20.0, -15.0], 22.0),
    ([-20.0, 10.0], [20.0, 10.0], 22.0),
    ([-20.0, 35.0], [20.0, 35.0], 20.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureTemplate {
    pub gesture: u32,
    pub name: String,
    /// Fingertip offsets from the palm center in the hand-local frame.
    pub fingertips: [[f64; 3]; FINGER_SLOTS],
    pub extended: [bool; FINGER_SLOTS],
    /// Standard deviation of fingertip position noise, millimeters.
    pub position_noise: f64,
    /// Standard deviation of the per-axis pose rotation, radians.
    pub rotation_noise: f64,
}

impl GestureTemplate {
    pub fn from_mask(gesture: u32, name: &str, extended: [bool; FINGER_SLOTS]) -> Self {
        let mut fingertips = FOLDED_TIPS;
        for (f, &up) in extended.iter().enumerate() {
            if up {
                fingertips[f] = EXTENDED_TIPS[f];
            }
        }
        Self {
            gesture,
            name: name.to_string(),
            fingertips,
            extended,
            position_noise: 3.0,
            rotation_noise: 10f64.to_radians(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gesture >= NUM_GESTURES {
            return Err(DatasetError::InvalidConfig(format!("gesture id {}", self.gesture)));
        }
        for (f, t) in self.fingertips.iter().enumerate() {
            let r = Vec3::from(*t).norm();
            if !(20.0..=120.0).contains(&r) {
                return Err(DatasetError::InvalidConfig(format!(
                    "{} of gesture {} lies {r:.1} mm from the palm center",
                    FINGER_NAMES[f], self.gesture
                )));
            }
        }
        if !(self.position_noise >= 0.0) || !(self.rotation_noise >= 0.0) {
            return Err(DatasetError::InvalidConfig("negative noise scale".into()));
        }
        Ok(())
    }

    pub fn with_noise(mut self, position_noise: f64, rotation_noise: f64) -> Self {
        self.position_noise = position_noise;
        self.rotation_noise = rotation_noise;
        self
    }
}

/// Ten poses with distinct sets of extended fingers.
pub fn default_templates() -> Vec<GestureTemplate> {
    const T: bool = true;
    const F: bool = false;
    let defs: [(&str, [bool; 5]); 10] = [
        ("open_palm", [T, T, T, T, T]),
        ("fist", [F, F, F, F, F]),
        ("index", [F, T, F, F, F]),
        ("victory", [F, T, T, F, F]),
        ("three", [F, T, T, T, F]),
        ("four", [F, T, T, T, T]),
        ("thumb_up", [T, F, F, F, F]),
        ("l_shape", [T, T, F, F, F]),
        ("shaka", [T, F, F, F, T]),
        ("horns", [F, T, F, F, T]),
    ];
    defs.iter()
        .enumerate()
        .map(|(g, (name, mask))| GestureTemplate::from_mask(g as u32, name, *mask))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub subjects: u32,
    pub repetitions: u32,
    pub seed: u64,
    /// Per-subject uniform hand scale range.
    pub scale_range: (f64, f64),
    /// Edge length of the cube the palm center is drawn from, millimeters.
    pub workspace: f64,
    /// Raw image width and height in pixels.
    pub image_size: usize,
    /// Half-width of the area seen by the sensor, millimeters.
    pub view_half_width: f64,
    /// Radial lens coefficient applied to raw images.
    pub lens_k1: f64,
    /// Render a second, slightly rotated view.
    pub stereo: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            subjects: 13,
            repetitions: 20,
            seed: 2024,
            scale_range: (0.9, 1.1),
            workspace: 200.0,
            image_size: 160,
            view_half_width: 220.0,
            lens_k1: -0.15,
            stereo: true,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.repetitions == 0 {
            return Err(DatasetError::InvalidConfig("subjects and repetitions must be >= 1".into()));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(DatasetError::InvalidConfig(format!("scale range ({lo}, {hi})")));
        }
        if self.image_size < 16 || !(self.view_half_width > 0.0) || !(self.workspace >= 0.0) {
            return Err(DatasetError::InvalidConfig("image geometry".into()));
        }
        Ok(())
    }

    /// Calibration map matching the rendered lens distortion.
    pub fn undistortion_map(&self) -> Result<UndistortionMap> {
        Ok(UndistortionMap::radial(self.image_size, self.image_size, self.lens_k1)?)
    }
}

/// Sensor position; hands hover above it at this height.
const SENSOR_HEIGHT: f64 = 200.0;
const RIGHT_VIEW_TILT: f64 = 0.07;
const HAND_LEVEL: f64 = 200.0;
const BACKGROUND_LEVEL: f64 = 25.0;

/// Local-to-world rotation of a level hand: fingers toward −z, palm facing
/// the sensor (−y).
fn base_orientation() -> Rotation3<f64> {
    Rotation3::from_matrix_unchecked(Matrix3::new(
        -1.0, 0.0, 0.0, //
        0.0, 0.0, -1.0, //
        0.0, -1.0, 0.0,
    ))
}

struct Pose {
    rotation: Rotation3<f64>,
    center: Vec3,
    scale: f64,
}

impl Pose {
    fn to_world(&self, local: &Vec3) -> Vec3 {
        self.center + self.rotation * (local * self.scale)
    }
}

/// Draws `subjects × repetitions` samples per template. Identical inputs
/// give bit-identical output.
pub fn generate_synthetic(templates: &[GestureTemplate], cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    for t in templates {
        t.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let half = cfg.workspace / 2.0;

    struct Draw {
        subject: u32,
        gesture: u32,
        repetition: u32,
        frame: HandFrame,
        pose: Pose,
        tips_local: [Vec3; FINGER_SLOTS],
        image_seed: u64,
    }

    let mut draws = Vec::new();
    for subject in 0..cfg.subjects {
        let scale = if cfg.scale_range.0 < cfg.scale_range.1 {
            rng.random_range(cfg.scale_range.0..=cfg.scale_range.1)
        } else {
            cfg.scale_range.0
        };
        for t in templates {
            let pos_noise = Normal::new(0.0, t.position_noise).expect("noise scale checked");
            let rot_noise = Normal::new(0.0, t.rotation_noise).expect("noise scale checked");
            for repetition in 0..cfg.repetitions {
                let axis = Vec3::new(
                    rot_noise.sample(&mut rng),
                    rot_noise.sample(&mut rng),
                    rot_noise.sample(&mut rng),
                );
                let rotation = Rotation3::new(axis) * base_orientation();
                let offset = if half > 0.0 {
                    Vec3::new(
                        rng.random_range(-half..=half),
                        rng.random_range(-half..=half),
                        rng.random_range(-half..=half),
                    )
                } else {
                    Vec3::zeros()
                };
                let pose = Pose {
                    rotation,
                    center: Vec3::new(0.0, SENSOR_HEIGHT, 0.0) + offset,
                    scale,
                };
                let mut tips_local = [Vec3::zeros(); FINGER_SLOTS];
                for (f, tip) in tips_local.iter_mut().enumerate() {
                    let jitter = Vec3::new(
                        pos_noise.sample(&mut rng),
                        pos_noise.sample(&mut rng),
                        pos_noise.sample(&mut rng),
                    );
                    *tip = Vec3::from(t.fingertips[f]) + jitter / scale;
                }
                let frame = HandFrame::new(
                    pose.center,
                    rotation * Vec3::z(),
                    rotation * Vec3::y(),
                    tips_local.iter().map(|p| pose.to_world(p)).collect(),
                    Some(MIDDLE),
                )?;
                draws.push(Draw {
                    subject,
                    gesture: t.gesture,
                    repetition,
                    frame,
                    pose,
                    tips_local,
                    image_seed: rng.random(),
                });
            }
        }
    }

    let lens = lens_lookup(cfg);
    let samples = draws
        .into_par_iter()
        .map(|d| {
            let shapes = hand_capsules(&d.pose, &d.tips_local);
            let mut images = vec![render_view(&shapes, cfg, &lens, 0.0, d.image_seed)?];
            if cfg.stereo {
                images.push(render_view(&shapes, cfg, &lens, RIGHT_VIEW_TILT, d.image_seed ^ 0x5bd1_e995)?);
            }
            Ok(Sample {
                subject: d.subject,
                gesture: d.gesture,
                repetition: d.repetition,
                frame: d.frame,
                images,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ds = Dataset {
        samples,
        undistortion_map: Some(cfg.undistortion_map()?),
    };
    ds.sort();
    Ok(ds)
}

struct Capsule {
    a: Vec3,
    b: Vec3,
    radius: f64,
}

fn hand_capsules(pose: &Pose, tips_local: &[Vec3; FINGER_SLOTS]) -> Vec<Capsule> {
    let mut out: Vec<Capsule> = PALM_CAPSULES
        .iter()
        .map(|&(a, b, r)| Capsule {
            a: pose.to_world(&Vec3::new(a[0], a[1], 0.0)),
            b: pose.to_world(&Vec3::new(b[0], b[1], 0.0)),
            radius: r * pose.scale,
        })
        .collect();
    for f in 0..FINGER_SLOTS {
        out.push(Capsule {
            a: pose.to_world(&Vec3::from(KNUCKLES[f])),
            b: pose.to_world(&tips_local[f]),
            radius: FINGER_RADIUS[f] * pose.scale,
        });
    }
    out
}

/// Distance from `p` to segment `ab` in 2D.
fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

/// Ideal normalized coordinates seen by each raw pixel, `None` where the
/// lens model has no inverse.
fn lens_lookup(cfg: &SyntheticConfig) -> Vec<Option<[f64; 2]>> {
    let n = cfg.image_size;
    let mut out = Vec::with_capacity(n * n);
    for py in 0..n {
        for px in 0..n {
            let xd = 2.0 * px as f64 / (n - 1) as f64 - 1.0;
            let yd = 2.0 * py as f64 / (n - 1) as f64 - 1.0;
            let (x, y) = undistort_radial(xd, yd, cfg.lens_k1);
            let (rx, ry) = distort_radial(x, y, cfg.lens_k1);
            out.push(((rx - xd).abs() < 1e-6 && (ry - yd).abs() < 1e-6).then_some([x, y]));
        }
    }
    out
}

/// Orthographic view looking up the `y` axis, tilted by `tilt` radians about
/// `z`, seen through the radial lens.
fn render_view(
    shapes: &[Capsule],
    cfg: &SyntheticConfig,
    lens: &[Option<[f64; 2]>],
    tilt: f64,
    seed: u64,
) -> Result<GrayImage> {
    let (s, c) = tilt.sin_cos();
    let project = |p: &Vec3| [p.x * c - (p.y - SENSOR_HEIGHT) * s, p.z];
    let flat: Vec<([f64; 2], [f64; 2], f64)> = shapes
        .iter()
        .map(|cap| (project(&cap.a), project(&cap.b), cap.radius))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hand_noise = Normal::new(0.0, 10.0).expect("positive sigma");
    let background_noise = Normal::new(0.0, 8.0).expect("positive sigma");
    let data = lens
        .iter()
        .map(|ideal| {
            let inside = ideal.is_some_and(|[x, y]| {
                let world = [x * cfg.view_half_width, y * cfg.view_half_width];
                flat.iter().any(|&(a, b, r)| segment_distance(world, a, b) <= r)
            });
            let v = if inside {
                HAND_LEVEL + hand_noise.sample(&mut rng)
            } else {
                BACKGROUND_LEVEL + background_noise.sample(&mut rng)
            };
            v.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Ok(GrayImage::new(cfg.image_size, cfg.image_size, data)?)
}

// Splitting

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    /// Ascending sample indices.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded split of `labels.len()` samples. With `stratified`, every class
/// contributes `⌊f·n_c⌋` training samples and the remaining slots up to
/// `round(f·n)` are filled from the leftovers in shuffled order.
pub fn split_indices(labels: &[u32], train_fraction: f64, seed: u64, stratified: bool) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidConfig(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n = labels.len();
    let floor = |k: usize| (train_fraction * k as f64 + 1e-9).floor() as usize;
    let target = (train_fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; n];
    if stratified {
        let mut strata: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            strata.entry(l).or_default().push(i);
        }
        let mut leftovers = Vec::new();
        for members in strata.values_mut() {
            members.shuffle(&mut rng);
            let k = floor(members.len());
            for &i in &members[..k] {
                in_train[i] = true;
            }
            leftovers.extend_from_slice(&members[k..]);
        }
        leftovers.shuffle(&mut rng);
        let taken = in_train.iter().filter(|&&b| b).count();
        for &i in leftovers.iter().take(target.saturating_sub(taken)) {
            in_train[i] = true;
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &i in &order[..target] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| in_train[i]);
    Ok(Split { train, test })
}

/// Splits samples by gesture.
pub fn split(samples: &[Sample], train_fraction: f64, seed: u64, stratified: bool) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let labels: Vec<u32> = samples.iter().map(|s| s.gesture).collect();
    let s = split_indices(&labels, train_fraction, seed, stratified)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
    Ok((pick(&s.train), pick(&s.test)))
}
