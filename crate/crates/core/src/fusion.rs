//! Weighted concatenation of tracking features with a HOG descriptor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::HogDescriptor;
use crate::tracking::{FeatureMask, TrackingFeatures};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
}

/// One named contiguous block of the fused vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Selected tracking segments followed by `hog_weight × HOG`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub tracking_mask: FeatureMask,
    /// Multiplier on the HOG segment.
    pub hog_weight: f64,
    /// Length of the HOG segment; 0 for tracking-only vectors.
    pub hog_len: usize,
}

impl FusionConfig {
    pub fn new(tracking_mask: FeatureMask, hog_weight: f64, hog_len: usize) -> Result<Self, FusionError> {
        if !(hog_weight >= 0.0) || !hog_weight.is_finite() {
            return Err(FusionError::InvalidConfig(format!(
                "hog weight {hog_weight} must be finite and >= 0"
            )));
        }
        if tracking_mask.is_empty() && hog_len == 0 {
            return Err(FusionError::InvalidConfig("no segments selected".into()));
        }
        Ok(Self {
            tracking_mask,
            hog_weight,
            hog_len,
        })
    }

    pub fn tracking_only(mask: FeatureMask) -> Result<Self, FusionError> {
        Self::new(mask, 0.0, 0)
    }

    pub fn tracking_len(&self) -> usize {
        self.tracking_mask.dimension()
    }

    pub fn dimension(&self) -> usize {
        self.tracking_len() + self.hog_len
    }

    pub fn layout(&self) -> Vec<Segment> {
        let mut offset = 0;
        let mut out = Vec::new();
        for f in self.tracking_mask.features() {
            out.push(Segment {
                name: f.letter().to_string(),
                offset,
                len: f.len(),
            });
            offset += f.len();
        }
        if self.hog_len > 0 {
            out.push(Segment {
                name: "HOG".into(),
                offset,
                len: self.hog_len,
            });
        }
        out
    }

    /// Short label such as `A+D+T+5xHOG` or `HOG`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if !self.tracking_mask.is_empty() {
            parts.push(self.tracking_mask.to_string());
        }
        if self.hog_len > 0 {
            parts.push(if self.hog_weight == 1.0 {
                "HOG".to_string()
            } else {
                format!("{}xHOG", self.hog_weight)
            });
        }
        parts.join("+")
    }

    /// Applies the HOG weight to an unweighted concatenation
    /// `[tracking segments, HOG]`.
    pub fn weight(&self, unweighted: &[f64]) -> Result<Vec<f64>, FusionError> {
        if unweighted.len() != self.dimension() {
            return Err(FusionError::LayoutMismatch(format!(
                "vector of {} values for a {}-dimensional layout",
                unweighted.len(),
                self.dimension()
            )));
        }
        let t = self.tracking_len();
        let mut out = unweighted.to_vec();
        out[t..].iter_mut().for_each(|v| *v *= self.hog_weight);
        Ok(out)
    }
}

/// `[selected tracking segments, hog_weight × hog]`.
pub fn fuse(
    tracking: &TrackingFeatures,
    hog: Option<&HogDescriptor>,
    cfg: &FusionConfig,
) -> Result<Vec<f64>, FusionError> {
    let hog_values: &[f64] = hog.map(|h| h.values.as_slice()).unwrap_or(&[]);
    fuse_values(tracking, hog_values, cfg)
}

pub fn fuse_values(
    tracking: &TrackingFeatures,
    hog: &[f64],
    cfg: &FusionConfig,
) -> Result<Vec<f64>, FusionError> {
    if hog.len() != cfg.hog_len {
        return Err(FusionError::LayoutMismatch(format!(
            "HOG of length {} for a layout expecting {}",
            hog.len(),
            cfg.hog_len
        )));
    }
    let mut out = Vec::with_capacity(cfg.dimension());
    for f in cfg.tracking_mask.features() {
        out.extend_from_slice(tracking.segment(f));
    }
    out.extend(hog.iter().map(|v| cfg.hog_weight * v));
    Ok(out)
}
