//! Principal component analysis with variance-retention selection.
//!
//! The spectrum is computed once ([`PcaBasis::fit`]) and can then be cut at
//! several retention levels without refitting.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PcaError {
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid PCA input: {0}")]
    InvalidInput(String),
    #[error("PCA model format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, PcaError>;

/// How many components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "fraction")]
pub enum Retention {
    /// Smallest k whose cumulative variance ratio reaches the fraction.
    Variance(f64),
    /// `ceil(fraction × min(d, n−1))` components.
    Dimension(f64),
}

impl Retention {
    pub fn fraction(&self) -> f64 {
        match *self {
            Retention::Variance(f) | Retention::Dimension(f) => f,
        }
    }

    fn validate(&self) -> Result<()> {
        let f = self.fraction();
        if f > 0.0 && f <= 1.0 {
            Ok(())
        } else {
            Err(PcaError::InvalidInput(format!(
                "retained fraction {f} outside (0, 1]"
            )))
        }
    }
}

/// Relative slack on the cumulative-variance comparison.
const RETENTION_SLACK: f64 = 1e-12;
/// Eigenvalues below this fraction of the largest are numerically zero.
const NULL_EIGEN_RATIO: f64 = 1e-12;

/// Full sorted spectrum of the sample covariance.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    mean: Vec<f64>,
    /// Unit directions, sorted by eigenvalue descending.
    directions: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    /// Sum of all (clamped) eigenvalues, i.e. the covariance trace.
    total_variance: f64,
    rank_limit: usize,
}

impl PcaBasis {
    /// Centers `data` (rows are samples) and diagonalizes its covariance
    /// (divisor n−1). Uses the d×d covariance when d ≤ n, else the n×n Gram
    /// matrix.
    pub fn fit(data: &[Vec<f64>]) -> Result<Self> {
        let n = data.len();
        if n < 2 {
            return Err(PcaError::InvalidInput(format!("{n} rows; at least 2 required")));
        }
        let d = data[0].len();
        if d == 0 {
            return Err(PcaError::InvalidInput("zero-dimensional rows".into()));
        }
        if let Some(bad) = data.iter().position(|r| r.len() != d) {
            return Err(PcaError::DimensionMismatch {
                expected: d,
                got: data[bad].len(),
            });
        }
        let mut mean = vec![0.0; d];
        for row in data {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let centered = DMatrix::from_fn(n, d, |i, j| data[i][j] - mean[j]);
        let denom = (n - 1) as f64;

        let (eigenvalues, vectors) = if d <= n {
            let cov = (centered.transpose() * &centered) / denom;
            let eig = cov.symmetric_eigen();
            let vecs: Vec<Vec<f64>> = (0..d)
                .map(|k| eig.eigenvectors.column(k).iter().copied().collect())
                .collect();
            (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), vecs)
        } else {
            let gram = (&centered * centered.transpose()) / denom;
            let eig = gram.symmetric_eigen();
            let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
            let mut vals = Vec::new();
            let mut vecs = Vec::new();
            for k in 0..n {
                let lambda = eig.eigenvalues[k];
                if lambda <= lmax * NULL_EIGEN_RATIO || lambda <= 0.0 {
                    continue;
                }
                let u = eig.eigenvectors.column(k);
                let mut v: DVector<f64> = centered.transpose() * u;
                let norm = v.norm();
                if norm == 0.0 {
                    continue;
                }
                v /= norm;
                vals.push(lambda);
                vecs.push(v.iter().copied().collect());
            }
            (vals, vecs)
        };

        let lmax = eigenvalues.iter().copied().fold(0.0, f64::max);
        let clamped: Vec<f64> = eigenvalues
            .iter()
            .map(|&l| if l <= lmax * NULL_EIGEN_RATIO { 0.0 } else { l })
            .collect();
        let total_variance: f64 = clamped.iter().sum();
        if !(total_variance > 0.0) {
            return Err(PcaError::DegenerateData("zero total variance".into()));
        }

        let mut order: Vec<usize> = (0..clamped.len()).collect();
        order.sort_by(|&a, &b| clamped[b].total_cmp(&clamped[a]).then(a.cmp(&b)));
        let directions = order
            .iter()
            .map(|&k| {
                let mut v = vectors[k].clone();
                canonical_sign(&mut v);
                v
            })
            .collect();
        let eigenvalues = order.iter().map(|&k| clamped[k]).collect();
        Ok(Self {
            mean,
            directions,
            eigenvalues,
            total_variance,
            rank_limit: d.min(n - 1),
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Number of components `retention` keeps.
    pub fn components_for(&self, retention: Retention) -> Result<usize> {
        retention.validate()?;
        let available = self.eigenvalues.iter().filter(|&&l| l > 0.0).count().max(1);
        Ok(match retention {
            Retention::Variance(f) => {
                let target = f * self.total_variance * (1.0 - RETENTION_SLACK);
                let mut cum = 0.0;
                let mut k = 0;
                for &l in &self.eigenvalues {
                    cum += l;
                    k += 1;
                    if cum >= target {
                        break;
                    }
                }
                k.min(available)
            }
            Retention::Dimension(f) => {
                let k = (f * self.rank_limit as f64).ceil() as usize;
                k.clamp(1, self.directions.len())
            }
        })
    }

    /// Cumulative variance ratio of the first `k` components.
    pub fn retained_ratio(&self, k: usize) -> f64 {
        self.eigenvalues[..k].iter().sum::<f64>() / self.total_variance
    }

    pub fn select(&self, retention: Retention) -> Result<PcaModel> {
        let k = self.components_for(retention)?;
        Ok(PcaModel {
            mean: self.mean.clone(),
            components: self.directions[..k].to_vec(),
            variances: self.eigenvalues[..k].to_vec(),
            retained_fraction: retention.fraction(),
        })
    }
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Fitted projection: `components × (x − mean)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// k×d, rows orthonormal.
    pub components: Vec<Vec<f64>>,
    /// Per-component sample variance, non-increasing.
    pub variances: Vec<f64>,
    pub retained_fraction: f64,
}

pub fn fit_pca(data: &[Vec<f64>], retention: Retention) -> Result<PcaModel> {
    retention.validate()?;
    PcaBasis::fit(data)?.select(retention)
}

#[derive(Serialize, Deserialize)]
struct PcaModelFile {
    version: u32,
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    variances: Vec<f64>,
    retained_fraction: f64,
}

pub const PCA_FORMAT_VERSION: u32 = 1;

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(PcaError::DimensionMismatch {
                expected: self.mean.len(),
                got: x.len(),
            });
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `mean + componentsᵀ × z`.
    pub fn inverse_transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.components.len() {
            return Err(PcaError::DimensionMismatch {
                expected: self.components.len(),
                got: z.len(),
            });
        }
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter().zip(z) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += w * v;
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PcaModelFile {
            version: PCA_FORMAT_VERSION,
            mean: self.mean.clone(),
            components: self.components.clone(),
            variances: self.variances.clone(),
            retained_fraction: self.retained_fraction,
        })
        .expect("PCA model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: PcaModelFile = serde_json::from_str(s).map_err(|e| PcaError::Format(e.to_string()))?;
        if f.version != PCA_FORMAT_VERSION {
            return Err(PcaError::Format(format!("unsupported version {}", f.version)));
        }
        let d = f.mean.len();
        if f.components.iter().any(|c| c.len() != d) || f.variances.len() != f.components.len() {
            return Err(PcaError::Format("inconsistent shapes".into()));
        }
        Ok(Self {
            mean: f.mean,
            components: f.components,
            variances: f.variances,
            retained_fraction: f.retained_fraction,
        })
    }
}
