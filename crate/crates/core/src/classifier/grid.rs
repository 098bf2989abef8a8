//! `(C, γ)` selection by stratified k-fold cross-validation.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{DenseSqDistances, SqDistances};
use super::multiclass::{class_list, fit_pairs};
use super::smo::SmoOptions;
use super::{KernelParams, Label, Result, SvmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSearchConfig {
    pub c_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub smo: SmoOptions,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        Self {
            c_grid: vec![1.0, 10.0, 100.0, 1000.0],
            gamma_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            folds: 10,
            seed: 0,
            smo: SmoOptions::default(),
        }
    }
}

impl GridSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_grid.is_empty() || self.gamma_grid.is_empty() {
            return Err(SvmError::InvalidParameter("empty hyper-parameter grid".into()));
        }
        if self.folds < 2 {
            return Err(SvmError::InvalidParameter(format!("{} folds; need at least 2", self.folds)));
        }
        for &c in &self.c_grid {
            for &g in &self.gamma_grid {
                KernelParams::new(c, g)?;
            }
        }
        Ok(())
    }
}

/// Cross-validation result for one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub c: f64,
    pub gamma: f64,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Pair machines that hit the iteration budget, summed over folds.
    pub nonconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: KernelParams,
    pub best_accuracy: f64,
    /// Cells ordered by C, then γ.
    pub table: Vec<CvCell>,
    /// Set when some class has fewer samples than folds.
    pub degraded: bool,
}

/// Fold index per sample. Each class is shuffled and dealt round-robin,
/// continuing where the previous class stopped so that fold sizes differ by
/// at most one.
///
/// Returns the assignment and whether some class is smaller than `k`.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Result<(Vec<usize>, bool)> {
    if k < 2 {
        return Err(SvmError::InvalidParameter(format!("{k} folds; need at least 2")));
    }
    if labels.len() < k {
        return Err(SvmError::InsufficientData(format!(
            "{} samples for {k} folds",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    let mut next = 0;
    let mut degraded = false;
    for class in class_list(labels) {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            warn!("class {class} has {} samples for {k} folds", members.len());
            degraded = true;
        }
        members.shuffle(&mut rng);
        for i in members {
            fold[i] = next % k;
            next += 1;
        }
    }
    Ok((fold, degraded))
}

/// Grid search over raw rows. Distances are computed once and shared by
/// every cell and fold.
pub fn grid_search(data: &[Vec<f64>], labels: &[Label], cfg: &GridSearchConfig) -> Result<GridSearchResult> {
    if data.len() != labels.len() {
        return Err(SvmError::DimensionMismatch {
            expected: data.len(),
            got: labels.len(),
        });
    }
    cfg.validate()?;
    let dist = DenseSqDistances::new(data);
    grid_search_with(&dist, labels, cfg)
}

/// Grid search over a precomputed distance matrix whose rows align with
/// `labels`.
pub fn grid_search_with(
    dist: &dyn SqDistances,
    labels: &[Label],
    cfg: &GridSearchConfig,
) -> Result<GridSearchResult> {
    cfg.validate()?;
    if dist.len() != labels.len() {
        return Err(SvmError::DimensionMismatch {
            expected: dist.len(),
            got: labels.len(),
        });
    }
    let classes = class_list(labels);
    if classes.len() < 2 {
        return Err(SvmError::SingleClassData("grid search".into()));
    }
    let (fold, degraded) = stratified_folds(labels, cfg.folds, cfg.seed)?;

    let mut cells: Vec<(f64, f64)> = cfg
        .c_grid
        .iter()
        .flat_map(|&c| cfg.gamma_grid.iter().map(move |&g| (c, g)))
        .collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    cells.dedup();

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.folds).map(move |f| (c, f)))
        .collect();
    let outcomes: Vec<(usize, usize, usize)> = jobs
        .par_iter()
        .map(|&(cell, f)| {
            let (c, gamma) = cells[cell];
            let params = KernelParams::new(c, gamma)?;
            let train: Vec<usize> = (0..labels.len()).filter(|&i| fold[i] != f).collect();
            let test: Vec<usize> = (0..labels.len()).filter(|&i| fold[i] == f).collect();
            if test.is_empty() {
                return Ok((0, 0, 0));
            }
            let train_labels: Vec<Label> = train.iter().map(|&i| labels[i]).collect();
            let train_classes = class_list(&train_labels);
            if train_classes.len() < 2 {
                return Err(SvmError::InsufficientData(format!("fold {f} trains on a single class")));
            }
            let fitted = fit_pairs(dist, &train, &train_labels, &train_classes, &params, &cfg.smo)?;
            let correct = test
                .iter()
                .filter(|&&i| {
                    let (k, _) = fitted.predict_row(dist, i, gamma, train_classes.len());
                    train_classes[k] == labels[i]
                })
                .count();
            Ok((correct, test.len(), fitted.nonconverged()))
        })
        .collect::<Result<_>>()?;

    let mut table = Vec::with_capacity(cells.len());
    for (cell, &(c, gamma)) in cells.iter().enumerate() {
        let mut correct = 0;
        let mut total = 0;
        let mut nonconverged = 0;
        for f in 0..cfg.folds {
            let (k, t, n) = outcomes[cell * cfg.folds + f];
            correct += k;
            total += t;
            nonconverged += n;
        }
        table.push(CvCell {
            c,
            gamma,
            correct,
            total,
            accuracy: correct as f64 / total as f64,
            nonconverged,
        });
    }
    let mut best = 0;
    for (i, cell) in table.iter().enumerate() {
        if cell.accuracy > table[best].accuracy {
            best = i;
        }
    }
    Ok(GridSearchResult {
        best: KernelParams::new(table[best].c, table[best].gamma)?,
        best_accuracy: table[best].accuracy,
        table,
        degraded,
    })
}
