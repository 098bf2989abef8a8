//! Repeated train/test experiments over feature combinations, fusion
//! weights and PCA retentions, with CSV reporting.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    grid_search_with, train_multiclass_indexed, DenseSqDistances, GridSearchConfig, GridSearchResult, KernelParams,
    Label, MultiClassModel, Preprocessing, SqDistances, SubsetSqDistances, SvmError,
};
use crate::dataset::{
    default_templates, generate_synthetic, load_dataset, split_indices, Dataset, DatasetError, SyntheticConfig,
};
use crate::fusion::{fuse_values, FusionConfig, FusionError};
use crate::imaging::{ImageError, ImagePipeline};
use crate::pca::{PcaBasis, PcaError, Retention};
use crate::tracking::{extract_tracking_features, AngleRange, FeatureMask, TrackingConfig, TrackingError, TrackingFeatures};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Cell {
        context: String,
        #[source]
        source: Box<ExperimentError>,
    },
}

impl ExperimentError {
    fn in_cell(self, context: impl Into<String>) -> Self {
        ExperimentError::Cell {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// 1 for configuration errors, 2 for data errors, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            ExperimentError::Svm(SvmError::InvalidParameter(_)) => 1,
            ExperimentError::Fusion(FusionError::InvalidConfig(_)) => 1,
            ExperimentError::Dataset(DatasetError::InvalidConfig(_)) => 1,
            ExperimentError::Svm(SvmError::NonConvergence { .. }) => 3,
            ExperimentError::Cell { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Manifest(PathBuf),
    Synthetic(SyntheticConfig),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    /// Search once per cell on the first repetition's training split.
    #[default]
    PerCell,
    PerRepetition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetentionMode {
    #[default]
    Variance,
    Dimension,
}

impl RetentionMode {
    pub fn retention(self, fraction: f64) -> Retention {
        match self {
            RetentionMode::Variance => Retention::Variance(fraction),
            RetentionMode::Dimension => Retention::Dimension(fraction),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub angle_range: AngleRange,
    /// Tracking feature combinations; `none` gives HOG-only cells.
    pub masks: Vec<FeatureMask>,
    pub pipeline: ImagePipeline,
    /// HOG weights K; empty means tracking features only.
    pub hog_weights: Vec<f64>,
    /// PCA retention fractions; empty means no PCA.
    pub retentions: Vec<f64>,
    pub retention_mode: RetentionMode,
    pub grid: GridSearchConfig,
    pub grid_mode: GridMode,
    pub repetitions: usize,
    pub train_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
    /// Fail instead of warning when an SMO run exhausts its budget.
    pub strict_convergence: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::default(),
            angle_range: AngleRange::default(),
            masks: vec!["A+D+T".parse().expect("static mask")],
            pipeline: ImagePipeline::default(),
            hog_weights: Vec::new(),
            retentions: Vec::new(),
            retention_mode: RetentionMode::Variance,
            grid: GridSearchConfig::default(),
            grid_mode: GridMode::PerCell,
            repetitions: 50,
            train_fraction: 0.8,
            stratified: true,
            seed: 0,
            strict_convergence: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1".into());
        }
        if self.masks.is_empty() {
            return bad("no feature masks".into());
        }
        if self.masks.iter().any(|m| m.is_empty()) && self.hog_weights.is_empty() {
            return bad("an empty mask needs HOG weights".into());
        }
        if self.hog_weights.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return bad("HOG weights must be finite and >= 0".into());
        }
        if self.retentions.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return bad("retentions must lie in (0, 1]".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train fraction {} outside (0, 1)", self.train_fraction));
        }
        self.grid.validate()?;
        self.pipeline.descriptor_len()?;
        Ok(())
    }

    /// Parses TOML or JSON by file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| ExperimentError::Config(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| ExperimentError::Config(e.to_string()))?,
        };
        Ok(cfg)
    }

    pub fn uses_hog(&self) -> bool {
        !self.hog_weights.is_empty()
    }

    /// Cells in report order: mask, then K, then retention.
    pub fn cells(&self) -> Vec<CellSpec> {
        let weights: Vec<Option<f64>> = if self.hog_weights.is_empty() {
            vec![None]
        } else {
            self.hog_weights.iter().copied().map(Some).collect()
        };
        let retentions: Vec<Option<Retention>> = if self.retentions.is_empty() {
            vec![None]
        } else {
            self.retentions.iter().map(|&r| Some(self.retention_mode.retention(r))).collect()
        };
        let mut out = Vec::new();
        for &mask in &self.masks {
            for &hog_weight in &weights {
                for &retention in &retentions {
                    out.push(CellSpec {
                        mask,
                        hog_weight,
                        retention,
                    });
                }
            }
        }
        out
    }
}

/// Seed of repetition `rep`: the first output of ChaCha8 seeded with the
/// master seed on stream `rep`.
pub fn repetition_seed(master: u64, rep: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(rep as u64);
    rng.next_u64()
}

/// One feature configuration of an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSpec {
    pub mask: FeatureMask,
    /// HOG weight, or `None` without HOG.
    pub hog_weight: Option<f64>,
    pub retention: Option<Retention>,
}

impl CellSpec {
    /// Feature combination such as `A+D+T+HOG`, `HOG` or `D+E+T`.
    pub fn combo(&self) -> String {
        match (self.mask.is_empty(), self.hog_weight.is_some()) {
            (true, _) => "HOG".into(),
            (false, true) => format!("{}+HOG", self.mask),
            (false, false) => self.mask.to_string(),
        }
    }

    pub fn k_label(&self) -> String {
        self.hog_weight.map_or("none".into(), |k| k.to_string())
    }

    pub fn retention_label(&self) -> String {
        match self.retention {
            None => "none".into(),
            Some(Retention::Variance(f)) => f.to_string(),
            Some(Retention::Dimension(f)) => format!("dim{f}"),
        }
    }

    pub fn label(&self) -> String {
        format!("{} K={} retention={}", self.combo(), self.k_label(), self.retention_label())
    }

    /// File-name-safe form of the label.
    pub fn slug(&self) -> String {
        format!("{}_K{}_R{}", self.combo(), self.k_label(), self.retention_label()).replace('+', "-")
    }

    pub fn fusion(&self, hog_len: usize) -> Result<FusionConfig> {
        Ok(match self.hog_weight {
            Some(k) => FusionConfig::new(self.mask, k, hog_len)?,
            None => FusionConfig::tracking_only(self.mask)?,
        })
    }
}

/// Per-sample features shared by all cells.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub labels: Vec<Label>,
    pub tracking: Vec<TrackingFeatures>,
    /// HOG descriptors when extracted.
    pub hog: Option<Vec<Vec<f64>>>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn hog_len(&self) -> usize {
        self.hog.as_ref().and_then(|h| h.first()).map_or(0, Vec::len)
    }

    /// Unweighted concatenation of the masked tracking segments and, when
    /// `with_hog`, the HOG descriptor.
    pub fn raw_vector(&self, i: usize, mask: FeatureMask, with_hog: bool) -> Result<Vec<f64>> {
        let hog: &[f64] = match (&self.hog, with_hog) {
            (Some(h), true) => &h[i],
            (None, true) => return Err(ExperimentError::Config("HOG features were not extracted".into())),
            (_, false) => &[],
        };
        let cfg = FusionConfig {
            tracking_mask: mask,
            hog_weight: 1.0,
            hog_len: hog.len(),
        };
        Ok(fuse_values(&self.tracking[i], hog, &cfg)?)
    }

    /// Fused, weighted vectors of every sample for `cell`.
    fn cell_vectors(&self, cell: &CellSpec) -> Result<Vec<Vec<f64>>> {
        let hog_len = if cell.hog_weight.is_some() { self.hog_len() } else { 0 };
        let fusion = cell.fusion(hog_len)?;
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let hog: &[f64] = match (&self.hog, cell.hog_weight) {
                    (Some(h), Some(_)) => &h[i],
                    (None, Some(_)) => {
                        return Err(ExperimentError::Config("HOG features were not extracted".into()))
                    }
                    (_, None) => &[],
                };
                Ok(fuse_values(&self.tracking[i], hog, &fusion)?)
            })
            .collect()
    }
}

pub fn load_source(source: &DataSource) -> Result<Dataset> {
    Ok(match source {
        DataSource::Manifest(path) => load_dataset(path)?,
        DataSource::Synthetic(cfg) => generate_synthetic(&default_templates(), cfg)?,
    })
}

/// Tracking features for every sample, plus HOG when `pipeline` is given.
pub fn extract_features(ds: &Dataset, angle_range: AngleRange, pipeline: Option<&ImagePipeline>) -> Result<FeatureTable> {
    let tc = TrackingConfig {
        mask: FeatureMask::ADET,
        angle_range,
    };
    let tracking = ds
        .samples
        .par_iter()
        .map(|s| extract_tracking_features(&s.frame, &tc).map_err(|e| ExperimentError::from(e).in_cell(s.id())))
        .collect::<Result<Vec<_>>>()?;
    let hog = match pipeline {
        Some(p) => Some(
            ds.samples
                .par_iter()
                .map(|s| {
                    p.descriptor(&s.images, ds.undistortion_map.as_ref())
                        .map(|d| d.values)
                        .map_err(|e| ExperimentError::from(e).in_cell(s.id()))
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    Ok(FeatureTable {
        ids: ds.samples.iter().map(|s| s.id()).collect(),
        labels: ds.labels(),
        tracking,
        hog,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub truth: Label,
    pub predicted: Label,
    pub votes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: Vec<Label>,
    /// Rows are true classes, columns predicted classes.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<Label>) -> Self {
        let m = classes.len();
        Self {
            classes,
            counts: vec![vec![0; m]; m],
        }
    }

    /// Panics on a label outside the class list.
    pub fn record(&mut self, truth: Label, predicted: Label) {
        let t = self.classes.binary_search(&truth).expect("known class");
        let p = self.classes.binary_search(&predicted).expect("known class");
        self.counts[t][p] += 1;
    }

    pub fn from_predictions(classes: Vec<Label>, log: &[PredictionRecord]) -> Self {
        let mut m = Self::new(classes);
        for r in log {
            m.record(r.truth, r.predicted);
        }
        m
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in row.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total() as f64
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Header row and column of class labels, then `accuracy,<value>`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for c in &self.classes {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            write!(s, "{c}").unwrap();
            for v in row {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        writeln!(s, "accuracy,{}", self.accuracy()).unwrap();
        s
    }
}

#[derive(Debug, Clone)]
pub struct RepetitionResult {
    pub rep: usize,
    pub seed: u64,
    pub params: KernelParams,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<PredictionRecord>,
    /// Pair machines that hit the iteration budget in the final model.
    pub nonconverged: usize,
    /// Retained PCA components, if PCA was applied.
    pub components: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct CellReport {
    pub spec: CellSpec,
    /// One search per cell, or one per repetition.
    pub grid: Vec<GridSearchResult>,
    pub repetitions: Vec<RepetitionResult>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Summed over repetitions.
    pub confusion: ConfusionMatrix,
}

impl CellReport {
    fn new(spec: CellSpec, grid: Vec<GridSearchResult>, repetitions: Vec<RepetitionResult>, classes: &[Label]) -> Self {
        let n = repetitions.len() as f64;
        let mean = repetitions.iter().map(|r| r.accuracy).sum::<f64>() / n;
        let var = if repetitions.len() > 1 {
            repetitions.iter().map(|r| (r.accuracy - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let mut confusion = ConfusionMatrix::new(classes.to_vec());
        for r in &repetitions {
            confusion.add(&r.confusion);
        }
        Self {
            spec,
            grid,
            repetitions,
            mean_accuracy: mean,
            std_accuracy: var.sqrt(),
            confusion,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub classes: Vec<Label>,
    pub cells: Vec<CellReport>,
}

impl ExperimentReport {
    /// `combo,K,retention,rep,accuracy`, one row per repetition followed by
    /// a `mean` row per cell.
    pub fn report_csv(&self) -> String {
        let mut s = String::from("combo,K,retention,rep,accuracy\n");
        for cell in &self.cells {
            let prefix = format!("{},{},{}", cell.spec.combo(), cell.spec.k_label(), cell.spec.retention_label());
            for r in &cell.repetitions {
                writeln!(s, "{prefix},{},{}", r.rep, r.accuracy).unwrap();
            }
            writeln!(s, "{prefix},mean,{}", cell.mean_accuracy).unwrap();
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("combo,K,retention,repetitions,mean,std,C,gamma\n");
        for cell in &self.cells {
            let p = cell.repetitions[0].params;
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                cell.spec.combo(),
                cell.spec.k_label(),
                cell.spec.retention_label(),
                cell.repetitions.len(),
                cell.mean_accuracy,
                cell.std_accuracy,
                p.c,
                p.gamma
            )
            .unwrap();
        }
        s
    }

    /// Writes `report.csv`, `summary.csv` and per-cell confusion,
    /// prediction and cross-validation files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_file(&dir.join("report.csv"), &self.report_csv())?;
        write_file(&dir.join("summary.csv"), &self.summary_csv())?;
        for cell in &self.cells {
            let slug = cell.spec.slug();
            emit_confusion(cell, &dir.join(format!("confusion_{slug}.csv")))?;
            write_file(&dir.join(format!("predictions_{slug}.csv")), &predictions_csv(cell))?;
            write_file(&dir.join(format!("cv_{slug}.csv")), &cv_csv(cell))?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// Summed confusion matrix of a cell as CSV.
pub fn emit_confusion(cell: &CellReport, path: &Path) -> Result<()> {
    write_file(path, &cell.confusion.to_csv())
}

/// `rep,sample_id,true,pred,votes` with votes `;`-separated in class order.
pub fn predictions_csv(cell: &CellReport) -> String {
    let mut s = String::from("rep,sample_id,true,pred,votes\n");
    for r in &cell.repetitions {
        for p in &r.predictions {
            let votes: Vec<String> = p.votes.iter().map(u32::to_string).collect();
            writeln!(s, "{},{},{},{},{}", r.rep, p.sample_id, p.truth, p.predicted, votes.join(";")).unwrap();
        }
    }
    s
}

fn cv_csv(cell: &CellReport) -> String {
    let mut s = String::from("search,C,gamma,correct,total,accuracy,nonconverged\n");
    for (k, g) in cell.grid.iter().enumerate() {
        for c in &g.table {
            writeln!(s, "{k},{},{},{},{},{},{}", c.c, c.gamma, c.correct, c.total, c.accuracy, c.nonconverged).unwrap();
        }
    }
    s
}

/// Loads or generates the data, extracts features and runs every cell.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let ds = load_source(&cfg.source)?;
    let pipeline = cfg.uses_hog().then_some(&cfg.pipeline);
    let table = extract_features(&ds, cfg.angle_range, pipeline)?;
    run_on_features(cfg, &table)
}

/// Runs every cell of `cfg` on precomputed features.
pub fn run_on_features(cfg: &ExperimentConfig, table: &FeatureTable) -> Result<ExperimentReport> {
    cfg.validate()?;
    if table.is_empty() {
        return Err(ExperimentError::Dataset(DatasetError::InvalidSample("empty dataset".into())));
    }
    let mut classes = table.labels.clone();
    classes.sort_unstable();
    classes.dedup();

    let splits = (0..cfg.repetitions)
        .map(|r| {
            let seed = repetition_seed(cfg.seed, r);
            Ok((seed, split_indices(&table.labels, cfg.train_fraction, seed, cfg.stratified)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let specs = cfg.cells();
    let mut reports = Vec::with_capacity(specs.len());
    // cells sharing mask and K share vectors, and PCA bases per repetition
    for group in specs.chunk_by(|a, b| a.mask == b.mask && a.hog_weight == b.hog_weight) {
        let head = group[0];
        let context = format!("{} K={}", head.combo(), head.k_label());
        let vectors = table.cell_vectors(&head).map_err(|e| e.in_cell(&context))?;
        let unpca_dist = group
            .iter()
            .any(|c| c.retention.is_none())
            .then(|| DenseSqDistances::new(&vectors));
        let mut grids: Vec<Vec<GridSearchResult>> = vec![Vec::new(); group.len()];
        let mut reps: Vec<Vec<RepetitionResult>> = vec![Vec::new(); group.len()];

        for (r, (seed, split)) in splits.iter().enumerate() {
            let basis = if group.iter().any(|c| c.retention.is_some()) {
                let train_rows: Vec<Vec<f64>> = split.train.iter().map(|&i| vectors[i].clone()).collect();
                Some(PcaBasis::fit(&train_rows).map_err(|e| ExperimentError::from(e).in_cell(&context))?)
            } else {
                None
            };
            for (c, spec) in group.iter().enumerate() {
                let cell_ctx = spec.label();
                let (rows, dist_owned, pca) = match spec.retention {
                    None => (None, None, None),
                    Some(ret) => {
                        let model = basis.as_ref().expect("basis fitted").select(ret)?;
                        let rows = vectors
                            .par_iter()
                            .map(|x| model.transform(x))
                            .collect::<std::result::Result<Vec<_>, _>>()?;
                        let dist = DenseSqDistances::new(&rows);
                        (Some(rows), Some(dist), Some(model))
                    }
                };
                let rows_ref: &[Vec<f64>] = rows.as_deref().unwrap_or(&vectors);
                let dist: &DenseSqDistances = dist_owned.as_ref().or(unpca_dist.as_ref()).expect("distances");

                let need_search = cfg.grid_mode == GridMode::PerRepetition || r == 0;
                if need_search {
                    let sub = SubsetSqDistances::new(dist, &split.train);
                    let train_labels: Vec<Label> = split.train.iter().map(|&i| table.labels[i]).collect();
                    let gcfg = GridSearchConfig {
                        seed: *seed,
                        ..cfg.grid.clone()
                    };
                    let g = grid_search_with(&sub, &train_labels, &gcfg)
                        .map_err(|e| ExperimentError::from(e).in_cell(&cell_ctx))?;
                    if g.degraded {
                        warn!("{cell_ctx}: some class has fewer samples than folds");
                    }
                    info!(
                        "{cell_ctx} rep {r}: C={} gamma={} cv accuracy {:.4}",
                        g.best.c, g.best.gamma, g.best_accuracy
                    );
                    grids[c].push(g);
                }
                let params = grids[c].last().expect("grid searched").best;

                let hog_len = if spec.hog_weight.is_some() { table.hog_len() } else { 0 };
                let preprocessing = Preprocessing {
                    fusion: Some(spec.fusion(hog_len)?),
                    pca: pca.clone(),
                };
                let components = pca.as_ref().map(|p| p.output_dim());
                let result = evaluate(
                    dist,
                    rows_ref,
                    table,
                    &split.train,
                    &split.test,
                    &params,
                    cfg,
                    preprocessing,
                    &classes,
                )
                .map_err(|e| e.in_cell(format!("{cell_ctx} rep {r}")))?;
                reps[c].push(RepetitionResult {
                    rep: r,
                    seed: *seed,
                    params,
                    components,
                    ..result
                });
            }
        }
        for ((spec, g), rs) in group.iter().zip(grids).zip(reps) {
            let report = CellReport::new(*spec, g, rs, &classes);
            info!("{}: mean accuracy {:.4}", spec.label(), report.mean_accuracy);
            reports.push(report);
        }
    }
    Ok(ExperimentReport {
        classes,
        cells: reports,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    dist: &dyn SqDistances,
    rows: &[Vec<f64>],
    table: &FeatureTable,
    train: &[usize],
    test: &[usize],
    params: &KernelParams,
    cfg: &ExperimentConfig,
    preprocessing: Preprocessing,
    classes: &[Label],
) -> Result<RepetitionResult> {
    let trained = train_multiclass_indexed(dist, rows, &table.labels, train, params, &cfg.grid.smo, preprocessing)?;
    let nonconverged = trained.model.pairs.iter().filter(|p| !p.converged).count();
    if nonconverged > 0 {
        if cfg.strict_convergence {
            trained.model.ensure_converged()?;
        }
        warn!("{nonconverged} pair machines hit the iteration budget");
    }
    let predictions: Vec<PredictionRecord> = test
        .par_iter()
        .map(|&i| {
            let p = trained.predict_row(dist, i);
            PredictionRecord {
                sample_id: table.ids[i].clone(),
                truth: table.labels[i],
                predicted: p.label,
                votes: p.votes,
            }
        })
        .collect();
    let confusion = ConfusionMatrix::from_predictions(classes.to_vec(), &predictions);
    Ok(RepetitionResult {
        rep: 0,
        seed: 0,
        params: *params,
        accuracy: confusion.accuracy(),
        confusion,
        predictions,
        nonconverged,
        components: None,
    })
}

/// Fusion layout and, with a retention, PCA fitted on `samples`, together
/// with every sample's vector in the resulting space.
pub fn fit_preprocessing(
    table: &FeatureTable,
    samples: &[usize],
    spec: &CellSpec,
) -> Result<(Preprocessing, Vec<Vec<f64>>)> {
    let vectors = table.cell_vectors(spec)?;
    let hog_len = if spec.hog_weight.is_some() { table.hog_len() } else { 0 };
    let (rows, pca) = match spec.retention {
        None => (vectors, None),
        Some(ret) => {
            let train_rows: Vec<Vec<f64>> = samples.iter().map(|&i| vectors[i].clone()).collect();
            let model = PcaBasis::fit(&train_rows)?.select(ret)?;
            let rows = vectors
                .par_iter()
                .map(|x| model.transform(x))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            (rows, Some(model))
        }
    };
    let preprocessing = Preprocessing {
        fusion: Some(spec.fusion(hog_len)?),
        pca,
    };
    Ok((preprocessing, rows))
}

/// Trains one model on the given samples of `table` for a single cell, with
/// preprocessing embedded so it accepts unweighted raw vectors.
pub fn train_model(
    table: &FeatureTable,
    samples: &[usize],
    spec: &CellSpec,
    params: &KernelParams,
    cfg: &ExperimentConfig,
) -> Result<MultiClassModel> {
    let (preprocessing, rows) = fit_preprocessing(table, samples, spec)?;
    let train_rows: Vec<Vec<f64>> = samples.iter().map(|&i| rows[i].clone()).collect();
    let train_labels: Vec<Label> = samples.iter().map(|&i| table.labels[i]).collect();
    let model =
        crate::classifier::train_multiclass_with(&train_rows, &train_labels, params, &cfg.grid.smo, preprocessing)?;
    if cfg.strict_convergence {
        model.ensure_converged()?;
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub mean: f64,
    pub std: f64,
}

/// Tracking-only experiment per feature combination.
pub fn ablation_table(cfg: &ExperimentConfig, table: &FeatureTable, combos: &[FeatureMask]) -> Result<(Vec<TableRow>, ExperimentReport)> {
    if combos.is_empty() {
        return Err(ExperimentError::Config("no feature combinations".into()));
    }
    let run = ExperimentConfig {
        masks: combos.to_vec(),
        hog_weights: Vec::new(),
        retentions: Vec::new(),
        ..cfg.clone()
    };
    let report = run_on_features(&run, table)?;
    let rows = report
        .cells
        .iter()
        .map(|c| TableRow {
            label: c.spec.combo(),
            mean: c.mean_accuracy,
            std: c.std_accuracy,
        })
        .collect();
    Ok((rows, report))
}

/// Accuracy over every `(K, retention)` pair for the first mask of `cfg`.
pub fn fusion_sweep(
    cfg: &ExperimentConfig,
    table: &FeatureTable,
    k_values: &[f64],
    retentions: &[f64],
) -> Result<ExperimentReport> {
    if k_values.is_empty() || retentions.is_empty() {
        return Err(ExperimentError::Config("empty sweep grid".into()));
    }
    let run = ExperimentConfig {
        masks: vec![cfg.masks[0]],
        hog_weights: k_values.to_vec(),
        retentions: retentions.to_vec(),
        ..cfg.clone()
    };
    run_on_features(&run, table)
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut s = String::from("combo,mean,std\n");
    for r in rows {
        writeln!(s, "{},{},{}", r.label, r.mean, r.std).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            source: DataSource::Synthetic(SyntheticConfig {
                subjects: 2,
                repetitions: 5,
                image_size: 64,
                stereo: false,
                ..SyntheticConfig::default()
            }),
            grid: GridSearchConfig {
                c_grid: vec![10.0],
                gamma_grid: vec![0.1, 1.0],
                folds: 3,
                ..GridSearchConfig::default()
            },
            repetitions: 3,
            seed: 11,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let s: Vec<u64> = (0..50).map(|r| repetition_seed(7, r)).collect();
        let mut d = s.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 50);
        assert_eq!(repetition_seed(7, 3), s[3]);
        assert_ne!(repetition_seed(8, 3), s[3]);
    }

    #[test]
    fn report_shape_and_determinism() {
        let cfg = small_cfg();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.report_csv(), b.report_csv());
        let csv = a.report_csv();
        assert_eq!(csv.lines().count(), 1 + 3 + 1);
        let cell = &a.cells[0];
        let mean = cell.repetitions.iter().map(|r| r.accuracy).sum::<f64>() / 3.0;
        assert!((mean - cell.mean_accuracy).abs() <= 1e-12);
        for r in &cell.repetitions {
            assert_eq!(r.predictions.len(), 20);
            assert_eq!(r.confusion.row_sums(), vec![2; 10]);
            let recount = ConfusionMatrix::from_predictions(a.classes.clone(), &r.predictions);
            assert_eq!(recount, r.confusion);
        }
        assert_eq!(cell.grid.len(), 1);
    }

    #[test]
    fn confusion_csv_format() {
        let mut m = ConfusionMatrix::new((0..10).collect());
        for c in 0..10 {
            m.record(c, c);
        }
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 12);
        assert!(lines[..11].iter().all(|l| l.split(',').count() == 11));
        assert_eq!(lines[11], "accuracy,1");
        assert_eq!(m.accuracy(), 1.0);
    }

    #[test]
    fn cells_are_ordered_and_labelled() {
        let cfg = ExperimentConfig {
            masks: vec![FeatureMask::NONE, "A+D+T".parse().unwrap()],
            hog_weights: vec![1.0, 2.5],
            retentions: vec![0.9],
            ..ExperimentConfig::default()
        };
        let cells = cfg.cells();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0].combo(), "HOG");
        assert_eq!(cells[3].combo(), "A+D+T+HOG");
        assert_eq!(cells[3].k_label(), "2.5");
        assert_eq!(cells[3].slug(), "A-D-T-HOG_K2.5_R0.9");
    }

    #[test]
    fn config_round_trips_through_toml_and_json() {
        let cfg = ExperimentConfig {
            hog_weights: vec![1.0, 3.0],
            retentions: vec![0.8, 1.0],
            ..small_cfg()
        };
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("exp.toml");
        fs::write(&t, toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(ExperimentConfig::from_path(&t).unwrap(), cfg);
        let j = dir.path().join("exp.json");
        fs::write(&j, serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(ExperimentConfig::from_path(&j).unwrap(), cfg);
        fs::write(&t, "repetitions = \"many\"").unwrap();
        assert_eq!(ExperimentConfig::from_path(&t).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_cfg();
        cfg.repetitions = 0;
        assert!(run_experiment(&cfg).is_err());
        let mut cfg = small_cfg();
        cfg.masks = vec![FeatureMask::NONE];
        assert_eq!(run_experiment(&cfg).unwrap_err().exit_code(), 1);
    }
}
