use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use gesturelab::classifier::{grid_search, GridSearchConfig, KernelParams, MultiClassModel};
use gesturelab::dataset::{default_templates, generate_synthetic, save_dataset, split_indices, SyntheticConfig};
use gesturelab::experiment::{
    ablation_table, extract_features, fit_preprocessing, fusion_sweep, load_source, repetition_seed, run_on_features, table_csv,
    train_model, CellSpec, ConfusionMatrix, DataSource, ExperimentConfig, ExperimentError, FeatureTable,
    PredictionRecord,
};
use gesturelab::tracking::FeatureMask;

#[derive(Parser)]
#[command(name = "gesturelab", version, about = "Hand gesture recognition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment configuration (TOML or JSON)
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Dataset manifest, overriding the configured source
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Number of repetitions
    #[arg(long)]
    repetitions: Option<usize>,
    /// Feature combinations such as A+D+T (comma-separated, `none` for HOG only)
    #[arg(long, value_delimiter = ',')]
    masks: Option<Vec<FeatureMask>>,
    /// HOG weights (comma-separated)
    #[arg(long = "k", value_delimiter = ',')]
    hog_weights: Option<Vec<f64>>,
    /// PCA retentions (comma-separated)
    #[arg(long, value_delimiter = ',')]
    retentions: Option<Vec<f64>>,
    /// Cross-validation folds
    #[arg(long)]
    folds: Option<usize>,
    /// Fail when an SMO run exhausts its iteration budget
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset
    Synth {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 13)]
        subjects: u32,
        #[arg(long, default_value_t = 20)]
        reps: u32,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Render only the left image
        #[arg(long)]
        mono: bool,
    },
    /// Write per-sample feature vectors as CSV
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train one model for the first configured cell
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
        /// Use these hyper-parameters instead of searching
        #[arg(long, requires = "gamma")]
        c: Option<f64>,
        #[arg(long, requires = "c")]
        gamma: Option<f64>,
    },
    /// Classify a dataset with a trained model
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Cross-validated hyper-parameter search for every configured cell
    GridSearch {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Tracking-feature ablation table
    Ablation {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Accuracy over HOG weights and PCA retentions
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Full experiment report
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
    },
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_path(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(m) = &self.manifest {
            cfg.source = DataSource::Manifest(m.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.repetitions {
            cfg.repetitions = r;
        }
        if let Some(m) = &self.masks {
            cfg.masks = m.clone();
        }
        if let Some(k) = &self.hog_weights {
            cfg.hog_weights = k.clone();
        }
        if let Some(r) = &self.retentions {
            cfg.retentions = r.clone();
        }
        if let Some(f) = self.folds {
            cfg.grid.folds = f;
        }
        if self.strict {
            cfg.strict_convergence = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn features(cfg: &ExperimentConfig, with_hog: bool) -> Result<FeatureTable, ExperimentError> {
    let ds = load_source(&cfg.source)?;
    info!("{} samples", ds.samples.len());
    extract_features(&ds, cfg.angle_range, with_hog.then_some(&cfg.pipeline))
}

fn write(path: &Path, text: &str) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Synth {
            out,
            subjects,
            reps,
            seed,
            mono,
        } => {
            let cfg = SyntheticConfig {
                subjects,
                repetitions: reps,
                seed,
                stereo: !mono,
                ..SyntheticConfig::default()
            };
            let ds = generate_synthetic(&default_templates(), &cfg)?;
            let manifest = save_dataset(&ds, &out)?;
            println!("{} samples written to {}", ds.samples.len(), manifest.display());
        }
        Command::Extract { common, out } => {
            let cfg = common.load()?;
            let table = features(&cfg, cfg.uses_hog())?;
            let mask = cfg.masks[0];
            let mut s = String::from("sample_id,label");
            let width = table.raw_vector(0, mask, cfg.uses_hog())?.len();
            for j in 0..width {
                write!(s, ",f{j}").unwrap();
            }
            s.push('\n');
            for i in 0..table.len() {
                write!(s, "{},{}", table.ids[i], table.labels[i]).unwrap();
                for v in table.raw_vector(i, mask, cfg.uses_hog())? {
                    write!(s, ",{v}").unwrap();
                }
                s.push('\n');
            }
            write(&out, &s)?;
        }
        Command::Train { common, out, c, gamma } => {
            let cfg = common.load()?;
            let table = features(&cfg, cfg.uses_hog())?;
            let spec = cfg.cells()[0];
            let all: Vec<usize> = (0..table.len()).collect();
            let params = match (c, gamma) {
                (Some(c), Some(g)) => KernelParams::new(c, g)?,
                _ => {
                    let best = search_params(&cfg, &table, &spec)?;
                    info!("selected C={} gamma={}", best.c, best.gamma);
                    best
                }
            };
            let model = train_model(&table, &all, &spec, &params, &cfg)?;
            write(&out, &model.to_json())?;
            println!("{}: C={} gamma={} {} support vectors", spec.label(), params.c, params.gamma, model.sv_pool.len());
        }
        Command::Predict { common, model, out } => {
            let cfg = common.load()?;
            let text = fs::read_to_string(&model).map_err(|source| ExperimentError::Io {
                path: model.display().to_string(),
                source,
            })?;
            let model = MultiClassModel::from_json(&text)?;
            let fusion = model
                .preprocessing
                .fusion
                .clone()
                .ok_or_else(|| ExperimentError::Config("model carries no fusion layout".into()))?;
            let with_hog = fusion.hog_len > 0;
            let table = features(&cfg, with_hog)?;
            let mut log = Vec::with_capacity(table.len());
            for i in 0..table.len() {
                let p = model.predict(&table.raw_vector(i, fusion.tracking_mask, with_hog)?)?;
                log.push(PredictionRecord {
                    sample_id: table.ids[i].clone(),
                    truth: table.labels[i],
                    predicted: p.label,
                    votes: p.votes,
                });
            }
            let mut s = String::from("sample_id,true,pred,votes\n");
            for r in &log {
                let votes: Vec<String> = r.votes.iter().map(u32::to_string).collect();
                writeln!(s, "{},{},{},{}", r.sample_id, r.truth, r.predicted, votes.join(";")).unwrap();
            }
            write(&out, &s)?;
            let mut classes = model.classes.clone();
            classes.extend(table.labels.iter().copied());
            classes.sort_unstable();
            classes.dedup();
            let confusion = ConfusionMatrix::from_predictions(classes, &log);
            println!("accuracy {}", confusion.accuracy());
        }
        Command::GridSearch { common, out } => {
            let cfg = common.load()?;
            let table = features(&cfg, cfg.uses_hog())?;
            let mut s = String::from("combo,K,retention,C,gamma,correct,total,accuracy,selected\n");
            for spec in cfg.cells() {
                let (train, rows) = search_rows(&cfg, &table, &spec)?;
                let train_labels: Vec<u32> = train.iter().map(|&i| table.labels[i]).collect();
                let gcfg = GridSearchConfig {
                    seed: repetition_seed(cfg.seed, 0),
                    ..cfg.grid.clone()
                };
                let result = grid_search(&rows, &train_labels, &gcfg)?;
                for cell in &result.table {
                    let selected = cell.c == result.best.c && cell.gamma == result.best.gamma;
                    writeln!(
                        s,
                        "{},{},{},{},{},{},{},{},{}",
                        spec.combo(),
                        spec.k_label(),
                        spec.retention_label(),
                        cell.c,
                        cell.gamma,
                        cell.correct,
                        cell.total,
                        cell.accuracy,
                        selected
                    )
                    .unwrap();
                }
                println!("{}: C={} gamma={} cv accuracy {}", spec.label(), result.best.c, result.best.gamma, result.best_accuracy);
            }
            write(&out, &s)?;
        }
        Command::Ablation { common, out } => {
            let mut cfg = common.load()?;
            let combos = common.masks.clone().unwrap_or_else(FeatureMask::ablation_rows);
            cfg.hog_weights.clear();
            let table = features(&cfg, false)?;
            let (rows, report) = ablation_table(&cfg, &table, &combos)?;
            report.write(&out)?;
            write(&out.join("ablation.csv"), &table_csv(&rows))?;
            for r in rows {
                println!("{:<10} {:.4} ± {:.4}", r.label, r.mean, r.std);
            }
        }
        Command::Sweep { common, out } => {
            let mut cfg = common.load()?;
            if common.repetitions.is_none() {
                cfg.repetitions = 10;
            }
            let ks = common.hog_weights.clone().unwrap_or_else(|| (1..=9).map(f64::from).collect());
            let rets = common.retentions.clone().unwrap_or_else(|| vec![0.6, 0.7, 0.8, 0.9, 1.0]);
            let table = features(&cfg, true)?;
            let report = fusion_sweep(&cfg, &table, &ks, &rets)?;
            report.write(&out)?;
            print!("{}", report.summary_csv());
        }
        Command::Report { common, out } => {
            let cfg = common.load()?;
            let table = features(&cfg, cfg.uses_hog())?;
            let report = run_on_features(&cfg, &table)?;
            report.write(&out)?;
            print!("{}", report.summary_csv());
        }
    }
    Ok(())
}

/// Training indices of the first repetition and the cell's vectors for them.
fn search_rows(
    cfg: &ExperimentConfig,
    table: &FeatureTable,
    spec: &CellSpec,
) -> Result<(Vec<usize>, Vec<Vec<f64>>), ExperimentError> {
    let split = split_indices(&table.labels, cfg.train_fraction, repetition_seed(cfg.seed, 0), cfg.stratified)?;
    let (_, rows) = fit_preprocessing(table, &split.train, spec)?;
    let train_rows = split.train.iter().map(|&i| rows[i].clone()).collect();
    Ok((split.train, train_rows))
}

fn search_params(cfg: &ExperimentConfig, table: &FeatureTable, spec: &CellSpec) -> Result<KernelParams, ExperimentError> {
    let (train, rows) = search_rows(cfg, table, spec)?;
    let labels: Vec<u32> = train.iter().map(|&i| table.labels[i]).collect();
    let gcfg = GridSearchConfig {
        seed: repetition_seed(cfg.seed, 0),
        ..cfg.grid.clone()
    };
    Ok(grid_search(&rows, &labels, &gcfg)?.best)
}

fn configure_threads() -> Result<(), ExperimentError> {
    if let Ok(v) = std::env::var("GESTURELAB_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| ExperimentError::Config(format!("GESTURELAB_THREADS={v} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
