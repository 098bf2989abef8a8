//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero if any of them fails.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use gesturelab::classifier::{
    rbf_kernel, solve_dual, squared_distance, train_multiclass, GridSearchConfig, KernelParams, RowSqDistances,
    SmoOptions,
};
use gesturelab::dataset::{default_templates, generate_synthetic, SyntheticConfig};
use gesturelab::experiment::{extract_features, fit_preprocessing, run_experiment, run_on_features, CellSpec, DataSource, ExperimentConfig, FeatureTable};
use gesturelab::fusion::{fuse_values, FusionConfig};
use gesturelab::imaging::{
    binarize, compute_hog, otsu_threshold, histogram, undistort, GrayImage, HogParams, ImagePipeline, Threshold,
    UndistortionMap,
};
use gesturelab::pca::{PcaBasis, Retention};
use gesturelab::tracking::{
    extract_tracking_features, AngleRange, FeatureMask, HandFrame, TrackingConfig, TrackingFeatures, Vec3,
    FINGER_SLOTS, TIP_PAIRS,
};
use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mask(s: &str) -> FeatureMask {
    s.parse().unwrap()
}

fn small_synthetic(subjects: u32, repetitions: u32) -> SyntheticConfig {
    SyntheticConfig {
        subjects,
        repetitions,
        ..SyntheticConfig::default()
    }
}

fn structural() -> Outcome {
    let ds = generate_synthetic(&default_templates(), &small_synthetic(2, 3)).map_err(|e| e.to_string())?;
    let pipeline = ImagePipeline::default();
    let table = extract_features(&ds, AngleRange::default(), Some(&pipeline)).map_err(|e| e.to_string())?;
    let adt = mask("A+D+T");
    let rows: Vec<Vec<f64>> = (0..table.len()).map(|i| table.raw_vector(i, adt, false).unwrap()).collect();
    let model = train_multiclass(&rows, &table.labels, &KernelParams::new(10.0, 0.1).unwrap(), &SmoOptions::default())
        .map_err(|e| e.to_string())?;
    let classes = model.classes.len();
    let pairs = model.pairs.len();
    let adt_dim = rows[0].len();
    let adet_dim = table.raw_vector(0, mask("A+D+E+T"), false).unwrap().len();
    let fusion = FusionConfig::new(adt, 1.0, table.hog_len()).map_err(|e| e.to_string())?;
    let fused = fuse_values(&table.tracking[0], &table.hog.as_ref().unwrap()[0], &fusion).map_err(|e| e.to_string())?;
    check(
        classes == 10 && pairs == 45 && adt_dim == 20 && adet_dim == 25 && fusion.dimension() == 20 + 1764 && fused.len() == 1784,
        format!("classes {classes}, binary models {pairs}, A+D+T {adt_dim}, A+D+E+T {adet_dim}, fused {}", fused.len()),
    )
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), rng.random_range(-PI..PI))
}

fn random_frame(rng: &mut ChaCha8Rng) -> HandFrame {
    let pose = random_rotation(rng);
    let center = Vec3::new(rng.random_range(-200.0..200.0), rng.random_range(0.0..400.0), rng.random_range(-200.0..200.0));
    let count = rng.random_range(1..=FINGER_SLOTS);
    // angles kept well apart so that slot order is not a numerical coin flip
    let mut angles: Vec<f64> = Vec::new();
    while angles.len() < count {
        let a = rng.random_range(-2.5..2.5);
        if angles.iter().all(|b: &f64| (a - *b).abs() > 0.05) {
            angles.push(a);
        }
    }
    let tips: Vec<Vec3> = angles
        .iter()
        .map(|&a| {
            let r = rng.random_range(30.0..110.0);
            let local = Vec3::new(r * a.sin(), r * a.cos(), rng.random_range(-40.0..40.0));
            center + pose * local
        })
        .collect();
    let middle = rng.random_range(0..count);
    HandFrame::new(center, pose * Vec3::z(), pose * Vec3::y(), tips, Some(middle)).unwrap()
}

fn segments(f: &TrackingFeatures) -> [Vec<f64>; 4] {
    [f.angles.to_vec(), f.distances.to_vec(), f.elevations.to_vec(), f.tip_distances.to_vec()]
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = TrackingConfig {
        mask: mask("A+D+E+T"),
        angle_range: AngleRange::default(),
    };
    let mut rigid_worst = 0.0f64;
    let mut scale_worst = 0.0f64;
    for _ in 0..1000 {
        let frame = random_frame(&mut rng);
        let base = segments(&extract_tracking_features(&frame, &cfg).unwrap());

        let q = random_rotation(&mut rng);
        let t = Vec3::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0));
        let moved = HandFrame::new(
            q * frame.palm_center + t,
            q * frame.palm_normal,
            q * frame.hand_direction,
            frame.fingertips.iter().map(|p| q * p + t).collect(),
            frame.middle_index,
        )
        .unwrap();
        let after = segments(&extract_tracking_features(&moved, &cfg).unwrap());
        for (a, b) in base.iter().zip(&after) {
            rigid_worst = rigid_worst.max(max_diff(a, b));
        }

        let s = rng.random_range(0.5..2.0);
        let c = frame.palm_center;
        let scaled = HandFrame::new(
            c,
            frame.palm_normal,
            frame.hand_direction,
            frame.fingertips.iter().map(|p| c + (p - c) * s).collect(),
            frame.middle_index,
        )
        .unwrap();
        let after = segments(&extract_tracking_features(&scaled, &cfg).unwrap());
        for (a, b) in base.iter().zip(&after).skip(1) {
            scale_worst = scale_worst.max(max_diff(a, b));
        }
    }
    check(
        rigid_worst < 1e-9 && scale_worst < 1e-9,
        format!("max change under rigid motion {rigid_worst:.2e}, under scaling {scale_worst:.2e}"),
    )
}

fn projector(vectors: &[Vec<f64>], k: usize, d: usize) -> Vec<f64> {
    let mut p = vec![0.0; d * d];
    for v in &vectors[..k] {
        for i in 0..d {
            for j in 0..d {
                p[i * d + j] += v[i] * v[j];
            }
        }
    }
    p
}

fn pca_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut eig_worst = 0.0f64;
    let mut proj_worst = 0.0f64;
    let mut minimal = true;
    for _ in 0..20 {
        let n = rng.random_range(3..=60);
        let d = rng.random_range(1..=60);
        // anisotropic columns give a spread spectrum
        let spread: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..3.0)).collect();
        let data: Vec<Vec<f64>> = (0..n).map(|_| spread.iter().map(|s| s * rng.random_range(-1.0..1.0)).collect()).collect();
        let basis = PcaBasis::fit(&data).map_err(|e| e.to_string())?;
        let (values, vectors) = common::jacobi_eigen(&common::covariance(&data));
        let ours = basis.eigenvalues();
        let rank = ours.len();
        for (a, b) in ours.iter().zip(&values) {
            eig_worst = eig_worst.max((a - b).abs());
        }
        // oracle eigenvalues past our rank must be null
        for b in &values[rank..] {
            eig_worst = eig_worst.max(b.abs());
        }
        let full = basis.select(Retention::Dimension(1.0)).map_err(|e| e.to_string())?;
        for k in 1..=rank.min(full.components.len()) {
            let gap_ok = k == values.len() || values[k - 1] - values[k] > 1e-6;
            if !gap_ok {
                continue;
            }
            let p_ours = projector(&full.components, k, d);
            let p_oracle = projector(&vectors, k, d);
            proj_worst = proj_worst.max(max_diff(&p_ours, &p_oracle));
        }
        let total: f64 = values.iter().filter(|v| **v > 0.0).sum();
        for f in [0.3, 0.5, 0.8, 0.9, 0.95, 0.99, 1.0] {
            let k = basis.components_for(Retention::Variance(f)).map_err(|e| e.to_string())?;
            let cum = |m: usize| values[..m].iter().sum::<f64>() / total;
            let reaches = cum(k) >= f - 1e-9;
            let previous_short = k == 1 || cum(k - 1) < f + 1e-9;
            minimal &= reaches && previous_short;
        }
    }
    check(
        eig_worst < 1e-8 && proj_worst < 1e-8 && minimal,
        format!("eigenvalue error {eig_worst:.2e}, projector error {proj_worst:.2e}, minimal selection {minimal}"),
    )
}

fn svm_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let mut gap_worst = 0.0f64;
    let mut eq_worst = 0.0f64;
    let mut box_ok = true;
    for _ in 0..50 {
        let n = rng.random_range(2..=12);
        let d = rng.random_range(1..=4);
        let data: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let mut y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        let params = KernelParams::new(10f64.powf(rng.random_range(-1.0..2.0)), 10f64.powf(rng.random_range(-1.0..0.5))).unwrap();
        let idx: Vec<usize> = (0..n).collect();
        let sol = solve_dual(&RowSqDistances::new(&data), &idx, &y, &params, &SmoOptions::default())
            .map_err(|e| e.to_string())?;
        let k: Vec<Vec<f64>> = data
            .iter()
            .map(|a| data.iter().map(|b| (-params.gamma * squared_distance(a, b)).exp()).collect())
            .collect();
        let reference = common::projected_gradient_dual(&k, &y, params.c);
        let ours = common::dual_objective(&k, &y, &sol.alpha);
        let oracle = common::dual_objective(&k, &y, &reference);
        gap_worst = gap_worst.max((ours - oracle).abs()).max((sol.objective - oracle).abs());
        eq_worst = eq_worst.max(sol.alpha.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().abs());
        box_ok &= sol.alpha.iter().all(|&a| (0.0..=params.c).contains(&a));
    }
    check(
        gap_worst <= 1e-4 && eq_worst <= 1e-8 && box_ok,
        format!("objective gap {gap_worst:.2e}, |Σαy| {eq_worst:.2e}, box respected {box_ok}"),
    )
}

fn random_tracking(rng: &mut ChaCha8Rng) -> TrackingFeatures {
    let mut f = TrackingFeatures {
        angles: [0.0; FINGER_SLOTS],
        distances: [0.0; FINGER_SLOTS],
        elevations: [0.0; FINGER_SLOTS],
        tip_distances: [0.0; TIP_PAIRS],
        scale: 1.0,
    };
    for v in f.angles.iter_mut().chain(&mut f.distances).chain(&mut f.elevations).chain(&mut f.tip_distances) {
        *v = rng.random_range(-1.5..1.5);
    }
    f
}

fn kernel_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let adt = mask("A+D+T");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(0.0..9.0);
        let gamma = 10f64.powf(rng.random_range(-4.0..0.0));
        let hog_len = 1764;
        let cfg = FusionConfig::new(adt, k, hog_len).unwrap();
        let (ta, tb) = (random_tracking(&mut rng), random_tracking(&mut rng));
        let ha: Vec<f64> = (0..hog_len).map(|_| rng.random_range(0.0..0.3)).collect();
        let hb: Vec<f64> = (0..hog_len).map(|_| rng.random_range(0.0..0.3)).collect();
        let fa = fuse_values(&ta, &ha, &cfg).unwrap();
        let fb = fuse_values(&tb, &hb, &cfg).unwrap();
        let dt: f64 = ta.select(adt).iter().zip(tb.select(adt)).map(|(a, b)| (a - b).powi(2)).sum();
        let dh: f64 = ha.iter().zip(&hb).map(|(a, b)| (a - b).powi(2)).sum();
        let expected = (-gamma * (dt + k * k * dh)).exp();
        let got = rbf_kernel(&fa, &fb, gamma).unwrap();
        worst = worst.max((got - expected).abs());
    }
    check(worst <= 1e-12, format!("max kernel deviation {worst:.2e} over 100 pairs"))
}

fn fast_grid() -> GridSearchConfig {
    GridSearchConfig {
        c_grid: vec![1.0, 10.0, 100.0],
        gamma_grid: vec![0.01, 0.1, 1.0],
        folds: 5,
        ..GridSearchConfig::default()
    }
}

fn isometry() -> Outcome {
    let ds = generate_synthetic(&default_templates(), &small_synthetic(2, 6)).map_err(|e| e.to_string())?;
    let table = extract_features(&ds, AngleRange::default(), Some(&ImagePipeline::default())).map_err(|e| e.to_string())?;
    let gamma = 0.1;

    // kernel matrices of the fitting samples, fused features, with and without PCA
    let train: Vec<usize> = (0..table.len()).step_by(2).collect();
    let spec = |retention| CellSpec {
        mask: mask("A+D+T"),
        hog_weight: Some(1.0),
        retention,
    };
    let (_, raw) = fit_preprocessing(&table, &train, &spec(None)).map_err(|e| e.to_string())?;
    let (_, reduced) = fit_preprocessing(&table, &train, &spec(Some(Retention::Variance(1.0)))).map_err(|e| e.to_string())?;
    let mut kernel_worst = 0.0f64;
    for &i in &train {
        for &j in &train {
            let a = rbf_kernel(&raw[i], &raw[j], gamma).unwrap();
            let b = rbf_kernel(&reduced[i], &reduced[j], gamma).unwrap();
            kernel_worst = kernel_worst.max((a - b).abs());
        }
    }

    let base = ExperimentConfig {
        masks: vec![mask("A+D+T")],
        grid: fast_grid(),
        repetitions: 3,
        ..ExperimentConfig::default()
    };
    let predictions = |cfg: &ExperimentConfig, table: &FeatureTable| -> Result<Vec<(String, u32)>, String> {
        let report = run_on_features(cfg, table).map_err(|e| e.to_string())?;
        Ok(report.cells[0]
            .repetitions
            .iter()
            .flat_map(|r| r.predictions.iter().map(|p| (p.sample_id.clone(), p.predicted)))
            .collect())
    };
    let plain = predictions(&base, &table)?;
    let pca_all = predictions(
        &ExperimentConfig {
            retentions: vec![1.0],
            ..base.clone()
        },
        &table,
    )?;
    let k_zero = predictions(
        &ExperimentConfig {
            hog_weights: vec![0.0],
            ..base.clone()
        },
        &table,
    )?;
    check(
        kernel_worst <= 1e-10 && plain == pca_all && plain == k_zero,
        format!(
            "kernel deviation {kernel_worst:.2e}, retention-1.0 predictions equal {}, K=0 predictions equal {} ({} predictions)",
            plain == pca_all,
            plain == k_zero,
            plain.len()
        ),
    )
}

fn end_to_end() -> Outcome {
    let cfg = SyntheticConfig::default();
    let ds = generate_synthetic(&default_templates(), &cfg).map_err(|e| e.to_string())?;
    let table = extract_features(&ds, AngleRange::default(), Some(&ImagePipeline::default())).map_err(|e| e.to_string())?;
    let base = ExperimentConfig {
        source: DataSource::Synthetic(cfg),
        repetitions: 10,
        ..ExperimentConfig::default()
    };
    let mean = |masks: Vec<FeatureMask>, hog_weights: Vec<f64>| -> Result<f64, String> {
        let run = ExperimentConfig {
            masks,
            hog_weights,
            ..base.clone()
        };
        Ok(run_on_features(&run, &table).map_err(|e| e.to_string())?.cells[0].mean_accuracy)
    };
    let tracking = mean(vec![mask("A+D+T")], Vec::new())?;
    let hog = mean(vec![FeatureMask::default()], vec![1.0])?;
    let fused = mean(vec![mask("A+D+T")], vec![1.0])?;
    check(
        tracking >= 0.85 && hog >= tracking - 0.05 && fused >= tracking.max(hog) - 0.01 && fused >= 0.95,
        format!("{} samples: A+D+T {tracking:.4}, HOG {hog:.4}, fused K=1 {fused:.4}", table.len()),
    )
}

fn protocol_shape() -> Outcome {
    let cfg = ExperimentConfig {
        source: DataSource::Synthetic(SyntheticConfig {
            image_size: 64,
            stereo: false,
            ..small_synthetic(2, 6)
        }),
        grid: fast_grid(),
        repetitions: 50,
        seed: 7,
        ..ExperimentConfig::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        run_experiment(&cfg).map_err(|e| e.to_string())?.write(dir.path()).map_err(|e| e.to_string())?;
    }
    let text = std::fs::read_to_string(dirs[0].path().join("report.csv")).unwrap();
    let mut accuracies = Vec::new();
    let mut aggregate = None;
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let value: f64 = fields[4].parse().unwrap();
        if fields[3] == "mean" {
            aggregate = Some(value);
        } else {
            accuracies.push(value);
        }
    }
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let aggregate = aggregate.ok_or("no aggregate row")?;

    let mut identical = true;
    let mut files = 0;
    for entry in std::fs::read_dir(dirs[0].path()).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(dirs[0].path().join(&name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(&name)).ok();
        identical &= b.as_deref() == Some(a.as_slice());
        files += 1;
    }
    check(
        accuracies.len() == 50 && (aggregate - mean).abs() <= 1e-12 && identical,
        format!(
            "{} accuracy rows, aggregate deviation {:.2e}, {files} report files byte-identical {identical}",
            accuracies.len(),
            (aggregate - mean).abs()
        ),
    )
}

fn noise(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
    GrayImage::new(w, h, (0..w * h).map(|_| rng.random()).collect()).unwrap()
}

fn image_goldens() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let mut identity_exact = true;
    for (w, h) in [(1usize, 1usize), (2, 7), (16, 16), (33, 20), (160, 160)] {
        let raw = noise(&mut rng, w, h);
        let map = UndistortionMap::identity(w, h).unwrap();
        identity_exact &= undistort(&raw, &map, (w, h)).unwrap() == raw;
    }

    let mut zero_hog = true;
    for value in [0u8, 77, 255] {
        let img = GrayImage::filled(64, 64, value).unwrap();
        zero_hog &= compute_hog(&img, &HogParams::default()).unwrap().values.iter().all(|&v| v == 0.0);
    }

    let mut lengths_ok = true;
    let combos = [
        (64, 64, HogParams::default()),
        (64, 128, HogParams::default()),
        (48, 48, HogParams { cell_size: 6, block_cells: 3, block_stride: 1, bins: 12, clip: 0.2 }),
        (96, 64, HogParams { cell_size: 8, block_cells: 2, block_stride: 2, bins: 9, clip: 0.2 }),
        (40, 80, HogParams { cell_size: 4, block_cells: 4, block_stride: 3, bins: 6, clip: 0.3 }),
    ];
    for (w, h, p) in combos {
        // count block placements directly
        let placements = |cells: usize| (0..cells).step_by(p.block_stride).filter(|s| s + p.block_cells <= cells).count();
        let expected = placements(w / p.cell_size) * placements(h / p.cell_size) * p.block_cells * p.block_cells * p.bins;
        let img = noise(&mut rng, w, h);
        lengths_ok &= compute_hog(&img, &p).unwrap().values.len() == expected;
    }
    lengths_ok &= ImagePipeline::default().descriptor_len().unwrap() == 1764;

    let mut otsu_ok = true;
    for _ in 0..50 {
        let lo: u8 = rng.random_range(0..255);
        let hi: u8 = rng.random_range(lo + 1..=255);
        let p = rng.random_range(0.05..0.95);
        let (w, h) = (rng.random_range(2..40), rng.random_range(2..40));
        let mut img = GrayImage::new(w, h, (0..w * h).map(|_| if rng.random_bool(p) { hi } else { lo }).collect()).unwrap();
        if !img.data().contains(&lo) || !img.data().contains(&hi) {
            img = GrayImage::from_fn(w, h, |x, _| if x == 0 { lo } else { hi }).unwrap();
        }
        let t = otsu_threshold(&histogram(&img));
        let bin = binarize(&img, Threshold::Otsu);
        let separated = img.data().iter().zip(bin.data()).all(|(&v, &b)| (v == hi) == (b == 255) && (b == 0 || b == 255));
        otsu_ok &= t.is_some() && separated;
    }
    check(
        identity_exact && zero_hog && lengths_ok && otsu_ok,
        format!("identity exact {identity_exact}, constant HOG zero {zero_hog}, lengths {lengths_ok}, Otsu sweep {otsu_ok}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("structural", structural, Duration::from_secs(60)),
        ("tracking invariance", invariance, Duration::from_secs(10)),
        ("PCA oracle", pca_oracle, Duration::from_secs(30)),
        ("SVM oracle", svm_oracle, Duration::from_secs(120)),
        ("kernel weighting identity", kernel_identity, Duration::MAX),
        ("isometry", isometry, Duration::MAX),
        ("synthetic end-to-end", end_to_end, Duration::from_secs(20 * 60)),
        ("protocol shape", protocol_shape, Duration::MAX),
        ("image goldens", image_goldens, Duration::from_secs(10)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, (name, run, budget)) in criteria.iter().enumerate() {
        let id = n + 1;
        if !filter.is_empty() && !filter.iter().any(|f| *f == id.to_string() || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= *budget => (true, d),
            Ok(d) => (false, format!("{d}; over time budget")),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!(
            "criterion {id} ({name}): {} [{:.1}s] {detail}",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
