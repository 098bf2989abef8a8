//! One-vs-One multi-class SVM.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{rbf_from_sq_dist, squared_distance, RowSqDistances, SqDistances};
use super::smo::{solve_dual, BinarySvmModel, SmoOptions, SV_EPS};
use super::{KernelParams, Label, Result, SvmError};
use crate::fusion::FusionConfig;
use crate::pca::PcaModel;

const MODEL_VERSION: u32 = 1;

/// Transformations applied to a raw vector before the kernel sees it.
///
/// With a fusion config the raw vector is the unweighted concatenation of
/// the selected tracking segments and the HOG descriptor.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub fusion: Option<FusionConfig>,
    pub pca: Option<PcaModel>,
}

impl Preprocessing {
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let weighted = match &self.fusion {
            Some(f) => f.weight(x)?,
            None => x.to_vec(),
        };
        match &self.pca {
            Some(p) => Ok(p.transform(&weighted)?),
            None => Ok(weighted),
        }
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.fusion
            .as_ref()
            .map(FusionConfig::dimension)
            .or_else(|| self.pca.as_ref().map(PcaModel::input_dim))
    }
}

/// Binary machine for classes `first < second` (indices into the class list).
/// A non-negative decision value is a vote for `first`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    pub first: usize,
    pub second: usize,
    /// Positions in the shared support-vector pool, ascending.
    pub support: Vec<usize>,
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl PairModel {
    fn decision(&self, pool_kernel: &[f64]) -> f64 {
        let s: f64 = self
            .support
            .iter()
            .zip(&self.dual_coefs)
            .map(|(&p, c)| c * pool_kernel[p])
            .sum();
        s + self.bias
    }
}

/// Outcome of one vote.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: Label,
    /// Index of `label` in the model's class list.
    pub class_index: usize,
    /// Votes per class, in class order.
    pub votes: Vec<u32>,
}

/// Majority vote over pair decisions `(first, second, value)`.
///
/// Ties go to the class with the largest summed |decision| over the votes
/// it received, then to the lowest class index.
pub fn vote(num_classes: usize, decisions: &[(usize, usize, f64)]) -> (usize, Vec<u32>) {
    let mut votes = vec![0u32; num_classes];
    let mut strength = vec![0.0f64; num_classes];
    for &(a, b, d) in decisions {
        let winner = if d >= 0.0 { a } else { b };
        votes[winner] += 1;
        strength[winner] += d.abs();
    }
    let mut best = 0;
    for k in 1..num_classes {
        if votes[k] > votes[best] || (votes[k] == votes[best] && strength[k] > strength[best]) {
            best = k;
        }
    }
    (best, votes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiClassModel {
    pub classes: Vec<Label>,
    pub params: KernelParams,
    /// Support vectors shared by all pairs, in the preprocessed space.
    pub sv_pool: Vec<Vec<f64>>,
    pub pairs: Vec<PairModel>,
    pub preprocessing: Preprocessing,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    classes: Vec<Label>,
    params: KernelParams,
    sv_pool: Vec<Vec<f64>>,
    pairs: Vec<PairModel>,
    preprocessing: Preprocessing,
}

/// Pairs trained over rows of a distance matrix, with the pool expressed as
/// row indices.
pub(crate) struct IndexedPairs {
    pub pool: Vec<usize>,
    pub pairs: Vec<PairModel>,
}

impl IndexedPairs {
    pub fn predict_row(&self, dist: &dyn SqDistances, row: usize, gamma: f64, num_classes: usize) -> (usize, Vec<u32>) {
        let k: Vec<f64> = self
            .pool
            .iter()
            .map(|&g| rbf_from_sq_dist(dist.sq_dist(g, row), gamma))
            .collect();
        let decisions: Vec<_> = self.pairs.iter().map(|p| (p.first, p.second, p.decision(&k))).collect();
        vote(num_classes, &decisions)
    }

    pub fn nonconverged(&self) -> usize {
        self.pairs.iter().filter(|p| !p.converged).count()
    }
}

/// Sorted distinct labels.
pub(crate) fn class_list(labels: &[Label]) -> Vec<Label> {
    let mut c = labels.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

/// Trains every pair over the rows `idx` of `dist`; `labels[t]` belongs to
/// row `idx[t]`.
pub(crate) fn fit_pairs(
    dist: &dyn SqDistances,
    idx: &[usize],
    labels: &[Label],
    classes: &[Label],
    params: &KernelParams,
    opts: &SmoOptions,
) -> Result<IndexedPairs> {
    let m = classes.len();
    let class_of: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label in class list"))
        .collect();
    let pair_ids: Vec<(usize, usize)> = (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect();

    let trained: Vec<(PairModel, Vec<usize>)> = pair_ids
        .par_iter()
        .map(|&(a, b)| {
            let mut rows = Vec::new();
            let mut y = Vec::new();
            for (t, &k) in class_of.iter().enumerate() {
                if k == a || k == b {
                    rows.push(idx[t]);
                    y.push(if k == a { 1.0 } else { -1.0 });
                }
            }
            let sol = solve_dual(dist, &rows, &y, params, opts).map_err(|e| match e {
                SvmError::SingleClassData(_) => {
                    SvmError::SingleClassData(format!("pair ({}, {})", classes[a], classes[b]))
                }
                other => other,
            })?;
            let mut sv_rows = Vec::new();
            let mut coefs = Vec::new();
            for (t, &al) in sol.alpha.iter().enumerate() {
                if al > SV_EPS {
                    sv_rows.push(rows[t]);
                    coefs.push(al * y[t]);
                }
            }
            Ok((
                PairModel {
                    first: a,
                    second: b,
                    support: Vec::new(),
                    dual_coefs: coefs,
                    bias: sol.bias,
                    converged: sol.converged,
                    iterations: sol.iterations,
                },
                sv_rows,
            ))
        })
        .collect::<Result<_>>()?;

    let mut pool: Vec<usize> = trained.iter().flat_map(|(_, r)| r.iter().copied()).collect();
    pool.sort_unstable();
    pool.dedup();
    let pairs = trained
        .into_iter()
        .map(|(mut p, sv_rows)| {
            // ascending whenever idx is
            p.support = sv_rows
                .iter()
                .map(|r| pool.binary_search(r).expect("row in pool"))
                .collect();
            p
        })
        .collect();
    Ok(IndexedPairs { pool, pairs })
}

/// Trains on already-preprocessed rows.
pub fn train_multiclass(
    data: &[Vec<f64>],
    labels: &[Label],
    params: &KernelParams,
    opts: &SmoOptions,
) -> Result<MultiClassModel> {
    train_multiclass_with(data, labels, params, opts, Preprocessing::default())
}

/// Trains on rows that `preprocessing` has already been applied to, and
/// stores it in the model so that [`MultiClassModel::predict`] accepts raw
/// vectors.
pub fn train_multiclass_with(
    data: &[Vec<f64>],
    labels: &[Label],
    params: &KernelParams,
    opts: &SmoOptions,
    preprocessing: Preprocessing,
) -> Result<MultiClassModel> {
    params.validate()?;
    if data.len() != labels.len() {
        return Err(SvmError::DimensionMismatch {
            expected: data.len(),
            got: labels.len(),
        });
    }
    if let Some(first) = data.first() {
        if let Some(bad) = data.iter().find(|r| r.len() != first.len()) {
            return Err(SvmError::DimensionMismatch {
                expected: first.len(),
                got: bad.len(),
            });
        }
    }
    let classes = class_list(labels);
    if classes.len() < 2 {
        return Err(SvmError::SingleClassData(format!("{} distinct labels", classes.len())));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let dist = RowSqDistances::new(data);
    let fitted = fit_pairs(&dist, &idx, labels, &classes, params, opts)?;
    Ok(MultiClassModel {
        classes,
        params: *params,
        sv_pool: fitted.pool.iter().map(|&r| data[r].clone()).collect(),
        pairs: fitted.pairs,
        preprocessing,
    })
}

/// Model trained over rows of a distance matrix that can also classify
/// other rows of the same matrix without recomputing distances.
#[derive(Debug, Clone)]
pub struct IndexedModel {
    pub model: MultiClassModel,
    /// Distance-matrix row of each pool entry.
    pub pool_rows: Vec<usize>,
}

impl IndexedModel {
    /// Same result as `model.predict_prepared(rows[row])`.
    pub fn predict_row(&self, dist: &dyn SqDistances, row: usize) -> Prediction {
        let gamma = self.model.params.gamma;
        let k: Vec<f64> = self
            .pool_rows
            .iter()
            .map(|&g| rbf_from_sq_dist(dist.sq_dist(g, row), gamma))
            .collect();
        let decisions: Vec<_> = self.model.pairs.iter().map(|p| (p.first, p.second, p.decision(&k))).collect();
        let (class_index, votes) = vote(self.model.classes.len(), &decisions);
        Prediction {
            label: self.model.classes[class_index],
            class_index,
            votes,
        }
    }
}

/// Trains on rows `train` of `dist`. `rows[i]` is the preprocessed vector
/// behind distance row `i` and `labels[i]` its class.
pub fn train_multiclass_indexed(
    dist: &dyn SqDistances,
    rows: &[Vec<f64>],
    labels: &[Label],
    train: &[usize],
    params: &KernelParams,
    opts: &SmoOptions,
    preprocessing: Preprocessing,
) -> Result<IndexedModel> {
    params.validate()?;
    if rows.len() != dist.len() || labels.len() != dist.len() {
        return Err(SvmError::DimensionMismatch {
            expected: dist.len(),
            got: rows.len().min(labels.len()),
        });
    }
    let train_labels: Vec<Label> = train.iter().map(|&i| labels[i]).collect();
    let classes = class_list(&train_labels);
    if classes.len() < 2 {
        return Err(SvmError::SingleClassData(format!("{} distinct labels", classes.len())));
    }
    let fitted = fit_pairs(dist, train, &train_labels, &classes, params, opts)?;
    Ok(IndexedModel {
        model: MultiClassModel {
            classes,
            params: *params,
            sv_pool: fitted.pool.iter().map(|&r| rows[r].clone()).collect(),
            pairs: fitted.pairs,
            preprocessing,
        },
        pool_rows: fitted.pool,
    })
}

impl MultiClassModel {
    /// Dimension of the preprocessed space.
    pub fn dim(&self) -> usize {
        self.sv_pool.first().map_or(0, Vec::len)
    }

    pub fn converged(&self) -> bool {
        self.pairs.iter().all(|p| p.converged)
    }

    pub fn ensure_converged(&self) -> Result<()> {
        match self.pairs.iter().find(|p| !p.converged) {
            None => Ok(()),
            Some(p) => Err(SvmError::NonConvergence {
                iterations: p.iterations,
                context: format!("pair ({}, {})", self.classes[p.first], self.classes[p.second]),
            }),
        }
    }

    /// Pair decision values `(first, second, value)` for a preprocessed vector.
    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<(usize, usize, f64)>> {
        if x.len() != self.dim() {
            return Err(SvmError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let k: Vec<f64> = self
            .sv_pool
            .iter()
            .map(|sv| rbf_from_sq_dist(squared_distance(sv, x), self.params.gamma))
            .collect();
        Ok(self.pairs.iter().map(|p| (p.first, p.second, p.decision(&k))).collect())
    }

    /// Predicts a vector that is already in the preprocessed space.
    pub fn predict_prepared(&self, x: &[f64]) -> Result<Prediction> {
        let decisions = self.decision_values(x)?;
        let (class_index, votes) = vote(self.classes.len(), &decisions);
        Ok(Prediction {
            label: self.classes[class_index],
            class_index,
            votes,
        })
    }

    /// Applies the stored preprocessing, then votes.
    pub fn predict(&self, raw: &[f64]) -> Result<Prediction> {
        let x = self.preprocessing.apply(raw)?;
        self.predict_prepared(&x)
    }

    /// The pair machine for classes `classes[first]` vs `classes[second]`
    /// as a standalone model.
    pub fn binary_model(&self, first: usize, second: usize) -> Option<BinarySvmModel> {
        let p = self.pairs.iter().find(|p| p.first == first && p.second == second)?;
        Some(BinarySvmModel {
            support_vectors: p.support.iter().map(|&i| self.sv_pool[i].clone()).collect(),
            dual_coefs: p.dual_coefs.clone(),
            bias: p.bias,
            params: self.params,
            converged: p.converged,
            iterations: p.iterations,
        })
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            version: MODEL_VERSION,
            classes: self.classes.clone(),
            params: self.params,
            sv_pool: self.sv_pool.clone(),
            pairs: self.pairs.clone(),
            preprocessing: self.preprocessing.clone(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s).map_err(|e| SvmError::Format(e.to_string()))?;
        if file.version != MODEL_VERSION {
            return Err(SvmError::Format(format!("unsupported model version {}", file.version)));
        }
        let m = file.classes.len();
        if file.pairs.len() != m * m.saturating_sub(1) / 2 {
            return Err(SvmError::Format(format!("{} pairs for {m} classes", file.pairs.len())));
        }
        let dim = file.sv_pool.first().map_or(0, Vec::len);
        if file.sv_pool.iter().any(|r| r.len() != dim) {
            return Err(SvmError::Format("ragged support vector pool".into()));
        }
        for p in &file.pairs {
            if p.first >= p.second
                || p.second >= m
                || p.support.len() != p.dual_coefs.len()
                || p.support.iter().any(|&i| i >= file.sv_pool.len())
            {
                return Err(SvmError::Format(format!("malformed pair ({}, {})", p.first, p.second)));
            }
        }
        file.params.validate().map_err(|e| SvmError::Format(e.to_string()))?;
        Ok(Self {
            classes: file.classes,
            params: file.params,
            sv_pool: file.sv_pool,
            pairs: file.pairs,
            preprocessing: file.preprocessing,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[[f64; 2]], per: usize, sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<Label>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..per {
                data.push(vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]);
                labels.push(k as Label * 10 + 3);
            }
        }
        (data, labels)
    }

    fn p() -> KernelParams {
        KernelParams::new(10.0, 0.5).unwrap()
    }

    #[test]
    fn ten_classes_give_45_pairs() {
        let centers: Vec<[f64; 2]> = (0..10).map(|k| [k as f64 * 4.0, (k % 3) as f64 * 4.0]).collect();
        let (data, labels) = blobs(&centers, 4, 0.3, 1);
        let m = train_multiclass(&data, &labels, &p(), &SmoOptions::default()).unwrap();
        assert_eq!(m.pairs.len(), 45);
        for x in &data {
            let pred = m.predict(x).unwrap();
            assert_eq!(pred.votes.iter().sum::<u32>(), 45);
        }
    }

    #[test]
    fn three_blobs_are_separated() {
        let (data, labels) = blobs(&[[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]], 15, 0.5, 2);
        let m = train_multiclass(&data, &labels, &p(), &SmoOptions::default()).unwrap();
        assert_eq!(m.pairs.len(), 3);
        assert_eq!(m.classes, vec![3, 13, 23]);
        for (x, &l) in data.iter().zip(&labels) {
            assert_eq!(m.predict(x).unwrap().label, l);
        }
        let deep = m.predict(&[5.0, 0.0]).unwrap();
        assert_eq!(deep.label, 13);
        assert_eq!(deep.votes, vec![0, 2, 1]);
    }

    #[test]
    fn two_classes_match_the_binary_machine() {
        let (data, labels) = blobs(&[[0.0, 0.0], [1.5, 1.0]], 12, 0.8, 3);
        let m = train_multiclass(&data, &labels, &p(), &SmoOptions::default()).unwrap();
        let bin = m.binary_model(0, 1).unwrap();
        for x in &data {
            let b = bin.predict(x).unwrap();
            let want = if b > 0.0 { m.classes[0] } else { m.classes[1] };
            assert_eq!(m.predict(x).unwrap().label, want);
        }
    }

    #[test]
    fn cyclic_tie_goes_to_the_strongest_votes() {
        // 0 beats 1, 1 beats 2, 2 beats 0
        let d = [(0, 1, 0.4), (1, 2, 0.9), (0, 2, -0.7)];
        let (w, votes) = vote(3, &d);
        assert_eq!(votes, vec![1, 1, 1]);
        assert_eq!(w, 1);
        for _ in 0..5 {
            assert_eq!(vote(3, &d).0, 1);
        }
        // equal strength falls back to class order
        let eq = [(0, 1, 0.5), (1, 2, 0.5), (0, 2, -0.5)];
        assert_eq!(vote(3, &eq).0, 0);
        // zero decision goes to the first class
        assert_eq!(vote(2, &[(0, 1, 0.0)]).0, 0);
    }

    #[test]
    fn json_round_trip_with_preprocessing() {
        let (data, labels) = blobs(&[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]], 8, 0.6, 4);
        let pre = Preprocessing {
            fusion: None,
            pca: Some(crate::pca::fit_pca(&data, crate::pca::Retention::Variance(1.0)).unwrap()),
        };
        let prepared: Vec<Vec<f64>> = data.iter().map(|x| pre.apply(x).unwrap()).collect();
        let m = train_multiclass_with(&prepared, &labels, &p(), &SmoOptions::default(), pre).unwrap();
        let back = MultiClassModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        for x in &data {
            assert_eq!(back.predict(x).unwrap(), m.predict(x).unwrap());
        }
        assert!(MultiClassModel::from_json(&m.to_json().replace("\"version\":1", "\"version\":9")).is_err());
    }

    #[test]
    fn indexed_prediction_matches_direct() {
        let (data, labels) = blobs(&[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]], 10, 0.9, 6);
        let dist = crate::classifier::DenseSqDistances::new(&data);
        let train: Vec<usize> = (0..data.len()).filter(|i| i % 3 != 0).collect();
        let im = train_multiclass_indexed(&dist, &data, &labels, &train, &p(), &SmoOptions::default(), Preprocessing::default())
            .unwrap();
        let tl: Vec<Label> = train.iter().map(|&i| labels[i]).collect();
        let tr: Vec<Vec<f64>> = train.iter().map(|&i| data[i].clone()).collect();
        let direct = train_multiclass(&tr, &tl, &p(), &SmoOptions::default()).unwrap();
        assert_eq!(im.model, direct);
        for (i, x) in data.iter().enumerate() {
            assert_eq!(im.predict_row(&dist, i), direct.predict(x).unwrap());
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (data, labels) = blobs(&[[0.0, 0.0], [3.0, 0.0]], 5, 0.5, 5);
        let m = train_multiclass(&data, &labels, &p(), &SmoOptions::default()).unwrap();
        assert!(matches!(m.predict(&[1.0]), Err(SvmError::DimensionMismatch { .. })));
        assert!(train_multiclass(&data[..3], &labels[..3], &p(), &SmoOptions::default()).is_err());
    }
}
