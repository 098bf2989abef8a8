//! SMO for the soft-margin SVM dual
//!
//! ```text
//! min ½ αᵀQα − eᵀα   s.t.  0 ≤ α ≤ C,  yᵀα = 0,   Q_ij = y_i y_j K(x_i, x_j)
//! ```
//!
//! Each iteration picks the maximal KKT-violating pair and solves the
//! two-variable subproblem analytically.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::kernel::{rbf_from_sq_dist, squared_distance, RowSqDistances, SqDistances};
use super::{KernelParams, Result, SvmError};

/// Support vectors are rows with `α > SV_EPS`.
pub const SV_EPS: f64 = 1e-8;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoOptions {
    /// Stopping tolerance on the maximal violation `m(α) − M(α)`.
    pub tol: f64,
    /// Budget of pair updates.
    pub max_iter: usize,
    /// Problems up to this size keep every kernel row they touch.
    pub cache_limit: usize,
    /// Rows held by the LRU cache for larger problems.
    pub lru_rows: usize,
}

impl Default for SmoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 1_000_000,
            cache_limit: 4096,
            lru_rows: 512,
        }
    }
}

enum RowStore {
    Full(Vec<Option<Arc<[f64]>>>),
    Lru {
        rows: HashMap<usize, Arc<[f64]>>,
        order: VecDeque<usize>,
        capacity: usize,
    },
}

/// Kernel rows over a subset of a dataset. Values are identical whichever
/// store is used.
struct KernelRows<'a> {
    dist: &'a dyn SqDistances,
    idx: &'a [usize],
    gamma: f64,
    store: RowStore,
}

impl<'a> KernelRows<'a> {
    fn new(dist: &'a dyn SqDistances, idx: &'a [usize], gamma: f64, opts: &SmoOptions) -> Self {
        let n = idx.len();
        let store = if n <= opts.cache_limit {
            RowStore::Full(vec![None; n])
        } else {
            RowStore::Lru {
                rows: HashMap::new(),
                order: VecDeque::new(),
                capacity: opts.lru_rows.max(2),
            }
        };
        Self {
            dist,
            idx,
            gamma,
            store,
        }
    }

    fn compute(&self, i: usize) -> Arc<[f64]> {
        let gi = self.idx[i];
        self.idx
            .iter()
            .map(|&gt| rbf_from_sq_dist(self.dist.sq_dist(gi, gt), self.gamma))
            .collect()
    }

    fn row(&mut self, i: usize) -> Arc<[f64]> {
        let cached = match &mut self.store {
            RowStore::Full(rows) => rows[i].clone(),
            RowStore::Lru { rows, order, .. } => {
                let hit = rows.get(&i).cloned();
                if hit.is_some() {
                    if let Some(p) = order.iter().position(|&k| k == i) {
                        order.remove(p);
                    }
                    order.push_back(i);
                }
                hit
            }
        };
        if let Some(r) = cached {
            return r;
        }
        let r = self.compute(i);
        match &mut self.store {
            RowStore::Full(rows) => rows[i] = Some(r.clone()),
            RowStore::Lru {
                rows,
                order,
                capacity,
            } => {
                if rows.len() >= *capacity {
                    if let Some(old) = order.pop_front() {
                        rows.remove(&old);
                    }
                }
                rows.insert(i, r.clone());
                order.push_back(i);
            }
        }
        r
    }

    fn diag(&self, i: usize) -> f64 {
        rbf_from_sq_dist(self.dist.sq_dist(self.idx[i], self.idx[i]), self.gamma)
    }
}

/// Result of one dual solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Offset added to `Σ α_i y_i K(x_i, x)`.
    pub bias: f64,
    /// `½ αᵀQα − eᵀα` at the returned point.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves the dual over the rows `idx` of `dist` with labels `y ∈ {−1, +1}`.
pub fn solve_dual(
    dist: &dyn SqDistances,
    idx: &[usize],
    y: &[f64],
    params: &KernelParams,
    opts: &SmoOptions,
) -> Result<DualSolution> {
    params.validate()?;
    let n = idx.len();
    if y.len() != n {
        return Err(SvmError::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(SvmError::InvalidParameter(format!("label {bad} is not ±1")));
    }
    if !(opts.tol > 0.0) {
        return Err(SvmError::InvalidParameter(format!("tol {} must be positive", opts.tol)));
    }
    let has_pos = y.iter().any(|&v| v > 0.0);
    let has_neg = y.iter().any(|&v| v < 0.0);
    if n < 2 || !has_pos || !has_neg {
        return Err(SvmError::SingleClassData(format!("{n}-row binary problem")));
    }

    let c = params.c;
    let mut kernel = KernelRows::new(dist, idx, params.gamma, opts);
    let qd: Vec<f64> = (0..n).map(|i| kernel.diag(i)).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < opts.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let ki = kernel.row(i);
        let kj = kernel.row(j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * ki[j];
        if y[i] != y[j] {
            let quad = (qd[i] + qd[j] + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
        }

        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }

    let bias = -compute_rho(&alpha, &grad, y, c);
    let objective = 0.5
        * alpha
            .iter()
            .zip(&grad)
            .map(|(a, g)| a * (g - 1.0))
            .sum::<f64>();
    Ok(DualSolution {
        alpha,
        bias,
        objective,
        iterations,
        converged,
    })
}

/// Average `y_i ∇_i` over free variables, or the midpoint of the feasible
/// interval when none is free.
fn compute_rho(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum_free = 0.0;
    let mut n_free = 0usize;
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// Trained binary RBF SVM. Positive decision values mean label `+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i y_i` per support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub params: KernelParams,
    pub converged: bool,
    pub iterations: usize,
}

/// Trains on rows `data` with labels `±1`.
///
/// A run that exhausts `max_iter` still returns its model with
/// `converged == false`; see [`BinarySvmModel::ensure_converged`].
pub fn train_binary(
    data: &[Vec<f64>],
    labels: &[f64],
    params: &KernelParams,
    opts: &SmoOptions,
) -> Result<BinarySvmModel> {
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
    let idx: Vec<usize> = (0..data.len()).collect();
    let dist = RowSqDistances::new(data);
    let sol = solve_dual(&dist, &idx, labels, params, opts)?;
    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for (t, &a) in sol.alpha.iter().enumerate() {
        if a > SV_EPS {
            support_vectors.push(data[t].clone());
            dual_coefs.push(a * labels[t]);
        }
    }
    Ok(BinarySvmModel {
        support_vectors,
        dual_coefs,
        bias: sol.bias,
        params: *params,
        converged: sol.converged,
        iterations: sol.iterations,
    })
}

impl BinarySvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    /// `Σ_i coef_i K(sv_i, x) + bias`.
    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(SvmError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let s: f64 = self
            .support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, c)| c * rbf_from_sq_dist(squared_distance(sv, x), self.params.gamma))
            .sum();
        Ok(s + self.bias)
    }

    /// `+1` for non-negative decision values, `−1` otherwise.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(if self.decision_value(x)? >= 0.0 { 1.0 } else { -1.0 })
    }

    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(SvmError::NonConvergence {
                iterations: self.iterations,
                context: "binary model".into(),
            })
        }
    }
}
