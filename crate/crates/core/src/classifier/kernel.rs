use rayon::prelude::*;

use super::{Result, SvmError};

/// `‖x − y‖²`, summed in index order.
#[inline]
pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

#[inline]
pub fn rbf_from_sq_dist(sq_dist: f64, gamma: f64) -> f64 {
    (-gamma * sq_dist).exp()
}

/// `exp(−γ‖x − y‖²)`.
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(SvmError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if !(gamma > 0.0) {
        return Err(SvmError::InvalidParameter(format!("gamma {gamma} must be positive")));
    }
    Ok(rbf_from_sq_dist(squared_distance(x, y), gamma))
}

/// Pairwise squared distances between the rows of a dataset.
pub trait SqDistances: Sync {
    fn len(&self) -> usize;
    fn sq_dist(&self, i: usize, j: usize) -> f64;
}

/// Computes distances on demand from the rows.
pub struct RowSqDistances<'a> {
    rows: &'a [Vec<f64>],
}

impl<'a> RowSqDistances<'a> {
    pub fn new(rows: &'a [Vec<f64>]) -> Self {
        Self { rows }
    }
}

impl SqDistances for RowSqDistances<'_> {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn sq_dist(&self, i: usize, j: usize) -> f64 {
        squared_distance(&self.rows[i], &self.rows[j])
    }
}

/// Precomputed symmetric distance matrix.
///
/// Entry `(i, j)` with `i ≤ j` is computed as `squared_distance(row_i, row_j)`
/// and mirrored, so the matrix is exactly symmetric.
#[derive(Debug, Clone)]
pub struct DenseSqDistances {
    n: usize,
    values: Vec<f64>,
}

impl DenseSqDistances {
    pub fn new(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (i..n).map(|j| squared_distance(&rows[i], &rows[j])).collect())
            .collect();
        let mut values = vec![0.0; n * n];
        for (i, row) in upper.into_iter().enumerate() {
            for (off, v) in row.into_iter().enumerate() {
                let j = i + off;
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Self { n, values }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

impl SqDistances for DenseSqDistances {
    fn len(&self) -> usize {
        self.n
    }

    #[inline]
    fn sq_dist(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// Rows `idx` of another distance matrix, renumbered from 0.
pub struct SubsetSqDistances<'a> {
    inner: &'a dyn SqDistances,
    idx: &'a [usize],
}

impl<'a> SubsetSqDistances<'a> {
    pub fn new(inner: &'a dyn SqDistances, idx: &'a [usize]) -> Self {
        Self { inner, idx }
    }
}

impl SqDistances for SubsetSqDistances<'_> {
    fn len(&self) -> usize {
        self.idx.len()
    }

    #[inline]
    fn sq_dist(&self, i: usize, j: usize) -> f64 {
        self.inner.sq_dist(self.idx[i], self.idx[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_examples() {
        assert_eq!(rbf_kernel(&[1.0, 2.0], &[1.0, 2.0], 0.7).unwrap(), 1.0);
        // ‖x − y‖² = 4 = 1/γ
        let k = rbf_kernel(&[0.0, 0.0], &[2.0, 0.0], 0.25).unwrap();
        assert!((k - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k - 0.36788).abs() < 1e-5);
        assert!(rbf_kernel(&[0.0], &[0.0, 1.0], 1.0).is_err());
        assert!(rbf_kernel(&[0.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn small_gamma_tends_to_one_monotonically() {
        let (x, y) = ([0.3, -1.0, 2.0], [1.0, 0.5, -0.5]);
        let mut prev = 0.0;
        for e in 0..12 {
            let k = rbf_kernel(&x, &y, 10f64.powi(-e)).unwrap();
            assert!(k > prev && k <= 1.0);
            prev = k;
        }
        assert!(1.0 - prev < 1e-9);
    }

    #[test]
    fn dense_matches_on_demand() {
        let rows: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64 * 0.1, -(i as f64)]).collect();
        let dense = DenseSqDistances::new(&rows);
        let lazy = RowSqDistances::new(&rows);
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(dense.sq_dist(i, j).to_bits(), dense.sq_dist(j, i).to_bits());
                assert_eq!(dense.sq_dist(i, j).to_bits(), lazy.sq_dist(i.min(j), i.max(j)).to_bits());
            }
        }
    }
}
