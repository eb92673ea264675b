//! Shared fixtures and dense reference computations.
#![allow(dead_code)]

pub mod fixtures;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sesmap_core::ca::SparseBinaryMatrix;

/// Random 0/1 matrix with every row and column nonempty.
pub fn random_dense(seed: u64, rows: usize, cols: usize, density: f64) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m: Vec<Vec<u8>> = (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_bool(density) as u8).collect())
        .collect();
    for row in m.iter_mut() {
        if row.iter().all(|&x| x == 0) {
            row[rng.random_range(0..cols)] = 1;
        }
    }
    for j in 0..cols {
        if m.iter().all(|r| r[j] == 0) {
            let i = rng.random_range(0..rows);
            m[i][j] = 1;
        }
    }
    m
}

pub fn sparse(dense: &[Vec<u8>]) -> SparseBinaryMatrix {
    SparseBinaryMatrix::from_dense(dense)
}

/// Correspondence analysis by a full dense SVD of the explicitly assembled
/// standardized residual matrix.
pub struct DenseCa {
    pub s: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub row_std: DMatrix<f64>,
    pub col_std: DMatrix<f64>,
    pub r: Vec<f64>,
    pub c: Vec<f64>,
}

pub fn dense_ca(dense: &[Vec<u8>], k: usize) -> DenseCa {
    let (ni, nj) = (dense.len(), dense[0].len());
    let total: f64 = dense.iter().flatten().map(|&x| x as f64).sum();
    let p = DMatrix::from_fn(ni, nj, |i, j| dense[i][j] as f64 / total);
    let r: Vec<f64> = (0..ni).map(|i| p.row(i).sum()).collect();
    let c: Vec<f64> = (0..nj).map(|j| p.column(j).sum()).collect();
    let s = DMatrix::from_fn(ni, nj, |i, j| (p[(i, j)] - r[i] * c[j]) / (r[i] * c[j]).sqrt());
    let svd = s.clone().svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = &order[..k];
    let row_std = DMatrix::from_fn(ni, k, |i, d| u[(i, top[d])] / r[i].sqrt());
    let col_std = DMatrix::from_fn(nj, k, |j, d| vt[(top[d], j)] / c[j].sqrt());
    DenseCa {
        singular_values: top.iter().map(|&t| svd.singular_values[t]).collect(),
        s,
        row_std,
        col_std,
        r,
        c,
    }
}

/// Largest absolute difference after flipping each column of `b` to best
/// match `a`.
pub fn max_diff_sign_aligned(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut worst = 0.0f64;
    for d in 0..a.ncols() {
        let dot = a.column(d).dot(&b.column(d));
        let s = if dot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..a.nrows() {
            worst = worst.max((a[(i, d)] - s * b[(i, d)]).abs());
        }
    }
    worst
}
