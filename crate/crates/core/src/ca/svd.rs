//! Randomized truncated SVD of the residual operator.
//!
//! A Gaussian sketch of width `k + oversampling` is refined by subspace
//! iteration. After each pass the Ritz triplets are extracted from the small
//! projected problem and the pass stops once every kept triplet satisfies
//! `‖S v − σ u‖ ≤ tol · σ₁` (and at least `power_iterations` passes ran).

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CaError, ResidualOperator, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvdParams {
    pub oversampling: usize,
    /// Minimum number of subspace-iteration passes.
    pub power_iterations: usize,
    pub seed: u64,
    /// Relative residual at which the iteration stops.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvdParams {
    fn default() -> Self {
        SvdParams {
            oversampling: 10,
            power_iterations: 4,
            seed: 0,
            tolerance: 1e-12,
            max_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// `I × k` left singular vectors.
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// `J × k` right singular vectors.
    pub v: DMatrix<f64>,
    pub iterations: usize,
    pub max_residual: f64,
}

fn orthonormalize(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

pub fn truncated_svd(op: &ResidualOperator<'_>, k: usize, params: &SvdParams) -> Result<TruncatedSvd> {
    let (n_rows, n_cols) = (op.n_rows(), op.n_cols());
    let width = (k + params.oversampling).min(n_rows.min(n_cols));
    assert!(k >= 1 && k <= width, "rank must be in 1..=min(I, J)");

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let omega = DMatrix::from_fn(n_cols, width, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormalize(op.apply_block(&omega));

    let mut max_residual = f64::INFINITY;
    for it in 1..=params.max_iterations.max(1) {
        // Qᵀ S = Wᵀ; W = A Σ Bᵀ gives S ≈ (Q B) Σ Aᵀ
        let w = op.apply_transpose_block(&q);
        let svd = w.svd(true, true);
        let (a, bt) = (svd.u.expect("requested u"), svd.v_t.expect("requested v_t"));
        let sigma = svd.singular_values;
        let mut order: Vec<usize> = (0..sigma.len()).collect();
        order.sort_by(|&x, &y| sigma[y].total_cmp(&sigma[x]));

        let a = a.select_columns(&order);
        let u = &q * bt.transpose().select_columns(&order);
        let sigma: Vec<f64> = order.iter().map(|&i| sigma[i]).collect();

        let y = op.apply_block(&a);
        let scale = sigma[0].max(f64::MIN_POSITIVE);
        max_residual = (0..k)
            .map(|d| (y.column(d) - u.column(d) * sigma[d]).norm() / scale)
            .fold(0.0, f64::max);

        if it >= params.power_iterations && max_residual <= params.tolerance {
            return Ok(TruncatedSvd {
                u: u.columns(0, k).into_owned(),
                singular_values: sigma[..k].to_vec(),
                v: a.columns(0, k).into_owned(),
                iterations: it,
                max_residual,
            });
        }
        q = orthonormalize(y);
    }
    Err(CaError::ConvergenceFailure {
        iterations: params.max_iterations,
        max_residual,
        tolerance: params.tolerance,
    })
}
