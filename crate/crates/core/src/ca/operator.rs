use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{CaError, Result, SparseBinaryMatrix};

/// The standardized residual matrix `S = D_r (P - r cᵀ) D_c` of a binary
/// matrix `N`, with `P = N / n`, `D_r = diag(1/√r)` and `D_c = diag(1/√c)`.
///
/// `S` is never formed. Applying it to `v` costs `O(nnz + I + J)`:
/// `S v = D_r N (D_c v) / n - √r (√cᵀ v)`.
#[derive(Debug, Clone)]
pub struct ResidualOperator<'a> {
    matrix: &'a SparseBinaryMatrix,
    grand_total: u64,
    row_masses: Vec<f64>,
    col_masses: Vec<f64>,
    inv_sqrt_row: Vec<f64>,
    inv_sqrt_col: Vec<f64>,
    sqrt_row: Vec<f64>,
    sqrt_col: Vec<f64>,
}

impl<'a> ResidualOperator<'a> {
    pub fn new(matrix: &'a SparseBinaryMatrix) -> Result<Self> {
        matrix.check_marginals()?;
        let grand_total = matrix.nnz() as u64;
        let total = grand_total as f64;
        let row_masses: Vec<f64> = matrix.row_sums().iter().map(|&s| s as f64 / total).collect();
        let col_masses: Vec<f64> = matrix.col_sums().iter().map(|&s| s as f64 / total).collect();
        let sqrt_row: Vec<f64> = row_masses.iter().map(|r| r.sqrt()).collect();
        let sqrt_col: Vec<f64> = col_masses.iter().map(|c| c.sqrt()).collect();
        Ok(ResidualOperator {
            matrix,
            grand_total,
            inv_sqrt_row: sqrt_row.iter().map(|s| 1.0 / s).collect(),
            inv_sqrt_col: sqrt_col.iter().map(|s| 1.0 / s).collect(),
            row_masses,
            col_masses,
            sqrt_row,
            sqrt_col,
        })
    }

    pub fn matrix(&self) -> &SparseBinaryMatrix {
        self.matrix
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.n_cols()
    }

    pub fn grand_total(&self) -> u64 {
        self.grand_total
    }

    pub fn row_masses(&self) -> &[f64] {
        &self.row_masses
    }

    pub fn col_masses(&self) -> &[f64] {
        &self.col_masses
    }

    pub fn inv_sqrt_row(&self) -> &[f64] {
        &self.inv_sqrt_row
    }

    pub fn inv_sqrt_col(&self) -> &[f64] {
        &self.inv_sqrt_col
    }

    pub fn sqrt_row(&self) -> &[f64] {
        &self.sqrt_row
    }

    pub fn sqrt_col(&self) -> &[f64] {
        &self.sqrt_col
    }

    /// Total inertia `‖S‖²_F = Σ_{ij} P_ij² / (r_i c_j) - 1`, summed over the
    /// nonzeros only.
    pub fn total_inertia(&self) -> f64 {
        let total = self.grand_total as f64;
        let p = 1.0 / total;
        let s: f64 = (0..self.n_rows())
            .into_par_iter()
            .map(|i| {
                let ri = self.row_masses[i];
                self.matrix
                    .row(i)
                    .iter()
                    .map(|&j| p * p / (ri * self.col_masses[j as usize]))
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        (s - 1.0).max(0.0)
    }

    /// `S v` for a vector of length `J`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_input(v, self.n_cols())?;
        let block = DMatrix::from_column_slice(v.len(), 1, v);
        Ok(self.apply_block(&block).as_slice().to_vec())
    }

    /// `Sᵀ u` for a vector of length `I`.
    pub fn apply_transpose(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_input(u, self.n_rows())?;
        let block = DMatrix::from_column_slice(u.len(), 1, u);
        Ok(self.apply_transpose_block(&block).as_slice().to_vec())
    }

    /// `S V` for a `J × l` block.
    pub fn apply_block(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(v.nrows(), self.n_cols(), "block has wrong row count");
        let m = self.matrix;
        spmm(
            v,
            self.n_rows(),
            |i| m.row(i),
            &self.inv_sqrt_col,
            &self.inv_sqrt_row,
            &self.sqrt_col,
            &self.sqrt_row,
            self.grand_total as f64,
        )
    }

    /// `Sᵀ U` for an `I × l` block.
    pub fn apply_transpose_block(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(u.nrows(), self.n_rows(), "block has wrong row count");
        let m = self.matrix;
        spmm(
            u,
            self.n_cols(),
            |j| m.col(j),
            &self.inv_sqrt_row,
            &self.inv_sqrt_col,
            &self.sqrt_row,
            &self.sqrt_col,
            self.grand_total as f64,
        )
    }
}

fn check_input(v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(CaError::DimensionMismatch {
            expected,
            got: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CaError::NonFinite);
    }
    Ok(())
}

/// Shared kernel for both orientations:
/// `out[a,:] = out_scale[a] / total · Σ_{b ∈ nz(a)} in_scale[b] x[b,:] − out_sqrt[a] (in_sqrtᵀ x)`.
///
/// Output rows are computed independently, so the result does not depend on
/// the thread schedule.
#[allow(clippy::too_many_arguments)]
fn spmm<'m>(
    x: &DMatrix<f64>,
    n_out: usize,
    nz: impl Fn(usize) -> &'m [u32] + Sync,
    in_scale: &[f64],
    out_scale: &[f64],
    in_sqrt: &[f64],
    out_sqrt: &[f64],
    total: f64,
) -> DMatrix<f64> {
    let l = x.ncols();
    let n_in = x.nrows();
    // row-major copy of D·x so each gathered row is contiguous
    let mut scaled = vec![0.0; n_in * l];
    for c in 0..l {
        let col = x.column(c);
        for b in 0..n_in {
            scaled[b * l + c] = in_scale[b] * col[b];
        }
    }
    let proj: Vec<f64> = (0..l)
        .map(|c| x.column(c).iter().zip(in_sqrt).map(|(v, s)| v * s).sum())
        .collect();

    let mut out = vec![0.0; n_out * l];
    out.par_chunks_mut(l.max(1)).enumerate().for_each(|(a, row)| {
        for &b in nz(a) {
            let src = &scaled[b as usize * l..(b as usize + 1) * l];
            for (o, s) in row.iter_mut().zip(src) {
                *o += s;
            }
        }
        let f = out_scale[a] / total;
        for (o, p) in row.iter_mut().zip(&proj) {
            *o = f * *o - out_sqrt[a] * p;
        }
    });
    DMatrix::from_row_slice(n_out, l, &out)
}
