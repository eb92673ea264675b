use serde::{Deserialize, Serialize};

use super::{CaError, Result};
use crate::filter::FilteredDataset;
use crate::ingest::IdMap;

/// Sparse 0/1 matrix holding only the positions of the ones, with both a
/// row-major and a column-major view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseBinaryMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
}

impl SparseBinaryMatrix {
    /// Builds from (row, col) positions; duplicates collapse to a single one.
    /// Panics if a position is out of bounds.
    pub fn from_positions(n_rows: usize, n_cols: usize, positions: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut pos: Vec<(u32, u32)> = positions.into_iter().collect();
        for &(i, j) in &pos {
            assert!((i as usize) < n_rows && (j as usize) < n_cols, "position ({i}, {j}) out of bounds");
        }
        pos.sort_unstable();
        pos.dedup();

        let mut row_ptr = vec![0usize; n_rows + 1];
        for &(i, _) in &pos {
            row_ptr[i as usize + 1] += 1;
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx: Vec<u32> = pos.iter().map(|&(_, j)| j).collect();

        let mut col_ptr = vec![0usize; n_cols + 1];
        for &(_, j) in &pos {
            col_ptr[j as usize + 1] += 1;
        }
        for j in 0..n_cols {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut fill = col_ptr.clone();
        let mut row_idx = vec![0u32; pos.len()];
        // rows visited in increasing order, so each column's rows come out sorted
        for &(i, j) in &pos {
            row_idx[fill[j as usize]] = i;
            fill[j as usize] += 1;
        }
        SparseBinaryMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            col_ptr,
            row_idx,
        }
    }

    /// Dense boolean rows, mostly for tests and small fixtures.
    pub fn from_dense(rows: &[Vec<u8>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let pos = rows.iter().enumerate().flat_map(|(i, r)| {
            r.iter()
                .enumerate()
                .filter(|(_, &v)| v != 0)
                .map(move |(j, _)| (i as u32, j as u32))
        });
        Self::from_positions(rows.len(), n_cols, pos)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Column indices of the ones in row `i`, ascending.
    pub fn row(&self, i: usize) -> &[u32] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Row indices of the ones in column `j`, ascending.
    pub fn col(&self, j: usize) -> &[u32] {
        &self.row_idx[self.col_ptr[j]..self.col_ptr[j + 1]]
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.row_ptr.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn col_sums(&self) -> Vec<usize> {
        self.col_ptr.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Errors with the first empty row or column.
    pub fn check_marginals(&self) -> Result<()> {
        if let Some(i) = self.row_sums().iter().position(|&s| s == 0) {
            return Err(CaError::ZeroMarginal {
                axis: Axis::Row,
                index: i,
                id: None,
            });
        }
        if let Some(j) = self.col_sums().iter().position(|&s| s == 0) {
            return Err(CaError::ZeroMarginal {
                axis: Axis::Col,
                index: j,
                id: None,
            });
        }
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.row(i).binary_search(&(j as u32)).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Row,
    Col,
}

/// A matrix together with the entity ids of its rows and columns.
#[derive(Debug, Clone)]
pub struct LabeledMatrix {
    pub matrix: SparseBinaryMatrix,
    pub row_ids: IdMap,
    pub col_ids: IdMap,
}

impl LabeledMatrix {
    /// Labels rows `r0, r1, ...` and columns `c0, c1, ...`.
    pub fn with_index_ids(matrix: SparseBinaryMatrix) -> Self {
        let row_ids = (0..matrix.n_rows()).map(|i| format!("r{i}")).collect();
        let col_ids = (0..matrix.n_cols()).map(|j| format!("c{j}")).collect();
        LabeledMatrix {
            matrix,
            row_ids,
            col_ids,
        }
    }
}

/// Restricts the surviving edges to `row_set × col_set` (user and brand
/// indices of the dataset). Matrix rows/columns follow the order of the sets.
pub fn build_matrix(dataset: &FilteredDataset, row_set: &[u32], col_set: &[u32]) -> Result<LabeledMatrix> {
    let es = &dataset.edges;
    let mut row_pos = vec![u32::MAX; es.n_users()];
    for (p, &u) in row_set.iter().enumerate() {
        row_pos[u as usize] = p as u32;
    }
    let mut col_pos = vec![u32::MAX; es.n_brands()];
    for (p, &b) in col_set.iter().enumerate() {
        col_pos[b as usize] = p as u32;
    }
    let positions = es.edges().iter().filter_map(|&(u, b)| {
        let (i, j) = (row_pos[u as usize], col_pos[b as usize]);
        (i != u32::MAX && j != u32::MAX).then_some((i, j))
    });
    let matrix = SparseBinaryMatrix::from_positions(row_set.len(), col_set.len(), positions);
    let row_ids: IdMap = row_set.iter().map(|&u| es.users.token(u).to_string()).collect();
    let col_ids: IdMap = col_set.iter().map(|&b| es.brands.token(b).to_string()).collect();
    if let Err(CaError::ZeroMarginal { axis, index, .. }) = matrix.check_marginals() {
        let id = match axis {
            Axis::Row => row_ids.token(index as u32),
            Axis::Col => col_ids.token(index as u32),
        };
        return Err(CaError::ZeroMarginal {
            axis,
            index,
            id: Some(id.to_string()),
        });
    }
    Ok(LabeledMatrix {
        matrix,
        row_ids,
        col_ids,
    })
}
