use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svd::{truncated_svd, SvdParams};
use super::{Axis, CaError, EntityKind, LabeledMatrix, ResidualOperator, Result};
use crate::ingest::IdMap;

/// Singular values at or below this are treated as exact zeros.
pub const RANK_EPS: f64 = 1e-10;

/// Total inertia below this means the residual matrix is numerically zero.
pub const DEGENERATE_INERTIA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    /// Sign applied to each dimension relative to the canonical fit output.
    pub signs: Vec<i8>,
    pub anchor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub seed: u64,
    pub oversampling: usize,
    pub power_iterations: usize,
    pub iterations_run: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub nnz: usize,
    pub total_inertia: f64,
    pub k_requested: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub kind: EntityKind,
    pub ids: Vec<String>,
    pub positive: bool,
}

/// A fitted correspondence analysis.
///
/// Row and column standard coordinates are the singular vectors scaled by
/// inverse square-root masses, so each coordinate column has mass-weighted
/// mean 0 and variance 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CaModel {
    pub singular_values: Vec<f64>,
    /// `I × k`
    pub row_coords: DMatrix<f64>,
    /// `J × k`
    pub col_coords: DMatrix<f64>,
    pub row_masses: Vec<f64>,
    pub col_masses: Vec<f64>,
    pub row_ids: IdMap,
    pub col_ids: IdMap,
    pub orientation: Orientation,
    pub fit_meta: FitMeta,
}

impl CaModel {
    /// Fits the top `k_dims` nontrivial dimensions. The trivial dimension is
    /// absent from the operator, and trailing dimensions with zero singular
    /// value are dropped.
    pub fn fit(lm: &LabeledMatrix, k_dims: usize, params: &SvdParams) -> Result<CaModel> {
        let m = &lm.matrix;
        let max_k = m.n_rows().min(m.n_cols()).saturating_sub(1);
        if k_dims == 0 || k_dims > max_k {
            return Err(CaError::InvalidRank { k: k_dims, max: max_k });
        }
        let op = ResidualOperator::new(m)?;
        let inertia = op.total_inertia();
        if inertia <= DEGENERATE_INERTIA {
            return Err(CaError::DegenerateMatrix { total_inertia: inertia });
        }
        let svd = truncated_svd(&op, k_dims, params)?;
        let k = svd.singular_values.iter().take_while(|&&s| s > RANK_EPS).count();
        if k == 0 {
            return Err(CaError::DegenerateMatrix { total_inertia: inertia });
        }
        if k < k_dims {
            log::warn!("residual matrix has numerical rank {k}; keeping {k} of {k_dims} dimensions");
        }

        let mut u = svd.u.columns(0, k).into_owned();
        let mut v = svd.v.columns(0, k).into_owned();
        // canonical sign: largest-magnitude column loading positive
        for d in 0..k {
            let col = v.column(d);
            let (jmax, _) = col.iter().enumerate().fold((0, 0.0f64), |best, (j, &x)| {
                if x.abs() > best.1 {
                    (j, x.abs())
                } else {
                    best
                }
            });
            if col[jmax] < 0.0 {
                v.column_mut(d).neg_mut();
                u.column_mut(d).neg_mut();
            }
        }

        let mut row_coords = u;
        for (i, mut row) in row_coords.row_iter_mut().enumerate() {
            row *= op.inv_sqrt_row()[i];
        }
        let mut col_coords = v;
        for (j, mut row) in col_coords.row_iter_mut().enumerate() {
            row *= op.inv_sqrt_col()[j];
        }

        Ok(CaModel {
            singular_values: svd.singular_values[..k].to_vec(),
            row_coords,
            col_coords,
            row_masses: op.row_masses().to_vec(),
            col_masses: op.col_masses().to_vec(),
            row_ids: lm.row_ids.clone(),
            col_ids: lm.col_ids.clone(),
            orientation: Orientation {
                signs: vec![1; k],
                anchor: None,
            },
            fit_meta: FitMeta {
                seed: params.seed,
                oversampling: params.oversampling,
                power_iterations: params.power_iterations,
                iterations_run: svd.iterations,
                max_residual: svd.max_residual,
                tolerance: params.tolerance,
                n_rows: m.n_rows(),
                n_cols: m.n_cols(),
                nnz: m.nnz(),
                total_inertia: inertia,
                k_requested: k_dims,
            },
        })
    }

    pub fn k_dims(&self) -> usize {
        self.singular_values.len()
    }

    pub fn n_rows(&self) -> usize {
        self.row_coords.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.col_coords.nrows()
    }

    /// Share of total inertia carried by each kept dimension.
    pub fn explained_inertia(&self) -> Vec<f64> {
        self.singular_values
            .iter()
            .map(|s| s * s / self.fit_meta.total_inertia)
            .collect()
    }

    pub fn coords(&self, axis: Axis) -> &DMatrix<f64> {
        match axis {
            Axis::Row => &self.row_coords,
            Axis::Col => &self.col_coords,
        }
    }

    fn ids(&self, axis: Axis) -> &IdMap {
        match axis {
            Axis::Row => &self.row_ids,
            Axis::Col => &self.col_ids,
        }
    }

    /// Projects supplementary columns given as sets of model row indices.
    /// Indices outside the model are dropped and counted.
    pub fn project_columns(&self, cols: &[Vec<u32>]) -> Result<Projection> {
        ProfileProjector::new(&self.row_coords).project_all(cols)
    }

    /// Projects supplementary rows given as sets of model column indices.
    pub fn project_rows(&self, rows: &[Vec<u32>]) -> Result<Projection> {
        ProfileProjector::new(&self.col_coords).project_all(rows)
    }

    /// Flips dimension 1 so that the mean coordinate of the anchor set has
    /// the requested sign.
    pub fn orient(&self, anchor: &Anchor) -> Result<CaModel> {
        let axis = anchor.kind.axis();
        let ids = self.ids(axis);
        if anchor.ids.is_empty() {
            return Err(CaError::UnknownAnchor(String::new()));
        }
        let mut sum = 0.0;
        for id in &anchor.ids {
            let i = ids.get(id).ok_or_else(|| CaError::UnknownAnchor(id.clone()))?;
            sum += self.coords(axis)[(i as usize, 0)];
        }
        let mut out = self.clone();
        let satisfied = if anchor.positive { sum >= 0.0 } else { sum <= 0.0 };
        if !satisfied {
            out.row_coords.column_mut(0).neg_mut();
            out.col_coords.column_mut(0).neg_mut();
            out.orientation.signs[0] = -out.orientation.signs[0];
        }
        out.orientation.anchor = Some(format!(
            "{} [{}] {}",
            anchor.kind.as_str(),
            anchor.ids.join(","),
            if anchor.positive { "positive" } else { "negative" }
        ));
        Ok(out)
    }

    /// Anchor on the column with the largest mass, pointing positive.
    pub fn default_anchor(&self) -> Anchor {
        let j = self
            .col_masses
            .iter()
            .enumerate()
            .fold(0, |best, (j, &m)| if m > self.col_masses[best] { j } else { best });
        Anchor {
            kind: EntityKind::Brand,
            ids: vec![self.col_ids.token(j as u32).to_string()],
            positive: true,
        }
    }

    /// Writes a JSON manifest at `path` and the coordinates to a binary
    /// sidecar next to it: little-endian f64, row coordinates then column
    /// coordinates, each row-major.
    pub fn save(&self, path: &Path) -> Result<()> {
        let sidecar = sidecar_path(path);
        let manifest = ModelManifest {
            format: MODEL_FORMAT.into(),
            version: 1,
            k_dims: self.k_dims(),
            n_rows: self.n_rows(),
            n_cols: self.n_cols(),
            singular_values: self.singular_values.clone(),
            row_masses: self.row_masses.clone(),
            col_masses: self.col_masses.clone(),
            row_ids: self.row_ids.tokens().to_vec(),
            col_ids: self.col_ids.tokens().to_vec(),
            orientation: self.orientation.clone(),
            fit_meta: self.fit_meta.clone(),
            coords_file: sidecar
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            coords_layout: "f64-le; row_coords (n_rows x k_dims) then col_coords (n_cols x k_dims); row-major".into(),
        };
        let file = fs::File::create(path).map_err(|e| CaError::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &manifest)
            .map_err(|e| CaError::Format(e.to_string()))?;

        let file = fs::File::create(&sidecar).map_err(|e| CaError::io(&sidecar, e))?;
        let mut w = BufWriter::new(file);
        for m in [&self.row_coords, &self.col_coords] {
            for row in m.row_iter() {
                for x in row.iter() {
                    w.write_all(&x.to_le_bytes()).map_err(|e| CaError::io(&sidecar, e))?;
                }
            }
        }
        w.flush().map_err(|e| CaError::io(&sidecar, e))
    }

    pub fn load(path: &Path) -> Result<CaModel> {
        let text = fs::read_to_string(path).map_err(|e| CaError::io(path, e))?;
        let m: ModelManifest = serde_json::from_str(&text).map_err(|e| CaError::Format(e.to_string()))?;
        if m.format != MODEL_FORMAT {
            return Err(CaError::Format(format!("unexpected format `{}`", m.format)));
        }
        let sidecar = path.with_file_name(&m.coords_file);
        let bytes = fs::read(&sidecar).map_err(|e| CaError::io(&sidecar, e))?;
        let k = m.k_dims;
        let expected = (m.n_rows + m.n_cols) * k * 8;
        if bytes.len() != expected {
            return Err(CaError::Format(format!(
                "coordinate sidecar has {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let (r, c) = vals.split_at(m.n_rows * k);
        Ok(CaModel {
            singular_values: m.singular_values,
            row_coords: DMatrix::from_row_slice(m.n_rows, k, r),
            col_coords: DMatrix::from_row_slice(m.n_cols, k, c),
            row_masses: m.row_masses,
            col_masses: m.col_masses,
            row_ids: m.row_ids.into_iter().collect(),
            col_ids: m.col_ids.into_iter().collect(),
            orientation: m.orientation,
            fit_meta: m.fit_meta,
        })
    }
}

const MODEL_FORMAT: &str = "sesmap-ca-model";

pub fn sidecar_path(manifest: &Path) -> PathBuf {
    let stem = manifest.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    manifest.with_file_name(format!("{stem}.coords.bin"))
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    format: String,
    version: u32,
    k_dims: usize,
    n_rows: usize,
    n_cols: usize,
    singular_values: Vec<f64>,
    row_masses: Vec<f64>,
    col_masses: Vec<f64>,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
    orientation: Orientation,
    fit_meta: FitMeta,
    coords_file: String,
    coords_layout: String,
}

/// Supplementary coordinates, one row per projected point.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub coords: DMatrix<f64>,
    /// Members that referenced entities outside the basis.
    pub dropped_members: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LenientProjection {
    pub coords: Vec<Option<Vec<f64>>>,
    pub dropped_members: usize,
    pub empty_points: usize,
}

/// Averages basis coordinates over a point's members: `g = n'ᵀ G` with `n'`
/// the point's profile (its indicator vector divided by its total).
#[derive(Debug, Clone, Copy)]
pub struct ProfileProjector<'a> {
    basis: &'a DMatrix<f64>,
}

impl<'a> ProfileProjector<'a> {
    pub fn new(basis: &'a DMatrix<f64>) -> Self {
        ProfileProjector { basis }
    }

    pub fn k_dims(&self) -> usize {
        self.basis.ncols()
    }

    /// Returns the coordinates (or `None` with no overlap) and the number of
    /// members outside the basis.
    pub fn project(&self, members: &[u32]) -> (Option<Vec<f64>>, usize) {
        let k = self.basis.ncols();
        let n = self.basis.nrows();
        let mut acc = vec![0.0; k];
        let mut hits = 0usize;
        for &m in members {
            if (m as usize) < n {
                hits += 1;
                for (d, a) in acc.iter_mut().enumerate() {
                    *a += self.basis[(m as usize, d)];
                }
            }
        }
        let dropped = members.len() - hits;
        if hits == 0 {
            return (None, dropped);
        }
        let w = 1.0 / hits as f64;
        acc.iter_mut().for_each(|a| *a *= w);
        (Some(acc), dropped)
    }

    pub fn project_all(&self, points: &[Vec<u32>]) -> Result<Projection> {
        let res = self.project_all_lenient(points);
        let k = self.k_dims();
        let mut coords = DMatrix::zeros(points.len(), k);
        for (p, c) in res.coords.iter().enumerate() {
            let c = c.as_ref().ok_or(CaError::EmptySupport { point: p })?;
            for d in 0..k {
                coords[(p, d)] = c[d];
            }
        }
        Ok(Projection {
            coords,
            dropped_members: res.dropped_members,
        })
    }

    pub fn project_all_lenient(&self, points: &[Vec<u32>]) -> LenientProjection {
        let results: Vec<(Option<Vec<f64>>, usize)> = points.par_iter().map(|m| self.project(m)).collect();
        let dropped_members = results.iter().map(|r| r.1).sum();
        let empty_points = results.iter().filter(|r| r.0.is_none()).count();
        LenientProjection {
            coords: results.into_iter().map(|r| r.0).collect(),
            dropped_members,
            empty_points,
        }
    }
}
