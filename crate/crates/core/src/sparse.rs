//! Coordinate-form sparse tensors and the compressed-row view used for
//! sparse-dense products.

use serde::{Deserialize, Serialize};

use crate::error::{EgatError, Result};
use crate::matrix::Matrix;

/// Sparse tensor of arbitrary rank in coordinate form.
///
/// Entries are kept sorted lexicographically by coordinate with no
/// duplicates. Adjacency matrices (`A_H`, `A_E`) are rank 2; the mapping
/// tensors (`M_E`, `M_H`) are rank 3 with a one-hot last dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMapping {
    shape: Vec<usize>,
    coords: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMapping {
    /// Builds a tensor from unordered entries, sorting them and rejecting
    /// out-of-bounds or duplicate coordinates.
    pub fn from_entries(shape: Vec<usize>, mut entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        let rank = shape.len();
        for (c, _) in &entries {
            if c.len() != rank {
                return Err(EgatError::dims(format!(
                    "coordinate {c:?} does not have rank {rank}"
                )));
            }
            if c.iter().zip(&shape).any(|(x, d)| x >= d) {
                return Err(EgatError::dims(format!(
                    "coordinate {c:?} outside shape {shape:?}"
                )));
            }
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(EgatError::dims(format!("duplicate coordinate {:?}", w[0].0)));
        }
        let mut coords = Vec::with_capacity(entries.len() * rank);
        let mut values = Vec::with_capacity(entries.len());
        for (c, v) in entries {
            coords.extend_from_slice(&c);
            values.push(v);
        }
        Ok(SparseMapping {
            shape,
            coords,
            values,
        })
    }

    /// Builds from coordinates already sorted and unique. Used by the graph
    /// builders, which emit entries in canonical order.
    pub(crate) fn from_sorted_unchecked(shape: Vec<usize>, coords: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(coords.len(), values.len() * shape.len());
        let m = SparseMapping {
            shape,
            coords,
            values,
        };
        debug_assert!(m.is_canonical());
        m
    }

    fn is_canonical(&self) -> bool {
        let rank = self.rank();
        (1..self.nnz()).all(|k| self.coords[(k - 1) * rank..k * rank] < self.coords[k * rank..(k + 1) * rank])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn coord(&self, k: usize) -> &[usize] {
        let r = self.rank();
        &self.coords[k * r..(k + 1) * r]
    }

    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        (0..self.nnz()).map(move |k| (self.coord(k), self.values[k]))
    }

    /// Value at `coord`, zero when absent.
    pub fn get(&self, coord: &[usize]) -> f64 {
        let rank = self.rank();
        let (mut lo, mut hi) = (0, self.nnz());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.coords[mid * rank..(mid + 1) * rank].cmp(coord) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return self.values[mid],
            }
        }
        0.0
    }

    /// Dense copy, row-major over all dimensions. Only for small tensors.
    pub fn to_dense(&self) -> Vec<f64> {
        let total: usize = self.shape.iter().product();
        let mut out = vec![0.0; total];
        for (c, v) in self.iter() {
            out[self.flat_index(c)] = v;
        }
        out
    }

    fn flat_index(&self, c: &[usize]) -> usize {
        c.iter().zip(&self.shape).fold(0, |acc, (x, d)| acc * d + x)
    }

    /// Reshapes to 2-D by flattening every leading dimension into the row
    /// index, keeping only rows that hold at least one entry.
    ///
    /// Returns the flattened leading coordinates of the kept rows (sorted)
    /// and the compressed matrix whose row `k` is the `k`-th kept row.
    pub fn to_slot_csr(&self) -> Result<(Vec<Vec<usize>>, Csr)> {
        let rank = self.rank();
        if rank < 2 {
            return Err(EgatError::dims("reshape needs a tensor of rank >= 2"));
        }
        let cols = self.shape[rank - 1];
        let mut slots: Vec<Vec<usize>> = Vec::new();
        let mut offsets = vec![0];
        let mut indices = Vec::with_capacity(self.nnz());
        for (c, v) in self.iter() {
            let lead = &c[..rank - 1];
            if slots.last().map(|s| s.as_slice()) != Some(lead) {
                if !slots.is_empty() {
                    offsets.push(indices.len());
                }
                slots.push(lead.to_vec());
            }
            indices.push((c[rank - 1], v));
        }
        if !slots.is_empty() {
            offsets.push(indices.len());
        }
        let (idx, vals) = indices.into_iter().unzip();
        let csr = Csr::new(slots.len(), cols, offsets, idx, vals)?;
        Ok((slots, csr))
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    pub fn new(
        rows: usize,
        cols: usize,
        offsets: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if offsets.len() != rows + 1
            || offsets[0] != 0
            || offsets[rows] != indices.len()
            || indices.len() != values.len()
            || offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(EgatError::dims("inconsistent CSR offsets"));
        }
        if let Some(&c) = indices.iter().find(|&&c| c >= cols) {
            return Err(EgatError::dims(format!("column {c} out of range {cols}")));
        }
        Ok(Csr {
            rows,
            cols,
            offsets,
            indices,
            values,
        })
    }

    /// One entry of value 1 per row, in column `picks[r]`.
    pub fn selection(picks: &[usize], cols: usize) -> Result<Self> {
        Csr::new(
            picks.len(),
            cols,
            (0..=picks.len()).collect(),
            picks.to_vec(),
            vec![1.0; picks.len()],
        )
    }

    /// Unit-valued matrix from per-row column lists.
    pub fn pattern(offsets: Vec<usize>, indices: Vec<usize>, cols: usize) -> Result<Self> {
        let n = indices.len();
        Csr::new(offsets.len().saturating_sub(1), cols, offsets, indices, vec![1.0; n])
    }

    pub fn identity(n: usize) -> Self {
        let picks: Vec<usize> = (0..n).collect();
        Csr::selection(&picks, n).expect("identity is well formed")
    }

    pub fn from_dense(m: &Matrix) -> Self {
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for r in 0..m.rows() {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            offsets.push(indices.len());
        }
        Csr {
            rows: m.rows(),
            cols: m.cols(),
            offsets,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r + 1]
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.row_range(r) {
                m.set(r, self.indices[k], self.values[k]);
            }
        }
        m
    }
}

/// Sparse-dense product; cost is `nnz * dense.cols()`.
pub fn spmm(sparse: &Csr, dense: &Matrix) -> Result<Matrix> {
    if sparse.cols != dense.rows() {
        return Err(EgatError::dims(format!(
            "cannot multiply sparse {}x{} by dense {}x{}",
            sparse.rows,
            sparse.cols,
            dense.rows(),
            dense.cols()
        )));
    }
    let mut out = Matrix::zeros(sparse.rows, dense.cols());
    spmm_into(sparse, &sparse.values, dense, &mut out);
    Ok(out)
}

/// `out[r] += sum_k weights[k] * dense[indices[k]]` over the entries of row `r`.
pub(crate) fn spmm_into(pattern: &Csr, weights: &[f64], dense: &Matrix, out: &mut Matrix) {
    for r in 0..pattern.rows {
        let range = pattern.row_range(r);
        let out_row = out.row_mut(r);
        for k in range {
            let w = weights[k];
            for (o, x) in out_row.iter_mut().zip(dense.row(pattern.indices[k])) {
                *o += w * x;
            }
        }
    }
}

/// `grad_dense[indices[k]] += weights[k] * grad_out[r]`, the transpose product.
pub(crate) fn spmm_transpose_into(pattern: &Csr, weights: &[f64], grad_out: &Matrix, grad_dense: &mut Matrix) {
    for r in 0..pattern.rows {
        let g = grad_out.row(r);
        for k in pattern.row_range(r) {
            let w = weights[k];
            for (o, x) in grad_dense.row_mut(pattern.indices[k]).iter_mut().zip(g) {
                *o += w * x;
            }
        }
    }
}
