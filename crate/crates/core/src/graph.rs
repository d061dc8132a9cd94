//! Graph structure and the preprocessing that turns it into the sparse
//! adjacency and mapping tensors consumed by the attention blocks.
//!
//! For a graph with `N` nodes and `M` edges:
//!
//! * `A_H` (`N x N`) is the node adjacency with self-loops on the diagonal.
//! * `M_E` (`N x N x M`) places edge `p = {i, j}` at slots `(i, j)` and
//!   `(j, i)`, one-hot in the last dimension.
//! * `A_E` (`M x M`) is the adjacency of the line graph (edges sharing an
//!   endpoint) plus the identity.
//! * `M_H` (`M x M x N`) places the node shared by two adjacent edges at
//!   their slot. Diagonal slots have no shared node and read as zeros.

use std::collections::{BTreeMap, HashSet};

use crate::error::{EgatError, Result};
use crate::matrix::{FeatureMatrix, Matrix};
use crate::sparse::{spmm, Csr, SparseMapping};

/// Simple undirected graph with canonicalized `(i <= j)` edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    self_loop_flags: Vec<bool>,
}

impl Graph {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// `true` for edges appended by [`add_virtual_self_loops`].
    pub fn self_loop_flags(&self) -> &[bool] {
        &self.self_loop_flags
    }

    pub fn is_virtual(&self, p: usize) -> bool {
        self.self_loop_flags[p]
    }

    /// Edge indices incident to each node. A self-loop is listed once.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.num_nodes];
        for (p, &(i, j)) in self.edges.iter().enumerate() {
            inc[i].push(p);
            if i != j {
                inc[j].push(p);
            }
        }
        inc
    }

    pub fn has_all_self_loops(&self) -> bool {
        self.first_node_without_self_loop().is_none()
    }

    fn first_node_without_self_loop(&self) -> Option<usize> {
        let mut seen = vec![false; self.num_nodes];
        for &(i, j) in &self.edges {
            if i == j {
                seen[i] = true;
            }
        }
        seen.iter().position(|s| !s)
    }

    /// Relabels node `i` as `perm[i]`, keeping edge order.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.num_nodes {
            return Err(EgatError::RowMismatch {
                expected: self.num_nodes,
                found: perm.len(),
            });
        }
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        let mut g = build_graph(self.num_nodes, &edges)?;
        g.self_loop_flags = self.self_loop_flags.clone();
        Ok(g)
    }
}

/// Validates and canonicalizes an undirected edge list.
pub fn build_graph(num_nodes: usize, edge_list: &[(usize, usize)]) -> Result<Graph> {
    let mut seen = HashSet::with_capacity(edge_list.len());
    let mut edges = Vec::with_capacity(edge_list.len());
    for &(a, b) in edge_list {
        for index in [a, b] {
            if index >= num_nodes {
                return Err(EgatError::NodeOutOfRange { index, num_nodes });
            }
        }
        let e = (a.min(b), a.max(b));
        if !seen.insert(e) {
            return Err(EgatError::DuplicateEdge(e.0, e.1));
        }
        edges.push(e);
    }
    let m = edges.len();
    Ok(Graph {
        num_nodes,
        edges,
        self_loop_flags: vec![false; m],
    })
}

/// One topological feature per edge: how many other edges share at least
/// one endpoint with it.
pub fn synthesize_edge_degree_features(g: &Graph) -> FeatureMatrix {
    let mut degree = vec![0usize; g.num_nodes];
    for &(i, j) in &g.edges {
        degree[i] += 1;
        if i != j {
            degree[j] += 1;
        }
    }
    // The only edge touching both endpoints of a simple edge is the edge itself.
    let counts: Vec<f64> = g
        .edges
        .iter()
        .map(|&(i, j)| {
            if i == j {
                (degree[i] - 1) as f64
            } else {
                (degree[i] + degree[j] - 2) as f64
            }
        })
        .collect();
    Matrix::column(&counts)
}

/// Appends a virtual `(i, i)` edge to every node that lacks one. Its
/// features are the per-dimension mean of the node's incident edges, or
/// zeros for an isolated node.
pub fn add_virtual_self_loops(g: &Graph, e_feats: &FeatureMatrix) -> Result<(Graph, FeatureMatrix)> {
    if e_feats.rows() != g.num_edges() {
        return Err(EgatError::RowMismatch {
            expected: g.num_edges(),
            found: e_feats.rows(),
        });
    }
    let dim = e_feats.cols();
    let mut has_loop = vec![false; g.num_nodes];
    let mut sums = Matrix::zeros(g.num_nodes, dim);
    let mut counts = vec![0usize; g.num_nodes];
    for (p, &(i, j)) in g.edges.iter().enumerate() {
        if i == j {
            has_loop[i] = true;
            continue;
        }
        for node in [i, j] {
            counts[node] += 1;
            for (s, x) in sums.row_mut(node).iter_mut().zip(e_feats.row(p)) {
                *s += x;
            }
        }
    }

    let mut out = g.clone();
    let mut extra = Vec::new();
    for node in 0..g.num_nodes {
        if has_loop[node] {
            continue;
        }
        out.edges.push((node, node));
        out.self_loop_flags.push(true);
        let n = counts[node];
        extra.extend(sums.row(node).iter().map(|s| if n == 0 { 0.0 } else { s / n as f64 }));
    }
    let appended = Matrix::from_vec(out.num_edges() - g.num_edges(), dim, extra)?;
    let feats = e_feats.vstack(&appended)?;
    Ok((out, feats))
}

/// Node adjacency `A_H` (`N x N`) and edge mapping tensor `M_E` (`N x N x M`).
pub fn build_node_structures(g: &Graph) -> (SparseMapping, SparseMapping) {
    let n = g.num_nodes;
    let m = g.num_edges();
    let mut slots: Vec<(usize, usize, usize)> = Vec::with_capacity(2 * m);
    for (p, &(i, j)) in g.edges.iter().enumerate() {
        slots.push((i, j, p));
        if i != j {
            slots.push((j, i, p));
        }
    }
    slots.sort_unstable();

    let mut a_coords = Vec::with_capacity(2 * slots.len());
    let mut m_coords = Vec::with_capacity(3 * slots.len());
    for &(i, j, p) in &slots {
        a_coords.extend_from_slice(&[i, j]);
        m_coords.extend_from_slice(&[i, j, p]);
    }
    let ones = vec![1.0; slots.len()];
    (
        SparseMapping::from_sorted_unchecked(vec![n, n], a_coords, ones.clone()),
        SparseMapping::from_sorted_unchecked(vec![n, n, m], m_coords, ones),
    )
}

/// Line-graph adjacency `A_E` (`M x M`, identity included) and node mapping
/// tensor `M_H` (`M x M x N`).
pub fn build_line_graph(g: &Graph) -> (SparseMapping, SparseMapping) {
    let n = g.num_nodes;
    let m = g.num_edges();
    // (p, q) -> smallest shared endpoint
    let mut shared: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (v, edges) in g.incidence().iter().enumerate() {
        for &p in edges {
            for &q in edges {
                if p != q {
                    shared
                        .entry((p, q))
                        .and_modify(|s| *s = (*s).min(v))
                        .or_insert(v);
                }
            }
        }
    }
    for p in 0..m {
        shared.insert((p, p), usize::MAX);
    }

    let mut a_coords = Vec::with_capacity(2 * shared.len());
    let mut m_coords = Vec::with_capacity(3 * shared.len());
    for (&(p, q), &v) in &shared {
        a_coords.extend_from_slice(&[p, q]);
        if v != usize::MAX {
            m_coords.extend_from_slice(&[p, q, v]);
        }
    }
    let a_nnz = shared.len();
    let m_nnz = m_coords.len() / 3;
    (
        SparseMapping::from_sorted_unchecked(vec![m, m], a_coords, vec![1.0; a_nnz]),
        SparseMapping::from_sorted_unchecked(vec![m, m, n], m_coords, vec![1.0; m_nnz]),
    )
}

/// Features laid out by adjacency slot: `E*` (`N x N x F`) or `H*`
/// (`M x M x F`), stored only at populated slots.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyFeatureTensor {
    rows: usize,
    cols: usize,
    slots: Vec<(usize, usize)>,
    values: Matrix,
    zero: Vec<f64>,
}

impl AdjacencyFeatureTensor {
    pub fn shape(&self) -> [usize; 3] {
        [self.rows, self.cols, self.values.cols()]
    }

    pub fn slots(&self) -> &[(usize, usize)] {
        &self.slots
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn feature_dim(&self) -> usize {
        self.values.cols()
    }

    /// Feature vector at slot `(r, c)`. Unpopulated diagonal slots read as
    /// the zero vector; other unpopulated slots are `None`.
    pub fn get(&self, r: usize, c: usize) -> Option<&[f64]> {
        match self.slots.binary_search(&(r, c)) {
            Ok(k) => Some(self.values.row(k)),
            Err(_) if r == c && r < self.rows => Some(&self.zero),
            Err(_) => None,
        }
    }
}

/// Moves entity features into adjacency layout through a rank-3 mapping
/// tensor: reshape the mapping to `(rows*cols) x last`, multiply by
/// `feats`, and reshape back. Only nonempty rows are materialized.
pub fn scatter_to_adjacency(mapping: &SparseMapping, feats: &FeatureMatrix) -> Result<AdjacencyFeatureTensor> {
    let shape = mapping.shape();
    if shape.len() != 3 {
        return Err(EgatError::dims(format!("mapping must be rank 3, got shape {shape:?}")));
    }
    if shape[2] != feats.rows() {
        return Err(EgatError::dims(format!(
            "mapping indexes {} entities but {} feature rows were given",
            shape[2],
            feats.rows()
        )));
    }
    let (slots, csr) = mapping.to_slot_csr()?;
    let values = spmm(&csr, feats)?;
    Ok(AdjacencyFeatureTensor {
        rows: shape[0],
        cols: shape[1],
        slots: slots.into_iter().map(|s| (s[0], s[1])).collect(),
        values,
        zero: vec![0.0; feats.cols()],
    })
}

/// Everything the attention blocks need for one self-loop-augmented graph:
/// the four sparse tensors plus compressed-row views aligned with the
/// adjacency slots.
#[derive(Debug, Clone)]
pub struct Structures {
    pub a_h: SparseMapping,
    pub m_e: SparseMapping,
    pub a_e: SparseMapping,
    pub m_h: SparseMapping,
    pub(crate) node: SlotIndex,
    pub(crate) line: SlotIndex,
}

/// Compressed-row indexing of the populated slots of one adjacency matrix.
///
/// Slot `s` is the `s`-th nonzero in row-major order, at row `center[s]`
/// and column `neighbor[s]`.
#[derive(Debug, Clone)]
pub(crate) struct AdjacencyIndex {
    /// `rows x cols`, one unit entry per slot.
    pub(crate) pattern: Csr,
    /// `rows x slots`, row `r` lists the slot ids of row `r`.
    pub(crate) by_slot: Csr,
    /// `slots x rows`, picks the row entity of each slot.
    pub(crate) select_center: Csr,
    /// `slots x cols`, picks the column entity of each slot.
    pub(crate) select_neighbor: Csr,
}

impl AdjacencyIndex {
    pub(crate) fn new(adjacency: &SparseMapping) -> Result<Self> {
        if adjacency.rank() != 2 {
            return Err(EgatError::dims(format!(
                "adjacency must be rank 2, got shape {:?}",
                adjacency.shape()
            )));
        }
        let rows = adjacency.shape()[0];
        let cols = adjacency.shape()[1];
        let nnz = adjacency.nnz();
        let mut offsets = vec![0usize; rows + 1];
        let mut center = Vec::with_capacity(nnz);
        let mut neighbor = Vec::with_capacity(nnz);
        for (c, _) in adjacency.iter() {
            offsets[c[0] + 1] += 1;
            center.push(c[0]);
            neighbor.push(c[1]);
        }
        for r in 0..rows {
            offsets[r + 1] += offsets[r];
        }
        Ok(AdjacencyIndex {
            by_slot: Csr::pattern(offsets.clone(), (0..nnz).collect(), nnz)?,
            pattern: Csr::pattern(offsets, neighbor.clone(), cols)?,
            select_center: Csr::selection(&center, rows)?,
            select_neighbor: Csr::selection(&neighbor, cols)?,
        })
    }

    pub(crate) fn num_slots(&self) -> usize {
        self.pattern.nnz()
    }

    pub(crate) fn slot(&self, s: usize) -> (usize, usize) {
        (self.select_center.indices()[s], self.pattern.indices()[s])
    }
}

/// An [`AdjacencyIndex`] plus the mapping tensor restricted to its slots:
/// `mapped` is `slots x entities` with one unit entry per slot that has a
/// mapped entity.
#[derive(Debug, Clone)]
pub(crate) struct SlotIndex {
    pub(crate) adj: AdjacencyIndex,
    pub(crate) mapped: Csr,
}

impl SlotIndex {
    fn build(adjacency: &SparseMapping, mapping: &SparseMapping, require_all: bool) -> Result<Self> {
        let adj = AdjacencyIndex::new(adjacency)?;
        let mut map_offsets = Vec::with_capacity(adj.num_slots() + 1);
        let mut map_idx = Vec::with_capacity(adj.num_slots());
        map_offsets.push(0);
        let mut k = 0;
        for s in 0..adj.num_slots() {
            let (r, col) = adj.slot(s);
            while k < mapping.nnz() && mapping.coord(k)[..2] < [r, col][..] {
                k += 1;
            }
            if k < mapping.nnz() && mapping.coord(k)[..2] == [r, col][..] {
                map_idx.push(mapping.coord(k)[2]);
                k += 1;
            } else if require_all || r != col {
                return Err(EgatError::MissingSlotFeature { row: r, col });
            }
            map_offsets.push(map_idx.len());
        }
        let mapped = Csr::pattern(map_offsets, map_idx, mapping.shape()[2])?;
        Ok(SlotIndex { adj, mapped })
    }
}

impl Structures {
    /// Builds all structures for a graph that already has a self-loop on
    /// every node.
    pub fn new(g: &Graph) -> Result<Self> {
        if let Some(i) = g.first_node_without_self_loop() {
            return Err(EgatError::MissingSelfLoop(i));
        }
        let (a_h, m_e) = build_node_structures(g);
        let (a_e, m_h) = build_line_graph(g);
        let node = SlotIndex::build(&a_h, &m_e, true)?;
        let line = SlotIndex::build(&a_e, &m_h, false)?;
        Ok(Structures {
            a_h,
            m_e,
            a_e,
            m_h,
            node,
            line,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.a_h.shape()[0]
    }

    pub fn num_edges(&self) -> usize {
        self.a_e.shape()[0]
    }

    /// Closed neighborhood offsets of each node, indexing the node slots.
    pub fn node_segments(&self) -> &[usize] {
        self.node.adj.pattern.offsets()
    }

    /// Closed neighborhood offsets of each edge, indexing the line slots.
    pub fn edge_segments(&self) -> &[usize] {
        self.line.adj.pattern.offsets()
    }

    /// Neighbor node of each node slot.
    pub fn node_slot_neighbors(&self) -> &[usize] {
        self.node.adj.pattern.indices()
    }

    /// Neighbor edge of each line slot.
    pub fn edge_slot_neighbors(&self) -> &[usize] {
        self.line.adj.pattern.indices()
    }
}
