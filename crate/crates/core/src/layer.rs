//! One EGAT layer: learnable transforms, the node attention block and the
//! edge attention block.
//!
//! Node block, for each node `i` and `j` in its closed neighborhood:
//!
//! ```text
//! alpha_ij = softmax_j( LeakyReLU( a . [h_i || h_j || e_ij] ) )
//! h'_i     = sigma( sum_j alpha_ij h_j )
//! m_i      = sigma( sum_j alpha_ij (h_j || e_ij) )
//! ```
//!
//! Edge block, the same computation on the line graph, where the feature
//! of the node shared by edges `p` and `q` takes the role of `e_ij` (zero
//! when `p == q`):
//!
//! ```text
//! beta_pq = softmax_q( LeakyReLU( b . [e_p || e_q || h_pq] ) )
//! e'_p    = sigma( sum_q beta_pq e_q )
//! ```
//!
//! Both blocks read the transformed inputs `H W_H` and `E W_E`, so node and
//! edge features are updated in parallel from the same layer input.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Activation, Tape, Tensor, Var};
use crate::error::{EgatError, Result};
use crate::graph::{AdjacencyFeatureTensor, AdjacencyIndex, Structures};
use crate::matrix::{FeatureMatrix, Matrix};
use crate::sparse::SparseMapping;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDims {
    pub node_in: usize,
    pub edge_in: usize,
    pub node_out: usize,
    pub edge_out: usize,
}

/// Learnable values of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `F_H x F_H'`
    pub w_h: Tensor,
    /// `F_E x F_E'`
    pub w_e: Tensor,
    /// `(2 F_H' + F_E') x 1`
    pub a: Tensor,
    /// `(2 F_E' + F_H') x 1`
    pub b: Tensor,
}

/// Uniform in `+-sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

impl LayerParams {
    pub fn init(dims: LayerDims, rng: &mut ChaCha8Rng) -> Self {
        let LayerDims {
            node_in,
            edge_in,
            node_out,
            edge_out,
        } = dims;
        LayerParams {
            w_h: Tensor::new(glorot(node_in, node_out, rng)),
            w_e: Tensor::new(glorot(edge_in, edge_out, rng)),
            a: Tensor::new(glorot(2 * node_out + edge_out, 1, rng)),
            b: Tensor::new(glorot(2 * edge_out + node_out, 1, rng)),
        }
    }

    /// Builds from explicit values, checking that the shapes agree.
    pub fn from_values(w_h: Matrix, w_e: Matrix, a: Matrix, b: Matrix) -> Result<Self> {
        let p = LayerParams {
            w_h: Tensor::new(w_h),
            w_e: Tensor::new(w_e),
            a: Tensor::new(a),
            b: Tensor::new(b),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dims(&self) -> LayerDims {
        LayerDims {
            node_in: self.w_h.shape().0,
            edge_in: self.w_e.shape().0,
            node_out: self.w_h.shape().1,
            edge_out: self.w_e.shape().1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        if self.a.shape() != (2 * d.node_out + d.edge_out, 1) {
            return Err(EgatError::dims(format!(
                "node attention vector has shape {:?}, expected ({}, 1)",
                self.a.shape(),
                2 * d.node_out + d.edge_out
            )));
        }
        if self.b.shape() != (2 * d.edge_out + d.node_out, 1) {
            return Err(EgatError::dims(format!(
                "edge attention vector has shape {:?}, expected ({}, 1)",
                self.b.shape(),
                2 * d.edge_out + d.node_out
            )));
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w_h, &self.w_e, &self.a, &self.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w_h, &mut self.w_e, &mut self.a, &mut self.b]
    }
}

/// Tape handles for one layer's parameters, in [`LayerParams::tensors`] order.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub w_h: Var,
    pub w_e: Var,
    pub a: Var,
    pub b: Var,
}

impl LayerVars {
    pub fn from_slice(vars: &[Var]) -> Self {
        LayerVars {
            w_h: vars[0],
            w_e: vars[1],
            a: vars[2],
            b: vars[3],
        }
    }

    pub fn bind(tape: &mut Tape<'_>, params: &LayerParams) -> Self {
        LayerVars {
            w_h: tape.param(&params.w_h),
            w_e: tape.param(&params.w_e),
            a: tape.param(&params.a),
            b: tape.param(&params.b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionSettings {
    /// Negative slope of the LeakyReLU on attention logits.
    pub slope: f64,
    /// Output nonlinearity.
    pub sigma: Activation,
}

impl Default for AttentionSettings {
    fn default() -> Self {
        AttentionSettings {
            slope: Activation::ATTENTION_SLOPE,
            sigma: Activation::Elu,
        }
    }
}

/// Inverted dropout driven by a seeded generator.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl Dropout<'_> {
    pub fn apply(&mut self, tape: &mut Tape<'_>, v: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(v);
        }
        let keep = 1.0 - self.rate;
        let n = tape.value(v).len();
        let mask = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        tape.mul_const(v, mask)
    }
}

pub(crate) fn maybe_dropout(tape: &mut Tape<'_>, v: Var, dropout: &mut Option<&mut Dropout<'_>>) -> Result<Var> {
    match dropout {
        Some(d) => d.apply(tape, v),
        None => Ok(v),
    }
}

/// Tape handles of a layer's outputs.
#[derive(Debug, Clone, Copy)]
pub struct LayerVarsOut {
    pub h: Var,
    pub e: Var,
    pub h_m: Var,
    pub alpha: Var,
    pub beta: Var,
}

/// Logits `c1 . x_center + c2 . x_neighbor + c3 . slot_feature` for every slot.
pub(crate) fn slot_logits<'a>(
    tape: &mut Tape<'a>,
    idx: &'a AdjacencyIndex,
    entity: Var,
    slot_feats: Var,
    weights: Var,
    slope: f64,
) -> Result<Var> {
    let f = tape.shape(entity).1;
    let g = tape.shape(slot_feats).1;
    if tape.shape(weights) != (2 * f + g, 1) {
        return Err(EgatError::dims(format!(
            "attention vector of shape {:?} for {f}-wide entities and {g}-wide slot features",
            tape.shape(weights)
        )));
    }
    let w_center = tape.row_slice(weights, 0, f)?;
    let w_neighbor = tape.row_slice(weights, f, 2 * f)?;
    let w_slot = tape.row_slice(weights, 2 * f, 2 * f + g)?;
    let center = tape.matmul(entity, w_center)?;
    let neighbor = tape.matmul(entity, w_neighbor)?;
    let center = tape.spmm(&idx.select_center, center)?;
    let neighbor = tape.spmm(&idx.select_neighbor, neighbor)?;
    let slot = tape.matmul(slot_feats, w_slot)?;
    let sum = tape.add(center, neighbor)?;
    let sum = tape.add(sum, slot)?;
    Ok(tape.leaky_relu(sum, slope))
}

/// Node attention on the tape. `e_slots` holds `e_ij` for every slot of
/// `idx`. Returns `(H', H_m, alpha)`.
pub(crate) fn node_attention_tape<'a>(
    tape: &mut Tape<'a>,
    idx: &'a AdjacencyIndex,
    h_t: Var,
    e_slots: Var,
    a: Var,
    settings: &AttentionSettings,
    dropout: &mut Option<&mut Dropout<'_>>,
) -> Result<(Var, Var, Var)> {
    let logits = slot_logits(tape, idx, h_t, e_slots, a, settings.slope)?;
    let alpha = tape.segment_softmax(logits, &idx.pattern)?;
    let weights = maybe_dropout(tape, alpha, dropout)?;
    let agg_h = tape.aggregate(&idx.pattern, weights, h_t)?;
    let agg_e = tape.aggregate(&idx.by_slot, weights, e_slots)?;
    let h_new = tape.activation(agg_h, settings.sigma);
    let e_part = tape.activation(agg_e, settings.sigma);
    let h_m = tape.concat_cols(&[h_new, e_part])?;
    Ok((h_new, h_m, alpha))
}

/// Edge attention on the tape. `h_slots` holds `h_pq` for every line-graph
/// slot (zero rows on the diagonal). Returns `(E', beta)`.
pub(crate) fn edge_attention_tape<'a>(
    tape: &mut Tape<'a>,
    idx: &'a AdjacencyIndex,
    e_t: Var,
    h_slots: Var,
    b: Var,
    settings: &AttentionSettings,
    dropout: &mut Option<&mut Dropout<'_>>,
) -> Result<(Var, Var)> {
    let logits = slot_logits(tape, idx, e_t, h_slots, b, settings.slope)?;
    let beta = tape.segment_softmax(logits, &idx.pattern)?;
    let weights = maybe_dropout(tape, beta, dropout)?;
    let agg = tape.aggregate(&idx.pattern, weights, e_t)?;
    Ok((tape.activation(agg, settings.sigma), beta))
}

/// Full layer on the tape.
pub fn layer_forward_tape<'a>(
    tape: &mut Tape<'a>,
    structures: &'a Structures,
    h: Var,
    e: Var,
    params: LayerVars,
    settings: &AttentionSettings,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<LayerVarsOut> {
    let out = layer_forward_tape_inner(tape, structures, h, e, params, settings, &mut dropout, true)?;
    let (e, beta) = out.edges.expect("edge block requested");
    Ok(LayerVarsOut {
        h: out.h,
        e,
        h_m: out.h_m,
        alpha: out.alpha,
        beta,
    })
}

pub(crate) struct PartialLayer {
    pub(crate) h: Var,
    pub(crate) h_m: Var,
    pub(crate) alpha: Var,
    pub(crate) edges: Option<(Var, Var)>,
}

/// Same as [`layer_forward_tape`], but skips the edge block when its
/// output is not consumed (the last layer of a stack only contributes
/// `H_m`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_forward_tape_inner<'a>(
    tape: &mut Tape<'a>,
    structures: &'a Structures,
    h: Var,
    e: Var,
    params: LayerVars,
    settings: &AttentionSettings,
    dropout: &mut Option<&mut Dropout<'_>>,
    with_edges: bool,
) -> Result<PartialLayer> {
    if tape.shape(h).0 != structures.num_nodes() || tape.shape(e).0 != structures.num_edges() {
        return Err(EgatError::dims(format!(
            "features for {} nodes / {} edges on a graph with {} / {}",
            tape.shape(h).0,
            tape.shape(e).0,
            structures.num_nodes(),
            structures.num_edges()
        )));
    }
    let h = maybe_dropout(tape, h, dropout)?;
    let e = maybe_dropout(tape, e, dropout)?;
    let h_t = tape.matmul(h, params.w_h)?;
    let e_t = tape.matmul(e, params.w_e)?;

    let e_slots = tape.spmm(&structures.node.mapped, e_t)?;
    let (h_new, h_m, alpha) =
        node_attention_tape(tape, &structures.node.adj, h_t, e_slots, params.a, settings, dropout)?;
    let mut out = PartialLayer {
        h: h_new,
        h_m,
        alpha,
        edges: None,
    };
    if !with_edges {
        return Ok(out);
    }

    let h_slots = tape.spmm(&structures.line.mapped, h_t)?;
    let (e_new, beta) =
        edge_attention_tape(tape, &structures.line.adj, e_t, h_slots, params.b, settings, dropout)?;

    out.edges = Some((e_new, beta));
    Ok(out)
}

/// Evaluated outputs of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    /// `N x F_H'`, passed to the next layer.
    pub h: FeatureMatrix,
    /// `M x F_E'`, passed to the next layer.
    pub e: FeatureMatrix,
    /// `N x (F_H' + F_E')`, used only by the merge layer.
    pub h_m: FeatureMatrix,
    /// Node attention weight of every `A_H` slot, row-major.
    pub alpha: Vec<f64>,
    /// Edge attention weight of every `A_E` slot, row-major.
    pub beta: Vec<f64>,
}

/// `(H W_H, E W_E)`.
pub fn layer_transform(h: &FeatureMatrix, e: &FeatureMatrix, params: &LayerParams) -> Result<(Matrix, Matrix)> {
    Ok((h.matmul(params.w_h.value())?, e.matmul(params.w_e.value())?))
}

/// Gathers the feature of every adjacency slot from `adj`.
fn slot_features(adjacency: &SparseMapping, feats: &AdjacencyFeatureTensor) -> Result<Matrix> {
    let mut data = Vec::with_capacity(adjacency.nnz() * feats.feature_dim());
    for (c, _) in adjacency.iter() {
        let row = feats.get(c[0], c[1]).ok_or(EgatError::MissingSlotFeature { row: c[0], col: c[1] })?;
        data.extend_from_slice(row);
    }
    Matrix::from_vec(adjacency.nnz(), feats.feature_dim(), data)
}

/// Node attention output evaluated outside training.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeBlockOutput {
    pub h: Matrix,
    pub h_m: Matrix,
    pub alpha: Vec<f64>,
}

/// Node attention block on already transformed node features `h_t` and
/// edge features in adjacency form.
pub fn node_attention_block(
    h_t: &Matrix,
    e_adj: &AdjacencyFeatureTensor,
    a_h: &SparseMapping,
    a: &Matrix,
    settings: &AttentionSettings,
) -> Result<NodeBlockOutput> {
    let idx = AdjacencyIndex::new(a_h)?;
    let e_slots = slot_features(a_h, e_adj)?;
    let mut tape = Tape::new();
    let h = tape.constant(h_t.clone());
    let e = tape.constant(e_slots);
    let a = tape.constant(a.clone());
    let (h_new, h_m, alpha) = node_attention_tape(&mut tape, &idx, h, e, a, settings, &mut None)?;
    tape.ensure_finite()?;
    Ok(NodeBlockOutput {
        h: tape.value(h_new).clone(),
        h_m: tape.value(h_m).clone(),
        alpha: tape.value(alpha).as_slice().to_vec(),
    })
}

/// Edge attention output evaluated outside training.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeBlockOutput {
    pub e: Matrix,
    pub beta: Vec<f64>,
}

/// Edge attention block on transformed edge features `e_t` and node
/// features in edge-adjacency form.
pub fn edge_attention_block(
    e_t: &Matrix,
    h_adj: &AdjacencyFeatureTensor,
    a_e: &SparseMapping,
    b: &Matrix,
    settings: &AttentionSettings,
) -> Result<EdgeBlockOutput> {
    let idx = AdjacencyIndex::new(a_e)?;
    let h_slots = slot_features(a_e, h_adj)?;
    let mut tape = Tape::new();
    let e = tape.constant(e_t.clone());
    let h = tape.constant(h_slots);
    let b = tape.constant(b.clone());
    let (e_new, beta) = edge_attention_tape(&mut tape, &idx, e, h, b, settings, &mut None)?;
    tape.ensure_finite()?;
    Ok(EdgeBlockOutput {
        e: tape.value(e_new).clone(),
        beta: tape.value(beta).as_slice().to_vec(),
    })
}

/// Evaluates one layer without dropout.
pub fn egat_layer_forward(
    h: &FeatureMatrix,
    e: &FeatureMatrix,
    structures: &Structures,
    params: &LayerParams,
    settings: &AttentionSettings,
) -> Result<LayerOutput> {
    params.validate()?;
    let d = params.dims();
    if h.cols() != d.node_in || e.cols() != d.edge_in {
        return Err(EgatError::dims(format!(
            "layer expects {} node / {} edge features, got {} / {}",
            d.node_in,
            d.edge_in,
            h.cols(),
            e.cols()
        )));
    }
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let ev = tape.constant(e.clone());
    let vars = LayerVars::bind(&mut tape, params);
    let out = layer_forward_tape(&mut tape, structures, hv, ev, vars, settings, None)?;
    tape.ensure_finite()?;
    Ok(LayerOutput {
        h: tape.value(out.h).clone(),
        e: tape.value(out.e).clone(),
        h_m: tape.value(out.h_m).clone(),
        alpha: tape.value(out.alpha).as_slice().to_vec(),
        beta: tape.value(out.beta).as_slice().to_vec(),
    })
}
