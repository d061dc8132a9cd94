//! The full classifier: `K` independent stacks of `L` layers, the
//! multi-scale merge of every layer's edge-integrated node features, and a
//! width-1 convolution (a per-node linear map) followed by softmax.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Tape, Tensor, Var};
use crate::error::{EgatError, Result};
use crate::graph::{add_virtual_self_loops, Graph, Structures};
use crate::layer::{glorot, layer_forward_tape_inner, AttentionSettings, Dropout, LayerDims, LayerParams, LayerVars};
use crate::matrix::{FeatureMatrix, Matrix};

fn default_layers() -> usize {
    2
}
fn default_heads() -> usize {
    8
}
fn default_node_hidden() -> usize {
    8
}
fn default_edge_hidden() -> usize {
    4
}
fn default_classes() -> usize {
    2
}
fn default_dropout() -> f64 {
    0.6
}
fn default_slope() -> f64 {
    Activation::ATTENTION_SLOPE
}
fn default_sigma() -> Activation {
    Activation::Elu
}
fn default_standardize() -> bool {
    true
}
fn default_l2() -> f64 {
    5e-4
}
fn default_lr() -> f64 {
    0.005
}

/// Architecture and optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `L`, layers per head.
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// `K`, independent heads.
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// `F_H'` of every layer.
    #[serde(default = "default_node_hidden")]
    pub node_hidden: usize,
    /// `F_E'` of every layer.
    #[serde(default = "default_edge_hidden")]
    pub edge_hidden: usize,
    /// `C`.
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_sigma")]
    pub sigma: Activation,
    /// Apply `sigma` to the classifier output before softmax.
    #[serde(default)]
    pub classifier_activation: bool,
    /// Z-score every non-constant input feature column.
    #[serde(default = "default_standardize")]
    pub standardize_inputs: bool,
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: default_layers(),
            heads: default_heads(),
            node_hidden: default_node_hidden(),
            edge_hidden: default_edge_hidden(),
            num_classes: default_classes(),
            dropout: default_dropout(),
            leaky_slope: default_slope(),
            sigma: default_sigma(),
            classifier_activation: false,
            standardize_inputs: true,
            l2: default_l2(),
            learning_rate: default_lr(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(EgatError::InvalidConfig(msg.to_string()));
        if self.layers == 0 {
            return bad("layers must be >= 1");
        }
        if self.heads == 0 {
            return bad("heads must be >= 1");
        }
        if self.num_classes < 2 {
            return bad("num_classes must be >= 2");
        }
        if self.node_hidden == 0 || self.edge_hidden == 0 {
            return bad("hidden sizes must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.l2 >= 0.0 && self.learning_rate >= 0.0 && self.leaky_slope.is_finite()) {
            return bad("l2 and learning_rate must be non-negative");
        }
        Ok(())
    }

    /// Width of the merged representation, `K * L * (F_H' + F_E')`.
    pub fn merged_width(&self) -> usize {
        self.heads * self.layers * (self.node_hidden + self.edge_hidden)
    }

    pub fn attention(&self) -> AttentionSettings {
        AttentionSettings {
            slope: self.leaky_slope,
            sigma: self.sigma,
        }
    }
}

/// A self-loop-augmented graph with its structures and features.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub graph: Graph,
    pub structures: Structures,
    pub node_feats: FeatureMatrix,
    pub edge_feats: FeatureMatrix,
}

impl GraphInputs {
    /// Adds virtual self-loops and builds every structure.
    pub fn new(graph: &Graph, node_feats: FeatureMatrix, edge_feats: &FeatureMatrix) -> Result<Self> {
        if node_feats.rows() != graph.num_nodes() {
            return Err(EgatError::RowMismatch {
                expected: graph.num_nodes(),
                found: node_feats.rows(),
            });
        }
        let (graph, edge_feats) = add_virtual_self_loops(graph, edge_feats)?;
        let structures = Structures::new(&graph)?;
        Ok(GraphInputs {
            graph,
            structures,
            node_feats,
            edge_feats,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_feats.rows()
    }
}

/// Anything trainable by [`crate::train::fit`].
pub trait NodeClassifier {
    fn config(&self) -> &ModelConfig;

    /// Parameters in a fixed manifest order.
    fn parameters(&self) -> Vec<&Tensor>;

    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    /// Whether each parameter (manifest order) enters the L2 penalty.
    fn regularized(&self) -> Vec<bool>;

    /// Records the `N x C` logits on `tape` given bound parameters.
    fn logits_tape<'a>(
        &self,
        tape: &mut Tape<'a>,
        params: &[Var],
        inputs: &'a GraphInputs,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var>;

    fn bind<'a>(&self, tape: &mut Tape<'a>) -> Vec<Var> {
        self.parameters().into_iter().map(|p| tape.param(p)).collect()
    }
}

/// Edge-featured graph attention network.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    node_in: usize,
    edge_in: usize,
    /// `heads[k][l]`
    heads: Vec<Vec<LayerParams>>,
    /// `K*L*(F_H'+F_E') x C`, the width-1 convolution kernel.
    classifier_w: Tensor,
    /// `1 x C`
    classifier_b: Tensor,
}

pub(crate) fn classifier_head(
    tape: &mut Tape<'_>,
    merged: Var,
    w: Var,
    b: Var,
    activation: Option<Activation>,
) -> Result<Var> {
    let z = tape.matmul(merged, w)?;
    let z = tape.add_row(z, b)?;
    Ok(match activation {
        Some(act) => tape.activation(z, act),
        None => z,
    })
}

impl Model {
    /// Deterministic initialization from `config.seed`.
    pub fn init(config: ModelConfig, node_in: usize, edge_in: usize) -> Result<Self> {
        config.validate()?;
        if node_in == 0 || edge_in == 0 {
            return Err(EgatError::InvalidConfig(
                "node and edge inputs need at least one feature each".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut heads = Vec::with_capacity(config.heads);
        for _ in 0..config.heads {
            let mut stack = Vec::with_capacity(config.layers);
            for l in 0..config.layers {
                let dims = LayerDims {
                    node_in: if l == 0 { node_in } else { config.node_hidden },
                    edge_in: if l == 0 { edge_in } else { config.edge_hidden },
                    node_out: config.node_hidden,
                    edge_out: config.edge_hidden,
                };
                stack.push(LayerParams::init(dims, &mut rng));
            }
            heads.push(stack);
        }
        let width = config.merged_width();
        let classifier_w = Tensor::new(glorot(width, config.num_classes, &mut rng));
        let classifier_b = Tensor::new(Matrix::zeros(1, config.num_classes));
        Ok(Model {
            config,
            node_in,
            edge_in,
            heads,
            classifier_w,
            classifier_b,
        })
    }

    pub fn node_in(&self) -> usize {
        self.node_in
    }

    pub fn edge_in(&self) -> usize {
        self.edge_in
    }

    pub fn classifier_input_dim(&self) -> usize {
        self.classifier_w.shape().0
    }

    pub fn layer(&self, head: usize, layer: usize) -> &LayerParams {
        &self.heads[head][layer]
    }

    pub fn layer_mut(&mut self, head: usize, layer: usize) -> &mut LayerParams {
        &mut self.heads[head][layer]
    }

    pub fn classifier_weights(&self) -> &Tensor {
        &self.classifier_w
    }

    pub fn classifier_weights_mut(&mut self) -> &mut Tensor {
        &mut self.classifier_w
    }

    /// `(name, shape)` of every parameter in manifest order.
    pub fn manifest(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        for (k, stack) in self.heads.iter().enumerate() {
            for (l, p) in stack.iter().enumerate() {
                for (name, t) in ["w_h", "w_e", "a", "b"].iter().zip(p.tensors()) {
                    out.push((format!("head{k}.layer{l}.{name}"), t.shape()));
                }
            }
        }
        out.push(("classifier.weight".into(), self.classifier_w.shape()));
        out.push(("classifier.bias".into(), self.classifier_b.shape()));
        out
    }

    /// Replaces every parameter value, in manifest order.
    pub fn load_values(&mut self, values: Vec<Matrix>) -> Result<()> {
        let mut params = self.parameters_mut();
        if values.len() != params.len() {
            return Err(EgatError::dims(format!(
                "{} parameter blocks for a model with {}",
                values.len(),
                params.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(values) {
            if p.shape() != v.shape() {
                return Err(EgatError::dims(format!(
                    "parameter of shape {:?} cannot take a {:?} value",
                    p.shape(),
                    v.shape()
                )));
            }
            *p.value_mut() = v;
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &GraphInputs) -> Result<()> {
        if inputs.node_feats.cols() != self.node_in || inputs.edge_feats.cols() != self.edge_in {
            return Err(EgatError::dims(format!(
                "model expects {} node / {} edge features, data has {} / {}",
                self.node_in,
                self.edge_in,
                inputs.node_feats.cols(),
                inputs.edge_feats.cols()
            )));
        }
        Ok(())
    }
}

impl NodeClassifier for Model {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn parameters(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.heads.iter().flatten().flat_map(|p| p.tensors()).collect();
        out.push(&self.classifier_w);
        out.push(&self.classifier_b);
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.heads.iter_mut().flatten().flat_map(|p| p.tensors_mut()).collect();
        out.push(&mut self.classifier_w);
        out.push(&mut self.classifier_b);
        out
    }

    fn regularized(&self) -> Vec<bool> {
        let n = self.heads.len() * self.config.layers * 4;
        let mut out = vec![true; n + 1];
        out.push(false);
        out
    }

    fn logits_tape<'a>(
        &self,
        tape: &mut Tape<'a>,
        params: &[Var],
        inputs: &'a GraphInputs,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var> {
        self.check_inputs(inputs)?;
        let cfg = &self.config;
        let settings = cfg.attention();
        let h0 = tape.constant(inputs.node_feats.clone());
        let e0 = tape.constant(inputs.edge_feats.clone());
        let mut scales = Vec::with_capacity(cfg.heads * cfg.layers);
        for k in 0..cfg.heads {
            let (mut h, mut e) = (h0, e0);
            for l in 0..cfg.layers {
                let base = (k * cfg.layers + l) * 4;
                let vars = LayerVars::from_slice(&params[base..base + 4]);
                let last = l + 1 == cfg.layers;
                let out = layer_forward_tape_inner(tape, &inputs.structures, h, e, vars, &settings, &mut dropout, !last)?;
                scales.push(out.h_m);
                h = out.h;
                if let Some((e_next, _)) = out.edges {
                    e = e_next;
                }
            }
        }
        let merged = tape.concat_cols(&scales)?;
        if tape.shape(merged).1 != cfg.merged_width() {
            return Err(EgatError::dims(format!(
                "merged width {} differs from K*L*(F_H'+F_E') = {}",
                tape.shape(merged).1,
                cfg.merged_width()
            )));
        }
        let n = params.len();
        let act = cfg.classifier_activation.then_some(cfg.sigma);
        classifier_head(tape, merged, params[n - 2], params[n - 1], act)
    }
}

/// Logits and class probabilities for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Matrix,
    pub probabilities: Matrix,
}

/// Runs a classifier. Dropout is active only when `training_rng` is given.
pub fn forward<M: NodeClassifier + ?Sized>(
    model: &M,
    inputs: &GraphInputs,
    training_rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let rate = model.config().dropout;
    let mut dropout = training_rng.map(|rng| Dropout { rate, rng });
    let logits = model.logits_tape(&mut tape, &vars, inputs, dropout.as_mut())?;
    tape.ensure_finite()?;
    let logits = tape.value(logits).clone();
    let probabilities = softmax_rows(&logits);
    Ok(ForwardOutput { logits, probabilities })
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    p
}

/// Argmax of each row; ties go to the smallest class index.
pub fn predict_labels(probabilities: &Matrix) -> Vec<usize> {
    (0..probabilities.rows())
        .map(|r| {
            let row = probabilities.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
