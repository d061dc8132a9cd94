//! Node-only graph attention baseline. It shares the head/layer layout and
//! multi-scale merge of [`crate::model::Model`] but never reads edge
//! features: logits are `LeakyReLU(a . [h_i || h_j])` and the merged
//! representation concatenates `H'` of every layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{EgatError, Result};
use crate::layer::{glorot, maybe_dropout, slot_logits, Dropout};
use crate::matrix::Matrix;
use crate::model::{classifier_head, GraphInputs, ModelConfig, NodeClassifier};

#[derive(Debug, Clone, PartialEq)]
pub struct GatBaseline {
    config: ModelConfig,
    node_in: usize,
    /// `layers[k][l] = (W, a)` with `a` of shape `2F' x 1`.
    layers: Vec<Vec<(Tensor, Tensor)>>,
    classifier_w: Tensor,
    classifier_b: Tensor,
}

impl GatBaseline {
    /// Uses `layers`, `heads`, `node_hidden` and the optimization settings
    /// of `config`; `edge_hidden` is ignored.
    pub fn init(config: ModelConfig, node_in: usize) -> Result<Self> {
        config.validate()?;
        if node_in == 0 {
            return Err(EgatError::InvalidConfig("node inputs need at least one feature".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let f = config.node_hidden;
        let layers = (0..config.heads)
            .map(|_| {
                (0..config.layers)
                    .map(|l| {
                        let fan_in = if l == 0 { node_in } else { f };
                        let w = Tensor::new(glorot(fan_in, f, &mut rng));
                        let a = Tensor::new(glorot(2 * f, 1, &mut rng));
                        (w, a)
                    })
                    .collect()
            })
            .collect();
        let width = config.heads * config.layers * f;
        let classifier_w = Tensor::new(glorot(width, config.num_classes, &mut rng));
        let classifier_b = Tensor::new(Matrix::zeros(1, config.num_classes));
        Ok(GatBaseline {
            config,
            node_in,
            layers,
            classifier_w,
            classifier_b,
        })
    }

    pub fn classifier_input_dim(&self) -> usize {
        self.classifier_w.shape().0
    }
}

impl NodeClassifier for GatBaseline {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn parameters(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.layers.iter().flatten().flat_map(|(w, a)| [w, a]).collect();
        out.push(&self.classifier_w);
        out.push(&self.classifier_b);
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.layers.iter_mut().flatten().flat_map(|(w, a)| [w, a]).collect();
        out.push(&mut self.classifier_w);
        out.push(&mut self.classifier_b);
        out
    }

    fn regularized(&self) -> Vec<bool> {
        let mut out = vec![true; self.config.heads * self.config.layers * 2 + 1];
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
        if inputs.node_feats.cols() != self.node_in {
            return Err(EgatError::dims(format!(
                "baseline expects {} node features, data has {}",
                self.node_in,
                inputs.node_feats.cols()
            )));
        }
        let cfg = &self.config;
        let idx = &inputs.structures.node.adj;
        let no_slot_feats = tape.constant(Matrix::zeros(idx.num_slots(), 0));
        let h0 = tape.constant(inputs.node_feats.clone());
        let mut scales = Vec::with_capacity(cfg.heads * cfg.layers);
        for k in 0..cfg.heads {
            let mut h = h0;
            for l in 0..cfg.layers {
                let base = (k * cfg.layers + l) * 2;
                let (w, a) = (params[base], params[base + 1]);
                let x = maybe_dropout(tape, h, &mut dropout)?;
                let h_t = tape.matmul(x, w)?;
                let logits = slot_logits(tape, idx, h_t, no_slot_feats, a, cfg.leaky_slope)?;
                let alpha = tape.segment_softmax(logits, &idx.pattern)?;
                let weights = maybe_dropout(tape, alpha, &mut dropout)?;
                let agg = tape.aggregate(&idx.pattern, weights, h_t)?;
                h = tape.activation(agg, cfg.sigma);
                scales.push(h);
            }
        }
        let merged = tape.concat_cols(&scales)?;
        let n = params.len();
        let act = cfg.classifier_activation.then_some(cfg.sigma);
        classifier_head(tape, merged, params[n - 2], params[n - 1], act)
    }
}
