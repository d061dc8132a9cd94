//! Full-graph semi-supervised training: masked cross-entropy with L2,
//! Adam steps, early stopping on validation loss and evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::Masks;
use crate::error::{EgatError, Result};
use crate::layer::Dropout;
use crate::matrix::Matrix;
use crate::model::{predict_labels, softmax_rows, GraphInputs, NodeClassifier};

fn default_max_epochs() -> usize {
    1000
}
fn default_patience() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Consecutive non-improving epochs tolerated before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: default_max_epochs(),
            patience: default_patience(),
        }
    }
}

/// `(node, label)` for every masked labeled node.
pub fn picks(labels: &[Option<usize>], mask: &[bool]) -> Result<Vec<(usize, usize)>> {
    if labels.len() != mask.len() {
        return Err(EgatError::RowMismatch {
            expected: labels.len(),
            found: mask.len(),
        });
    }
    let out: Vec<_> = mask
        .iter()
        .zip(labels)
        .enumerate()
        .filter_map(|(i, (&m, l))| if m { l.map(|l| (i, l)) } else { None })
        .collect();
    if out.is_empty() {
        return Err(EgatError::EmptyMask);
    }
    Ok(out)
}

/// Mean NLL over the masked nodes plus `l2 * sum ||W||^2` over `regularized`.
pub fn masked_loss(
    tape: &mut Tape<'_>,
    logits: Var,
    labels: &[Option<usize>],
    mask: &[bool],
    l2: f64,
    regularized: &[Var],
) -> Result<Var> {
    let picks = picks(labels, mask)?;
    if tape.shape(logits).0 != labels.len() {
        return Err(EgatError::RowMismatch {
            expected: labels.len(),
            found: tape.shape(logits).0,
        });
    }
    let log_probs = tape.log_softmax_rows(logits);
    let mut loss = tape.nll_mean(log_probs, picks)?;
    if l2 != 0.0 {
        for &p in regularized {
            let sq = tape.sum_squares(p);
            let term = tape.scale(sq, l2)?;
            loss = tape.add(loss, term)?;
        }
    }
    Ok(loss)
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(learning_rate: f64, params: &[&Tensor]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.shape().0, p.shape().1)).collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Matrix], &[Matrix]) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(EgatError::dims(format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(EgatError::dims(format!(
                    "parameter {:?}, gradient {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].as_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for (k, x) in p.value_mut().as_mut_slice().iter_mut().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *x -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    #[serde(skip)]
    pub train_acc: f64,
}

/// Mutable state of a run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub optimizer: Adam,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub patience_counter: usize,
    pub history: Vec<EpochMetrics>,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Fraction of masked labeled nodes whose prediction matches.
pub fn accuracy(predictions: &[usize], labels: &[Option<usize>], mask: &[bool]) -> Result<f64> {
    let picks = picks(labels, mask)?;
    let hits = picks.iter().filter(|&&(i, l)| predictions[i] == l).count();
    Ok(hits as f64 / picks.len() as f64)
}

/// Mean NLL of precomputed logits over the masked nodes.
pub fn nll(logits: &Matrix, labels: &[Option<usize>], mask: &[bool]) -> Result<f64> {
    let picks = picks(labels, mask)?;
    let probs = softmax_rows(logits);
    let total: f64 = picks.iter().map(|&(i, l)| -probs.get(i, l).ln()).sum();
    Ok(total / picks.len() as f64)
}

fn eval_logits<M: NodeClassifier + ?Sized>(model: &M, inputs: &GraphInputs) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let logits = model.logits_tape(&mut tape, &vars, inputs, None)?;
    tape.ensure_finite()?;
    Ok(tape.value(logits).clone())
}

/// Accuracy of the model (dropout off) on `mask`.
pub fn evaluate<M: NodeClassifier + ?Sized>(
    model: &M,
    inputs: &GraphInputs,
    labels: &[Option<usize>],
    mask: &[bool],
) -> Result<f64> {
    picks(labels, mask)?;
    let logits = eval_logits(model, inputs)?;
    accuracy(&predict_labels(&logits), labels, mask)
}

/// Validation NLL of the model with dropout off.
pub fn validation_loss<M: NodeClassifier + ?Sized>(
    model: &M,
    inputs: &GraphInputs,
    labels: &[Option<usize>],
    mask: &[bool],
) -> Result<f64> {
    nll(&eval_logits(model, inputs)?, labels, mask)
}

/// One dropout-enabled gradient step. Returns the training loss.
pub fn train_step<M: NodeClassifier + ?Sized>(
    model: &mut M,
    inputs: &GraphInputs,
    labels: &[Option<usize>],
    mask: &[bool],
    optimizer: &mut Adam,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let cfg = model.config().clone();
    let grads = {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let mut dropout = Dropout {
            rate: cfg.dropout,
            rng: dropout_rng,
        };
        let logits = model.logits_tape(&mut tape, &vars, inputs, Some(&mut dropout))?;
        let reg: Vec<Var> = vars
            .iter()
            .zip(model.regularized())
            .filter_map(|(&v, r)| r.then_some(v))
            .collect();
        let loss = masked_loss(&mut tape, logits, labels, mask, cfg.l2, &reg)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(EgatError::Diverged {
                epoch: optimizer.steps_taken() as usize,
                loss: value,
            });
        }
        let grads = tape.backward(loss)?;
        let g: Vec<Matrix> = vars
            .iter()
            .zip(model.parameters())
            .map(|(&v, p)| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(p.shape().0, p.shape().1))
            })
            .collect();
        (value, g)
    };
    optimizer.step(&mut model.parameters_mut(), &grads.1)?;
    Ok(grads.0)
}

/// The stream of the dropout generator, kept apart from initialization.
pub fn dropout_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Trains in place and leaves the best-validation parameters in `model`.
pub fn fit<M: NodeClassifier + ?Sized>(
    model: &mut M,
    inputs: &GraphInputs,
    labels: &[Option<usize>],
    masks: &Masks,
    config: &TrainConfig,
) -> Result<FitReport> {
    model.config().validate()?;
    picks(labels, &masks.train)?;
    picks(labels, &masks.val)?;
    if config.max_epochs == 0 {
        return Err(EgatError::InvalidConfig("max_epochs must be >= 1".into()));
    }
    let mut rng = dropout_rng(model.config().seed);
    let mut state = TrainState {
        epoch: 0,
        optimizer: Adam::new(model.config().learning_rate, &model.parameters()),
        best_val_loss: f64::INFINITY,
        best_epoch: 0,
        patience_counter: 0,
        history: Vec::new(),
    };
    let mut best: Vec<Matrix> = snapshot(model);
    let mut stopped_early = false;
    while state.epoch < config.max_epochs {
        let train_loss = train_step(model, inputs, labels, &masks.train, &mut state.optimizer, &mut rng)
            .map_err(|e| match e {
                EgatError::Diverged { loss, .. } => EgatError::Diverged {
                    epoch: state.epoch,
                    loss,
                },
                other => other,
            })?;
        let logits = eval_logits(model, inputs)?;
        let predictions = predict_labels(&logits);
        let val_loss = nll(&logits, labels, &masks.val)?;
        if !val_loss.is_finite() {
            return Err(EgatError::Diverged {
                epoch: state.epoch,
                loss: val_loss,
            });
        }
        state.history.push(EpochMetrics {
            epoch: state.epoch,
            train_loss,
            val_loss,
            val_acc: accuracy(&predictions, labels, &masks.val)?,
            train_acc: accuracy(&predictions, labels, &masks.train)?,
        });
        state.epoch += 1;
        if val_loss < state.best_val_loss {
            state.best_val_loss = val_loss;
            state.best_epoch = state.epoch - 1;
            state.patience_counter = 0;
            best = snapshot(model);
        } else if state.patience_counter >= config.patience {
            stopped_early = true;
            break;
        } else {
            state.patience_counter += 1;
        }
    }
    restore(model, best);
    Ok(FitReport {
        history: state.history,
        best_epoch: state.best_epoch,
        best_val_loss: state.best_val_loss,
        stopped_early,
    })
}

fn snapshot<M: NodeClassifier + ?Sized>(model: &M) -> Vec<Matrix> {
    model.parameters().iter().map(|p| p.value().clone()).collect()
}

fn restore<M: NodeClassifier + ?Sized>(model: &mut M, values: Vec<Matrix>) {
    for (p, v) in model.parameters_mut().into_iter().zip(values) {
        *p.value_mut() = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_have_zero_loss() {
        let mut tape = Tape::new();
        let logits = tape.constant(Matrix::from_rows(&[[60.0, -60.0], [-60.0, 60.0]]).unwrap());
        let loss = masked_loss(&mut tape, logits, &[Some(0), Some(1)], &[true, true], 0.0, &[]).unwrap();
        assert!(tape.value(loss).item() < 1e-9);
    }

    #[test]
    fn uniform_binary_loss_is_ln2() {
        let mut tape = Tape::new();
        let logits = tape.constant(Matrix::zeros(3, 2));
        let loss = masked_loss(&mut tape, logits, &[Some(0), Some(1), None], &[true, true, true], 0.0, &[]).unwrap();
        assert!((tape.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_hand_computation() {
        let rows = [[0.3, -1.1, 2.0], [1.5, 0.2, -0.7], [-0.4, 0.9, 0.1]];
        let labels = [Some(2), None, Some(1)];
        let mask = [true, true, true];
        let w = Matrix::from_rows(&[[0.5, -2.0]]).unwrap();
        let mut tape = Tape::new();
        let logits = tape.constant(Matrix::from_rows(&rows).unwrap());
        let wv = tape.constant(w);
        let loss = masked_loss(&mut tape, logits, &labels, &mask, 0.1, &[wv]).unwrap();

        let nll_row = |r: &[f64; 3], c: usize| {
            let z: f64 = r.iter().map(|x| x.exp()).sum();
            z.ln() - r[c]
        };
        let expected = (nll_row(&rows[0], 2) + nll_row(&rows[2], 1)) / 2.0 + 0.1 * (0.25 + 4.0);
        assert!((tape.value(loss).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let mut tape = Tape::new();
        let logits = tape.constant(Matrix::zeros(2, 2));
        let r = masked_loss(&mut tape, logits, &[Some(0), None], &[false, true], 0.0, &[]);
        assert!(matches!(r, Err(EgatError::EmptyMask)));
        assert!(matches!(accuracy(&[0, 0], &[Some(0), Some(1)], &[false, false]), Err(EgatError::EmptyMask)));
    }

    #[test]
    fn accuracy_examples() {
        let labels: Vec<Option<usize>> = (0..10).map(|i| Some(i % 2)).collect();
        let mask = vec![true; 10];
        let truth: Vec<usize> = labels.iter().map(|l| l.unwrap()).collect();
        assert_eq!(accuracy(&truth, &labels, &mask).unwrap(), 1.0);
        let wrong: Vec<usize> = truth.iter().map(|l| 1 - l).collect();
        assert_eq!(accuracy(&wrong, &labels, &mask).unwrap(), 0.0);
        let half: Vec<usize> = (0..10).map(|i| if i < 5 { truth[i] } else { wrong[i] }).collect();
        assert_eq!(accuracy(&half, &labels, &mask).unwrap(), 0.5);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = Tensor::new(Matrix::from_rows(&[[1.0, -2.0]]).unwrap());
        let before = p.value().clone();
        let mut opt = Adam::new(0.1, &[&p]);
        opt.step(&mut [&mut p], &[Matrix::zeros(1, 2)]).unwrap();
        assert_eq!(p.value(), &before);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = Tensor::new(Matrix::from_rows(&[[1.0, -2.0, 0.5]]).unwrap());
        let mut opt = Adam::new(0.01, &[&p]);
        let g = Matrix::from_rows(&[[3.0, -0.2, 7.5]]).unwrap();
        opt.step(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
        // m_hat = g, v_hat = g^2, so each coordinate moves by lr * g / (|g| + eps).
        for (k, (&now, &was)) in p.value().as_slice().iter().zip([1.0, -2.0, 0.5].iter()).enumerate() {
            let gk = g.as_slice()[k];
            let expected = was - 0.01 * gk / (gk.abs() + 1e-8);
            assert!((now - expected).abs() < 1e-15);
            assert!(((now - was).abs() - 0.01).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_zero_learning_rate_changes_nothing() {
        let mut p = Tensor::new(Matrix::from_rows(&[[0.3, 0.4]]).unwrap());
        let before = p.value().clone();
        let mut opt = Adam::new(0.0, &[&p]);
        for _ in 0..3 {
            opt.step(&mut [&mut p], &[Matrix::filled(1, 2, 1.5)]).unwrap();
        }
        assert_eq!(p.value(), &before);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = Tensor::new(Matrix::zeros(2, 2));
        let mut opt = Adam::new(0.1, &[&p]);
        assert!(opt.step(&mut [&mut p], &[Matrix::zeros(1, 2)]).is_err());
    }
}
