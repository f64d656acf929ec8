use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::brn::{BrnBatch, BrnState, NormMode};
use super::front::DenseTanh;
use super::{loss, softmax, Activation, Prediction};
use crate::error::{Error, Result};

/// Trainable part of the student: optional hidden layers above the replay
/// tap, Batch Renormalization, then a linear classifier and softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel {
    pub hidden: Vec<DenseTanh>,
    /// `d_act × C`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub brn: BrnState,
    pub learning_rate: f64,
}

/// Gradients of the mean mini-batch loss.
#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub hidden: Vec<Array2<f64>>,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    /// Gradient with respect to the head input, one row per sample.
    pub input: Array2<f64>,
}

impl HeadGrads {
    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).chain(self.input.iter()).all(|v| v.is_finite())
            && self.hidden.iter().flat_map(|h| h.iter()).all(|v| v.is_finite())
    }
}

pub(crate) struct TrainPass {
    hidden_trace: Vec<Array2<f64>>,
    pub(crate) brn: BrnBatch,
    pub(crate) probs: Array2<f64>,
}

impl HeadModel {
    pub fn new(hidden: Vec<DenseTanh>, classes: usize, brn: BrnState, learning_rate: f64) -> Result<Self> {
        let d_act = hidden.last().map_or(brn.dim(), DenseTanh::output_dim);
        if d_act != brn.dim() {
            return Err(Error::DimensionMismatch { expected: d_act, got: brn.dim() });
        }
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {learning_rate}")));
        }
        Ok(Self {
            hidden,
            weights: Array2::zeros((d_act, classes)),
            bias: Array1::zeros(classes),
            brn,
            learning_rate,
        })
    }

    /// Small Gaussian classifier weights, zero bias.
    pub fn init_weights<R: Rng + ?Sized>(&mut self, scale: f64, rng: &mut R) {
        use rand_distr::{Distribution, StandardNormal};
        self.weights.mapv_inplace(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        });
        self.bias.fill(0.0);
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().map_or(self.brn.dim(), DenseTanh::input_dim)
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden.iter().map(DenseTanh::units).sum()
    }

    pub fn classifier_units(&self) -> usize {
        self.weights.len()
    }

    fn through_hidden(&self, x: Array2<f64>) -> Vec<Array2<f64>> {
        let mut trace = vec![x];
        for layer in &self.hidden {
            let next = layer.forward_batch(trace.last().expect("non-empty").view());
            trace.push(next);
        }
        trace
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        Ok(())
    }

    /// Single-sample prediction. Training mode normalizes with the
    /// statistics of `batch_context`; inference mode uses running stats.
    pub fn forward_head(&self, act: &Activation, batch_context: Option<&[Activation]>) -> Result<Prediction> {
        if act.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: act.len() });
        }
        let x = Array2::from_shape_vec((1, act.len()), act.0.clone()).expect("row vector");
        let z = self.through_hidden(x).pop().expect("non-empty").row(0).to_owned();
        let normalized = match self.brn.mode {
            NormMode::Inference => self.brn.forward_inference(z.view()),
            NormMode::Training => {
                let ctx = batch_context.filter(|c| !c.is_empty()).ok_or(Error::EmptyBatch)?;
                let batch = stack(ctx, self.input_dim())?;
                let hidden_batch = self.through_hidden(batch).pop().expect("non-empty");
                self.brn.normalize_with_batch(z.view(), hidden_batch.view())?
            }
        };
        let logits = normalized.dot(&self.weights) + &self.bias;
        Ok(Prediction::from_scores(softmax(logits.as_slice().expect("contiguous"))))
    }

    /// Inference-mode prediction regardless of `brn.mode`.
    pub fn predict(&self, act: &Activation) -> Result<Prediction> {
        if act.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: act.len() });
        }
        let mut z = Array1::from(act.0.clone());
        for layer in &self.hidden {
            z = layer.forward(z.view());
        }
        let normalized = self.brn.forward_inference(z.view());
        let logits = normalized.dot(&self.weights) + &self.bias;
        Ok(Prediction::from_scores(softmax(logits.as_slice().expect("contiguous"))))
    }

    pub(crate) fn train_pass(&self, x: ArrayView2<f64>) -> Result<TrainPass> {
        self.check_input(x)?;
        let hidden_trace = self.through_hidden(x.to_owned());
        let brn = self.brn.forward_train(hidden_trace.last().expect("non-empty").view())?;
        let mut probs = brn.output.dot(&self.weights) + &self.bias;
        for mut row in probs.rows_mut() {
            let p = softmax(row.as_slice().expect("contiguous"));
            row.assign(&Array1::from(p));
        }
        Ok(TrainPass { hidden_trace, brn, probs })
    }

    fn check_labels(&self, labels: &[usize], rows: usize) -> Result<()> {
        if labels.len() != rows {
            return Err(Error::DimensionMismatch { expected: rows, got: labels.len() });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= self.classes()) {
            return Err(Error::LabelOutOfRange { label, classes: self.classes() });
        }
        Ok(())
    }

    /// Mean cross-entropy of a training-mode forward pass. Does not mutate.
    pub fn batch_loss(&self, x: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
        let pass = self.train_pass(x)?;
        self.check_labels(labels, x.nrows())?;
        Ok(mean_loss(&pass.probs, labels))
    }

    /// Mean loss and its analytic gradients for a training-mode pass.
    pub fn gradients(&self, x: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, HeadGrads, BrnBatch)> {
        let pass = self.train_pass(x)?;
        self.check_labels(labels, x.nrows())?;
        let n = x.nrows() as f64;
        let mean = mean_loss(&pass.probs, labels);

        let mut dlogits = pass.probs.clone();
        for (mut row, &label) in dlogits.rows_mut().into_iter().zip(labels) {
            row[label] -= 1.0;
        }
        dlogits /= n;
        let d_weights = pass.brn.output.t().dot(&dlogits);
        let d_bias = dlogits.sum_axis(Axis(0));
        let d_norm = dlogits.dot(&self.weights.t());
        let mut grad = BrnState::backward(&pass.brn, d_norm.view());

        let mut d_hidden = vec![Array2::zeros((0, 0)); self.hidden.len()];
        for (i, layer) in self.hidden.iter().enumerate().rev() {
            let (dw, dx) =
                layer.backward_batch(pass.hidden_trace[i].view(), pass.hidden_trace[i + 1].view(), grad.view());
            d_hidden[i] = dw;
            grad = dx;
        }
        let grads = HeadGrads { hidden: d_hidden, weights: d_weights, bias: d_bias, input: grad };
        Ok((mean, grads, pass.brn))
    }

    /// Applies precomputed gradients and folds the batch statistics into the
    /// running moments.
    pub(crate) fn apply(&mut self, grads: &HeadGrads, batch: &BrnBatch) {
        let lr = self.learning_rate;
        self.weights.scaled_add(-lr, &grads.weights);
        self.bias.scaled_add(-lr, &grads.bias);
        for (layer, g) in self.hidden.iter_mut().zip(&grads.hidden) {
            layer.weights.scaled_add(-lr, g);
        }
        self.brn.update_running(batch);
    }

    /// One plain SGD step on the mean cross-entropy of `minibatch`.
    /// Returns the pre-step mean loss.
    pub fn sgd_step(&mut self, minibatch: &[(Activation, usize)]) -> Result<f64> {
        if minibatch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let acts: Vec<Activation> = minibatch.iter().map(|(a, _)| a.clone()).collect();
        let labels: Vec<usize> = minibatch.iter().map(|(_, l)| *l).collect();
        let x = stack(&acts, self.input_dim())?;
        let (loss, grads, batch) = self.gradients(x.view(), &labels)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite("head gradient".into()));
        }
        self.apply(&grads, &batch);
        Ok(loss)
    }
}

fn mean_loss(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    probs
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &label)| loss::cross_entropy(row[label]))
        .sum::<f64>()
        / labels.len() as f64
}

/// Stacks activations into a `n × dim` matrix.
pub fn stack(acts: &[Activation], dim: usize) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(acts.len() * dim);
    for a in acts {
        if a.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: a.len() });
        }
        data.extend_from_slice(&a.0);
    }
    Ok(Array2::from_shape_vec((acts.len(), dim), data).expect("shape matches data"))
}
