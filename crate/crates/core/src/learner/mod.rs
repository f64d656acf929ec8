//! The on-device student: front layers up to the replay tap, then a
//! trainable head with Batch Renormalization.

pub mod brn;
pub mod front;
pub mod head;
pub mod loss;
pub mod record;

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;

pub use brn::{BrnState, NormMode};
pub use front::{DenseTanh, FrontExtractor};
pub use head::{HeadGrads, HeadModel};
pub use loss::loss;
pub use record::FlatRecord;

use crate::error::{Error, Result};

/// Output of the front layers at the replay tap.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation(pub Vec<f64>);

impl Activation {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn distance(&self, other: &Activation) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub predicted_class: usize,
    pub confidence: f64,
}

impl Prediction {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let (predicted_class, confidence) = scores
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, s)| if s > best.1 { (i, s) } else { best });
        Self { scores, predicted_class, confidence }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Widths of the dense-tanh layers, bottom to top.
    pub layer_widths: Vec<usize>,
    /// Number of layers below the replay tap. `layer_widths.len()` stores
    /// penultimate activations; 0 stores raw input features.
    pub replay_tap: usize,
    pub classes: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the front learning rate until the freeze
    /// policy sets it to zero.
    pub front_lr_multiplier: f64,
    pub brn_momentum: f64,
    pub brn_r_max: f64,
    pub brn_d_max: f64,
    pub init_gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            layer_widths: vec![32, 32],
            replay_tap: 2,
            classes: 4,
            learning_rate: 0.05,
            front_lr_multiplier: 1.0,
            brn_momentum: 0.1,
            brn_r_max: 3.0,
            brn_d_max: 5.0,
            init_gain: 1.5,
        }
    }
}

impl ModelConfig {
    /// Width of the stored replay activations.
    pub fn tap_dim(&self) -> usize {
        if self.replay_tap == 0 {
            self.input_dim
        } else {
            self.layer_widths[self.replay_tap - 1]
        }
    }

    pub fn act_dim(&self) -> usize {
        self.layer_widths.last().copied().unwrap_or(self.input_dim)
    }
}

/// Front extractor plus head. The replay tap sits between them.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageModel {
    pub front: FrontExtractor,
    pub head: HeadModel,
}

impl TwoStageModel {
    pub fn new(front: FrontExtractor, head: HeadModel) -> Result<Self> {
        let tap = front.layers.last().map(DenseTanh::output_dim);
        if let Some(tap) = tap {
            if tap != head.input_dim() {
                return Err(Error::DimensionMismatch { expected: head.input_dim(), got: tap });
            }
        }
        Ok(Self { front, head })
    }

    pub fn random<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        if cfg.replay_tap > cfg.layer_widths.len() {
            return Err(Error::InvalidArgument(format!(
                "replay tap {} beyond {} layers",
                cfg.replay_tap,
                cfg.layer_widths.len()
            )));
        }
        let mut layers = Vec::with_capacity(cfg.layer_widths.len());
        let mut input = cfg.input_dim;
        for &width in &cfg.layer_widths {
            layers.push(DenseTanh::random(input, width, cfg.init_gain, rng));
            input = width;
        }
        let hidden = layers.split_off(cfg.replay_tap);
        let front = FrontExtractor::new(layers, cfg.front_lr_multiplier)?;
        let brn = BrnState::new(cfg.act_dim(), cfg.brn_momentum, cfg.brn_r_max, cfg.brn_d_max)?;
        let mut head = HeadModel::new(hidden, cfg.classes, brn, cfg.learning_rate)?;
        head.init_weights(0.01, rng);
        Self::new(front, head)
    }

    pub fn input_dim(&self) -> usize {
        self.front.input_dim().unwrap_or_else(|| self.head.input_dim())
    }

    pub fn tap_activation(&self, features: &[f64]) -> Result<Activation> {
        if features.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: features.len() });
        }
        self.front.forward_front(features)
    }

    /// Inference-mode prediction on raw features.
    pub fn predict(&self, features: &[f64]) -> Result<Prediction> {
        self.head.predict(&self.tap_activation(features)?)
    }

    /// One SGD step on a mini-batch that concatenates fresh samples (pushed
    /// through the front) with replayed tap activations. Gradients reach the
    /// front only through the fresh rows, and only when it is not frozen.
    /// Nothing is mutated unless every gradient is finite.
    pub fn train_minibatch(&mut self, fresh: &[(&[f64], usize)], replay: &[(&Activation, usize)]) -> Result<f64> {
        let n_fresh = fresh.len();
        if n_fresh + replay.len() == 0 {
            return Err(Error::EmptyBatch);
        }
        let d_in = self.input_dim();
        let d_tap = self.head.input_dim();
        let mut raw = Vec::with_capacity(n_fresh * d_in);
        for (features, _) in fresh {
            if features.len() != d_in {
                return Err(Error::DimensionMismatch { expected: d_in, got: features.len() });
            }
            raw.extend_from_slice(features);
        }
        let raw = Array2::from_shape_vec((n_fresh, d_in), raw).expect("shape matches data");
        let trace = self.front.forward_batch_cached(raw);
        let fresh_tap = trace.last().expect("non-empty");

        let replay_acts: Vec<Activation> = replay.iter().map(|(a, _)| (*a).clone()).collect();
        let replay_tap = head::stack(&replay_acts, d_tap)?;
        let x = concatenate(Axis(0), &[fresh_tap.view(), replay_tap.view()])
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let labels: Vec<usize> =
            fresh.iter().map(|(_, l)| *l).chain(replay.iter().map(|(_, l)| *l)).collect();

        let (loss, grads, batch) = self.head.gradients(x.view(), &labels)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite("head gradient".into()));
        }

        let mut front_grads = Vec::new();
        if !self.front.is_frozen() && n_fresh > 0 && !self.front.layers.is_empty() {
            let mut g = grads.input.slice(s![..n_fresh, ..]).to_owned();
            front_grads = vec![Array2::zeros((0, 0)); self.front.layers.len()];
            for (i, layer) in self.front.layers.iter().enumerate().rev() {
                let (dw, dx) = layer.backward_batch(trace[i].view(), trace[i + 1].view(), g.view());
                front_grads[i] = dw;
                g = dx;
            }
            if front_grads.iter().flat_map(|g| g.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("front gradient".into()));
            }
        }

        self.head.apply(&grads, &batch);
        let front_lr = self.head.learning_rate * self.front.lr_multiplier;
        for (layer, g) in self.front.layers.iter_mut().zip(&front_grads) {
            layer.weights.scaled_add(-front_lr, g);
        }
        Ok(loss)
    }

    /// Parameter arrays in a fixed order: front layers, hidden layers,
    /// classifier weights, bias, BRN running mean, BRN running variance.
    pub fn to_record(&self) -> FlatRecord {
        let mut arrays: Vec<Vec<f64>> = Vec::new();
        for layer in self.front.layers.iter().chain(&self.head.hidden) {
            arrays.push(layer.weights.iter().copied().collect());
        }
        arrays.push(self.head.weights.iter().copied().collect());
        arrays.push(self.head.bias.to_vec());
        arrays.push(self.head.brn.running_mean.to_vec());
        arrays.push(self.head.brn.running_var.to_vec());
        FlatRecord::new(arrays)
    }

    /// Loads parameters from a record produced by a model of the same shape.
    pub fn load_record(&mut self, record: &FlatRecord) -> Result<()> {
        let expected = self.to_record();
        if record.arrays.len() != expected.arrays.len() {
            return Err(Error::Decode(format!(
                "expected {} arrays, got {}",
                expected.arrays.len(),
                record.arrays.len()
            )));
        }
        for (i, (got, want)) in record.arrays.iter().zip(&expected.arrays).enumerate() {
            if got.len() != want.len() {
                return Err(Error::Decode(format!("array {i}: expected {} values, got {}", want.len(), got.len())));
            }
        }
        let mut arrays = record.arrays.iter();
        for layer in self.front.layers.iter_mut().chain(self.head.hidden.iter_mut()) {
            fill(layer.weights.iter_mut(), arrays.next().expect("counted"));
        }
        fill(self.head.weights.iter_mut(), arrays.next().expect("counted"));
        fill(self.head.bias.iter_mut(), arrays.next().expect("counted"));
        fill(self.head.brn.running_mean.iter_mut(), arrays.next().expect("counted"));
        fill(self.head.brn.running_var.iter_mut(), arrays.next().expect("counted"));
        Ok(())
    }
}

fn fill<'a>(dst: impl Iterator<Item = &'a mut f64>, src: &[f64]) {
    for (d, s) in dst.zip(src) {
        *d = *s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::{rng_for, Role};
    use ndarray::Array2;

    fn model() -> TwoStageModel {
        TwoStageModel::random(&ModelConfig::default(), &mut rng_for(1, Role::ModelInit)).unwrap()
    }

    #[test]
    fn zero_projection_gives_tanh_of_zero() {
        let front = FrontExtractor::new(vec![DenseTanh::new(Array2::zeros((5, 3)))], 0.0).unwrap();
        let act = front.forward_front(&[1.0, -2.0, 7.0]).unwrap();
        assert_eq!(act.0, vec![0.0; 5]);
    }

    #[test]
    fn identity_projection_applies_tanh_elementwise() {
        let front = FrontExtractor::new(vec![DenseTanh::new(Array2::eye(3))], 0.0).unwrap();
        let x = [0.3, -1.2, 2.0];
        let act = front.forward_front(&x).unwrap();
        for (a, v) in act.0.iter().zip(x) {
            assert_eq!(*a, v.tanh());
        }
    }

    #[test]
    fn front_rejects_wrong_dimension() {
        let m = model();
        assert!(matches!(m.tap_activation(&[0.0; 3]), Err(Error::DimensionMismatch { expected: 16, got: 3 })));
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -1000.0, 3.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(Prediction::from_scores(p).predicted_class, 0);
    }

    #[test]
    fn record_round_trip_restores_parameters() {
        let a = model();
        let mut b = TwoStageModel::random(&ModelConfig::default(), &mut rng_for(2, Role::ModelInit)).unwrap();
        assert_ne!(a, b);
        b.load_record(&FlatRecord::decode(&a.to_record().encode()).unwrap()).unwrap();
        assert_eq!(a.to_record(), b.to_record());
    }

    #[test]
    fn record_with_wrong_shape_is_rejected() {
        let mut m = model();
        let mut rec = m.to_record();
        rec.arrays[0].pop();
        assert!(m.load_record(&rec).is_err());
    }

    #[test]
    fn frozen_front_is_untouched_by_training() {
        let mut m = model();
        m.front.lr_multiplier = 0.0;
        let before = m.front.clone();
        let x = vec![0.5; 16];
        let act = m.tap_activation(&x).unwrap();
        for _ in 0..10 {
            m.train_minibatch(&[(&x, 1), (&x, 2)], &[(&act, 3)]).unwrap();
        }
        assert_eq!(m.front, before);
        assert_eq!(m.tap_activation(&x).unwrap(), act);
    }

    #[test]
    fn unfrozen_front_moves() {
        let mut m = model();
        let before = m.front.clone();
        let x: Vec<f64> = (0..16).map(|i| i as f64 / 8.0 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        m.train_minibatch(&[(&x, 1), (&y, 2)], &[]).unwrap();
        assert_ne!(m.front, before);
    }
}
