use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Activation;
use crate::error::{Error, Result};

/// Bias-free dense layer followed by `tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTanh {
    /// `out × in`.
    pub weights: Array2<f64>,
}

impl DenseTanh {
    pub fn new(weights: Array2<f64>) -> Self {
        Self { weights }
    }

    /// Gaussian init with variance `gain² / in`.
    pub fn random<R: Rng + ?Sized>(input: usize, output: usize, gain: f64, rng: &mut R) -> Self {
        let scale = gain / (input as f64).sqrt();
        let data: Vec<f64> = (0..input * output)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            })
            .collect();
        Self { weights: Array2::from_shape_vec((output, input), data).expect("shape matches data") }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Multiply-adds per sample, used by the training-time cost model.
    pub fn units(&self) -> usize {
        self.weights.len()
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.weights.dot(&x).mapv(f64::tanh)
    }

    /// Rows of `x` are samples.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights.t()).mapv(f64::tanh)
    }

    /// Given the layer input, its output and the upstream gradient, returns
    /// `(dL/dW, dL/dx)`.
    pub fn backward_batch(
        &self,
        input: ArrayView2<f64>,
        output: ArrayView2<f64>,
        grad_out: ArrayView2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let dz = &grad_out * &output.mapv(|y| 1.0 - y * y);
        let dw = dz.t().dot(&input);
        let dx = dz.dot(&self.weights);
        (dw, dx)
    }
}

/// Front layers below the replay tap. They are trained at
/// `learning_rate * lr_multiplier`; a multiplier of zero freezes them.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontExtractor {
    pub layers: Vec<DenseTanh>,
    pub lr_multiplier: f64,
}

impl FrontExtractor {
    pub fn new(layers: Vec<DenseTanh>, lr_multiplier: f64) -> Result<Self> {
        if layers.windows(2).any(|w| w[0].output_dim() != w[1].input_dim()) {
            return Err(Error::InvalidArgument("front layer dimensions do not chain".into()));
        }
        if !(0.0..=1.0).contains(&lr_multiplier) {
            return Err(Error::InvalidArgument(format!("lr_multiplier {lr_multiplier} outside [0, 1]")));
        }
        Ok(Self { layers, lr_multiplier })
    }

    /// A front with no layers passes features straight through (input-layer
    /// replay).
    pub fn passthrough() -> Self {
        Self { layers: Vec::new(), lr_multiplier: 0.0 }
    }

    pub fn is_frozen(&self) -> bool {
        self.lr_multiplier == 0.0
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(DenseTanh::input_dim)
    }

    pub fn units(&self) -> usize {
        self.layers.iter().map(DenseTanh::units).sum()
    }

    pub fn forward_front(&self, features: &[f64]) -> Result<Activation> {
        if let Some(expected) = self.input_dim() {
            if features.len() != expected {
                return Err(Error::DimensionMismatch { expected, got: features.len() });
            }
        }
        let mut x = Array1::from(features.to_vec());
        for layer in &self.layers {
            x = layer.forward(x.view());
        }
        Ok(Activation(x.to_vec()))
    }

    /// Batch forward keeping every layer's input; the last element is the
    /// front output.
    pub(crate) fn forward_batch_cached(&self, x: Array2<f64>) -> Vec<Array2<f64>> {
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(x);
        for layer in &self.layers {
            let next = layer.forward_batch(trace.last().expect("non-empty").view());
            trace.push(next);
        }
        trace
    }
}
