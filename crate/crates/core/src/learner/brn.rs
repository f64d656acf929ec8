//! Batch Renormalization without a learned affine (the classifier that
//! follows supplies scale and shift).
//!
//! Training mode normalizes with mini-batch statistics and then corrects
//! toward the running statistics:
//!
//! ```text
//! r = clamp(sigma_B / sigma_R, 1/r_max, r_max)
//! d = clamp((mu_B - mu_R) / sigma_R, -d_max, d_max)
//! y = (x - mu_B) / sigma_B * r + d
//! ```
//!
//! `r` and `d` are treated as constants in the backward pass. With
//! `r_max = 1, d_max = 0` this is exactly batch normalization.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Training,
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrnState {
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    /// Weight of the newest batch in the running-statistics update.
    pub momentum: f64,
    pub r_max: f64,
    pub d_max: f64,
    pub eps: f64,
    pub mode: NormMode,
}

/// Everything the backward pass needs from one training-mode forward.
#[derive(Debug, Clone)]
pub struct BrnBatch {
    pub mean: Array1<f64>,
    /// Biased (1/n) batch variance.
    pub var: Array1<f64>,
    pub sigma: Array1<f64>,
    pub r: Array1<f64>,
    pub d: Array1<f64>,
    /// `(x - mu_B) / sigma_B`, before the r/d correction.
    pub xhat: Array2<f64>,
    pub output: Array2<f64>,
}

impl BrnState {
    pub fn new(dim: usize, momentum: f64, r_max: f64, d_max: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::InvalidArgument(format!("BRN momentum {momentum} outside (0, 1)")));
        }
        if !(r_max >= 1.0 && d_max >= 0.0) {
            return Err(Error::InvalidArgument(format!("BRN clips need r_max >= 1, d_max >= 0 (got {r_max}, {d_max})")));
        }
        Ok(Self {
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
            momentum,
            r_max,
            d_max,
            eps: DEFAULT_EPS,
            mode: NormMode::Training,
        })
    }

    pub fn dim(&self) -> usize {
        self.running_mean.len()
    }

    fn running_sigma(&self) -> Array1<f64> {
        self.running_var.mapv(|v| (v + self.eps).sqrt())
    }

    /// Batch statistics of `x` (rows are samples) without touching state.
    pub fn batch_stats(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        if x.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.ncols() });
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let centered = &x - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty");
        Ok((mean, var))
    }

    /// Correction factors for the given batch statistics.
    pub fn corrections(&self, mean: &Array1<f64>, sigma: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
        let running_sigma = self.running_sigma();
        let r = ndarray::Zip::from(sigma)
            .and(&running_sigma)
            .map_collect(|&sb, &sr| (sb / sr).clamp(1.0 / self.r_max, self.r_max));
        let d = ndarray::Zip::from(mean)
            .and(&self.running_mean)
            .and(&running_sigma)
            .map_collect(|&mb, &mr, &sr| ((mb - mr) / sr).clamp(-self.d_max, self.d_max));
        (r, d)
    }

    pub fn forward_train(&self, x: ArrayView2<f64>) -> Result<BrnBatch> {
        let (mean, var) = self.batch_stats(x)?;
        let sigma = var.mapv(|v| (v + self.eps).sqrt());
        let (r, d) = self.corrections(&mean, &sigma);
        let xhat = (&x - &mean) / &sigma;
        let output = &xhat * &r + &d;
        Ok(BrnBatch { mean, var, sigma, r, d, xhat, output })
    }

    /// Normalizes one sample with the statistics of `batch`, as a member of
    /// that batch would be normalized in training mode.
    pub fn normalize_with_batch(&self, x: ArrayView1<f64>, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        let (mean, var) = self.batch_stats(batch)?;
        let sigma = var.mapv(|v| (v + self.eps).sqrt());
        let (r, d) = self.corrections(&mean, &sigma);
        Ok((&x - &mean) / &sigma * &r + &d)
    }

    pub fn forward_inference(&self, x: ArrayView1<f64>) -> Array1<f64> {
        (&x - &self.running_mean) / &self.running_sigma()
    }

    pub fn backward(batch: &BrnBatch, grad_out: ArrayView2<f64>) -> Array2<f64> {
        let g = &grad_out * &batch.r;
        let g_mean = g.mean_axis(Axis(0)).expect("non-empty");
        let gx_mean = (&g * &batch.xhat).mean_axis(Axis(0)).expect("non-empty");
        (&g - &g_mean - &(&batch.xhat * &gx_mean)) / &batch.sigma
    }

    pub fn update_running(&mut self, batch: &BrnBatch) {
        let m = self.momentum;
        self.running_mean = &self.running_mean * (1.0 - m) + &batch.mean * m;
        self.running_var = &self.running_var * (1.0 - m) + &batch.var * m;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn clip_one_zero_reduces_to_batch_norm() {
        let mut brn = BrnState::new(2, 0.1, 1.0, 0.0).unwrap();
        brn.running_mean = array![3.0, -1.0];
        brn.running_var = array![9.0, 0.25];
        let x = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.0]];
        let out = brn.forward_train(x.view()).unwrap();
        assert!(out.r.iter().all(|&r| r == 1.0));
        assert!(out.d.iter().all(|&d| d == 0.0));
        assert_eq!(out.output, out.xhat);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let brn = BrnState::new(3, 0.1, 3.0, 5.0).unwrap();
        let x = Array2::<f64>::zeros((0, 3));
        assert!(matches!(brn.forward_train(x.view()), Err(Error::EmptyBatch)));
    }

    #[test]
    fn running_var_stays_non_negative() {
        let mut brn = BrnState::new(1, 0.5, 3.0, 5.0).unwrap();
        for k in 0..20 {
            let x = Array2::from_shape_fn((4, 1), |(i, _)| (i * k) as f64);
            let b = brn.forward_train(x.view()).unwrap();
            brn.update_running(&b);
            assert!(brn.running_var[0] >= 0.0);
        }
    }

    #[test]
    fn corrections_are_clipped() {
        let mut brn = BrnState::new(1, 0.1, 2.0, 0.5).unwrap();
        brn.running_var = array![1.0 - DEFAULT_EPS];
        let (r, d) = brn.corrections(&array![10.0], &array![100.0]);
        assert_eq!(r[0], 2.0);
        assert_eq!(d[0], 0.5);
        let (r, d) = brn.corrections(&array![-10.0], &array![0.01]);
        assert_eq!(r[0], 0.5);
        assert_eq!(d[0], -0.5);
    }
}
