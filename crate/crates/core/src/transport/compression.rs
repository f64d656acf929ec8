use rand::Rng;

use crate::error::{Error, Result};

/// Stand-in for video encoding of a buffered batch of frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionModel {
    pub bytes_per_raw_frame: u64,
    pub compression_ratio: f64,
    pub latency_min_s: f64,
    pub latency_max_s: f64,
}

impl Default for CompressionModel {
    fn default() -> Self {
        Self { bytes_per_raw_frame: 20_000, compression_ratio: 40.0, latency_min_s: 1.0, latency_max_s: 3.0 }
    }
}

impl CompressionModel {
    pub fn validate(&self) -> Result<()> {
        if self.bytes_per_raw_frame == 0 {
            return Err(Error::InvalidArgument("bytes_per_raw_frame must be > 0".into()));
        }
        if !(self.compression_ratio > 1.0 && self.compression_ratio.is_finite()) {
            return Err(Error::InvalidArgument(format!("compression_ratio {} must be > 1", self.compression_ratio)));
        }
        if !(1.0 <= self.latency_min_s && self.latency_min_s <= self.latency_max_s && self.latency_max_s <= 3.0) {
            return Err(Error::InvalidArgument(format!(
                "compression latency range [{}, {}] must lie within [1, 3]",
                self.latency_min_s, self.latency_max_s
            )));
        }
        Ok(())
    }

    /// `ceil(n · bytes_per_raw_frame / ratio)`.
    pub fn compressed_size(&self, n_frames: usize) -> usize {
        let raw = n_frames as f64 * self.bytes_per_raw_frame as f64;
        (raw / self.compression_ratio).ceil() as usize
    }

    pub fn sample_latency<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.latency_max_s > self.latency_min_s {
            rng.random_range(self.latency_min_s..=self.latency_max_s)
        } else {
            self.latency_min_s
        }
    }
}
