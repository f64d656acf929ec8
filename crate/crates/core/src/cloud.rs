//! Cloud side: teacher labeling, the scene-change metric φ and the
//! per-device sampling-rate controller.

use std::collections::BTreeMap;

use log::warn;
use rand::Rng;

use crate::error::{Error, Result};
use crate::learner::loss::cross_entropy;
use crate::learner::Prediction;
use crate::seeds::SimRng;
use crate::stream::Frame;

/// Conventional confidence threshold for counting a prediction as accurate.
pub const DEFAULT_THETA: f64 = 0.5;

/// Near-ground-truth teacher. With probability `noise_rate` a label is
/// swapped for a uniformly random wrong class. Its score vector puts
/// `1 - softness` on the emitted label and spreads the rest evenly.
#[derive(Debug, Clone)]
pub struct TeacherOracle {
    noise_rate: f64,
    softness: f64,
    classes: usize,
    rng: SimRng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherOutput {
    pub label: usize,
    pub scores: Vec<f64>,
}

impl TeacherOracle {
    pub fn new(noise_rate: f64, softness: f64, classes: usize, rng: SimRng) -> Result<Self> {
        if !(0.0..1.0).contains(&noise_rate) {
            return Err(Error::InvalidArgument(format!("teacher noise_rate {noise_rate} outside [0, 1)")));
        }
        if !(0.0..1.0).contains(&softness) {
            return Err(Error::InvalidArgument(format!("teacher softness {softness} outside [0, 1)")));
        }
        if classes < 2 {
            return Err(Error::InvalidArgument("teacher needs at least two classes".into()));
        }
        Ok(Self { noise_rate, softness, classes, rng })
    }

    pub fn infer(&mut self, frame: &Frame) -> TeacherOutput {
        let mut label = frame.true_class;
        if self.noise_rate > 0.0 && self.rng.random::<f64>() < self.noise_rate {
            let shift = self.rng.random_range(1..self.classes);
            label = (label + shift) % self.classes;
        }
        let rest = self.softness / (self.classes - 1) as f64;
        let scores = (0..self.classes).map(|c| if c == label { 1.0 - self.softness } else { rest }).collect();
        TeacherOutput { label, scores }
    }

    pub fn teacher_outputs(&mut self, frames: &[Frame]) -> Result<Vec<TeacherOutput>> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("no frames to label".into()));
        }
        Ok(frames.iter().map(|f| self.infer(f)).collect())
    }

    /// Hard pseudo-labels, one per frame.
    pub fn label_frames(&mut self, frames: &[Frame]) -> Result<Vec<usize>> {
        Ok(self.teacher_outputs(frames)?.into_iter().map(|o| o.label).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiSummary {
    /// φ_k for k = 1..n.
    pub per_frame: Vec<f64>,
    pub mean: f64,
}

/// φ_k is the cross-entropy of the teacher's scores on frame k against the
/// teacher's hard label on frame k-1. Frames must be in stream order.
pub fn compute_phi(scores: &[Vec<f64>]) -> Result<PhiSummary> {
    if scores.len() < 2 {
        return Err(Error::InvalidArgument(format!("φ needs at least 2 frames, got {}", scores.len())));
    }
    let per_frame: Vec<f64> = scores
        .windows(2)
        .map(|w| {
            let previous = Prediction::from_scores(w[0].clone()).predicted_class;
            cross_entropy(w[1].get(previous).copied().unwrap_or(0.0))
        })
        .collect();
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok(PhiSummary { per_frame, mean })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerParams {
    pub r_min: f64,
    pub r_max: f64,
    pub phi_target: f64,
    pub alpha_target: f64,
    pub eta_r: f64,
    pub eta_alpha: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self { r_min: 0.1, r_max: 2.0, phi_target: 0.15, alpha_target: 0.8, eta_r: 0.5, eta_alpha: 1.0 }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_min <= self.r_max && self.r_max.is_finite()) {
            return Err(Error::InvalidArgument(format!("rate bounds [{}, {}]", self.r_min, self.r_max)));
        }
        if !(self.eta_r > 0.0 && self.eta_alpha > 0.0) {
            return Err(Error::InvalidArgument("controller step sizes must be > 0".into()));
        }
        if ![self.phi_target, self.alpha_target].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("controller targets".into()));
        }
        Ok(())
    }
}

/// Sampling-rate feedback law:
///
/// ```text
/// r' = clip( eta_r (phi - phi_target)
///          + eta_alpha max(0, alpha_target - alpha)
///          + (1 + lambda' - lambda) r,   r_min, r_max )
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub params: ControllerParams,
    pub rate: f64,
    pub lambda_prev: f64,
}

impl ControllerState {
    pub fn new(params: ControllerParams, initial_rate: f64) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, rate: initial_rate.clamp(params.r_min, params.r_max), lambda_prev: 0.0 })
    }

    /// Unclipped controller output.
    pub fn raw_rate(&self, phi_bar: f64, alpha: f64, lambda_bar: f64) -> f64 {
        let p = &self.params;
        let r_phi = p.eta_r * (phi_bar - p.phi_target);
        let r_alpha = p.eta_alpha * (p.alpha_target - alpha).max(0.0);
        let r_lambda = (1.0 + (lambda_bar - self.lambda_prev)) * self.rate;
        r_phi + r_alpha + r_lambda
    }

    /// Advances the controller. Non-finite inputs (or λ outside [0, 1])
    /// leave the state untouched.
    pub fn update_rate(&mut self, phi_bar: f64, alpha: f64, lambda_bar: f64) -> f64 {
        if !(phi_bar.is_finite() && alpha.is_finite() && lambda_bar.is_finite()) || !(0.0..=1.0).contains(&lambda_bar) {
            warn!("controller input rejected (phi={phi_bar}, alpha={alpha}, lambda={lambda_bar}); keeping rate {}", self.rate);
            return self.rate;
        }
        let raw = self.raw_rate(phi_bar, alpha, lambda_bar);
        self.rate = raw.clamp(self.params.r_min, self.params.r_max);
        self.lambda_prev = lambda_bar;
        self.rate
    }
}

/// Measurements the edge reports alongside an upload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeStats {
    pub alpha: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelBatchResponse {
    pub frame_ids: Vec<u64>,
    pub pseudo_labels: Vec<usize>,
    pub new_rate: f64,
    /// φ̄ of this upload, when it had at least two frames.
    pub phi_bar: Option<f64>,
}

/// Shared teacher plus one controller record per device.
#[derive(Debug, Clone)]
pub struct CloudNode {
    teacher: TeacherOracle,
    params: ControllerParams,
    devices: BTreeMap<u32, DeviceRecord>,
}

#[derive(Debug, Clone)]
struct DeviceRecord {
    controller: ControllerState,
    adaptive: bool,
}

impl CloudNode {
    pub fn new(teacher: TeacherOracle, params: ControllerParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { teacher, params, devices: BTreeMap::new() })
    }

    /// Registers a device. Non-adaptive devices keep `initial_rate` forever.
    pub fn register(&mut self, device: u32, initial_rate: f64, adaptive: bool) -> Result<()> {
        let controller = if adaptive {
            ControllerState::new(self.params, initial_rate)?
        } else {
            // fixed-rate devices bypass the clip range
            ControllerState { params: self.params, rate: initial_rate, lambda_prev: 0.0 }
        };
        self.devices.insert(device, DeviceRecord { controller, adaptive });
        Ok(())
    }

    pub fn rate(&self, device: u32) -> Option<f64> {
        self.devices.get(&device).map(|d| d.controller.rate)
    }

    pub fn teacher_mut(&mut self) -> &mut TeacherOracle {
        &mut self.teacher
    }

    /// Labels an uploaded buffer and, for adaptive devices with stats,
    /// advances that device's controller.
    pub fn handle_upload(&mut self, device: u32, frames: &[Frame], stats: Option<EdgeStats>) -> Result<LabelBatchResponse> {
        let record = self
            .devices
            .get_mut(&device)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown device {device}")))?;
        let outputs = self.teacher.teacher_outputs(frames)?;
        let phi_bar = if outputs.len() >= 2 {
            let scores: Vec<Vec<f64>> = outputs.iter().map(|o| o.scores.clone()).collect();
            Some(compute_phi(&scores)?.mean)
        } else {
            None
        };
        if let (true, Some(phi), Some(stats)) = (record.adaptive, phi_bar, stats) {
            record.controller.update_rate(phi, stats.alpha, stats.lambda);
        }
        Ok(LabelBatchResponse {
            frame_ids: frames.iter().map(|f| f.frame_id).collect(),
            pseudo_labels: outputs.into_iter().map(|o| o.label).collect(),
            new_rate: record.controller.rate,
            phi_bar,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::{rng_for, Role};

    fn frames(classes: &[usize]) -> Vec<Frame> {
        classes
            .iter()
            .enumerate()
            .map(|(i, &c)| Frame { frame_id: i as u64, timestamp: i as f64 / 30.0, features: vec![0.0], true_class: c, domain_id: 0 })
            .collect()
    }

    #[test]
    fn noiseless_teacher_returns_ground_truth() {
        let fs = frames(&[0, 3, 2, 1, 1, 0]);
        let mut t = TeacherOracle::new(0.0, 0.05, 4, rng_for(1, Role::Teacher)).unwrap();
        assert_eq!(t.label_frames(&fs).unwrap(), vec![0, 3, 2, 1, 1, 0]);
    }

    #[test]
    fn noisy_teacher_corrupts_expected_fraction() {
        let classes: Vec<usize> = (0..10_000).map(|i| i % 4).collect();
        let fs = frames(&classes);
        let mut t = TeacherOracle::new(0.1, 0.05, 4, rng_for(2, Role::Teacher)).unwrap();
        let labels = t.label_frames(&fs).unwrap();
        let wrong = labels.iter().zip(&classes).filter(|(a, b)| a != b).count() as f64 / 10_000.0;
        assert!((wrong - 0.1).abs() <= 0.01, "{wrong}");
    }

    #[test]
    fn empty_upload_rejected() {
        let mut t = TeacherOracle::new(0.0, 0.05, 4, rng_for(1, Role::Teacher)).unwrap();
        assert!(t.label_frames(&[]).is_err());
    }

    #[test]
    fn phi_of_identical_one_hot_is_zero() {
        let s = vec![vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]];
        let phi = compute_phi(&s).unwrap();
        assert_eq!(phi.per_frame.len(), 2);
        assert!(phi.mean.abs() < 1e-12);
    }

    #[test]
    fn phi_against_uniform_is_log_classes() {
        let s = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.25; 4]];
        assert!((compute_phi(&s).unwrap().mean - 4f64.ln()).abs() < 1e-12);
        assert!(compute_phi(&s[..1]).is_err());
    }

    #[test]
    fn controller_hand_example() {
        let params = ControllerParams { eta_r: 0.5, phi_target: 0.2, eta_alpha: 1.0, alpha_target: 0.8, ..Default::default() };
        let mut c = ControllerState::new(params, 1.0).unwrap();
        let r = c.update_rate(0.3, 0.9, 0.0);
        assert!((r - 1.05).abs() < 1e-12);
    }

    #[test]
    fn controller_fixed_point_and_clips() {
        let params = ControllerParams::default();
        let mut c = ControllerState::new(params, 1.0).unwrap();
        assert_eq!(c.update_rate(params.phi_target, 0.95, 0.0), 1.0);

        let mut c = ControllerState::new(params, 2.0).unwrap();
        // 0.5 * (3.15 - 0.15) + 0 + 2.0 = 3.5
        assert_eq!(c.raw_rate(3.15, 1.0, 0.0), 3.5);
        assert_eq!(c.update_rate(3.15, 1.0, 0.0), 2.0);

        let mut c = ControllerState::new(params, 0.1).unwrap();
        // 0.5 * (0.11 - 0.15) + 0.1 = 0.08
        assert!((c.raw_rate(0.11, 1.0, 0.0) - 0.08).abs() < 1e-12);
        assert_eq!(c.update_rate(0.11, 1.0, 0.0), 0.1);
    }

    #[test]
    fn controller_ignores_non_finite_inputs() {
        let mut c = ControllerState::new(ControllerParams::default(), 1.3).unwrap();
        assert_eq!(c.update_rate(f64::NAN, 0.5, 0.2), 1.3);
        assert_eq!(c.update_rate(0.2, f64::INFINITY, 0.2), 1.3);
        assert_eq!(c.update_rate(0.2, 0.5, 1.5), 1.3);
        assert_eq!(c.lambda_prev, 0.0);
    }

    #[test]
    fn cloud_node_keeps_fixed_rate_devices_fixed() {
        let teacher = TeacherOracle::new(0.0, 0.05, 4, rng_for(3, Role::Teacher)).unwrap();
        let mut node = CloudNode::new(teacher, ControllerParams::default()).unwrap();
        node.register(1, 2.0, false).unwrap();
        node.register(2, 1.0, true).unwrap();
        let fs = frames(&[0, 1, 2, 3, 0, 1]);
        let stats = Some(EdgeStats { alpha: 0.1, lambda: 0.0 });
        let r1 = node.handle_upload(1, &fs, stats).unwrap();
        let r2 = node.handle_upload(2, &fs, stats).unwrap();
        assert_eq!(r1.new_rate, 2.0);
        assert!(r2.new_rate > 1.0);
        assert_eq!(r1.pseudo_labels, vec![0, 1, 2, 3, 0, 1]);
        assert_eq!(r2.frame_ids, (0..6).collect::<Vec<u64>>());
        assert!(node.handle_upload(9, &fs, None).is_err());
    }
}
