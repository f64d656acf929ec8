//! Synthetic drifting stream.
//!
//! Each domain is a Gaussian mixture: a class prior, one feature mean per
//! class and an isotropic noise scale. A schedule of hard cuts (optionally
//! softened by a linear ramp) decides which domain is active per frame.
//! Classes persist between consecutive frames with a per-domain
//! probability, which gives the stream video-like temporal coherence
//! without changing the marginal class distribution.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seeds::SimRng;

pub const DEFAULT_FPS: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: u64,
    pub timestamp: f64,
    pub features: Vec<f64>,
    pub true_class: usize,
    pub domain_id: usize,
}

/// Generative parameters of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainParams {
    pub prior: Vec<f64>,
    /// One mean vector per class.
    pub means: Vec<Vec<f64>>,
    pub noise: f64,
    /// Probability that a frame keeps the previous frame's class. Zero gives
    /// i.i.d. frames.
    pub persistence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start_frame: u64,
    pub domain_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSchedule {
    segments: Vec<Segment>,
    domains: Vec<DomainParams>,
    ramp_frames: u64,
}

impl DomainSchedule {
    pub fn new(segments: Vec<Segment>, domains: Vec<DomainParams>, ramp_frames: u64) -> Result<Self> {
        if domains.is_empty() {
            return Err(Error::InvalidArgument("schedule needs at least one domain".into()));
        }
        if segments.first().map(|s| s.start_frame) != Some(0) {
            return Err(Error::InvalidArgument("first segment must start at frame 0".into()));
        }
        if segments.windows(2).any(|w| w[0].start_frame >= w[1].start_frame) {
            return Err(Error::InvalidArgument("segments must be strictly sorted by start_frame".into()));
        }
        let classes = domains[0].prior.len();
        let dim = domains[0].means.first().map_or(0, Vec::len);
        if classes == 0 || dim == 0 {
            return Err(Error::InvalidArgument("domains need at least one class and one feature".into()));
        }
        for (i, d) in domains.iter().enumerate() {
            if d.prior.len() != classes || d.means.len() != classes {
                return Err(Error::InvalidArgument(format!("domain {i}: class count mismatch")));
            }
            if d.means.iter().any(|m| m.len() != dim) {
                return Err(Error::InvalidArgument(format!("domain {i}: feature dimension mismatch")));
            }
            if let Some(msg) = prior_problem(&d.prior) {
                return Err(Error::InvalidArgument(format!("domain {i}: {msg}")));
            }
            if !(d.noise > 0.0 && d.noise.is_finite()) {
                return Err(Error::InvalidArgument(format!("domain {i}: noise must be > 0")));
            }
            if !(0.0..1.0).contains(&d.persistence) {
                return Err(Error::InvalidArgument(format!("domain {i}: persistence must be in [0, 1)")));
            }
            if d.means.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("domain {i} means")));
            }
        }
        if let Some(s) = segments.iter().find(|s| s.domain_id >= domains.len()) {
            return Err(Error::InvalidArgument(format!("segment references unknown domain {}", s.domain_id)));
        }
        Ok(Self { segments, domains, ramp_frames })
    }

    /// Single domain for the whole stream.
    pub fn stationary(domain: DomainParams) -> Result<Self> {
        Self::new(vec![Segment { start_frame: 0, domain_id: 0 }], vec![domain], 0)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn domains(&self) -> &[DomainParams] {
        &self.domains
    }

    pub fn classes(&self) -> usize {
        self.domains[0].prior.len()
    }

    pub fn dim(&self) -> usize {
        self.domains[0].means[0].len()
    }

    /// Index of the segment covering `frame`.
    fn segment_index(&self, frame: u64) -> usize {
        self.segments.partition_point(|s| s.start_frame <= frame) - 1
    }

    /// Parameters in force at `frame`, blended over the ramp after a switch.
    pub fn params_at(&self, frame: u64) -> (usize, DomainParams) {
        let idx = self.segment_index(frame);
        let seg = self.segments[idx];
        let current = &self.domains[seg.domain_id];
        if idx == 0 || self.ramp_frames == 0 || frame >= seg.start_frame + self.ramp_frames {
            return (seg.domain_id, current.clone());
        }
        let previous = &self.domains[self.segments[idx - 1].domain_id];
        let w = (frame - seg.start_frame) as f64 / self.ramp_frames as f64;
        let mix = |a: f64, b: f64| (1.0 - w) * a + w * b;
        let blended = DomainParams {
            prior: previous.prior.iter().zip(&current.prior).map(|(&a, &b)| mix(a, b)).collect(),
            means: previous
                .means
                .iter()
                .zip(&current.means)
                .map(|(ma, mb)| ma.iter().zip(mb).map(|(&a, &b)| mix(a, b)).collect())
                .collect(),
            noise: mix(previous.noise, current.noise),
            persistence: mix(previous.persistence, current.persistence),
        };
        (seg.domain_id, blended)
    }
}

/// Returns a description of what is wrong with a class prior, if anything.
pub fn prior_problem(prior: &[f64]) -> Option<String> {
    if prior.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Some("prior entries must be finite and non-negative".into());
    }
    let sum: f64 = prior.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Some(format!("prior sums to {sum}, expected 1"));
    }
    None
}

/// Endless frame generator over a schedule.
#[derive(Debug, Clone)]
pub struct StreamState {
    schedule: DomainSchedule,
    rng: SimRng,
    fps: f64,
    next_id: u64,
    prev_class: Option<usize>,
}

impl StreamState {
    pub fn new(schedule: DomainSchedule, rng: SimRng, fps: f64) -> Self {
        Self { schedule, rng, fps, next_id: 0, prev_class: None }
    }

    pub fn schedule(&self) -> &DomainSchedule {
        &self.schedule
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn next_frame(&mut self) -> Frame {
        let frame_id = self.next_id;
        let (domain_id, params) = self.schedule.params_at(frame_id);
        let keep: f64 = self.rng.random();
        let true_class = match self.prev_class {
            Some(c) if keep < params.persistence => c,
            _ => sample_categorical(&params.prior, &mut self.rng),
        };
        let features = params.means[true_class]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                m + params.noise * z
            })
            .collect();
        self.prev_class = Some(true_class);
        self.next_id += 1;
        Frame { frame_id, timestamp: frame_id as f64 / self.fps, features, true_class, domain_id }
    }
}

impl Iterator for StreamState {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        Some(self.next_frame())
    }
}

pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding slack: fall back to the last class with non-zero weight
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::{rng_for, Role};

    fn domain(prior: Vec<f64>, offset: f64) -> DomainParams {
        let classes = prior.len();
        DomainParams {
            prior,
            means: (0..classes).map(|c| vec![c as f64 + offset; 3]).collect(),
            noise: 0.5,
            persistence: 0.0,
        }
    }

    fn two_domain(switch: u64, a: DomainParams, b: DomainParams) -> DomainSchedule {
        DomainSchedule::new(
            vec![Segment { start_frame: 0, domain_id: 0 }, Segment { start_frame: switch, domain_id: 1 }],
            vec![a, b],
            0,
        )
        .unwrap()
    }

    #[test]
    fn frame_ids_increase_and_timestamps_follow_fps() {
        let sched = DomainSchedule::stationary(domain(vec![0.5, 0.5], 0.0)).unwrap();
        let mut s = StreamState::new(sched, rng_for(1, Role::Stream), 30.0);
        for expected in 0..100u64 {
            let f = s.next_frame();
            assert_eq!(f.frame_id, expected);
            assert_eq!(f.timestamp, expected as f64 / 30.0);
            assert!(f.features.iter().all(|v| v.is_finite()));
            assert!(f.true_class < 2);
        }
    }

    #[test]
    fn domain_boundary_is_a_hard_cut() {
        let sched = two_domain(1000, domain(vec![0.5, 0.5], 0.0), domain(vec![0.5, 0.5], 5.0));
        let frames: Vec<Frame> = StreamState::new(sched, rng_for(7, Role::Stream), 30.0).take(1001).collect();
        assert_eq!(frames[999].domain_id, 0);
        assert_eq!(frames[1000].domain_id, 1);
    }

    #[test]
    fn identical_domains_give_identical_distribution_across_boundary() {
        let d = domain(vec![0.3, 0.7], 0.0);
        let sched = two_domain(5000, d.clone(), d);
        let frames: Vec<Frame> = StreamState::new(sched, rng_for(7, Role::Stream), 30.0).take(10_000).collect();
        let stats = |fs: &[Frame]| {
            let n = fs.len() as f64;
            let ones = fs.iter().filter(|f| f.true_class == 1).count() as f64 / n;
            let mean0 = fs.iter().map(|f| f.features[0]).sum::<f64>() / n;
            (ones, mean0)
        };
        let (p_a, m_a) = stats(&frames[..5000]);
        let (p_b, m_b) = stats(&frames[5000..]);
        // 4 sigma bands for n = 5000
        assert!((p_a - p_b).abs() < 4.0 * (2.0 * 0.21 / 5000.0f64).sqrt());
        let var = 0.21 + 0.25;
        assert!((m_a - m_b).abs() < 4.0 * (2.0 * var / 5000.0f64).sqrt());
    }

    #[test]
    fn class_frequencies_track_domain_priors() {
        let sched = two_domain(10_000, domain(vec![0.9, 0.1], 0.0), domain(vec![0.1, 0.9], 0.0));
        let frames: Vec<Frame> = StreamState::new(sched, rng_for(3, Role::Stream), 30.0).take(20_000).collect();
        let freq0 = |fs: &[Frame]| fs.iter().filter(|f| f.true_class == 0).count() as f64 / fs.len() as f64;
        assert!((freq0(&frames[..10_000]) - 0.9).abs() <= 0.02);
        assert!((freq0(&frames[10_000..]) - 0.1).abs() <= 0.02);
    }

    #[test]
    fn same_seed_replays_bit_identically() {
        let sched = two_domain(50, domain(vec![0.5, 0.5], 0.0), domain(vec![0.2, 0.8], 1.0));
        let a: Vec<Frame> = StreamState::new(sched.clone(), rng_for(11, Role::Stream), 30.0).take(200).collect();
        let b: Vec<Frame> = StreamState::new(sched, rng_for(11, Role::Stream), 30.0).take(200).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn ramp_blends_means_linearly() {
        let a = domain(vec![0.5, 0.5], 0.0);
        let b = domain(vec![0.5, 0.5], 4.0);
        let sched = DomainSchedule::new(
            vec![Segment { start_frame: 0, domain_id: 0 }, Segment { start_frame: 100, domain_id: 1 }],
            vec![a, b],
            10,
        )
        .unwrap();
        let (id, p) = sched.params_at(105);
        assert_eq!(id, 1);
        assert!((p.means[0][0] - 2.0).abs() < 1e-12);
        assert_eq!(sched.params_at(110).1.means[0][0], 4.0);
        assert_eq!(sched.params_at(99).1.means[0][0], 0.0);
    }

    #[test]
    fn persistence_keeps_marginal_prior() {
        let mut d = domain(vec![0.25, 0.75], 0.0);
        d.persistence = 0.9;
        let sched = DomainSchedule::stationary(d).unwrap();
        let frames: Vec<Frame> = StreamState::new(sched, rng_for(5, Role::Stream), 30.0).take(200_000).collect();
        let f0 = frames.iter().filter(|f| f.true_class == 0).count() as f64 / frames.len() as f64;
        assert!((f0 - 0.25).abs() < 0.01, "{f0}");
        let repeats = frames.windows(2).filter(|w| w[0].true_class == w[1].true_class).count() as f64
            / (frames.len() - 1) as f64;
        // P(same) = rho + (1 - rho) * sum p^2
        let expected = 0.9 + 0.1 * (0.25f64.powi(2) + 0.75f64.powi(2));
        assert!((repeats - expected).abs() < 0.01);
    }

    #[test]
    fn rejects_bad_schedules() {
        let d = domain(vec![0.5, 0.5], 0.0);
        assert!(DomainSchedule::new(vec![Segment { start_frame: 3, domain_id: 0 }], vec![d.clone()], 0).is_err());
        let mut bad = d.clone();
        bad.prior = vec![0.6, 0.6];
        assert!(DomainSchedule::stationary(bad).is_err());
        assert!(DomainSchedule::new(vec![Segment { start_frame: 0, domain_id: 2 }], vec![d], 0).is_err());
    }
}
