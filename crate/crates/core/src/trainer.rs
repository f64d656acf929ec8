//! Adaptive training sessions on the edge device.
//!
//! A session runs `epochs` passes over one labeled batch. Each epoch
//! shuffles the batch and walks it in chunks of `floor(K·N/(N+M))` fresh
//! samples, topping every mini-batch up to `K` with replayed activations.
//! After the session the replay memory is updated once. A failing session
//! leaves model, memory and random state exactly as they were.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::learner::{ModelConfig, TwoStageModel};
use crate::replay::{original_count, sample_indices, LabeledSample, ReplayEntry, ReplayMemory};
use crate::seeds::SimRng;

pub const IDLE_FPS: f64 = 30.0;
pub const TRAINING_FPS: f64 = 15.0;

/// Forward and backward seconds of one steady-state session of the
/// reference configuration.
pub const REFERENCE_FORWARD_SECONDS: f64 = 17.8;
pub const REFERENCE_BACKWARD_SECONDS: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSessionConfig {
    pub epochs: usize,
    pub minibatch_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub freeze_front_after_first_batch: bool,
    pub use_replay: bool,
    pub replay_capacity: usize,
    /// Keep raw features next to stored activations so the aging metric can
    /// be computed.
    pub keep_raw_features: bool,
}

impl Default for TrainingSessionConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            minibatch_size: 64,
            batch_size: 300,
            learning_rate: 0.05,
            freeze_front_after_first_batch: true,
            use_replay: true,
            replay_capacity: 1500,
            keep_raw_features: false,
        }
    }
}

impl TrainingSessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.minibatch_size < 1 || self.batch_size < 1 {
            return Err(Error::InvalidArgument("minibatch_size and batch_size must be >= 1".into()));
        }
        if self.use_replay && self.replay_capacity < 1 {
            return Err(Error::InvalidArgument("replay_capacity must be >= 1 when replay is on".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning_rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Simulated training time: work is counted in multiply-adds per sample per
/// layer crossed, then scaled by two constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub forward_seconds_per_unit: f64,
    pub backward_seconds_per_unit: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WorkUnits {
    pub forward: f64,
    pub backward: f64,
}

impl WorkUnits {
    fn minibatch(model: &TwoStageModel, fresh: usize, total: usize, front_trainable: bool) -> Self {
        let front = model.front.units() as f64;
        let head = (model.head.hidden_units() + model.head.classifier_units()) as f64;
        let forward = fresh as f64 * front + total as f64 * head;
        let mut backward = total as f64 * head;
        if front_trainable {
            backward += fresh as f64 * front;
        }
        Self { forward, backward }
    }

    fn add(&mut self, other: Self) {
        self.forward += other.forward;
        self.backward += other.backward;
    }
}

impl CostModel {
    /// Constants such that a steady-state session (full memory, frozen front)
    /// of the default model and session configuration takes the reference
    /// forward/backward times.
    pub fn reference() -> Self {
        let model_cfg = ModelConfig::default();
        let session = TrainingSessionConfig::default();
        let mut rng = crate::seeds::rng_for(0, crate::seeds::Role::ModelInit);
        let mut model = TwoStageModel::random(&model_cfg, &mut rng).expect("default model config is valid");
        model.front.lr_multiplier = 0.0;
        let units = steady_state_units(&model, &session);
        Self {
            forward_seconds_per_unit: REFERENCE_FORWARD_SECONDS / units.forward,
            backward_seconds_per_unit: REFERENCE_BACKWARD_SECONDS / units.backward,
        }
    }

    pub fn seconds(&self, units: WorkUnits) -> (f64, f64) {
        (units.forward * self.forward_seconds_per_unit, units.backward * self.backward_seconds_per_unit)
    }

    /// Predicted session time for a model whose memory is already full.
    pub fn steady_state_seconds(&self, model: &TwoStageModel, session: &TrainingSessionConfig) -> (f64, f64) {
        self.seconds(steady_state_units(model, session))
    }
}

fn steady_state_units(model: &TwoStageModel, session: &TrainingSessionConfig) -> WorkUnits {
    let n = session.batch_size;
    let m = if session.use_replay { session.replay_capacity } else { 0 };
    let k = session.minibatch_size;
    let chunk = fresh_chunk(k, n, m);
    let per_epoch = n.div_ceil(chunk);
    let mut total = WorkUnits::default();
    for _ in 0..session.epochs {
        for j in 0..per_epoch {
            let fresh = chunk.min(n - j * chunk);
            let size = if m > 0 { k.max(fresh) } else { fresh };
            total.add(WorkUnits::minibatch(model, fresh, size, !model.front.is_frozen()));
        }
    }
    total
}

/// Fresh samples per mini-batch, at least one and at most the batch.
fn fresh_chunk(k: usize, n: usize, m: usize) -> usize {
    original_count(k, n, m).clamp(1, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub run_index: usize,
    /// Mean mini-batch loss over the last epoch.
    pub final_mean_loss: f64,
    pub minibatches_run: usize,
    pub forward_seconds: f64,
    pub backward_seconds: f64,
    /// Simulated wall-clock of the whole session.
    pub wall_clock_model: f64,
    pub aging_metric: f64,
    pub memory_len: usize,
}

/// Model, memory and run counter owned by one device's training loop.
#[derive(Debug, Clone)]
pub struct EdgeTrainer {
    pub model: TwoStageModel,
    pub memory: Option<ReplayMemory>,
    pub config: TrainingSessionConfig,
    pub cost: CostModel,
    runs_completed: usize,
    first_batch_done: bool,
    rng: SimRng,
}

impl EdgeTrainer {
    pub fn new(model: TwoStageModel, config: TrainingSessionConfig, cost: CostModel, rng: SimRng) -> Result<Self> {
        config.validate()?;
        let memory = if config.use_replay { Some(ReplayMemory::new(config.replay_capacity)?) } else { None };
        Ok(Self { model, memory, config, cost, runs_completed: 0, first_batch_done: false, rng })
    }

    pub fn runs_completed(&self) -> usize {
        self.runs_completed
    }

    pub fn memory_len(&self) -> usize {
        self.memory.as_ref().map_or(0, ReplayMemory::len)
    }

    /// Runs one session; on any error the trainer is restored to its
    /// pre-session state and the error is returned.
    pub fn run_training_session(&mut self, labeled: &[LabeledSample]) -> Result<SessionReport> {
        let snapshot = self.clone();
        let result = self.session_inner(labeled);
        if result.is_err() {
            *self = snapshot;
        }
        result
    }

    fn session_inner(&mut self, labeled: &[LabeledSample]) -> Result<SessionReport> {
        if labeled.is_empty() {
            return Err(Error::InvalidArgument("labeled batch is empty".into()));
        }
        self.config.validate()?;
        self.model.head.learning_rate = self.config.learning_rate;

        let n = labeled.len();
        let m = self.memory_len();
        let k = self.config.minibatch_size;
        let chunk = fresh_chunk(k, n, m);
        let mut order: Vec<usize> = (0..n).collect();
        let mut units = WorkUnits::default();
        let mut minibatches = 0;
        let mut last_epoch_losses = Vec::new();

        for _ in 0..self.config.epochs {
            order.shuffle(&mut self.rng);
            last_epoch_losses.clear();
            for fresh_idx in order.chunks(chunk) {
                let replay_count = if m > 0 { k.saturating_sub(fresh_idx.len()) } else { 0 };
                let replay_idx = sample_indices(m, replay_count, &mut self.rng);
                let fresh: Vec<(&[f64], usize)> =
                    fresh_idx.iter().map(|&i| (labeled[i].features.as_slice(), labeled[i].label)).collect();
                let entries = self.memory.as_ref().map_or(&[][..], |mem| mem.entries());
                let replay: Vec<_> = replay_idx.iter().map(|&j| (&entries[j].activation, entries[j].label)).collect();

                let front_trainable = !self.model.front.is_frozen() && !self.model.front.layers.is_empty();
                let loss = self.model.train_minibatch(&fresh, &replay)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("loss at mini-batch {minibatches}")));
                }
                units.add(WorkUnits::minibatch(&self.model, fresh.len(), fresh.len() + replay.len(), front_trainable));
                last_epoch_losses.push(loss);
                minibatches += 1;

                if self.config.freeze_front_after_first_batch && !self.first_batch_done {
                    self.model.front.lr_multiplier = 0.0;
                }
                self.first_batch_done = true;
            }
        }

        let run_index = self.runs_completed + 1;
        if let Some(memory) = self.memory.as_mut() {
            let keep_raw = self.config.keep_raw_features;
            let entries = labeled
                .iter()
                .map(|s| {
                    Ok(ReplayEntry {
                        activation: self.model.tap_activation(&s.features)?,
                        label: s.label,
                        inserted_at_run: run_index,
                        raw_features: keep_raw.then(|| s.features.clone()),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            memory.update_memory(entries, run_index, &mut self.rng)?;
        }
        self.runs_completed = run_index;

        let (forward_seconds, backward_seconds) = self.cost.seconds(units);
        Ok(SessionReport {
            run_index,
            final_mean_loss: last_epoch_losses.iter().sum::<f64>() / last_epoch_losses.len() as f64,
            minibatches_run: minibatches,
            forward_seconds,
            backward_seconds,
            wall_clock_model: forward_seconds + backward_seconds,
            aging_metric: self.memory.as_ref().map_or(0.0, |mem| aging_metric(mem, &self.model)),
            memory_len: self.memory_len(),
        })
    }
}

/// Mean Euclidean distance between stored activations and what the current
/// front produces for the same raw features. Entries without raw features
/// are skipped; returns 0 when none have them.
pub fn aging_metric(mem: &ReplayMemory, model: &TwoStageModel) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for e in mem.entries() {
        if let Some(raw) = &e.raw_features {
            if let Ok(now) = model.tap_activation(raw) {
                total += e.activation.distance(&now);
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Offline head training before deployment. The front is held fixed and
/// the replay memory is not involved.
pub fn pretrain(
    model: &mut TwoStageModel,
    samples: &[LabeledSample],
    epochs: usize,
    minibatch_size: usize,
    rng: &mut SimRng,
) -> Result<f64> {
    if samples.is_empty() || minibatch_size == 0 {
        return Err(Error::InvalidArgument("pretraining needs samples and a mini-batch size".into()));
    }
    let saved_multiplier = model.front.lr_multiplier;
    model.front.lr_multiplier = 0.0;
    let acts = samples
        .iter()
        .map(|s| model.tap_activation(&s.features))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut last = 0.0;
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(minibatch_size) {
            let replay: Vec<_> = chunk.iter().map(|&i| (&acts[i], samples[i].label)).collect();
            losses.push(model.train_minibatch(&[], &replay)?);
        }
        last = losses.iter().sum::<f64>() / losses.len() as f64;
    }
    model.front.lr_multiplier = saved_multiplier;
    Ok(last)
}

pub fn inference_throughput_model(training_active: bool) -> f64 {
    if training_active {
        TRAINING_FPS
    } else {
        IDLE_FPS
    }
}

/// Average inference fps when training occupies `duty_cycle` of the time.
pub fn average_fps(duty_cycle: f64) -> f64 {
    let d = duty_cycle.clamp(0.0, 1.0);
    (1.0 - d) * inference_throughput_model(false) + d * inference_throughput_model(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::{rng_for, Role};

    fn trainer(cfg: TrainingSessionConfig) -> EdgeTrainer {
        let model = TwoStageModel::random(&ModelConfig::default(), &mut rng_for(1, Role::ModelInit)).unwrap();
        EdgeTrainer::new(model, cfg, CostModel::reference(), rng_for(1, Role::Trainer)).unwrap()
    }

    fn batch(n: usize, seed: u64) -> Vec<LabeledSample> {
        use rand::Rng;
        let mut rng = rng_for(seed, Role::Stream);
        (0..n)
            .map(|_| {
                let label = rng.random_range(0..4);
                let features = (0..16).map(|j| if j % 4 == label { 2.0 } else { 0.0 } + rng.random::<f64>() - 0.5).collect();
                LabeledSample { features, label }
            })
            .collect()
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainingSessionConfig { epochs: 0, ..Default::default() };
        let model = TwoStageModel::random(&ModelConfig::default(), &mut rng_for(1, Role::ModelInit)).unwrap();
        assert!(EdgeTrainer::new(model, cfg, CostModel::reference(), rng_for(1, Role::Trainer)).is_err());
    }

    #[test]
    fn minimal_session_runs_one_step() {
        let mut t = trainer(TrainingSessionConfig { epochs: 1, minibatch_size: 1, ..Default::default() });
        let report = t.run_training_session(&batch(1, 2)).unwrap();
        assert_eq!(report.minibatches_run, 1);
        assert_eq!(t.memory_len(), 1);
        assert_eq!(report.run_index, 1);
    }

    #[test]
    fn default_session_counts_minibatches() {
        let mut t = trainer(TrainingSessionConfig::default());
        // empty memory: ceil(300 / 64) mini-batches per epoch
        assert_eq!(t.run_training_session(&batch(300, 3)).unwrap().minibatches_run, 8 * 5);
        // 300 in memory: floor(64*300/600) = 32 fresh per mini-batch
        assert_eq!(t.run_training_session(&batch(300, 4)).unwrap().minibatches_run, 8 * 10);
    }

    #[test]
    fn freeze_after_first_batch() {
        let mut t = trainer(TrainingSessionConfig::default());
        assert_eq!(t.model.front.lr_multiplier, 1.0);
        t.run_training_session(&batch(64, 5)).unwrap();
        assert_eq!(t.model.front.lr_multiplier, 0.0);
        let front = t.model.front.clone();
        t.run_training_session(&batch(64, 6)).unwrap();
        assert_eq!(t.model.front, front);
    }

    #[test]
    fn frozen_front_has_zero_aging() {
        let mut t = trainer(TrainingSessionConfig { keep_raw_features: true, ..Default::default() });
        for s in 0..3 {
            let r = t.run_training_session(&batch(100, 10 + s)).unwrap();
            assert_eq!(r.aging_metric, 0.0);
        }
    }

    #[test]
    fn aging_grows_with_front_perturbation() {
        let mut t = trainer(TrainingSessionConfig { keep_raw_features: true, ..Default::default() });
        t.run_training_session(&batch(200, 20)).unwrap();
        let mem = t.memory.clone().unwrap();
        let mut last = 0.0;
        for delta in [0.001, 0.01, 0.05, 0.1, 0.5] {
            let mut m = t.model.clone();
            for layer in &mut m.front.layers {
                layer.weights.mapv_inplace(|w| w + delta);
            }
            let a = aging_metric(&mem, &m);
            assert!(a > last, "delta {delta}: {a} <= {last}");
            last = a;
        }
    }

    #[test]
    fn failed_session_rolls_back() {
        let mut t = trainer(TrainingSessionConfig::default());
        t.run_training_session(&batch(300, 30)).unwrap();
        let model = t.model.clone();
        let memory = t.memory.clone();
        let mut bad = batch(300, 31);
        bad[150].features[3] = f64::NAN;
        assert!(t.run_training_session(&bad).is_err());
        assert_eq!(t.model, model);
        assert_eq!(t.memory, memory);
        assert_eq!(t.runs_completed(), 1);
    }

    #[test]
    fn sessions_are_deterministic() {
        let run = || {
            let mut t = trainer(TrainingSessionConfig::default());
            (0..3).map(|s| t.run_training_session(&batch(300, 40 + s)).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn cost_model_matches_reference_times() {
        let cost = CostModel::reference();
        let mut model = TwoStageModel::random(&ModelConfig::default(), &mut rng_for(9, Role::ModelInit)).unwrap();
        model.front.lr_multiplier = 0.0;
        let (f, b) = cost.steady_state_seconds(&model, &TrainingSessionConfig::default());
        assert!((f - 17.8).abs() < 1e-9 && (b - 0.8).abs() < 1e-9);
    }

    #[test]
    fn throughput_model() {
        assert_eq!(inference_throughput_model(false), 30.0);
        assert_eq!(inference_throughput_model(true), 15.0);
        assert!((average_fps(0.18) - 27.3).abs() < 1e-12);
    }
}
