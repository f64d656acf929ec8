//! The scenario simulator.
//!
//! Time advances one frame at a time. Within a frame the order is fixed:
//! cloud inbox, edge inbox, session publish, session start, inference,
//! sampling, uploads, window bookkeeping. A training session runs to
//! completion when it starts, but its model is only published once the
//! simulated session time has elapsed; inference uses the published model.

use std::collections::{BTreeMap, VecDeque};

use log::debug;

use super::metrics::{alpha_from_confidences, collect_lambda, ActivityTrace, MetricsSeries, WindowRow};
use super::scenario::{ScenarioConfig, StrategyKind};
use crate::cloud::{CloudNode, EdgeStats, TeacherOracle};
use crate::error::{Error, Result};
use crate::learner::record::FlatRecord;
use crate::learner::TwoStageModel;
use crate::replay::LabeledSample;
use crate::seeds::{rng_for, Role};
use crate::stream::{DomainParams, DomainSchedule, Frame, StreamState};
use crate::trainer::{pretrain, CostModel, EdgeTrainer, SessionReport, IDLE_FPS, TRAINING_FPS};
use crate::transport::message::{encode_frames, encode_infer_response, encode_labels, encode_stats};
use crate::transport::{sim_pair, Message, MessageKind, Payload, Sequencer, SimEndpoint, Transport};

pub const DEVICE_ID: u32 = 1;

/// One row per finished training session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRow {
    pub started_at: f64,
    pub published_at: f64,
    pub report: SessionReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub scenario: String,
    pub strategy: StrategyKind,
    pub fixed_rate: Option<f64>,
    pub mean_accuracy: f64,
    pub mean_conf_correct: f64,
    pub up_bytes: u64,
    pub down_bytes: u64,
    pub up_kbps: f64,
    pub down_kbps: f64,
    pub sessions: usize,
    pub mean_rate: f64,
    pub mean_fps: f64,
    /// Per-session means of the simulated training time.
    pub forward_s: f64,
    pub backward_s: f64,
    pub overall_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub series: MetricsSeries,
    pub sessions: Vec<SessionRow>,
    pub summary: RunSummary,
}

/// Student after offline training on i.i.d. samples from domain 0.
pub fn pretrained_model(cfg: &ScenarioConfig) -> Result<TwoStageModel> {
    let mut model = TwoStageModel::random(&cfg.model, &mut rng_for(cfg.seed, Role::ModelInit))?;
    let samples = iid_samples(&cfg.schedule.domains()[0], cfg.pretrain.samples, rng_for(cfg.seed, Role::Pretrain))?;
    if !samples.is_empty() && cfg.pretrain.epochs > 0 {
        let mut order_rng = rng_for(cfg.seed, Role::PretrainOrder);
        pretrain(&mut model, &samples, cfg.pretrain.epochs, cfg.trainer.minibatch_size, &mut order_rng)?;
    }
    Ok(model)
}

/// `n` independent labeled draws from one domain.
pub fn iid_samples(domain: &DomainParams, n: usize, rng: crate::seeds::SimRng) -> Result<Vec<LabeledSample>> {
    let schedule = DomainSchedule::stationary(DomainParams { persistence: 0.0, ..domain.clone() })?;
    Ok(StreamState::new(schedule, rng, 1.0)
        .take(n)
        .map(|f| LabeledSample { features: f.features, label: f.true_class })
        .collect())
}

#[derive(Debug, Clone, Copy, Default)]
struct WindowAcc {
    n: u64,
    correct: u64,
    conf: f64,
    conf_correct: f64,
}

impl WindowAcc {
    fn add(&mut self, correct: bool, confidence: f64) {
        self.n += 1;
        self.conf += confidence;
        if correct {
            self.correct += 1;
            self.conf_correct += confidence;
        }
    }
}

/// Window facts captured when the window closes; accuracy is filled in at
/// the end because cloud answers may arrive after the window.
struct WindowTail {
    phi_bar: f64,
    rate: f64,
    up_bytes: u64,
    down_bytes: u64,
    seconds: f64,
    avg_fps: f64,
    sessions_run: u64,
}

struct ActiveSession {
    started_at: f64,
    publish_at: f64,
    report: SessionReport,
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    kind: StrategyKind,
    adaptive: bool,
    edge: SimEndpoint,
    cloud_ep: SimEndpoint,
    cloud: CloudNode,
    seq: Sequencer,
    transport_rng: crate::seeds::SimRng,
    trainer: EdgeTrainer,
    live: TwoStageModel,
    active: Option<ActiveSession>,
    sessions: Vec<SessionRow>,
    trace: ActivityTrace,
    pool: VecDeque<LabeledSample>,
    /// Frames the edge has uploaded and still waits on.
    awaiting: BTreeMap<u64, Frame>,
    /// Frames in flight to the cloud, as the cloud will see them.
    in_flight: BTreeMap<u64, Frame>,
    /// Labels that reach the cloud-side trainer when the matching
    /// LabelBatchDown is delivered (cloud-trained strategy only).
    cloud_side_labels: BTreeMap<u64, Vec<LabeledSample>>,
    latest_stats: Option<EdgeStats>,
    rate: f64,
    sample_acc: f64,
    phi_bar: f64,
    buffer: Vec<Frame>,
    conf_since_upload: Vec<f64>,
    windows: Vec<WindowAcc>,
    tails: Vec<WindowTail>,
    last_up: u64,
    last_down: u64,
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let kind = cfg.strategy.kind;
    let pinned = cfg.strategy.pinned_rate(&cfg.controller.params);
    let model = pretrained_model(cfg)?;
    let trainer = EdgeTrainer::new(model.clone(), cfg.trainer.clone(), CostModel::reference(), rng_for(cfg.seed, Role::Trainer))?;
    let teacher = TeacherOracle::new(cfg.teacher.noise_rate, cfg.teacher.softness, cfg.model.classes, rng_for(cfg.seed, Role::Teacher))?;
    let mut cloud = CloudNode::new(teacher, cfg.controller.params)?;
    let rate = pinned.unwrap_or(cfg.controller.initial_rate);
    cloud.register(DEVICE_ID, rate, pinned.is_none())?;
    let (edge, cloud_ep) = sim_pair(cfg.transport.link_latency_s);
    let n_windows = cfg.duration_frames.div_ceil(cfg.window_frames) as usize;

    let mut sim = Sim {
        cfg,
        kind,
        adaptive: pinned.is_none(),
        edge,
        cloud_ep,
        cloud,
        seq: Sequencer::default(),
        transport_rng: rng_for(cfg.seed, Role::Transport),
        trainer,
        live: model,
        active: None,
        sessions: Vec::new(),
        trace: ActivityTrace::default(),
        pool: VecDeque::new(),
        awaiting: BTreeMap::new(),
        in_flight: BTreeMap::new(),
        cloud_side_labels: BTreeMap::new(),
        latest_stats: None,
        rate: match kind {
            StrategyKind::EdgeOnly => 0.0,
            StrategyKind::CloudOnly => cfg.fps,
            _ => rate,
        },
        sample_acc: 0.0,
        phi_bar: 0.0,
        buffer: Vec::new(),
        conf_since_upload: Vec::new(),
        windows: vec![WindowAcc::default(); n_windows],
        tails: Vec::with_capacity(n_windows),
        last_up: 0,
        last_down: 0,
    };
    sim.run()?;
    sim.finish()
}

impl Sim<'_> {
    fn run(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let mut stream = StreamState::new(cfg.schedule.clone(), rng_for(cfg.seed, Role::Stream), cfg.fps);
        let upload_every = frames_per(cfg.transport.upload_interval_s, cfg.fps);
        let cloud_only_every = frames_per(cfg.transport.cloud_only_interval_s, cfg.fps);
        for _ in 0..cfg.duration_frames {
            let frame = stream.next_frame();
            let now = frame.timestamp;
            let tick = frame.frame_id + 1;

            self.cloud_inbox(now)?;
            self.edge_inbox(now)?;
            self.publish_if_due(now)?;
            self.start_session_if_ready(now)?;

            match self.kind {
                StrategyKind::CloudOnly => {
                    self.awaiting.insert(frame.frame_id, frame.clone());
                    self.buffer.push(frame);
                    if tick.is_multiple_of(cloud_only_every) || tick == cfg.duration_frames {
                        self.upload_for_inference(now)?;
                    }
                }
                kind => {
                    let pred = self.live.predict(&frame.features)?;
                    let w = self.window_of(frame.frame_id);
                    self.windows[w].add(pred.predicted_class == frame.true_class, pred.confidence);
                    self.conf_since_upload.push(pred.confidence);
                    if kind != StrategyKind::EdgeOnly {
                        self.sample_acc += self.rate / cfg.fps;
                        if self.sample_acc >= 1.0 {
                            self.sample_acc -= 1.0;
                            self.buffer.push(frame);
                        }
                        if tick.is_multiple_of(upload_every) {
                            self.upload_for_labels(now)?;
                        }
                    }
                }
            }

            if tick.is_multiple_of(cfg.window_frames) || tick == cfg.duration_frames {
                self.close_window(tick)?;
            }
        }
        // Let outstanding cloud answers land so every frame has a
        // prediction. Traffic from here on is outside the run.
        self.cloud_inbox(f64::INFINITY)?;
        self.edge_inbox(f64::INFINITY)?;
        Ok(())
    }

    fn window_of(&self, frame_id: u64) -> usize {
        (frame_id / self.cfg.window_frames) as usize
    }

    fn next_seq(&mut self, kind: MessageKind) -> u64 {
        self.seq.next(DEVICE_ID, kind.direction())
    }

    fn cloud_inbox(&mut self, now: f64) -> Result<()> {
        for msg in self.cloud_ep.recv(now)? {
            match msg.payload()? {
                Payload::Stats { alpha, lambda, .. } => self.latest_stats = Some(EdgeStats { alpha, lambda }),
                Payload::Frames { frame_ids } => {
                    let frames = frame_ids
                        .iter()
                        .map(|id| self.in_flight.remove(id).ok_or_else(|| Error::Decode(format!("cloud never saw frame {id}"))))
                        .collect::<Result<Vec<_>>>()?;
                    let send_at = now.min(self.cfg.duration_frames as f64 / self.cfg.fps);
                    if msg.header.kind == MessageKind::InferRequestUp {
                        let outputs = self.cloud.teacher_mut().teacher_outputs(&frames)?;
                        let pairs: Vec<(u64, u32)> = frame_ids.iter().zip(&outputs).map(|(&id, o)| (id, o.label as u32)).collect();
                        let seq = self.next_seq(MessageKind::InferResponseDown);
                        let reply = Message::new(MessageKind::InferResponseDown, DEVICE_ID, seq, encode_infer_response(&pairs))?;
                        self.cloud_ep.send(send_at, reply)?;
                        continue;
                    }
                    let stats = self.latest_stats.take();
                    let resp = self.cloud.handle_upload(DEVICE_ID, &frames, stats)?;
                    let pairs: Vec<(u64, u32)> =
                        resp.frame_ids.iter().zip(&resp.pseudo_labels).map(|(&id, &l)| (id, l as u32)).collect();
                    let seq = self.next_seq(MessageKind::LabelBatchDown);
                    let payload = if self.kind == StrategyKind::AmsLike {
                        let samples = frames
                            .iter()
                            .zip(&resp.pseudo_labels)
                            .map(|(f, &label)| LabeledSample { features: f.features.clone(), label })
                            .collect();
                        self.cloud_side_labels.insert(seq, samples);
                        encode_labels(resp.new_rate, resp.phi_bar, &[])
                    } else {
                        encode_labels(resp.new_rate, resp.phi_bar, &pairs)
                    };
                    self.cloud_ep.send(send_at, Message::new(MessageKind::LabelBatchDown, DEVICE_ID, seq, payload)?)?;
                }
                other => return Err(Error::InvalidArgument(format!("cloud received downlink payload {other:?}"))),
            }
        }
        Ok(())
    }

    fn edge_inbox(&mut self, now: f64) -> Result<()> {
        for msg in self.edge.recv(now)? {
            match msg.payload()? {
                Payload::Labels { new_rate, phi_bar, labels } => {
                    self.rate = new_rate;
                    if let Some(phi) = phi_bar {
                        self.phi_bar = phi;
                    }
                    if self.kind == StrategyKind::AmsLike {
                        let samples = self.cloud_side_labels.remove(&msg.header.seq).unwrap_or_default();
                        self.pool.extend(samples);
                    } else {
                        for (id, label) in labels {
                            let frame = self
                                .awaiting
                                .remove(&id)
                                .ok_or_else(|| Error::Decode(format!("label for unknown frame {id}")))?;
                            self.pool.push_back(LabeledSample { features: frame.features, label: label as usize });
                        }
                    }
                }
                Payload::InferResponse { labels } => {
                    let confidence = 1.0 - self.cfg.teacher.softness;
                    for (id, label) in labels {
                        let frame = self
                            .awaiting
                            .remove(&id)
                            .ok_or_else(|| Error::Decode(format!("answer for unknown frame {id}")))?;
                        let w = self.window_of(id);
                        self.windows[w].add(label as usize == frame.true_class, confidence);
                    }
                }
                Payload::Model(record) => {
                    // The published model already matches; the download only
                    // has to decode into the same shapes.
                    let mut check = self.live.clone();
                    check.load_record(&record)?;
                }
                other => return Err(Error::InvalidArgument(format!("edge received uplink payload {other:?}"))),
            }
        }
        Ok(())
    }

    fn publish_if_due(&mut self, now: f64) -> Result<()> {
        let due = self.active.as_ref().is_some_and(|a| a.publish_at <= now);
        if !due {
            return Ok(());
        }
        let done = self.active.take().expect("checked above");
        self.live = self.trainer.model.clone();
        if self.kind == StrategyKind::AmsLike {
            let record: FlatRecord = self.live.to_record();
            let seq = self.next_seq(MessageKind::ModelDown);
            self.cloud_ep.send(now, Message::new(MessageKind::ModelDown, DEVICE_ID, seq, record.encode())?)?;
        }
        debug!("session {} published at {now:.1}s", done.report.run_index);
        self.sessions.push(SessionRow { started_at: done.started_at, published_at: now, report: done.report });
        Ok(())
    }

    fn start_session_if_ready(&mut self, now: f64) -> Result<()> {
        let n = self.cfg.trainer.batch_size;
        if self.active.is_some() || self.pool.len() < n {
            return Ok(());
        }
        let batch: Vec<LabeledSample> = self.pool.drain(..n).collect();
        let report = self.trainer.run_training_session(&batch)?;
        let publish_at = now + report.wall_clock_model;
        self.trace.push(now, publish_at);
        self.active = Some(ActiveSession { started_at: now, publish_at, report });
        Ok(())
    }

    fn upload_for_labels(&mut self, now: f64) -> Result<()> {
        if self.buffer.is_empty() {
            self.conf_since_upload.clear();
            return Ok(());
        }
        let frames = std::mem::take(&mut self.buffer);
        let alpha = alpha_from_confidences(self.conf_since_upload.drain(..), self.cfg.controller.theta);
        let end_s = now.floor() as u64 + 1;
        let span = (self.cfg.controller.lambda_window_s as u64).min(end_s);
        let lambda = collect_lambda(&self.trace, end_s - span, span);
        let seq = self.next_seq(MessageKind::StatsUp);
        self.edge.send(now, Message::new(MessageKind::StatsUp, DEVICE_ID, seq, encode_stats(alpha, lambda, frames.len() as u32))?)?;
        self.send_frames(now, MessageKind::FrameBatchUp, frames)
    }

    fn upload_for_inference(&mut self, now: f64) -> Result<()> {
        if self.buffer.is_empty() {
            return Ok(());
        }
        let frames = std::mem::take(&mut self.buffer);
        self.send_frames(now, MessageKind::InferRequestUp, frames)
    }

    fn send_frames(&mut self, now: f64, kind: MessageKind, frames: Vec<Frame>) -> Result<()> {
        let compression = &self.cfg.transport.compression;
        let ids: Vec<u64> = frames.iter().map(|f| f.frame_id).collect();
        let payload = encode_frames(&ids, compression.compressed_size(frames.len()));
        let delay = compression.sample_latency(&mut self.transport_rng);
        let seq = self.next_seq(kind);
        let msg = Message::new(kind, DEVICE_ID, seq, payload)?;
        for f in frames {
            if kind == MessageKind::FrameBatchUp {
                self.awaiting.insert(f.frame_id, f.clone());
            }
            self.in_flight.insert(f.frame_id, f);
        }
        self.edge.send_delayed(now, delay, msg)?;
        Ok(())
    }

    fn close_window(&mut self, tick: u64) -> Result<()> {
        let cfg = self.cfg;
        let w = self.tails.len() as u64;
        let start_frame = w * cfg.window_frames;
        let seconds = (tick - start_frame) as f64 / cfg.fps;
        let (from, to) = (start_frame as f64 / cfg.fps, tick as f64 / cfg.fps);
        let up = self.edge.sent().up_bytes;
        let down = self.cloud_ep.sent().down_bytes;
        let trains_on_edge = matches!(self.kind, StrategyKind::Adaptive | StrategyKind::Prompt);
        let duty = if trains_on_edge { (self.trace.busy_seconds(from, to) / seconds).min(1.0) } else { 0.0 };
        self.tails.push(WindowTail {
            phi_bar: self.phi_bar,
            rate: self.rate,
            up_bytes: up - self.last_up,
            down_bytes: down - self.last_down,
            seconds,
            avg_fps: (1.0 - duty) * IDLE_FPS + duty * TRAINING_FPS,
            sessions_run: self.sessions.len() as u64,
        });
        self.last_up = up;
        self.last_down = down;
        Ok(())
    }

    fn finish(self) -> Result<RunOutput> {
        let cfg = self.cfg;
        let rows: Vec<WindowRow> = self
            .tails
            .iter()
            .zip(&self.windows)
            .enumerate()
            .map(|(i, (t, acc))| {
                let n = acc.n.max(1) as f64;
                WindowRow {
                    window_id: i as u64,
                    accuracy: acc.correct as f64 / n,
                    mean_confidence: acc.conf / n,
                    conf_correct: acc.conf_correct / n,
                    phi_bar: t.phi_bar,
                    rate: t.rate,
                    up_kbps: 8.0 * t.up_bytes as f64 / 1000.0 / t.seconds,
                    down_kbps: 8.0 * t.down_bytes as f64 / 1000.0 / t.seconds,
                    avg_fps: t.avg_fps,
                    sessions_run: t.sessions_run,
                }
            })
            .collect();
        let series = MetricsSeries { rows };
        series.check()?;

        let duration_s = cfg.duration_frames as f64 / cfg.fps;
        let up_bytes: u64 = self.tails.iter().map(|t| t.up_bytes).sum();
        let down_bytes: u64 = self.tails.iter().map(|t| t.down_bytes).sum();
        let per_session = |f: fn(&SessionReport) -> f64| {
            if self.sessions.is_empty() {
                0.0
            } else {
                self.sessions.iter().map(|s| f(&s.report)).sum::<f64>() / self.sessions.len() as f64
            }
        };
        let summary = RunSummary {
            scenario: cfg.name.clone(),
            strategy: self.kind,
            fixed_rate: if self.adaptive { None } else { cfg.strategy.pinned_rate(&cfg.controller.params) },
            mean_accuracy: series.mean_accuracy(),
            mean_conf_correct: series.mean_conf_correct(),
            up_bytes,
            down_bytes,
            up_kbps: 8.0 * up_bytes as f64 / 1000.0 / duration_s,
            down_kbps: 8.0 * down_bytes as f64 / 1000.0 / duration_s,
            sessions: self.sessions.len(),
            mean_rate: series.mean_rate(),
            mean_fps: series.mean_avg_fps(),
            forward_s: per_session(|r| r.forward_seconds),
            backward_s: per_session(|r| r.backward_seconds),
            overall_s: per_session(|r| r.wall_clock_model),
        };
        if ![summary.mean_accuracy, summary.up_kbps, summary.down_kbps, summary.overall_s].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("run summary".into()));
        }
        Ok(RunOutput { series, sessions: self.sessions, summary })
    }
}

fn frames_per(seconds: f64, fps: f64) -> u64 {
    ((seconds * fps).round() as u64).max(1)
}
