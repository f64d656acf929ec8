//! Scenario files.
//!
//! A scenario is a plain-text file. The first meaningful line must be the
//! version header `edge-scenario 1`. The rest is `[section]` headers
//! followed by `key = value` lines. `#` starts a comment. Lists are
//! comma-separated.
//!
//! ```text
//! edge-scenario 1
//!
//! [scenario]
//! name = drift_ab
//! seed = 7
//! duration_frames = 54000
//! window_frames = 300
//!
//! [stream]
//! dim = 16
//! classes = 4
//! fps = 30
//! ramp_frames = 0
//!
//! [schedule]
//! segments = 0:0, 10800:1       # start_frame:domain_id
//!
//! [domain.0]
//! prior = 0.25, 0.25, 0.25, 0.25
//! noise = 1.0
//! persistence = 0.995
//! mean_seed = 11                 # either generate the class means ...
//! mean_scale = 1.0
//! # mean.0 = 1.0, 0.0, ...       # ... or list one line per class
//!
//! [model]       layer_widths, replay_tap, learning_rate, front_lr_multiplier,
//!               brn_momentum, brn_r_max, brn_d_max, init_gain,
//!               pretrain_samples, pretrain_epochs
//! [trainer]     epochs, minibatch_size, batch_size, freeze_front_after_first_batch
//! [replay]      enabled, capacity
//! [controller]  r_min, r_max, phi_target, alpha_target, eta_r, eta_alpha,
//!               theta, initial_rate, lambda_window_s
//! [teacher]     noise_rate, softness
//! [transport]   bytes_per_raw_frame, compression_ratio, latency_min_s,
//!               latency_max_s, link_latency_s, upload_interval_s,
//!               cloud_only_interval_s
//! [strategy]    kind = edge-only | cloud-only | prompt | ams-like | adaptive
//!               fixed_rate (optional; pins the sampling rate)
//! ```
//!
//! Every section except `[scenario]`, `[schedule]` and `[domain.N]` is
//! optional and falls back to defaults. Validation collects every problem
//! with its dotted field path before failing.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::cloud::{ControllerParams, DEFAULT_THETA};
use crate::error::{ConfigIssue, Error, Result};
use crate::learner::ModelConfig;
use crate::seeds::SimRng;
use crate::stream::{prior_problem, DomainParams, DomainSchedule, Segment, DEFAULT_FPS};
use crate::trainer::TrainingSessionConfig;
use crate::transport::CompressionModel;

pub const HEADER: &str = "edge-scenario 1";

/// Scenarios bundled with the binary, by name.
pub const SHIPPED: [(&str, &str); 2] = [
    ("drift_ab", include_str!("../../scenarios/drift_ab.scn")),
    ("stationary", include_str!("../../scenarios/stationary.scn")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    EdgeOnly,
    CloudOnly,
    Prompt,
    AmsLike,
    Adaptive,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] =
        [StrategyKind::EdgeOnly, StrategyKind::CloudOnly, StrategyKind::Prompt, StrategyKind::AmsLike, StrategyKind::Adaptive];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::EdgeOnly => "edge-only",
            StrategyKind::CloudOnly => "cloud-only",
            StrategyKind::Prompt => "prompt",
            StrategyKind::AmsLike => "ams-like",
            StrategyKind::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == norm || k.name().replace('-', "") == norm)
            .ok_or_else(|| format!("unknown strategy `{s}` (expected edge-only, cloud-only, prompt, ams-like or adaptive)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strategy {
    pub kind: StrategyKind,
    /// Pins the sampling rate instead of running the controller. Only
    /// meaningful for strategies that sample frames.
    pub fixed_rate: Option<f64>,
}

impl Strategy {
    pub fn new(kind: StrategyKind) -> Self {
        Self { kind, fixed_rate: None }
    }

    /// Whether the edge (or its cloud mirror) trains on labeled samples.
    pub fn trains(self) -> bool {
        matches!(self.kind, StrategyKind::Prompt | StrategyKind::AmsLike | StrategyKind::Adaptive)
    }

    /// Rate used for the whole run, if pinned. Prompt always samples at the
    /// controller's upper bound.
    pub fn pinned_rate(self, controller: &ControllerParams) -> Option<f64> {
        match self.kind {
            StrategyKind::Prompt => Some(controller.r_max),
            _ => self.fixed_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub samples: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub params: ControllerParams,
    pub theta: f64,
    pub initial_rate: f64,
    /// Trailing window over which λ̄ is measured.
    pub lambda_window_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherConfig {
    pub noise_rate: f64,
    pub softness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportConfig {
    pub compression: CompressionModel,
    pub link_latency_s: f64,
    pub upload_interval_s: f64,
    pub cloud_only_interval_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub duration_frames: u64,
    pub window_frames: u64,
    pub fps: f64,
    pub schedule: DomainSchedule,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub trainer: TrainingSessionConfig,
    pub controller: ControllerConfig,
    pub teacher: TeacherConfig,
    pub transport: TransportConfig,
    pub strategy: Strategy,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let doc = Document::parse(text)?;
        let mut cx = Extract { doc: &doc, issues: Vec::new(), used: BTreeMap::new() };
        let cfg = cx.build();
        cx.flag_unknown();
        match cfg {
            Some(cfg) if cx.issues.is_empty() => {
                let issues = cfg.issues();
                if issues.is_empty() {
                    Ok(cfg)
                } else {
                    Err(Error::Config(issues))
                }
            }
            _ => Err(Error::Config(cx.issues)),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// A shipped scenario by name, or `None`.
    pub fn shipped(name: &str) -> Option<Result<Self>> {
        SHIPPED.iter().find(|(n, _)| *n == name).map(|(_, text)| Self::parse(text))
    }

    /// Checks cross-field constraints. Returns every problem found.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut bad = |path: &str, reason: String| out.push(ConfigIssue { path: path.into(), reason });
        if self.duration_frames == 0 {
            bad("scenario.duration_frames", "must be > 0".into());
        }
        if self.window_frames == 0 {
            bad("scenario.window_frames", "must be > 0".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            bad("stream.fps", "must be > 0".into());
        }
        let m = &self.model;
        if m.replay_tap > m.layer_widths.len() {
            bad("model.replay_tap", format!("{} exceeds the {} layers", m.replay_tap, m.layer_widths.len()));
        }
        if m.layer_widths.contains(&0) {
            bad("model.layer_widths", "widths must be > 0".into());
        }
        if !(0.0..=1.0).contains(&m.front_lr_multiplier) {
            bad("model.front_lr_multiplier", "must be in [0, 1]".into());
        }
        if !(m.brn_momentum > 0.0 && m.brn_momentum < 1.0) {
            bad("model.brn_momentum", "must be in (0, 1)".into());
        }
        if m.brn_r_max < 1.0 {
            bad("model.brn_r_max", "must be >= 1".into());
        }
        if m.brn_d_max < 0.0 {
            bad("model.brn_d_max", "must be >= 0".into());
        }
        if !(m.learning_rate > 0.0 && m.learning_rate.is_finite()) {
            bad("model.learning_rate", "must be > 0".into());
        }
        let t = &self.trainer;
        for (path, v) in [("trainer.epochs", t.epochs), ("trainer.minibatch_size", t.minibatch_size), ("trainer.batch_size", t.batch_size)] {
            if v == 0 {
                bad(path, "must be >= 1".into());
            }
        }
        if t.use_replay && t.replay_capacity == 0 {
            bad("replay.capacity", "must be >= 1 when replay is enabled".into());
        }
        let c = &self.controller;
        if let Err(e) = c.params.validate() {
            bad("controller", e.to_string());
        }
        if !(c.theta > 0.0 && c.theta < 1.0) {
            bad("controller.theta", "must be in (0, 1)".into());
        }
        if !(c.initial_rate >= c.params.r_min && c.initial_rate <= c.params.r_max) {
            bad("controller.initial_rate", format!("must lie in [{}, {}]", c.params.r_min, c.params.r_max));
        }
        if !(c.lambda_window_s >= 1.0 && c.lambda_window_s.is_finite()) {
            bad("controller.lambda_window_s", "must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.teacher.noise_rate) {
            bad("teacher.noise_rate", "must be in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.teacher.softness) {
            bad("teacher.softness", "must be in [0, 1)".into());
        }
        let tr = &self.transport;
        if let Err(e) = tr.compression.validate() {
            bad("transport", e.to_string());
        }
        for (path, v) in [("transport.upload_interval_s", tr.upload_interval_s), ("transport.cloud_only_interval_s", tr.cloud_only_interval_s)] {
            if !(v > 0.0 && v.is_finite()) {
                bad(path, "must be > 0".into());
            }
        }
        if !(tr.link_latency_s >= 0.0 && tr.link_latency_s.is_finite()) {
            bad("transport.link_latency_s", "must be >= 0".into());
        }
        if let Some(r) = self.strategy.fixed_rate {
            if !(r > 0.0 && r.is_finite()) {
                bad("strategy.fixed_rate", "must be > 0".into());
            }
        }
        out
    }

    /// Re-checks after programmatic overrides.
    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }
}

struct Entry {
    line: usize,
    value: String,
}

/// Raw sections in file order of appearance.
struct Document {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl Document {
    fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
        let mut current: Option<String> = None;
        let mut seen_header = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if !seen_header {
                if line != HEADER {
                    return Err(Error::Parse { line: line_no, reason: format!("expected version header `{HEADER}`") });
                }
                seen_header = true;
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Parse { line: line_no, reason: "unterminated section header".into() })?
                    .trim();
                if name.is_empty() {
                    return Err(Error::Parse { line: line_no, reason: "empty section name".into() });
                }
                if sections.contains_key(name) {
                    return Err(Error::Parse { line: line_no, reason: format!("duplicate section [{name}]") });
                }
                sections.insert(name.to_string(), BTreeMap::new());
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: line_no, reason: "expected `key = value`".into() })?;
            let section = current
                .as_ref()
                .ok_or_else(|| Error::Parse { line: line_no, reason: "key outside any section".into() })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse { line: line_no, reason: "empty key".into() });
            }
            let table = sections.get_mut(section).expect("section inserted");
            if table.contains_key(key) {
                return Err(Error::Parse { line: line_no, reason: format!("duplicate key `{key}`") });
            }
            table.insert(key.to_string(), Entry { line: line_no, value: value.trim().to_string() });
        }
        if !seen_header {
            return Err(Error::Parse { line: 1, reason: format!("missing version header `{HEADER}`") });
        }
        Ok(Self { sections })
    }
}

/// Typed field extraction that records problems instead of stopping.
struct Extract<'a> {
    doc: &'a Document,
    issues: Vec<ConfigIssue>,
    used: BTreeMap<String, ()>,
}

impl Extract<'_> {
    fn issue(&mut self, path: String, reason: impl Into<String>) {
        self.issues.push(ConfigIssue { path, reason: reason.into() });
    }

    fn raw(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.used.insert(format!("{section}.{key}"), ());
        let e = self.doc.sections.get(section)?.get(key)?;
        Some((e.value.clone(), e.line))
    }

    fn parsed<T: FromStr>(&mut self, section: &str, key: &str) -> Option<T> {
        let (value, line) = self.raw(section, key)?;
        match value.parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.issue(format!("{section}.{key}"), format!("cannot parse `{value}` (line {line})"));
                None
            }
        }
    }

    fn or<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> T {
        self.parsed(section, key).unwrap_or(default)
    }

    fn required<T: FromStr>(&mut self, section: &str, key: &str) -> Option<T> {
        if self.doc.sections.get(section).is_some_and(|s| s.contains_key(key)) {
            self.parsed(section, key)
        } else {
            self.issue(format!("{section}.{key}"), "required field missing");
            None
        }
    }

    fn list<T: FromStr>(&mut self, section: &str, key: &str) -> Option<Vec<T>> {
        let (value, line) = self.raw(section, key)?;
        let parsed: std::result::Result<Vec<T>, _> =
            value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse::<T>).collect();
        match parsed {
            Ok(v) => Some(v),
            Err(_) => {
                self.issue(format!("{section}.{key}"), format!("cannot parse list `{value}` (line {line})"));
                None
            }
        }
    }

    fn build(&mut self) -> Option<ScenarioConfig> {
        if !self.doc.sections.contains_key("scenario") {
            self.issue("scenario".into(), "required section missing");
        }
        let name: String = self.or("scenario", "name", "unnamed".to_string());
        let seed: u64 = self.or("scenario", "seed", 0);
        let duration_frames = self.required::<u64>("scenario", "duration_frames");
        let window_frames = self.or("scenario", "window_frames", 300u64);

        let dim = self.or("stream", "dim", 16usize);
        let classes = self.or("stream", "classes", 4usize);
        let fps = self.or("stream", "fps", DEFAULT_FPS);
        let ramp_frames = self.or("stream", "ramp_frames", 0u64);
        let schedule = self.schedule(dim, classes, ramp_frames);

        let dm = ModelConfig::default();
        let model = ModelConfig {
            input_dim: dim,
            layer_widths: self.list("model", "layer_widths").unwrap_or(dm.layer_widths),
            replay_tap: self.or("model", "replay_tap", dm.replay_tap),
            classes,
            learning_rate: self.or("model", "learning_rate", dm.learning_rate),
            front_lr_multiplier: self.or("model", "front_lr_multiplier", dm.front_lr_multiplier),
            brn_momentum: self.or("model", "brn_momentum", dm.brn_momentum),
            brn_r_max: self.or("model", "brn_r_max", dm.brn_r_max),
            brn_d_max: self.or("model", "brn_d_max", dm.brn_d_max),
            init_gain: self.or("model", "init_gain", dm.init_gain),
        };
        let pretrain = PretrainConfig {
            samples: self.or("model", "pretrain_samples", 3000),
            epochs: self.or("model", "pretrain_epochs", 20),
        };

        let dt = TrainingSessionConfig::default();
        let trainer = TrainingSessionConfig {
            epochs: self.or("trainer", "epochs", dt.epochs),
            minibatch_size: self.or("trainer", "minibatch_size", dt.minibatch_size),
            batch_size: self.or("trainer", "batch_size", dt.batch_size),
            learning_rate: model.learning_rate,
            freeze_front_after_first_batch: self.or("trainer", "freeze_front_after_first_batch", dt.freeze_front_after_first_batch),
            use_replay: self.or("replay", "enabled", dt.use_replay),
            replay_capacity: self.or("replay", "capacity", dt.replay_capacity),
            keep_raw_features: false,
        };

        let dc = ControllerParams::default();
        let params = ControllerParams {
            r_min: self.or("controller", "r_min", dc.r_min),
            r_max: self.or("controller", "r_max", dc.r_max),
            phi_target: self.or("controller", "phi_target", dc.phi_target),
            alpha_target: self.or("controller", "alpha_target", dc.alpha_target),
            eta_r: self.or("controller", "eta_r", dc.eta_r),
            eta_alpha: self.or("controller", "eta_alpha", dc.eta_alpha),
        };
        let controller = ControllerConfig {
            params,
            theta: self.or("controller", "theta", DEFAULT_THETA),
            initial_rate: self.or("controller", "initial_rate", params.r_max),
            lambda_window_s: self.or("controller", "lambda_window_s", 120.0),
        };
        let teacher = TeacherConfig {
            noise_rate: self.or("teacher", "noise_rate", 0.0),
            softness: self.or("teacher", "softness", 0.05),
        };
        let cm = CompressionModel::default();
        let transport = TransportConfig {
            compression: CompressionModel {
                bytes_per_raw_frame: self.or("transport", "bytes_per_raw_frame", cm.bytes_per_raw_frame),
                compression_ratio: self.or("transport", "compression_ratio", cm.compression_ratio),
                latency_min_s: self.or("transport", "latency_min_s", cm.latency_min_s),
                latency_max_s: self.or("transport", "latency_max_s", cm.latency_max_s),
            },
            link_latency_s: self.or("transport", "link_latency_s", 0.05),
            upload_interval_s: self.or("transport", "upload_interval_s", 30.0),
            cloud_only_interval_s: self.or("transport", "cloud_only_interval_s", 1.0),
        };
        let kind = match self.raw("strategy", "kind") {
            None => Some(StrategyKind::Adaptive),
            Some((v, line)) => match v.parse::<StrategyKind>() {
                Ok(k) => Some(k),
                Err(e) => {
                    self.issue("strategy.kind".into(), format!("{e} (line {line})"));
                    None
                }
            },
        };
        let fixed_rate = self.parsed::<f64>("strategy", "fixed_rate");

        Some(ScenarioConfig {
            name,
            seed,
            duration_frames: duration_frames?,
            window_frames,
            fps,
            schedule: schedule?,
            model,
            pretrain,
            trainer,
            controller,
            teacher,
            transport,
            strategy: Strategy { kind: kind?, fixed_rate },
        })
    }

    fn schedule(&mut self, dim: usize, classes: usize, ramp_frames: u64) -> Option<DomainSchedule> {
        let segments = match self.raw("schedule", "segments") {
            None => {
                self.issue("schedule.segments".into(), "required field missing");
                None
            }
            Some((value, line)) => {
                let parsed: Option<Vec<Segment>> = value
                    .split(',')
                    .map(|item| {
                        let (start, dom) = item.trim().split_once(':')?;
                        Some(Segment { start_frame: start.trim().parse().ok()?, domain_id: dom.trim().parse().ok()? })
                    })
                    .collect();
                if parsed.is_none() {
                    self.issue("schedule.segments".into(), format!("expected `start:domain, ...` (line {line})"));
                }
                parsed
            }
        };
        if let Some(segs) = &segments {
            if segs.first().map(|s| s.start_frame) != Some(0) {
                self.issue("schedule.segments".into(), "first segment must start at frame 0");
            }
            if segs.windows(2).any(|w| w[0].start_frame >= w[1].start_frame) {
                self.issue("schedule.segments".into(), "segments must be strictly increasing in start_frame");
            }
        }

        let mut domains = Vec::new();
        let mut ok = true;
        for d in 0.. {
            let section = format!("domain.{d}");
            if !self.doc.sections.contains_key(&section) {
                break;
            }
            match self.domain(&section, dim, classes) {
                Some(p) => domains.push(p),
                None => ok = false,
            }
        }
        if domains.is_empty() && ok {
            self.issue("domain.0".into(), "at least one domain section is required");
        }
        if let Some(segs) = &segments {
            let declared = self.doc.sections.keys().filter(|k| k.starts_with("domain.")).count();
            for s in segs.iter().filter(|s| s.domain_id >= declared) {
                self.issue("schedule.segments".into(), format!("references undeclared domain {}", s.domain_id));
            }
        }
        let segments = segments?;
        if !ok || domains.is_empty() || !self.issues.is_empty() {
            return None;
        }
        match DomainSchedule::new(segments, domains, ramp_frames) {
            Ok(s) => Some(s),
            Err(e) => {
                self.issue("schedule".into(), e.to_string());
                None
            }
        }
    }

    fn domain(&mut self, section: &str, dim: usize, classes: usize) -> Option<DomainParams> {
        let before = self.issues.len();
        let prior: Vec<f64> = match self.list(section, "prior") {
            Some(p) => p,
            None => {
                if !self.issues.iter().any(|i| i.path == format!("{section}.prior")) {
                    self.issue(format!("{section}.prior"), "required field missing");
                }
                Vec::new()
            }
        };
        if !prior.is_empty() {
            if prior.len() != classes {
                self.issue(format!("{section}.prior"), format!("has {} entries, expected {classes}", prior.len()));
            } else if let Some(msg) = prior_problem(&prior) {
                self.issue(format!("{section}.prior"), msg);
            }
        }
        let noise: f64 = self.required(section, "noise").unwrap_or(f64::NAN);
        let path = format!("{section}.noise");
        if self.doc.sections.get(section).is_some_and(|s| s.contains_key("noise"))
            && !(noise > 0.0 && noise.is_finite())
            && !self.issues.iter().any(|i| i.path == path)
        {
            self.issue(path, "must be > 0");
        }
        let persistence: f64 = self.or(section, "persistence", 0.0);
        if !(0.0..1.0).contains(&persistence) {
            self.issue(format!("{section}.persistence"), "must be in [0, 1)");
        }

        let explicit: Vec<Option<Vec<f64>>> = (0..classes).map(|c| self.list(section, &format!("mean.{c}"))).collect();
        let seed: Option<u64> = self.parsed(section, "mean_seed");
        let scale: f64 = self.or(section, "mean_scale", 1.0);
        let means = if explicit.iter().any(Option::is_some) {
            if seed.is_some() {
                self.issue(format!("{section}.mean_seed"), "give either mean_seed or mean.N lines, not both");
            }
            let mut means = Vec::new();
            for (c, m) in explicit.into_iter().enumerate() {
                match m {
                    None => self.issue(format!("{section}.mean.{c}"), "missing class mean"),
                    Some(m) if m.len() != dim => {
                        self.issue(format!("{section}.mean.{c}"), format!("has {} entries, expected {dim}", m.len()))
                    }
                    Some(m) => means.push(m),
                }
            }
            means
        } else if let Some(seed) = seed {
            generated_means(seed, scale, classes, dim)
        } else {
            self.issue(format!("{section}.mean_seed"), "class means missing: give mean_seed or mean.0 .. mean.N");
            Vec::new()
        };
        if self.issues.len() > before {
            return None;
        }
        Some(DomainParams { prior, means, noise, persistence })
    }

    fn flag_unknown(&mut self) {
        const SECTIONS: [&str; 10] =
            ["scenario", "stream", "schedule", "model", "trainer", "replay", "controller", "teacher", "transport", "strategy"];
        let mut unknown = Vec::new();
        for (section, keys) in &self.doc.sections {
            let known_section = SECTIONS.contains(&section.as_str())
                || section.strip_prefix("domain.").is_some_and(|n| n.parse::<usize>().is_ok());
            if !known_section {
                unknown.push(ConfigIssue { path: section.clone(), reason: "unknown section".into() });
                continue;
            }
            for (key, e) in keys {
                let path = format!("{section}.{key}");
                if !self.used.contains_key(&path) {
                    unknown.push(ConfigIssue { path, reason: format!("unknown key (line {})", e.line) });
                }
            }
        }
        self.issues.extend(unknown);
    }
}

/// Class means drawn from N(0, scale²) per component with their own seed.
pub fn generated_means(seed: u64, scale: f64, classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = SimRng::seed_from_u64(seed);
    (0..classes)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect()
        })
        .collect()
}
