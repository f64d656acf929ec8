use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use super::metrics::{fmt, SESSIONS_SCHEMA, SUMMARY_SCHEMA};
use super::scenario::{ScenarioConfig, Strategy, StrategyKind};
use super::sim::{iid_samples, pretrained_model, run_scenario, RunOutput, RunSummary};
use crate::cloud::TeacherOracle;
use crate::error::{Error, Result};
use crate::learner::TwoStageModel;
use crate::replay::LabeledSample;
use crate::seeds::{rng_for, Role};
use crate::stream::{DomainParams, DomainSchedule, StreamState};
use crate::trainer::{CostModel, EdgeTrainer};

/// One entry of a sampling-rate sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateChoice {
    Fixed(f64),
    Adaptive,
}

impl RateChoice {
    pub const TABLE: [RateChoice; 7] = [
        RateChoice::Fixed(0.1),
        RateChoice::Fixed(0.2),
        RateChoice::Fixed(0.4),
        RateChoice::Fixed(0.8),
        RateChoice::Fixed(1.6),
        RateChoice::Fixed(2.0),
        RateChoice::Adaptive,
    ];
}

impl fmt::Display for RateChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateChoice::Fixed(r) => write!(f, "{r}"),
            RateChoice::Adaptive => f.write_str("adaptive"),
        }
    }
}

impl FromStr for RateChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("adaptive") {
            return Ok(RateChoice::Adaptive);
        }
        match s.parse::<f64>() {
            Ok(r) if r > 0.0 && r.is_finite() => Ok(RateChoice::Fixed(r)),
            _ => Err(format!("`{s}` is neither a positive rate nor `adaptive`")),
        }
    }
}

/// Parses a comma-separated rate list such as `0.1,0.2,adaptive`.
pub fn parse_rates(list: &str) -> std::result::Result<Vec<RateChoice>, String> {
    let rates: Vec<RateChoice> = list.split(',').map(str::parse).collect::<std::result::Result<_, _>>()?;
    if rates.is_empty() {
        return Err("empty rate list".into());
    }
    Ok(rates)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub rate: RateChoice,
    pub summary: RunSummary,
}

/// Runs the scenario's edge-training strategy once per rate, in parallel.
pub fn rate_sweep(cfg: &ScenarioConfig, rates: &[RateChoice]) -> Result<Vec<SweepRow>> {
    if rates.is_empty() {
        return Err(Error::InvalidArgument("rate sweep needs at least one rate".into()));
    }
    rates
        .par_iter()
        .map(|&rate| {
            let mut c = cfg.clone();
            c.strategy = Strategy {
                kind: StrategyKind::Adaptive,
                fixed_rate: match rate {
                    RateChoice::Fixed(r) => Some(r),
                    RateChoice::Adaptive => None,
                },
            };
            Ok(SweepRow { rate, summary: run_scenario(&c)?.summary })
        })
        .collect()
}

/// Runs all five strategies on the same scenario, in parallel.
pub fn compare_strategies(cfg: &ScenarioConfig) -> Result<Vec<RunSummary>> {
    StrategyKind::ALL
        .par_iter()
        .map(|&kind| {
            let mut c = cfg.clone();
            c.strategy = Strategy::new(kind);
            Ok(run_scenario(&c)?.summary)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Baseline,
    InputLayerReplay,
    CompletelyFreezing,
    AlternateTap,
    NoReplay,
}

impl Ablation {
    pub const ALL: [Ablation; 5] =
        [Ablation::Baseline, Ablation::InputLayerReplay, Ablation::CompletelyFreezing, Ablation::AlternateTap, Ablation::NoReplay];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::InputLayerReplay => "input_layer_replay",
            Ablation::CompletelyFreezing => "completely_freezing",
            Ablation::AlternateTap => "alternate_replay_tap",
            Ablation::NoReplay => "no_replay",
        }
    }

    /// The scenario with this variant's change applied.
    pub fn apply(self, cfg: &ScenarioConfig) -> ScenarioConfig {
        let mut c = cfg.clone();
        c.strategy = Strategy::new(StrategyKind::Adaptive);
        match self {
            Ablation::Baseline => {}
            Ablation::InputLayerReplay => c.model.replay_tap = 0,
            Ablation::CompletelyFreezing => c.model.front_lr_multiplier = 0.0,
            Ablation::AlternateTap => c.model.replay_tap = cfg.model.replay_tap.saturating_sub(1).max(1),
            Ablation::NoReplay => c.trainer.use_replay = false,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Ablation,
    pub summary: RunSummary,
}

pub fn ablation(cfg: &ScenarioConfig) -> Result<Vec<AblationRow>> {
    Ablation::ALL
        .par_iter()
        .map(|&variant| Ok(AblationRow { variant, summary: run_scenario(&variant.apply(cfg))?.summary }))
        .collect()
}

/// Domain-A retention after training on domain B.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForgettingReport {
    pub accuracy_a_before: f64,
    pub accuracy_a_after: f64,
    pub accuracy_b_after: f64,
}

/// Trains `a_sessions` sessions on domain `a` (filling the memory), then
/// `b_sessions` on domain `b`, and measures held-out accuracy on both.
/// Batches are teacher-labeled frames sampled from the scenario stream of
/// each domain at the controller's maximum rate.
pub fn forgetting_experiment(
    cfg: &ScenarioConfig,
    a: usize,
    b: usize,
    a_sessions: usize,
    b_sessions: usize,
    use_replay: bool,
) -> Result<ForgettingReport> {
    let domains = cfg.schedule.domains();
    let (da, db) = match (domains.get(a), domains.get(b)) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::InvalidArgument(format!("scenario has no domains {a} and {b}"))),
    };
    let model = pretrained_model(cfg)?;
    let mut session = cfg.trainer.clone();
    session.use_replay = use_replay;
    let mut trainer = EdgeTrainer::new(model, session, CostModel::reference(), rng_for(cfg.seed, Role::Trainer))?;
    let mut teacher =
        TeacherOracle::new(cfg.teacher.noise_rate, cfg.teacher.softness, cfg.model.classes, rng_for(cfg.seed, Role::Teacher))?;
    let stride = ((cfg.fps / cfg.controller.params.r_max).round() as usize).max(1);
    let holdout_a = iid_samples(da, 3000, rng_for(cfg.seed, Role::Holdout))?;
    let holdout_b = iid_samples(db, 3000, rng_for(cfg.seed.wrapping_add(1), Role::Holdout))?;

    let mut stream_a = domain_stream(da, cfg, 0)?;
    let mut stream_b = domain_stream(db, cfg, 1)?;
    let n = cfg.trainer.batch_size;
    for _ in 0..a_sessions {
        let batch = labeled_batch(&mut stream_a, &mut teacher, n, stride)?;
        trainer.run_training_session(&batch)?;
    }
    let accuracy_a_before = accuracy(&trainer.model, &holdout_a)?;
    for _ in 0..b_sessions {
        let batch = labeled_batch(&mut stream_b, &mut teacher, n, stride)?;
        trainer.run_training_session(&batch)?;
    }
    Ok(ForgettingReport {
        accuracy_a_before,
        accuracy_a_after: accuracy(&trainer.model, &holdout_a)?,
        accuracy_b_after: accuracy(&trainer.model, &holdout_b)?,
    })
}

fn domain_stream(domain: &DomainParams, cfg: &ScenarioConfig, offset: u64) -> Result<StreamState> {
    let schedule = DomainSchedule::stationary(domain.clone())?;
    Ok(StreamState::new(schedule, rng_for(cfg.seed.wrapping_add(offset), Role::Stream), cfg.fps))
}

fn labeled_batch(stream: &mut StreamState, teacher: &mut TeacherOracle, n: usize, stride: usize) -> Result<Vec<LabeledSample>> {
    let frames: Vec<_> = stream.step_by(stride).take(n).collect();
    let labels = teacher.label_frames(&frames)?;
    Ok(frames.into_iter().zip(labels).map(|(f, label)| LabeledSample { features: f.features, label }).collect())
}

/// Top-1 accuracy of `model` in inference mode.
pub fn accuracy(model: &TwoStageModel, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let mut correct = 0usize;
    for s in samples {
        if model.predict(&s.features)?.predicted_class == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

const SUMMARY_COLUMNS: [&str; 14] = [
    "label",
    "strategy",
    "rate",
    "mean_accuracy",
    "mean_conf_correct",
    "up_kbps",
    "down_kbps",
    "up_bytes",
    "down_bytes",
    "sessions",
    "mean_rate",
    "mean_fps",
    "forward_s",
    "backward_s",
];

fn summary_fields(label: &str, s: &RunSummary) -> Vec<String> {
    vec![
        label.to_string(),
        s.strategy.name().to_string(),
        s.fixed_rate.map_or_else(|| "adaptive".to_string(), fmt),
        fmt(s.mean_accuracy),
        fmt(s.mean_conf_correct),
        fmt(s.up_kbps),
        fmt(s.down_kbps),
        s.up_bytes.to_string(),
        s.down_bytes.to_string(),
        s.sessions.to_string(),
        fmt(s.mean_rate),
        fmt(s.mean_fps),
        fmt(s.forward_s),
        fmt(s.backward_s),
    ]
}

/// Summary CSV with one labeled row per run; `overall_s` closes each row.
pub fn write_summary_csv<W: Write>(mut w: W, rows: &[(String, &RunSummary)]) -> Result<()> {
    writeln!(w, "{SUMMARY_SCHEMA}")?;
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = SUMMARY_COLUMNS.to_vec();
    header.push("overall_s");
    out.write_record(&header)?;
    for (label, s) in rows {
        let mut fields = summary_fields(label, s);
        fields.push(fmt(s.overall_s));
        out.write_record(&fields)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sessions_csv<W: Write>(mut w: W, run: &RunOutput) -> Result<()> {
    writeln!(w, "{SESSIONS_SCHEMA}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "run_index",
        "started_at_s",
        "published_at_s",
        "minibatches",
        "final_mean_loss",
        "forward_s",
        "backward_s",
        "overall_s",
        "memory_len",
    ])?;
    for s in &run.sessions {
        let r = &s.report;
        out.write_record([
            r.run_index.to_string(),
            fmt(s.started_at),
            fmt(s.published_at),
            r.minibatches_run.to_string(),
            fmt(r.final_mean_loss),
            fmt(r.forward_seconds),
            fmt(r.backward_seconds),
            fmt(r.wall_clock_model),
            r.memory_len.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `<name>_<strategy>.csv` and `<name>_<strategy>_sessions.csv`
/// into `dir` and returns the metrics path.
pub fn write_run(dir: &Path, cfg: &ScenarioConfig, run: &RunOutput) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let stem = match cfg.strategy.fixed_rate {
        Some(r) => format!("{}_{}_r{r}", cfg.name, cfg.strategy.kind),
        None => format!("{}_{}", cfg.name, cfg.strategy.kind),
    };
    let metrics = dir.join(format!("{stem}.csv"));
    run.series.write_csv(std::io::BufWriter::new(std::fs::File::create(&metrics)?))?;
    write_sessions_csv(std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}_sessions.csv")))?), run)?;
    Ok(metrics)
}
