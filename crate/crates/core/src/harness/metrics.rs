use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::learner::Prediction;

/// First line of every metrics CSV.
pub const METRICS_SCHEMA: &str = "# schema: edgedrift-metrics v1";
pub const SUMMARY_SCHEMA: &str = "# schema: edgedrift-summary v1";
pub const SESSIONS_SCHEMA: &str = "# schema: edgedrift-sessions v1";

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRow {
    pub window_id: u64,
    /// Top-1 accuracy against hidden ground truth.
    pub accuracy: f64,
    pub mean_confidence: f64,
    /// Mean of confidence on correct predictions and 0 on wrong ones.
    pub conf_correct: f64,
    /// Latest φ̄ the edge has heard of, 0 before the first one.
    pub phi_bar: f64,
    /// Sampling rate in force at the end of the window.
    pub rate: f64,
    pub up_kbps: f64,
    pub down_kbps: f64,
    pub avg_fps: f64,
    /// Sessions finished by the end of the window.
    pub sessions_run: u64,
}

const COLUMNS: [&str; 10] = [
    "window_id",
    "accuracy",
    "mean_confidence",
    "conf_correct",
    "phi_bar",
    "rate",
    "up_kbps",
    "down_kbps",
    "avg_fps",
    "sessions_run",
];

impl WindowRow {
    fn fields(&self) -> [String; 10] {
        [
            self.window_id.to_string(),
            fmt(self.accuracy),
            fmt(self.mean_confidence),
            fmt(self.conf_correct),
            fmt(self.phi_bar),
            fmt(self.rate),
            fmt(self.up_kbps),
            fmt(self.down_kbps),
            fmt(self.avg_fps),
            self.sessions_run.to_string(),
        ]
    }

    fn is_finite(&self) -> bool {
        [self.accuracy, self.mean_confidence, self.conf_correct, self.phi_bar, self.rate, self.up_kbps, self.down_kbps, self.avg_fps]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Fixed-precision float formatting so CSVs are stable across platforms.
pub fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsSeries {
    pub rows: Vec<WindowRow>,
}

impl MetricsSeries {
    pub fn mean_accuracy(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.accuracy))
    }

    pub fn mean_conf_correct(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.conf_correct))
    }

    pub fn mean_rate(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.rate))
    }

    pub fn mean_avg_fps(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.avg_fps))
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().all(WindowRow::is_finite)
    }

    /// Windows must be numbered 0, 1, 2, ... and accuracies in [0, 1].
    pub fn check(&self) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            if r.window_id != i as u64 {
                return Err(Error::InvalidArgument(format!("window {i} has id {}", r.window_id)));
            }
            if !(0.0..=1.0).contains(&r.accuracy) {
                return Err(Error::InvalidArgument(format!("window {i} accuracy {}", r.accuracy)));
            }
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("metrics series".into()));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{METRICS_SCHEMA}")?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(COLUMNS)?;
        for r in &self.rows {
            out.write_record(r.fields())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Reads a metrics CSV written by [`MetricsSeries::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let body = text
            .strip_prefix(METRICS_SCHEMA)
            .ok_or_else(|| Error::Decode(format!("{} lacks `{METRICS_SCHEMA}`", path.display())))?;
        let mut reader = csv::Reader::from_reader(body.trim_start().as_bytes());
        let headers = reader.headers()?.clone();
        if headers.iter().ne(COLUMNS) {
            return Err(Error::Decode(format!("unexpected columns in {}", path.display())));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| Error::Decode(format!("bad number `{}` in column {}", &rec[i], COLUMNS[i])))
            };
            rows.push(WindowRow {
                window_id: num(0)? as u64,
                accuracy: num(1)?,
                mean_confidence: num(2)?,
                conf_correct: num(3)?,
                phi_bar: num(4)?,
                rate: num(5)?,
                up_kbps: num(6)?,
                down_kbps: num(7)?,
                avg_fps: num(8)?,
                sessions_run: num(9)? as u64,
            });
        }
        Ok(Self { rows })
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Fraction of predictions whose confidence exceeds `theta`.
pub fn estimate_alpha(predictions: &[Prediction], theta: f64) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("α needs at least one prediction".into()));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidArgument(format!("θ = {theta} outside (0, 1)")));
    }
    Ok(alpha_from_confidences(predictions.iter().map(|p| p.confidence), theta))
}

pub(crate) fn alpha_from_confidences(conf: impl Iterator<Item = f64>, theta: f64) -> f64 {
    let (hits, n) = conf.fold((0usize, 0usize), |(h, n), c| (h + usize::from(c > theta), n + 1));
    hits as f64 / n.max(1) as f64
}

/// Training intervals `[start, end)` in simulated seconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivityTrace {
    pub sessions: Vec<(f64, f64)>,
}

impl ActivityTrace {
    pub fn push(&mut self, start: f64, end: f64) {
        self.sessions.push((start, end));
    }

    /// Total training time overlapping `[from, to)`.
    pub fn busy_seconds(&self, from: f64, to: f64) -> f64 {
        self.sessions.iter().map(|&(s, e)| (e.min(to) - s.max(from)).max(0.0)).sum()
    }
}

/// Utilization proxy: the share of whole seconds in
/// `[start_s, start_s + seconds)` that overlap a training session.
pub fn collect_lambda(trace: &ActivityTrace, start_s: u64, seconds: u64) -> f64 {
    if seconds == 0 {
        return 0.0;
    }
    let active = (start_s..start_s + seconds)
        .filter(|&s| {
            let (lo, hi) = (s as f64, s as f64 + 1.0);
            trace.sessions.iter().any(|&(a, b)| a < hi && b > lo)
        })
        .count();
    active as f64 / seconds as f64
}

/// Sorted per-window accuracy differences `a - b` with cumulative fractions.
pub fn gain_cdf(a: &MetricsSeries, b: &MetricsSeries) -> Result<Vec<(f64, f64)>> {
    if a.rows.len() != b.rows.len() || a.rows.iter().zip(&b.rows).any(|(x, y)| x.window_id != y.window_id) {
        return Err(Error::InvalidArgument(format!(
            "series cover different windows ({} vs {} rows)",
            a.rows.len(),
            b.rows.len()
        )));
    }
    let mut gains: Vec<f64> = a.rows.iter().zip(&b.rows).map(|(x, y)| x.accuracy - y.accuracy).collect();
    gains.sort_by(f64::total_cmp);
    let n = gains.len() as f64;
    Ok(gains.into_iter().enumerate().map(|(i, g)| (g, (i + 1) as f64 / n)).collect())
}

/// Share of windows where the gain is strictly positive.
pub fn positive_gain_fraction(cdf: &[(f64, f64)]) -> f64 {
    if cdf.is_empty() {
        return 0.0;
    }
    cdf.iter().filter(|(g, _)| *g > 0.0).count() as f64 / cdf.len() as f64
}
