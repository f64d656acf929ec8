use super::Prediction;
use crate::error::{Error, Result};

/// Probability floor applied before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn cross_entropy(p: f64) -> f64 {
    -p.max(PROB_FLOOR).ln()
}

/// Cross-entropy of a prediction against a hard label.
pub fn loss(pred: &Prediction, label: usize) -> Result<f64> {
    let classes = pred.scores.len();
    let p = pred.scores.get(label).ok_or(Error::LabelOutOfRange { label, classes })?;
    Ok(cross_entropy(*p))
}
