use serde::{Deserialize, Serialize};

use crate::corpus::State;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum F1Variant {
    /// Unweighted mean of the ON and OFF class F1.
    #[default]
    Macro,
    /// F1 of the ON class alone.
    PositiveOn,
}

fn class_f1(predictions: &[State], labels: &[State], class: State) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p == class, l == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

fn check(predictions: &[State], labels: &[State]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(Error::Empty);
    }
    Ok(())
}

/// Mean of the per-class F1 of ON and OFF. A class with an empty
/// precision + recall denominator scores 0.
pub fn macro_f1(predictions: &[State], labels: &[State]) -> Result<f64> {
    check(predictions, labels)?;
    Ok(0.5 * (class_f1(predictions, labels, State::On) + class_f1(predictions, labels, State::Off)))
}

pub fn positive_f1(predictions: &[State], labels: &[State]) -> Result<f64> {
    check(predictions, labels)?;
    Ok(class_f1(predictions, labels, State::On))
}

pub fn f1_score(variant: F1Variant, predictions: &[State], labels: &[State]) -> Result<f64> {
    match variant {
        F1Variant::Macro => macro_f1(predictions, labels),
        F1Variant::PositiveOn => positive_f1(predictions, labels),
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(MeanStd {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }

    /// `88.2 ± 1.5` style, in percent.
    pub fn percent(&self) -> String {
        format!("{:.1} ± {:.1}", 100.0 * self.mean, 100.0 * self.std)
    }
}
