//! Confusion-matrix evaluation and the post-processing robustness harness.
//!
//! "Positive" is the generated class: TPR is the share of generated images
//! detected as generated, TNR the share of photographs kept as photographs.
//! Rates are percentages, reported to one decimal place.

use std::fmt;

use crate::data::transforms::{TransformKind, TransformSpec};
use crate::data::{load_image, ImageRecord, Label};
use crate::error::{Error, Result};
use crate::net::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MetricsReport {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl MetricsReport {
    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.tn + self.fp
    }

    /// True positive rate in percent: generated detected as generated.
    pub fn tpr(&self) -> f64 {
        100.0 * self.tp as f64 / (self.tp + self.fn_) as f64
    }

    /// True negative rate in percent: photographs kept as photographs.
    pub fn tnr(&self) -> f64 {
        100.0 * self.tn as f64 / (self.tn + self.fp) as f64
    }

    pub fn acc(&self) -> f64 {
        100.0 * (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn to_kv(&self) -> String {
        format!(
            "tp={}\nfn={}\ntn={}\nfp={}\ntpr={:.1}\ntnr={:.1}\nacc={:.1}\n",
            self.tp,
            self.fn_,
            self.tn,
            self.fp,
            self.tpr(),
            self.tnr(),
            self.acc()
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "TPR {:.1}  TNR {:.1}  ACC {:.1}  (tp {} fn {} tn {} fp {})",
            self.tpr(),
            self.tnr(),
            self.acc(),
            self.tp,
            self.fn_,
            self.tn,
            self.fp
        )
    }
}

fn count_predictions<T: Scalar>(
    report: &mut MetricsReport,
    logits: &Tensor<T>,
    labels: &[Label],
    threshold: f64,
) {
    for (&logit, &label) in logits.data().iter().zip(labels) {
        let prob = 1.0 / (1.0 + (-logit.to_f64()).exp());
        let predicted_generated = prob >= threshold;
        match (label, predicted_generated) {
            (Label::Generated, true) => report.tp += 1,
            (Label::Generated, false) => report.fn_ += 1,
            (Label::Photo, false) => report.tn += 1,
            (Label::Photo, true) => report.fp += 1,
        }
    }
}

fn check_split(records: &[&ImageRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Metrics("empty split".to_string()));
    }
    let generated = records.iter().filter(|r| r.label == Label::Generated).count();
    if generated == 0 || generated == records.len() {
        return Err(Error::Metrics(
            "split has a single class; TPR or TNR is undefined".to_string(),
        ));
    }
    Ok(())
}

/// Score a split in inference mode at the given probability threshold.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    records: &[&ImageRecord],
    threshold: f64,
) -> Result<MetricsReport> {
    check_split(records)?;
    let side = model.config().input_side;
    let mut report = MetricsReport::default();
    for chunk in records.chunks(EVAL_BATCH) {
        let (images, _) = crate::data::load_batch::<T>(chunk, side)?;
        let logits = model.forward(&images, false)?;
        let labels: Vec<Label> = chunk.iter().map(|r| r.label).collect();
        count_predictions(&mut report, &logits, &labels, threshold);
    }
    Ok(report)
}

/// Per-kind robustness scores plus the running average accuracy.
#[derive(Debug, Clone)]
pub struct RobustnessReport {
    pub rows: Vec<(TransformKind, MetricsReport)>,
}

impl RobustnessReport {
    pub fn average_acc(&self) -> f64 {
        let sum: f64 = self.rows.iter().map(|(_, m)| m.acc()).sum();
        sum / self.rows.len() as f64
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (kind, m) in &self.rows {
            out.push_str(&format!(
                "{}.tpr={:.1}\n{}.tnr={:.1}\n{}.acc={:.1}\n",
                kind.name(),
                m.tpr(),
                kind.name(),
                m.tnr(),
                kind.name(),
                m.acc()
            ));
        }
        out.push_str(&format!("average.acc={:.1}\n", self.average_acc()));
        out
    }
}

impl fmt::Display for RobustnessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>6} {:>6} {:>6}", "transform", "TPR", "TNR", "ACC")?;
        for (kind, m) in &self.rows {
            writeln!(
                f,
                "{:<14} {:>6.1} {:>6.1} {:>6.1}",
                kind.name(),
                m.tpr(),
                m.tnr(),
                m.acc()
            )?;
        }
        write!(f, "{:<14} {:>20.1}", "average", self.average_acc())
    }
}

/// Replay the post-processing suite over a split: each record gets an
/// independently sampled parameter per kind (a pure function of the master
/// seed and the record's index), is transformed after resizing, and scored.
pub fn robustness_eval<T: Scalar>(
    model: &Model<T>,
    records: &[&ImageRecord],
    transforms: &[TransformSpec],
    master_seed: u64,
    threshold: f64,
) -> Result<RobustnessReport> {
    check_split(records)?;
    if transforms.is_empty() {
        return Err(Error::arg("robustness_eval: no transforms listed"));
    }
    for spec in transforms {
        spec.validate()?;
    }
    let side = model.config().input_side;
    let mut rows = Vec::with_capacity(transforms.len());
    for spec in transforms {
        let mut report = MetricsReport::default();
        for (chunk_start, chunk) in records
            .chunks(EVAL_BATCH)
            .enumerate()
            .map(|(i, c)| (i * EVAL_BATCH, c))
        {
            let mut data = Vec::with_capacity(chunk.len() * 3 * side * side);
            for (offset, r) in chunk.iter().enumerate() {
                let img = load_image::<T>(&r.path, side)?;
                let transformed = spec.apply(&img, master_seed, (chunk_start + offset) as u64)?;
                data.extend_from_slice(&transformed.data());
            }
            let images = Tensor::constant(&[chunk.len(), 3, side, side], data)?;
            let logits = model.forward(&images, false)?;
            let labels: Vec<Label> = chunk.iter().map(|r| r.label).collect();
            count_predictions(&mut report, &logits, &labels, threshold);
        }
        rows.push((spec.kind, report));
    }
    Ok(RobustnessReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_match_hand_counts() {
        let m = MetricsReport {
            tp: 5,
            fn_: 0,
            tn: 3,
            fp: 1,
        };
        assert_eq!(format!("{:.1}", m.tpr()), "100.0");
        assert_eq!(format!("{:.1}", m.tnr()), "75.0");
        assert_eq!(format!("{:.1}", m.acc()), "88.9");
        assert_eq!(m.total(), 9);
    }

    #[test]
    fn perfect_classifier_is_all_hundred() {
        let m = MetricsReport {
            tp: 4,
            fn_: 0,
            tn: 6,
            fp: 0,
        };
        assert_eq!(m.tpr(), 100.0);
        assert_eq!(m.tnr(), 100.0);
        assert_eq!(m.acc(), 100.0);
    }

    #[test]
    fn one_sided_rates_sum_to_hundred() {
        // a constant-logit model predicts one class for everything
        let all_generated = MetricsReport {
            tp: 7,
            fn_: 0,
            tn: 0,
            fp: 3,
        };
        assert_eq!(all_generated.tpr() + all_generated.tnr(), 100.0);
        let all_photo = MetricsReport {
            tp: 0,
            fn_: 7,
            tn: 3,
            fp: 0,
        };
        assert_eq!(all_photo.tpr() + all_photo.tnr(), 100.0);
    }
}
