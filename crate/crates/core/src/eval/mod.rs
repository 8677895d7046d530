//! Accuracy, precision, recall, F1 and ground-truth pathology accuracy (GTPA),
//! thresholded differential sets and threshold sweeps.

mod report;

pub use report::{write_sweep_csv, ClassMetrics, EvalReport, SweepRow};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelState, N_PATHOLOGIES};
use crate::numerics::sigmoid;
use crate::train::{Example, Task};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation input: {0}")]
    Validation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Adds one binary decision.
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self { tp: self.tp + other.tp, fp: self.fp + other.fp, tn: self.tn + other.tn, fn_: self.fn_ + other.fn_ }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Ratio with the convention that an empty denominator yields 0.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub(crate) fn harmonic(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

/// Accuracy, precision, recall and F1 from counts. Precision, recall and F1
/// are 0 whenever their denominator is 0.
pub fn metrics_from_counts(c: &ConfusionCounts) -> Result<Metrics, EvalError> {
    if c.total() == 0 {
        return Err(EvalError::Validation("confusion counts are all zero".into()));
    }
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(Metrics { accuracy: (tp + tn) / (tp + fp + tn + fn_), precision, recall, f1: harmonic(precision, recall) })
}

/// Fraction of patients whose predicted set contains their true pathology.
pub fn gtpa<S: AsRef<[usize]>>(predicted_sets: &[S], truths: &[usize]) -> Result<f64, EvalError> {
    if predicted_sets.len() != truths.len() {
        return Err(EvalError::Validation(format!(
            "{} predicted sets for {} truths",
            predicted_sets.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(EvalError::Validation("no patients".into()));
    }
    let hits = predicted_sets.iter().zip(truths).filter(|(set, t)| set.as_ref().contains(t)).count();
    Ok(hits as f64 / truths.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdxPrediction {
    pub probs: Vec<f32>,
    pub threshold: f32,
    /// Ids with `probs[i] >= threshold`, ascending.
    pub predicted_set: Vec<usize>,
}

fn check_threshold(threshold: f32) -> Result<(), EvalError> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(EvalError::Validation(format!("threshold {threshold} outside [0, 1]")))
    }
}

/// Sigmoid probabilities and the set at or above `threshold` (ties included).
pub fn predict_ddx_set(ddx_logits: &[f32], threshold: f32) -> Result<DdxPrediction, EvalError> {
    if ddx_logits.len() != N_PATHOLOGIES {
        return Err(EvalError::Validation(format!("expected {N_PATHOLOGIES} logits, got {}", ddx_logits.len())));
    }
    check_threshold(threshold)?;
    let probs: Vec<f32> = ddx_logits.iter().map(|&l| sigmoid(l)).collect();
    Ok(DdxPrediction { predicted_set: set_at(&probs, threshold), probs, threshold })
}

fn set_at(probs: &[f32], threshold: f32) -> Vec<usize> {
    probs.iter().enumerate().filter(|(_, &p)| p >= threshold).map(|(i, _)| i).collect()
}

/// How per-class precision and recall are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Unweighted mean over classes; F1 is the harmonic mean of the two means.
    #[default]
    Macro,
    /// One pooled set of counts over every decision.
    Micro,
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Averaging::Macro => "macro",
            Averaging::Micro => "micro",
        })
    }
}

impl FromStr for Averaging {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "macro" => Ok(Averaging::Macro),
            "micro" => Ok(Averaging::Micro),
            other => Err(format!("unknown averaging {other:?}, expected macro or micro")),
        }
    }
}

fn per_class_metrics(counts: &[ConfusionCounts]) -> Result<Vec<ClassMetrics>, EvalError> {
    counts
        .iter()
        .enumerate()
        .map(|(id, c)| {
            let m = metrics_from_counts(c)?;
            Ok(ClassMetrics {
                id,
                support: c.tp + c.fn_,
                counts: *c,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
            })
        })
        .collect()
}

/// `(precision, recall, f1)` under `averaging`.
fn averaged(per_class: &[ClassMetrics], averaging: Averaging) -> Result<(f64, f64, f64), EvalError> {
    match averaging {
        Averaging::Macro => {
            let n = per_class.len() as f64;
            let p = per_class.iter().map(|c| c.precision).sum::<f64>() / n;
            let r = per_class.iter().map(|c| c.recall).sum::<f64>() / n;
            Ok((p, r, harmonic(p, r)))
        }
        Averaging::Micro => {
            let pooled = per_class.iter().fold(ConfusionCounts::default(), |acc, c| acc.merge(c.counts));
            let m = metrics_from_counts(&pooled)?;
            Ok((m.precision, m.recall, m.f1))
        }
    }
}

/// Scores top-1 predictions against truths over `n_classes` one-vs-rest problems.
pub fn score_pathology(
    predictions: &[usize],
    truths: &[usize],
    n_classes: usize,
    averaging: Averaging,
) -> Result<EvalReport, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::Validation("predictions and truths differ in length".into()));
    }
    if truths.is_empty() {
        return Err(EvalError::Validation("no patients".into()));
    }
    if let Some(&bad) = predictions.iter().chain(truths).find(|&&c| c >= n_classes) {
        return Err(EvalError::Validation(format!("class {bad} outside 0..{n_classes}")));
    }
    let mut counts = vec![ConfusionCounts::default(); n_classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        for (class, c) in counts.iter_mut().enumerate() {
            c.record(p == class, t == class);
        }
    }
    let per_class = per_class_metrics(&counts)?;
    let (precision, recall, f1) = averaged(&per_class, averaging)?;
    let correct = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(EvalReport {
        task: Task::Pathology,
        averaging,
        accuracy: correct as f64 / truths.len() as f64,
        precision,
        recall,
        f1,
        gtpa: None,
        n_patients: truths.len(),
        threshold: None,
        mean_set_size: None,
        per_class,
    })
}

/// Scores predicted sets against differentials as `patients × n_classes`
/// binary decisions. Accuracy is element-wise over that matrix.
pub fn score_ddx<P: AsRef<[usize]>, D: AsRef<[usize]>>(
    predicted_sets: &[P],
    differentials: &[D],
    truths: &[usize],
    threshold: f32,
    averaging: Averaging,
) -> Result<EvalReport, EvalError> {
    if predicted_sets.len() != differentials.len() || differentials.len() != truths.len() {
        return Err(EvalError::Validation("per-patient inputs differ in length".into()));
    }
    if truths.is_empty() {
        return Err(EvalError::Validation("no patients".into()));
    }
    let mut counts = vec![ConfusionCounts::default(); N_PATHOLOGIES];
    let mut set_sizes = 0usize;
    for (pred, actual) in predicted_sets.iter().zip(differentials) {
        let mut predicted = [false; N_PATHOLOGIES];
        let mut member = [false; N_PATHOLOGIES];
        for &i in pred.as_ref() {
            *predicted.get_mut(i).ok_or_else(|| EvalError::Validation(format!("predicted id {i} out of range")))? =
                true;
        }
        for &i in actual.as_ref() {
            *member.get_mut(i).ok_or_else(|| EvalError::Validation(format!("differential id {i} out of range")))? =
                true;
        }
        set_sizes += predicted.iter().filter(|&&p| p).count();
        for (class, c) in counts.iter_mut().enumerate() {
            c.record(predicted[class], member[class]);
        }
    }
    let per_class = per_class_metrics(&counts)?;
    let (precision, recall, f1) = averaged(&per_class, averaging)?;
    let pooled = counts.iter().fold(ConfusionCounts::default(), |a, c| a.merge(*c));
    Ok(EvalReport {
        task: Task::Ddx,
        averaging,
        accuracy: metrics_from_counts(&pooled)?.accuracy,
        precision,
        recall,
        f1,
        gtpa: Some(gtpa(predicted_sets, truths)?),
        n_patients: truths.len(),
        threshold: Some(threshold),
        mean_set_size: Some(set_sizes as f64 / truths.len() as f64),
        per_class,
    })
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax(logits: &[f32]) -> usize {
    logits.iter().enumerate().fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) }).0
}

fn require_examples(examples: &[Example]) -> Result<(), EvalError> {
    if examples.is_empty() {
        Err(EvalError::Validation("dataset is empty".into()))
    } else {
        Ok(())
    }
}

pub fn evaluate_pathology(
    model: &ModelState,
    examples: &[Example],
    averaging: Averaging,
) -> Result<EvalReport, EvalError> {
    require_examples(examples)?;
    let predictions = examples
        .iter()
        .map(|ex| Ok(argmax(&model.forward(&ex.tokens, false)?.pathology_logits)))
        .collect::<Result<Vec<_>, EvalError>>()?;
    let truths: Vec<usize> = examples.iter().map(|e| e.true_pathology).collect();
    score_pathology(&predictions, &truths, N_PATHOLOGIES, averaging)
}

/// Eval-mode ddx logits for every example.
pub fn ddx_logits(model: &ModelState, examples: &[Example]) -> Result<Vec<Vec<f32>>, EvalError> {
    examples.iter().map(|ex| Ok(model.forward(&ex.tokens, false)?.ddx_logits)).collect()
}

pub fn evaluate_ddx(
    model: &ModelState,
    examples: &[Example],
    threshold: f32,
    averaging: Averaging,
) -> Result<EvalReport, EvalError> {
    require_examples(examples)?;
    let logits = ddx_logits(model, examples)?;
    score_ddx_logits(&logits, examples, threshold, averaging)
}

/// Scores precomputed ddx logits at one threshold.
pub fn score_ddx_logits(
    logits: &[Vec<f32>],
    examples: &[Example],
    threshold: f32,
    averaging: Averaging,
) -> Result<EvalReport, EvalError> {
    let sets = logits
        .iter()
        .map(|l| Ok(predict_ddx_set(l, threshold)?.predicted_set))
        .collect::<Result<Vec<_>, EvalError>>()?;
    let differentials: Vec<&[usize]> = examples.iter().map(|e| e.differential.as_slice()).collect();
    let truths: Vec<usize> = examples.iter().map(|e| e.true_pathology).collect();
    score_ddx(&sets, &differentials, &truths, threshold, averaging)
}

/// One ddx evaluation per threshold; thresholds must be non-increasing.
pub fn threshold_sweep(
    model: &ModelState,
    examples: &[Example],
    thresholds: &[f32],
    averaging: Averaging,
) -> Result<Vec<SweepRow>, EvalError> {
    check_sweep(thresholds)?;
    require_examples(examples)?;
    let logits = ddx_logits(model, examples)?;
    sweep_logits(&logits, examples, thresholds, averaging)
}

fn check_sweep(thresholds: &[f32]) -> Result<(), EvalError> {
    if thresholds.is_empty() {
        return Err(EvalError::Validation("no thresholds given".into()));
    }
    if !thresholds.windows(2).all(|w| w[0] >= w[1]) {
        return Err(EvalError::Validation("thresholds must be sorted in descending order".into()));
    }
    thresholds.iter().try_for_each(|&t| check_threshold(t))
}

pub fn sweep_logits(
    logits: &[Vec<f32>],
    examples: &[Example],
    thresholds: &[f32],
    averaging: Averaging,
) -> Result<Vec<SweepRow>, EvalError> {
    check_sweep(thresholds)?;
    thresholds
        .iter()
        .map(|&t| {
            let r = score_ddx_logits(logits, examples, t, averaging)?;
            Ok(SweepRow {
                threshold: t,
                precision: r.precision,
                recall: r.recall,
                f1: r.f1,
                gtpa: r.gtpa.unwrap_or(0.0),
                mean_set_size: r.mean_set_size.unwrap_or(0.0),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    #[test]
    fn single_true_positive_is_perfect() {
        let m = metrics_from_counts(&counts(1, 0, 0, 0)).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn zero_denominators_give_zero() {
        let m = metrics_from_counts(&counts(0, 5, 5, 0)).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (0.5, 0.0, 0.0, 0.0));
        assert!(metrics_from_counts(&counts(0, 0, 0, 0)).is_err());
    }

    #[test]
    fn gtpa_cases() {
        assert_eq!(gtpa(&[vec![1, 2], vec![0]], &[2, 0]).unwrap(), 1.0);
        assert_eq!(gtpa(&[vec![1], vec![0]], &[1, 3]).unwrap(), 0.5);
        assert!(gtpa(&[vec![1]], &[1, 2]).is_err());
        assert!(gtpa::<Vec<usize>>(&[], &[]).is_err());
    }

    #[test]
    fn ddx_set_edges() {
        let zeros = [0.0; N_PATHOLOGIES];
        assert_eq!(predict_ddx_set(&zeros, 0.0).unwrap().predicted_set.len(), 49);
        // sigmoid(0) is exactly 0.5, so the tie is included.
        assert_eq!(predict_ddx_set(&zeros, 0.5).unwrap().predicted_set.len(), 49);
        assert!(predict_ddx_set(&[-100.0; N_PATHOLOGIES], 0.5).unwrap().predicted_set.is_empty());
        assert!(predict_ddx_set(&[0.0; 48], 0.5).is_err());
        assert!(predict_ddx_set(&zeros, 1.1).is_err());
        assert!(predict_ddx_set(&zeros, -0.1).is_err());
    }

    #[test]
    fn constant_predictor_on_balanced_two_classes() {
        let truths = [0, 0, 1, 1];
        let r = score_pathology(&[0; 4], &truths, 2, Averaging::Macro).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.precision, 0.25);
        assert_eq!(r.recall, 0.5);
        assert!((r.f1 - 2.0 * 0.25 * 0.5 / 0.75).abs() < 1e-15);
        let micro = score_pathology(&[0; 4], &truths, 2, Averaging::Micro).unwrap();
        assert_eq!((micro.precision, micro.recall), (0.5, 0.5));
    }

    #[test]
    fn perfect_predictors() {
        let truths: Vec<usize> = (0..49).collect();
        let r = score_pathology(&truths, &truths, 49, Averaging::Macro).unwrap();
        assert_eq!((r.accuracy, r.f1), (1.0, 1.0));

        let sets = vec![vec![3, 4], vec![7]];
        let r = score_ddx(&sets, &sets, &[4, 7], 0.5, Averaging::Micro).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.gtpa), (1.0, 1.0, 1.0, Some(1.0)));

        let empty: Vec<Vec<usize>> = vec![vec![], vec![]];
        let r = score_ddx(&empty, &sets, &[4, 7], 0.5, Averaging::Micro).unwrap();
        assert_eq!((r.recall, r.gtpa), (0.0, Some(0.0)));
    }

    #[test]
    fn argmax_prefers_the_first_maximum() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, -1.0]), 1);
        assert_eq!(argmax(&[0.0]), 0);
    }

    #[test]
    fn sweep_thresholds_are_checked() {
        assert!(check_sweep(&[]).is_err());
        assert!(check_sweep(&[0.35, 0.5]).is_err());
        assert!(check_sweep(&[0.5, 0.5, 0.0]).is_ok());
    }
}
