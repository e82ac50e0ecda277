//! Threshold-based multi-label inference and per-class / macro
//! precision-recall-F1 reporting.
//!
//! ```
//! use defemo::eval::predict_label_set;
//!
//! // strictly greater than the threshold; ties are excluded
//! let set = predict_label_set(&[0.9, 0.2, 0.31], 0.3);
//! assert_eq!(set.into_iter().collect::<Vec<_>>(), vec![0, 2]);
//! assert!(predict_label_set(&[0.3, 0.1], 0.3).is_empty());
//! ```

use crate::data::DefinitionTable;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{self, EncoderConfig, PaddedBatch};
use crate::params::ParamSet;
use crate::tensor::{Scalar, Tensor};
use crate::tokenizer::{self, Vocabulary};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

pub type LabelSet = BTreeSet<usize>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: usize,
    pub name: String,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub threshold: f64,
    pub macro_avg: MacroMetrics,
    pub std_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricsReport {
    /// CSV rows shaped like the per-emotion results table: one row per
    /// class, then macro-average and std rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,precision,recall,f1\n");
        for c in &self.per_class {
            out.push_str(&format!("{},{:.4},{:.4},{:.4}\n", c.name, c.precision, c.recall, c.f1));
        }
        out.push_str(&format!(
            "macro-average,{:.4},{:.4},{:.4}\n",
            self.macro_avg.precision, self.macro_avg.recall, self.macro_avg.f1
        ));
        out.push_str(&format!("std,,,{:.4}\n", self.std_f1));
        out
    }
}

/// `{i : probs[i] > threshold}` — strict inequality, possibly empty.
pub fn predict_label_set(probs: &[f64], threshold: f64) -> LabelSet {
    probs
        .iter()
        .enumerate()
        .filter(|&(_, &p)| p > threshold)
        .map(|(i, _)| i)
        .collect()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class counts over parallel gold/predicted label sets. The zero-
/// division convention is metric = 0, so rare and absent classes stay
/// defined in the macro average.
pub fn per_class_prf(
    golds: &[LabelSet],
    preds: &[LabelSet],
    num_labels: usize,
    names: Option<&[String]>,
) -> Result<Vec<ClassMetrics>> {
    if golds.len() != preds.len() {
        return Err(Error::Data(format!(
            "{} gold sets vs {} prediction sets",
            golds.len(),
            preds.len()
        )));
    }
    for set in golds.iter().chain(preds) {
        if let Some(&bad) = set.iter().find(|&&l| l >= num_labels) {
            return Err(Error::Data(format!("label {bad} out of range (L = {num_labels})")));
        }
    }
    let mut out = Vec::with_capacity(num_labels);
    for c in 0..num_labels {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for (g, p) in golds.iter().zip(preds) {
            match (g.contains(&c), p.contains(&c)) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        out.push(ClassMetrics {
            label: c,
            name: names.map(|n| n[c].clone()).unwrap_or_else(|| format!("class{c}")),
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            support: tp + fn_,
            precision,
            recall,
            f1,
        });
    }
    Ok(out)
}

/// Assemble a report; macro averages run over all `num_labels` classes.
pub fn report_from_sets(
    split: &str,
    threshold: f64,
    golds: &[LabelSet],
    preds: &[LabelSet],
    num_labels: usize,
    names: Option<&[String]>,
) -> Result<MetricsReport> {
    let per_class = per_class_prf(golds, preds, num_labels, names)?;
    let n = per_class.len() as f64;
    let macro_avg = MacroMetrics {
        precision: per_class.iter().map(|c| c.precision).sum::<f64>() / n,
        recall: per_class.iter().map(|c| c.recall).sum::<f64>() / n,
        f1: per_class.iter().map(|c| c.f1).sum::<f64>() / n,
    };
    let var =
        per_class.iter().map(|c| (c.f1 - macro_avg.f1).powi(2)).sum::<f64>() / n;
    Ok(MetricsReport {
        split: split.to_string(),
        threshold,
        macro_avg,
        std_f1: var.sqrt(),
        per_class,
    })
}

/// Eval-mode forward over a split: sigmoid probabilities per label, then
/// threshold inference (or argmax when `fallback_argmax` is set, for
/// single-label transfer evaluation).
pub fn predict_probs<T: Scalar>(
    params: &ParamSet<T>,
    config: &EncoderConfig,
    vocab: &Vocabulary,
    texts: &[String],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    if vocab.len() != config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary size {} does not match model vocab_size {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(batch_size.max(1)) {
        let seqs: Vec<_> = chunk
            .iter()
            .map(|t| tokenizer::encode_single(t, vocab, config.max_len))
            .collect::<Result<_>>()?;
        let batch = PaddedBatch::from_sequences(&seqs, config.max_len)?;
        let mut g = Graph::new(false);
        let bound = params.bind(&mut g);
        let hidden = model::encode(&mut g, &bound, config, &batch)?;
        let pooled = model::pool(&mut g, &bound, hidden, &batch)?;
        let logits = model::emotion_logits(&mut g, &bound, config, pooled, 0)?;
        let probs = g.sigmoid(logits)?;
        for row in g.value(probs).data().chunks(config.num_labels) {
            out.push(row.iter().map(|v| v.as_f64()).collect());
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InferenceMode {
    /// Labels whose probability strictly exceeds the threshold.
    Threshold,
    /// Single best label (transfer evaluation on single-label targets).
    Argmax,
}

pub fn predict_sets(probs: &[Vec<f64>], threshold: f64, mode: InferenceMode) -> Vec<LabelSet> {
    probs
        .iter()
        .map(|p| match mode {
            InferenceMode::Threshold => predict_label_set(p, threshold),
            InferenceMode::Argmax => {
                let best = p
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                [best].into_iter().collect()
            }
        })
        .collect()
}

/// Full evaluation of a model over a labeled split.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<T: Scalar>(
    params: &ParamSet<T>,
    config: &EncoderConfig,
    vocab: &Vocabulary,
    texts: &[String],
    golds: &[LabelSet],
    defs: Option<&DefinitionTable>,
    split: &str,
    threshold: f64,
    mode: InferenceMode,
) -> Result<MetricsReport> {
    if texts.is_empty() {
        return Err(Error::Data("empty evaluation split".into()));
    }
    if let Some(d) = defs {
        if d.num_labels() != config.num_labels {
            return Err(Error::Config(format!(
                "definitions list {} labels but the model has {}",
                d.num_labels(),
                config.num_labels
            )));
        }
    }
    let probs = predict_probs(params, config, vocab, texts, 32)?;
    let preds = predict_sets(&probs, threshold, mode);
    let names: Option<Vec<String>> = defs.map(|d| d.names().to_vec());
    report_from_sets(split, threshold, golds, &preds, config.num_labels, names.as_deref())
}

/// Sigmoid probabilities as a plain function of logits (no graph), used by
/// report tooling.
pub fn sigmoid_probs<T: Scalar>(logits: &Tensor<T>) -> Vec<f64> {
    logits.data().iter().map(|&z| 1.0 / (1.0 + (-z.as_f64()).exp())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(labels: &[usize]) -> LabelSet {
        labels.iter().copied().collect()
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(predict_label_set(&[0.9, 0.2, 0.31], 0.3), set(&[0, 2]));
        assert_eq!(predict_label_set(&[0.1, 0.1, 0.1], 0.3), set(&[]));
        assert_eq!(predict_label_set(&[0.3], 0.3), set(&[]));
    }

    #[test]
    fn hand_case_macro_f1_half() {
        // 1 sample, L=2, gold {A}, pred {A,B}
        let m = per_class_prf(&[set(&[0])], &[set(&[0, 1])], 2, None).unwrap();
        assert_eq!(m[0].f1, 1.0);
        assert_eq!(m[1].f1, 0.0);
        let report = report_from_sets("t", 0.3, &[set(&[0])], &[set(&[0, 1])], 2, None).unwrap();
        assert_eq!(report.macro_avg.f1, 0.5);
    }

    #[test]
    fn perfect_predictions() {
        let golds = vec![set(&[0]), set(&[1, 2])];
        let m = per_class_prf(&golds, &golds, 4, None).unwrap();
        for (c, pc) in m.iter().enumerate().take(3) {
            assert_eq!(pc.f1, 1.0, "class {c}");
        }
        // class 3 is absent everywhere: zero-denominator convention
        assert_eq!(m[3].f1, 0.0);
        assert_eq!(m[3].support, 0);
    }

    #[test]
    fn out_of_range_label_rejected() {
        assert!(per_class_prf(&[set(&[5])], &[set(&[0])], 3, None).is_err());
    }

    #[test]
    fn macro_f1_invariant_under_permutation() {
        let golds = vec![set(&[0]), set(&[1]), set(&[0, 2])];
        let preds = vec![set(&[0, 1]), set(&[1]), set(&[2])];
        let a = report_from_sets("t", 0.3, &golds, &preds, 3, None).unwrap();
        let perm = [2usize, 0, 1];
        let golds_p: Vec<_> = perm.iter().map(|&i| golds[i].clone()).collect();
        let preds_p: Vec<_> = perm.iter().map(|&i| preds[i].clone()).collect();
        let b = report_from_sets("t", 0.3, &golds_p, &preds_p, 3, None).unwrap();
        assert_eq!(a.macro_avg, b.macro_avg);
    }

    #[test]
    fn argmax_mode_yields_singletons() {
        let probs = vec![vec![0.1, 0.8, 0.3], vec![0.2, 0.2, 0.2]];
        let preds = predict_sets(&probs, 0.3, InferenceMode::Argmax);
        assert_eq!(preds[0], set(&[1]));
        assert_eq!(preds[0].len(), 1);
        assert_eq!(preds[1].len(), 1);
    }

    #[test]
    fn micro_accuracy_cross_check_for_singletons() {
        // for single-label golds and argmax-as-set predictions, exact set
        // match fraction equals independently computed accuracy
        let golds = [set(&[0]), set(&[1]), set(&[2]), set(&[1])];
        let preds = vec![set(&[0]), set(&[2]), set(&[2]), set(&[1])];
        let match_fraction =
            golds.iter().zip(&preds).filter(|(g, p)| g == p).count() as f64 / golds.len() as f64;
        let accuracy = golds
            .iter()
            .zip(&preds)
            .filter(|(g, p)| g.iter().next() == p.iter().next())
            .count() as f64
            / golds.len() as f64;
        assert_eq!(match_fraction, accuracy);
        assert_eq!(match_fraction, 0.75);
    }

    #[test]
    fn csv_has_macro_and_std_rows() {
        let report =
            report_from_sets("test", 0.3, &[set(&[0])], &[set(&[0])], 2, None).unwrap();
        let csv = report.to_csv();
        assert!(csv.contains("macro-average"));
        assert!(csv.lines().last().unwrap().starts_with("std"));
    }
}
