//! F1, ROC AUC and MSE evaluation.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::Target;
use crate::error::{Error, Result};
use crate::network::{loss_reg, HeadOutput};

/// Binary confusion counts relative to a designated positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// One-vs-rest counts of `pred_labels` against `true_labels`.
pub fn confusion_counts(
    pred_labels: &[usize],
    true_labels: &[usize],
    positive_class: usize,
) -> Result<ConfusionCounts> {
    if pred_labels.len() != true_labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            pred_labels.len(),
            true_labels.len()
        )));
    }
    if pred_labels.is_empty() {
        return Err(Error::InvalidArgument(
            "confusion counts of zero samples".into(),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred_labels.iter().zip(true_labels) {
        match (p == positive_class, t == positive_class) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `2tp / (2tp + fp + fn)`, or 0 when nothing was predicted or present.
pub fn f1_score(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

/// Area under the ROC curve as the Mann-Whitney statistic.
///
/// Equals the probability that a random positive outscores a random negative,
/// with ties counting one half. Ranks are averaged over tied groups, so the
/// numerator is an exact half-integer.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(
            "ROC AUC needs both positive and negative samples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the positive rank sum keeps tied (half-integer) ranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1..=end share the average (start + 1 + end) / 2
        let twice_avg = (start + 1 + end) as u128;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i]).count() as u128;
        twice_rank_sum += twice_avg * pos_in_group;
        start = end;
    }
    let n_pos = n_pos as u128;
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg as u128) as f64)
}

/// Mean squared error; the same function as the regression loss.
pub fn mse_metric(preds: &[f64], targets: &[f64]) -> Result<f64> {
    loss_reg(preds, targets)
}

/// Argmax per row; ties resolve to the lowest class index.
pub fn argmax_rows(probs: &Array2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Metrics for one task. Classification tasks fill `f1`/`auc`, regression
/// tasks fill `mse`. `auc` is absent when the evaluated labels lack a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionCounts>,
    /// One-vs-rest (f1, auc) per class, multi-class tasks only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class: Option<Vec<ClassMetrics>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub f1: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tasks: Vec<TaskMetrics>,
}

impl MetricsReport {
    pub fn task(&self, name: &str) -> Option<&TaskMetrics> {
        self.tasks.iter().find(|t| t.task == name)
    }
}

/// Positive class used for binary F1/AUC.
pub const POSITIVE_CLASS: usize = 1;

/// Scores one head's predictions against its targets.
///
/// Binary tasks report F1 and AUC of class 1 (hard labels by argmax, scores
/// from the class-1 probability). Tasks with more classes report the macro
/// average of the one-vs-rest values plus the per-class breakdown.
pub fn evaluate_task(task: &str, prediction: &HeadOutput, target: &Target) -> Result<TaskMetrics> {
    let mut m = TaskMetrics {
        task: task.to_string(),
        f1: None,
        auc: None,
        mse: None,
        confusion: None,
        per_class: None,
    };
    match (prediction, target) {
        (
            HeadOutput::Probabilities(probs),
            Target::Classification {
                num_classes,
                labels,
            },
        ) => {
            if probs.ncols() != *num_classes || probs.nrows() != labels.len() {
                return Err(Error::Shape(format!(
                    "task `{task}`: predictions {:?} vs {} labels of {num_classes} classes",
                    probs.dim(),
                    labels.len()
                )));
            }
            let pred = argmax_rows(probs);
            let one_vs_rest = |class: usize| -> Result<(ConfusionCounts, f64, Option<f64>)> {
                let c = confusion_counts(&pred, labels, class)?;
                let is_pos: Vec<bool> = labels.iter().map(|&l| l == class).collect();
                let scores: Vec<f64> = probs.column(class).to_vec();
                let auc = match roc_auc(&scores, &is_pos) {
                    Ok(a) => Some(a),
                    Err(Error::InvalidArgument(_)) => None,
                    Err(e) => return Err(e),
                };
                Ok((c, f1_score(&c), auc))
            };
            if *num_classes == 2 {
                let (c, f1, auc) = one_vs_rest(POSITIVE_CLASS)?;
                m.confusion = Some(c);
                m.f1 = Some(f1);
                m.auc = auc;
            } else {
                let mut per_class = Vec::with_capacity(*num_classes);
                for class in 0..*num_classes {
                    let (_, f1, auc) = one_vs_rest(class)?;
                    per_class.push(ClassMetrics { class, f1, auc });
                }
                m.f1 = Some(per_class.iter().map(|c| c.f1).sum::<f64>() / *num_classes as f64);
                let aucs: Vec<f64> = per_class.iter().filter_map(|c| c.auc).collect();
                if !aucs.is_empty() {
                    m.auc = Some(aucs.iter().sum::<f64>() / aucs.len() as f64);
                }
                m.per_class = Some(per_class);
            }
        }
        (HeadOutput::Regression(preds), Target::Regression { values }) => {
            m.mse = Some(mse_metric(preds.as_slice().expect("contiguous"), values)?);
        }
        _ => {
            return Err(Error::Shape(format!(
                "task `{task}`: head output kind does not match target kind"
            )))
        }
    }
    Ok(m)
}
