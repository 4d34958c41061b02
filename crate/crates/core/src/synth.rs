//! Synthetic cohorts with a known linear-Gaussian generating process.
//!
//! Every task `j` has a latent score
//! `s_j = rho · (w_shared · x) + (1 - rho) · (w_j · x) + noise`, with
//! standard-normal features `x`. Classification tasks threshold their score
//! at the quantile giving the requested positive rate; the final task is a
//! regression on its raw score.
//!
//! Only the first `n_informative` coordinates carry weight. The shared vector
//! covers all of them; task-specific vectors split them round-robin, so two
//! tasks' specific vectors never overlap. All weight vectors have unit norm.
//!
//! One seeded stream is consumed in a fixed order: weights, then features
//! (row-major), then noise (task by task), then the missing-cell mask.

use ndarray::Array2;
use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Cell, Dataset, FeatureStats, OutcomeVector, RawTable, Target};
use crate::error::{Error, Result};
use crate::metrics::{confusion_counts, f1_score, mse_metric, roc_auc, MetricsReport, TaskMetrics};
use crate::rng::seeded;

fn default_balance() -> Vec<f64> {
    vec![0.5, 0.5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_informative: usize,
    /// Fraction of each latent score driven by the shared signal.
    pub rho: f64,
    pub noise_std: f64,
    #[serde(default)]
    pub missing_frac: f64,
    /// Positive rate of each classification task; one entry per task.
    #[serde(default = "default_balance")]
    pub class_balance: Vec<f64>,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_samples < 2 {
            return bad(format!("n_samples must be >= 2, got {}", self.n_samples));
        }
        if self.n_informative == 0 || self.n_informative > self.n_features {
            return bad(format!(
                "need 1 <= n_informative <= n_features, got {} and {}",
                self.n_informative, self.n_features
            ));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!(
                "noise_std must be finite and >= 0, got {}",
                self.noise_std
            ));
        }
        if !(0.0..1.0).contains(&self.missing_frac) {
            return bad(format!(
                "missing_frac must lie in [0, 1), got {}",
                self.missing_frac
            ));
        }
        if let Some(b) = self
            .class_balance
            .iter()
            .find(|b| !(**b > 0.0 && **b < 1.0))
        {
            return bad(format!("class_balance entries must lie in (0, 1), got {b}"));
        }
        Ok(())
    }

    pub fn n_tasks(&self) -> usize {
        self.class_balance.len() + 1
    }
}

/// Weights and thresholds that generated a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub task_names: Vec<String>,
    pub shared_weights: Vec<f64>,
    pub task_specific_weights: Vec<Vec<f64>>,
    /// One per classification task.
    pub thresholds: Vec<f64>,
    pub noise_std: f64,
    pub rho: f64,
}

impl GroundTruth {
    /// Coordinates with a nonzero weight in any vector.
    pub fn informative(&self) -> Vec<usize> {
        (0..self.shared_weights.len())
            .filter(|&d| {
                self.shared_weights[d] != 0.0
                    || self.task_specific_weights.iter().any(|w| w[d] != 0.0)
            })
            .collect()
    }

    /// Effective weight vector of task `j`.
    pub fn task_weights(&self, j: usize) -> Vec<f64> {
        self.shared_weights
            .iter()
            .zip(&self.task_specific_weights[j])
            .map(|(s, t)| self.rho * s + (1.0 - self.rho) * t)
            .collect()
    }

    /// Noise-free latent scores, one vector per task.
    pub fn clean_scores(&self, features: &Array2<f64>) -> Result<Vec<Vec<f64>>> {
        if features.ncols() != self.shared_weights.len() {
            return Err(Error::Shape(format!(
                "ground truth has {} features, data has {}",
                self.shared_weights.len(),
                features.ncols()
            )));
        }
        Ok((0..self.task_specific_weights.len())
            .map(|j| {
                let w = ndarray::Array1::from(self.task_weights(j));
                features.dot(&w).to_vec()
            })
            .collect())
    }
}

/// A generated dataset, its ground truth, and the cells masked as missing.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    /// Complete data (the mask is not applied here).
    pub dataset: Dataset,
    pub truth: GroundTruth,
    /// Noisy latent scores per task.
    pub latent: Vec<Vec<f64>>,
    /// (row, feature) cells to emit as missing, sorted.
    pub mask: Vec<(usize, usize)>,
}

impl SynthOutput {
    /// The dataset as a table, with masked cells missing.
    pub fn to_raw_table(&self) -> RawTable {
        let mut table = self.dataset.to_table();
        for &(i, d) in &self.mask {
            table.rows[i][d] = Cell::Missing;
        }
        table
    }
}

pub fn task_names(n_classification: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=n_classification).map(|j| format!("cls{j}")).collect();
    names.push("reg".into());
    names
}

fn random_weight(rng: &mut crate::rng::Rng) -> f64 {
    let magnitude: f64 = rng.gen_range(0.5..1.5);
    if rng.gen::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}

fn unit(mut w: Vec<f64>) -> Vec<f64> {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        w.iter_mut().for_each(|v| *v /= norm);
    }
    w
}

/// Draws a dataset from `config`. Deterministic in `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let (n, d) = (config.n_samples, config.n_features);
    let n_cls = config.class_balance.len();
    let m = n_cls + 1;
    let mut rng = seeded(config.seed);

    let mut shared = vec![0.0; d];
    let mut specific = vec![vec![0.0; d]; m];
    for w in shared.iter_mut().take(config.n_informative) {
        *w = random_weight(&mut rng);
    }
    for i in 0..config.n_informative {
        specific[i % m][i] = random_weight(&mut rng);
    }
    let shared = unit(shared);
    let specific: Vec<Vec<f64>> = specific.into_iter().map(unit).collect();

    let features = Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal));

    let mut truth = GroundTruth {
        task_names: task_names(n_cls),
        shared_weights: shared,
        task_specific_weights: specific,
        thresholds: Vec::with_capacity(n_cls),
        noise_std: config.noise_std,
        rho: config.rho,
    };
    let mut latent = truth.clean_scores(&features)?;
    for scores in latent.iter_mut() {
        for s in scores.iter_mut() {
            let eps: f64 = rng.sample(StandardNormal);
            *s += config.noise_std * eps;
        }
    }

    let mut outcomes = Vec::with_capacity(m);
    for (j, balance) in config.class_balance.iter().enumerate() {
        let threshold = balance_threshold(&latent[j], *balance);
        truth.thresholds.push(threshold);
        outcomes.push(OutcomeVector {
            task_name: truth.task_names[j].clone(),
            target: Target::Classification {
                num_classes: 2,
                labels: latent[j]
                    .iter()
                    .map(|&s| usize::from(s > threshold))
                    .collect(),
            },
        });
    }
    outcomes.push(OutcomeVector {
        task_name: truth.task_names[n_cls].clone(),
        target: Target::Regression {
            values: latent[n_cls].clone(),
        },
    });

    let mut mask = Vec::new();
    if config.missing_frac > 0.0 {
        let count = (config.missing_frac * (n * d) as f64).round() as usize;
        mask = index::sample(&mut rng, n * d, count)
            .into_iter()
            .map(|c| (c / d, c % d))
            .collect();
        mask.sort_unstable();
    }

    let dataset = Dataset::new(
        features,
        (0..d).map(|i| format!("x{i}")).collect(),
        outcomes,
        vec![FeatureStats::IDENTITY; d],
    )?;
    Ok(SynthOutput {
        dataset,
        truth,
        latent,
        mask,
    })
}

/// Midpoint between the scores either side of the cut that leaves
/// `round(n · balance)` samples (at least 1, at most n - 1) strictly above.
fn balance_threshold(scores: &[f64], balance: f64) -> f64 {
    let n = scores.len();
    let n_pos = ((n as f64 * balance).round() as usize).clamp(1, n - 1);
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = n - n_pos;
    0.5 * (sorted[cut - 1] + sorted[cut])
}

/// Scores the data with the noise-free latent functions: the best any model
/// of this family can do.
pub fn oracle_bayes_metrics(truth: &GroundTruth, dataset: &Dataset) -> Result<MetricsReport> {
    if dataset.n_tasks() != truth.task_specific_weights.len() {
        return Err(Error::Shape(format!(
            "ground truth has {} tasks, data has {}",
            truth.task_specific_weights.len(),
            dataset.n_tasks()
        )));
    }
    let scores = truth.clean_scores(&dataset.features)?;
    let mut tasks = Vec::with_capacity(dataset.n_tasks());
    for (j, outcome) in dataset.outcomes.iter().enumerate() {
        let mut m = TaskMetrics {
            task: outcome.task_name.clone(),
            f1: None,
            auc: None,
            mse: None,
            confusion: None,
            per_class: None,
        };
        match &outcome.target {
            Target::Classification { labels, .. } => {
                let threshold = *truth.thresholds.get(j).ok_or_else(|| {
                    Error::Shape(format!("no threshold for classification task {j}"))
                })?;
                let is_pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
                m.auc = Some(roc_auc(&scores[j], &is_pos)?);
                let pred: Vec<usize> = scores[j]
                    .iter()
                    .map(|&s| usize::from(s > threshold))
                    .collect();
                let c = confusion_counts(&pred, labels, 1)?;
                m.f1 = Some(f1_score(&c));
                m.confusion = Some(c);
            }
            Target::Regression { values } => {
                m.mse = Some(mse_metric(&scores[j], values)?);
            }
        }
        tasks.push(m);
    }
    Ok(MetricsReport { tasks })
}
