//! Mini-batch training, k-fold cross-validation and grid search.

use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{kfold_split, Dataset, FoldPlan, Normalizer, Target};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_task, TaskMetrics};
use crate::network::{
    backward, evaluate_loss, forward, init_params, loss_mtl, predict, task_losses, HeadOutput,
    LossWeights, ModelState, NetworkTopology,
};
use crate::optim::{cosine_lr, AdamState, ScheduleConfig};
use crate::rng::{seeded, seeded_stream};

fn default_batch_size() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub topology: NetworkTopology,
    pub loss_weights: LossWeights,
    pub lr0: f64,
    #[serde(default)]
    pub lr_min: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub seed: u64,
    /// Fit normalization statistics on all rows instead of training rows only.
    #[serde(default)]
    pub leaky_stats: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.loss_weights.len() != self.topology.heads.len() {
            return Err(Error::Config(format!(
                "{} loss weights for {} heads",
                self.loss_weights.len(),
                self.topology.heads.len()
            )));
        }
        self.loss_weights.validate()?;
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        self.validate()?;
        if self.topology.input_dim != dataset.n_features() {
            return Err(Error::Config(format!(
                "topology expects {} inputs, dataset has {} features",
                self.topology.input_dim,
                dataset.n_features()
            )));
        }
        self.topology.check_targets(&dataset.targets())
    }

    /// The architecture-matched single-task variant for `task`: same trunk,
    /// only that task's head, unit loss weight.
    pub fn single_task(&self, task: usize) -> Result<TrainConfig> {
        if task >= self.topology.heads.len() {
            return Err(Error::InvalidArgument(format!("no head {task}")));
        }
        let mut cfg = self.clone();
        cfg.topology.heads = vec![self.topology.heads[task].clone()];
        cfg.loss_weights = LossWeights(vec![1.0]);
        Ok(cfg)
    }
}

/// Training loss over the full training set at the end of an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub task_losses: Vec<f64>,
}

fn select_targets(targets: &[Target], rows: &[usize]) -> Vec<Target> {
    targets.iter().map(|t| t.select(rows)).collect()
}

/// Trains a fresh model with Adam and a per-step cosine schedule.
///
/// Runs `epochs × ⌈N / batch_size⌉` steps. Rows are reshuffled every epoch;
/// the last batch of an epoch keeps whatever rows remain and its losses are
/// averaged over its own size. Deterministic in `(dataset, config)`.
pub fn train_model(
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(ModelState, Vec<EpochRecord>)> {
    config.check_dataset(dataset)?;
    let n = dataset.n_samples();
    let batches = n.div_ceil(config.batch_size);
    let schedule = ScheduleConfig {
        lr0: config.lr0,
        lr_min: config.lr_min,
        total_steps: config.epochs * batches,
    };
    schedule.validate()?;

    let targets = dataset.targets();
    let mut state = init_params(&config.topology, config.seed)?;
    let mut adam = AdamState::new(&state.params);
    let mut rng = seeded_stream(config.seed, 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for rows in order.chunks(config.batch_size) {
            let x = dataset.features.select(Axis(0), rows);
            let y = select_targets(&targets, rows);
            let (outputs, cache) = forward(&state, &x)?;
            let loss = loss_mtl(&task_losses(&outputs, &y)?, &config.loss_weights)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let grads = backward(&state, &cache, &y, &config.loss_weights)?;
            let lr = cosine_lr(step, &schedule)?;
            adam.step(&mut state.params, &grads, lr, config.weight_decay)?;
            step += 1;
        }
        let (total_loss, task_losses) =
            evaluate_loss(&state, &dataset.features, &targets, &config.loss_weights)?;
        if !total_loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        history.push(EpochRecord {
            epoch,
            total_loss,
            task_losses,
        });
    }
    Ok((state, history))
}

/// Mean and population standard deviation of a metric across folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    /// Number of folds where the metric was defined.
    pub n: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Option<MetricSummary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MetricSummary {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<MetricSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<MetricSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<MetricSummary>,
}

impl TaskSummary {
    fn from_folds(task: usize, folds: &[FoldResult]) -> TaskSummary {
        let collect = |f: fn(&TaskMetrics) -> Option<f64>| -> Option<MetricSummary> {
            let values: Vec<f64> = folds.iter().filter_map(|r| f(&r.tasks[task])).collect();
            MetricSummary::of(&values)
        };
        TaskSummary {
            task: folds[0].tasks[task].task.clone(),
            f1: collect(|m| m.f1),
            auc: collect(|m| m.auc),
            mse: collect(|m| m.mse),
        }
    }

    /// The selection metric: mean AUC for classification, negative mean MSE
    /// for regression. Higher is better.
    pub fn selection_score(&self) -> Option<f64> {
        match (self.auc, self.mse) {
            (Some(auc), _) => Some(auc.mean),
            (None, Some(mse)) => Some(-mse.mean),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub final_train_loss: f64,
    pub tasks: Vec<TaskMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub folds: Vec<FoldResult>,
    /// Fold-averaged metrics.
    pub summary: Vec<TaskSummary>,
    /// Metrics of the out-of-fold predictions pooled over all folds.
    pub pooled: Vec<TaskMetrics>,
}

impl CvReport {
    pub fn task_summary(&self, name: &str) -> Option<&TaskSummary> {
        self.summary.iter().find(|s| s.task == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Fixed-width table: F1 and AUC (percent) per classification task, MSE
    /// per regression task, each as fold mean ± std.
    pub fn render_table(&self, label: &str) -> String {
        render_table(&[(label, self)])
    }
}

/// Renders several reports over the same tasks as rows of one table.
pub fn render_table(rows: &[(&str, &CvReport)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let mut header = vec![format!("{:<24}", "Model")];
    let mut sub = vec![format!("{:<24}", "")];
    let kinds: Vec<bool> = first.summary.iter().map(|s| s.mse.is_none()).collect();
    for (s, &is_cls) in first.summary.iter().zip(&kinds) {
        if is_cls {
            header.push(format!("{:^29}", s.task));
            sub.push(format!("{:>14} {:>14}", "F1", "AUC"));
        } else {
            header.push(format!("{:^16}", s.task));
            sub.push(format!("{:>16}", "MSE"));
        }
    }
    let mut out = String::new();
    let line = |cells: &[String]| cells.join(" | ").trim_end().to_string();
    let _ = writeln!(out, "{}", line(&header));
    let _ = writeln!(out, "{}", line(&sub));
    let _ = writeln!(out, "{}", "-".repeat(line(&sub).len()));
    let pct = |m: Option<MetricSummary>| match m {
        Some(m) => format!("{:.1} ± {:.1}", 100.0 * m.mean, 100.0 * m.std),
        None => "n/a".into(),
    };
    for (label, report) in rows {
        let mut cells = vec![format!("{:<24}", label)];
        for (s, &is_cls) in report.summary.iter().zip(&kinds) {
            if is_cls {
                cells.push(format!("{:>14} {:>14}", pct(s.f1), pct(s.auc)));
            } else {
                let mse = match s.mse {
                    Some(m) => format!("{:.3} ± {:.3}", m.mean, m.std),
                    None => "n/a".into(),
                };
                cells.push(format!("{mse:>16}"));
            }
        }
        let _ = writeln!(out, "{}", line(&cells));
    }
    out
}

/// Seed for the model trained on `fold`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(fold as u64)
}

/// Normalizer for a fold: fitted on its training rows, or on every row when
/// `leaky` is set.
pub fn fold_normalizer(
    dataset: &Dataset,
    plan: &FoldPlan,
    fold: usize,
    leaky: bool,
) -> Result<Normalizer> {
    let rows = if leaky {
        (0..dataset.n_samples()).collect()
    } else {
        plan.train_indices(fold)
    };
    Normalizer::fit(&dataset.features, &rows)
}

struct FoldOutcome {
    result: FoldResult,
    test_rows: Vec<usize>,
    predictions: Vec<HeadOutput>,
}

fn run_fold(
    dataset: &Dataset,
    config: &TrainConfig,
    plan: &FoldPlan,
    fold: usize,
    seed: u64,
) -> Result<FoldOutcome> {
    let norm = fold_normalizer(dataset, plan, fold, config.leaky_stats)?;
    let normalized = dataset.with_features(norm.apply(&dataset.features)?, norm.stats.clone());
    let train_rows = plan.train_indices(fold);
    let test_rows = plan.test_indices(fold);
    let train = normalized.select_rows(&train_rows);
    let test = normalized.select_rows(&test_rows);

    let mut cfg = config.clone();
    cfg.seed = fold_seed(seed, fold);
    let (state, history) = train_model(&train, &cfg)?;
    let predictions = predict(&state, &test.features)?;
    let tasks = test
        .outcomes
        .iter()
        .zip(&predictions)
        .map(|(o, p)| evaluate_task(&o.task_name, p, &o.target))
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldOutcome {
        result: FoldResult {
            fold,
            seed: cfg.seed,
            n_train: train_rows.len(),
            n_test: test_rows.len(),
            final_train_loss: history.last().map_or(f64::NAN, |h| h.total_loss),
            tasks,
        },
        test_rows,
        predictions,
    })
}

fn pool(dataset: &Dataset, outcomes: &[FoldOutcome]) -> Result<Vec<TaskMetrics>> {
    let n = dataset.n_samples();
    let mut pooled = Vec::with_capacity(dataset.n_tasks());
    for (j, o) in dataset.outcomes.iter().enumerate() {
        let merged = match &outcomes[0].predictions[j] {
            HeadOutput::Probabilities(p) => {
                let mut all = Array2::zeros((n, p.ncols()));
                for f in outcomes {
                    let HeadOutput::Probabilities(p) = &f.predictions[j] else {
                        unreachable!("head kinds are fixed by the topology")
                    };
                    for (r, &row) in f.test_rows.iter().enumerate() {
                        all.row_mut(row).assign(&p.row(r));
                    }
                }
                HeadOutput::Probabilities(all)
            }
            HeadOutput::Regression(_) => {
                let mut all = ndarray::Array1::zeros(n);
                for f in outcomes {
                    let HeadOutput::Regression(v) = &f.predictions[j] else {
                        unreachable!("head kinds are fixed by the topology")
                    };
                    for (r, &row) in f.test_rows.iter().enumerate() {
                        all[row] = v[r];
                    }
                }
                HeadOutput::Regression(all)
            }
        };
        pooled.push(evaluate_task(&o.task_name, &merged, &o.target)?);
    }
    Ok(pooled)
}

/// k-fold cross-validation of `config`.
///
/// Each fold normalizes features with statistics from its own training rows
/// (all rows under `leaky_stats`), trains from seed
/// `seed · 1000003 + fold`, and scores every task on its held-out rows.
/// Folds run in parallel; results are assembled in fold order.
pub fn cross_validate(
    dataset: &Dataset,
    config: &TrainConfig,
    k: usize,
    seed: u64,
) -> Result<CvReport> {
    config.check_dataset(dataset)?;
    let plan = kfold_split(dataset.n_samples(), k, seed)?;
    let outcomes = (0..k)
        .into_par_iter()
        .map(|fold| run_fold(dataset, config, &plan, fold, seed))
        .collect::<Result<Vec<_>>>()?;
    let pooled = pool(dataset, &outcomes)?;
    let folds: Vec<FoldResult> = outcomes.into_iter().map(|o| o.result).collect();
    let summary = (0..dataset.n_tasks())
        .map(|t| TaskSummary::from_folds(t, &folds))
        .collect();
    Ok(CvReport {
        k,
        seed,
        config: config.clone(),
        folds,
        summary,
        pooled,
    })
}

/// Cross-validates the architecture-matched single-task model of `task`.
pub fn cross_validate_single_task(
    dataset: &Dataset,
    config: &TrainConfig,
    task: usize,
    k: usize,
    seed: u64,
) -> Result<CvReport> {
    let cfg = config.single_task(task)?;
    cross_validate(&dataset.select_tasks(&[task]), &cfg, k, seed)
}

/// Loss weights tried for non-primary tasks when a search space lists none.
pub const DEFAULT_AUX_WEIGHTS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

fn default_search_batch() -> usize {
    64
}

/// Candidate hyperparameters. Every layer in the trunk (or a head) has the
/// same width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub trunk_depths: Vec<usize>,
    pub trunk_widths: Vec<usize>,
    pub head_depths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub lr0: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub epochs: Vec<usize>,
    /// Loss-weight vectors to try. Empty means every combination of
    /// [`DEFAULT_AUX_WEIGHTS`] for the other tasks with the primary at 1.
    #[serde(default)]
    pub loss_weights: Vec<Vec<f64>>,
    #[serde(default)]
    pub lr_min: f64,
    #[serde(default = "default_search_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub leaky_stats: bool,
    pub budget: usize,
    pub primary_task: String,
    pub seed: u64,
}

impl SearchSpace {
    /// Default multi-task ranges: trunk 1–4 layers of
    /// 64–512 units, heads 1–3 layers of 64–256 units, learning rate
    /// {5e-3, 1e-2, 2e-2}, weight decay {1e-1, 1e-2, 1e-3}, {20, 50, 100}
    /// epochs, batch 64.
    pub fn cohort_mtl(primary_task: &str, budget: usize, seed: u64) -> SearchSpace {
        SearchSpace {
            trunk_depths: vec![1, 2, 3, 4],
            trunk_widths: vec![64, 128, 256, 512],
            head_depths: vec![1, 2, 3],
            head_widths: vec![64, 128, 256],
            lr0: vec![5e-3, 1e-2, 2e-2],
            weight_decay: vec![1e-1, 1e-2, 1e-3],
            epochs: vec![20, 50, 100],
            loss_weights: vec![],
            lr_min: 0.0,
            batch_size: 64,
            leaky_stats: false,
            budget,
            primary_task: primary_task.to_string(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let lists = [
            ("trunk_depths", self.trunk_depths.is_empty()),
            ("trunk_widths", self.trunk_widths.is_empty()),
            ("head_depths", self.head_depths.is_empty()),
            ("head_widths", self.head_widths.is_empty()),
            ("lr0", self.lr0.is_empty()),
            ("weight_decay", self.weight_decay.is_empty()),
            ("epochs", self.epochs.is_empty()),
        ];
        if let Some((name, _)) = lists.iter().find(|(_, empty)| *empty) {
            return Err(Error::Config(format!(
                "search space list `{name}` is empty"
            )));
        }
        if self.budget == 0 {
            return Err(Error::Config("search budget must be >= 1".into()));
        }
        Ok(())
    }

    fn weight_grid(&self, n_tasks: usize, primary: usize) -> Vec<Vec<f64>> {
        if !self.loss_weights.is_empty() {
            return self.loss_weights.clone();
        }
        let mut grid = vec![vec![]];
        for t in 0..n_tasks {
            let choices: &[f64] = if t == primary {
                &[1.0]
            } else {
                &DEFAULT_AUX_WEIGHTS
            };
            grid = grid
                .into_iter()
                .flat_map(|prefix: Vec<f64>| {
                    choices.iter().map(move |&c| {
                        let mut v = prefix.clone();
                        v.push(c);
                        v
                    })
                })
                .collect();
        }
        grid
    }

    /// The full Cartesian product in enumeration order. A zero-depth trunk
    /// or head ignores its width list, so only its first width is kept.
    pub fn enumerate(&self, dataset: &Dataset) -> Result<Vec<TrainConfig>> {
        self.validate()?;
        let primary = dataset.task_index(&self.primary_task).ok_or_else(|| {
            Error::Config(format!(
                "unknown primary task `{}`; tasks are {:?}",
                self.primary_task,
                dataset.task_names()
            ))
        })?;
        let targets = dataset.targets();
        let weights = self.weight_grid(dataset.n_tasks(), primary);
        let mut out = Vec::new();
        for &td in &self.trunk_depths {
            for (twi, &tw) in self.trunk_widths.iter().enumerate() {
                if td == 0 && twi > 0 {
                    continue;
                }
                for &hd in &self.head_depths {
                    for (hwi, &hw) in self.head_widths.iter().enumerate() {
                        if hd == 0 && hwi > 0 {
                            continue;
                        }
                        let topology = NetworkTopology::uniform(
                            dataset.n_features(),
                            &vec![tw; td],
                            &vec![hw; hd],
                            &targets,
                        );
                        for &lr0 in &self.lr0 {
                            for &wd in &self.weight_decay {
                                for &epochs in &self.epochs {
                                    for lw in &weights {
                                        out.push(TrainConfig {
                                            topology: topology.clone(),
                                            loss_weights: LossWeights(lw.clone()),
                                            lr0,
                                            lr_min: self.lr_min.min(lr0),
                                            weight_decay: wd,
                                            epochs,
                                            batch_size: self.batch_size,
                                            seed: self.seed,
                                            leaky_stats: self.leaky_stats,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// Position in the full enumeration.
    pub index: usize,
    pub parameter_count: usize,
    pub config: TrainConfig,
    pub summary: Vec<TaskSummary>,
    /// Selection metric of the primary task.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: TrainConfig,
    pub report: CvReport,
    pub trials: Vec<TrialRecord>,
}

/// Picks the winning trial by the primary task's metric alone. Ties go to
/// the smaller model, then to the earlier enumeration index.
pub fn select_best(trials: &[TrialRecord], primary: usize) -> Option<usize> {
    let score = |t: &TrialRecord| {
        t.summary
            .get(primary)
            .and_then(TaskSummary::selection_score)
            .unwrap_or(f64::NEG_INFINITY)
    };
    (0..trials.len()).min_by(|&a, &b| {
        let (ta, tb) = (&trials[a], &trials[b]);
        score(tb)
            .total_cmp(&score(ta))
            .then(ta.parameter_count.cmp(&tb.parameter_count))
            .then(ta.index.cmp(&tb.index))
    })
}

/// Cross-validates every configuration of the space (or `budget` of them,
/// sampled without replacement, when the product is larger) and returns the
/// winner by the primary task's metric.
pub fn grid_search(dataset: &Dataset, space: &SearchSpace, k: usize) -> Result<GridSearchResult> {
    let configs = space.enumerate(dataset)?;
    if configs.is_empty() {
        return Err(Error::Config("search space is empty".into()));
    }
    let primary = dataset
        .task_index(&space.primary_task)
        .expect("checked by enumerate");
    let chosen: Vec<usize> = if configs.len() > space.budget {
        let mut picked =
            index::sample(&mut seeded(space.seed), configs.len(), space.budget).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..configs.len()).collect()
    };

    let reports = chosen
        .par_iter()
        .map(|&i| cross_validate(dataset, &configs[i], k, space.seed))
        .collect::<Result<Vec<_>>>()?;

    let trials: Vec<TrialRecord> = chosen
        .iter()
        .zip(&reports)
        .map(|(&i, report)| TrialRecord {
            index: i,
            parameter_count: configs[i].topology.parameter_count(),
            config: configs[i].clone(),
            score: report.summary[primary].selection_score(),
            summary: report.summary.clone(),
        })
        .collect();
    let best = select_best(&trials, primary).expect("at least one trial");
    Ok(GridSearchResult {
        best: trials[best].config.clone(),
        report: reports[best].clone(),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{HeadSpec, OutputSpec};
    use crate::synth::{generate, SynthConfig};

    fn small_data(n: usize, seed: u64) -> Dataset {
        generate(&SynthConfig {
            n_samples: n,
            n_features: 5,
            n_informative: 3,
            rho: 0.8,
            noise_std: 0.2,
            missing_frac: 0.0,
            class_balance: vec![0.5, 0.4],
            seed,
        })
        .unwrap()
        .dataset
    }

    fn config_for(ds: &Dataset, epochs: usize) -> TrainConfig {
        TrainConfig {
            topology: NetworkTopology::uniform(ds.n_features(), &[8], &[4], &ds.targets()),
            loss_weights: LossWeights::uniform(ds.n_tasks()),
            lr0: 0.01,
            lr_min: 0.0,
            weight_decay: 0.0,
            epochs,
            batch_size: 16,
            seed: 5,
            leaky_stats: false,
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let ds = small_data(40, 1);
        let cfg = config_for(&ds, 0);
        assert!(matches!(train_model(&ds, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let ds = small_data(40, 1);
        let mut cfg = config_for(&ds, 1);
        cfg.lr0 = 0.0;
        cfg.weight_decay = 0.1;
        let (state, _) = train_model(&ds, &cfg).unwrap();
        assert_eq!(state, init_params(&cfg.topology, cfg.seed).unwrap());
    }

    #[test]
    fn deterministic_training() {
        let ds = small_data(50, 2);
        let cfg = config_for(&ds, 3);
        let (a, ha) = train_model(&ds, &cfg).unwrap();
        let (b, hb) = train_model(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }

    #[test]
    fn history_total_is_weighted_sum() {
        let ds = small_data(50, 3);
        let mut cfg = config_for(&ds, 4);
        cfg.loss_weights = LossWeights(vec![0.5, 2.0, 0.25]);
        let (_, history) = train_model(&ds, &cfg).unwrap();
        assert_eq!(history.len(), 4);
        for h in history {
            let sum: f64 = h
                .task_losses
                .iter()
                .zip(&cfg.loss_weights.0)
                .map(|(l, w)| l * w)
                .sum();
            assert!((h.total_loss - sum).abs() < 1e-9);
        }
    }

    #[test]
    fn head_task_mismatch() {
        let ds = small_data(30, 1);
        let mut cfg = config_for(&ds, 1);
        cfg.topology.heads.pop();
        cfg.loss_weights.0.pop();
        assert!(train_model(&ds, &cfg).is_err());
        let mut cfg = config_for(&ds, 1);
        cfg.topology.heads[0] = HeadSpec {
            hidden_layers: vec![],
            output: OutputSpec::Regression,
        };
        assert!(train_model(&ds, &cfg).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let ds = small_data(30, 1);
        let mut cfg = config_for(&ds, 50);
        cfg.lr0 = 1e300;
        cfg.lr_min = 1e300;
        match train_model(&ds, &cfg) {
            Err(Error::NonFiniteLoss { .. }) | Err(Error::NonFinite(_)) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn cv_partitions_and_is_deterministic() {
        let ds = small_data(37, 4);
        let cfg = config_for(&ds, 2);
        let a = cross_validate(&ds, &cfg, 5, 9).unwrap();
        assert_eq!(a.folds.iter().map(|f| f.n_test).sum::<usize>(), 37);
        assert!(a.folds.iter().all(|f| f.n_train + f.n_test == 37));
        let b = cross_validate(&ds, &cfg, 5, 9).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.folds[3].seed, 9 * 1_000_003 + 3);
    }

    #[test]
    fn summary_recomputable_from_folds() {
        let ds = small_data(40, 5);
        let report = cross_validate(&ds, &config_for(&ds, 2), 4, 1).unwrap();
        let mses: Vec<f64> = report
            .folds
            .iter()
            .map(|f| f.tasks[2].mse.unwrap())
            .collect();
        assert_eq!(report.summary[2].mse, MetricSummary::of(&mses));
    }

    #[test]
    fn table_lists_tasks() {
        let ds = small_data(30, 6);
        let report = cross_validate(&ds, &config_for(&ds, 1), 3, 1).unwrap();
        let table = report.render_table("MTL");
        assert!(table.contains("cls1") && table.contains("reg") && table.contains("MTL"));
        assert!(table.contains("AUC") && table.contains("MSE"));
    }

    #[test]
    fn single_task_variant() {
        let ds = small_data(30, 6);
        let cfg = config_for(&ds, 1);
        let stl = cfg.single_task(2).unwrap();
        assert_eq!(stl.topology.heads, vec![cfg.topology.heads[2].clone()]);
        assert_eq!(stl.topology.shared_layers, cfg.topology.shared_layers);
        let r = cross_validate_single_task(&ds, &cfg, 2, 3, 1).unwrap();
        assert_eq!(r.summary.len(), 1);
        assert_eq!(r.summary[0].task, "reg");
    }

    fn tiny_space(ds: &Dataset) -> SearchSpace {
        SearchSpace {
            trunk_depths: vec![1],
            trunk_widths: vec![4],
            head_depths: vec![0],
            head_widths: vec![4, 8],
            lr0: vec![0.01],
            weight_decay: vec![0.0],
            epochs: vec![1],
            loss_weights: vec![vec![1.0; ds.n_tasks()]],
            lr_min: 0.0,
            batch_size: 16,
            leaky_stats: false,
            budget: 10,
            primary_task: "cls1".into(),
            seed: 3,
        }
    }

    #[test]
    fn single_config_search_matches_cv() {
        let ds = small_data(30, 7);
        let space = tiny_space(&ds);
        let result = grid_search(&ds, &space, 3).unwrap();
        assert_eq!(result.trials.len(), 1);
        let direct = cross_validate(&ds, &result.best, 3, space.seed).unwrap();
        assert_eq!(result.report, direct);
    }

    #[test]
    fn budget_caps_trials() {
        let ds = small_data(30, 7);
        let mut space = tiny_space(&ds);
        space.trunk_widths = vec![2, 3, 4, 5, 6];
        space.head_depths = vec![1];
        space.head_widths = vec![2, 3, 4, 5];
        space.lr0 = vec![0.01, 0.02, 0.03, 0.04, 0.05];
        space.budget = 5;
        assert_eq!(space.enumerate(&ds).unwrap().len(), 100);
        let result = grid_search(&ds, &space, 3).unwrap();
        assert_eq!(result.trials.len(), 5);
        let mut idx: Vec<usize> = result.trials.iter().map(|t| t.index).collect();
        idx.dedup();
        assert_eq!(idx.len(), 5);
    }

    #[test]
    fn default_weight_grid() {
        let ds = small_data(30, 7);
        let mut space = tiny_space(&ds);
        space.loss_weights.clear();
        space.primary_task = "reg".into();
        let configs = space.enumerate(&ds).unwrap();
        assert_eq!(configs.len(), 16);
        assert!(configs.iter().all(|c| c.loss_weights.0[2] == 1.0));
    }

    #[test]
    fn unknown_primary_task() {
        let ds = small_data(30, 7);
        let mut space = tiny_space(&ds);
        space.primary_task = "nope".into();
        assert!(grid_search(&ds, &space, 3).is_err());
        let mut space = tiny_space(&ds);
        space.lr0.clear();
        assert!(grid_search(&ds, &space, 3).is_err());
    }

    fn trial(index: usize, params: usize, scores: [Option<f64>; 2]) -> TrialRecord {
        let ds = small_data(10, 1);
        TrialRecord {
            index,
            parameter_count: params,
            config: config_for(&ds, 1),
            summary: scores
                .iter()
                .enumerate()
                .map(|(t, s)| TaskSummary {
                    task: format!("t{t}"),
                    f1: None,
                    auc: s.map(|v| MetricSummary {
                        mean: v,
                        std: 0.0,
                        n: 5,
                    }),
                    mse: None,
                })
                .collect(),
            score: scores[0],
        }
    }

    #[test]
    fn selection_tie_breaks() {
        let trials = vec![
            trial(0, 100, [Some(0.8), Some(0.1)]),
            trial(1, 50, [Some(0.8), Some(0.9)]),
            trial(2, 50, [Some(0.8), Some(0.2)]),
            trial(3, 10, [Some(0.7), Some(1.0)]),
        ];
        assert_eq!(select_best(&trials, 0), Some(1));
        assert_eq!(select_best(&trials, 1), Some(3));
    }
}
