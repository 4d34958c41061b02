//! Outcome distributions and cross-outcome summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Target};

pub const REGRESSION_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Histogram {
    Classification {
        counts: Vec<usize>,
    },
    /// `edges` has one more entry than `counts`; the last bin is closed.
    Regression {
        edges: Vec<f64>,
        counts: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeHistogram {
    pub task: String,
    pub histogram: Histogram,
}

/// Mean and population std of a regression outcome within one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassConditional {
    pub class_task: String,
    pub class: usize,
    pub value_task: String,
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contingency {
    pub row_task: String,
    pub col_task: String,
    /// `counts[a][b]`: samples with class `a` on the row task and `b` on the
    /// column task.
    pub counts: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeReport {
    pub n_samples: usize,
    pub histograms: Vec<OutcomeHistogram>,
    pub class_conditionals: Vec<ClassConditional>,
    pub contingency: Vec<Contingency>,
}

fn regression_histogram(values: &[f64]) -> Histogram {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / REGRESSION_BINS as f64;
    let edges = (0..=REGRESSION_BINS)
        .map(|b| {
            if b == REGRESSION_BINS {
                hi
            } else {
                lo + width * b as f64
            }
        })
        .collect();
    let mut counts = vec![0; REGRESSION_BINS];
    for &v in values {
        let bin = if width > 0.0 {
            (((v - lo) / width) as usize).min(REGRESSION_BINS - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    Histogram::Regression { edges, counts }
}

/// Histograms per outcome, regression outcomes split by each classification
/// outcome's classes, and class contingency tables for every pair of
/// classification outcomes.
pub fn outcome_report(dataset: &Dataset) -> OutcomeReport {
    let mut histograms = Vec::new();
    let mut class_conditionals = Vec::new();
    let mut contingency = Vec::new();

    for o in &dataset.outcomes {
        let histogram = match &o.target {
            Target::Classification {
                num_classes,
                labels,
            } => {
                let mut counts = vec![0; *num_classes];
                labels.iter().for_each(|&l| counts[l] += 1);
                Histogram::Classification { counts }
            }
            Target::Regression { values } => regression_histogram(values),
        };
        histograms.push(OutcomeHistogram {
            task: o.task_name.clone(),
            histogram,
        });
    }

    for c in &dataset.outcomes {
        let Target::Classification {
            num_classes,
            labels,
        } = &c.target
        else {
            continue;
        };
        for r in &dataset.outcomes {
            let Target::Regression { values } = &r.target else {
                continue;
            };
            for class in 0..*num_classes {
                let group: Vec<f64> = labels
                    .iter()
                    .zip(values)
                    .filter(|(&l, _)| l == class)
                    .map(|(_, &v)| v)
                    .collect();
                let n = group.len();
                let (mean, std) = if n == 0 {
                    (None, None)
                } else {
                    let mean = group.iter().sum::<f64>() / n as f64;
                    let var = group.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                    (Some(mean), Some(var.sqrt()))
                };
                class_conditionals.push(ClassConditional {
                    class_task: c.task_name.clone(),
                    class,
                    value_task: r.task_name.clone(),
                    n,
                    mean,
                    std,
                });
            }
        }
    }

    for (a, oa) in dataset.outcomes.iter().enumerate() {
        for ob in &dataset.outcomes[a + 1..] {
            if let (
                Target::Classification {
                    num_classes: ka,
                    labels: la,
                },
                Target::Classification {
                    num_classes: kb,
                    labels: lb,
                },
            ) = (&oa.target, &ob.target)
            {
                let mut counts = vec![vec![0; *kb]; *ka];
                la.iter().zip(lb).for_each(|(&x, &y)| counts[x][y] += 1);
                contingency.push(Contingency {
                    row_task: oa.task_name.clone(),
                    col_task: ob.task_name.clone(),
                    counts,
                });
            }
        }
    }

    OutcomeReport {
        n_samples: dataset.n_samples(),
        histograms,
        class_conditionals,
        contingency,
    }
}

impl OutcomeReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Samples: {}", self.n_samples);
        for h in &self.histograms {
            let _ = writeln!(out, "\nDistribution of {}:", h.task);
            match &h.histogram {
                Histogram::Classification { counts } => {
                    for (c, n) in counts.iter().enumerate() {
                        let pct = 100.0 * *n as f64 / self.n_samples as f64;
                        let _ = writeln!(out, "  class {c}: {n:>6} ({pct:5.1}%)");
                    }
                }
                Histogram::Regression { edges, counts } => {
                    for (b, n) in counts.iter().enumerate() {
                        let _ = writeln!(
                            out,
                            "  [{:>9.3}, {:>9.3}{} {n:>6} {}",
                            edges[b],
                            edges[b + 1],
                            if b + 1 == counts.len() { "]" } else { ")" },
                            "#".repeat((*n * 50).div_ceil(self.n_samples.max(1)))
                        );
                    }
                }
            }
        }
        if !self.class_conditionals.is_empty() {
            let _ = writeln!(out, "\nRegression outcomes by class:");
            for c in &self.class_conditionals {
                let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
                let _ = writeln!(
                    out,
                    "  {} | {} = {}: n = {:>5}, mean = {}, std = {}",
                    c.value_task,
                    c.class_task,
                    c.class,
                    c.n,
                    fmt(c.mean),
                    fmt(c.std)
                );
            }
        }
        for t in &self.contingency {
            let _ = writeln!(out, "\n{} (rows) x {} (columns):", t.row_task, t.col_task);
            for (a, row) in t.counts.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|n| format!("{n:>6}")).collect();
                let _ = writeln!(out, "  {a}: {}", cells.join(" "));
            }
        }
        out
    }
}
