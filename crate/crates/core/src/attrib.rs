//! Gradient-based feature importance for tabular inputs.
//!
//! The default mode treats the input layer as the Grad-CAM target layer, so a
//! feature's importance is the mean absolute gradient of the target logit (or
//! the regression output) with respect to that feature:
//! `importance_d = (1/N) Σ_i |∂ s(x_i) / ∂ x_id|`.
//!
//! [`AttributionMode::FirstLayerCam`] is experimental. It weights the first
//! hidden layer's activations by their gradients, `c_k = (1/N) Σ_i |g_ik h_ik|`,
//! and projects back to the inputs through the absolute first-layer weights,
//! `importance_d = Σ_k |W_dk| c_k`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::POSITIVE_CLASS;
use crate::network::{
    forward, hidden_gradient_from_cache, input_gradient_from_cache, ModelState, OutputSpec,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMode {
    #[default]
    InputGradient,
    FirstLayerCam,
}

/// Output unit being explained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttributionTarget {
    Class(usize),
    Regression(RegressionTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionTag {
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub task_name: String,
    pub target: AttributionTarget,
    pub mode: AttributionMode,
    pub feature_names: Vec<String>,
    /// Non-negative importance per feature, in feature order.
    pub scores: Vec<f64>,
    /// Feature names by descending score; ties keep feature order.
    pub ranking: Vec<String>,
    pub n_samples_used: usize,
}

impl AttributionReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    fn score_of(&self, name: &str) -> f64 {
        let d = self
            .feature_names
            .iter()
            .position(|f| f == name)
            .expect("ranking holds feature names");
        self.scores[d]
    }
}

/// Input-gradient attribution for `task_index`. See [`grad_cam_features_with`].
pub fn grad_cam_features(
    model: &ModelState,
    dataset: &Dataset,
    task_index: usize,
    target_class: Option<usize>,
) -> Result<AttributionReport> {
    grad_cam_features_with(
        model,
        dataset,
        task_index,
        target_class,
        AttributionMode::InputGradient,
    )
}

/// Feature importance of one head's output over every row of `dataset`.
///
/// Classification heads explain the pre-softmax logit of `target_class`
/// (class 1 when `None`); regression heads explain their scalar output and
/// take no class.
pub fn grad_cam_features_with(
    model: &ModelState,
    dataset: &Dataset,
    task_index: usize,
    target_class: Option<usize>,
    mode: AttributionMode,
) -> Result<AttributionReport> {
    let heads = &model.topology.heads;
    let head = heads.get(task_index).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "task index {task_index} out of range (model has {} heads)",
            heads.len()
        ))
    })?;
    if dataset.n_tasks() != heads.len() {
        return Err(Error::Shape(format!(
            "model has {} heads, dataset has {} tasks",
            heads.len(),
            dataset.n_tasks()
        )));
    }
    let (column, target) = match (head.output, target_class) {
        (OutputSpec::Classification { num_classes }, class) => {
            let class = class.unwrap_or(POSITIVE_CLASS);
            if class >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "class {class} out of range (0..{num_classes})"
                )));
            }
            (class, AttributionTarget::Class(class))
        }
        (OutputSpec::Regression, None) => {
            (0, AttributionTarget::Regression(RegressionTag::Regression))
        }
        (OutputSpec::Regression, Some(c)) => {
            return Err(Error::InvalidArgument(format!(
                "task {task_index} is a regression; class {c} does not apply"
            )))
        }
    };

    let (_, cache) = forward(model, &dataset.features)?;
    let n = dataset.n_samples();
    let d = dataset.n_features();
    let mut scores = vec![0.0; d];

    let hidden = match mode {
        AttributionMode::InputGradient => None,
        AttributionMode::FirstLayerCam => {
            hidden_gradient_from_cache(model, &cache, task_index, column)?
        }
    };
    match (hidden, cache.first_hidden_activation(task_index)) {
        (Some(grad), Some(act)) => {
            let w1 = if model.params.trunk.is_empty() {
                &model.params.heads[task_index][0].weight
            } else {
                &model.params.trunk[0].weight
            };
            let mut channel = vec![0.0; grad.ncols()];
            for (g_row, h_row) in grad.rows().into_iter().zip(act.rows()) {
                for (k, (g, h)) in g_row.iter().zip(h_row.iter()).enumerate() {
                    channel[k] += (g * h).abs();
                }
            }
            channel.iter_mut().for_each(|c| *c /= n as f64);
            for (dim, score) in scores.iter_mut().enumerate() {
                *score = w1
                    .row(dim)
                    .iter()
                    .zip(&channel)
                    .map(|(w, c)| w.abs() * c)
                    .sum();
            }
        }
        _ => {
            let grad = input_gradient_from_cache(model, &cache, task_index, column)?;
            for row in grad.rows() {
                for (s, g) in scores.iter_mut().zip(row.iter()) {
                    *s += g.abs();
                }
            }
            scores.iter_mut().for_each(|s| *s /= n as f64);
        }
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("attribution scores".into()));
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(AttributionReport {
        task_name: dataset.outcomes[task_index].task_name.clone(),
        target,
        mode,
        feature_names: dataset.feature_names.clone(),
        ranking: order
            .iter()
            .map(|&i| dataset.feature_names[i].clone())
            .collect(),
        scores,
        n_samples_used: n,
    })
}

/// The `k` highest-ranked features with their scores.
pub fn top_k(report: &AttributionReport, k: usize) -> Result<Vec<(String, f64)>> {
    let d = report.ranking.len();
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!(
            "top-k needs 1 <= k <= {d}, got {k}"
        )));
    }
    Ok(report.ranking[..k]
        .iter()
        .map(|name| (name.clone(), report.score_of(name)))
        .collect())
}

/// Bullet list of the top `k` features, most influential first.
pub fn render_top_k(report: &AttributionReport, k: usize) -> Result<String> {
    let top = top_k(report, k)?;
    let mut out = String::new();
    let target = match report.target {
        AttributionTarget::Class(c) => format!("class {c}"),
        AttributionTarget::Regression(_) => "regression output".into(),
    };
    let _ = writeln!(
        out,
        "Top {k} features for {} ({target}, {} samples):",
        report.task_name, report.n_samples_used
    );
    for (rank, (name, score)) in top.iter().enumerate() {
        let tag = if rank == 0 { " (most influential)" } else { "" };
        let _ = writeln!(out, "  - {name}{tag}: {score:.6}");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureStats, OutcomeVector, Target};
    use crate::network::{init_params, HeadSpec, NetworkTopology};
    use ndarray::{array, Array2};

    fn linear_model(weights: &[f64], output: OutputSpec) -> ModelState {
        let topo = NetworkTopology {
            input_dim: weights.len(),
            shared_layers: vec![],
            heads: vec![HeadSpec {
                hidden_layers: vec![],
                output,
            }],
        };
        let mut state = init_params(&topo, 0).unwrap();
        let w = &mut state.params.heads[0][0].weight;
        w.fill(0.0);
        let last = w.ncols() - 1;
        for (d, &v) in weights.iter().enumerate() {
            w[[d, last]] = v;
        }
        state
    }

    fn dataset(features: Array2<f64>, target: Target) -> Dataset {
        let d = features.ncols();
        Dataset::new(
            features,
            (1..=d).map(|i| format!("x_{i}")).collect(),
            vec![OutcomeVector {
                task_name: "t".into(),
                target,
            }],
            vec![FeatureStats::IDENTITY; d],
        )
        .unwrap()
    }

    #[test]
    fn linear_regression_scores_are_abs_weights() {
        let model = linear_model(&[3.0, 0.0], OutputSpec::Regression);
        let ds = dataset(
            array![[1.0, 2.0], [-1.0, 0.5], [0.3, 0.3]],
            Target::Regression {
                values: vec![0.0; 3],
            },
        );
        let report = grad_cam_features(&model, &ds, 0, None).unwrap();
        assert_eq!(report.scores, vec![3.0, 0.0]);
        assert_eq!(report.ranking, vec!["x_1", "x_2"]);
        assert_eq!(top_k(&report, 1).unwrap(), vec![("x_1".to_string(), 3.0)]);
        assert_eq!(top_k(&report, 2).unwrap().len(), 2);
        assert!(top_k(&report, 0).is_err());
        assert!(top_k(&report, 3).is_err());
    }

    #[test]
    fn classification_logit_gradient() {
        let model = linear_model(&[-2.0, 0.5], OutputSpec::Classification { num_classes: 2 });
        let ds = dataset(
            array![[1.0, 2.0], [0.0, 1.0]],
            Target::Classification {
                num_classes: 2,
                labels: vec![0, 1],
            },
        );
        let report = grad_cam_features(&model, &ds, 0, None).unwrap();
        assert_eq!(report.target, AttributionTarget::Class(1));
        assert_eq!(report.scores, vec![2.0, 0.5]);
        // class 0 has zero weights in this model
        let zero = grad_cam_features(&model, &ds, 0, Some(0)).unwrap();
        assert_eq!(zero.scores, vec![0.0, 0.0]);
        assert!(grad_cam_features(&model, &ds, 0, Some(2)).is_err());
        assert!(grad_cam_features(&model, &ds, 1, None).is_err());
    }

    #[test]
    fn disconnected_feature_scores_zero() {
        let topo = NetworkTopology {
            input_dim: 3,
            shared_layers: vec![6],
            heads: vec![HeadSpec {
                hidden_layers: vec![4],
                output: OutputSpec::Regression,
            }],
        };
        let mut model = init_params(&topo, 3).unwrap();
        model.params.trunk[0].weight.row_mut(1).fill(0.0);
        let ds = dataset(
            array![[0.2, 1.0, -0.4], [1.0, -2.0, 0.3], [-0.7, 0.1, 0.9]],
            Target::Regression {
                values: vec![0.0; 3],
            },
        );
        for mode in [
            AttributionMode::InputGradient,
            AttributionMode::FirstLayerCam,
        ] {
            let report = grad_cam_features_with(&model, &ds, 0, None, mode).unwrap();
            assert_eq!(report.scores[1], 0.0, "{mode:?}");
            assert!(report.scores.iter().all(|&s| s >= 0.0));
        }
    }

    #[test]
    fn regression_rejects_class() {
        let model = linear_model(&[1.0], OutputSpec::Regression);
        let ds = dataset(array![[1.0]], Target::Regression { values: vec![0.0] });
        assert!(grad_cam_features(&model, &ds, 0, Some(1)).is_err());
    }

    #[test]
    fn ties_keep_feature_order() {
        let model = linear_model(&[1.0, 2.0, 1.0], OutputSpec::Regression);
        let ds = dataset(
            array![[0.0, 0.0, 0.0]],
            Target::Regression { values: vec![0.0] },
        );
        let report = grad_cam_features(&model, &ds, 0, None).unwrap();
        assert_eq!(report.ranking, vec!["x_2", "x_1", "x_3"]);
        let text = render_top_k(&report, 2).unwrap();
        assert!(text.contains("- x_2 (most influential)"));
    }

    #[test]
    fn json_target_forms() {
        assert_eq!(
            serde_json::to_string(&AttributionTarget::Class(1)).unwrap(),
            "1"
        );
        assert_eq!(
            serde_json::to_string(&AttributionTarget::Regression(RegressionTag::Regression))
                .unwrap(),
            "\"regression\""
        );
    }
}
