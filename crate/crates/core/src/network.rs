//! Shared-trunk, multi-head feed-forward networks.
//!
//! An input row passes through the shared trunk (affine + ReLU per layer) and
//! the resulting representation feeds every task head. A head applies its own
//! affine + ReLU hidden layers and a final affine output layer; classification
//! heads turn the output logits into probabilities with a softmax, regression
//! heads emit the raw scalar.
//!
//! The combined objective is the weighted sum of per-task losses (mean
//! cross-entropy or mean squared error). [`backward`] differentiates it
//! exactly; [`input_gradient`] differentiates a single head output with
//! respect to the inputs, which is what attribution needs.

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureStats, Target};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Probabilities are floored here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputSpec {
    Classification { num_classes: usize },
    Regression,
}

impl OutputSpec {
    pub fn width(&self) -> usize {
        match self {
            OutputSpec::Classification { num_classes } => *num_classes,
            OutputSpec::Regression => 1,
        }
    }

    pub fn for_target(target: &Target) -> OutputSpec {
        match target {
            Target::Classification { num_classes, .. } => OutputSpec::Classification {
                num_classes: *num_classes,
            },
            Target::Regression { .. } => OutputSpec::Regression,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    #[serde(default)]
    pub hidden_layers: Vec<usize>,
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub input_dim: usize,
    #[serde(default)]
    pub shared_layers: Vec<usize>,
    pub heads: Vec<HeadSpec>,
}

impl NetworkTopology {
    /// Uniform-width trunk and heads matching the outcome kinds of `targets`.
    pub fn uniform(
        input_dim: usize,
        trunk: &[usize],
        head_hidden: &[usize],
        targets: &[Target],
    ) -> NetworkTopology {
        NetworkTopology {
            input_dim,
            shared_layers: trunk.to_vec(),
            heads: targets
                .iter()
                .map(|t| HeadSpec {
                    hidden_layers: head_hidden.to_vec(),
                    output: OutputSpec::for_target(t),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be >= 1".into()));
        }
        if self.heads.is_empty() {
            return Err(Error::Config("topology needs at least one head".into()));
        }
        let widths = self
            .shared_layers
            .iter()
            .chain(self.heads.iter().flat_map(|h| &h.hidden_layers));
        for &w in widths {
            if w == 0 {
                return Err(Error::Config("layer widths must be >= 1".into()));
            }
        }
        for h in &self.heads {
            if let OutputSpec::Classification { num_classes } = h.output {
                if num_classes < 2 {
                    return Err(Error::Config(
                        "classification heads need >= 2 classes".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn trunk_output_dim(&self) -> usize {
        self.shared_layers.last().copied().unwrap_or(self.input_dim)
    }

    /// (fan_in, fan_out) of every trunk layer.
    pub fn trunk_shapes(&self) -> Vec<(usize, usize)> {
        chain_shapes(self.input_dim, &self.shared_layers, None)
    }

    /// (fan_in, fan_out) of every layer of head `j`, output layer last.
    pub fn head_shapes(&self, j: usize) -> Vec<(usize, usize)> {
        let h = &self.heads[j];
        chain_shapes(
            self.trunk_output_dim(),
            &h.hidden_layers,
            Some(h.output.width()),
        )
    }

    pub fn parameter_count(&self) -> usize {
        let count =
            |shapes: Vec<(usize, usize)>| -> usize { shapes.iter().map(|(i, o)| i * o + o).sum() };
        count(self.trunk_shapes())
            + (0..self.heads.len())
                .map(|j| count(self.head_shapes(j)))
                .sum::<usize>()
    }

    /// Checks that heads line up with the outcome kinds of a dataset.
    pub fn check_targets(&self, targets: &[Target]) -> Result<()> {
        if targets.len() != self.heads.len() {
            return Err(Error::Config(format!(
                "topology has {} heads but the data has {} tasks",
                self.heads.len(),
                targets.len()
            )));
        }
        for (j, (h, t)) in self.heads.iter().zip(targets).enumerate() {
            if h.output != OutputSpec::for_target(t) {
                return Err(Error::Config(format!(
                    "head {j} is {:?} but task {j} needs {:?}",
                    h.output,
                    OutputSpec::for_target(t)
                )));
            }
        }
        Ok(())
    }
}

fn chain_shapes(input: usize, hidden: &[usize], output: Option<usize>) -> Vec<(usize, usize)> {
    let mut shapes = Vec::new();
    let mut prev = input;
    for &w in hidden.iter().chain(output.as_ref()) {
        shapes.push((prev, w));
        prev = w;
    }
    shapes
}

/// One affine layer. `weight` is fan_in × fan_out, so a batch maps as
/// `x · W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "DenseJson", try_from = "DenseJson")]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct DenseJson {
    fan_in: usize,
    fan_out: usize,
    /// row-major, fan_in rows of fan_out values
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl From<Dense> for DenseJson {
    fn from(d: Dense) -> Self {
        let (fan_in, fan_out) = d.weight.dim();
        DenseJson {
            fan_in,
            fan_out,
            weight: d.weight.iter().copied().collect(),
            bias: d.bias.to_vec(),
        }
    }
}

impl TryFrom<DenseJson> for Dense {
    type Error = String;

    fn try_from(j: DenseJson) -> std::result::Result<Self, String> {
        if j.bias.len() != j.fan_out {
            return Err(format!(
                "bias has {} entries, fan_out is {}",
                j.bias.len(),
                j.fan_out
            ));
        }
        let weight = Array2::from_shape_vec((j.fan_in, j.fan_out), j.weight)
            .map_err(|e| format!("weight shape: {e}"))?;
        Ok(Dense {
            weight,
            bias: Array1::from(j.bias),
        })
    }
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Dense {
        Dense {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

/// Weights and biases of the trunk and every head. Gradients and optimizer
/// moments use the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub trunk: Vec<Dense>,
    /// Per head, hidden layers followed by the output layer.
    pub heads: Vec<Vec<Dense>>,
}

pub type Gradients = Params;

impl Params {
    pub fn zeros(topology: &NetworkTopology) -> Params {
        let build = |shapes: Vec<(usize, usize)>| {
            shapes
                .into_iter()
                .map(|(i, o)| Dense::zeros(i, o))
                .collect::<Vec<_>>()
        };
        Params {
            trunk: build(topology.trunk_shapes()),
            heads: (0..topology.heads.len())
                .map(|j| build(topology.head_shapes(j)))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Params {
        let z = |layers: &[Dense]| {
            layers
                .iter()
                .map(|d| Dense::zeros(d.weight.nrows(), d.weight.ncols()))
                .collect::<Vec<_>>()
        };
        Params {
            trunk: z(&self.trunk),
            heads: self.heads.iter().map(|h| z(h)).collect(),
        }
    }

    /// Every layer, trunk first, then heads in order.
    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.trunk.iter().chain(self.heads.iter().flatten())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.trunk.iter_mut().chain(self.heads.iter_mut().flatten())
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.trunk.len() == other.trunk.len()
            && self.heads.len() == other.heads.len()
            && self
                .heads
                .iter()
                .zip(&other.heads)
                .all(|(a, b)| a.len() == b.len())
            && self
                .layers()
                .zip(other.layers())
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len())
    }

    /// All values flattened, layer by layer, weights (row-major) then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for d in self.layers() {
            out.extend(d.weight.iter());
            out.extend(d.bias.iter());
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.layers()
            .all(|d| d.weight.iter().chain(d.bias.iter()).all(|v| v.is_finite()))
    }
}

/// A network: its topology plus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub topology: NetworkTopology,
    pub params: Params,
}

/// Glorot-uniform weights, zero biases. Layers draw from one seeded stream in
/// order (trunk, then heads), each weight matrix in row-major order.
pub fn init_params(topology: &NetworkTopology, seed: u64) -> Result<ModelState> {
    topology.validate()?;
    let mut rng = seeded(seed);
    let mut params = Params::zeros(topology);
    for layer in params.layers_mut() {
        let (fan_in, fan_out) = layer.weight.dim();
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in layer.weight.iter_mut() {
            *w = rng.gen_range(-a..=a);
        }
    }
    Ok(ModelState {
        topology: topology.clone(),
        params,
    })
}

/// Per-head output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadOutput {
    /// N × K class probabilities.
    Probabilities(Array2<f64>),
    /// N scalar predictions.
    Regression(Array1<f64>),
}

impl HeadOutput {
    pub fn len(&self) -> usize {
        match self {
            HeadOutput::Probabilities(p) => p.nrows(),
            HeadOutput::Regression(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> HeadOutput {
        match self {
            HeadOutput::Probabilities(p) => HeadOutput::Probabilities(p.select(Axis(0), rows)),
            HeadOutput::Regression(v) => {
                HeadOutput::Regression(rows.iter().map(|&i| v[i]).collect())
            }
        }
    }
}

/// Inputs and pre-activations of every layer of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch_size: usize,
    /// `trunk_inputs[l]` is the input of trunk layer `l`; the final entry is
    /// the trunk output shared by all heads.
    trunk_inputs: Vec<Array2<f64>>,
    trunk_pre: Vec<Array2<f64>>,
    head_inputs: Vec<Vec<Array2<f64>>>,
    head_pre: Vec<Vec<Array2<f64>>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Output-layer pre-activations (logits, or the regression value) of head `j`.
    pub fn head_logits(&self, j: usize) -> &Array2<f64> {
        self.head_pre[j].last().expect("heads have an output layer")
    }

    /// Post-ReLU activations of the first hidden layer on the path to head
    /// `j`, matching what [`hidden_gradient_from_cache`] differentiates.
    pub(crate) fn first_hidden_activation(&self, j: usize) -> Option<&Array2<f64>> {
        if !self.trunk_pre.is_empty() {
            Some(&self.trunk_inputs[1])
        } else if self.head_pre[j].len() > 1 {
            Some(&self.head_inputs[j][1])
        } else {
            None
        }
    }
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

/// Numerically stable softmax: exponentiates after subtracting the maximum.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let p = softmax(row.as_slice().expect("standard layout"));
        row.assign(&Array1::from(p));
    }
    out
}

/// Runs the batch through trunk and heads.
pub fn forward(state: &ModelState, batch: &Array2<f64>) -> Result<(Vec<HeadOutput>, ForwardCache)> {
    let topo = &state.topology;
    if batch.ncols() != topo.input_dim {
        return Err(Error::Shape(format!(
            "batch has {} columns, model expects {}",
            batch.ncols(),
            topo.input_dim
        )));
    }
    if batch.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forward input".into()));
    }

    let mut trunk_inputs = vec![batch.as_standard_layout().into_owned()];
    let mut trunk_pre = Vec::with_capacity(state.params.trunk.len());
    for layer in &state.params.trunk {
        let z = layer.apply(trunk_inputs.last().unwrap());
        trunk_inputs.push(relu(&z));
        trunk_pre.push(z);
    }
    let shared = trunk_inputs.last().unwrap();

    let mut outputs = Vec::with_capacity(topo.heads.len());
    let mut head_inputs = Vec::with_capacity(topo.heads.len());
    let mut head_pre = Vec::with_capacity(topo.heads.len());
    for (spec, layers) in topo.heads.iter().zip(&state.params.heads) {
        let mut inputs = vec![shared.clone()];
        let mut pre = Vec::with_capacity(layers.len());
        let (hidden, out) = layers.split_at(layers.len() - 1);
        for layer in hidden {
            let z = layer.apply(inputs.last().unwrap());
            inputs.push(relu(&z));
            pre.push(z);
        }
        let logits = out[0].apply(inputs.last().unwrap());
        outputs.push(match spec.output {
            OutputSpec::Classification { .. } => HeadOutput::Probabilities(softmax_rows(&logits)),
            OutputSpec::Regression => HeadOutput::Regression(logits.column(0).to_owned()),
        });
        pre.push(logits);
        head_inputs.push(inputs);
        head_pre.push(pre);
    }
    Ok((
        outputs,
        ForwardCache {
            batch_size: batch.nrows(),
            trunk_inputs,
            trunk_pre,
            head_inputs,
            head_pre,
        },
    ))
}

/// Convenience wrapper returning only the predictions.
pub fn predict(state: &ModelState, batch: &Array2<f64>) -> Result<Vec<HeadOutput>> {
    forward(state, batch).map(|(out, _)| out)
}

/// Mean cross-entropy `-(1/N) Σ log p[i, label_i]` with probabilities floored
/// at [`PROB_FLOOR`].
pub fn loss_cls(probs: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if probs.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probability rows vs {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("loss of an empty batch".into()));
    }
    let k = probs.ncols();
    let mut sum = 0.0;
    for (row, &label) in probs.rows().into_iter().zip(labels) {
        if label >= k {
            return Err(Error::InvalidArgument(format!(
                "label {label} outside [0, {k})"
            )));
        }
        sum -= row[label].max(PROB_FLOOR).ln();
    }
    Ok(sum / labels.len() as f64)
}

/// Mean squared error `(1/N) Σ (y - ŷ)²`.
pub fn loss_reg(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("loss of an empty batch".into()));
    }
    let sum: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (t - p) * (t - p))
        .sum();
    Ok(sum / preds.len() as f64)
}

/// Non-negative per-task loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossWeights(pub Vec<f64>);

impl LossWeights {
    pub fn new(lambda: Vec<f64>) -> Result<LossWeights> {
        let w = LossWeights(lambda);
        w.validate()?;
        Ok(w)
    }

    pub fn uniform(m: usize) -> LossWeights {
        LossWeights(vec![1.0; m])
    }

    /// Weight 1 on task `j`, 0 elsewhere.
    pub fn one_hot(m: usize, j: usize) -> LossWeights {
        let mut w = vec![0.0; m];
        w[j] = 1.0;
        LossWeights(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|&l| !l.is_finite() || l < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and >= 0, got {:?}",
                self.0
            )));
        }
        if !self.0.iter().any(|&l| l > 0.0) {
            return Err(Error::Config(
                "at least one loss weight must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, c: f64) -> LossWeights {
        LossWeights(self.0.iter().map(|l| l * c).collect())
    }
}

/// `Σ_j λ_j · L_j`.
pub fn loss_mtl(task_losses: &[f64], weights: &LossWeights) -> Result<f64> {
    if task_losses.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} task losses vs {} weights",
            task_losses.len(),
            weights.len()
        )));
    }
    weights.validate()?;
    Ok(task_losses.iter().zip(&weights.0).map(|(l, w)| w * l).sum())
}

/// Per-task losses of a set of head outputs.
pub fn task_losses(outputs: &[HeadOutput], targets: &[Target]) -> Result<Vec<f64>> {
    if outputs.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} heads vs {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    outputs
        .iter()
        .zip(targets)
        .map(|(o, t)| match (o, t) {
            (HeadOutput::Probabilities(p), Target::Classification { labels, .. }) => {
                loss_cls(p, labels)
            }
            (HeadOutput::Regression(v), Target::Regression { values }) => {
                loss_reg(v.as_slice().expect("contiguous"), values)
            }
            _ => Err(Error::Shape(
                "head output kind does not match target".into(),
            )),
        })
        .collect()
}

/// Total weighted loss and the per-task losses of `state` on a batch.
pub fn evaluate_loss(
    state: &ModelState,
    batch: &Array2<f64>,
    targets: &[Target],
    weights: &LossWeights,
) -> Result<(f64, Vec<f64>)> {
    let outputs = predict(state, batch)?;
    let per_task = task_losses(&outputs, targets)?;
    Ok((loss_mtl(&per_task, weights)?, per_task))
}

/// Gradient of the weighted multi-task loss with respect to every parameter.
///
/// Classification heads seed backprop with the fused softmax/cross-entropy
/// term `λ (P - Y) / N`; regression heads with `λ · 2 (ŷ - y) / N`. The trunk
/// receives the sum of all head back-flows.
pub fn backward(
    state: &ModelState,
    cache: &ForwardCache,
    targets: &[Target],
    weights: &LossWeights,
) -> Result<Gradients> {
    let m = state.topology.heads.len();
    if targets.len() != m || weights.len() != m {
        return Err(Error::Shape(format!(
            "{m} heads, {} targets, {} weights",
            targets.len(),
            weights.len()
        )));
    }
    check_cache(state, cache)?;
    let n = cache.batch_size;
    let mut seeds = Vec::with_capacity(m);
    for (j, (target, &lambda)) in targets.iter().zip(&weights.0).enumerate() {
        if target.len() != n {
            return Err(Error::Shape(format!(
                "task {j} has {} targets for a batch of {n}",
                target.len()
            )));
        }
        let logits = cache.head_logits(j);
        let scale = 1.0 / n as f64;
        let seed = match target {
            Target::Classification { labels, .. } => {
                let mut g = softmax_rows(logits);
                for (i, &label) in labels.iter().enumerate() {
                    if label >= g.ncols() {
                        return Err(Error::InvalidArgument(format!(
                            "task {j}: label {label} outside [0, {})",
                            g.ncols()
                        )));
                    }
                    g[[i, label]] -= 1.0;
                }
                g * scale
            }
            Target::Regression { values } => {
                let mut g = logits.clone();
                for (i, &y) in values.iter().enumerate() {
                    g[[i, 0]] = 2.0 * (g[[i, 0]] - y) * scale;
                }
                g
            }
        };
        seeds.push((lambda, seed));
    }
    // Each task is backpropagated at unit weight and scaled at the end, so
    // multiplying every lambda by c multiplies each coordinate by c up to a
    // rounding or two.
    let mut grads = state.params.zeros_like();
    for (j, (lambda, seed)) in seeds.into_iter().enumerate() {
        if lambda == 0.0 {
            continue;
        }
        let mut only = vec![None; m];
        only[j] = Some(seed);
        let (g, _) = backprop(state, cache, only, false)?;
        for (acc, layer) in grads.layers_mut().zip(g.layers()) {
            acc.weight.scaled_add(lambda, &layer.weight);
            acc.bias.scaled_add(lambda, &layer.bias);
        }
    }
    Ok(grads)
}

/// Gradient of head `task`'s output column `column` with respect to each
/// input row: row `i` of the result is `∂ out[i, column] / ∂ x_i`.
///
/// `column` indexes the pre-softmax logits of a classification head; use 0 for
/// a regression head.
pub fn input_gradient(
    state: &ModelState,
    batch: &Array2<f64>,
    task: usize,
    column: usize,
) -> Result<Array2<f64>> {
    let (_, cache) = forward(state, batch)?;
    input_gradient_from_cache(state, &cache, task, column)
}

pub(crate) fn input_gradient_from_cache(
    state: &ModelState,
    cache: &ForwardCache,
    task: usize,
    column: usize,
) -> Result<Array2<f64>> {
    let m = state.topology.heads.len();
    if task >= m {
        return Err(Error::InvalidArgument(format!(
            "task {task} out of range (0..{m})"
        )));
    }
    let width = state.topology.heads[task].output.width();
    if column >= width {
        return Err(Error::InvalidArgument(format!(
            "output column {column} out of range (0..{width})"
        )));
    }
    let mut seed = Array2::zeros((cache.batch_size, width));
    seed.column_mut(column).fill(1.0);
    let mut seeds: Vec<Option<Array2<f64>>> = vec![None; m];
    seeds[task] = Some(seed);
    let (_, dx) = backprop(state, cache, seeds, true)?;
    Ok(dx.expect("input gradient requested"))
}

/// Gradient of head `task`'s output column with respect to the post-ReLU
/// activations of the first hidden layer on its path, or `None` when the path
/// has no hidden layer.
pub(crate) fn hidden_gradient_from_cache(
    state: &ModelState,
    cache: &ForwardCache,
    task: usize,
    column: usize,
) -> Result<Option<Array2<f64>>> {
    let m = state.topology.heads.len();
    let width = state.topology.heads[task].output.width();
    let mut seed = Array2::zeros((cache.batch_size, width));
    seed.column_mut(column).fill(1.0);
    let mut seeds: Vec<Option<Array2<f64>>> = vec![None; m];
    seeds[task] = Some(seed);
    Ok(backprop_full(state, cache, seeds, false)?.first_hidden)
}

fn relu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn check_cache(state: &ModelState, cache: &ForwardCache) -> Result<()> {
    let ok = cache.trunk_pre.len() == state.params.trunk.len()
        && cache.head_pre.len() == state.params.heads.len()
        && cache
            .head_pre
            .iter()
            .zip(&state.params.heads)
            .all(|(c, h)| c.len() == h.len())
        && cache
            .trunk_pre
            .iter()
            .zip(&state.params.trunk)
            .all(|(z, d)| z.ncols() == d.bias.len() && z.nrows() == cache.batch_size)
        && cache
            .head_pre
            .iter()
            .flatten()
            .zip(state.params.heads.iter().flatten())
            .all(|(z, d)| z.ncols() == d.bias.len() && z.nrows() == cache.batch_size);
    if ok {
        Ok(())
    } else {
        Err(Error::Shape(
            "forward cache does not match the model".into(),
        ))
    }
}

struct Backprop {
    grads: Gradients,
    input: Option<Array2<f64>>,
    /// Gradient wrt the first hidden activation: trunk layer 0 when the trunk
    /// is non-empty, otherwise hidden layer 0 of the (single) seeded head.
    first_hidden: Option<Array2<f64>>,
}

/// Reverse pass from per-head output gradients. Heads with a `None` seed
/// contribute nothing and get all-zero parameter gradients.
fn backprop(
    state: &ModelState,
    cache: &ForwardCache,
    seeds: Vec<Option<Array2<f64>>>,
    want_input: bool,
) -> Result<(Gradients, Option<Array2<f64>>)> {
    let out = backprop_full(state, cache, seeds, want_input)?;
    Ok((out.grads, out.input))
}

fn backprop_full(
    state: &ModelState,
    cache: &ForwardCache,
    seeds: Vec<Option<Array2<f64>>>,
    want_input: bool,
) -> Result<Backprop> {
    check_cache(state, cache)?;
    let trunk_empty = state.params.trunk.is_empty();
    let mut grads = state.params.zeros_like();
    let mut first_hidden = None;
    let mut shared_grad: Array2<f64> =
        Array2::zeros((cache.batch_size, state.topology.trunk_output_dim()));

    for (j, seed) in seeds.into_iter().enumerate() {
        let Some(mut delta) = seed else { continue };
        let layers = &state.params.heads[j];
        let inputs = &cache.head_inputs[j];
        let pre = &cache.head_pre[j];
        for l in (0..layers.len()).rev() {
            grads.heads[j][l].weight = inputs[l].t().dot(&delta);
            grads.heads[j][l].bias = delta.sum_axis(Axis(0));
            let back = delta.dot(&layers[l].weight.t());
            if l == 1 && trunk_empty {
                first_hidden = Some(back.clone());
            }
            delta = if l > 0 {
                back * pre[l - 1].mapv(relu_grad)
            } else {
                back
            };
        }
        shared_grad += &delta;
    }

    let mut delta = shared_grad;
    let trunk = &state.params.trunk;
    for l in (0..trunk.len()).rev() {
        if l == 0 {
            first_hidden = Some(delta.clone());
        }
        delta *= &cache.trunk_pre[l].mapv(relu_grad);
        grads.trunk[l].weight = cache.trunk_inputs[l].t().dot(&delta);
        grads.trunk[l].bias = delta.sum_axis(Axis(0));
        if l > 0 || want_input {
            delta = delta.dot(&trunk[l].weight.t());
        }
    }
    Ok(Backprop {
        grads,
        input: want_input.then_some(delta),
        first_hidden,
    })
}

/// On-disk form of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub topology: NetworkTopology,
    pub params: Params,
    #[serde(default)]
    pub normalization_stats: Option<Vec<FeatureStats>>,
    #[serde(default)]
    pub feature_names: Option<Vec<String>>,
    #[serde(default)]
    pub task_names: Option<Vec<String>>,
}

pub const MODEL_FILE_VERSION: u32 = 1;

impl ModelFile {
    pub fn new(state: &ModelState) -> ModelFile {
        ModelFile {
            version: MODEL_FILE_VERSION,
            topology: state.topology.clone(),
            params: state.params.clone(),
            normalization_stats: None,
            feature_names: None,
            task_names: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<ModelFile> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_FILE_VERSION {
            return Err(Error::Config(format!(
                "unsupported model file version {}",
                file.version
            )));
        }
        file.topology.validate()?;
        if !file.params.same_shape(&Params::zeros(&file.topology)) {
            return Err(Error::Shape(
                "model parameters do not match topology".into(),
            ));
        }
        if !file.params.all_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(file)
    }

    pub fn state(&self) -> ModelState {
        ModelState {
            topology: self.topology.clone(),
            params: self.params.clone(),
        }
    }
}
