//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use neomtl::dataset::{
    Cell, ColumnDescriptor, Dataset, FeatureStats, OutcomeVector, RawTable, Target,
};
use neomtl::network::{
    evaluate_loss, init_params, HeadSpec, LossWeights, ModelState, NetworkTopology, OutputSpec,
};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub struct Problem {
    pub state: ModelState,
    pub x: Array2<f64>,
    pub targets: Vec<Target>,
    pub weights: LossWeights,
}

fn widths(rng: &mut ChaCha8Rng, max_depth: usize) -> Vec<usize> {
    let depth = rng.gen_range(0..=max_depth);
    (0..depth).map(|_| rng.gen_range(1..=16)).collect()
}

/// Small random network, batch and targets. D <= 10, widths <= 16, 1 to 3
/// heads of mixed kinds; biases are randomized so ReLU inputs sit away from 0.
pub fn random_problem(seed: u64) -> Problem {
    let mut r = rng(seed);
    let d = r.gen_range(1..=10);
    let m = r.gen_range(1..=3);
    let n = r.gen_range(1..=8);
    let x = Array2::from_shape_simple_fn((n, d), || r.sample::<f64, _>(StandardNormal));
    let mut heads = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..m {
        let hidden = widths(&mut r, 2);
        if r.gen_bool(0.5) {
            let k = r.gen_range(2..=4);
            heads.push(HeadSpec {
                hidden_layers: hidden,
                output: OutputSpec::Classification { num_classes: k },
            });
            targets.push(Target::Classification {
                num_classes: k,
                labels: (0..n).map(|_| r.gen_range(0..k)).collect(),
            });
        } else {
            heads.push(HeadSpec {
                hidden_layers: hidden,
                output: OutputSpec::Regression,
            });
            targets.push(Target::Regression {
                values: (0..n).map(|_| r.sample(StandardNormal)).collect(),
            });
        }
    }
    let topology = NetworkTopology {
        input_dim: d,
        shared_layers: widths(&mut r, 2),
        heads,
    };
    let mut state = init_params(&topology, seed).unwrap();
    for layer in state.params.layers_mut() {
        layer.bias.mapv_inplace(|_| r.gen_range(-0.5..0.5));
    }
    let weights = LossWeights((0..m).map(|_| r.gen_range(0.1..2.0)).collect());
    Problem {
        state,
        x,
        targets,
        weights,
    }
}

pub fn loss(problem: &Problem, state: &ModelState) -> f64 {
    evaluate_loss(state, &problem.x, &problem.targets, &problem.weights)
        .unwrap()
        .0
}

/// Central differences of the total loss for every parameter, in
/// `Params::flatten` order.
pub fn numeric_gradient(problem: &Problem, h: f64) -> Vec<f64> {
    let mut state = problem.state.clone();
    let mut out = Vec::new();
    let n_layers = state.params.layers().count();
    for l in 0..n_layers {
        let (rows, cols) = state.params.layers().nth(l).unwrap().weight.dim();
        for i in 0..rows {
            for j in 0..cols {
                let w0 = state.params.layers().nth(l).unwrap().weight[[i, j]];
                state.params.layers_mut().nth(l).unwrap().weight[[i, j]] = w0 + h;
                let up = loss(problem, &state);
                state.params.layers_mut().nth(l).unwrap().weight[[i, j]] = w0 - h;
                let down = loss(problem, &state);
                state.params.layers_mut().nth(l).unwrap().weight[[i, j]] = w0;
                out.push((up - down) / (2.0 * h));
            }
        }
        let len = state.params.layers().nth(l).unwrap().bias.len();
        for i in 0..len {
            let b0 = state.params.layers().nth(l).unwrap().bias[i];
            state.params.layers_mut().nth(l).unwrap().bias[i] = b0 + h;
            let up = loss(problem, &state);
            state.params.layers_mut().nth(l).unwrap().bias[i] = b0 - h;
            let down = loss(problem, &state);
            state.params.layers_mut().nth(l).unwrap().bias[i] = b0;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Pairwise concordance: P(positive outscores negative), ties count 1/2.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice = 0u64;
    let mut pairs = 0u64;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            twice += if scores[i] > scores[j] {
                2
            } else if scores[i] == scores[j] {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * pairs) as f64
}

/// Correlated Gaussian table: column k is `Σ_l A_kl z_l + 0.3 ε_k` over three
/// latent factors, with a fraction of cells masked completely at random.
pub struct MiceCase {
    pub complete: Vec<Vec<f64>>,
    pub masked: RawTable,
    pub mask: Vec<(usize, usize)>,
}

pub fn mice_case(seed: u64, n: usize, p: usize, missing_frac: f64) -> MiceCase {
    let mut r = rng(seed);
    let a: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..3).map(|_| r.gen_range(-1.5..1.5)).collect())
        .collect();
    let complete: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..3).map(|_| r.sample(StandardNormal)).collect();
            (0..p)
                .map(|k| {
                    let e: f64 = r.sample(StandardNormal);
                    a[k].iter().zip(&z).map(|(w, z)| w * z).sum::<f64>() + 0.3 * e
                })
                .collect()
        })
        .collect();
    let count = (missing_frac * (n * p) as f64).round() as usize;
    let mut mask: Vec<(usize, usize)> = index::sample(&mut r, n * p, count)
        .into_iter()
        .map(|c| (c / p, c % p))
        .collect();
    mask.sort_unstable();
    let mut rows: Vec<Vec<Cell>> = complete
        .iter()
        .map(|row| row.iter().map(|&v| Cell::Num(v)).collect())
        .collect();
    for &(i, j) in &mask {
        rows[i][j] = Cell::Missing;
    }
    MiceCase {
        complete,
        masked: numeric_table(rows),
        mask,
    }
}

/// Feature-only table of numeric columns `c0, c1, ...`, as the preprocessing
/// pipeline hands it to imputation.
pub fn numeric_table(mut rows: Vec<Vec<Cell>>) -> RawTable {
    let p = rows.first().map_or(0, Vec::len);
    let mut schema: Vec<ColumnDescriptor> = (0..p)
        .map(|k| ColumnDescriptor::numeric(format!("c{k}")))
        .collect();
    schema.push(ColumnDescriptor::regression("y", 0));
    rows.iter_mut().for_each(|r| r.push(Cell::Num(0.0)));
    let cols: Vec<usize> = (0..p).collect();
    RawTable::new(schema, rows).unwrap().select_columns(&cols)
}

pub fn cell(table: &RawTable, i: usize, j: usize) -> f64 {
    table.rows[i][j].as_num().expect("imputed cell")
}

pub fn rmse_on_mask(imputed: &RawTable, case: &MiceCase) -> f64 {
    let sq: f64 = case
        .mask
        .iter()
        .map(|&(i, j)| (cell(imputed, i, j) - case.complete[i][j]).powi(2))
        .sum();
    (sq / case.mask.len() as f64).sqrt()
}

/// `n` points in `d` dimensions, labelled by the sign of `x_0 + x_1` and
/// pushed at least `margin` away from that boundary.
pub fn separable(seed: u64, n: usize, d: usize, margin: f64) -> Dataset {
    let mut r = rng(seed);
    let mut x = Array2::<f64>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        for k in 0..d {
            x[[i, k]] = r.sample(StandardNormal);
        }
        let label = i % 2;
        let s: f64 = x[[i, 0]] + x[[i, 1]];
        let shift = if label == 1 {
            (margin - s).max(0.0)
        } else {
            (-margin - s).min(0.0)
        };
        x[[i, 0]] += shift / 2.0;
        x[[i, 1]] += shift / 2.0;
        labels.push(label);
    }
    Dataset::new(
        x,
        (0..d).map(|k| format!("x{k}")).collect(),
        vec![OutcomeVector {
            task_name: "y".into(),
            target: Target::Classification {
                num_classes: 2,
                labels,
            },
        }],
        vec![FeatureStats::IDENTITY; d],
    )
    .unwrap()
}
