//! Downstream importance regressors and the PageRank baseline.
//!
//! Both supervised heads standardise their inputs with statistics of the
//! training rows, fit log-scores by mean squared error with full-batch Adam,
//! and predict one score per graph node.

use std::borrow::Cow;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Tape, Tensor, Var};
use crate::error::{LicapError, Result};
use crate::kg::{FeatureMatrix, KnowledgeGraph, LabelSet, NodeId};
use crate::pregat::EdgeIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ModelKind {
    /// Two-layer perceptron.
    #[default]
    Mlp,
    /// Linear initial score followed by one attention aggregation over neighbours.
    AggregatedScorer,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::AggregatedScorer => "aggregated_scorer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamConfig {
    pub kind: ModelKind,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub negative_slope: f64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mlp,
            hidden_dim: 64,
            epochs: 500,
            learning_rate: 0.01,
            seed: 0,
            negative_slope: 0.2,
        }
    }
}

impl DownstreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(LicapError::invalid("downstream epochs must be at least 1"));
        }
        if self.hidden_dim == 0 {
            return Err(LicapError::invalid("downstream hidden dim must be at least 1"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(LicapError::invalid("downstream learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NieModel {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub negative_slope: f64,
    /// Per-column mean and scale applied before the first layer.
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    /// Named parameter blocks in a fixed order.
    pub blocks: Vec<(String, Tensor)>,
    /// Training MSE before each update.
    pub loss_history: Vec<f64>,
}

impl NieModel {
    pub fn block(&self, name: &str) -> Option<&Tensor> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn standardize(&self, embeddings: &FeatureMatrix) -> Result<Tensor> {
        if embeddings.cols() != self.input_dim {
            return Err(LicapError::ShapeMismatch {
                op: "predict",
                left: [embeddings.rows(), embeddings.cols()],
                right: [embeddings.rows(), self.input_dim],
            });
        }
        let d = self.input_dim;
        let data = embeddings
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.feature_mean[i % d]) / self.feature_scale[i % d])
            .collect();
        Tensor::new(embeddings.rows(), d, data)
    }
}

fn column_stats(embeddings: &FeatureMatrix, rows: &[NodeId]) -> (Vec<f64>, Vec<f64>) {
    let d = embeddings.cols();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &r in rows {
        mean.iter_mut().zip(embeddings.row(r)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for &r in rows {
        for ((s, v), m) in var.iter_mut().zip(embeddings.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 { sd } else { 1.0 }
        })
        .collect();
    (mean, scale)
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(rows, cols, data).expect("sized buffer")
}

fn check_training_set(embeddings: &FeatureMatrix, labels: &LabelSet) -> Result<Vec<NodeId>> {
    if labels.is_empty() {
        return Err(LicapError::EmptyInput("training split has no labelled nodes".into()));
    }
    let nodes = labels.nodes();
    if let Some(&n) = nodes.iter().find(|&&n| n >= embeddings.rows()) {
        return Err(LicapError::invalid(format!("labelled node {n} has no embedding row")));
    }
    Ok(nodes)
}

/// Mean training score; the output bias starts here so early updates fit
/// the shape of the target rather than its offset.
fn label_mean(labels: &LabelSet) -> f64 {
    labels.scores().iter().sum::<f64>() / labels.len() as f64
}

/// Raw model output for every row of `z`.
fn forward(
    tape: &mut Tape,
    model: &NieModel,
    vars: &[Var],
    z: Var,
    edges: Option<&EdgeIndex>,
) -> Result<Var> {
    let slope = model.negative_slope;
    match model.kind {
        ModelKind::Mlp => {
            let h = tape.matmul(z, vars[0])?;
            let h = tape.add_row(h, vars[1])?;
            let h = tape.leaky_relu(h, slope);
            let out = tape.matmul(h, vars[2])?;
            tape.add_row(out, vars[3])
        }
        ModelKind::AggregatedScorer => {
            let edges = edges.ok_or_else(|| LicapError::invalid("aggregated scorer needs a graph"))?;
            let n = tape.value(z).rows();
            if edges.node_count != n {
                return Err(LicapError::invalid(format!(
                    "graph has {} nodes but {n} embedding rows",
                    edges.node_count
                )));
            }
            let s0 = tape.matmul(z, vars[0])?;
            let s0 = tape.add_row(s0, vars[1])?;
            let e_dst = tape.matmul(z, vars[2])?;
            let e_src = tape.matmul(z, vars[3])?;
            let e_dst = tape.gather_rows(e_dst, Rc::clone(&edges.dst))?;
            let e_src = tape.gather_rows(e_src, Rc::clone(&edges.src))?;
            let logits = tape.add(e_dst, e_src)?;
            let logits = tape.leaky_relu(logits, slope);
            let alpha = tape.segment_softmax(logits, Rc::clone(&edges.dst))?;
            let msgs = tape.gather_rows(s0, Rc::clone(&edges.src))?;
            let weighted = tape.mul(alpha, msgs)?;
            tape.scatter_add_rows(weighted, Rc::clone(&edges.dst), n)
        }
    }
}

fn fit(
    mut model: NieModel,
    embeddings: &FeatureMatrix,
    labels: &LabelSet,
    edges: Option<&EdgeIndex>,
    config: &DownstreamConfig,
) -> Result<NieModel> {
    let nodes = check_training_set(embeddings, labels)?;
    let z_value = model.standardize(embeddings)?;
    let target = Tensor::column(nodes.iter().map(|&n| labels.score(n).expect("labelled")).collect());
    let rows: Rc<[usize]> = nodes.into();
    let inv_n = 1.0 / rows.len() as f64;
    let mut adam = Adam::new(config.learning_rate);
    for epoch in 1..=config.epochs {
        let mut tape = Tape::new();
        let vars: Vec<Var> = model.blocks.iter().map(|(_, t)| tape.param(t.clone())).collect();
        let z = tape.constant(z_value.clone());
        let y = tape.constant(target.clone());
        let out = forward(&mut tape, &model, &vars, z, edges)?;
        let picked = tape.gather_rows(out, Rc::clone(&rows))?;
        let diff = tape.sub(picked, y)?;
        let sq = tape.mul(diff, diff)?;
        let total = tape.sum(sq);
        let mse = tape.scale(total, inv_n);
        let loss = tape.value(mse).item();
        if !loss.is_finite() {
            return Err(LicapError::NonFinite(format!("downstream loss at epoch {epoch}")));
        }
        model.loss_history.push(loss);
        tape.backward(mse)?;
        let grads: Vec<Tensor> = vars.iter().map(|&v| tape.grad_or_zero(v)).collect();
        let mut params: Vec<&mut Tensor> = model.blocks.iter_mut().map(|(_, t)| t).collect();
        adam.step(&mut params, &grads)?;
    }
    Ok(model)
}

/// Fits a two-layer perceptron `leaky(zW1 + b1)W2 + b2` to the labelled rows.
pub fn train_mlp(embeddings: &FeatureMatrix, labels: &LabelSet, config: &DownstreamConfig) -> Result<NieModel> {
    config.validate()?;
    let nodes = check_training_set(embeddings, labels)?;
    let (feature_mean, feature_scale) = column_stats(embeddings, &nodes);
    let d = embeddings.cols();
    let h = config.hidden_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let blocks = vec![
        ("hidden.weight".to_owned(), uniform(&mut rng, d, h, d, h)),
        ("hidden.bias".to_owned(), Tensor::zeros(1, h)),
        ("output.weight".to_owned(), uniform(&mut rng, h, 1, h, 1)),
        ("output.bias".to_owned(), Tensor::scalar(label_mean(labels))),
    ];
    let model = NieModel {
        kind: ModelKind::Mlp,
        input_dim: d,
        hidden_dim: h,
        negative_slope: config.negative_slope,
        feature_mean,
        feature_scale,
        blocks,
        loss_history: Vec::new(),
    };
    fit(model, embeddings, labels, None, config)
}

/// Fits `s_i = Σ_j α_ij s⁰_j` with `s⁰ = z·w + b` and attention
/// `α = softmax_j leaky(z_i·a_dst + z_j·a_src)` over incoming messages of the
/// augmented graph. An un-augmented graph is augmented first.
pub fn train_aggregated_scorer(
    kg: &KnowledgeGraph,
    embeddings: &FeatureMatrix,
    labels: &LabelSet,
    config: &DownstreamConfig,
) -> Result<NieModel> {
    config.validate()?;
    let nodes = check_training_set(embeddings, labels)?;
    let edges = edge_index(kg)?;
    let (feature_mean, feature_scale) = column_stats(embeddings, &nodes);
    let d = embeddings.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let blocks = vec![
        ("score.weight".to_owned(), uniform(&mut rng, d, 1, d, 1)),
        ("score.bias".to_owned(), Tensor::zeros(1, 1)),
        ("attention.dst".to_owned(), uniform(&mut rng, d, 1, d, 1)),
        ("attention.src".to_owned(), uniform(&mut rng, d, 1, d, 1)),
    ];
    let model = NieModel {
        kind: ModelKind::AggregatedScorer,
        input_dim: d,
        hidden_dim: 0,
        negative_slope: config.negative_slope,
        feature_mean,
        feature_scale,
        blocks,
        loss_history: Vec::new(),
    };
    fit(model, embeddings, labels, Some(&edges), config)
}

/// Dispatches on `config.kind`.
pub fn train(
    kg: &KnowledgeGraph,
    embeddings: &FeatureMatrix,
    labels: &LabelSet,
    config: &DownstreamConfig,
) -> Result<NieModel> {
    match config.kind {
        ModelKind::Mlp => train_mlp(embeddings, labels, config),
        ModelKind::AggregatedScorer => train_aggregated_scorer(kg, embeddings, labels, config),
    }
}

fn edge_index(kg: &KnowledgeGraph) -> Result<EdgeIndex> {
    let kg: Cow<'_, KnowledgeGraph> = if kg.is_augmented() {
        Cow::Borrowed(kg)
    } else {
        Cow::Owned(kg.augment_for_message_passing()?)
    };
    EdgeIndex::new(&kg)
}

/// One score per embedding row. The aggregated scorer needs `kg`.
pub fn predict(model: &NieModel, embeddings: &FeatureMatrix, kg: Option<&KnowledgeGraph>) -> Result<Vec<f64>> {
    let edges = match (model.kind, kg) {
        (ModelKind::AggregatedScorer, Some(kg)) => Some(edge_index(kg)?),
        (ModelKind::AggregatedScorer, None) => {
            return Err(LicapError::invalid("aggregated scorer needs a graph to predict"))
        }
        (ModelKind::Mlp, _) => None,
    };
    let z_value = model.standardize(embeddings)?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = model.blocks.iter().map(|(_, t)| tape.constant(t.clone())).collect();
    let z = tape.constant(z_value);
    let out = forward(&mut tape, model, &vars, z, edges.as_ref())?;
    let scores = tape.value(out).data().to_vec();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(LicapError::NonFinite("prediction".into()));
    }
    Ok(scores)
}

/// Attention weights of the aggregated scorer, one per message edge of the
/// augmented graph in destination-major order.
pub fn aggregation_weights(model: &NieModel, embeddings: &FeatureMatrix, kg: &KnowledgeGraph) -> Result<Vec<f64>> {
    if model.kind != ModelKind::AggregatedScorer {
        return Err(LicapError::invalid("only the aggregated scorer has attention weights"));
    }
    let edges = edge_index(kg)?;
    let z_value = model.standardize(embeddings)?;
    let mut tape = Tape::new();
    let z = tape.constant(z_value);
    let a_dst = tape.constant(model.blocks[2].1.clone());
    let a_src = tape.constant(model.blocks[3].1.clone());
    let e_dst = tape.matmul(z, a_dst)?;
    let e_src = tape.matmul(z, a_src)?;
    let e_dst = tape.gather_rows(e_dst, Rc::clone(&edges.dst))?;
    let e_src = tape.gather_rows(e_src, Rc::clone(&edges.src))?;
    let logits = tape.add(e_dst, e_src)?;
    let logits = tape.leaky_relu(logits, model.negative_slope);
    let alpha = tape.segment_softmax(logits, Rc::clone(&edges.dst))?;
    Ok(tape.value(alpha).data().to_vec())
}

/// Power iteration on the original directed edges. Mass of nodes without
/// out-edges is spread uniformly. Stops when the L1 change drops below `tol`.
pub fn pagerank(kg: &KnowledgeGraph, damping: f64, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    if !(damping > 0.0 && damping < 1.0) {
        return Err(LicapError::invalid(format!("damping must lie in (0, 1), got {damping}")));
    }
    let n = kg.node_count();
    if n == 0 {
        return Err(LicapError::EmptyInput("pagerank on an empty graph".into()));
    }
    let base = kg.base_predicate_count();
    let original: Vec<(NodeId, NodeId)> = kg
        .edges()
        .iter()
        .filter(|e| !kg.is_augmented() || e.predicate < base)
        .map(|e| (e.head, e.tail))
        .collect();
    let mut out_degree = vec![0usize; n];
    original.iter().for_each(|&(h, _)| out_degree[h] += 1);
    // Incoming lists sorted so the summation order ignores edge storage order.
    let mut incoming: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    original.iter().for_each(|&(h, t)| incoming[t].push(h));
    incoming.iter_mut().for_each(|v| v.sort_unstable());

    let nf = n as f64;
    let mut rank = vec![1.0 / nf; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let dangling: f64 = (0..n).filter(|&i| out_degree[i] == 0).map(|i| rank[i]).sum();
        let shared = (1.0 - damping) / nf + damping * dangling / nf;
        let next: Vec<f64> = incoming
            .iter()
            .map(|srcs| shared + damping * srcs.iter().map(|&j| rank[j] / out_degree[j] as f64).sum::<f64>())
            .collect();
        residual = next.iter().zip(&rank).map(|(a, b)| (a - b).abs()).sum();
        rank = next;
        if residual < tol {
            let total: f64 = rank.iter().sum();
            rank.iter_mut().for_each(|r| *r /= total);
            return Ok(rank);
        }
    }
    Err(LicapError::NonConvergence {
        iterations: max_iter,
        residual,
    })
}
