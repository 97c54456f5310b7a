//! Label informed contrastive pretraining.
//!
//! Each epoch encodes the graph, recomputes the bin prototypes from the
//! current embeddings, draws one shared negative sample from the non-top
//! nodes, and minimises `η1·L1 + η2·L2` with Adam:
//!
//! - `L1 = Σ_{i∈top} −log( e^{h_i·c_top/τ} / (e^{h_i·c_top/τ} + Σ_j e^{h_i·h_j/τ}) )`
//! - `L2 = Σ_m Σ_{i∈bin_m} −log( e^{h_i·c_m/τ} / Σ_n e^{β_mn·h_i·c_n/τ} )`
//!
//! Both are evaluated as `logsumexp(row) − positive` so they stay finite at
//! small temperatures.

use std::borrow::Cow;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Tape, Tensor, Var};
use crate::binning::{finer_bins, proximity_matrix, BinAssignment};
use crate::error::{LicapError, Result};
use crate::kg::{FeatureMatrix, KnowledgeGraph, LabelSet, NodeId};
use crate::pregat::{features_tensor, EdgeIndex, EncoderMode, PreGatConfig, PreGatParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Variant {
    /// Both losses with the configured weights.
    #[default]
    Full,
    /// `η2 = 0`.
    L1Only,
    /// `η1 = 0`.
    L2Only,
    /// L1 only, with a uniformly random positive set of the top-set size.
    RandomSampling,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::L1Only => "l1_only",
            Variant::L2Only => "l2_only",
            Variant::RandomSampling => "random_sampling",
        }
    }

    /// Effective `(η1, η2)`.
    pub fn loss_weights(self, eta1: f64, eta2: f64) -> (f64, f64) {
        match self {
            Variant::Full => (eta1, eta2),
            Variant::L1Only => (1.0, 0.0),
            Variant::L2Only => (0.0, 1.0),
            Variant::RandomSampling => (1.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub gamma: f64,
    pub bin_width: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub tau: f64,
    pub k_neg: f64,
    pub epochs: usize,
    pub patience: usize,
    /// Early stopping is not considered before this epoch.
    pub min_epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub variant: Variant,
    pub encoder_mode: EncoderMode,
    pub hidden_dim: usize,
    pub heads: usize,
    pub predicate_dim: usize,
    pub layers: usize,
    pub negative_slope: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            bin_width: 1.0,
            eta1: 1.0,
            eta2: 1.0,
            tau: 0.05,
            k_neg: 0.05,
            epochs: 200,
            patience: 20,
            min_epochs: 50,
            learning_rate: 0.01,
            seed: 0,
            variant: Variant::Full,
            encoder_mode: EncoderMode::Pregat,
            hidden_dim: 8,
            heads: 8,
            predicate_dim: 10,
            layers: 1,
            negative_slope: 0.2,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(LicapError::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.eta1 >= 0.0 && self.eta2 >= 0.0) {
            return Err(LicapError::invalid("loss weights must be non-negative"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(LicapError::invalid(format!(
                "important ratio must lie in (0, 1) for pretraining, got {}",
                self.gamma
            )));
        }
        if !(self.k_neg > 0.0 && self.k_neg <= 1.0) {
            return Err(LicapError::invalid(format!("k_neg must lie in (0, 1], got {}", self.k_neg)));
        }
        if self.epochs == 0 {
            return Err(LicapError::invalid("epochs must be at least 1"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(LicapError::invalid("learning rate must be positive"));
        }
        Ok(())
    }

    pub fn encoder_config(&self, input_dim: usize, predicate_count: usize) -> PreGatConfig {
        PreGatConfig {
            input_dim,
            hidden_dim: self.hidden_dim,
            heads: self.heads,
            predicate_dim: self.predicate_dim,
            layers: self.layers,
            predicate_count,
            mode: self.encoder_mode,
            negative_slope: self.negative_slope,
        }
    }
}

/// One shared negative sample of `max(1, ⌈k_neg·|nontop|⌉)` nodes drawn
/// without replacement, returned in ascending id order.
pub fn sample_negatives(nontop: &[NodeId], k_neg: f64, rng: &mut ChaCha8Rng) -> Result<Vec<NodeId>> {
    if nontop.is_empty() {
        return Err(LicapError::invalid("no non-top nodes to sample negatives from"));
    }
    if !(k_neg > 0.0 && k_neg <= 1.0) {
        return Err(LicapError::invalid(format!("k_neg must lie in (0, 1], got {k_neg}")));
    }
    let k = crate::ceil_count(k_neg * nontop.len() as f64).clamp(1, nontop.len());
    let mut picked: Vec<NodeId> = index::sample(rng, nontop.len(), k)
        .into_iter()
        .map(|i| nontop[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Top-bin contrastive loss against the prototype `c_top` (`1×D`) and a
/// shared negative set. With no negatives the loss is exactly zero.
pub fn loss_l1(
    tape: &mut Tape,
    h: Var,
    top: &[NodeId],
    c_top: Var,
    negatives: &[NodeId],
    tau: f64,
) -> Result<Var> {
    let anchors = tape.gather_rows(h, top)?;
    let proto_t = tape.transpose(c_top);
    let pos = tape.matmul(anchors, proto_t)?;
    let pos = tape.scale(pos, 1.0 / tau);
    let logits = if negatives.is_empty() {
        pos
    } else {
        let negs = tape.gather_rows(h, negatives)?;
        let negs_t = tape.transpose(negs);
        let neg = tape.matmul(anchors, negs_t)?;
        let neg = tape.scale(neg, 1.0 / tau);
        tape.concat_cols(&[pos, neg])?
    };
    let lse = tape.logsumexp_rows(logits)?;
    let per_node = tape.sub(lse, pos)?;
    Ok(tape.sum(per_node))
}

/// Finer-bin contrastive loss. `prototypes[m]` is the `1×D` prototype of
/// `bins[m]`; `beta` is the `B×B` proximity matrix and scales each logit
/// inside the exponent. With a single bin the loss is exactly zero.
pub fn loss_l2(
    tape: &mut Tape,
    h: Var,
    bins: &[Vec<NodeId>],
    prototypes: &[Var],
    beta: &Tensor,
    tau: f64,
) -> Result<Var> {
    let b = bins.len();
    if b == 0 || prototypes.len() != b || beta.shape() != [b, b] {
        return Err(LicapError::invalid(format!(
            "loss_l2: {b} bins, {} prototypes, beta {:?}",
            prototypes.len(),
            beta.shape()
        )));
    }
    let members: Vec<NodeId> = bins.concat();
    let mut weights = Vec::with_capacity(members.len() * b);
    let mut own = Vec::with_capacity(members.len() * b);
    for (m, bin) in bins.iter().enumerate() {
        for _ in bin {
            weights.extend_from_slice(beta.row(m));
            own.extend((0..b).map(|n| if n == m { 1.0 } else { 0.0 }));
        }
    }
    let anchors = tape.gather_rows(h, members.as_slice())?;
    let protos = tape.concat_rows(prototypes)?;
    let protos_t = tape.transpose(protos);
    let logits = tape.matmul(anchors, protos_t)?;
    let logits = tape.scale(logits, 1.0 / tau);

    let weights = tape.constant(Tensor::new(members.len(), b, weights)?);
    let own = tape.constant(Tensor::new(members.len(), b, own)?);
    let ones = tape.constant(Tensor::filled(b, 1, 1.0));

    let weighted = tape.mul(logits, weights)?;
    let lse = tape.logsumexp_rows(weighted)?;
    let picked = tape.mul(logits, own)?;
    let pos = tape.matmul(picked, ones)?;
    let per_node = tape.sub(lse, pos)?;
    Ok(tape.sum(per_node))
}

/// `η1·L1 + η2·L2`.
pub fn total_loss(tape: &mut Tape, l1: Var, l2: Var, eta1: f64, eta2: f64) -> Result<Var> {
    let a = tape.scale(l1, eta1);
    let b = tape.scale(l2, eta2);
    tape.add(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// `node_count × H·F'` embeddings from the restored best parameters.
    pub embeddings: FeatureMatrix,
    pub log: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were restored.
    pub best_epoch: usize,
    pub params: PreGatParams,
    /// Positive set used for L1: the top bin, or a random set for
    /// [`Variant::RandomSampling`].
    pub positives: Vec<NodeId>,
    pub grouping: BinAssignment,
}

impl PretrainOutcome {
    pub fn best_loss(&self) -> f64 {
        self.log[self.best_epoch - 1].total
    }
}

/// Shared per-run data for evaluating the objective.
pub struct Objective<'a> {
    pub params: &'a PreGatParams,
    pub edges: &'a EdgeIndex,
    pub positives: &'a [NodeId],
    pub bins: &'a [Vec<NodeId>],
    pub beta: &'a Tensor,
    pub tau: f64,
    pub eta1: f64,
    pub eta2: f64,
}

/// Handles of one evaluated objective.
pub struct ObjectiveVars {
    pub embeddings: Var,
    pub l1: Var,
    pub l2: Var,
    pub total: Var,
}

impl Objective<'_> {
    /// Encodes `x` with parameters bound as `bound` and builds both losses.
    pub fn build(
        &self,
        tape: &mut Tape,
        bound: &crate::pregat::BoundParams,
        x: Var,
        negatives: &[NodeId],
    ) -> Result<ObjectiveVars> {
        let h = self.params.encode(tape, bound, self.edges, x)?;
        let c_top = tape.mean_rows(h, self.positives)?;
        let l1 = loss_l1(tape, h, self.positives, c_top, negatives, self.tau)?;
        let prototypes = self
            .bins
            .iter()
            .map(|bin| tape.mean_rows(h, bin.as_slice()))
            .collect::<Result<Vec<Var>>>()?;
        let l2 = loss_l2(tape, h, self.bins, &prototypes, self.beta, self.tau)?;
        let total = total_loss(tape, l1, l2, self.eta1, self.eta2)?;
        Ok(ObjectiveVars {
            embeddings: h,
            l1,
            l2,
            total,
        })
    }
}

/// Runs the pretraining loop and returns embeddings from the best-loss
/// parameters. An un-augmented graph is augmented first.
pub fn pretrain(
    kg: &KnowledgeGraph,
    features: &FeatureMatrix,
    labels: &LabelSet,
    config: &PretrainConfig,
) -> Result<PretrainOutcome> {
    pretrain_with_observer(kg, features, labels, config, |_| {})
}

/// [`pretrain`] with a callback after every epoch.
pub fn pretrain_with_observer(
    kg: &KnowledgeGraph,
    features: &FeatureMatrix,
    labels: &LabelSet,
    config: &PretrainConfig,
    mut observe: impl FnMut(&EpochRecord),
) -> Result<PretrainOutcome> {
    config.validate()?;
    let kg: Cow<'_, KnowledgeGraph> = if kg.is_augmented() {
        Cow::Borrowed(kg)
    } else {
        Cow::Owned(kg.augment_for_message_passing()?)
    };
    if features.rows() != kg.node_count() {
        return Err(LicapError::invalid(format!(
            "{} feature rows for {} nodes",
            features.rows(),
            kg.node_count()
        )));
    }
    if labels.nodes().iter().any(|&n| n >= kg.node_count()) {
        return Err(LicapError::invalid("label refers to a node outside the graph"));
    }

    let grouping = BinAssignment::new(labels, config.gamma, config.bin_width)?;
    if grouping.nontop_nodes.is_empty() {
        return Err(LicapError::invalid("important ratio leaves no non-top nodes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (positives, negative_pool, bins, beta) = match config.variant {
        Variant::RandomSampling => {
            let all = labels.nodes();
            let k = grouping.top_nodes.len();
            let chosen: Vec<usize> = index::sample(&mut rng, all.len(), k).into_vec();
            let mut mask = vec![false; all.len()];
            chosen.iter().for_each(|&i| mask[i] = true);
            let mut positives: Vec<NodeId> = chosen.iter().map(|&i| all[i]).collect();
            positives.sort_unstable();
            let pool: Vec<NodeId> = all.iter().zip(&mask).filter(|(_, &m)| !m).map(|(&n, _)| n).collect();
            let scored: Vec<(NodeId, f64)> =
                positives.iter().map(|&n| (n, labels.score(n).unwrap_or(0.0))).collect();
            let bins = finer_bins(&scored, config.bin_width)?;
            let beta = proximity_matrix(bins.len())?;
            (positives, pool, bins, beta)
        }
        _ => (
            grouping.top_nodes.clone(),
            grouping.nontop_nodes.clone(),
            grouping.finer_bins.clone(),
            grouping.beta.clone(),
        ),
    };
    let (eta1, eta2) = config.variant.loss_weights(config.eta1, config.eta2);

    let edges = EdgeIndex::new(&kg)?;
    let encoder_cfg = config.encoder_config(features.cols(), kg.predicate_count());
    let mut params = PreGatParams::init(encoder_cfg, config.seed)?;
    let x_value = features_tensor(features);
    let mut adam = Adam::new(config.learning_rate);

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, PreGatParams)> = None;

    for epoch in 1..=config.epochs {
        let negatives = sample_negatives(&negative_pool, config.k_neg, &mut rng)?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(x_value.clone());
        let objective = Objective {
            params: &params,
            edges: &edges,
            positives: &positives,
            bins: &bins,
            beta: &beta,
            tau: config.tau,
            eta1,
            eta2,
        };
        let vars = objective.build(&mut tape, &bound, x, &negatives)?;
        let record = EpochRecord {
            epoch,
            l1: tape.value(vars.l1).item(),
            l2: tape.value(vars.l2).item(),
            total: tape.value(vars.total).item(),
        };
        if !record.total.is_finite() {
            return Err(LicapError::NonFinite(format!(
                "total loss at epoch {epoch} (l1 = {}, l2 = {})",
                record.l1, record.l2
            )));
        }
        observe(&record);
        log.push(record);

        if best.as_ref().is_none_or(|(loss, _, _)| record.total < *loss) {
            best = Some((record.total, epoch, params.clone()));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if epoch >= config.min_epochs && epoch - best_epoch >= config.patience {
            break;
        }

        tape.backward(vars.total)?;
        let grads: Vec<Tensor> = bound.vars.iter().map(|&v| tape.grad_or_zero(v)).collect();
        adam.step(&mut params.tensors_mut(), &grads).map_err(|e| match e {
            LicapError::NonFinite(what) => LicapError::NonFinite(format!("{what} at epoch {epoch}")),
            other => other,
        })?;
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    let embeddings = best_params.forward(&kg, features)?;
    let embeddings = FeatureMatrix::new(embeddings.rows(), embeddings.cols(), embeddings.into_data())?;
    Ok(PretrainOutcome {
        embeddings,
        log,
        best_epoch,
        params: best_params,
        positives,
        grouping,
    })
}
