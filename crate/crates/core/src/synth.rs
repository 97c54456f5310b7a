//! Seeded synthetic knowledge graphs.
//!
//! [`synth_kg`] plants importance as a noisy function of in-degree on a
//! preferential-attachment multigraph. [`random_kg`] draws a fixed number of
//! uniform edges and is used for timing runs.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

use crate::error::{LicapError, Result};
use crate::kg::{Edge, FeatureMatrix, KnowledgeGraph, LabelSet};

/// Generator knobs. [`SynthConfig::default`] is what [`synth_kg`] uses.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Out-edges added by every new node.
    pub edges_per_node: usize,
    /// Standard deviation of the label noise before taking its magnitude.
    pub label_noise: f64,
    /// Number of pure noise feature columns.
    pub noise_dims: usize,
    /// Loadings of the in-degree block on `ln(1 + in_degree)`.
    pub signal_loadings: Vec<f64>,
    /// Standard deviation of the noise added to each in-degree column.
    pub signal_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            edges_per_node: 2,
            label_noise: 0.5,
            noise_dims: 16,
            signal_loadings: vec![1.0, -0.5, 0.8, 0.3],
            signal_noise: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn feature_dim(&self) -> usize {
        self.noise_dims + self.signal_loadings.len()
    }
}

/// A generated graph with labels for every node and matching features.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub kg: KnowledgeGraph,
    pub labels: LabelSet,
    pub features: FeatureMatrix,
}

/// `synth_with(n_nodes, n_predicates, seed, &SynthConfig::default())`.
pub fn synth_kg(n_nodes: usize, n_predicates: usize, seed: u64) -> Result<SynthData> {
    synth_with(n_nodes, n_predicates, seed, &SynthConfig::default())
}

/// Nodes arrive one at a time and point to earlier nodes chosen with
/// probability proportional to `in_degree + 1`, with replacement, so repeated
/// edges are possible. Raw labels are `in_degree + |N(0, label_noise)|`.
pub fn synth_with(n_nodes: usize, n_predicates: usize, seed: u64, cfg: &SynthConfig) -> Result<SynthData> {
    if n_nodes < 20 {
        return Err(LicapError::invalid(format!("synthetic graph needs at least 20 nodes, got {n_nodes}")));
    }
    if n_predicates == 0 {
        return Err(LicapError::invalid("synthetic graph needs at least one predicate"));
    }
    if cfg.edges_per_node == 0 {
        return Err(LicapError::invalid("edges_per_node must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_degree = vec![0usize; n_nodes];
    let mut edges = Vec::with_capacity(n_nodes * cfg.edges_per_node);
    for new in 1..n_nodes {
        for _ in 0..cfg.edges_per_node {
            let weights = in_degree[..new].iter().map(|&d| d as f64 + 1.0);
            let target = WeightedIndex::new(weights)
                .expect("positive weights")
                .sample(&mut rng);
            let predicate = rng.random_range(0..n_predicates);
            edges.push(Edge {
                head: new,
                predicate,
                tail: target,
            });
            in_degree[target] += 1;
        }
    }
    let kg = KnowledgeGraph::from_edges(n_nodes, n_predicates, edges)?;

    let label_noise = Normal::new(0.0, cfg.label_noise).map_err(|e| LicapError::invalid(e.to_string()))?;
    let raw: Vec<(usize, f64)> = in_degree
        .iter()
        .enumerate()
        .map(|(i, &d)| (i, d as f64 + label_noise.sample(&mut rng).abs()))
        .collect();
    let labels = LabelSet::from_raw(raw)?;

    let dim = cfg.feature_dim();
    let mut values = Vec::with_capacity(n_nodes * dim);
    for &d in &in_degree {
        values.extend((0..cfg.noise_dims).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let signal = (1.0 + d as f64).ln();
        for &w in &cfg.signal_loadings {
            values.push(w * signal + cfg.signal_noise * rng.sample::<f64, _>(StandardNormal));
        }
    }
    let features = FeatureMatrix::new(n_nodes, dim, values)?;
    Ok(SynthData { kg, labels, features })
}

/// Uniform random multigraph with exactly `n_edges` edges (self loops
/// excluded), standard normal features, and `ln(1 + in_degree)` style labels.
pub fn random_kg(
    n_nodes: usize,
    n_edges: usize,
    n_predicates: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<SynthData> {
    if n_nodes < 2 || n_predicates == 0 || feature_dim == 0 {
        return Err(LicapError::invalid("random graph needs 2+ nodes, 1+ predicates and features"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_degree = vec![0usize; n_nodes];
    let edges = (0..n_edges)
        .map(|_| {
            let head = rng.random_range(0..n_nodes);
            let tail = (head + rng.random_range(1..n_nodes)) % n_nodes;
            in_degree[tail] += 1;
            Edge {
                head,
                predicate: rng.random_range(0..n_predicates),
                tail,
            }
        })
        .collect();
    let kg = KnowledgeGraph::from_edges(n_nodes, n_predicates, edges)?;
    let labels = LabelSet::from_raw(in_degree.iter().enumerate().map(|(i, &d)| (i, d as f64 + rng.random::<f64>())))?;
    let values = (0..n_nodes * feature_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let features = FeatureMatrix::new(n_nodes, feature_dim, values)?;
    Ok(SynthData { kg, labels, features })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_deterministic_and_sane() {
        let a = synth_kg(60, 3, 5).unwrap();
        let b = synth_kg(60, 3, 5).unwrap();
        assert_eq!(a.kg.edges(), b.kg.edges());
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.features, b.features);
        assert_eq!(a.kg.edge_count(), 59 * 2);
        assert_eq!(a.features.cols(), 20);
        assert_eq!(a.labels.len(), 60);
        assert!(a.labels.scores().iter().all(|s| s.is_finite() && *s >= 0.0));
        assert!(synth_kg(19, 3, 5).is_err());
    }

    #[test]
    fn scores_track_in_degree() {
        let d = synth_kg(200, 4, 1).unwrap();
        let indeg = d.kg.in_degrees();
        for (node, score) in d.labels.iter() {
            let lo = (1.0 + indeg[node] as f64).ln();
            assert!(score >= lo - 1e-12);
        }
    }

    #[test]
    fn random_graph_has_requested_edges() {
        let d = random_kg(100, 1000, 3, 8, 2).unwrap();
        assert_eq!(d.kg.edge_count(), 1000);
        assert!(d.kg.edges().iter().all(|e| e.head != e.tail));
    }
}
