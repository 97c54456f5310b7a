#![allow(dead_code)]

pub mod reference;

use licap::kg::Edge;
use licap::pregat::{PreGatConfig, PreGatParams};
use licap::{FeatureMatrix, KnowledgeGraph, LabelSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded 6-node / 10-edge graph with 3 predicates, 4-dim features and
/// labels on every node.
pub struct Toy {
    pub kg: KnowledgeGraph,
    pub features: FeatureMatrix,
    pub labels: LabelSet,
}

pub fn toy(seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<Edge> = (0..10)
        .map(|_| {
            let head = rng.random_range(0..6);
            let tail = (head + rng.random_range(1..6)) % 6;
            Edge { head, predicate: rng.random_range(0..3), tail }
        })
        .collect();
    let kg = KnowledgeGraph::from_edges(6, 3, edges).unwrap();
    let features = FeatureMatrix::new(6, 4, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let labels = LabelSet::from_raw((0..6).map(|i| (i, rng.random_range(0.0..50.0)))).unwrap();
    Toy { kg, features, labels }
}

/// Small encoder so finite differences stay cheap.
pub fn small_encoder(kg: &KnowledgeGraph, input_dim: usize, seed: u64) -> PreGatParams {
    let cfg = PreGatConfig {
        hidden_dim: 3,
        heads: 2,
        predicate_dim: 2,
        ..PreGatConfig::new(input_dim, kg.predicate_count())
    };
    PreGatParams::init(cfg, seed).unwrap()
}

/// Block means of consecutive non-overlapping windows; a trailing partial
/// window is dropped.
pub fn block_means(values: &[f64], window: usize) -> Vec<f64> {
    values
        .chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect()
}

/// Mean cosine similarity to the top prototype, top minus non-top, after
/// mean-centring all rows.
pub fn separation(emb: &FeatureMatrix, top: &[usize], nontop: &[usize]) -> f64 {
    let d = emb.cols();
    let n = emb.rows() as f64;
    let mut mu = vec![0.0; d];
    for i in 0..emb.rows() {
        mu.iter_mut().zip(emb.row(i)).for_each(|(m, v)| *m += v / n);
    }
    let centred = |i: usize| -> Vec<f64> { emb.row(i).iter().zip(&mu).map(|(v, m)| v - m).collect() };
    let mut c = vec![0.0; d];
    for &i in top {
        c.iter_mut().zip(centred(i)).for_each(|(a, v)| *a += v / top.len() as f64);
    }
    let cos = |a: &[f64], b: &[f64]| -> f64 {
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
        }
    };
    let mean_cos = |set: &[usize]| set.iter().map(|&i| cos(&centred(i), &c)).sum::<f64>() / set.len() as f64;
    mean_cos(top) - mean_cos(nontop)
}

use licap::autodiff::{grad_check, Tape, Tensor, Var};
use licap::binning::BinAssignment;
use licap::pregat::{features_tensor, BoundParams, EdgeIndex};
use licap::pretrain::Objective;

#[derive(Debug, Clone, Copy)]
pub enum Target {
    Encoder,
    L1,
    L2,
    Total,
}

/// Largest relative finite-difference error of `target` over the input
/// features and every encoder tensor.
pub fn grad_error(t: &Toy, params: &PreGatParams, target: Target, tau: f64, eps: f64) -> f64 {
    let aug = t.kg.augment_for_message_passing().unwrap();
    let edges = EdgeIndex::new(&aug).unwrap();
    let grouping = BinAssignment::new(&t.labels, 0.5, 0.5).unwrap();
    let x0 = features_tensor(&t.features);
    let out_dim = params.config.output_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let readout = Tensor::new(6, out_dim, (0..6 * out_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let objective = Objective {
        params,
        edges: &edges,
        positives: &grouping.top_nodes,
        bins: &grouping.finer_bins,
        beta: &grouping.beta,
        tau,
        eta1: 1.0,
        eta2: 0.7,
    };
    let tensors = params.tensors();
    let mut worst = 0.0f64;
    for probe in 0..=tensors.len() {
        let f = |tape: &mut Tape, x: Var| -> licap::Result<Var> {
            let vars = tensors
                .iter()
                .enumerate()
                .map(|(i, t)| if i + 1 == probe { x } else { tape.constant((*t).clone()) })
                .collect();
            let bound = BoundParams { vars };
            let feats = if probe == 0 { x } else { tape.constant(x0.clone()) };
            match target {
                Target::Encoder => {
                    let h = params.encode(tape, &bound, &edges, feats)?;
                    let r = tape.constant(readout.clone());
                    tape.dot(h, r)
                }
                _ => {
                    let v = objective.build(tape, &bound, feats, &grouping.nontop_nodes)?;
                    Ok(match target {
                        Target::L1 => v.l1,
                        Target::L2 => v.l2,
                        _ => v.total,
                    })
                }
            }
        };
        let x = if probe == 0 { x0.clone() } else { tensors[probe - 1].clone() };
        worst = worst.max(grad_check(f, &x, eps).unwrap());
    }
    worst
}
