//! Label informed grouping: the top/non-top split, width-based finer bins
//! inside the top bin, and the binomial proximity coefficients between bins.

use crate::autodiff::Tensor;
use crate::error::{LicapError, Result};
use crate::kg::{FeatureMatrix, LabelSet, NodeId};

/// Result of grouping the labelled nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BinAssignment {
    /// Top nodes by descending score, ties by ascending id.
    pub top_nodes: Vec<NodeId>,
    /// Remaining labelled nodes in ascending id order.
    pub nontop_nodes: Vec<NodeId>,
    /// Finer bins of the top set, ascending by score interval.
    pub finer_bins: Vec<Vec<NodeId>>,
    pub bin_width: f64,
    pub gamma: f64,
    /// `B×B` proximity coefficients, 0-indexed.
    pub beta: Tensor,
}

impl BinAssignment {
    pub fn new(labels: &LabelSet, gamma: f64, bin_width: f64) -> Result<Self> {
        let (top_nodes, nontop_nodes) = split_top(labels, gamma)?;
        let scored: Vec<(NodeId, f64)> = top_nodes
            .iter()
            .map(|&n| (n, labels.score(n).expect("top node is labelled")))
            .collect();
        let finer = finer_bins(&scored, bin_width)?;
        let beta = proximity_matrix(finer.len())?;
        Ok(Self {
            top_nodes,
            nontop_nodes,
            finer_bins: finer,
            bin_width,
            gamma,
            beta,
        })
    }

    pub fn bin_count(&self) -> usize {
        self.finer_bins.len()
    }
}

/// Splits labelled nodes into the `⌈γn⌉` (at least one) highest-scoring nodes
/// and the rest.
pub fn split_top(labels: &LabelSet, gamma: f64) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(LicapError::invalid(format!("important ratio must lie in (0, 1], got {gamma}")));
    }
    let n = labels.len();
    if n < 2 {
        return Err(LicapError::invalid(format!("need at least 2 labelled nodes, got {n}")));
    }
    let k = crate::ceil_count(gamma * n as f64).clamp(1, n);
    let ranked = labels.ranked();
    let top = ranked[..k].to_vec();
    let mut rest = ranked[k..].to_vec();
    rest.sort_unstable();
    Ok((top, rest))
}

/// Groups scored nodes into half-open intervals `[lo + k·w, lo + (k+1)·w)`
/// anchored at the minimum score. Empty intervals are dropped and the
/// survivors returned in ascending score order. Members keep input order.
pub fn finer_bins(scored: &[(NodeId, f64)], bin_width: f64) -> Result<Vec<Vec<NodeId>>> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(LicapError::invalid(format!("bin width must be positive, got {bin_width}")));
    }
    if scored.is_empty() {
        return Err(LicapError::invalid("cannot bin an empty top set"));
    }
    let lo = scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let hi = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let slots = ((hi - lo) / bin_width).floor() as usize + 1;
    let mut raw = vec![Vec::new(); slots];
    for &(node, score) in scored {
        let k = (((score - lo) / bin_width).floor() as usize).min(slots - 1);
        raw[k].push(node);
    }
    Ok(raw.into_iter().filter(|b| !b.is_empty()).collect())
}

/// `β_mn = C(N, n − m + N/2) / C(N, N/2)` with `N = 2·max(m, B − m)`,
/// 1-indexed `m, n`; returned as a 0-indexed `B×B` tensor.
pub fn proximity_matrix(bins: usize) -> Result<Tensor> {
    if bins == 0 {
        return Err(LicapError::invalid("proximity matrix needs at least one bin"));
    }
    let mut beta = Tensor::zeros(bins, bins);
    for m in 1..=bins {
        let half = m.max(bins - m);
        for n in 1..=bins {
            let offset = n.abs_diff(m);
            beta.set(m - 1, n - 1, central_binomial_ratio(half, offset));
        }
    }
    Ok(beta)
}

/// `C(2h, h + d) / C(2h, h)` as the product `Π_{i=1..d} (h − d + i) / (h + i)`,
/// which stays in range for any `h`.
fn central_binomial_ratio(half: usize, offset: usize) -> f64 {
    debug_assert!(offset <= half);
    let (h, d) = (half as f64, offset as f64);
    (1..=offset).fold(1.0, |acc, i| acc * (h - d + i as f64) / (h + i as f64))
}

/// Element-wise mean of the given rows.
pub fn prototype(embeddings: &FeatureMatrix, nodes: &[NodeId]) -> Result<Vec<f64>> {
    if nodes.is_empty() {
        return Err(LicapError::invalid("prototype of an empty node set"));
    }
    let mut out = vec![0.0; embeddings.cols()];
    for &n in nodes {
        if n >= embeddings.rows() {
            return Err(LicapError::invalid(format!("node {n} has no embedding row")));
        }
        for (o, v) in out.iter_mut().zip(embeddings.row(n)) {
            *o += v;
        }
    }
    let k = nodes.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(scores: &[f64]) -> LabelSet {
        LabelSet::from_raw(scores.iter().enumerate().map(|(i, &s)| (i, s.exp_m1()))).unwrap()
    }

    #[test]
    fn split_top_examples() {
        let l = labels(&[5.0, 4.0, 3.0, 2.0, 1.0]);
        let (top, rest) = split_top(&l, 0.2).unwrap();
        assert_eq!(top, vec![0]);
        assert_eq!(rest, vec![1, 2, 3, 4]);

        let l = labels(&[1.0; 10]);
        assert_eq!(split_top(&l, 0.01).unwrap().0.len(), 1);

        let l = labels(&[2.0, 2.0, 1.0]);
        assert_eq!(split_top(&l, 0.3).unwrap().0, vec![0]);
        assert_eq!(split_top(&l, 0.34).unwrap().0, vec![0, 1]);
    }

    #[test]
    fn split_top_errors() {
        let l = labels(&[1.0, 2.0]);
        assert!(split_top(&l, 0.0).is_err());
        assert!(split_top(&l, 1.5).is_err());
        assert!(split_top(&labels(&[1.0]), 0.5).is_err());
    }

    #[test]
    fn finer_bin_examples() {
        let bins = finer_bins(&[(0, 4.1), (1, 5.2), (2, 5.9)], 1.0).unwrap();
        assert_eq!(bins, vec![vec![0], vec![1, 2]]);

        let bins = finer_bins(&[(0, 2.0), (1, 2.0), (2, 2.0)], 0.5).unwrap();
        assert_eq!(bins.len(), 1);

        let bins = finer_bins(&[(0, 1.0), (1, 3.0)], 1.0).unwrap();
        assert_eq!(bins, vec![vec![0], vec![1]]);
        assert!(finer_bins(&[(0, 1.0)], 0.0).is_err());
    }

    #[test]
    fn proximity_small_cases() {
        assert_eq!(proximity_matrix(1).unwrap().data(), &[1.0]);
        let b2 = proximity_matrix(2).unwrap();
        let expect2 = [1.0, 0.5, 2.0 / 3.0, 1.0];
        for (a, e) in b2.data().iter().zip(expect2) {
            assert!((a - e).abs() < 1e-15);
        }
        let b3 = proximity_matrix(3).unwrap();
        let expect3 = [
            1.0, 4.0 / 6.0, 1.0 / 6.0,
            4.0 / 6.0, 1.0, 4.0 / 6.0,
            6.0 / 20.0, 15.0 / 20.0, 1.0,
        ];
        for (a, e) in b3.data().iter().zip(expect3) {
            assert!((a - e).abs() < 1e-15, "{a} vs {e}");
        }
        assert!(proximity_matrix(0).is_err());
    }

    #[test]
    fn proximity_is_finite_for_many_bins() {
        let b = proximity_matrix(400).unwrap();
        assert!(b.data().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn prototype_examples() {
        let e = FeatureMatrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(prototype(&e, &[1]).unwrap(), vec![3.0, 4.0]);
        assert_eq!(prototype(&e, &[0, 1, 2]).unwrap(), vec![3.0, 4.0]);
        let e = FeatureMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(prototype(&e, &[0, 1]).unwrap(), vec![0.5, 0.5]);
        assert!(prototype(&e, &[]).is_err());
    }

    #[test]
    fn assignment_partitions_labels() {
        let l = labels(&[0.1, 3.0, 2.2, 4.5, 0.7, 3.9, 1.0, 2.8]);
        let a = BinAssignment::new(&l, 0.5, 0.5).unwrap();
        let mut all: Vec<_> = a.top_nodes.iter().chain(&a.nontop_nodes).copied().collect();
        all.sort_unstable();
        assert_eq!(all, l.nodes());
        let mut binned: Vec<_> = a.finer_bins.concat();
        binned.sort_unstable();
        let mut top = a.top_nodes.clone();
        top.sort_unstable();
        assert_eq!(binned, top);
        assert_eq!(a.beta.shape(), [a.bin_count(), a.bin_count()]);
    }
}
