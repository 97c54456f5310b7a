//! Regression and ranking metrics for predicted importance scores.
//!
//! All rankings order by descending score and break ties by ascending index.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{LicapError, Result};

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(LicapError::invalid(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(LicapError::EmptyInput("no scores to evaluate".into()));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(LicapError::NonFinite("metric input".into()));
    }
    Ok(())
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(LicapError::invalid(format!("k = {k} outside 1..={n}")));
    }
    Ok(())
}

/// Indices sorted by descending value, ties by ascending index.
pub fn rank_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

pub fn median_ae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let mut err: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect();
    err.sort_by(f64::total_cmp);
    let n = err.len();
    Ok(if n % 2 == 1 {
        err[n / 2]
    } else {
        (err[n / 2 - 1] + err[n / 2]) / 2.0
    })
}

fn dcg(order: &[usize], truth: &[f64], k: usize) -> f64 {
    order[..k]
        .iter()
        .enumerate()
        .map(|(r, &i)| truth[i] / ((r + 2) as f64).log2())
        .sum()
}

/// Normalised discounted cumulative gain with graded relevance equal to the
/// truth score. Zero when the ideal gain is zero.
pub fn ndcg_at_k(pred: &[f64], truth: &[f64], k: usize) -> Result<f64> {
    check_pair(pred, truth)?;
    check_k(k, pred.len())?;
    if truth.iter().any(|&t| t < 0.0) {
        return Err(LicapError::invalid("NDCG needs non-negative relevance"));
    }
    let ideal = dcg(&rank_order(truth), truth, k);
    if ideal == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg(&rank_order(pred), truth, k) / ideal)
}

/// 1-based fractional ranks in ascending value order; ties share the mean rank.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]].total_cmp(&values[idx[start]]) == Ordering::Equal {
            end += 1;
        }
        let mean = (start + end + 1) as f64 / 2.0;
        idx[start..end].iter().for_each(|&i| ranks[i] = mean);
        start = end;
    }
    ranks
}

/// Pearson correlation of fractional ranks.
pub fn spearman(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    if pred.len() < 2 {
        return Err(LicapError::invalid("spearman needs at least 2 items"));
    }
    let a = fractional_ranks(pred);
    let b = fractional_ranks(truth);
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(LicapError::invalid("spearman is undefined for constant input"));
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Fraction of the predicted top-k that is also in the true top-k.
pub fn over_at_k(pred: &[f64], truth: &[f64], k: usize) -> Result<f64> {
    check_pair(pred, truth)?;
    check_k(k, pred.len())?;
    let mut in_truth = vec![false; truth.len()];
    rank_order(truth)[..k].iter().for_each(|&i| in_truth[i] = true);
    let hits = rank_order(pred)[..k].iter().filter(|&&i| in_truth[i]).count();
    Ok(hits as f64 / k as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub fold: Option<usize>,
    pub samples: usize,
    pub rmse: f64,
    pub median_ae: f64,
    pub spearman: f64,
    /// `(k, NDCG@k)` in requested order.
    pub ndcg: Vec<(usize, f64)>,
    /// `(k, OVER@k)` in requested order.
    pub over: Vec<(usize, f64)>,
}

impl EvalReport {
    /// Metric column names in the order of [`EvalReport::values`].
    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["rmse".to_string(), "median_ae".into(), "spearman".into()];
        cols.extend(self.ndcg.iter().map(|(k, _)| format!("ndcg@{k}")));
        cols.extend(self.over.iter().map(|(k, _)| format!("over@{k}")));
        cols
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![self.rmse, self.median_ae, self.spearman];
        v.extend(self.ndcg.iter().map(|p| p.1));
        v.extend(self.over.iter().map(|p| p.1));
        v
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>10}", "samples", self.samples)?;
        for (name, value) in self.columns().iter().zip(self.values()) {
            writeln!(f, "{name:<12} {value:>10.4}")?;
        }
        Ok(())
    }
}

/// All metrics at every `k`. `k` larger than the sample count is an error.
pub fn evaluate(pred: &[f64], truth: &[f64], ks: &[usize]) -> Result<EvalReport> {
    let mut ndcg = Vec::with_capacity(ks.len());
    let mut over = Vec::with_capacity(ks.len());
    for &k in ks {
        ndcg.push((k, ndcg_at_k(pred, truth, k)?));
        over.push((k, over_at_k(pred, truth, k)?));
    }
    Ok(EvalReport {
        fold: None,
        samples: pred.len(),
        rmse: rmse(pred, truth)?,
        median_ae: median_ae(pred, truth)?,
        spearman: spearman(pred, truth)?,
        ndcg,
        over,
    })
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `mean±std` with four decimals, e.g. `0.8921±0.0290`.
pub fn format_mean_std(values: &[f64]) -> String {
    let (m, s) = mean_std(values);
    format!("{m:.4}±{s:.4}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[1.0, 2.0], &[1.0, 4.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!((rmse(&[1.5, 2.5, 3.5], &[1.0, 2.0, 3.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_ae(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(median_ae(&[0.0, 1.0, 2.0], &[0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(median_ae(&[0.0, 2.0], &[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn ndcg_examples() {
        let t = [3.0, 2.0, 1.0, 0.5];
        assert_eq!(ndcg_at_k(&[4.0, 3.0, 2.0, 1.0], &t, 4).unwrap(), 1.0);
        let dcg = 3.0 + 1.0 / 3f64.log2();
        assert!((dcg - 3.63093).abs() < 1e-5);
        assert_eq!(ndcg_at_k(&[2.0, 1.0], &[3.0, 1.0], 2).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&[2.0, 1.0], &[0.0, 0.0], 1).unwrap(), 0.0);
        assert!(ndcg_at_k(&[1.0], &[1.0], 2).is_err());
        assert!(ndcg_at_k(&[1.0], &[1.0], 0).is_err());
        let reversed = ndcg_at_k(&[1.0, 2.0], &[3.0, 1.0], 2).unwrap();
        assert!((reversed - (1.0 + 3.0 / 3f64.log2()) / dcg).abs() < 1e-12);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn fractional_ranks_average_ties() {
        assert_eq!(fractional_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn over_examples() {
        let t = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(over_at_k(&t, &t, 2).unwrap(), 1.0);
        assert_eq!(over_at_k(&[1.0, 2.0, 3.0, 4.0], &t, 2).unwrap(), 0.0);
        assert_eq!(over_at_k(&[4.0, 1.0, 3.0, 2.0], &t, 2).unwrap(), 0.5);
    }

    #[test]
    fn evaluate_perfect() {
        let t = [0.5, 2.0, 1.0, 3.0];
        let r = evaluate(&t, &t, &[1, 3]).unwrap();
        assert_eq!((r.rmse, r.median_ae, r.spearman), (0.0, 0.0, 1.0));
        assert_eq!(r.ndcg, vec![(1, 1.0), (3, 1.0)]);
        assert_eq!(r.over, vec![(1, 1.0), (3, 1.0)]);
        assert_eq!(r.columns().len(), r.values().len());
        assert!(evaluate(&t, &t, &[5]).is_err());
    }

    #[test]
    fn mean_std_format() {
        assert_eq!(format_mean_std(&[1.0, 3.0]), "2.0000±1.0000");
        assert_eq!(format_mean_std(&[0.8921]), "0.8921±0.0000");
    }
}
