//! Brute-force reference implementations used as test oracles.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn binomial(n: u64, k: u64) -> BigUint {
    let mut num = BigUint::one();
    let mut den = BigUint::one();
    for i in 0..k {
        num *= n - i;
        den *= i + 1;
    }
    num / den
}

/// `C(N, n − m + N/2) / C(N, N/2)`, `N = 2·max(m, B − m)`, as an exact
/// ratio converted once to `f64`.
pub fn beta_exact(b: u64, m: u64, n: u64) -> f64 {
    let big_n = 2 * m.max(b - m);
    let k = (n as i64 - m as i64 + (big_n / 2) as i64) as u64;
    let num = binomial(big_n, k);
    let den = binomial(big_n, big_n / 2);
    // scale so the integer quotient keeps at least 80 significant bits
    let shift = (den.bits() + 80).saturating_sub(num.bits());
    let q = (num << shift) / den;
    q.to_f64().unwrap() * 2f64.powi(-(shift as i32))
}

pub fn naive_order(values: &[f64]) -> Vec<usize> {
    // selection sort: largest value first, lowest index among equals
    let mut left: Vec<usize> = (0..values.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for j in 1..left.len() {
            let (a, b) = (left[j], left[best]);
            if values[a] > values[b] || (values[a] == values[b] && a < b) {
                best = j;
            }
        }
        out.push(left.remove(best));
    }
    out
}

pub fn ref_ndcg(pred: &[f64], truth: &[f64], k: usize) -> f64 {
    let gain = |order: Vec<usize>| -> f64 {
        let mut s = 0.0;
        for (r, &i) in order.iter().take(k).enumerate() {
            s += truth[i] / ((r + 1) as f64 + 1.0).log2();
        }
        s
    };
    let ideal = gain(naive_order(truth));
    if ideal == 0.0 {
        0.0
    } else {
        gain(naive_order(pred)) / ideal
    }
}

pub fn ref_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&w| w < v).count() as f64;
            let same = x.iter().filter(|&&w| w == v).count() as f64;
            below + (same + 1.0) / 2.0
        })
        .collect()
}

pub fn ref_spearman(pred: &[f64], truth: &[f64]) -> f64 {
    let (a, b) = (ref_ranks(pred), ref_ranks(truth));
    let n = a.len() as f64;
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let sab: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|x| x * x).sum();
    (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
}

pub fn ref_top_k(x: &[f64], k: usize) -> Vec<bool> {
    (0..x.len())
        .map(|i| {
            let ahead = (0..x.len()).filter(|&j| x[j] > x[i] || (x[j] == x[i] && j < i)).count();
            ahead < k
        })
        .collect()
}

pub fn ref_over(pred: &[f64], truth: &[f64], k: usize) -> f64 {
    let (p, t) = (ref_top_k(pred, k), ref_top_k(truth, k));
    p.iter().zip(&t).filter(|(a, b)| **a && **b).count() as f64 / k as f64
}

pub fn ref_median(pred: &[f64], truth: &[f64]) -> f64 {
    let mut e: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect();
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = e.len();
    if n % 2 == 1 { e[n / 2] } else { 0.5 * (e[n / 2 - 1] + e[n / 2]) }
}

/// Values on a coarse grid so ties are common.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = rng.random_range(2..=50);
    let grid = rng.random_range(3..20) as f64;
    let pred = (0..n).map(|_| (rng.random_range(0.0..5.0) * grid).round() / grid).collect();
    let truth = (0..n).map(|_| (rng.random_range(0.0..5.0) * grid).round() / grid).collect();
    (pred, truth)
}

/// Solves `x = d·M·x + (1 − d)/n` by Gauss-Jordan elimination, where `M` is
/// the column-stochastic transition matrix with dangling columns set to `1/n`.
pub fn dense_pagerank(n: usize, edges: &[(usize, usize)], d: f64) -> Vec<f64> {
    let mut out = vec![0usize; n];
    edges.iter().for_each(|&(h, _)| out[h] += 1);
    let mut m = vec![vec![0.0; n]; n];
    for &(h, t) in edges {
        m[t][h] += 1.0 / out[h] as f64;
    }
    for j in 0..n {
        if out[j] == 0 {
            (0..n).for_each(|i| m[i][j] = 1.0 / n as f64);
        }
    }
    let mut a = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = if i == j { 1.0 } else { 0.0 } - d * m[i][j];
        }
        a[i][n] = (1.0 - d) / n as f64;
    }
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().partial_cmp(&a[y][c].abs()).unwrap()).unwrap();
        a.swap(c, p);
        let piv = a[c][c];
        a[c].iter_mut().for_each(|v| *v /= piv);
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                let row_c = a[c].clone();
                a[r].iter_mut().zip(row_c).for_each(|(v, w)| *v -= f * w);
            }
        }
    }
    let x: Vec<f64> = a.iter().map(|row| row[n]).collect();
    let s: f64 = x.iter().sum();
    x.iter().map(|v| v / s).collect()
}
