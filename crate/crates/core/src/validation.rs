//! K-fold cross-validation splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{LicapError, Result};

/// Shuffles `0..n` with `seed` and cuts it into `k` contiguous folds whose
/// sizes differ by at most one. The first `n % k` folds get the extra item.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(LicapError::invalid(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(LicapError::invalid(format!("{k} folds for {n} items")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// Indices outside `folds[test]`, in fold order.
pub fn train_indices(folds: &[Vec<usize>], test: usize) -> Vec<usize> {
    folds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != test)
        .flat_map(|(_, f)| f.iter().copied())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_folds_of_two() {
        let folds = kfold_split(10, 5, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(folds, kfold_split(10, 5, 3).unwrap());
        assert_ne!(folds, kfold_split(10, 5, 4).unwrap());
    }

    #[test]
    fn uneven_sizes() {
        let sizes: Vec<usize> = kfold_split(11, 3, 0).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 3]);
        assert_eq!(train_indices(&kfold_split(11, 3, 0).unwrap(), 2).len(), 8);
    }

    #[test]
    fn errors() {
        assert!(kfold_split(3, 5, 0).is_err());
        assert!(kfold_split(3, 1, 0).is_err());
    }
}
