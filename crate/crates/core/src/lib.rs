//! Contrastive pretraining of knowledge graph node embeddings, guided by
//! importance labels, plus the regressors that score nodes from them.
//!
//! The crate is organised bottom-up:
//!
//! - [`kg`]: knowledge graph, importance labels and initial node features.
//! - [`binning`]: top/non-top grouping, finer bins and the proximity matrix.
//! - [`autodiff`]: dense tensors with a reverse-mode tape and Adam.
//! - [`pregat`]: the predicate-aware graph attention encoder.
//! - [`pretrain`]: hierarchical contrastive losses and the training loop.
//! - [`downstream`]: importance regressors and a PageRank baseline.
//! - [`metrics`], [`validation`], [`synth`]: evaluation and fixtures.
//! - [`experiment`], [`config`], [`cli`]: the command-line protocol.

pub mod autodiff;
pub mod binning;
pub mod cli;
pub mod config;
pub mod downstream;
pub mod error;
pub mod experiment;
pub mod io;
pub mod kg;
pub mod metrics;
pub mod pregat;
pub mod pretrain;
pub mod synth;
pub mod validation;

pub use error::{LicapError, Result};
pub use kg::{FeatureMatrix, KnowledgeGraph, LabelSet};

/// `⌈x⌉` that ignores floating-point dust just above an integer, so
/// `0.1 * 30.0` counts as 3 rather than 4.
pub(crate) fn ceil_count(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::ceil_count;

    #[test]
    fn ceil_count_absorbs_rounding_dust() {
        assert_eq!(ceil_count(0.1 * 30.0), 3);
        assert_eq!(ceil_count(0.05 * 100.0), 5);
        assert_eq!(ceil_count(0.1), 1);
        assert_eq!(ceil_count(1.02), 2);
        assert_eq!(ceil_count(0.0), 0);
    }
}
