//! K-fold comparison harness.
//!
//! Every arm sees the same folds. A pretraining arm pretrains once per fold
//! on the training labels only, then the downstream head is fitted on the
//! resulting embeddings and scored on the held-out nodes.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::config::ExperimentConfig;
use crate::downstream::{predict, train};
use crate::error::{LicapError, Result};
use crate::kg::{FeatureMatrix, KnowledgeGraph, LabelSet, NodeId};
use crate::metrics::{evaluate, format_mean_std, EvalReport};
use crate::pregat::EncoderMode;
use crate::pretrain::{pretrain, Variant};
use crate::validation::{kfold_split, train_indices};

/// Input representation fed to the downstream head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Raw,
    Licap { variant: Variant, encoder: EncoderMode },
}

impl Arm {
    pub fn name(&self) -> String {
        match self {
            Arm::Raw => "raw".into(),
            Arm::Licap { variant, encoder } => match encoder {
                EncoderMode::Pregat => format!("licap_{}", variant.as_str()),
                EncoderMode::Gat => format!("licap_{}_gat", variant.as_str()),
            },
        }
    }
}

/// Accepts `raw`, a variant name such as `full`, or `<variant>+gat`.
impl FromStr for Arm {
    type Err = LicapError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "raw" {
            return Ok(Arm::Raw);
        }
        let (v, encoder) = match s.strip_suffix("+gat") {
            Some(v) => (v, EncoderMode::Gat),
            None => (s, EncoderMode::Pregat),
        };
        let variant = <Variant as clap::ValueEnum>::from_str(v, true)
            .map_err(|_| LicapError::invalid(format!("unknown arm `{s}`")))?;
        Ok(Arm::Licap { variant, encoder })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub arm: String,
    pub fold: usize,
    pub report: EvalReport,
    /// Epoch restored by early stopping, for pretraining arms.
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub arms: Vec<String>,
    pub folds: usize,
    pub results: Vec<FoldResult>,
}

impl ExperimentReport {
    pub fn arm_results(&self, arm: &str) -> Vec<&FoldResult> {
        self.results.iter().filter(|r| r.arm == arm).collect()
    }

    /// Per-fold values of one metric column for one arm, in fold order.
    pub fn metric(&self, arm: &str, column: &str) -> Vec<f64> {
        self.arm_results(arm)
            .iter()
            .filter_map(|r| {
                let idx = r.report.columns().iter().position(|c| c == column)?;
                Some(r.report.values()[idx])
            })
            .collect()
    }

    /// `arm,fold,<metrics>` with one row per fold and a closing `mean±std`
    /// row per arm.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.results.first() else {
            return out;
        };
        let columns = first.report.columns();
        writeln!(out, "arm,fold,{}", columns.join(",")).unwrap();
        for arm in &self.arms {
            let rows = self.arm_results(arm);
            for r in &rows {
                let vals: Vec<String> = r.report.values().iter().map(|v| format!("{v:.6}")).collect();
                writeln!(out, "{arm},{},{}", r.fold, vals.join(",")).unwrap();
            }
            let summary: Vec<String> = columns
                .iter()
                .map(|c| format_mean_std(&self.metric(arm, c)))
                .collect();
            writeln!(out, "{arm},mean±std,{}", summary.join(",")).unwrap();
        }
        out
    }
}

/// Seed for fold `fold`, spread from the master seed.
pub fn fold_seed(master: u64, fold: usize) -> u64 {
    let mut z = master ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Worker count: `LICAP_THREADS` if set and positive, otherwise the number
/// of available cores.
pub fn worker_count() -> usize {
    std::env::var("LICAP_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs one fold of one arm.
#[allow(clippy::too_many_arguments)]
pub fn run_fold(
    kg: &KnowledgeGraph,
    features: &FeatureMatrix,
    labels: &LabelSet,
    train_nodes: &[NodeId],
    test_nodes: &[NodeId],
    arm: Arm,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<FoldResult> {
    let train_labels = labels.subset(train_nodes);
    let (embeddings, best_epoch) = match arm {
        Arm::Raw => (features.clone(), None),
        Arm::Licap { variant, encoder } => {
            let mut pcfg = config.pretrain.clone();
            pcfg.variant = variant;
            pcfg.encoder_mode = encoder;
            pcfg.seed = seed;
            let outcome = pretrain(kg, features, &train_labels, &pcfg)?;
            (outcome.embeddings, Some(outcome.best_epoch))
        }
    };
    let mut dcfg = config.downstream.clone();
    dcfg.seed = seed;
    let model = train(kg, &embeddings, &train_labels, &dcfg)?;
    let scores = predict(&model, &embeddings, Some(kg))?;
    let pred: Vec<f64> = test_nodes.iter().map(|&n| scores[n]).collect();
    let truth: Vec<f64> = test_nodes
        .iter()
        .map(|&n| labels.score(n).expect("test node is labelled"))
        .collect();
    let ks: Vec<usize> = config.eval.ks.iter().map(|&k| k.min(test_nodes.len())).collect();
    let mut report = evaluate(&pred, &truth, &ks)?;
    report.fold = None;
    Ok(FoldResult {
        arm: arm.name(),
        fold: 0,
        report,
        best_epoch,
    })
}

/// Runs every arm on every fold. Folds run on up to [`worker_count`]
/// threads; results are ordered by arm, then fold.
pub fn run_experiment(
    kg: &KnowledgeGraph,
    features: &FeatureMatrix,
    labels: &LabelSet,
    arms: &[Arm],
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    config.validate()?;
    if arms.is_empty() {
        return Err(LicapError::invalid("no experiment arms"));
    }
    let kg = if kg.is_augmented() {
        kg.clone()
    } else {
        kg.augment_for_message_passing()?
    };
    let nodes = labels.nodes();
    let folds = kfold_split(nodes.len(), config.eval.folds, config.eval.seed)?;
    let jobs: Vec<(usize, Arm)> = arms
        .iter()
        .flat_map(|&a| (0..folds.len()).map(move |f| (f, a)))
        .collect();

    let run = |&(fold, arm): &(usize, Arm)| -> Result<FoldResult> {
        let test: Vec<NodeId> = folds[fold].iter().map(|&i| nodes[i]).collect();
        let train: Vec<NodeId> = train_indices(&folds, fold).iter().map(|&i| nodes[i]).collect();
        let mut r = run_fold(&kg, features, labels, &train, &test, arm, config, fold_seed(config.eval.seed, fold))?;
        r.fold = fold;
        r.report.fold = Some(fold);
        Ok(r)
    };

    let workers = worker_count().min(jobs.len()).max(1);
    let mut results: Vec<Option<Result<FoldResult>>> = (0..jobs.len()).map(|_| None).collect();
    if workers == 1 {
        for (slot, job) in results.iter_mut().zip(&jobs) {
            *slot = Some(run(job));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let done = std::sync::Mutex::new(&mut results);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= jobs.len() {
                        break;
                    }
                    let r = run(&jobs[i]);
                    done.lock().expect("result lock")[i] = Some(r);
                });
            }
        });
    }
    let results = results
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        arms: arms.iter().map(Arm::name).collect(),
        folds: folds.len(),
        results,
    })
}
