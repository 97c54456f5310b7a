//! Command-line front end.
//!
//! Values from `--config` are applied first and explicit flags override them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::downstream::{predict, train, ModelKind};
use crate::error::{LicapError, Result};
use crate::experiment::{run_experiment, Arm};
use crate::io;
use crate::kg::{load_features, load_graph, load_labels, parse_named_values, FeatureMatrix, KnowledgeGraph, LabelSet};
use crate::metrics::evaluate;
use crate::pregat::EncoderMode;
use crate::pretrain::{pretrain_with_observer, Variant};
use crate::synth::synth_kg;

#[derive(Debug, Parser)]
#[command(name = "licap", version, about = "Importance-label guided contrastive pretraining on knowledge graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain node embeddings and write them with the training log.
    Pretrain(PretrainArgs),
    /// Fit a downstream head on all labels and write predictions for every node.
    Train(TrainArgs),
    /// Score a predictions file against a labels file.
    Eval(EvalArgs),
    /// Cross-validated comparison of raw features and pretrained embeddings.
    Experiment(ExperimentArgs),
    /// Write a synthetic graph, labels and features to a directory.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct PretrainOverrides {
    /// Loss variant.
    #[arg(long, value_enum)]
    pub variant: Option<Variant>,
    /// Attention encoder.
    #[arg(long, value_enum)]
    pub encoder_mode: Option<EncoderMode>,
    /// Fraction of labelled nodes in the top bin.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Score width of a finer bin.
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Weight of the top-bin loss.
    #[arg(long)]
    pub eta1: Option<f64>,
    /// Weight of the finer-bin loss.
    #[arg(long)]
    pub eta2: Option<f64>,
    /// Negative sampling ratio.
    #[arg(long)]
    pub k_neg: Option<f64>,
    /// Maximum pretraining epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Pretraining learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Predicate embedding width.
    #[arg(long)]
    pub predicate_dim: Option<usize>,
}

impl PretrainOverrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        let p = &mut cfg.pretrain;
        if let Some(v) = self.variant {
            p.variant = v;
        }
        if let Some(v) = self.encoder_mode {
            p.encoder_mode = v;
        }
        set(&mut p.gamma, self.gamma);
        set(&mut p.bin_width, self.bin_width);
        set(&mut p.tau, self.tau);
        set(&mut p.eta1, self.eta1);
        set(&mut p.eta2, self.eta2);
        set(&mut p.k_neg, self.k_neg);
        set(&mut p.epochs, self.epochs);
        set(&mut p.learning_rate, self.learning_rate);
        set(&mut p.predicate_dim, self.predicate_dim);
    }
}

fn set<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Graph triples, `head<TAB>predicate<TAB>tail`.
    #[arg(long)]
    pub graph: PathBuf,
    /// Raw importance values, `node<TAB>value`.
    #[arg(long)]
    pub labels: PathBuf,
    /// Initial features, `node<TAB>v1,v2,...`.
    #[arg(long)]
    pub features: PathBuf,
    /// TOML configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Embedding output file.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV [default: <out>.log.csv].
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Also write the restored encoder parameters here.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub overrides: PretrainOverrides,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Graph triples.
    #[arg(long)]
    pub graph: PathBuf,
    /// Raw importance values used for training.
    #[arg(long)]
    pub labels: PathBuf,
    /// Input representation, raw features or pretrained embeddings.
    #[arg(long)]
    pub features: PathBuf,
    /// TOML configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Predictions output file, `node<TAB>score` for every node.
    #[arg(long)]
    pub out: PathBuf,
    /// Downstream head.
    #[arg(long, value_enum)]
    pub kind: Option<ModelKind>,
    /// Downstream epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted log-scores, `node<TAB>score`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Raw importance values, `node<TAB>value`; compared as `ln(1 + value)`.
    #[arg(long)]
    pub labels: PathBuf,
    /// Cutoffs for NDCG and OVER.
    #[arg(long, value_delimiter = ',', default_value = "50,100")]
    pub k: Vec<usize>,
    /// Also write the report as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// TOML configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use a synthetic graph with this many nodes instead of files.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Predicate count of the synthetic graph.
    #[arg(long, default_value_t = 5)]
    pub predicates: usize,
    /// Graph triples.
    #[arg(long, conflicts_with = "synthetic")]
    pub graph: Option<PathBuf>,
    /// Raw importance values.
    #[arg(long, conflicts_with = "synthetic")]
    pub labels: Option<PathBuf>,
    /// Initial features.
    #[arg(long, conflicts_with = "synthetic")]
    pub features: Option<PathBuf>,
    /// Master seed for folds, pretraining, heads and the synthetic graph.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Add the raw-feature arm next to the pretrained arm.
    #[arg(long)]
    pub compare: bool,
    /// Only run the raw-feature arm.
    #[arg(long)]
    pub skip_pretrain: bool,
    /// Explicit arms, e.g. `raw,full,random_sampling,full+gat`.
    #[arg(long, value_delimiter = ',')]
    pub arms: Vec<String>,
    /// Number of folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Cutoffs for NDCG and OVER.
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    /// Downstream head.
    #[arg(long, value_enum)]
    pub kind: Option<ModelKind>,
    /// Report CSV [default: print to standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: PretrainOverrides,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Node count (at least 20).
    #[arg(long)]
    pub nodes: usize,
    /// Predicate count.
    #[arg(long, default_value_t = 5)]
    pub predicates: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives kg.tsv, labels.tsv and features.tsv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Parses `std::env::args`, runs the command and maps errors to exit code 1.
/// Usage errors exit with 2 through clap.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Generate(a) => cmd_generate(a),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| LicapError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| LicapError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_inputs(graph: &Path, labels: &Path, features: &Path) -> Result<(KnowledgeGraph, LabelSet, FeatureMatrix)> {
    let kg = load_graph(open(graph)?)?;
    let labels = load_labels(open(labels)?, &kg)?;
    let features = load_features(open(features)?, &kg)?;
    Ok((kg, labels, features))
}

fn default_log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log.csv");
    PathBuf::from(s)
}

pub fn cmd_pretrain(a: PretrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    a.overrides.apply(&mut cfg);
    set(&mut cfg.pretrain.seed, a.seed);
    cfg.pretrain.validate()?;
    let (kg, labels, features) = load_inputs(&a.graph, &a.labels, &a.features)?;
    let outcome = pretrain_with_observer(&kg, &features, &labels, &cfg.pretrain, |r| {
        if r.epoch == 1 || r.epoch % 20 == 0 {
            eprintln!("epoch {:>4}  l1 {:.6}  l2 {:.6}  total {:.6}", r.epoch, r.l1, r.l2, r.total);
        }
    })?;
    io::write_matrix(create(&a.out)?, &kg, &outcome.embeddings)?;
    let log_path = a.log.unwrap_or_else(|| default_log_path(&a.out));
    io::write_log(create(&log_path)?, &outcome.log)?;
    if let Some(path) = &a.checkpoint {
        outcome.params.write_checkpoint(create(path)?)?;
    }
    eprintln!(
        "best epoch {} (total {:.6}); wrote {} and {}",
        outcome.best_epoch,
        outcome.best_loss(),
        a.out.display(),
        log_path.display()
    );
    Ok(())
}

pub fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(k) = a.kind {
        cfg.downstream.kind = k;
    }
    set(&mut cfg.downstream.epochs, a.epochs);
    set(&mut cfg.downstream.seed, a.seed);
    let (kg, labels, features) = load_inputs(&a.graph, &a.labels, &a.features)?;
    let model = train(&kg, &features, &labels, &cfg.downstream)?;
    let scores = predict(&model, &features, Some(&kg))?;
    let pairs: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    io::write_predictions(create(&a.out)?, &kg, &pairs)?;
    eprintln!(
        "final training mse {:.6}; wrote {}",
        model.loss_history.last().copied().unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_eval(a: EvalArgs) -> Result<()> {
    let preds = io::read_predictions(open(&a.predictions)?)?;
    let labels = parse_named_values(open(&a.labels)?)?;
    let mut truth = std::collections::HashMap::new();
    for (_, name, value) in labels {
        if value.is_nan() || value < 0.0 {
            return Err(LicapError::NegativeValue { node: name, value });
        }
        if truth.insert(name.clone(), (1.0 + value).ln()).is_some() {
            return Err(LicapError::DuplicateNode(name));
        }
    }
    if preds.len() != truth.len() {
        return Err(LicapError::NodeMismatch(format!(
            "{} predictions for {} labelled nodes",
            preds.len(),
            truth.len()
        )));
    }
    let mut p = Vec::with_capacity(preds.len());
    let mut t = Vec::with_capacity(preds.len());
    for (name, score) in preds {
        let v = truth
            .get(&name)
            .ok_or_else(|| LicapError::NodeMismatch(format!("`{name}` has a prediction but no label")))?;
        p.push(score);
        t.push(*v);
    }
    let report = evaluate(&p, &t, &a.k)?;
    print!("{report}");
    if let Some(path) = &a.csv {
        let mut w = create(path)?;
        writeln!(w, "{}", report.columns().join(","))?;
        let vals: Vec<String> = report.values().iter().map(|v| format!("{v:.6}")).collect();
        writeln!(w, "{}", vals.join(","))?;
        w.flush()?;
    }
    Ok(())
}

pub fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    a.overrides.apply(&mut cfg);
    set(&mut cfg.eval.seed, a.seed);
    set(&mut cfg.eval.folds, a.folds);
    if !a.k.is_empty() {
        cfg.eval.ks = a.k.clone();
    }
    if let Some(k) = a.kind {
        cfg.downstream.kind = k;
    }
    cfg.mode.compare |= a.compare;
    cfg.mode.skip_pretrain |= a.skip_pretrain;
    cfg.validate()?;

    let (kg, labels, features) = match a.synthetic {
        Some(n) => {
            let d = synth_kg(n, a.predicates, cfg.eval.seed)?;
            (d.kg, d.labels, d.features)
        }
        None => {
            let need = |p: &Option<PathBuf>, cfg_p: &Option<PathBuf>, what: &str| -> Result<PathBuf> {
                p.clone()
                    .or_else(|| cfg_p.clone())
                    .ok_or_else(|| LicapError::Config(format!("no {what} file: pass --{what}, set [paths] or use --synthetic")))
            };
            load_inputs(
                &need(&a.graph, &cfg.paths.graph, "graph")?,
                &need(&a.labels, &cfg.paths.labels, "labels")?,
                &need(&a.features, &cfg.paths.features, "features")?,
            )?
        }
    };

    let arms: Vec<Arm> = if !a.arms.is_empty() {
        a.arms.iter().map(|s| s.parse()).collect::<Result<_>>()?
    } else if cfg.mode.skip_pretrain {
        vec![Arm::Raw]
    } else {
        let licap = Arm::Licap {
            variant: cfg.pretrain.variant,
            encoder: cfg.pretrain.encoder_mode,
        };
        if cfg.mode.compare {
            vec![Arm::Raw, licap]
        } else {
            vec![licap]
        }
    };

    let report = run_experiment(&kg, &features, &labels, &arms, &cfg)?;
    let csv = report.to_csv();
    let out = a.out.or_else(|| cfg.paths.output_dir.as_ref().map(|d| d.join("report.csv")));
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let mut w = create(&path)?;
            w.write_all(csv.as_bytes())?;
            w.flush()?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let d = synth_kg(a.nodes, a.predicates, a.seed)?;
    std::fs::create_dir_all(&a.out_dir)?;
    io::write_graph(create(&a.out_dir.join("kg.tsv"))?, &d.kg)?;
    io::write_labels(create(&a.out_dir.join("labels.tsv"))?, &d.kg, &d.labels)?;
    io::write_matrix(create(&a.out_dir.join("features.tsv"))?, &d.kg, &d.features)?;
    eprintln!("wrote {} nodes and {} edges to {}", d.kg.node_count(), d.kg.edge_count(), a.out_dir.display());
    Ok(())
}
