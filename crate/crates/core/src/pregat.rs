//! Predicate-aware graph attention encoder.
//!
//! Per head `h`, the attention logit of node `i` on neighbour `j` reached via
//! predicate `p` is `a_h · [W_h x_i ‖ φ(p) ‖ W_h x_j]`, passed through
//! LeakyReLU and normalised with a softmax over the incoming adjacency of
//! `i`. The node output is `LeakyReLU(Σ_j α_ij W_h x_j)` and heads are
//! concatenated. In [`EncoderMode::Gat`] the predicate block is absent.
//!
//! The dot product with the concatenation is evaluated blockwise: `a_h` is
//! split into destination, predicate and source parts, each projected once
//! per node (or predicate) and gathered per edge.

use std::io::{BufRead, Write};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{LicapError, Result};
use crate::kg::{FeatureMatrix, KnowledgeGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// Attention sees predicate embeddings.
    #[default]
    Pregat,
    /// Plain GAT attention over node pairs only.
    Gat,
}

impl EncoderMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderMode::Pregat => "pregat",
            EncoderMode::Gat => "gat",
        }
    }
}

impl std::str::FromStr for EncoderMode {
    type Err = LicapError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pregat" => Ok(EncoderMode::Pregat),
            "gat" => Ok(EncoderMode::Gat),
            other => Err(LicapError::invalid(format!("unknown encoder mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreGatConfig {
    pub input_dim: usize,
    /// Output width of each head.
    pub hidden_dim: usize,
    pub heads: usize,
    pub predicate_dim: usize,
    pub layers: usize,
    /// Predicate count of the augmented graph.
    pub predicate_count: usize,
    pub mode: EncoderMode,
    pub negative_slope: f64,
}

impl PreGatConfig {
    pub fn new(input_dim: usize, predicate_count: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 8,
            heads: 8,
            predicate_dim: 10,
            layers: 1,
            predicate_count,
            mode: EncoderMode::Pregat,
            negative_slope: 0.2,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.heads * self.hidden_dim
    }

    fn attention_len(&self) -> usize {
        match self.mode {
            EncoderMode::Pregat => 2 * self.hidden_dim + self.predicate_dim,
            EncoderMode::Gat => 2 * self.hidden_dim,
        }
    }

    fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.output_dim()
        }
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("layers", self.layers),
            ("predicate_count", self.predicate_count),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(LicapError::invalid(format!("encoder {name} must be positive")));
        }
        if !(self.negative_slope > 0.0 && self.negative_slope < 1.0) {
            return Err(LicapError::invalid(format!(
                "negative slope must lie in (0, 1), got {}",
                self.negative_slope
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreGatLayer {
    /// Per-head `F_in × F'` transformations.
    pub weights: Vec<Tensor>,
    /// Per-head attention vectors, `(2F' + P') × 1` or `2F' × 1`.
    pub attention: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreGatParams {
    pub config: PreGatConfig,
    pub layers: Vec<PreGatLayer>,
    /// `predicate_count × P'`; absent in GAT mode.
    pub predicate_table: Option<Tensor>,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(rows, cols, data).expect("sized buffer")
}

impl PreGatParams {
    /// Seeded initialisation: scaled-uniform `W` and `a`, standard normal
    /// predicate table. Layers are drawn before the table so both modes share
    /// `W` and `a` for the same seed.
    pub fn init(config: PreGatConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let fin = config.layer_input_dim(l);
            let mut weights = Vec::with_capacity(config.heads);
            let mut attention = Vec::with_capacity(config.heads);
            for _ in 0..config.heads {
                weights.push(glorot(&mut rng, fin, config.hidden_dim, fin, config.hidden_dim));
                let len = config.attention_len();
                attention.push(glorot(&mut rng, len, 1, len, 1));
            }
            layers.push(PreGatLayer { weights, attention });
        }
        let predicate_table = match config.mode {
            EncoderMode::Pregat => {
                let data = (0..config.predicate_count * config.predicate_dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Some(Tensor::new(config.predicate_count, config.predicate_dim, data)?)
            }
            EncoderMode::Gat => None,
        };
        Ok(Self {
            config,
            layers,
            predicate_table,
        })
    }

    /// All trainable tensors in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for (w, a) in layer.weights.iter().zip(&layer.attention) {
                out.push(w);
                out.push(a);
            }
        }
        out.extend(self.predicate_table.as_ref());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for (w, a) in layer.weights.iter_mut().zip(layer.attention.iter_mut()) {
                out.push(w);
                out.push(a);
            }
        }
        out.extend(self.predicate_table.as_mut());
        out
    }

    /// Names matching [`PreGatParams::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for h in 0..layer.weights.len() {
                out.push(format!("layer{l}.head{h}.weight"));
                out.push(format!("layer{l}.head{h}.attention"));
            }
        }
        if self.predicate_table.is_some() {
            out.push("predicate_table".to_owned());
        }
        out
    }

    /// Records every parameter on the tape as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self.tensors().into_iter().map(|t| tape.param(t.clone())).collect();
        BoundParams { vars }
    }

    /// Encodes on the tape. `x` must be `node_count × input_dim`.
    pub fn encode(&self, tape: &mut Tape, bound: &BoundParams, edges: &EdgeIndex, x: Var) -> Result<Var> {
        let mut h = x;
        for l in 0..self.layers.len() {
            h = self.encode_layer(tape, bound, edges, h, l, None)?;
        }
        Ok(h)
    }

    fn encode_layer(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        edges: &EdgeIndex,
        x: Var,
        layer: usize,
        mut attention_out: Option<&mut Vec<Vec<f64>>>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let shape = tape.value(x).shape();
        let expect = cfg.layer_input_dim(layer);
        if shape[0] != edges.node_count || shape[1] != expect {
            return Err(LicapError::ShapeMismatch {
                op: "pregat input",
                left: shape,
                right: [edges.node_count, expect],
            });
        }
        let f = cfg.hidden_dim;
        let n = edges.node_count;
        let slope = cfg.negative_slope;

        let table = match cfg.mode {
            EncoderMode::Pregat => Some(bound.predicate_table(self)),
            EncoderMode::Gat => None,
        };
        let mut heads = Vec::with_capacity(cfg.heads);
        for head in 0..cfg.heads {
            let (w, a) = bound.head(self, layer, head);
            let wh = tape.matmul(x, w)?;
            let a_dst = tape.slice_rows(a, 0, f)?;
            let s_dst = tape.matmul(wh, a_dst)?;
            let mut logits = tape.gather_rows(s_dst, Rc::clone(&edges.dst))?;
            if let Some(table) = table {
                let a_pred = tape.slice_rows(a, f, cfg.predicate_dim)?;
                let s_pred = tape.matmul(table, a_pred)?;
                let per_edge = tape.gather_rows(s_pred, Rc::clone(&edges.predicate))?;
                logits = tape.add(logits, per_edge)?;
            }
            let src_offset = match cfg.mode {
                EncoderMode::Pregat => f + cfg.predicate_dim,
                EncoderMode::Gat => f,
            };
            let a_src = tape.slice_rows(a, src_offset, f)?;
            let s_src = tape.matmul(wh, a_src)?;
            let src_term = tape.gather_rows(s_src, Rc::clone(&edges.src))?;
            logits = tape.add(logits, src_term)?;

            let scores = tape.leaky_relu(logits, slope);
            let alpha = tape.segment_softmax(scores, Rc::clone(&edges.dst))?;
            if let Some(out) = attention_out.as_deref_mut() {
                out.push(tape.value(alpha).data().to_vec());
            }
            let messages = tape.gather_rows(wh, Rc::clone(&edges.src))?;
            let weighted = tape.mul_column(messages, alpha)?;
            let summed = tape.scatter_add_rows(weighted, Rc::clone(&edges.dst), n)?;
            heads.push(tape.leaky_relu(summed, slope));
        }
        tape.concat_cols(&heads)
    }

    /// Forward pass without gradient bookkeeping.
    pub fn forward(&self, kg: &KnowledgeGraph, features: &FeatureMatrix) -> Result<Tensor> {
        let edges = EdgeIndex::new(kg)?;
        self.check_graph(kg)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.constant(features_tensor(features));
        let out = self.encode(&mut tape, &bound, &edges, x)?;
        Ok(tape.value(out).clone())
    }

    /// Attention coefficients of every layer and head, one entry per
    /// message edge in [`KnowledgeGraph::message_edges`] order.
    pub fn attention_coefficients(
        &self,
        kg: &KnowledgeGraph,
        features: &FeatureMatrix,
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        let edges = EdgeIndex::new(kg)?;
        self.check_graph(kg)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let mut h = tape.constant(features_tensor(features));
        let mut all = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            let mut per_head = Vec::new();
            h = self.encode_layer(&mut tape, &bound, &edges, h, l, Some(&mut per_head))?;
            all.push(per_head);
        }
        Ok(all)
    }

    pub fn check_graph(&self, kg: &KnowledgeGraph) -> Result<()> {
        if kg.predicate_count() != self.config.predicate_count {
            return Err(LicapError::invalid(format!(
                "encoder expects {} predicates, graph has {}",
                self.config.predicate_count,
                kg.predicate_count()
            )));
        }
        Ok(())
    }

    /// Writes the parameters as a named-block text checkpoint:
    ///
    /// ```text
    /// # licap-pregat v1
    /// config<TAB>key=value<TAB>...
    /// block<TAB>name<TAB>rows<TAB>cols<TAB>v1,v2,...
    /// ```
    ///
    /// Values use the shortest representation that round-trips exactly.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        writeln!(w, "# licap-pregat v1")?;
        writeln!(
            w,
            "config\tinput_dim={}\thidden_dim={}\theads={}\tpredicate_dim={}\tlayers={}\tpredicate_count={}\tmode={}\tnegative_slope={}",
            c.input_dim,
            c.hidden_dim,
            c.heads,
            c.predicate_dim,
            c.layers,
            c.predicate_count,
            c.mode.as_str(),
            c.negative_slope
        )?;
        for (name, t) in self.tensor_names().iter().zip(self.tensors()) {
            let values: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "block\t{name}\t{}\t{}\t{}", t.rows(), t.cols(), values.join(","))?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        let mut config: Option<PreGatConfig> = None;
        let mut blocks: Vec<(String, Tensor)> = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match fields[0] {
                "config" => config = Some(parse_config_line(&fields[1..], line_no)?),
                "block" if fields.len() == 5 => {
                    let dim = |s: &str| {
                        s.parse::<usize>()
                            .map_err(|_| LicapError::parse(line_no, format!("bad dimension `{s}`")))
                    };
                    let (rows, cols) = (dim(fields[2])?, dim(fields[3])?);
                    let data = if fields[4].is_empty() {
                        Vec::new()
                    } else {
                        fields[4]
                            .split(',')
                            .map(|v| {
                                v.parse::<f64>()
                                    .map_err(|_| LicapError::parse(line_no, format!("bad value `{v}`")))
                            })
                            .collect::<Result<Vec<f64>>>()?
                    };
                    blocks.push((fields[1].to_owned(), Tensor::new(rows, cols, data)?));
                }
                _ => return Err(LicapError::parse(line_no, "unrecognised checkpoint line")),
            }
        }
        let config = config.ok_or_else(|| LicapError::EmptyInput("checkpoint has no config line".into()))?;
        let mut params = Self::init(config, 0)?;
        let names = params.tensor_names();
        if names.len() != blocks.len() {
            return Err(LicapError::invalid(format!(
                "checkpoint has {} blocks, expected {}",
                blocks.len(),
                names.len()
            )));
        }
        for ((slot, name), (block_name, block)) in params.tensors_mut().into_iter().zip(&names).zip(blocks) {
            if *name != block_name || slot.shape() != block.shape() {
                return Err(LicapError::invalid(format!(
                    "checkpoint block `{block_name}` {:?} does not match `{name}` {:?}",
                    block.shape(),
                    slot.shape()
                )));
            }
            *slot = block;
        }
        Ok(params)
    }
}

fn parse_config_line(fields: &[&str], line_no: usize) -> Result<PreGatConfig> {
    let mut cfg = PreGatConfig::new(0, 0);
    for kv in fields {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| LicapError::parse(line_no, format!("expected key=value, got `{kv}`")))?;
        let num = || {
            v.parse::<usize>()
                .map_err(|_| LicapError::parse(line_no, format!("bad value for {k}: `{v}`")))
        };
        match k {
            "input_dim" => cfg.input_dim = num()?,
            "hidden_dim" => cfg.hidden_dim = num()?,
            "heads" => cfg.heads = num()?,
            "predicate_dim" => cfg.predicate_dim = num()?,
            "layers" => cfg.layers = num()?,
            "predicate_count" => cfg.predicate_count = num()?,
            "mode" => cfg.mode = v.parse()?,
            "negative_slope" => {
                cfg.negative_slope = v
                    .parse()
                    .map_err(|_| LicapError::parse(line_no, format!("bad negative_slope `{v}`")))?
            }
            other => return Err(LicapError::parse(line_no, format!("unknown config key `{other}`"))),
        }
    }
    Ok(cfg)
}

/// Tape handles of a bound [`PreGatParams`], in [`PreGatParams::tensors`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl BoundParams {
    fn head(&self, params: &PreGatParams, layer: usize, head: usize) -> (Var, Var) {
        let base = 2 * (layer * params.config.heads + head);
        (self.vars[base], self.vars[base + 1])
    }

    fn predicate_table(&self, params: &PreGatParams) -> Var {
        debug_assert!(params.predicate_table.is_some());
        *self.vars.last().expect("bound table")
    }
}

/// Shared index buffers for the message edges of an augmented graph.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub dst: Rc<[usize]>,
    pub src: Rc<[usize]>,
    pub predicate: Rc<[usize]>,
    pub node_count: usize,
}

impl EdgeIndex {
    pub fn new(kg: &KnowledgeGraph) -> Result<Self> {
        if !kg.is_augmented() {
            return Err(LicapError::invalid(
                "encoder needs a graph augmented with reverse and self edges",
            ));
        }
        let m = kg.message_edges();
        Ok(Self {
            dst: m.dst.into(),
            src: m.src.into(),
            predicate: m.predicate.into(),
            node_count: m.node_count,
        })
    }

    pub fn len(&self) -> usize {
        self.dst.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dst.is_empty()
    }
}

pub fn features_tensor(features: &FeatureMatrix) -> Tensor {
    Tensor::new(features.rows(), features.cols(), features.values().to_vec()).expect("consistent shape")
}
