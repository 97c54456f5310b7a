//! Knowledge graph, importance labels and initial node features.
//!
//! All three inputs are read from UTF-8 tab-separated text. Blank lines and
//! lines starting with `#` are skipped everywhere.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use crate::error::{LicapError, Result};

pub type NodeId = usize;
pub type PredicateId = usize;

/// Interns arbitrary string identifiers to dense ids in first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Interner {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub head: NodeId,
    pub predicate: PredicateId,
    pub tail: NodeId,
}

/// One incoming message-passing entry of a node: `neighbor --predicate--> node`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Neighbor {
    pub node: NodeId,
    pub predicate: PredicateId,
}

/// Flattened adjacency in destination-major order, ready for gather/scatter
/// kernels. Entry `e` carries a message from `src[e]` to `dst[e]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageEdges {
    pub dst: Vec<NodeId>,
    pub src: Vec<NodeId>,
    pub predicate: Vec<PredicateId>,
    pub node_count: usize,
}

impl MessageEdges {
    pub fn len(&self) -> usize {
        self.dst.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dst.is_empty()
    }
}

/// Immutable directed multi-relational graph.
///
/// `adjacency[i]` lists the incoming `(neighbor, predicate)` pairs of node
/// `i`, sorted, so every reduction over a neighbourhood runs in the same
/// order regardless of how the edges were stored.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    node_count: usize,
    predicate_count: usize,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<Neighbor>>,
    nodes: Interner,
    predicates: Interner,
    augmented: bool,
    base_predicate_count: usize,
}

impl KnowledgeGraph {
    /// Builds a graph from already-interned edges. Node names default to
    /// `n0`, `n1`, ... and predicate names to `p0`, `p1`, ...
    pub fn from_edges(node_count: usize, predicate_count: usize, edges: Vec<Edge>) -> Result<Self> {
        let mut nodes = Interner::new();
        for i in 0..node_count {
            nodes.intern(&format!("n{i}"));
        }
        let mut predicates = Interner::new();
        for p in 0..predicate_count {
            predicates.intern(&format!("p{p}"));
        }
        Self::with_names(nodes, predicates, edges)
    }

    pub fn with_names(nodes: Interner, predicates: Interner, edges: Vec<Edge>) -> Result<Self> {
        let node_count = nodes.len();
        let predicate_count = predicates.len();
        if predicate_count == 0 && !edges.is_empty() {
            return Err(LicapError::invalid("edges present but no predicates"));
        }
        for e in &edges {
            if e.head >= node_count || e.tail >= node_count {
                return Err(LicapError::invalid(format!(
                    "edge {e:?} references a node outside 0..{node_count}"
                )));
            }
            if e.predicate >= predicate_count {
                return Err(LicapError::invalid(format!(
                    "edge {e:?} references a predicate outside 0..{predicate_count}"
                )));
            }
        }
        let adjacency = build_adjacency(node_count, &edges);
        Ok(Self {
            node_count,
            predicate_count,
            edges,
            adjacency,
            nodes,
            predicates,
            augmented: false,
            base_predicate_count: predicate_count,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn predicate_count(&self) -> usize {
        self.predicate_count
    }

    /// Predicate count of the graph as loaded, before augmentation.
    pub fn base_predicate_count(&self) -> usize {
        self.base_predicate_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn adjacency(&self) -> &[Vec<Neighbor>] {
        &self.adjacency
    }

    pub fn neighbors(&self, node: NodeId) -> &[Neighbor] {
        &self.adjacency[node]
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn nodes(&self) -> &Interner {
        &self.nodes
    }

    pub fn predicates(&self) -> &Interner {
        &self.predicates
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.get(name)
    }

    pub fn node_name(&self, id: NodeId) -> Option<&str> {
        self.nodes.name(id)
    }

    /// Adds a reverse edge `(t, p + P, h)` for every edge `(h, p, t)` and a
    /// self edge `(i, 2P, i)` for every node, giving `2P + 1` predicates.
    pub fn augment_for_message_passing(&self) -> Result<Self> {
        if self.augmented {
            return Err(LicapError::invalid("graph is already augmented"));
        }
        let p = self.predicate_count;
        let mut edges = Vec::with_capacity(2 * self.edges.len() + self.node_count);
        edges.extend_from_slice(&self.edges);
        edges.extend(self.edges.iter().map(|e| Edge {
            head: e.tail,
            predicate: e.predicate + p,
            tail: e.head,
        }));
        edges.extend((0..self.node_count).map(|i| Edge {
            head: i,
            predicate: 2 * p,
            tail: i,
        }));

        let mut predicates = self.predicates.clone();
        for q in 0..p {
            let name = format!("{}^-1", self.predicates.name(q).unwrap_or_default());
            intern_fresh(&mut predicates, name);
        }
        intern_fresh(&mut predicates, "<self>".to_owned());

        let adjacency = build_adjacency(self.node_count, &edges);
        Ok(Self {
            node_count: self.node_count,
            predicate_count: 2 * p + 1,
            edges,
            adjacency,
            nodes: self.nodes.clone(),
            predicates,
            augmented: true,
            base_predicate_count: p,
        })
    }

    pub fn message_edges(&self) -> MessageEdges {
        let total: usize = self.adjacency.iter().map(Vec::len).sum();
        let mut out = MessageEdges {
            dst: Vec::with_capacity(total),
            src: Vec::with_capacity(total),
            predicate: Vec::with_capacity(total),
            node_count: self.node_count,
        };
        for (i, list) in self.adjacency.iter().enumerate() {
            for nb in list {
                out.dst.push(i);
                out.src.push(nb.node);
                out.predicate.push(nb.predicate);
            }
        }
        out
    }

    /// Number of original edges pointing at each node.
    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        let limit = if self.augmented {
            self.base_predicate_count
        } else {
            self.predicate_count
        };
        for e in &self.edges {
            if e.predicate < limit {
                deg[e.tail] += 1;
            }
        }
        deg
    }
}

/// Interns `name`, priming it until it does not collide with an existing entry.
fn intern_fresh(interner: &mut Interner, mut name: String) -> usize {
    while interner.get(&name).is_some() {
        name.push('\'');
    }
    interner.intern(&name)
}

fn build_adjacency(node_count: usize, edges: &[Edge]) -> Vec<Vec<Neighbor>> {
    let mut adjacency = vec![Vec::new(); node_count];
    for e in edges {
        adjacency[e.tail].push(Neighbor {
            node: e.head,
            predicate: e.predicate,
        });
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    adjacency
}

fn content_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(e.into())),
            Ok(l) => {
                let trimmed = l.trim_end_matches(['\r', '\n']);
                if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                    None
                } else {
                    Some(Ok((i + 1, trimmed.to_owned())))
                }
            }
        })
}

/// Parses `head<TAB>predicate<TAB>tail` triples.
pub fn load_graph<R: BufRead>(reader: R) -> Result<KnowledgeGraph> {
    let mut nodes = Interner::new();
    let mut predicates = Interner::new();
    let mut edges = Vec::new();
    for item in content_lines(reader) {
        let (line_no, line) = item?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(LicapError::parse(
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let head = nodes.intern(fields[0]);
        let predicate = predicates.intern(fields[1]);
        let tail = nodes.intern(fields[2]);
        edges.push(Edge {
            head,
            predicate,
            tail,
        });
    }
    if edges.is_empty() {
        return Err(LicapError::EmptyInput("graph file has no triples".into()));
    }
    KnowledgeGraph::with_names(nodes, predicates, edges)
}

pub fn parse_graph(text: &str) -> Result<KnowledgeGraph> {
    load_graph(text.as_bytes())
}

/// Importance labels for the interested node subset. Scores are `ln(1 + raw)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSet {
    entries: BTreeMap<NodeId, f64>,
    raw_entries: BTreeMap<NodeId, f64>,
}

impl LabelSet {
    /// Builds labels from raw, untransformed importance values.
    pub fn from_raw<I>(raw: I) -> Result<Self>
    where
        I: IntoIterator<Item = (NodeId, f64)>,
    {
        let mut set = Self::default();
        for (node, value) in raw {
            set.insert_raw(node, value, || format!("#{node}"))?;
        }
        Ok(set)
    }

    fn insert_raw(&mut self, node: NodeId, value: f64, name: impl Fn() -> String) -> Result<()> {
        if !value.is_finite() {
            return Err(LicapError::NonFinite(format!("label of node `{}`", name())));
        }
        if value < 0.0 {
            return Err(LicapError::NegativeValue { node: name(), value });
        }
        if self.raw_entries.insert(node, value).is_some() {
            return Err(LicapError::DuplicateNode(name()));
        }
        self.entries.insert(node, value.ln_1p());
        Ok(())
    }

    /// Restricts the set to the given nodes (those without a label are ignored).
    pub fn subset(&self, nodes: &[NodeId]) -> Self {
        let mut out = Self::default();
        for &n in nodes {
            if let (Some(&s), Some(&r)) = (self.entries.get(&n), self.raw_entries.get(&n)) {
                out.entries.insert(n, s);
                out.raw_entries.insert(n, r);
            }
        }
        out
    }

    pub fn score(&self, node: NodeId) -> Option<f64> {
        self.entries.get(&node).copied()
    }

    pub fn raw(&self, node: NodeId) -> Option<f64> {
        self.raw_entries.get(&node).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Labelled nodes in ascending id order.
    pub fn nodes(&self) -> Vec<NodeId> {
        self.entries.keys().copied().collect()
    }

    /// Log-scores in ascending node id order.
    pub fn scores(&self) -> Vec<f64> {
        self.entries.values().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.entries.iter().map(|(&n, &s)| (n, s))
    }

    /// Labelled nodes by descending score, ties by ascending id.
    pub fn ranked(&self) -> Vec<NodeId> {
        let mut nodes: Vec<(NodeId, f64)> = self.iter().collect();
        nodes.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        nodes.into_iter().map(|(n, _)| n).collect()
    }
}

/// Parses `node<TAB>raw_value` lines against the graph's interning table.
pub fn load_labels<R: BufRead>(reader: R, kg: &KnowledgeGraph) -> Result<LabelSet> {
    let mut set = LabelSet::default();
    for (_, name, value) in parse_named_values(reader)? {
        let node = kg
            .node_id(&name)
            .ok_or_else(|| LicapError::UnknownNode(name.clone()))?;
        set.insert_raw(node, value, || name.clone())?;
    }
    Ok(set)
}

pub fn parse_labels(text: &str, kg: &KnowledgeGraph) -> Result<LabelSet> {
    load_labels(text.as_bytes(), kg)
}

/// Reads `name<TAB>number` lines without resolving names. Shared by label
/// and prediction files.
pub fn parse_named_values<R: BufRead>(reader: R) -> Result<Vec<(usize, String, f64)>> {
    let mut out = Vec::new();
    for item in content_lines(reader) {
        let (line_no, line) = item?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(LicapError::parse(
                line_no,
                format!("expected 2 tab-separated fields, found {}", fields.len()),
            ));
        }
        let value: f64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| LicapError::parse(line_no, format!("not a number: `{}`", fields[1])))?;
        out.push((line_no, fields[0].to_owned(), value));
    }
    Ok(out)
}

/// Dense row-major `node_count × F` matrix of initial node embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(LicapError::invalid(format!(
                "feature buffer of length {} does not match {rows}x{cols}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(LicapError::NonFinite(format!(
                "feature ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Parses `node<TAB>v1,v2,...,vF`; every graph node must appear exactly once.
pub fn load_features<R: BufRead>(reader: R, kg: &KnowledgeGraph) -> Result<FeatureMatrix> {
    let n = kg.node_count();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut width: Option<usize> = None;
    for item in content_lines(reader) {
        let (line_no, line) = item?;
        let (name, rest) = line
            .split_once('\t')
            .ok_or_else(|| LicapError::parse(line_no, "expected `node<TAB>values`"))?;
        let node = kg
            .node_id(name)
            .ok_or_else(|| LicapError::UnknownNode(name.to_owned()))?;
        let values = rest
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| LicapError::parse(line_no, format!("not a number: `{tok}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(LicapError::RaggedRow {
                    line: line_no,
                    expected: w,
                    found: values.len(),
                })
            }
            _ => {}
        }
        if rows[node].is_some() {
            return Err(LicapError::DuplicateNode(name.to_owned()));
        }
        rows[node] = Some(values);
    }
    let cols = width.ok_or_else(|| LicapError::EmptyInput("feature file has no rows".into()))?;
    let mut values = Vec::with_capacity(n * cols);
    for (i, row) in rows.into_iter().enumerate() {
        match row {
            Some(r) => values.extend(r),
            None => {
                let name = kg.node_name(i).unwrap_or_default().to_owned();
                return Err(LicapError::MissingFeature(name));
            }
        }
    }
    FeatureMatrix::new(n, cols, values)
}

pub fn parse_features(text: &str, kg: &KnowledgeGraph) -> Result<FeatureMatrix> {
    load_features(text.as_bytes(), kg)
}
