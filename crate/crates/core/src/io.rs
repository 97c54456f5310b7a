//! Text writers and readers for embeddings, training logs, predictions and
//! generated datasets.

use std::io::{BufRead, Write};

use crate::error::{LicapError, Result};
use crate::kg::{parse_named_values, FeatureMatrix, KnowledgeGraph, LabelSet};
use crate::pretrain::EpochRecord;

/// `node<TAB>v1,v2,...` per row, node names from `kg`. Values round-trip.
pub fn write_matrix<W: Write>(mut w: W, kg: &KnowledgeGraph, m: &FeatureMatrix) -> Result<()> {
    if m.rows() != kg.node_count() {
        return Err(LicapError::invalid(format!(
            "{} rows for {} nodes",
            m.rows(),
            kg.node_count()
        )));
    }
    for i in 0..m.rows() {
        let name = kg.node_name(i).expect("node in range");
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{name}\t{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_log<W: Write>(mut w: W, log: &[EpochRecord]) -> Result<()> {
    writeln!(w, "epoch,l1,l2,total")?;
    for r in log {
        writeln!(w, "{},{:?},{:?},{:?}", r.epoch, r.l1, r.l2, r.total)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log<R: BufRead>(r: R) -> Result<Vec<EpochRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(LicapError::parse(i + 1, "expected epoch,l1,l2,total"));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| LicapError::parse(i + 1, format!("not a number: `{s}`")))
        };
        out.push(EpochRecord {
            epoch: f[0]
                .trim()
                .parse()
                .map_err(|_| LicapError::parse(i + 1, "bad epoch"))?,
            l1: num(f[1])?,
            l2: num(f[2])?,
            total: num(f[3])?,
        });
    }
    Ok(out)
}

/// `node<TAB>score` for each `(node, score)` pair.
pub fn write_predictions<W: Write>(mut w: W, kg: &KnowledgeGraph, scores: &[(usize, f64)]) -> Result<()> {
    for &(node, s) in scores {
        let name = kg
            .node_name(node)
            .ok_or_else(|| LicapError::invalid(format!("node {node} not in graph")))?;
        writeln!(w, "{name}\t{s:?}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `name<TAB>score` lines. Duplicate names are an error.
pub fn read_predictions<R: BufRead>(r: R) -> Result<Vec<(String, f64)>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (_, name, value) in parse_named_values(r)? {
        if !seen.insert(name.clone()) {
            return Err(LicapError::DuplicateNode(name));
        }
        out.push((name, value));
    }
    Ok(out)
}

pub fn write_graph<W: Write>(mut w: W, kg: &KnowledgeGraph) -> Result<()> {
    for e in kg.edges() {
        let h = kg.node_name(e.head).expect("node in range");
        let t = kg.node_name(e.tail).expect("node in range");
        let p = kg.predicates().name(e.predicate).expect("predicate in range");
        writeln!(w, "{h}\t{p}\t{t}")?;
    }
    w.flush()?;
    Ok(())
}

/// Raw (untransformed) label values, one `node<TAB>value` line each.
pub fn write_labels<W: Write>(mut w: W, kg: &KnowledgeGraph, labels: &LabelSet) -> Result<()> {
    for node in labels.nodes() {
        let name = kg.node_name(node).expect("labelled node in graph");
        writeln!(w, "{name}\t{:?}", labels.raw(node).expect("labelled"))?;
    }
    w.flush()?;
    Ok(())
}
