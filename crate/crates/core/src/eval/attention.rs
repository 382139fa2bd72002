//! Graph attention and pooling weights exported as JSON lines.

use serde::{Deserialize, Serialize};

use crate::encoder::Mode;
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::model::Model;
use crate::numerics::{Binding, Real, Tape};
use crate::pretrain::TrainExample;
use crate::retrieval::LocalNode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeWeights {
    /// Index into the local graph's edge list.
    pub edge: usize,
    /// Message direction: against the stored edge when `reversed`.
    pub reversed: bool,
    pub src: usize,
    pub dst: usize,
    pub relation: String,
    /// One weight per attention head.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttentionRecord {
    Nodes { example: usize, nodes: Vec<String> },
    Layer { example: usize, layer: usize, edges: Vec<EdgeWeights> },
    Pooling { example: usize, alpha: Vec<f64>, logit: f64 },
}

fn node_label(n: &LocalNode, g: &KnowledgeGraph) -> String {
    match n {
        LocalNode::Interaction => "[interaction]".into(),
        LocalNode::Dummy => "[dummy]".into(),
        LocalNode::Entity(e) => g.entities().name(*e).to_string(),
    }
}

/// Encodes one example and returns its node list, per-layer edge attention and pooling weights.
pub fn dump_attention<F: Real>(model: &Model<F>, example: usize, ex: &TrainExample, g: &KnowledgeGraph) -> Result<Vec<AttentionRecord>> {
    let tape = Tape::new();
    let p = Binding::new(&tape, &model.store);
    let out = model.encoder.encode(&p, &ex.segment, &ex.local, Mode::Eval, None)?;
    let pooled = model.pool.pool(&p, &out)?;
    let mut records = vec![AttentionRecord::Nodes {
        example,
        nodes: ex.local.nodes.iter().map(|n| node_label(n, g)).collect(),
    }];
    for la in &out.attention {
        let edges = la
            .edges
            .iter()
            .zip(&la.weights)
            .enumerate()
            .map(|(i, (m, w))| EdgeWeights {
                edge: i / 2,
                reversed: m.reversed,
                src: m.src,
                dst: m.dst,
                relation: g.relations().name(m.rel).to_string(),
                weights: w.clone(),
            })
            .collect();
        records.push(AttentionRecord::Layer {
            example,
            layer: la.layer,
            edges,
        });
    }
    records.push(AttentionRecord::Pooling {
        example,
        alpha: pooled.alpha,
        logit: pooled.logit.item().to_f64_lossy(),
    });
    Ok(records)
}

pub fn to_json_lines(records: &[AttentionRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
}

pub fn parse_json_lines(text: &str) -> Result<Vec<AttentionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: "attention".into(),
                line: n + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}
