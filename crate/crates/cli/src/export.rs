//! Tree export as JSON or Graphviz DOT.

use std::fmt::Write as _;

use anyhow::Result;
use serde::Serialize;

use hlda_core::eval::top_words;
use hlda_core::sampler::{DepthMode, LevelModel, SamplerState};

#[derive(Serialize)]
pub struct TreeExport {
    pub nodes: Vec<NodeExport>,
    pub documents: Vec<DocumentExport>,
    pub config: ConfigExport,
}

#[derive(Serialize)]
pub struct NodeExport {
    pub id: u32,
    pub parent: Option<u32>,
    pub level: usize,
    pub doc_count: u32,
    pub total_tokens: u64,
    pub top_words: Vec<WordExport>,
}

#[derive(Serialize)]
pub struct WordExport {
    pub term: String,
    pub p: f64,
}

#[derive(Serialize)]
pub struct DocumentExport {
    pub id: usize,
    pub path: Vec<u32>,
}

#[derive(Serialize)]
pub struct ConfigExport {
    /// Number of levels, or null for an unbounded tree.
    pub depth: Option<usize>,
    pub level_prior: String,
    pub gem_m: Option<f64>,
    pub gem_pi: Option<f64>,
    pub level_alpha: Option<f64>,
    pub gamma: f64,
    pub eta: Vec<f64>,
    pub iteration: u64,
    pub log_likelihood: f64,
}

pub fn build(state: &SamplerState, topk: usize) -> Result<TreeExport> {
    let tree = state.tree();
    let model = state.model();
    let vocab = state.corpus().vocabulary();
    let depth = state.assignments().iter().map(|a| a.path.depth()).max().unwrap_or(1);
    let mut doc_counts = vec![0u32; tree.next_id() as usize];
    for a in state.assignments() {
        for n in a.path.nodes() {
            doc_counts[n.0 as usize] += 1;
        }
    }
    let k = topk.clamp(1, tree.vocab_size().max(1));
    let mut nodes = Vec::with_capacity(tree.len());
    for id in tree.preorder(depth) {
        let node = tree.get(id)?;
        let top_words = if tree.vocab_size() == 0 {
            Vec::new()
        } else {
            top_words(tree, model, id, k)?
                .into_iter()
                .map(|(w, p)| WordExport { term: vocab.term(w).to_string(), p })
                .collect()
        };
        nodes.push(NodeExport {
            id: id.0,
            parent: node.parent().map(|p| p.0),
            level: node.level(),
            doc_count: doc_counts[id.0 as usize],
            total_tokens: node.total_count(),
            top_words,
        });
    }
    let documents = state
        .assignments()
        .iter()
        .enumerate()
        .map(|(d, a)| DocumentExport { id: d, path: a.path.nodes().iter().map(|n| n.0).collect() })
        .collect();
    let (level_prior, gem_m, gem_pi, level_alpha) = match model.levels {
        LevelModel::Gem(g) => ("gem", Some(g.m()), Some(g.pi()), None),
        LevelModel::Dirichlet { alpha } => ("dirichlet", None, None, Some(alpha)),
    };
    Ok(TreeExport {
        nodes,
        documents,
        config: ConfigExport {
            depth: match model.depth {
                DepthMode::Truncated(l) => Some(l),
                DepthMode::Infinite => None,
            },
            level_prior: level_prior.to_string(),
            gem_m,
            gem_pi,
            level_alpha,
            gamma: model.gamma,
            eta: model.eta.values().to_vec(),
            iteration: state.iteration(),
            log_likelihood: state.complete_log_likelihood(),
        },
    })
}

pub fn to_json(export: &TreeExport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(export)?;
    s.push('\n');
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn to_dot(export: &TreeExport) -> String {
    let mut out = String::from("digraph hlda {\n  node [shape=box];\n");
    for n in &export.nodes {
        let terms: Vec<String> = n.top_words.iter().map(|w| escape(&w.term)).collect();
        let _ = writeln!(
            out,
            "  n{} [label=\"{} docs, {} tokens\\n{}\"];",
            n.id,
            n.doc_count,
            n.total_tokens,
            terms.join(" ")
        );
    }
    for n in &export.nodes {
        if let Some(p) = n.parent {
            let _ = writeln!(out, "  n{} -> n{};", p, n.id);
        }
    }
    out.push_str("}\n");
    out
}

