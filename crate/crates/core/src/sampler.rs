//! Collapsed Gibbs sampling over document paths and word levels, with topics
//! and per-document level proportions integrated out.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::corpus::{Corpus, Document};
use crate::distributions::{
    crp_partition_log_prob_unchecked, dirichlet_level_probs, gem_level_probs, log_dirichlet_multinomial,
    log_rising, sample_discrete, sample_linear, truncated_gem_level_probs, GemParams, TopicPrior,
};
use crate::error::{Error, Result};
use crate::hyper::{mh_update_hyperparameters, AcceptanceRecord, HyperSampling};
use crate::tree::{NodeId, Path, PathCandidate, Tree};

/// Deepest level the staged tail draw may reach in infinite mode.
const MAX_LEVEL: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepthMode {
    /// Fixed number of levels, root included.
    Truncated(usize),
    Infinite,
}

/// Prior over the level a word is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LevelModel {
    /// Stick breaking; truncated trees fold the tail into the last level.
    Gem(GemParams),
    /// Symmetric Dirichlet over the levels of a truncated tree.
    Dirichlet { alpha: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub depth: DepthMode,
    pub levels: LevelModel,
    pub gamma: f64,
    pub eta: TopicPrior,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        crate::distributions::CrpParams::new(self.gamma)?;
        match (self.depth, self.levels) {
            (DepthMode::Truncated(0), _) => {
                return Err(Error::InvalidParameter("truncated depth must be at least 1".into()))
            }
            (DepthMode::Infinite, LevelModel::Dirichlet { .. }) => {
                return Err(Error::InvalidParameter(
                    "a Dirichlet level prior needs a truncated depth".into(),
                ))
            }
            (_, LevelModel::Dirichlet { alpha }) if !(alpha > 0.0 && alpha.is_finite()) => {
                return Err(Error::InvalidParameter(format!("level alpha must be > 0, got {alpha}")))
            }
            _ => {}
        }
        if let DepthMode::Truncated(l) = self.depth {
            let n = self.eta.values().len();
            if n != 1 && n != l {
                return Err(Error::InvalidParameter(format!(
                    "eta has {n} entries but the tree has {l} levels"
                )));
            }
        }
        Ok(())
    }

    /// Three levels, eta = {2.0, 1.0, 0.5}, gamma = 1, GEM(m = 0.5, pi = 100).
    pub fn paper_abstracts() -> Self {
        Self {
            depth: DepthMode::Truncated(3),
            levels: LevelModel::Gem(GemParams::new(0.5, 100.0).expect("valid")),
            gamma: 1.0,
            eta: TopicPrior::new(vec![2.0, 1.0, 0.5]).expect("valid"),
        }
    }

    pub fn gem(&self) -> Option<GemParams> {
        match self.levels {
            LevelModel::Gem(g) => Some(g),
            LevelModel::Dirichlet { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanOrder {
    #[default]
    Fixed,
    Random,
}

/// A document's seat in the tree and the levels of its words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DocAssignment {
    pub path: Path,
    pub levels: Vec<usize>,
    /// Number of the document's words at each level of its path.
    pub level_counts: Vec<u32>,
}

impl DocAssignment {
    pub(crate) fn new(path: Path, levels: Vec<usize>) -> Self {
        let len = levels.iter().map(|&l| l + 1).max().unwrap_or(0).max(path.depth());
        let mut level_counts = vec![0u32; len];
        for &l in &levels {
            level_counts[l] += 1;
        }
        Self {
            path,
            levels,
            level_counts,
        }
    }

    pub fn max_level(&self) -> Option<usize> {
        self.levels.iter().copied().max()
    }

    pub(crate) fn required_depth(&self, mode: DepthMode) -> usize {
        match mode {
            DepthMode::Truncated(l) => l,
            DepthMode::Infinite => self.max_level().map_or(1, |m| m + 1),
        }
    }
}

/// Reusable buffers for the token and path kernels.
#[derive(Clone, Debug, Default)]
pub(crate) struct Scratch {
    probs: Vec<f64>,
    node_score: Vec<f64>,
    node_log_denom: Vec<f64>,
    level_terms: Vec<Vec<(u32, u32)>>,
    fresh: Vec<f64>,
}

/// Predictive weights of every level a word could move to, word removed.
/// The last entry, when `tail` is set, covers all levels below the path.
pub(crate) fn level_weights(tree: &Tree, model: &ModelConfig, asg: &DocAssignment, word: u32, probs: &mut Vec<f64>) -> bool {
    let depth = asg.path.depth();
    let v = tree.vocab_size() as f64;
    let tail = match (model.depth, model.levels) {
        (DepthMode::Truncated(l), LevelModel::Gem(g)) => {
            truncated_gem_level_probs(&asg.level_counts, g, l, probs);
            None
        }
        (DepthMode::Truncated(l), LevelModel::Dirichlet { alpha }) => {
            dirichlet_level_probs(&asg.level_counts, alpha, l, probs);
            None
        }
        (DepthMode::Infinite, LevelModel::Gem(g)) => Some(gem_level_probs(&asg.level_counts, g, depth, probs)),
        (DepthMode::Infinite, LevelModel::Dirichlet { .. }) => unreachable!("rejected by validate"),
    };
    for (k, p) in probs.iter_mut().enumerate() {
        let node = tree.node_unchecked(asg.path.at(k));
        let eta = model.eta.at(k);
        *p *= (node.count(word) as f64 + eta) / (node.total_count() as f64 + v * eta);
    }
    if let Some(t) = tail {
        let gem = model.gem().expect("infinite depth uses GEM");
        let stages = tail_stage_weights(tree, model, asg.path.leaf(), word, gem.m());
        probs.push(t * stages.iter().sum::<f64>());
        true
    } else {
        false
    }
}

/// Expected predictive of `word` at each level below `from` for a path
/// extended from `from` by the nested CRP: existing children by occupancy,
/// a fresh node (uniform predictive) by `gamma`. Entry `j` is level
/// `from.level + 1 + j`, up to the deepest existing descendant.
fn extension_predictive(tree: &Tree, model: &ModelConfig, from: NodeId, word: u32) -> Vec<f64> {
    let v = tree.vocab_size() as f64;
    let base = tree.node_unchecked(from).level() + 1;
    let mut reach: Vec<f64> = Vec::new();
    let mut pred: Vec<f64> = Vec::new();
    let mut stack = vec![(from, 1.0)];
    while let Some((id, p)) = stack.pop() {
        let node = tree.node_unchecked(id);
        let denom = tree.customers(id) as f64 + model.gamma;
        for &c in node.children() {
            let child = tree.node_unchecked(c);
            let pc = p * child.doc_count() as f64 / denom;
            let j = child.level() - base;
            if reach.len() <= j {
                reach.resize(j + 1, 0.0);
                pred.resize(j + 1, 0.0);
            }
            let eta = model.eta.at(child.level());
            reach[j] += pc;
            pred[j] += pc * (child.count(word) as f64 + eta) / (child.total_count() as f64 + v * eta);
            stack.push((c, pc));
        }
    }
    pred.iter().zip(&reach).map(|(g, r)| g + (1.0 - r).max(0.0) / v).collect()
}

/// Weights of the levels below a path ending at `leaf`, relative to the
/// prior mass passed beyond it. Entry `j` is level `leaf.level + 1 + j`; the
/// last entry lumps every level past the deepest existing descendant, where
/// all nodes are fresh.
fn tail_stage_weights(tree: &Tree, model: &ModelConfig, leaf: NodeId, word: u32, m: f64) -> Vec<f64> {
    let v = tree.vocab_size() as f64;
    let g = extension_predictive(tree, model, leaf, word);
    let mut out = Vec::with_capacity(g.len() + 1);
    let mut pass = 1.0;
    for x in g {
        out.push(pass * (1.0 - m) * x);
        pass *= m;
    }
    out.push(pass / v);
    out
}

/// Draws the existing nodes an extension from `leaf` to `level` runs
/// through, in the nested CRP weighted by the predictive of `word` at
/// `level`. Below the returned chain the extension uses fresh nodes.
fn draw_extension<R: Rng + ?Sized>(
    tree: &Tree,
    model: &ModelConfig,
    leaf: NodeId,
    word: u32,
    level: usize,
    rng: &mut R,
) -> Vec<NodeId> {
    let v = tree.vocab_size() as f64;
    let mut via = Vec::new();
    let mut cur = leaf;
    let mut weights = Vec::new();
    loop {
        let node = tree.node_unchecked(cur);
        if node.level() == level || node.children().is_empty() {
            return via;
        }
        let children = node.children();
        weights.clear();
        for &c in children {
            let child = tree.node_unchecked(c);
            let g = if child.level() == level {
                let eta = model.eta.at(level);
                (child.count(word) as f64 + eta) / (child.total_count() as f64 + v * eta)
            } else {
                extension_predictive(tree, model, c, word).get(level - child.level() - 1).copied().unwrap_or(1.0 / v)
            };
            weights.push(child.doc_count() as f64 * g);
        }
        weights.push(model.gamma / v);
        let total: f64 = weights.iter().sum();
        let pick = sample_linear(&weights, total, rng);
        if pick == children.len() {
            return via;
        }
        cur = children[pick];
        via.push(cur);
    }
}

/// Resamples the level of word `n`, whose counts are currently in the tree.
pub(crate) fn resample_level<R: Rng + ?Sized>(
    tree: &mut Tree,
    model: &ModelConfig,
    doc: &Document,
    asg: &mut DocAssignment,
    n: usize,
    probs: &mut Vec<f64>,
    rng: &mut R,
) -> Result<usize> {
    let word = doc.words()[n];
    let old = asg.levels[n];
    tree.decrement_word(asg.path.at(old), word)?;
    asg.level_counts[old] -= 1;

    let has_tail = level_weights(tree, model, asg, word, probs);
    let total: f64 = probs.iter().sum();
    let mut level = sample_linear(probs, total, rng);
    if has_tail && level == probs.len() - 1 {
        let gem = model.gem().expect("infinite depth uses GEM");
        let leaf = asg.path.leaf();
        let stages = tail_stage_weights(tree, model, leaf, word, gem.m());
        let stage = sample_linear(&stages, stages.iter().sum(), rng);
        level = asg.path.depth() + stage;
        if stage == stages.len() - 1 {
            // Below the document's deepest word every level has zero counts,
            // so each stage stops with the prior stick mean.
            let stop = gem.stop_weight() / gem.pi();
            while level < MAX_LEVEL && rng.random::<f64>() >= stop {
                level += 1;
            }
        }
        let via = draw_extension(tree, model, leaf, word, level, rng);
        tree.extend_path_via(&mut asg.path, &via, level + 1)?;
        asg.level_counts.resize(level + 1, 0);
    }
    asg.levels[n] = level;
    asg.level_counts[level] += 1;
    tree.increment_word(asg.path.at(level), word)?;
    Ok(level)
}

/// Shortens an infinite-depth path to the document's deepest word.
pub(crate) fn trim_path(tree: &mut Tree, model: &ModelConfig, asg: &mut DocAssignment) -> Result<()> {
    if model.depth == DepthMode::Infinite {
        let want = asg.required_depth(model.depth);
        if asg.path.depth() > want {
            tree.truncate_path(&mut asg.path, want)?;
            asg.level_counts.truncate(want);
        }
    }
    Ok(())
}

/// Scores every seat for a document that has been removed from the tree.
/// Returns candidates in `enumerate_path_candidates` order with their
/// unnormalised log posterior weights.
pub(crate) fn path_log_weights(
    tree: &Tree,
    model: &ModelConfig,
    doc: &Document,
    levels: &[usize],
    depth: usize,
    scratch: &mut Scratch,
) -> (Vec<PathCandidate>, Vec<f64>) {
    let v = tree.vocab_size() as f64;
    let gamma = model.gamma;

    // the document's term counts per level
    let terms = &mut scratch.level_terms;
    terms.iter_mut().for_each(Vec::clear);
    terms.resize_with(depth.max(terms.len()), Vec::new);
    for (&w, &l) in doc.words().iter().zip(levels) {
        let bucket = &mut terms[l];
        match bucket.last_mut() {
            Some((t, c)) if *t == w => *c += 1,
            _ => bucket.push((w, 1)),
        }
    }
    let level_total = |l: usize| terms[l].iter().map(|&(_, c)| c).sum::<u32>();

    // likelihood of each level's words at a fresh node, summed from the bottom
    scratch.fresh.clear();
    scratch.fresh.resize(depth + 1, 0.0);
    for l in (0..depth).rev() {
        let eta = model.eta.at(l);
        let own: f64 = terms[l].iter().map(|&(_, c)| log_rising(eta, c)).sum::<f64>() - log_rising(v * eta, level_total(l));
        scratch.fresh[l] = scratch.fresh[l + 1] + own;
    }

    let ids = tree.next_id() as usize;
    scratch.node_score.resize(ids, 0.0);
    scratch.node_log_denom.resize(ids, 0.0);
    let order = tree.preorder(depth);
    let mut candidates = Vec::with_capacity(order.len());
    let mut weights = Vec::with_capacity(order.len());
    for id in order {
        let node = tree.node_unchecked(id);
        let l = node.level();
        let eta = model.eta.at(l);
        let mut lik = -log_rising(node.total_count() as f64 + v * eta, level_total(l));
        for &(w, c) in &terms[l] {
            lik += log_rising(node.count(w) as f64 + eta, c);
        }
        let base = match node.parent() {
            None => 0.0,
            Some(p) => {
                scratch.node_score[p.0 as usize] + (node.doc_count() as f64).ln() - scratch.node_log_denom[p.0 as usize]
            }
        };
        let score = base + lik;
        scratch.node_score[id.0 as usize] = score;
        if l + 1 == depth {
            candidates.push(PathCandidate::Leaf(id));
            weights.push(score);
        } else {
            let log_denom = (gamma + tree.customers(id) as f64).ln();
            scratch.node_log_denom[id.0 as usize] = log_denom;
            candidates.push(PathCandidate::Branch { node: id, level: l });
            weights.push(score + gamma.ln() - log_denom + scratch.fresh[l + 1]);
        }
    }
    (candidates, weights)
}

/// Removes a document, draws a new path for it and reseats it.
pub(crate) fn resample_path<R: Rng + ?Sized>(
    tree: &mut Tree,
    model: &ModelConfig,
    doc: &Document,
    asg: &mut DocAssignment,
    scratch: &mut Scratch,
    rng: &mut R,
) -> Result<()> {
    tree.remove_document(&asg.path, doc.words(), &asg.levels)?;
    let depth = asg.required_depth(model.depth);
    let (candidates, weights) = path_log_weights(tree, model, doc, &asg.levels, depth, scratch);
    let pick = sample_discrete(&weights, rng)?;
    seat(tree, doc, asg, candidates[pick], depth)
}

pub(crate) fn seat(tree: &mut Tree, doc: &Document, asg: &mut DocAssignment, candidate: PathCandidate, depth: usize) -> Result<()> {
    asg.path = tree.add_document(candidate, depth)?;
    asg.level_counts.clear();
    asg.level_counts.resize(depth, 0);
    for (&w, &l) in doc.words().iter().zip(&asg.levels) {
        tree.increment_word(asg.path.at(l), w)?;
        asg.level_counts[l] += 1;
    }
    Ok(())
}

/// Draws word levels from the level prior alone, word by word.
pub(crate) fn forward_levels<R: Rng + ?Sized>(model: &ModelConfig, n_words: usize, rng: &mut R) -> Vec<usize> {
    let mut counts: Vec<u32> = Vec::new();
    let mut probs = Vec::new();
    let mut levels = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        let level = match (model.depth, model.levels) {
            (DepthMode::Truncated(l), LevelModel::Gem(g)) => {
                truncated_gem_level_probs(&counts, g, l, &mut probs);
                sample_linear(&probs, 1.0, rng)
            }
            (DepthMode::Truncated(l), LevelModel::Dirichlet { alpha }) => {
                dirichlet_level_probs(&counts, alpha, l, &mut probs);
                sample_linear(&probs, 1.0, rng)
            }
            (DepthMode::Infinite, LevelModel::Gem(g)) => {
                let mut level = 0;
                loop {
                    let here = counts.get(level).copied().unwrap_or(0) as f64;
                    let below: f64 = counts.iter().skip(level).map(|&c| c as f64).sum();
                    let stop = (g.stop_weight() + here) / (g.pi() + below);
                    if level + 1 >= MAX_LEVEL || rng.random::<f64>() < stop {
                        break level;
                    }
                    level += 1;
                }
            }
            (DepthMode::Infinite, LevelModel::Dirichlet { .. }) => unreachable!("rejected by validate"),
        };
        if counts.len() <= level {
            counts.resize(level + 1, 0);
        }
        counts[level] += 1;
        levels.push(level);
    }
    levels
}

/// Draws a seat from the nested-CRP prior.
pub(crate) fn forward_path<R: Rng + ?Sized>(tree: &Tree, gamma: f64, depth: usize, rng: &mut R) -> Result<PathCandidate> {
    let candidates = tree.enumerate_path_candidates(depth);
    let weights = candidates
        .iter()
        .map(|c| tree.path_prior_log_prob(*c, gamma))
        .collect::<Result<Vec<_>>>()?;
    Ok(candidates[sample_discrete(&weights, rng)?])
}

/// Log prior of the tree's paths: one CRP partition per restaurant.
pub fn paths_log_prior(tree: &Tree, gamma: f64) -> f64 {
    tree.iter()
        .filter(|n| !n.children().is_empty())
        .map(|n| {
            crp_partition_log_prob_unchecked(
                n.children().iter().map(|&c| tree.node_unchecked(c).doc_count()),
                gamma,
            )
        })
        .sum()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Log prior of one document's level counts with proportions integrated out.
pub fn doc_levels_log_prior(level_counts: &[u32], depth: DepthMode, levels: LevelModel) -> f64 {
    match levels {
        LevelModel::Gem(g) => {
            let (a, b) = (g.stop_weight(), g.pass_weight());
            let sticks = match depth {
                DepthMode::Truncated(l) => l - 1,
                DepthMode::Infinite => level_counts.iter().rposition(|&c| c > 0).map_or(0, |m| m + 1),
            };
            let mut below: u32 = level_counts.iter().sum();
            let mut acc = 0.0;
            for j in 0..sticks {
                let here = level_counts.get(j).copied().unwrap_or(0);
                below -= here;
                if here > 0 || below > 0 {
                    acc += ln_beta(a + here as f64, b + below as f64) - ln_beta(a, b);
                }
            }
            acc
        }
        LevelModel::Dirichlet { alpha } => {
            let DepthMode::Truncated(l) = depth else {
                unreachable!("rejected by validate")
            };
            let total: u32 = level_counts.iter().sum();
            let mut acc = ln_gamma(l as f64 * alpha) - ln_gamma(l as f64 * alpha + total as f64);
            for &c in level_counts.iter().filter(|&&c| c > 0) {
                acc += ln_gamma(alpha + c as f64) - ln_gamma(alpha);
            }
            acc
        }
    }
}

/// Log marginal of all words given their nodes.
pub fn words_log_likelihood(tree: &Tree, eta: &TopicPrior) -> f64 {
    tree.iter()
        .filter(|n| n.total_count() > 0)
        .map(|n| log_dirichlet_multinomial(n.word_counts(), eta.at(n.level()), tree.vocab_size()))
        .sum()
}

/// Paths, levels and hyperparameters of one sampled state.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub iteration: u64,
    pub log_likelihood: f64,
    pub model: ModelConfig,
    pub next_node_id: u32,
    pub paths: Vec<Path>,
    pub levels: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct SamplerState {
    corpus: Arc<Corpus>,
    model: ModelConfig,
    tree: Tree,
    docs: Vec<DocAssignment>,
    rng: ChaCha8Rng,
    iteration: u64,
    scan: ScanOrder,
    /// Proposal scales for hyperparameter updates once sampling has begun.
    pub(crate) mh_steps: Option<[f64; 4]>,
    scratch: Scratch,
}

impl SamplerState {
    /// Forward initialisation: each document in turn draws a path from the
    /// nested CRP and word levels from the level prior.
    pub fn init(corpus: Arc<Corpus>, model: ModelConfig, rng: ChaCha8Rng) -> Result<Self> {
        model.validate()?;
        let mut state = Self {
            tree: Tree::new(corpus.vocab_size()),
            docs: Vec::with_capacity(corpus.num_docs()),
            corpus,
            model,
            rng,
            iteration: 0,
            scan: ScanOrder::Fixed,
            mh_steps: None,
            scratch: Scratch::default(),
        };
        for d in 0..state.corpus.num_docs() {
            let doc = state.corpus.doc(d);
            let levels = forward_levels(&state.model, doc.len(), &mut state.rng);
            let mut asg = DocAssignment::new(Path::default(), levels);
            let depth = asg.required_depth(state.model.depth);
            let cand = forward_path(&state.tree, state.model.gamma, depth, &mut state.rng)?;
            seat(&mut state.tree, doc, &mut asg, cand, depth)?;
            state.docs.push(asg);
        }
        Ok(state)
    }

    pub fn init_seeded(corpus: Arc<Corpus>, model: ModelConfig, seed: u64) -> Result<Self> {
        Self::init(corpus, model, ChaCha8Rng::seed_from_u64(seed))
    }

    /// Rebuilds a state from recorded paths and levels.
    pub fn from_snapshot(corpus: Arc<Corpus>, snapshot: &Snapshot, rng: ChaCha8Rng) -> Result<Self> {
        snapshot.model.validate()?;
        if snapshot.paths.len() != corpus.num_docs() || snapshot.levels.len() != corpus.num_docs() {
            return Err(Error::Checkpoint("assignment count does not match the corpus".into()));
        }
        let mut tree = Tree::from_paths(corpus.vocab_size(), snapshot.next_node_id, &snapshot.paths)?;
        let mut docs = Vec::with_capacity(corpus.num_docs());
        for (d, (path, levels)) in snapshot.paths.iter().zip(&snapshot.levels).enumerate() {
            let doc = corpus.doc(d);
            if levels.len() != doc.len() || levels.iter().any(|&l| l >= path.depth()) {
                return Err(Error::Checkpoint(format!("document {d}: levels do not fit its path")));
            }
            for (&w, &l) in doc.words().iter().zip(levels) {
                tree.increment_word(path.at(l), w)?;
            }
            docs.push(DocAssignment::new(path.clone(), levels.clone()));
        }
        Ok(Self {
            corpus,
            model: snapshot.model.clone(),
            tree,
            docs,
            rng,
            iteration: snapshot.iteration,
            scan: ScanOrder::Fixed,
            mh_steps: None,
            scratch: Scratch::default(),
        })
    }

    pub fn snapshot(&self, log_likelihood: f64) -> Snapshot {
        Snapshot {
            iteration: self.iteration,
            log_likelihood,
            model: self.model.clone(),
            next_node_id: self.tree.next_id(),
            paths: self.docs.iter().map(|a| a.path.clone()).collect(),
            levels: self.docs.iter().map(|a| a.levels.clone()).collect(),
        }
    }

    pub fn set_scan_order(&mut self, scan: ScanOrder) {
        self.scan = scan;
    }

    pub fn scan_order(&self) -> ScanOrder {
        self.scan
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }

    pub(crate) fn model_mut(&mut self) -> &mut ModelConfig {
        &mut self.model
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn assignments(&self) -> &[DocAssignment] {
        &self.docs
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub(crate) fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Resamples the level of word `n` of document `d`.
    pub fn sample_level(&mut self, d: usize, n: usize) -> Result<usize> {
        let doc = self.corpus.doc(d);
        resample_level(
            &mut self.tree,
            &self.model,
            doc,
            &mut self.docs[d],
            n,
            &mut self.scratch.probs,
            &mut self.rng,
        )
    }

    /// Normalised conditional over the levels word `n` of document `d` can
    /// take, given everything else. In infinite mode the last entry is the
    /// total mass of all levels below the current path.
    pub fn level_conditional(&mut self, d: usize, n: usize) -> Result<Vec<f64>> {
        let word = self.corpus.doc(d).words()[n];
        let asg = &mut self.docs[d];
        let old = asg.levels[n];
        self.tree.decrement_word(asg.path.at(old), word)?;
        asg.level_counts[old] -= 1;
        let mut probs = Vec::new();
        level_weights(&self.tree, &self.model, asg, word, &mut probs);
        asg.level_counts[old] += 1;
        self.tree.increment_word(asg.path.at(old), word)?;
        let total: f64 = probs.iter().sum();
        Ok(probs.into_iter().map(|p| p / total).collect())
    }

    /// Redraws document `d`'s path as a block.
    pub fn sample_path(&mut self, d: usize) -> Result<()> {
        let doc = self.corpus.doc(d);
        resample_path(
            &mut self.tree,
            &self.model,
            doc,
            &mut self.docs[d],
            &mut self.scratch,
            &mut self.rng,
        )
    }

    /// Normalised posterior over seats for document `d`, as the resulting
    /// node paths (fresh nodes shown as `None`). The state is unchanged.
    pub fn path_conditional(&mut self, d: usize) -> Result<Vec<(Vec<Option<NodeId>>, f64)>> {
        let doc = self.corpus.doc(d);
        let asg = &self.docs[d];
        let depth = asg.required_depth(self.model.depth);
        let mut tree = self.tree.clone();
        tree.remove_document(&asg.path, doc.words(), &asg.levels)?;
        let (cands, weights) = path_log_weights(&tree, &self.model, doc, &asg.levels, depth, &mut self.scratch);
        let norm = crate::distributions::log_sum_exp(&weights)?;
        let mut out = Vec::with_capacity(cands.len());
        for (c, w) in cands.iter().zip(&weights) {
            let mut nodes = Vec::with_capacity(depth);
            let mut cur = Some(c.node());
            while let Some(id) = cur {
                nodes.push(Some(id));
                cur = tree.get(id)?.parent();
            }
            nodes.reverse();
            nodes.resize(depth, None);
            out.push((nodes, (w - norm).exp()));
        }
        Ok(out)
    }

    /// One pass over all documents: path first, then every word's level.
    pub fn gibbs_sweep(&mut self) -> Result<()> {
        let mut order: Vec<usize> = (0..self.docs.len()).collect();
        if self.scan == ScanOrder::Random {
            order.shuffle(&mut self.rng);
        }
        for d in order {
            let doc = self.corpus.doc(d);
            let asg = &mut self.docs[d];
            resample_path(&mut self.tree, &self.model, doc, asg, &mut self.scratch, &mut self.rng)?;
            for n in 0..doc.len() {
                resample_level(&mut self.tree, &self.model, doc, asg, n, &mut self.scratch.probs, &mut self.rng)?;
            }
            trim_path(&mut self.tree, &self.model, asg)?;
        }
        self.iteration += 1;
        Ok(())
    }

    pub fn paths_log_prior(&self) -> f64 {
        paths_log_prior(&self.tree, self.model.gamma)
    }

    pub fn levels_log_prior(&self) -> f64 {
        self.docs
            .iter()
            .map(|a| doc_levels_log_prior(&a.level_counts, self.model.depth, self.model.levels))
            .sum()
    }

    pub fn words_log_likelihood(&self) -> f64 {
        words_log_likelihood(&self.tree, &self.model.eta)
    }

    /// `log p(c, z, w | gamma, eta, m, pi)`.
    pub fn complete_log_likelihood(&self) -> f64 {
        self.paths_log_prior() + self.levels_log_prior() + self.words_log_likelihood()
    }

    /// Verifies counts against the assignments and the tree's structure.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        self.tree.check_invariants()?;
        let tokens: u64 = self.tree.iter().map(|n| n.total_count()).sum();
        if tokens != self.corpus.total_tokens() as u64 {
            return Err(format!("tree holds {tokens} tokens, corpus has {}", self.corpus.total_tokens()));
        }
        let mut expect = vec![vec![0u32; self.tree.vocab_size()]; self.tree.next_id() as usize];
        let mut docs_at = vec![0u32; self.tree.next_id() as usize];
        for (d, asg) in self.docs.iter().enumerate() {
            for id in asg.path.nodes() {
                docs_at[id.0 as usize] += 1;
            }
            if let DepthMode::Truncated(l) = self.model.depth {
                if asg.path.depth() != l || asg.levels.iter().any(|&z| z >= l) {
                    return Err(format!("document {d} leaves the truncated tree"));
                }
            }
            for (&w, &z) in self.corpus.doc(d).words().iter().zip(&asg.levels) {
                expect[asg.path.at(z).0 as usize][w as usize] += 1;
            }
        }
        for node in self.tree.iter() {
            if node.word_counts() != expect[node.id().0 as usize].as_slice() {
                return Err(format!("node {} counts disagree with assignments", node.id()));
            }
            if node.id() != self.tree.root() && node.doc_count() != docs_at[node.id().0 as usize] {
                return Err(format!("node {} document count disagrees", node.id()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ChainConfig {
    pub iters: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub seed: u64,
    /// RNG stream, so restarts sharing a seed stay independent.
    pub chain: u64,
    pub record_snapshots: bool,
    pub scan: ScanOrder,
    pub hyper: Option<HyperSampling>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iters: 10_000,
            burn_in: 2_000,
            thin: 100,
            seed: 0,
            chain: 0,
            record_snapshots: true,
            scan: ScanOrder::Fixed,
            hyper: None,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters <= self.burn_in {
            return Err(Error::InvalidParameter(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iters, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thin must be at least 1".into()));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.chain);
        rng
    }
}

#[derive(Clone, Debug)]
pub struct ChainResult {
    pub chain: u64,
    /// Complete log likelihood after every iteration.
    pub trace: Vec<f64>,
    pub samples: Vec<Snapshot>,
    pub mode: Snapshot,
    pub hyper_acceptance: Vec<AcceptanceRecord>,
    pub elapsed: Duration,
}

impl ChainResult {
    pub fn seconds_per_doc_iteration(&self, docs: usize) -> f64 {
        self.elapsed.as_secs_f64() / (self.trace.len().max(1) * docs.max(1)) as f64
    }
}

/// Initialises from the prior and runs `cfg.iters` iterations.
pub fn run_chain(corpus: Arc<Corpus>, model: ModelConfig, cfg: &ChainConfig) -> Result<(ChainResult, SamplerState)> {
    cfg.validate()?;
    let mut state = SamplerState::init(corpus, model, cfg.rng())?;
    state.set_scan_order(cfg.scan);
    let result = continue_chain(&mut state, cfg)?;
    Ok((result, state))
}

/// Runs a chain from `state` until its iteration counter reaches `cfg.iters`.
pub fn continue_chain(state: &mut SamplerState, cfg: &ChainConfig) -> Result<ChainResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut trace = Vec::with_capacity(cfg.iters.saturating_sub(state.iteration()) as usize);
    let mut samples = Vec::new();
    let mut mode: Option<Snapshot> = None;
    let mut acceptance = Vec::new();
    while state.iteration() < cfg.iters {
        state.gibbs_sweep()?;
        if let Some(h) = &cfg.hyper {
            let in_burn_in = state.iteration() <= cfg.burn_in;
            acceptance.push(mh_update_hyperparameters(state, h, in_burn_in)?);
        }
        let ll = state.complete_log_likelihood();
        trace.push(ll);
        let t = state.iteration();
        if mode.as_ref().is_none_or(|m| ll > m.log_likelihood) {
            mode = Some(state.snapshot(ll));
        }
        if cfg.record_snapshots && t > cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0 {
            samples.push(state.snapshot(ll));
        }
    }
    let mode = mode.unwrap_or_else(|| state.snapshot(state.complete_log_likelihood()));
    Ok(ChainResult {
        chain: cfg.chain,
        trace,
        samples,
        mode,
        hyper_acceptance: acceptance,
        elapsed: start.elapsed(),
    })
}

/// Runs independent restarts on scoped threads, one RNG stream each.
pub fn run_chains(corpus: Arc<Corpus>, model: &ModelConfig, cfg: &ChainConfig, chains: usize) -> Result<Vec<ChainResult>> {
    let results: Vec<Result<ChainResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..chains)
            .map(|c| {
                let corpus = Arc::clone(&corpus);
                let model = model.clone();
                let mut cfg = cfg.clone();
                cfg.chain = cfg.chain + c as u64;
                s.spawn(move || run_chain(corpus, model, &cfg).map(|(r, _)| r))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });
    results.into_iter().collect()
}

/// The highest-scoring mode across chains; ties go to the earlier chain, then
/// the earlier iteration.
pub fn posterior_mode(chains: &[ChainResult]) -> Option<(usize, &Snapshot)> {
    let mut best: Option<(usize, &Snapshot)> = None;
    for (i, c) in chains.iter().enumerate() {
        let better = match best {
            None => true,
            Some((_, b)) => c.mode.log_likelihood > b.log_likelihood,
        };
        if better {
            best = Some((i, &c.mode));
        }
    }
    best
}

/// Biased sample autocorrelation for lags `0..=max_lag`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if series.len() <= max_lag {
        return Err(Error::InvalidParameter(format!(
            "series of length {} is too short for lag {max_lag}",
            series.len()
        )));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let var: f64 = centered.iter().map(|x| x * x).sum();
    if var <= 0.0 || !var.is_finite() {
        return Err(Error::ZeroVariance);
    }
    Ok((0..=max_lag)
        .map(|k| centered.iter().zip(&centered[k..]).map(|(a, b)| a * b).sum::<f64>() / var)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use std::collections::HashMap;

    /// `log p(c, z, w)` as a plain product of sequential predictives: CRP
    /// seating per document, level predictives per word, Polya urns per node.
    fn brute_joint(model: &ModelConfig, v: usize, words: &[Vec<u32>], paths: &[Vec<u64>], levels: &[Vec<usize>]) -> f64 {
        let gamma = model.gamma;
        let mut lp = 0.0;
        let mut through: HashMap<u64, f64> = HashMap::new();
        let mut children: HashMap<u64, Vec<u64>> = HashMap::new();
        for p in paths {
            for l in 1..p.len() {
                let kids = children.entry(p[l - 1]).or_default();
                let total: f64 = kids.iter().map(|k| through[k]).sum();
                let here = through.get(&p[l]).copied().unwrap_or(0.0);
                lp += if here > 0.0 { here.ln() } else { gamma.ln() } - (gamma + total).ln();
                if here == 0.0 {
                    kids.push(p[l]);
                }
                *through.entry(p[l]).or_default() += 1.0;
            }
        }
        for z in levels {
            let mut counts = vec![0.0f64; 512];
            for &k in z {
                let p = match (model.depth, model.levels) {
                    (_, LevelModel::Dirichlet { alpha }) => {
                        let DepthMode::Truncated(l) = model.depth else { unreachable!() };
                        let n: f64 = counts.iter().sum();
                        (alpha + counts[k]) / (l as f64 * alpha + n)
                    }
                    (depth, LevelModel::Gem(g)) => {
                        let cap = match depth {
                            DepthMode::Truncated(l) => l - 1,
                            DepthMode::Infinite => usize::MAX,
                        };
                        let (a, b) = (g.m() * g.pi(), (1.0 - g.m()) * g.pi());
                        let mut p = 1.0;
                        for j in 0..k {
                            let at_or_below: f64 = counts[j..].iter().sum();
                            let below: f64 = counts[j + 1..].iter().sum();
                            p *= (a + below) / (g.pi() + at_or_below);
                        }
                        if k < cap {
                            let at_or_below: f64 = counts[k..].iter().sum();
                            p *= (b + counts[k]) / (g.pi() + at_or_below);
                        }
                        p
                    }
                };
                lp += p.ln();
                counts[k] += 1.0;
            }
        }
        let mut node_counts: HashMap<u64, (usize, Vec<f64>)> = HashMap::new();
        for ((w, z), p) in words.iter().zip(levels).zip(paths) {
            for (&word, &k) in w.iter().zip(z) {
                let entry = node_counts.entry(p[k]).or_insert_with(|| (k, vec![0.0; v]));
                let eta = model.eta.at(k);
                let total: f64 = entry.1.iter().sum();
                lp += ((entry.1[word as usize] + eta) / (total + v as f64 * eta)).ln();
                entry.1[word as usize] += 1.0;
            }
        }
        lp
    }

    fn labels(state: &SamplerState) -> Vec<Vec<u64>> {
        state
            .assignments()
            .iter()
            .map(|a| a.path.nodes().iter().map(|n| n.0 as u64).collect())
            .collect()
    }

    fn words_of(state: &SamplerState) -> Vec<Vec<u32>> {
        state.corpus().documents().iter().map(|d| d.words().to_vec()).collect()
    }

    fn levels_of(state: &SamplerState) -> Vec<Vec<usize>> {
        state.assignments().iter().map(|a| a.levels.clone()).collect()
    }

    fn brute_of(state: &SamplerState) -> f64 {
        brute_joint(
            state.model(),
            state.corpus().vocab_size(),
            &words_of(state),
            &labels(state),
            &levels_of(state),
        )
    }

    fn corpus(docs: Vec<Vec<u32>>, v: usize) -> Arc<Corpus> {
        Arc::new(Corpus::new(docs, Vocabulary::numbered(v)).unwrap())
    }

    fn toy_corpus() -> Arc<Corpus> {
        corpus(vec![vec![0, 1, 1, 2], vec![2, 2, 3], vec![0, 3], vec![1, 1, 1, 0, 4], vec![4]], 5)
    }

    fn models() -> Vec<ModelConfig> {
        vec![
            ModelConfig {
                depth: DepthMode::Truncated(3),
                levels: LevelModel::Gem(GemParams::new(0.35, 3.0).unwrap()),
                gamma: 0.8,
                eta: TopicPrior::new(vec![1.5, 0.7, 0.2]).unwrap(),
            },
            ModelConfig {
                depth: DepthMode::Truncated(3),
                levels: LevelModel::Dirichlet { alpha: 0.6 },
                gamma: 2.0,
                eta: TopicPrior::scalar(0.4).unwrap(),
            },
            ModelConfig {
                depth: DepthMode::Infinite,
                levels: LevelModel::Gem(GemParams::new(0.5, 1.5).unwrap()),
                gamma: 1.2,
                eta: TopicPrior::new(vec![0.9, 0.3]).unwrap(),
            },
        ]
    }

    #[test]
    fn complete_log_likelihood_matches_brute_force() {
        for model in models() {
            let mut state = SamplerState::init_seeded(toy_corpus(), model, 3).unwrap();
            for _ in 0..15 {
                let fast = state.complete_log_likelihood();
                let slow = brute_of(&state);
                assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
                state.gibbs_sweep().unwrap();
            }
        }
    }

    #[test]
    fn single_word_depth_one_scores_minus_log_v() {
        let model = ModelConfig {
            depth: DepthMode::Truncated(1),
            levels: LevelModel::Gem(GemParams::new(0.5, 1.0).unwrap()),
            gamma: 1.0,
            eta: TopicPrior::scalar(0.3).unwrap(),
        };
        let mut state = SamplerState::init_seeded(corpus(vec![vec![2]], 7), model, 1).unwrap();
        assert!((state.complete_log_likelihood() + 7f64.ln()).abs() < 1e-12);
        state.gibbs_sweep().unwrap();
        assert!((state.words_log_likelihood() + 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn level_conditional_matches_enumeration() {
        for model in models().into_iter().take(2) {
            let mut state = SamplerState::init_seeded(toy_corpus(), model, 9).unwrap();
            for _ in 0..3 {
                state.gibbs_sweep().unwrap();
            }
            for d in 0..state.corpus().num_docs() {
                for n in 0..state.corpus().doc(d).len() {
                    let got = state.level_conditional(d, n).unwrap();
                    let mut joint: Vec<f64> = (0..3)
                        .map(|k| {
                            let mut z = levels_of(&state);
                            z[d][n] = k;
                            brute_joint(state.model(), 5, &words_of(&state), &labels(&state), &z)
                        })
                        .collect();
                    let norm = crate::distributions::log_sum_exp(&joint).unwrap();
                    joint.iter_mut().for_each(|x| *x = (*x - norm).exp());
                    for (a, b) in got.iter().zip(&joint) {
                        assert!((a - b).abs() < 1e-10, "{got:?} vs {joint:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn tiny_level_conditional_by_hand() {
        // one document "0 1", V = 2, two levels, both words at the root
        let model = ModelConfig {
            depth: DepthMode::Truncated(2),
            levels: LevelModel::Gem(GemParams::new(0.5, 2.0).unwrap()),
            gamma: 1.0,
            eta: TopicPrior::scalar(1.0).unwrap(),
        };
        let snap = Snapshot {
            iteration: 0,
            log_likelihood: 0.0,
            model,
            next_node_id: 2,
            paths: vec![Path::new(vec![NodeId(0), NodeId(1)])],
            levels: vec![vec![0, 0]],
        };
        let mut state = SamplerState::from_snapshot(corpus(vec![vec![0, 1]], 2), &snap, ChaCha8Rng::seed_from_u64(0)).unwrap();
        // word 0 removed: level counts (1, 0); root holds word 1 only
        // level 0: (1 + 1) / (2 + 1) * (0 + 1) / (1 + 2) = 2/9
        // level 1: (0 + 1) / (2 + 1) * 1/2 = 1/6
        let got = state.level_conditional(0, 0).unwrap();
        let (a, b) = (2.0 / 9.0, 1.0 / 6.0);
        assert!((got[0] - a / (a + b)).abs() < 1e-12);
        assert!((got[1] - b / (a + b)).abs() < 1e-12);
    }

    #[test]
    fn infinite_level_conditional_matches_enumeration_at_a_leaf() {
        let model = models().pop().unwrap();
        let corpus = corpus(vec![vec![0, 1, 1], vec![1, 2]], 3);
        // document 1 ends at a leaf, so every level below its path is fresh
        let snap = Snapshot {
            iteration: 0,
            log_likelihood: 0.0,
            model: model.clone(),
            next_node_id: 4,
            paths: vec![
                Path::new(vec![NodeId(0), NodeId(1), NodeId(2)]),
                Path::new(vec![NodeId(0), NodeId(3)]),
            ],
            levels: vec![vec![0, 2, 1], vec![1, 0]],
        };
        let mut state = SamplerState::from_snapshot(Arc::clone(&corpus), &snap, ChaCha8Rng::seed_from_u64(0)).unwrap();
        let got = state.level_conditional(1, 1).unwrap();
        assert_eq!(got.len(), 3);
        let words = words_of(&state);
        let joint_at = |k: usize| {
            let mut paths = labels(&state);
            let mut z = levels_of(&state);
            while paths[1].len() <= k {
                let next = 1000 + paths[1].len() as u64;
                paths[1].push(next);
            }
            z[1][1] = k;
            brute_joint(&model, 3, &words, &paths, &z)
        };
        let mut joint: Vec<f64> = (0..400).map(joint_at).collect();
        let norm = crate::distributions::log_sum_exp(&joint).unwrap();
        joint.iter_mut().for_each(|x| *x = (*x - norm).exp());
        assert!((got[0] - joint[0]).abs() < 1e-10);
        assert!((got[1] - joint[1]).abs() < 1e-10);
        let tail: f64 = joint[2..].iter().sum();
        assert!((got[2] - tail).abs() < 1e-10, "{} vs {tail}", got[2]);
    }

    #[test]
    fn infinite_level_conditional_sums_over_existing_subtrees() {
        let model = models().pop().unwrap();
        let corpus = corpus(vec![vec![0, 1, 1], vec![1, 2]], 3);
        // document 1 sits at the root only; deeper levels may reuse 1 and 2
        let snap = Snapshot {
            iteration: 0,
            log_likelihood: 0.0,
            model: model.clone(),
            next_node_id: 3,
            paths: vec![Path::new(vec![NodeId(0), NodeId(1), NodeId(2)]), Path::new(vec![NodeId(0)])],
            levels: vec![vec![0, 2, 1], vec![0, 0]],
        };
        let mut state = SamplerState::from_snapshot(Arc::clone(&corpus), &snap, ChaCha8Rng::seed_from_u64(0)).unwrap();
        let got = state.level_conditional(1, 1).unwrap();
        assert_eq!(got.len(), 2);
        let words = words_of(&state);
        let existing = labels(&state)[0].clone();
        let mut joint = Vec::new();
        for k in 0..300usize {
            // share the first `s` levels below the root with document 0
            for s in 0..=k.min(2) {
                let mut paths = labels(&state);
                paths[1] = existing[..=s].to_vec();
                while paths[1].len() <= k {
                    let next = 1000 + paths[1].len() as u64;
                    paths[1].push(next);
                }
                let mut z = levels_of(&state);
                z[1][1] = k;
                joint.push((k, brute_joint(&model, 3, &words, &paths, &z)));
            }
        }
        let logs: Vec<f64> = joint.iter().map(|j| j.1).collect();
        let norm = crate::distributions::log_sum_exp(&logs).unwrap();
        let root: f64 = joint.iter().filter(|j| j.0 == 0).map(|j| (j.1 - norm).exp()).sum();
        assert!((got[0] - root).abs() < 1e-10, "{} vs {root}", got[0]);
        assert!((got[1] - (1.0 - root)).abs() < 1e-10);
    }

    #[test]
    fn path_conditional_matches_enumeration() {
        for model in models() {
            let mut state = SamplerState::init_seeded(toy_corpus(), model.clone(), 21).unwrap();
            for _ in 0..4 {
                state.gibbs_sweep().unwrap();
            }
            for d in 0..state.corpus().num_docs() {
                let got = state.path_conditional(d).unwrap();
                let total: f64 = got.iter().map(|(_, p)| p).sum();
                assert!((total - 1.0).abs() < 1e-10);
                let mut joint: Vec<f64> = got
                    .iter()
                    .map(|(nodes, _)| {
                        let mut paths = labels(&state);
                        paths[d] = nodes
                            .iter()
                            .enumerate()
                            .map(|(l, n)| n.map_or(10_000 + l as u64, |id| id.0 as u64))
                            .collect();
                        brute_joint(&model, 5, &words_of(&state), &paths, &levels_of(&state))
                    })
                    .collect();
                let norm = crate::distributions::log_sum_exp(&joint).unwrap();
                joint.iter_mut().for_each(|x| *x = (*x - norm).exp());
                for ((_, a), b) in got.iter().zip(&joint) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn two_document_path_posterior() {
        // doc 1 alone at the root, doc 2 ("1") deciding between joining it or
        // branching; V = 2, two levels, both words at level 1
        let model = ModelConfig {
            depth: DepthMode::Truncated(2),
            levels: LevelModel::Gem(GemParams::new(0.5, 1.0).unwrap()),
            gamma: 1.0,
            eta: TopicPrior::scalar(1.0).unwrap(),
        };
        let snap = Snapshot {
            iteration: 0,
            log_likelihood: 0.0,
            model,
            next_node_id: 3,
            paths: vec![
                Path::new(vec![NodeId(0), NodeId(1)]),
                Path::new(vec![NodeId(0), NodeId(2)]),
            ],
            levels: vec![vec![1], vec![1]],
        };
        let mut state = SamplerState::from_snapshot(corpus(vec![vec![0], vec![1]], 2), &snap, ChaCha8Rng::seed_from_u64(0)).unwrap();
        let got = state.path_conditional(1).unwrap();
        // join: 1/2 * (0 + 1)/(1 + 2) = 1/6; branch: 1/2 * 1/2 = 1/4
        assert_eq!(got.len(), 2);
        let join = got.iter().find(|(n, _)| n[1] == Some(NodeId(1))).unwrap().1;
        let branch = got.iter().find(|(n, _)| n[1].is_none()).unwrap().1;
        assert!((join - 0.4).abs() < 1e-12);
        assert!((branch - 0.6).abs() < 1e-12);
    }

    #[test]
    fn lone_document_has_one_seat() {
        let mut state = SamplerState::init_seeded(corpus(vec![vec![0, 1]], 2), models().remove(0), 1).unwrap();
        let got = state.path_conditional(0).unwrap();
        assert_eq!(got.len(), 1);
        assert!((got[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invariants_hold_across_sweeps() {
        for (i, model) in models().into_iter().enumerate() {
            let mut state = SamplerState::init_seeded(toy_corpus(), model, i as u64).unwrap();
            state.check_invariants().unwrap();
            for t in 0..100 {
                if t == 50 {
                    state.set_scan_order(ScanOrder::Random);
                }
                state.gibbs_sweep().unwrap();
                state.check_invariants().unwrap();
            }
        }
    }

    #[test]
    fn small_gamma_shares_one_path() {
        let docs = (0..100).map(|d| vec![(d % 5) as u32, 1]).collect();
        let mut model = models().remove(0);
        model.gamma = 1e-6;
        let state = SamplerState::init_seeded(corpus(docs, 5), model, 4).unwrap();
        assert_eq!(state.tree().len(), 3);
        let first = &state.assignments()[0].path;
        assert!(state.assignments().iter().all(|a| &a.path == first));
    }

    #[test]
    fn single_document_chain_tree() {
        let state = SamplerState::init_seeded(corpus(vec![vec![0, 1, 2]], 3), models().remove(0), 7).unwrap();
        assert_eq!(state.tree().len(), 3);
        assert!(state.tree().iter().all(|n| n.children().len() <= 1));
    }

    #[test]
    fn single_word_levels_are_geometric_in_infinite_mode() {
        let m = 0.6;
        let model = ModelConfig {
            depth: DepthMode::Infinite,
            levels: LevelModel::Gem(GemParams::new(m, 2.0).unwrap()),
            gamma: 1.0,
            eta: TopicPrior::scalar(0.5).unwrap(),
        };
        let mut state = SamplerState::init_seeded(corpus(vec![vec![3]], 4), model, 11).unwrap();
        let sweeps = 200_000;
        let mut hist = vec![0usize; 8];
        for _ in 0..sweeps {
            state.gibbs_sweep().unwrap();
            let z = state.assignments()[0].levels[0];
            if z < hist.len() {
                hist[z] += 1;
            }
        }
        for (k, &c) in hist.iter().enumerate().take(5) {
            let p = (1.0 - m) * m.powi(k as i32);
            let freq = c as f64 / sweeps as f64;
            // successive draws are independent here, so binomial error applies
            let se = (p * (1.0 - p) / sweeps as f64).sqrt();
            assert!((freq - p).abs() < 5.0 * se, "level {k}: {freq} vs {p}");
        }
    }

    #[test]
    fn seeded_runs_repeat() {
        let cfg = ChainConfig {
            iters: 30,
            burn_in: 10,
            thin: 5,
            seed: 17,
            ..ChainConfig::default()
        };
        for model in models() {
            let (a, sa) = run_chain(toy_corpus(), model.clone(), &cfg).unwrap();
            let (b, sb) = run_chain(toy_corpus(), model, &cfg).unwrap();
            assert_eq!(a.trace, b.trace);
            assert_eq!(a.samples, b.samples);
            assert_eq!(sa.tree(), sb.tree());
        }
    }

    #[test]
    fn streams_give_distinct_chains() {
        let cfg = ChainConfig {
            iters: 20,
            burn_in: 0,
            thin: 1,
            seed: 5,
            ..ChainConfig::default()
        };
        let results = run_chains(toy_corpus(), &models()[0], &cfg, 3).unwrap();
        assert_eq!(results.len(), 3);
        assert_ne!(results[0].trace, results[1].trace);
        let (again, _) = run_chain(toy_corpus(), models()[0].clone(), &ChainConfig { chain: 2, ..cfg.clone() }).unwrap();
        assert_eq!(again.trace, results[2].trace);
    }

    #[test]
    fn chain_records_mode_and_thinned_samples() {
        let cfg = ChainConfig {
            iters: 60,
            burn_in: 20,
            thin: 10,
            seed: 2,
            ..ChainConfig::default()
        };
        let (result, _) = run_chain(toy_corpus(), models()[1].clone(), &cfg).unwrap();
        assert_eq!(result.trace.len(), 60);
        let max = result.trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(result.mode.log_likelihood, max);
        let its: Vec<u64> = result.samples.iter().map(|s| s.iteration).collect();
        assert_eq!(its, vec![30, 40, 50, 60]);
    }

    #[test]
    fn snapshot_roundtrip_rebuilds_state() {
        let mut state = SamplerState::init_seeded(toy_corpus(), models()[2].clone(), 8).unwrap();
        for _ in 0..10 {
            state.gibbs_sweep().unwrap();
        }
        let snap = state.snapshot(state.complete_log_likelihood());
        let back = SamplerState::from_snapshot(toy_corpus(), &snap, ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(back.tree(), state.tree());
        assert_eq!(back.complete_log_likelihood(), state.complete_log_likelihood());
    }

    #[test]
    fn default_chain_settings() {
        let cfg = ChainConfig::default();
        assert_eq!((cfg.iters, cfg.burn_in), (10_000, 2_000));
        assert!(ChainConfig { iters: 5, burn_in: 5, ..cfg }.validate().is_err());
    }

    #[test]
    fn dirichlet_levels_need_truncation() {
        let model = ModelConfig {
            depth: DepthMode::Infinite,
            levels: LevelModel::Dirichlet { alpha: 1.0 },
            gamma: 1.0,
            eta: TopicPrior::scalar(1.0).unwrap(),
        };
        assert!(model.validate().is_err());
    }

    fn fake_result(chain: u64, ll: f64) -> ChainResult {
        let state = SamplerState::init_seeded(toy_corpus(), models()[0].clone(), chain).unwrap();
        ChainResult {
            chain,
            trace: vec![ll],
            samples: vec![],
            mode: state.snapshot(ll),
            hyper_acceptance: vec![],
            elapsed: Duration::ZERO,
        }
    }

    #[test]
    fn posterior_mode_picks_the_best_chain() {
        assert!(posterior_mode(&[]).is_none());
        let one = [fake_result(0, -3.0)];
        assert_eq!(posterior_mode(&one).unwrap().0, 0);
        let two = [fake_result(0, 5.0), fake_result(1, 7.0)];
        assert_eq!(posterior_mode(&two).unwrap().0, 1);
        let tie = [fake_result(0, 7.0), fake_result(1, 7.0)];
        assert_eq!(posterior_mode(&tie).unwrap().0, 0);
    }

    #[test]
    fn autocorrelation_examples() {
        let alt: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let acf = autocorrelation(&alt, 3).unwrap();
        assert!((acf[0] - 1.0).abs() < 1e-12);
        assert!((acf[1] + 1.0).abs() < 1e-2);
        assert!(autocorrelation(&[2.0; 10], 2).is_err());
        assert!(autocorrelation(&[1.0, 2.0], 2).is_err());

        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let acf = autocorrelation(&noise, 40).unwrap();
        let bound = 2.0 / (n as f64).sqrt();
        let inside = acf[1..].iter().filter(|r| r.abs() < bound).count();
        assert!(inside >= 34, "{inside} of 40 lags inside the band");
    }
}
