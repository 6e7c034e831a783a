//! Forward sampling from the generative process, and comparison of an
//! inferred tree against the one that generated the data.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vocabulary};
use crate::distributions::{sample_dirichlet, sample_linear, GemParams, TopicPrior};
use crate::error::{Error, Result};
use crate::sampler::{forward_path, DepthMode, LevelModel, ModelConfig, Snapshot};
use crate::tree::{NodeId, Path, Tree};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub docs: usize,
    pub words_per_doc: usize,
    pub vocab_size: usize,
    pub model: ModelConfig,
    pub seed: u64,
}

impl Default for SimulationConfig {
    /// 100 documents of 250 words over 100 terms, three levels, eta = 0.005,
    /// gamma = 1 and a flat Dirichlet over levels.
    fn default() -> Self {
        Self {
            docs: 100,
            words_per_doc: 250,
            vocab_size: 100,
            model: ModelConfig {
                depth: DepthMode::Truncated(3),
                levels: LevelModel::Dirichlet { alpha: 1.0 },
                gamma: 1.0,
                eta: TopicPrior::scalar(0.005).expect("valid"),
            },
            seed: 0,
        }
    }
}

/// The latent structure behind a simulated corpus. Node ids are dense and
/// the root is 0. Levels are listed in the order of each document's (sorted)
/// words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub parents: Vec<Option<u32>>,
    pub node_levels: Vec<usize>,
    pub topics: Vec<Vec<f64>>,
    pub paths: Vec<Vec<u32>>,
    pub levels: Vec<Vec<usize>>,
}

impl GroundTruth {
    pub fn to_snapshot(&self, model: &ModelConfig) -> Snapshot {
        Snapshot {
            iteration: 0,
            log_likelihood: f64::NAN,
            model: model.clone(),
            next_node_id: self.parents.len() as u32,
            paths: self
                .paths
                .iter()
                .map(|p| Path::new(p.iter().map(|&i| NodeId(i)).collect()))
                .collect(),
            levels: self.levels.clone(),
        }
    }
}

/// Per-document level proportions, drawn once and consulted per word.
enum LevelDraw {
    Fixed(Vec<f64>),
    Sticks(Vec<f64>),
}

impl LevelDraw {
    fn new<R: Rng + ?Sized>(model: &ModelConfig, rng: &mut R) -> Self {
        match (model.depth, model.levels) {
            (DepthMode::Truncated(l), LevelModel::Dirichlet { alpha }) => LevelDraw::Fixed(sample_dirichlet(&vec![alpha; l], rng)),
            (DepthMode::Truncated(l), LevelModel::Gem(g)) => {
                let mut theta = Vec::with_capacity(l);
                let mut left = 1.0;
                for _ in 0..l - 1 {
                    let v = g.sample_stick(rng);
                    theta.push(left * v);
                    left *= 1.0 - v;
                }
                theta.push(left);
                LevelDraw::Fixed(theta)
            }
            (DepthMode::Infinite, _) => LevelDraw::Sticks(Vec::new()),
        }
    }

    fn draw<R: Rng + ?Sized>(&mut self, gem: Option<GemParams>, rng: &mut R) -> usize {
        match self {
            LevelDraw::Fixed(theta) => sample_linear(theta, 1.0, rng),
            LevelDraw::Sticks(sticks) => {
                let gem = gem.expect("infinite depth uses GEM");
                let mut k = 0;
                loop {
                    if sticks.len() == k {
                        sticks.push(gem.sample_stick(rng));
                    }
                    if rng.random::<f64>() < sticks[k] {
                        return k;
                    }
                    k += 1;
                }
            }
        }
    }
}

/// Draws a corpus and its latent tree. Topics are drawn lazily as nodes are
/// created, so the output depends only on the seed.
pub fn generate_corpus(cfg: &SimulationConfig) -> Result<(Corpus, GroundTruth)> {
    cfg.model.validate()?;
    if cfg.vocab_size == 0 {
        return Err(Error::InvalidParameter("vocabulary must not be empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    generate_with(cfg, &mut rng)
}

pub(crate) fn generate_with<R: Rng + ?Sized>(cfg: &SimulationConfig, rng: &mut R) -> Result<(Corpus, GroundTruth)> {
    let model = &cfg.model;
    let v = cfg.vocab_size;
    let mut tree = Tree::new(v);
    let mut topics: Vec<Option<Vec<f64>>> = Vec::new();
    let mut docs = Vec::with_capacity(cfg.docs);
    let mut paths = Vec::with_capacity(cfg.docs);
    let mut all_levels = Vec::with_capacity(cfg.docs);
    for _ in 0..cfg.docs {
        let mut draw = LevelDraw::new(model, rng);
        let levels: Vec<usize> = (0..cfg.words_per_doc).map(|_| draw.draw(model.gem(), rng)).collect();
        let depth = match model.depth {
            DepthMode::Truncated(l) => l,
            DepthMode::Infinite => levels.iter().max().map_or(1, |m| m + 1),
        };
        let candidate = forward_path(&tree, model.gamma, depth, rng)?;
        let path = tree.add_document(candidate, depth)?;
        let mut tokens = Vec::with_capacity(levels.len());
        for &l in &levels {
            let id = path.at(l).0 as usize;
            if topics.len() <= id {
                topics.resize(id + 1, None);
            }
            let topic = topics[id].get_or_insert_with(|| sample_dirichlet(&vec![model.eta.at(l); v], rng));
            tokens.push((sample_linear(topic, 1.0, rng) as u32, l));
        }
        tokens.sort_unstable();
        docs.push(tokens.iter().map(|t| t.0).collect::<Vec<_>>());
        all_levels.push(tokens.iter().map(|t| t.1).collect());
        paths.push(path.nodes().iter().map(|n| n.0).collect());
    }
    let n = tree.next_id() as usize;
    topics.resize(n, None);
    let mut parents = vec![None; n];
    let mut node_levels = vec![0; n];
    for node in tree.iter() {
        parents[node.id().0 as usize] = node.parent().map(|p| p.0);
        node_levels[node.id().0 as usize] = node.level();
    }
    let topics = topics
        .into_iter()
        .enumerate()
        .map(|(i, t)| t.unwrap_or_else(|| sample_dirichlet(&vec![model.eta.at(node_levels[i]); v], rng)))
        .collect();
    let corpus = Corpus::new(docs, Vocabulary::numbered(v))?;
    let truth = GroundTruth {
        parents,
        node_levels,
        topics,
        paths,
        levels: all_levels,
    };
    Ok((corpus, truth))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeComparison {
    /// Same nodes at the same levels holding the same documents.
    pub topology_match: bool,
    /// Documents whose path differs under the best node correspondence.
    pub misallocated_paths: usize,
}

/// Prefix-trie view of a set of paths: one entry per node, keyed by the node
/// sequence leading to it.
struct PathTrie {
    docs: BTreeMap<Vec<u32>, BTreeSet<usize>>,
}

impl PathTrie {
    fn new(paths: &[Vec<u32>]) -> Self {
        let mut docs: BTreeMap<Vec<u32>, BTreeSet<usize>> = BTreeMap::new();
        for (d, p) in paths.iter().enumerate() {
            for l in 1..=p.len() {
                docs.entry(p[..l].to_vec()).or_default().insert(d);
            }
        }
        Self { docs }
    }

    fn families(&self) -> BTreeSet<(usize, Vec<usize>)> {
        self.docs
            .iter()
            .map(|(k, v)| (k.len(), v.iter().copied().collect()))
            .collect()
    }

    fn children(&self, prefix: &[u32]) -> Vec<Vec<u32>> {
        self.docs
            .keys()
            .filter(|k| k.len() == prefix.len() + 1 && k.starts_with(prefix))
            .cloned()
            .collect()
    }
}

/// Best one-to-one matching of `a` to `b` by total overlap: exact by DP over
/// subsets of the smaller side when it has at most 12 nodes, greedy beyond.
fn match_children(a: &[BTreeSet<usize>], b: &[BTreeSet<usize>]) -> Vec<Option<usize>> {
    let overlap = |i: usize, j: usize| a[i].intersection(&b[j]).count();
    if a.len().min(b.len()) <= 12 {
        let swap = a.len() < b.len();
        // rows: the larger side, walked in order; mask: used nodes of the smaller side
        let (rows, cols) = if swap { (b.len(), a.len()) } else { (a.len(), b.len()) };
        let score = |r: usize, c: usize| if swap { overlap(c, r) } else { overlap(r, c) };
        let states = 1usize << cols;
        let mut best = vec![vec![None::<usize>; states]; rows + 1];
        let mut choice = vec![vec![None::<usize>; states]; rows];
        best[0][0] = Some(0);
        for r in 0..rows {
            for mask in 0..states {
                let Some(acc) = best[r][mask] else { continue };
                if best[r + 1][mask].is_none_or(|x| acc > x) {
                    best[r + 1][mask] = Some(acc);
                }
                for c in (0..cols).filter(|c| mask & (1 << c) == 0) {
                    let next = mask | (1 << c);
                    let val = acc + score(r, c);
                    if best[r + 1][next].is_none_or(|x| val > x) {
                        best[r + 1][next] = Some(val);
                    }
                }
            }
        }
        let mut mask = (0..states).max_by_key(|&m| (best[rows][m], std::cmp::Reverse(m))).unwrap_or(0);
        for r in (0..rows).rev() {
            // recover which column row r took, if any
            let acc = best[r + 1][mask].expect("reachable");
            if best[r][mask] == Some(acc) {
                continue;
            }
            let c = (0..cols)
                .find(|&c| mask & (1 << c) != 0 && best[r][mask ^ (1 << c)].is_some_and(|x| x + score(r, c) == acc))
                .expect("a predecessor exists");
            choice[r][mask] = Some(c);
            mask ^= 1 << c;
        }
        let mut out = vec![None; a.len()];
        for (r, row) in choice.iter().enumerate() {
            if let Some(c) = row.iter().flatten().next() {
                if swap {
                    out[*c] = Some(r);
                } else {
                    out[r] = Some(*c);
                }
            }
        }
        return out;
    }
    let mut pairs: Vec<(usize, usize, usize)> = (0..a.len())
        .flat_map(|i| (0..b.len()).map(move |j| (i, j)))
        .map(|(i, j)| (overlap(i, j), i, j))
        .collect();
    pairs.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut out = vec![None; a.len()];
    let mut taken = vec![false; b.len()];
    for (_, i, j) in pairs {
        if out[i].is_none() && !taken[j] {
            out[i] = Some(j);
            taken[j] = true;
        }
    }
    out
}

/// Compares two path assignments of the same corpus, ignoring node ids and
/// sibling order.
pub fn compare_trees(inferred: &[Vec<u32>], truth: &[Vec<u32>]) -> Result<TreeComparison> {
    if inferred.len() != truth.len() {
        return Err(Error::InvalidParameter(format!(
            "path counts differ: {} vs {}",
            inferred.len(),
            truth.len()
        )));
    }
    let a = PathTrie::new(inferred);
    let b = PathTrie::new(truth);
    let topology_match = a.families() == b.families();

    // inferred prefix -> corresponding true prefix, walked top-down
    let mut map: BTreeMap<Vec<u32>, Vec<u32>> = BTreeMap::new();
    let mut frontier = Vec::new();
    let roots_a: BTreeSet<u32> = inferred.iter().filter_map(|p| p.first().copied()).collect();
    let roots_b: BTreeSet<u32> = truth.iter().filter_map(|p| p.first().copied()).collect();
    if let (Some(&ra), Some(&rb)) = (roots_a.iter().next(), roots_b.iter().next()) {
        map.insert(vec![ra], vec![rb]);
        frontier.push((vec![ra], vec![rb]));
    }
    while let Some((pa, pb)) = frontier.pop() {
        let ca = a.children(&pa);
        let cb = b.children(&pb);
        let sa: Vec<_> = ca.iter().map(|k| a.docs[k].clone()).collect();
        let sb: Vec<_> = cb.iter().map(|k| b.docs[k].clone()).collect();
        for (i, j) in match_children(&sa, &sb).into_iter().enumerate() {
            if let Some(j) = j {
                map.insert(ca[i].clone(), cb[j].clone());
                frontier.push((ca[i].clone(), cb[j].clone()));
            }
        }
    }
    let misallocated_paths = inferred
        .iter()
        .zip(truth)
        .filter(|(p, t)| map.get(p.as_slice()).map(Vec::as_slice) != Some(t.as_slice()))
        .count();
    Ok(TreeComparison {
        topology_match,
        misallocated_paths,
    })
}
