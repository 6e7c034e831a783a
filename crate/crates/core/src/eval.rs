//! Posterior summaries and held-out predictive likelihood.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::distributions::{log_rising, log_sum_exp};
use crate::error::{Error, Result};
use crate::sampler::{
    forward_levels, forward_path, resample_level, resample_path, seat, trim_path, DocAssignment, ModelConfig,
    SamplerState, Scratch, Snapshot,
};
use crate::tree::{NodeId, Path, Tree};

/// Posterior mean word distribution at a node.
pub fn topic_word_probs(tree: &Tree, model: &ModelConfig, node: NodeId) -> Result<Vec<f64>> {
    let n = tree.get(node)?;
    let eta = model.eta.at(n.level());
    let denom = n.total_count() as f64 + tree.vocab_size() as f64 * eta;
    Ok(n.word_counts().iter().map(|&c| (c as f64 + eta) / denom).collect())
}

/// The `k` most probable terms at a node, ties broken by term id.
pub fn top_words(tree: &Tree, model: &ModelConfig, node: NodeId, k: usize) -> Result<Vec<(u32, f64)>> {
    if k == 0 || k > tree.vocab_size() {
        return Err(Error::InvalidParameter(format!(
            "k must be in 1..={}, got {k}",
            tree.vocab_size()
        )));
    }
    let probs = topic_word_probs(tree, model, node)?;
    let mut ranked: Vec<(u32, f64)> = probs.into_iter().enumerate().map(|(w, p)| (w as u32, p)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionWordCheck {
    /// Mean corpus frequency of the root's top terms.
    pub root_mean_frequency: f64,
    /// Mean over leaf topics of their top terms' mean corpus frequency.
    pub leaf_mean_frequency: f64,
    pub leaves: usize,
}

impl FunctionWordCheck {
    pub fn passed(&self) -> bool {
        self.leaves > 0 && self.root_mean_frequency > self.leaf_mean_frequency
    }
}

/// Compares how common the root's top `k` terms are in the corpus against
/// the top terms of the leaf topics.
pub fn function_word_check(state: &SamplerState, k: usize) -> Result<FunctionWordCheck> {
    let freq = state.corpus().term_frequencies();
    let tree = state.tree();
    let k = k.min(tree.vocab_size());
    let mean_freq = |id: NodeId| -> Result<f64> {
        let top = top_words(tree, state.model(), id, k)?;
        Ok(top.iter().map(|&(w, _)| freq[w as usize] as f64).sum::<f64>() / top.len() as f64)
    };
    let root_mean_frequency = mean_freq(tree.root())?;
    let leaves: Vec<NodeId> = tree
        .iter()
        .filter(|n| n.children().is_empty() && n.id() != tree.root())
        .map(|n| n.id())
        .collect();
    let mut leaf_total = 0.0;
    for &id in &leaves {
        leaf_total += mean_freq(id)?;
    }
    Ok(FunctionWordCheck {
        root_mean_frequency,
        leaf_mean_frequency: if leaves.is_empty() { f64::NAN } else { leaf_total / leaves.len() as f64 },
        leaves: leaves.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldoutConfig {
    /// Use at most this many outer samples, the most recent ones.
    pub outer: usize,
    /// Inner samples collected per held-out document.
    pub inner: usize,
    pub inner_burn_in: usize,
    /// Inner sweeps between collected samples.
    pub lag: usize,
    pub seed: u64,
}

impl Default for HeldoutConfig {
    fn default() -> Self {
        Self {
            outer: 100,
            inner: 800,
            inner_burn_in: 100,
            lag: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldoutEstimate {
    /// Log of the mean over outer samples of the held-out probability.
    pub log_likelihood: f64,
    /// Harmonic-mean estimate for each outer sample.
    pub per_outer: Vec<f64>,
    /// Mean variance of the inner per-sample log likelihoods.
    pub inner_variance: f64,
}

/// Harmonic mean of likelihoods given in log space.
pub fn log_harmonic_mean(log_likelihoods: &[f64]) -> Result<f64> {
    let neg: Vec<f64> = log_likelihoods.iter().map(|x| -x).collect();
    Ok((log_likelihoods.len() as f64).ln() - log_sum_exp(&neg)?)
}

pub(crate) fn log_mean_exp(values: &[f64]) -> Result<f64> {
    Ok(log_sum_exp(values)? - (values.len() as f64).ln())
}

pub(crate) fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub(crate) fn validate_heldout(heldout: &Corpus, outer: usize, cfg_outer: usize, inner: usize) -> Result<()> {
    if heldout.num_docs() == 0 || outer == 0 || cfg_outer == 0 || inner == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Runs `f` over `items` on scoped threads, keeping input order.
pub(crate) fn parallel_map<T: Sync, U: Send>(items: &[T], f: impl Fn(usize, &T) -> Result<U> + Sync) -> Result<Vec<U>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len()).max(1);
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    let parts: Vec<Result<Vec<U>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk.max(1))
            .enumerate()
            .map(|(c, part)| s.spawn(move || part.iter().enumerate().map(|(i, x)| f(c * chunk + i, x)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// `log p(w_d | c_d, z_d, rest)` for a document seated in the tree.
fn seated_doc_log_likelihood(tree: &Tree, model: &ModelConfig, doc: &Document, asg: &DocAssignment) -> f64 {
    let v = tree.vocab_size() as f64;
    let mut per_level: Vec<Vec<(u32, u32)>> = vec![Vec::new(); asg.path.depth()];
    for (&w, &l) in doc.words().iter().zip(&asg.levels) {
        let bucket = &mut per_level[l];
        match bucket.last_mut() {
            Some((t, c)) if *t == w => *c += 1,
            _ => bucket.push((w, 1)),
        }
    }
    let mut ll = 0.0;
    for (l, terms) in per_level.iter().enumerate().filter(|(_, t)| !t.is_empty()) {
        let node = tree.node_unchecked(asg.path.at(l));
        let eta = model.eta.at(l);
        let own: u32 = terms.iter().map(|t| t.1).sum();
        for &(w, c) in terms {
            ll += log_rising((node.count(w) - c) as f64 + eta, c);
        }
        ll -= log_rising((node.total_count() - own as u64) as f64 + v * eta, own);
    }
    ll
}

/// Inner chain for one held-out document against fixed training counts.
/// Returns `log p(w_d | c, z, train)` at each collected sample.
fn inner_chain(tree: &mut Tree, model: &ModelConfig, doc: &Document, cfg: &HeldoutConfig, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut scratch = Scratch::default();
    let mut probs = Vec::new();
    let levels = forward_levels(model, doc.len(), rng);
    let mut asg = DocAssignment::new(Path::default(), levels);
    let depth = asg.required_depth(model.depth);
    let cand = forward_path(tree, model.gamma, depth, rng)?;
    seat(tree, doc, &mut asg, cand, depth)?;
    let mut out = Vec::with_capacity(cfg.inner);
    let total = cfg.inner_burn_in + cfg.inner * cfg.lag.max(1);
    for t in 1..=total {
        resample_path(tree, model, doc, &mut asg, &mut scratch, rng)?;
        for n in 0..doc.len() {
            resample_level(tree, model, doc, &mut asg, n, &mut probs, rng)?;
        }
        trim_path(tree, model, &mut asg)?;
        if t > cfg.inner_burn_in && (t - cfg.inner_burn_in) % cfg.lag.max(1) == 0 {
            out.push(seated_doc_log_likelihood(tree, model, doc, &asg));
        }
    }
    tree.remove_document(&asg.path, doc.words(), &asg.levels)?;
    Ok(out)
}

/// Held-out log likelihood of `heldout` given posterior samples fitted to
/// `train`. Each held-out document gets its own inner chain per outer sample,
/// with the training state held fixed; its probability is estimated by the
/// harmonic mean, and documents are treated as independent given the sample.
pub fn heldout_log_likelihood(samples: &[Snapshot], train: &Arc<Corpus>, heldout: &Corpus, cfg: &HeldoutConfig) -> Result<HeldoutEstimate> {
    validate_heldout(heldout, samples.len(), cfg.outer, cfg.inner)?;
    let used = &samples[samples.len().saturating_sub(cfg.outer)..];
    let results = parallel_map(used, |i, snap| {
        let state = SamplerState::from_snapshot(Arc::clone(train), snap, ChaCha8Rng::seed_from_u64(0))?;
        let model = state.model().clone();
        let mut tree = state.tree().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let mut total = 0.0;
        let mut var = 0.0;
        let mut counted = 0usize;
        for doc in heldout.documents().iter().filter(|d| !d.is_empty()) {
            let lls = inner_chain(&mut tree, &model, doc, cfg, &mut rng)?;
            total += log_harmonic_mean(&lls)?;
            var += variance(&lls);
            counted += 1;
        }
        Ok((total, if counted > 0 { var / counted as f64 } else { 0.0 }))
    })?;
    let per_outer: Vec<f64> = results.iter().map(|r| r.0).collect();
    Ok(HeldoutEstimate {
        log_likelihood: log_mean_exp(&per_outer)?,
        inner_variance: results.iter().map(|r| r.1).sum::<f64>() / results.len() as f64,
        per_outer,
    })
}
