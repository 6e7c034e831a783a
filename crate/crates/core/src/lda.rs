//! Flat LDA with collapsed Gibbs sampling, used as a baseline.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::distributions::{log_dirichlet_multinomial, log_rising, sample_linear};
use crate::error::{Error, Result};
use crate::eval::{log_harmonic_mean, log_mean_exp, parallel_map, validate_heldout, variance, HeldoutConfig, HeldoutEstimate};
use crate::sampler::{ChainConfig, ScanOrder};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub topics: usize,
    /// Symmetric document-topic concentration.
    pub alpha: f64,
    /// Symmetric topic-word concentration.
    pub eta: f64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self {
            topics: 10,
            alpha: 1.0,
            eta: 0.1,
        }
    }
}

impl LdaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topics == 0 {
            return Err(Error::InvalidParameter("LDA needs at least one topic".into()));
        }
        if !(self.alpha > 0.0 && self.eta > 0.0 && self.alpha.is_finite() && self.eta.is_finite()) {
            return Err(Error::InvalidParameter("LDA concentrations must be > 0".into()));
        }
        Ok(())
    }
}

/// Topic assignments of one sampled state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaSnapshot {
    pub iteration: u64,
    pub log_likelihood: f64,
    pub topics: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct LdaState {
    corpus: Arc<Corpus>,
    cfg: LdaConfig,
    z: Vec<Vec<usize>>,
    doc_topic: Vec<Vec<u32>>,
    topic_word: Vec<Vec<u32>>,
    topic_total: Vec<u64>,
    rng: ChaCha8Rng,
    iteration: u64,
    scan: ScanOrder,
    probs: Vec<f64>,
}

impl LdaState {
    /// Forward initialisation: topics drawn from the document-topic predictive
    /// alone, ignoring the words.
    pub fn init(corpus: Arc<Corpus>, cfg: LdaConfig, mut rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.topics;
        let mut z = Vec::with_capacity(corpus.num_docs());
        let mut probs = vec![0.0; k];
        for doc in corpus.documents() {
            let mut counts = vec![0u32; k];
            let mut zd = Vec::with_capacity(doc.len());
            for n in 0..doc.len() {
                for (p, &c) in probs.iter_mut().zip(&counts) {
                    *p = c as f64 + cfg.alpha;
                }
                let t = sample_linear(&probs, n as f64 + k as f64 * cfg.alpha, &mut rng);
                counts[t] += 1;
                zd.push(t);
            }
            z.push(zd);
        }
        Self::from_topics(corpus, cfg, z, rng)
    }

    pub fn from_topics(corpus: Arc<Corpus>, cfg: LdaConfig, z: Vec<Vec<usize>>, rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.topics;
        let v = corpus.vocab_size();
        if z.len() != corpus.num_docs() {
            return Err(Error::Checkpoint("assignment count does not match the corpus".into()));
        }
        let mut doc_topic = vec![vec![0u32; k]; z.len()];
        let mut topic_word = vec![vec![0u32; v]; k];
        let mut topic_total = vec![0u64; k];
        for (d, (doc, zd)) in corpus.documents().iter().zip(&z).enumerate() {
            if zd.len() != doc.len() || zd.iter().any(|&t| t >= k) {
                return Err(Error::Checkpoint(format!("document {d}: topics do not fit")));
            }
            for (&w, &t) in doc.words().iter().zip(zd) {
                doc_topic[d][t] += 1;
                topic_word[t][w as usize] += 1;
                topic_total[t] += 1;
            }
        }
        Ok(Self {
            corpus,
            cfg,
            z,
            doc_topic,
            topic_word,
            topic_total,
            rng,
            iteration: 0,
            scan: ScanOrder::Fixed,
            probs: vec![0.0; k],
        })
    }

    pub fn config(&self) -> &LdaConfig {
        &self.cfg
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn topics(&self) -> &[Vec<usize>] {
        &self.z
    }

    pub fn topic_word_counts(&self) -> &[Vec<u32>] {
        &self.topic_word
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn set_scan_order(&mut self, scan: ScanOrder) {
        self.scan = scan;
    }

    pub fn snapshot(&self, log_likelihood: f64) -> LdaSnapshot {
        LdaSnapshot {
            iteration: self.iteration,
            log_likelihood,
            topics: self.z.clone(),
        }
    }

    pub fn gibbs_sweep(&mut self) {
        let mut order: Vec<usize> = (0..self.z.len()).collect();
        if self.scan == ScanOrder::Random {
            order.shuffle(&mut self.rng);
        }
        let v = self.corpus.vocab_size() as f64;
        let (alpha, eta) = (self.cfg.alpha, self.cfg.eta);
        for d in order {
            let words = self.corpus.doc(d).words();
            for (n, &w) in words.iter().enumerate() {
                let w = w as usize;
                let old = self.z[d][n];
                self.doc_topic[d][old] -= 1;
                self.topic_word[old][w] -= 1;
                self.topic_total[old] -= 1;
                let mut total = 0.0;
                for (t, p) in self.probs.iter_mut().enumerate() {
                    *p = (self.doc_topic[d][t] as f64 + alpha) * (self.topic_word[t][w] as f64 + eta)
                        / (self.topic_total[t] as f64 + v * eta);
                    total += *p;
                }
                let t = sample_linear(&self.probs, total, &mut self.rng);
                self.z[d][n] = t;
                self.doc_topic[d][t] += 1;
                self.topic_word[t][w] += 1;
                self.topic_total[t] += 1;
            }
        }
        self.iteration += 1;
    }

    /// `log p(z, w | alpha, eta)`.
    pub fn complete_log_likelihood(&self) -> f64 {
        let k = self.cfg.topics;
        let v = self.corpus.vocab_size();
        let docs: f64 = self.doc_topic.iter().map(|c| log_dirichlet_multinomial(c, self.cfg.alpha, k)).sum();
        let words: f64 = self.topic_word.iter().map(|c| log_dirichlet_multinomial(c, self.cfg.eta, v)).sum();
        docs + words
    }

    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let tokens: u64 = self.topic_total.iter().sum();
        if tokens != self.corpus.total_tokens() as u64 {
            return Err(format!("topics hold {tokens} tokens, corpus has {}", self.corpus.total_tokens()));
        }
        for (t, row) in self.topic_word.iter().enumerate() {
            if row.iter().map(|&c| c as u64).sum::<u64>() != self.topic_total[t] {
                return Err(format!("topic {t} total disagrees with its counts"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LdaChainResult {
    pub trace: Vec<f64>,
    pub samples: Vec<LdaSnapshot>,
    pub mode: LdaSnapshot,
}

/// Initialises from the prior and runs `chain.iters` sweeps, recording the
/// trace, thinned samples after burn-in and the best state seen.
pub fn lda_train(corpus: Arc<Corpus>, cfg: LdaConfig, chain: &ChainConfig) -> Result<(LdaChainResult, LdaState)> {
    chain.validate()?;
    let mut state = LdaState::init(corpus, cfg, chain.rng())?;
    state.set_scan_order(chain.scan);
    let mut trace = Vec::with_capacity(chain.iters as usize);
    let mut samples = Vec::new();
    let mut mode: Option<LdaSnapshot> = None;
    while state.iteration() < chain.iters {
        state.gibbs_sweep();
        let ll = state.complete_log_likelihood();
        trace.push(ll);
        let t = state.iteration();
        if mode.as_ref().is_none_or(|m| ll > m.log_likelihood) {
            mode = Some(state.snapshot(ll));
        }
        if chain.record_snapshots && t > chain.burn_in && (t - chain.burn_in) % chain.thin == 0 {
            samples.push(state.snapshot(ll));
        }
    }
    let mode = mode.expect("at least one iteration");
    Ok((LdaChainResult { trace, samples, mode }, state))
}

/// Inner chain over one held-out document's topics with training counts
/// fixed; returns `log p(w_d | z_d, train)` at each collected sample.
fn lda_inner_chain(topic_word: &[Vec<u32>], topic_total: &[u64], cfg: &LdaConfig, doc: &Document, hc: &HeldoutConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let k = cfg.topics;
    let v = topic_word[0].len() as f64;
    let mut own_word: Vec<std::collections::HashMap<u32, u32>> = vec![Default::default(); k];
    let mut own_total = vec![0u32; k];
    let mut doc_topic = vec![0u32; k];
    let mut z = Vec::with_capacity(doc.len());
    let mut probs = vec![0.0; k];
    for n in 0..doc.len() {
        probs.iter_mut().zip(&doc_topic).for_each(|(p, &c)| *p = c as f64 + cfg.alpha);
        let t = sample_linear(&probs, n as f64 + k as f64 * cfg.alpha, rng);
        z.push(t);
        doc_topic[t] += 1;
        *own_word[t].entry(doc.words()[n]).or_default() += 1;
        own_total[t] += 1;
    }
    let mut out = Vec::with_capacity(hc.inner);
    let lag = hc.lag.max(1);
    let total = hc.inner_burn_in + hc.inner * lag;
    for s in 1..=total {
        for (n, &w) in doc.words().iter().enumerate() {
            let old = z[n];
            doc_topic[old] -= 1;
            *own_word[old].get_mut(&w).expect("counted") -= 1;
            own_total[old] -= 1;
            let mut sum = 0.0;
            for (t, p) in probs.iter_mut().enumerate() {
                let nw = topic_word[t][w as usize] as f64 + own_word[t].get(&w).copied().unwrap_or(0) as f64;
                let nt = topic_total[t] as f64 + own_total[t] as f64;
                *p = (doc_topic[t] as f64 + cfg.alpha) * (nw + cfg.eta) / (nt + v * cfg.eta);
                sum += *p;
            }
            let t = sample_linear(&probs, sum, rng);
            z[n] = t;
            doc_topic[t] += 1;
            *own_word[t].entry(w).or_default() += 1;
            own_total[t] += 1;
        }
        if s > hc.inner_burn_in && (s - hc.inner_burn_in) % lag == 0 {
            let mut ll = 0.0;
            for t in 0..k {
                for (&w, &c) in &own_word[t] {
                    ll += log_rising(topic_word[t][w as usize] as f64 + cfg.eta, c);
                }
                ll -= log_rising(topic_total[t] as f64 + v * cfg.eta, own_total[t]);
            }
            out.push(ll);
        }
    }
    out
}

/// Held-out log likelihood under LDA, following the same protocol as the
/// hierarchical model's estimator.
pub fn lda_heldout_log_likelihood(samples: &[LdaSnapshot], train: &Arc<Corpus>, cfg: &LdaConfig, heldout: &Corpus, hc: &HeldoutConfig) -> Result<HeldoutEstimate> {
    validate_heldout(heldout, samples.len(), hc.outer, hc.inner)?;
    let used = &samples[samples.len().saturating_sub(hc.outer)..];
    let results = parallel_map(used, |i, snap| {
        let state = LdaState::from_topics(Arc::clone(train), *cfg, snap.topics.clone(), ChaCha8Rng::seed_from_u64(0))?;
        let mut rng = ChaCha8Rng::seed_from_u64(hc.seed);
        rng.set_stream(i as u64);
        let mut total = 0.0;
        let mut var = 0.0;
        let mut counted = 0usize;
        for doc in heldout.documents().iter().filter(|d| !d.is_empty()) {
            let lls = lda_inner_chain(&state.topic_word, &state.topic_total, cfg, doc, hc, &mut rng);
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

/// Draws an LDA corpus of `docs` documents of `words` tokens by forward
/// simulation, returning it with the topic assignments.
pub fn lda_generate<R: Rng + ?Sized>(cfg: &LdaConfig, docs: usize, words: usize, vocab_size: usize, rng: &mut R) -> (Vec<Vec<u32>>, Vec<Vec<usize>>) {
    use crate::distributions::sample_dirichlet;
    let phi: Vec<Vec<f64>> = (0..cfg.topics).map(|_| sample_dirichlet(&vec![cfg.eta; vocab_size], rng)).collect();
    let mut all_words = Vec::with_capacity(docs);
    let mut all_topics = Vec::with_capacity(docs);
    for _ in 0..docs {
        let theta = sample_dirichlet(&vec![cfg.alpha; cfg.topics], rng);
        let mut pairs: Vec<(u32, usize)> = (0..words)
            .map(|_| {
                let t = sample_linear(&theta, 1.0, rng);
                (sample_linear(&phi[t], 1.0, rng) as u32, t)
            })
            .collect();
        pairs.sort_unstable();
        all_words.push(pairs.iter().map(|p| p.0).collect());
        all_topics.push(pairs.iter().map(|p| p.1).collect());
    }
    (all_words, all_topics)
}
