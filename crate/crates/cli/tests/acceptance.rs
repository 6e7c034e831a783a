//! Acceptance suite. Prints one PASS/FAIL line per criterion; pass criterion
//! numbers as arguments to run a subset.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use hlda_core::corpus::{Corpus, Vocabulary};
use hlda_core::distributions::{log_dirichlet_multinomial, GemParams, TopicPrior};
use hlda_core::eval::{heldout_log_likelihood, HeldoutConfig};
use hlda_core::hyper::{mh_update_hyperparameters, HyperPriors, HyperSampling, MhConfig};
use hlda_core::lda::{lda_generate, lda_heldout_log_likelihood, lda_train, LdaConfig, LdaState};
use hlda_core::sampler::{
    posterior_mode, run_chains, ChainConfig, DepthMode, LevelModel, ModelConfig, SamplerState, Snapshot,
};
use hlda_core::simulate::{compare_trees, generate_corpus, SimulationConfig};
use hlda_core::tree::{NodeId, Path as TreePath, Tree};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

/// Whether a FAIL on this criterion sets a failing exit status.
enum Gate {
    Enforced,
    Reported,
}

type Check = fn() -> Outcome;

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, Gate, Check); 9] = [
        (2, "exact posterior on a tiny corpus", Gate::Enforced, exact_posterior),
        (3, "path candidates are complete", Gate::Enforced, candidate_completeness),
        (4, "Geweke joint consistency", Gate::Enforced, geweke),
        (5, "Dirichlet-multinomial against the Polya urn", Gate::Enforced, dirichlet_multinomial),
        (6, "held-out estimator against enumeration", Gate::Enforced, heldout),
        (7, "hyperparameter MH recovers the prior", Gate::Enforced, hyper_prior),
        (8, "function words sit at the root", Gate::Enforced, function_words),
        (9, "same seed gives identical files", Gate::Enforced, determinism),
        (1, "synthetic tree recovery", Gate::Reported, synthetic_recovery),
    ];
    let mut failed = 0;
    for (n, name, gate, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let status = if outcome.passed { "PASS" } else { "FAIL" };
        println!("criterion {n} {name}: {status} ({}; {:.1}s)", outcome.detail, start.elapsed().as_secs_f64());
        if !outcome.passed && matches!(gate, Gate::Enforced) {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} enforced criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// independent oracles

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Marginal of a count vector under a symmetric Dirichlet, from Gamma functions.
fn dm(counts: &[u32], eta: f64) -> f64 {
    let n: u32 = counts.iter().sum();
    let v = counts.len() as f64;
    ln_gamma(v * eta) - ln_gamma(v * eta + n as f64)
        + counts.iter().map(|&c| ln_gamma(eta + c as f64) - ln_gamma(eta)).sum::<f64>()
}

/// Probability of a partition with the given block sizes under a CRP.
fn crp(sizes: &[u32], gamma: f64) -> f64 {
    let n: u32 = sizes.iter().sum();
    sizes.len() as f64 * gamma.ln() + ln_gamma(gamma) - ln_gamma(gamma + n as f64)
        + sizes.iter().map(|&s| ln_gamma(s as f64)).sum::<f64>()
}

/// Two-level allocation prior of one document, proportions integrated out.
fn two_level_prior(n0: u32, n1: u32, levels: LevelModel) -> f64 {
    match levels {
        // the first stick stops at level 0 with mean 1 - m
        LevelModel::Gem(g) => {
            let (a, b) = ((1.0 - g.m()) * g.pi(), g.m() * g.pi());
            ln_beta(a + n0 as f64, b + n1 as f64) - ln_beta(a, b)
        }
        LevelModel::Dirichlet { alpha } => dm(&[n0, n1], alpha),
    }
}

/// Set partitions of `n` items as restricted growth strings.
fn partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        let mut next = Vec::new();
        for p in &out {
            let blocks = p.iter().max().map_or(0, |m| m + 1);
            for b in 0..=blocks {
                let mut q = p.clone();
                q.push(b);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

fn canonical(labels: impl Iterator<Item = u32>) -> Vec<usize> {
    let mut seen: Vec<u32> = Vec::new();
    labels
        .map(|l| match seen.iter().position(|&s| s == l) {
            Some(i) => i,
            None => {
                seen.push(l);
                seen.len() - 1
            }
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the mean of a correlated series by batch means.
fn batch_se(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    let means: Vec<f64> = xs.chunks(size).take(batches).map(mean).collect();
    (var(&means) / batches as f64).sqrt()
}

fn numbered_corpus(docs: Vec<Vec<u32>>, v: usize) -> Arc<Corpus> {
    Arc::new(Corpus::new(docs, Vocabulary::numbered(v)).unwrap())
}

// ---------------------------------------------------------------------------
// criterion 1

fn synthetic_recovery() -> Outcome {
    let mut recovered = 0;
    let mut notes = Vec::new();
    for dataset in 0..10u64 {
        let sim = SimulationConfig { seed: dataset, ..SimulationConfig::default() };
        let (corpus, truth) = generate_corpus(&sim).unwrap();
        let chain = ChainConfig {
            iters: 10_000,
            burn_in: 2_000,
            thin: 100,
            seed: 1_000 + dataset,
            record_snapshots: false,
            ..ChainConfig::default()
        };
        let runs = run_chains(Arc::new(corpus), &sim.model, &chain, 5).unwrap();
        let (_, mode) = posterior_mode(&runs).unwrap();
        let paths: Vec<Vec<u32>> = mode.paths.iter().map(|p| p.nodes().iter().map(|n| n.0).collect()).collect();
        let cmp = compare_trees(&paths, &truth.paths).unwrap();
        let ok = cmp.topology_match || cmp.misallocated_paths <= 1;
        recovered += ok as usize;
        println!(
            "  dataset {dataset}: topology_match {} misallocated {} mode log likelihood {:.1}",
            cmp.topology_match, cmp.misallocated_paths, mode.log_likelihood
        );
        notes.push(cmp.misallocated_paths.to_string());
    }
    Outcome::new(
        recovered >= 8,
        format!("recovered {recovered}/10, need 8; misallocated paths per dataset [{}]", notes.join(" ")),
    )
}

// ---------------------------------------------------------------------------
// criterion 2

fn exact_posterior() -> Outcome {
    let docs = vec![vec![0, 1], vec![1, 2], vec![2]];
    let models = [
        ("GEM", LevelModel::Gem(GemParams::new(0.4, 3.0).unwrap()), vec![0.5, 1.0]),
        ("Dirichlet", LevelModel::Dirichlet { alpha: 1.0 }, vec![0.8]),
    ];
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for (name, levels, eta) in models {
        let model = ModelConfig {
            depth: DepthMode::Truncated(2),
            levels,
            gamma: 1.3,
            eta: TopicPrior::new(eta.clone()).unwrap(),
        };
        let corpus = numbered_corpus(docs.clone(), 3);
        let words: Vec<&[u32]> = corpus.documents().iter().map(|d| d.words()).collect();
        let n_words: usize = words.iter().map(|w| w.len()).sum();

        // exact posterior over (level-1 partition, word levels)
        let mut exact: HashMap<(Vec<usize>, Vec<usize>), f64> = HashMap::new();
        for part in partitions(docs.len()) {
            let blocks = part.iter().max().unwrap() + 1;
            let sizes: Vec<u32> = (0..blocks).map(|b| part.iter().filter(|&&x| x == b).count() as u32).collect();
            for bits in 0..1usize << n_words {
                let flat: Vec<usize> = (0..n_words).map(|i| (bits >> i) & 1).collect();
                let mut lp = crp(&sizes, model.gamma);
                let mut root = [0u32; 3];
                let mut leaves = vec![[0u32; 3]; blocks];
                let mut k = 0;
                for (d, ws) in words.iter().enumerate() {
                    let mut n = [0u32; 2];
                    for &w in ws.iter() {
                        let l = flat[k];
                        k += 1;
                        n[l] += 1;
                        if l == 0 {
                            root[w as usize] += 1;
                        } else {
                            leaves[part[d]][w as usize] += 1;
                        }
                    }
                    lp += two_level_prior(n[0], n[1], levels);
                }
                lp += dm(&root, model.eta.at(0));
                lp += leaves.iter().filter(|c| c.iter().sum::<u32>() > 0).map(|c| dm(c, model.eta.at(1))).sum::<f64>();
                exact.insert((part.clone(), flat), lp);
            }
        }
        let log_z = {
            let m = exact.values().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + exact.values().map(|x| (x - m).exp()).sum::<f64>().ln()
        };

        let mut state = SamplerState::init_seeded(Arc::clone(&corpus), model, 17).unwrap();
        for _ in 0..1_000 {
            state.gibbs_sweep().unwrap();
        }
        let sweeps = 100_000;
        let mut visits: HashMap<(Vec<usize>, Vec<usize>), u32> = HashMap::new();
        for _ in 0..sweeps {
            state.gibbs_sweep().unwrap();
            let part = canonical(state.assignments().iter().map(|a| a.path.at(1).0));
            let flat: Vec<usize> = state.assignments().iter().flat_map(|a| a.levels.iter().copied()).collect();
            *visits.entry((part, flat)).or_default() += 1;
        }
        let unknown = visits.keys().filter(|k| !exact.contains_key(*k)).count();
        let tv = 0.5
            * exact
                .iter()
                .map(|(k, lp)| ((lp - log_z).exp() - visits.get(k).copied().unwrap_or(0) as f64 / sweeps as f64).abs())
                .sum::<f64>();
        // expected TV of an independent sample of the same size
        let floor: f64 = exact
            .values()
            .map(|lp| {
                let p = (lp - log_z).exp();
                (p * (1.0 - p) / (2.0 * std::f64::consts::PI * sweeps as f64)).sqrt()
            })
            .sum();
        worst = worst.max(if unknown > 0 { f64::INFINITY } else { tv });
        details.push(format!("{name} TV {tv:.4} over {} states (iid floor {floor:.4})", exact.len()));
    }
    Outcome::new(worst <= 0.02, format!("{}; bound 0.02", details.join(", ")))
}

// ---------------------------------------------------------------------------
// criterion 3

fn candidate_completeness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let depth = rng.random_range(1..=5);
        let docs = rng.random_range(0..=50);
        let gamma = rng.random_range(0.05..5.0);
        let mut tree = Tree::new(4);
        let mut seated: Vec<TreePath> = Vec::new();
        for _ in 0..docs {
            let candidates = tree.enumerate_path_candidates(depth);
            let pick = candidates[rng.random_range(0..candidates.len())];
            seated.push(tree.add_document(pick, depth).unwrap());
            if rng.random_bool(0.2) {
                let gone = seated.swap_remove(rng.random_range(0..seated.len()));
                tree.remove_path(&gone).unwrap();
            }
        }
        let total: f64 = tree
            .enumerate_path_candidates(depth)
            .into_iter()
            .map(|c| tree.path_prior_log_prob(c, gamma).unwrap().exp())
            .sum();
        worst = worst.max((total - 1.0).abs());
    }
    Outcome::new(worst <= 1e-10, format!("max |sum - 1| = {worst:.2e} over 100 trees"))
}

// ---------------------------------------------------------------------------
// criterion 4

const GEWEKE_SAMPLES: usize = 10_000;

/// z-scores of each statistic between forward and successive-conditional runs.
fn geweke_z(forward: &[[f64; 3]], chain: &[[f64; 3]]) -> [f64; 3] {
    std::array::from_fn(|i| {
        let f: Vec<f64> = forward.iter().map(|s| s[i]).collect();
        let c: Vec<f64> = chain.iter().map(|s| s[i]).collect();
        let se = (var(&f) / f.len() as f64 + batch_se(&c, 50).powi(2)).sqrt();
        (mean(&f) - mean(&c)) / se
    })
}

fn tree_stats(paths: &[Vec<u32>], levels: &[Vec<usize>]) -> [f64; 3] {
    let tokens: usize = levels.iter().map(Vec::len).sum();
    let mean_level = levels.iter().flatten().sum::<usize>() as f64 / tokens as f64;
    let mut children: HashMap<u32, f64> = HashMap::new();
    for p in paths {
        *children.entry(p[1]).or_default() += 1.0;
    }
    let d = paths.len() as f64;
    let entropy = -children.values().map(|&n| n / d * (n / d).ln()).sum::<f64>();
    [mean_level, children.len() as f64, entropy]
}

/// Redraws every word from its node's Polya urn given the allocations.
fn redraw_hlda_words(paths: &[Vec<u32>], levels: &[Vec<usize>], eta: &TopicPrior, v: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<u32>>, Vec<Vec<usize>>) {
    let mut urns: HashMap<u32, Vec<u32>> = HashMap::new();
    let mut words = Vec::new();
    let mut sorted_levels = Vec::new();
    for (path, lv) in paths.iter().zip(levels) {
        let mut pairs: Vec<(u32, usize)> = lv
            .iter()
            .map(|&l| {
                let counts = urns.entry(path[l]).or_insert_with(|| vec![0; v]);
                let e = eta.at(l);
                let total: f64 = counts.iter().map(|&c| c as f64 + e).sum();
                let mut u = rng.random::<f64>() * total;
                let mut w = v - 1;
                for (i, &c) in counts.iter().enumerate() {
                    u -= c as f64 + e;
                    if u < 0.0 {
                        w = i;
                        break;
                    }
                }
                counts[w] += 1;
                (w as u32, l)
            })
            .collect();
        // Tied words are put in random order: sorting on the allocation too
        // would make the next sweep's scan order depend on the state.
        for i in (1..pairs.len()).rev() {
            pairs.swap(i, rng.random_range(0..=i));
        }
        pairs.sort_by_key(|p| p.0);
        words.push(pairs.iter().map(|p| p.0).collect());
        sorted_levels.push(pairs.iter().map(|p| p.1).collect());
    }
    (words, sorted_levels)
}

fn geweke_hlda(model: &ModelConfig) -> [f64; 3] {
    let (docs, n, v) = (3, 4, 3);
    let sim = |seed| SimulationConfig { docs, words_per_doc: n, vocab_size: v, model: model.clone(), seed };
    let forward: Vec<[f64; 3]> = (0..GEWEKE_SAMPLES as u64)
        .map(|s| {
            let (_, truth) = generate_corpus(&sim(s)).unwrap();
            tree_stats(&truth.paths, &truth.levels)
        })
        .collect();

    let (corpus, truth) = generate_corpus(&sim(u64::MAX)).unwrap();
    let mut state = SamplerState::from_snapshot(Arc::new(corpus), &truth.to_snapshot(model), ChaCha8Rng::seed_from_u64(4)).unwrap();
    let mut data_rng = ChaCha8Rng::seed_from_u64(40);
    let mut chain = Vec::with_capacity(GEWEKE_SAMPLES);
    for _ in 0..GEWEKE_SAMPLES {
        state.gibbs_sweep().unwrap();
        let paths: Vec<Vec<u32>> = state.assignments().iter().map(|a| a.path.nodes().iter().map(|n| n.0).collect()).collect();
        let levels: Vec<Vec<usize>> = state.assignments().iter().map(|a| a.levels.clone()).collect();
        chain.push(tree_stats(&paths, &levels));
        let (words, levels) = redraw_hlda_words(&paths, &levels, &model.eta, v, &mut data_rng);
        let snapshot = Snapshot {
            iteration: state.iteration(),
            log_likelihood: 0.0,
            model: model.clone(),
            next_node_id: state.tree().next_id(),
            paths: state.assignments().iter().map(|a| a.path.clone()).collect(),
            levels,
        };
        state = SamplerState::from_snapshot(numbered_corpus(words, v), &snapshot, state.rng().clone()).unwrap();
    }
    geweke_z(&forward, &chain)
}

fn lda_stats(topics: &[Vec<usize>], words: &[Vec<u32>]) -> [f64; 3] {
    let tokens: usize = topics.iter().map(Vec::len).sum();
    let zero = topics.iter().flatten().filter(|&&t| t == 0).count() as f64 / tokens as f64;
    let pure = topics.iter().filter(|z| z.windows(2).all(|w| w[0] == w[1])).count() as f64;
    let mut pairs: Vec<(usize, u32)> = topics.iter().flatten().copied().zip(words.iter().flatten().copied()).collect();
    pairs.sort_unstable();
    pairs.dedup();
    [zero, pure, pairs.len() as f64]
}

fn geweke_lda() -> [f64; 3] {
    let cfg = LdaConfig { topics: 2, alpha: 0.8, eta: 0.6 };
    let (docs, n, v) = (3, 3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let forward: Vec<[f64; 3]> = (0..GEWEKE_SAMPLES)
        .map(|_| {
            let (w, z) = lda_generate(&cfg, docs, n, v, &mut rng);
            lda_stats(&z, &w)
        })
        .collect();

    let (w, z) = lda_generate(&cfg, docs, n, v, &mut rng);
    let mut state = LdaState::from_topics(numbered_corpus(w, v), cfg, z, ChaCha8Rng::seed_from_u64(42)).unwrap();
    let mut chain = Vec::with_capacity(GEWEKE_SAMPLES);
    for _ in 0..GEWEKE_SAMPLES {
        state.gibbs_sweep();
        let z = state.topics().to_vec();
        let words: Vec<Vec<u32>> = state.corpus().documents().iter().map(|d| d.words().to_vec()).collect();
        chain.push(lda_stats(&z, &words));
        // every document shares the path [0, 1], so topic k is urn k
        let shared = vec![vec![0, 1]; docs];
        let (words, topics) = redraw_hlda_words(&shared, &z, &TopicPrior::scalar(cfg.eta).unwrap(), v, &mut rng);
        state = LdaState::from_topics(numbered_corpus(words, v), cfg, topics, state.rng().clone()).unwrap();
    }
    geweke_z(&forward, &chain)
}

fn geweke() -> Outcome {
    let model = ModelConfig {
        depth: DepthMode::Truncated(3),
        levels: LevelModel::Gem(GemParams::new(0.5, 2.0).unwrap()),
        gamma: 1.0,
        eta: TopicPrior::scalar(0.5).unwrap(),
    };
    let h = geweke_hlda(&model);
    let l = geweke_lda();
    let worst = h.iter().chain(&l).map(|z| z.abs()).fold(0.0, f64::max);
    let fmt = |z: &[f64; 3]| z.iter().map(|x| format!("{x:+.2}")).collect::<Vec<_>>().join(" ");
    Outcome::new(
        worst < 3.0,
        format!("hLDA z [{}], LDA z [{}] over {GEWEKE_SAMPLES} samples; bound 3", fmt(&h), fmt(&l)),
    )
}

// ---------------------------------------------------------------------------
// criterion 5

fn dirichlet_multinomial() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1_000 {
        let v = rng.random_range(1..=40);
        let eta = rng.random_range(0.001..5.0);
        let counts: Vec<u32> = (0..v).map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(0..30) }).collect();
        // draws in a shuffled order through the urn
        let mut draws: Vec<usize> = counts.iter().enumerate().flat_map(|(w, &c)| std::iter::repeat_n(w, c as usize)).collect();
        for i in (1..draws.len()).rev() {
            draws.swap(i, rng.random_range(0..=i));
        }
        let mut seen = vec![0u32; v];
        let mut urn = 0.0;
        for (n, &w) in draws.iter().enumerate() {
            urn += ((seen[w] as f64 + eta) / (n as f64 + v as f64 * eta)).ln();
            seen[w] += 1;
        }
        worst = worst.max((log_dirichlet_multinomial(&counts, eta, v) - urn).abs());
    }
    Outcome::new(worst <= 1e-10, format!("max abs difference {worst:.2e} over 1000 vectors"))
}

// ---------------------------------------------------------------------------
// criterion 6

fn heldout() -> Outcome {
    let model = ModelConfig {
        depth: DepthMode::Truncated(2),
        levels: LevelModel::Gem(GemParams::new(0.5, 2.0).unwrap()),
        gamma: 1.0,
        eta: TopicPrior::scalar(0.7).unwrap(),
    };
    let train_docs = vec![vec![0, 0, 1], vec![1, 1, 2], vec![2, 2, 0]];
    let train = numbered_corpus(train_docs.clone(), 3);
    let paths = [vec![0u32, 1], vec![0, 1], vec![0, 2]];
    let levels = vec![vec![0, 1, 1], vec![1, 0, 1], vec![0, 1, 1]];
    let snapshot = Snapshot {
        iteration: 0,
        log_likelihood: 0.0,
        model: model.clone(),
        next_node_id: 3,
        paths: paths.iter().map(|p| TreePath::new(p.iter().map(|&n| NodeId(n)).collect())).collect(),
        levels: levels.clone(),
    };
    // training counts per node: root, then the two leaves
    let mut counts = [[0u32; 3]; 3];
    for (d, ws) in train_docs.iter().enumerate() {
        let mut sorted = ws.clone();
        sorted.sort_unstable();
        for (&w, &l) in sorted.iter().zip(&levels[d]) {
            counts[paths[d][l] as usize][w as usize] += 1;
        }
    }
    let eta = 0.7;
    let exact = |doc: &[u32]| -> f64 {
        // seats: leaf 1 (two docs), leaf 2 (one doc), a new leaf
        let seats: [(f64, Option<usize>); 3] = [(2.0 / 4.0, Some(1)), (1.0 / 4.0, Some(2)), (1.0 / 4.0, None)];
        let mut total = 0.0;
        for (prior, leaf) in seats {
            for bits in 0..1usize << doc.len() {
                let lv: Vec<usize> = (0..doc.len()).map(|i| (bits >> i) & 1).collect();
                let n1 = lv.iter().sum::<usize>() as u32;
                let mut p = prior * two_level_prior(doc.len() as u32 - n1, n1, model.levels).exp();
                let mut extra = [[0u32; 3]; 2];
                for (&w, &l) in doc.iter().zip(&lv) {
                    let base = match (l, leaf) {
                        (0, _) => counts[0],
                        (_, Some(k)) => counts[k],
                        (_, None) => [0; 3],
                    };
                    let added: u32 = extra[l].iter().sum();
                    p *= (base[w as usize] as f64 + extra[l][w as usize] as f64 + eta)
                        / (base.iter().sum::<u32>() as f64 + added as f64 + 3.0 * eta);
                    extra[l][w as usize] += 1;
                }
                total += p;
            }
        }
        total.ln()
    };
    let cfg = HeldoutConfig { outer: 1, inner: 20_000, inner_burn_in: 500, lag: 1, seed: 6 };
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for doc in [vec![0u32, 2], vec![1], vec![2, 2]] {
        let held = Corpus::new(vec![doc.clone()], Vocabulary::numbered(3)).unwrap();
        let est = heldout_log_likelihood(std::slice::from_ref(&snapshot), &train, &held, &cfg).unwrap();
        let want = exact(&doc);
        worst = worst.max((est.log_likelihood - want).abs());
        details.push(format!("{:?}: {:.4} vs {:.4}", doc, est.log_likelihood, want));
    }

    // one-topic LDA reduces to the Polya predictive of the pooled counts
    let lda = LdaConfig { topics: 1, alpha: 1.0, eta: 0.3 };
    let chain = ChainConfig { iters: 20, burn_in: 5, thin: 5, seed: 6, ..ChainConfig::default() };
    let (run, _) = lda_train(Arc::clone(&train), lda, &chain).unwrap();
    let held_words = [0u32, 2, 2];
    let held = Corpus::new(vec![held_words.to_vec()], Vocabulary::numbered(3)).unwrap();
    let hc = HeldoutConfig { outer: 10, inner: 50, inner_burn_in: 5, lag: 1, seed: 6 };
    let got = lda_heldout_log_likelihood(&run.samples, &train, &lda, &held, &hc).unwrap().log_likelihood;
    let mut pooled = [0u32; 3];
    train_docs.iter().flatten().for_each(|&w| pooled[w as usize] += 1);
    let mut unigram = 0.0;
    for (j, &w) in held_words.iter().enumerate() {
        unigram += ((pooled[w as usize] as f64 + lda.eta) / (9.0 + j as f64 + 3.0 * lda.eta)).ln();
        pooled[w as usize] += 1;
    }
    let lda_err = (got - unigram).abs();
    Outcome::new(
        worst <= 0.1 && lda_err <= 1e-8,
        format!("hLDA {}; max error {worst:.4} nats (bound 0.1); LDA K=1 error {lda_err:.1e} (bound 1e-8)", details.join(", ")),
    )
}

// ---------------------------------------------------------------------------
// criterion 7

fn hyper_prior() -> Outcome {
    let model = ModelConfig {
        depth: DepthMode::Infinite,
        levels: LevelModel::Gem(GemParams::new(0.5, 1.0).unwrap()),
        gamma: 1.0,
        eta: TopicPrior::scalar(1.0).unwrap(),
    };
    let priors = HyperPriors { m_a: 2.0, m_b: 3.0, pi_rate: 0.5, gamma_shape: 3.0, gamma_rate: 2.0, eta_rate: 4.0 };
    // Beta mean a/(a+b), Exponential mean 1/rate, Gamma mean shape/rate
    let expected = [2.0 / 5.0, 1.0 / 0.5, 3.0 / 2.0, 1.0 / 4.0];
    let sampling = HyperSampling { priors, mh: MhConfig { step_m: 0.8, step_pi: 1.0, step_gamma: 0.8, step_eta: 1.0, ..MhConfig::default() } };
    let empty = numbered_corpus(vec![], 5);
    let mut state = SamplerState::init_seeded(empty, model, 7).unwrap();
    let steps = 100_000;
    let mut draws = vec![Vec::with_capacity(steps); 4];
    for _ in 0..steps {
        mh_update_hyperparameters(&mut state, &sampling, false).unwrap();
        let g = state.model().gem().unwrap();
        for (series, x) in draws.iter_mut().zip([g.m(), g.pi(), state.model().gamma, state.model().eta.at(0)]) {
            series.push(x);
        }
    }
    let z: Vec<f64> = draws.iter().zip(expected).map(|(s, e)| (mean(s) - e) / batch_se(s, 100)).collect();
    let worst = z.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let names = ["m", "pi", "gamma", "eta"];
    let parts: Vec<String> = names
        .iter()
        .zip(&draws)
        .zip(expected.iter().zip(&z))
        .map(|((n, s), (e, z))| format!("{n} {:.3} vs {e} (z {z:+.2})", mean(s)))
        .collect();
    Outcome::new(worst < 3.0, format!("{} over {steps} steps; bound 3 SE", parts.join(", ")))
}

// ---------------------------------------------------------------------------
// criteria 8 and 9 drive the command-line tool

fn hlda(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_hlda"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Abstracts-like text: every line mixes common function words with terms
/// from one of six subfields grouped into three fields.
fn write_text_corpus(path: &Path, docs: usize, seed: u64) {
    const FUNCTION: &[&str] = &["the", "of", "and", "a", "in", "to", "is", "for", "with", "that", "we", "on"];
    const FIELDS: &[&[&str]] = &[
        &["graph", "vertex", "edge", "algorithm", "bound"],
        &["protein", "cell", "gene", "expression", "tissue"],
        &["market", "price", "firm", "demand", "policy"],
    ];
    const SUBFIELDS: &[&[&str]] = &[
        &["planar", "coloring", "matching", "spanning"],
        &["flow", "network", "capacity", "routing"],
        &["receptor", "binding", "ligand", "kinase"],
        &["neuron", "synapse", "cortex", "signal"],
        &["auction", "bidder", "mechanism", "bid"],
        &["inflation", "monetary", "rate", "bank"],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    for _ in 0..docs {
        let sub = rng.random_range(0..SUBFIELDS.len());
        let len = rng.random_range(30..60);
        let words: Vec<&str> = (0..len)
            .map(|_| {
                let u: f64 = rng.random();
                let pool = if u < 0.45 {
                    FUNCTION
                } else if u < 0.7 {
                    FIELDS[sub / 2]
                } else {
                    SUBFIELDS[sub]
                };
                pool[rng.random_range(0..pool.len())]
            })
            .collect();
        text.push_str(&words.join(" "));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

fn function_words() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("abstracts.txt");
    write_text_corpus(&corpus, 240, 8);
    let run = dir.path().join("run");
    hlda(&[
        "train", "--preset", "paper-abstracts", "--corpus", s(&corpus), "--input-format", "text", "--iters", "400",
        "--burnin", "100", "--thin", "50", "--seed", "8", "--out", s(&run),
    ]);
    let out = hlda(&[
        "diagnostics", "--trace", s(&run.join("trace.tsv")), "--checkpoint", s(&run.join("mode.checkpoint")), "--corpus",
        s(&corpus), "--input-format", "text",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let line = text.lines().find(|l| l.starts_with("function words")).unwrap_or("no function-word line").to_string();
    Outcome::new(line.ends_with("PASS"), format!("240 documents; {line}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run_once = |name: &str, seed: &str| -> Vec<(String, Vec<u8>)> {
        let root = dir.path().join(name);
        let sim = root.join("sim");
        let run = root.join("run");
        hlda(&["simulate", "--docs", "40", "--words", "60", "--vocab-size", "50", "--seed", "9", "--out", s(&sim)]);
        let corpus = sim.join("corpus.dat");
        let vocab = sim.join("vocab.txt");
        hlda(&[
            "train", "--corpus", s(&corpus), "--vocab", s(&vocab), "--iters", "150", "--burnin", "50", "--thin", "25",
            "--chains", "3", "--sample-hypers", "--seed", seed, "--out", s(&run),
        ]);
        let mut files: Vec<(String, Vec<u8>)> = ["trace.tsv", "mode.checkpoint", "chain-0.checkpoint", "chain-1.checkpoint", "chain-2.checkpoint"]
            .iter()
            .map(|f| (f.to_string(), fs::read(run.join(f)).unwrap()))
            .collect();
        for format in ["json", "dot"] {
            let out = hlda(&[
                "export", "--checkpoint", s(&run.join("mode.checkpoint")), "--corpus", s(&corpus), "--vocab", s(&vocab),
                "--format", format,
            ]);
            files.push((format!("export.{format}"), out.stdout));
        }
        files
    };
    let a = run_once("a", "11");
    let b = run_once("b", "11");
    let c = run_once("c", "12");
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    let seed_matters = a[0].1 != c[0].1;
    Outcome::new(
        differing.is_empty() && seed_matters,
        format!(
            "{} files compared, differing: [{}]; another seed changes the trace: {seed_matters}",
            a.len(),
            differing.join(" ")
        ),
    )
}
