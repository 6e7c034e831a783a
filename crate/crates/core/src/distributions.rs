//! Probability primitives shared by the prior, the sampler and the tests.
//!
//! Levels are 0-based throughout: level 0 is the root of a path.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Concentration of a Chinese restaurant process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrpParams {
    gamma: f64,
}

impl CrpParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Two-parameter stick-breaking distribution over levels.
///
/// `m` is the expected fraction of the remaining stick passed on to deeper
/// levels and `pi` scales how tightly documents follow that proportion. The
/// stick broken off at each level is `Beta((1 - m) * pi, m * pi)`, so the
/// prior level means are `(1 - m) * m^k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GemParams {
    m: f64,
    pi: f64,
}

impl GemParams {
    pub fn new(m: f64, pi: f64) -> Result<Self> {
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::InvalidParameter(format!("gem m must lie in (0,1), got {m}")));
        }
        if !(pi > 0.0 && pi.is_finite()) {
            return Err(Error::InvalidParameter(format!("gem pi must be > 0, got {pi}")));
        }
        Ok(Self { m, pi })
    }

    /// The one-parameter GEM(gamma), whose sticks are `Beta(1, gamma)`.
    pub fn standard(gamma: f64) -> Result<Self> {
        CrpParams::new(gamma)?;
        Self::new(gamma / (1.0 + gamma), 1.0 + gamma)
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    /// Pseudo-count for stopping at a level.
    pub fn stop_weight(&self) -> f64 {
        (1.0 - self.m) * self.pi
    }

    /// Pseudo-count for passing a level.
    pub fn pass_weight(&self) -> f64 {
        self.m * self.pi
    }

    pub fn sample_stick<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_beta(self.stop_weight(), self.pass_weight(), rng)
    }
}

/// Per-level topic smoothing. Levels past the end reuse the last entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicPrior {
    eta: Vec<f64>,
}

impl TopicPrior {
    pub fn new(eta: Vec<f64>) -> Result<Self> {
        if eta.is_empty() {
            return Err(Error::InvalidParameter("eta needs at least one value".into()));
        }
        if let Some(bad) = eta.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidParameter(format!("eta entries must be > 0, got {bad}")));
        }
        Ok(Self { eta })
    }

    pub fn scalar(eta: f64) -> Result<Self> {
        Self::new(vec![eta])
    }

    #[inline]
    pub fn at(&self, level: usize) -> f64 {
        self.eta[level.min(self.eta.len() - 1)]
    }

    pub fn values(&self) -> &[f64] {
        &self.eta
    }
}

/// Seating probabilities for the next customer: one entry per occupied table
/// followed by the probability of a new table.
pub fn crp_next_table_probs(counts: &[u32], gamma: f64) -> Result<Vec<f64>> {
    CrpParams::new(gamma)?;
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::InvalidParameter("table counts must be positive".into()));
    }
    let seated: f64 = counts.iter().map(|&c| c as f64).sum();
    let denom = gamma + seated;
    let mut probs: Vec<f64> = counts.iter().map(|&c| c as f64 / denom).collect();
    probs.push(gamma / denom);
    Ok(probs)
}

/// Log probability of a seating arrangement with the given table sizes.
pub fn crp_partition_log_prob(table_sizes: &[u32], gamma: f64) -> Result<f64> {
    CrpParams::new(gamma)?;
    if table_sizes.is_empty() {
        return Err(Error::EmptyInput);
    }
    if table_sizes.iter().any(|&c| c == 0) {
        return Err(Error::InvalidParameter("table sizes must be positive".into()));
    }
    Ok(crp_partition_log_prob_unchecked(table_sizes.iter().copied(), gamma))
}

pub(crate) fn crp_partition_log_prob_unchecked<I: IntoIterator<Item = u32>>(sizes: I, gamma: f64) -> f64 {
    let mut tables = 0.0;
    let mut customers = 0u64;
    let mut acc = 0.0;
    for n in sizes {
        tables += 1.0;
        customers += n as u64;
        acc += ln_gamma(n as f64);
    }
    if customers == 0 {
        return 0.0;
    }
    acc + tables * gamma.ln() + ln_gamma(gamma) - ln_gamma(gamma + customers as f64)
}

/// Predictive probability that the next word of a document lands on `level`,
/// given the counts of the document's other words per level.
pub fn gem_level_conditional(level_counts: &[u32], gem: GemParams, level: usize) -> f64 {
    let count = |j: usize| level_counts.get(j).copied().unwrap_or(0) as f64;
    let mut at_or_below: f64 = level_counts.iter().map(|&c| c as f64).sum();
    let mut passed = 1.0;
    for j in 0..level {
        let deeper = at_or_below - count(j);
        passed *= (gem.pass_weight() + deeper) / (gem.pi() + at_or_below);
        at_or_below = deeper;
    }
    passed * (gem.stop_weight() + count(level)) / (gem.pi() + at_or_below)
}

/// Fills `out` with the GEM predictive for levels `0..levels` and returns the
/// mass remaining for all deeper levels.
pub fn gem_level_probs(level_counts: &[u32], gem: GemParams, levels: usize, out: &mut Vec<f64>) -> f64 {
    out.clear();
    let mut at_or_below: f64 = level_counts.iter().map(|&c| c as f64).sum();
    let mut passed = 1.0;
    for j in 0..levels {
        let here = level_counts.get(j).copied().unwrap_or(0) as f64;
        let denom = gem.pi() + at_or_below;
        out.push(passed * (gem.stop_weight() + here) / denom);
        let deeper = at_or_below - here;
        passed *= (gem.pass_weight() + deeper) / denom;
        at_or_below = deeper;
    }
    passed
}

/// GEM predictive truncated at `depth` levels; the last level absorbs the tail.
pub fn truncated_gem_level_probs(level_counts: &[u32], gem: GemParams, depth: usize, out: &mut Vec<f64>) {
    let tail = gem_level_probs(level_counts, gem, depth - 1, out);
    out.push(tail);
}

/// Symmetric Dirichlet predictive over `depth` levels.
pub fn dirichlet_level_probs(level_counts: &[u32], alpha: f64, depth: usize, out: &mut Vec<f64>) {
    out.clear();
    let total: f64 = level_counts.iter().take(depth).map(|&c| c as f64).sum();
    let denom = depth as f64 * alpha + total;
    out.extend((0..depth).map(|k| (alpha + level_counts.get(k).copied().unwrap_or(0) as f64) / denom));
}

/// Log marginal of a count vector under a symmetric Dirichlet(eta) over
/// `vocab_size` outcomes. Entries past the end of `counts` are zero.
pub fn log_dirichlet_multinomial(counts: &[u32], eta: f64, vocab_size: usize) -> f64 {
    let veta = vocab_size as f64 * eta;
    let lg_eta = ln_gamma(eta);
    let mut total = 0u64;
    let mut acc = 0.0;
    for &c in counts.iter().filter(|&&c| c > 0) {
        total += c as u64;
        acc += ln_gamma(eta + c as f64) - lg_eta;
    }
    if total == 0 {
        return 0.0;
    }
    acc + ln_gamma(veta) - ln_gamma(veta + total as f64)
}

/// `ln Γ(x + n) - ln Γ(x)`.
#[inline]
pub fn log_rising(x: f64, n: u32) -> f64 {
    match n {
        0 => 0.0,
        1 => x.ln(),
        2..=12 => {
            let mut prod = 1.0;
            for i in 0..n {
                prod *= x + i as f64;
            }
            prod.ln()
        }
        _ => ln_gamma(x + n as f64) - ln_gamma(x),
    }
}

pub fn ln_gamma_fn(x: f64) -> f64 {
    ln_gamma(x)
}

/// Overflow-free `log Σ exp(v)`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Ok(max);
    }
    Ok(max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln())
}

/// Draws an index with probability proportional to `exp(log_weights[i])`.
pub fn sample_discrete<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Result<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::NoFiniteWeight);
    }
    let total: f64 = log_weights.iter().map(|w| (w - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in log_weights.iter().enumerate() {
        let p = (w - max).exp();
        if p > 0.0 {
            last = i;
            if u < p {
                return Ok(i);
            }
            u -= p;
        }
    }
    Ok(last)
}

/// Draws an index proportional to non-negative linear weights with the given
/// positive total.
#[inline]
pub fn sample_linear<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = i;
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    last
}

/// `log G` for `G ~ Gamma(shape, 1)`, stable for very small shapes.
pub fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
        g.ln()
    } else {
        let boosted = sample_log_gamma(shape + 1.0, rng);
        let u: f64 = rng.random::<f64>();
        boosted + u.max(f64::MIN_POSITIVE).ln() / shape
    }
}

pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let la = sample_log_gamma(a, rng);
    let lb = sample_log_gamma(b, rng);
    1.0 / (1.0 + (lb - la).exp())
}

/// Dirichlet draw normalised in log space, so tiny concentrations do not
/// collapse to all-zero vectors.
pub fn sample_dirichlet<R: Rng + ?Sized>(alphas: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = alphas.iter().map(|&a| sample_log_gamma(a, rng)).collect();
    let norm = log_sum_exp(&logs).expect("non-empty");
    logs.iter().map(|l| (l - norm).exp()).collect()
}
