//! Metropolis-Hastings updates for `m`, `pi`, `gamma` and `eta`, interleaved
//! with Gibbs sweeps.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::distributions::{GemParams, TopicPrior};
use crate::error::{Error, Result};
use crate::sampler::{doc_levels_log_prior, paths_log_prior, words_log_likelihood, LevelModel, SamplerState};

/// `m ~ Beta(m_a, m_b)`, `pi ~ Exponential(pi_rate)`,
/// `gamma ~ Gamma(gamma_shape, gamma_rate)`, `eta ~ Exponential(eta_rate)`.
/// Exponential and gamma priors use the rate parameterisation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperPriors {
    pub m_a: f64,
    pub m_b: f64,
    pub pi_rate: f64,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    pub eta_rate: f64,
}

impl Default for HyperPriors {
    fn default() -> Self {
        Self {
            m_a: 1.0,
            m_b: 1.0,
            pi_rate: 1.0,
            gamma_shape: 1.0,
            gamma_rate: 1.0,
            eta_rate: 1.0,
        }
    }
}

impl HyperPriors {
    pub fn validate(&self) -> Result<()> {
        let all = [self.m_a, self.m_b, self.pi_rate, self.gamma_shape, self.gamma_rate, self.eta_rate];
        if all.iter().all(|a| *a > 0.0 && a.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter("hyperprior parameters must be > 0".into()))
        }
    }

    pub fn mean(&self, which: HyperParam) -> f64 {
        match which {
            HyperParam::M => self.m_a / (self.m_a + self.m_b),
            HyperParam::Pi => 1.0 / self.pi_rate,
            HyperParam::Gamma => self.gamma_shape / self.gamma_rate,
            HyperParam::Eta => 1.0 / self.eta_rate,
        }
    }

    pub fn log_density(&self, which: HyperParam, x: f64) -> f64 {
        match which {
            HyperParam::M => {
                let (a, b) = (self.m_a, self.m_b);
                (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b))
            }
            HyperParam::Pi => self.pi_rate.ln() - self.pi_rate * x,
            HyperParam::Gamma => {
                let (k, r) = (self.gamma_shape, self.gamma_rate);
                k * r.ln() - ln_gamma(k) + (k - 1.0) * x.ln() - r * x
            }
            HyperParam::Eta => self.eta_rate.ln() - self.eta_rate * x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MhConfig {
    /// Random-walk scale on the logit of `m`.
    pub step_m: f64,
    /// Random-walk scales on the logs of `pi`, `gamma`, `eta`.
    pub step_pi: f64,
    pub step_gamma: f64,
    pub step_eta: f64,
    /// Proposals per parameter per sweep.
    pub updates: usize,
    /// Tune step sizes toward 44% acceptance, during burn-in only.
    pub adapt_during_burn_in: bool,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            step_m: 0.3,
            step_pi: 0.3,
            step_gamma: 0.3,
            step_eta: 0.3,
            updates: 1,
            adapt_during_burn_in: false,
        }
    }
}

impl MhConfig {
    pub fn steps(&self) -> [f64; 4] {
        [self.step_m, self.step_pi, self.step_gamma, self.step_eta]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HyperSampling {
    pub priors: HyperPriors,
    pub mh: MhConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HyperParam {
    M,
    Pi,
    Gamma,
    Eta,
}

impl HyperParam {
    pub const ALL: [HyperParam; 4] = [HyperParam::M, HyperParam::Pi, HyperParam::Gamma, HyperParam::Eta];

    fn index(self) -> usize {
        self as usize
    }

    fn in_domain(self, x: f64) -> bool {
        match self {
            HyperParam::M => x > 0.0 && x < 1.0,
            _ => x > 0.0 && x.is_finite(),
        }
    }
}

/// Accept/propose tallies for one interleaved update, indexed like
/// [`HyperParam::ALL`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceRecord {
    pub proposed: [u32; 4],
    pub accepted: [u32; 4],
}

/// The factor of the complete log likelihood that depends on `which`,
/// evaluated at `value`, plus the log prior density.
pub fn log_hyper_target(state: &SamplerState, priors: &HyperPriors, which: HyperParam, value: f64) -> Result<f64> {
    if !which.in_domain(value) {
        return Err(Error::InvalidParameter(format!("{which:?} = {value} is outside its domain")));
    }
    let model = state.model();
    let factor = match which {
        HyperParam::Gamma => paths_log_prior(state.tree(), value),
        HyperParam::M | HyperParam::Pi => {
            let gem = model
                .gem()
                .ok_or_else(|| Error::InvalidParameter("m and pi need a GEM level prior".into()))?;
            let gem = if which == HyperParam::M {
                GemParams::new(value, gem.pi())?
            } else {
                GemParams::new(gem.m(), value)?
            };
            state
                .assignments()
                .iter()
                .map(|a| doc_levels_log_prior(&a.level_counts, model.depth, LevelModel::Gem(gem)))
                .sum()
        }
        HyperParam::Eta => words_log_likelihood(state.tree(), &TopicPrior::scalar(value)?),
    };
    Ok(factor + priors.log_density(which, value))
}

/// Metropolis-Hastings acceptance given the two log targets, the log
/// Jacobian of the proposal transform and a uniform draw.
pub fn mh_accept(log_target_current: f64, log_target_proposed: f64, log_jacobian: f64, uniform: f64) -> bool {
    let log_ratio = log_target_proposed - log_target_current + log_jacobian;
    uniform.ln() < log_ratio
}

fn current_value(state: &SamplerState, which: HyperParam) -> Result<f64> {
    let model = state.model();
    Ok(match which {
        HyperParam::Gamma => model.gamma,
        HyperParam::Eta => {
            if model.eta.values().len() != 1 {
                return Err(Error::InvalidParameter(
                    "hyperparameter sampling needs a single scalar eta".into(),
                ));
            }
            model.eta.at(0)
        }
        HyperParam::M => model.gem().expect("checked by caller").m(),
        HyperParam::Pi => model.gem().expect("checked by caller").pi(),
    })
}

fn set_value(state: &mut SamplerState, which: HyperParam, value: f64) -> Result<()> {
    let model = state.model_mut();
    match which {
        HyperParam::Gamma => model.gamma = value,
        HyperParam::Eta => model.eta = TopicPrior::scalar(value)?,
        HyperParam::M | HyperParam::Pi => {
            let gem = model.gem().expect("checked by caller");
            let gem = if which == HyperParam::M {
                GemParams::new(value, gem.pi())?
            } else {
                GemParams::new(gem.m(), value)?
            };
            model.levels = LevelModel::Gem(gem);
        }
    }
    Ok(())
}

/// One round of random-walk updates for `m`, `pi`, `gamma`, `eta` in turn.
/// `m` and `pi` are skipped under a Dirichlet level prior.
pub fn mh_update_hyperparameters(state: &mut SamplerState, sampling: &HyperSampling, in_burn_in: bool) -> Result<AcceptanceRecord> {
    let mut steps = state.mh_steps.unwrap_or_else(|| sampling.mh.steps());
    let mut record = AcceptanceRecord::default();
    let has_gem = state.model().gem().is_some();
    for which in HyperParam::ALL {
        if !has_gem && matches!(which, HyperParam::M | HyperParam::Pi) {
            continue;
        }
        let i = which.index();
        for _ in 0..sampling.mh.updates.max(1) {
            let current = current_value(state, which)?;
            let z: f64 = state.rng_mut().sample(StandardNormal);
            let step = steps[i] * z;
            let (proposed, log_jacobian) = match which {
                HyperParam::M => {
                    let logit = (current / (1.0 - current)).ln() + step;
                    let p = 1.0 / (1.0 + (-logit).exp());
                    (p, (p * (1.0 - p)).ln() - (current * (1.0 - current)).ln())
                }
                _ => {
                    let p = current * step.exp();
                    (p, step)
                }
            };
            record.proposed[i] += 1;
            if !which.in_domain(proposed) {
                continue;
            }
            let cur = log_hyper_target(state, &sampling.priors, which, current)?;
            let prop = log_hyper_target(state, &sampling.priors, which, proposed)?;
            let u: f64 = state.rng_mut().random();
            let accepted = mh_accept(cur, prop, log_jacobian, u);
            if accepted {
                set_value(state, which, proposed)?;
                record.accepted[i] += 1;
            }
            if in_burn_in && sampling.mh.adapt_during_burn_in {
                let rate: f64 = if accepted { 1.0 } else { 0.0 };
                steps[i] *= (0.05 * (rate - 0.44)).exp();
            }
        }
    }
    state.mh_steps = Some(steps);
    Ok(record)
}
