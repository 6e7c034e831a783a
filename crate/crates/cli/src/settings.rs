//! Flag, config-file, preset and default layering for model and chain
//! settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use hlda_core::distributions::{GemParams, TopicPrior};
use hlda_core::hyper::{HyperPriors, HyperSampling, MhConfig};
use hlda_core::sampler::{ChainConfig, DepthMode, LevelModel, ModelConfig, ScanOrder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Preset {
    /// Three levels, eta = 2.0,1.0,0.5, gamma = 1, GEM m = 0.5, pi = 100.
    PaperAbstracts,
}

const KEYS: &[&str] = &[
    "depth",
    "infinite-depth",
    "gamma",
    "eta",
    "gem-m",
    "gem-pi",
    "level-dirichlet",
    "iters",
    "burnin",
    "thin",
    "seed",
    "chains",
    "scan",
    "sample-hypers",
    "prior-m-a",
    "prior-m-b",
    "prior-pi-rate",
    "prior-gamma-shape",
    "prior-gamma-rate",
    "prior-eta-rate",
    "step-m",
    "step-pi",
    "step-gamma",
    "step-eta",
    "mh-updates",
    "adapt-steps",
];

#[derive(Args, Clone, Debug, Default)]
pub struct ModelArgs {
    /// Named bundle of model defaults.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Flat key = value file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Levels in a truncated tree, root included.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub infinite_depth: bool,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// One value, or one per level.
    #[arg(long, value_delimiter = ',')]
    pub eta: Option<Vec<f64>>,
    #[arg(long)]
    pub gem_m: Option<f64>,
    #[arg(long)]
    pub gem_pi: Option<f64>,
    /// Use a symmetric Dirichlet over levels with this concentration.
    #[arg(long)]
    pub level_dirichlet: Option<f64>,
}

#[derive(Args, Clone, Debug, Default)]
pub struct ChainArgs {
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub burnin: Option<u64>,
    #[arg(long)]
    pub thin: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Independent restarts, run concurrently.
    #[arg(long)]
    pub chains: Option<usize>,
    /// Resample m, pi, gamma and eta by Metropolis-Hastings.
    #[arg(long)]
    pub sample_hypers: bool,
    #[arg(long, value_enum)]
    pub scan: Option<Scan>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scan {
    Fixed,
    Random,
}

impl FromStr for Scan {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <Scan as ValueEnum>::from_str(s, true)
    }
}

/// Values from the config file and preset, consulted after flags.
pub struct Layers {
    file: BTreeMap<String, String>,
    preset: BTreeMap<&'static str, &'static str>,
}

impl Layers {
    pub fn new(config: Option<&Path>, preset: Option<Preset>) -> Result<Self> {
        let file = match config {
            Some(p) => parse_config(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
            None => BTreeMap::new(),
        };
        let preset = match preset {
            Some(Preset::PaperAbstracts) => BTreeMap::from([
                ("depth", "3"),
                ("eta", "2.0,1.0,0.5"),
                ("gamma", "1.0"),
                ("gem-m", "0.5"),
                ("gem-pi", "100"),
            ]),
            None => BTreeMap::new(),
        };
        Ok(Self { file, preset })
    }

    fn lookup(&self, key: &str) -> Option<&str> {
        self.file.get(key).map(String::as_str).or_else(|| self.preset.get(key).copied())
    }

    pub fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get_opt(flag, key)?.unwrap_or(default))
    }

    pub fn get_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.lookup(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("config key {key}: cannot parse {v:?}: {e}")))
            .transpose()
    }

    pub fn switch(&self, flag: bool, key: &str) -> Result<bool> {
        if flag {
            return Ok(true);
        }
        self.get_opt::<bool>(None, key).map(|v| v.unwrap_or(false))
    }

    fn list(&self, flag: Option<Vec<f64>>, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.lookup(key) {
            Some(v) => v
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| anyhow!("config key {key}: {e}")))
                .collect(),
            None => Ok(default.to_vec()),
        }
    }
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key = value", i + 1))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            bail!("config line {}: unknown key {k:?}", i + 1);
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn resolve_model(args: &ModelArgs, layers: &Layers) -> Result<ModelConfig> {
    let infinite = layers.switch(args.infinite_depth, "infinite-depth")?;
    let depth = if infinite {
        DepthMode::Infinite
    } else {
        DepthMode::Truncated(layers.get(args.depth, "depth", 3)?)
    };
    let levels = match layers.get_opt(args.level_dirichlet, "level-dirichlet")? {
        Some(alpha) => LevelModel::Dirichlet { alpha },
        None => LevelModel::Gem(GemParams::new(
            layers.get(args.gem_m, "gem-m", 0.5)?,
            layers.get(args.gem_pi, "gem-pi", 100.0)?,
        )?),
    };
    let model = ModelConfig {
        depth,
        levels,
        gamma: layers.get(args.gamma, "gamma", 1.0)?,
        eta: TopicPrior::new(layers.list(args.eta.clone(), "eta", &[0.1])?)?,
    };
    model.validate()?;
    Ok(model)
}

pub fn resolve_hyper(layers: &Layers, enabled: bool, model: &ModelConfig) -> Result<Option<HyperSampling>> {
    if !layers.switch(enabled, "sample-hypers")? {
        return Ok(None);
    }
    if model.eta.values().len() != 1 {
        bail!("invalid combination: hyperparameter sampling needs a single eta, not one per level");
    }
    let priors = HyperPriors {
        m_a: layers.get(None, "prior-m-a", 1.0)?,
        m_b: layers.get(None, "prior-m-b", 1.0)?,
        pi_rate: layers.get(None, "prior-pi-rate", 1.0)?,
        gamma_shape: layers.get(None, "prior-gamma-shape", 1.0)?,
        gamma_rate: layers.get(None, "prior-gamma-rate", 1.0)?,
        eta_rate: layers.get(None, "prior-eta-rate", 1.0)?,
    };
    priors.validate()?;
    let mh = MhConfig {
        step_m: layers.get(None, "step-m", 0.3)?,
        step_pi: layers.get(None, "step-pi", 0.3)?,
        step_gamma: layers.get(None, "step-gamma", 0.3)?,
        step_eta: layers.get(None, "step-eta", 0.3)?,
        updates: layers.get(None, "mh-updates", 1)?,
        adapt_during_burn_in: layers.get(None, "adapt-steps", false)?,
    };
    if mh.steps().iter().any(|s| !(*s > 0.0)) {
        bail!("MH step sizes must be > 0");
    }
    Ok(Some(HyperSampling { priors, mh }))
}

pub struct ChainSettings {
    pub chain: ChainConfig,
    pub chains: usize,
}

pub fn resolve_chain(args: &ChainArgs, layers: &Layers, model: &ModelConfig) -> Result<ChainSettings> {
    let scan = match layers.get_opt(args.scan, "scan")? {
        Some(Scan::Random) => ScanOrder::Random,
        _ => ScanOrder::Fixed,
    };
    let chain = ChainConfig {
        iters: layers.get(args.iters, "iters", 10_000)?,
        burn_in: layers.get(args.burnin, "burnin", 2_000)?,
        thin: layers.get(args.thin, "thin", 100)?,
        seed: layers.get(args.seed, "seed", 0)?,
        chain: 0,
        record_snapshots: true,
        scan,
        hyper: resolve_hyper(layers, args.sample_hypers, model)?,
    };
    chain.validate()?;
    let chains = layers.get(args.chains, "chains", 1)?;
    if chains == 0 {
        bail!("--chains must be at least 1");
    }
    Ok(ChainSettings { chain, chains })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layers(text: &str, preset: Option<Preset>) -> Layers {
        Layers {
            file: parse_config(text).unwrap(),
            preset: Layers::new(None, preset).unwrap().preset,
        }
    }

    #[test]
    fn flags_beat_file_beat_preset() {
        let l = layers("gamma = 2.5\n# comment\ndepth=4\n", Some(Preset::PaperAbstracts));
        let args = ModelArgs { depth: Some(2), eta: Some(vec![0.3]), ..ModelArgs::default() };
        let m = resolve_model(&args, &l).unwrap();
        assert_eq!(m.depth, DepthMode::Truncated(2));
        assert_eq!(m.gamma, 2.5);
        assert_eq!(m.eta.values(), &[0.3]);
        assert_eq!(m.gem().unwrap().pi(), 100.0);
    }

    #[test]
    fn preset_values() {
        let m = resolve_model(&ModelArgs::default(), &layers("", Some(Preset::PaperAbstracts))).unwrap();
        assert_eq!(m, ModelConfig::paper_abstracts());
    }

    #[test]
    fn unknown_keys_and_bad_lines_fail() {
        assert!(parse_config("colour = red\n").is_err());
        assert!(parse_config("gamma 1\n").is_err());
    }

    #[test]
    fn per_level_eta_with_hyper_sampling_is_rejected() {
        let l = layers("", Some(Preset::PaperAbstracts));
        let m = resolve_model(&ModelArgs::default(), &l).unwrap();
        let args = ChainArgs { sample_hypers: true, ..ChainArgs::default() };
        assert!(resolve_chain(&args, &l, &m).is_err());
        let scalar = resolve_model(&ModelArgs { eta: Some(vec![0.5]), ..ModelArgs::default() }, &l).unwrap();
        assert!(resolve_chain(&args, &l, &scalar).unwrap().chain.hyper.is_some());
    }
}
