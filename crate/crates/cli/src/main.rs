mod export;
mod settings;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use serde_json::json;

use hlda_core::checkpoint::Checkpoint;
use hlda_core::corpus::{load_corpus_file, split_corpus, Corpus, InputFormat};
use hlda_core::eval::{function_word_check, heldout_log_likelihood, HeldoutConfig, HeldoutEstimate};
use hlda_core::lda::{lda_heldout_log_likelihood, lda_train, LdaConfig};
use hlda_core::sampler::{autocorrelation, continue_chain, posterior_mode, run_chains, ChainConfig, ChainResult};
use hlda_core::simulate::{generate_corpus, SimulationConfig};
use hlda_core::distributions::TopicPrior;
use hlda_core::sampler::{DepthMode, LevelModel};

use settings::{resolve_chain, resolve_model, ChainArgs, Layers, ModelArgs};

#[derive(Parser)]
#[command(name = "hlda", version, about = "Hierarchical topic models fitted by collapsed Gibbs sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a topic hierarchy and write checkpoints and the likelihood trace.
    Train(TrainArgs),
    /// Draw a synthetic corpus with its generating tree.
    Simulate(SimulateArgs),
    /// Held-out log likelihood by cross-validation.
    Eval(EvalArgs),
    /// Write a checkpoint's tree as JSON or DOT.
    Export(ExportArgs),
    /// Summarise a likelihood trace and check the root topic.
    Diagnostics(DiagnosticsArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CorpusFormat {
    /// `M id:count ...` per line.
    Bow,
    /// Plain text, one document per line or per file in a directory.
    Text,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// One term per line; line number is the term id.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bow")]
    input_format: CorpusFormat,
}

impl CorpusArgs {
    fn load(&self) -> Result<Corpus> {
        let format = match self.input_format {
            CorpusFormat::Bow => InputFormat::BagOfWords,
            CorpusFormat::Text => InputFormat::RawText,
        };
        load_corpus_file(&self.corpus, format, self.vocab.as_deref())
            .with_context(|| format!("loading corpus {}", self.corpus.display()))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    chain: ChainArgs,
    /// Resume from this checkpoint instead of initialising.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    docs: usize,
    #[arg(long, default_value_t = 250)]
    words: usize,
    #[arg(long, default_value_t = 100)]
    vocab_size: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.005)]
    eta: f64,
    /// Concentration of the Dirichlet over levels.
    #[arg(long, default_value_t = 1.0)]
    level_dirichlet: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EvalModel {
    Hlda,
    Lda,
    Both,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    chain: ChainArgs,
    #[arg(long, value_enum, default_value = "both")]
    models: EvalModel,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Evaluate only this fold.
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long, default_value_t = 10)]
    lda_topics: usize,
    #[arg(long, default_value_t = 1.0)]
    lda_alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    lda_eta: f64,
    #[arg(long, default_value_t = 100)]
    outer: usize,
    #[arg(long, default_value_t = 800)]
    inner: usize,
    #[arg(long, default_value_t = 100)]
    inner_burnin: usize,
    #[arg(long, default_value_t = 1)]
    lag: usize,
    /// Report file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ExportFormat {
    Json,
    Dot,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, value_enum, default_value = "json")]
    format: ExportFormat,
    #[arg(long, default_value_t = 5)]
    topk: usize,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnosticsArgs {
    /// Trace written by `train`.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 50)]
    max_lag: usize,
    /// With --corpus, also compare root and leaf topics.
    #[arg(long, requires = "corpus")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bow")]
    input_format: CorpusFormat,
    #[arg(long, default_value_t = 10)]
    topk: usize,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Simulate(a) => simulate(a),
        Command::Eval(a) => eval(a),
        Command::Export(a) => export_cmd(a),
        Command::Diagnostics(a) => diagnostics(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn write_manifest(dir: &Path, command: &str, config: serde_json::Value) -> Result<()> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "argv": std::env::args().collect::<Vec<_>>(),
        "config": config,
    });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn chain_json(cfg: &ChainConfig, chains: usize) -> serde_json::Value {
    json!({
        "iters": cfg.iters,
        "burn_in": cfg.burn_in,
        "thin": cfg.thin,
        "seed": cfg.seed,
        "chains": chains,
        "scan": format!("{:?}", cfg.scan),
        "hyper": cfg.hyper,
    })
}

fn write_trace(path: &Path, results: &[ChainResult], start: u64) -> Result<()> {
    let mut out = String::from("chain\titeration\tlog_likelihood\n");
    for r in results {
        for (i, ll) in r.trace.iter().enumerate() {
            out.push_str(&format!("{}\t{}\t{}\n", r.chain, start + i as u64 + 1, ll));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let corpus = Arc::new(a.corpus.load()?);
    fs::create_dir_all(&a.out)?;
    let layers = Layers::new(a.model.config.as_deref(), a.model.preset)?;
    info!("{} documents, {} terms, {} tokens", corpus.num_docs(), corpus.vocab_size(), corpus.total_tokens());

    let (results, finals) = if let Some(cp_path) = &a.checkpoint {
        let cp = Checkpoint::load(cp_path).with_context(|| format!("reading {}", cp_path.display()))?;
        let model = cp.snapshot.model.clone();
        let settings = resolve_chain(&a.chain, &layers, &model)?;
        let mut state = cp.restore(Arc::clone(&corpus))?;
        let start = state.iteration();
        if settings.chain.iters <= start {
            bail!("checkpoint is already at iteration {start}; raise --iters");
        }
        let result = continue_chain(&mut state, &settings.chain)?;
        write_trace(&a.out.join("trace.tsv"), std::slice::from_ref(&result), start)?;
        write_manifest(&a.out, "train", json!({"resumed_from": cp_path, "model": &model, "chain": chain_json(&settings.chain, 1)}))?;
        (vec![result], vec![Checkpoint::capture(&state)])
    } else {
        let model = resolve_model(&a.model, &layers)?;
        let settings = resolve_chain(&a.chain, &layers, &model)?;
        write_manifest(&a.out, "train", json!({"model": &model, "preset": a.model.preset, "chain": chain_json(&settings.chain, settings.chains)}))?;
        let mut results = Vec::new();
        let mut finals = Vec::new();
        let outcomes: Vec<Result<(ChainResult, Checkpoint)>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..settings.chains)
                .map(|c| {
                    let corpus = Arc::clone(&corpus);
                    let model = model.clone();
                    let cfg = ChainConfig { chain: c as u64, ..settings.chain.clone() };
                    s.spawn(move || {
                        let (r, state) = hlda_core::sampler::run_chain(corpus, model, &cfg)?;
                        Ok((r, Checkpoint::capture(&state)))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
        });
        for o in outcomes {
            let (r, cp) = o?;
            results.push(r);
            finals.push(cp);
        }
        write_trace(&a.out.join("trace.tsv"), &results, 0)?;
        (results, finals)
    };

    for (r, cp) in results.iter().zip(&finals) {
        cp.save(&a.out.join(format!("chain-{}.checkpoint", r.chain)))?;
        if let Some(acc) = summarise_acceptance(r) {
            info!("chain {}: MH acceptance m {:.2} pi {:.2} gamma {:.2} eta {:.2}", r.chain, acc[0], acc[1], acc[2], acc[3]);
        }
        info!(
            "chain {}: best log likelihood {:.3} at iteration {}, {:.2e} s/doc/iteration",
            r.chain,
            r.mode.log_likelihood,
            r.mode.iteration,
            r.seconds_per_doc_iteration(corpus.num_docs())
        );
    }
    let (best, mode) = posterior_mode(&results).expect("at least one chain");
    info!("posterior mode from chain {}: {:.3}", results[best].chain, mode.log_likelihood);
    let seed = results[best].chain;
    Checkpoint::from_snapshot(mode.clone(), &corpus, seed).save(&a.out.join("mode.checkpoint"))?;
    Ok(())
}

fn summarise_acceptance(r: &ChainResult) -> Option<[f64; 4]> {
    if r.hyper_acceptance.is_empty() {
        return None;
    }
    let mut acc = [0u64; 4];
    let mut prop = [0u64; 4];
    for rec in &r.hyper_acceptance {
        for i in 0..4 {
            acc[i] += rec.accepted[i] as u64;
            prop[i] += rec.proposed[i] as u64;
        }
    }
    Some(std::array::from_fn(|i| if prop[i] == 0 { f64::NAN } else { acc[i] as f64 / prop[i] as f64 }))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = SimulationConfig {
        docs: a.docs,
        words_per_doc: a.words,
        vocab_size: a.vocab_size,
        model: hlda_core::sampler::ModelConfig {
            depth: DepthMode::Truncated(a.depth),
            levels: LevelModel::Dirichlet { alpha: a.level_dirichlet },
            gamma: a.gamma,
            eta: TopicPrior::scalar(a.eta)?,
        },
        seed: a.seed,
    };
    let (corpus, truth) = generate_corpus(&cfg)?;
    fs::create_dir_all(&a.out)?;
    let mut bow = Vec::new();
    corpus.write_bow(&mut bow)?;
    fs::write(a.out.join("corpus.dat"), bow)?;
    let mut vocab = Vec::new();
    corpus.vocabulary().write(&mut vocab)?;
    fs::write(a.out.join("vocab.txt"), vocab)?;
    fs::write(a.out.join("truth.json"), serde_json::to_string(&truth)? + "\n")?;
    write_manifest(&a.out, "simulate", serde_json::to_value(&cfg)?)?;
    info!("wrote {} documents and a {}-node tree to {}", corpus.num_docs(), truth.parents.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct FoldReport {
    fold: usize,
    train_docs: usize,
    heldout_docs: usize,
    hlda: Option<HeldoutEstimate>,
    lda: Option<HeldoutEstimate>,
}

fn eval(a: EvalArgs) -> Result<()> {
    let corpus = a.corpus.load()?;
    let layers = Layers::new(a.model.config.as_deref(), a.model.preset)?;
    let model = resolve_model(&a.model, &layers)?;
    let settings = resolve_chain(&a.chain, &layers, &model)?;
    let lda = LdaConfig { topics: a.lda_topics, alpha: a.lda_alpha, eta: a.lda_eta };
    lda.validate()?;
    let hc = HeldoutConfig {
        outer: a.outer,
        inner: a.inner,
        inner_burn_in: a.inner_burnin,
        lag: a.lag,
        seed: settings.chain.seed,
    };
    let folds = split_corpus(&corpus, a.folds, settings.chain.seed)?;
    if let Some(f) = a.fold {
        if f >= folds.len() {
            bail!("--fold {f} is out of range for {} folds", folds.len());
        }
    }
    let mut reports = Vec::new();
    for (i, fold) in folds.into_iter().enumerate() {
        if a.fold.is_some_and(|f| f != i) {
            continue;
        }
        let train = Arc::new(fold.train);
        let hlda = if a.models != EvalModel::Lda {
            let runs = run_chains(Arc::clone(&train), &model, &settings.chain, settings.chains)?;
            let samples: Vec<_> = runs.iter().flat_map(|r| r.samples.iter().cloned()).collect();
            Some(heldout_log_likelihood(&samples, &train, &fold.heldout, &hc)?)
        } else {
            None
        };
        let lda_est = if a.models != EvalModel::Hlda {
            let (run, _) = lda_train(Arc::clone(&train), lda, &settings.chain)?;
            Some(lda_heldout_log_likelihood(&run.samples, &train, &lda, &fold.heldout, &hc)?)
        } else {
            None
        };
        info!(
            "fold {i}: hLDA {} LDA {}",
            hlda.as_ref().map_or("-".into(), |e| format!("{:.3}", e.log_likelihood)),
            lda_est.as_ref().map_or("-".into(), |e| format!("{:.3}", e.log_likelihood))
        );
        reports.push(FoldReport {
            fold: i,
            train_docs: train.num_docs(),
            heldout_docs: fold.heldout.num_docs(),
            hlda,
            lda: lda_est,
        });
    }
    let report = json!({
        "folds": reports,
        "model": &model,
        "lda": lda,
        "heldout": hc,
        "chain": chain_json(&settings.chain, settings.chains),
    });
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn export_cmd(a: ExportArgs) -> Result<()> {
    let corpus = Arc::new(a.corpus.load()?);
    let cp = Checkpoint::load(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let state = cp.restore(corpus)?;
    let tree = export::build(&state, a.topk)?;
    let text = match a.format {
        ExportFormat::Json => export::to_json(&tree)?,
        ExportFormat::Dot => export::to_dot(&tree),
    };
    match &a.out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn read_trace(path: &Path) -> Result<Vec<(u64, Vec<f64>)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut chains: Vec<(u64, Vec<f64>)> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split('\t').collect();
        let [c, _, ll] = fields.as_slice() else {
            bail!("{}:{}: expected three tab-separated fields", path.display(), i + 1);
        };
        let c: u64 = c.parse().with_context(|| format!("line {}", i + 1))?;
        let ll: f64 = ll.parse().with_context(|| format!("line {}", i + 1))?;
        match chains.iter_mut().find(|(id, _)| *id == c) {
            Some((_, v)) => v.push(ll),
            None => chains.push((c, vec![ll])),
        }
    }
    if chains.is_empty() {
        bail!("{} holds no trace rows", path.display());
    }
    Ok(chains)
}

fn diagnostics(a: DiagnosticsArgs) -> Result<()> {
    let chains = read_trace(&a.trace)?;
    let mut out = String::new();
    out.push_str("chain\titerations\tfinal\tmax\n");
    for (c, t) in &chains {
        let max = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.push_str(&format!("{c}\t{}\t{:.3}\t{:.3}\n", t.len(), t[t.len() - 1], max));
    }
    let acfs: Vec<Option<Vec<f64>>> = chains
        .iter()
        .map(|(_, t)| {
            let half = &t[t.len() / 2..];
            autocorrelation(half, a.max_lag.min(half.len().saturating_sub(1))).ok()
        })
        .collect();
    out.push_str("\nautocorrelation of the second half of each trace\nlag");
    for (c, _) in &chains {
        out.push_str(&format!("\tchain {c}"));
    }
    out.push('\n');
    for lag in 0..=a.max_lag {
        if acfs.iter().all(|x| x.as_ref().is_none_or(|v| v.len() <= lag)) {
            break;
        }
        out.push_str(&lag.to_string());
        for acf in &acfs {
            match acf.as_ref().and_then(|v| v.get(lag)) {
                Some(r) => out.push_str(&format!("\t{r:.4}")),
                None => out.push_str("\t-"),
            }
        }
        out.push('\n');
    }
    if let (Some(cp), Some(corpus)) = (&a.checkpoint, &a.corpus) {
        let corpus = CorpusArgs { corpus: corpus.clone(), vocab: a.vocab.clone(), input_format: a.input_format }.load()?;
        let state = Checkpoint::load(cp)?.restore(Arc::new(corpus))?;
        let check = function_word_check(&state, a.topk)?;
        out.push_str(&format!(
            "\nfunction words: root top-{} mean corpus frequency {:.2}, leaf mean {:.2} over {} leaves: {}\n",
            a.topk,
            check.root_mean_frequency,
            check.leaf_mean_frequency,
            check.leaves,
            if check.passed() { "PASS" } else { "FAIL" }
        ));
    }
    std::io::stdout().write_all(out.as_bytes())?;
    Ok(())
}
