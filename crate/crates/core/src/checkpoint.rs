//! Line-oriented checkpoints: configuration, RNG position and every
//! document's path and levels. Counts are rebuilt on load.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::distributions::{GemParams, TopicPrior};
use crate::error::{Error, Result};
use crate::sampler::{DepthMode, LevelModel, ModelConfig, SamplerState, ScanOrder, Snapshot};
use crate::tree::{NodeId, Path};

const MAGIC: &str = "hlda-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub snapshot: Snapshot,
    pub scan: ScanOrder,
    pub mh_steps: Option<[f64; 4]>,
    pub docs: usize,
    pub tokens: usize,
    rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn capture(state: &SamplerState) -> Self {
        Self {
            snapshot: state.snapshot(state.complete_log_likelihood()),
            scan: state.scan_order(),
            mh_steps: state.mh_steps,
            docs: state.corpus().num_docs(),
            tokens: state.corpus().total_tokens(),
            rng: state.rng().clone(),
        }
    }

    /// Wraps a recorded snapshot, such as a chain's mode. Resuming from it
    /// starts a fresh random stream from `seed`.
    pub fn from_snapshot(snapshot: Snapshot, corpus: &Corpus, seed: u64) -> Self {
        Self {
            snapshot,
            scan: ScanOrder::Fixed,
            mh_steps: None,
            docs: corpus.num_docs(),
            tokens: corpus.total_tokens(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Rebuilds the sampler so that it continues exactly where it stopped.
    pub fn restore(&self, corpus: Arc<Corpus>) -> Result<SamplerState> {
        if corpus.num_docs() != self.docs || corpus.total_tokens() != self.tokens {
            return Err(Error::Checkpoint(format!(
                "checkpoint was taken on {} documents / {} tokens, corpus has {} / {}",
                self.docs,
                self.tokens,
                corpus.num_docs(),
                corpus.total_tokens()
            )));
        }
        let mut state = SamplerState::from_snapshot(corpus, &self.snapshot, self.rng.clone())?;
        state.set_scan_order(self.scan);
        state.mh_steps = self.mh_steps;
        Ok(state)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let s = &self.snapshot;
        let m = &s.model;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = match m.depth {
            DepthMode::Truncated(l) => writeln!(out, "depth truncated {l}"),
            DepthMode::Infinite => writeln!(out, "depth infinite"),
        };
        let _ = match m.levels {
            LevelModel::Gem(g) => writeln!(out, "levels gem {} {}", g.m(), g.pi()),
            LevelModel::Dirichlet { alpha } => writeln!(out, "levels dirichlet {alpha}"),
        };
        let _ = writeln!(out, "gamma {}", m.gamma);
        let _ = writeln!(out, "eta {}", join(m.eta.values()));
        let _ = writeln!(out, "scan {}", if self.scan == ScanOrder::Random { "random" } else { "fixed" });
        let _ = writeln!(out, "iteration {}", s.iteration);
        let _ = writeln!(out, "log-likelihood {}", s.log_likelihood);
        let _ = writeln!(out, "next-node {}", s.next_node_id);
        let seed: String = self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        let _ = writeln!(out, "rng {seed} {} {}", self.rng.get_stream(), self.rng.get_word_pos());
        let _ = match self.mh_steps {
            Some(st) => writeln!(out, "mh-steps {}", join(&st)),
            None => writeln!(out, "mh-steps none"),
        };
        let _ = writeln!(out, "corpus {} {}", self.docs, self.tokens);
        for (p, l) in s.paths.iter().zip(&s.levels) {
            let ids: Vec<u32> = p.nodes().iter().map(|n| n.0).collect();
            let _ = writeln!(out, "{} | {}", join(&ids), join(l));
        }
        out
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, line)) => Ok((i + 1, line?)),
                None => Err(Error::Checkpoint(format!("missing {what}"))),
            }
        };
        let (_, magic) = next("header")?;
        if magic.trim() != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let depth = match fields(next("depth")?, "depth")?.as_slice() {
            [kind] if kind == "infinite" => DepthMode::Infinite,
            [kind, l] if kind == "truncated" => DepthMode::Truncated(num(l)?),
            _ => return Err(Error::Checkpoint("bad depth line".into())),
        };
        let levels = match fields(next("levels")?, "levels")?.as_slice() {
            [kind, m, pi] if kind == "gem" => LevelModel::Gem(GemParams::new(num(m)?, num(pi)?)?),
            [kind, a] if kind == "dirichlet" => LevelModel::Dirichlet { alpha: num(a)? },
            _ => return Err(Error::Checkpoint("bad levels line".into())),
        };
        let gamma = num(&single(next("gamma")?, "gamma")?)?;
        let eta = fields(next("eta")?, "eta")?.iter().map(|x| num(x)).collect::<Result<Vec<f64>>>()?;
        let scan = match single(next("scan")?, "scan")?.as_str() {
            "fixed" => ScanOrder::Fixed,
            "random" => ScanOrder::Random,
            other => return Err(Error::Checkpoint(format!("unknown scan order {other}"))),
        };
        let iteration = num(&single(next("iteration")?, "iteration")?)?;
        let log_likelihood = num(&single(next("log-likelihood")?, "log-likelihood")?)?;
        let next_node_id = num(&single(next("next-node")?, "next-node")?)?;
        let rng = match fields(next("rng")?, "rng")?.as_slice() {
            [seed, stream, pos] => {
                if seed.len() != 64 {
                    return Err(Error::Checkpoint("rng seed must be 32 bytes".into()));
                }
                let mut bytes = [0u8; 32];
                for (i, b) in bytes.iter_mut().enumerate() {
                    *b = u8::from_str_radix(&seed[2 * i..2 * i + 2], 16).map_err(|e| Error::Checkpoint(e.to_string()))?;
                }
                let mut rng = ChaCha8Rng::from_seed(bytes);
                rng.set_stream(num(stream)?);
                rng.set_word_pos(num(pos)?);
                rng
            }
            _ => return Err(Error::Checkpoint("bad rng line".into())),
        };
        let mh_steps = match fields(next("mh-steps")?, "mh-steps")?.as_slice() {
            [none] if none == "none" => None,
            [a, b, c, d] => Some([num(a)?, num(b)?, num(c)?, num(d)?]),
            _ => return Err(Error::Checkpoint("bad mh-steps line".into())),
        };
        let (docs, tokens) = match fields(next("corpus")?, "corpus")?.as_slice() {
            [d, t] => (num(d)?, num(t)?),
            _ => return Err(Error::Checkpoint("bad corpus line".into())),
        };
        let mut paths = Vec::with_capacity(docs);
        let mut doc_levels = Vec::with_capacity(docs);
        for _ in 0..docs {
            let (line_no, line) = next("document assignment")?;
            let (p, l) = line
                .split_once('|')
                .ok_or_else(|| Error::Checkpoint(format!("line {line_no}: expected 'path | levels'")))?;
            let ids = p.split_whitespace().map(num::<u32>).collect::<Result<Vec<_>>>()?;
            paths.push(Path::new(ids.into_iter().map(NodeId).collect()));
            doc_levels.push(l.split_whitespace().map(num::<usize>).collect::<Result<Vec<_>>>()?);
        }
        let model = ModelConfig {
            depth,
            levels,
            gamma,
            eta: TopicPrior::new(eta)?,
        };
        model.validate()?;
        Ok(Self {
            snapshot: Snapshot {
                iteration,
                log_likelihood,
                model,
                next_node_id,
                paths,
                levels: doc_levels,
            },
            scan,
            mh_steps,
            docs,
            tokens,
            rng,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn fields((line_no, line): (usize, String), key: &str) -> Result<Vec<String>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(Error::Checkpoint(format!("line {line_no}: expected '{key}'")));
    }
    Ok(parts.map(str::to_string).collect())
}

fn single(line: (usize, String), key: &str) -> Result<String> {
    let line_no = line.0;
    match fields(line, key)?.as_slice() {
        [x] => Ok(x.clone()),
        _ => Err(Error::Checkpoint(format!("line {line_no}: expected one value after '{key}'"))),
    }
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| Error::Checkpoint(format!("cannot parse '{s}': {e}")))
}
