//! Integer-coded bag-of-words corpora.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms<I: IntoIterator<Item = String>>(terms: I) -> Result<Self> {
        let mut vocab = Self::new();
        for (line, term) in terms.into_iter().enumerate() {
            if vocab.index.contains_key(&term) {
                return Err(Error::Malformed {
                    line: line + 1,
                    message: format!("duplicate term {term:?}"),
                });
            }
            vocab.intern(&term);
        }
        Ok(vocab)
    }

    /// Placeholder terms `0..size` for corpora loaded without a term table.
    pub fn numbered(size: usize) -> Self {
        Self::from_terms((0..size).map(|i| i.to_string())).expect("distinct")
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut terms = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let term = line.trim();
            if !term.is_empty() {
                terms.push(term.to_string());
            }
        }
        Self::from_terms(terms)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.terms {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    /// Returns the id of `term`, adding it if unseen.
    pub fn intern(&mut self, term: &str) -> u32 {
        if let Some(&id) = self.index.get(term) {
            return id;
        }
        let id = self.terms.len() as u32;
        self.terms.push(term.to_string());
        self.index.insert(term.to_string(), id);
        id
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: u32) -> &str {
        &self.terms[id as usize]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// A document as a multiset of term ids, stored in ascending id order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: usize,
    words: Vec<u32>,
}

impl Document {
    pub fn new(id: usize, mut words: Vec<u32>) -> Self {
        words.sort_unstable();
        Self { id, words }
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Distinct terms with their counts, ascending by id.
    pub fn term_counts(&self) -> Vec<(u32, u32)> {
        let mut out: Vec<(u32, u32)> = Vec::new();
        for &w in &self.words {
            match out.last_mut() {
                Some((t, c)) if *t == w => *c += 1,
                _ => out.push((w, 1)),
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
    vocabulary: Vocabulary,
    total_tokens: usize,
}

impl Corpus {
    /// Builds a corpus with dense document ids in the given order.
    pub fn new(docs: Vec<Vec<u32>>, vocabulary: Vocabulary) -> Result<Self> {
        let v = vocabulary.len();
        let mut documents = Vec::with_capacity(docs.len());
        for (id, words) in docs.into_iter().enumerate() {
            if let Some(&bad) = words.iter().find(|&&w| w as usize >= v) {
                return Err(Error::TermOutOfRange {
                    line: id + 1,
                    id: bad as usize,
                    vocab_size: v,
                });
            }
            documents.push(Document::new(id, words));
        }
        let total_tokens = documents.iter().map(Document::len).sum();
        Ok(Self {
            documents,
            vocabulary,
            total_tokens,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn doc(&self, d: usize) -> &Document {
        &self.documents[d]
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn num_docs(&self) -> usize {
        self.documents.len()
    }

    pub fn total_tokens(&self) -> usize {
        self.total_tokens
    }

    /// Sub-corpus of the given documents, re-numbered densely.
    pub fn subset(&self, ids: &[usize]) -> Corpus {
        let docs = ids.iter().map(|&i| self.documents[i].words.clone()).collect();
        Corpus::new(docs, self.vocabulary.clone()).expect("ids already validated")
    }

    /// Corpus-wide frequency of every term.
    pub fn term_frequencies(&self) -> Vec<u64> {
        let mut freq = vec![0u64; self.vocab_size()];
        for w in self.documents.iter().flat_map(|d| d.words.iter()) {
            freq[*w as usize] += 1;
        }
        freq
    }

    /// Writes the LDA-C bag-of-words form, one document per line.
    pub fn write_bow<W: Write>(&self, mut w: W) -> Result<()> {
        for doc in &self.documents {
            let counts = doc.term_counts();
            write!(w, "{}", counts.len())?;
            for (t, c) in counts {
                write!(w, " {t}:{c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    BagOfWords,
    RawText,
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Loads a corpus from a stream. Bag-of-words input uses `vocabulary` when
/// given and otherwise numbers terms up to the largest id seen. Raw text is
/// one document per line and builds its own vocabulary.
pub fn load_corpus<R: BufRead>(source: R, format: InputFormat, vocabulary: Option<Vocabulary>) -> Result<Corpus> {
    match format {
        InputFormat::BagOfWords => load_bow(source, vocabulary),
        InputFormat::RawText => {
            let mut docs = Vec::new();
            for line in source.lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    docs.push(tokenize(&line));
                }
            }
            build_vocabulary(&docs, 0).map(|(c, _)| c)
        }
    }
}

fn load_bow<R: BufRead>(source: R, vocabulary: Option<Vocabulary>) -> Result<Corpus> {
    let declared = vocabulary.as_ref().map(Vocabulary::len);
    let mut docs = Vec::new();
    let mut max_id = None::<u32>;
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let mut fields = line.split_whitespace();
        let Some(head) = fields.next() else { continue };
        let malformed = |message: String| Error::Malformed { line: lineno, message };
        let distinct: usize = head
            .parse()
            .map_err(|_| malformed(format!("expected a term count, found {head:?}")))?;
        let mut words = Vec::new();
        let mut pairs = 0;
        for field in fields {
            let (id, count) = field
                .split_once(':')
                .ok_or_else(|| malformed(format!("expected id:count, found {field:?}")))?;
            let id: u32 = id.parse().map_err(|_| malformed(format!("bad term id {id:?}")))?;
            let count: u32 = count.parse().map_err(|_| malformed(format!("bad count {count:?}")))?;
            if let Some(v) = declared {
                if id as usize >= v {
                    return Err(Error::TermOutOfRange {
                        line: lineno,
                        id: id as usize,
                        vocab_size: v,
                    });
                }
            }
            max_id = max_id.max(Some(id));
            words.extend(std::iter::repeat_n(id, count as usize));
            pairs += 1;
        }
        if pairs != distinct {
            return Err(malformed(format!("declared {distinct} terms but found {pairs}")));
        }
        docs.push(words);
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocabulary = vocabulary.unwrap_or_else(|| Vocabulary::numbered(max_id.map_or(0, |m| m as usize + 1)));
    Corpus::new(docs, vocabulary)
}

pub fn load_corpus_file(path: &Path, format: InputFormat, vocab_path: Option<&Path>) -> Result<Corpus> {
    let vocabulary = vocab_path
        .map(|p| Vocabulary::read(BufReader::new(File::open(p)?)))
        .transpose()?;
    if format == InputFormat::RawText && path.is_dir() {
        return load_raw_dir(path);
    }
    load_corpus(BufReader::new(File::open(path)?), format, vocabulary)
}

/// One document per regular file, in file-name order.
fn load_raw_dir(dir: &Path) -> Result<Corpus> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut docs = Vec::with_capacity(files.len());
    for f in files {
        docs.push(tokenize(&std::fs::read_to_string(f)?));
    }
    build_vocabulary(&docs, 0).map(|(c, _)| c)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PruneReport {
    pub kept_terms: usize,
    pub pruned_terms: usize,
    /// Input positions of documents left empty by pruning.
    pub dropped_documents: Vec<usize>,
}

/// Keeps terms appearing in more than `min_doc_freq` documents. Term ids
/// follow first occurrence; documents emptied by pruning are dropped.
pub fn build_vocabulary(raw_docs: &[Vec<String>], min_doc_freq: usize) -> Result<(Corpus, PruneReport)> {
    let mut doc_freq: HashMap<&str, usize> = HashMap::new();
    let mut first_seen: Vec<&str> = Vec::new();
    for doc in raw_docs {
        let mut seen_here = std::collections::HashSet::new();
        for t in doc {
            if seen_here.insert(t.as_str()) {
                let df = doc_freq.entry(t.as_str()).or_insert(0);
                if *df == 0 {
                    first_seen.push(t.as_str());
                }
                *df += 1;
            }
        }
    }
    let mut vocabulary = Vocabulary::new();
    for t in &first_seen {
        if doc_freq[t] > min_doc_freq {
            vocabulary.intern(t);
        }
    }
    let mut report = PruneReport {
        kept_terms: vocabulary.len(),
        pruned_terms: first_seen.len() - vocabulary.len(),
        dropped_documents: Vec::new(),
    };
    if vocabulary.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut docs = Vec::with_capacity(raw_docs.len());
    for (i, doc) in raw_docs.iter().enumerate() {
        let words: Vec<u32> = doc.iter().filter_map(|t| vocabulary.id(t)).collect();
        if words.is_empty() {
            report.dropped_documents.push(i);
        } else {
            docs.push(words);
        }
    }
    if !report.dropped_documents.is_empty() {
        warn!("dropped {} documents left empty by pruning", report.dropped_documents.len());
    }
    Ok((Corpus::new(docs, vocabulary)?, report))
}

#[derive(Clone, Debug)]
pub struct Fold {
    pub train: Corpus,
    pub heldout: Corpus,
    /// Positions in the source corpus, in sub-corpus order.
    pub train_ids: Vec<usize>,
    pub heldout_ids: Vec<usize>,
}

/// Seeded, unstratified k-fold split. Fold sizes differ by at most one.
pub fn split_corpus(corpus: &Corpus, folds: usize, seed: u64) -> Result<Vec<Fold>> {
    let d = corpus.num_docs();
    if folds < 2 || folds > d {
        return Err(Error::InvalidFolds { docs: d, folds });
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let mut heldout_ids: Vec<usize> = order.iter().skip(f).step_by(folds).copied().collect();
        heldout_ids.sort_unstable();
        let train_ids: Vec<usize> = (0..d).filter(|i| heldout_ids.binary_search(i).is_err()).collect();
        out.push(Fold {
            train: corpus.subset(&train_ids),
            heldout: corpus.subset(&heldout_ids),
            train_ids,
            heldout_ids,
        });
    }
    Ok(out)
}
