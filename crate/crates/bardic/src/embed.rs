//! Token embeddings: skip-gram-with-negative-sampling pretraining, the
//! five construction strategies (random, corpus-only, corpus+external,
//! and their retrofitted variants), and the text file format.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{retrofit, Lexicon, RetrofitProblem};
use crate::tensor::{DetRng, Mat};
use crate::text::{ParallelCorpus, Sentence, Vocabulary};

/// Vocabulary-aligned embedding rows plus the fingerprint of the
/// vocabulary they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub rows: Mat,
    pub dim: usize,
    pub vocab_fingerprint: String,
}

impl EmbeddingMatrix {
    /// Uniform random entries in [−0.1, 0.1], one row per vocabulary entry.
    pub fn random(vocab: &Vocabulary, dim: usize, seed: u64) -> Self {
        let mut rng = DetRng::seed_from_u64(seed);
        EmbeddingMatrix {
            rows: Mat::uniform(vocab.len(), dim, 0.1, &mut rng),
            dim,
            vocab_fingerprint: vocab.fingerprint(),
        }
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.rows.rows() != vocab.len() {
            return Err(Error::data(format!(
                "embedding matrix has {} rows for a vocabulary of {}",
                self.rows.rows(),
                vocab.len()
            )));
        }
        if self.vocab_fingerprint != vocab.fingerprint() {
            return Err(Error::data(
                "embedding matrix vocabulary fingerprint mismatch",
            ));
        }
        if !self.rows.is_finite() {
            return Err(Error::NonFinite("embedding matrix".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl SgnsConfig {
    pub fn new(dim: usize, seed: u64) -> Self {
        SgnsConfig {
            dim,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed,
        }
    }
}

/// Cumulative unigram^0.75 table; sampled by binary search so draws are
/// platform-stable.
struct NegativeTable {
    ids: Vec<usize>,
    cumulative: Vec<f64>,
}

impl NegativeTable {
    fn build(counts: &[u64]) -> Self {
        let mut ids = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0f64;
        for (id, &c) in counts.iter().enumerate() {
            if c > 0 {
                acc += (c as f64).powf(0.75);
                ids.push(id);
                cumulative.push(acc);
            }
        }
        NegativeTable { ids, cumulative }
    }

    fn sample(&self, rng: &mut DetRng) -> usize {
        let total = *self.cumulative.last().expect("non-empty negative table");
        let x = rng.uniform(0.0, total);
        let idx = self.cumulative.partition_point(|&c| c <= x);
        self.ids[idx.min(self.ids.len() - 1)]
    }
}

/// One skip-gram training state. The embedding handed back is the SUM of
/// the input and output matrices: the dot products the objective actually
/// shapes are input·output, so the summed rows make co-occurring tokens
/// similar (and never-co-occurring tokens dissimilar) directly, while the
/// zero-initialized output side keeps the epochs=0 case equal to the
/// random init.
struct SgnsTrainer {
    input: Mat,
    output: Mat,
    config: SgnsConfig,
    rng: DetRng,
}

impl SgnsTrainer {
    fn new(vocab_len: usize, config: SgnsConfig) -> Self {
        let mut rng = DetRng::seed_from_u64(config.seed);
        let input = Mat::uniform(vocab_len, config.dim, 0.1, &mut rng);
        let output = Mat::zeros(vocab_len, config.dim);
        SgnsTrainer {
            input,
            output,
            config,
            rng,
        }
    }

    /// One phase of training: `epochs` passes over `encoded`, with the
    /// learning rate decaying linearly across the phase (floored at 1e-4
    /// of its starting value).
    fn train_phase(&mut self, encoded: &[Vec<usize>], epochs: usize) {
        let total_centers: usize = encoded.iter().map(|s| s.len()).sum::<usize>() * epochs;
        if total_centers == 0 {
            return;
        }
        let counts = {
            let mut c = vec![0u64; self.input.rows()];
            for s in encoded {
                for &id in s {
                    c[id] += 1;
                }
            }
            c
        };
        let table = NegativeTable::build(&counts);
        let lr0 = self.config.learning_rate;
        let mut processed = 0usize;
        let mut grad_in = vec![0.0f64; self.config.dim];
        for _ in 0..epochs {
            for sentence in encoded {
                for center_pos in 0..sentence.len() {
                    let lr = lr0 * (1.0 - processed as f64 / total_centers as f64).max(1e-4);
                    processed += 1;
                    let center = sentence[center_pos];
                    // Dynamic window: uniform in 1..=window per center.
                    let b = 1 + self.rng.below(self.config.window);
                    let lo = center_pos.saturating_sub(b);
                    let hi = (center_pos + b).min(sentence.len() - 1);
                    for (ctx_pos, &context) in
                        sentence.iter().enumerate().take(hi + 1).skip(lo)
                    {
                        if ctx_pos == center_pos {
                            continue;
                        }
                        grad_in.iter_mut().for_each(|v| *v = 0.0);
                        for k in 0..=self.config.negatives {
                            let (target, label) = if k == 0 {
                                (center, 1.0)
                            } else {
                                let t = table.sample(&mut self.rng);
                                if t == center {
                                    continue;
                                }
                                (t, 0.0)
                            };
                            let f: f64 = self
                                .input
                                .row(context)
                                .iter()
                                .zip(self.output.row(target))
                                .map(|(a, b)| a * b)
                                .sum();
                            let g = (label - crate::tensor::sigmoid(f)) * lr;
                            for (d, gi) in grad_in.iter_mut().enumerate() {
                                *gi += g * self.output.get(target, d);
                            }
                            for d in 0..self.config.dim {
                                let v = self.output.get(target, d) + g * self.input.get(context, d);
                                self.output.set(target, d, v);
                            }
                        }
                        for (d, &gi) in grad_in.iter().enumerate() {
                            let v = self.input.get(context, d) + gi;
                            self.input.set(context, d, v);
                        }
                    }
                }
            }
        }
    }
}

impl SgnsTrainer {
    fn into_embedding(self, vocab_fingerprint: String) -> EmbeddingMatrix {
        let mut rows = self.input;
        rows.add_assign(&self.output);
        EmbeddingMatrix {
            rows,
            dim: self.config.dim,
            vocab_fingerprint,
        }
    }
}

fn encode_all(sentences: &[Sentence], vocab: &Vocabulary) -> Vec<Vec<usize>> {
    sentences.iter().map(|s| vocab.encode(s)).collect()
}

/// Skip-gram with negative sampling over the given sentences. Tokens
/// outside the vocabulary train the `<unk>` row. Single-threaded and
/// bit-reproducible for a given seed.
pub fn pretrain_sgns(
    sentences: &[Sentence],
    vocab: &Vocabulary,
    config: SgnsConfig,
) -> Result<EmbeddingMatrix> {
    if sentences.is_empty() {
        return Err(Error::data("pretrain_sgns: empty sentence list"));
    }
    if config.window < 1 {
        return Err(Error::Config("sgns window must be ≥ 1".into()));
    }
    let mut trainer = SgnsTrainer::new(vocab.len(), config);
    let encoded = encode_all(sentences, vocab);
    trainer.train_phase(&encoded, config.epochs);
    Ok(trainer.into_embedding(vocab.fingerprint()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbedKind {
    None,
    Plain,
    PlainExt,
    Retro,
    RetroExt,
}

impl EmbedKind {
    pub fn needs_external(self) -> bool {
        matches!(self, EmbedKind::PlainExt | EmbedKind::RetroExt)
    }

    pub fn retrofits(self) -> bool {
        matches!(self, EmbedKind::Retro | EmbedKind::RetroExt)
    }
}

impl std::str::FromStr for EmbedKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(EmbedKind::None),
            "plain" => Ok(EmbedKind::Plain),
            "plain-ext" => Ok(EmbedKind::PlainExt),
            "retro" => Ok(EmbedKind::Retro),
            "retro-ext" => Ok(EmbedKind::RetroExt),
            other => Err(Error::Config(format!(
                "unknown embedding strategy {other:?} (expected none|plain|plain-ext|retro|retro-ext)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedStrategy {
    pub kind: EmbedKind,
    pub external_corpus: Option<PathBuf>,
    pub sgns: SgnsConfig,
}

impl EmbedStrategy {
    pub fn new(kind: EmbedKind, sgns: SgnsConfig) -> Self {
        EmbedStrategy {
            kind,
            external_corpus: None,
            sgns,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kind.needs_external() && self.external_corpus.is_none() {
            return Err(Error::Config(format!(
                "{:?} strategy requires an external corpus",
                self.kind
            )));
        }
        if self.kind == EmbedKind::None && self.external_corpus.is_some() {
            return Err(Error::Config(
                "None strategy does not take an external corpus".into(),
            ));
        }
        Ok(())
    }
}

/// Lexicon pairs as in-vocabulary id constraints; pairs touching an OOV
/// word have no embedding row to pull and are left out.
pub fn lexicon_constraints(lexicon: &Lexicon, vocab: &Vocabulary) -> Vec<(usize, usize)> {
    lexicon
        .pairs
        .iter()
        .filter_map(|(o, m)| match (vocab.id(o), vocab.id(m)) {
            (Some(a), Some(b)) => Some((a, b)),
            _ => None,
        })
        .collect()
}

/// Build embeddings under one of the five strategies:
/// random init; skip-gram on the two training sides; skip-gram on
/// external+training then training alone for the same number of epochs;
/// and the two retrofitted variants of the latter two.
pub fn build_embeddings(
    strategy: &EmbedStrategy,
    train: &ParallelCorpus,
    lexicon: &Lexicon,
    vocab: &Vocabulary,
) -> Result<EmbeddingMatrix> {
    strategy.validate()?;
    let fingerprint = vocab.fingerprint();
    let training_sentences: Vec<Sentence> =
        train.sources().chain(train.targets()).cloned().collect();
    let base = match strategy.kind {
        EmbedKind::None => {
            return Ok(EmbeddingMatrix::random(
                vocab,
                strategy.sgns.dim,
                strategy.sgns.seed,
            ))
        }
        EmbedKind::Plain | EmbedKind::Retro => {
            pretrain_sgns(&training_sentences, vocab, strategy.sgns)?
        }
        EmbedKind::PlainExt | EmbedKind::RetroExt => {
            let path = strategy.external_corpus.as_ref().expect("validated");
            let external = crate::text::load_sentences(path)?;
            if external.is_empty() {
                return Err(Error::data(format!(
                    "external corpus {} has no sentences",
                    path.display()
                )));
            }
            let mut trainer = SgnsTrainer::new(vocab.len(), strategy.sgns);
            let mut joint: Vec<Sentence> = external;
            joint.extend(training_sentences.iter().cloned());
            let joint_encoded = encode_all(&joint, vocab);
            trainer.train_phase(&joint_encoded, strategy.sgns.epochs);
            // Adaptation: the same number of epochs on training data alone.
            let train_encoded = encode_all(&training_sentences, vocab);
            trainer.train_phase(&train_encoded, strategy.sgns.epochs);
            trainer.into_embedding(fingerprint.clone())
        }
    };
    if !strategy.kind.retrofits() {
        return Ok(base);
    }
    let constraints = lexicon_constraints(lexicon, vocab);
    let problem = RetrofitProblem::with_defaults(base.rows, constraints);
    Ok(EmbeddingMatrix {
        rows: retrofit(&problem)?,
        dim: base.dim,
        vocab_fingerprint: base.vocab_fingerprint,
    })
}

/// Write the text format: header `<count> <dim>`, then `token v1 … vM`
/// per row. Floats use the shortest decimal form that parses back to the
/// identical bits.
pub fn save_embeddings(matrix: &EmbeddingMatrix, vocab: &Vocabulary, path: &Path) -> Result<()> {
    matrix.validate(vocab)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut body = String::new();
    body.push_str(&format!("{} {}\n", vocab.len(), matrix.dim));
    for id in 0..vocab.len() {
        body.push_str(vocab.token(id));
        for v in matrix.rows.row(id) {
            body.push(' ');
            body.push_str(&format!("{v}"));
        }
        body.push('\n');
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: &Path, vocab: &Vocabulary) -> Result<EmbeddingMatrix> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = body.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::data(format!("embedding file {} is empty", path.display())))?;
    let mut parts = header.split_whitespace();
    let count: usize = parts
        .next()
        .and_then(|p| p.parse().ok())
        .ok_or_else(|| malformed(path, 1, "header must be `<count> <dim>`"))?;
    let dim: usize = parts
        .next()
        .and_then(|p| p.parse().ok())
        .ok_or_else(|| malformed(path, 1, "header must be `<count> <dim>`"))?;
    if count != vocab.len() {
        return Err(Error::data(format!(
            "embedding file {} has {count} rows for a vocabulary of {}",
            path.display(),
            vocab.len()
        )));
    }
    let mut rows = Mat::zeros(count, dim);
    let mut filled = vec![false; count];
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields
            .next()
            .ok_or_else(|| malformed(path, line_no, "missing token"))?;
        let id = vocab.id(token).ok_or_else(|| {
            malformed(path, line_no, &format!("token {token:?} not in vocabulary"))
        })?;
        if filled[id] {
            return Err(malformed(
                path,
                line_no,
                &format!("duplicate token {token:?}"),
            ));
        }
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| malformed(path, line_no, &format!("bad float: {e}")))?;
        if values.len() != dim {
            return Err(malformed(
                path,
                line_no,
                &format!("expected {dim} values, found {}", values.len()),
            ));
        }
        rows.row_mut(id).copy_from_slice(&values);
        filled[id] = true;
    }
    if let Some(missing) = filled.iter().position(|&f| !f) {
        return Err(Error::data(format!(
            "embedding file {} missing row for token {:?}",
            path.display(),
            vocab.token(missing)
        )));
    }
    let matrix = EmbeddingMatrix {
        rows,
        dim,
        vocab_fingerprint: vocab.fingerprint(),
    };
    matrix.validate(vocab)?;
    Ok(matrix)
}

fn malformed(path: &Path, line: usize, detail: &str) -> Error {
    Error::Malformed {
        what: format!("embedding file {}", path.display()),
        line,
        detail: detail.to_string(),
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot = crate::tensor::dot(a, b);
    let na = crate::tensor::dot(a, a).sqrt();
    let nb = crate::tensor::dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
