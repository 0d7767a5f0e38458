//! Batched teacher-forced training with Adam, checkpointing, and
//! validation-BLEU model selection.
//!
//! Each epoch shuffles the training pairs with a permutation derived from
//! `(shuffle_seed, epoch)`, walks consecutive batches, and applies one Adam
//! step per batch on the batch-mean gradient. After every epoch the
//! validation set is greedily decoded and scored with BLEU; the checkpoint
//! returned is the one with the highest validation BLEU, earlier epoch
//! winning ties. Everything is deterministic given the seeds.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decode::greedy_decode;
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::metrics::bleu;
use crate::model::{backward, decode_step, forward_loss, ModelConfig, ModelParams};
use crate::tensor::{AdamHyper, AdamSlot, AdamState, DetRng};
use crate::text::{ParallelCorpus, Sentence, Vocabulary, PAD, START, STOP};

/// Default global-norm gradient clip.
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// Optimization settings. `clip_norm: None` disables gradient clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub shuffle_seed: u64,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 15,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            shuffle_seed: 0,
            clip_norm: Some(DEFAULT_CLIP_NORM),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

    fn adam_hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// One shuffled batch. Rows are padded with PAD to the batch maximum on each
/// side; [`Batch::example`] recovers the true-length slices, which is what
/// the loss consumes — so PAD never enters the encoder recurrence and a
/// length-3 target always costs exactly 4 prediction steps (3 tokens + STOP).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub sources: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
    pub source_lens: Vec<usize>,
    pub target_lens: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// True-length (source, target) id slices for example `i`.
    pub fn example(&self, i: usize) -> (&[usize], &[usize]) {
        (
            &self.sources[i][..self.source_lens[i]],
            &self.targets[i][..self.target_lens[i]],
        )
    }
}

/// Shuffle `pairs` with a permutation derived from `(seed, epoch)` and group
/// them into consecutive batches of at most `batch_size`.
pub fn make_batches(
    pairs: &[(Vec<usize>, Vec<usize>)],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Batch>> {
    if pairs.is_empty() {
        return Err(Error::data("cannot batch an empty corpus"));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    DetRng::seed_from_u64(seed)
        .split(epoch as u64)
        .shuffle(&mut order);

    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        let src_max = chunk.iter().map(|&i| pairs[i].0.len()).max().unwrap();
        let tgt_max = chunk.iter().map(|&i| pairs[i].1.len()).max().unwrap();
        let mut batch = Batch {
            sources: Vec::with_capacity(chunk.len()),
            targets: Vec::with_capacity(chunk.len()),
            source_lens: Vec::with_capacity(chunk.len()),
            target_lens: Vec::with_capacity(chunk.len()),
        };
        for &i in chunk {
            let (src, tgt) = &pairs[i];
            let mut s = src.clone();
            s.resize(src_max, PAD);
            let mut t = tgt.clone();
            t.resize(tgt_max, PAD);
            batch.sources.push(s);
            batch.targets.push(t);
            batch.source_lens.push(src.len());
            batch.target_lens.push(tgt.len());
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// Loss and validation score for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Mean per-example training objective over the epoch.
    pub train_loss: f64,
    pub valid_bleu: f64,
    /// Probability-floor clamps observed during the epoch.
    pub clamp_incidents: u64,
}

/// A saved model: configuration snapshot, parameters, optimizer state, and
/// the validation score that selected it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    /// Free-form description of how the embeddings were produced.
    pub strategy: String,
    pub vocab_fingerprint: String,
    /// 1-based epoch this snapshot was taken after.
    pub epoch: usize,
    pub valid_bleu: f64,
    pub params: ModelParams,
    pub adam: AdamState,
}

/// The selected checkpoint plus the full per-epoch record.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: Vec<EpochRecord>,
}

fn encode_corpus(
    corpus: &ParallelCorpus,
    vocab: &Vocabulary,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    corpus
        .pairs
        .iter()
        .enumerate()
        .map(|(i, (s, t))| {
            if s.is_empty() || t.is_empty() {
                return Err(Error::Data(format!("pair {i} has an empty side")));
            }
            Ok((vocab.encode(s), vocab.encode(t)))
        })
        .collect()
}

/// acc += s * g, tensor by tensor.
fn add_scaled(acc: &mut ModelParams, g: &ModelParams, s: f64) {
    for ((_, a), (_, _, b)) in acc.named_tensors_mut().into_iter().zip(g.named_tensors()) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += s * y;
        }
    }
}

fn global_norm(g: &ModelParams) -> f64 {
    g.named_tensors()
        .iter()
        .flat_map(|(_, _, vals)| vals.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

fn scale_params(g: &mut ModelParams, s: f64) {
    for (_, vals) in g.named_tensors_mut() {
        for x in vals {
            *x *= s;
        }
    }
}

fn embedding_snapshot(params: &ModelParams) -> Vec<(String, Vec<f64>)> {
    params
        .named_tensors()
        .into_iter()
        .filter(|(name, _, _)| name.starts_with("embed."))
        .map(|(name, _, vals)| (name, vals.to_vec()))
        .collect()
}

/// Train a model and return the checkpoint with the highest validation BLEU
/// (ties go to the earlier epoch), along with the per-epoch history.
///
/// `seed` initializes the parameters; shuffling is governed separately by
/// `train_config.shuffle_seed` so the two can be varied independently.
#[allow(clippy::too_many_arguments)]
pub fn train_model(
    train: &ParallelCorpus,
    valid: &ParallelCorpus,
    vocab: &Vocabulary,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    embeddings: Option<&EmbeddingMatrix>,
    strategy: &str,
    seed: u64,
) -> Result<TrainOutcome> {
    model_config.validate()?;
    train_config.validate()?;
    let fingerprint = vocab.fingerprint();
    if let Some(table) = embeddings {
        if table.vocab_fingerprint != fingerprint {
            return Err(Error::Config(format!(
                "embedding fingerprint {} does not match vocabulary fingerprint {}",
                table.vocab_fingerprint, fingerprint
            )));
        }
    }
    if vocab.len() != model_config.vocab_size {
        return Err(Error::Config(format!(
            "model vocab_size {} does not match vocabulary of {} tokens",
            model_config.vocab_size,
            vocab.len()
        )));
    }

    let encoded_train = encode_corpus(train, vocab)?;
    if valid.is_empty() {
        return Err(Error::data("validation corpus is empty"));
    }

    let mut params = ModelParams::init(model_config, seed, embeddings)?;
    let mut adam = AdamState::new(train_config.adam_hyper());
    let fixed_embed = model_config
        .embeddings_fixed
        .then(|| embedding_snapshot(&params));

    let mut history: Vec<EpochRecord> = Vec::with_capacity(train_config.epochs);
    let mut best: Option<Checkpoint> = None;

    for epoch in 1..=train_config.epochs {
        let batches = make_batches(
            &encoded_train,
            train_config.batch_size,
            train_config.shuffle_seed,
            epoch,
        )?;
        let mut epoch_loss = 0.0;
        let mut clamp_incidents = 0u64;

        for (bi, batch) in batches.iter().enumerate() {
            let diag = |err: Error| {
                Error::NonFinite(format!(
                    "epoch {epoch}, batch {bi} ({} examples): {err}",
                    batch.len()
                ))
            };
            let mut grads = params.zeros_like();
            let weight = 1.0 / batch.len() as f64;
            for i in 0..batch.len() {
                let (src, tgt) = batch.example(i);
                let pass = forward_loss(src, tgt, &params, model_config).map_err(diag)?;
                let loss = pass.total_loss(model_config);
                if !loss.is_finite() {
                    return Err(diag(Error::NonFinite(format!("loss {loss}"))));
                }
                epoch_loss += loss;
                clamp_incidents += pass.clamp_incidents as u64;
                let g = backward(&pass, &params, model_config).map_err(diag)?;
                add_scaled(&mut grads, &g, weight);
            }
            if let Some(clip) = train_config.clip_norm {
                let norm = global_norm(&grads);
                if norm > clip {
                    scale_params(&mut grads, clip / norm);
                }
            }
            adam.begin_step();
            for ((name, p), (gname, _, g)) in params
                .named_tensors_mut()
                .into_iter()
                .zip(grads.named_tensors())
            {
                debug_assert_eq!(name, gname);
                if model_config.embeddings_fixed && name.starts_with("embed.") {
                    continue;
                }
                adam.update(&name, p, g).map_err(diag)?;
            }
        }

        params.validate_shapes(model_config)?;
        if let Some(initial) = &fixed_embed {
            assert!(
                embedding_snapshot(&params) == *initial,
                "fixed embeddings drifted during epoch {epoch}"
            );
        }

        let candidates: Vec<Sentence> = valid
            .sources()
            .map(|src| greedy_decode(src, vocab, &params, model_config, None).map(|r| r.tokens))
            .collect::<Result<_>>()?;
        let references: Vec<Sentence> = valid.targets().cloned().collect();
        let valid_bleu = bleu(&candidates, &references)?.bleu;

        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / encoded_train.len() as f64,
            valid_bleu,
            clamp_incidents,
        });

        let improved = best.as_ref().is_none_or(|b| valid_bleu > b.valid_bleu);
        if improved {
            best = Some(Checkpoint {
                model_config: *model_config,
                train_config: train_config.clone(),
                strategy: strategy.to_string(),
                vocab_fingerprint: fingerprint.clone(),
                epoch,
                valid_bleu,
                params: params.clone(),
                adam: adam.clone(),
            });
        }
    }

    Ok(TrainOutcome {
        best: best.expect("at least one epoch ran"),
        history,
    })
}

/// Teacher-forced prediction accuracy: the fraction of steps (target tokens
/// plus the final STOP) where the model's argmax matches the reference.
pub fn token_accuracy(
    corpus: &ParallelCorpus,
    vocab: &Vocabulary,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<f64> {
    let mut correct = 0u64;
    let mut total = 0u64;
    for (src, tgt) in &corpus.pairs {
        let src_ids = vocab.encode(src);
        let tgt_ids = vocab.encode(tgt);
        let enc = crate::model::encode(&src_ids, params, config)?;
        let mut h = vec![0.0; config.hidden_dim];
        let mut c = vec![0.0; config.hidden_dim];
        let mut y_prev = START;
        for t in 0..=tgt_ids.len() {
            let y_true = if t < tgt_ids.len() { tgt_ids[t] } else { STOP };
            let out = decode_step(y_prev, &h, &c, &enc, params, config)?;
            let mut arg = STOP;
            for (id, &p) in out.p.iter().enumerate() {
                if id == PAD || id == START {
                    continue;
                }
                if p > out.p[arg] {
                    arg = id;
                }
            }
            if arg == y_true {
                correct += 1;
            }
            total += 1;
            y_prev = y_true;
            h = out.h;
            c = out.c;
        }
    }
    Ok(correct as f64 / total as f64)
}

// --- Checkpoint files ------------------------------------------------------
//
// Layout: magic `BARD`, u32 version, u64-length-prefixed JSON header, then
// one block per tensor: u16 name length, name bytes, u8 rank, u64 dims,
// little-endian f64 payload. Parameter tensors come first in their canonical
// order, then Adam moments as `adam.<tensor>.m` / `.v`.

const CHECKPOINT_MAGIC: &[u8; 4] = b"BARD";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    model_config: ModelConfig,
    train_config: TrainConfig,
    strategy: String,
    vocab_fingerprint: String,
    epoch: usize,
    valid_bleu: f64,
    adam_hyper: AdamHyper,
    adam_t: u64,
}

fn write_block<W: Write>(
    w: &mut W,
    name: &str,
    dims: &[usize],
    vals: &[f64],
) -> std::io::Result<()> {
    let name_bytes = name.as_bytes();
    w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
    w.write_all(name_bytes)?;
    w.write_all(&[dims.len() as u8])?;
    for &d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_checkpoint<W: Write>(w: &mut W, ckpt: &Checkpoint) -> Result<()> {
    let header = CheckpointHeader {
        model_config: ckpt.model_config,
        train_config: ckpt.train_config.clone(),
        strategy: ckpt.strategy.clone(),
        vocab_fingerprint: ckpt.vocab_fingerprint.clone(),
        epoch: ckpt.epoch,
        valid_bleu: ckpt.valid_bleu,
        adam_hyper: ckpt.adam.hyper,
        adam_t: ckpt.adam.t,
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("cannot encode header: {e}")))?;
    let io = |e| Error::Checkpoint(format!("write failure: {e}"));
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes())
        .map_err(io)?;
    w.write_all(&json).map_err(io)?;

    for (name, dims, vals) in ckpt.params.named_tensors() {
        write_block(w, &name, &dims, vals).map_err(io)?;
    }
    for (name, slot) in &ckpt.adam.slots {
        write_block(w, &format!("adam.{name}.m"), &[slot.m.len()], &slot.m).map_err(io)?;
        write_block(w, &format!("adam.{name}.v"), &[slot.v.len()], &slot.v).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    write_checkpoint(&mut w, ckpt)
}

struct BlockReader<R: Read> {
    inner: R,
}

/// One length-prefixed tensor record: name, dims, row-major values.
type TensorBlock = (String, Vec<usize>, Vec<f64>);

impl<R: Read> BlockReader<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|_| Error::Checkpoint("unexpected end of tensor block".into()))
    }

    /// Reads the next block; `Ok(None)` at clean end-of-file.
    fn next_block(&mut self) -> Result<Option<TensorBlock>> {
        let mut len2 = [0u8; 2];
        match self
            .inner
            .read(&mut len2)
            .map_err(|e| Error::Checkpoint(format!("read failure: {e}")))?
        {
            0 => return Ok(None),
            1 => self.fill(&mut len2[1..])?,
            _ => {}
        }
        let name_len = u16::from_le_bytes(len2) as usize;
        let mut name = vec![0u8; name_len];
        self.fill(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name is not valid UTF-8".into()))?;
        let mut rank = [0u8; 1];
        self.fill(&mut rank)?;
        let mut dims = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            let mut d = [0u8; 8];
            self.fill(&mut d)?;
            dims.push(u64::from_le_bytes(d) as usize);
        }
        let count: usize = dims.iter().product();
        let mut vals = Vec::with_capacity(count);
        for _ in 0..count {
            let mut v = [0u8; 8];
            self.fill(&mut v)?;
            vals.push(f64::from_le_bytes(v));
        }
        Ok(Some((name, dims, vals)))
    }
}

/// Load a checkpoint, validating magic bytes, format version, and that it
/// was trained against the vocabulary identified by `expected_fingerprint`.
pub fn load_checkpoint(path: &Path, expected_fingerprint: &str) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("unexpected end of checkpoint header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(
            "bad magic bytes (not a checkpoint file)".into(),
        ));
    }
    let mut ver = [0u8; 4];
    r.read_exact(&mut ver)
        .map_err(|_| Error::Checkpoint("unexpected end of checkpoint header".into()))?;
    let version = u32::from_le_bytes(ver);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let mut json_len = [0u8; 8];
    r.read_exact(&mut json_len)
        .map_err(|_| Error::Checkpoint("unexpected end of checkpoint header".into()))?;
    let mut json = vec![0u8; u64::from_le_bytes(json_len) as usize];
    r.read_exact(&mut json)
        .map_err(|_| Error::Checkpoint("unexpected end of checkpoint header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&json)
        .map_err(|e| Error::Checkpoint(format!("cannot decode header: {e}")))?;
    if header.vocab_fingerprint != expected_fingerprint {
        return Err(Error::Checkpoint(format!(
            "vocabulary fingerprint mismatch: checkpoint has {}, expected {}",
            header.vocab_fingerprint, expected_fingerprint
        )));
    }

    let mut reader = BlockReader { inner: r };
    let mut blocks = std::collections::BTreeMap::new();
    while let Some((name, dims, vals)) = reader.next_block()? {
        if blocks.insert(name.clone(), (dims, vals)).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor block {name}")));
        }
    }

    let mut params = ModelParams::init(&header.model_config, 0, None)?;
    let expected_shapes: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, d, _)| (n, d))
        .collect();
    for (name, p) in params.named_tensors_mut() {
        let (dims, vals) = blocks
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor block {name}")))?;
        let expected = &expected_shapes.iter().find(|(n, _)| *n == name).unwrap().1;
        if &dims != expected || vals.len() != p.len() {
            return Err(Error::Checkpoint(format!(
                "tensor block {name} has shape {dims:?}, expected {expected:?}"
            )));
        }
        p.copy_from_slice(&vals);
    }

    let mut adam = AdamState::new(header.adam_hyper);
    adam.t = header.adam_t;
    for (name, _) in &expected_shapes {
        let m_key = format!("adam.{name}.m");
        let v_key = format!("adam.{name}.v");
        match (blocks.remove(&m_key), blocks.remove(&v_key)) {
            (Some((_, m)), Some((_, v))) => {
                adam.slots.insert(name.clone(), AdamSlot { m, v });
            }
            (None, None) => {} // tensor never updated (e.g. fixed embeddings)
            _ => {
                return Err(Error::Checkpoint(format!(
                    "optimizer blocks for {name} are incomplete"
                )));
            }
        }
    }
    if let Some(name) = blocks.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor block {name}")));
    }

    Ok(Checkpoint {
        model_config: header.model_config,
        train_config: header.train_config,
        strategy: header.strategy,
        vocab_fingerprint: header.vocab_fingerprint,
        epoch: header.epoch,
        valid_bleu: header.valid_bleu,
        params,
        adam,
    })
}
