//! Greedy decoding with attention-guided UNK replacement.
//!
//! Decoding starts the decoder from START with a zero state, repeatedly picks
//! the most likely next token (PAD and START are never emitted; probability
//! ties break toward the lowest vocabulary id), and feeds the prediction back
//! until STOP or a length cap derived from the source length. The per-step
//! attention over source positions is kept alongside the output so UNK tokens
//! can be swapped for their best-aligned source words afterwards — which may
//! produce words outside the vocabulary entirely.

use crate::error::Result;
use crate::model::{decode_step, encode, ModelConfig, ModelParams};
use crate::text::{Sentence, Vocabulary, PAD, START, STOP, UNK};

/// Hard ceiling on emitted tokens regardless of source length.
pub const MAX_OUTPUT_CAP: usize = 100;

/// Longest output permitted for a source of `t_enc` tokens:
/// ⌈1.5·t_enc⌉ + 5, capped at [`MAX_OUTPUT_CAP`].
pub fn max_output_len(t_enc: usize) -> usize {
    ((3 * t_enc).div_ceil(2) + 5).min(MAX_OUTPUT_CAP)
}

/// Attention summary for one decoder step: the distribution over source
/// positions and the sentinel gate.
#[derive(Debug, Clone, PartialEq)]
pub struct StepAttention {
    /// Normalized attention per source position; sums to `1 - g`.
    pub beta: Vec<f64>,
    /// Sentinel gate (vocabulary-distribution weight in the mixture).
    pub g: f64,
}

/// Output of [`greedy_decode`] for a single sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Emitted token ids, STOP excluded.
    pub ids: Vec<usize>,
    /// Emitted tokens, STOP excluded.
    pub tokens: Sentence,
    /// One entry per decoder step, including the step that emitted STOP.
    pub trace: Vec<StepAttention>,
    /// `(step, source position)` for every UNK emission: the position is the
    /// argmax of that step's attention, leftmost on ties. Applied by
    /// [`unk_replace`].
    pub unk_replacements: Vec<(usize, usize)>,
}

/// Greedily decode `source`, bounding output length by `max_len` when given
/// and by [`max_output_len`] otherwise.
pub fn greedy_decode(
    source: &Sentence,
    vocab: &Vocabulary,
    params: &ModelParams,
    config: &ModelConfig,
    max_len: Option<usize>,
) -> Result<DecodeResult> {
    let source_ids = vocab.encode(source);
    let enc = encode(&source_ids, params, config)?;
    let cap = max_len.unwrap_or_else(|| max_output_len(source_ids.len()));

    let mut ids = Vec::new();
    let mut trace = Vec::new();
    let mut unk_replacements = Vec::new();
    let mut h = vec![0.0; config.hidden_dim];
    let mut c = vec![0.0; config.hidden_dim];
    let mut y_prev = START;

    for step in 0..cap {
        let out = decode_step(y_prev, &h, &c, &enc, params, config)?;
        let beta = out.att.beta().to_vec();
        let g = out.att.g();

        let mut best = STOP;
        for (id, &p) in out.p.iter().enumerate() {
            if id == PAD || id == START {
                continue;
            }
            if p > out.p[best] {
                best = id;
            }
        }
        trace.push(StepAttention { beta, g });
        if best == STOP {
            break;
        }
        if best == UNK {
            let row = &trace[step].beta;
            let mut peak = 0;
            for (j, &b) in row.iter().enumerate() {
                if b > row[peak] {
                    peak = j;
                }
            }
            unk_replacements.push((step, peak));
        }
        ids.push(best);
        y_prev = best;
        h = out.h;
        c = out.c;
    }

    let tokens = Sentence(ids.iter().map(|&id| vocab.token(id).to_string()).collect());
    Ok(DecodeResult {
        ids,
        tokens,
        trace,
        unk_replacements,
    })
}

/// Replace each UNK output token with the source word its decoder step
/// attended to most. Sentence length never changes; the result contains no
/// UNK tokens (every replacement slot was recorded during decoding).
pub fn unk_replace(result: &DecodeResult, source: &Sentence) -> Sentence {
    let mut tokens = result.tokens.0.clone();
    for &(step, pos) in &result.unk_replacements {
        tokens[step] = source.tokens()[pos].clone();
    }
    Sentence(tokens)
}

/// Render the attention trace as TSV: one row per decoder step (STOP step
/// included), one column per source token plus a final SENTINEL column,
/// weights with six decimals. A header row names the columns.
pub fn attention_tsv(result: &DecodeResult, source: &Sentence) -> String {
    let mut out = String::new();
    for tok in source.tokens() {
        out.push_str(tok);
        out.push('\t');
    }
    out.push_str("SENTINEL\n");
    for step in &result.trace {
        for &b in &step.beta {
            out.push_str(&format!("{b:.6}\t"));
        }
        out.push_str(&format!("{:.6}\n", step.g));
    }
    out
}
