use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{axpy, softmax, LstmStep};
use crate::text::{PAD, START, STOP};

/// Additive score mask for PAD source positions: large enough that the
/// masked weight underflows to exactly 0 after softmax.
const PAD_MASK: f64 = -1e30;

/// Floor for log arguments in the losses; a clamped step is counted and
/// contributes no gradient.
pub const PROB_FLOOR: f64 = 1e-30;

/// Sentinel weight above which the pointer renormalization 1/(1−g) is
/// numerically meaningless.
pub const SATURATION_EDGE: f64 = 1.0 - 1e-12;

/// Bidirectional encoder output: one combined state per source position
/// (forward state + backward state, elementwise), plus the per-cell caches
/// the backward pass replays.
#[derive(Debug, Clone)]
pub struct EncoderStates {
    pub h_enc: Vec<Vec<f64>>,
    pub source_ids: Vec<usize>,
    pub(crate) fwd_steps: Vec<LstmStep>,
    pub(crate) bwd_steps: Vec<LstmStep>,
}

impl EncoderStates {
    /// Number of source positions.
    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }
}

/// Left-to-right and right-to-left LSTM scans from zero states, summed
/// per position.
pub fn encode(
    source_ids: &[usize],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<EncoderStates> {
    if source_ids.is_empty() {
        return Err(Error::data("cannot encode an empty source"));
    }
    let emb = params.embeddings.enc();
    if let Some(&bad) = source_ids.iter().find(|&&id| id >= emb.rows()) {
        return Err(Error::Data(format!(
            "source id {bad} outside vocabulary of size {}",
            emb.rows()
        )));
    }
    let h_dim = config.hidden_dim;
    let s_len = source_ids.len();

    let mut fwd_steps = Vec::with_capacity(s_len);
    let mut h_prev = vec![0.0; h_dim];
    let mut c_prev = vec![0.0; h_dim];
    for &id in source_ids {
        let step = params.enc_fwd.forward(emb.row(id), &h_prev, &c_prev)?;
        h_prev.copy_from_slice(&step.h);
        c_prev.copy_from_slice(&step.c);
        fwd_steps.push(step);
    }

    let mut bwd_steps: Vec<Option<LstmStep>> = (0..s_len).map(|_| None).collect();
    h_prev.fill(0.0);
    c_prev.fill(0.0);
    for t in (0..s_len).rev() {
        let step = params
            .enc_bwd
            .forward(emb.row(source_ids[t]), &h_prev, &c_prev)?;
        h_prev.copy_from_slice(&step.h);
        c_prev.copy_from_slice(&step.c);
        bwd_steps[t] = Some(step);
    }
    let bwd_steps: Vec<LstmStep> = bwd_steps.into_iter().map(|s| s.unwrap()).collect();

    let h_enc = (0..s_len)
        .map(|t| {
            fwd_steps[t]
                .h
                .iter()
                .zip(&bwd_steps[t].h)
                .map(|(f, b)| f + b)
                .collect()
        })
        .collect();
    Ok(EncoderStates {
        h_enc,
        source_ids: source_ids.to_vec(),
        fwd_steps,
        bwd_steps,
    })
}

/// Attention over encoder states plus the sentinel slot.
///
/// `alpha_norm` has `T_enc + 1` entries: weights over source positions
/// (`beta`) followed by the sentinel weight (`g`).
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub alpha_norm: Vec<f64>,
    pub query: Vec<f64>,
    /// tanh(F[i,j]·q[j]) cache, (T_enc+1)×H row-major; replayed in backward.
    pub(crate) tanh: Vec<f64>,
}

impl AttentionOutput {
    /// Weights over source positions (all but the sentinel slot).
    pub fn beta(&self) -> &[f64] {
        &self.alpha_norm[..self.alpha_norm.len() - 1]
    }

    /// Sentinel weight — the gate on the vocabulary distribution.
    pub fn g(&self) -> f64 {
        *self.alpha_norm.last().expect("alpha_norm never empty")
    }
}

/// Score each encoder state and the sentinel against the projected query:
/// q = h_dec_prev·W_q, score_i = Σ_j tanh(F[i,j]·q_j) + bias, softmaxed.
/// PAD source positions are masked out before the softmax.
pub fn attend(
    h_dec_prev: &[f64],
    enc: &EncoderStates,
    params: &ModelParams,
) -> Result<AttentionOutput> {
    let h_dim = params.w_q.rows();
    if h_dec_prev.len() != h_dim {
        return Err(Error::Shape {
            context: "attention query input",
            expected: h_dim.to_string(),
            actual: h_dec_prev.len().to_string(),
        });
    }
    let query = params.w_q.vec_mul(h_dec_prev);
    let s_len = enc.len();
    let mut tanh = Vec::with_capacity((s_len + 1) * h_dim);
    let mut scores = Vec::with_capacity(s_len + 1);
    for i in 0..=s_len {
        let (row, mut score): (&[f64], f64) = if i < s_len {
            (&enc.h_enc[i], params.b_enc)
        } else {
            (&params.sentinel, params.b_sent)
        };
        for j in 0..h_dim {
            let t = (row[j] * query[j]).tanh();
            tanh.push(t);
            score += t;
        }
        if i < s_len && enc.source_ids[i] == PAD {
            score += PAD_MASK;
        }
        scores.push(score);
    }
    let alpha_norm = softmax(&scores)?;
    Ok(AttentionOutput {
        alpha_norm,
        query,
        tanh,
    })
}

/// Copy distribution over the vocabulary: source-position weights beta,
/// renormalized by 1−g, aggregated by token id (repeats and UNK-mapped
/// tokens pool their mass).
///
/// Returns the distribution and a saturation flag: when g has consumed
/// essentially all attention mass (g ≥ 1−1e-12) the renormalization is
/// meaningless, so the fallback is uniform over non-PAD source positions
/// and the flag is true.
pub fn pointer_dist(
    att: &AttentionOutput,
    source_ids: &[usize],
    vocab_size: usize,
) -> (Vec<f64>, bool) {
    debug_assert_eq!(att.beta().len(), source_ids.len());
    let mut dist = vec![0.0; vocab_size];
    let g = att.g();
    if g >= SATURATION_EDGE {
        let real: Vec<usize> = source_ids.iter().copied().filter(|&id| id != PAD).collect();
        let pool: &[usize] = if real.is_empty() { source_ids } else { &real };
        let share = 1.0 / pool.len() as f64;
        for &id in pool {
            dist[id] += share;
        }
        return (dist, true);
    }
    let inv = 1.0 / (1.0 - g);
    for (j, &id) in source_ids.iter().enumerate() {
        dist[id] += att.beta()[j] * inv;
    }
    (dist, false)
}

/// Convex combination of the vocabulary and copy distributions, gated by
/// the sentinel weight.
pub(crate) fn mixture(g: f64, p_lstm: &[f64], p_ptr: &[f64]) -> Vec<f64> {
    p_lstm
        .iter()
        .zip(p_ptr)
        .map(|(l, c)| g * l + (1.0 - g) * c)
        .collect()
}

/// Everything one decoder step produces.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub att: AttentionOutput,
    /// Vocabulary (RNN) distribution.
    pub p_lstm: Vec<f64>,
    /// Copy distribution (support ⊆ source tokens, OOV pooled on UNK).
    pub p_ptr: Vec<f64>,
    /// Mixture actually emitted: g·p_lstm + (1−g)·p_ptr, or p_lstm alone
    /// when copying is disabled.
    pub p: Vec<f64>,
    pub context: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub pointer_degenerate: bool,
}

/// Shared core of a decoder step: attention, context, cell update, and the
/// vocabulary softmax. Mixture assembly and loss bookkeeping differ between
/// inference and training and live in the callers.
struct RawStep {
    att: AttentionOutput,
    context: Vec<f64>,
    cell: LstmStep,
    p_lstm: Vec<f64>,
}

fn run_step(
    y_prev: usize,
    h_prev: &[f64],
    c_prev: &[f64],
    enc: &EncoderStates,
    params: &ModelParams,
) -> Result<RawStep> {
    let emb = params.embeddings.dec();
    if y_prev >= emb.rows() {
        return Err(Error::Data(format!(
            "decoder input id {y_prev} outside vocabulary of size {}",
            emb.rows()
        )));
    }
    let att = attend(h_prev, enc, params)?;
    let h_dim = h_prev.len();
    let mut context = vec![0.0; h_dim];
    for (j, h_j) in enc.h_enc.iter().enumerate() {
        axpy(&mut context, att.beta()[j], h_j);
    }
    let mut input = Vec::with_capacity(emb.cols() + h_dim);
    input.extend_from_slice(emb.row(y_prev));
    input.extend_from_slice(&context);
    let cell = params.dec.forward(&input, h_prev, c_prev)?;
    let mut z = Vec::with_capacity(2 * h_dim);
    z.extend_from_slice(&cell.h);
    z.extend_from_slice(&context);
    let mut logits = params.w_out.vec_mul(&z);
    for (l, b) in logits.iter_mut().zip(&params.b_out) {
        *l += b;
    }
    let p_lstm = softmax(&logits)?;
    Ok(RawStep {
        att,
        context,
        cell,
        p_lstm,
    })
}

/// One greedy/inference decoder step from state `(h_prev, c_prev)` after
/// emitting `y_prev`.
pub fn decode_step(
    y_prev: usize,
    h_prev: &[f64],
    c_prev: &[f64],
    enc: &EncoderStates,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<StepOutput> {
    let raw = run_step(y_prev, h_prev, c_prev, enc, params)?;
    let (p_ptr, pointer_degenerate) = pointer_dist(&raw.att, &enc.source_ids, config.vocab_size);
    let p = if config.copy_enabled {
        mixture(raw.att.g(), &raw.p_lstm, &p_ptr)
    } else {
        raw.p_lstm.clone()
    };
    Ok(StepOutput {
        h: raw.cell.h.clone(),
        c: raw.cell.c.clone(),
        att: raw.att,
        p_lstm: raw.p_lstm,
        p_ptr,
        p,
        context: raw.context,
        pointer_degenerate,
    })
}

/// Per-step training cache: everything the backward pass needs to replay
/// the step without recomputing the forward activations.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub att: AttentionOutput,
    pub(crate) cell: LstmStep,
    pub context: Vec<f64>,
    pub p_lstm: Vec<f64>,
    /// Mixture probability of the gold token at this step.
    pub p_true: f64,
    /// Raw (un-renormalized) copy mass on the gold token: Σ_{x_j = y_t} β_j.
    pub ptr_true_raw: f64,
    pub y_prev: usize,
    pub y_true: usize,
    pub ce_clamped: bool,
    pub sl_clamped: bool,
}

/// Teacher-forced forward pass over one (source, target) pair.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Cross entropy: −Σ_t log P_t(y_t).
    pub ce: f64,
    /// Sentinel loss: −Σ_t log(g_t + Σ_{x_j = y_t} β_j), raw β. Always
    /// reported; added to the training objective only when enabled.
    pub sl: f64,
    /// Number of log arguments that hit the 1e-30 floor.
    pub clamp_incidents: usize,
    pub steps: Vec<StepTrace>,
    pub enc: EncoderStates,
}

impl ForwardPass {
    /// The objective actually trained: ce, plus sl when the config says so.
    pub fn total_loss(&self, config: &ModelConfig) -> f64 {
        if config.sentinel_loss_enabled {
            self.ce + self.sl
        } else {
            self.ce
        }
    }
}

/// Run the decoder with teacher forcing over `target_ids` plus a final STOP
/// step, accumulating both losses.
///
/// The gold-token mixture probability is evaluated in collapsed form
/// g·P_lstm(y) + Σ_{x_j=y} β_j, which is algebraically the mixture with the
/// renormalized copy distribution — and stays exact even where the
/// renormalization itself would saturate.
pub fn forward_loss(
    source_ids: &[usize],
    target_ids: &[usize],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<ForwardPass> {
    let enc = encode(source_ids, params, config)?;
    if let Some(&bad) = target_ids.iter().find(|&&id| id >= config.vocab_size) {
        return Err(Error::Data(format!(
            "target id {bad} outside vocabulary of size {}",
            config.vocab_size
        )));
    }
    let mut steps = Vec::with_capacity(target_ids.len() + 1);
    let mut h = vec![0.0; config.hidden_dim];
    let mut c = vec![0.0; config.hidden_dim];
    let mut y_prev = START;
    let mut ce = 0.0;
    let mut sl = 0.0;
    let mut clamp_incidents = 0;
    for t in 0..=target_ids.len() {
        let y_true = if t < target_ids.len() {
            target_ids[t]
        } else {
            STOP
        };
        let raw = run_step(y_prev, &h, &c, &enc, params)?;
        let g = raw.att.g();
        let ptr_true_raw: f64 = enc
            .source_ids
            .iter()
            .zip(raw.att.beta())
            .filter(|&(&id, _)| id == y_true)
            .map(|(_, &b)| b)
            .sum();
        let p_true = if config.copy_enabled {
            g * raw.p_lstm[y_true] + ptr_true_raw
        } else {
            raw.p_lstm[y_true]
        };
        let ce_clamped = p_true < PROB_FLOOR;
        ce -= p_true.max(PROB_FLOOR).ln();
        let m = g + ptr_true_raw;
        let sl_clamped = m < PROB_FLOOR;
        sl -= m.max(PROB_FLOOR).ln();
        clamp_incidents += usize::from(ce_clamped) + usize::from(sl_clamped);
        h.copy_from_slice(&raw.cell.h);
        c.copy_from_slice(&raw.cell.c);
        steps.push(StepTrace {
            att: raw.att,
            cell: raw.cell,
            context: raw.context,
            p_lstm: raw.p_lstm,
            p_true,
            ptr_true_raw,
            y_prev,
            y_true,
            ce_clamped,
            sl_clamped,
        });
        y_prev = y_true;
    }
    Ok(ForwardPass {
        ce,
        sl,
        clamp_incidents,
        steps,
        enc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EmbeddingStore, SizePreset};
    use crate::tensor::{LstmCellParams, Mat};
    use crate::text::UNK;
    use approx::assert_abs_diff_eq;

    fn tiny_config(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            hidden_dim: 3,
            vocab_size,
            share_embeddings: false,
            embeddings_fixed: false,
            copy_enabled: true,
            sentinel_loss_enabled: false,
        }
    }

    fn random_params(config: &ModelConfig, seed: u64) -> ModelParams {
        ModelParams::init(config, seed, None).unwrap()
    }

    /// All-zero parameters of the right shapes.
    fn zero_params(config: &ModelConfig) -> ModelParams {
        random_params(config, 0).zeros_like()
    }

    fn fake_attention(alpha_norm: Vec<f64>, h_dim: usize) -> AttentionOutput {
        let slots = alpha_norm.len();
        AttentionOutput {
            alpha_norm,
            query: vec![0.0; h_dim],
            tanh: vec![0.0; slots * h_dim],
        }
    }

    #[test]
    fn encode_zero_params_gives_zero_states() {
        let config = tiny_config(8);
        let params = zero_params(&config);
        let enc = encode(&[4, 5, 6], &params, &config).unwrap();
        assert_eq!(enc.len(), 3);
        for state in &enc.h_enc {
            assert!(state.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn encode_single_token_tied_cells_doubles_one_cell() {
        let config = tiny_config(8);
        let mut params = random_params(&config, 7);
        params.enc_bwd = params.enc_fwd.clone();
        let enc = encode(&[5], &params, &config).unwrap();
        let zero = vec![0.0; config.hidden_dim];
        let one = params
            .enc_fwd
            .forward(params.embeddings.enc().row(5), &zero, &zero)
            .unwrap();
        for k in 0..config.hidden_dim {
            assert_abs_diff_eq!(enc.h_enc[0][k], 2.0 * one.h[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn encode_palindrome_with_tied_cells_mirrors() {
        let config = tiny_config(10);
        let mut params = random_params(&config, 11);
        params.enc_bwd = params.enc_fwd.clone();
        let enc = encode(&[4, 5, 6, 5, 4], &params, &config).unwrap();
        // Both scans see the same input sequence, so states mirror exactly.
        for t in 0..enc.len() {
            assert_eq!(enc.h_enc[t], enc.h_enc[enc.len() - 1 - t]);
        }
    }

    #[test]
    fn encode_rejects_empty_and_out_of_range() {
        let config = tiny_config(8);
        let params = random_params(&config, 1);
        assert!(encode(&[], &params, &config).is_err());
        assert!(encode(&[8], &params, &config).is_err());
    }

    #[test]
    fn encode_additivity_with_zeroed_backward_cell() {
        let config = tiny_config(9);
        let mut params = random_params(&config, 13);
        params.enc_bwd = LstmCellParams::zeros(config.embed_dim, config.hidden_dim);
        let enc = encode(&[4, 7, 5], &params, &config).unwrap();
        // Pure forward scan.
        let mut h = vec![0.0; config.hidden_dim];
        let mut c = vec![0.0; config.hidden_dim];
        for (t, &id) in [4usize, 7, 5].iter().enumerate() {
            let step = params
                .enc_fwd
                .forward(params.embeddings.enc().row(id), &h, &c)
                .unwrap();
            h.copy_from_slice(&step.h);
            c.copy_from_slice(&step.c);
            for k in 0..config.hidden_dim {
                assert_abs_diff_eq!(enc.h_enc[t][k], step.h[k], epsilon = 0.0);
            }
        }
    }

    #[test]
    fn attend_zero_query_uniform_weights() {
        let config = tiny_config(8);
        let mut params = random_params(&config, 3);
        params.b_enc = 0.7;
        params.b_sent = 0.7;
        let enc = encode(&[4, 5, 6], &params, &config).unwrap();
        let att = attend(&vec![0.0; config.hidden_dim], &enc, &params).unwrap();
        for &a in &att.alpha_norm {
            assert_abs_diff_eq!(a, 0.25, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(att.g(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn attend_weights_sum_to_one() {
        let config = tiny_config(12);
        for seed in 0..20 {
            let params = random_params(&config, seed);
            let enc = encode(&[4, 9, 5, 11], &params, &config).unwrap();
            let h_prev: Vec<f64> = (0..config.hidden_dim)
                .map(|k| 0.3 * k as f64 - 0.2)
                .collect();
            let att = attend(&h_prev, &enc, &params).unwrap();
            let total: f64 = att.alpha_norm.iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
            let beta_sum: f64 = att.beta().iter().sum();
            assert_abs_diff_eq!(beta_sum, 1.0 - att.g(), epsilon = 1e-9);
            assert!(att.beta().iter().all(|&b| b >= 0.0));
        }
    }

    #[test]
    fn attend_huge_sentinel_saturates_gate_upward() {
        let config = tiny_config(8);
        let mut params = random_params(&config, 5);
        // Positive query: w_q = identity, positive previous state.
        params.w_q = Mat::from_fn(3, 3, |r, c| if r == c { 1.0 } else { 0.0 });
        let h_prev = vec![0.4, 0.8, 0.2];
        let enc = encode(&[4, 5], &params, &config).unwrap();
        let g_base = attend(&h_prev, &enc, &params).unwrap().g();
        params.sentinel = vec![1e6; 3];
        let g_huge = attend(&h_prev, &enc, &params).unwrap().g();
        assert!(
            g_huge > g_base,
            "saturated sentinel should raise g: {g_base} -> {g_huge}"
        );
    }

    #[test]
    fn attend_masks_pad_positions() {
        let config = tiny_config(8);
        let params = random_params(&config, 9);
        let enc = encode(&[4, PAD, 5], &params, &config).unwrap();
        let h_prev = vec![0.1, -0.3, 0.2];
        let att = attend(&h_prev, &enc, &params).unwrap();
        assert_eq!(att.alpha_norm[1], 0.0);
        let total: f64 = att.alpha_norm.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn attend_rejects_wrong_query_dim() {
        let config = tiny_config(8);
        let params = random_params(&config, 2);
        let enc = encode(&[4], &params, &config).unwrap();
        assert!(attend(&[0.0; 5], &enc, &params).is_err());
    }

    #[test]
    fn pointer_pools_mass_of_repeated_tokens() {
        let att = fake_attention(vec![0.125, 0.125, 0.25, 0.5], 3);
        let (dist, degenerate) = pointer_dist(&att, &[4, 5, 4], 8);
        assert!(!degenerate);
        assert_abs_diff_eq!(dist[4], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(dist[5], 0.25, epsilon = 1e-15);
        for (id, &p) in dist.iter().enumerate() {
            if id != 4 && id != 5 {
                assert_eq!(p, 0.0);
            }
        }
    }

    #[test]
    fn pointer_single_source_token_takes_all_mass() {
        let att = fake_attention(vec![0.3, 0.7], 3);
        let (dist, degenerate) = pointer_dist(&att, &[6], 8);
        assert!(!degenerate);
        assert_abs_diff_eq!(dist[6], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pointer_routes_oov_mass_to_unk() {
        // An out-of-vocabulary source word arrives here already encoded as
        // UNK; its renormalized weight 0.2/0.5 lands on the UNK entry.
        let att = fake_attention(vec![0.2, 0.3, 0.5], 3);
        let (dist, _) = pointer_dist(&att, &[UNK, 5], 8);
        assert_abs_diff_eq!(dist[UNK], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(dist[5], 0.6, epsilon = 1e-15);
    }

    #[test]
    fn pointer_saturated_gate_degenerates_to_uniform() {
        let tiny = 1e-16;
        let att = fake_attention(vec![tiny, tiny, 1.0 - 2.0 * tiny], 3);
        let (dist, degenerate) = pointer_dist(&att, &[4, 5], 8);
        assert!(degenerate);
        assert_eq!(dist[4], 0.5);
        assert_eq!(dist[5], 0.5);
        // PAD positions are excluded from the fallback.
        let att = fake_attention(vec![tiny, tiny, 1.0 - 2.0 * tiny], 3);
        let (dist, degenerate) = pointer_dist(&att, &[4, PAD], 8);
        assert!(degenerate);
        assert_eq!(dist[4], 1.0);
        assert_eq!(dist[PAD], 0.0);
    }

    #[test]
    fn mixture_is_the_stated_convex_combination() {
        let p = mixture(0.5, &[0.6, 0.4, 0.0], &[0.2, 0.8, 0.0]);
        assert_abs_diff_eq!(p[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.6, epsilon = 1e-15);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn decode_step_without_copy_emits_p_lstm() {
        let mut config = tiny_config(8);
        config.copy_enabled = false;
        let params = random_params(&config, 21);
        let enc = encode(&[4, 5], &params, &config).unwrap();
        let h = vec![0.0; 3];
        let c = vec![0.0; 3];
        let out = decode_step(START, &h, &c, &enc, &params, &config).unwrap();
        assert_eq!(out.p, out.p_lstm);
    }

    #[test]
    fn decode_step_distributions_are_normalized() {
        let config = tiny_config(10);
        for seed in [1u64, 17, 33] {
            let params = random_params(&config, seed);
            let source = [4usize, 7, 4, 9];
            let enc = encode(&source, &params, &config).unwrap();
            let h = vec![0.02; 3];
            let c = vec![-0.01; 3];
            let out = decode_step(5, &h, &c, &enc, &params, &config).unwrap();
            for dist in [&out.p_lstm, &out.p_ptr, &out.p] {
                let total: f64 = dist.iter().sum();
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
            }
            for (id, &p) in out.p_ptr.iter().enumerate() {
                if p > 0.0 {
                    assert!(source.contains(&id), "copy mass outside source at id {id}");
                }
            }
        }
    }

    #[test]
    fn decode_step_matches_teacher_forced_traces() {
        let config = tiny_config(9);
        let params = random_params(&config, 40);
        let source = [4usize, 6, 8];
        let target = [6usize, 5];
        let pass = forward_loss(&source, &target, &params, &config).unwrap();
        let enc = encode(&source, &params, &config).unwrap();
        let mut h = vec![0.0; 3];
        let mut c = vec![0.0; 3];
        for step in &pass.steps {
            let out = decode_step(step.y_prev, &h, &c, &enc, &params, &config).unwrap();
            assert_abs_diff_eq!(out.p[step.y_true], step.p_true, epsilon = 1e-12);
            h = out.h;
            c = out.c;
        }
    }

    #[test]
    fn forward_loss_uniform_model_matches_closed_form() {
        // Zero parameters leave the decoder state at zero and the logits at
        // zero, so P_lstm is uniform; with copying off, each of the three
        // steps (two tokens + STOP) costs ln|V|.
        let mut config = tiny_config(4);
        config.copy_enabled = false;
        let params = zero_params(&config);
        let pass = forward_loss(&[UNK], &[UNK, UNK], &params, &config).unwrap();
        assert_eq!(pass.steps.len(), 3);
        assert_abs_diff_eq!(pass.ce, 3.0 * 4.0f64.ln(), epsilon = 1e-12);
        assert_eq!(pass.clamp_incidents, 0);
    }

    #[test]
    fn forward_loss_steps_cover_target_plus_stop() {
        let config = tiny_config(10);
        let params = random_params(&config, 50);
        let target = [5usize, 6, 7];
        let pass = forward_loss(&[4, 9], &target, &params, &config).unwrap();
        assert_eq!(pass.steps.len(), 4);
        let trued: Vec<usize> = pass.steps.iter().map(|s| s.y_true).collect();
        assert_eq!(trued, vec![5, 6, 7, STOP]);
        let fed: Vec<usize> = pass.steps.iter().map(|s| s.y_prev).collect();
        assert_eq!(fed, vec![START, 5, 6, 7]);
    }

    #[test]
    fn forward_loss_rigged_certainty_costs_nothing() {
        // Saturated attention on a single-token source that always matches
        // the gold token: the copy branch alone supplies probability 1.
        let mut config = tiny_config(8);
        config.sentinel_loss_enabled = true;
        let mut params = zero_params(&config);
        params.b_enc = 800.0;
        let pass = forward_loss(&[STOP], &[STOP], &params, &config).unwrap();
        assert_eq!(pass.ce, 0.0);
        assert_eq!(pass.sl, 0.0);
        assert_eq!(pass.clamp_incidents, 0);
    }

    #[test]
    fn forward_loss_clamps_zero_probability_steps() {
        // b_out drives the gold token's logit far enough down that its
        // softmax mass underflows to exactly zero.
        let mut config = tiny_config(8);
        config.copy_enabled = false;
        let mut params = zero_params(&config);
        params.b_out[5] = -800.0;
        let pass = forward_loss(&[4], &[5], &params, &config).unwrap();
        assert!(pass.steps[0].ce_clamped);
        assert!(!pass.steps[1].ce_clamped);
        assert_eq!(pass.clamp_incidents, 1);
        // Step 1 pays the floor price; step 2 is an ordinary uniform step
        // over the 7 tokens left with weight e^0.
        let floor_cost = -(1e-30f64).ln();
        assert_abs_diff_eq!(pass.ce, floor_cost + 7.0f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn forward_loss_reports_raw_beta_sentinel_loss() {
        // With zero params and no masking: uniform attention over
        // T_enc + 1 = 3 slots. Gold token present once in the source, so
        // sl per step = −ln(g + β) = −ln(2/3); the STOP step has no source
        // match, so it pays −ln(1/3).
        let config = tiny_config(8);
        let params = zero_params(&config);
        let pass = forward_loss(&[5, 6], &[5], &params, &config).unwrap();
        let third: f64 = 1.0 / 3.0;
        assert_abs_diff_eq!(pass.sl, -(2.0 * third).ln() - third.ln(), epsilon = 1e-12);
    }

    #[test]
    fn forward_loss_rejects_bad_targets() {
        let config = tiny_config(8);
        let params = random_params(&config, 60);
        assert!(forward_loss(&[4], &[8], &params, &config).is_err());
    }

    /// Independent scalar re-evaluation of the whole forward computation:
    /// plain loops, no shared tensor helpers.
    fn oracle_losses(
        src: &[usize],
        tgt: &[usize],
        p: &ModelParams,
        config: &ModelConfig,
    ) -> (f64, f64) {
        let h_dim = config.hidden_dim;
        let m_dim = config.embed_dim;
        let v = config.vocab_size;
        let sigm = |x: f64| 1.0 / (1.0 + (-x).exp());
        let emb_row =
            |mat: &Mat, id: usize| (0..m_dim).map(|j| mat.get(id, j)).collect::<Vec<f64>>();
        let cell = |cp: &LstmCellParams, x: &[f64], hp: &[f64], cprev: &[f64]| {
            let mut z = vec![0.0; 4 * h_dim];
            for (k, zk) in z.iter_mut().enumerate() {
                *zk = cp.b[k];
                for (r, &xv) in x.iter().enumerate() {
                    *zk += xv * cp.w_x.get(r, k);
                }
                for (r, &hv) in hp.iter().enumerate() {
                    *zk += hv * cp.w_h.get(r, k);
                }
            }
            let mut c_new = vec![0.0; h_dim];
            let mut h_new = vec![0.0; h_dim];
            for k in 0..h_dim {
                let i = sigm(z[k]);
                let f = sigm(z[h_dim + k]);
                let o = sigm(z[2 * h_dim + k]);
                let gg = z[3 * h_dim + k].tanh();
                c_new[k] = f * cprev[k] + i * gg;
                h_new[k] = o * c_new[k].tanh();
            }
            (h_new, c_new)
        };
        let plain_softmax = |scores: &[f64]| {
            let exps: Vec<f64> = scores.iter().map(|&s| s.exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect::<Vec<f64>>()
        };

        let s_len = src.len();
        let mut fwd = Vec::new();
        let (mut hh, mut cc) = (vec![0.0; h_dim], vec![0.0; h_dim]);
        for &id in src {
            let (h2, c2) = cell(&p.enc_fwd, &emb_row(p.embeddings.enc(), id), &hh, &cc);
            fwd.push(h2.clone());
            hh = h2;
            cc = c2;
        }
        let mut bwd = vec![Vec::new(); s_len];
        let (mut hh, mut cc) = (vec![0.0; h_dim], vec![0.0; h_dim]);
        for t in (0..s_len).rev() {
            let (h2, c2) = cell(&p.enc_bwd, &emb_row(p.embeddings.enc(), src[t]), &hh, &cc);
            bwd[t] = h2.clone();
            hh = h2;
            cc = c2;
        }
        let henc: Vec<Vec<f64>> = (0..s_len)
            .map(|t| (0..h_dim).map(|k| fwd[t][k] + bwd[t][k]).collect())
            .collect();

        let (mut hd, mut cd) = (vec![0.0; h_dim], vec![0.0; h_dim]);
        let mut prev = START;
        let (mut ce, mut sl) = (0.0, 0.0);
        for t in 0..=tgt.len() {
            let y = if t < tgt.len() { tgt[t] } else { STOP };
            let q: Vec<f64> = (0..h_dim)
                .map(|j| (0..h_dim).map(|r| hd[r] * p.w_q.get(r, j)).sum())
                .collect();
            let mut scores = Vec::new();
            for i in 0..=s_len {
                let row: &[f64] = if i < s_len { &henc[i] } else { &p.sentinel };
                let bias = if i < s_len { p.b_enc } else { p.b_sent };
                scores.push(bias + (0..h_dim).map(|j| (row[j] * q[j]).tanh()).sum::<f64>());
            }
            let alpha = plain_softmax(&scores);
            let g = alpha[s_len];
            let ctx: Vec<f64> = (0..h_dim)
                .map(|k| (0..s_len).map(|j| alpha[j] * henc[j][k]).sum())
                .collect();
            let mut x = emb_row(p.embeddings.dec(), prev);
            x.extend_from_slice(&ctx);
            let (h2, c2) = cell(&p.dec, &x, &hd, &cd);
            hd = h2;
            cd = c2;
            let mut zv = hd.clone();
            zv.extend_from_slice(&ctx);
            let logits: Vec<f64> = (0..v)
                .map(|w| {
                    p.b_out[w]
                        + (0..2 * h_dim)
                            .map(|r| zv[r] * p.w_out.get(r, w))
                            .sum::<f64>()
                })
                .collect();
            let p_lstm = plain_softmax(&logits);
            let copy_mass: f64 = (0..s_len).filter(|&j| src[j] == y).map(|j| alpha[j]).sum();
            let p_true = if config.copy_enabled {
                g * p_lstm[y] + copy_mass
            } else {
                p_lstm[y]
            };
            ce -= p_true.max(1e-30).ln();
            sl -= (g + copy_mass).max(1e-30).ln();
            prev = y;
        }
        (ce, sl)
    }

    #[test]
    fn forward_loss_matches_scripted_oracle() {
        let mut config = ModelConfig {
            embed_dim: 4,
            hidden_dim: 4,
            vocab_size: 6,
            share_embeddings: false,
            embeddings_fixed: false,
            copy_enabled: true,
            sentinel_loss_enabled: false,
        };
        let src = [4usize, 5, 4];
        let tgt = [5usize, 4, 5];
        for seed in [2u64, 71, 500] {
            let params = random_params(&config, seed);
            for copy in [true, false] {
                config.copy_enabled = copy;
                let pass = forward_loss(&src, &tgt, &params, &config).unwrap();
                let (ce, sl) = oracle_losses(&src, &tgt, &params, &config);
                assert_abs_diff_eq!(pass.ce, ce, epsilon = 1e-10);
                assert_abs_diff_eq!(pass.sl, sl, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn preset_sized_model_reports_plausible_parameter_count() {
        let config = ModelConfig::new(SizePreset::S, 100);
        let params = ModelParams::init(&config, 1, None).unwrap();
        // Two embedding tables dominate at this vocabulary size.
        assert!(params.parameter_count() > 2 * 100 * 128);
        assert!(matches!(params.embeddings, EmbeddingStore::Separate { .. }));
    }
}
