//! Exact reverse-mode differentiation of the teacher-forced loss. Each
//! forward operation from `forward.rs` has its adjoint here, applied in
//! reverse order over the cached traces.

use super::forward::ForwardPass;
use super::{EmbeddingStore, ModelConfig, ModelParams};
use crate::error::Result;
use crate::tensor::{axpy, dot, Mat};

impl ModelParams {
    fn emb_enc_mut(&mut self) -> &mut Mat {
        match &mut self.embeddings {
            EmbeddingStore::Shared(m) => m,
            EmbeddingStore::Separate { enc, .. } => enc,
        }
    }

    fn emb_dec_mut(&mut self) -> &mut Mat {
        match &mut self.embeddings {
            EmbeddingStore::Shared(m) => m,
            EmbeddingStore::Separate { dec, .. } => dec,
        }
    }
}

/// Gradients of ce (+ sl when enabled) with respect to every parameter,
/// shaped exactly like `params`.
///
/// With shared embeddings, encoder and decoder lookup gradients land in the
/// one shared table; with fixed embeddings, the embedding gradients are
/// identically zero.
pub fn backward(
    pass: &ForwardPass,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<ModelParams> {
    let h_dim = config.hidden_dim;
    let m_dim = config.embed_dim;
    let mut grads = params.zeros_like();
    let enc = &pass.enc;
    let s_len = enc.len();

    // Gradient flowing into each combined encoder state, accumulated across
    // all decoder steps (context sums and attention scores both read them).
    let mut dh_enc = vec![vec![0.0; h_dim]; s_len];

    // Recurrent carries into decoder step t from step t+1: h_dec_t feeds the
    // next cell and the next attention query; c_dec_t feeds the next cell.
    let mut dh_carry = vec![0.0; h_dim];
    let mut dc_carry = vec![0.0; h_dim];

    for step in pass.steps.iter().rev() {
        let g = step.att.g();
        let beta = step.att.beta();
        let alpha = &step.att.alpha_norm;

        // Loss seeds on the softmaxed attention vector (beta entries first,
        // sentinel gate last) and on the gold vocabulary probability.
        //
        // ce per step is −log(g·P_lstm(y) + Σ_{x_j=y} β_j) when copying,
        // −log P_lstm(y) otherwise; sl per step is −log(g + Σ_{x_j=y} β_j).
        // A clamped step contributes nothing.
        let mut d_alpha = vec![0.0; s_len + 1];
        let mut d_plstm_true = 0.0;
        if !step.ce_clamped {
            let u = -1.0 / step.p_true;
            if config.copy_enabled {
                d_alpha[s_len] += u * step.p_lstm[step.y_true];
                for (j, &id) in enc.source_ids.iter().enumerate() {
                    if id == step.y_true {
                        d_alpha[j] += u;
                    }
                }
                d_plstm_true += u * g;
            } else {
                d_plstm_true += u;
            }
        }
        if config.sentinel_loss_enabled && !step.sl_clamped {
            let v = -1.0 / (g + step.ptr_true_raw);
            d_alpha[s_len] += v;
            for (j, &id) in enc.source_ids.iter().enumerate() {
                if id == step.y_true {
                    d_alpha[j] += v;
                }
            }
        }

        // Vocabulary softmax + output projection. The upstream gradient hits
        // a single probability entry, so the softmax Jacobian collapses to
        // dlogit_k = u·P(y)·([k=y] − P(k)).
        let coeff = d_plstm_true * step.p_lstm[step.y_true];
        let mut dz = vec![0.0; 2 * h_dim];
        if coeff != 0.0 {
            let mut dlogits: Vec<f64> = step.p_lstm.iter().map(|p| -coeff * p).collect();
            dlogits[step.y_true] += coeff;
            let mut z = Vec::with_capacity(2 * h_dim);
            z.extend_from_slice(&step.cell.h);
            z.extend_from_slice(&step.context);
            grads.w_out.add_outer(&z, &dlogits);
            axpy(&mut grads.b_out, 1.0, &dlogits);
            dz = params.w_out.vec_mul_t(&dlogits);
        }

        // Decoder cell. Its hidden state is read by the output layer now and
        // by the next step's cell and attention query (the carry).
        let mut dh_dec = dh_carry.clone();
        axpy(&mut dh_dec, 1.0, &dz[..h_dim]);
        let (dx, dh_prev_rec, dc_prev_rec) =
            params
                .dec
                .backward(&step.cell, &dh_dec, &dc_carry, &mut grads.dec);

        // Cell input was concat(E_dec(y_prev), context); the context vector
        // is also read directly by the output layer.
        axpy(grads.emb_dec_mut().row_mut(step.y_prev), 1.0, &dx[..m_dim]);
        let mut dcontext = dz[h_dim..].to_vec();
        axpy(&mut dcontext, 1.0, &dx[m_dim..]);

        // context = Σ_j β_j·h_enc[j]
        for j in 0..s_len {
            d_alpha[j] += dot(&dcontext, &enc.h_enc[j]);
            axpy(&mut dh_enc[j], beta[j], &dcontext);
        }

        // Attention softmax: full Jacobian, every slot may carry gradient.
        // Masked PAD positions have alpha exactly 0, so they drop out.
        let weighted: f64 = d_alpha.iter().zip(alpha).map(|(d, a)| d * a).sum();
        let dscores: Vec<f64> = d_alpha
            .iter()
            .zip(alpha)
            .map(|(d, a)| a * (d - weighted))
            .collect();

        // score_i = Σ_j tanh(F[i,j]·q_j) + bias, F rows = encoder states
        // then the sentinel.
        let mut dq = vec![0.0; h_dim];
        for (i, &ds) in dscores.iter().enumerate() {
            if ds == 0.0 {
                continue;
            }
            let trow = &step.att.tanh[i * h_dim..(i + 1) * h_dim];
            if i < s_len {
                grads.b_enc += ds;
                for j in 0..h_dim {
                    let dprod = ds * (1.0 - trow[j] * trow[j]);
                    dq[j] += dprod * enc.h_enc[i][j];
                    dh_enc[i][j] += dprod * step.att.query[j];
                }
            } else {
                grads.b_sent += ds;
                for j in 0..h_dim {
                    let dprod = ds * (1.0 - trow[j] * trow[j]);
                    dq[j] += dprod * params.sentinel[j];
                    grads.sentinel[j] += dprod * step.att.query[j];
                }
            }
        }

        // q = h_dec_prev·W_q; h_dec_prev is the previous step's hidden state
        // (all zeros at t=1), so dh_query joins the recurrent carry.
        grads.w_q.add_outer(step.cell.h_prev(), &dq);
        let dh_query = params.w_q.vec_mul_t(&dq);

        dh_carry = dh_prev_rec;
        axpy(&mut dh_carry, 1.0, &dh_query);
        dc_carry = dc_prev_rec;
    }
    // The remaining carry targets the all-zero initial decoder state — a
    // constant, so it is dropped.

    // Encoder. Both scans read the same embedding per position; collect dx
    // per position and push into the table once.
    let mut d_emb = vec![vec![0.0; m_dim]; s_len];

    // Left-to-right cells: unroll right-to-left. h_fwd_t feeds h_enc[t] and
    // the t+1 cell.
    let mut dh = vec![0.0; h_dim];
    let mut dc = vec![0.0; h_dim];
    for t in (0..s_len).rev() {
        let mut dh_t = dh;
        axpy(&mut dh_t, 1.0, &dh_enc[t]);
        let (dx, dh_prev, dc_prev) =
            params
                .enc_fwd
                .backward(&enc.fwd_steps[t], &dh_t, &dc, &mut grads.enc_fwd);
        axpy(&mut d_emb[t], 1.0, &dx);
        dh = dh_prev;
        dc = dc_prev;
    }

    // Right-to-left cells: scan order was T−1..0, so unroll 0..T−1.
    // h_bwd_t feeds h_enc[t] and the t−1 cell.
    let mut dh = vec![0.0; h_dim];
    let mut dc = vec![0.0; h_dim];
    for t in 0..s_len {
        let mut dh_t = dh;
        axpy(&mut dh_t, 1.0, &dh_enc[t]);
        let (dx, dh_prev, dc_prev) =
            params
                .enc_bwd
                .backward(&enc.bwd_steps[t], &dh_t, &dc, &mut grads.enc_bwd);
        axpy(&mut d_emb[t], 1.0, &dx);
        dh = dh_prev;
        dc = dc_prev;
    }

    for (t, d) in d_emb.iter().enumerate() {
        axpy(grads.emb_enc_mut().row_mut(enc.source_ids[t]), 1.0, d);
    }

    if config.embeddings_fixed {
        match &mut grads.embeddings {
            EmbeddingStore::Shared(m) => m.as_mut_slice().fill(0.0),
            EmbeddingStore::Separate { enc, dec } => {
                enc.as_mut_slice().fill(0.0);
                dec.as_mut_slice().fill(0.0);
            }
        }
    }

    grads.check_finite("gradient")?;
    Ok(grads)
}
