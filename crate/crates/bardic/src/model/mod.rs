//! The sequence-to-sequence model: bidirectional LSTM encoder (states
//! summed), sentinel attention, pointer-copy mixture output, and exact
//! reverse-mode gradients — no autodiff framework, every derivative is
//! written out and checked against finite differences.

mod backward;
mod forward;

pub use backward::backward;
pub use forward::{
    attend, decode_step, encode, forward_loss, pointer_dist, AttentionOutput, EncoderStates,
    ForwardPass, StepOutput, StepTrace,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DetRng, LstmCellParams, Mat};

/// Named model sizes: (embedding dim, hidden dim).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SizePreset {
    S,
    Me,
    L,
}

impl SizePreset {
    pub fn dims(self) -> (usize, usize) {
        match self {
            SizePreset::S => (128, 128),
            SizePreset::Me => (192, 192),
            SizePreset::L => (256, 256),
        }
    }
}

impl std::str::FromStr for SizePreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" => Ok(SizePreset::S),
            "me" => Ok(SizePreset::Me),
            "l" => Ok(SizePreset::L),
            other => Err(Error::Config(format!(
                "unknown size preset {other:?} (expected S, ME, or L)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    /// One embedding table serving both encoder and decoder.
    pub share_embeddings: bool,
    /// Embeddings excluded from optimization (kept bit-identical).
    pub embeddings_fixed: bool,
    /// Pointer branch on (Copy) or off (plain attentional seq2seq).
    pub copy_enabled: bool,
    pub sentinel_loss_enabled: bool,
}

impl ModelConfig {
    pub fn new(preset: SizePreset, vocab_size: usize) -> Self {
        let (m, h) = preset.dims();
        ModelConfig {
            embed_dim: m,
            hidden_dim: h,
            vocab_size,
            share_embeddings: false,
            embeddings_fixed: false,
            copy_enabled: true,
            sentinel_loss_enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(
                "embed_dim and hidden_dim must be positive".into(),
            ));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config(format!(
                "vocab_size {} cannot hold the four special tokens",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// Encoder/decoder embedding storage: one table or two.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingStore {
    Shared(Mat),
    Separate { enc: Mat, dec: Mat },
}

impl EmbeddingStore {
    pub fn enc(&self) -> &Mat {
        match self {
            EmbeddingStore::Shared(m) => m,
            EmbeddingStore::Separate { enc, .. } => enc,
        }
    }

    pub fn dec(&self) -> &Mat {
        match self {
            EmbeddingStore::Shared(m) => m,
            EmbeddingStore::Separate { dec, .. } => dec,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embeddings: EmbeddingStore,
    pub enc_fwd: LstmCellParams,
    pub enc_bwd: LstmCellParams,
    /// Decoder cell input is concat(embedding, context): M + H wide.
    pub dec: LstmCellParams,
    pub w_q: Mat,
    pub sentinel: Vec<f64>,
    pub b_enc: f64,
    pub b_sent: f64,
    /// Output projection over concat(decoder state, context): 2H × |V|.
    pub w_out: Mat,
    pub b_out: Vec<f64>,
}

const INIT_SCALE: f64 = 0.1;

impl ModelParams {
    /// Random initialization; `embedding` overrides the embedding table(s)
    /// with pretrained rows when given.
    pub fn init(
        config: &ModelConfig,
        seed: u64,
        embedding: Option<&crate::embed::EmbeddingMatrix>,
    ) -> Result<Self> {
        config.validate()?;
        let (m, h, v) = (config.embed_dim, config.hidden_dim, config.vocab_size);
        if let Some(e) = embedding {
            if e.dim != m || e.rows.rows() != v {
                return Err(Error::Config(format!(
                    "pretrained embeddings are {}×{}, model needs {v}×{m}",
                    e.rows.rows(),
                    e.dim
                )));
            }
        }
        let mut rng = DetRng::seed_from_u64(seed);
        let table = |rng: &mut DetRng| match embedding {
            Some(e) => e.rows.clone(),
            None => Mat::uniform(v, m, INIT_SCALE, rng),
        };
        let embeddings = if config.share_embeddings {
            EmbeddingStore::Shared(table(&mut rng))
        } else {
            EmbeddingStore::Separate {
                enc: table(&mut rng),
                dec: table(&mut rng),
            }
        };
        Ok(ModelParams {
            embeddings,
            enc_fwd: LstmCellParams::init(m, h, INIT_SCALE, &mut rng),
            enc_bwd: LstmCellParams::init(m, h, INIT_SCALE, &mut rng),
            dec: LstmCellParams::init(m + h, h, INIT_SCALE, &mut rng),
            w_q: Mat::uniform(h, h, INIT_SCALE, &mut rng),
            sentinel: (0..h)
                .map(|_| rng.uniform(-INIT_SCALE, INIT_SCALE))
                .collect(),
            b_enc: 0.0,
            b_sent: 0.0,
            w_out: Mat::uniform(2 * h, v, INIT_SCALE, &mut rng),
            b_out: vec![0.0; v],
        })
    }

    /// Same shapes, all entries zero (gradient accumulators).
    pub fn zeros_like(&self) -> Self {
        let zero_mat = |m: &Mat| Mat::zeros(m.rows(), m.cols());
        let zero_cell = |c: &LstmCellParams| LstmCellParams::zeros(c.input_dim, c.hidden_dim);
        ModelParams {
            embeddings: match &self.embeddings {
                EmbeddingStore::Shared(m) => EmbeddingStore::Shared(zero_mat(m)),
                EmbeddingStore::Separate { enc, dec } => EmbeddingStore::Separate {
                    enc: zero_mat(enc),
                    dec: zero_mat(dec),
                },
            },
            enc_fwd: zero_cell(&self.enc_fwd),
            enc_bwd: zero_cell(&self.enc_bwd),
            dec: zero_cell(&self.dec),
            w_q: zero_mat(&self.w_q),
            sentinel: vec![0.0; self.sentinel.len()],
            b_enc: 0.0,
            b_sent: 0.0,
            w_out: zero_mat(&self.w_out),
            b_out: vec![0.0; self.b_out.len()],
        }
    }

    /// Stable (name, dims, values) listing covering every parameter once,
    /// in a fixed order shared by the optimizer, checkpoints, and the
    /// flattened gradient-check vector.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        let mat = |m: &'_ Mat| (vec![m.rows(), m.cols()], ());
        match &self.embeddings {
            EmbeddingStore::Shared(m) => {
                out.push(("embed.shared".into(), mat(m).0, m.as_slice()));
            }
            EmbeddingStore::Separate { enc, dec } => {
                out.push(("embed.enc".into(), mat(enc).0, enc.as_slice()));
                out.push(("embed.dec".into(), mat(dec).0, dec.as_slice()));
            }
        }
        for (prefix, cell) in [
            ("enc_fwd", &self.enc_fwd),
            ("enc_bwd", &self.enc_bwd),
            ("dec", &self.dec),
        ] {
            out.push((
                format!("{prefix}.w_x"),
                vec![cell.w_x.rows(), cell.w_x.cols()],
                cell.w_x.as_slice(),
            ));
            out.push((
                format!("{prefix}.w_h"),
                vec![cell.w_h.rows(), cell.w_h.cols()],
                cell.w_h.as_slice(),
            ));
            out.push((format!("{prefix}.b"), vec![cell.b.len()], &cell.b));
        }
        out.push((
            "att.w_q".into(),
            vec![self.w_q.rows(), self.w_q.cols()],
            self.w_q.as_slice(),
        ));
        out.push((
            "att.sentinel".into(),
            vec![self.sentinel.len()],
            &self.sentinel,
        ));
        out.push((
            "att.b_enc".into(),
            vec![1],
            std::slice::from_ref(&self.b_enc),
        ));
        out.push((
            "att.b_sent".into(),
            vec![1],
            std::slice::from_ref(&self.b_sent),
        ));
        out.push((
            "out.w".into(),
            vec![self.w_out.rows(), self.w_out.cols()],
            self.w_out.as_slice(),
        ));
        out.push(("out.b".into(), vec![self.b_out.len()], &self.b_out));
        out
    }

    /// Mutable view onto the same tensors, same names, same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        match &mut self.embeddings {
            EmbeddingStore::Shared(m) => out.push(("embed.shared".into(), m.as_mut_slice())),
            EmbeddingStore::Separate { enc, dec } => {
                out.push(("embed.enc".into(), enc.as_mut_slice()));
                out.push(("embed.dec".into(), dec.as_mut_slice()));
            }
        }
        for (prefix, cell) in [
            ("enc_fwd", &mut self.enc_fwd),
            ("enc_bwd", &mut self.enc_bwd),
            ("dec", &mut self.dec),
        ] {
            out.push((format!("{prefix}.w_x"), cell.w_x.as_mut_slice()));
            out.push((format!("{prefix}.w_h"), cell.w_h.as_mut_slice()));
            out.push((format!("{prefix}.b"), cell.b.as_mut_slice()));
        }
        out.push(("att.w_q".into(), self.w_q.as_mut_slice()));
        out.push(("att.sentinel".into(), self.sentinel.as_mut_slice()));
        out.push(("att.b_enc".into(), std::slice::from_mut(&mut self.b_enc)));
        out.push(("att.b_sent".into(), std::slice::from_mut(&mut self.b_sent)));
        out.push(("out.w".into(), self.w_out.as_mut_slice()));
        out.push(("out.b".into(), self.b_out.as_mut_slice()));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, _, v)| v.len()).sum()
    }

    /// All parameters as one vector, in named-tensor order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for (_, _, values) in self.named_tensors() {
            out.extend_from_slice(values);
        }
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total = self.parameter_count();
        if flat.len() != total {
            return Err(Error::Shape {
                context: "set_from_flat",
                expected: total.to_string(),
                actual: flat.len().to_string(),
            });
        }
        let mut offset = 0;
        for (_, values) in self.named_tensors_mut() {
            values.copy_from_slice(&flat[offset..offset + values.len()]);
            offset += values.len();
        }
        Ok(())
    }

    /// Error naming the first non-finite tensor, if any.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        for (name, _, values) in self.named_tensors() {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{what} tensor {name}")));
            }
        }
        Ok(())
    }

    pub fn validate_shapes(&self, config: &ModelConfig) -> Result<()> {
        let (m, h, v) = (config.embed_dim, config.hidden_dim, config.vocab_size);
        let check = |ok: bool, what: &'static str, expected: String, actual: String| {
            if ok {
                Ok(())
            } else {
                Err(Error::Shape {
                    context: what,
                    expected,
                    actual,
                })
            }
        };
        let emb_ok = |e: &Mat| e.rows() == v && e.cols() == m;
        match &self.embeddings {
            EmbeddingStore::Shared(e) => check(
                emb_ok(e) && config.share_embeddings,
                "shared embedding table",
                format!("{v}×{m} shared={}", config.share_embeddings),
                format!("{}×{} shared=true", e.rows(), e.cols()),
            )?,
            EmbeddingStore::Separate { enc, dec } => check(
                emb_ok(enc) && emb_ok(dec) && !config.share_embeddings,
                "separate embedding tables",
                format!("{v}×{m} shared={}", config.share_embeddings),
                format!(
                    "{}×{} / {}×{} shared=false",
                    enc.rows(),
                    enc.cols(),
                    dec.rows(),
                    dec.cols()
                ),
            )?,
        }
        check(
            self.enc_fwd.input_dim == m && self.enc_fwd.hidden_dim == h,
            "forward encoder cell",
            format!("{m}→{h}"),
            format!("{}→{}", self.enc_fwd.input_dim, self.enc_fwd.hidden_dim),
        )?;
        check(
            self.enc_bwd.input_dim == m && self.enc_bwd.hidden_dim == h,
            "backward encoder cell",
            format!("{m}→{h}"),
            format!("{}→{}", self.enc_bwd.input_dim, self.enc_bwd.hidden_dim),
        )?;
        check(
            self.dec.input_dim == m + h && self.dec.hidden_dim == h,
            "decoder cell",
            format!("{}→{h}", m + h),
            format!("{}→{}", self.dec.input_dim, self.dec.hidden_dim),
        )?;
        check(
            self.w_q.rows() == h && self.w_q.cols() == h,
            "attention query projection",
            format!("{h}×{h}"),
            format!("{}×{}", self.w_q.rows(), self.w_q.cols()),
        )?;
        check(
            self.sentinel.len() == h,
            "sentinel vector",
            h.to_string(),
            self.sentinel.len().to_string(),
        )?;
        check(
            self.w_out.rows() == 2 * h && self.w_out.cols() == v,
            "output projection",
            format!("{}×{v}", 2 * h),
            format!("{}×{}", self.w_out.rows(), self.w_out.cols()),
        )?;
        check(
            self.b_out.len() == v,
            "output bias",
            v.to_string(),
            self.b_out.len().to_string(),
        )?;
        Ok(())
    }
}
