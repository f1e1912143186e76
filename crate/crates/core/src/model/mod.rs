//! LSTM encoder-decoder with global (Luong-style) attention: parameter
//! container, forward computation, cross-entropy loss, and exact gradients.

mod backprop;

pub use backprop::{backward, forward_backward, gradient_check};

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::subword::{BOS_ID, EOS_ID};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty source sequence")]
    EmptySource,
    #[error("malformed batch: {0}")]
    MalformedBatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    /// Bilinear score `h_dec' W_a h_enc`.
    General,
    /// Plain dot product `h_dec . h_enc`.
    Dot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub num_layers: usize,
    pub attention: AttentionKind,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 128,
            hidden: 300,
            dropout: 0.1,
            num_layers: 1,
            attention: AttentionKind::General,
            src_vocab_size: 0,
            tgt_vocab_size: 0,
        }
    }
}

impl ModelConfig {
    /// FNV-1a over the configuration fields; checkpoints refuse to load
    /// under a config with a different fingerprint.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.embed_dim as u64);
        eat(self.hidden as u64);
        eat(self.dropout.to_bits());
        eat(self.num_layers as u64);
        eat(match self.attention {
            AttentionKind::General => 0,
            AttentionKind::Dot => 1,
        });
        eat(self.src_vocab_size as u64);
        eat(self.tgt_vocab_size as u64);
        h
    }
}

/// One LSTM direction's weights; rows of `input`/`recurrent`/`bias` are the
/// four gate blocks in order i, f, g, o.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub input: Array2<f64>,     // 4h x e
    pub recurrent: Array2<f64>, // 4h x h
    pub bias: Array1<f64>,      // 4h
}

impl LstmWeights {
    fn zeros(hidden: usize, embed: usize) -> Self {
        LstmWeights {
            input: Array2::zeros((4 * hidden, embed)),
            recurrent: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }
}

/// All trainable tensors of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub src_embed: Array2<f64>, // Vs x e
    pub tgt_embed: Array2<f64>, // Vt x e
    pub encoder: LstmWeights,
    pub decoder: LstmWeights,
    pub attn: Array2<f64>,      // h x h
    pub combine_w: Array2<f64>, // h x 2h
    pub combine_b: Array1<f64>, // h
    pub out_w: Array2<f64>,     // Vt x h
    pub out_b: Array1<f64>,     // Vt
}

/// Gradients are shape-congruent with [`Parameters`]; the same container is
/// reused for Adam moment tensors.
pub type Gradients = Parameters;

impl Parameters {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (e, h) = (cfg.embed_dim, cfg.hidden);
        Parameters {
            src_embed: Array2::zeros((cfg.src_vocab_size, e)),
            tgt_embed: Array2::zeros((cfg.tgt_vocab_size, e)),
            encoder: LstmWeights::zeros(h, e),
            decoder: LstmWeights::zeros(h, e),
            attn: Array2::zeros((h, h)),
            combine_w: Array2::zeros((h, 2 * h)),
            combine_b: Array1::zeros(h),
            out_w: Array2::zeros((cfg.tgt_vocab_size, h)),
            out_b: Array1::zeros(cfg.tgt_vocab_size),
        }
    }

    /// Every entry drawn uniform(-0.1, 0.1) from the seeded generator, in
    /// the fixed tensor order of [`Parameters::flat_tensors_mut`].
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut params = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slice in params.flat_tensors_mut() {
            for v in slice {
                *v = rng.random_range(-0.1..0.1);
            }
        }
        params
    }

    pub fn tensor_names() -> [&'static str; 13] {
        [
            "src_embed",
            "tgt_embed",
            "enc_input",
            "enc_recurrent",
            "enc_bias",
            "dec_input",
            "dec_recurrent",
            "dec_bias",
            "attn",
            "combine_w",
            "combine_b",
            "out_w",
            "out_b",
        ]
    }

    pub fn flat_tensors(&self) -> Vec<&[f64]> {
        vec![
            self.src_embed.as_slice().expect("contiguous"),
            self.tgt_embed.as_slice().expect("contiguous"),
            self.encoder.input.as_slice().expect("contiguous"),
            self.encoder.recurrent.as_slice().expect("contiguous"),
            self.encoder.bias.as_slice().expect("contiguous"),
            self.decoder.input.as_slice().expect("contiguous"),
            self.decoder.recurrent.as_slice().expect("contiguous"),
            self.decoder.bias.as_slice().expect("contiguous"),
            self.attn.as_slice().expect("contiguous"),
            self.combine_w.as_slice().expect("contiguous"),
            self.combine_b.as_slice().expect("contiguous"),
            self.out_w.as_slice().expect("contiguous"),
            self.out_b.as_slice().expect("contiguous"),
        ]
    }

    pub fn flat_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.src_embed.as_slice_mut().expect("contiguous"),
            self.tgt_embed.as_slice_mut().expect("contiguous"),
            self.encoder.input.as_slice_mut().expect("contiguous"),
            self.encoder.recurrent.as_slice_mut().expect("contiguous"),
            self.encoder.bias.as_slice_mut().expect("contiguous"),
            self.decoder.input.as_slice_mut().expect("contiguous"),
            self.decoder.recurrent.as_slice_mut().expect("contiguous"),
            self.decoder.bias.as_slice_mut().expect("contiguous"),
            self.attn.as_slice_mut().expect("contiguous"),
            self.combine_w.as_slice_mut().expect("contiguous"),
            self.combine_b.as_slice_mut().expect("contiguous"),
            self.out_w.as_slice_mut().expect("contiguous"),
            self.out_b.as_slice_mut().expect("contiguous"),
        ]
    }

    /// Shapes in the same order as `flat_tensors`, for serialization.
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        vec![
            self.src_embed.shape().to_vec(),
            self.tgt_embed.shape().to_vec(),
            self.encoder.input.shape().to_vec(),
            self.encoder.recurrent.shape().to_vec(),
            self.encoder.bias.shape().to_vec(),
            self.decoder.input.shape().to_vec(),
            self.decoder.recurrent.shape().to_vec(),
            self.decoder.bias.shape().to_vec(),
            self.attn.shape().to_vec(),
            self.combine_w.shape().to_vec(),
            self.combine_b.shape().to_vec(),
            self.out_w.shape().to_vec(),
            self.out_b.shape().to_vec(),
        ]
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM cell update with gate order i, f, g, o.
pub fn lstm_step(
    w: &LstmWeights,
    x: &ArrayView1<f64>,
    h_prev: &ArrayView1<f64>,
    c_prev: &ArrayView1<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let (h, cache) = lstm_step_cached(w, x, h_prev, c_prev);
    (h, cache.c)
}

/// Intermediate values of one LSTM step, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub x: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub c_prev: Array1<f64>,
    pub i: Array1<f64>,
    pub f: Array1<f64>,
    pub g: Array1<f64>,
    pub o: Array1<f64>,
    pub c: Array1<f64>,
    pub tanh_c: Array1<f64>,
}

pub(crate) fn lstm_step_cached(
    w: &LstmWeights,
    x: &ArrayView1<f64>,
    h_prev: &ArrayView1<f64>,
    c_prev: &ArrayView1<f64>,
) -> (Array1<f64>, StepCache) {
    let hidden = w.recurrent.ncols();
    let z = w.input.dot(x) + w.recurrent.dot(h_prev) + &w.bias;
    let i = z.slice(ndarray::s![0..hidden]).mapv(sigmoid);
    let f = z.slice(ndarray::s![hidden..2 * hidden]).mapv(sigmoid);
    let g = z.slice(ndarray::s![2 * hidden..3 * hidden]).mapv(f64::tanh);
    let o = z.slice(ndarray::s![3 * hidden..4 * hidden]).mapv(sigmoid);
    let c = &f * c_prev + &i * &g;
    let tanh_c = c.mapv(f64::tanh);
    let h = &o * &tanh_c;
    (
        h,
        StepCache {
            x: x.to_owned(),
            h_prev: h_prev.to_owned(),
            c_prev: c_prev.to_owned(),
            i,
            f,
            g,
            o,
            c,
            tanh_c,
        },
    )
}

/// Encoder outputs: one state row per source position plus the final cell.
#[derive(Debug, Clone)]
pub struct EncoderStates {
    pub states: Array2<f64>, // T x h
    pub final_h: Array1<f64>,
    pub final_c: Array1<f64>,
}

/// Embed and run the encoder left to right from the zero state.
pub fn encode_sequence(
    params: &Parameters,
    cfg: &ModelConfig,
    src_ids: &[u32],
) -> Result<EncoderStates, ModelError> {
    let (states, _caches, final_c) = encode_sequence_cached(params, cfg, src_ids, None)?;
    let final_h = states.row(states.nrows() - 1).to_owned();
    Ok(EncoderStates {
        states,
        final_h,
        final_c,
    })
}

pub(crate) type EncodedSequence = (
    Array2<f64>,
    Vec<(StepCache, Option<Array1<f64>>)>,
    Array1<f64>,
);

pub(crate) fn encode_sequence_cached(
    params: &Parameters,
    cfg: &ModelConfig,
    src_ids: &[u32],
    mut dropout: Option<&mut DropoutSource>,
) -> Result<EncodedSequence, ModelError> {
    if src_ids.is_empty() {
        return Err(ModelError::EmptySource);
    }
    let h = cfg.hidden;
    let mut states = Array2::zeros((src_ids.len(), h));
    let mut caches = Vec::with_capacity(src_ids.len());
    let mut h_prev = Array1::zeros(h);
    let mut c_prev = Array1::zeros(h);
    for (s, &id) in src_ids.iter().enumerate() {
        if id as usize >= params.src_embed.nrows() {
            return Err(ModelError::MalformedBatch(format!(
                "source id {id} out of vocab"
            )));
        }
        let mut x = params.src_embed.row(id as usize).to_owned();
        let mask = dropout.as_mut().map(|d| d.mask(x.len()));
        if let Some(m) = &mask {
            x = &x * m;
        }
        let (h_t, cache) = lstm_step_cached(&params.encoder, &x.view(), &h_prev.view(), &c_prev.view());
        states.row_mut(s).assign(&h_t);
        caches.push((cache, mask));
        h_prev = h_t;
        c_prev = caches.last().unwrap().0.c.clone();
    }
    Ok((states, caches, c_prev))
}

/// Numerically stable softmax.
pub(crate) fn softmax(scores: &Array1<f64>) -> Array1<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = scores.mapv(|s| (s - max).exp());
    let sum = exps.sum();
    exps / sum
}

/// Global attention over all encoder states for one decoder state.
pub fn attend(
    h_dec: &ArrayView1<f64>,
    enc_states: &Array2<f64>,
    attn: Option<&Array2<f64>>,
) -> (Array1<f64>, Array1<f64>) {
    let scores = match attn {
        Some(w_a) => enc_states.dot(&w_a.t()).dot(h_dec),
        None => enc_states.dot(h_dec),
    };
    let weights = softmax(&scores);
    let context = weights.dot(enc_states);
    (context, weights)
}

/// One training batch: ragged id rows; target rows carry bos/eos framing.
/// Padding is implicit (positions past a row's length contribute nothing).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub src: Vec<Vec<u32>>,
    pub tgt: Vec<Vec<u32>>,
    /// Set when a single pair exceeded the batch token budget on its own.
    pub oversized: bool,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.src.len()
    }

    pub fn max_src_len(&self) -> usize {
        self.src.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn max_tgt_len(&self) -> usize {
        self.tgt.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// rows x max(padded source length, padded target length)
    pub fn cost(&self) -> usize {
        self.rows() * self.max_src_len().max(self.max_tgt_len())
    }

    /// Target tokens that incur loss (everything after each row's bos).
    pub fn target_token_count(&self) -> usize {
        self.tgt.iter().map(|t| t.len().saturating_sub(1)).sum()
    }

    pub(crate) fn validate(&self) -> Result<(), ModelError> {
        if self.src.len() != self.tgt.len() {
            return Err(ModelError::MalformedBatch(format!(
                "{} source rows vs {} target rows",
                self.src.len(),
                self.tgt.len()
            )));
        }
        for (s, t) in self.src.iter().zip(&self.tgt) {
            if s.is_empty() {
                return Err(ModelError::MalformedBatch("empty source row".into()));
            }
            if t.len() < 2 || t[0] != BOS_ID || *t.last().unwrap() != EOS_ID {
                return Err(ModelError::MalformedBatch(
                    "target row must be bos ... eos".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Inverted-scaling dropout mask stream.
pub(crate) struct DropoutSource {
    rng: ChaCha8Rng,
    rate: f64,
}

impl DropoutSource {
    pub fn new(rate: f64, seed: u64) -> Option<Self> {
        (rate > 0.0).then(|| DropoutSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
            rate,
        })
    }

    pub fn mask(&mut self, len: usize) -> Array1<f64> {
        let keep = 1.0 - self.rate;
        Array1::from_iter((0..len).map(|_| {
            if self.rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        }))
    }
}

/// Teacher-forced mean cross-entropy over the batch.
pub fn forward_loss(
    params: &Parameters,
    cfg: &ModelConfig,
    batch: &Batch,
    dropout_on: bool,
    seed: u64,
) -> Result<(f64, usize), ModelError> {
    backprop::run_batch(params, cfg, batch, dropout_on, seed, None)
}

pub(crate) fn log_softmax_nll(logits: &Array1<f64>, gold: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = logits.mapv(|l| (l - max).exp()).sum().ln() + max;
    log_z - logits[gold]
}
