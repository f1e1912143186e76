//! Adam optimization, token-count batching, checkpointing, and
//! checkpoint-patience early stopping.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{
    forward_backward, forward_loss, Batch, Gradients, ModelConfig, ModelError, Parameters,
};

const CKPT_MAGIC: &[u8; 8] = b"LRMTCKP\0";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch between parameters and gradients")]
    ShapeMismatch,
    #[error("empty train or validation split")]
    EmptySplit,
    #[error("checkpoint version mismatch: found {0}")]
    VersionMismatch(u32),
    #[error("checkpoint config fingerprint mismatch")]
    FingerprintMismatch,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_tokens: usize,
    pub checkpoint_every: u64,
    pub patience: usize,
    pub max_steps: u64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Early-stop on 100 - validation BLEU instead of validation loss.
    pub stop_on_bleu: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_tokens: 4096,
            checkpoint_every: 500,
            patience: 6,
            max_steps: 100_000,
            clip_norm: 5.0,
            seed: 1,
            stop_on_bleu: false,
        }
    }
}

/// Adam first/second moment tensors plus the bias-correction step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Gradients,
    pub v: Gradients,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(cfg: &ModelConfig) -> Self {
        OptimizerState {
            m: Parameters::zeros(cfg),
            v: Parameters::zeros(cfg),
            t: 0,
        }
    }
}

/// One Adam update. Gradients are expected pre-clipped.
pub fn adam_step(
    params: &mut Parameters,
    grads: &Gradients,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if params.tensor_shapes() != grads.tensor_shapes() {
        return Err(TrainError::ShapeMismatch);
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut p = params.flat_tensors_mut();
    let g = grads.flat_tensors();
    let mut m = state.m.flat_tensors_mut();
    let mut v = state.v.flat_tensors_mut();
    for ti in 0..p.len() {
        let (pt, gt, mt, vt) = (&mut p[ti], g[ti], &mut m[ti], &mut v[ti]);
        for k in 0..gt.len() {
            mt[k] = cfg.beta1 * mt[k] + (1.0 - cfg.beta1) * gt[k];
            vt[k] = cfg.beta2 * vt[k] + (1.0 - cfg.beta2) * gt[k] * gt[k];
            let m_hat = mt[k] / bc1;
            let v_hat = vt[k] / bc2;
            pt[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Scale gradients so their global L2 norm is at most `clip_norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut Gradients, clip_norm: f64) -> f64 {
    let norm: f64 = grads
        .flat_tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > clip_norm && norm > 0.0 {
        let scale = clip_norm / norm;
        for t in grads.flat_tensors_mut() {
            for v in t {
                *v *= scale;
            }
        }
    }
    norm
}

/// Bucket pairs by source length, shuffle bucket order with the seed, and
/// pack greedily under `rows x max(padded src len, padded tgt len) <=
/// batch_tokens`. A single pair over the budget becomes its own flagged
/// batch. Every pair lands in exactly one batch.
pub fn make_batches(
    pairs: &[(Vec<u32>, Vec<u32>)],
    batch_tokens: usize,
    seed: u64,
) -> Vec<Batch> {
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (src, _)) in pairs.iter().enumerate() {
        buckets.entry(src.len()).or_default().push(i);
    }
    let mut bucket_list: Vec<Vec<usize>> = buckets.into_values().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    bucket_list.shuffle(&mut rng);

    let mut batches = Vec::new();
    let mut cur = Batch {
        src: Vec::new(),
        tgt: Vec::new(),
        oversized: false,
    };
    let mut cur_max = 0usize;
    for idx in bucket_list.into_iter().flatten() {
        let (src, tgt) = &pairs[idx];
        let len = src.len().max(tgt.len());
        let new_max = cur_max.max(len);
        if !cur.src.is_empty() && (cur.rows() + 1) * new_max > batch_tokens {
            batches.push(std::mem::replace(
                &mut cur,
                Batch {
                    src: Vec::new(),
                    tgt: Vec::new(),
                    oversized: false,
                },
            ));
            cur_max = 0;
        }
        cur.src.push(src.clone());
        cur.tgt.push(tgt.clone());
        cur_max = cur_max.max(len);
        if cur.rows() == 1 && cur_max > batch_tokens {
            cur.oversized = true;
            batches.push(std::mem::replace(
                &mut cur,
                Batch {
                    src: Vec::new(),
                    tgt: Vec::new(),
                    oversized: false,
                },
            ));
            cur_max = 0;
        }
    }
    if !cur.src.is_empty() {
        batches.push(cur);
    }
    batches
}

/// True iff the number of checkpoints since the strictly lowest (first
/// occurrence) metric value is at least `patience`.
pub fn should_stop(metric_history: &[f64], patience: usize) -> bool {
    let Some((best_idx, _)) = metric_history
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(a.0.cmp(&b.0)))
    else {
        return false;
    };
    metric_history.len() - 1 - best_idx >= patience
}

/// A trained-state snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters,
    pub opt: OptimizerState,
    pub step: u64,
    /// (step, validation metric), strictly increasing in step.
    pub history: Vec<(u64, f64)>,
    pub fingerprint: u64,
}

/// Per-checkpoint training log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub entries: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub step: u64,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub best: bool,
}

impl HistoryEntry {
    pub fn log_line(&self) -> String {
        format!(
            "step={} train_loss={:.6} valid_loss={:.6} best={}",
            self.step, self.train_loss, self.valid_loss, self.best
        )
    }
}

/// Everything one training run needs.
pub struct TrainTask<'a> {
    pub train_pairs: &'a [(Vec<u32>, Vec<u32>)],
    pub valid_pairs: &'a [(Vec<u32>, Vec<u32>)],
    pub model_config: &'a ModelConfig,
    pub train_config: &'a TrainConfig,
    /// Directory for periodic checkpoint files (atomic write+rename).
    pub checkpoint_dir: Option<&'a Path>,
    /// Resume point; training replays the batch schedule up to its step.
    pub resume_from: Option<Checkpoint>,
}

/// Mean validation loss with dropout off.
pub fn validation_loss(
    params: &Parameters,
    cfg: &ModelConfig,
    valid_pairs: &[(Vec<u32>, Vec<u32>)],
    batch_tokens: usize,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for batch in make_batches(valid_pairs, batch_tokens, 0) {
        let (loss, n) = forward_loss(params, cfg, &batch, false, 0)?;
        total += loss * n as f64;
        tokens += n;
    }
    if tokens == 0 {
        return Err(TrainError::EmptySplit);
    }
    Ok(total / tokens as f64)
}

pub fn train(task: &TrainTask) -> Result<(Checkpoint, TrainingHistory), TrainError> {
    let model_cfg = task.model_config.clone();
    let valid = task.valid_pairs;
    let bt = task.train_config.batch_tokens;
    let mut eval = move |params: &Parameters, _step: u64| -> Result<f64, TrainError> {
        validation_loss(params, &model_cfg, valid, bt)
    };
    train_with_evaluator(task, &mut eval)
}

/// Training loop with an injectable validation evaluator (the plain
/// [`train`] wires in mean validation loss).
pub fn train_with_evaluator(
    task: &TrainTask,
    evaluator: &mut dyn FnMut(&Parameters, u64) -> Result<f64, TrainError>,
) -> Result<(Checkpoint, TrainingHistory), TrainError> {
    if task.train_pairs.is_empty() || task.valid_pairs.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let mcfg = task.model_config;
    let tcfg = task.train_config;
    let fingerprint = mcfg.fingerprint();

    let (mut params, mut opt, mut step, mut history) = match &task.resume_from {
        Some(ckpt) => {
            if ckpt.fingerprint != fingerprint {
                return Err(TrainError::FingerprintMismatch);
            }
            (
                ckpt.params.clone(),
                ckpt.opt.clone(),
                ckpt.step,
                ckpt.history.clone(),
            )
        }
        None => (
            Parameters::init(mcfg, tcfg.seed),
            OptimizerState::new(mcfg),
            0,
            Vec::new(),
        ),
    };
    let mut skip = step; // batches already consumed by the resumed run
    let mut log = TrainingHistory::default();
    let mut best: Option<Checkpoint> = None;
    let mut best_metric = history
        .iter()
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    let mut train_loss_acc = 0.0;
    let mut train_loss_n = 0usize;

    let mut epoch: u64 = 0;
    'outer: loop {
        let batches = make_batches(
            task.train_pairs,
            tcfg.batch_tokens,
            tcfg.seed.wrapping_add(epoch),
        );
        if batches.is_empty() {
            return Err(TrainError::EmptySplit);
        }
        for batch in &batches {
            if skip > 0 {
                skip -= 1;
                continue;
            }
            let dropout_seed = tcfg
                .seed
                .wrapping_add((step + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let (loss, _tokens, mut grads) =
                forward_backward(&params, mcfg, batch, true, dropout_seed)?;
            clip_gradients(&mut grads, tcfg.clip_norm);
            adam_step(&mut params, &grads, &mut opt, tcfg)?;
            step += 1;
            train_loss_acc += loss;
            train_loss_n += 1;

            if step % tcfg.checkpoint_every == 0 {
                let metric = evaluator(&params, step)?;
                history.push((step, metric));
                let is_best = metric < best_metric;
                if is_best {
                    best_metric = metric;
                    best = Some(Checkpoint {
                        params: params.clone(),
                        opt: opt.clone(),
                        step,
                        history: history.clone(),
                        fingerprint,
                    });
                }
                let entry = HistoryEntry {
                    step,
                    train_loss: train_loss_acc / train_loss_n.max(1) as f64,
                    valid_loss: metric,
                    best: is_best,
                };
                log::info!("{}", entry.log_line());
                log.entries.push(entry);
                train_loss_acc = 0.0;
                train_loss_n = 0;

                if let Some(dir) = task.checkpoint_dir {
                    let ckpt = Checkpoint {
                        params: params.clone(),
                        opt: opt.clone(),
                        step,
                        history: history.clone(),
                        fingerprint,
                    };
                    save_checkpoint(&ckpt, &dir.join(format!("step_{step}.ckpt")))?;
                }

                let metrics: Vec<f64> = history.iter().map(|(_, v)| *v).collect();
                if should_stop(&metrics, tcfg.patience) {
                    break 'outer;
                }
            }
            if step >= tcfg.max_steps {
                break 'outer;
            }
        }
        epoch += 1;
    }

    // A run shorter than one checkpoint interval still needs a snapshot.
    let best = match best {
        Some(b) => b,
        None => {
            let metric = evaluator(&params, step)?;
            history.push((step, metric));
            Checkpoint {
                params,
                opt,
                step,
                history,
                fingerprint,
            }
        }
    };
    Ok((best, log))
}

fn write_tensor(buf: &mut Vec<u8>, shape: &[usize], data: &[f64]) {
    buf.extend((shape.len() as u8).to_le_bytes());
    for &d in shape {
        buf.extend((d as u64).to_le_bytes());
    }
    for v in data {
        buf.extend(v.to_le_bytes());
    }
}

fn params_to_bytes(buf: &mut Vec<u8>, p: &Parameters) {
    for (shape, data) in p.tensor_shapes().iter().zip(p.flat_tensors()) {
        write_tensor(buf, shape, data);
    }
}

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        if self.pos + n > self.data.len() {
            return Err(TrainError::Corrupt("unexpected end of file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TrainError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, TrainError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_params_into(r: &mut ByteReader, p: &mut Parameters) -> Result<(), TrainError> {
    let shapes = p.tensor_shapes();
    for (ti, shape) in shapes.iter().enumerate() {
        let ndim = r.u8()? as usize;
        if ndim != shape.len() {
            return Err(TrainError::Corrupt(format!("tensor {ti} rank mismatch")));
        }
        for &expect in shape {
            let got = r.u64()? as usize;
            if got != expect {
                return Err(TrainError::Corrupt(format!("tensor {ti} shape mismatch")));
            }
        }
        let slice = &mut p.flat_tensors_mut()[ti];
        for k in 0..slice.len() {
            slice[k] = r.f64()?;
        }
    }
    Ok(())
}

/// Atomic (write-temp, rename) checkpoint save in the versioned binary
/// container format.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    let mut buf = Vec::new();
    buf.extend(CKPT_MAGIC);
    buf.extend(CKPT_VERSION.to_le_bytes());
    buf.extend(ckpt.fingerprint.to_le_bytes());
    buf.extend(ckpt.step.to_le_bytes());
    buf.extend((ckpt.history.len() as u64).to_le_bytes());
    for (s, v) in &ckpt.history {
        buf.extend(s.to_le_bytes());
        buf.extend(v.to_le_bytes());
    }
    buf.extend(ckpt.opt.t.to_le_bytes());
    params_to_bytes(&mut buf, &ckpt.params);
    params_to_bytes(&mut buf, &ckpt.opt.m);
    params_to_bytes(&mut buf, &ckpt.opt.v);

    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, cfg: &ModelConfig) -> Result<Checkpoint, TrainError> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    let mut r = ByteReader { data: &data, pos: 0 };
    if r.take(8)? != CKPT_MAGIC {
        return Err(TrainError::Corrupt("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(TrainError::VersionMismatch(version));
    }
    let fingerprint = r.u64()?;
    if fingerprint != cfg.fingerprint() {
        return Err(TrainError::FingerprintMismatch);
    }
    let step = r.u64()?;
    let n_hist = r.u64()? as usize;
    let mut history = Vec::with_capacity(n_hist);
    let mut prev_step = None;
    for _ in 0..n_hist {
        let s = r.u64()?;
        let v = r.f64()?;
        if prev_step.is_some_and(|p| s <= p) {
            return Err(TrainError::Corrupt("history steps not increasing".into()));
        }
        prev_step = Some(s);
        history.push((s, v));
    }
    let t = r.u64()?;
    let mut params = Parameters::zeros(cfg);
    let mut m = Parameters::zeros(cfg);
    let mut v = Parameters::zeros(cfg);
    read_params_into(&mut r, &mut params)?;
    read_params_into(&mut r, &mut m)?;
    read_params_into(&mut r, &mut v)?;
    if r.pos != data.len() {
        return Err(TrainError::Corrupt("trailing bytes".into()));
    }
    Ok(Checkpoint {
        params,
        opt: OptimizerState { m, v, t },
        step,
        history,
        fingerprint,
    })
}
