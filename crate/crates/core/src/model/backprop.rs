//! Exact reverse-mode differentiation of the forward loss, plus the
//! finite-difference gradient checker used as its oracle.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    attend, encode_sequence_cached, log_softmax_nll, lstm_step_cached, softmax, AttentionKind,
    Batch, DropoutSource, Gradients, LstmWeights, ModelConfig, ModelError, Parameters, StepCache,
};

fn add_outer(m: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            m.row_mut(i).scaled_add(ai, b);
        }
    }
}

fn lstm_backward_step(
    w: &LstmWeights,
    cache: &StepCache,
    dh: &Array1<f64>,
    dc_in: &Array1<f64>,
    gw: &mut LstmWeights,
) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
    let d_o = dh * &cache.tanh_c;
    let dc = dc_in + &(dh * &cache.o * cache.tanh_c.mapv(|t| 1.0 - t * t));
    let di = &dc * &cache.g;
    let df = &dc * &cache.c_prev;
    let dg = &dc * &cache.i;
    let dc_prev = &dc * &cache.f;

    let hidden = cache.i.len();
    let mut dz = Array1::zeros(4 * hidden);
    for j in 0..hidden {
        dz[j] = di[j] * cache.i[j] * (1.0 - cache.i[j]);
        dz[hidden + j] = df[j] * cache.f[j] * (1.0 - cache.f[j]);
        dz[2 * hidden + j] = dg[j] * (1.0 - cache.g[j] * cache.g[j]);
        dz[3 * hidden + j] = d_o[j] * cache.o[j] * (1.0 - cache.o[j]);
    }

    add_outer(&mut gw.input, &dz, &cache.x);
    add_outer(&mut gw.recurrent, &dz, &cache.h_prev);
    gw.bias += &dz;

    let dx = w.input.t().dot(&dz);
    let dh_prev = w.recurrent.t().dot(&dz);
    (dx, dh_prev, dc_prev)
}

struct DecStepCache {
    lstm: StepCache,
    weights: Array1<f64>,
    ctx: Array1<f64>,
    hd: Array1<f64>,
    /// tanh output before dropout.
    htilde: Array1<f64>,
    mask_h: Option<Array1<f64>>,
    mask_e: Option<Array1<f64>>,
    probs: Array1<f64>,
    gold: usize,
    input: usize,
}

/// Forward (and optionally backward) over one batch. Returns the mean
/// per-token loss and the number of scored target tokens; gradients, when
/// requested, are of that mean loss.
pub(super) fn run_batch(
    params: &Parameters,
    cfg: &ModelConfig,
    batch: &Batch,
    dropout_on: bool,
    seed: u64,
    mut grads: Option<&mut Gradients>,
) -> Result<(f64, usize), ModelError> {
    batch.validate()?;
    let rate = if dropout_on { cfg.dropout } else { 0.0 };
    let mut dropout = DropoutSource::new(rate, seed);
    let hidden = cfg.hidden;
    let want_grads = grads.is_some();

    let mut total_nll = 0.0;
    let mut token_count = 0usize;

    for (src, tgt) in batch.src.iter().zip(&batch.tgt) {
        let (enc_states, enc_caches, final_c) =
            encode_sequence_cached(params, cfg, src, dropout.as_mut())?;
        let t_src = src.len();

        let mut h = enc_states.row(t_src - 1).to_owned();
        let mut c = final_c;
        let mut dec_caches: Vec<DecStepCache> = Vec::new();

        for t in 0..tgt.len() - 1 {
            let input = tgt[t] as usize;
            let gold = tgt[t + 1] as usize;
            if input >= params.tgt_embed.nrows() || gold >= params.out_b.len() {
                return Err(ModelError::MalformedBatch("target id out of vocab".into()));
            }
            let mut x = params.tgt_embed.row(input).to_owned();
            let mask_e = dropout.as_mut().map(|d| d.mask(x.len()));
            if let Some(m) = &mask_e {
                x = &x * m;
            }
            let (hd, lstm) = lstm_step_cached(&params.decoder, &x.view(), &h.view(), &c.view());
            let attn = match cfg.attention {
                AttentionKind::General => Some(&params.attn),
                AttentionKind::Dot => None,
            };
            let (ctx, weights) = attend(&hd.view(), &enc_states, attn);

            let mut cat = Array1::zeros(2 * hidden);
            cat.slice_mut(ndarray::s![0..hidden]).assign(&ctx);
            cat.slice_mut(ndarray::s![hidden..2 * hidden]).assign(&hd);
            let pre = params.combine_w.dot(&cat) + &params.combine_b;
            let htilde = pre.mapv(f64::tanh);
            let mask_h = dropout.as_mut().map(|d| d.mask(htilde.len()));
            let htilde_d = match &mask_h {
                Some(m) => &htilde * m,
                None => htilde.clone(),
            };
            let logits = params.out_w.dot(&htilde_d) + &params.out_b;
            total_nll += log_softmax_nll(&logits, gold);
            token_count += 1;

            c = lstm.c.clone();
            if want_grads {
                dec_caches.push(DecStepCache {
                    probs: softmax(&logits),
                    weights,
                    ctx,
                    hd: hd.clone(),
                    htilde,
                    mask_h,
                    mask_e,
                    gold,
                    input,
                    lstm,
                });
            }
            h = hd;
        }

        let Some(g) = grads.as_deref_mut() else {
            continue;
        };

        // Decoder backward.
        let mut denc_states: Array2<f64> = Array2::zeros((t_src, hidden));
        let mut dh_next = Array1::zeros(hidden);
        let mut dc_next = Array1::zeros(hidden);
        for step in dec_caches.iter().rev() {
            let mut dlogits = step.probs.clone();
            dlogits[step.gold] -= 1.0;
            let htilde_d = match &step.mask_h {
                Some(m) => &step.htilde * m,
                None => step.htilde.clone(),
            };
            add_outer(&mut g.out_w, &dlogits, &htilde_d);
            g.out_b += &dlogits;

            let dhtilde_d = params.out_w.t().dot(&dlogits);
            let dhtilde = match &step.mask_h {
                Some(m) => &dhtilde_d * m,
                None => dhtilde_d,
            };
            let dpre = &dhtilde * &step.htilde.mapv(|t| 1.0 - t * t);

            let mut cat = Array1::zeros(2 * hidden);
            cat.slice_mut(ndarray::s![0..hidden]).assign(&step.ctx);
            cat.slice_mut(ndarray::s![hidden..2 * hidden]).assign(&step.hd);
            add_outer(&mut g.combine_w, &dpre, &cat);
            g.combine_b += &dpre;
            let dcat = params.combine_w.t().dot(&dpre);
            let dctx = dcat.slice(ndarray::s![0..hidden]).to_owned();
            let mut dhd = dcat.slice(ndarray::s![hidden..2 * hidden]).to_owned();

            // Attention backward: context mixing then score softmax.
            let dweights = enc_states.dot(&dctx);
            add_outer(&mut denc_states, &step.weights, &dctx);
            let wd = step.weights.dot(&dweights);
            let dscores = &step.weights * &dweights.mapv(|d| d - wd);
            match cfg.attention {
                AttentionKind::General => {
                    let u = enc_states.t().dot(&dscores);
                    add_outer(&mut g.attn, &step.hd, &u);
                    dhd += &params.attn.dot(&u);
                    let v = params.attn.t().dot(&step.hd);
                    add_outer(&mut denc_states, &dscores, &v);
                }
                AttentionKind::Dot => {
                    dhd += &enc_states.t().dot(&dscores);
                    add_outer(&mut denc_states, &dscores, &step.hd);
                }
            }

            let dh_total = &dhd + &dh_next;
            let (dx, dh_prev, dc_prev) =
                lstm_backward_step(&params.decoder, &step.lstm, &dh_total, &dc_next, &mut g.decoder);
            let demb = match &step.mask_e {
                Some(m) => &dx * m,
                None => dx,
            };
            g.tgt_embed.row_mut(step.input).scaled_add(1.0, &demb);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }

        // Decoder initial state came from the encoder's final step.
        denc_states.row_mut(t_src - 1).scaled_add(1.0, &dh_next);
        let mut dh_rec = Array1::zeros(hidden);
        let mut dc_rec = dc_next;
        for s in (0..t_src).rev() {
            let dh = &denc_states.row(s).to_owned() + &dh_rec;
            let (cache, mask_e) = &enc_caches[s];
            let (dx, dh_prev, dc_prev) =
                lstm_backward_step(&params.encoder, cache, &dh, &dc_rec, &mut g.encoder);
            let demb = match mask_e {
                Some(m) => &dx * m,
                None => dx,
            };
            g.src_embed.row_mut(src[s] as usize).scaled_add(1.0, &demb);
            dh_rec = dh_prev;
            dc_rec = dc_prev;
        }
    }

    if token_count == 0 {
        return Err(ModelError::MalformedBatch("no target tokens".into()));
    }
    let scale = 1.0 / token_count as f64;
    if let Some(g) = grads {
        for t in g.flat_tensors_mut() {
            for v in t {
                *v *= scale;
            }
        }
    }
    Ok((total_nll * scale, token_count))
}

/// Gradient of the mean loss with respect to every parameter tensor, with
/// dropout off.
pub fn backward(
    params: &Parameters,
    cfg: &ModelConfig,
    batch: &Batch,
) -> Result<Gradients, ModelError> {
    let mut grads = Parameters::zeros(cfg);
    run_batch(params, cfg, batch, false, 0, Some(&mut grads))?;
    Ok(grads)
}

/// Combined loss + gradients with the training dropout configuration.
pub fn forward_backward(
    params: &Parameters,
    cfg: &ModelConfig,
    batch: &Batch,
    dropout_on: bool,
    seed: u64,
) -> Result<(f64, usize, Gradients), ModelError> {
    let mut grads = Parameters::zeros(cfg);
    let (loss, tokens) = run_batch(params, cfg, batch, dropout_on, seed, Some(&mut grads))?;
    Ok((loss, tokens, grads))
}

/// Central-difference check of `backward` against `forward_loss`.
///
/// Samples up to 200 coordinates per tensor and returns the worst relative
/// error `|a - n| / max(1e-6, |a| + |n|)`; the 1e-6 floor absorbs
/// finite-difference noise on coordinates whose true gradient is zero.
pub fn gradient_check(
    params: &Parameters,
    cfg: &ModelConfig,
    batch: &Batch,
    epsilon: f64,
) -> Result<f64, ModelError> {
    let analytic = backward(params, cfg, batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_CAFE);
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    let n_tensors = params.flat_tensors().len();
    for ti in 0..n_tensors {
        let len = params.flat_tensors()[ti].len();
        if len == 0 {
            continue;
        }
        let coords: Vec<usize> = if len <= 200 {
            (0..len).collect()
        } else {
            (0..200).map(|_| rng.random_range(0..len)).collect()
        };
        for k in coords {
            let orig = params.flat_tensors()[ti][k];
            probe.flat_tensors_mut()[ti][k] = orig + epsilon;
            let (plus, _) = super::forward_loss(&probe, cfg, batch, false, 0)?;
            probe.flat_tensors_mut()[ti][k] = orig - epsilon;
            let (minus, _) = super::forward_loss(&probe, cfg, batch, false, 0)?;
            probe.flat_tensors_mut()[ti][k] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.flat_tensors()[ti][k];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
