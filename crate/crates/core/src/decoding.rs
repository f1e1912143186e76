//! Greedy and beam-search decoding with length normalization.

use std::rc::Rc;

use ndarray::Array1;

use crate::model::{
    attend, encode_sequence, lstm_step, AttentionKind, EncoderStates, ModelConfig, ModelError,
    Parameters,
};
use crate::subword::{BOS_ID, EOS_ID};

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub length_penalty_alpha: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 5,
            length_penalty_alpha: 0.0,
        }
    }
}

/// Hard cap on generated length for a source of `src_len` tokens.
pub fn max_target_len(src_len: usize) -> usize {
    2 * src_len + 10
}

/// One autoregressive step: given the previous token and opaque state,
/// return a log-probability row over the target vocabulary and the next
/// state. Implementations must be deterministic.
pub trait StepDecoder {
    type State: Clone;

    fn start(&self) -> Self::State;
    fn step(&self, state: &Self::State, token: u32) -> (Array1<f64>, Self::State);
    fn src_len(&self) -> usize;
}

/// A finished or in-flight hypothesis. `tokens` excludes BOS and EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub score: f64,
}

fn length_normalized(log_prob: f64, len: usize, alpha: f64) -> f64 {
    if alpha == 0.0 {
        log_prob
    } else {
        log_prob / (len.max(1) as f64).powf(alpha)
    }
}

/// Argmax decoding; ties go to the lowest token id.
pub fn greedy_decode<D: StepDecoder>(decoder: &D) -> Hypothesis {
    let cap = max_target_len(decoder.src_len());
    let mut state = decoder.start();
    let mut token = BOS_ID;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..cap {
        let (log_probs, next) = decoder.step(&state, token);
        // PAD and BOS never continue a valid target sequence.
        let mut best = usize::MAX;
        for (i, &v) in log_probs.iter().enumerate() {
            if i as u32 == crate::subword::PAD_ID || i as u32 == BOS_ID {
                continue;
            }
            if best == usize::MAX || v > log_probs[best] {
                best = i;
            }
        }
        log_prob += log_probs[best];
        state = next;
        token = best as u32;
        if token == EOS_ID {
            break;
        }
        tokens.push(token);
    }
    let score = length_normalized(log_prob, tokens.len() + 1, 0.0);
    Hypothesis {
        tokens,
        log_prob,
        score,
    }
}

struct Beam<S> {
    tokens: Vec<u32>,
    log_prob: f64,
    state: S,
}

/// Beam search with a retired-finished pool. Finished hypotheses are
/// scored as `log_prob / len^alpha` where `len` counts generated tokens
/// including EOS. With alpha = 0 the search stops early once the best
/// live beam cannot beat the best finished hypothesis.
pub fn beam_decode<D: StepDecoder>(decoder: &D, cfg: &DecodeConfig) -> Hypothesis {
    assert!(cfg.beam_size >= 1, "beam size must be at least 1");
    let cap = max_target_len(decoder.src_len());
    let alpha = cfg.length_penalty_alpha;
    let mut live: Vec<Beam<D::State>> = vec![Beam {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: decoder.start(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..cap {
        if live.is_empty() {
            break;
        }
        // With no length penalty, extending a hypothesis can only lower
        // its log-probability, so a finished score above every live one
        // is already optimal.
        if alpha == 0.0 {
            if let Some(best_fin) = finished
                .iter()
                .map(|h| h.score)
                .max_by(|a, b| a.partial_cmp(b).unwrap())
            {
                let best_live = live
                    .iter()
                    .map(|b| b.log_prob)
                    .fold(f64::NEG_INFINITY, f64::max);
                if best_fin >= best_live {
                    break;
                }
            }
        }

        // (origin beam, token, new log_prob); ordered deterministically.
        let mut candidates: Vec<(usize, u32, f64)> = Vec::new();
        for (bi, beam) in live.iter().enumerate() {
            let prev = *beam.tokens.last().unwrap_or(&BOS_ID);
            let (log_probs, _) = decoder.step(&beam.state, prev);
            for (tok, &lp) in log_probs.iter().enumerate() {
                let tok = tok as u32;
                if tok == crate::subword::PAD_ID || tok == BOS_ID {
                    continue;
                }
                candidates.push((bi, tok, beam.log_prob + lp));
            }
        }
        candidates.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap()
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });
        candidates.truncate(cfg.beam_size);

        let mut next_live = Vec::new();
        for (bi, tok, lp) in candidates {
            let beam = &live[bi];
            if tok == EOS_ID {
                let len = beam.tokens.len() + 1;
                finished.push(Hypothesis {
                    tokens: beam.tokens.clone(),
                    log_prob: lp,
                    score: length_normalized(lp, len, alpha),
                });
            } else {
                let prev = *beam.tokens.last().unwrap_or(&BOS_ID);
                let (_, state) = decoder.step(&beam.state, prev);
                let mut tokens = beam.tokens.clone();
                tokens.push(tok);
                next_live.push(Beam {
                    tokens,
                    log_prob: lp,
                    state,
                });
            }
        }
        live = next_live;
    }

    // Hypotheses still live at the cap compete with their raw score.
    for beam in live {
        let len = beam.tokens.len().max(1);
        finished.push(Hypothesis {
            tokens: beam.tokens,
            log_prob: beam.log_prob,
            score: length_normalized(beam.log_prob, len, alpha),
        });
    }
    finished
        .into_iter()
        .max_by(|a, b| {
            a.score
                .partial_cmp(&b.score)
                .unwrap()
                .then(b.tokens.len().cmp(&a.tokens.len()).reverse())
                .then(b.tokens.cmp(&a.tokens).reverse())
        })
        .expect("decoding always yields at least one hypothesis")
}

/// Decoder state for the trained attention model: the previous LSTM
/// hidden/cell plus shared encoder states.
#[derive(Clone)]
pub struct NmtState {
    h: Array1<f64>,
    c: Array1<f64>,
    enc: Rc<EncoderStates>,
}

/// [`StepDecoder`] over trained parameters (dropout off).
pub struct NmtDecoder<'a> {
    params: &'a Parameters,
    cfg: &'a ModelConfig,
    enc: Rc<EncoderStates>,
    src_len: usize,
}

impl<'a> NmtDecoder<'a> {
    pub fn new(
        params: &'a Parameters,
        cfg: &'a ModelConfig,
        src_ids: &[u32],
    ) -> Result<Self, ModelError> {
        let enc = encode_sequence(params, cfg, src_ids)?;
        Ok(NmtDecoder {
            params,
            cfg,
            enc: Rc::new(enc),
            src_len: src_ids.len(),
        })
    }
}

impl StepDecoder for NmtDecoder<'_> {
    type State = NmtState;

    fn start(&self) -> NmtState {
        NmtState {
            h: self.enc.final_h.clone(),
            c: self.enc.final_c.clone(),
            enc: Rc::clone(&self.enc),
        }
    }

    fn step(&self, state: &NmtState, token: u32) -> (Array1<f64>, NmtState) {
        let p = self.params;
        let hidden = self.cfg.hidden;
        let x = p.tgt_embed.row(token as usize).to_owned();
        let (h, c) = lstm_step(&p.decoder, &x.view(), &state.h.view(), &state.c.view());
        let attn = match self.cfg.attention {
            AttentionKind::General => Some(&p.attn),
            AttentionKind::Dot => None,
        };
        let (ctx, _weights) = attend(&h.view(), &state.enc.states, attn);
        let mut cat = Array1::zeros(2 * hidden);
        cat.slice_mut(ndarray::s![0..hidden]).assign(&ctx);
        cat.slice_mut(ndarray::s![hidden..2 * hidden]).assign(&h);
        let htilde = (p.combine_w.dot(&cat) + &p.combine_b).mapv(f64::tanh);
        let logits = p.out_w.dot(&htilde) + &p.out_b;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = logits.mapv(|v| (v - max).exp()).sum().ln();
        let log_probs = logits.mapv(|v| v - max - lse);
        (
            log_probs,
            NmtState {
                h,
                c,
                enc: Rc::clone(&state.enc),
            },
        )
    }

    fn src_len(&self) -> usize {
        self.src_len
    }
}

/// Beam-decode one source sentence with trained parameters.
pub fn translate_ids(
    params: &Parameters,
    mcfg: &ModelConfig,
    dcfg: &DecodeConfig,
    src_ids: &[u32],
) -> Result<Hypothesis, ModelError> {
    let decoder = NmtDecoder::new(params, mcfg, src_ids)?;
    Ok(beam_decode(&decoder, dcfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scripted decoder: log-prob rows indexed by step count in state.
    struct ScriptDecoder {
        rows: Vec<Vec<f64>>,
        src_len: usize,
    }

    impl StepDecoder for ScriptDecoder {
        type State = usize;

        fn start(&self) -> usize {
            0
        }

        fn step(&self, state: &usize, _token: u32) -> (Array1<f64>, usize) {
            let row = &self.rows[(*state).min(self.rows.len() - 1)];
            (Array1::from_vec(row.clone()), state + 1)
        }

        fn src_len(&self) -> usize {
            self.src_len
        }
    }

    fn lp(v: &[f64]) -> Vec<f64> {
        v.iter().map(|p| p.ln()).collect()
    }

    #[test]
    fn eos_first_step_gives_empty_output() {
        // ids: 0 pad, 1 unk, 2 bos, 3 eos, 4..
        let dec = ScriptDecoder {
            rows: vec![lp(&[0.01, 0.01, 0.01, 0.9, 0.07])],
            src_len: 4,
        };
        assert!(greedy_decode(&dec).tokens.is_empty());
        assert!(beam_decode(&dec, &DecodeConfig::default()).tokens.is_empty());
    }

    #[test]
    fn cap_is_twice_src_plus_ten() {
        // EOS never wins: output hits the cap exactly.
        let dec = ScriptDecoder {
            rows: vec![lp(&[0.01, 0.01, 0.01, 0.01, 0.96])],
            src_len: 3,
        };
        let hyp = greedy_decode(&dec);
        assert_eq!(hyp.tokens.len(), 2 * 3 + 10);
        let hyp = beam_decode(&dec, &DecodeConfig::default());
        assert_eq!(hyp.tokens.len(), 16);
    }

    #[test]
    fn greedy_tie_breaks_to_lowest_id() {
        let dec = ScriptDecoder {
            rows: vec![
                lp(&[0.05, 0.05, 0.05, 0.05, 0.4, 0.4]),
                lp(&[0.01, 0.01, 0.01, 0.96, 0.005, 0.005]),
            ],
            src_len: 2,
        };
        assert_eq!(greedy_decode(&dec).tokens, vec![4]);
    }

    #[test]
    fn beam_one_equals_greedy() {
        let dec = ScriptDecoder {
            rows: vec![
                lp(&[0.01, 0.01, 0.01, 0.02, 0.6, 0.35]),
                lp(&[0.01, 0.01, 0.01, 0.02, 0.25, 0.7]),
                lp(&[0.01, 0.01, 0.01, 0.9, 0.04, 0.03]),
            ],
            src_len: 5,
        };
        let g = greedy_decode(&dec);
        let b = beam_decode(
            &dec,
            &DecodeConfig {
                beam_size: 1,
                length_penalty_alpha: 0.0,
            },
        );
        assert_eq!(g.tokens, b.tokens);
        assert!((g.log_prob - b.log_prob).abs() < 1e-12);
    }

    /// Two-step tree where greedy takes token 4 (p=0.6) but the better
    /// complete hypothesis starts with token 5 (p=0.4) and ends
    /// immediately (eos p=0.9): 0.4*0.9 = 0.36 beats 0.6*0.3.
    struct TreeDecoder;

    impl StepDecoder for TreeDecoder {
        type State = Vec<u32>;

        fn start(&self) -> Vec<u32> {
            Vec::new()
        }

        fn step(&self, state: &Vec<u32>, token: u32) -> (Array1<f64>, Vec<u32>) {
            let mut next = state.clone();
            if token != BOS_ID {
                next.push(token);
            }
            let row = match next.as_slice() {
                [] => lp(&[1e-9, 1e-9, 1e-9, 1e-9, 0.6, 0.4]),
                [4] => lp(&[1e-9, 1e-9, 1e-9, 0.3, 0.35, 0.35]),
                [5] => lp(&[1e-9, 1e-9, 1e-9, 0.9, 0.05, 0.05]),
                _ => lp(&[1e-9, 1e-9, 1e-9, 0.98, 0.01, 0.01]),
            };
            (Array1::from_vec(row), next)
        }

        fn src_len(&self) -> usize {
            3
        }
    }

    #[test]
    fn beam_beats_greedy_on_two_step_tree() {
        let greedy = greedy_decode(&TreeDecoder);
        assert_eq!(greedy.tokens[0], 4);
        let beam = beam_decode(
            &TreeDecoder,
            &DecodeConfig {
                beam_size: 2,
                length_penalty_alpha: 0.0,
            },
        );
        assert_eq!(beam.tokens, vec![5]);
        assert!((beam.log_prob - (0.4f64 * 0.9).ln()).abs() < 1e-9);
        assert!(beam.log_prob > greedy.log_prob);
    }

    #[test]
    fn wider_beams_never_score_worse() {
        // On the trained-model decoder, the best score is monotone
        // non-decreasing in beam width (alpha = 0).
        let mcfg = ModelConfig {
            embed_dim: 4,
            hidden: 5,
            dropout: 0.0,
            src_vocab_size: 9,
            tgt_vocab_size: 9,
            ..ModelConfig::default()
        };
        let params = Parameters::init(&mcfg, 11);
        let dcfg0 = DecodeConfig {
            beam_size: 1,
            length_penalty_alpha: 0.0,
        };
        for src in [vec![4u32, 5, 6], vec![7, 8], vec![4, 4, 4, 4, 5]] {
            let dec = NmtDecoder::new(&params, &mcfg, &src).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for k in 1..=6 {
                let hyp = beam_decode(
                    &dec,
                    &DecodeConfig {
                        beam_size: k,
                        ..dcfg0.clone()
                    },
                );
                assert!(
                    hyp.score >= prev - 1e-12,
                    "beam {k} scored {} < {prev}",
                    hyp.score
                );
                prev = hyp.score;
            }
        }
    }

    #[test]
    fn model_decoder_is_deterministic_and_capped() {
        let mcfg = ModelConfig {
            embed_dim: 3,
            hidden: 4,
            dropout: 0.5,
            src_vocab_size: 8,
            tgt_vocab_size: 8,
            ..ModelConfig::default()
        };
        let params = Parameters::init(&mcfg, 3);
        let dcfg = DecodeConfig::default();
        let a = translate_ids(&params, &mcfg, &dcfg, &[4, 5, 6, 7]).unwrap();
        let b = translate_ids(&params, &mcfg, &dcfg, &[4, 5, 6, 7]).unwrap();
        assert_eq!(a, b);
        assert!(a.tokens.len() <= max_target_len(4));
        assert!(!a.tokens.contains(&BOS_ID));
        assert!(!a.tokens.contains(&EOS_ID));
    }
}
