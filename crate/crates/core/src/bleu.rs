//! Corpus-level BLEU: clipped n-gram precisions (orders 1-4), brevity
//! penalty, and exponential smoothing for zero-match orders.

use std::collections::HashMap;

use thiserror::Error;

const MAX_ORDER: usize = 4;

#[derive(Debug, Error)]
pub enum BleuError {
    #[error("hypothesis/reference counts differ: {hyps} vs {refs}")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("no sentences to score")]
    EmptyInput,
}

/// Corpus BLEU result. `score` and `precisions` are on the 0-100 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub bp: f64,
    pub sys_len: usize,
    pub ref_len: usize,
}

impl BleuScore {
    /// Signature line in the conventional scorer format.
    pub fn summary(&self) -> String {
        format!(
            "BLEU = {:.2} {:.1}/{:.1}/{:.1}/{:.1} (BP = {:.3}, sys_len = {}, ref_len = {})",
            self.score,
            self.precisions[0],
            self.precisions[1],
            self.precisions[2],
            self.precisions[3],
            self.bp,
            self.sys_len,
            self.ref_len
        )
    }
}

/// Language-independent evaluation tokenizer.
///
/// Unicode whitespace maps to ASCII space; every character that is neither
/// letter, digit, nor space is split off as its own token, except `.` and `,`
/// when flanked by digits on both sides.
pub fn eval_tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text
        .chars()
        .map(|c| if c.is_whitespace() { ' ' } else { c })
        .collect();
    let mut spaced = String::with_capacity(chars.len() * 2);
    for (i, &c) in chars.iter().enumerate() {
        if c == ' ' || c.is_alphabetic() || c.is_numeric() {
            spaced.push(c);
            continue;
        }
        let digit_flanked = (c == '.' || c == ',')
            && i > 0
            && chars[i - 1].is_numeric()
            && chars.get(i + 1).is_some_and(|n| n.is_numeric());
        if digit_flanked {
            spaced.push(c);
        } else {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        }
    }
    spaced.split_whitespace().map(str::to_owned).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Single-reference corpus BLEU over raw (untokenized) sentence strings.
pub fn corpus_bleu(
    hypotheses: &[String],
    references: &[String],
    lowercase: bool,
) -> Result<BleuScore, BleuError> {
    if hypotheses.len() != references.len() {
        return Err(BleuError::LengthMismatch {
            hyps: hypotheses.len(),
            refs: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(BleuError::EmptyInput);
    }

    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let mut sys_len = 0usize;
    let mut ref_len = 0usize;

    for (hyp, rf) in hypotheses.iter().zip(references) {
        let (hyp, rf) = if lowercase {
            (hyp.to_lowercase(), rf.to_lowercase())
        } else {
            (hyp.clone(), rf.clone())
        };
        let hyp_toks = eval_tokenize(&hyp);
        let ref_toks = eval_tokenize(&rf);
        sys_len += hyp_toks.len();
        ref_len += ref_toks.len();
        for n in 1..=MAX_ORDER {
            if hyp_toks.len() < n {
                continue;
            }
            totals[n - 1] += hyp_toks.len() - n + 1;
            let ref_counts = ngram_counts(&ref_toks, n);
            for (gram, count) in ngram_counts(&hyp_toks, n) {
                matches[n - 1] += count.min(*ref_counts.get(gram).unwrap_or(&0));
            }
        }
    }

    let bp = if sys_len == 0 {
        0.0
    } else if sys_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / sys_len as f64).exp()
    };

    let mut precisions = [0.0; MAX_ORDER];
    let mut log_sum = 0.0;
    let mut any_empty_order = false;
    let mut smooth = 1.0f64;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            any_empty_order = true;
            continue;
        }
        let p = if matches[n] == 0 {
            smooth *= 2.0;
            1.0 / (smooth * totals[n] as f64)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        precisions[n] = 100.0 * p;
        log_sum += p.ln();
    }

    let score = if any_empty_order {
        0.0
    } else {
        100.0 * bp * (log_sum / MAX_ORDER as f64).exp()
    };

    Ok(BleuScore {
        score,
        precisions,
        bp,
        sys_len,
        ref_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn tokenize_punctuation() {
        assert_eq!(eval_tokenize("Hello, world!"), s(&["Hello", ",", "world", "!"]));
    }

    #[test]
    fn tokenize_keeps_digit_flanked_period() {
        assert_eq!(eval_tokenize("3.14"), s(&["3.14"]));
        assert_eq!(eval_tokenize("3. 14"), s(&["3", ".", "14"]));
        assert_eq!(eval_tokenize("a.b"), s(&["a", ".", "b"]));
    }

    #[test]
    fn tokenize_plain_word() {
        assert_eq!(eval_tokenize("abc"), s(&["abc"]));
    }

    #[test]
    fn identical_corpora_score_100() {
        let lines = s(&["the cat sat", "a b c d e"]);
        let b = corpus_bleu(&lines, &lines, false).unwrap();
        assert_eq!(b.score, 100.0);
        assert_eq!(b.bp, 1.0);
        for p in b.precisions {
            assert_eq!(p, 100.0);
        }
    }

    #[test]
    fn hand_example_brevity_penalty() {
        // p = 5/5, 3/4, 2/3, 1/2; bp = exp(1 - 6/5)
        let b = corpus_bleu(
            &s(&["the cat sat on mat"]),
            &s(&["the cat sat on the mat"]),
            false,
        )
        .unwrap();
        assert!((b.bp - (-0.2f64).exp()).abs() < 1e-9);
        assert!((b.precisions[0] - 100.0).abs() < 1e-9);
        assert!((b.precisions[1] - 75.0).abs() < 1e-9);
        assert!((b.precisions[2] - 200.0 / 3.0).abs() < 1e-9);
        assert!((b.precisions[3] - 50.0).abs() < 1e-9);
        assert!((b.score - 57.89).abs() < 0.01);
    }

    #[test]
    fn empty_hypothesis_scores_zero() {
        let b = corpus_bleu(&s(&[""]), &s(&["a b c d e"]), false).unwrap();
        assert_eq!(b.score, 0.0);
    }

    #[test]
    fn count_mismatch_rejected() {
        assert!(matches!(
            corpus_bleu(&s(&["a"]), &s(&["a", "b"]), false),
            Err(BleuError::LengthMismatch { .. })
        ));
        assert!(matches!(corpus_bleu(&[], &[], false), Err(BleuError::EmptyInput)));
    }

    #[test]
    fn joint_permutation_invariance() {
        let hyp = s(&["a b c", "d e f g", "x y"]);
        let rf = s(&["a b d", "d e f h", "x z"]);
        let b1 = corpus_bleu(&hyp, &rf, false).unwrap();
        let perm = [2usize, 0, 1];
        let hyp2: Vec<String> = perm.iter().map(|&i| hyp[i].clone()).collect();
        let rf2: Vec<String> = perm.iter().map(|&i| rf[i].clone()).collect();
        let b2 = corpus_bleu(&hyp2, &rf2, false).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn self_concatenation_invariance() {
        // All orders must have matches; smoothing of a zero-match order is
        // count-dependent by construction.
        let hyp = s(&["a b c d e", "e f g h"]);
        let rf = s(&["a b c d f", "e f g i"]);
        let b1 = corpus_bleu(&hyp, &rf, false).unwrap();
        let hyp2: Vec<String> = hyp.iter().chain(&hyp).cloned().collect();
        let rf2: Vec<String> = rf.iter().chain(&rf).cloned().collect();
        let b2 = corpus_bleu(&hyp2, &rf2, false).unwrap();
        assert!((b1.score - b2.score).abs() < 1e-9);
    }

    #[test]
    fn lowercase_flag() {
        let b = corpus_bleu(&s(&["The Cat"]), &s(&["the cat"]), true).unwrap();
        assert!((b.precisions[0] - 100.0).abs() < 1e-9);
    }
}
