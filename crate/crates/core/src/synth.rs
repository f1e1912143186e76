//! Deterministic synthetic parallel corpora for desk-scale experiments.
//!
//! Two generators: a copy task (target equals source) for sanity-checking
//! the training loop, and a toy agglutinative language pair where the
//! target side composes stems with positional suffixes. The latter gives
//! subword models a structural edge over capped word vocabularies, because
//! rare inflected forms fall out of a word vocabulary but decompose
//! cleanly into frequent pieces.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ParallelCorpus, SentencePair};

/// Source-side word inventory over the letters {a,e,i,b,c,d,l,m,n,p,r,s},
/// disjoint from the target alphabet so pairs survive language filtering.
const SRC_STEMS: &[&str] = &[
    "balim", "ceda", "dremil", "lansi", "meric", "nable", "pelda", "rismen", "seblan", "ancil",
    "bedras", "cilem", "danpes", "elbin", "idras", "limpec", "mendil", "nipras", "sardem",
    "picel", "ranble", "seclim", "berdin", "calnes",
];

/// Per-stem target translations (same index) over {o,u,f,g,k,t,v,w,z}.
const TGT_STEMS: &[&str] = &[
    "tok", "guv", "fot", "zuk", "wog", "kuvot", "goz", "tuf", "vok", "zot", "kug", "fuw",
    "gokut", "tuz", "vof", "wuk", "zog", "futok", "kovuz", "guzot", "wotuk", "zofug", "tugov",
    "vokuz",
];

/// Positional suffixes cycled by word position modulo 4.
const TGT_SUFFIXES: &[&str] = &["to", "fu", "ko", "gu"];

/// Deterministic word-for-word translation: each target word is the stem
/// translation plus the suffix for its position mod 4, and the
/// sentence-final word also gets a closing marker.
pub fn translate_sentence(src_words: &[usize]) -> String {
    let n = src_words.len();
    src_words
        .iter()
        .enumerate()
        .map(|(pos, &w)| {
            let mut out = String::from(TGT_STEMS[w % TGT_STEMS.len()]);
            out.push_str(TGT_SUFFIXES[pos % TGT_SUFFIXES.len()]);
            if pos + 1 == n {
                out.push_str("vo");
            }
            out
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn zipf_stem(rng: &mut ChaCha8Rng) -> usize {
    // Zipf-like: stem k with weight 1/(k+1).
    let weights: Vec<f64> = (0..SRC_STEMS.len()).map(|k| 1.0 / (k as f64 + 1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        r -= w;
        if r <= 0.0 {
            return k;
        }
    }
    SRC_STEMS.len() - 1
}

/// `n` parallel sentences of 3..=9 words with Zipf-distributed stems.
pub fn agglutinative_corpus(n: usize, seed: u64) -> ParallelCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..n)
        .map(|i| {
            let len = rng.random_range(3..=9);
            let words: Vec<usize> = (0..len).map(|_| zipf_stem(&mut rng)).collect();
            let src = words
                .iter()
                .map(|&w| SRC_STEMS[w])
                .collect::<Vec<_>>()
                .join(" ");
            SentencePair {
                id: i as u64,
                source_text: src,
                target_text: translate_sentence(&words),
            }
        })
        .collect();
    ParallelCorpus {
        pairs,
        source_lang: "syn-src".into(),
        target_lang: "syn-tgt".into(),
    }
}

/// `n` copy-task pairs: target text equals source text, 2..=8 words drawn
/// from a small closed vocabulary.
pub fn copy_corpus(n: usize, seed: u64) -> ParallelCorpus {
    const WORDS: &[&str] = &["ket", "mul", "sov", "rin", "dap", "lof", "neb", "tiz"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..n)
        .map(|i| {
            let len = rng.random_range(2..=8);
            let line = (0..len)
                .map(|_| WORDS[rng.random_range(0..WORDS.len())])
                .collect::<Vec<_>>()
                .join(" ");
            SentencePair {
                id: i as u64,
                source_text: line.clone(),
                target_text: line,
            }
        })
        .collect();
    ParallelCorpus {
        pairs,
        source_lang: "copy".into(),
        target_lang: "copy".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(copy_corpus(50, 9), copy_corpus(50, 9));
        assert_eq!(agglutinative_corpus(50, 9), agglutinative_corpus(50, 9));
        assert_ne!(agglutinative_corpus(50, 9), agglutinative_corpus(50, 10));
    }

    #[test]
    fn copy_corpus_copies() {
        for p in copy_corpus(100, 1).pairs {
            assert_eq!(p.source_text, p.target_text);
            let n = p.source_text.split_whitespace().count();
            assert!((2..=8).contains(&n));
        }
    }

    #[test]
    fn translation_is_word_for_word_with_positional_suffixes() {
        assert_eq!(translate_sentence(&[0, 1, 2]), "tokto guvfu fotkovo");
        assert_eq!(translate_sentence(&[0]), "toktovo");
        // Position 4 wraps back to the first suffix.
        assert_eq!(
            translate_sentence(&[0, 0, 0, 0, 0]),
            "tokto tokfu tokko tokgu toktovo"
        );
    }

    #[test]
    fn parallel_sides_have_equal_word_counts() {
        for p in agglutinative_corpus(200, 3).pairs {
            assert_eq!(
                p.source_text.split_whitespace().count(),
                p.target_text.split_whitespace().count()
            );
        }
    }

    #[test]
    fn alphabets_are_disjoint() {
        let corpus = agglutinative_corpus(200, 4);
        let src_chars: HashSet<char> = corpus
            .pairs
            .iter()
            .flat_map(|p| p.source_text.chars())
            .filter(|c| !c.is_whitespace())
            .collect();
        let tgt_chars: HashSet<char> = corpus
            .pairs
            .iter()
            .flat_map(|p| p.target_text.chars())
            .filter(|c| !c.is_whitespace())
            .collect();
        assert!(src_chars.is_disjoint(&tgt_chars));
    }

    #[test]
    fn corpus_survives_same_language_filter() {
        use crate::corpus::{filter_corpus, LanguageProfile};
        let corpus = agglutinative_corpus(300, 5);
        let profiles = [
            LanguageProfile::from_lines("src", &corpus.source_lines()),
            LanguageProfile::from_lines("tgt", &corpus.target_lines()),
        ];
        let (kept, report) = filter_corpus(&corpus, &profiles, 0.15).unwrap();
        assert_eq!(report.same_language_removed, 0);
        assert!(kept.len() > 250, "kept only {}", kept.len());
    }
}
