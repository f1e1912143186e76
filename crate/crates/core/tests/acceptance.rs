//! Acceptance gate: one test per top-level criterion, each printing a
//! single PASS line once its checks hold (run with `--nocapture` to see
//! them). A failed criterion panics with the offending detail.

use std::collections::{BTreeSet, HashMap};
use std::fs;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lrmt_core::bleu::{corpus_bleu, eval_tokenize};
use lrmt_core::corpus::{
    filter_corpus, stratified_split, LanguageProfile, ParallelCorpus, SentencePair,
};
use lrmt_core::harness::{
    render_report, run_ablation, run_experiment, Condition, ExperimentConfig, ReportFormat,
};
use lrmt_core::model::{gradient_check, AttentionKind, Batch, ModelConfig, Parameters};
use lrmt_core::subword::{decode, encode, train_bpe, BOS_ID, EOS_ID};
use lrmt_core::synth::{agglutinative_corpus, copy_corpus, translate_sentence};
use lrmt_core::training::{make_batches, should_stop};

fn pass(name: &str) {
    println!("acceptance: PASS - {name}");
}

// ---------------------------------------------------------------------------
// Gradient correctness: five random tiny configurations, analytic vs
// central finite differences, max relative error below 1e-4.
// ---------------------------------------------------------------------------
#[test]
fn gradient_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..5 {
        let vocab = rng.random_range(6..=10);
        let cfg = ModelConfig {
            embed_dim: rng.random_range(2..=5),
            hidden: rng.random_range(2..=4),
            dropout: 0.0,
            attention: if trial % 2 == 0 {
                AttentionKind::General
            } else {
                AttentionKind::Dot
            },
            src_vocab_size: vocab,
            tgt_vocab_size: vocab,
            ..ModelConfig::default()
        };
        let params = Parameters::init(&cfg, 100 + trial);
        let rows = rng.random_range(1..=2);
        let mut src = Vec::new();
        let mut tgt = Vec::new();
        for _ in 0..rows {
            let sl = rng.random_range(1..=4);
            let tl = rng.random_range(1..=2);
            src.push((0..sl).map(|_| rng.random_range(4..vocab as u32)).collect());
            let mut t = vec![BOS_ID];
            t.extend((0..tl).map(|_| rng.random_range(4..vocab as u32)));
            t.push(EOS_ID);
            tgt.push(t);
        }
        let batch = Batch {
            src,
            tgt,
            oversized: false,
        };
        let worst = gradient_check(&params, &cfg, &batch, 1e-5).unwrap();
        assert!(
            worst < 1e-4,
            "trial {trial}: max relative error {worst} >= 1e-4"
        );
    }
    pass("gradient correctness on 5 random tiny configs (< 1e-4)");
}

// ---------------------------------------------------------------------------
// BLEU oracle: exact values on hand cases plus brute-force cross-check.
// ---------------------------------------------------------------------------

/// Independent brute-force scorer written directly from the metric
/// definition: hash-map n-gram counting, clipped matches, exponential
/// smoothing, brevity penalty.
fn brute_force_bleu(hyps: &[String], refs: &[String]) -> f64 {
    fn ngrams(tokens: &[String], n: usize) -> HashMap<Vec<String>, usize> {
        let mut m = HashMap::new();
        if tokens.len() >= n {
            for w in tokens.windows(n) {
                *m.entry(w.to_vec()).or_insert(0) += 1;
            }
        }
        m
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut sys_len = 0usize;
    let mut ref_len = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        let ht = eval_tokenize(h);
        let rt = eval_tokenize(r);
        sys_len += ht.len();
        ref_len += rt.len();
        for n in 1..=4 {
            let hg = ngrams(&ht, n);
            let rg = ngrams(&rt, n);
            for (g, c) in &hg {
                totals[n - 1] += c;
                matches[n - 1] += (*c).min(*rg.get(g).unwrap_or(&0));
            }
        }
    }
    if totals.contains(&0) {
        return 0.0;
    }
    let mut smooth = 1.0f64;
    let mut log_sum = 0.0;
    for n in 0..4 {
        let p = if matches[n] == 0 {
            smooth *= 2.0;
            1.0 / (smooth * totals[n] as f64)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += p.ln();
    }
    let bp = if sys_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / sys_len as f64).exp()
    };
    100.0 * bp * (log_sum / 4.0).exp()
}

#[test]
fn bleu_oracle() {
    // Identical corpora score exactly 100.
    let lines: Vec<String> = vec!["the cat sat".into(), "a b c d e".into()];
    let perfect = corpus_bleu(&lines, &lines, false).unwrap();
    assert_eq!(perfect.score, 100.0);

    // Hand-derived example: p = (5/5, 3/4, 2/3, 1/2), bp = exp(-0.2).
    let hyp = vec!["the cat sat on mat".to_string()];
    let reference = vec!["the cat sat on the mat".to_string()];
    let hand = corpus_bleu(&hyp, &reference, false).unwrap();
    assert!(
        (hand.score - 57.89).abs() <= 0.01,
        "hand example scored {}",
        hand.score
    );

    // Empty hypothesis: 4-gram totals are zero.
    let zero = corpus_bleu(&["".to_string()], &["some text here".to_string()], false).unwrap();
    assert_eq!(zero.score, 0.0);

    // Cross-check 12 random corpora against the brute-force enumerator.
    let words = ["the", "cat", "sat", "on", "mat", "a", "dog,", "ran!", "3.14"];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..12 {
        let n = rng.random_range(1..=8);
        let mut hyps = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..n {
            let hl = rng.random_range(1..=9);
            let rl = rng.random_range(1..=9);
            hyps.push(
                (0..hl)
                    .map(|_| words[rng.random_range(0..words.len())])
                    .collect::<Vec<_>>()
                    .join(" "),
            );
            refs.push(
                (0..rl)
                    .map(|_| words[rng.random_range(0..words.len())])
                    .collect::<Vec<_>>()
                    .join(" "),
            );
        }
        let ours = corpus_bleu(&hyps, &refs, false).unwrap().score;
        let theirs = brute_force_bleu(&hyps, &refs);
        assert!(
            (ours - theirs).abs() < 1e-6,
            "trial {trial}: {ours} vs brute force {theirs}"
        );
    }
    pass("BLEU oracle (100 exact, 57.89 hand case, empty-hyp zero, 12 brute-force cross-checks)");
}

// ---------------------------------------------------------------------------
// Copy-task integration: raw condition, scaled-down model, test BLEU >= 95.
// ---------------------------------------------------------------------------
#[test]
fn copy_task_integration() {
    let corpus = copy_corpus(320, 17);
    let slice = |a: usize, b: usize| ParallelCorpus {
        pairs: corpus.pairs[a..b].to_vec(),
        source_lang: corpus.source_lang.clone(),
        target_lang: corpus.target_lang.clone(),
    };
    let splits = lrmt_core::harness::SplitSets {
        train: slice(0, 200),
        valid: slice(200, 260),
        test: slice(260, 320),
    };
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.model.hidden = 64;
    cfg.model.embed_dim = 32;
    cfg.model.dropout = 0.1;
    cfg.train.max_steps = 3000;
    cfg.train.batch_tokens = 512;
    cfg.train.checkpoint_every = 100;
    cfg.train.patience = 6;
    cfg.word_vocab_size = 64;
    cfg.decode.beam_size = 2;
    cfg.output_dir = dir.path().to_path_buf();
    let start = std::time::Instant::now();
    let outcome = run_experiment(&cfg, &splits, 200, Condition::Raw, 1).unwrap();
    let elapsed = start.elapsed();
    assert!(
        outcome.bleu.score >= 95.0,
        "copy-task BLEU {} < 95 after {} curve points",
        outcome.bleu.score,
        outcome.curve.len()
    );
    assert!(
        elapsed.as_secs() < 600,
        "copy task took {elapsed:?}, budget 10 minutes"
    );
    pass("copy-task integration (raw condition, BLEU >= 95 within 3000 steps)");
}

// ---------------------------------------------------------------------------
// Early stopping exactness: 20 hand-traced metric sequences.
// ---------------------------------------------------------------------------
#[test]
fn early_stopping_exactness() {
    // (history, patience, expected decision at the last entry)
    let cases: Vec<(Vec<f64>, usize, bool)> = vec![
        // 1: improving throughout.
        (vec![5.0, 4.0, 3.0], 6, false),
        // 2: exactly 6 non-improving checkpoints after the best.
        (vec![3.0, 3.1, 3.2, 3.3, 3.4, 3.5, 3.6], 6, true),
        // 3: only 5 non-improving yet.
        (vec![3.0, 3.1, 3.2, 3.3, 3.4, 3.5], 6, false),
        // 4: late improvement resets the counter.
        (vec![3.0, 3.1, 3.2, 3.3, 3.4, 3.5, 2.9], 6, false),
        // 5: reset, then 6 more non-improving.
        (vec![3.0, 3.1, 3.2, 2.9, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0], 6, true),
        // 6: plateau ties count as non-improving (first min wins).
        (vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0], 6, true),
        // 7: plateau one short of patience.
        (vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0], 6, false),
        // 8: single observation.
        (vec![2.0], 6, false),
        // 9: empty history never stops.
        (vec![], 6, false),
        // 10: patience 1, immediate regression.
        (vec![2.0, 2.5], 1, true),
        // 11: patience 1, still improving.
        (vec![2.0, 1.5], 1, false),
        // 12: patience 0 stops at once.
        (vec![2.0], 0, true),
        // 13: zig-zag never 6 behind the best.
        (vec![3.0, 2.0, 2.5, 1.9, 2.2, 1.8, 2.0], 6, false),
        // 14: best at index 0, exactly patience 3 later.
        (vec![1.0, 1.5, 1.4, 1.3], 3, true),
        // 15: same but patience 4.
        (vec![1.0, 1.5, 1.4, 1.3], 4, false),
        // 16: improvement on the last checkpoint.
        (vec![3.0, 3.1, 3.2, 3.3, 3.4, 3.5, 3.6, 2.0], 6, false),
        // 17: long tail after a mid-run best.
        (vec![5.0, 2.0, 2.1, 2.2, 2.3, 2.4, 2.5, 2.6], 6, true),
        // 18: near-tie slightly above the best is not an improvement.
        (vec![2.0, 2.0000001, 2.1, 2.1, 2.1, 2.1, 2.1], 6, true),
        // 19: strictly lower by a hair is an improvement.
        (vec![2.0, 1.9999999, 2.1, 2.1, 2.1, 2.1, 2.1], 6, false),
        // 20: best at the very end of a long run.
        (vec![9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0], 6, false),
    ];
    for (i, (history, patience, expected)) in cases.iter().enumerate() {
        assert_eq!(
            should_stop(history, *patience),
            *expected,
            "case {} mismatched: history {:?} patience {}",
            i + 1,
            history,
            patience
        );
    }
    pass("early stopping exactness (20 hand-traced cases)");
}

// ---------------------------------------------------------------------------
// Split exactness: 123,000 pairs -> 16,000 / 7,000 / 100,000, disjoint,
// stratum-proportional within +/-1 per decile, deterministic.
// ---------------------------------------------------------------------------
#[test]
fn split_exactness() {
    let corpus = agglutinative_corpus(123_000, 21);
    let splits = stratified_split(&corpus, 16_000, 7_000, 5).unwrap();
    assert_eq!(splits.valid.len(), 16_000);
    assert_eq!(splits.test.len(), 7_000);
    assert_eq!(splits.train_pool.len(), 100_000);

    // Disjoint and jointly exhaustive by pair id.
    let valid_ids: BTreeSet<u64> = splits.valid.pairs.iter().map(|p| p.id).collect();
    let test_ids: BTreeSet<u64> = splits.test.pairs.iter().map(|p| p.id).collect();
    let pool_ids: BTreeSet<u64> = splits.train_pool.pairs.iter().map(|p| p.id).collect();
    assert!(valid_ids.is_disjoint(&test_ids));
    assert!(valid_ids.is_disjoint(&pool_ids));
    assert!(test_ids.is_disjoint(&pool_ids));
    assert_eq!(valid_ids.len() + test_ids.len() + pool_ids.len(), 123_000);

    // Recompute decile strata independently: cuts at sorted[k*n/10],
    // stratum = number of cuts strictly below the word count.
    let counts: Vec<usize> = corpus
        .pairs
        .iter()
        .map(|p| p.source_text.split_whitespace().count())
        .collect();
    let mut sorted = counts.clone();
    sorted.sort_unstable();
    let cuts: Vec<usize> = (1..10).map(|k| sorted[k * sorted.len() / 10]).collect();
    let stratum = |wc: usize| cuts.iter().filter(|&&c| c < wc).count();

    let mut corpus_per = [0usize; 10];
    for &c in &counts {
        corpus_per[stratum(c)] += 1;
    }
    for (split, size) in [(&splits.valid, 16_000usize), (&splits.test, 7_000)] {
        let mut split_per = [0usize; 10];
        for p in &split.pairs {
            split_per[stratum(p.source_text.split_whitespace().count())] += 1;
        }
        for s in 0..10 {
            let expected = size as f64 * corpus_per[s] as f64 / 123_000.0;
            let got = split_per[s] as f64;
            assert!(
                (got - expected).abs() <= 1.0 + 1e-9,
                "stratum {s}: got {got}, expected {expected:.2} +/- 1"
            );
        }
    }

    // Determinism under the same seed.
    let again = stratified_split(&corpus, 16_000, 7_000, 5).unwrap();
    let again_valid: BTreeSet<u64> = again.valid.pairs.iter().map(|p| p.id).collect();
    assert_eq!(valid_ids, again_valid);
    pass("split exactness (123k -> 16k/7k/100k, disjoint, +/-1 per decile, deterministic)");
}

// ---------------------------------------------------------------------------
// Filtering exactness: 1,000-pair corpus with planted violations.
// ---------------------------------------------------------------------------
#[test]
fn filtering_exactness() {
    // Profile corpora: large samples of the two synthetic languages.
    let sample = agglutinative_corpus(400, 31);
    let profiles = [
        LanguageProfile::from_lines("src", &sample.source_lines()),
        LanguageProfile::from_lines("tgt", &sample.target_lines()),
    ];

    let src_words = [
        "balim", "ceda", "dremil", "lansi", "meric", "nable", "pelda", "rismen", "seblan",
        "ancil", "bedras", "cilem",
    ];
    // Clean pair i: a unique 5-stem sentence and its translation.
    let clean_pair = |i: usize| {
        let stems = [
            i % 12,
            (i / 12) % 12,
            (i / 144) % 12,
            (i * 7 + 3) % 12,
            (i * 5 + 1) % 12,
        ];
        let src = stems
            .iter()
            .map(|&s| src_words[s])
            .collect::<Vec<_>>()
            .join(" ");
        (src, translate_sentence(&stems))
    };

    let mut pairs: Vec<(String, String)> = Vec::new();
    for i in 0..890 {
        pairs.push(clean_pair(i));
    }
    // 50 exact duplicates of distinct clean pairs.
    for i in 0..50 {
        pairs.push(clean_pair(i * 3));
    }
    // 20 identical-sides pairs in a third alphabet (classifies unknown,
    // so the identical-sides rule, not language ID, must catch them).
    for i in 0..20 {
        let line = format!("qxj{i} hqj xqh jqx qxj");
        pairs.push((line.clone(), line));
    }
    // 30 overlong pairs: 40 words per side against a mean of ~5.
    for i in 0..30 {
        // Lead with i's base-12 digits so all 30 overlong pairs are distinct.
        let mut stems: Vec<usize> = vec![i % 12, (i / 12) % 12];
        stems.extend((0..38).map(|j| (i + j) % 12));
        let src = stems
            .iter()
            .map(|&s| src_words[s])
            .collect::<Vec<_>>()
            .join(" ");
        pairs.push((src, translate_sentence(&stems)));
    }
    // 10 same-language pairs: source-language text on both sides.
    for i in 0..10 {
        let (a, _) = clean_pair(900 + i);
        let (b, _) = clean_pair(920 + i);
        pairs.push((a, b));
    }
    assert_eq!(pairs.len(), 1000);

    let corpus = ParallelCorpus {
        pairs: pairs
            .into_iter()
            .enumerate()
            .map(|(id, (s, t))| SentencePair {
                id: id as u64,
                source_text: s,
                target_text: t,
            })
            .collect(),
        source_lang: "src".into(),
        target_lang: "tgt".into(),
    };
    let (kept, report) = filter_corpus(&corpus, &profiles, 0.15).unwrap();
    assert_eq!(report.input_count, 1000);
    assert_eq!(report.duplicate_removed, 50, "report: {}", report.to_kv());
    assert_eq!(report.identical_sides_removed, 20, "report: {}", report.to_kv());
    assert_eq!(report.overlong_removed, 30, "report: {}", report.to_kv());
    assert_eq!(report.same_language_removed, 10, "report: {}", report.to_kv());
    assert_eq!(report.emptied_removed, 0);
    assert_eq!(kept.len(), 890);
    pass("filtering exactness (50 dup / 20 identical / 30 overlong / 10 same-language)");
}

// ---------------------------------------------------------------------------
// Batching bound: randomized inputs, every unflagged batch within budget,
// batches partition the input.
// ---------------------------------------------------------------------------
#[test]
fn batching_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..10 {
        let n = rng.random_range(1..600);
        let mut pairs = Vec::new();
        for _ in 0..n {
            let sl = rng.random_range(1..80);
            let tl = rng.random_range(0..70);
            let src: Vec<u32> = (0..sl).map(|_| rng.random_range(4..100)).collect();
            let mut tgt = vec![BOS_ID];
            tgt.extend((0..tl).map(|_| rng.random_range(4..100u32)));
            tgt.push(EOS_ID);
            pairs.push((src, tgt));
        }
        let batches = make_batches(&pairs, 4096, trial);
        let mut seen = Vec::new();
        for b in &batches {
            if !b.oversized {
                assert!(
                    b.cost() <= 4096,
                    "trial {trial}: cost {} over budget",
                    b.cost()
                );
            }
            for (s, t) in b.src.iter().zip(&b.tgt) {
                seen.push((s.clone(), t.clone()));
            }
        }
        let mut expect = pairs.clone();
        expect.sort();
        seen.sort();
        assert_eq!(expect, seen, "trial {trial}: batches do not partition input");
    }
    pass("batching bound (rows x max padded len <= 4096, batches partition input)");
}

// ---------------------------------------------------------------------------
// BPE properties: decode-encode identity, deterministic retraining, and
// the first merge on the "ab ab ab abc" fixture.
// ---------------------------------------------------------------------------
#[test]
fn bpe_properties() {
    let alphabet: Vec<char> = "abcdefgh".chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Training lines covering the alphabet.
    let mut lines: Vec<String> = Vec::new();
    for _ in 0..200 {
        let words = rng.random_range(1..6);
        let line = (0..words)
            .map(|_| {
                let wl = rng.random_range(1..7);
                (0..wl)
                    .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join(" ");
        lines.push(line);
    }
    let model = train_bpe(&lines, 60, 2).unwrap();

    // decode(encode(s)) == s for 1,000 random in-alphabet strings.
    for i in 0..1000 {
        let words = rng.random_range(1..6);
        let s = (0..words)
            .map(|_| {
                let wl = rng.random_range(1..8);
                (0..wl)
                    .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join(" ");
        let roundtrip = decode(&model, &encode(&model, &s)).unwrap();
        assert_eq!(roundtrip, s, "roundtrip failed on case {i}");
    }

    // Deterministic retraining.
    let again = train_bpe(&lines, 60, 2).unwrap();
    assert_eq!(model, again);

    // Fixture: the first merge must be (a, b).
    let fixture = vec!["ab ab ab abc".to_string()];
    let tiny = train_bpe(&fixture, 12, 2).unwrap();
    assert_eq!(
        tiny.merges.first(),
        Some(&("a".to_string(), "b".to_string())),
        "merges: {:?}",
        tiny.merges
    );
    pass("BPE properties (1000 roundtrips, deterministic retraining, first merge (a,b))");
}

// ---------------------------------------------------------------------------
// Directional replication: on the agglutinative toy language
// (2000/300/300), subword BLEU >= raw BLEU in at least 2 of 3 seeds.
// ---------------------------------------------------------------------------
#[test]
fn directional_replication() {
    let corpus = agglutinative_corpus(2600, 13);
    let slice = |a: usize, b: usize| ParallelCorpus {
        pairs: corpus.pairs[a..b].to_vec(),
        source_lang: corpus.source_lang.clone(),
        target_lang: corpus.target_lang.clone(),
    };
    let splits = lrmt_core::harness::SplitSets {
        train: slice(0, 2000),
        valid: slice(2000, 2300),
        test: slice(2300, 2600),
    };
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.model.hidden = 48;
    cfg.model.embed_dim = 24;
    cfg.model.dropout = 0.1;
    cfg.train.max_steps = 1500;
    cfg.train.batch_tokens = 1024;
    cfg.train.checkpoint_every = 150;
    cfg.train.patience = 6;
    // Word vocabulary deliberately tight: inflected target forms fall to
    // <unk> while BPE composes them from stems and suffixes.
    cfg.word_vocab_size = 64;
    cfg.bpe_vocab_size = 140;
    cfg.decode.beam_size = 2;
    cfg.output_dir = dir.path().to_path_buf();

    let start = std::time::Instant::now();
    let mut wins = 0;
    for seed in [1u64, 2, 3] {
        let raw = run_experiment(&cfg, &splits, 2000, Condition::Raw, seed)
            .unwrap()
            .bleu
            .score;
        let sub = run_experiment(&cfg, &splits, 2000, Condition::Subword, seed)
            .unwrap()
            .bleu
            .score;
        println!("seed {seed}: raw {raw:.2} subword {sub:.2}");
        if sub >= raw {
            wins += 1;
        }
    }
    let elapsed = start.elapsed();
    assert!(
        wins >= 2,
        "subword won only {wins} of 3 seeds (need >= 2)"
    );
    assert!(
        elapsed.as_secs() < 1800,
        "replication took {elapsed:?}, budget 30 minutes"
    );
    pass("directional replication (subword >= raw in >= 2 of 3 seeds)");
}

// ---------------------------------------------------------------------------
// Experiment structure: a 10-size x 2-condition grid yields a 10-row,
// 2-BLEU-column table in the published layout.
// ---------------------------------------------------------------------------
#[test]
fn experiment_structure() {
    let sizes: Vec<usize> = (1..=10).map(|k| k * 10_000).collect();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig {
        sizes: sizes.clone(),
        ..Default::default()
    };
    cfg.output_dir = dir.path().to_path_buf();
    // A deliberately tiny pool: every cell fails fast (size exceeds the
    // pool), which still must produce the full 10-row grid shape.
    let corpus = agglutinative_corpus(30, 3);
    let slice = |a: usize, b: usize| ParallelCorpus {
        pairs: corpus.pairs[a..b].to_vec(),
        source_lang: corpus.source_lang.clone(),
        target_lang: corpus.target_lang.clone(),
    };
    let splits = lrmt_core::harness::SplitSets {
        train: slice(0, 20),
        valid: slice(20, 25),
        test: slice(25, 30),
    };
    let table = run_ablation(&cfg, &splits, 1).unwrap();
    assert_eq!(table.rows.len(), 10);
    for (row, size) in table.rows.iter().zip(&sizes) {
        assert_eq!(row.training_size, *size);
    }
    let csv = render_report(&table, ReportFormat::Csv);
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.starts_with("training_size,bleu_no_subword,bleu_with_subword\n"));
    let md = render_report(&table, ReportFormat::Markdown);
    assert!(md.contains("| Training size | No subword | With subword |"));
    assert_eq!(md.matches('—').count(), 20);
    pass("experiment structure (10 sizes x 2 conditions, Table 1 layout)");
}

// ---------------------------------------------------------------------------
// End-to-end determinism: the full ablation run twice with identical
// config and seeds produces byte-identical CSV reports.
// ---------------------------------------------------------------------------
#[test]
fn end_to_end_determinism() {
    let corpus = agglutinative_corpus(260, 23);
    let slice = |a: usize, b: usize| ParallelCorpus {
        pairs: corpus.pairs[a..b].to_vec(),
        source_lang: corpus.source_lang.clone(),
        target_lang: corpus.target_lang.clone(),
    };
    let splits = lrmt_core::harness::SplitSets {
        train: slice(0, 200),
        valid: slice(200, 230),
        test: slice(230, 260),
    };
    let run = |tag: &str| {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig {
            sizes: vec![60, 120],
            ..Default::default()
        };
        cfg.model.hidden = 10;
        cfg.model.embed_dim = 6;
        cfg.train.max_steps = 20;
        cfg.train.checkpoint_every = 10;
        cfg.train.batch_tokens = 256;
        cfg.bpe_vocab_size = 100;
        cfg.word_vocab_size = 100;
        cfg.decode.beam_size = 2;
        cfg.output_dir = dir.path().join(tag);
        let mut outputs: Vec<(String, String)> = Vec::new();
        for &seed in &cfg.seeds.clone() {
            let table = run_ablation(&cfg, &splits, seed).unwrap();
            let report_path = cfg.output_dir.join(format!("seed_{seed}/report.csv"));
            lrmt_core::harness::emit_report(&table, ReportFormat::Csv, &report_path).unwrap();
            let seed_dir = report_path.parent().unwrap().to_path_buf();
            let mut names: Vec<_> = fs::read_dir(&seed_dir)
                .unwrap()
                .map(|e| e.unwrap().file_name().into_string().unwrap())
                .filter(|n| n.ends_with(".csv"))
                .collect();
            names.sort();
            for name in names {
                let body = fs::read_to_string(seed_dir.join(&name)).unwrap();
                outputs.push((name, body));
            }
        }
        outputs
    };
    let first = run("a");
    let second = run("b");
    assert_eq!(first, second, "ablation CSVs differ between runs");
    assert!(first.iter().any(|(n, _)| n == "report.csv"));
    assert!(first.iter().any(|(n, _)| n.starts_with("curve_")));
    pass("end-to-end determinism (ablate twice -> byte-identical CSV reports)");
}
