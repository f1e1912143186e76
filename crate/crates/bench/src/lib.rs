//! Shared fixtures for the criterion benchmarks.

use lrmt_core::corpus::ParallelCorpus;
use lrmt_core::model::{Batch, ModelConfig, Parameters};
use lrmt_core::subword::{train_bpe, BpeModel, BOS_ID, EOS_ID};
use lrmt_core::synth::agglutinative_corpus;

pub fn bench_corpus(n: usize) -> ParallelCorpus {
    agglutinative_corpus(n, 42)
}

pub fn bench_bpe(corpus: &ParallelCorpus, vocab_size: usize) -> BpeModel {
    let mut lines = corpus.source_lines();
    lines.extend(corpus.target_lines());
    train_bpe(&lines, vocab_size, 2).expect("bench corpus trains")
}

/// A small trained-shape model and one batch for forward/backward timing.
pub fn bench_model_and_batch() -> (Parameters, ModelConfig, Batch) {
    let cfg = ModelConfig {
        embed_dim: 16,
        hidden: 32,
        dropout: 0.0,
        src_vocab_size: 64,
        tgt_vocab_size: 64,
        ..ModelConfig::default()
    };
    let params = Parameters::init(&cfg, 42);
    let src: Vec<Vec<u32>> = (0..8)
        .map(|i| (0..10).map(|j| 4 + ((i + j) % 60) as u32).collect())
        .collect();
    let tgt: Vec<Vec<u32>> = (0..8)
        .map(|i| {
            let mut row = vec![BOS_ID];
            row.extend((0..9).map(|j| 4 + ((i * 3 + j) % 60) as u32));
            row.push(EOS_ID);
            row
        })
        .collect();
    (
        params,
        cfg,
        Batch {
            src,
            tgt,
            oversized: false,
        },
    )
}
