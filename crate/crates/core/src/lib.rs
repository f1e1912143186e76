//! Low-resource machine translation workbench.
//!
//! Implements the full experimental pipeline for training-size ablations of
//! an LSTM encoder-decoder with global attention: parallel corpus loading,
//! normalization and filtering, stratified splitting, BPE subwording (and a
//! raw word-level mode), training with Adam and checkpoint-patience early
//! stopping, greedy/beam decoding, corpus BLEU, and a harness that assembles
//! the raw-vs-subword learning-curve grid.

pub mod bleu;
pub mod corpus;
pub mod decoding;
pub mod harness;
pub mod model;
pub mod subword;
pub mod synth;
pub mod training;

pub use bleu::BleuScore;
pub use corpus::{DataSplits, FilterReport, LanguageProfile, ParallelCorpus, SentencePair};
pub use decoding::{DecodeConfig, Hypothesis};
pub use harness::{Condition, ExperimentConfig, ReportFormat, ReportTable};
pub use model::{Gradients, ModelConfig, Parameters};
pub use subword::{BpeModel, TextCodec, Vocabulary};
pub use training::{Checkpoint, TrainConfig};
