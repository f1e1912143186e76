//! Experiment orchestration: configuration files, single pipeline cells
//! (vocabulary, training, decoding, scoring), the raw-vs-subword ablation
//! grid over training sizes, and CSV/markdown report emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bleu::{corpus_bleu, BleuError, BleuScore};
use crate::corpus::{load_parallel, nested_subsets, CorpusError, ParallelCorpus};
use crate::decoding::{beam_decode, greedy_decode, DecodeConfig, NmtDecoder};
use crate::model::{AttentionKind, ModelConfig, ModelError, Parameters};
use crate::subword::{build_word_vocab, train_bpe, SubwordError, TextCodec, BOS_ID, EOS_ID};
use crate::training::{
    save_checkpoint, train_with_evaluator, validation_loss, TrainConfig, TrainError, TrainTask,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config line {0} is not `key=value`")]
    MalformedConfigLine(usize),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {value}")]
    InvalidValue { key: String, value: String },
    #[error("sizes must be ascending")]
    SizesNotAscending,
    #[error("at least one seed is required")]
    NoSeeds,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Subword(#[from] SubwordError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Bleu(#[from] BleuError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Condition {
    Raw,
    Subword,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Raw => "raw",
            Condition::Subword => "subword",
        }
    }
}

/// Full ablation configuration, loadable from a flat `key=value` file with
/// `#` comments and overridable key by key.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train_source: PathBuf,
    pub train_target: PathBuf,
    pub valid_source: PathBuf,
    pub valid_target: PathBuf,
    pub test_source: PathBuf,
    pub test_target: PathBuf,
    pub direction: String,
    pub sizes: Vec<usize>,
    pub conditions: Vec<Condition>,
    pub bpe_vocab_size: usize,
    pub word_vocab_size: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub seeds: Vec<u64>,
    /// Seed for the nested-subset shuffle, shared across all cells so
    /// size-k training pairs are a subset of size-(k+1) pairs.
    pub subset_seed: u64,
    pub lowercase_bleu: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train_source: PathBuf::from("train.src"),
            train_target: PathBuf::from("train.tgt"),
            valid_source: PathBuf::from("valid.src"),
            valid_target: PathBuf::from("valid.tgt"),
            test_source: PathBuf::from("test.src"),
            test_target: PathBuf::from("test.tgt"),
            direction: "src-tgt".to_string(),
            sizes: vec![100],
            conditions: vec![Condition::Raw, Condition::Subword],
            bpe_vocab_size: 400,
            word_vocab_size: 400,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            seeds: vec![1],
            subset_seed: 1,
            lowercase_bleu: false,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value.parse().map_err(|_| HarnessError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, HarnessError> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s.trim()))
        .collect()
}

impl ExperimentConfig {
    /// Parse the `key=value` config text (blank lines and `#` comments
    /// ignored) on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(HarnessError::MalformedConfigLine(ln + 1))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        match key {
            "train_source" => self.train_source = PathBuf::from(value),
            "train_target" => self.train_target = PathBuf::from(value),
            "valid_source" => self.valid_source = PathBuf::from(value),
            "valid_target" => self.valid_target = PathBuf::from(value),
            "test_source" => self.test_source = PathBuf::from(value),
            "test_target" => self.test_target = PathBuf::from(value),
            "direction" => self.direction = value.to_string(),
            "sizes" => self.sizes = parse_list(key, value)?,
            "conditions" => {
                self.conditions = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| match s.trim() {
                        "raw" => Ok(Condition::Raw),
                        "subword" => Ok(Condition::Subword),
                        other => Err(HarnessError::InvalidValue {
                            key: key.to_string(),
                            value: other.to_string(),
                        }),
                    })
                    .collect::<Result<_, _>>()?;
            }
            "bpe_vocab_size" => self.bpe_vocab_size = parse(key, value)?,
            "word_vocab_size" => self.word_vocab_size = parse(key, value)?,
            "hidden" => self.model.hidden = parse(key, value)?,
            "embed_dim" => self.model.embed_dim = parse(key, value)?,
            "dropout" => self.model.dropout = parse(key, value)?,
            "attention" => {
                self.model.attention = match value {
                    "general" => AttentionKind::General,
                    "dot" => AttentionKind::Dot,
                    other => {
                        return Err(HarnessError::InvalidValue {
                            key: key.to_string(),
                            value: other.to_string(),
                        })
                    }
                }
            }
            "lr" => self.train.lr = parse(key, value)?,
            "batch_tokens" => self.train.batch_tokens = parse(key, value)?,
            "checkpoint_every" => self.train.checkpoint_every = parse(key, value)?,
            "patience" => self.train.patience = parse(key, value)?,
            "max_steps" => self.train.max_steps = parse(key, value)?,
            "clip_norm" => self.train.clip_norm = parse(key, value)?,
            "beam_size" => self.decode.beam_size = parse(key, value)?,
            "length_penalty_alpha" => self.decode.length_penalty_alpha = parse(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "subset_seed" => self.subset_seed = parse(key, value)?,
            "lowercase_bleu" => self.lowercase_bleu = parse(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            other => return Err(HarnessError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.sizes.windows(2).any(|w| w[0] > w[1]) {
            return Err(HarnessError::SizesNotAscending);
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::NoSeeds);
        }
        Ok(())
    }

    /// Canonical `key=value` rendering of every setting; the report
    /// fingerprint hashes this, so no setting can go unreported.
    pub fn canonical_text(&self) -> String {
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("train_source", self.train_source.display().to_string());
        kv.insert("train_target", self.train_target.display().to_string());
        kv.insert("valid_source", self.valid_source.display().to_string());
        kv.insert("valid_target", self.valid_target.display().to_string());
        kv.insert("test_source", self.test_source.display().to_string());
        kv.insert("test_target", self.test_target.display().to_string());
        kv.insert("direction", self.direction.clone());
        kv.insert(
            "sizes",
            self.sizes
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.insert(
            "conditions",
            self.conditions
                .iter()
                .map(|c| c.as_str().to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.insert("bpe_vocab_size", self.bpe_vocab_size.to_string());
        kv.insert("word_vocab_size", self.word_vocab_size.to_string());
        kv.insert("hidden", self.model.hidden.to_string());
        kv.insert("embed_dim", self.model.embed_dim.to_string());
        kv.insert("dropout", format!("{}", self.model.dropout));
        kv.insert(
            "attention",
            match self.model.attention {
                AttentionKind::General => "general".to_string(),
                AttentionKind::Dot => "dot".to_string(),
            },
        );
        kv.insert("lr", format!("{}", self.train.lr));
        kv.insert("batch_tokens", self.train.batch_tokens.to_string());
        kv.insert("checkpoint_every", self.train.checkpoint_every.to_string());
        kv.insert("patience", self.train.patience.to_string());
        kv.insert("max_steps", self.train.max_steps.to_string());
        kv.insert("clip_norm", format!("{}", self.train.clip_norm));
        kv.insert("beam_size", self.decode.beam_size.to_string());
        kv.insert(
            "length_penalty_alpha",
            format!("{}", self.decode.length_penalty_alpha),
        );
        kv.insert(
            "seeds",
            self.seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.insert("subset_seed", self.subset_seed.to_string());
        kv.insert("lowercase_bleu", self.lowercase_bleu.to_string());
        kv.insert("output_dir", self.output_dir.display().to_string());
        kv.iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect::<String>()
    }

    /// FNV-1a over the canonical text.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.canonical_text().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

/// The three cleaned splits an ablation consumes.
#[derive(Debug, Clone)]
pub struct SplitSets {
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
}

pub fn load_splits(cfg: &ExperimentConfig) -> Result<SplitSets, HarnessError> {
    let (src_lang, tgt_lang) = cfg
        .direction
        .split_once('-')
        .unwrap_or((cfg.direction.as_str(), "tgt"));
    Ok(SplitSets {
        train: load_parallel(&cfg.train_source, &cfg.train_target, src_lang, tgt_lang)?,
        valid: load_parallel(&cfg.valid_source, &cfg.valid_target, src_lang, tgt_lang)?,
        test: load_parallel(&cfg.test_source, &cfg.test_target, src_lang, tgt_lang)?,
    })
}

/// One point of a learning curve: validation metric and greedy test BLEU
/// at a checkpoint step.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub valid_metric: f64,
    pub test_bleu: f64,
}

/// Result of one grid cell.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub bleu: BleuScore,
    pub curve: Vec<CurvePoint>,
}

fn encode_pairs(codec: &TextCodec, corpus: &ParallelCorpus) -> Vec<(Vec<u32>, Vec<u32>)> {
    corpus
        .pairs
        .iter()
        .map(|p| {
            let src = codec.encode(&p.source_text);
            let mut tgt = vec![BOS_ID];
            tgt.extend(codec.encode(&p.target_text));
            tgt.push(EOS_ID);
            (src, tgt)
        })
        .collect()
}

fn decode_test_set(
    params: &Parameters,
    mcfg: &ModelConfig,
    dcfg: &DecodeConfig,
    codec: &TextCodec,
    test: &ParallelCorpus,
    greedy: bool,
) -> Result<Vec<String>, HarnessError> {
    let mut out = Vec::with_capacity(test.len());
    for pair in &test.pairs {
        let src = codec.encode(&pair.source_text);
        let decoder = NmtDecoder::new(params, mcfg, &src)?;
        let hyp = if greedy {
            greedy_decode(&decoder)
        } else {
            beam_decode(&decoder, dcfg)
        };
        out.push(codec.decode(&hyp.tokens)?);
    }
    Ok(out)
}

/// Run one (size, condition, seed) cell: build the nested subset, fit the
/// cell's vocabulary on that subset only, train, decode the test set with
/// the best checkpoint, and score BLEU. Artifacts (vocabulary model, best
/// checkpoint, test translations, learning curve) land under
/// `<output_dir>/seed_<seed>/cell_<size>_<condition>/`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    splits: &SplitSets,
    size: usize,
    condition: Condition,
    seed: u64,
) -> Result<CellOutcome, HarnessError> {
    let subset = nested_subsets(&splits.train, &[size], cfg.subset_seed)?
        .pop()
        .expect("one subset requested");

    // Joint source+target vocabulary fitted on this subset only.
    let mut joint = subset.source_lines();
    joint.extend(subset.target_lines());
    let codec = match condition {
        Condition::Subword => TextCodec::Bpe(train_bpe(&joint, cfg.bpe_vocab_size, 2)?),
        Condition::Raw => TextCodec::Word(build_word_vocab(&joint, cfg.word_vocab_size, 1)?),
    };

    let train_pairs = encode_pairs(&codec, &subset);
    let valid_pairs = encode_pairs(&codec, &splits.valid);
    let test_refs = splits.test.target_lines();

    let mcfg = ModelConfig {
        src_vocab_size: codec.vocab().len(),
        tgt_vocab_size: codec.vocab().len(),
        ..cfg.model.clone()
    };
    let tcfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };

    let cell_dir = cfg
        .output_dir
        .join(format!("seed_{seed}"))
        .join(format!("cell_{size}_{}", condition.as_str()));
    fs::create_dir_all(&cell_dir)?;
    codec.save(&cell_dir.join("vocab.model"))?;

    // The early-stopping metric is validation loss; the curve also tracks
    // greedy test BLEU at each checkpoint.
    let mut curve: Vec<CurvePoint> = Vec::new();
    {
        let task = TrainTask {
            train_pairs: &train_pairs,
            valid_pairs: &valid_pairs,
            model_config: &mcfg,
            train_config: &tcfg,
            checkpoint_dir: None,
            resume_from: None,
        };
        let curve_ref = &mut curve;
        let mut eval = |params: &Parameters, step: u64| -> Result<f64, TrainError> {
            let vloss = validation_loss(params, &mcfg, &valid_pairs, tcfg.batch_tokens)?;
            let hyps = decode_test_set(params, &mcfg, &cfg.decode, &codec, &splits.test, true)
                .map_err(|e| TrainError::Corrupt(format!("curve decode failed: {e}")))?;
            let bleu = corpus_bleu(&hyps, &test_refs, cfg.lowercase_bleu)
                .map(|b| b.score)
                .unwrap_or(0.0);
            curve_ref.push(CurvePoint {
                step,
                valid_metric: vloss,
                test_bleu: bleu,
            });
            Ok(vloss)
        };
        let (best, _log) = train_with_evaluator(&task, &mut eval)?;
        save_checkpoint(&best, &cell_dir.join("best.ckpt"))?;

        let hyps = decode_test_set(&best.params, &mcfg, &cfg.decode, &codec, &splits.test, false)?;
        fs::write(cell_dir.join("test.hyp"), hyps.join("\n") + "\n")?;
        let bleu = corpus_bleu(&hyps, &test_refs, cfg.lowercase_bleu)?;

        let mut curve_csv = String::from("step,valid_metric,test_bleu_checkpoint\n");
        for p in curve.iter() {
            let _ = writeln!(
                curve_csv,
                "{},{:.6},{:.2}",
                p.step, p.valid_metric, p.test_bleu
            );
        }
        fs::write(cell_dir.join("curve.csv"), &curve_csv)?;

        Ok(CellOutcome { bleu, curve })
    }
}

/// One ablation row: BLEU per condition for a training size.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub training_size: usize,
    pub bleu_no_subword: Option<f64>,
    pub bleu_with_subword: Option<f64>,
}

/// Assembled grid results for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
    pub direction: String,
    pub seed: u64,
    pub decode: DecodeConfig,
    pub config_fingerprint: u64,
    pub curves: BTreeMap<(usize, Condition), Vec<CurvePoint>>,
}

/// Run every (size, condition) cell for one seed. A failed cell logs a
/// warning and leaves its BLEU column missing; the grid keeps going.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    splits: &SplitSets,
    seed: u64,
) -> Result<ReportTable, HarnessError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut curves = BTreeMap::new();
    for &size in &cfg.sizes {
        let mut row = ReportRow {
            training_size: size,
            bleu_no_subword: None,
            bleu_with_subword: None,
        };
        for &condition in &cfg.conditions {
            match run_experiment(cfg, splits, size, condition, seed) {
                Ok(outcome) => {
                    match condition {
                        Condition::Raw => row.bleu_no_subword = Some(outcome.bleu.score),
                        Condition::Subword => row.bleu_with_subword = Some(outcome.bleu.score),
                    }
                    curves.insert((size, condition), outcome.curve);
                }
                Err(e) => {
                    log::warn!(
                        "cell size={size} condition={} seed={seed} failed: {e}",
                        condition.as_str()
                    );
                }
            }
        }
        rows.push(row);
    }
    Ok(ReportTable {
        rows,
        direction: cfg.direction.clone(),
        seed,
        decode: cfg.decode.clone(),
        config_fingerprint: cfg.fingerprint(),
        curves,
    })
}

impl ReportTable {
    /// Cells that ran but produced no BLEU value.
    pub fn missing_cells(&self, conditions: &[Condition]) -> usize {
        self.rows
            .iter()
            .map(|r| {
                conditions
                    .iter()
                    .filter(|c| match c {
                        Condition::Raw => r.bleu_no_subword.is_none(),
                        Condition::Subword => r.bleu_with_subword.is_none(),
                    })
                    .count()
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

fn fmt_cell_csv(v: Option<f64>) -> String {
    v.map(|b| format!("{b:.2}")).unwrap_or_default()
}

fn fmt_cell_md(v: Option<f64>) -> String {
    v.map(|b| format!("{b:.2}")).unwrap_or_else(|| "—".to_string())
}

/// Render the table. CSV is exactly a header line plus one line per row
/// (missing cells empty) so downstream tooling can ingest it; markdown
/// carries the metadata block (direction, seed, decode settings, config
/// fingerprint) and renders missing cells as "—".
pub fn render_report(table: &ReportTable, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("training_size,bleu_no_subword,bleu_with_subword\n");
            for r in &table.rows {
                let _ = writeln!(
                    out,
                    "{},{},{}",
                    r.training_size,
                    fmt_cell_csv(r.bleu_no_subword),
                    fmt_cell_csv(r.bleu_with_subword)
                );
            }
            out
        }
        ReportFormat::Markdown => {
            let mut out = String::new();
            let _ = writeln!(out, "# Ablation report: {}", table.direction);
            let _ = writeln!(out);
            let _ = writeln!(out, "- seed: {}", table.seed);
            let _ = writeln!(out, "- beam_size: {}", table.decode.beam_size);
            let _ = writeln!(
                out,
                "- length_penalty_alpha: {}",
                table.decode.length_penalty_alpha
            );
            let _ = writeln!(
                out,
                "- config_fingerprint: {:016x}",
                table.config_fingerprint
            );
            let _ = writeln!(out);
            let _ = writeln!(out, "| Training size | No subword | With subword |");
            let _ = writeln!(out, "|--------------:|-----------:|-------------:|");
            for r in &table.rows {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} |",
                    r.training_size,
                    fmt_cell_md(r.bleu_no_subword),
                    fmt_cell_md(r.bleu_with_subword)
                );
            }
            out
        }
    }
}

/// Write the rendered table to `path` and the learning curves alongside it
/// as `curve_<size>_<condition>.csv`.
pub fn emit_report(
    table: &ReportTable,
    format: ReportFormat,
    path: &Path,
) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, render_report(table, format))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    for ((size, condition), curve) in &table.curves {
        let mut csv = String::from("step,valid_metric,test_bleu_checkpoint\n");
        for p in curve {
            let _ = writeln!(csv, "{},{:.6},{:.2}", p.step, p.valid_metric, p.test_bleu);
        }
        fs::write(
            dir.join(format!("curve_{size}_{}.csv", condition.as_str())),
            csv,
        )?;
    }
    Ok(())
}
