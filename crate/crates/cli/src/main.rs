//! `lrmt`: command-line front end for the translation workbench.
//!
//! Exit codes: 0 success, 1 partial failure (some ablation cells missing),
//! 2 fatal error. Log verbosity via the `LRMT_LOG` env var.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lrmt_core::bleu::corpus_bleu;
use lrmt_core::corpus::{
    filter_corpus, load_parallel, nested_subsets, stratified_split, LanguageProfile,
};
use lrmt_core::decoding::translate_ids;
use lrmt_core::harness::{
    emit_report, load_splits, run_ablation, run_experiment, Condition, ExperimentConfig,
    ReportFormat, ReportRow, ReportTable,
};
use lrmt_core::model::ModelConfig;
use lrmt_core::subword::{train_bpe, TextCodec};
use lrmt_core::synth::{agglutinative_corpus, copy_corpus};
use lrmt_core::training::load_checkpoint;

#[derive(Parser)]
#[command(name = "lrmt", about = "Low-resource MT workbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConditionArg {
    Raw,
    Subword,
}

impl From<ConditionArg> for Condition {
    fn from(c: ConditionArg) -> Condition {
        match c {
            ConditionArg::Raw => Condition::Raw,
            ConditionArg::Subword => Condition::Subword,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Markdown,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Copy,
    Agglutinative,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize and filter a parallel corpus.
    Clean {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out_source: PathBuf,
        #[arg(long)]
        out_target: PathBuf,
        /// Optional key=value filter report destination.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Language-classification similarity threshold.
        #[arg(long, default_value_t = 0.15)]
        threshold: f64,
    },
    /// Stratified valid/test/train-pool split of a cleaned corpus.
    Split {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        valid_size: usize,
        #[arg(long)]
        test_size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Nested training subsets (each size a prefix of the next).
    Subsets {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Comma-separated ascending sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a BPE model on one or more text files.
    BpeTrain {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        vocab_size: usize,
        #[arg(long, default_value_t = 2)]
        min_pair_freq: usize,
        #[arg(long)]
        model: PathBuf,
    },
    /// Segment text with a trained BPE model (or undo with --decode).
    BpeApply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Treat the input as space-joined pieces and reassemble words.
        #[arg(long, default_value_t = false)]
        decode: bool,
    },
    /// Train one (size, condition, seed) cell from an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// key=value config overrides.
        #[arg(short = 'o', long = "override")]
        overrides: Vec<String>,
        #[arg(long)]
        size: usize,
        #[arg(long, value_enum)]
        condition: ConditionArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Translate a file of source sentences with a trained checkpoint.
    Translate {
        #[arg(long)]
        config: PathBuf,
        #[arg(short = 'o', long = "override")]
        overrides: Vec<String>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Vocabulary model saved next to the checkpoint.
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    Score {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = false)]
        lowercase: bool,
    },
    /// Run the full raw-vs-subword × training-size grid for every seed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(short = 'o', long = "override")]
        overrides: Vec<String>,
    },
    /// Re-render an ablation CSV as markdown (or echo it as CSV).
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "markdown")]
        format: FormatArg,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "src-tgt")]
        direction: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Generate a deterministic synthetic parallel corpus.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_source: PathBuf,
        #[arg(long)]
        out_target: PathBuf,
    },
}

fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::from_file(path).map_err(|e| e.to_string())?;
    for ov in overrides {
        let (k, v) = ov
            .split_once('=')
            .ok_or_else(|| format!("override `{ov}` is not key=value"))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| e.to_string())?;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn read_lines(path: &Path) -> Result<Vec<String>, String> {
    Ok(fs::read_to_string(path)
        .map_err(|e| format!("{}: {e}", path.display()))?
        .lines()
        .map(str::to_string)
        .collect())
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Clean {
            source,
            target,
            out_source,
            out_target,
            report,
            threshold,
        } => {
            let corpus =
                load_parallel(&source, &target, "src", "tgt").map_err(|e| e.to_string())?;
            let profiles = [
                LanguageProfile::from_lines("src", &corpus.source_lines()),
                LanguageProfile::from_lines("tgt", &corpus.target_lines()),
            ];
            let (kept, rep) =
                filter_corpus(&corpus, &profiles, threshold).map_err(|e| e.to_string())?;
            kept.write_files(&out_source, &out_target)
                .map_err(|e| e.to_string())?;
            let rendered = rep.to_kv();
            print!("{rendered}");
            if let Some(path) = report {
                fs::write(path, rendered).map_err(|e| e.to_string())?;
            }
        }
        Command::Split {
            source,
            target,
            valid_size,
            test_size,
            seed,
            out_dir,
        } => {
            let corpus =
                load_parallel(&source, &target, "src", "tgt").map_err(|e| e.to_string())?;
            let splits = stratified_split(&corpus, valid_size, test_size, seed)
                .map_err(|e| e.to_string())?;
            fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;
            for (name, part) in [
                ("valid", &splits.valid),
                ("test", &splits.test),
                ("train", &splits.train_pool),
            ] {
                part.write_files(
                    &out_dir.join(format!("{name}.src")),
                    &out_dir.join(format!("{name}.tgt")),
                )
                .map_err(|e| e.to_string())?;
            }
            println!(
                "valid={} test={} train_pool={}",
                splits.valid.len(),
                splits.test.len(),
                splits.train_pool.len()
            );
        }
        Command::Subsets {
            source,
            target,
            sizes,
            seed,
            out_dir,
        } => {
            let corpus =
                load_parallel(&source, &target, "src", "tgt").map_err(|e| e.to_string())?;
            let subsets = nested_subsets(&corpus, &sizes, seed).map_err(|e| e.to_string())?;
            fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;
            for (size, subset) in sizes.iter().zip(&subsets) {
                subset
                    .write_files(
                        &out_dir.join(format!("train_{size}.src")),
                        &out_dir.join(format!("train_{size}.tgt")),
                    )
                    .map_err(|e| e.to_string())?;
            }
        }
        Command::BpeTrain {
            input,
            vocab_size,
            min_pair_freq,
            model,
        } => {
            let mut lines = Vec::new();
            for path in &input {
                lines.extend(read_lines(path)?);
            }
            let bpe =
                train_bpe(&lines, vocab_size, min_pair_freq).map_err(|e| e.to_string())?;
            println!(
                "vocab={} merges={}",
                bpe.vocab.len(),
                bpe.merges.len()
            );
            TextCodec::Bpe(bpe).save(&model).map_err(|e| e.to_string())?;
        }
        Command::BpeApply {
            model,
            input,
            output,
            decode,
        } => {
            let codec = TextCodec::load(&model).map_err(|e| e.to_string())?;
            let mut out = String::new();
            for line in read_lines(&input)? {
                if decode {
                    let ids: Vec<u32> = line
                        .split_whitespace()
                        .map(|piece| codec.vocab().id_of(piece).unwrap_or(1))
                        .collect();
                    out.push_str(&codec.decode(&ids).map_err(|e| e.to_string())?);
                } else {
                    let ids = codec.encode(&line);
                    let pieces: Vec<&str> = ids
                        .iter()
                        .map(|&id| codec.vocab().piece(id).unwrap_or("<unk>"))
                        .collect();
                    out.push_str(&pieces.join(" "));
                }
                out.push('\n');
            }
            fs::write(&output, out).map_err(|e| e.to_string())?;
        }
        Command::Train {
            config,
            overrides,
            size,
            condition,
            seed,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let splits = load_splits(&cfg).map_err(|e| e.to_string())?;
            let outcome = run_experiment(&cfg, &splits, size, condition.into(), seed)
                .map_err(|e| e.to_string())?;
            println!("{}", outcome.bleu.summary());
        }
        Command::Translate {
            config,
            overrides,
            checkpoint,
            vocab,
            input,
            output,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let codec = TextCodec::load(&vocab).map_err(|e| e.to_string())?;
            let mcfg = ModelConfig {
                src_vocab_size: codec.vocab().len(),
                tgt_vocab_size: codec.vocab().len(),
                ..cfg.model.clone()
            };
            let ckpt = load_checkpoint(&checkpoint, &mcfg).map_err(|e| e.to_string())?;
            let mut out = String::new();
            for line in read_lines(&input)? {
                let src = codec.encode(&line);
                let hyp = translate_ids(&ckpt.params, &mcfg, &cfg.decode, &src)
                    .map_err(|e| e.to_string())?;
                out.push_str(&codec.decode(&hyp.tokens).map_err(|e| e.to_string())?);
                out.push('\n');
            }
            fs::write(&output, out).map_err(|e| e.to_string())?;
        }
        Command::Score {
            hyp,
            reference,
            lowercase,
        } => {
            let hyps = read_lines(&hyp)?;
            let refs = read_lines(&reference)?;
            let score = corpus_bleu(&hyps, &refs, lowercase).map_err(|e| e.to_string())?;
            println!("{}", score.summary());
        }
        Command::Ablate { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let splits = load_splits(&cfg).map_err(|e| e.to_string())?;
            fs::create_dir_all(&cfg.output_dir).map_err(|e| e.to_string())?;
            let mut missing = 0usize;
            for &seed in &cfg.seeds {
                let table = run_ablation(&cfg, &splits, seed).map_err(|e| e.to_string())?;
                missing += table.missing_cells(&cfg.conditions);
                let dir = cfg.output_dir.join(format!("seed_{seed}"));
                emit_report(&table, ReportFormat::Csv, &dir.join("report.csv"))
                    .map_err(|e| e.to_string())?;
                emit_report(&table, ReportFormat::Markdown, &dir.join("report.md"))
                    .map_err(|e| e.to_string())?;
                println!(
                    "seed {seed}: {} rows, {} missing cells",
                    table.rows.len(),
                    table.missing_cells(&cfg.conditions)
                );
            }
            if missing > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Report {
            input,
            format,
            output,
            direction,
            seed,
        } => {
            let text = fs::read_to_string(&input).map_err(|e| e.to_string())?;
            let mut lines = text.lines();
            let header = lines.next().ok_or("empty report CSV")?;
            if header != "training_size,bleu_no_subword,bleu_with_subword" {
                return Err(format!("unexpected report header: {header}"));
            }
            let parse_cell = |s: &str| -> Result<Option<f64>, String> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|e| format!("bad cell {s}: {e}"))
                }
            };
            let mut rows = Vec::new();
            for line in lines {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != 3 {
                    return Err(format!("malformed report row: {line}"));
                }
                rows.push(ReportRow {
                    training_size: fields[0]
                        .parse()
                        .map_err(|e| format!("bad size {}: {e}", fields[0]))?,
                    bleu_no_subword: parse_cell(fields[1])?,
                    bleu_with_subword: parse_cell(fields[2])?,
                });
            }
            let table = ReportTable {
                rows,
                direction,
                seed,
                decode: Default::default(),
                config_fingerprint: 0,
                curves: Default::default(),
            };
            let fmt = match format {
                FormatArg::Csv => ReportFormat::Csv,
                FormatArg::Markdown => ReportFormat::Markdown,
            };
            emit_report(&table, fmt, &output).map_err(|e| e.to_string())?;
        }
        Command::Synth {
            kind,
            count,
            seed,
            out_source,
            out_target,
        } => {
            let corpus = match kind {
                SynthKind::Copy => copy_corpus(count, seed),
                SynthKind::Agglutinative => agglutinative_corpus(count, seed),
            };
            corpus
                .write_files(&out_source, &out_target)
                .map_err(|e| e.to_string())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LRMT_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
