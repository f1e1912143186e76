//! Parallel corpus loading, normalization, filtering, and splitting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use once_cell::sync::Lazy;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line count mismatch: {source_lines} source vs {target_lines} target lines")]
    LineCountMismatch {
        source_lines: usize,
        target_lines: usize,
    },
    #[error("invalid UTF-8 in {0}")]
    EncodingError(String),
    #[error("no language profiles supplied")]
    EmptyProfiles,
    #[error("requested split sizes {requested} exceed corpus size {available}")]
    SizesExceedCorpus { requested: usize, available: usize },
    #[error("requested subset size {requested} exceeds pool size {available}")]
    SizeExceedsPool { requested: usize, available: usize },
    #[error("subset sizes must be ascending")]
    SizesNotAscending,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub id: u64,
    pub source_text: String,
    pub target_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
    pub source_lang: String,
    pub target_lang: String,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn source_lines(&self) -> Vec<String> {
        self.pairs.iter().map(|p| p.source_text.clone()).collect()
    }

    pub fn target_lines(&self) -> Vec<String> {
        self.pairs.iter().map(|p| p.target_text.clone()).collect()
    }

    /// Write the two sides back out as aligned one-sentence-per-line files.
    pub fn write_files(&self, source_path: &Path, target_path: &Path) -> Result<(), CorpusError> {
        let mut src = String::new();
        let mut tgt = String::new();
        for p in &self.pairs {
            src.push_str(&p.source_text);
            src.push('\n');
            tgt.push_str(&p.target_text);
            tgt.push('\n');
        }
        fs::write(source_path, src)?;
        fs::write(target_path, tgt)?;
        Ok(())
    }
}

/// Character n-gram frequency profile of one language.
#[derive(Debug, Clone)]
pub struct LanguageProfile {
    pub lang_tag: String,
    pub ngram_order: usize,
    pub freqs: HashMap<String, f64>,
}

impl LanguageProfile {
    /// Build a profile from sample lines with the default trigram order.
    pub fn from_lines(lang_tag: &str, lines: &[String]) -> Self {
        Self::with_order(lang_tag, lines, 3)
    }

    pub fn with_order(lang_tag: &str, lines: &[String], ngram_order: usize) -> Self {
        let mut counts: HashMap<String, f64> = HashMap::new();
        let mut total = 0.0;
        for line in lines {
            let chars: Vec<char> = line.chars().collect();
            if chars.len() < ngram_order {
                continue;
            }
            for w in chars.windows(ngram_order) {
                *counts.entry(w.iter().collect()).or_insert(0.0) += 1.0;
                total += 1.0;
            }
        }
        if total > 0.0 {
            for v in counts.values_mut() {
                *v /= total;
            }
        }
        LanguageProfile {
            lang_tag: lang_tag.to_string(),
            ngram_order,
            freqs: counts,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterReport {
    pub input_count: usize,
    pub normalized_modified: usize,
    pub emptied_removed: usize,
    pub same_language_removed: usize,
    pub identical_sides_removed: usize,
    pub duplicate_removed: usize,
    pub overlong_removed: usize,
    pub retained: usize,
}

impl FilterReport {
    /// Flat key=value rendering, one entry per line.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "input_count={}", self.input_count);
        let _ = writeln!(out, "normalized_modified={}", self.normalized_modified);
        let _ = writeln!(out, "emptied_removed={}", self.emptied_removed);
        let _ = writeln!(out, "same_language_removed={}", self.same_language_removed);
        let _ = writeln!(out, "identical_sides_removed={}", self.identical_sides_removed);
        let _ = writeln!(out, "duplicate_removed={}", self.duplicate_removed);
        let _ = writeln!(out, "overlong_removed={}", self.overlong_removed);
        let _ = writeln!(out, "retained={}", self.retained);
        out
    }
}

#[derive(Debug, Clone)]
pub struct DataSplits {
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
    pub train_pool: ParallelCorpus,
}

pub fn load_parallel(
    source_path: &Path,
    target_path: &Path,
    source_lang: &str,
    target_lang: &str,
) -> Result<ParallelCorpus, CorpusError> {
    let read = |path: &Path| -> Result<Vec<String>, CorpusError> {
        let bytes = fs::read(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| CorpusError::EncodingError(path.display().to_string()))?;
        Ok(text.lines().map(str::to_owned).collect())
    };
    let src = read(source_path)?;
    let tgt = read(target_path)?;
    if src.len() != tgt.len() {
        return Err(CorpusError::LineCountMismatch {
            source_lines: src.len(),
            target_lines: tgt.len(),
        });
    }
    let pairs = src
        .into_iter()
        .zip(tgt)
        .enumerate()
        .map(|(i, (s, t))| SentencePair {
            id: i as u64,
            source_text: s,
            target_text: t,
        })
        .collect();
    Ok(ParallelCorpus {
        pairs,
        source_lang: source_lang.to_string(),
        target_lang: target_lang.to_string(),
    })
}

static URL_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"[A-Za-z][A-Za-z0-9+.-]*://\S+|www\.\S+").expect("valid regex"));

/// Normalize one side: strip control characters (keeping tab) and URLs, map
/// all whitespace to ASCII space, collapse runs, trim.
pub fn normalize_text(text: &str) -> String {
    let no_ctrl: String = text.chars().filter(|c| !c.is_control() || *c == '\t').collect();
    let no_urls = URL_RE.replace_all(&no_ctrl, "");
    no_urls.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn normalize_pair(pair: &SentencePair) -> SentencePair {
    SentencePair {
        id: pair.id,
        source_text: normalize_text(&pair.source_text),
        target_text: normalize_text(&pair.target_text),
    }
}

fn trigram_vector(text: &str, order: usize) -> HashMap<String, f64> {
    let chars: Vec<char> = text.chars().collect();
    let mut counts: HashMap<String, f64> = HashMap::new();
    if chars.len() >= order {
        for w in chars.windows(order) {
            *counts.entry(w.iter().collect()).or_insert(0.0) += 1.0;
        }
    }
    counts
}

fn cosine(a: &HashMap<String, f64>, b: &HashMap<String, f64>) -> f64 {
    let dot: f64 = a
        .iter()
        .filter_map(|(k, va)| b.get(k).map(|vb| va * vb))
        .sum();
    let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Classify one side against the profiles; `None` means unknown (too short
/// or below the similarity threshold).
fn classify<'a>(
    text: &str,
    profiles: &'a [LanguageProfile],
    threshold: f64,
) -> Option<&'a str> {
    let order = profiles.first().map(|p| p.ngram_order)?;
    if text.chars().count() < order {
        return None;
    }
    let vec = trigram_vector(text, order);
    let mut best: Option<(&str, f64)> = None;
    for p in profiles {
        let sim = cosine(&vec, &p.freqs);
        if best.is_none_or(|(_, b)| sim > b) {
            best = Some((&p.lang_tag, sim));
        }
    }
    best.and_then(|(tag, sim)| (sim >= threshold).then_some(tag))
}

/// True iff both sides classify to the same language at or above the
/// threshold; sides shorter than the n-gram order never trigger removal.
pub fn same_language(
    pair: &SentencePair,
    profiles: &[LanguageProfile],
    threshold: f64,
) -> Result<bool, CorpusError> {
    if profiles.is_empty() {
        return Err(CorpusError::EmptyProfiles);
    }
    let src = classify(&pair.source_text, profiles, threshold);
    let tgt = classify(&pair.target_text, profiles, threshold);
    Ok(matches!((src, tgt), (Some(a), Some(b)) if a == b))
}

fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Apply the filtering rules in fixed order: normalize, drop emptied pairs,
/// drop same-language pairs, drop identical-sides pairs, deduplicate, drop
/// overlong pairs (> 2x mean word count per side, iterated to a fixed
/// point). Each pair is attributed to the first rule that removes it.
pub fn filter_corpus(
    corpus: &ParallelCorpus,
    profiles: &[LanguageProfile],
    threshold: f64,
) -> Result<(ParallelCorpus, FilterReport), CorpusError> {
    if profiles.is_empty() {
        return Err(CorpusError::EmptyProfiles);
    }
    let mut report = FilterReport {
        input_count: corpus.len(),
        ..FilterReport::default()
    };

    let mut survivors: Vec<SentencePair> = Vec::with_capacity(corpus.len());
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for pair in &corpus.pairs {
        let norm = normalize_pair(pair);
        if norm.source_text != pair.source_text || norm.target_text != pair.target_text {
            report.normalized_modified += 1;
        }
        if norm.source_text.is_empty() || norm.target_text.is_empty() {
            report.emptied_removed += 1;
            continue;
        }
        if same_language(&norm, profiles, threshold)? {
            report.same_language_removed += 1;
            continue;
        }
        if norm.source_text == norm.target_text {
            report.identical_sides_removed += 1;
            continue;
        }
        if !seen.insert((norm.source_text.clone(), norm.target_text.clone())) {
            report.duplicate_removed += 1;
            continue;
        }
        survivors.push(norm);
    }

    // Overlong rule iterated to a fixed point so filtering is idempotent.
    loop {
        if survivors.is_empty() {
            break;
        }
        let n = survivors.len() as f64;
        let src_mean =
            survivors.iter().map(|p| word_count(&p.source_text) as f64).sum::<f64>() / n;
        let tgt_mean =
            survivors.iter().map(|p| word_count(&p.target_text) as f64).sum::<f64>() / n;
        let before = survivors.len();
        survivors.retain(|p| {
            (word_count(&p.source_text) as f64) <= 2.0 * src_mean
                && (word_count(&p.target_text) as f64) <= 2.0 * tgt_mean
        });
        report.overlong_removed += before - survivors.len();
        if survivors.len() == before {
            break;
        }
    }

    report.retained = survivors.len();
    Ok((
        ParallelCorpus {
            pairs: survivors,
            source_lang: corpus.source_lang.clone(),
            target_lang: corpus.target_lang.clone(),
        },
        report,
    ))
}

/// Decile strata over the source word-count distribution: stratum of a pair
/// is the number of decile cut values strictly below its word count.
fn strata_of(corpus: &ParallelCorpus) -> Vec<usize> {
    let n = corpus.len();
    let mut sorted: Vec<usize> = corpus
        .pairs
        .iter()
        .map(|p| word_count(&p.source_text))
        .collect();
    let counts = sorted.clone();
    sorted.sort_unstable();
    let cuts: Vec<usize> = (1..10).map(|k| sorted[k * n / 10]).collect();
    counts
        .iter()
        .map(|&c| cuts.iter().filter(|&&t| c > t).count())
        .collect()
}

/// Largest-remainder apportionment of `total` over strata with the given
/// sizes, capped by per-stratum capacity.
fn apportion(sizes: &[usize], capacities: &[usize], total: usize, grand: usize) -> Vec<usize> {
    let mut quotas: Vec<usize> = Vec::with_capacity(sizes.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(sizes.len());
    let mut allocated = 0;
    for (i, &sz) in sizes.iter().enumerate() {
        let exact = total as f64 * sz as f64 / grand as f64;
        let floor = (exact.floor() as usize).min(capacities[i]);
        quotas.push(floor);
        allocated += floor;
        remainders.push((i, exact - exact.floor()));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut idx = 0;
    while allocated < total {
        let (i, _) = remainders[idx % remainders.len()];
        if quotas[i] < capacities[i] {
            quotas[i] += 1;
            allocated += 1;
        }
        idx += 1;
        if idx > remainders.len() * (total + 1) {
            break; // capacity exhausted; caller validated totals
        }
    }
    quotas
}

/// Stratified valid/test/train split over source-length deciles, sampled
/// proportionally with largest-remainder rounding, deterministic in `seed`.
pub fn stratified_split(
    corpus: &ParallelCorpus,
    valid_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<DataSplits, CorpusError> {
    let n = corpus.len();
    if valid_size + test_size >= n {
        return Err(CorpusError::SizesExceedCorpus {
            requested: valid_size + test_size,
            available: n,
        });
    }
    let strata = strata_of(corpus);
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let keys: Vec<usize> = groups.keys().copied().collect();
    let sizes: Vec<usize> = keys.iter().map(|k| groups[k].len()).collect();

    let valid_quota = apportion(&sizes, &sizes, valid_size, n);
    let caps_after_valid: Vec<usize> =
        sizes.iter().zip(&valid_quota).map(|(s, v)| s - v).collect();
    let test_quota = apportion(&sizes, &caps_after_valid, test_size, n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut valid_idx: Vec<usize> = Vec::with_capacity(valid_size);
    let mut test_idx: Vec<usize> = Vec::with_capacity(test_size);
    let mut train_idx: Vec<usize> = Vec::new();
    for (gi, k) in keys.iter().enumerate() {
        let mut members = groups[k].clone();
        members.shuffle(&mut rng);
        let v = valid_quota[gi];
        let t = test_quota[gi];
        valid_idx.extend(&members[..v]);
        test_idx.extend(&members[v..v + t]);
        train_idx.extend(&members[v + t..]);
    }
    valid_idx.sort_unstable();
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    let take = |idx: &[usize]| ParallelCorpus {
        pairs: idx.iter().map(|&i| corpus.pairs[i].clone()).collect(),
        source_lang: corpus.source_lang.clone(),
        target_lang: corpus.target_lang.clone(),
    };
    Ok(DataSplits {
        valid: take(&valid_idx),
        test: take(&test_idx),
        train_pool: take(&train_idx),
    })
}

/// Nested training subsets: one seeded shuffle of the pool, subset k is the
/// first k pairs, so every subset is a prefix of the next.
pub fn nested_subsets(
    train_pool: &ParallelCorpus,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<ParallelCorpus>, CorpusError> {
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(CorpusError::SizesNotAscending);
    }
    if let Some(&max) = sizes.last() {
        if max > train_pool.len() {
            return Err(CorpusError::SizeExceedsPool {
                requested: max,
                available: train_pool.len(),
            });
        }
    }
    let mut order: Vec<usize> = (0..train_pool.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok(sizes
        .iter()
        .map(|&k| ParallelCorpus {
            pairs: order[..k].iter().map(|&i| train_pool.pairs[i].clone()).collect(),
            source_lang: train_pool.source_lang.clone(),
            target_lang: train_pool.target_lang.clone(),
        })
        .collect())
}
