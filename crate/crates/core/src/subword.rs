//! Subword models: BPE merge training/application and word-level
//! vocabularies for the raw (no subword) condition.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Word-boundary marker prepended to each word as its own symbol.
pub const BOUNDARY: char = '\u{2581}';

const FORMAT_VERSION: &str = "v1";
const FORMAT_MAGIC: &str = "LRMT_SUBWORD";

#[derive(Debug, Error)]
pub enum SubwordError {
    #[error("requested vocab size {requested} cannot hold {required} base symbols")]
    VocabTooSmall { requested: usize, required: usize },
    #[error("no input text to train on")]
    EmptyInput,
    #[error("token id {0} out of range")]
    UnknownId(u32),
    #[error("model file version mismatch: found {0:?}")]
    FormatVersionMismatch(String),
    #[error("corrupt model file: {0}")]
    CorruptModelFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabMode {
    Word,
    Bpe,
}

/// Bijective piece <-> id table with fixed reserved ids 0..=3.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pieces: Vec<String>,
    piece_to_id: HashMap<String, u32>,
    pub mode: VocabMode,
}

impl Vocabulary {
    pub fn new(mode: VocabMode) -> Self {
        let mut v = Vocabulary {
            pieces: Vec::new(),
            piece_to_id: HashMap::new(),
            mode,
        };
        for p in RESERVED {
            v.push(p.to_string());
        }
        v
    }

    fn push(&mut self, piece: String) -> u32 {
        let id = self.pieces.len() as u32;
        self.piece_to_id.insert(piece.clone(), id);
        self.pieces.push(piece);
        id
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id_of(&self, piece: &str) -> Option<u32> {
        self.piece_to_id.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Result<&str, SubwordError> {
        self.pieces
            .get(id as usize)
            .map(String::as_str)
            .ok_or(SubwordError::UnknownId(id))
    }

    /// Word-level encoding: one id per whitespace token, unknowns -> unk.
    pub fn encode_words(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .map(|w| self.id_of(w).unwrap_or(UNK_ID))
            .collect()
    }

    /// Word-level decoding: space-joined pieces.
    pub fn decode_words(&self, ids: &[u32]) -> Result<String, SubwordError> {
        let words: Result<Vec<&str>, _> = ids.iter().map(|&id| self.piece(id)).collect();
        Ok(words?.join(" "))
    }
}

/// Trained BPE model: vocabulary plus the ordered merge table.
#[derive(Debug, Clone, PartialEq)]
pub struct BpeModel {
    pub vocab: Vocabulary,
    pub merges: Vec<(String, String)>,
}

/// Train a BPE model over the given lines.
///
/// Each word is initialized as `[boundary, char, char, ...]`; the most
/// frequent adjacent pair is merged repeatedly (ties broken by the
/// lexicographically smallest concatenated string) until `vocab_size`
/// pieces exist or no pair reaches `min_pair_freq`.
pub fn train_bpe(
    lines: &[String],
    vocab_size: usize,
    min_pair_freq: usize,
) -> Result<BpeModel, SubwordError> {
    // (symbols, word frequency); BTreeMap for a deterministic word order.
    let mut word_freqs: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for line in lines {
        for word in line.split_whitespace() {
            let mut syms = vec![BOUNDARY.to_string()];
            syms.extend(word.chars().map(|c| c.to_string()));
            *word_freqs.entry(syms).or_insert(0) += 1;
        }
    }
    if word_freqs.is_empty() {
        return Err(SubwordError::EmptyInput);
    }

    let alphabet: BTreeSet<String> = word_freqs.keys().flatten().cloned().collect();
    let required = alphabet.len() + RESERVED.len();
    if vocab_size <= required {
        return Err(SubwordError::VocabTooSmall {
            requested: vocab_size,
            required,
        });
    }

    let mut vocab = Vocabulary::new(VocabMode::Bpe);
    for sym in &alphabet {
        vocab.push(sym.clone());
    }

    let mut sequences: Vec<(Vec<String>, usize)> = word_freqs.into_iter().collect();
    let mut merges: Vec<(String, String)> = Vec::new();

    while vocab.len() < vocab_size {
        let mut pair_freqs: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, freq) in &sequences {
            for w in syms.windows(2) {
                *pair_freqs.entry((&w[0], &w[1])).or_insert(0) += freq;
            }
        }
        let mut best: Option<(String, String, String, usize)> = None;
        for ((l, r), freq) in pair_freqs {
            let joined = format!("{l}{r}");
            let better = match &best {
                None => true,
                Some((_, _, bj, bf)) => freq > *bf || (freq == *bf && joined < *bj),
            };
            if better {
                best = Some((l.to_string(), r.to_string(), joined, freq));
            }
        }
        let Some((left, right, joined, freq)) = best else {
            break;
        };
        if freq < min_pair_freq {
            break;
        }
        for (syms, _) in &mut sequences {
            merge_in_place(syms, &left, &right, &joined);
        }
        vocab.push(joined);
        merges.push((left, right));
    }

    Ok(BpeModel { vocab, merges })
}

fn merge_in_place(syms: &mut Vec<String>, left: &str, right: &str, joined: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == left && syms[i + 1] == right {
            syms[i] = joined.to_string();
            syms.remove(i + 1);
        } else {
            i += 1;
        }
    }
}

/// Segment a word into pieces by replaying the merge table in order.
fn segment_word(model: &BpeModel, word: &str) -> Vec<String> {
    let mut syms = vec![BOUNDARY.to_string()];
    syms.extend(word.chars().map(|c| c.to_string()));
    for (left, right) in &model.merges {
        let joined = format!("{left}{right}");
        merge_in_place(&mut syms, left, right, &joined);
    }
    syms
}

pub fn encode(model: &BpeModel, text: &str) -> Vec<u32> {
    let mut ids = Vec::new();
    for word in text.split_whitespace() {
        for sym in segment_word(model, word) {
            ids.push(model.vocab.id_of(&sym).unwrap_or(UNK_ID));
        }
    }
    ids
}

pub fn decode(model: &BpeModel, ids: &[u32]) -> Result<String, SubwordError> {
    let mut out = String::new();
    for &id in ids {
        out.push_str(model.vocab.piece(id)?);
    }
    let spaced: String = out
        .chars()
        .map(|c| if c == BOUNDARY { ' ' } else { c })
        .collect();
    Ok(spaced.trim_start_matches(' ').to_string())
}

/// Build a word-level vocabulary: tokens ranked by frequency, then
/// lexicographically; the top `max_size - 4` pieces are kept.
pub fn build_word_vocab(
    lines: &[String],
    max_size: usize,
    min_freq: usize,
) -> Result<Vocabulary, SubwordError> {
    let mut freqs: BTreeMap<&str, usize> = BTreeMap::new();
    for line in lines {
        for word in line.split_whitespace() {
            *freqs.entry(word).or_insert(0) += 1;
        }
    }
    if freqs.is_empty() {
        return Err(SubwordError::EmptyInput);
    }
    let mut ranked: Vec<(&str, usize)> = freqs.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

    let mut vocab = Vocabulary::new(VocabMode::Word);
    let budget = max_size.saturating_sub(RESERVED.len());
    for (word, freq) in ranked.into_iter().take(budget) {
        if freq < min_freq {
            break;
        }
        vocab.push(word.to_string());
    }
    Ok(vocab)
}

/// Either subwording flavor behind one encode/decode/save surface.
#[derive(Debug, Clone, PartialEq)]
pub enum TextCodec {
    Bpe(BpeModel),
    Word(Vocabulary),
}

impl TextCodec {
    pub fn vocab(&self) -> &Vocabulary {
        match self {
            TextCodec::Bpe(m) => &m.vocab,
            TextCodec::Word(v) => v,
        }
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        match self {
            TextCodec::Bpe(m) => encode(m, text),
            TextCodec::Word(v) => v.encode_words(text),
        }
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String, SubwordError> {
        match self {
            TextCodec::Bpe(m) => decode(m, ids),
            TextCodec::Word(v) => v.decode_words(ids),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), SubwordError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    fn to_text(&self) -> String {
        let (vocab, merges): (&Vocabulary, &[(String, String)]) = match self {
            TextCodec::Bpe(m) => (&m.vocab, &m.merges),
            TextCodec::Word(v) => (v, &[]),
        };
        let mode = match vocab.mode {
            VocabMode::Word => "word",
            VocabMode::Bpe => "bpe",
        };
        let mut out = format!(
            "{FORMAT_MAGIC}\t{FORMAT_VERSION}\t{mode}\t{}\t{}\n",
            vocab.len(),
            merges.len()
        );
        for (id, piece) in vocab.pieces.iter().enumerate() {
            out.push_str(&format!("{piece}\t{id}\n"));
        }
        for (l, r) in merges {
            out.push_str(&format!("{l}\t{r}\n"));
        }
        out
    }

    pub fn load(path: &Path) -> Result<TextCodec, SubwordError> {
        let text = fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    fn from_text(text: &str) -> Result<TextCodec, SubwordError> {
        let corrupt = |msg: &str| SubwordError::CorruptModelFile(msg.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| corrupt("empty file"))?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 5 || fields[0] != FORMAT_MAGIC {
            return Err(corrupt("bad header"));
        }
        if fields[1] != FORMAT_VERSION {
            return Err(SubwordError::FormatVersionMismatch(fields[1].to_string()));
        }
        let mode = match fields[2] {
            "word" => VocabMode::Word,
            "bpe" => VocabMode::Bpe,
            other => return Err(corrupt(&format!("unknown mode {other:?}"))),
        };
        let n_vocab: usize = fields[3].parse().map_err(|_| corrupt("bad vocab count"))?;
        let n_merges: usize = fields[4].parse().map_err(|_| corrupt("bad merge count"))?;

        let mut vocab = Vocabulary {
            pieces: Vec::new(),
            piece_to_id: HashMap::new(),
            mode,
        };
        for i in 0..n_vocab {
            let line = lines.next().ok_or_else(|| corrupt("truncated vocab"))?;
            let (piece, id) = line
                .split_once('\t')
                .ok_or_else(|| corrupt("malformed vocab line"))?;
            let id: u32 = id.parse().map_err(|_| corrupt("bad piece id"))?;
            if id as usize != i {
                return Err(corrupt("non-contiguous piece ids"));
            }
            vocab.push(piece.to_string());
        }
        if vocab.len() < RESERVED.len()
            || RESERVED.iter().enumerate().any(|(i, p)| vocab.pieces[i] != *p)
        {
            return Err(corrupt("reserved pieces missing"));
        }
        let mut merges = Vec::with_capacity(n_merges);
        for _ in 0..n_merges {
            let line = lines.next().ok_or_else(|| corrupt("truncated merges"))?;
            let (l, r) = line
                .split_once('\t')
                .ok_or_else(|| corrupt("malformed merge line"))?;
            if vocab.id_of(&format!("{l}{r}")).is_none() {
                return Err(corrupt("merge references unknown piece"));
            }
            merges.push((l.to_string(), r.to_string()));
        }
        Ok(match mode {
            VocabMode::Bpe => TextCodec::Bpe(BpeModel { vocab, merges }),
            VocabMode::Word => TextCodec::Word(vocab),
        })
    }
}
