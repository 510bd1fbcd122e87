use std::collections::{BTreeMap, HashMap, HashSet};
use std::ops::Range;
use std::path::Path;

use super::{pre_tokenize, CorpusError, Document};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

/// Reserved tokens, in id order.
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Prefix carried by every non-initial piece of a word.
pub const CONTINUATION_MARKER: &str = "##";

const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabParams {
    pub max_vocab: usize,
    pub min_freq: u64,
    pub charset_limit: usize,
}

impl Default for VocabParams {
    fn default() -> Self {
        Self {
            max_vocab: 30_000,
            min_freq: 3,
            charset_limit: 1_000,
        }
    }
}

/// Token ids for a piece of text plus, for every word, the range of pieces
/// it was segmented into.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub words: Vec<String>,
    pub spans: Vec<Range<usize>>,
}

impl Encoding {
    pub fn extend(&mut self, other: Encoding) {
        let offset = self.ids.len();
        self.ids.extend(other.ids);
        self.words.extend(other.words);
        self.spans
            .extend(other.spans.into_iter().map(|r| r.start + offset..r.end + offset));
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Greedy longest-match subword tokenizer. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizerModel {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

/// Builds a vocabulary of single characters (initial and continuation
/// forms) plus whole words, both filtered by `min_freq`.
///
/// Characters are admitted first so that any word made of admitted
/// characters can always be segmented; the remaining budget goes to whole
/// words by descending frequency, ties broken lexicographically.
pub fn build_vocab(documents: &[Document], params: &VocabParams) -> Result<TokenizerModel, CorpusError> {
    if params.max_vocab < SPECIAL_TOKENS.len() {
        return Err(CorpusError::InvalidParameter(format!(
            "max_vocab {} cannot hold the {} special tokens",
            params.max_vocab,
            SPECIAL_TOKENS.len()
        )));
    }
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for doc in documents {
        for word in pre_tokenize(&doc.text) {
            *word_counts.entry(word).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }

    let mut char_counts: BTreeMap<char, u64> = BTreeMap::new();
    for (word, &n) in &word_counts {
        for c in word.chars() {
            *char_counts.entry(c).or_default() += n;
        }
    }
    let mut ranked_chars: Vec<(char, u64)> = char_counts.into_iter().collect();
    ranked_chars.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    if ranked_chars.len() > params.charset_limit {
        log::warn!(
            "charset has {} distinct characters, keeping the {} most frequent",
            ranked_chars.len(),
            params.charset_limit
        );
        ranked_chars.truncate(params.charset_limit);
    }
    let allowed: HashSet<char> = ranked_chars.iter().map(|&(c, _)| c).collect();

    let mut char_units: BTreeMap<String, u64> = BTreeMap::new();
    let mut word_units: Vec<(String, u64)> = Vec::new();
    for (word, &n) in &word_counts {
        if !word.chars().all(|c| allowed.contains(&c)) {
            continue;
        }
        let mut chars = word.chars();
        if let Some(first) = chars.next() {
            *char_units.entry(first.to_string()).or_default() += n;
        }
        for c in chars {
            *char_units
                .entry(format!("{CONTINUATION_MARKER}{c}"))
                .or_default() += n;
        }
        if word.chars().count() > 1 {
            word_units.push((word.clone(), n));
        }
    }

    let by_rank = |a: &(String, u64), b: &(String, u64)| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0));
    let mut char_units: Vec<(String, u64)> = char_units
        .into_iter()
        .filter(|&(_, n)| n >= params.min_freq)
        .collect();
    char_units.sort_by(by_rank);
    word_units.retain(|&(_, n)| n >= params.min_freq);
    word_units.sort_by(by_rank);

    let budget = params.max_vocab - SPECIAL_TOKENS.len();
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(char_units.into_iter().chain(word_units).take(budget).map(|(s, _)| s));
    Ok(TokenizerModel::from_tokens(tokens))
}

impl TokenizerModel {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }

    /// Segments one already-normalized word into pieces; `[UNK]` when any
    /// position has no matching piece.
    pub fn segment_word(&self, word: &str) -> Vec<u32> {
        let chars: Vec<char> = word.chars().collect();
        if chars.is_empty() {
            return Vec::new();
        }
        if chars.len() > MAX_WORD_CHARS {
            return vec![UNK_ID];
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut candidate = String::new();
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION_MARKER);
                }
                candidate.extend(&chars[start..end]);
                if let Some(&id) = self.index.get(candidate.as_str()) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    pieces.push(id);
                    start = end;
                }
                None => return vec![UNK_ID],
            }
        }
        pieces
    }

    /// Total: every word gets at least one piece and the alignment covers
    /// the whole id sequence.
    pub fn tokenize(&self, text: &str) -> Encoding {
        let mut enc = Encoding::default();
        for word in pre_tokenize(text) {
            let pieces = self.segment_word(&word);
            let start = enc.ids.len();
            enc.ids.extend(pieces);
            enc.spans.push(start..enc.ids.len());
            enc.words.push(word);
        }
        enc
    }

    /// Joins pieces back into a word, dropping continuation markers.
    pub fn detokenize_word(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter_map(|&id| self.token(id))
            .map(|t| t.strip_prefix(CONTINUATION_MARKER).unwrap_or(t))
            .collect()
    }

    /// One token per line, line number = id.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(CorpusError::MalformedVocab {
                line: tokens.len(),
                reason: "missing special tokens".into(),
            });
        }
        for (line, expected) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[line] != *expected {
                return Err(CorpusError::MalformedVocab {
                    line,
                    reason: format!("expected {expected}, found {:?}", tokens[line]),
                });
            }
        }
        let mut seen = HashSet::new();
        for (line, t) in tokens.iter().enumerate() {
            if t.is_empty() || !seen.insert(t) {
                return Err(CorpusError::MalformedVocab {
                    line,
                    reason: format!("empty or duplicate token {t:?}"),
                });
            }
        }
        Ok(Self::from_tokens(tokens))
    }
}
