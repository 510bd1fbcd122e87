//! Corpus ingestion: normalization, subword vocabulary, chunking, and
//! document-disjoint splits.

mod chunk;
mod split;
mod synthetic;
mod tokenizer;

use std::path::Path;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub use chunk::{chunk, Chunk};
pub use split::{split, CorpusSplit, Partition};
pub use synthetic::{generate_synthetic, SyntheticCorpusSpec, SyntheticProfession};
pub use tokenizer::{
    build_vocab, Encoding, TokenizerModel, VocabParams, CLS_ID, CONTINUATION_MARKER, MASK_ID,
    PAD_ID, SEP_ID, SPECIAL_TOKENS, UNK_ID,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus contains no text")]
    EmptyCorpus,
    #[error("document {0:?} has empty text")]
    EmptyDocument(String),
    #[error("duplicate document id {0:?}")]
    DuplicateDocument(String),
    #[error("invalid chunking parameters: stride {stride} must be smaller than max_len {max_len}")]
    InvalidStride { max_len: usize, stride: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed tokenizer file at line {line}: {reason}")]
    MalformedVocab { line: usize, reason: String },
    #[error("malformed split manifest: {0}")]
    MalformedManifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// A unit of text that is never split across partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, CorpusError> {
        let id = id.into();
        let text: String = text.into();
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyDocument(id));
        }
        Ok(Self { id, text: text.nfc().collect() })
    }
}

/// NFC plus lowercasing; every lookup key in the pipeline goes through this.
pub fn normalize(text: &str) -> String {
    text.nfc().collect::<String>().to_lowercase()
}

/// Splits normalized text into words. Whitespace separates words and every
/// character that is neither alphanumeric nor whitespace stands alone.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let normalized = normalize(text);
    let mut words = Vec::new();
    let mut current = String::new();
    for c in normalized.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if c.is_alphanumeric() {
            current.push(c);
        } else {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            words.push(c.to_string());
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Sentence boundaries fall after `.`, `!` or `?` when followed by whitespace
/// and an uppercase letter.
pub fn segment_sentences(text: &str) -> Vec<&str> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && chars[j].1.is_whitespace() {
                j += 1;
            }
            if j > i + 1 && j < chars.len() && chars[j].1.is_uppercase() {
                let end = pos + c.len_utf8();
                let sentence = text[start..end].trim();
                if !sentence.is_empty() {
                    sentences.push(sentence);
                }
                start = chars[j].0;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail);
    }
    sentences
}

/// Loads every regular file in `dir` as one document; the file name is the id.
pub fn load_documents(dir: &Path) -> Result<Vec<Document>, CorpusError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut docs = Vec::with_capacity(paths.len());
    let mut seen = std::collections::HashSet::new();
    for path in paths {
        let id = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateDocument(id));
        }
        let text = std::fs::read_to_string(&path)?;
        if text.trim().is_empty() {
            log::warn!("skipping empty document {id}");
            continue;
        }
        docs.push(Document::new(id, text)?);
    }
    if docs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(docs)
}

/// Writes documents as one file each, mirroring [`load_documents`].
pub fn write_documents(dir: &Path, docs: &[Document]) -> Result<(), CorpusError> {
    std::fs::create_dir_all(dir)?;
    for doc in docs {
        std::fs::write(dir.join(&doc.id), &doc.text)?;
    }
    Ok(())
}

/// A document after tokenization, keeping the word alignment.
#[derive(Debug, Clone)]
pub struct TokenizedDocument {
    pub id: String,
    pub encoding: Encoding,
    pub sentence_count: usize,
}

pub fn tokenize_document(tokenizer: &TokenizerModel, doc: &Document) -> TokenizedDocument {
    let mut encoding = Encoding::default();
    let sentences = segment_sentences(&doc.text);
    for sentence in &sentences {
        encoding.extend(tokenizer.tokenize(sentence));
    }
    TokenizedDocument {
        id: doc.id.clone(),
        encoding,
        sentence_count: sentences.len(),
    }
}
