//! Anchor-word occurrences and their contextual embeddings.

mod lexicon;

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::corpus::{self, Chunk, CorpusError, Document, TokenizedDocument, TokenizerModel};
use crate::model::{forward_hidden_states, frame, Checkpoint, ModelError};

pub use lexicon::{AnchorLexicon, AnchorPair, Label};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("span {start}..{end} outside a sequence of length {len}")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("malformed dataset: {0}")]
    MalformedDataset(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One word occurrence, located in document token coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occurrence {
    pub doc: usize,
    pub span: Range<usize>,
}

/// Tokenized documents plus the chunk windows the model was trained on.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    pub documents: Vec<TokenizedDocument>,
    pub chunks: Vec<Vec<Chunk>>,
}

impl CorpusIndex {
    /// `chunk_len` counts content tokens, excluding `[CLS]`/`[SEP]`.
    pub fn build(
        tokenizer: &TokenizerModel,
        documents: &[Document],
        chunk_len: usize,
        stride: usize,
    ) -> Result<Self, CorpusError> {
        let tokenized: Vec<TokenizedDocument> = documents
            .par_iter()
            .map(|d| corpus::tokenize_document(tokenizer, d))
            .collect();
        let chunks = tokenized
            .iter()
            .map(|d| corpus::chunk(&d.id, &d.encoding.ids, chunk_len, stride))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { documents: tokenized, chunks })
    }

    pub fn doc_position(&self, doc_id: &str) -> Option<usize> {
        self.documents.iter().position(|d| d.id == doc_id)
    }

    /// The word whose pieces start at `token_offset`, if any.
    pub fn word_at(&self, doc_id: &str, token_offset: usize) -> Option<&str> {
        let doc = &self.documents[self.doc_position(doc_id)?];
        let enc = &doc.encoding;
        let i = enc.spans.partition_point(|s| s.start < token_offset);
        (enc.spans.get(i)?.start == token_offset).then(|| enc.words[i].as_str())
    }

    /// The chunk holding `occ` whose centre is nearest the span's centre, and
    /// the span in chunk-local coordinates. Ties go to the earlier chunk.
    pub fn locate(&self, occ: &Occurrence) -> Option<(usize, Range<usize>)> {
        let centre2 = occ.span.start + occ.span.end;
        self.chunks[occ.doc]
            .iter()
            .enumerate()
            .filter(|(_, c)| c.start_offset <= occ.span.start && occ.span.end <= c.end_offset())
            .min_by_key(|(_, c)| (c.start_offset + c.end_offset()).abs_diff(centre2))
            .map(|(i, c)| (i, occ.span.start - c.start_offset..occ.span.end - c.start_offset))
    }
}

/// Every whole-word, case-insensitive occurrence of `word`.
pub fn find_occurrences(index: &CorpusIndex, word: &str) -> Vec<Occurrence> {
    let target = corpus::normalize(word);
    let mut out = Vec::new();
    for (doc, d) in index.documents.iter().enumerate() {
        for (w, span) in d.encoding.words.iter().zip(&d.encoding.spans) {
            if *w == target {
                out.push(Occurrence { doc, span: span.clone() });
            }
        }
    }
    out
}

/// Mean of `hidden` rows in `span`.
pub fn mean_rows(hidden: &Array2<f64>, span: Range<usize>) -> Result<Array1<f64>, EmbedError> {
    if span.is_empty() || span.end > hidden.nrows() {
        return Err(EmbedError::SpanOutOfRange { start: span.start, end: span.end, len: hidden.nrows() });
    }
    let n = span.len() as f64;
    let mut sum = Array1::zeros(hidden.ncols());
    for row in hidden.rows().into_iter().skip(span.start).take(span.len()) {
        sum += &row;
    }
    Ok(sum / n)
}

/// Final-layer embedding of the word at `span` (chunk-local) with the chunk
/// framed as the model saw it during training.
pub fn extract_embedding(checkpoint: &Checkpoint, chunk: &Chunk, span: Range<usize>) -> Result<Array1<f64>, EmbedError> {
    if span.is_empty() || span.end > chunk.len() {
        return Err(EmbedError::SpanOutOfRange { start: span.start, end: span.end, len: chunk.len() });
    }
    let hidden = forward_hidden_states(checkpoint, &frame(chunk))?;
    mean_rows(&hidden, span.start + 1..span.end + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    pub checkpoint: usize,
    pub group: String,
    pub label: Label,
    pub doc_id: String,
    pub token_offset: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WordCount {
    pub label: Label,
    pub available: usize,
    pub sampled: usize,
}

/// Occurrences chosen for embedding. Independent of any checkpoint so every
/// checkpoint of a sweep sees the same occurrences.
#[derive(Debug, Clone)]
pub struct OccurrenceSample {
    pub entries: Vec<(String, Label, Occurrence)>,
    pub counts: BTreeMap<String, WordCount>,
}

impl OccurrenceSample {
    pub fn missing_words(&self) -> Vec<&str> {
        self.counts.iter().filter(|(_, c)| c.available == 0).map(|(w, _)| w.as_str()).collect()
    }
}

fn word_seed(seed: u64, word: &str) -> u64 {
    let digest = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(word.as_bytes()).finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Up to `cap` occurrences per lexicon word, uniformly without replacement.
/// Occurrences that no chunk fully contains are not available.
pub fn sample_occurrences(index: &CorpusIndex, lexicon: &AnchorLexicon, cap: usize, seed: u64) -> OccurrenceSample {
    let mut entries = Vec::new();
    let mut counts = BTreeMap::new();
    for (word, label) in lexicon.words() {
        let found: Vec<Occurrence> = find_occurrences(index, &word)
            .into_iter()
            .filter(|o| index.locate(o).is_some())
            .collect();
        let available = found.len();
        let chosen: Vec<usize> = if available <= cap {
            (0..available).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(word_seed(seed, &word));
            let mut idx = sample(&mut rng, available, cap).into_vec();
            idx.sort_unstable();
            idx
        };
        if available == 0 {
            log::warn!("anchor word {word:?} does not occur in the corpus");
        }
        counts.insert(word.clone(), WordCount { label, available, sampled: chosen.len() });
        entries.extend(chosen.into_iter().map(|i| (word.clone(), label, found[i].clone())));
    }
    OccurrenceSample { entries, counts }
}

/// Embeds every sampled occurrence. Each chunk is run through the model once.
pub fn embed_occurrences(
    checkpoint: &Checkpoint,
    index: &CorpusIndex,
    sample: &OccurrenceSample,
) -> Result<Vec<LabeledEmbedding>, EmbedError> {
    let mut by_chunk: BTreeMap<(usize, usize), Vec<(usize, Range<usize>)>> = BTreeMap::new();
    for (i, (_, _, occ)) in sample.entries.iter().enumerate() {
        let (c, local) = index.locate(occ).ok_or_else(|| EmbedError::SpanOutOfRange {
            start: occ.span.start,
            end: occ.span.end,
            len: index.documents[occ.doc].encoding.ids.len(),
        })?;
        by_chunk.entry((occ.doc, c)).or_default().push((i, local));
    }
    let groups: Vec<_> = by_chunk.into_iter().collect();
    let vectors: Vec<Vec<(usize, Array1<f64>)>> = groups
        .par_iter()
        .map(|((doc, c), members)| {
            let hidden = forward_hidden_states(checkpoint, &frame(&index.chunks[*doc][*c]))?;
            members
                .iter()
                .map(|(i, local)| Ok((*i, mean_rows(&hidden, local.start + 1..local.end + 1)?)))
                .collect::<Result<Vec<_>, EmbedError>>()
        })
        .collect::<Result<_, _>>()?;
    let mut slots: Vec<Option<Array1<f64>>> = vec![None; sample.entries.len()];
    for (i, v) in vectors.into_iter().flatten() {
        slots[i] = Some(v);
    }
    Ok(sample
        .entries
        .iter()
        .zip(slots)
        .map(|((word, label, occ), v)| LabeledEmbedding {
            checkpoint: checkpoint.epoch,
            group: word.clone(),
            label: *label,
            doc_id: index.documents[occ.doc].id.clone(),
            token_offset: occ.span.start,
            vector: v.expect("every entry embedded").to_vec(),
        })
        .collect())
}

/// Samples occurrences and embeds them with `checkpoint`.
pub fn build_dataset(
    checkpoint: &Checkpoint,
    index: &CorpusIndex,
    lexicon: &AnchorLexicon,
    cap: usize,
    seed: u64,
) -> Result<(Vec<LabeledEmbedding>, OccurrenceSample), EmbedError> {
    let sample = sample_occurrences(index, lexicon, cap, seed);
    let data = embed_occurrences(checkpoint, index, &sample)?;
    Ok((data, sample))
}

/// CSV with header `checkpoint,group,label,doc_id,token_offset,x0,...`.
/// Floats use the shortest representation that parses back exactly.
pub fn write_dataset(path: &Path, data: &[LabeledEmbedding]) -> Result<(), EmbedError> {
    let mut w = csv::Writer::from_path(path)?;
    let d = data.first().map_or(0, |e| e.vector.len());
    let mut header: Vec<String> = ["checkpoint", "group", "label", "doc_id", "token_offset"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..d).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for e in data {
        let mut row = vec![
            e.checkpoint.to_string(),
            e.group.clone(),
            e.label.as_int().to_string(),
            e.doc_id.clone(),
            e.token_offset.to_string(),
        ];
        row.extend(e.vector.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabeledEmbedding>, EmbedError> {
    let mut r = csv::Reader::from_path(path)?;
    let bad = |m: String| EmbedError::MalformedDataset(m);
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() < 5 {
            return Err(bad(format!("row {line}: too few fields")));
        }
        let int = |i: usize| rec[i].parse::<usize>().map_err(|e| bad(format!("row {line}: {e}")));
        let label = match &rec[2] {
            "0" => Label::Female,
            "1" => Label::Male,
            other => return Err(bad(format!("row {line}: label {other:?}"))),
        };
        let vector = (5..rec.len())
            .map(|i| rec[i].parse::<f64>().map_err(|e| bad(format!("row {line}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(LabeledEmbedding {
            checkpoint: int(0)?,
            group: rec[1].to_string(),
            label,
            doc_id: rec[3].to_string(),
            token_offset: int(4)?,
            vector,
        });
    }
    Ok(out)
}

/// Per-word availability, as `word,label,available,sampled`.
pub fn write_counts(path: &Path, sample: &OccurrenceSample) -> Result<(), EmbedError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "word,label,available,sampled")?;
    for (word, c) in &sample.counts {
        writeln!(f, "{word},{},{},{}", c.label, c.available, c.sampled)?;
    }
    Ok(())
}
