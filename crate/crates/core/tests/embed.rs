use std::collections::BTreeSet;

use biasprobe::corpus::{build_vocab, generate_synthetic, Document, SyntheticCorpusSpec, SyntheticProfession, VocabParams};
use biasprobe::embed::{
    embed_occurrences, extract_embedding, find_occurrences, read_dataset, sample_occurrences, write_dataset,
    AnchorLexicon, CorpusIndex, Label,
};
use biasprobe::model::{forward_hidden_states, frame, init_model, ModelConfig};

const PAIRS: &str = "male,female,gloss\nman,vrouw,\nvader,moeder,\nkoning,koningin,\n";

fn documents() -> Vec<Document> {
    let spec = SyntheticCorpusSpec {
        male_words: vec!["man".into(), "vader".into(), "koning".into()],
        female_words: vec!["vrouw".into(), "moeder".into(), "koningin".into()],
        professions: vec![SyntheticProfession { neutral: "bakker".into(), female_form: Some("bakkerin".into()), p_male: 0.8 }],
        suffix_probability: 0.5,
        profession_rate: 0.4,
        sentences: 400,
        sentences_per_doc: 8,
        seed: 3,
    };
    generate_synthetic(&spec).unwrap()
}

fn setup() -> (Vec<Document>, CorpusIndex, AnchorLexicon, biasprobe::model::Checkpoint) {
    let docs = documents();
    let tok = build_vocab(&docs, &VocabParams::default()).unwrap();
    let index = CorpusIndex::build(&tok, &docs, 30, 8).unwrap();
    let config =
        ModelConfig { num_layers: 1, hidden_dim: 16, num_heads: 2, ffn_dim: 32, max_len: 32, vocab_size: tok.vocab_size(), seed: 4 };
    let ckpt = init_model(&config).unwrap();
    (docs, index, AnchorLexicon::parse(PAIRS, "").unwrap(), ckpt)
}

/// Whole-word matches of `word` in the raw text, split on anything that is not
/// a letter or digit.
fn text_count(docs: &[Document], word: &str) -> usize {
    docs.iter()
        .map(|d| d.text.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|w| *w == word).count())
        .sum()
}

/// Neumaier-compensated column means.
fn compensated_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    (0..d)
        .map(|j| {
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for r in rows {
                let t = sum + r[j];
                comp += if sum.abs() >= r[j].abs() { (sum - t) + r[j] } else { (r[j] - t) + sum };
                sum = t;
            }
            (sum + comp) / rows.len() as f64
        })
        .collect()
}

#[test]
fn occurrences_match_text_counts() {
    let (docs, index, lexicon, _) = setup();
    for (word, _) in lexicon.words() {
        assert_eq!(find_occurrences(&index, &word).len(), text_count(&docs, &word), "{word}");
    }
    // "man" must not match inside other words.
    assert!(text_count(&docs, "man") > 0);
}

#[test]
fn dataset_size_is_sum_of_capped_counts() {
    let (docs, index, lexicon, _) = setup();
    for cap in [1, 5, 40, 10_000] {
        let sample = sample_occurrences(&index, &lexicon, cap, 7);
        let expected: usize = lexicon.words().iter().map(|(w, _)| text_count(&docs, w).min(cap)).sum();
        assert_eq!(sample.entries.len(), expected, "cap {cap}");
        for (word, count) in &sample.counts {
            assert_eq!(count.available, text_count(&docs, word));
            assert_eq!(count.sampled, count.available.min(cap));
        }
    }
}

#[test]
fn sampling_is_without_replacement_and_seeded() {
    let (_, index, lexicon, _) = setup();
    let a = sample_occurrences(&index, &lexicon, 10, 1);
    let b = sample_occurrences(&index, &lexicon, 10, 1);
    let c = sample_occurrences(&index, &lexicon, 10, 2);
    assert_eq!(a.entries, b.entries);
    assert_ne!(a.entries, c.entries);
    let distinct: BTreeSet<_> = a.entries.iter().map(|(w, _, o)| (w.clone(), o.doc, o.span.start)).collect();
    assert_eq!(distinct.len(), a.entries.len());
}

#[test]
fn embedding_is_compensated_mean_of_word_pieces() {
    let (_, index, lexicon, ckpt) = setup();
    let sample = sample_occurrences(&index, &lexicon, 6, 0);
    let data = embed_occurrences(&ckpt, &index, &sample).unwrap();
    assert_eq!(data.len(), sample.entries.len());
    for ((word, label, occ), e) in sample.entries.iter().zip(&data) {
        assert_eq!(&e.group, word);
        assert_eq!(e.label, *label);
        assert_eq!(lexicon.label(word), Some(*label));
        let (c, local) = index.locate(occ).unwrap();
        let chunk = &index.chunks[occ.doc][c];
        let hidden = forward_hidden_states(&ckpt, &frame(chunk)).unwrap();
        // Row 0 is [CLS].
        let rows: Vec<Vec<f64>> = (local.start + 1..local.end + 1).map(|r| hidden.row(r).to_vec()).collect();
        let oracle = compensated_mean(&rows);
        for (a, b) in e.vector.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(extract_embedding(&ckpt, chunk, local).unwrap().to_vec(), e.vector);
    }
}

#[test]
fn dataset_file_round_trips_exactly() {
    let (_, index, lexicon, ckpt) = setup();
    let data = embed_occurrences(&ckpt, &index, &sample_occurrences(&index, &lexicon, 4, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("epoch_000.csv");
    write_dataset(&path, &data).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), data);
    assert!(data.iter().any(|e| e.label == Label::Female) && data.iter().any(|e| e.label == Label::Male));
}
