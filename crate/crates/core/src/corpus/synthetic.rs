//! Synthetic corpora with controlled gender statistics.
//!
//! Every sentence has one gender side. Anchor sentences carry an anchor word
//! with an agreeing pronoun or possessive. A profession sentence is male with
//! probability `p_male`: the profession either appears beside an anchor of
//! that gender or is itself referred to by a pronoun of that gender. In
//! female contexts the profession may surface in its female-marked form.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Document};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfession {
    pub neutral: String,
    #[serde(default)]
    pub female_form: Option<String>,
    /// Probability that a sentence mentioning this profession is a male context.
    pub p_male: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub male_words: Vec<String>,
    pub female_words: Vec<String>,
    pub professions: Vec<SyntheticProfession>,
    /// Probability that a female-context profession uses its female form.
    #[serde(default)]
    pub suffix_probability: f64,
    /// Fraction of sentences that mention a profession.
    #[serde(default = "default_profession_rate")]
    pub profession_rate: f64,
    pub sentences: usize,
    #[serde(default = "default_sentences_per_doc")]
    pub sentences_per_doc: usize,
    pub seed: u64,
}

fn default_profession_rate() -> f64 {
    0.5
}

fn default_sentences_per_doc() -> usize {
    20
}

const PROFESSION_TEMPLATES: &[&str] = &[
    "De {a} is een {p}.",
    "De {a} werkt als {p} en {pr} is blij.",
    "{Pr} zegt dat de {a} een goede {p} is.",
    "De {a} wil {p} worden omdat {pr} dat leuk vindt.",
    "De {p} zegt dat {pr} {adj} is.",
    "De {p} pakt {poss} {obj} en {pr} loopt weg.",
];

const ANCHOR_TEMPLATES: &[&str] = &[
    "De {a} zegt dat {pr} {adj} is.",
    "De {a} ziet {poss} {obj} in de tuin.",
    "{Pr} is de {a} van {poss} familie.",
    "De {a} pakt {poss} {obj} en {pr} loopt weg.",
    "Gisteren was de {a} {adj} want {pr} had {poss} {obj} niet.",
    "{Pr} is een {a}.",
    "Iedereen zegt dat {pr} een goede {a} is.",
];

const ADJECTIVES: &[&str] = &["moe", "blij", "ziek", "boos", "klaar", "stil", "druk"];
const OBJECTS: &[&str] = &["fiets", "boek", "tas", "hond", "jas", "auto", "krant"];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Male,
    Female,
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if self.male_words.is_empty() || self.female_words.is_empty() {
            return Err(CorpusError::InvalidParameter(
                "synthetic spec needs male and female words".into(),
            ));
        }
        if !prob_ok(self.suffix_probability) || !prob_ok(self.profession_rate) {
            return Err(CorpusError::InvalidParameter(
                "synthetic probabilities must be in [0, 1]".into(),
            ));
        }
        if let Some(p) = self.professions.iter().find(|p| !prob_ok(p.p_male)) {
            return Err(CorpusError::InvalidParameter(format!(
                "p_male {} for {:?} outside [0, 1]",
                p.p_male, p.neutral
            )));
        }
        if self.sentences_per_doc == 0 {
            return Err(CorpusError::InvalidParameter("sentences_per_doc must be positive".into()));
        }
        Ok(())
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn fill(template: &str, anchor: &str, profession: &str, side: Side, rng: &mut ChaCha8Rng) -> String {
    let (pr, poss) = match side {
        Side::Male => ("hij", "zijn"),
        Side::Female => ("zij", "haar"),
    };
    let adj = ADJECTIVES.choose(rng).copied().unwrap_or("moe");
    let obj = OBJECTS.choose(rng).copied().unwrap_or("boek");
    template
        .replace("{a}", anchor)
        .replace("{p}", profession)
        .replace("{Pr}", &capitalize(pr))
        .replace("{pr}", pr)
        .replace("{poss}", poss)
        .replace("{adj}", adj)
        .replace("{obj}", obj)
}

/// Generates `spec.sentences` sentences grouped into documents of
/// `spec.sentences_per_doc`. The output depends only on `spec`.
pub fn generate_synthetic(spec: &SyntheticCorpusSpec) -> Result<Vec<Document>, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sentences = Vec::with_capacity(spec.sentences);
    for _ in 0..spec.sentences {
        let profession = if !spec.professions.is_empty() && rng.random_bool(spec.profession_rate) {
            spec.professions.choose(&mut rng)
        } else {
            None
        };
        let sentence = match profession {
            Some(prof) => {
                let side = if rng.random_bool(prof.p_male) { Side::Male } else { Side::Female };
                let surface = match (&prof.female_form, side) {
                    (Some(female), Side::Female) if rng.random_bool(spec.suffix_probability) => female,
                    _ => &prof.neutral,
                };
                let template = PROFESSION_TEMPLATES.choose(&mut rng).copied().unwrap_or_default();
                let anchor = pick_anchor(spec, side, &mut rng);
                fill(template, &anchor, surface, side, &mut rng)
            }
            None => {
                let side = if rng.random_bool(0.5) { Side::Male } else { Side::Female };
                let template = ANCHOR_TEMPLATES.choose(&mut rng).copied().unwrap_or_default();
                let anchor = pick_anchor(spec, side, &mut rng);
                fill(template, &anchor, "", side, &mut rng)
            }
        };
        sentences.push(sentence);
    }
    let width = (sentences.len().max(1) as f64).log10() as usize + 1;
    sentences
        .chunks(spec.sentences_per_doc)
        .enumerate()
        .map(|(i, group)| Document::new(format!("synth_{i:0width$}"), group.join(" ")))
        .collect()
}

fn pick_anchor(spec: &SyntheticCorpusSpec, side: Side, rng: &mut ChaCha8Rng) -> String {
    let words = match side {
        Side::Male => &spec.male_words,
        Side::Female => &spec.female_words,
    };
    words.choose(rng).cloned().unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::segment_sentences;

    fn spec(p_male: f64, sentences: usize) -> SyntheticCorpusSpec {
        SyntheticCorpusSpec {
            male_words: vec!["man".into(), "vader".into()],
            female_words: vec!["vrouw".into(), "moeder".into()],
            professions: vec![SyntheticProfession {
                neutral: "kapper".into(),
                female_form: Some("kapster".into()),
                p_male,
            }],
            suffix_probability: 0.0,
            profession_rate: 0.5,
            sentences,
            sentences_per_doc: 10,
            seed: 9,
        }
    }

    fn profession_sentences(docs: &[Document]) -> Vec<String> {
        docs.iter()
            .flat_map(|d| segment_sentences(&d.text).into_iter().map(str::to_string).collect::<Vec<_>>())
            .filter(|s| s.contains("kapper") || s.contains("kapster"))
            .collect()
    }

    fn has_word(sentence: &str, word: &str) -> bool {
        crate::corpus::pre_tokenize(sentence).iter().any(|w| w == word)
    }

    fn male_context(s: &str) -> bool {
        ["man", "vader", "hij", "zijn"].iter().any(|w| has_word(s, w))
    }

    fn female_context(s: &str) -> bool {
        ["vrouw", "moeder", "zij", "haar"].iter().any(|w| has_word(s, w))
    }

    #[test]
    fn certain_male_profession_is_always_in_male_context() {
        let docs = generate_synthetic(&spec(1.0, 2_000)).unwrap();
        let sents = profession_sentences(&docs);
        assert!(!sents.is_empty());
        for s in sents {
            assert!(male_context(&s) && !female_context(&s), "{s}");
        }
    }

    #[test]
    fn professions_also_appear_as_pronoun_referents() {
        let docs = generate_synthetic(&spec(0.5, 2_000)).unwrap();
        let without_anchor = profession_sentences(&docs)
            .iter()
            .filter(|s| !["man", "vader", "vrouw", "moeder"].iter().any(|w| has_word(s, w)))
            .count();
        assert!(without_anchor > 0);
    }

    #[test]
    fn realized_fraction_within_three_sigma() {
        // 10k sentences, ~5k mention the profession: 3 sigma ~ 0.021
        let docs = generate_synthetic(&spec(0.5, 10_000)).unwrap();
        let sents = profession_sentences(&docs);
        let male = sents.iter().filter(|s| male_context(s)).count();
        let frac = male as f64 / sents.len() as f64;
        assert!((0.47..=0.53).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn suffix_form_only_in_female_context() {
        let mut s = spec(0.5, 3_000);
        s.suffix_probability = 1.0;
        let docs = generate_synthetic(&s).unwrap();
        for sent in profession_sentences(&docs) {
            if has_word(&sent, "kapster") {
                assert!(female_context(&sent), "{sent}");
            } else {
                assert!(male_context(&sent), "{sent}");
            }
        }
    }

    #[test]
    fn seed_determines_output() {
        let a = generate_synthetic(&spec(0.3, 500)).unwrap();
        let b = generate_synthetic(&spec(0.3, 500)).unwrap();
        assert_eq!(a, b);
        let mut other = spec(0.3, 500);
        other.seed = 10;
        assert_ne!(a, generate_synthetic(&other).unwrap());
    }

    #[test]
    fn invalid_probability_rejected() {
        assert!(generate_synthetic(&spec(1.5, 10)).is_err());
    }

    #[test]
    fn sentences_are_segmentable() {
        let docs = generate_synthetic(&spec(0.5, 40)).unwrap();
        assert_eq!(docs.len(), 4);
        let n: usize = docs.iter().map(|d| segment_sentences(&d.text).len()).sum();
        assert_eq!(n, 40);
    }
}
