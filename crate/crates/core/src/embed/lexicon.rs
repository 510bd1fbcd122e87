use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::Deserialize;

use super::EmbedError;
use crate::corpus::normalize;

const BUNDLED_ANCHORS: &str = include_str!("../../data/anchors.csv");
const BUNDLED_EXCLUSIONS: &str = include_str!("../../data/exclusions.txt");

/// Class label. Female is the negative class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Female,
    Male,
}

impl Label {
    pub fn as_int(self) -> u8 {
        match self {
            Label::Female => 0,
            Label::Male => 1,
        }
    }

    /// `-1` for female, `+1` for male.
    pub fn sign(self) -> f64 {
        match self {
            Label::Female => -1.0,
            Label::Male => 1.0,
        }
    }

    pub fn from_score(score: f64) -> Self {
        if score > 0.0 {
            Label::Male
        } else {
            Label::Female
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Female => "female",
            Label::Male => "male",
        })
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_lowercase().as_str() {
            "female" | "f" | "0" => Ok(Label::Female),
            "male" | "m" | "1" => Ok(Label::Male),
            other => Err(format!("unknown gender label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct AnchorPair {
    pub male: String,
    pub female: String,
    #[serde(default)]
    pub gloss: String,
}

/// Gendered word pairs used to label anchor occurrences.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorLexicon {
    pairs: Vec<AnchorPair>,
    exclusions: BTreeSet<String>,
    labels: BTreeMap<String, Label>,
}

impl AnchorLexicon {
    /// Words are normalized like corpus text. A word listed on both sides is
    /// an error; excluded words are dropped with a warning.
    pub fn new(pairs: Vec<AnchorPair>, exclusions: impl IntoIterator<Item = String>) -> Result<Self, EmbedError> {
        let exclusions: BTreeSet<String> = exclusions.into_iter().map(|w| normalize(w.trim())).collect();
        let mut labels = BTreeMap::new();
        let mut kept = Vec::new();
        for pair in pairs {
            let pair = AnchorPair { male: normalize(pair.male.trim()), female: normalize(pair.female.trim()), gloss: pair.gloss };
            if pair.male.is_empty() || pair.female.is_empty() {
                return Err(EmbedError::Lexicon(format!("empty word in pair {pair:?}")));
            }
            let mut excluded = false;
            for (word, label) in [(&pair.male, Label::Male), (&pair.female, Label::Female)] {
                if exclusions.contains(word) {
                    log::warn!("excluded form {word:?} removed from the anchor lexicon");
                    excluded = true;
                    continue;
                }
                if let Some(&prev) = labels.get(word) {
                    if prev != label {
                        return Err(EmbedError::Lexicon(format!("{word:?} is listed as both male and female")));
                    }
                }
                labels.insert(word.clone(), label);
            }
            if !excluded {
                kept.push(pair);
            }
        }
        Ok(Self { pairs: kept, exclusions, labels })
    }

    /// The bundled Dutch lexicon.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_ANCHORS, BUNDLED_EXCLUSIONS).expect("bundled lexicon is valid")
    }

    pub fn parse(pairs_csv: &str, exclusions: &str) -> Result<Self, EmbedError> {
        let pairs = csv::Reader::from_reader(pairs_csv.as_bytes())
            .deserialize()
            .collect::<Result<Vec<AnchorPair>, _>>()?;
        let excl = exclusions
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from);
        Self::new(pairs, excl)
    }

    pub fn load(pairs_path: &Path, exclusions_path: Option<&Path>) -> Result<Self, EmbedError> {
        let pairs = std::fs::read_to_string(pairs_path)?;
        let excl = match exclusions_path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::parse(&pairs, &excl)
    }

    /// Pairs with both words admitted.
    pub fn pairs(&self) -> &[AnchorPair] {
        &self.pairs
    }

    pub fn exclusions(&self) -> &BTreeSet<String> {
        &self.exclusions
    }

    pub fn label(&self, word: &str) -> Option<Label> {
        self.labels.get(&normalize(word)).copied()
    }

    /// Every admitted word with its label, sorted by word.
    pub fn words(&self) -> Vec<(String, Label)> {
        self.labels.iter().map(|(w, l)| (w.clone(), *l)).collect()
    }

    pub fn words_with(&self, label: Label) -> Vec<String> {
        self.labels.iter().filter(|(_, l)| **l == label).map(|(w, _)| w.clone()).collect()
    }
}
