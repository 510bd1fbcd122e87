//! "[TARGET] is een [ATTRIBUTE]" probes scored against a gender direction.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenizerModel, CLS_ID, SEP_ID, UNK_ID};
use crate::embed::{mean_rows, EmbedError, Label};
use crate::model::{forward_hidden_states, Checkpoint, ModelError};
use crate::subspace::{GenderSubspace, SubspaceError};

const BUNDLED_TARGETS: &str = include_str!("../../data/targets.csv");
const BUNDLED_ATTRIBUTES: &str = include_str!("../../data/attributes.csv");

const PRONOUNS: [&str; 4] = ["hij", "zij", "hijzelf", "zijzelf"];

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("pct_women {value} for {word:?} outside [0, 1]")]
    PercentOutOfRange { word: String, value: f64 },
    #[error("duplicate lexicon entry {0:?}")]
    Duplicate(String),
    #[error("malformed lexicon: {0}")]
    Malformed(String),
    #[error("sentence {0:?} does not follow the template")]
    NotATemplate(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetTerm {
    pub surface: String,
    pub gender: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Pronoun,
    Noun,
}

impl TargetTerm {
    pub fn kind(&self) -> TargetKind {
        if PRONOUNS.contains(&self.surface.to_lowercase().as_str()) {
            TargetKind::Pronoun
        } else {
            TargetKind::Noun
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeTerm {
    pub neutral: String,
    pub female: String,
    pub pct_women: f64,
    #[serde(default)]
    pub gloss: String,
}

impl AttributeTerm {
    /// Female when strictly more than half of the workforce are women.
    pub fn stereotype(&self) -> Label {
        if self.pct_women > 0.5 {
            Label::Female
        } else {
            Label::Male
        }
    }

    pub fn surface(&self, form: AttributeForm) -> &str {
        match form {
            AttributeForm::Neutral => &self.neutral,
            AttributeForm::FemaleSuffix => &self.female,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeForm {
    Neutral,
    FemaleSuffix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    Pro,
    Anti,
}

macro_rules! text_enum {
    ($t:ty { $($v:ident => $s:literal),+ }) => {
        impl $t {
            pub fn as_str(self) -> &'static str {
                match self { $(Self::$v => $s),+ }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s { $($s => Ok(Self::$v),)+ other => Err(format!("unknown value {other:?}")) }
            }
        }
    };
}

text_enum!(AttributeForm { Neutral => "neutral", FemaleSuffix => "female_suffix" });
text_enum!(Alignment { Pro => "pro", Anti => "anti" });
text_enum!(TargetKind { Pronoun => "pronoun", Noun => "noun" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSentence {
    pub text: String,
    pub target: TargetTerm,
    pub attribute: AttributeTerm,
    pub form: AttributeForm,
    pub alignment: Alignment,
}

impl TemplateSentence {
    pub fn attribute_surface(&self) -> &str {
        self.attribute.surface(self.form)
    }
}

pub fn parse_targets(text: &str) -> Result<Vec<TargetTerm>, TemplateError> {
    #[derive(Deserialize)]
    struct Row {
        surface: String,
        gender: String,
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(text.as_bytes()).deserialize::<Row>() {
        let row = row?;
        let surface = row.surface.trim().to_string();
        let gender = Label::from_str(&row.gender).map_err(TemplateError::Malformed)?;
        if surface.is_empty() {
            return Err(TemplateError::Malformed("empty target".into()));
        }
        if !seen.insert(surface.clone()) {
            return Err(TemplateError::Duplicate(surface));
        }
        out.push(TargetTerm { surface, gender });
    }
    Ok(out)
}

pub fn parse_attributes(text: &str) -> Result<Vec<AttributeTerm>, TemplateError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(text.as_bytes()).deserialize::<AttributeTerm>() {
        let mut a = row?;
        a.neutral = a.neutral.trim().to_string();
        a.female = a.female.trim().to_string();
        if a.neutral.is_empty() || a.female.is_empty() {
            return Err(TemplateError::Malformed(format!("empty attribute form in {a:?}")));
        }
        if !(0.0..=1.0).contains(&a.pct_women) {
            return Err(TemplateError::PercentOutOfRange { word: a.neutral, value: a.pct_women });
        }
        for w in [&a.neutral, &a.female] {
            if !seen.insert(w.clone()) {
                return Err(TemplateError::Duplicate(w.clone()));
            }
        }
        out.push(a);
    }
    Ok(out)
}

/// Targets (`surface,gender`) and attributes (`neutral,female,pct_women,gloss`,
/// with `pct_women` as a fraction).
pub fn load_lexicons(targets: &Path, attributes: &Path) -> Result<(Vec<TargetTerm>, Vec<AttributeTerm>), TemplateError> {
    Ok((parse_targets(&std::fs::read_to_string(targets)?)?, parse_attributes(&std::fs::read_to_string(attributes)?)?))
}

pub fn bundled_lexicons() -> (Vec<TargetTerm>, Vec<AttributeTerm>) {
    (
        parse_targets(BUNDLED_TARGETS).expect("bundled targets are valid"),
        parse_attributes(BUNDLED_ATTRIBUTES).expect("bundled attributes are valid"),
    )
}

pub fn render(target: &str, attribute: &str) -> String {
    format!("{target} is een {attribute}.")
}

/// Every grammatical pairing: all targets with neutral forms, and female
/// targets with female-suffix forms.
pub fn generate_sentences(targets: &[TargetTerm], attributes: &[AttributeTerm]) -> Vec<TemplateSentence> {
    let mut out = Vec::new();
    for attribute in attributes {
        for form in [AttributeForm::Neutral, AttributeForm::FemaleSuffix] {
            for target in targets {
                if form == AttributeForm::FemaleSuffix && target.gender == Label::Male {
                    continue;
                }
                let alignment = if target.gender == attribute.stereotype() { Alignment::Pro } else { Alignment::Anti };
                out.push(TemplateSentence {
                    text: render(&target.surface, attribute.surface(form)),
                    target: target.clone(),
                    attribute: attribute.clone(),
                    form,
                    alignment,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalFlag {
    /// Every attribute piece is `[UNK]`.
    OutOfVocabulary,
    /// The framed sentence exceeds the model's `max_len`; not embedded.
    TooLong,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub sentence: TemplateSentence,
    pub attribute_vector: Vec<f64>,
    /// `<w, a>`.
    pub score: f64,
    /// `<w, a> + b`.
    pub score_with_intercept: f64,
    pub predicted: Label,
    pub correct: bool,
    pub flag: Option<EvalFlag>,
}

impl EvalRecord {
    pub fn counted(&self) -> bool {
        self.flag.is_none()
    }
}

/// Token ids of a template sentence framed for the model, and the span of the
/// attribute pieces in framed coordinates.
pub fn attribute_span(tokenizer: &TokenizerModel, text: &str) -> Result<(Vec<u32>, std::ops::Range<usize>), TemplateError> {
    let enc = tokenizer.tokenize(text);
    let pos = enc
        .words
        .windows(2)
        .position(|w| w[0] == "is" && w[1] == "een")
        .ok_or_else(|| TemplateError::NotATemplate(text.to_string()))?;
    let mut last = enc.words.len();
    while last > pos + 2 && enc.words[last - 1].chars().all(|c| !c.is_alphanumeric()) {
        last -= 1;
    }
    if last <= pos + 2 {
        return Err(TemplateError::NotATemplate(text.to_string()));
    }
    let span = enc.spans[pos + 2].start + 1..enc.spans[last - 1].end + 1;
    let mut ids = Vec::with_capacity(enc.ids.len() + 2);
    ids.push(CLS_ID);
    ids.extend_from_slice(&enc.ids);
    ids.push(SEP_ID);
    Ok((ids, span))
}

/// Embeds each sentence's attribute and classifies it by the sign of its
/// projection onto the gender direction.
pub fn evaluate(
    checkpoint: &Checkpoint,
    subspace: &GenderSubspace,
    tokenizer: &TokenizerModel,
    sentences: &[TemplateSentence],
) -> Result<Vec<EvalRecord>, TemplateError> {
    sentences
        .par_iter()
        .map(|s| {
            let (ids, span) = attribute_span(tokenizer, &s.text)?;
            if ids.len() > checkpoint.config.max_len {
                return Ok(EvalRecord {
                    score: f64::NAN,
                    score_with_intercept: f64::NAN,
                    predicted: Label::Female,
                    correct: false,
                    attribute_vector: Vec::new(),
                    flag: Some(EvalFlag::TooLong),
                    sentence: s.clone(),
                });
            }
            let flag = ids[span.clone()].iter().all(|&t| t == UNK_ID).then_some(EvalFlag::OutOfVocabulary);
            let hidden = forward_hidden_states(checkpoint, &ids)?;
            let vector = mean_rows(&hidden, span)?.to_vec();
            let score = subspace.gender_score(&vector)?;
            let predicted = Label::from_score(score);
            Ok(EvalRecord {
                score_with_intercept: score + subspace.intercept,
                correct: predicted == s.target.gender,
                predicted,
                score,
                attribute_vector: vector,
                flag,
                sentence: s.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facet {
    Alignment,
    TargetGender,
    Form,
    TargetKind,
}

impl Facet {
    pub fn name(self) -> &'static str {
        match self {
            Facet::Alignment => "alignment",
            Facet::TargetGender => "target_gender",
            Facet::Form => "form",
            Facet::TargetKind => "target_kind",
        }
    }

    pub fn values(self) -> &'static [&'static str] {
        match self {
            Facet::Alignment => &["pro", "anti"],
            Facet::TargetGender => &["male", "female"],
            Facet::Form => &["neutral", "female_suffix"],
            Facet::TargetKind => &["noun", "pronoun"],
        }
    }

    pub fn value_of(self, s: &TemplateSentence) -> &'static str {
        match self {
            Facet::Alignment => s.alignment.as_str(),
            Facet::TargetGender => match s.target.gender {
                Label::Male => "male",
                Label::Female => "female",
            },
            Facet::Form => s.form.as_str(),
            Facet::TargetKind => s.target.kind().as_str(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownRow {
    pub cell: Vec<(Facet, &'static str)>,
    pub n: usize,
    pub correct: usize,
    /// Records left out of `n` because they were flagged.
    pub excluded: usize,
}

impl BreakdownRow {
    /// `None` for an empty cell.
    pub fn accuracy(&self) -> Option<f64> {
        (self.n > 0).then(|| self.correct as f64 / self.n as f64)
    }

    pub fn label(&self) -> String {
        self.cell.iter().map(|(f, v)| format!("{}={v}", f.name())).collect::<Vec<_>>().join(";")
    }
}

/// One row per combination of facet values, including empty combinations.
pub fn accuracy_breakdown(records: &[EvalRecord], facets: &[Facet]) -> Vec<BreakdownRow> {
    let mut cells: Vec<Vec<(Facet, &'static str)>> = vec![Vec::new()];
    for &f in facets {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                f.values().iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((f, *v));
                    c
                })
            })
            .collect();
    }
    cells
        .into_iter()
        .map(|cell| {
            let members = records.iter().filter(|r| cell.iter().all(|(f, v)| f.value_of(&r.sentence) == *v));
            let (mut n, mut correct, mut excluded) = (0, 0, 0);
            for r in members {
                if r.counted() {
                    n += 1;
                    correct += usize::from(r.correct);
                } else {
                    excluded += 1;
                }
            }
            BreakdownRow { cell, n, correct, excluded }
        })
        .collect()
}

/// Accuracy over the counted records matching every `(facet, value)` pair.
pub fn cell_counts(records: &[EvalRecord], cell: &[(Facet, &str)]) -> (usize, usize) {
    records
        .iter()
        .filter(|r| r.counted() && cell.iter().all(|(f, v)| f.value_of(&r.sentence) == *v))
        .fold((0, 0), |(n, c), r| (n + 1, c + usize::from(r.correct)))
}

/// `sentence,target,target_gender,attribute,form,alignment,score,predicted,correct,flag,score_with_intercept`.
pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<(), TemplateError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "sentence",
        "target",
        "target_gender",
        "attribute",
        "form",
        "alignment",
        "score",
        "predicted",
        "correct",
        "flag",
        "score_with_intercept",
    ])?;
    for r in records {
        let s = &r.sentence;
        w.write_record([
            s.text.as_str(),
            s.target.surface.as_str(),
            &s.target.gender.to_string(),
            s.attribute_surface(),
            s.form.as_str(),
            s.alignment.as_str(),
            &r.score.to_string(),
            &r.predicted.to_string(),
            &r.correct.to_string(),
            match r.flag {
                Some(EvalFlag::OutOfVocabulary) => "oov",
                Some(EvalFlag::TooLong) => "too_long",
                None => "",
            },
            &r.score_with_intercept.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `cell,n,correct,excluded,accuracy`; empty cells leave `accuracy` blank.
pub fn write_breakdown(path: &Path, rows: &[BreakdownRow]) -> Result<(), TemplateError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell", "n", "correct", "excluded", "accuracy"])?;
    for r in rows {
        w.write_record([
            r.label(),
            r.n.to_string(),
            r.correct.to_string(),
            r.excluded.to_string(),
            r.accuracy().map_or_else(String::new, |a| a.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(neutral: &str, female: &str, pct: f64) -> AttributeTerm {
        AttributeTerm { neutral: neutral.into(), female: female.into(), pct_women: pct, gloss: String::new() }
    }

    fn target(s: &str, g: Label) -> TargetTerm {
        TargetTerm { surface: s.into(), gender: g }
    }

    #[test]
    fn stereotype_threshold_is_strict() {
        assert_eq!(attr("a", "b", 0.5).stereotype(), Label::Male);
        assert_eq!(attr("a", "b", 0.501).stereotype(), Label::Female);
    }

    #[test]
    fn bundled_lexicon_values() {
        let (targets, attributes) = bundled_lexicons();
        assert_eq!(attributes.len(), 46);
        let nurse = attributes.iter().find(|a| a.neutral == "verpleger").unwrap();
        assert_eq!(nurse.female, "verpleegster");
        assert!((nurse.pct_women - 0.87).abs() < 1e-12);
        assert_eq!(nurse.stereotype(), Label::Female);
        let metal = attributes.iter().find(|a| a.neutral == "metaalbewerker").unwrap();
        assert!((metal.pct_women - 0.032).abs() < 1e-12);
        assert_eq!(metal.stereotype(), Label::Male);
        assert_eq!(targets.iter().filter(|t| t.gender == Label::Male).count(), 28);
        assert_eq!(targets.iter().filter(|t| t.gender == Label::Female).count(), 26);
    }

    #[test]
    fn out_of_range_and_duplicates_rejected() {
        assert!(matches!(
            parse_attributes("neutral,female,pct_women,gloss\na,b,1.5,x\n"),
            Err(TemplateError::PercentOutOfRange { .. })
        ));
        assert!(matches!(
            parse_attributes("neutral,female,pct_women,gloss\na,b,0.5,x\na,c,0.2,y\n"),
            Err(TemplateError::Duplicate(_))
        ));
        assert!(matches!(parse_targets("surface,gender\nHij,male\nHij,male\n"), Err(TemplateError::Duplicate(_))));
        assert!(parse_targets("surface,gender\nHij,other\n").is_err());
    }

    #[test]
    fn two_targets_one_attribute_gives_three_sentences() {
        let s = generate_sentences(&[target("De man", Label::Male), target("De vrouw", Label::Female)], &[attr("kapper", "kapster", 0.8)]);
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].text, "De man is een kapper.");
        assert_eq!(s[0].alignment, Alignment::Anti);
        assert_eq!(s[1].alignment, Alignment::Pro);
        assert_eq!(s[2].text, "De vrouw is een kapster.");
        assert_eq!(s[2].form, AttributeForm::FemaleSuffix);
        assert!(!s.iter().any(|x| x.target.gender == Label::Male && x.form == AttributeForm::FemaleSuffix));
    }

    #[test]
    fn pronoun_targets_recognized() {
        assert_eq!(target("Hij", Label::Male).kind(), TargetKind::Pronoun);
        assert_eq!(target("Zijzelf", Label::Female).kind(), TargetKind::Pronoun);
        assert_eq!(target("De man", Label::Male).kind(), TargetKind::Noun);
    }

    #[test]
    fn enums_round_trip_through_text() {
        for f in [AttributeForm::Neutral, AttributeForm::FemaleSuffix] {
            assert_eq!(f.as_str().parse::<AttributeForm>().unwrap(), f);
        }
        assert!("x".parse::<Alignment>().is_err());
    }
}
