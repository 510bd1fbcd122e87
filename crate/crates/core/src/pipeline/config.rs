use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::corpus::{SyntheticCorpusSpec, SyntheticProfession, VocabParams};
use crate::embed::{AnchorLexicon, Label};
use crate::subspace::SvmParams;
use crate::templates::AttributeTerm;

/// Whole-run configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub corpus: CorpusSettings,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub training: TrainingSettings,
    #[serde(default)]
    pub subspace: SubspaceSettings,
    #[serde(default)]
    pub lexicons: LexiconPaths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSettings {
    /// Directory of plain-text documents, one per file.
    pub dir: Option<PathBuf>,
    /// Generate a corpus instead; takes precedence over `dir`.
    pub synthetic: Option<SyntheticSettings>,
    pub split: [f64; 3],
    /// Tokens shared by consecutive chunks.
    pub stride: usize,
    pub max_vocab: usize,
    pub min_freq: u64,
    pub charset_limit: usize,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        let v = VocabParams::default();
        Self {
            dir: None,
            synthetic: None,
            split: [0.8, 0.1, 0.1],
            stride: 16,
            max_vocab: v.max_vocab,
            min_freq: v.min_freq,
            charset_limit: v.charset_limit,
        }
    }
}

impl CorpusSettings {
    pub fn vocab_params(&self) -> VocabParams {
        VocabParams { max_vocab: self.max_vocab, min_freq: self.min_freq, charset_limit: self.charset_limit }
    }
}

/// Synthetic corpus built from the anchor and attribute lexicons. Each
/// profession appears with an anchor of its stereotyped gender with
/// probability `stereotype_strength`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSettings {
    pub sentences: usize,
    pub sentences_per_doc: usize,
    pub stereotype_strength: f64,
    pub suffix_probability: f64,
    pub profession_rate: f64,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        Self {
            sentences: 12_000,
            sentences_per_doc: 1,
            stereotype_strength: 0.9,
            suffix_probability: 0.25,
            profession_rate: 0.7,
        }
    }
}

impl SyntheticSettings {
    pub fn to_spec(&self, anchors: &AnchorLexicon, attributes: &[AttributeTerm], seed: u64) -> SyntheticCorpusSpec {
        let professions = attributes
            .iter()
            .map(|a| SyntheticProfession {
                neutral: a.neutral.clone(),
                female_form: Some(a.female.clone()),
                p_male: match a.stereotype() {
                    Label::Male => self.stereotype_strength,
                    Label::Female => 1.0 - self.stereotype_strength,
                },
            })
            .collect();
        SyntheticCorpusSpec {
            male_words: anchors.words_with(Label::Male),
            female_words: anchors.words_with(Label::Female),
            professions,
            suffix_probability: self.suffix_probability,
            profession_rate: self.profession_rate,
            sentences: self.sentences,
            sentences_per_doc: self.sentences_per_doc,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    /// Sequence length including `[CLS]` and `[SEP]`.
    pub max_len: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self { num_layers: 2, hidden_dim: 64, num_heads: 4, ffn_dim: 256, max_len: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSettings {
    pub epochs: usize,
    pub checkpoint_every: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self { epochs: 30, checkpoint_every: 2, batch_size: 16, learning_rate: 1e-3, warmup_fraction: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubspaceSettings {
    pub folds: usize,
    /// Occurrences sampled per anchor word.
    pub cap: usize,
    pub c: f64,
    pub tol: f64,
    pub max_epochs: usize,
    pub clusters: usize,
    pub top_dimensions: usize,
    /// Checkpoint used for template evaluation; the last one when unset.
    pub evaluate_epoch: Option<usize>,
}

impl Default for SubspaceSettings {
    fn default() -> Self {
        let svm = SvmParams::default();
        Self {
            folds: crate::subspace::DEFAULT_FOLDS,
            cap: 200,
            c: svm.c,
            tol: svm.tol,
            max_epochs: svm.max_epochs,
            clusters: 30,
            top_dimensions: 5,
            evaluate_epoch: None,
        }
    }
}

impl SubspaceSettings {
    pub fn svm_params(&self) -> SvmParams {
        SvmParams { c: self.c, tol: self.tol, max_epochs: self.max_epochs }
    }
}

/// Lexicon files; the bundled Dutch lexicons are used for any left unset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LexiconPaths {
    pub anchors: Option<PathBuf>,
    pub exclusions: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
}

impl RunConfig {
    /// Parses TOML; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut config: RunConfig = toml::from_str(text)?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.output_dir);
        for p in [
            config.corpus.dir.as_mut(),
            config.lexicons.anchors.as_mut(),
            config.lexicons.exclusions.as_mut(),
            config.lexicons.targets.as_mut(),
            config.lexicons.attributes.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        Ok(config)
    }

    /// Reads a config file; relative paths are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Synthetic corpus with the default model and training settings.
    pub fn synthetic_demo(output_dir: PathBuf) -> Self {
        Self {
            output_dir,
            seed: 1,
            corpus: CorpusSettings { synthetic: Some(SyntheticSettings::default()), ..Default::default() },
            model: ModelSettings::default(),
            training: TrainingSettings::default(),
            subspace: SubspaceSettings::default(),
            lexicons: LexiconPaths::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: &str| Err(PipelineError::Config(m.into()));
        if self.corpus.dir.is_none() && self.corpus.synthetic.is_none() {
            return err("corpus needs `dir` or `synthetic`");
        }
        if self.model.max_len < 3 {
            return err("model.max_len must be at least 3");
        }
        if self.corpus.stride >= self.model.max_len - 2 {
            return err("corpus.stride must be smaller than model.max_len - 2");
        }
        if self.training.epochs == 0 {
            return err("training.epochs must be positive");
        }
        if self.subspace.folds < 2 {
            return err("subspace.folds must be at least 2");
        }
        if let Some(s) = &self.corpus.synthetic {
            if !(0.0..=1.0).contains(&s.stereotype_strength) {
                return err("corpus.synthetic.stereotype_strength must be in [0, 1]");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_uses_defaults_and_resolves_paths() {
        let c = RunConfig::from_toml("output_dir = \"out\"\n[corpus]\ndir = \"docs\"\n", Path::new("/base")).unwrap();
        assert_eq!(c.output_dir, PathBuf::from("/base/out"));
        assert_eq!(c.corpus.dir, Some(PathBuf::from("/base/docs")));
        assert_eq!(c.model, ModelSettings::default());
        assert_eq!(c.subspace.folds, 5);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("output_dir = \"o\"\ncolour = 1\n[corpus]\n", Path::new(".")).is_err());
    }

    #[test]
    fn demo_config_round_trips_through_toml() {
        let c = RunConfig::synthetic_demo(PathBuf::from("/tmp/run"));
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_toml(&text, Path::new("/")).unwrap(), c);
    }

    #[test]
    fn stereotype_strength_sets_co_occurrence() {
        let attrs = [
            AttributeTerm { neutral: "a".into(), female: "as".into(), pct_women: 0.2, gloss: String::new() },
            AttributeTerm { neutral: "b".into(), female: "bs".into(), pct_women: 0.8, gloss: String::new() },
        ];
        let spec = SyntheticSettings::default().to_spec(&AnchorLexicon::bundled(), &attrs, 3);
        assert_eq!(spec.professions[0].p_male, 0.9);
        assert!((spec.professions[1].p_male - 0.1).abs() < 1e-15);
    }
}
