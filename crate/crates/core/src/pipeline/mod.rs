//! Run configuration and the six stages of an end-to-end run.
//!
//! Every stage reads its inputs from, and writes its outputs to, a run
//! directory, so stages can be run separately in order:
//!
//! ```text
//! corpus/      documents/, vocab.txt, split.csv
//! checkpoints/ epoch_NNN.ckpt, training_log.csv
//! embeddings/  epoch_NNN.csv, occurrence_counts.csv
//! subspace/    subspaces.csv, probes.csv, clusters.csv, results.json
//! evaluation/  template_records.csv, breakdown.csv, significance.csv
//! report/      curves, tables and plots
//! manifest.json
//! ```

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{self, CorpusError, CorpusSplit, Document, TokenizerModel};
use crate::embed::{self, AnchorLexicon, CorpusIndex, EmbedError, Label};
use crate::model::{self, Checkpoint, ModelError};
use crate::report::{self, AblationSummary, AccuracyPoint, CheckpointEntry, ReportError, RunManifest};
use crate::stats::{self, StatsError};
use crate::subspace::{self, GenderSubspace, ProbeData, RecallClustering, SubspaceError};
use crate::templates::{self, Facet, TemplateError};

pub use config::{
    CorpusSettings, LexiconPaths, ModelSettings, RunConfig, SubspaceSettings, SyntheticSettings, TrainingSettings,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing input {path}; run the `{stage}` stage first")]
    MissingStage { stage: &'static str, path: PathBuf },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-stage seeds derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub corpus: u64,
    pub split: u64,
    pub init: u64,
    pub shuffle: u64,
    pub masking: u64,
    pub sampling: u64,
    pub svm: u64,
}

fn derive_seed(master: u64, stage: &str) -> u64 {
    let digest = Sha256::new().chain_update(master.to_le_bytes()).chain_update(stage.as_bytes()).finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

impl Seeds {
    pub fn derive(master: u64) -> Self {
        let s = |name| derive_seed(master, name);
        Self {
            corpus: s("corpus"),
            split: s("split"),
            init: s("init"),
            shuffle: s("shuffle"),
            masking: s("masking"),
            sampling: s("sampling"),
            svm: s("svm"),
        }
    }

    pub fn as_map(&self) -> BTreeMap<String, u64> {
        [
            ("corpus", self.corpus),
            ("split", self.split),
            ("init", self.init),
            ("shuffle", self.shuffle),
            ("masking", self.masking),
            ("sampling", self.sampling),
            ("svm", self.svm),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// File locations inside a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn documents(&self) -> PathBuf {
        self.root.join("corpus/documents")
    }
    pub fn vocab(&self) -> PathBuf {
        self.root.join("corpus/vocab.txt")
    }
    pub fn split(&self) -> PathBuf {
        self.root.join("corpus/split.csv")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn training_log(&self) -> PathBuf {
        self.root.join("checkpoints/training_log.csv")
    }
    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings")
    }
    pub fn subspace(&self) -> PathBuf {
        self.root.join("subspace")
    }
    pub fn evaluation(&self) -> PathBuf {
        self.root.join("evaluation")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

fn require(stage: &'static str, path: PathBuf) -> Result<PathBuf, PipelineError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingStage { stage, path })
    }
}

/// Empties `dir` (if present) and recreates it.
fn fresh_dir(dir: &Path) -> Result<(), PipelineError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// A prepared corpus: documents, vocabulary, chunk index and split.
pub struct CorpusState {
    pub documents: Vec<Document>,
    pub tokenizer: TokenizerModel,
    pub index: CorpusIndex,
    pub split: CorpusSplit,
}

/// SHA-256 over document ids and texts in order.
pub fn corpus_fingerprint(docs: &[Document]) -> String {
    let mut h = Sha256::new();
    for d in docs {
        h.update((d.id.len() as u64).to_le_bytes());
        h.update(d.id.as_bytes());
        h.update((d.text.len() as u64).to_le_bytes());
        h.update(d.text.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Everything a stage learned about one checkpoint's anchor embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointAnalysis {
    pub subspace: GenderSubspace,
    pub probes: Vec<subspace::DimensionProbeResult>,
    pub ablation: AblationSummary,
    pub clusters: Vec<RecallClustering>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSummary {
    pub documents: usize,
    pub vocab_size: usize,
    pub chunks: usize,
    pub proportions: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub checkpoints: Vec<usize>,
    pub diverged_at: Option<usize>,
}

/// A configured run with its derived seeds.
pub struct Pipeline {
    pub config: RunConfig,
    pub seeds: Seeds,
    pub layout: Layout,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let seeds = Seeds::derive(config.seed);
        let layout = Layout { root: config.output_dir.clone() };
        Ok(Self { config, seeds, layout })
    }

    pub fn anchor_lexicon(&self) -> Result<AnchorLexicon, PipelineError> {
        let paths = &self.config.lexicons;
        Ok(match &paths.anchors {
            Some(p) => AnchorLexicon::load(p, paths.exclusions.as_deref())?,
            None => AnchorLexicon::bundled(),
        })
    }

    pub fn template_lexicons(&self) -> Result<(Vec<templates::TargetTerm>, Vec<templates::AttributeTerm>), PipelineError> {
        let paths = &self.config.lexicons;
        Ok(match (&paths.targets, &paths.attributes) {
            (None, None) => templates::bundled_lexicons(),
            (t, a) => {
                let (bt, ba) = templates::bundled_lexicons();
                let targets = match t {
                    Some(p) => templates::parse_targets(&std::fs::read_to_string(p)?)?,
                    None => bt,
                };
                let attributes = match a {
                    Some(p) => templates::parse_attributes(&std::fs::read_to_string(p)?)?,
                    None => ba,
                };
                (targets, attributes)
            }
        })
    }

    /// Source documents: generated when the config asks for a synthetic
    /// corpus, otherwise read from the configured directory.
    pub fn source_documents(&self) -> Result<Vec<Document>, PipelineError> {
        let c = &self.config.corpus;
        match (&c.synthetic, &c.dir) {
            (Some(s), _) => {
                let (_, attributes) = self.template_lexicons()?;
                let spec = s.to_spec(&self.anchor_lexicon()?, &attributes, self.seeds.corpus);
                Ok(corpus::generate_synthetic(&spec)?)
            }
            (None, Some(dir)) => Ok(corpus::load_documents(dir)?),
            (None, None) => Err(PipelineError::Config("corpus needs `dir` or `synthetic`".into())),
        }
    }

    fn chunk_len(&self) -> usize {
        self.config.model.max_len - 2
    }

    /// Stage 1: documents, vocabulary and split.
    pub fn corpus(&self) -> Result<CorpusSummary, PipelineError> {
        let docs = self.source_documents()?;
        fresh_dir(&self.layout.documents())?;
        corpus::write_documents(&self.layout.documents(), &docs)?;
        let tokenizer = corpus::build_vocab(&docs, &self.config.corpus.vocab_params())?;
        tokenizer.save(&self.layout.vocab())?;
        let index = CorpusIndex::build(&tokenizer, &docs, self.chunk_len(), self.config.corpus.stride)?;
        let chunks: Vec<_> = index.chunks.iter().flatten().cloned().collect();
        let n_chunks = chunks.len();
        let split = corpus::split(chunks, self.config.corpus.split, self.seeds.split)?;
        split.write_manifest(&self.layout.split())?;
        log::info!(
            "corpus: {} documents, vocabulary {}, {} chunks, shares {:?}",
            docs.len(),
            tokenizer.vocab_size(),
            n_chunks,
            split.proportions
        );
        Ok(CorpusSummary {
            documents: docs.len(),
            vocab_size: tokenizer.vocab_size(),
            chunks: n_chunks,
            proportions: split.proportions,
        })
    }

    /// Reloads the corpus stage outputs.
    pub fn load_corpus(&self) -> Result<CorpusState, PipelineError> {
        let documents = corpus::load_documents(&require("corpus", self.layout.documents())?)?;
        let tokenizer = TokenizerModel::load(&require("corpus", self.layout.vocab())?)?;
        let assignment = CorpusSplit::read_manifest(&require("corpus", self.layout.split())?)?;
        let index = CorpusIndex::build(&tokenizer, &documents, self.chunk_len(), self.config.corpus.stride)?;
        let chunks = index.chunks.iter().flatten().cloned().collect();
        let split = CorpusSplit::from_assignment(chunks, assignment, self.config.corpus.split)?;
        Ok(CorpusState { documents, tokenizer, index, split })
    }

    pub fn model_config(&self, vocab_size: usize) -> model::ModelConfig {
        let m = &self.config.model;
        model::ModelConfig {
            num_layers: m.num_layers,
            hidden_dim: m.hidden_dim,
            num_heads: m.num_heads,
            ffn_dim: m.ffn_dim,
            max_len: m.max_len,
            vocab_size,
            seed: self.seeds.init,
        }
    }

    /// Stage 2: masked-language-model training with checkpoints.
    pub fn train(&self) -> Result<TrainSummary, PipelineError> {
        let state = self.load_corpus()?;
        let config = self.model_config(state.tokenizer.vocab_size());
        let t = &self.config.training;
        let policy = model::MaskingPolicy { seed: self.seeds.masking, ..Default::default() };
        let options = model::TrainOptions {
            epochs: t.epochs,
            checkpoint_every: t.checkpoint_every,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            warmup_fraction: t.warmup_fraction,
            seed: self.seeds.shuffle,
        };
        let dir = self.layout.checkpoints();
        fresh_dir(&dir)?;
        let mut saved = Vec::new();
        let run = model::train::<PipelineError>(&state.split, &config, &policy, &options, |ckpt, entry| {
            ckpt.save(&dir.join(Checkpoint::file_name(ckpt.epoch)))?;
            saved.push(ckpt.epoch);
            log::info!("saved checkpoint {} (train {:.4}, val {:.4})", ckpt.epoch, entry.train_loss, entry.val_loss);
            Ok(())
        })?;
        let mut log_text = String::from("epoch,train_loss,val_loss\n");
        for e in &run.log {
            log_text.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
        }
        std::fs::write(self.layout.training_log(), log_text)?;
        if let Some(epoch) = run.diverged_at {
            log::error!("training diverged in epoch {epoch}; later stages use the checkpoints saved before it");
        }
        Ok(TrainSummary { checkpoints: saved, diverged_at: run.diverged_at })
    }

    /// Checkpoint files in epoch order.
    pub fn checkpoint_files(&self) -> Result<Vec<PathBuf>, PipelineError> {
        list_files(&require("train", self.layout.checkpoints())?, "ckpt")
    }

    /// Stage 3: anchor-word embeddings for every checkpoint. The same
    /// occurrences are used at every checkpoint.
    pub fn extract(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let state = self.load_corpus()?;
        let lexicon = self.anchor_lexicon()?;
        let files = self.checkpoint_files()?;
        let sample = embed::sample_occurrences(&state.index, &lexicon, self.config.subspace.cap, self.seeds.sampling);
        for word in sample.missing_words() {
            log::warn!("anchor word {word:?} does not occur in the corpus");
        }
        let dir = self.layout.embeddings();
        fresh_dir(&dir)?;
        embed::write_counts(&dir.join("occurrence_counts.csv"), &sample)?;
        let mut out = Vec::new();
        for file in files {
            let ckpt = Checkpoint::load(&file)?;
            let data = embed::embed_occurrences(&ckpt, &state.index, &sample)?;
            let path = dir.join(format!("epoch_{:03}.csv", ckpt.epoch));
            embed::write_dataset(&path, &data)?;
            log::info!("extracted {} embeddings at epoch {}", data.len(), ckpt.epoch);
            out.push(path);
        }
        Ok(out)
    }

    /// Full analysis of one checkpoint's dataset.
    pub fn analyze(&self, data: &ProbeData) -> Result<CheckpointAnalysis, PipelineError> {
        let s = &self.config.subspace;
        let params = s.svm_params();
        let fit = subspace::fit_svm(data, s.folds, &params, self.seeds.svm)?;
        let probes = subspace::per_dimension_probe(data, s.folds, &params, self.seeds.svm)?;
        let best = subspace::best_dimension(&probes).expect("at least one dimension");
        let ablation = if data.dim() > 1 {
            subspace::ablate_dimension(data, best, s.folds, &params, self.seeds.svm)?.cv_accuracy
        } else {
            f64::NAN
        };
        let ablation = AblationSummary {
            checkpoint: data.checkpoint,
            full: fit.cv_accuracy,
            best_dimension: best,
            best_only: probes[best].cv_accuracy,
            all_but_best: ablation,
        };
        let clusters = [Label::Female, Label::Male]
            .into_iter()
            .map(|class| subspace::cluster_recalls(&probes, class, s.clusters))
            .collect();
        Ok(CheckpointAnalysis { subspace: fit, probes, ablation, clusters })
    }

    /// Stage 4: gender subspaces, per-dimension probes, ablations and
    /// recall clusterings for every checkpoint.
    pub fn subspace(&self) -> Result<Vec<CheckpointAnalysis>, PipelineError> {
        let files = list_files(&require("extract", self.layout.embeddings())?, "csv")?;
        let files: Vec<_> = files.into_iter().filter(|f| file_stem(f).starts_with("epoch_")).collect();
        let mut results = Vec::new();
        for file in files {
            let data = ProbeData::from_embeddings(&embed::read_dataset(&file)?)?;
            let a = self.analyze(&data)?;
            log::info!(
                "epoch {}: cv accuracy {:.4}, best dimension {} ({:.4}), all but best {:.4}",
                data.checkpoint,
                a.subspace.cv_accuracy,
                a.ablation.best_dimension,
                a.ablation.best_only,
                a.ablation.all_but_best
            );
            results.push(a);
        }
        if results.is_empty() {
            return Err(PipelineError::MissingStage { stage: "extract", path: self.layout.embeddings() });
        }
        let dir = self.layout.subspace();
        fresh_dir(&dir)?;
        let subspaces: Vec<GenderSubspace> = results.iter().map(|a| a.subspace.clone()).collect();
        subspace::write_subspaces(&dir.join("subspaces.csv"), &subspaces)?;
        let probes: Vec<_> = results.iter().flat_map(|a| a.probes.iter().copied()).collect();
        subspace::write_probes(&dir.join("probes.csv"), &probes)?;
        let last = results.last().expect("non-empty");
        subspace::write_clusters(&dir.join("clusters.csv"), &last.clusters)?;
        let mut json = serde_json::to_string_pretty(&results)?;
        json.push('\n');
        std::fs::write(dir.join("results.json"), json)?;
        Ok(results)
    }

    pub fn load_analyses(&self) -> Result<Vec<CheckpointAnalysis>, PipelineError> {
        let path = require("subspace", self.layout.subspace().join("results.json"))?;
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// The checkpoint and subspace used for template evaluation.
    fn evaluation_target(&self) -> Result<(Checkpoint, GenderSubspace), PipelineError> {
        let analyses = self.load_analyses()?;
        let chosen = match self.config.subspace.evaluate_epoch {
            Some(e) => analyses
                .iter()
                .find(|a| a.subspace.checkpoint == e)
                .ok_or_else(|| PipelineError::Config(format!("no subspace for epoch {e}")))?,
            None => analyses.last().expect("results are never empty"),
        };
        let file = self.layout.checkpoints().join(Checkpoint::file_name(chosen.subspace.checkpoint));
        Ok((Checkpoint::load(&require("train", file)?)?, chosen.subspace.clone()))
    }

    /// Stage 5: template sentences scored against a gender subspace.
    pub fn evaluate(&self) -> Result<Vec<stats::ContrastResult>, PipelineError> {
        let (ckpt, fit) = self.evaluation_target()?;
        let tokenizer = TokenizerModel::load(&require("corpus", self.layout.vocab())?)?;
        let (targets, attributes) = self.template_lexicons()?;
        let sentences = templates::generate_sentences(&targets, &attributes);
        log::info!("evaluating {} template sentences at epoch {}", sentences.len(), ckpt.epoch);
        let records = templates::evaluate(&ckpt, &fit, &tokenizer, &sentences)?;
        let excluded = records.iter().filter(|r| !r.counted()).count();
        if excluded > 0 {
            log::warn!("{excluded} template records excluded (out of vocabulary or too long)");
        }
        let dir = self.layout.evaluation();
        fresh_dir(&dir)?;
        templates::write_records(&dir.join("template_records.csv"), &records)?;
        let facet_sets: [&[Facet]; 5] = [
            &[Facet::Alignment],
            &[Facet::TargetGender],
            &[Facet::TargetGender, Facet::Alignment],
            &[Facet::TargetGender, Facet::Alignment, Facet::Form],
            &[Facet::TargetKind, Facet::Alignment],
        ];
        let rows: Vec<_> = facet_sets.iter().flat_map(|f| templates::accuracy_breakdown(&records, f)).collect();
        templates::write_breakdown(&dir.join("breakdown.csv"), &rows)?;
        let table = stats::significance_table(&records);
        stats::write_significance(&dir.join("significance.csv"), &table)?;
        Ok(table)
    }

    /// Stage 6: report files and the run manifest.
    pub fn report(&self) -> Result<RunManifest, PipelineError> {
        let analyses = self.load_analyses()?;
        let significance = stats::read_significance(&require("evaluate", self.layout.evaluation().join("significance.csv"))?)?;
        let dir = self.layout.report();
        fresh_dir(&dir)?;
        let points: Vec<AccuracyPoint> = analyses.iter().map(|a| AccuracyPoint::from(&a.subspace)).collect();
        report::emit_accuracy_curve(&dir, &points)?;
        let last = analyses.last().expect("results are never empty");
        let ablations: Vec<_> = analyses.iter().map(|a| a.ablation).collect();
        report::emit_dimension_report(&dir, &last.probes, &ablations, self.config.subspace.top_dimensions)?;
        let clusterings: Vec<(usize, RecallClustering)> = analyses
            .iter()
            .flat_map(|a| a.clusters.iter().map(|c| (a.subspace.checkpoint, c.clone())))
            .collect();
        let spreads: Vec<_> = analyses
            .iter()
            .flat_map(|a| {
                [Label::Female, Label::Male].map(|class| report::recall_spread(a.subspace.checkpoint, class, &a.probes))
            })
            .collect();
        report::emit_recall_heatmaps(&dir, &clusterings, &spreads)?;
        report::emit_bias_tables(&dir, &significance)?;

        let mut manifest = RunManifest {
            config_sha256: report::sha256_bytes(toml::to_string(&self.config).map_err(|e| PipelineError::Config(e.to_string()))?.as_bytes()),
            seeds: self.seeds.as_map(),
            corpus_fingerprint: corpus_fingerprint(&corpus::load_documents(&self.layout.documents())?),
            ..Default::default()
        };
        manifest.seeds.insert("master".into(), self.config.seed);
        for file in self.checkpoint_files()? {
            let ckpt = Checkpoint::load(&file)?;
            manifest.checkpoints.push(CheckpointEntry {
                epoch: ckpt.epoch,
                file: relative(&self.layout.root, &file),
                parameter_sha256: ckpt.parameter_checksum(),
            });
        }
        let manifest_path = self.layout.manifest();
        let files: Vec<PathBuf> = walk(&self.layout.root)?.into_iter().filter(|p| *p != manifest_path).collect();
        manifest.inventory(&self.layout.root, &files)?;
        manifest.write(&manifest_path)?;
        Ok(manifest)
    }

    /// All stages in order.
    pub fn run_all(&self) -> Result<RunManifest, PipelineError> {
        self.corpus()?;
        let trained = self.train()?;
        if trained.checkpoints.is_empty() {
            return Err(PipelineError::Model(ModelError::NoTrainingData));
        }
        self.extract()?;
        self.subspace()?;
        self.evaluate()?;
        self.report()
    }
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn relative(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

/// Files in `dir` with extension `ext`, sorted by name.
fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, PipelineError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    Ok(files)
}

/// Every file below `root`, sorted.
fn walk(root: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}
