//! Linear gender directions fitted on labeled anchor embeddings.

mod cluster;
mod svm;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{self, AnchorLexicon, CorpusIndex, EmbedError, Label, LabeledEmbedding};
use crate::model::Checkpoint;

pub use cluster::{cluster_recalls, kmeans_1d, RecallClustering};
pub use svm::{hinge_objective, train_svm, LinearSvm, SvmParams};

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum SubspaceError {
    #[error("dataset has only {0} labels; both classes are required")]
    SingleLabel(String),
    #[error("{groups} distinct groups cannot fill {folds} folds")]
    TooFewGroups { groups: usize, folds: usize },
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dimension {dimension} out of range for d = {d}")]
    NoSuchDimension { dimension: usize, d: usize },
    #[error("inconsistent dataset: {0}")]
    InvalidData(String),
    #[error("malformed subspace file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Design matrix with labels and cross-validation groups.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeData {
    pub checkpoint: usize,
    pub x: Array2<f64>,
    pub y: Vec<Label>,
    pub groups: Vec<String>,
}

impl ProbeData {
    pub fn new(checkpoint: usize, x: Array2<f64>, y: Vec<Label>, groups: Vec<String>) -> Result<Self, SubspaceError> {
        if x.nrows() != y.len() || y.len() != groups.len() {
            return Err(SubspaceError::InvalidData(format!(
                "{} rows, {} labels, {} groups",
                x.nrows(),
                y.len(),
                groups.len()
            )));
        }
        Ok(Self { checkpoint, x, y, groups })
    }

    pub fn from_embeddings(data: &[LabeledEmbedding]) -> Result<Self, SubspaceError> {
        let first = data.first().ok_or_else(|| SubspaceError::InvalidData("empty dataset".into()))?;
        let d = first.vector.len();
        let mut flat = Vec::with_capacity(data.len() * d);
        for e in data {
            if e.vector.len() != d {
                return Err(SubspaceError::DimensionMismatch { expected: d, got: e.vector.len() });
            }
            if e.checkpoint != first.checkpoint {
                return Err(SubspaceError::InvalidData("rows from several checkpoints".into()));
            }
            flat.extend_from_slice(&e.vector);
        }
        let x = Array2::from_shape_vec((data.len(), d), flat).expect("row-major shape");
        Self::new(
            first.checkpoint,
            x,
            data.iter().map(|e| e.label).collect(),
            data.iter().map(|e| e.group.clone()).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// The data with column `j` removed.
    pub fn without_column(&self, j: usize) -> Result<Self, SubspaceError> {
        self.check_dimension(j)?;
        let keep: Vec<usize> = (0..self.dim()).filter(|&c| c != j).collect();
        Ok(Self { x: self.x.select(Axis(1), &keep), ..self.clone() })
    }

    /// The data restricted to column `j`.
    pub fn column(&self, j: usize) -> Result<Self, SubspaceError> {
        self.check_dimension(j)?;
        Ok(Self { x: self.x.select(Axis(1), &[j]), ..self.clone() })
    }

    fn check_dimension(&self, j: usize) -> Result<(), SubspaceError> {
        if j >= self.dim() {
            return Err(SubspaceError::NoSuchDimension { dimension: j, d: self.dim() });
        }
        Ok(())
    }

    fn validate(&self, folds: usize) -> Result<(), SubspaceError> {
        let labels: BTreeSet<Label> = self.y.iter().copied().collect();
        if labels.len() < 2 {
            let only = labels.iter().next().map_or("no".to_string(), |l| l.to_string());
            return Err(SubspaceError::SingleLabel(only));
        }
        let groups: BTreeSet<&str> = self.groups.iter().map(String::as_str).collect();
        if groups.len() < folds {
            return Err(SubspaceError::TooFewGroups { groups: groups.len(), folds });
        }
        Ok(())
    }
}

/// Fold index per sample. Distinct groups are shuffled under `seed`, stably
/// ordered by label and dealt round-robin, so every group lands in exactly
/// one fold and each fold gets a near-equal share of each label. A group's
/// label is that of its first sample.
pub fn group_folds(groups: &[String], labels: &[Label], folds: usize, seed: u64) -> Result<Vec<usize>, SubspaceError> {
    let mut label_of: BTreeMap<&str, Label> = BTreeMap::new();
    for (g, y) in groups.iter().zip(labels) {
        label_of.entry(g.as_str()).or_insert(*y);
    }
    if folds == 0 || label_of.len() < folds {
        return Err(SubspaceError::TooFewGroups { groups: label_of.len(), folds });
    }
    let mut distinct: Vec<(&str, Label)> = label_of.into_iter().collect();
    distinct.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    distinct.sort_by_key(|(_, y)| y.as_int());
    let fold_of_group: BTreeMap<&str, usize> = distinct.iter().enumerate().map(|(i, (g, _))| (*g, i % folds)).collect();
    Ok(groups.iter().map(|g| fold_of_group[g.as_str()]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub fold_accuracies: Vec<f64>,
    /// Held-out prediction for every sample.
    pub predictions: Vec<Label>,
}

impl CrossValidation {
    pub fn accuracy(&self) -> f64 {
        mean(&self.fold_accuracies)
    }

    /// Fraction of `class` samples predicted as `class`, pooled over folds.
    pub fn recall(&self, y: &[Label], class: Label) -> f64 {
        let (hit, total) = y.iter().zip(&self.predictions).filter(|(t, _)| **t == class).fold((0, 0), |(h, n), (t, p)| {
            (h + usize::from(t == p), n + 1)
        });
        if total == 0 {
            f64::NAN
        } else {
            hit as f64 / total as f64
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn accuracy(svm: &LinearSvm, x: ArrayView2<f64>, y: &[Label]) -> f64 {
    let hits = x.rows().into_iter().zip(y).filter(|(r, l)| svm.predict(*r) == **l).count();
    hits as f64 / y.len() as f64
}

/// Trains on all folds but one and predicts the held-out fold, for every fold.
pub fn cross_validate(x: ArrayView2<f64>, y: &[Label], fold_of: &[usize], folds: usize, params: &SvmParams, seed: u64) -> CrossValidation {
    let per_fold: Vec<(Vec<usize>, Vec<Label>, f64)> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..y.len()).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| fold_of[i] == f).collect();
            let xt = x.select(Axis(0), &train);
            let yt: Vec<Label> = train.iter().map(|&i| y[i]).collect();
            let svm = train_svm(xt.view(), &yt, params, seed.wrapping_add(f as u64 + 1));
            let preds: Vec<Label> = test.iter().map(|&i| svm.predict(x.row(i))).collect();
            let hits = test.iter().zip(&preds).filter(|(&i, p)| y[i] == **p).count();
            let acc = if test.is_empty() { f64::NAN } else { hits as f64 / test.len() as f64 };
            (test, preds, acc)
        })
        .collect();
    let mut predictions = vec![Label::Female; y.len()];
    let mut fold_accuracies = Vec::with_capacity(folds);
    for (test, preds, acc) in per_fold {
        for (i, p) in test.into_iter().zip(preds) {
            predictions[i] = p;
        }
        fold_accuracies.push(acc);
    }
    CrossValidation { fold_accuracies, predictions }
}

/// The gender direction of one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderSubspace {
    pub checkpoint: usize,
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Mean of `fold_accuracies`.
    pub cv_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    pub train_accuracy: f64,
    pub recall_female: f64,
    pub recall_male: f64,
}

impl GenderSubspace {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `<w, x>`; the intercept is not included.
    pub fn gender_score(&self, x: &[f64]) -> Result<f64, SubspaceError> {
        if x.len() != self.weights.len() {
            return Err(SubspaceError::DimensionMismatch { expected: self.weights.len(), got: x.len() });
        }
        Ok(self.weights.iter().zip(x).map(|(w, v)| w * v).sum())
    }

    /// `<w, x> + b`.
    pub fn decision(&self, x: &[f64]) -> Result<f64, SubspaceError> {
        Ok(self.gender_score(x)? + self.intercept)
    }

    pub fn classify(&self, x: &[f64]) -> Result<Label, SubspaceError> {
        Ok(Label::from_score(self.gender_score(x)?))
    }
}

/// Group-aware cross-validated SVM plus a final fit on all samples.
pub fn fit_svm(data: &ProbeData, folds: usize, params: &SvmParams, seed: u64) -> Result<GenderSubspace, SubspaceError> {
    data.validate(folds)?;
    let fold_of = group_folds(&data.groups, &data.y, folds, seed)?;
    Ok(fit_with_folds(data, &fold_of, folds, params, seed))
}

fn fit_with_folds(data: &ProbeData, fold_of: &[usize], folds: usize, params: &SvmParams, seed: u64) -> GenderSubspace {
    let cv = cross_validate(data.x.view(), &data.y, fold_of, folds, params, seed);
    let full = train_svm(data.x.view(), &data.y, params, seed);
    GenderSubspace {
        checkpoint: data.checkpoint,
        train_accuracy: accuracy(&full, data.x.view(), &data.y),
        cv_accuracy: cv.accuracy(),
        recall_female: cv.recall(&data.y, Label::Female),
        recall_male: cv.recall(&data.y, Label::Male),
        fold_accuracies: cv.fold_accuracies,
        weights: full.weights,
        intercept: full.intercept,
    }
}

/// Refit without dimension `j`. The fold partition matches [`fit_svm`].
pub fn ablate_dimension(data: &ProbeData, j: usize, folds: usize, params: &SvmParams, seed: u64) -> Result<GenderSubspace, SubspaceError> {
    fit_svm(&data.without_column(j)?, folds, params, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionProbeResult {
    pub checkpoint: usize,
    pub dimension: usize,
    pub cv_accuracy: f64,
    pub recall_female: f64,
    pub recall_male: f64,
}

/// One single-coordinate SVM per dimension, all sharing one fold partition.
pub fn per_dimension_probe(data: &ProbeData, folds: usize, params: &SvmParams, seed: u64) -> Result<Vec<DimensionProbeResult>, SubspaceError> {
    data.validate(folds)?;
    let fold_of = group_folds(&data.groups, &data.y, folds, seed)?;
    Ok((0..data.dim())
        .into_par_iter()
        .map(|j| {
            let col = data.x.select(Axis(1), &[j]);
            let cv = cross_validate(col.view(), &data.y, &fold_of, folds, params, seed);
            DimensionProbeResult {
                checkpoint: data.checkpoint,
                dimension: j,
                cv_accuracy: cv.accuracy(),
                recall_female: cv.recall(&data.y, Label::Female),
                recall_male: cv.recall(&data.y, Label::Male),
            }
        })
        .collect())
}

/// Index of the highest-accuracy probe; ties go to the lower dimension.
pub fn best_dimension(probes: &[DimensionProbeResult]) -> Option<usize> {
    probes
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, p)| match best {
            Some((_, a)) if a >= p.cv_accuracy => best,
            _ => Some((i, p.cv_accuracy)),
        })
        .map(|(i, _)| probes[i].dimension)
}

#[derive(Debug)]
pub struct SweepEntry {
    pub checkpoint: usize,
    pub result: Result<GenderSubspace, SubspaceError>,
}

/// One subspace per checkpoint over the same sampled occurrences. A failing
/// checkpoint is reported in its entry and the sweep continues.
pub fn sweep_checkpoints<'a>(
    checkpoints: impl IntoIterator<Item = &'a Checkpoint>,
    index: &CorpusIndex,
    lexicon: &AnchorLexicon,
    cap: usize,
    folds: usize,
    params: &SvmParams,
    seed: u64,
) -> Vec<SweepEntry> {
    let sample = embed::sample_occurrences(index, lexicon, cap, seed);
    checkpoints
        .into_iter()
        .map(|ckpt| {
            let result = embed::embed_occurrences(ckpt, index, &sample)
                .map_err(SubspaceError::from)
                .and_then(|data| fit_svm(&ProbeData::from_embeddings(&data)?, folds, params, seed));
            if let Err(e) = &result {
                log::warn!("checkpoint {}: {e}", ckpt.epoch);
            }
            SweepEntry { checkpoint: ckpt.epoch, result }
        })
        .collect()
}

/// `checkpoint,intercept,w0,...` with one row per subspace.
pub fn write_subspaces(path: &Path, subspaces: &[GenderSubspace]) -> Result<(), SubspaceError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let d = subspaces.first().map_or(0, GenderSubspace::dim);
    write!(f, "checkpoint,intercept")?;
    for j in 0..d {
        write!(f, ",w{j}")?;
    }
    writeln!(f)?;
    for s in subspaces {
        write!(f, "{},{}", s.checkpoint, s.intercept)?;
        for w in &s.weights {
            write!(f, ",{w}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

/// Reads `(checkpoint, intercept, weights)` rows written by [`write_subspaces`].
pub fn read_subspaces(path: &Path) -> Result<Vec<(usize, f64, Vec<f64>)>, SubspaceError> {
    let text = std::fs::read_to_string(path)?;
    let bad = |line: usize, m: &str| SubspaceError::Malformed(format!("line {}: {m}", line + 1));
    let mut out = Vec::new();
    for (line, row) in text.lines().enumerate().skip(1) {
        let mut fields = row.split(',');
        let checkpoint = fields.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(line, "checkpoint"))?;
        let intercept = fields.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(line, "intercept"))?;
        let weights = fields.map(|v| v.parse::<f64>().map_err(|_| bad(line, "weight"))).collect::<Result<_, _>>()?;
        out.push((checkpoint, intercept, weights));
    }
    Ok(out)
}

pub fn write_probes(path: &Path, probes: &[DimensionProbeResult]) -> Result<(), SubspaceError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "checkpoint,dimension,cv_accuracy,recall_female,recall_male")?;
    for p in probes {
        writeln!(f, "{},{},{},{},{}", p.checkpoint, p.dimension, p.cv_accuracy, p.recall_female, p.recall_male)?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_clusters(path: &Path, clusterings: &[RecallClustering]) -> Result<(), SubspaceError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "class,dimension,cluster_id,cluster_mean_recall")?;
    for c in clusterings {
        for (j, &id) in c.assignments.iter().enumerate() {
            writeln!(f, "{},{j},{id},{}", c.class, c.cluster_means[id])?;
        }
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn groups(n: usize, per: usize) -> Vec<String> {
        (0..n * per).map(|i| format!("g{}", i / per)).collect()
    }

    #[test]
    fn folds_keep_groups_together() {
        let g = groups(12, 4);
        let y = vec![Label::Male; g.len()];
        let f = group_folds(&g, &y, 5, 3).unwrap();
        for i in 0..g.len() {
            for j in 0..g.len() {
                if g[i] == g[j] {
                    assert_eq!(f[i], f[j]);
                }
            }
        }
        let used: BTreeSet<usize> = f.iter().copied().collect();
        assert_eq!(used.len(), 5);
        assert!(matches!(group_folds(&groups(3, 2), &[Label::Female; 6], 5, 0), Err(SubspaceError::TooFewGroups { groups: 3, folds: 5 })));
    }

    #[test]
    fn folds_balance_labels() {
        let g = groups(20, 2);
        let y: Vec<Label> = (0..40).map(|i| if i < 16 { Label::Female } else { Label::Male }).collect();
        let f = group_folds(&g, &y, 4, 9).unwrap();
        for fold in 0..4 {
            let female = (0..40).filter(|&i| f[i] == fold && y[i] == Label::Female).count();
            assert_eq!(female, 4);
        }
    }

    #[test]
    fn separable_groups_give_perfect_cv() {
        let n = 20;
        let x = Array2::from_shape_fn((n * 3, 1), |(i, _)| if (i / 3) % 2 == 0 { -1.0 } else { 1.0 });
        let y = (0..n * 3).map(|i| if (i / 3) % 2 == 0 { Label::Female } else { Label::Male }).collect();
        let data = ProbeData::new(0, x, y, groups(n, 3)).unwrap();
        let s = fit_svm(&data, 5, &SvmParams::default(), 1).unwrap();
        assert_eq!(s.cv_accuracy, 1.0);
        assert!(s.weights[0] > 0.0);
        assert!((s.cv_accuracy - mean(&s.fold_accuracies)).abs() < 1e-15);
    }

    #[test]
    fn single_label_rejected() {
        let data = ProbeData::new(0, Array2::zeros((10, 2)), vec![Label::Male; 10], groups(10, 1)).unwrap();
        assert!(matches!(fit_svm(&data, 5, &SvmParams::default(), 0), Err(SubspaceError::SingleLabel(_))));
    }

    #[test]
    fn score_excludes_intercept_and_checks_dimension() {
        let s = GenderSubspace {
            checkpoint: 0,
            weights: vec![1.0, -2.0],
            intercept: 5.0,
            cv_accuracy: 1.0,
            fold_accuracies: vec![1.0],
            train_accuracy: 1.0,
            recall_female: 1.0,
            recall_male: 1.0,
        };
        assert_eq!(s.gender_score(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(s.classify(&[0.0, 0.0]).unwrap(), Label::Female);
        assert_eq!(s.decision(&[1.0, 1.0]).unwrap(), 4.0);
        assert!(s.gender_score(&[1.0]).is_err());
    }

    #[test]
    fn subspace_file_round_trips() {
        let s = GenderSubspace {
            checkpoint: 7,
            weights: vec![0.1 + 0.2, -3e-12],
            intercept: -0.5,
            cv_accuracy: 0.9,
            fold_accuracies: vec![0.9],
            train_accuracy: 0.95,
            recall_female: 0.9,
            recall_male: 0.9,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_subspaces(&p, std::slice::from_ref(&s)).unwrap();
        assert_eq!(read_subspaces(&p).unwrap(), vec![(7, -0.5, s.weights.clone())]);
    }
}
