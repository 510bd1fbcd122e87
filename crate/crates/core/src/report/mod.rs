//! CSV tables, SVG plots and the run manifest.
//!
//! Plots are drawn only from numbers that are also written to a CSV next to
//! them. Output depends only on the inputs, so re-emitting is byte-identical.

mod svg;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::Label;
use crate::stats::ContrastResult;
use crate::subspace::{DimensionProbeResult, GenderSubspace, RecallClustering};

pub use svg::{BarChart, Heatmap, LineChart};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("nothing to report: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, ReportError> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One point of the subspace-strength curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub checkpoint: usize,
    pub cv_accuracy: f64,
    pub train_accuracy: f64,
}

impl From<&GenderSubspace> for AccuracyPoint {
    fn from(s: &GenderSubspace) -> Self {
        Self { checkpoint: s.checkpoint, cv_accuracy: s.cv_accuracy, train_accuracy: s.train_accuracy }
    }
}

/// `accuracy_curve.csv` (`checkpoint,cv_accuracy,train_accuracy`) and
/// `accuracy_curve.svg`.
pub fn emit_accuracy_curve(dir: &Path, points: &[AccuracyPoint]) -> Result<Vec<PathBuf>, ReportError> {
    if points.is_empty() {
        return Err(ReportError::Empty("accuracy curve"));
    }
    let csv_path = dir.join("accuracy_curve.csv");
    let mut f = create(&csv_path)?;
    writeln!(f, "checkpoint,cv_accuracy,train_accuracy")?;
    for p in points {
        writeln!(f, "{},{},{}", p.checkpoint, p.cv_accuracy, p.train_accuracy)?;
    }
    f.flush()?;
    let chart = LineChart {
        title: "Gender subspace accuracy by epoch".into(),
        x_label: "epoch".into(),
        y_label: "accuracy".into(),
        series: vec![
            ("cv".into(), points.iter().map(|p| (p.checkpoint as f64, p.cv_accuracy)).collect()),
            ("train".into(), points.iter().map(|p| (p.checkpoint as f64, p.train_accuracy)).collect()),
        ],
        reference: Some(("chance".into(), 0.5)),
        y_range: (0.0, 1.0),
    };
    let svg_path = dir.join("accuracy_curve.svg");
    std::fs::write(&svg_path, chart.render())?;
    Ok(vec![csv_path, svg_path])
}

/// The `k` highest-accuracy probes, ties broken by dimension. `k` is clipped
/// to the number of probes.
pub fn top_dimensions(probes: &[DimensionProbeResult], k: usize) -> Vec<DimensionProbeResult> {
    if k > probes.len() {
        log::warn!("top-{k} requested from {} dimensions", probes.len());
    }
    let mut sorted = probes.to_vec();
    sorted.sort_by(|a, b| b.cv_accuracy.total_cmp(&a.cv_accuracy).then(a.dimension.cmp(&b.dimension)));
    sorted.truncate(k);
    sorted
}

/// Accuracies of the full-dimensional subspace and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub checkpoint: usize,
    pub full: f64,
    pub best_dimension: usize,
    pub best_only: f64,
    pub all_but_best: f64,
}

/// `dimensions_top.csv` (`rank,checkpoint,dimension,cv_accuracy,recall_female,recall_male`),
/// `ablation.csv` (`checkpoint,setting,dimension,cv_accuracy`) and
/// `dimensions_top.svg`.
pub fn emit_dimension_report(
    dir: &Path,
    probes: &[DimensionProbeResult],
    ablations: &[AblationSummary],
    k: usize,
) -> Result<Vec<PathBuf>, ReportError> {
    let top = top_dimensions(probes, k);
    let top_path = dir.join("dimensions_top.csv");
    let mut f = create(&top_path)?;
    writeln!(f, "rank,checkpoint,dimension,cv_accuracy,recall_female,recall_male")?;
    for (rank, p) in top.iter().enumerate() {
        writeln!(f, "{},{},{},{},{},{}", rank + 1, p.checkpoint, p.dimension, p.cv_accuracy, p.recall_female, p.recall_male)?;
    }
    f.flush()?;

    let abl_path = dir.join("ablation.csv");
    let mut f = create(&abl_path)?;
    writeln!(f, "checkpoint,setting,dimension,cv_accuracy")?;
    for a in ablations {
        writeln!(f, "{},all,,{}", a.checkpoint, a.full)?;
        writeln!(f, "{},best_only,{},{}", a.checkpoint, a.best_dimension, a.best_only)?;
        writeln!(f, "{},all_but_best,{},{}", a.checkpoint, a.best_dimension, a.all_but_best)?;
    }
    f.flush()?;

    let mut bars: Vec<(String, f64)> = Vec::new();
    if let Some(a) = ablations.last() {
        bars.push(("all".into(), a.full));
        bars.push(("all but best".into(), a.all_but_best));
    }
    bars.extend(top.iter().map(|p| (format!("dim {}", p.dimension), p.cv_accuracy)));
    let chart = BarChart {
        title: format!("Top {} single-dimension probes", top.len()),
        y_label: "cv accuracy".into(),
        bars,
        reference: Some(0.5),
    };
    let svg_path = dir.join("dimensions_top.svg");
    std::fs::write(&svg_path, chart.render())?;
    Ok(vec![top_path, abl_path, svg_path])
}

/// Spread of per-dimension recall for one class at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallSpread {
    pub checkpoint: usize,
    pub class: Label,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

pub fn recall_spread(checkpoint: usize, class: Label, probes: &[DimensionProbeResult]) -> RecallSpread {
    let values: Vec<f64> = probes
        .iter()
        .map(|p| if class == Label::Female { p.recall_female } else { p.recall_male })
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    RecallSpread { checkpoint, class, mean, variance, min, max }
}

/// Per-checkpoint clusterings of one class, drawn as one heatmap row per
/// checkpoint and one cell per cluster.
///
/// Writes `recall_heatmap.csv` (`checkpoint,class,cluster_id,size,cluster_mean_recall`),
/// `recall_spread.csv` (`checkpoint,class,mean,variance,min,max`) and
/// `recall_heatmap_{class}.svg`.
pub fn emit_recall_heatmaps(
    dir: &Path,
    clusterings: &[(usize, RecallClustering)],
    spreads: &[RecallSpread],
) -> Result<Vec<PathBuf>, ReportError> {
    let csv_path = dir.join("recall_heatmap.csv");
    let mut f = create(&csv_path)?;
    writeln!(f, "checkpoint,class,cluster_id,size,cluster_mean_recall")?;
    for (ckpt, c) in clusterings {
        for (id, mean) in c.cluster_means.iter().enumerate() {
            let size = c.assignments.iter().filter(|&&a| a == id).count();
            writeln!(f, "{ckpt},{},{id},{size},{mean}", c.class)?;
        }
    }
    f.flush()?;
    let spread_path = dir.join("recall_spread.csv");
    let mut f = create(&spread_path)?;
    writeln!(f, "checkpoint,class,mean,variance,min,max")?;
    for s in spreads {
        writeln!(f, "{},{},{},{},{},{}", s.checkpoint, s.class, s.mean, s.variance, s.min, s.max)?;
    }
    f.flush()?;
    let mut out = vec![csv_path, spread_path];
    for class in [Label::Female, Label::Male] {
        let rows: Vec<(String, Vec<f64>)> = clusterings
            .iter()
            .filter(|(_, c)| c.class == class)
            .map(|(ckpt, c)| (format!("epoch {ckpt}"), c.cluster_means.clone()))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let map = Heatmap { title: format!("Clustered {class} recall"), rows, range: (0.0, 1.0) };
        let path = dir.join(format!("recall_heatmap_{class}.svg"));
        std::fs::write(&path, map.render())?;
        out.push(path);
    }
    Ok(out)
}

/// Published values for each contrast, in the same order as
/// [`crate::stats::CONTRASTS`]: accuracies, difference, and the z statistic
/// with the comparison label it was published under.
pub const REFERENCE: [(f64, f64, f64, f64, &str, &str); 7] = [
    (0.825, 0.437, 0.388, 35.5452, "<0.0001", "Pro vs Anti (All)"),
    (0.780, 0.460, 0.320, -23.4358, "<0.0001", "Female: Anti vs Pro"),
    (0.930, 0.400, 0.530, -25.4602, "<0.0001", "Male: Anti vs Pro"),
    (0.460, 0.400, 0.060, 3.3015, "0.0010", "Female Anti vs Male Anti"),
    (0.780, 0.930, -0.150, 2.0284, "0.0425", "Female Pro vs Male Pro"),
    (0.830, 0.090, 0.740, 24.0283, "<0.0001", "Female Anti: Female-suffix vs Neutral"),
    (0.970, 0.600, 0.370, 17.6232, "<0.0001", "Female Pro: Female-suffix vs Neutral"),
];

/// `bias_table.csv`: the run's accuracies, difference and z-test per contrast
/// beside the published reference values.
pub fn emit_bias_tables(dir: &Path, rows: &[ContrastResult]) -> Result<Vec<PathBuf>, ReportError> {
    let path = dir.join("bias_table.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let io = |e: csv::Error| ReportError::Io(e.into());
    w.write_record([
        "family",
        "comparison",
        "accuracy_1",
        "accuracy_2",
        "difference",
        "n1",
        "n2",
        "z",
        "p_value",
        "reference_accuracy_1",
        "reference_accuracy_2",
        "reference_difference",
        "reference_z",
        "reference_p_value",
        "reference_z_comparison",
    ])
    .map_err(io)?;
    for (i, r) in rows.iter().enumerate() {
        let reference = REFERENCE.get(i);
        let acc = |s: Option<crate::stats::ProportionSample>| opt(s.map(|s| s.proportion()));
        let n = |s: Option<crate::stats::ProportionSample>| s.map_or(0, |s| s.trials).to_string();
        let mut rec = vec![
            r.contrast.family.to_string(),
            r.contrast.label.to_string(),
            acc(r.first),
            acc(r.second),
            opt(r.difference()),
            n(r.first),
            n(r.second),
            opt(r.test.and_then(|t| t.z)),
            opt(r.test.and_then(|t| t.p_value)),
        ];
        match reference {
            Some(&(a1, a2, d, z, p, label)) => {
                rec.extend([a1.to_string(), a2.to_string(), d.to_string(), z.to_string(), p.to_string(), label.to_string()])
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(vec![path])
}

pub fn sha256_file(path: &Path) -> Result<String, ReportError> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub epoch: usize,
    pub file: String,
    pub parameter_sha256: String,
}

/// Everything needed to reproduce and audit a run.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub corpus_fingerprint: String,
    pub checkpoints: Vec<CheckpointEntry>,
    /// Output path relative to the run directory, with its SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    /// Records the checksum of each file, keyed by its path relative to `root`.
    pub fn inventory(&mut self, root: &Path, files: &[PathBuf]) -> Result<(), ReportError> {
        for f in files {
            let rel = f.strip_prefix(root).unwrap_or(f).to_string_lossy().replace('\\', "/");
            self.outputs.insert(rel, sha256_file(f)?);
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), ReportError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Paths whose current checksum differs from the recorded one.
    pub fn verify(&self, root: &Path) -> Result<Vec<String>, ReportError> {
        let mut changed = Vec::new();
        for (rel, sum) in &self.outputs {
            let path = root.join(rel);
            if !path.exists() || sha256_file(&path)? != *sum {
                changed.push(rel.clone());
            }
        }
        Ok(changed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe(dimension: usize, acc: f64) -> DimensionProbeResult {
        DimensionProbeResult { checkpoint: 1, dimension, cv_accuracy: acc, recall_female: acc, recall_male: 1.0 - acc }
    }

    #[test]
    fn top_k_sorted_and_clipped() {
        let p = vec![probe(0, 0.6), probe(1, 0.9), probe(2, 0.9), probe(3, 0.4)];
        let top = top_dimensions(&p, 1);
        assert_eq!(top.iter().map(|x| x.dimension).collect::<Vec<_>>(), vec![1]);
        assert_eq!(top_dimensions(&p, 10).len(), 4);
        assert_eq!(top_dimensions(&p, 3).iter().map(|x| x.dimension).collect::<Vec<_>>(), vec![1, 2, 0]);
    }

    #[test]
    fn single_point_curve_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let pts = [AccuracyPoint { checkpoint: 0, cv_accuracy: 0.1 + 0.2, train_accuracy: 2.0 / 3.0 }];
        emit_accuracy_curve(dir.path(), &pts).unwrap();
        let text = std::fs::read_to_string(dir.path().join("accuracy_curve.csv")).unwrap();
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[1].parse::<f64>().unwrap().to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(row[2].parse::<f64>().unwrap().to_bits(), (2.0f64 / 3.0).to_bits());
        assert!(emit_accuracy_curve(dir.path(), &[]).is_err());
    }

    #[test]
    fn spread_of_uniform_recalls_is_zero() {
        let p = vec![probe(0, 0.7), probe(1, 0.7)];
        let s = recall_spread(1, Label::Female, &p);
        assert_eq!(s.variance, 0.0);
        assert_eq!(s.mean, 0.7);
    }

    #[test]
    fn manifest_detects_changes() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.csv");
        std::fs::write(&f, "x\n").unwrap();
        let mut m = RunManifest::default();
        m.inventory(dir.path(), std::slice::from_ref(&f)).unwrap();
        assert!(m.verify(dir.path()).unwrap().is_empty());
        std::fs::write(&f, "y\n").unwrap();
        assert_eq!(m.verify(dir.path()).unwrap(), vec!["a.csv".to_string()]);
        let p = dir.path().join("manifest.json");
        m.write(&p).unwrap();
        assert_eq!(RunManifest::read(&p).unwrap(), m);
    }
}
