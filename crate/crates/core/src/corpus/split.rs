use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Chunk, CorpusError};

/// Allowed deviation of a partition's token share from its target.
pub const SHARE_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Validation, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Partition::Train),
            "validation" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            other => Err(CorpusError::MalformedManifest(format!("unknown partition {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: Vec<Chunk>,
    pub validation: Vec<Chunk>,
    pub test: Vec<Chunk>,
    /// Requested token shares.
    pub targets: [f64; 3],
    /// Realized token shares.
    pub proportions: [f64; 3],
    pub assignment: BTreeMap<String, Partition>,
    /// Set when some share misses its target by more than [`SHARE_TOLERANCE`].
    pub warning: bool,
}

impl CorpusSplit {
    pub fn partition(&self, p: Partition) -> &[Chunk] {
        match p {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
        }
    }

    /// CSV `doc_id,partition`, sorted by doc id.
    pub fn write_manifest(&self, path: &Path) -> Result<(), CorpusError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["doc_id", "partition"])?;
        for (doc, part) in &self.assignment {
            w.write_record([doc.as_str(), part.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, Partition>, CorpusError> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = BTreeMap::new();
        for record in r.records() {
            let record = record?;
            if record.len() != 2 {
                return Err(CorpusError::MalformedManifest(format!("expected 2 fields, got {}", record.len())));
            }
            let part: Partition = record[1].parse()?;
            if out.insert(record[0].to_string(), part).is_some() {
                return Err(CorpusError::MalformedManifest(format!("duplicate doc id {:?}", &record[0])));
            }
        }
        Ok(out)
    }

    /// Rebuilds a split from chunks and a previously written assignment.
    pub fn from_assignment(
        chunks: Vec<Chunk>,
        assignment: BTreeMap<String, Partition>,
        targets: [f64; 3],
    ) -> Result<Self, CorpusError> {
        let sizes = doc_sizes(&chunks);
        let mut totals = [0usize; 3];
        for (doc, &size) in &sizes {
            let part = assignment
                .get(doc)
                .ok_or_else(|| CorpusError::MalformedManifest(format!("doc {doc:?} not in manifest")))?;
            totals[*part as usize] += size;
        }
        Ok(assemble(chunks, assignment, targets, totals))
    }
}

fn doc_sizes(chunks: &[Chunk]) -> BTreeMap<String, usize> {
    let mut sizes: BTreeMap<String, usize> = BTreeMap::new();
    for c in chunks {
        let e = sizes.entry(c.doc_id.clone()).or_default();
        *e = (*e).max(c.end_offset());
    }
    sizes
}

fn assemble(
    chunks: Vec<Chunk>,
    assignment: BTreeMap<String, Partition>,
    targets: [f64; 3],
    totals: [usize; 3],
) -> CorpusSplit {
    let all: usize = totals.iter().sum();
    let mut proportions = [0.0; 3];
    if all > 0 {
        for i in 0..3 {
            proportions[i] = totals[i] as f64 / all as f64;
        }
    }
    let warning = (0..3).any(|i| (proportions[i] - targets[i]).abs() > SHARE_TOLERANCE);
    let mut split = CorpusSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        targets,
        proportions,
        assignment,
        warning,
    };
    for c in chunks {
        match split.assignment[&c.doc_id] {
            Partition::Train => split.train.push(c),
            Partition::Validation => split.validation.push(c),
            Partition::Test => split.test.push(c),
        }
    }
    split
}

/// Assigns whole documents to partitions by token count.
///
/// Documents are shuffled under `seed`, stably sorted by size (largest
/// first), and each goes to the partition furthest below its token target.
pub fn split(chunks: Vec<Chunk>, targets: [f64; 3], seed: u64) -> Result<CorpusSplit, CorpusError> {
    if targets.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (targets.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidParameter(format!(
            "split proportions {targets:?} must be in [0, 1] and sum to 1"
        )));
    }
    let sizes = doc_sizes(&chunks);
    let total: usize = sizes.values().sum();
    let mut docs: Vec<(String, usize)> = sizes.into_iter().collect();
    docs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    docs.sort_by_key(|d| std::cmp::Reverse(d.1));

    let budget: Vec<f64> = targets.iter().map(|p| p * total as f64).collect();
    let mut totals = [0usize; 3];
    let mut assignment = BTreeMap::new();
    for (doc, size) in docs {
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for i in 0..3 {
            let deficit = budget[i] - totals[i] as f64;
            if deficit > best_deficit {
                best = i;
                best_deficit = deficit;
            }
        }
        totals[best] += size;
        assignment.insert(doc, Partition::ALL[best]);
    }
    let split = assemble(chunks, assignment, targets, totals);
    if split.warning {
        log::warn!(
            "split shares {:?} deviate from targets {:?} by more than {} points",
            split.proportions,
            targets,
            SHARE_TOLERANCE * 100.0
        );
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn doc_chunk(id: &str, len: usize) -> Chunk {
        Chunk {
            doc_id: id.into(),
            start_offset: 0,
            token_ids: vec![7; len],
        }
    }

    #[test]
    fn equal_documents_divide_exactly() {
        let chunks: Vec<_> = (0..10).map(|i| doc_chunk(&format!("d{i}"), 50)).collect();
        let s = split(chunks, [0.8, 0.1, 0.1], 3).unwrap();
        let count = |p| s.assignment.values().filter(|&&x| x == p).count();
        assert_eq!(
            (count(Partition::Train), count(Partition::Validation), count(Partition::Test)),
            (8, 1, 1)
        );
        assert!(!s.warning);
    }

    #[test]
    fn dominant_document_sets_warning() {
        let chunks = vec![doc_chunk("a", 98), doc_chunk("b", 1), doc_chunk("c", 1)];
        let s = split(chunks, [0.8, 0.1, 0.1], 0).unwrap();
        assert!(s.warning);
        assert_eq!(s.assignment["a"], Partition::Train);
        assert_eq!(s.assignment.len(), 3);
    }

    #[test]
    fn overlapping_chunks_count_document_once() {
        let chunks = vec![
            Chunk { doc_id: "a".into(), start_offset: 0, token_ids: vec![1; 8] },
            Chunk { doc_id: "a".into(), start_offset: 4, token_ids: vec![1; 8] },
            doc_chunk("b", 12),
        ];
        let s = split(chunks, [0.5, 0.5, 0.0], 0).unwrap();
        assert_eq!(s.proportions, [0.5, 0.5, 0.0]);
        assert_eq!(s.train.len() + s.validation.len(), 3);
    }

    #[test]
    fn bad_proportions_rejected() {
        assert!(split(vec![doc_chunk("a", 3)], [0.5, 0.5, 0.5], 0).is_err());
    }

    #[test]
    fn deterministic_under_seed_and_disjoint() {
        let chunks: Vec<_> = (0..40).map(|i| doc_chunk(&format!("d{i}"), 10 + (i * 7) % 23)).collect();
        let a = split(chunks.clone(), [0.8, 0.1, 0.1], 11).unwrap();
        let b = split(chunks, [0.8, 0.1, 0.1], 11).unwrap();
        assert_eq!(a.assignment, b.assignment);
        let ids = |cs: &[Chunk]| cs.iter().map(|c| c.doc_id.clone()).collect::<BTreeSet<_>>();
        assert!(ids(&a.train).is_disjoint(&ids(&a.validation)));
        assert!(ids(&a.train).is_disjoint(&ids(&a.test)));
        assert!(ids(&a.validation).is_disjoint(&ids(&a.test)));
    }

    #[test]
    fn manifest_round_trip() {
        let chunks: Vec<_> = (0..10).map(|i| doc_chunk(&format!("d{i}"), 20)).collect();
        let s = split(chunks.clone(), [0.8, 0.1, 0.1], 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.csv");
        s.write_manifest(&path).unwrap();
        let assignment = CorpusSplit::read_manifest(&path).unwrap();
        assert_eq!(assignment, s.assignment);
        let rebuilt = CorpusSplit::from_assignment(chunks, assignment, [0.8, 0.1, 0.1]).unwrap();
        assert_eq!(rebuilt.proportions, s.proportions);
        assert_eq!(rebuilt.train, s.train);
    }
}
