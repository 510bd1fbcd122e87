use std::collections::BTreeMap;

use crate::embed::Label;

use super::DimensionProbeResult;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RecallClustering {
    pub class: Label,
    /// Clusters actually formed; below the request when values repeat or d < k.
    pub k: usize,
    /// Cluster id per dimension. Ids ascend with cluster mean.
    pub assignments: Vec<usize>,
    pub cluster_means: Vec<f64>,
}

impl RecallClustering {
    pub fn within_cluster_ss(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .zip(&self.assignments)
            .map(|(v, &c)| (v - self.cluster_means[c]).powi(2))
            .sum()
    }
}

/// Optimal 1-D k-means over the distinct values, each weighted by its
/// multiplicity. Returns, for each distinct value in ascending order, its
/// cluster id.
pub fn kmeans_1d(values: &[f64], k: usize) -> (Vec<f64>, Vec<usize>) {
    let mut counts: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for &v in values {
        let v = v + 0.0; // folds -0.0 into 0.0
        // Order-preserving key for finite floats.
        let bits = v.to_bits();
        let key = if v.is_sign_negative() { !bits } else { bits | (1 << 63) };
        counts.entry(key).or_insert((v, 0.0)).1 += 1.0;
    }
    let distinct: Vec<(f64, f64)> = counts.into_values().collect();
    let n = distinct.len();
    let k = k.min(n).max(1);
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let mut sw = vec![0.0; n + 1];
    let mut swx = vec![0.0; n + 1];
    let mut swxx = vec![0.0; n + 1];
    for (i, &(v, w)) in distinct.iter().enumerate() {
        sw[i + 1] = sw[i] + w;
        swx[i + 1] = swx[i] + w * v;
        swxx[i + 1] = swxx[i] + w * v * v;
    }
    // Weighted SSE of distinct[i..j].
    let cost = |i: usize, j: usize| {
        let w = sw[j] - sw[i];
        let s = swx[j] - swx[i];
        ((swxx[j] - swxx[i]) - s * s / w).max(0.0)
    };
    // best[m][j]: optimal cost of the first j values in m+1 clusters.
    let mut best = vec![vec![f64::INFINITY; n + 1]; k];
    let mut cut = vec![vec![0usize; n + 1]; k];
    for j in 1..=n {
        best[0][j] = cost(0, j);
    }
    for m in 1..k {
        for j in (m + 1)..=n {
            for i in m..j {
                let c = best[m - 1][i] + cost(i, j);
                if c < best[m][j] {
                    best[m][j] = c;
                    cut[m][j] = i;
                }
            }
        }
    }
    let mut labels = vec![0; n];
    let mut j = n;
    for m in (0..k).rev() {
        let i = if m == 0 { 0 } else { cut[m][j] };
        labels[i..j].iter_mut().for_each(|l| *l = m);
        j = i;
    }
    (distinct.into_iter().map(|(v, _)| v).collect(), labels)
}

/// Groups dimensions by their recall for `class`.
pub fn cluster_recalls(probes: &[DimensionProbeResult], class: Label, k: usize) -> RecallClustering {
    let values: Vec<f64> = probes
        .iter()
        .map(|p| match class {
            Label::Female => p.recall_female,
            Label::Male => p.recall_male,
        })
        .collect();
    if k > values.len() {
        log::warn!("k = {k} exceeds the {} dimensions; using {}", values.len(), values.len());
    }
    let (distinct, labels) = kmeans_1d(&values, k);
    let used = labels.last().map_or(0, |l| l + 1);
    let assignments: Vec<usize> = values
        .iter()
        .map(|v| labels[distinct.partition_point(|d| d < v)])
        .collect();
    let mut sums = vec![0.0; used];
    let mut sizes = vec![0usize; used];
    for (v, &c) in values.iter().zip(&assignments) {
        sums[c] += v;
        sizes[c] += 1;
    }
    let cluster_means = sums.iter().zip(&sizes).map(|(s, &n)| s / n as f64).collect();
    RecallClustering { class, k: used, assignments, cluster_means }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probes(recalls: &[f64]) -> Vec<DimensionProbeResult> {
        recalls
            .iter()
            .enumerate()
            .map(|(j, &r)| DimensionProbeResult { checkpoint: 0, dimension: j, cv_accuracy: 0.5, recall_female: r, recall_male: 1.0 - r })
            .collect()
    }

    #[test]
    fn identical_recalls_form_one_cluster() {
        let c = cluster_recalls(&probes(&[0.4; 12]), Label::Female, 5);
        assert_eq!(c.k, 1);
        assert!(c.assignments.iter().all(|&a| a == 0));
        assert!((c.cluster_means[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn bimodal_recalls_split_cleanly() {
        let mut r = vec![0.1; 10];
        r.extend(vec![0.9; 10]);
        let c = cluster_recalls(&probes(&r), Label::Female, 2);
        assert_eq!(c.k, 2);
        assert!((c.cluster_means[0] - 0.1).abs() < 1e-12);
        assert!((c.cluster_means[1] - 0.9).abs() < 1e-12);
        assert_eq!(&c.assignments[..10], &[0; 10]);
        let m = cluster_recalls(&probes(&r), Label::Male, 2);
        assert!((m.cluster_means[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn k_above_dimension_count_is_clipped() {
        let c = cluster_recalls(&probes(&[0.1, 0.5, 0.7]), Label::Female, 30);
        assert_eq!(c.k, 3);
        assert_eq!(c.assignments, vec![0, 1, 2]);
    }

    #[test]
    fn negative_values_order_correctly() {
        let (distinct, labels) = kmeans_1d(&[-1.0, 3.0, -3.0, 3.0, 0.0], 2);
        assert_eq!(distinct, vec![-3.0, -1.0, 0.0, 3.0]);
        assert_eq!(labels, vec![0, 0, 0, 1]);
    }
}
