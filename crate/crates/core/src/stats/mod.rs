//! Pooled two-proportion z-tests over template accuracy contrasts.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use libm::erfc;

use crate::templates::{cell_counts, EvalRecord, Facet};

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("invalid sample: {successes} successes out of {trials} trials")]
    InvalidSample { successes: u64, trials: u64 },
    #[error("malformed significance table: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProportionSample {
    pub successes: u64,
    pub trials: u64,
}

impl ProportionSample {
    pub fn new(successes: u64, trials: u64) -> Result<Self, StatsError> {
        if trials == 0 || successes > trials {
            return Err(StatsError::InvalidSample { successes, trials });
        }
        Ok(Self { successes, trials })
    }

    pub fn proportion(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `P(|Z| >= |z|)`, computed directly from the upper tail so small values keep
/// their relative precision.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZTestResult {
    /// `None` when the pooled proportion is 0 or 1.
    pub z: Option<f64>,
    pub p_value: Option<f64>,
}

impl ZTestResult {
    pub fn is_degenerate(&self) -> bool {
        self.z.is_none()
    }
}

/// `z = (p1 - p2) / sqrt(p (1 - p) (1/n1 + 1/n2))` with the pooled `p`,
/// two-sided, no continuity correction.
pub fn two_proportion_ztest(a: ProportionSample, b: ProportionSample) -> ZTestResult {
    let (n1, n2) = (a.trials as f64, b.trials as f64);
    let pooled = (a.successes + b.successes) as f64 / (n1 + n2);
    if pooled <= 0.0 || pooled >= 1.0 {
        return ZTestResult { z: None, p_value: None };
    }
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)).sqrt();
    let z = (a.proportion() - b.proportion()) / se;
    ZTestResult { z: Some(z), p_value: Some(two_sided_p(z)) }
}

/// A comparison between two cells of template records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contrast {
    pub family: &'static str,
    pub label: &'static str,
    pub first: &'static [(Facet, &'static str)],
    pub second: &'static [(Facet, &'static str)],
}

use Facet::{Alignment as A, Form as F, TargetGender as G};

/// The seven contrasts: overall stereotype effect, stereotype effect within
/// each target gender, target gender within each alignment, and female-suffix
/// against neutral forms for female targets in each alignment.
pub const CONTRASTS: [Contrast; 7] = [
    Contrast { family: "general", label: "all: pro vs anti", first: &[(A, "pro")], second: &[(A, "anti")] },
    Contrast {
        family: "within_gender",
        label: "female: pro vs anti",
        first: &[(G, "female"), (A, "pro")],
        second: &[(G, "female"), (A, "anti")],
    },
    Contrast {
        family: "within_gender",
        label: "male: pro vs anti",
        first: &[(G, "male"), (A, "pro")],
        second: &[(G, "male"), (A, "anti")],
    },
    Contrast {
        family: "cross_gender",
        label: "anti: female vs male",
        first: &[(A, "anti"), (G, "female")],
        second: &[(A, "anti"), (G, "male")],
    },
    Contrast {
        family: "cross_gender",
        label: "pro: female vs male",
        first: &[(A, "pro"), (G, "female")],
        second: &[(A, "pro"), (G, "male")],
    },
    Contrast {
        family: "female_suffix",
        label: "female anti: female_suffix vs neutral",
        first: &[(G, "female"), (A, "anti"), (F, "female_suffix")],
        second: &[(G, "female"), (A, "anti"), (F, "neutral")],
    },
    Contrast {
        family: "female_suffix",
        label: "female pro: female_suffix vs neutral",
        first: &[(G, "female"), (A, "pro"), (F, "female_suffix")],
        second: &[(G, "female"), (A, "pro"), (F, "neutral")],
    },
];

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastResult {
    pub contrast: Contrast,
    /// `None` for an empty cell.
    pub first: Option<ProportionSample>,
    pub second: Option<ProportionSample>,
    /// `None` when a cell is empty.
    pub test: Option<ZTestResult>,
}

impl ContrastResult {
    pub fn difference(&self) -> Option<f64> {
        Some(self.first?.proportion() - self.second?.proportion())
    }
}

fn sample(records: &[EvalRecord], cell: &[(Facet, &str)]) -> Option<ProportionSample> {
    let (n, correct) = cell_counts(records, cell);
    ProportionSample::new(correct as u64, n as u64).ok()
}

/// Tests every contrast in [`CONTRASTS`] on the counted records.
pub fn significance_table(records: &[EvalRecord]) -> Vec<ContrastResult> {
    CONTRASTS
        .iter()
        .map(|c| {
            let first = sample(records, c.first);
            let second = sample(records, c.second);
            let test = match (first, second) {
                (Some(a), Some(b)) => Some(two_proportion_ztest(a, b)),
                _ => None,
            };
            ContrastResult { contrast: *c, first, second, test }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// `comparison,z,p_value,n1,x1,n2,x2`; untestable rows leave `z` and
/// `p_value` empty.
pub fn write_significance(path: &Path, rows: &[ContrastResult]) -> Result<(), StatsError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "comparison,z,p_value,n1,x1,n2,x2")?;
    for r in rows {
        let counts = |s: Option<ProportionSample>| s.map_or((0, 0), |s| (s.trials, s.successes));
        let (n1, x1) = counts(r.first);
        let (n2, x2) = counts(r.second);
        writeln!(
            f,
            "{},{},{},{n1},{x1},{n2},{x2}",
            r.contrast.label,
            opt(r.test.and_then(|t| t.z)),
            opt(r.test.and_then(|t| t.p_value)),
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Rebuilds results from a file written by [`write_significance`]; the
/// tests are recomputed from the stored counts.
pub fn read_significance(path: &Path) -> Result<Vec<ContrastResult>, StatsError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let malformed = || StatsError::Malformed(format!("line {}: {line:?}", i + 1));
        let fields: Vec<&str> = line.split(',').collect();
        let [label, _, _, n1, x1, n2, x2] = fields[..] else {
            return Err(malformed());
        };
        let contrast = *CONTRASTS.iter().find(|c| c.label == label).ok_or_else(malformed)?;
        let count = |s: &str| s.parse::<u64>().map_err(|_| malformed());
        let cell = |n: u64, x: u64| if n == 0 { Ok(None) } else { ProportionSample::new(x, n).map(Some) };
        let first = cell(count(n1)?, count(x1)?)?;
        let second = cell(count(n2)?, count(x2)?)?;
        let test = first.zip(second).map(|(a, b)| two_proportion_ztest(a, b));
        rows.push(ContrastResult { contrast, first, second, test });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: u64, n: u64) -> ProportionSample {
        ProportionSample::new(x, n).unwrap()
    }

    #[test]
    fn equal_proportions_give_zero() {
        let t = two_proportion_ztest(s(50, 100), s(50, 100));
        assert_eq!(t.z, Some(0.0));
        assert_eq!(t.p_value, Some(1.0));
    }

    #[test]
    fn hand_evaluated_example() {
        // pooled p = 0.65; se = sqrt(0.65 * 0.35 * 0.02)
        let z = two_proportion_ztest(s(80, 100), s(50, 100)).z.unwrap();
        let expected = 0.3 / (0.65f64 * 0.35 * 0.02).sqrt();
        assert!((z - expected).abs() < 1e-12);
        assert!((z - 4.448).abs() < 1e-3);
    }

    #[test]
    fn swapping_negates_z() {
        let ab = two_proportion_ztest(s(30, 90), s(55, 120));
        let ba = two_proportion_ztest(s(55, 120), s(30, 90));
        assert_eq!(ab.z.unwrap(), -ba.z.unwrap());
        assert_eq!(ab.p_value, ba.p_value);
    }

    #[test]
    fn degenerate_pool_is_marked() {
        assert!(two_proportion_ztest(s(0, 10), s(0, 5)).is_degenerate());
        assert!(two_proportion_ztest(s(10, 10), s(5, 5)).is_degenerate());
    }

    #[test]
    fn invalid_samples_rejected() {
        assert!(ProportionSample::new(0, 0).is_err());
        assert!(ProportionSample::new(3, 2).is_err());
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
        assert!((two_sided_p(1.959963984540054) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn significance_file_round_trips() {
        let rows: Vec<ContrastResult> = CONTRASTS
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let first = Some(s(10 + i as u64, 40));
                let second = (i != 3).then(|| s(5, 30));
                let test = first.zip(second).map(|(a, b)| two_proportion_ztest(a, b));
                ContrastResult { contrast: *c, first, second, test }
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("significance.csv");
        write_significance(&path, &rows).unwrap();
        assert_eq!(read_significance(&path).unwrap(), rows);
    }

    #[test]
    fn empty_records_are_not_computable() {
        let rows = significance_table(&[]);
        assert_eq!(rows.len(), 7);
        assert!(rows.iter().all(|r| r.test.is_none() && r.difference().is_none()));
    }
}
