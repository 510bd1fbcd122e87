use ndarray::{ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    /// Hinge-loss weight against the unit-weight regularizer.
    pub c: f64,
    /// Stop once the projected-gradient spread of an epoch falls below this.
    pub tol: f64,
    pub max_epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { c: 1.0, tol: 1e-6, max_epochs: 300 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub epochs: usize,
}

impl LinearSvm {
    pub fn decision(&self, x: ArrayView1<f64>) -> f64 {
        dot(&self.weights, x) + self.intercept
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> Label {
        Label::from_score(self.decision(x))
    }
}

fn dot(w: &[f64], x: ArrayView1<f64>) -> f64 {
    w.iter().zip(x.iter()).map(|(a, b)| a * b).sum()
}

/// `0.5 * (|w|^2 + b^2) + c * sum(max(0, 1 - y (w.x + b)))`.
///
/// The intercept is regularized like a weight on a constant feature.
pub fn hinge_objective(weights: &[f64], intercept: f64, x: ArrayView2<f64>, y: &[Label], c: f64) -> f64 {
    let reg = 0.5 * (weights.iter().map(|w| w * w).sum::<f64>() + intercept * intercept);
    let loss: f64 = x
        .rows()
        .into_iter()
        .zip(y)
        .map(|(row, label)| (1.0 - label.sign() * (dot(weights, row) + intercept)).max(0.0))
        .sum();
    reg + c * loss
}

/// Minimizes [`hinge_objective`] by dual coordinate descent. Coordinates are
/// visited in a fresh seeded permutation every epoch.
pub fn train_svm(x: ArrayView2<f64>, y: &[Label], params: &SvmParams, seed: u64) -> LinearSvm {
    let (n, d) = x.dim();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut alpha = vec![0.0; n];
    let qii: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r) + 1.0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut epochs = 0;
    while epochs < params.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        for &i in &order {
            let yi = y[i].sign();
            let row = x.row(i);
            let g = yi * (dot(&w, row) + b) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == params.c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, params.c);
                let step = (alpha[i] - old) * yi;
                if step != 0.0 {
                    for (wj, xj) in w.iter_mut().zip(row.iter()) {
                        *wj += step * xj;
                    }
                    b += step;
                }
            }
        }
        if n == 0 || pg_max - pg_min <= params.tol {
            break;
        }
    }
    if epochs == params.max_epochs {
        log::debug!("svm stopped at the epoch limit ({epochs})");
    }
    LinearSvm { weights: w, intercept: b, epochs }
}
