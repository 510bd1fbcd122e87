//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use biasprobe::embed::Label;
use biasprobe::subspace::{hinge_objective, ProbeData};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Taylor series `Phi(x) = 1/2 + phi(x) * sum x^(2k+1) / (2k+1)!!`, summed
/// until the terms vanish. Overflows past |x| ~ 26.
pub fn series_cdf(x: f64) -> f64 {
    let (mut sum, mut term, mut k) = (x, x, 1.0);
    loop {
        k += 2.0;
        term *= x * x / k;
        let next = sum + term;
        if next == sum {
            break;
        }
        sum = next;
    }
    // ln(sqrt(2 pi))
    0.5 + sum * (-0.5 * x * x - 0.918_938_533_204_672_8).exp()
}

/// Two overlapping Gaussian blobs in the plane, alternating labels.
pub fn blobs(n: usize, shift: f64, seed: u64) -> (Array2<f64>, Vec<Label>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut flat = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { Label::Male } else { Label::Female };
        let s = label.sign() * shift;
        flat.push(s + noise.sample(&mut rng));
        flat.push(0.5 * s + noise.sample(&mut rng));
        y.push(label);
    }
    (Array2::from_shape_vec((n, 2), flat).unwrap(), y)
}

/// Golden-section minimum of a convex function on `[lo, hi]`.
pub fn golden(mut lo: f64, mut hi: f64, iters: usize, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..iters {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Minimum of the regularized hinge objective over (w1, w2, b) by nested line
/// searches. Partial minimization keeps the objective convex in the outer
/// coordinates, so each level is unimodal. Any minimizer has
/// `0.5 |theta|^2 <= c n`, which bounds the search box.
pub fn svm_oracle_minimum(x: &Array2<f64>, y: &[Label], c: f64) -> f64 {
    let radius = (2.0 * c * y.len() as f64).sqrt();
    let iters = 90;
    golden(-radius, radius, iters, |w1| {
        golden(-radius, radius, iters, |w2| {
            golden(-radius, radius, iters, |b| hinge_objective(&[w1, w2], b, x.view(), y, c)).1
        })
        .1
    })
    .1
}

/// Gender carried by `signal_dims` coordinates, each too weak to decide alone.
pub fn distributed(signal_dims: usize, d: usize, seed: u64) -> ProbeData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let (words, per_word) = (60, 10);
    let mut flat = Vec::new();
    let mut y = Vec::new();
    let mut groups = Vec::new();
    for w in 0..words {
        let label = if w % 2 == 0 { Label::Male } else { Label::Female };
        for _ in 0..per_word {
            for j in 0..d {
                let mean = if j < signal_dims { 0.6 * label.sign() } else { 0.0 };
                flat.push(mean + noise.sample(&mut rng));
            }
            y.push(label);
            groups.push(format!("w{w}"));
        }
    }
    ProbeData::new(0, Array2::from_shape_vec((words * per_word, d), flat).unwrap(), y, groups).unwrap()
}
