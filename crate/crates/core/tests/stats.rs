mod common;

use biasprobe::stats::{normal_cdf, two_proportion_ztest, two_sided_p, ProportionSample};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::series_cdf;

#[test]
fn normal_cdf_matches_series_oracle() {
    let mut worst: f64 = 0.0;
    for k in -8000..=8000 {
        let z = k as f64 / 1000.0;
        worst = worst.max((normal_cdf(z) - series_cdf(z)).abs());
    }
    println!("max |cdf - oracle| = {worst:.2e}");
    assert!(worst <= 1e-12);
}

#[test]
fn normal_cdf_known_quantiles() {
    for (z, p) in [(0.0, 0.5), (1.959963984540054, 0.975), (-2.5758293035489004, 0.005), (1.0, 0.8413447460685429)] {
        assert!((normal_cdf(z) - p).abs() <= 1e-12, "{z}");
    }
}

#[test]
fn ztest_matches_hand_formula_on_random_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 1000 {
        let n1: u64 = rng.random_range(1..2000);
        let n2: u64 = rng.random_range(1..2000);
        let x1 = rng.random_range(0..=n1);
        let x2 = rng.random_range(0..=n2);
        let a = ProportionSample::new(x1, n1).unwrap();
        let b = ProportionSample::new(x2, n2).unwrap();
        let t = two_proportion_ztest(a, b);
        let (p1, p2) = (x1 as f64 / n1 as f64, x2 as f64 / n2 as f64);
        let p = (x1 + x2) as f64 / (n1 + n2) as f64;
        if p == 0.0 || p == 1.0 {
            assert!(t.is_degenerate());
            continue;
        }
        let z = (p1 - p2) / (p * (1.0 - p) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
        let got = t.z.unwrap();
        assert!((got - z).abs() <= 1e-9 * z.abs().max(1.0), "{x1}/{n1} vs {x2}/{n2}: {got} vs {z}");
        // Past |z| = 8 the series overflows and the true value is below 1e-15.
        let pv = if z.abs() > 8.0 { 0.0 } else { 2.0 * (1.0 - series_cdf(z.abs())) };
        assert!((t.p_value.unwrap() - pv).abs() <= 1e-9);
        checked += 1;
    }
}

proptest! {
    #[test]
    fn z_is_antisymmetric(n1 in 1u64..500, n2 in 1u64..500, f1 in 0.0f64..=1.0, f2 in 0.0f64..=1.0) {
        let a = ProportionSample::new((f1 * n1 as f64) as u64, n1).unwrap();
        let b = ProportionSample::new((f2 * n2 as f64) as u64, n2).unwrap();
        let ab = two_proportion_ztest(a, b);
        let ba = two_proportion_ztest(b, a);
        match (ab.z, ba.z) {
            (Some(x), Some(y)) => prop_assert_eq!(x, -y),
            (None, None) => {}
            _ => prop_assert!(false, "degeneracy must not depend on order"),
        }
        prop_assert_eq!(ab.p_value, ba.p_value);
    }

    #[test]
    fn cdf_is_monotone_and_symmetric(a in -10.0f64..10.0, b in -10.0f64..10.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(normal_cdf(lo) <= normal_cdf(hi));
        prop_assert!((normal_cdf(a) + normal_cdf(-a) - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn p_value_in_unit_interval(z in -40.0f64..40.0) {
        let p = two_sided_p(z);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!(p, two_sided_p(-z));
    }
}
