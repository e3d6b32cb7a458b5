mod oracles;

use crt_core::stats::{binomial_two_sided_pvalue, clopper_pearson_lower, sample_gaussian, std_normal_icdf, RngStream};
use oracles::{binomial_draw, binomial_lower_bound, normal_cdf, normal_icdf, Lcg};

#[test]
fn reference_cdf_matches_known_values() {
    // Sanity of the oracle itself against published table values.
    assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
    assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-14);
    assert!((normal_cdf(2.0) - 0.977_249_868_051_820_8).abs() < 1e-14);
    assert!((normal_cdf(-4.0) - 3.167_124_183_311_992e-5).abs() < 1e-18);
    assert!((normal_cdf(-6.0) - 9.865_876_450_376_98e-10).abs() < 1e-22);
}

#[test]
fn icdf_inverts_reference_cdf_on_a_million_points() {
    let mut lcg = Lcg(0x5eed);
    let mut worst = 0.0_f64;
    for _ in 0..1_000_000 {
        let p = 1e-9 + (1.0 - 2e-9) * lcg.next_f64();
        let x = std_normal_icdf(p).unwrap();
        worst = worst.max((normal_cdf(x) - p).abs());
    }
    assert!(worst <= 1e-9, "worst |Phi(icdf(p)) - p| = {worst:e}");
}

#[test]
fn icdf_covers_the_extreme_tails() {
    for p in [1e-12, 1e-11, 1e-10, 1.0 - 1e-10, 1.0 - 1e-12] {
        let x = std_normal_icdf(p).unwrap();
        assert!((normal_cdf(x) - p).abs() <= 1e-9, "p={p}");
    }
}

#[test]
fn icdf_documented_values() {
    assert_eq!(std_normal_icdf(0.5).unwrap(), 0.0);
    assert!((std_normal_icdf(0.9).unwrap() - normal_icdf(0.9)).abs() < 1e-9);
    assert!((std_normal_icdf(0.9).unwrap() - 1.281_551_6).abs() < 1e-7);
    assert!((std_normal_icdf(0.05).unwrap() + 1.644_853_6).abs() < 1e-7);
}

#[test]
fn icdf_is_antisymmetric() {
    // Dyadic probabilities make 1 - p exact, so any asymmetry is the
    // implementation's.
    let mut lcg = Lcg(11);
    for _ in 0..100_000 {
        let p = ((lcg.next_f64() * (1u64 << 40) as f64).floor().max(1.0)) / (1u64 << 40) as f64;
        let a = std_normal_icdf(p).unwrap();
        let b = std_normal_icdf(1.0 - p).unwrap();
        assert!((a + b).abs() <= 1e-12, "p={p}: {a} vs {b}");
    }
}

#[test]
fn icdf_rejects_the_closed_interval_ends() {
    for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
        assert!(std_normal_icdf(p).is_err(), "p={p}");
    }
}

#[test]
fn clopper_pearson_matches_binomial_tail_oracle() {
    for &(n, alpha) in &[(10u64, 0.05), (100, 0.001), (100, 0.05), (1000, 0.001)] {
        for k in 0..=n {
            if n > 100 && k % 37 != 0 && k != n {
                continue;
            }
            let got = clopper_pearson_lower(k, n, alpha).unwrap();
            let want = binomial_lower_bound(k, n, alpha);
            assert!((got - want).abs() < 1e-9, "k={k} n={n} alpha={alpha}: {got} vs {want}");
        }
    }
}

#[test]
fn clopper_pearson_documented_values() {
    assert_eq!(clopper_pearson_lower(0, 100, 0.001).unwrap(), 0.0);
    let all = clopper_pearson_lower(100, 100, 0.001).unwrap();
    assert!((all - 0.001_f64.powf(0.01)).abs() < 1e-15);
    assert!((all - 0.933_254).abs() < 1e-6);
    assert!((all - binomial_lower_bound(100, 100, 0.001)).abs() < 1e-10);
    let half = clopper_pearson_lower(50, 100, 0.05).unwrap();
    assert!(half > 0.40 && half < 0.42, "{half}");
    assert!((half - binomial_lower_bound(50, 100, 0.05)).abs() < 1e-9);
}

#[test]
fn clopper_pearson_is_monotone_in_k_and_confidence() {
    for n in [1u64, 7, 100, 1000] {
        let mut prev = -1.0;
        for k in 0..=n {
            let v = clopper_pearson_lower(k, n, 0.01).unwrap();
            assert!(v >= prev, "not monotone in k at k={k}, n={n}");
            assert!((0.0..=1.0).contains(&v));
            // Higher confidence (smaller alpha) never raises the bound.
            let strict = clopper_pearson_lower(k, n, 0.001).unwrap();
            let loose = clopper_pearson_lower(k, n, 0.1).unwrap();
            assert!(strict <= v && v <= loose, "k={k} n={n}");
            prev = v;
        }
    }
}

#[test]
fn clopper_pearson_rejects_bad_counts() {
    assert!(clopper_pearson_lower(5, 4, 0.05).is_err());
    assert!(clopper_pearson_lower(0, 0, 0.05).is_err());
    assert!(clopper_pearson_lower(1, 4, 0.0).is_err());
    assert!(clopper_pearson_lower(1, 4, 1.0).is_err());
}

#[test]
fn clopper_pearson_coverage() {
    let mut lcg = Lcg(2024);
    let trials = 10_000u64;
    for &n in &[100u64, 1000] {
        for &p in &[0.6, 0.9, 0.99] {
            for &alpha in &[0.05, 0.001] {
                let mut uniform = || lcg.next_f64();
                let covered = (0..trials)
                    .filter(|_| {
                        let k = binomial_draw(n, p, &mut uniform);
                        clopper_pearson_lower(k, n, alpha).unwrap() <= p
                    })
                    .count() as f64
                    / trials as f64;
                let se = (alpha * (1.0 - alpha) / trials as f64).sqrt();
                assert!(
                    covered >= 1.0 - alpha - 3.0 * se,
                    "n={n} p={p} alpha={alpha}: coverage {covered}"
                );
            }
        }
    }
}

#[test]
fn two_sided_pvalue_documented_values() {
    assert!((binomial_two_sided_pvalue(10, 10, 0.5).unwrap() - 2.0 * 0.5_f64.powi(10)).abs() < 1e-15);
    assert_eq!(binomial_two_sided_pvalue(5, 10, 0.5).unwrap(), 1.0);
    assert!((binomial_two_sided_pvalue(8, 10, 0.5).unwrap() - 0.109_375).abs() < 1e-12);
    // Symmetric null: k and n - k give the same p-value.
    for k in 0..=30 {
        let a = binomial_two_sided_pvalue(k, 30, 0.5).unwrap();
        let b = binomial_two_sided_pvalue(30 - k, 30, 0.5).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
    assert!(binomial_two_sided_pvalue(11, 10, 0.5).is_err());
    assert!(binomial_two_sided_pvalue(1, 10, 1.5).is_err());
}

#[test]
fn gaussian_sampling_moments_and_determinism() {
    let mut rng = RngStream::new(3, 0);
    let t = sample_gaussian(&[100_000], 0.25, &mut rng).unwrap();
    let n = t.len() as f64;
    let mean = t.data().iter().sum::<f64>() / n;
    let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() <= 0.005, "mean {mean}");
    assert!((0.247..=0.253).contains(&var.sqrt()), "std {}", var.sqrt());

    let again = sample_gaussian(&[100_000], 0.25, &mut RngStream::new(3, 0)).unwrap();
    assert_eq!(t, again);
    let zero = sample_gaussian(&[4], 0.0, &mut RngStream::new(1, 1)).unwrap();
    assert_eq!(zero.data(), &[0.0; 4]);
    assert!(sample_gaussian(&[4], -1.0, &mut rng).is_err());
}

#[test]
fn derived_streams_are_uncorrelated() {
    let n = 100_000;
    let mut a = RngStream::new(9, 0);
    let mut b = RngStream::new(9, 1);
    let xs: Vec<f64> = (0..n).map(|_| a.standard_normal()).collect();
    let ys: Vec<f64> = (0..n).map(|_| b.standard_normal()).collect();
    let corr = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / n as f64;
    // Standard error of the correlation of independent normals is 1/sqrt(n).
    assert!(corr.abs() < 5.0 / (n as f64).sqrt(), "corr {corr}");
    assert_ne!(xs[..8], ys[..8]);
}
