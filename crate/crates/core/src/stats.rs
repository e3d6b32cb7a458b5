//! Statistical primitives behind Monte Carlo certification.
//!
//! Seeded Gaussian noise, the standard normal CDF and its inverse, and exact
//! binomial confidence bounds and tests.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Streams sharing a seed but differing in `stream_id` are independent
/// ChaCha20 keystreams, so workers can each own one without coordination.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    /// A fresh stream with the same seed and a different id.
    pub fn derive(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Failure probability of a certification procedure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceSpec {
    alpha: f64,
}

impl ConfidenceSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0,1), got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Draws a tensor of i.i.d. `N(0, sigma^2)` entries.
pub fn sample_gaussian(shape: &[usize], sigma: f64, rng: &mut RngStream) -> Result<Tensor> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::invalid(format!(
            "shape must be non-empty with positive dimensions, got {shape:?}"
        )));
    }
    let mut t = Tensor::zeros(shape);
    fill_gaussian(t.data_mut(), sigma, rng);
    Ok(t)
}

/// Overwrites `out` with `N(0, sigma^2)` draws. Always consumes one normal
/// per element, even when `sigma == 0`, so the stream position does not
/// depend on the noise level.
pub fn fill_gaussian(out: &mut [f64], sigma: f64, rng: &mut RngStream) {
    for v in out.iter_mut() {
        *v = sigma * rng.standard_normal();
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse of the standard normal CDF.
///
/// Acklam's rational approximation (relative error ~1e-9) followed by a
/// single Halley step against the erfc-based CDF.
pub fn std_normal_icdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("icdf requires p in (0,1), got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Solve in the lower half and reflect so that icdf(p) = -icdf(1-p).
    if p > 0.5 {
        return Ok(-lower_icdf(1.0 - p));
    }
    Ok(lower_icdf(p))
}

fn lower_icdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };

    // Halley refinement.
    let e = std_normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 10_000;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

const BISECTION_TOL: f64 = 1e-12;

/// One-sided exact (Clopper-Pearson) lower confidence bound on a binomial
/// success probability after `k` successes in `n` trials.
///
/// Solves `P(X >= k | p) = alpha` for `p` by bisection on the beta CDF.
pub fn clopper_pearson_lower(k: u64, n: u64, alpha: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("clopper_pearson_lower requires n >= 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("successes {k} exceed trials {n}")));
    }
    let alpha = ConfidenceSpec::new(alpha)?.alpha();
    if k == 0 {
        return Ok(0.0);
    }
    if k == n {
        return Ok(alpha.powf(1.0 / n as f64));
    }
    let (a, b) = (k as f64, (n - k + 1) as f64);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if regularized_incomplete_beta(mid, a, b) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn ln_binomial_pmf(i: u64, n: u64, p: f64) -> f64 {
    let (i_f, n_f) = (i as f64, n as f64);
    let ln_choose = libm::lgamma(n_f + 1.0) - libm::lgamma(i_f + 1.0) - libm::lgamma(n_f - i_f + 1.0);
    let success = if i == 0 { 0.0 } else { i_f * p.ln() };
    let failure = if i == n { 0.0 } else { (n_f - i_f) * (1.0 - p).ln() };
    ln_choose + success + failure
}

/// Two-sided exact binomial test p-value for `H0: p = p0`.
///
/// Sums the probabilities of every outcome no more likely than the observed
/// one (with a 1e-7 relative slack for ties), as in the usual exact test.
pub fn binomial_two_sided_pvalue(k: u64, n: u64, p0: f64) -> Result<f64> {
    if k > n {
        return Err(Error::invalid(format!("successes {k} exceed trials {n}")));
    }
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::invalid(format!("p0 must lie in [0,1], got {p0}")));
    }
    if n == 0 {
        return Ok(1.0);
    }
    if p0 == 0.0 {
        return Ok(if k == 0 { 1.0 } else { 0.0 });
    }
    if p0 == 1.0 {
        return Ok(if k == n { 1.0 } else { 0.0 });
    }
    let observed = ln_binomial_pmf(k, n, p0);
    let threshold = observed + (1.0 + 1e-7_f64).ln();
    let total: f64 = (0..=n)
        .map(|i| ln_binomial_pmf(i, n, p0))
        .filter(|&lp| lp <= threshold)
        .map(f64::exp)
        .sum();
    Ok(total.min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_gives_zeros() {
        let mut rng = RngStream::new(7, 0);
        let t = sample_gaussian(&[4], 0.0, &mut rng).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
    }

    #[test]
    fn negative_sigma_rejected() {
        let mut rng = RngStream::new(7, 0);
        assert!(matches!(
            sample_gaussian(&[4], -0.1, &mut rng),
            Err(Error::InvalidParameter(_))
        ));
        assert!(sample_gaussian(&[], 0.1, &mut rng).is_err());
        assert!(sample_gaussian(&[3, 0], 0.1, &mut rng).is_err());
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = RngStream::new(2024, 3);
        let t = sample_gaussian(&[100_000], 0.25, &mut rng).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.005, "mean {mean}");
        let std = var.sqrt();
        assert!((0.247..=0.253).contains(&std), "std {std}");
    }

    #[test]
    fn same_stream_is_bit_identical() {
        let a = sample_gaussian(&[64], 0.5, &mut RngStream::new(1, 9)).unwrap();
        let b = sample_gaussian(&[64], 0.5, &mut RngStream::new(1, 9)).unwrap();
        assert_eq!(a, b);
        let c = sample_gaussian(&[64], 0.5, &mut RngStream::new(1, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn derived_streams_uncorrelated() {
        let base = RngStream::new(99, 0);
        let mut s1 = base.derive(1);
        let mut s2 = base.derive(2);
        let n = 50_000;
        let xs: Vec<f64> = (0..n).map(|_| s1.standard_normal()).collect();
        let ys: Vec<f64> = (0..n).map(|_| s2.standard_normal()).collect();
        let corr = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        // 5 standard errors of a sample correlation at this n.
        assert!(corr.abs() < 5.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn icdf_fixed_points() {
        assert_eq!(std_normal_icdf(0.5).unwrap(), 0.0);
        assert!((std_normal_icdf(0.9).unwrap() - 1.2815516).abs() < 1e-7);
        assert!((std_normal_icdf(0.05).unwrap() + 1.6448536).abs() < 1e-7);
    }

    #[test]
    fn icdf_domain() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(std_normal_icdf(p), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn clopper_pearson_edges() {
        assert_eq!(clopper_pearson_lower(0, 100, 0.001).unwrap(), 0.0);
        let all = clopper_pearson_lower(100, 100, 0.001).unwrap();
        assert!((all - 0.933254).abs() < 1e-6);
        assert!(clopper_pearson_lower(101, 100, 0.05).is_err());
        assert!(clopper_pearson_lower(0, 0, 0.05).is_err());
        assert!(clopper_pearson_lower(5, 10, 0.0).is_err());
        assert!(clopper_pearson_lower(5, 10, 1.0).is_err());
    }

    #[test]
    fn pvalue_examples() {
        let p = binomial_two_sided_pvalue(10, 10, 0.5).unwrap();
        assert!((p - 2.0 * 0.5_f64.powi(10)).abs() < 1e-12);
        assert!((binomial_two_sided_pvalue(5, 10, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!((binomial_two_sided_pvalue(8, 10, 0.5).unwrap() - 0.109375).abs() < 1e-12);
        assert!(binomial_two_sided_pvalue(11, 10, 0.5).is_err());
        assert!(binomial_two_sided_pvalue(1, 10, 1.5).is_err());
    }

    #[test]
    fn incomplete_beta_symmetry() {
        for &(x, a, b) in &[(0.3, 2.0, 5.0), (0.9, 50.0, 3.0), (0.5, 1.0, 1.0)] {
            let lhs = regularized_incomplete_beta(x, a, b);
            let rhs = 1.0 - regularized_incomplete_beta(1.0 - x, b, a);
            assert!((lhs - rhs).abs() < 1e-13);
        }
        // I_x(1,1) is the uniform CDF.
        assert!((regularized_incomplete_beta(0.37, 1.0, 1.0) - 0.37).abs() < 1e-14);
    }
}
