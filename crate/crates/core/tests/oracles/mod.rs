//! Reference implementations used as test oracles. None of these share code
//! with the library: the normal CDF is a Taylor series plus a continued
//! fraction, binomial tails are summed term by term, and gradients come from
//! central differences.
#![allow(dead_code)]

use crt_core::nn::{Layer, Model, Tensor};

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// `erfc(z)` for `z >= 0`.
fn erfc_nonneg(z: f64) -> f64 {
    if z < 2.5 {
        // erf z = 2/sqrt(pi) * sum (-1)^n z^(2n+1) / (n! (2n+1))
        let z2 = z * z;
        let mut term = z;
        let mut sum = z;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -z2 / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() <= 1e-18 * sum.abs() {
                break;
            }
        }
        1.0 - 2.0 / SQRT_PI * sum
    } else {
        // erfc z = exp(-z^2)/sqrt(pi) * 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))
        // evaluated bottom-up with a fixed depth that is ample for z >= 2.5.
        let mut frac = z;
        for k in (1..=200).rev() {
            frac = z + (k as f64 / 2.0) / frac;
        }
        (-z * z).exp() / (SQRT_PI * frac)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    let z = x / std::f64::consts::SQRT_2;
    if z >= 0.0 {
        1.0 - 0.5 * erfc_nonneg(z)
    } else {
        0.5 * erfc_nonneg(-z)
    }
}

/// Inverse of [`normal_cdf`] by bisection.
pub fn normal_icdf(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = vec![0.0; n as usize + 1];
    for i in 1..=n as usize {
        out[i] = out[i - 1] + (i as f64).ln();
    }
    out
}

/// `P(X >= k)` for `X ~ Binomial(n, p)`, summed term by term.
pub fn binomial_upper_tail(k: u64, n: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let lf = ln_factorials(n);
    (k..=n)
        .map(|j| {
            let (j_, n_) = (j as usize, n as usize);
            (lf[n_] - lf[j_] - lf[n_ - j_] + j as f64 * p.ln() + (n - j) as f64 * (1.0 - p).ln()).exp()
        })
        .sum()
}

/// Exact one-sided lower bound: the `p` solving `P(X >= k; p) = alpha`.
pub fn binomial_lower_bound(k: u64, n: u64, alpha: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if binomial_upper_tail(k, n, mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Samples `Binomial(n, p)` from uniforms.
pub fn binomial_draw(n: u64, p: f64, uniform: &mut impl FnMut() -> f64) -> u64 {
    (0..n).filter(|_| uniform() < p).count() as u64
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates skipped because a ReLU input changed sign inside the
    /// difference stencil (the loss is not differentiable there).
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst: String,
    /// Layer kinds whose parameters or inputs were exercised.
    pub layer_kinds: Vec<&'static str>,
}

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is essentially zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-4;

fn relu_signs(model: &Model, x: &Tensor) -> Vec<bool> {
    let (_, trace) = model.forward_traced(x).unwrap();
    let mut signs = Vec::new();
    for (i, layer) in model.layers().iter().enumerate() {
        if matches!(layer, Layer::Relu) {
            signs.extend(trace.layer_input(i).iter().map(|v| *v > 0.0));
        }
    }
    signs
}

/// Loss `sum_ij c_ij * logits_ij`; its logit gradient is `c`.
fn linear_loss(model: &Model, x: &Tensor, c: &[f64]) -> f64 {
    let logits = model.forward(x).unwrap();
    logits.data().iter().zip(c).map(|(a, b)| a * b).sum()
}

/// Compares backprop against central differences with step `h` for every
/// parameter coordinate of `model`, using a random linear functional `c` of
/// the logits as the loss.
pub fn gradient_check(model: &Model, x: &Tensor, c: &[f64], h: f64) -> GradCheck {
    let (_, trace) = model.forward_traced(x).unwrap();
    let grad_logits = Tensor::from_vec(&[x.shape()[0], model.num_classes()], c.to_vec()).unwrap();
    let grads = model.backward(&trace, &grad_logits).unwrap();
    let mut report = GradCheck {
        layer_kinds: model.layers().iter().map(|l| l.kind()).collect(),
        ..Default::default()
    };
    let mut probe = model.clone();
    for (p, param) in model.params().iter().enumerate() {
        let analytic = grads.get(&param.name).expect("gradient for every parameter");
        for j in 0..param.value.len() {
            let orig = param.value.data()[j];
            probe.params_mut()[p].value.data_mut()[j] = orig + h;
            let plus = linear_loss(&probe, x, c);
            let signs_plus = relu_signs(&probe, x);
            probe.params_mut()[p].value.data_mut()[j] = orig - h;
            let minus = linear_loss(&probe, x, c);
            let signs_minus = relu_signs(&probe, x);
            probe.params_mut()[p].value.data_mut()[j] = orig;
            if signs_plus != signs_minus {
                report.skipped += 1;
                continue;
            }
            let fd = (plus - minus) / (2.0 * h);
            let g = analytic.data()[j];
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{}[{j}]: backprop {g:e}, finite difference {fd:e}", param.name);
            }
        }
    }
    report
}

/// Plain uniform generator for test inputs (a simple LCG keeps this module
/// independent of the library's RNG).
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6_364_136_223_846_793_005)
            .wrapping_add(1_442_695_040_888_963_407);
        ((self.0 >> 11) as f64) / (1u64 << 53) as f64
    }
}
