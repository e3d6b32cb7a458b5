//! The Gaussian-smoothed classifier and its Monte Carlo certification.
//!
//! The smoothed classifier predicts the class the base network outputs most
//! often under `N(0, sigma^2 I)` input noise. Certification follows the usual
//! two-phase estimator: `n0` samples select a candidate class, `n` fresh
//! samples lower-bound its probability, and the bound yields an l2 radius.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{argmax, Layer, Model, Param, Provenance, Tensor};
use crate::stats::{
    binomial_two_sided_pvalue, clopper_pearson_lower, fill_gaussian, std_normal_cdf, std_normal_icdf, RngStream,
};

/// Header of the certification records CSV.
pub const RECORDS_CSV_HEADER: &str = "idx,label,predict,radius,correct,time_s";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingParams {
    pub sigma: f64,
    /// Samples used to select the candidate class.
    pub n0: u64,
    /// Samples used to estimate the candidate's probability.
    pub n: u64,
    pub alpha: f64,
    /// Noisy copies evaluated per forward pass.
    pub eval_batch: usize,
}

impl SmoothingParams {
    /// `n0 = 100`, `n = 100_000`, `alpha = 0.001`, batches of 1000.
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            sigma,
            n0: 100,
            n: 100_000,
            alpha: 0.001,
            eval_batch: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.n0 < 1 || self.n < self.n0 {
            return Err(Error::invalid(format!(
                "need 1 <= n0 <= n, got n0={} n={}",
                self.n0, self.n
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if self.eval_batch == 0 {
            return Err(Error::invalid("eval_batch must be >= 1"));
        }
        Ok(())
    }
}

/// Outcome of certifying one input.
#[derive(Clone, Debug, PartialEq)]
pub struct CertificationRecord {
    pub input_index: usize,
    pub true_label: usize,
    /// `None` when the certifier abstains.
    pub prediction: Option<usize>,
    pub radius: f64,
    pub correct: bool,
    pub wall_seconds: f64,
}

impl CertificationRecord {
    /// One CSV row (no trailing newline). Abstentions print `-1`, the radius
    /// six decimals.
    pub fn to_csv_row(&self) -> String {
        let predict = self.prediction.map_or(-1, |c| c as i64);
        format!(
            "{},{},{},{:.6},{},{:.6}",
            self.input_index,
            self.true_label,
            predict,
            self.radius,
            u8::from(self.correct),
            self.wall_seconds
        )
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split(',').collect();
        if fields.len() != 6 {
            return Err(Error::format(
                "records",
                format!("expected 6 columns, found {} in {line:?}", fields.len()),
            ));
        }
        let bad = |name: &str| Error::format("records", format!("bad {name} in {line:?}"));
        let input_index = fields[0].parse().map_err(|_| bad("idx"))?;
        let true_label = fields[1].parse().map_err(|_| bad("label"))?;
        let predict: i64 = fields[2].parse().map_err(|_| bad("predict"))?;
        let prediction = match predict {
            -1 => None,
            c if c >= 0 => Some(c as usize),
            _ => return Err(bad("predict")),
        };
        let radius: f64 = fields[3].parse().map_err(|_| bad("radius"))?;
        let correct = match fields[4] {
            "1" => true,
            "0" => false,
            _ => return Err(bad("correct")),
        };
        let wall_seconds: f64 = fields[5].parse().map_err(|_| bad("time_s"))?;
        if !(radius >= 0.0) || (prediction.is_none() && (radius != 0.0 || correct)) {
            return Err(Error::format("records", format!("inconsistent record {line:?}")));
        }
        if correct && prediction != Some(true_label) {
            return Err(Error::format("records", format!("inconsistent record {line:?}")));
        }
        Ok(Self {
            input_index,
            true_label,
            prediction,
            radius,
            correct,
            wall_seconds,
        })
    }
}

/// How often the base classifier predicts each class on `num` noisy copies
/// of `x`.
pub fn class_counts(
    model: &Model,
    x: &[f64],
    sigma: f64,
    num: u64,
    eval_batch: usize,
    rng: &mut RngStream,
) -> Result<Vec<u64>> {
    if num < 1 {
        return Err(Error::invalid("class_counts needs at least one sample"));
    }
    if eval_batch == 0 {
        return Err(Error::invalid("eval_batch must be >= 1"));
    }
    if x.len() != model.input_len() {
        return Err(Error::Shape(format!(
            "input of {} values for a model expecting {:?}",
            x.len(),
            model.input_shape()
        )));
    }
    let d = x.len();
    let mut counts = vec![0u64; model.num_classes()];
    let mut remaining = num;
    let mut noise = Vec::new();
    while remaining > 0 {
        let b = remaining.min(eval_batch as u64) as usize;
        noise.resize(b * d, 0.0);
        fill_gaussian(&mut noise, sigma, rng);
        for row in noise.chunks_exact_mut(d) {
            for (v, &xi) in row.iter_mut().zip(x) {
                *v += xi;
            }
        }
        let batch = Tensor::from_vec(&[b, d], std::mem::take(&mut noise))?;
        let logits = model.forward(&batch)?;
        for i in 0..b {
            counts[argmax(logits.row(i))] += 1;
        }
        noise = batch.into_data();
        remaining -= b as u64;
    }
    Ok(counts)
}

/// Top two classes by count; ties go to the lower index.
fn top_two(counts: &[u64]) -> (usize, u64, u64) {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let runner_up = order.get(1).map_or(0, |&c| counts[c]);
    (order[0], counts[order[0]], runner_up)
}

/// Abstaining prediction of the smoothed classifier: the top class, if a
/// two-sided binomial test against its runner-up rejects a tie at level
/// `alpha`.
pub fn predict_smoothed(
    model: &Model,
    x: &[f64],
    params: &SmoothingParams,
    rng: &mut RngStream,
) -> Result<Option<usize>> {
    params.validate()?;
    let counts = class_counts(model, x, params.sigma, params.n, params.eval_batch, rng)?;
    predict_from_counts(&counts, params.alpha)
}

/// The abstention rule of [`predict_smoothed`] applied to given counts.
pub fn predict_from_counts(counts: &[u64], alpha: f64) -> Result<Option<usize>> {
    let (top, top_count, runner_up) = top_two(counts);
    let p = binomial_two_sided_pvalue(top_count, top_count + runner_up, 0.5)?;
    Ok((p <= alpha).then_some(top))
}

/// Certifies the smoothed classifier at `x`.
///
/// Selection and estimation use disjoint noise draws from `rng`. The radius
/// is `sigma * icdf(p_lo)`, i.e. the two-probability bound with the
/// runner-up probability replaced by `1 - p_lo`.
pub fn certify(
    model: &Model,
    x: &[f64],
    true_label: usize,
    params: &SmoothingParams,
    rng: &mut RngStream,
) -> Result<CertificationRecord> {
    certify_indexed(model, x, 0, true_label, params, rng)
}

fn certify_indexed(
    model: &Model,
    x: &[f64],
    input_index: usize,
    true_label: usize,
    params: &SmoothingParams,
    rng: &mut RngStream,
) -> Result<CertificationRecord> {
    params.validate()?;
    let start = Instant::now();
    let selection = class_counts(model, x, params.sigma, params.n0, params.eval_batch, rng)?;
    let candidate = argmax_counts(&selection);
    let estimation = class_counts(model, x, params.sigma, params.n, params.eval_batch, rng)?;
    let p_lo = clopper_pearson_lower(estimation[candidate], params.n, params.alpha)?;
    let (prediction, radius) = decide(p_lo, candidate, params.sigma)?;
    Ok(CertificationRecord {
        input_index,
        true_label,
        prediction,
        radius,
        correct: prediction == Some(true_label),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Maps a lower confidence bound on the candidate's probability to a
/// prediction and radius; bounds at or below 1/2 abstain.
pub fn decide(p_lo: f64, candidate: usize, sigma: f64) -> Result<(Option<usize>, f64)> {
    if p_lo <= 0.5 {
        return Ok((None, 0.0));
    }
    Ok((Some(candidate), sigma * std_normal_icdf(p_lo)?))
}

fn argmax_counts(counts: &[u64]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate().skip(1) {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Certifies the given dataset rows with `workers` threads.
///
/// Row `i` always uses stream `(seed, i)`, so records do not depend on the
/// worker count or scheduling. Records come back in the order of `indices`.
pub fn certify_rows(
    model: &Model,
    inputs: &Tensor,
    labels: &[usize],
    indices: &[usize],
    params: &SmoothingParams,
    seed: u64,
    workers: usize,
) -> Result<Vec<CertificationRecord>> {
    params.validate()?;
    let run = |i: &usize| {
        let mut rng = RngStream::new(seed, *i as u64);
        certify_indexed(model, inputs.row(*i), *i, labels[*i], params, &mut rng)
    };
    if workers <= 1 {
        return indices.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::State(format!("cannot start worker pool: {e}")))?;
    pool.install(|| indices.par_iter().map(run).collect())
}

/// Radius from the top-class and runner-up probabilities:
/// `sigma / 2 * (icdf(p_a) - icdf(p_b))`, or 0 when `p_a < p_b`.
pub fn radius_from_probs(p_a: f64, p_b: f64, sigma: f64) -> Result<f64> {
    for (name, p) in [("pA", p_a), ("pB", p_b)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("{name} must lie in (0,1), got {p}")));
        }
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    if p_a < p_b {
        return Ok(0.0);
    }
    Ok(0.5 * sigma * (std_normal_icdf(p_a)? - std_normal_icdf(p_b)?))
}

/// Closed-form smoothing of the binary linear classifier `sign(w.x + b)`:
/// the probability of the positive class under noise, and the exact l2
/// distance from `x` to the decision boundary.
pub fn analytic_linear_oracle(w: &[f64], b: f64, x: &[f64], sigma: f64) -> Result<(f64, f64)> {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::invalid("linear oracle needs a non-zero weight vector"));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
    }
    if w.len() != x.len() {
        return Err(Error::Shape(format!("w has {} entries, x has {}", w.len(), x.len())));
    }
    let margin = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
    Ok((std_normal_cdf(margin / (sigma * norm)), margin.abs() / norm))
}

/// Two-class model whose logits are `[0, w.x + b]`, so it predicts class 1
/// exactly when `w.x + b > 0`.
pub fn linear_classifier(w: &[f64], b: f64) -> Result<Model> {
    let d = w.len();
    let mut weight = vec![0.0; 2 * d];
    weight[d..].copy_from_slice(w);
    Model::from_parts(
        "linear",
        &[d],
        2,
        vec![Layer::Dense { inputs: d, outputs: 2 }],
        vec![
            Param {
                name: "0.weight".into(),
                value: Tensor::from_vec(&[2, d], weight)?,
            },
            Param {
                name: "0.bias".into(),
                value: Tensor::from_vec(&[2], vec![0.0, b])?,
            },
        ],
        Provenance::default(),
    )
}
