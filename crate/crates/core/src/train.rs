//! Trainers: plain cross-entropy, Gaussian noise augmentation, and certified
//! robustness transfer from a teacher, plus recursive transfer chains.
//!
//! Every trainer draws from three streams of `TrainConfig::seed`: stream 0
//! initializes the model, stream 1 shuffles the data, stream 2 supplies the
//! Gaussian noise. Keeping them separate means a trainer's trajectory does not
//! depend on whether another one consumed noise.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::data::DatasetHandle;
use crate::error::{Error, Result};
use crate::nn::{
    checkpoint, cross_entropy_batch, sgd_step, softmax_rows, transfer_loss, GradientTape, Model, Preset, Provenance,
    SgdState, SoftmaxOutput, Tensor, TrainConfig,
};
use crate::stats::{fill_gaussian, RngStream};

const SHUFFLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Gaussian noise level, in units of the `[0, 1]` input scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    pub sigma: f64,
}

impl NoiseConfig {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(Self { sigma })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Standard,
    GaussianAug,
    Crt,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::GaussianAug => "gaussian-aug",
            Method::Crt => "crt",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Method::Standard),
            "gaussian-aug" => Ok(Method::GaussianAug),
            "crt" => Ok(Method::Crt),
            _ => Err(Error::invalid(format!(
                "unknown method {s:?} (expected standard, gaussian-aug or crt)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Wall-clock time of one training epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochTiming {
    pub epoch_index: usize,
    pub wall_seconds: f64,
    pub method_tag: String,
}

/// A trained model together with its per-epoch timings.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub timings: Vec<EpochTiming>,
    /// Mean training loss of the final epoch (NaN when no epoch ran).
    pub final_loss: f64,
    /// Non-fatal deviations noticed during the run, e.g. a teacher trained at
    /// a different noise level.
    pub warnings: Vec<String>,
}

impl TrainOutcome {
    pub fn total_seconds(&self) -> f64 {
        self.timings.iter().map(|t| t.wall_seconds).sum()
    }
}

/// The tensors of one transfer step, exposed to an observer.
pub struct TransferStep<'a> {
    pub epoch: usize,
    pub step: usize,
    pub teacher_input: &'a Tensor,
    pub student_input: &'a Tensor,
    pub loss: f64,
}

enum Objective<'a, 'h> {
    CrossEntropy,
    Transfer {
        teacher: &'a Model,
        hook: Option<&'a mut (dyn FnMut(&TransferStep<'_>) + 'h)>,
    },
}

fn training_loop(
    mut model: Model,
    data: &DatasetHandle,
    cfg: &TrainConfig,
    sigma: f64,
    method: Method,
    mut objective: Objective<'_, '_>,
) -> Result<(Model, Vec<EpochTiming>, f64)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let mut shuffle_rng = RngStream::new(cfg.seed, SHUFFLE_STREAM);
    let mut noise_rng = RngStream::new(cfg.seed, NOISE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut sgd = SgdState::new();
    let mut tape = GradientTape::new();
    let mut timings = Vec::with_capacity(cfg.epochs);
    let mut final_loss = f64::NAN;
    let noisy = method != Method::Standard;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (mut x, labels) = data.batch(idx);
            if noisy {
                // One fresh draw per input per step.
                let mut eta = vec![0.0; x.len()];
                fill_gaussian(&mut eta, sigma, &mut noise_rng);
                for (v, e) in x.data_mut().iter_mut().zip(&eta) {
                    *v += e;
                }
            }
            let logits = tape.record(&model, &x)?;
            let (loss, grad_logits) = match &mut objective {
                Objective::CrossEntropy => cross_entropy_batch(&logits, &labels)?,
                Objective::Transfer { teacher, hook } => {
                    let teacher_probs = softmax_rows(&teacher.forward(&x)?)?;
                    let (loss, grad) = transfer_loss(&teacher_probs, &logits)?;
                    if let Some(hook) = hook.as_deref_mut() {
                        hook(&TransferStep {
                            epoch,
                            step,
                            teacher_input: &x,
                            student_input: &x,
                            loss,
                        });
                    }
                    (loss, grad)
                }
            };
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "{method} training diverged: loss {loss} at epoch {epoch}, step {step}"
                )));
            }
            let grads = tape.backward(&model, &grad_logits)?;
            if !grads.all_finite() {
                return Err(Error::Numeric(format!(
                    "{method} training produced non-finite gradients at epoch {epoch}, step {step}"
                )));
            }
            sgd_step(&mut model, &grads, cfg, epoch, &mut sgd)?;
            loss_sum += loss;
            steps += 1;
        }
        final_loss = loss_sum / steps as f64;
        timings.push(EpochTiming {
            epoch_index: epoch,
            wall_seconds: start.elapsed().as_secs_f64(),
            method_tag: method.as_str().to_string(),
        });
    }
    Ok((model, timings, final_loss))
}

fn init_student(spec: Preset, data: &DatasetHandle, cfg: &TrainConfig) -> Result<Model> {
    spec.build(data.sample_shape(), data.num_classes(), cfg.seed)
}

/// Plain cross-entropy training on clean inputs.
pub fn train_standard(spec: Preset, data: &DatasetHandle, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut model = init_student(spec, data, cfg)?;
    model.provenance = Provenance {
        sigma: 0.0,
        method: Method::Standard.as_str().into(),
        parent: None,
        chain_length: 0,
    };
    let (model, timings, final_loss) = training_loop(model, data, cfg, 0.0, Method::Standard, Objective::CrossEntropy)?;
    Ok(TrainOutcome {
        model,
        timings,
        final_loss,
        warnings: Vec::new(),
    })
}

/// Cross-entropy training on inputs perturbed with fresh `N(0, sigma^2 I)`
/// noise at every step.
pub fn train_gaussian_aug(
    spec: Preset,
    data: &DatasetHandle,
    cfg: &TrainConfig,
    noise: NoiseConfig,
) -> Result<TrainOutcome> {
    let noise = NoiseConfig::new(noise.sigma)?;
    let mut model = init_student(spec, data, cfg)?;
    model.provenance = Provenance {
        sigma: noise.sigma,
        method: Method::GaussianAug.as_str().into(),
        parent: None,
        chain_length: 0,
    };
    let (model, timings, final_loss) = training_loop(
        model,
        data,
        cfg,
        noise.sigma,
        Method::GaussianAug,
        Objective::CrossEntropy,
    )?;
    Ok(TrainOutcome {
        model,
        timings,
        final_loss,
        warnings: Vec::new(),
    })
}

/// Trains a student to match a robust teacher's softmax outputs on shared
/// noisy inputs.
///
/// Each step perturbs the batch once, feeds the same noisy tensor to teacher
/// and student, and minimizes the batch mean of the per-sample Euclidean
/// distance between their softmax vectors. Only the student is updated.
pub fn crt_transfer(
    teacher: &Model,
    student_spec: Preset,
    data: &DatasetHandle,
    cfg: &TrainConfig,
    noise: NoiseConfig,
) -> Result<TrainOutcome> {
    crt_transfer_observed(teacher, student_spec, data, cfg, noise, None)
}

/// [`crt_transfer`] with an observer invoked after every step.
pub fn crt_transfer_observed(
    teacher: &Model,
    student_spec: Preset,
    data: &DatasetHandle,
    cfg: &TrainConfig,
    noise: NoiseConfig,
    hook: Option<&mut dyn FnMut(&TransferStep<'_>)>,
) -> Result<TrainOutcome> {
    let student = init_student(student_spec, data, cfg)?;
    crt_transfer_into(teacher, student, data, cfg, noise, hook)
}

/// Transfer into an already-built student model (used by tests that start
/// from a specific initialization).
pub fn crt_transfer_into(
    teacher: &Model,
    mut student: Model,
    data: &DatasetHandle,
    cfg: &TrainConfig,
    noise: NoiseConfig,
    hook: Option<&mut dyn FnMut(&TransferStep<'_>)>,
) -> Result<TrainOutcome> {
    let noise = NoiseConfig::new(noise.sigma)?;
    if teacher.num_classes() != data.num_classes() || student.num_classes() != data.num_classes() {
        return Err(Error::invalid(format!(
            "class count mismatch: teacher {}, student {}, dataset {}",
            teacher.num_classes(),
            student.num_classes(),
            data.num_classes()
        )));
    }
    let sample_len: usize = data.sample_shape().iter().product();
    if teacher.input_len() != sample_len || student.input_len() != sample_len {
        return Err(Error::Shape(format!(
            "input size mismatch: teacher {:?}, student {:?}, dataset {:?}",
            teacher.input_shape(),
            student.input_shape(),
            data.sample_shape()
        )));
    }
    let mut warnings = Vec::new();
    if teacher.provenance.sigma != noise.sigma {
        warnings.push(format!(
            "teacher was trained at sigma={} but transfer uses sigma={}",
            teacher.provenance.sigma, noise.sigma
        ));
    }
    student.provenance = Provenance {
        sigma: noise.sigma,
        method: Method::Crt.as_str().into(),
        parent: Some(checkpoint::checksum(teacher)),
        chain_length: teacher.provenance.chain_length + 1,
    };
    let (model, timings, final_loss) = training_loop(
        student,
        data,
        cfg,
        noise.sigma,
        Method::Crt,
        Objective::Transfer { teacher, hook },
    )?;
    Ok(TrainOutcome {
        model,
        timings,
        final_loss,
        warnings,
    })
}

/// Successive transfers: link `i` learns from link `i - 1` (link 0 from
/// `initial_teacher`). Stops at the first failing link.
pub fn run_chain(
    links: &[(Preset, TrainConfig)],
    initial_teacher: &Model,
    data: &DatasetHandle,
    noise: NoiseConfig,
) -> Result<Vec<TrainOutcome>> {
    run_chain_with(links, initial_teacher, data, noise, |_, _| Ok(()))
}

/// [`run_chain`] with a callback after each completed link, e.g. to persist
/// its checkpoint before the next link starts.
pub fn run_chain_with(
    links: &[(Preset, TrainConfig)],
    initial_teacher: &Model,
    data: &DatasetHandle,
    noise: NoiseConfig,
    mut on_link: impl FnMut(usize, &TrainOutcome) -> Result<()>,
) -> Result<Vec<TrainOutcome>> {
    if links.is_empty() {
        return Err(Error::invalid("a chain needs at least one link"));
    }
    let mut outcomes: Vec<TrainOutcome> = Vec::with_capacity(links.len());
    for (i, (spec, cfg)) in links.iter().enumerate() {
        let teacher = outcomes.last().map_or(initial_teacher, |o| &o.model);
        let outcome = crt_transfer(teacher, *spec, data, cfg, noise)
            .and_then(|o| on_link(i, &o).map(|_| o))
            .map_err(|e| Error::State(format!("chain link {} ({spec}) failed: {e}", i + 1)))?;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

/// Fraction of samples whose base-classifier prediction matches the label.
pub fn clean_accuracy(model: &Model, data: &DatasetHandle) -> Result<f64> {
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(1024) {
        let (x, y) = data.batch(chunk);
        let pred = Model::argmax_rows(&model.forward(&x)?);
        correct += pred.iter().zip(&y).filter(|(p, y)| p == y).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// The two sides of the inequality `z_s[y] >= -(z_t[y] - z_s[y])` relating
/// the student's top-class probability to its gap from the teacher's.
///
/// Returns `(lhs, rhs) = (z_s[y], -(z_t[y] - z_s[y]))`; `lhs >= rhs` holds
/// because the teacher probability is non-negative.
pub fn lower_bound_gap(
    teacher_probs: &SoftmaxOutput,
    student_probs: &SoftmaxOutput,
    label: usize,
) -> Result<(f64, f64)> {
    let k = teacher_probs.num_classes();
    if student_probs.num_classes() != k {
        return Err(Error::invalid(format!(
            "teacher has {k} classes, student {}",
            student_probs.num_classes()
        )));
    }
    if label >= k {
        return Err(Error::invalid(format!("label {label} out of range for {k} classes")));
    }
    let zs = student_probs.probs()[label];
    let zt = teacher_probs.probs()[label];
    Ok((zs, -(zt - zs)))
}
