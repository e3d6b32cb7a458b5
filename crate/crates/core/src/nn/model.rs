use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::layers::Layer;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::stats::RngStream;

/// SHA-256 digest identifying a serialized model.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Checksum(pub [u8; 32]);

impl Checksum {
    pub fn of(bytes: &[u8]) -> Self {
        Checksum(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() != 64 || !s.is_ascii() {
            return Err(Error::invalid(format!("checksum must be 64 hex digits, got {s:?}")));
        }
        let mut out = [0u8; 32];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::invalid(format!("bad hex in checksum {s:?}")))?;
        }
        Ok(Checksum(out))
    }
}

impl fmt::Debug for Checksum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Checksum({})", self.to_hex())
    }
}

impl fmt::Display for Checksum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// How a model was produced. Serialized into the checkpoint header.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    /// Noise level used during training (0 for standard training).
    pub sigma: f64,
    /// Training-method tag, e.g. `standard`, `gaussian-aug`, `crt`.
    pub method: String,
    /// Checksum of the teacher checkpoint for transferred models.
    pub parent: Option<Checksum>,
    /// Number of successive transfers separating this model from a robustly
    /// trained root (0 for models trained from scratch).
    pub chain_length: u32,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            method: "init".to_string(),
            parent: None,
            chain_length: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Built-in architectures of increasing capacity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    SmallMlp,
    LargeMlp,
    SmallCnn,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::SmallMlp, Preset::LargeMlp, Preset::SmallCnn];

    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::SmallMlp => "small-mlp",
            Preset::LargeMlp => "large-mlp",
            Preset::SmallCnn => "small-cnn",
        }
    }

    /// Layer stack for the given per-sample input shape and class count.
    ///
    /// The CNN accepts `[C, H, W]` inputs, or flat `[d]` inputs with `d` a
    /// perfect square, which it views as a single-channel `sqrt(d) x sqrt(d)`
    /// image.
    pub fn layers(&self, input_shape: &[usize], num_classes: usize) -> Result<(Vec<usize>, Vec<Layer>)> {
        let flat: usize = input_shape.iter().product();
        match self {
            Preset::SmallMlp => Ok((
                input_shape.to_vec(),
                vec![
                    Layer::Flatten,
                    Layer::Dense {
                        inputs: flat,
                        outputs: 32,
                    },
                    Layer::Relu,
                    Layer::Dense {
                        inputs: 32,
                        outputs: num_classes,
                    },
                ],
            )),
            Preset::LargeMlp => Ok((
                input_shape.to_vec(),
                vec![
                    Layer::Flatten,
                    Layer::Dense {
                        inputs: flat,
                        outputs: 64,
                    },
                    Layer::Relu,
                    Layer::Dense {
                        inputs: 64,
                        outputs: 64,
                    },
                    Layer::Relu,
                    Layer::Dense {
                        inputs: 64,
                        outputs: num_classes,
                    },
                ],
            )),
            Preset::SmallCnn => {
                let image = match *input_shape {
                    [c, h, w] => [c, h, w],
                    [d] => {
                        let side = (d as f64).sqrt().round() as usize;
                        if side * side != d {
                            return Err(Error::Shape(format!(
                                "small-cnn needs an image or a square flat input, got [{d}]"
                            )));
                        }
                        [1, side, side]
                    }
                    _ => {
                        return Err(Error::Shape(format!(
                            "small-cnn cannot take input shape {input_shape:?}"
                        )))
                    }
                };
                let channels = 8;
                let pool = if image[1] % 2 == 0 && image[2] % 2 == 0 { 2 } else { 1 };
                let pooled = channels * (image[1] / pool) * (image[2] / pool);
                Ok((
                    image.to_vec(),
                    vec![
                        Layer::Conv2d {
                            in_channels: image[0],
                            out_channels: channels,
                            kernel: 3,
                            padding: 1,
                        },
                        Layer::Relu,
                        Layer::AvgPool2d { size: pool },
                        Layer::Flatten,
                        Layer::Dense {
                            inputs: pooled,
                            outputs: 32,
                        },
                        Layer::Relu,
                        Layer::Dense {
                            inputs: 32,
                            outputs: num_classes,
                        },
                    ],
                ))
            }
        }
    }

    /// Builds a freshly initialized model for this preset.
    pub fn build(&self, input_shape: &[usize], num_classes: usize, seed: u64) -> Result<Model> {
        let (shape, layers) = self.layers(input_shape, num_classes)?;
        Model::new(self.as_str(), &shape, num_classes, layers, seed)
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown architecture {s:?} (expected small-mlp, large-mlp or small-cnn)"
            ))
        })
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Feedforward network: a layer stack plus its named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    arch_id: String,
    input_shape: Vec<usize>,
    num_classes: usize,
    layers: Vec<Layer>,
    /// Per-sample shape entering each layer, plus the final output shape.
    shapes: Vec<Vec<usize>>,
    params: Vec<Param>,
    /// For each layer, the index of its weight in `params` (bias follows).
    param_index: Vec<Option<usize>>,
    pub provenance: Provenance,
}

impl Model {
    /// Builds a model and initializes parameters uniformly in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` from `seed`.
    pub fn new(
        arch_id: &str,
        input_shape: &[usize],
        num_classes: usize,
        layers: Vec<Layer>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = RngStream::new(seed, 0);
        let mut params = Vec::new();
        for (i, layer) in layers.iter().enumerate() {
            if let Some((wshape, bshape)) = layer.param_shapes() {
                let bound = 1.0 / (layer.fan_in() as f64).sqrt();
                for (suffix, shape) in [("weight", wshape), ("bias", bshape)] {
                    let mut t = Tensor::zeros(&shape);
                    for v in t.data_mut() {
                        *v = bound * (2.0 * rng.uniform() - 1.0);
                    }
                    params.push(Param {
                        name: format!("{i}.{suffix}"),
                        value: t,
                    });
                }
            }
        }
        Self::from_parts(arch_id, input_shape, num_classes, layers, params, Provenance::default())
    }

    /// Assembles a model from explicit parameters, validating every shape.
    pub fn from_parts(
        arch_id: &str,
        input_shape: &[usize],
        num_classes: usize,
        layers: Vec<Layer>,
        params: Vec<Param>,
        provenance: Provenance,
    ) -> Result<Self> {
        if num_classes < 1 || input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::invalid(format!(
                "bad model signature: input {input_shape:?}, {num_classes} classes"
            )));
        }
        let mut shapes = vec![input_shape.to_vec()];
        for layer in &layers {
            let next = layer.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        if shapes.last().expect("non-empty") != &[num_classes] {
            return Err(Error::Shape(format!(
                "network output {:?} does not match {num_classes} classes",
                shapes.last()
            )));
        }
        let mut param_index = Vec::with_capacity(layers.len());
        let mut next = 0;
        for (i, layer) in layers.iter().enumerate() {
            match layer.param_shapes() {
                Some((wshape, bshape)) => {
                    let (w, b) = match (params.get(next), params.get(next + 1)) {
                        (Some(w), Some(b)) => (w, b),
                        _ => return Err(Error::invalid(format!("missing parameters for layer {i}"))),
                    };
                    let expect_w = format!("{i}.weight");
                    let expect_b = format!("{i}.bias");
                    if w.name != expect_w || b.name != expect_b {
                        return Err(Error::invalid(format!(
                            "layer {i} expects parameters {expect_w}/{expect_b}, got {}/{}",
                            w.name, b.name
                        )));
                    }
                    if w.value.shape() != wshape.as_slice() || b.value.shape() != bshape.as_slice() {
                        return Err(Error::Shape(format!(
                            "layer {i} parameter shapes {:?}/{:?}, expected {wshape:?}/{bshape:?}",
                            w.value.shape(),
                            b.value.shape()
                        )));
                    }
                    param_index.push(Some(next));
                    next += 2;
                }
                None => param_index.push(None),
            }
        }
        if next != params.len() {
            return Err(Error::invalid(format!(
                "{} parameters supplied, layers use {next}",
                params.len()
            )));
        }
        Ok(Self {
            arch_id: arch_id.to_string(),
            input_shape: input_shape.to_vec(),
            num_classes,
            layers,
            shapes,
            params,
            param_index,
            provenance,
        })
    }

    pub fn arch_id(&self) -> &str {
        &self.arch_id
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Elements per input sample.
    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Digest of the parameter values alone (names, shapes, data).
    pub fn param_checksum(&self) -> Checksum {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        Checksum(h.finalize().into())
    }

    fn layer_params(&self, layer: usize) -> Option<(&[f64], &[f64])> {
        self.param_index[layer].map(|i| (self.params[i].value.data(), self.params[i + 1].value.data()))
    }

    /// Number of samples in `batch`, checking that each has this model's
    /// input size. Inputs may be given flat or in the declared shape.
    fn batch_size(&self, batch: &Tensor) -> Result<usize> {
        let shape = batch.shape();
        if shape.len() < 2 || shape[0] == 0 || batch.row_len() != self.input_len() {
            return Err(Error::Shape(format!(
                "model {} expects [B, {:?}] inputs, got {shape:?}",
                self.arch_id, self.input_shape
            )));
        }
        Ok(shape[0])
    }

    /// Logits `[B, K]` for a batch of inputs.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let b = self.batch_size(batch)?;
        let mut cur = batch.data().to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&self.shapes[i], b, &cur, self.layer_params(i), &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Tensor::from_vec(&[b, self.num_classes], cur)
    }

    /// Forward pass that keeps every layer input for a later backward pass.
    pub fn forward_traced(&self, batch: &Tensor) -> Result<(Tensor, Trace)> {
        let b = self.batch_size(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = batch.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = Vec::new();
            layer.forward(&self.shapes[i], b, &cur, self.layer_params(i), &mut next);
            inputs.push(std::mem::replace(&mut cur, next));
        }
        let logits = Tensor::from_vec(&[b, self.num_classes], cur)?;
        Ok((logits, Trace { batch: b, inputs }))
    }

    /// Backpropagates `grad_logits` (d loss / d logits, `[B, K]`) through a
    /// recorded forward pass.
    pub fn backward(&self, trace: &Trace, grad_logits: &Tensor) -> Result<Gradients> {
        if grad_logits.shape() != [trace.batch, self.num_classes] {
            return Err(Error::Shape(format!(
                "logit gradient {:?} does not match batch {} x {} classes",
                grad_logits.shape(),
                trace.batch,
                self.num_classes
            )));
        }
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::State("trace was recorded against a different model".to_string()));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut grad = grad_logits.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let param_grads = self.param_index[i].map(|p| {
                let (w, rest) = grads.entries[p..].split_at_mut(1);
                (w[0].value.data_mut(), rest[0].value.data_mut())
            });
            grad = layer.backward(
                &self.shapes[i],
                trace.batch,
                &trace.inputs[i],
                &grad,
                self.layer_params(i),
                param_grads,
            );
        }
        Ok(grads)
    }

    /// Predicted class per row of `logits`; ties go to the lowest index.
    pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
        (0..logits.shape()[0]).map(|i| argmax(logits.row(i))).collect()
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Layer inputs recorded during a forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    batch: usize,
    inputs: Vec<Vec<f64>>,
}

impl Trace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Flat input buffer of layer `i`.
    pub fn layer_input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }
}

/// Records one forward pass and consumes it on backward.
#[derive(Debug, Default)]
pub struct GradientTape {
    trace: Option<Trace>,
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, model: &Model, batch: &Tensor) -> Result<Tensor> {
        let (logits, trace) = model.forward_traced(batch)?;
        self.trace = Some(trace);
        Ok(logits)
    }

    pub fn backward(&mut self, model: &Model, grad_logits: &Tensor) -> Result<Gradients> {
        let trace = self
            .trace
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward".into()))?;
        model.backward(&trace, grad_logits)
    }
}

/// Parameter gradients keyed (and ordered) like the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub entries: Vec<Param>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            entries: model
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Tensor::zeros(p.value.shape()),
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|p| p.value.all_finite())
    }
}
