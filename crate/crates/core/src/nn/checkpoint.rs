//! Versioned binary checkpoint format.
//!
//! All integers are little-endian `u32`, reals little-endian `f64`, strings
//! a `u32` byte length followed by UTF-8:
//!
//! ```text
//! magic        8 bytes  "CRTCKPT\0"
//! version      u32      FORMAT_VERSION
//! arch_id      string
//! num_classes  u32
//! input_shape  u32 rank, then rank x u32
//! sigma        f64      noise level used in training
//! method       string   training-method tag
//! parent       u8 flag (0 = none, 1 = present), then 32 bytes if present
//! chain_length u32
//! layers       u32 count, then per layer a u8 kind and its u32 fields
//! params       u32 count, then per param: name, rank, dims, data (f64 each)
//! checksum     32 bytes SHA-256 of every preceding byte
//! ```

use std::path::Path;

use super::layers::Layer;
use super::model::{Checksum, Model, Param, Provenance};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CRTCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Serializes the model, including the trailing checksum.
pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = encode_body(model);
    let sum = Checksum::of(&out);
    out.extend_from_slice(&sum.0);
    out
}

/// Checksum a checkpoint of this model would carry.
pub fn checksum(model: &Model) -> Checksum {
    Checksum::of(&encode_body(model))
}

fn encode_body(model: &Model) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(FORMAT_VERSION);
    w.str(model.arch_id());
    w.u32(model.num_classes() as u32);
    w.u32(model.input_shape().len() as u32);
    for &d in model.input_shape() {
        w.u32(d as u32);
    }
    let prov = &model.provenance;
    w.f64(prov.sigma);
    w.str(&prov.method);
    match prov.parent {
        Some(c) => {
            w.bytes(&[1]);
            w.bytes(&c.0);
        }
        None => w.bytes(&[0]),
    }
    w.u32(prov.chain_length);
    w.u32(model.layers().len() as u32);
    for layer in model.layers() {
        match *layer {
            Layer::Dense { inputs, outputs } => {
                w.bytes(&[0]);
                w.u32(inputs as u32);
                w.u32(outputs as u32);
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => {
                w.bytes(&[1]);
                for v in [in_channels, out_channels, kernel, padding] {
                    w.u32(v as u32);
                }
            }
            Layer::Relu => w.bytes(&[2]),
            Layer::AvgPool2d { size } => {
                w.bytes(&[3]);
                w.u32(size as u32);
            }
            Layer::Flatten => w.bytes(&[4]),
        }
    }
    w.u32(model.params().len() as u32);
    for p in model.params() {
        w.str(&p.name);
        w.u32(p.value.shape().len() as u32);
        for &d in p.value.shape() {
            w.u32(d as u32);
        }
        for &v in p.value.data() {
            w.f64(v);
        }
    }
    w.buf
}

/// Parses and verifies a checkpoint.
pub fn decode(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(Error::format("checkpoint", "file too short"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::format("magic", "not a checkpoint file"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            "version",
            format!("unsupported format version {version}"),
        ));
    }
    if Checksum::of(body).0 != trailer {
        return Err(Error::format("checksum", "content checksum mismatch"));
    }
    let arch_id = r.str("arch_id")?;
    let num_classes = r.u32("num_classes")? as usize;
    let rank = r.u32("input_shape")? as usize;
    let input_shape = (0..rank)
        .map(|_| r.u32("input_shape").map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let sigma = r.f64("sigma")?;
    let method = r.str("method")?;
    let parent = match r.take(1, "parent")?[0] {
        0 => None,
        1 => {
            let mut c = [0u8; 32];
            c.copy_from_slice(r.take(32, "parent")?);
            Some(Checksum(c))
        }
        other => return Err(Error::format("parent", format!("bad flag {other}"))),
    };
    let chain_length = r.u32("chain_length")?;
    let n_layers = r.u32("layers")? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let layer = match r.take(1, "layers")?[0] {
            0 => Layer::Dense {
                inputs: r.u32("layers")? as usize,
                outputs: r.u32("layers")? as usize,
            },
            1 => Layer::Conv2d {
                in_channels: r.u32("layers")? as usize,
                out_channels: r.u32("layers")? as usize,
                kernel: r.u32("layers")? as usize,
                padding: r.u32("layers")? as usize,
            },
            2 => Layer::Relu,
            3 => Layer::AvgPool2d {
                size: r.u32("layers")? as usize,
            },
            4 => Layer::Flatten,
            other => return Err(Error::format("layers", format!("unknown layer kind {other}"))),
        };
        layers.push(layer);
    }
    let n_params = r.u32("params")? as usize;
    let mut params = Vec::with_capacity(n_params.min(1024));
    for _ in 0..n_params {
        let name = r.str("params")?;
        let rank = r.u32("params")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("params").map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        if len.saturating_mul(8) > r.remaining() {
            return Err(Error::format("params", format!("tensor {name} truncated")));
        }
        let data = (0..len).map(|_| r.f64("params")).collect::<Result<Vec<_>>>()?;
        params.push(Param {
            name,
            value: Tensor::from_vec(&shape, data)?,
        });
    }
    if r.remaining() != 0 {
        return Err(Error::format("params", "trailing bytes after parameters"));
    }
    let provenance = Provenance {
        sigma,
        method,
        parent,
        chain_length,
    };
    Model::from_parts(&arch_id, &input_shape, num_classes, layers, params, provenance)
}

pub fn save(path: &Path, model: &Model) -> Result<Checksum> {
    let bytes = encode(model);
    crate::fsutil::atomic_write(path, &bytes)?;
    let mut c = [0u8; 32];
    c.copy_from_slice(&bytes[bytes.len() - 32..]);
    Ok(Checksum(c))
}

pub fn load(path: &Path) -> Result<Model> {
    decode(&std::fs::read(path)?)
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(field, "unexpected end of file"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, field: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self, field: &str) -> Result<String> {
        let n = self.u32(field)? as usize;
        let raw = self.take(n, field)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format(field, "invalid UTF-8"))
    }
}
