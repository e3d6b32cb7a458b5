//! Experiment configuration: line-oriented `key = value` text grouped under
//! `[section]` headers. `#` starts a comment line. The full key list is in
//! `docs/CONFIG.md`; [`ExperimentConfig::to_text`] renders every resolved key
//! in a fixed order, which is also the body of a run manifest.
//!
//! Sections: `[experiment]`, `[dataset]`, `[train]`, `[noise]`,
//! `[smoothing]`, and `[link.1]`, `[link.2]`, ... for chains. A `[run]`
//! section (written by the tool into manifests) is ignored on input.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crt_core::nn::{Preset, TrainConfig};
use crt_core::smoothing::SmoothingParams;
use crt_core::train::{Method, NoiseConfig};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

const EXPERIMENT_KEYS: &[&str] = &[
    "method",
    "arch",
    "teacher",
    "output_dir",
    "name",
    "workers",
    "deterministic",
];
const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "weight_decay",
    "lr_decay_epochs",
    "lr_decay_factor",
    "seed",
];
const NOISE_KEYS: &[&str] = &["sigma"];
const SMOOTHING_KEYS: &[&str] = &["n0", "n", "alpha", "eval_batch", "stride", "seed"];
const SYNTH_KEYS: &[&str] = &[
    "name",
    "classes",
    "dim",
    "train_per_class",
    "test_per_class",
    "spread",
    "seed",
];
const IDX_KEYS: &[&str] = &[
    "name",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "num_classes",
];
const CIFAR_KEYS: &[&str] = &["name", "train_batches", "test_batches"];
const FIXTURE_KEYS: &[&str] = &["name", "train_path", "test_path"];

/// Environment variable that overrides `experiment.output_dir`.
pub const OUTPUT_DIR_ENV: &str = "CRT_OUTPUT_DIR";

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    /// 1-based line in the source text; `None` for command-line overrides.
    line: Option<usize>,
}

/// Parsed but not yet interpreted configuration.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut raw = RawConfig::default();
        let mut section: Option<String> = None;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::input(format!("line {lineno}: malformed section header {line:?}")))?
                    .trim();
                check_section(name).map_err(|e| CliError::input(format!("line {lineno}: {e}")))?;
                section = Some(name.to_string());
                continue;
            }
            let Some(current) = &section else {
                return Err(CliError::input(format!("line {lineno}: key outside of any [section]")));
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::input(format!("line {lineno}: expected key = value, got {line:?}")))?;
            let key = key.trim();
            if current == "run" {
                continue;
            }
            let entries = raw.sections.entry(current.clone()).or_default();
            if entries.contains_key(key) {
                return Err(CliError::input(format!("line {lineno}: duplicate key {current}.{key}")));
            }
            entries.insert(
                key.to_string(),
                Entry {
                    value: value.trim().to_string(),
                    line: Some(lineno),
                },
            );
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    /// Applies a `section.key=value` override (`link.2.epochs=5` targets
    /// section `link.2`).
    pub fn set(&mut self, assignment: &str) -> CliResult<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::input(format!("--set expects section.key=value, got {assignment:?}")))?;
        let (section, key) = path
            .trim()
            .rsplit_once('.')
            .ok_or_else(|| CliError::input(format!("--set expects section.key=value, got {assignment:?}")))?;
        check_section(section).map_err(CliError::input)?;
        if section == "run" {
            return Ok(());
        }
        self.sections.entry(section.to_string()).or_default().insert(
            key.to_string(),
            Entry {
                value: value.trim().to_string(),
                line: None,
            },
        );
        Ok(())
    }

    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section).and_then(|s| s.get(key))
    }
}

fn check_section(name: &str) -> Result<(), String> {
    match name {
        "experiment" | "dataset" | "train" | "noise" | "smoothing" | "run" => Ok(()),
        _ => match name.strip_prefix("link.").map(str::parse::<usize>) {
            Some(Ok(n)) if n >= 1 => Ok(()),
            _ => Err(format!("unknown section [{name}]")),
        },
    }
}

/// Where the data comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    SynthBlobs {
        classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        spread: f64,
        seed: u64,
    },
    Idx {
        train_images: Option<PathBuf>,
        train_labels: Option<PathBuf>,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
        num_classes: Option<usize>,
    },
    Cifar10 {
        train_batches: Vec<PathBuf>,
        test_batches: Vec<PathBuf>,
    },
    Fixture {
        train_path: Option<PathBuf>,
        test_path: Option<PathBuf>,
    },
}

/// One link of a transfer chain.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkSpec {
    pub arch: Preset,
    pub train: TrainConfig,
}

/// A fully resolved experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub arch: Preset,
    pub teacher: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub name: String,
    pub workers: usize,
    pub deterministic: bool,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub noise: NoiseConfig,
    pub smoothing: SmoothingParams,
    pub stride: usize,
    pub certify_seed: u64,
    pub links: Vec<LinkSpec>,
}

/// Typed access to one section, reporting errors as `section.key`.
struct Section<'a> {
    raw: &'a RawConfig,
    name: String,
}

impl Section<'_> {
    fn field(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn err(&self, key: &str, msg: impl std::fmt::Display) -> CliError {
        let at = self
            .raw
            .get(&self.name, key)
            .and_then(|e| e.line)
            .map(|l| format!(" (line {l})"))
            .unwrap_or_default();
        CliError::input(format!("{}{at}: {msg}", self.field(key)))
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.raw.get(&self.name, key).map(|e| e.value.as_str())
    }

    fn required(&self, key: &str) -> CliResult<&str> {
        match self.str(key) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(CliError::field(&self.field(key), "missing required value")),
        }
    }

    fn parsed<T: FromStr>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.str(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| self.err(key, format!("cannot parse {v:?}: {e}"))),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.str(key).filter(|v| !v.is_empty()).map(PathBuf::from)
    }

    fn paths(&self, key: &str) -> Vec<PathBuf> {
        self.str(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            })
            .unwrap_or_default()
    }

    fn check_keys(&self, allowed: &[&str]) -> CliResult<()> {
        if let Some(entries) = self.raw.sections.get(&self.name) {
            for key in entries.keys() {
                if !allowed.contains(&key.as_str()) {
                    return Err(self.err(key, "unknown key"));
                }
            }
        }
        Ok(())
    }
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {s:?}")),
    }
}

fn train_section(sec: &Section<'_>, base: &TrainConfig) -> CliResult<TrainConfig> {
    let decay = match sec.str("lr_decay_epochs") {
        None => base.lr_decay_epochs.clone(),
        Some(v) => v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| sec.err("lr_decay_epochs", format!("cannot parse {v:?}: {e}")))?,
    };
    let cfg = TrainConfig {
        epochs: sec.parsed("epochs", base.epochs)?,
        batch_size: sec.parsed("batch_size", base.batch_size)?,
        lr: sec.parsed("lr", base.lr)?,
        momentum: sec.parsed("momentum", base.momentum)?,
        weight_decay: sec.parsed("weight_decay", base.weight_decay)?,
        lr_decay_epochs: decay,
        lr_decay_factor: sec.parsed("lr_decay_factor", base.lr_decay_factor)?,
        seed: sec.parsed("seed", base.seed)?,
    };
    cfg.validate().map_err(|e| CliError::field(&sec.name, e))?;
    Ok(cfg)
}

impl ExperimentConfig {
    /// Interprets a raw configuration. `output_dir_env` (normally the value
    /// of [`OUTPUT_DIR_ENV`]) takes precedence over the file's
    /// `experiment.output_dir` but not over an explicit `--set`.
    pub fn resolve(raw: &RawConfig, output_dir_env: Option<&str>) -> CliResult<Self> {
        let section = |name: &str| Section {
            raw,
            name: name.to_string(),
        };

        let exp = section("experiment");
        exp.check_keys(EXPERIMENT_KEYS)?;
        let method: Method = exp.required("method")?.parse().map_err(|e| exp.err("method", e))?;
        let arch: Preset = exp.required("arch")?.parse().map_err(|e| exp.err("arch", e))?;
        let teacher = exp.path("teacher");
        let output_dir = match (raw.get("experiment", "output_dir"), output_dir_env) {
            (Some(e), _) if e.line.is_none() => PathBuf::from(&e.value),
            (_, Some(env)) if !env.is_empty() => PathBuf::from(env),
            (Some(e), _) => PathBuf::from(&e.value),
            (None, _) => PathBuf::from("runs"),
        };
        let name = exp
            .str("name")
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .unwrap_or_else(|| format!("{method}-{arch}"));
        if name.contains(['/', '\\']) {
            return Err(exp.err("name", "must not contain path separators"));
        }
        let workers: usize = exp.parsed("workers", 1)?;
        if workers == 0 {
            return Err(exp.err("workers", "must be >= 1"));
        }
        let deterministic = match exp.str("deterministic") {
            None => false,
            Some(v) => parse_bool(v).map_err(|e| exp.err("deterministic", e))?,
        };
        if method == Method::Crt && teacher.is_none() {
            return Err(CliError::field("experiment.teacher", "required when method = crt"));
        }

        let ds = section("dataset");
        let dataset = match ds.required("name")? {
            "synth-blobs" => {
                ds.check_keys(SYNTH_KEYS)?;
                let spec = DatasetSpec::SynthBlobs {
                    classes: ds.parsed("classes", 3)?,
                    dim: ds.parsed("dim", 16)?,
                    train_per_class: ds.parsed("train_per_class", 500)?,
                    test_per_class: ds.parsed("test_per_class", 200)?,
                    spread: ds.parsed("spread", crt_core::data::DEFAULT_BLOB_SPREAD)?,
                    seed: ds.parsed("seed", 0)?,
                };
                if let DatasetSpec::SynthBlobs {
                    classes,
                    dim,
                    train_per_class,
                    test_per_class,
                    spread,
                    ..
                } = &spec
                {
                    if *classes < 2 || *dim < *classes {
                        return Err(ds.err("classes", "need 2 <= classes <= dim"));
                    }
                    if *train_per_class == 0 || *test_per_class == 0 {
                        return Err(ds.err("train_per_class", "per-class counts must be >= 1"));
                    }
                    if !(*spread > 0.0) {
                        return Err(ds.err("spread", "must be > 0"));
                    }
                }
                spec
            }
            "idx" => {
                ds.check_keys(IDX_KEYS)?;
                DatasetSpec::Idx {
                    train_images: ds.path("train_images"),
                    train_labels: ds.path("train_labels"),
                    test_images: ds.path("test_images"),
                    test_labels: ds.path("test_labels"),
                    num_classes: match ds.str("num_classes") {
                        None => None,
                        Some(_) => Some(ds.parsed("num_classes", 0)?),
                    },
                }
            }
            "cifar10" => {
                ds.check_keys(CIFAR_KEYS)?;
                DatasetSpec::Cifar10 {
                    train_batches: ds.paths("train_batches"),
                    test_batches: ds.paths("test_batches"),
                }
            }
            "fixture" => {
                ds.check_keys(FIXTURE_KEYS)?;
                DatasetSpec::Fixture {
                    train_path: ds.path("train_path"),
                    test_path: ds.path("test_path"),
                }
            }
            other => {
                return Err(ds.err(
                    "name",
                    format!("unknown dataset {other:?} (expected synth-blobs, idx, cifar10 or fixture)"),
                ))
            }
        };

        let tr = section("train");
        tr.check_keys(TRAIN_KEYS)?;
        let train = train_section(&tr, &TrainConfig::default())?;

        let nz = section("noise");
        nz.check_keys(NOISE_KEYS)?;
        let sigma: f64 = nz.parsed("sigma", 0.25)?;
        let noise = NoiseConfig::new(sigma).map_err(|e| nz.err("sigma", e))?;

        let sm = section("smoothing");
        sm.check_keys(SMOOTHING_KEYS)?;
        let defaults = SmoothingParams::with_sigma(sigma);
        let smoothing = SmoothingParams {
            sigma,
            n0: sm.parsed("n0", defaults.n0)?,
            n: sm.parsed("n", defaults.n)?,
            alpha: sm.parsed("alpha", defaults.alpha)?,
            eval_batch: sm.parsed("eval_batch", defaults.eval_batch)?,
        };
        let stride: usize = sm.parsed("stride", 1)?;
        if stride == 0 {
            return Err(sm.err("stride", "must be >= 1"));
        }
        let certify_seed: u64 = sm.parsed("seed", 0)?;
        // sigma itself is allowed to be 0 for standard training, so only the
        // sample-size part of the smoothing parameters is checked here.
        if smoothing.n0 < 1 || smoothing.n < smoothing.n0 {
            return Err(sm.err("n", "need 1 <= n0 <= n"));
        }
        if !(smoothing.alpha > 0.0 && smoothing.alpha < 1.0) {
            return Err(sm.err("alpha", "must lie in (0,1)"));
        }
        if smoothing.eval_batch == 0 {
            return Err(sm.err("eval_batch", "must be >= 1"));
        }

        let mut link_ids: Vec<usize> = raw
            .sections
            .keys()
            .filter_map(|s| s.strip_prefix("link.").and_then(|n| n.parse().ok()))
            .collect();
        link_ids.sort_unstable();
        let mut links = Vec::new();
        for (i, id) in link_ids.iter().enumerate() {
            if *id != i + 1 {
                return Err(CliError::input(format!(
                    "chain links must be numbered 1, 2, ... without gaps; found [link.{id}] as link {}",
                    i + 1
                )));
            }
            let sec = section(&format!("link.{id}"));
            let mut allowed = TRAIN_KEYS.to_vec();
            allowed.push("arch");
            sec.check_keys(&allowed)?;
            let arch = sec.required("arch")?.parse().map_err(|e| sec.err("arch", e))?;
            links.push(LinkSpec {
                arch,
                train: train_section(&sec, &train)?,
            });
        }

        Ok(Self {
            method,
            arch,
            teacher,
            output_dir,
            name,
            workers,
            deterministic,
            dataset,
            train,
            noise,
            smoothing,
            stride,
            certify_seed,
            links,
        })
    }

    /// Canonical text of the resolved configuration; parsing it back yields
    /// an equal configuration.
    pub fn to_text(&self) -> String {
        let mut w = TextWriter::default();
        let path = |p: &Path| p.display().to_string();
        let paths = |ps: &[PathBuf]| ps.iter().map(|p| path(p)).collect::<Vec<_>>().join(",");

        w.section("experiment");
        w.kv("method", self.method.to_string());
        w.kv("arch", self.arch.to_string());
        if let Some(t) = &self.teacher {
            w.kv("teacher", path(t));
        }
        w.kv("output_dir", path(&self.output_dir));
        w.kv("name", self.name.clone());
        w.kv("workers", self.workers.to_string());
        w.kv("deterministic", self.deterministic.to_string());

        w.section("dataset");
        match &self.dataset {
            DatasetSpec::SynthBlobs {
                classes,
                dim,
                train_per_class,
                test_per_class,
                spread,
                seed,
            } => {
                w.kv("name", "synth-blobs".into());
                w.kv("classes", classes.to_string());
                w.kv("dim", dim.to_string());
                w.kv("train_per_class", train_per_class.to_string());
                w.kv("test_per_class", test_per_class.to_string());
                w.kv("spread", spread.to_string());
                w.kv("seed", seed.to_string());
            }
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                num_classes,
            } => {
                w.kv("name", "idx".into());
                for (k, v) in [
                    ("train_images", train_images),
                    ("train_labels", train_labels),
                    ("test_images", test_images),
                    ("test_labels", test_labels),
                ] {
                    if let Some(p) = v {
                        w.kv(k, path(p));
                    }
                }
                if let Some(k) = num_classes {
                    w.kv("num_classes", k.to_string());
                }
            }
            DatasetSpec::Cifar10 {
                train_batches,
                test_batches,
            } => {
                w.kv("name", "cifar10".into());
                if !train_batches.is_empty() {
                    w.kv("train_batches", paths(train_batches));
                }
                if !test_batches.is_empty() {
                    w.kv("test_batches", paths(test_batches));
                }
            }
            DatasetSpec::Fixture { train_path, test_path } => {
                w.kv("name", "fixture".into());
                if let Some(p) = train_path {
                    w.kv("train_path", path(p));
                }
                if let Some(p) = test_path {
                    w.kv("test_path", path(p));
                }
            }
        }

        w.section("train");
        write_train(&mut w, &self.train);

        w.section("noise");
        w.kv("sigma", self.noise.sigma.to_string());

        w.section("smoothing");
        w.kv("n0", self.smoothing.n0.to_string());
        w.kv("n", self.smoothing.n.to_string());
        w.kv("alpha", self.smoothing.alpha.to_string());
        w.kv("eval_batch", self.smoothing.eval_batch.to_string());
        w.kv("stride", self.stride.to_string());
        w.kv("seed", self.certify_seed.to_string());

        for (i, link) in self.links.iter().enumerate() {
            w.section(&format!("link.{}", i + 1));
            w.kv("arch", link.arch.to_string());
            write_train(&mut w, &link.train);
        }
        w.out
    }

    /// SHA-256 (hex) of [`Self::to_text`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[derive(Default)]
struct TextWriter {
    out: String,
}

impl TextWriter {
    fn section(&mut self, name: &str) {
        if !self.out.is_empty() {
            self.out.push('\n');
        }
        let _ = writeln!(self.out, "[{name}]");
    }

    fn kv(&mut self, key: &str, value: String) {
        let _ = writeln!(self.out, "{key} = {value}");
    }
}

fn write_train(w: &mut TextWriter, t: &TrainConfig) {
    w.kv("epochs", t.epochs.to_string());
    w.kv("batch_size", t.batch_size.to_string());
    w.kv("lr", t.lr.to_string());
    w.kv("momentum", t.momentum.to_string());
    w.kv("weight_decay", t.weight_decay.to_string());
    w.kv(
        "lr_decay_epochs",
        t.lr_decay_epochs
            .iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    w.kv("lr_decay_factor", t.lr_decay_factor.to_string());
    w.kv("seed", t.seed.to_string());
}
