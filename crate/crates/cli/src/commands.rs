//! The train, transfer, chain, certify and report subcommands.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crt_core::data::{self, DatasetHandle};
use crt_core::fsutil::atomic_write;
use crt_core::metrics::{build_report, cumulative_savings, render_table, speedup_factor, MetricsReport, ReportMeta};
use crt_core::nn::{checkpoint, Model};
use crt_core::smoothing::{certify_rows, CertificationRecord, RECORDS_CSV_HEADER};
use crt_core::train::{self, EpochTiming, Method, TrainOutcome};
use sha2::{Digest, Sha256};

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::error::{CliError, CliResult};

/// Header of the per-epoch timing CSV.
pub const TIMING_CSV_HEADER: &str = "epoch_index,wall_seconds,method_tag";

/// Files written and notes produced by a command.
#[derive(Debug, Default)]
pub struct Summary {
    pub files: Vec<PathBuf>,
    pub notes: Vec<String>,
    /// Human-readable result printed to stdout (the report table).
    pub output: String,
    /// Set when certification stopped early on request and left a
    /// resumable partial file.
    pub interrupted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Split {
    Train,
    Test,
}

fn require_file(field: &str, path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::field(field, format!("file not found: {}", path.display())))
    }
}

fn require_opt<'a>(field: &str, path: &'a Option<PathBuf>) -> CliResult<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| CliError::field(field, "missing required value"))?;
    require_file(field, p)?;
    Ok(p)
}

/// Checks that every dataset path needed for `split` is present and exists.
fn validate_dataset(spec: &DatasetSpec, split: Split) -> CliResult<()> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    match spec {
        DatasetSpec::SynthBlobs { .. } => Ok(()),
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } => {
            let (images, labels) = match split {
                Split::Train => (train_images, train_labels),
                Split::Test => (test_images, test_labels),
            };
            require_opt(&format!("dataset.{prefix}_images"), images)?;
            require_opt(&format!("dataset.{prefix}_labels"), labels)?;
            Ok(())
        }
        DatasetSpec::Cifar10 {
            train_batches,
            test_batches,
        } => {
            let field = format!("dataset.{prefix}_batches");
            let batches = match split {
                Split::Train => train_batches,
                Split::Test => test_batches,
            };
            if batches.is_empty() {
                return Err(CliError::field(&field, "missing required value"));
            }
            batches.iter().try_for_each(|p| require_file(&field, p))
        }
        DatasetSpec::Fixture { train_path, test_path } => {
            let path = match split {
                Split::Train => train_path,
                Split::Test => test_path,
            };
            require_opt(&format!("dataset.{prefix}_path"), path).map(|_| ())
        }
    }
}

fn load_dataset(spec: &DatasetSpec, split: Split) -> CliResult<DatasetHandle> {
    validate_dataset(spec, split)?;
    let bad = |e: crt_core::Error| CliError::input(format!("dataset: {e}"));
    match spec {
        DatasetSpec::SynthBlobs {
            classes,
            dim,
            train_per_class,
            test_per_class,
            spread,
            seed,
        } => {
            let (tr, te) = data::synth_blobs_split(*classes, *dim, *train_per_class, *test_per_class, *spread, *seed)
                .map_err(bad)?;
            Ok(if split == Split::Train { tr } else { te })
        }
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            num_classes,
        } => {
            let (images, labels) = match split {
                Split::Train => (train_images, train_labels),
                Split::Test => (test_images, test_labels),
            };
            let ds = data::load_idx(
                images.as_deref().expect("validated"),
                labels.as_deref().expect("validated"),
            )
            .map_err(bad)?;
            match num_classes {
                Some(k) => ds.with_num_classes(*k).map_err(bad),
                None => Ok(ds),
            }
        }
        DatasetSpec::Cifar10 {
            train_batches,
            test_batches,
        } => {
            let batches = if split == Split::Train {
                train_batches
            } else {
                test_batches
            };
            data::load_cifar10_binary(batches).map_err(bad)
        }
        DatasetSpec::Fixture { train_path, test_path } => {
            let path = if split == Split::Train { train_path } else { test_path };
            data::read_fixture(path.as_deref().expect("validated")).map_err(bad)
        }
    }
}

fn load_model(field: &str, path: &Path) -> CliResult<Model> {
    require_file(field, path)?;
    checkpoint::load(path).map_err(|e| CliError::field(field, format!("cannot load {}: {e}", path.display())))
}

fn check_compatible(field: &str, model: &Model, data: &DatasetHandle) -> CliResult<()> {
    if model.num_classes() != data.num_classes() {
        return Err(CliError::field(
            field,
            format!(
                "model has {} classes but the dataset has {}",
                model.num_classes(),
                data.num_classes()
            ),
        ));
    }
    let sample: usize = data.sample_shape().iter().product();
    if model.input_len() != sample {
        return Err(CliError::field(
            field,
            format!(
                "model expects inputs of shape {:?} but the dataset provides {:?}",
                model.input_shape(),
                data.sample_shape()
            ),
        ));
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    atomic_write(path, bytes).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn timing_csv(timings: &[EpochTiming]) -> String {
    let mut out = String::from(TIMING_CSV_HEADER);
    out.push('\n');
    for t in timings {
        let _ = writeln!(out, "{},{},{}", t.epoch_index, t.wall_seconds, t.method_tag);
    }
    out
}

/// Parses a timing CSV; errors name the file and line.
pub fn read_timing_csv(path: &Path) -> CliResult<Vec<EpochTiming>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read timing file {}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(TIMING_CSV_HEADER) {
        return Err(CliError::input(format!(
            "{}:1: expected header {TIMING_CSV_HEADER:?}",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 2;
        let bad = || CliError::input(format!("{}:{lineno}: malformed timing row {line:?}", path.display()));
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 3 {
            return Err(bad());
        }
        let wall_seconds: f64 = fields[1].parse().map_err(|_| bad())?;
        if !(wall_seconds >= 0.0) || !wall_seconds.is_finite() {
            return Err(bad());
        }
        out.push(EpochTiming {
            epoch_index: fields[0].parse().map_err(|_| bad())?,
            wall_seconds,
            method_tag: fields[2].to_string(),
        });
    }
    Ok(out)
}

/// Parses a certification records CSV; errors name the file and line.
pub fn read_records_csv(path: &Path) -> CliResult<Vec<CertificationRecord>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read records file {}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(RECORDS_CSV_HEADER) {
        return Err(CliError::input(format!(
            "{}:1: expected header {RECORDS_CSV_HEADER:?}",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = CertificationRecord::from_csv_row(line)
            .map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), i + 2)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Output file locations for a run named `stem`.
pub struct RunPaths {
    pub checkpoint: PathBuf,
    pub timing: PathBuf,
    pub manifest: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path, stem: &str) -> Self {
        Self {
            checkpoint: dir.join(format!("{stem}.ckpt")),
            timing: dir.join(format!("{stem}.timing.csv")),
            manifest: dir.join(format!("{stem}.manifest")),
        }
    }
}

/// Path of the records CSV written by `certify` when none is given.
pub fn default_records_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join(format!("{}.records.csv", cfg.name))
}

/// Manifest text: the resolved configuration followed by a `[run]` section,
/// which the configuration parser skips, so a manifest can be rerun as is.
fn manifest_text(cfg: &ExperimentConfig, run: &[(&str, String)]) -> String {
    let mut out = cfg.to_text();
    out.push_str("\n[run]\n");
    let _ = writeln!(out, "config_hash = {}", cfg.hash());
    for (k, v) in run {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

fn store_outcome(
    cfg: &ExperimentConfig,
    paths: &RunPaths,
    outcome: &TrainOutcome,
    run: &mut Vec<(&str, String)>,
    summary: &mut Summary,
) -> CliResult<()> {
    let sum = checkpoint::save(&paths.checkpoint, &outcome.model)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", paths.checkpoint.display())))?;
    write_file(&paths.timing, timing_csv(&outcome.timings).as_bytes())?;
    run.push(("checkpoint_checksum", sum.to_hex()));
    run.push(("chain_length", outcome.model.provenance.chain_length.to_string()));
    run.push(("train_seconds", outcome.total_seconds().to_string()));
    run.push(("final_loss", outcome.final_loss.to_string()));
    run.push(("sigma_warning", outcome.warnings.join("; ")));
    write_file(&paths.manifest, manifest_text(cfg, run).as_bytes())?;
    summary
        .notes
        .extend(outcome.warnings.iter().map(|w| format!("warning: {w}")));
    summary
        .files
        .extend([paths.checkpoint.clone(), paths.timing.clone(), paths.manifest.clone()]);
    Ok(())
}

fn runtime(e: crt_core::Error) -> CliError {
    CliError::runtime(format!("training aborted: {e}"))
}

/// Trains a model from scratch with standard or Gaussian-augmented training.
pub fn cmd_train(cfg: &ExperimentConfig) -> CliResult<Summary> {
    if cfg.method == Method::Crt {
        return Err(CliError::field(
            "experiment.method",
            "train handles standard and gaussian-aug; use the transfer command for crt",
        ));
    }
    let data = load_dataset(&cfg.dataset, Split::Train)?;
    let started = Instant::now();
    let outcome = match cfg.method {
        Method::Standard => train::train_standard(cfg.arch, &data, &cfg.train),
        _ => train::train_gaussian_aug(cfg.arch, &data, &cfg.train, cfg.noise),
    }
    .map_err(runtime)?;
    let mut run = vec![
        ("command", "train".to_string()),
        ("seed", cfg.train.seed.to_string()),
        ("wall_seconds", started.elapsed().as_secs_f64().to_string()),
    ];
    let mut summary = Summary::default();
    store_outcome(
        cfg,
        &RunPaths::new(&cfg.output_dir, &cfg.name),
        &outcome,
        &mut run,
        &mut summary,
    )?;
    Ok(summary)
}

fn load_teacher(cfg: &ExperimentConfig, data: &DatasetHandle) -> CliResult<Model> {
    let path = cfg
        .teacher
        .as_deref()
        .ok_or_else(|| CliError::field("experiment.teacher", "missing required value"))?;
    let teacher = load_model("experiment.teacher", path)?;
    check_compatible("experiment.teacher", &teacher, data)?;
    Ok(teacher)
}

/// Transfers robustness from the configured teacher into a fresh student.
pub fn cmd_transfer(cfg: &ExperimentConfig) -> CliResult<Summary> {
    if cfg.method != Method::Crt {
        return Err(CliError::field("experiment.method", "transfer requires method = crt"));
    }
    let data = load_dataset(&cfg.dataset, Split::Train)?;
    let teacher = load_teacher(cfg, &data)?;
    let started = Instant::now();
    let outcome = train::crt_transfer(&teacher, cfg.arch, &data, &cfg.train, cfg.noise).map_err(runtime)?;
    let mut run = vec![
        ("command", "transfer".to_string()),
        ("seed", cfg.train.seed.to_string()),
        ("wall_seconds", started.elapsed().as_secs_f64().to_string()),
        ("teacher_checksum", checkpoint::checksum(&teacher).to_hex()),
    ];
    let mut summary = Summary::default();
    store_outcome(
        cfg,
        &RunPaths::new(&cfg.output_dir, &cfg.name),
        &outcome,
        &mut run,
        &mut summary,
    )?;
    Ok(summary)
}

/// Runs the `[link.N]` transfers in order, persisting each link as soon as
/// it completes so a later failure leaves earlier links intact.
pub fn cmd_chain(cfg: &ExperimentConfig) -> CliResult<Summary> {
    if cfg.links.is_empty() {
        return Err(CliError::input("chain: the configuration has no [link.N] sections"));
    }
    let data = load_dataset(&cfg.dataset, Split::Train)?;
    let teacher = load_teacher(cfg, &data)?;
    let links: Vec<_> = cfg.links.iter().map(|l| (l.arch, l.train.clone())).collect();
    let mut summary = Summary::default();
    let mut parent = checkpoint::checksum(&teacher);
    let mut started = Instant::now();
    let result = train::run_chain_with(&links, &teacher, &data, cfg.noise, |i, outcome| {
        let link = &cfg.links[i];
        let paths = RunPaths::new(&cfg.output_dir, &format!("{}.link{}", cfg.name, i + 1));
        let mut run = vec![
            ("command", "chain".to_string()),
            ("link", (i + 1).to_string()),
            ("link_arch", link.arch.to_string()),
            ("seed", link.train.seed.to_string()),
            ("wall_seconds", started.elapsed().as_secs_f64().to_string()),
            ("teacher_checksum", parent.to_hex()),
        ];
        store_outcome(cfg, &paths, outcome, &mut run, &mut summary)
            .map_err(|e| crt_core::Error::State(e.to_string()))?;
        parent = checkpoint::checksum(&outcome.model);
        started = Instant::now();
        Ok(())
    });
    result.map_err(runtime)?;
    Ok(summary)
}

/// Options of the certify command beyond the configuration.
#[derive(Clone, Debug, Default)]
pub struct CertifyOptions {
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Stop after this many newly certified rows, leaving a resumable
    /// partial file (used to exercise resumption).
    pub stop_after: Option<usize>,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

/// Rows of an interrupted run that can be kept: the header must match and
/// each complete row must parse and carry the expected input index.
/// Returns the byte length of the valid prefix and the number of rows.
fn valid_prefix(bytes: &[u8], indices: &[usize]) -> (usize, usize) {
    let header_len = RECORDS_CSV_HEADER.len() + 1;
    if bytes.len() < header_len
        || &bytes[..header_len - 1] != RECORDS_CSV_HEADER.as_bytes()
        || bytes[header_len - 1] != b'\n'
    {
        return (0, 0);
    }
    let mut end = header_len;
    let mut rows = 0;
    while rows < indices.len() {
        let Some(nl) = bytes[end..].iter().position(|&b| b == b'\n') else {
            break;
        };
        let line = match std::str::from_utf8(&bytes[end..end + nl]) {
            Ok(l) => l,
            Err(_) => break,
        };
        match CertificationRecord::from_csv_row(line) {
            Ok(rec) if rec.input_index == indices[rows] => {}
            _ => break,
        }
        end += nl + 1;
        rows += 1;
    }
    (end, rows)
}

/// Certifies every `stride`-th test input, streaming rows to
/// `<records>.partial` and renaming it into place when complete. An
/// interrupted run with the same inputs resumes after its last complete row.
pub fn cmd_certify(cfg: &ExperimentConfig, opts: &CertifyOptions) -> CliResult<Summary> {
    let ckpt_path = opts
        .checkpoint
        .clone()
        .unwrap_or_else(|| RunPaths::new(&cfg.output_dir, &cfg.name).checkpoint);
    let model = load_model("checkpoint", &ckpt_path)?;
    let data = load_dataset(&cfg.dataset, Split::Test)?;
    check_compatible("checkpoint", &model, &data)?;
    if !(cfg.smoothing.sigma > 0.0) {
        return Err(CliError::field("noise.sigma", "certification needs sigma > 0"));
    }
    cfg.smoothing.validate().map_err(|e| CliError::field("smoothing", e))?;

    let out = opts.out.clone().unwrap_or_else(|| default_records_path(cfg));
    let partial = with_suffix(&out, ".partial");
    let key_path = with_suffix(&out, ".partial.key");
    let model_sum = checkpoint::checksum(&model);
    let indices: Vec<usize> = (0..data.len()).step_by(cfg.stride).collect();

    // Anything that changes the rows invalidates a partial file.
    let mut keyed = cfg.clone();
    keyed.workers = 1;
    keyed.output_dir = PathBuf::new();
    keyed.train = Default::default();
    keyed.links.clear();
    let key = hex::encode(Sha256::digest(format!("{}\n{}", keyed.to_text(), model_sum.to_hex())));

    let mut summary = Summary::default();
    let io_err = |e: std::io::Error| CliError::runtime(format!("cannot write {}: {e}", partial.display()));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let resume = fs::read_to_string(&key_path).map(|k| k.trim() == key).unwrap_or(false);
    let (keep_bytes, done) = if resume {
        valid_prefix(&fs::read(&partial).unwrap_or_default(), &indices)
    } else {
        (0, 0)
    };
    if done > 0 {
        summary
            .notes
            .push(format!("resuming {} after {done} complete rows", partial.display()));
    }
    let mut file = if keep_bytes > 0 {
        let f = OpenOptions::new().write(true).open(&partial).map_err(io_err)?;
        f.set_len(keep_bytes as u64).map_err(io_err)?;
        drop(f);
        OpenOptions::new().append(true).open(&partial).map_err(io_err)?
    } else {
        atomic_write(&key_path, key.as_bytes()).map_err(|e| CliError::runtime(e.to_string()))?;
        let mut f = File::create(&partial).map_err(io_err)?;
        writeln!(f, "{RECORDS_CSV_HEADER}").map_err(io_err)?;
        f
    };

    let started = Instant::now();
    let mut written = 0;
    let chunk = cfg.workers.max(1);
    for batch in indices[done..].chunks(chunk) {
        if opts.stop_after.is_some_and(|limit| written >= limit) {
            file.sync_all().map_err(io_err)?;
            summary.interrupted = true;
            summary.notes.push(format!(
                "stopped after {written} new rows; rerun to resume {}",
                partial.display()
            ));
            summary.files.push(partial);
            return Ok(summary);
        }
        let records = certify_rows(
            &model,
            data.inputs(),
            data.labels(),
            batch,
            &cfg.smoothing,
            cfg.certify_seed,
            cfg.workers,
        )
        .map_err(|e| CliError::runtime(format!("certification aborted: {e}")))?;
        for mut rec in records {
            if cfg.deterministic {
                rec.wall_seconds = 0.0;
            }
            writeln!(file, "{}", rec.to_csv_row()).map_err(io_err)?;
            written += 1;
        }
        file.flush().map_err(io_err)?;
    }
    file.sync_all().map_err(io_err)?;
    drop(file);
    fs::rename(&partial, &out).map_err(io_err)?;
    let _ = fs::remove_file(&key_path);

    let sigma_warning = if model.provenance.sigma != cfg.smoothing.sigma {
        format!(
            "checkpoint was trained at sigma={} but certified at sigma={}",
            model.provenance.sigma, cfg.smoothing.sigma
        )
    } else {
        String::new()
    };
    if !sigma_warning.is_empty() {
        summary.notes.push(format!("warning: {sigma_warning}"));
    }
    let run = vec![
        ("command", "certify".to_string()),
        ("seed", cfg.certify_seed.to_string()),
        ("checkpoint", ckpt_path.display().to_string()),
        ("checkpoint_checksum", model_sum.to_hex()),
        ("checkpoint_method", model.provenance.method.clone()),
        ("checkpoint_sigma", model.provenance.sigma.to_string()),
        ("chain_length", model.provenance.chain_length.to_string()),
        ("rows", indices.len().to_string()),
        ("resumed_rows", done.to_string()),
        ("wall_seconds", started.elapsed().as_secs_f64().to_string()),
        ("sigma_warning", sigma_warning),
    ];
    let manifest = with_suffix(&out, ".manifest");
    write_file(&manifest, manifest_text(cfg, &run).as_bytes())?;
    summary.files.extend([out, manifest]);
    Ok(summary)
}

/// Whether a report entry is the reference or the method compared to it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Baseline,
    Candidate,
}

/// One model in a report: its records and the timing files whose totals
/// add up to its training cost (e.g. teacher plus student).
#[derive(Clone, Debug, Default)]
pub struct ReportEntry {
    pub records: PathBuf,
    pub timings: Vec<PathBuf>,
    pub label: Option<String>,
    pub sigma: Option<f64>,
    pub role: Option<Role>,
}

impl ReportEntry {
    /// Parses `records=PATH[,timing=PATH]...[,label=NAME][,sigma=X][,role=baseline|candidate]`.
    pub fn parse(spec: &str) -> CliResult<Self> {
        let mut entry = ReportEntry::default();
        let mut records = None;
        for part in spec.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| CliError::input(format!("--run: expected key=value, got {part:?}")))?;
            match k.trim() {
                "records" => records = Some(PathBuf::from(v)),
                "timing" => entry.timings.push(PathBuf::from(v)),
                "label" => entry.label = Some(v.to_string()),
                "sigma" => {
                    entry.sigma = Some(
                        v.parse()
                            .map_err(|_| CliError::input(format!("--run: bad sigma {v:?}")))?,
                    )
                }
                "role" => {
                    entry.role = Some(match v {
                        "baseline" => Role::Baseline,
                        "candidate" => Role::Candidate,
                        _ => return Err(CliError::input(format!("--run: bad role {v:?}"))),
                    })
                }
                other => return Err(CliError::input(format!("--run: unknown key {other:?}"))),
            }
        }
        entry.records = records.ok_or_else(|| CliError::input("--run: records=PATH is required"))?;
        Ok(entry)
    }
}

/// Reads `key` from the `[section]` of a manifest, if present.
fn manifest_value(path: &Path, section: &str, key: &str) -> Option<String> {
    let text = fs::read_to_string(path).ok()?;
    let mut current = "";
    for line in text.lines().map(str::trim) {
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name;
        } else if current == section {
            if let Some((k, v)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(v.trim().to_string());
                }
            }
        }
    }
    None
}

/// Timing totals of the baseline/candidate pairs compared in a report.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub pairs: Vec<(String, f64, String, f64, f64)>,
    pub cumulative_savings: f64,
}

/// Pairs baselines with candidates (in order when the counts match, or the
/// single baseline with every candidate) and computes speedups and the
/// cumulative saving.
pub fn compare(labels: &[String], totals: &[f64], roles: &[Role]) -> CliResult<Option<Comparison>> {
    let base: Vec<usize> = (0..labels.len()).filter(|&i| roles[i] == Role::Baseline).collect();
    let cand: Vec<usize> = (0..labels.len()).filter(|&i| roles[i] == Role::Candidate).collect();
    if base.is_empty() || cand.is_empty() {
        return Ok(None);
    }
    let pairs: Vec<(usize, usize)> = if base.len() == cand.len() {
        base.iter().copied().zip(cand.iter().copied()).collect()
    } else if base.len() == 1 {
        cand.iter().map(|&c| (base[0], c)).collect()
    } else {
        return Err(CliError::input(format!(
            "cannot pair {} baselines with {} candidates",
            base.len(),
            cand.len()
        )));
    };
    let mut out = Vec::new();
    for &(b, c) in &pairs {
        let s = speedup_factor(totals[b], totals[c]).map_err(|e| {
            CliError::input(format!(
                "comparing {} with {}: {e} (are timing files missing?)",
                labels[b], labels[c]
            ))
        })?;
        out.push((labels[b].clone(), totals[b], labels[c].clone(), totals[c], s));
    }
    let b_totals: Vec<f64> = pairs.iter().map(|&(b, _)| totals[b]).collect();
    let c_totals: Vec<f64> = pairs.iter().map(|&(_, c)| totals[c]).collect();
    let savings = cumulative_savings(&b_totals, &c_totals).map_err(CliError::input)?;
    Ok(Some(Comparison {
        pairs: out,
        cumulative_savings: savings,
    }))
}

/// Builds one metrics report per entry and, with two or more entries, a
/// comparison block. Writes `<label>.report` (machine-readable) per entry
/// plus `report.txt` (table) and `comparison.txt` into `out_dir`.
pub fn cmd_report(entries: &[ReportEntry], out_dir: &Path, grid_step: f64) -> CliResult<Summary> {
    if entries.is_empty() {
        return Err(CliError::input("report: at least one --run is required"));
    }
    if !(grid_step > 0.0) {
        return Err(CliError::input(format!(
            "report: grid step must be > 0, got {grid_step}"
        )));
    }
    let mut reports: Vec<MetricsReport> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut totals = Vec::new();
    let mut warnings = Vec::new();
    for entry in entries {
        let records = read_records_csv(&entry.records)?;
        if records.is_empty() {
            return Err(CliError::input(format!("{}: no records", entry.records.display())));
        }
        let mut timings = Vec::new();
        let mut total = 0.0;
        let mut tags: Vec<String> = Vec::new();
        for t in &entry.timings {
            let rows = read_timing_csv(t)?;
            total += rows.iter().map(|r| r.wall_seconds).sum::<f64>();
            if let Some(first) = rows.first() {
                if !tags.contains(&first.method_tag) {
                    tags.push(first.method_tag.clone());
                }
            }
            timings.extend(rows);
        }
        let manifest = with_suffix(&entry.records, ".manifest");
        let sigma = entry
            .sigma
            .or_else(|| manifest_value(&manifest, "noise", "sigma").and_then(|v| v.parse().ok()))
            .unwrap_or(f64::NAN);
        let mut label = entry.label.clone().unwrap_or_else(|| {
            if tags.is_empty() {
                entry
                    .records
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "model".into())
            } else {
                tags.join("+")
            }
        });
        if labels.contains(&label) {
            label = format!("{label}#{}", labels.len() + 1);
        }
        if let Some(w) = manifest_value(&manifest, "run", "sigma_warning").filter(|w| !w.is_empty()) {
            warnings.push(format!("{label}: {w}"));
        }
        let meta = ReportMeta {
            method_tag: label.clone(),
            sigma,
            grid_step,
        };
        let mut report = build_report(&records, &timings, &meta).map_err(CliError::input)?;
        // Multi-file totals are the sum of per-file totals.
        report.total_train_seconds = total;
        reports.push(report);
        labels.push(label);
        totals.push(total);
    }

    let roles: Vec<Role> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| e.role.unwrap_or(if i == 0 { Role::Baseline } else { Role::Candidate }))
        .collect();
    let comparison = if entries.len() >= 2 {
        compare(&labels, &totals, &roles)?
    } else {
        None
    };

    let mut summary = Summary::default();
    let mut table = render_table(&reports);
    for w in &warnings {
        let _ = writeln!(table, "warning: {w}");
    }
    let mut machine = String::new();
    if let Some(cmp) = &comparison {
        let _ = writeln!(table, "\nComparison (training time)");
        for (b, bt, c, ct, s) in &cmp.pairs {
            let _ = writeln!(
                table,
                "  {c} vs {b}: {:.4} h vs {:.4} h, speedup {s:.2}x",
                ct / 3600.0,
                bt / 3600.0
            );
            let _ = writeln!(machine, "speedup.{c}.vs.{b}={s}");
        }
        let _ = writeln!(table, "  cumulative savings: {:.2}%", 100.0 * cmp.cumulative_savings);
        let _ = writeln!(machine, "cumulative_savings={}", cmp.cumulative_savings);
    }
    for (label, report) in labels.iter().zip(&reports) {
        let path = out_dir.join(format!("{}.report", sanitize(label)));
        write_file(&path, report.to_machine_text().as_bytes())?;
        summary.files.push(path);
    }
    let table_path = out_dir.join("report.txt");
    write_file(&table_path, table.as_bytes())?;
    summary.files.push(table_path);
    if comparison.is_some() {
        let path = out_dir.join("comparison.txt");
        write_file(&path, machine.as_bytes())?;
        summary.files.push(path);
    }
    summary.output = table;
    Ok(summary)
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.+".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}
