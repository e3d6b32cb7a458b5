//! Desk-scale transfer experiment on synthetic blobs: a Gaussian-augmented
//! small-mlp teacher, transferred to the larger presets, all certified.
//!
//! cargo run --release -p crt-core --example desk_transfer [spread] [n]

use std::time::Instant;

use crt_core::data::{synth_blobs_split, DEFAULT_BLOB_SPREAD};
use crt_core::metrics::{acr, certified_accuracy_at};
use crt_core::nn::{Model, Preset, TrainConfig};
use crt_core::smoothing::{certify_rows, SmoothingParams};
use crt_core::train::{clean_accuracy, crt_transfer, train_gaussian_aug, train_standard, NoiseConfig};

fn report(name: &str, model: &Model, test: &crt_core::data::DatasetHandle, n: u64) -> f64 {
    let params = SmoothingParams {
        n,
        ..SmoothingParams::with_sigma(0.25)
    };
    let idx: Vec<usize> = (0..test.len()).collect();
    let start = Instant::now();
    let recs = certify_rows(model, test.inputs(), test.labels(), &idx, &params, 0, 1).unwrap();
    println!(
        "{name:<24} clean(base)={:.3} smoothed={:.3} acc@0.25={:.3} acc@0.5={:.3} ACR={:.4} ({:.1}s)",
        clean_accuracy(model, test).unwrap(),
        certified_accuracy_at(&recs, 0.0).unwrap(),
        certified_accuracy_at(&recs, 0.25).unwrap(),
        certified_accuracy_at(&recs, 0.5).unwrap(),
        acr(&recs).unwrap(),
        start.elapsed().as_secs_f64()
    );
    acr(&recs).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let spread: f64 = args.get(1).map_or(DEFAULT_BLOB_SPREAD, |s| s.parse().unwrap());
    let n: u64 = args.get(2).map_or(10_000, |s| s.parse().unwrap());
    let (train, test) = synth_blobs_split(3, 16, 500, 200, spread, 7).unwrap();
    let cfg = TrainConfig::default();
    let noise = NoiseConfig { sigma: 0.25 };

    let std = train_standard(Preset::SmallMlp, &train, &cfg).unwrap();
    println!(
        "standard small-mlp clean test acc {:.3}",
        clean_accuracy(&std.model, &test).unwrap()
    );

    let teacher = train_gaussian_aug(Preset::SmallMlp, &train, &cfg, noise).unwrap();
    let t_acr = report("teacher small-mlp", &teacher.model, &test, n);
    for spec in [Preset::LargeMlp, Preset::SmallCnn] {
        let std_s = train_standard(spec, &train, &cfg).unwrap();
        let aug_s = train_gaussian_aug(spec, &train, &cfg, noise).unwrap();
        let out = crt_transfer(&teacher.model, spec, &train, &cfg, noise).unwrap();
        let s_acr = report(&format!("crt {spec}"), &out.model, &test, n);
        let mean = |t: &[crt_core::train::EpochTiming]| t.iter().map(|e| e.wall_seconds).sum::<f64>() / t.len() as f64;
        println!(
            "  ratio {:.3}; epoch s: standard {:.5} gauss {:.5} crt {:.5}; final loss {:.4}",
            s_acr / t_acr,
            mean(&std_s.timings),
            mean(&aug_s.timings),
            mean(&out.timings),
            out.final_loss
        );
    }
}
