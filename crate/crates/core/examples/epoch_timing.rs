//! Mean epoch time of each trainer on the desk-scale blob task.
//!
//! cargo run --release -p crt-core --example epoch_timing

use crt_core::data::{synth_blobs_split, DEFAULT_BLOB_SPREAD};
use crt_core::nn::{Preset, TrainConfig};
use crt_core::train::{crt_transfer, train_gaussian_aug, train_standard, EpochTiming, NoiseConfig};

fn mean(t: &[EpochTiming]) -> f64 {
    t.iter().map(|e| e.wall_seconds).sum::<f64>() / t.len() as f64
}

fn main() {
    let (train, _) = synth_blobs_split(3, 16, 500, 200, DEFAULT_BLOB_SPREAD, 7).unwrap();
    let cfg = TrainConfig::default();
    let noise = NoiseConfig { sigma: 0.25 };
    let teacher = train_gaussian_aug(Preset::SmallMlp, &train, &cfg, noise).unwrap().model;
    for spec in Preset::ALL {
        for round in 0..3 {
            let s = mean(&train_standard(spec, &train, &cfg).unwrap().timings);
            let g = mean(&train_gaussian_aug(spec, &train, &cfg, noise).unwrap().timings);
            let c = mean(&crt_transfer(&teacher, spec, &train, &cfg, noise).unwrap().timings);
            println!(
                "{spec:<10} round {round}: standard {:.3} ms, gaussian-aug x{:.3}, crt x{:.3}",
                1e3 * s,
                g / s,
                c / s
            );
        }
    }
}
