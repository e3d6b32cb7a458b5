mod oracles;

use crt_core::data::{
    decode_fixture, encode_fixture, parse_cifar10, parse_idx, read_fixture, synth_blobs, write_fixture, DatasetHandle,
    CIFAR_RECORD_LEN,
};
use crt_core::metrics::{
    accuracy_curve, acr, build_report, certified_accuracy_at, cumulative_savings, speedup_factor, MetricsReport,
    ReportMeta,
};
use crt_core::nn::Tensor;
use crt_core::smoothing::CertificationRecord;
use crt_core::train::EpochTiming;
use oracles::Lcg;

fn record(i: usize, radius: f64, correct: bool, abstain: bool) -> CertificationRecord {
    CertificationRecord {
        input_index: i,
        true_label: 1,
        prediction: if abstain {
            None
        } else if correct {
            Some(1)
        } else {
            Some(0)
        },
        radius: if abstain { 0.0 } else { radius },
        correct: correct && !abstain,
        wall_seconds: 0.01,
    }
}

fn random_records(lcg: &mut Lcg, n: usize) -> Vec<CertificationRecord> {
    (0..n)
        .map(|i| {
            let u = lcg.next_f64();
            record(i, 1.2 * lcg.next_f64(), u > 0.2, u < 0.1)
        })
        .collect()
}

#[test]
fn hand_computed_fixtures() {
    let recs = vec![
        record(0, 0.5, true, false),
        record(1, 0.25, true, false),
        record(2, 0.1, true, false),
        record(3, 0.0, false, true),
    ];
    assert_eq!(certified_accuracy_at(&recs, 0.25).unwrap(), 0.5);
    let recs = vec![
        record(0, 0.5, true, false),
        record(1, 0.25, true, false),
        record(2, 0.0, true, false),
        record(3, 0.0, false, true),
    ];
    assert_eq!(acr(&recs).unwrap(), 0.1875);
    let abstains: Vec<_> = (0..5).map(|i| record(i, 0.0, false, true)).collect();
    assert_eq!(acr(&abstains).unwrap(), 0.0);
    for r in [0.0, 0.25, 1.0] {
        assert_eq!(certified_accuracy_at(&abstains, r).unwrap(), 0.0);
    }
    assert!(acr(&[]).is_err());
    assert!(certified_accuracy_at(&[], 0.0).is_err());
}

#[test]
fn certified_accuracy_is_nonincreasing_and_acr_is_bounded() {
    let mut lcg = Lcg(3);
    for _ in 0..50 {
        let recs = random_records(&mut lcg, 200);
        let mut prev = 1.0;
        for k in 0..=60 {
            let a = certified_accuracy_at(&recs, k as f64 * 0.02).unwrap();
            assert!(a <= prev);
            prev = a;
        }
        let max_correct = recs.iter().filter(|r| r.correct).map(|r| r.radius).fold(0.0, f64::max);
        let v = acr(&recs).unwrap();
        assert!(v >= 0.0 && v <= max_correct);
    }
}

#[test]
fn acr_equals_the_area_under_the_accuracy_curve() {
    let mut lcg = Lcg(21);
    for _ in 0..20 {
        let recs = random_records(&mut lcg, 500);
        let step = 1e-3;
        let curve = accuracy_curve(&recs, step).unwrap();
        let mut area = 0.0;
        for w in curve.windows(2) {
            area += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
        }
        // The tail from the last positive grid point down to zero accuracy.
        let last = curve.last().unwrap();
        area += 0.5 * last.1 * step;
        let exact = acr(&recs).unwrap();
        assert!((area - exact).abs() <= 0.02 * exact, "area {area} vs acr {exact}");
    }
}

#[test]
fn report_curve_and_clean_accuracy() {
    let recs = vec![
        record(0, 0.9, true, false),
        record(1, 0.6, true, false),
        record(2, 0.3, false, false),
        record(3, 0.0, false, true),
    ];
    let timings = vec![EpochTiming {
        epoch_index: 0,
        wall_seconds: 2.0,
        method_tag: "crt".into(),
    }];
    let meta = ReportMeta {
        method_tag: "crt".into(),
        sigma: 0.25,
        grid_step: 0.25,
    };
    let rep = build_report(&recs, &timings, &meta).unwrap();
    let grid: Vec<f64> = rep.curve.iter().map(|(r, _)| *r).collect();
    assert_eq!(grid, [0.0, 0.25, 0.5, 0.75]);
    assert_eq!(rep.clean_accuracy, certified_accuracy_at(&recs, 0.0).unwrap());
    assert_eq!(rep.clean_accuracy, rep.curve[0].1);
    assert!(rep.degenerate_ci);
    assert_eq!(rep.epoch_ci95_half_width, 0.0);
    assert_eq!(MetricsReport::from_machine_text(&rep.to_machine_text()).unwrap(), rep);
}

#[test]
fn report_round_trips_with_arbitrary_values() {
    let mut lcg = Lcg(5);
    for _ in 0..100 {
        let recs = random_records(&mut lcg, 40);
        let timings: Vec<EpochTiming> = (0..7)
            .map(|i| EpochTiming {
                epoch_index: i,
                wall_seconds: lcg.next_f64() / 3.0,
                method_tag: "gaussian-aug".into(),
            })
            .collect();
        let meta = ReportMeta {
            method_tag: "gaussian-aug".into(),
            sigma: lcg.next_f64(),
            grid_step: 0.1,
        };
        let rep = build_report(&recs, &timings, &meta).unwrap();
        assert_eq!(MetricsReport::from_machine_text(&rep.to_machine_text()).unwrap(), rep);
    }
}

#[test]
fn published_timing_ratios() {
    assert!((speedup_factor(45.21, 4.80).unwrap() - 9.42).abs() < 0.01);
    assert!((speedup_factor(18.98, 10.07).unwrap() - 1.88).abs() < 0.01);
    assert_eq!(speedup_factor(3.0, 3.0).unwrap(), 1.0);
    assert!(speedup_factor(0.0, 1.0).is_err());
    let s = cumulative_savings(&[45.21, 35.60, 15.39], &[4.80, 3.46, 3.44]).unwrap();
    assert!((100.0 * s - 87.84).abs() < 0.01, "{s}");
}

fn small_dataset() -> DatasetHandle {
    let mut lcg = Lcg(1);
    let inputs = Tensor::from_vec(&[5, 2, 3], (0..30).map(|_| lcg.next_f64()).collect()).unwrap();
    DatasetHandle::new("tiny", inputs, vec![0, 1, 2, 1, 0], 3).unwrap()
}

#[test]
fn fixture_round_trip_is_bit_exact() {
    for ds in [small_dataset(), synth_blobs(4, 9, 10, 0.3, 2).unwrap()] {
        let back = decode_fixture(&encode_fixture(&ds)).unwrap();
        assert_eq!(back.name(), ds.name());
        assert_eq!(back.labels(), ds.labels());
        assert_eq!(back.num_classes(), ds.num_classes());
        assert_eq!(back.inputs().shape(), ds.inputs().shape());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.inputs()), bits(ds.inputs()));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub").join("tiny.crtdata");
    write_fixture(&path, &small_dataset()).unwrap();
    assert_eq!(
        encode_fixture(&read_fixture(&path).unwrap()),
        encode_fixture(&small_dataset())
    );
}

#[test]
fn truncated_or_corrupt_fixtures_are_rejected() {
    let bytes = encode_fixture(&small_dataset());
    for cut in [0, 4, 8, 20, bytes.len() - 1] {
        assert!(decode_fixture(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_fixture(&extra).is_err());
}

#[test]
fn loaders_reject_values_outside_unit_range() {
    let inputs = Tensor::from_vec(&[1, 2], vec![0.5, 1.5]).unwrap();
    assert!(DatasetHandle::new("bad", inputs, vec![0], 2).is_err());
    let inputs = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap();
    assert!(DatasetHandle::new("bad", inputs, vec![2], 2).is_err());
}

fn idx_pair(n: u32, label_count: u32, pixels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::new();
    for v in [0x803u32, n, 2, 2] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend_from_slice(pixels);
    let mut labels = Vec::new();
    labels.extend_from_slice(&0x801u32.to_be_bytes());
    labels.extend_from_slice(&label_count.to_be_bytes());
    labels.extend((0..label_count).map(|i| (i % 3) as u8));
    (images, labels)
}

#[test]
fn idx_scaling_and_errors() {
    let pixels: Vec<u8> = (0..40).map(|i| (i * 6) as u8).collect();
    let (images, labels) = idx_pair(10, 10, &pixels);
    let ds = parse_idx(&images, &labels).unwrap();
    assert_eq!(ds.inputs().shape(), &[10, 1, 2, 2]);
    for (v, b) in ds.inputs().data().iter().zip(&pixels) {
        assert_eq!(*v, f64::from(*b) / 255.0);
    }
    let (images, labels) = idx_pair(10, 9, &pixels);
    assert!(parse_idx(&images, &labels)
        .unwrap_err()
        .to_string()
        .contains("labels.count"));
    let (mut images, labels) = idx_pair(10, 10, &pixels);
    images[3] = 0x04;
    assert!(parse_idx(&images, &labels)
        .unwrap_err()
        .to_string()
        .contains("images.magic"));
    let (images, labels) = idx_pair(10, 10, &pixels[..39]);
    assert!(parse_idx(&images, &labels).is_err());
    // Absurd header dimensions must not overflow.
    let mut images = Vec::new();
    for v in [0x803u32, u32::MAX, u32::MAX, u32::MAX] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    assert!(parse_idx(&images, &labels).is_err());
}

#[test]
fn cifar_records() {
    let mut one = vec![7u8];
    one.extend((0..3072).map(|i| (i % 256) as u8));
    let ds = parse_cifar10(&one).unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!(ds.labels(), &[7]);
    assert_eq!(ds.inputs().shape(), &[1, 3, 32, 32]);
    let ten: Vec<u8> = (0..10).flat_map(|_| one.clone()).collect();
    assert_eq!(ten.len(), 10 * CIFAR_RECORD_LEN);
    assert_eq!(parse_cifar10(&ten).unwrap().len(), 10);
    let mut bad = one.clone();
    bad.push(0);
    assert!(parse_cifar10(&bad).is_err());
}

#[test]
fn synthetic_blobs_are_deterministic_and_separable_without_spread() {
    let a = synth_blobs(3, 5, 20, 0.2, 9).unwrap();
    let b = synth_blobs(3, 5, 20, 0.2, 9).unwrap();
    assert_eq!(encode_fixture(&a), encode_fixture(&b));
    assert!(a.inputs().data().iter().all(|v| (0.0..=1.0).contains(v)));

    let tight = synth_blobs(4, 6, 25, 1e-9, 3).unwrap();
    let centers: Vec<Vec<f64>> = (0..4)
        .map(|k| {
            let rows: Vec<usize> = (0..tight.len()).filter(|&i| tight.labels()[i] == k).collect();
            (0..6)
                .map(|j| rows.iter().map(|&i| tight.input(i)[j]).sum::<f64>() / rows.len() as f64)
                .collect()
        })
        .collect();
    for i in 0..tight.len() {
        let x = tight.input(i);
        let dist = |c: &Vec<f64>| c.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let nearest = (0..4)
            .min_by(|&a, &b| dist(&centers[a]).total_cmp(&dist(&centers[b])))
            .unwrap();
        assert_eq!(nearest, tight.labels()[i]);
    }
    assert!(synth_blobs(1, 5, 10, 0.2, 0).is_err());
    assert!(synth_blobs(3, 5, 10, 0.0, 0).is_err());
}
