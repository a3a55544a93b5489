use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ndadam::data::{load_csv, load_idx, parse_csv, write_idx, DataError, Dataset};
use ndadam::harness::{run_observed, ExperimentConfig};
use ndadam::Tensor;

fn unit_interval_dataset(n: usize, dim: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let y = (0..n).map(|i| (i * 7) % classes).collect();
    Dataset::new(Tensor::matrix(n, dim, x).unwrap(), y, classes).unwrap()
}

#[test]
fn idx_round_trip_within_one_grey_level() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    let d = unit_interval_dataset(50, 12, 5, 1);
    write_idx(&d, 3, 4, &img, &lab).unwrap();
    let back = load_idx(&img, &lab).unwrap();
    assert_eq!(back.labels, d.labels);
    assert_eq!(back.features.shape(), d.features.shape());
    let worst = back
        .features
        .data()
        .iter()
        .zip(d.features.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1.0 / 255.0, "{worst}");
}

#[test]
fn truncated_idx_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    write_idx(&unit_interval_dataset(10, 4, 2, 2), 2, 2, &img, &lab).unwrap();
    let bytes = std::fs::read(&img).unwrap();
    std::fs::write(&img, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_idx(&img, &lab), Err(DataError::Truncated { .. })));
    std::fs::write(&img, [0u8, 0, 8, 1, 0, 0, 0, 0]).unwrap();
    assert!(matches!(load_idx(&img, &lab), Err(DataError::BadMagic { .. })));
}

#[test]
fn csv_with_and_without_header() {
    let a = parse_csv("x1,x2,label\n0.5,1.0,0\n-2,3,2\n").unwrap();
    let b = parse_csv("0.5,1.0,0\n-2,3,2\n").unwrap();
    assert_eq!(a, b);
    assert_eq!(a.labels, vec![0, 2]);
    assert_eq!(a.num_classes, 3);
    assert!(matches!(parse_csv("1,2,0\n1,0\n"), Err(DataError::Parse { line: 2, .. })));
    assert!(load_csv(Path::new("/nonexistent/data.csv")).is_err());
}

#[test]
fn idx_files_drive_a_run_from_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    write_idx(
        &unit_interval_dataset(60, 4, 3, 3),
        2,
        2,
        &dir.path().join("train-images"),
        &dir.path().join("train-labels"),
    )
    .unwrap();
    let config = ExperimentConfig::from_json(
        r#"{
            "dataset": {"kind": "idx", "images": "train-images", "labels": "train-labels",
                        "standardize": true},
            "model": {"hidden": [8]},
            "optimizer": {"kind": "nd_adam"},
            "schedule": {"epochs": 2, "batch_size": 16},
            "seed": 0
        }"#,
    )
    .unwrap();
    let r = run_observed(&config, dir.path(), |_, _| {}).unwrap();
    // 48 training rows in batches of 16, two epochs.
    assert_eq!(r.log.summary.steps, 6);
    assert!(r.log.summary.final_train_loss.is_finite());
}

#[test]
fn csv_files_drive_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("a,b,label\n");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..40 {
        let c = i % 2;
        text += &format!("{},{},{c}\n", c as f64 + rng.gen_range(-0.3..0.3), rng.gen_range(-1.0..1.0));
    }
    std::fs::write(dir.path().join("pts.csv"), text).unwrap();
    let config = ExperimentConfig::from_json(
        r#"{
            "dataset": {"kind": "csv", "path": "pts.csv", "test_fraction": 0.25},
            "model": {"hidden": [6]},
            "optimizer": {"kind": "sgd"},
            "schedule": {"epochs": 3, "batch_size": 10},
            "seed": 1
        }"#,
    )
    .unwrap();
    let r = run_observed(&config, dir.path(), |_, _| {}).unwrap();
    assert_eq!(r.log.epochs.len(), 3);
    assert_eq!(r.log.summary.steps, 9);
}
