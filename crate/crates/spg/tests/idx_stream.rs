use std::fs;
use std::path::Path;

use spg::config::RunConfig;
use spg::error::IdxError;
use spg::idx::{encode_images, encode_labels, load_idx};

fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, bytes).unwrap();
    p
}

#[test]
fn two_images_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..18).map(|i| (i * 15) as u8).collect();
    let img = write(dir.path(), "img", &encode_images(3, 3, &pixels));
    let lab = write(dir.path(), "lab", &encode_labels(&[4, 9]));
    let (x, y) = load_idx(&img, &lab).unwrap();
    assert_eq!((x.rows(), x.cols()), (2, 9));
    for (v, &p) in x.as_slice().iter().zip(&pixels) {
        assert_eq!(*v, p as f64 / 255.0);
    }
    assert_eq!(y, vec![4, 9]);
}

#[test]
fn error_paths_are_structured() {
    let dir = tempfile::tempdir().unwrap();
    let good = encode_images(2, 2, &[1, 2, 3, 4, 5, 6, 7, 8]);
    let lab = write(dir.path(), "lab", &encode_labels(&[0, 1]));

    let mut magic = good.clone();
    magic[3] = 0x02;
    let img = write(dir.path(), "magic", &magic);
    match load_idx(&img, &lab) {
        Err(IdxError::BadMagic { path, expected: 0x803, found: 0x802 }) => assert_eq!(path, img),
        other => panic!("{other:?}"),
    }

    let img = write(dir.path(), "short", &good[..good.len() - 1]);
    assert!(matches!(load_idx(&img, &lab), Err(IdxError::Truncated { expected: 24, actual: 23, .. })));
    let img = write(dir.path(), "header", &good[..10]);
    assert!(matches!(load_idx(&img, &lab), Err(IdxError::Truncated { expected: 16, actual: 10, .. })));

    let mut long = good.clone();
    long.push(0);
    let img = write(dir.path(), "long", &long);
    assert!(matches!(load_idx(&img, &lab), Err(IdxError::TrailingBytes { extra: 1, .. })));

    let img = write(dir.path(), "img", &good);
    let three = write(dir.path(), "three", &encode_labels(&[0, 1, 2]));
    assert!(matches!(load_idx(&img, &three), Err(IdxError::CountMismatch { images: 2, labels: 3 })));
    assert!(matches!(load_idx(&dir.path().join("none"), &lab), Err(IdxError::Io { .. })));
}

#[test]
fn idx_stream_from_relative_config_paths() {
    let dir = tempfile::tempdir().unwrap();
    let n = 40;
    let pixels: Vec<u8> = (0..n * 4).map(|i| (i * 7 % 256) as u8).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 4) as u8).collect();
    write(dir.path(), "train-images.idx", &encode_images(2, 2, &pixels));
    write(dir.path(), "train-labels.idx", &encode_labels(&labels));
    let cfg_text = r#"{
        "stream": {"kind": "idx", "images": "train-images.idx", "labels": "train-labels.idx", "n_tasks": 2},
        "hidden": [4],
        "methods": ["NCL"],
        "train": {"lr": 0.1, "epochs": 1, "batch_size": 4, "patience": 1},
        "seeds": [0]
    }"#;
    let cfg_path = write(dir.path(), "cfg.json", cfg_text.as_bytes());
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let s = cfg.stream.build(0).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s.input_dim(), 4);
    let total: usize = s.tasks.iter().map(|t| t.train.len() + t.val.len() + t.test.len()).sum();
    assert_eq!(total, n);
    assert!(s.tasks.iter().all(|t| t.num_classes == 2));
}
