use std::path::PathBuf;

use mdrnn::data::{load_labels, load_mnist, IdxFile, BACKGROUND_CLASS, MNIST_CLASSES};

fn subset() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-subset")
}

#[test]
fn subset_headers() {
    let images = IdxFile::read(&subset().join("images-idx3-ubyte")).unwrap();
    assert_eq!(images.dims, vec![2000, 28, 28]);
    let labels = load_labels(&subset().join("labels-idx1-ubyte")).unwrap();
    assert_eq!(labels.len(), 2000);
    assert!(labels.iter().all(|&d| d <= 9));
}

#[test]
fn foreground_count_matches_nonzero_bytes() {
    let dir = subset();
    let raw = IdxFile::read(&dir.join("images-idx3-ubyte")).unwrap();
    let labels = load_labels(&dir.join("labels-idx1-ubyte")).unwrap();
    let samples = load_mnist(
        &dir.join("images-idx3-ubyte"),
        &dir.join("labels-idx1-ubyte"),
        0.0,
        Some(50),
    )
    .unwrap();
    // image 0 plus the first 5 in the file
    let five = labels.iter().position(|&d| d == 5).unwrap();
    for i in [0, five] {
        let bytes = &raw.payload[i * 784..(i + 1) * 784];
        let nonzero = bytes.iter().filter(|&&b| b != 0).count();
        let fg = samples[i]
            .targets
            .labels()
            .iter()
            .filter(|&&l| l != BACKGROUND_CLASS)
            .count();
        assert_eq!(fg, nonzero, "image {i}");
        assert!(nonzero > 0);
    }
}

#[test]
fn digit_is_the_unique_foreground_label() {
    let dir = subset();
    let samples = load_mnist(
        &dir.join("images-idx3-ubyte"),
        &dir.join("labels-idx1-ubyte"),
        0.0,
        None,
    )
    .unwrap();
    for (i, s) in samples.iter().enumerate() {
        assert_eq!(s.targets.num_classes(), MNIST_CLASSES);
        let mut fg = s
            .targets
            .labels()
            .iter()
            .filter(|&&l| l != BACKGROUND_CLASS);
        let first = *fg.next().expect("every digit has ink");
        assert!(fg.all(|&l| l == first), "image {i}");
        assert_eq!(Some(first), s.digit);
    }
}

#[test]
fn subset_round_trips_byte_for_byte() {
    let path = subset().join("labels-idx1-ubyte");
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(IdxFile::parse(&bytes).unwrap().to_bytes(), bytes);
    let path = subset().join("images-idx3-ubyte");
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(IdxFile::parse(&bytes).unwrap().to_bytes(), bytes);
}
