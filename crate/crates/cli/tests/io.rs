use std::fs;
use std::path::Path;

use mponet::archive::{ArchiveInfo, ModelArchive};
use mponet::idx::{
    encode_labels, load_idx_images, load_idx_labels, load_split, parse_images, parse_labels, write_idx_images,
    write_idx_labels, IdxImages,
};
use mponet::CliError;
use mponet_core::{build_fc2, build_lenet5, evaluate, DatasetSplit, Variant};

fn sample_images(count: usize, rows: usize, cols: usize) -> IdxImages {
    let pixels = (0..count * rows * cols).map(|v| (v * 31 % 256) as u8).collect();
    IdxImages { count, rows, cols, pixels }
}

fn is_format(r: Result<impl std::fmt::Debug, CliError>) -> bool {
    matches!(r, Err(CliError::Format { .. }))
}

#[test]
fn idx_round_trip_plain_and_gzip() {
    let dir = tempfile::tempdir().unwrap();
    let images = sample_images(7, 5, 4);
    let labels: Vec<u8> = (0..7).map(|v| (v * 3 % 10) as u8).collect();
    for suffix in ["", ".gz"] {
        let ip = dir.path().join(format!("img{suffix}"));
        let lp = dir.path().join(format!("lab{suffix}"));
        write_idx_images(&ip, &images).unwrap();
        write_idx_labels(&lp, &labels).unwrap();
        assert_eq!(load_idx_images(&ip).unwrap(), images);
        assert_eq!(load_idx_labels(&lp).unwrap(), labels);
    }
    let gz = fs::read(dir.path().join("img.gz")).unwrap();
    assert_eq!(&gz[..2], &[0x1f, 0x8b]);
}

#[test]
fn hand_built_label_fixture() {
    let bytes = [0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x03, 0x00, 0x05, 0x09];
    let p = Path::new("fixture");
    assert_eq!(parse_labels(p, &bytes).unwrap(), vec![0, 5, 9]);
    assert_eq!(encode_labels(&[0, 5, 9]), bytes);
}

#[test]
fn idx_errors() {
    let p = Path::new("x");
    assert!(is_format(parse_labels(p, &[])));
    assert!(is_format(parse_images(p, &[])));
    // a label file handed to the image parser
    assert!(is_format(parse_images(p, &encode_labels(&[1, 2]))));
    let mut bad_label = encode_labels(&[1, 2]);
    bad_label[9] = 10;
    assert!(is_format(parse_labels(p, &bad_label)));

    let mut img = mponet::idx::encode_images(&sample_images(2, 3, 3));
    img.truncate(img.len() - 4);
    match parse_images(p, &img) {
        Err(CliError::Format { message, .. }) => {
            assert!(message.contains("expected 18 bytes, got 14"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    assert!(is_format(parse_images(p, &img[..10])));
}

#[test]
fn split_loading_normalizes_and_checks_counts() {
    let dir = tempfile::tempdir().unwrap();
    let ip = dir.path().join("i");
    let lp = dir.path().join("l");
    write_idx_images(&ip, &IdxImages { count: 2, rows: 1, cols: 2, pixels: vec![0, 255, 51, 102] }).unwrap();
    write_idx_labels(&lp, &[4, 7]).unwrap();
    let split = load_split(&ip, &lp).unwrap();
    assert_eq!(split.pixels(), &[0.0, 1.0, 0.2, 0.4]);
    assert_eq!(split.labels(), &[4, 7]);
    write_idx_labels(&lp, &[4]).unwrap();
    assert!(is_format(load_split(&ip, &lp)));
}

fn info() -> ArchiveInfo {
    ArchiveInfo { architecture: "fc2".into(), variant: "mpo".into(), seed: 3, config_hash: "abc".into() }
}

#[test]
fn archive_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for net in [
        build_fc2(Variant::Mpo { bond_dim: Some(4) }, 1).unwrap(),
        build_fc2(Variant::Dense, 2).unwrap(),
        build_lenet5(Variant::Mpo { bond_dim: None }, 3).unwrap(),
        build_lenet5(Variant::Dense, 4).unwrap(),
    ] {
        let a = ModelArchive::new(net.clone(), info());
        let p = dir.path().join("m.bin");
        a.save(&p).unwrap();
        let first = fs::read(&p).unwrap();
        let b = ModelArchive::load(&p).unwrap();
        assert_eq!(b.network, net);
        assert_eq!(b.manifest, a.manifest);
        b.save(&p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), first);
        let declared: usize = b.manifest.tensors.iter().map(|t| 8 * t.shape.iter().product::<usize>()).sum();
        assert_eq!(declared as u64, b.manifest.payload_bytes);
    }
}

#[test]
fn archive_detects_corruption() {
    let net = build_fc2(Variant::Mpo { bond_dim: Some(2) }, 5).unwrap();
    let bytes = ModelArchive::new(net, info()).to_bytes();
    let p = Path::new("m.bin");
    assert!(ModelArchive::from_bytes(p, &bytes).is_ok());

    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 0x01;
    assert!(is_format(ModelArchive::from_bytes(p, &flipped)));
    assert!(is_format(ModelArchive::from_bytes(p, &bytes[..bytes.len() - 8])));
    assert!(is_format(ModelArchive::from_bytes(p, &bytes[..20])));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(is_format(ModelArchive::from_bytes(p, &magic)));

    // A manifest whose tensor list disagrees with its layers.
    let mut a = ModelArchive::from_bytes(p, &bytes).unwrap();
    a.manifest.tensors.swap(0, 1);
    assert!(is_format(ModelArchive::from_bytes(p, &a.to_bytes())));
}

#[test]
fn densified_archive_evaluates_identically() {
    let pixels: Vec<u8> = (0..30 * 784).map(|v| (v * 7 % 256) as u8).collect();
    let labels: Vec<u8> = (0..30).map(|v| (v % 10) as u8).collect();
    let split = DatasetSplit::from_bytes(28, 28, &pixels, labels).unwrap();
    let net = build_fc2(Variant::Mpo { bond_dim: Some(4) }, 9).unwrap();
    let dense = ModelArchive::from_bytes(Path::new("d"), &ModelArchive::new(net.densified().unwrap(), info()).to_bytes())
        .unwrap()
        .network;
    assert_eq!(evaluate(&net, &split).unwrap(), evaluate(&dense, &split).unwrap());
}
