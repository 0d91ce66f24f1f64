//! Big-endian IDX containers as used by MNIST, optionally gzip-compressed.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use mponet_core::data::CLASSES;
use mponet_core::DatasetSplit;

use crate::error::{CliError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw unsigned-byte images, row-major per image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// File contents, decompressed when the name ends in `.gz`.
fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if !is_gz(path) {
        return Ok(raw);
    }
    let mut out = Vec::new();
    GzDecoder::new(raw.as_slice())
        .read_to_end(&mut out)
        .map_err(|e| CliError::format(path, format!("gzip stream: {e}")))?;
    Ok(out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let data = if is_gz(path) {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).and_then(|_| enc.finish()).map_err(|e| CliError::io(path, e))?
    } else {
        bytes.to_vec()
    };
    fs::write(path, data).map_err(|e| CliError::io(path, e))
}

/// Checks the magic and returns the `dims` header fields plus the payload.
fn parse_header<'a>(path: &Path, bytes: &'a [u8], magic: u32, dims: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let header = 4 * (1 + dims);
    if bytes.is_empty() {
        return Err(CliError::format(path, "empty file"));
    }
    if bytes.len() < 4 {
        return Err(CliError::format(path, format!("truncated header: expected {header} bytes, got {}", bytes.len())));
    }
    let found = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if found != magic {
        return Err(CliError::format(path, format!("bad magic 0x{found:08x}, expected 0x{magic:08x}")));
    }
    if bytes.len() < header {
        return Err(CliError::format(path, format!("truncated header: expected {header} bytes, got {}", bytes.len())));
    }
    let fields = (0..dims)
        .map(|k| u32::from_be_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize)
        .collect();
    Ok((fields, &bytes[header..]))
}

fn check_payload(path: &Path, payload: &[u8], expected: usize) -> Result<()> {
    if payload.len() != expected {
        let kind = if payload.len() < expected { "truncated" } else { "oversized" };
        return Err(CliError::format(
            path,
            format!("{kind} payload: expected {expected} bytes, got {}", payload.len()),
        ));
    }
    Ok(())
}

pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<IdxImages> {
    let (dims, payload) = parse_header(path, bytes, IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    check_payload(path, payload, count * rows * cols)?;
    Ok(IdxImages { count, rows, cols, pixels: payload.to_vec() })
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let (dims, payload) = parse_header(path, bytes, LABELS_MAGIC, 1)?;
    check_payload(path, payload, dims[0])?;
    if let Some(pos) = payload.iter().position(|&l| l as usize >= CLASSES) {
        return Err(CliError::format(path, format!("label {} at index {pos} outside 0..=9", payload[pos])));
    }
    Ok(payload.to_vec())
}

pub fn load_idx_images(path: &Path) -> Result<IdxImages> {
    parse_images(path, &read_bytes(path)?)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_labels(path, &read_bytes(path)?)
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx_images(path: &Path, images: &IdxImages) -> Result<()> {
    write_bytes(path, &encode_images(images))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    write_bytes(path, &encode_labels(labels))
}

/// Loads a normalized split from an image file and a label file.
pub fn load_split(images: &Path, labels: &Path) -> Result<DatasetSplit> {
    let img = load_idx_images(images)?;
    let lab = load_idx_labels(labels)?;
    if img.count != lab.len() {
        return Err(CliError::format(
            labels,
            format!("{} labels for {} images in {}", lab.len(), img.count, images.display()),
        ));
    }
    Ok(DatasetSplit::from_bytes(img.rows, img.cols, &img.pixels, lab)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// `<dir>/<prefix>-<kind>-idx<n>-ubyte`, or the same name with `.gz`.
fn resolve(dir: &Path, split: Split, kind: &str, rank: u8) -> Result<PathBuf> {
    let base = format!("{}-{kind}-idx{rank}-ubyte", split.prefix());
    for name in [base.clone(), format!("{base}.gz")] {
        let p = dir.join(&name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(CliError::Usage(format!("{base}[.gz] not found in {}", dir.display())))
}

/// Standard MNIST file names inside `dir`.
pub fn split_paths(dir: &Path, split: Split) -> Result<(PathBuf, PathBuf)> {
    Ok((resolve(dir, split, "images", 3)?, resolve(dir, split, "labels", 1)?))
}

pub fn load_mnist_split(dir: &Path, split: Split) -> Result<DatasetSplit> {
    let (images, labels) = split_paths(dir, split)?;
    load_split(&images, &labels)
}
