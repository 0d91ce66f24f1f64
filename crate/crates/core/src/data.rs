//! In-memory image datasets, seeded batching and rank-χ image truncation.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, usage_err, Error, Result};
use crate::linalg::svd;
use crate::network::one_hot;
use crate::tensor::Tensor;

/// Number of digit classes.
pub const CLASSES: usize = 10;

/// Grey-scale images with integer labels. Pixels are stored row-major per image.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    rows: usize,
    cols: usize,
    images: Vec<f64>,
    labels: Vec<u8>,
}

/// One mini-batch in feature-major layout.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[1, rows, cols, B]`.
    pub images: Tensor,
    /// One-hot `[10, B]`.
    pub targets: Tensor,
    pub labels: Vec<u8>,
}

impl DatasetSplit {
    pub fn new(rows: usize, cols: usize, images: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let per = rows * cols;
        if per == 0 || images.len() != per * labels.len() {
            return Err(shape_err!(
                "{} pixels for {} images of {}x{}",
                images.len(),
                labels.len(),
                rows,
                cols
            ));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= CLASSES) {
            return Err(usage_err!("label {} outside 0..{}", l, CLASSES));
        }
        if images.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite pixel value".into()));
        }
        Ok(DatasetSplit { rows, cols, images, labels })
    }

    /// Normalizes raw bytes to `[0, 1]` by dividing by 255.
    pub fn from_bytes(rows: usize, cols: usize, pixels: &[u8], labels: Vec<u8>) -> Result<Self> {
        let images = pixels.iter().map(|&p| p as f64 / 255.0).collect();
        Self::new(rows, cols, images, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.images
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let per = self.rows * self.cols;
        &self.images[i * per..(i + 1) * per]
    }

    /// Image `i` as a `[rows, cols]` tensor.
    pub fn image_tensor(&self, i: usize) -> Tensor {
        Tensor::new(vec![self.rows, self.cols], self.image(i).to_vec()).expect("image shape")
    }

    /// The first `n` samples (all of them if `n` exceeds the length).
    pub fn head(&self, n: usize) -> DatasetSplit {
        let n = n.min(self.len());
        let per = self.rows * self.cols;
        DatasetSplit {
            rows: self.rows,
            cols: self.cols,
            images: self.images[..n * per].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Gathers the listed samples into a feature-major batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let b = indices.len();
        if b == 0 {
            return Err(usage_err!("empty batch"));
        }
        let per = self.rows * self.cols;
        let mut data = vec![0.0; per * b];
        for (col, &i) in indices.iter().enumerate() {
            for (p, &v) in self.image(i).iter().enumerate() {
                data[p * b + col] = v;
            }
        }
        let labels: Vec<u8> = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Batch {
            images: Tensor::new(vec![1, self.rows, self.cols, b], data)?,
            targets: one_hot(&labels, CLASSES)?,
            labels,
        })
    }

    /// Sample order for one epoch: a fresh shuffle determined by `(seed, epoch)`.
    pub fn epoch_order(&self, seed: u64, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        order
    }

    /// Shuffled mini-batches for `(seed, epoch)`; the last batch may be short.
    pub fn batches(&self, batch_size: usize, seed: u64, epoch: usize) -> Result<Batches<'_>> {
        if batch_size == 0 {
            return Err(usage_err!("batch size must be at least 1"));
        }
        Ok(Batches { split: self, order: self.epoch_order(seed, epoch), batch_size, next: 0 })
    }

    /// Every image replaced by its best rank-χ approximation.
    pub fn rank_truncated(&self, spec: TruncationSpec) -> Result<DatasetSplit> {
        let mut images = Vec::with_capacity(self.images.len());
        for i in 0..self.len() {
            images.extend_from_slice(rank_truncate(&self.image_tensor(i), spec)?.data());
        }
        DatasetSplit::new(self.rows, self.cols, images, self.labels.clone())
    }
}

/// Iterator returned by [`DatasetSplit::batches`].
pub struct Batches<'a> {
    split: &'a DatasetSplit,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl Batches<'_> {
    /// Sample indices of every batch, in order.
    pub fn index_batches(&self) -> Vec<Vec<usize>> {
        self.order.chunks(self.batch_size).map(|c| c.to_vec()).collect()
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let batch = self.split.batch(&self.order[self.next..end]).expect("indices are in range");
        self.next = end;
        Some(batch)
    }
}

/// Rank bound `χ` for [`rank_truncate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruncationSpec {
    chi: usize,
}

impl TruncationSpec {
    /// Requires `1 ≤ χ ≤ min(rows, cols)`.
    pub fn new(chi: usize, rows: usize, cols: usize) -> Result<Self> {
        if chi == 0 || chi > rows.min(cols) {
            return Err(usage_err!("chi = {} outside 1..={}", chi, rows.min(cols)));
        }
        Ok(TruncationSpec { chi })
    }

    pub fn chi(&self) -> usize {
        self.chi
    }
}

/// Best rank-χ approximation of an image (keeps the top-χ singular triplets).
pub fn rank_truncate(image: &Tensor, spec: TruncationSpec) -> Result<Tensor> {
    if image.rank() != 2 {
        return Err(shape_err!("rank truncation needs a matrix, got {:?}", image.shape()));
    }
    if spec.chi > image.shape()[0].min(image.shape()[1]) {
        return Err(usage_err!("chi = {} exceeds image dimensions {:?}", spec.chi, image.shape()));
    }
    Ok(svd(image)?.reconstruct(spec.chi))
}
