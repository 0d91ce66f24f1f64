//! Dense row-major `f64` tensors.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{shape_err, Error, Result};
use crate::linalg::gemm;

/// A dense tensor of 64-bit reals stored in row-major order (last index fastest).
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        out[k] = out[k + 1] * shape[k + 1];
    }
    out
}

fn check_axes(rank: usize, axes: &[usize]) -> Result<()> {
    let mut seen = vec![false; rank];
    for &a in axes {
        if a >= rank {
            return Err(Error::Axis(alloc::format!("axis {a} out of range for rank {rank}")));
        }
        if seen[a] {
            return Err(Error::Axis(alloc::format!("axis {a} repeated")));
        }
        seen[a] = true;
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let size: usize = shape.iter().product();
        if size != data.len() {
            return Err(shape_err!(
                "shape {:?} holds {} elements but {} were given",
                shape,
                size,
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let size = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; size] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let size: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(size);
        for _ in 0..size {
            data.push(f(&idx));
            increment(&mut idx, shape);
        }
        Tensor { shape: shape.to_vec(), data }
    }

    /// Square identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            debug_assert!(i < n);
            acc * n + i
        })
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    /// Returns a copy with the same flat data under `new_shape`.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        self.clone().into_shape(new_shape)
    }

    /// Replaces the shape metadata without touching the data.
    pub fn into_shape(mut self, new_shape: &[usize]) -> Result<Tensor> {
        let size: usize = new_shape.iter().product();
        if size != self.data.len() {
            return Err(shape_err!(
                "cannot reshape {:?} ({} elements) into {:?} ({} elements)",
                self.shape,
                self.data.len(),
                new_shape,
                size
            ));
        }
        self.shape = new_shape.to_vec();
        Ok(self)
    }

    /// Axis permutation: output axis `k` is input axis `axes[k]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        if axes.len() != rank {
            return Err(Error::Axis(alloc::format!(
                "permutation of length {} for rank {}",
                axes.len(),
                rank
            )));
        }
        check_axes(rank, axes)?;
        if axes.iter().enumerate().all(|(k, &a)| k == a) {
            return Ok(self.clone());
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let gather: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        if rank == 0 || self.data.is_empty() {
            return Tensor::new(out_shape, self.data.clone());
        }
        // Innermost output axis is copied in a tight loop.
        let last = rank - 1;
        let inner_n = out_shape[last];
        let inner_stride = gather[last];
        let mut idx = vec![0usize; last];
        let outer: usize = out_shape[..last].iter().product();
        for _ in 0..outer {
            let base: usize = idx.iter().zip(&gather).map(|(i, s)| i * s).sum();
            data.extend((0..inner_n).map(|t| self.data[base + t * inner_stride]));
            increment(&mut idx, &out_shape[..last]);
        }
        Ok(Tensor { shape: out_shape, data })
    }

    /// Fuses `row_axes` into the row index and `col_axes` into the column
    /// index, each in row-major order of the listed axes.
    pub fn matricize(&self, row_axes: &[usize], col_axes: &[usize]) -> Result<Tensor> {
        if row_axes.len() + col_axes.len() != self.rank() {
            return Err(Error::Axis(alloc::format!(
                "row axes {:?} and column axes {:?} do not cover rank {}",
                row_axes,
                col_axes,
                self.rank()
            )));
        }
        let order: Vec<usize> = row_axes.iter().chain(col_axes).copied().collect();
        check_axes(self.rank(), &order)?;
        let rows: usize = row_axes.iter().map(|&a| self.shape[a]).product();
        let cols: usize = col_axes.iter().map(|&a| self.shape[a]).product();
        self.permute(&order)?.into_shape(&[rows, cols])
    }

    /// Tensor contraction over paired axes. The result's axes are the free
    /// axes of `self` followed by the free axes of `other`, in order.
    pub fn contract(&self, other: &Tensor, axes_self: &[usize], axes_other: &[usize]) -> Result<Tensor> {
        if axes_self.len() != axes_other.len() {
            return Err(shape_err!(
                "contracting {} axes against {}",
                axes_self.len(),
                axes_other.len()
            ));
        }
        check_axes(self.rank(), axes_self)?;
        check_axes(other.rank(), axes_other)?;
        for (&a, &b) in axes_self.iter().zip(axes_other) {
            if self.shape[a] != other.shape[b] {
                return Err(shape_err!(
                    "extent mismatch: axis {} has {} but axis {} has {}",
                    a,
                    self.shape[a],
                    b,
                    other.shape[b]
                ));
            }
        }
        let free_a: Vec<usize> = (0..self.rank()).filter(|k| !axes_self.contains(k)).collect();
        let free_b: Vec<usize> = (0..other.rank()).filter(|k| !axes_other.contains(k)).collect();
        let a = self.matricize(&free_a, axes_self)?;
        let b = other.matricize(axes_other, &free_b)?;
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &a.data, k, 1, &b.data, n, 1, 0.0, &mut out, n, 1);
        let out_shape: Vec<usize> = free_a
            .iter()
            .map(|&x| self.shape[x])
            .chain(free_b.iter().map(|&x| other.shape[x]))
            .collect();
        Tensor::new(out_shape, out)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(shape_err!("matmul needs rank-2 operands"));
        }
        self.contract(other, &[1], &[0])
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(shape_err!("transpose needs a rank-2 tensor, got rank {}", self.rank()));
        }
        self.permute(&[1, 0])
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.data.iter().zip(&other.data).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max)
    }
}

/// Advances a row-major multi-index; wraps to all zeros after the last one.
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn reshape_is_row_major() {
        let t = Tensor::new(vec![6], (1..=6).map(|v| v as f64).collect()).unwrap();
        let m = t.reshape(&[2, 3]).unwrap();
        assert_eq!(m.get(&[1, 2]), 6.0);
        let back = m.reshape(&[3, 2]).unwrap().reshape(&[6]).unwrap();
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn reshape_784_into_factors() {
        let t = seq(&[784]).reshape(&[4, 7, 7, 4]).unwrap();
        for i1 in 0..4 {
            for i2 in 0..7 {
                for i3 in 0..7 {
                    for i4 in 0..4 {
                        let flat = i1 * 196 + i2 * 28 + i3 * 4 + i4;
                        assert_eq!(t.get(&[i1, i2, i3, i4]), flat as f64);
                    }
                }
            }
        }
    }

    #[test]
    fn reshape_size_mismatch() {
        assert!(matches!(seq(&[6]).reshape(&[4]), Err(Error::Shape(_))));
    }

    #[test]
    fn permute_cases() {
        let t = seq(&[2, 3, 4]);
        assert_eq!(t.permute(&[0, 1, 2]).unwrap(), t);
        let m = seq(&[2, 3]);
        let mt = m.permute(&[1, 0]).unwrap();
        assert_eq!(mt.shape(), &[3, 2]);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(mt.get(&[j, i]), m.get(&[i, j]));
            }
        }
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.get(&[3, 1, 2]), t.get(&[1, 2, 3]));
        assert_eq!(p.permute(&[1, 2, 0]).unwrap(), t);
        assert!(matches!(t.permute(&[0, 0, 1]), Err(Error::Axis(_))));
        assert!(matches!(t.permute(&[0, 1]), Err(Error::Axis(_))));
        assert!(matches!(t.permute(&[0, 1, 3]), Err(Error::Axis(_))));
    }

    #[test]
    fn matricize_cases() {
        let m = seq(&[3, 4]);
        assert_eq!(m.matricize(&[0], &[1]).unwrap(), m);
        let t = seq(&[2, 2, 2]);
        let mat = t.matricize(&[0, 1], &[2]).unwrap();
        assert_eq!(mat.shape(), &[4, 2]);
        for i0 in 0..2 {
            for i1 in 0..2 {
                for i2 in 0..2 {
                    assert_eq!(mat.get(&[2 * i0 + i1, i2]), t.get(&[i0, i1, i2]));
                }
            }
        }
        assert!(matches!(t.matricize(&[0, 1], &[1]), Err(Error::Axis(_))));
        assert!(matches!(t.matricize(&[0], &[2]), Err(Error::Axis(_))));
    }

    #[test]
    fn matvec_and_identity_contractions() {
        let m = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let v = Tensor::new(vec![3], vec![1., 0., -1.]).unwrap();
        let y = m.contract(&v, &[1], &[0]).unwrap();
        assert_eq!(y.data(), &[-2.0, -2.0]);

        let t = seq(&[2, 3, 4]);
        let out = t.contract(&Tensor::eye(3), &[1], &[0]).unwrap();
        assert_eq!(out.shape(), &[2, 4, 3]);
        assert_eq!(out, t.permute(&[0, 2, 1]).unwrap());
    }

    #[test]
    fn contract_extent_mismatch() {
        let a = seq(&[2, 3]);
        let b = seq(&[4, 2]);
        assert!(matches!(a.contract(&b, &[1], &[0]), Err(Error::Shape(_))));
    }
}
