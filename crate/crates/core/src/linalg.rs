//! Matrix kernels: a strided GEMM wrapper and a one-sided Jacobi SVD.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `C ← alpha·A·B + beta·C` on strided row/column views.
///
/// `A` is `m×k` with strides `(rsa, csa)`, `B` is `k×n`, `C` is `m×n`.
/// Panics if any view reaches past the end of its slice.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let extent = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(extent(m, k, rsa, csa) <= a.len(), "gemm: A view out of bounds");
    assert!(extent(k, n, rsb, csb) <= b.len(), "gemm: B view out of bounds");
    assert!(extent(m, n, rsc, csc) <= c.len(), "gemm: C view out of bounds");
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Thin singular value decomposition `A = U · diag(S) · Vt`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `m × r`, orthonormal columns.
    pub u: Tensor,
    /// Non-negative, non-increasing, length `r = min(m, n)`.
    pub s: Vec<f64>,
    /// `r × n`, orthonormal rows.
    pub vt: Tensor,
}

impl Svd {
    /// `U_k · diag(S_k) · Vt_k` using the leading `k` singular triplets.
    pub fn reconstruct(&self, k: usize) -> Tensor {
        let m = self.u.shape()[0];
        let r = self.s.len();
        let n = self.vt.shape()[1];
        let k = k.min(r);
        let mut us = vec![0.0; m * k];
        for i in 0..m {
            for j in 0..k {
                us[i * k + j] = self.u.data()[i * r + j] * self.s[j];
            }
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &us, k, 1, self.vt.data(), n, 1, 0.0, &mut out, n, 1);
        Tensor::new(vec![m, n], out).expect("reconstruction shape")
    }
}

const SVD_TOL: f64 = 1e-12;

/// SVD by one-sided (Hestenes) Jacobi rotations.
///
/// Columns of the taller orientation are rotated pairwise until every pair is
/// orthogonal to `1e-12` relative; the sweep cap is `100·min(m, n)`.
pub fn svd(matrix: &Tensor) -> Result<Svd> {
    if matrix.rank() != 2 {
        return Err(Error::Shape(format!("svd needs a rank-2 tensor, got {:?}", matrix.shape())));
    }
    if matrix.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("svd input has non-finite entries".into()));
    }
    let (m, n) = (matrix.shape()[0], matrix.shape()[1]);
    if m >= n {
        let (u, s, v) = jacobi_tall(matrix.data(), m, n, false)?;
        Ok(Svd { u, s, vt: v.transpose()? })
    } else {
        // A^T = U' S V'^T, so A = V' S U'^T.
        let (u_t, s, v_t) = jacobi_tall(matrix.data(), n, m, true)?;
        Ok(Svd { u: v_t, s, vt: u_t.transpose()? })
    }
}

/// Jacobi SVD of a tall `m×n` matrix (`m ≥ n`). When `transposed` is set the
/// input slice holds the `n×m` transpose in row-major order.
/// Returns `(U: m×n, S, V: n×n)`.
fn jacobi_tall(src: &[f64], m: usize, n: usize, transposed: bool) -> Result<(Tensor, Vec<f64>, Tensor)> {
    // Column-major working copy: column j occupies cols[j*m .. (j+1)*m].
    let mut cols = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            cols[j * m + i] = if transposed { src[j * m + i] } else { src[i * n + j] };
        }
    }
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }

    let tol = SVD_TOL.max(m as f64 * f64::EPSILON);
    // Columns below this norm are roundoff; rotating them against each other never settles.
    let frob_sq: f64 = cols.iter().map(|x| x * x).sum();
    let scale = m.max(n) as f64 * f64::EPSILON;
    let negligible_sq = frob_sq * scale * scale;
    let max_sweeps = 100 * n.max(1);
    let mut converged = n <= 1;
    for _ in 0..max_sweeps {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let cp = &cols[p * m..(p + 1) * m];
                    let cq = &cols[q * m..(q + 1) * m];
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0
                    || alpha <= negligible_sq
                    || beta <= negligible_sq
                    || libm::fabs(gamma) <= tol * libm::sqrt(alpha * beta)
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = libm::copysign(1.0, zeta) / (libm::fabs(zeta) + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut cols, m, p, q, c, s);
                rotate(&mut v, n, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi SVD did not converge within {max_sweeps} sweeps on a {m}x{n} matrix"
        )));
    }

    let norms: Vec<f64> = (0..n)
        .map(|j| libm::sqrt(cols[j * m..(j + 1) * m].iter().map(|x| x * x).sum()))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap_or(core::cmp::Ordering::Equal));
    // Same scale as the rotation skip, so every kept column is fully orthogonalized.
    let cutoff = libm::sqrt(negligible_sq);

    let mut s = Vec::with_capacity(n);
    // U in column-major while being assembled.
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        if sigma > cutoff && sigma > 0.0 {
            s.push(sigma);
            u_cols.push(cols[j * m..(j + 1) * m].iter().map(|x| x / sigma).collect());
        } else {
            s.push(0.0);
            u_cols.push(Vec::new());
            missing.push(slot);
        }
    }
    complete_basis(&mut u_cols, &missing, m);

    let mut u = vec![0.0; m * n];
    for (slot, col) in u_cols.iter().enumerate() {
        for i in 0..m {
            u[i * n + slot] = col[i];
        }
    }
    let mut vmat = vec![0.0; n * n];
    for (slot, &j) in order.iter().enumerate() {
        for i in 0..n {
            vmat[i * n + slot] = v[j * n + i];
        }
    }
    Ok((Tensor::new(vec![m, n], u)?, s, Tensor::new(vec![n, n], vmat)?))
}

fn rotate(cols: &mut [f64], len: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q * len);
    let cp = &mut head[p * len..(p + 1) * len];
    let cq = &mut tail[..len];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills the empty columns listed in `missing` with unit vectors orthogonal to
/// every other column (Gram–Schmidt over the standard basis).
///
/// With k < m orthonormal columns the best standard basis vector keeps a
/// residual of at least `sqrt((m - k) / m)`, and a rejected candidate can only
/// lose more as columns are added, so a single forward scan with a `1/sqrt(2m)`
/// threshold always succeeds.
fn complete_basis(cols: &mut [Vec<f64>], missing: &[usize], m: usize) {
    let threshold = 1.0 / libm::sqrt(2.0 * m as f64);
    let mut candidate = 0;
    for &slot in missing {
        loop {
            assert!(candidate < m, "basis completion ran out of candidates");
            let mut w = vec![0.0; m];
            w[candidate] = 1.0;
            candidate += 1;
            // Two passes of classical Gram–Schmidt.
            for _ in 0..2 {
                for col in cols.iter().filter(|c| !c.is_empty()) {
                    let dot: f64 = col.iter().zip(&w).map(|(a, b)| a * b).sum();
                    for (wi, ci) in w.iter_mut().zip(col) {
                        *wi -= dot * ci;
                    }
                }
            }
            let norm = libm::sqrt(w.iter().map(|x| x * x).sum());
            if norm > threshold {
                w.iter_mut().for_each(|x| *x /= norm);
                cols[slot] = w;
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_singular_values() {
        let out = svd(&Tensor::eye(3)).unwrap();
        for s in &out.s {
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn rank_one_outer_product() {
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [2.0, 1.0, -1.0];
        let a = Tensor::from_fn(&[4, 3], |ix| u[ix[0]] * v[ix[1]]);
        let out = svd(&a).unwrap();
        let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((out.s[0] - nu * nv).abs() < 1e-12);
        assert!(out.s[1..].iter().all(|&s| s.abs() < 1e-12));
    }

    #[test]
    fn zero_matrix_gives_identity_blocks() {
        let out = svd(&Tensor::zeros(&[4, 3])).unwrap();
        assert_eq!(out.s, vec![0.0; 3]);
        let utu = out.u.transpose().unwrap().matmul(&out.u).unwrap();
        assert!(utu.max_abs_diff(&Tensor::eye(3)) < 1e-15);
        let vvt = out.vt.matmul(&out.vt.transpose().unwrap()).unwrap();
        assert!(vvt.max_abs_diff(&Tensor::eye(3)) < 1e-15);
    }

    #[test]
    fn wide_matrix() {
        let a = Tensor::new(vec![2, 3], vec![3., 2., 2., 2., 3., -2.]).unwrap();
        let out = svd(&a).unwrap();
        // Known spectrum: 5 and 3.
        assert!((out.s[0] - 5.0).abs() < 1e-12);
        assert!((out.s[1] - 3.0).abs() < 1e-12);
        assert!(out.reconstruct(2).max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let a = Tensor::new(vec![1, 2], vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(svd(&a), Err(Error::Numerical(_))));
    }
}
