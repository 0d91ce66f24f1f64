//! Matrix product operator linear layers.
//!
//! A layer maps `x ∈ R^{N_x}` to `y = W·x + b ∈ R^{N_y}` where the input and
//! output indices are split row-major as `x ↔ (i_1 … i_n)`, `y ↔ (j_1 … j_n)`
//! and
//!
//! ```text
//! W[j_1…j_n, i_1…i_n] = w1[j_1,i_1] · w2[j_2,i_2] ⋯ wn[j_n,i_n]
//! ```
//!
//! with `wk[j,i]` a `D_{k-1} × D_k` matrix and `D_0 = D_n = 1`. Core `k` is
//! stored as a `[D_{k-1}, J_k, I_k, D_k]` tensor.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, usage_err, Error, Result};
use crate::linalg::gemm;
use crate::tensor::Tensor;

/// Densification refuses operators with more elements than this.
pub const DENSE_CAPACITY: usize = 100_000_000;

/// Bond dimensions for [`MpoStructure::new`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BondDims {
    /// The same `D` on every interior bond.
    Uniform(usize),
    /// Either the `n-1` interior bonds or all `n+1` bonds with both ends `1`.
    PerBond(Vec<usize>),
}

impl From<usize> for BondDims {
    fn from(d: usize) -> Self {
        BondDims::Uniform(d)
    }
}

impl From<Vec<usize>> for BondDims {
    fn from(d: Vec<usize>) -> Self {
        BondDims::PerBond(d)
    }
}

/// Shape of an MPO: output factors `J`, input factors `I`, bonds `D_0..D_n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MpoStructure {
    output_dims: Vec<usize>,
    input_dims: Vec<usize>,
    bond_dims: Vec<usize>,
}

impl MpoStructure {
    pub fn new(output_dims: Vec<usize>, input_dims: Vec<usize>, bonds: impl Into<BondDims>) -> Result<Self> {
        let n = output_dims.len();
        if n == 0 {
            return Err(Error::Structure("an MPO needs at least one core".into()));
        }
        if input_dims.len() != n {
            return Err(Error::Structure(format!(
                "{} output factors but {} input factors",
                n,
                input_dims.len()
            )));
        }
        if output_dims.iter().chain(&input_dims).any(|&d| d == 0) {
            return Err(Error::Structure("factor dimensions must be positive".into()));
        }
        let bond_dims = match bonds.into() {
            BondDims::Uniform(d) => {
                if d == 0 && n > 1 {
                    return Err(Error::Structure("bond dimension must be positive".into()));
                }
                let mut b = vec![d; n + 1];
                b[0] = 1;
                b[n] = 1;
                b
            }
            BondDims::PerBond(list) => {
                let full = if list.len() + 1 == n {
                    let mut b = Vec::with_capacity(n + 1);
                    b.push(1);
                    b.extend_from_slice(&list);
                    b.push(1);
                    b
                } else if list.len() == n + 1 {
                    if list[0] != 1 || list[n] != 1 {
                        return Err(Error::Structure(format!(
                            "boundary bonds must be 1, got {} and {}",
                            list[0], list[n]
                        )));
                    }
                    list
                } else {
                    return Err(Error::Structure(format!(
                        "{} bond dimensions for {} cores (expected {} or {})",
                        list.len(),
                        n,
                        n - 1,
                        n + 1
                    )));
                };
                if full.contains(&0) {
                    return Err(Error::Structure("bond dimensions must be positive".into()));
                }
                full
            }
        };
        Ok(MpoStructure { output_dims, input_dims, bond_dims })
    }

    /// Number of cores `n`.
    pub fn n(&self) -> usize {
        self.output_dims.len()
    }

    pub fn output_dims(&self) -> &[usize] {
        &self.output_dims
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    /// All `n+1` bond dimensions, `D_0 = D_n = 1`.
    pub fn bond_dims(&self) -> &[usize] {
        &self.bond_dims
    }

    /// `N_x = Π I_k`.
    pub fn input_size(&self) -> usize {
        self.input_dims.iter().product()
    }

    /// `N_y = Π J_k`.
    pub fn output_size(&self) -> usize {
        self.output_dims.iter().product()
    }

    /// Shape of core `k` (0-based): `[D_k, J_{k+1}, I_{k+1}, D_{k+1}]`.
    pub fn core_shape(&self, k: usize) -> [usize; 4] {
        [self.bond_dims[k], self.output_dims[k], self.input_dims[k], self.bond_dims[k + 1]]
    }

    /// Trainable weights in the cores, `Σ_k D_{k-1}·J_k·I_k·D_k`. Bias excluded.
    pub fn param_count(&self) -> usize {
        (0..self.n()).map(|k| self.core_shape(k).iter().product::<usize>()).sum()
    }

    /// Weights of the dense matrix this MPO replaces, `N_x·N_y`.
    pub fn dense_param_count(&self) -> usize {
        self.input_size() * self.output_size()
    }
}

impl fmt::Display for MpoStructure {
    /// `M^{J_1,…,J_n}_{I_1,…,I_n}(D)`, with `D` a list when bonds differ.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[usize]| v.iter().map(|d| format!("{d}")).collect::<Vec<String>>().join(",");
        write!(f, "M^{{{}}}_{{{}}}", join(&self.output_dims), join(&self.input_dims))?;
        let interior = &self.bond_dims[1..self.n()];
        match interior.first() {
            None => Ok(()),
            Some(&d) if interior.iter().all(|&x| x == d) => write!(f, "({d})"),
            Some(_) => write!(f, "({})", join(interior)),
        }
    }
}

/// `ρ = Σ N_mpo / Σ N_ori` over the replaced layers.
pub fn compression_ratio(mpo_counts: &[usize], original_counts: &[usize]) -> Result<f64> {
    if mpo_counts.is_empty() || original_counts.is_empty() {
        return Err(usage_err!("compression ratio of an empty layer list"));
    }
    if mpo_counts.len() != original_counts.len() {
        return Err(usage_err!(
            "{} MPO counts but {} original counts",
            mpo_counts.len(),
            original_counts.len()
        ));
    }
    if original_counts.contains(&0) {
        return Err(usage_err!("original parameter counts must be positive"));
    }
    let mpo: usize = mpo_counts.iter().sum();
    let ori: usize = original_counts.iter().sum();
    Ok(mpo as f64 / ori as f64)
}

/// A trainable MPO linear layer: `n` cores plus a dense bias of length `N_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct MpoLayer {
    structure: MpoStructure,
    cores: Vec<Tensor>,
    bias: Vec<f64>,
}

/// Gradients of a scalar loss with respect to every input of [`MpoLayer::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct MpoGradients {
    pub core_grads: Vec<Tensor>,
    pub bias_grad: Vec<f64>,
    /// `[N_x, B]`.
    pub input_grad: Tensor,
}

/// Intermediate sweep states saved by [`MpoLayer::forward_cached`].
#[derive(Debug, Clone)]
pub struct MpoCache {
    /// `states[k]` has layout `[J_1..J_k, D_k, I_{k+1}..I_n, B]`; `states[0]` is the input.
    states: Vec<Vec<f64>>,
    batch: usize,
}

impl MpoLayer {
    pub fn new(structure: MpoStructure, cores: Vec<Tensor>, bias: Vec<f64>) -> Result<Self> {
        if cores.len() != structure.n() {
            return Err(shape_err!("{} cores for an MPO with n = {}", cores.len(), structure.n()));
        }
        for (k, core) in cores.iter().enumerate() {
            if core.shape() != structure.core_shape(k) {
                return Err(shape_err!(
                    "core {} has shape {:?}, expected {:?}",
                    k,
                    core.shape(),
                    structure.core_shape(k)
                ));
            }
        }
        if bias.len() != structure.output_size() {
            return Err(shape_err!(
                "bias has length {}, expected {}",
                bias.len(),
                structure.output_size()
            ));
        }
        Ok(MpoLayer { structure, cores, bias })
    }

    /// Gaussian initialization, deterministic in `seed`. See [`MpoLayer::init_with_rng`].
    pub fn init_random(structure: MpoStructure, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(structure, &mut rng)
    }

    /// Draws core `k` i.i.d. from `N(0, σ_k²)` with `σ_k = g^{1/n}·√(2/(I_k·D_{k-1}))`.
    ///
    /// The global factor `g` makes the variance of each entry of the densified
    /// operator equal `2/N_x`, the He fan-in value for a dense layer. The bias
    /// starts at zero.
    pub fn init_with_rng<R: Rng + ?Sized>(structure: MpoStructure, rng: &mut R) -> Self {
        let n = structure.n();
        let base: Vec<f64> = (0..n)
            .map(|k| libm::sqrt(2.0 / (structure.input_dims[k] * structure.bond_dims[k]) as f64))
            .collect();
        // Var(W_entry) = Π σ_k² · Π_{interior} D_k.
        let paths: f64 = structure.bond_dims[1..n].iter().map(|&d| d as f64).product();
        let var: f64 = base.iter().map(|s| s * s).product::<f64>() * paths;
        let target = 2.0 / structure.input_size() as f64;
        let g = libm::sqrt(target / var);
        let per_core = libm::pow(g, 1.0 / n as f64);
        let cores = (0..n)
            .map(|k| {
                let shape = structure.core_shape(k);
                let std = base[k] * per_core;
                let size: usize = shape.iter().product();
                let data = (0..size)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        z * std
                    })
                    .collect();
                Tensor::new(shape.to_vec(), data).expect("core shape")
            })
            .collect();
        let bias = vec![0.0; structure.output_size()];
        MpoLayer { structure, cores, bias }
    }

    pub fn structure(&self) -> &MpoStructure {
        &self.structure
    }

    pub fn cores(&self) -> &[Tensor] {
        &self.cores
    }

    pub fn cores_mut(&mut self) -> &mut [Tensor] {
        &mut self.cores
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Mutable access to cores and bias at once.
    pub fn parts_mut(&mut self) -> (&mut [Tensor], &mut [f64]) {
        (&mut self.cores, &mut self.bias)
    }

    fn batch_of(&self, x: &Tensor) -> Result<usize> {
        let nx = self.structure.input_size();
        let batch = match x.shape().last() {
            Some(&b) if x.rank() >= 2 => b,
            _ => return Err(shape_err!("MPO input must be [features.., batch], got {:?}", x.shape())),
        };
        if batch == 0 || x.len() / batch != nx {
            return Err(shape_err!(
                "MPO input {:?} does not hold {} features per sample",
                x.shape(),
                nx
            ));
        }
        Ok(batch)
    }

    /// `y = W·x + b` for a feature-major batch `x: [N_x.., B]`, returning `[N_y, B]`.
    ///
    /// Contracts the cores one at a time from the left; `W` is never formed.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Core `k` rearranged as a `(J_k·D_k) × (D_{k-1}·I_k)` row-major matrix.
    fn core_as_operator(&self, k: usize) -> Vec<f64> {
        let [dl, j, i, dr] = self.structure.core_shape(k);
        let src = self.cores[k].data();
        let cols = dl * i;
        let mut out = vec![0.0; j * dr * cols];
        for a in 0..dl {
            for jj in 0..j {
                for ii in 0..i {
                    for b in 0..dr {
                        out[(jj * dr + b) * cols + a * i + ii] = src[((a * j + jj) * i + ii) * dr + b];
                    }
                }
            }
        }
        out
    }

    /// Sweep geometry of step `k`: (prefix count, rows M, inner K, columns N).
    fn step_dims(&self, k: usize, batch: usize) -> (usize, usize, usize, usize) {
        let s = &self.structure;
        let prefix: usize = s.output_dims[..k].iter().product();
        let rest: usize = s.input_dims[k + 1..].iter().product();
        let [dl, j, i, dr] = s.core_shape(k);
        (prefix, j * dr, dl * i, rest * batch)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, MpoCache)> {
        let batch = self.batch_of(x)?;
        let n = self.structure.n();
        let mut states: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        states.push(x.data().to_vec());
        for k in 0..n {
            let (prefix, m, kk, cols) = self.step_dims(k, batch);
            let op = self.core_as_operator(k);
            let input = &states[k];
            let mut out = vec![0.0; prefix * m * cols];
            for p in 0..prefix {
                gemm(
                    m,
                    kk,
                    cols,
                    1.0,
                    &op,
                    kk,
                    1,
                    &input[p * kk * cols..(p + 1) * kk * cols],
                    cols,
                    1,
                    0.0,
                    &mut out[p * m * cols..(p + 1) * m * cols],
                    cols,
                    1,
                );
            }
            states.push(out);
        }
        let ny = self.structure.output_size();
        let mut y = states[n].clone();
        for (row, &b) in y.chunks_exact_mut(batch).zip(&self.bias) {
            row.iter_mut().for_each(|v| *v += b);
        }
        Ok((Tensor::new(vec![ny, batch], y)?, MpoCache { states, batch }))
    }

    /// Gradients for upstream `grad_y = ∂L/∂y` (`[N_y, B]`).
    pub fn backward(&self, x: &Tensor, grad_y: &Tensor) -> Result<MpoGradients> {
        let (_, cache) = self.forward_cached(x)?;
        self.backward_cached(&cache, grad_y)
    }

    /// Backpropagates through the saved sweep, right to left.
    pub fn backward_cached(&self, cache: &MpoCache, grad_y: &Tensor) -> Result<MpoGradients> {
        let batch = cache.batch;
        let ny = self.structure.output_size();
        if grad_y.shape() != [ny, batch] {
            return Err(shape_err!(
                "grad_y has shape {:?}, expected [{}, {}]",
                grad_y.shape(),
                ny,
                batch
            ));
        }
        let n = self.structure.n();
        let bias_grad: Vec<f64> = grad_y.data().chunks_exact(batch).map(|row| row.iter().sum()).collect();

        let mut core_grads: Vec<Tensor> = Vec::with_capacity(n);
        let mut upstream = grad_y.data().to_vec();
        for k in (0..n).rev() {
            let (prefix, m, kk, cols) = self.step_dims(k, batch);
            let op = self.core_as_operator(k);
            let input = &cache.states[k];
            let mut op_grad = vec![0.0; m * kk];
            let mut downstream = vec![0.0; prefix * kk * cols];
            for p in 0..prefix {
                let g = &upstream[p * m * cols..(p + 1) * m * cols];
                let s = &input[p * kk * cols..(p + 1) * kk * cols];
                // dOp += G_p · S_pᵀ
                gemm(m, cols, kk, 1.0, g, cols, 1, s, 1, cols, 1.0, &mut op_grad, kk, 1);
                // dS_p = Opᵀ · G_p
                gemm(
                    kk,
                    m,
                    cols,
                    1.0,
                    &op,
                    1,
                    kk,
                    g,
                    cols,
                    1,
                    0.0,
                    &mut downstream[p * kk * cols..(p + 1) * kk * cols],
                    cols,
                    1,
                );
            }
            core_grads.push(self.operator_to_core(k, &op_grad));
            upstream = downstream;
        }
        core_grads.reverse();
        let nx = self.structure.input_size();
        Ok(MpoGradients { core_grads, bias_grad, input_grad: Tensor::new(vec![nx, batch], upstream)? })
    }

    fn operator_to_core(&self, k: usize, op: &[f64]) -> Tensor {
        let shape = self.structure.core_shape(k);
        let [dl, j, i, dr] = shape;
        let cols = dl * i;
        let mut data = vec![0.0; dl * j * i * dr];
        for a in 0..dl {
            for jj in 0..j {
                for ii in 0..i {
                    for b in 0..dr {
                        data[((a * j + jj) * i + ii) * dr + b] = op[(jj * dr + b) * cols + a * i + ii];
                    }
                }
            }
        }
        Tensor::new(shape.to_vec(), data).expect("core shape")
    }

    /// The dense `N_y × N_x` matrix, built by contracting the cores pairwise.
    pub fn to_dense(&self) -> Result<Tensor> {
        let s = &self.structure;
        let size = s.input_size().saturating_mul(s.output_size());
        if size > DENSE_CAPACITY {
            return Err(Error::Capacity { requested: size, limit: DENSE_CAPACITY });
        }
        // acc: [J_1..J_k (fused), I_1..I_k (fused), D_k]
        let [_, j1, i1, d1] = s.core_shape(0);
        let mut acc = self.cores[0].reshape(&[j1, i1, d1])?;
        let (mut rows, mut cols) = (j1, i1);
        for k in 1..s.n() {
            let [_, j, i, dr] = s.core_shape(k);
            // [R, C, D] x [D, J, I, D'] -> [R, C, J, I, D'] -> [R, J, C, I, D']
            let next = acc.contract(&self.cores[k], &[2], &[0])?.permute(&[0, 2, 1, 3, 4])?;
            rows *= j;
            cols *= i;
            acc = next.into_shape(&[rows, cols, dr])?;
        }
        acc.into_shape(&[rows, cols])
    }

    /// Squared Frobenius norm of every core, summed.
    pub fn weight_norm_sq(&self) -> f64 {
        self.cores.iter().flat_map(|c| c.data()).map(|v| v * v).sum()
    }
}
