//! Entanglement entropy of trained MPO layers and repeated-run statistics.

use alloc::vec::Vec;

use crate::error::{usage_err, Result};
use crate::linalg::svd;
use crate::mpo::MpoLayer;

/// Normalized entanglement spectrum and entropy across one bond.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    /// 1-based bond index, `1 ≤ bond ≤ n−1`.
    pub bond: usize,
    /// `λ_i = v_i² / Σ v_j²`, non-increasing.
    pub spectrum: Vec<f64>,
    /// `S = −Σ λ_i ln λ_i` in nats.
    pub entropy: f64,
    /// `ln(min(rows, cols, D_bond))` of the matricization.
    pub upper_bound: f64,
    pub rows: usize,
    pub cols: usize,
    pub bond_dim: usize,
}

/// Singular values below this fraction of the largest are dropped.
const SPECTRUM_CUTOFF: f64 = 1e-14;

/// Entropy across `bond` of the operator held by `layer`.
///
/// The operator is densified to its `2n`-index form `W[j_1..j_n, i_1..i_n]`,
/// matricized with rows `(i_1..i_bond, j_1..j_bond)` and columns the remaining
/// indices, and decomposed by SVD.
pub fn bond_entropy(layer: &MpoLayer, bond: usize) -> Result<EntropyReport> {
    let s = layer.structure();
    let n = s.n();
    if bond == 0 || bond >= n {
        return Err(usage_err!("bond {} outside 1..={} for an MPO with {} cores", bond, n.saturating_sub(1), n));
    }
    let shape: Vec<usize> = s.output_dims().iter().chain(s.input_dims()).copied().collect();
    let w = layer.to_dense()?.into_shape(&shape)?;
    // axes 0..n are j_1..j_n, axes n..2n are i_1..i_n
    let row_axes: Vec<usize> = (n..n + bond).chain(0..bond).collect();
    let col_axes: Vec<usize> = (n + bond..2 * n).chain(bond..n).collect();
    let t = w.matricize(&row_axes, &col_axes)?;
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    let values = svd(&t)?.s;

    let largest = values.first().copied().unwrap_or(0.0);
    let kept: Vec<f64> = values.into_iter().filter(|&v| largest > 0.0 && v > largest * SPECTRUM_CUTOFF).collect();
    let norm: f64 = kept.iter().map(|v| v * v).sum();
    let spectrum: Vec<f64> = if norm > 0.0 { kept.iter().map(|v| v * v / norm).collect() } else { Vec::new() };
    let entropy = spectrum.iter().filter(|&&l| l > 0.0).map(|&l| -l * libm::log(l)).sum::<f64>().max(0.0);
    let bond_dim = s.bond_dims()[bond];
    let upper_bound = libm::log(rows.min(cols).min(bond_dim) as f64);
    Ok(EntropyReport { bond, spectrum, entropy, upper_bound, rows, cols, bond_dim })
}

/// Mean and sample standard deviation over repeated runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStatistics {
    pub mean: f64,
    /// `None` for a single run.
    pub sigma: Option<f64>,
    pub runs: Vec<f64>,
    pub m: usize,
}

/// `ā = Σ a_i / m`, `σ = √(Σ (a_i − ā)² / (m − 1))`.
pub fn run_stats(accuracies: &[f64]) -> Result<RunStatistics> {
    let m = accuracies.len();
    if m == 0 {
        return Err(usage_err!("no runs to summarize"));
    }
    let mean = accuracies.iter().sum::<f64>() / m as f64;
    let sigma = (m >= 2).then(|| {
        let ss: f64 = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum();
        libm::sqrt(ss / (m - 1) as f64)
    });
    Ok(RunStatistics { mean, sigma, runs: accuracies.to_vec(), m })
}
