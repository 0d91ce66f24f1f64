//! FC2 and LeNet-5 in dense and MPO form.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv2dLayer, DenseLayer, MaxPool2d, Padding};
use super::{Layer, Network};
use crate::error::{Error, Result};
use crate::mpo::{MpoLayer, MpoStructure};

pub const FC2_HIDDEN: usize = 256;
/// `(N_x, N_y)` of the three LeNet-5 linear maps that MPOs replace.
pub const LENET5_REPLACED: [(usize, usize); 3] = [(400, 120), (120, 84), (84, 10)];

const IMAGE: [usize; 3] = [1, 28, 28];
const CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Fc2,
    Lenet5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Dense,
    /// `bond_dim: None` selects the default structures of each architecture.
    Mpo { bond_dim: Option<usize> },
}

/// `M^{4,4,4,4}_{4,7,7,4}(D)` and `M^{1,1,10,1}_{4,4,4,4}(4)`.
pub fn fc2_mpo_structures(bond_dim: usize) -> Result<[MpoStructure; 2]> {
    Ok([
        MpoStructure::new(vec![4, 4, 4, 4], vec![4, 7, 7, 4], bond_dim)?,
        MpoStructure::new(vec![1, 1, 10, 1], vec![4, 4, 4, 4], 4)?,
    ])
}

/// `M^{2,5,6,2}_{2,10,10,2}(4)`, `M^{2,3,7,2}_{2,5,6,2}(4)`, `M^{1,5,2,1}_{2,3,7,2}(2)`;
/// a given `bond_dim` replaces all three bonds.
pub fn lenet5_mpo_structures(bond_dim: Option<usize>) -> Result<[MpoStructure; 3]> {
    let d = |default: usize| bond_dim.unwrap_or(default);
    Ok([
        MpoStructure::new(vec![2, 5, 6, 2], vec![2, 10, 10, 2], d(4))?,
        MpoStructure::new(vec![2, 3, 7, 2], vec![2, 5, 6, 2], d(4))?,
        MpoStructure::new(vec![1, 5, 2, 1], vec![2, 3, 7, 2], d(2))?,
    ])
}

fn check_replacement(s: &MpoStructure, inputs: usize, outputs: usize) -> Result<()> {
    if s.input_size() != inputs || s.output_size() != outputs {
        return Err(Error::Structure(alloc::format!(
            "{s} maps {} -> {}, but this layer maps {inputs} -> {outputs}",
            s.input_size(),
            s.output_size()
        )));
    }
    Ok(())
}

fn linear(
    inputs: usize,
    outputs: usize,
    mpo: Option<&MpoStructure>,
    rng: &mut ChaCha8Rng,
) -> Result<Layer> {
    Ok(match mpo {
        Some(s) => {
            check_replacement(s, inputs, outputs)?;
            Layer::Mpo(MpoLayer::init_with_rng(s.clone(), rng))
        }
        None => Layer::Dense(DenseLayer::init_with_rng(inputs, outputs, rng)),
    })
}

/// FC2: `784 → 256`, ReLU, `256 → 10`, softmax.
pub fn build_fc2(variant: Variant, seed: u64) -> Result<Network> {
    match variant {
        Variant::Dense => build_fc2_with(None, seed),
        Variant::Mpo { bond_dim } => build_fc2_with(Some(fc2_mpo_structures(bond_dim.unwrap_or(16))?), seed),
    }
}

/// FC2 with caller-chosen factorizations for the two linear maps.
pub fn build_fc2_with(mpo: Option<[MpoStructure; 2]>, seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels: usize = IMAGE.iter().product();
    let layers = vec![
        linear(pixels, FC2_HIDDEN, mpo.as_ref().map(|m| &m[0]), &mut rng)?,
        Layer::Relu,
        linear(FC2_HIDDEN, CLASSES, mpo.as_ref().map(|m| &m[1]), &mut rng)?,
        Layer::Softmax,
    ];
    Network::new(IMAGE.to_vec(), layers)
}

/// LeNet-5: conv[5,5;6;1] (same padding), ReLU, maxpool[2,2;2],
/// conv[5,5;16;1] (no padding), ReLU, maxpool[2,2;2], `400 → 120`, ReLU,
/// `120 → 84`, ReLU, `84 → 10`, softmax.
pub fn build_lenet5(variant: Variant, seed: u64) -> Result<Network> {
    match variant {
        Variant::Dense => build_lenet5_with(None, seed),
        Variant::Mpo { bond_dim } => build_lenet5_with(Some(lenet5_mpo_structures(bond_dim)?), seed),
    }
}

pub fn build_lenet5_with(mpo: Option<[MpoStructure; 3]>, seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers: Vec<Layer> = vec![
        Layer::Conv2d(Conv2dLayer::init_with_rng(1, 6, (5, 5), 1, Padding::Same, &mut rng)),
        Layer::Relu,
        Layer::MaxPool(MaxPool2d::new(2, 2, 2)),
        Layer::Conv2d(Conv2dLayer::init_with_rng(6, 16, (5, 5), 1, Padding::Valid, &mut rng)),
        Layer::Relu,
        Layer::MaxPool(MaxPool2d::new(2, 2, 2)),
    ];
    for (k, &(inputs, outputs)) in LENET5_REPLACED.iter().enumerate() {
        layers.push(linear(inputs, outputs, mpo.as_ref().map(|m| &m[k]), &mut rng)?);
        layers.push(if k + 1 < LENET5_REPLACED.len() { Layer::Relu } else { Layer::Softmax });
    }
    Network::new(IMAGE.to_vec(), layers)
}
