//! Layer composition, loss, optimizer and training loop.

mod builders;
pub mod layers;
mod loss;
mod optim;
mod train;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, usage_err, Result};
use crate::mpo::{MpoCache, MpoLayer};
use crate::tensor::Tensor;

pub use builders::{
    build_fc2, build_fc2_with, build_lenet5, build_lenet5_with, fc2_mpo_structures, lenet5_mpo_structures,
    Architecture, Variant, FC2_HIDDEN, LENET5_REPLACED,
};
pub use layers::{Conv2dLayer, DenseLayer, MaxPool2d, Padding};
pub use loss::{cross_entropy, one_hot, LossValue};
pub use optim::{sgd_momentum_step, SgdMomentum};
pub use train::{evaluate, predict, train, train_with, EpochRecord, RunReport, TrainingConfig};

/// One stage of a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Mpo(MpoLayer),
    Dense(DenseLayer),
    Conv2d(Conv2dLayer),
    MaxPool(MaxPool2d),
    Relu,
    Softmax,
}

/// Whether a parameter tensor is a weight (subject to L2) or a bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Per-layer state saved by the forward pass for backpropagation.
#[derive(Debug)]
enum LayerCache {
    Mpo(MpoCache),
    Dense(Tensor),
    Conv { input_shape: Vec<usize>, cols: Vec<f64> },
    Pool { input_shape: Vec<usize>, argmax: Vec<usize> },
    Relu(Tensor),
    Softmax(Tensor),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Mpo(_) => "mpo",
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool(_) => "maxpool",
            Layer::Relu => "relu",
            Layer::Softmax => "softmax",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let features: usize = input.iter().product();
        match self {
            Layer::Mpo(l) => {
                if features != l.structure().input_size() {
                    return Err(shape_err!("MPO layer expects {} features, got {:?}", l.structure().input_size(), input));
                }
                Ok(vec![l.structure().output_size()])
            }
            Layer::Dense(l) => {
                if features != l.inputs() {
                    return Err(shape_err!("dense layer expects {} features, got {:?}", l.inputs(), input));
                }
                Ok(vec![l.outputs()])
            }
            Layer::Conv2d(l) => l.output_shape(input),
            Layer::MaxPool(p) => p.output_shape(input),
            Layer::Relu => Ok(input.to_vec()),
            Layer::Softmax => {
                if input.len() != 1 {
                    return Err(shape_err!("softmax expects a flat input, got {:?}", input));
                }
                Ok(input.to_vec())
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Mpo(l) => l.forward(x),
            Layer::Dense(l) => l.forward(x),
            Layer::Conv2d(l) => l.forward(x),
            Layer::MaxPool(p) => p.forward(x),
            Layer::Relu => Ok(layers::relu(x)),
            Layer::Softmax => layers::softmax(x),
        }
    }

    fn forward_cached(&self, x: Tensor) -> Result<(Tensor, LayerCache)> {
        Ok(match self {
            Layer::Mpo(l) => {
                let (y, c) = l.forward_cached(&x)?;
                (y, LayerCache::Mpo(c))
            }
            Layer::Dense(l) => (l.forward(&x)?, LayerCache::Dense(x)),
            Layer::Conv2d(l) => {
                let (y, cols) = l.forward_cached(&x)?;
                (y, LayerCache::Conv { input_shape: x.shape().to_vec(), cols })
            }
            Layer::MaxPool(p) => {
                let (y, argmax) = p.forward_cached(&x)?;
                (y, LayerCache::Pool { input_shape: x.shape().to_vec(), argmax })
            }
            Layer::Relu => (layers::relu(&x), LayerCache::Relu(x)),
            Layer::Softmax => {
                let y = layers::softmax(&x)?;
                (y.clone(), LayerCache::Softmax(y))
            }
        })
    }

    /// Returns the input gradient and the parameter gradients in [`Layer::params`] order.
    /// With `need_input = false` a layer may skip the input gradient and return `None`.
    fn backward_cached(
        &self,
        cache: &LayerCache,
        grad_y: &Tensor,
        need_input: bool,
    ) -> Result<(Option<Tensor>, Vec<Vec<f64>>)> {
        if let (false, Layer::Conv2d(l), LayerCache::Conv { input_shape, cols }) = (need_input, self, cache) {
            let (dk, db) = l.backward_params_cached(input_shape, cols, grad_y)?;
            return Ok((None, vec![dk.into_data(), db]));
        }
        let (g, params) = match (self, cache) {
            (Layer::Mpo(l), LayerCache::Mpo(c)) => {
                let g = l.backward_cached(c, grad_y)?;
                let mut grads: Vec<Vec<f64>> = g.core_grads.into_iter().map(Tensor::into_data).collect();
                grads.push(g.bias_grad);
                (g.input_grad, grads)
            }
            (Layer::Dense(l), LayerCache::Dense(x)) => {
                let (dw, db, dx) = l.backward(x, grad_y)?;
                (dx, vec![dw.into_data(), db])
            }
            (Layer::Conv2d(l), LayerCache::Conv { input_shape, cols }) => {
                let (dk, db, dx) = l.backward_cached(input_shape, cols, grad_y)?;
                (dx, vec![dk.into_data(), db])
            }
            (Layer::MaxPool(p), LayerCache::Pool { input_shape, argmax }) => {
                (p.backward_cached(input_shape, argmax, grad_y)?, Vec::new())
            }
            (Layer::Relu, LayerCache::Relu(x)) => (layers::relu_backward(x, grad_y)?, Vec::new()),
            (Layer::Softmax, LayerCache::Softmax(y)) => (layers::softmax_backward(y, grad_y)?, Vec::new()),
            _ => unreachable!("layer/cache kinds always match"),
        };
        Ok((Some(g), params))
    }

    /// Trainable parameter slices with their kind.
    pub fn params(&self) -> Vec<(&[f64], ParamKind)> {
        match self {
            Layer::Mpo(l) => {
                let mut out: Vec<(&[f64], ParamKind)> = l.cores().iter().map(|c| (c.data(), ParamKind::Weight)).collect();
                out.push((l.bias(), ParamKind::Bias));
                out
            }
            Layer::Dense(l) => vec![(l.weight.data(), ParamKind::Weight), (&l.bias[..], ParamKind::Bias)],
            Layer::Conv2d(l) => vec![(l.kernels.data(), ParamKind::Weight), (&l.bias[..], ParamKind::Bias)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Mpo(l) => {
                let (cores, bias) = l.parts_mut();
                let mut out: Vec<&mut [f64]> = cores.iter_mut().map(|c| c.data_mut()).collect();
                out.push(bias);
                out
            }
            Layer::Dense(l) => vec![l.weight.data_mut(), &mut l.bias[..]],
            Layer::Conv2d(l) => vec![l.kernels.data_mut(), &mut l.bias[..]],
            _ => Vec::new(),
        }
    }

    /// Number of weight elements (biases excluded).
    pub fn weight_count(&self) -> usize {
        self.params().iter().filter(|(_, k)| *k == ParamKind::Weight).map(|(p, _)| p.len()).sum()
    }
}

/// Result of one loss/gradient evaluation on a batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: LossValue,
    /// Softmax outputs `[C, B]`.
    pub probabilities: Tensor,
    /// One entry per parameter slice, in [`Network::params`] order.
    pub grads: Vec<Vec<f64>>,
}

/// An ordered composition of layers: `F(x) = L_n ∘ … ∘ L_1 (x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Network {
    /// Validates that consecutive layer shapes compose for per-sample `input_shape`.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for (k, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| shape_err!("layer {} ({}): {}", k, layer.name(), e))?;
        }
        Ok(Network { input_shape, layers })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Number of classes produced by the final layer.
    pub fn output_size(&self) -> usize {
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            shape = layer.output_shape(&shape).expect("validated at construction");
        }
        shape.iter().product()
    }

    fn reshape_input(&self, x: &Tensor) -> Result<Tensor> {
        let per: usize = self.input_shape.iter().product();
        let b = layers::batch_size(x)?;
        if x.len() != per * b {
            return Err(shape_err!("network expects per-sample shape {:?}, got {:?}", self.input_shape, x.shape()));
        }
        let mut shape = self.input_shape.clone();
        shape.push(b);
        x.reshape(&shape)
    }

    /// Class probabilities `[C, B]` for a feature-major batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.reshape_input(x)?;
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// Every trainable parameter slice, layer by layer.
    pub fn params(&self) -> Vec<(&[f64], ParamKind)> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// `Σ_i |w^(i)|²` over weight tensors (MPO cores, dense weights, conv kernels).
    pub fn weight_norm_sq(&self) -> f64 {
        self.params()
            .iter()
            .filter(|(_, k)| *k == ParamKind::Weight)
            .flat_map(|(p, _)| p.iter())
            .map(|v| v * v)
            .sum()
    }

    /// Loss and gradients for one batch. The network must end in softmax; its
    /// backward pass is fused with the cross-entropy as `(y − t)/B`. The L2
    /// term contributes `α·w` to every weight gradient.
    pub fn loss_and_gradients(&self, x: &Tensor, targets: &Tensor, alpha: f64) -> Result<BatchGradients> {
        let Some(Layer::Softmax) = self.layers.last() else {
            return Err(usage_err!("training requires the network to end with a softmax layer"));
        };
        let mut h = self.reshape_input(x)?;
        let body = &self.layers[..self.layers.len() - 1];
        let mut caches = Vec::with_capacity(body.len());
        for layer in body {
            let (y, cache) = layer.forward_cached(h)?;
            caches.push(cache);
            h = y;
        }
        let probabilities = layers::softmax(&h)?;
        let loss = cross_entropy(&probabilities, targets, alpha, self.weight_norm_sq())?;

        let b = layers::batch_size(&probabilities)? as f64;
        let mut grad = Tensor::new(
            probabilities.shape().to_vec(),
            probabilities.data().iter().zip(targets.data()).map(|(y, t)| (y - t) / b).collect(),
        )?;
        let mut per_layer: Vec<Vec<Vec<f64>>> = Vec::with_capacity(body.len());
        for (k, (layer, cache)) in body.iter().zip(&caches).enumerate().rev() {
            let (g, params) = layer.backward_cached(cache, &grad, k > 0)?;
            per_layer.push(params);
            if let Some(g) = g {
                grad = g;
            }
        }
        per_layer.reverse();
        let mut grads: Vec<Vec<f64>> = per_layer.into_iter().flatten().collect();
        if alpha != 0.0 {
            for (g, (p, kind)) in grads.iter_mut().zip(self.params()) {
                if kind == ParamKind::Weight {
                    for (gi, wi) in g.iter_mut().zip(p) {
                        *gi += alpha * wi;
                    }
                }
            }
        }
        Ok(BatchGradients { loss, probabilities, grads })
    }

    /// Replaces every MPO layer by the dense layer holding its densified matrix.
    pub fn densified(&self) -> Result<Network> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Mpo(m) => Ok(Layer::Dense(DenseLayer::new(m.to_dense()?, m.bias().to_vec())?)),
                other => Ok(other.clone()),
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(self.input_shape.clone(), layers)
    }

    /// One line per layer, e.g. `mpo M^{4,4,4,4}_{4,7,7,4}(16)`.
    pub fn summary(&self) -> Vec<String> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Mpo(m) => alloc::format!("mpo {}", m.structure()),
                Layer::Dense(d) => alloc::format!("dense {}->{}", d.inputs(), d.outputs()),
                Layer::Conv2d(c) => alloc::format!(
                    "conv2d {:?} stride {} {:?}",
                    c.kernels.shape(),
                    c.stride,
                    c.padding
                ),
                Layer::MaxPool(p) => alloc::format!("maxpool {}x{} stride {}", p.kh, p.kw, p.stride),
                Layer::Relu => "relu".into(),
                Layer::Softmax => "softmax".into(),
            })
            .collect()
    }
}
