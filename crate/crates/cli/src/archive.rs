//! Model archives: a JSON manifest followed by a little-endian `f64` payload.
//!
//! Layout: 8-byte magic, manifest length as `u64` LE, manifest JSON, payload.
//! The payload holds every parameter tensor in manifest order.

use std::fs;
use std::path::Path;

use mponet_core::network::{Conv2dLayer, DenseLayer, Layer, MaxPool2d, Padding};
use mponet_core::{MpoLayer, MpoStructure, Network, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"MPONET\x00\x01";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerRecord {
    Mpo { output_dims: Vec<usize>, input_dims: Vec<usize>, bond_dims: Vec<usize> },
    Dense { inputs: usize, outputs: usize },
    Conv2d { kernel_shape: Vec<usize>, stride: usize, same_padding: bool },
    MaxPool { kh: usize, kw: usize, stride: usize },
    Relu,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub architecture: String,
    pub variant: String,
    /// Structure notation of every MPO layer.
    pub structures: Vec<String>,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerRecord>,
    pub tensors: Vec<TensorRecord>,
    pub seed: u64,
    pub config_hash: String,
    pub payload_bytes: u64,
    pub payload_sha256: String,
}

/// Descriptive fields stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ArchiveInfo {
    pub architecture: String,
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub manifest: Manifest,
    pub network: Network,
}

fn tensor_parts(layer: &Layer, k: usize) -> Vec<(String, Vec<usize>, &[f64])> {
    match layer {
        Layer::Mpo(m) => {
            let mut out: Vec<(String, Vec<usize>, &[f64])> = m
                .cores()
                .iter()
                .enumerate()
                .map(|(c, t)| (format!("layer{k}.core{c}"), t.shape().to_vec(), t.data()))
                .collect();
            out.push((format!("layer{k}.bias"), vec![m.bias().len()], m.bias()));
            out
        }
        Layer::Dense(d) => vec![
            (format!("layer{k}.weight"), d.weight.shape().to_vec(), d.weight.data()),
            (format!("layer{k}.bias"), vec![d.bias.len()], &d.bias),
        ],
        Layer::Conv2d(c) => vec![
            (format!("layer{k}.kernels"), c.kernels.shape().to_vec(), c.kernels.data()),
            (format!("layer{k}.bias"), vec![c.bias.len()], &c.bias),
        ],
        Layer::MaxPool(_) | Layer::Relu | Layer::Softmax => Vec::new(),
    }
}

fn layer_record(layer: &Layer) -> LayerRecord {
    match layer {
        Layer::Mpo(m) => {
            let s = m.structure();
            LayerRecord::Mpo {
                output_dims: s.output_dims().to_vec(),
                input_dims: s.input_dims().to_vec(),
                bond_dims: s.bond_dims().to_vec(),
            }
        }
        Layer::Dense(d) => LayerRecord::Dense { inputs: d.inputs(), outputs: d.outputs() },
        Layer::Conv2d(c) => LayerRecord::Conv2d {
            kernel_shape: c.kernels.shape().to_vec(),
            stride: c.stride,
            same_padding: c.padding == Padding::Same,
        },
        Layer::MaxPool(p) => LayerRecord::MaxPool { kh: p.kh, kw: p.kw, stride: p.stride },
        Layer::Relu => LayerRecord::Relu,
        Layer::Softmax => LayerRecord::Softmax,
    }
}

/// Tensor names and shapes a layer record implies, in payload order.
fn expected_tensors(k: usize, rec: &LayerRecord) -> std::result::Result<Vec<TensorRecord>, String> {
    let t = |name: String, shape: Vec<usize>| TensorRecord { name, shape };
    Ok(match rec {
        LayerRecord::Mpo { output_dims, input_dims, bond_dims } => {
            let s = MpoStructure::new(output_dims.clone(), input_dims.clone(), bond_dims.clone())
                .map_err(|e| e.to_string())?;
            let mut v: Vec<TensorRecord> =
                (0..s.n()).map(|c| t(format!("layer{k}.core{c}"), s.core_shape(c).to_vec())).collect();
            v.push(t(format!("layer{k}.bias"), vec![s.output_size()]));
            v
        }
        LayerRecord::Dense { inputs, outputs } => vec![
            t(format!("layer{k}.weight"), vec![*outputs, *inputs]),
            t(format!("layer{k}.bias"), vec![*outputs]),
        ],
        LayerRecord::Conv2d { kernel_shape, .. } => {
            if kernel_shape.len() != 4 {
                return Err(format!("layer {k}: conv kernel shape {kernel_shape:?} is not 4-D"));
            }
            vec![t(format!("layer{k}.kernels"), kernel_shape.clone()), t(format!("layer{k}.bias"), vec![kernel_shape[0]])]
        }
        LayerRecord::MaxPool { .. } | LayerRecord::Relu | LayerRecord::Softmax => Vec::new(),
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ModelArchive {
    pub fn new(network: Network, info: ArchiveInfo) -> Self {
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        for (k, layer) in network.layers().iter().enumerate() {
            for (name, shape, data) in tensor_parts(layer, k) {
                tensors.push(TensorRecord { name, shape });
                payload.extend(data.iter().flat_map(|v| v.to_le_bytes()));
            }
        }
        let structures = network
            .layers()
            .iter()
            .filter_map(|l| match l {
                Layer::Mpo(m) => Some(m.structure().to_string()),
                _ => None,
            })
            .collect();
        let manifest = Manifest {
            version: FORMAT_VERSION,
            architecture: info.architecture,
            variant: info.variant,
            structures,
            input_shape: network.input_shape().to_vec(),
            layers: network.layers().iter().map(layer_record).collect(),
            tensors,
            seed: info.seed,
            config_hash: info.config_hash,
            payload_bytes: payload.len() as u64,
            payload_sha256: sha256_hex(&payload),
        };
        ModelArchive { manifest, network }
    }

    fn payload(&self) -> Vec<u8> {
        self.network
            .layers()
            .iter()
            .enumerate()
            .flat_map(|(k, l)| tensor_parts(l, k))
            .flat_map(|(_, _, data)| data.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>())
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + manifest.len() + self.manifest.payload_bytes as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&self.payload());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }

    /// Parses and validates an archive; `path` is used only in error messages.
    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| CliError::format(path, msg);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a model archive (bad magic)".into()));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if mlen > body.len() {
            return Err(bad(format!("manifest length {mlen} exceeds file size")));
        }
        let manifest: Manifest =
            serde_json::from_slice(&body[..mlen]).map_err(|e| bad(format!("manifest JSON: {e}")))?;
        if manifest.version != FORMAT_VERSION {
            return Err(bad(format!("unsupported archive version {}", manifest.version)));
        }
        let payload = &body[mlen..];
        let declared: usize = manifest.tensors.iter().map(|t| 8 * t.shape.iter().product::<usize>()).sum();
        if payload.len() as u64 != manifest.payload_bytes || declared != payload.len() {
            return Err(bad(format!(
                "payload holds {} bytes, manifest declares {} ({} from tensor shapes)",
                payload.len(),
                manifest.payload_bytes,
                declared
            )));
        }
        if sha256_hex(payload) != manifest.payload_sha256 {
            return Err(bad("payload checksum mismatch".into()));
        }

        let mut expected = Vec::new();
        for (k, rec) in manifest.layers.iter().enumerate() {
            expected.extend(expected_tensors(k, rec).map_err(&bad)?);
        }
        if expected != manifest.tensors {
            return Err(bad("tensor list does not match the layer records".into()));
        }

        let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |shape: &[usize]| -> Result<Tensor> {
            let n = shape.iter().product();
            Ok(Tensor::new(shape.to_vec(), values.by_ref().take(n).collect())?)
        };
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for (k, rec) in manifest.layers.iter().enumerate() {
            let shapes: Vec<Vec<usize>> = expected_tensors(k, rec).map_err(&bad)?.into_iter().map(|t| t.shape).collect();
            let layer = match rec {
                LayerRecord::Mpo { output_dims, input_dims, bond_dims } => {
                    let s = MpoStructure::new(output_dims.clone(), input_dims.clone(), bond_dims.clone())?;
                    let cores = shapes[..s.n()].iter().map(|sh| take(sh)).collect::<Result<Vec<_>>>()?;
                    let bias = take(&shapes[s.n()])?.into_data();
                    Layer::Mpo(MpoLayer::new(s, cores, bias)?)
                }
                LayerRecord::Dense { .. } => {
                    let w = take(&shapes[0])?;
                    Layer::Dense(DenseLayer::new(w, take(&shapes[1])?.into_data())?)
                }
                LayerRecord::Conv2d { stride, same_padding, .. } => {
                    let kernels = take(&shapes[0])?;
                    let padding = if *same_padding { Padding::Same } else { Padding::Valid };
                    Layer::Conv2d(Conv2dLayer::new(kernels, take(&shapes[1])?.into_data(), *stride, padding)?)
                }
                LayerRecord::MaxPool { kh, kw, stride } => Layer::MaxPool(MaxPool2d::new(*kh, *kw, *stride)),
                LayerRecord::Relu => Layer::Relu,
                LayerRecord::Softmax => Layer::Softmax,
            };
            layers.push(layer);
        }
        let network = Network::new(manifest.input_shape.clone(), layers).map_err(|e| bad(e.to_string()))?;
        Ok(ModelArchive { manifest, network })
    }
}
