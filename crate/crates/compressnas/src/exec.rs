//! Numeric graph execution: materializing layer weights (seeded,
//! file-backed, or inline) and running a forward pass over a model
//! graph. Batch-norm tags are accounting-only and do not alter values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::cnt;
use crate::model::{stable_seed, LayerKind, LayerSpec, ModelGraph, WeightSpec};
use crate::tensor::{conv2d, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("layer '{layer}': {source}")]
    Tensor {
        layer: String,
        #[source]
        source: TensorError,
    },
    #[error("layer '{layer}': weight file error: {source}")]
    Weights {
        layer: String,
        #[source]
        source: cnt::CntError,
    },
    #[error("layer '{layer}': {message}")]
    Shape { layer: String, message: String },
    #[error("model error: {0}")]
    Model(#[from] crate::model::ModelError),
}

fn shape_err(layer: &str, message: impl Into<String>) -> ExecError {
    ExecError::Shape {
        layer: layer.to_string(),
        message: message.into(),
    }
}

/// Resolves layer weights relative to an optional base directory.
#[derive(Debug, Clone, Default)]
pub struct WeightResolver {
    base_dir: Option<PathBuf>,
}

impl WeightResolver {
    pub fn new(base_dir: Option<&Path>) -> Self {
        Self {
            base_dir: base_dir.map(Path::to_path_buf),
        }
    }

    /// Conv kernel `[M, N, k, k]`. Layers without an explicit weight
    /// spec get a deterministic per-id seed.
    pub fn conv_kernel(&self, layer: &LayerSpec) -> Result<Tensor, ExecError> {
        let shape = vec![
            layer.out_channels,
            layer.in_channels,
            layer.k(),
            layer.k(),
        ];
        let fan_in = layer.in_channels * layer.k() * layer.k();
        self.materialize(layer, shape, fan_in)
    }

    /// Linear weight `[M, N]`; the bias is zero-initialized.
    pub fn linear_weight(&self, layer: &LayerSpec) -> Result<Tensor, ExecError> {
        let shape = vec![layer.out_channels, layer.in_channels];
        let fan_in = layer.in_channels;
        self.materialize(layer, shape, fan_in)
    }

    fn materialize(
        &self,
        layer: &LayerSpec,
        shape: Vec<usize>,
        fan_in: usize,
    ) -> Result<Tensor, ExecError> {
        let spec = layer
            .weights
            .clone()
            .unwrap_or_else(|| WeightSpec::Seed(stable_seed(&layer.id)));
        let tensor = match spec {
            WeightSpec::Inline(t) => t,
            WeightSpec::Seed(seed) => seeded_gaussian_tensor(shape.clone(), seed, fan_in),
            WeightSpec::File(path) => {
                let full = match &self.base_dir {
                    Some(base) => base.join(&path),
                    None => PathBuf::from(&path),
                };
                cnt::load(&full).map_err(|source| ExecError::Weights {
                    layer: layer.id.clone(),
                    source,
                })?
            }
        };
        if tensor.shape() != shape.as_slice() {
            return Err(shape_err(
                &layer.id,
                format!(
                    "weight tensor shape {:?} does not match layer shape {:?}",
                    tensor.shape(),
                    shape
                ),
            ));
        }
        Ok(tensor)
    }
}

/// He-style seeded Gaussian init: std = sqrt(2 / fan_in).
pub fn seeded_gaussian_tensor(shape: Vec<usize>, seed: u64, fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
    Tensor::new(shape, data).expect("generated shape is valid")
}

/// Unit-variance seeded Gaussian, used for synthetic calibration inputs.
pub fn seeded_gaussian_input(shape: [usize; 3], seed: u64) -> Tensor {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn maxpool2d(input: &Tensor, k: usize, stride: usize, padding: usize) -> Tensor {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let h_out = (h + 2 * padding - k) / stride + 1;
    let w_out = (w + 2 * padding - k) / stride + 1;
    let mut out = Tensor::zeros(vec![c, h_out, w_out]);
    for ch in 0..c {
        for oh in 0..h_out {
            for ow in 0..w_out {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..k {
                    let iy = (oh * stride + dy) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for dx in 0..k {
                        let ix = (ow * stride + dx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        best = best.max(input.data()[(ch * h + iy as usize) * w + ix as usize]);
                    }
                }
                out.data_mut()[(ch * h_out + oh) * w_out + ow] = best;
            }
        }
    }
    out
}

fn avgpool_global(input: &Tensor) -> Tensor {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let mut out = Tensor::zeros(vec![c, 1, 1]);
    for ch in 0..c {
        let sum: f64 = input.data()[ch * h * w..(ch + 1) * h * w].iter().sum();
        out.data_mut()[ch] = sum / (h * w) as f64;
    }
    out
}

/// Run the graph on one `[C, H, W]` input, returning every layer's
/// output keyed by id.
pub fn forward(
    graph: &ModelGraph,
    input: &Tensor,
    resolver: &WeightResolver,
) -> Result<BTreeMap<String, Tensor>, ExecError> {
    let mut outputs: BTreeMap<String, Tensor> = BTreeMap::new();
    for layer in &graph.layers {
        let value = match layer.kind {
            LayerKind::Input => {
                if input.shape() != graph.input_shape.as_slice() {
                    return Err(shape_err(
                        &layer.id,
                        format!(
                            "input tensor shape {:?} does not match graph input_shape {:?}",
                            input.shape(),
                            graph.input_shape
                        ),
                    ));
                }
                input.clone()
            }
            LayerKind::Conv => {
                let kernel = resolver.conv_kernel(layer)?;
                let src = &outputs[&layer.inputs[0]];
                conv2d(src, &kernel, layer.stride, layer.padding).map_err(|source| {
                    ExecError::Tensor {
                        layer: layer.id.clone(),
                        source,
                    }
                })?
            }
            LayerKind::Maxpool => {
                let src = &outputs[&layer.inputs[0]];
                maxpool2d(src, layer.k(), layer.stride, layer.padding)
            }
            LayerKind::AvgpoolGlobal => avgpool_global(&outputs[&layer.inputs[0]]),
            LayerKind::Linear => {
                let weight = resolver.linear_weight(layer)?;
                let src = &outputs[&layer.inputs[0]];
                let n = layer.in_channels;
                let m = layer.out_channels;
                let mut out = Tensor::zeros(vec![m, 1, 1]);
                for i in 0..m {
                    let mut sum = 0.0;
                    for j in 0..n {
                        sum += weight.at2(i, j) * src.data()[j];
                    }
                    out.data_mut()[i] = sum;
                }
                out
            }
            LayerKind::Add => {
                let mut acc = outputs[&layer.inputs[0]].clone();
                for other in &layer.inputs[1..] {
                    let rhs = &outputs[other];
                    for (a, b) in acc.data_mut().iter_mut().zip(rhs.data()) {
                        *a += b;
                    }
                }
                acc
            }
        };
        outputs.insert(layer.id.clone(), value);
    }
    Ok(outputs)
}
