//! Per-proposal scoring: the closed-form flash delta of a Tucker-2
//! swap and the single-forward-pass MSE accuracy proxy, plus the
//! calibration-activation cache both consume.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::decompose::{factors_to_layers, DecomposeError, TuckerFactors};
use crate::exec::{forward, seeded_gaussian_input, ExecError, WeightResolver};
use crate::model::{LayerKind, ModelGraph, WeightSpec};
use crate::tensor::{conv2d, Tensor};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("no cached activation for layer '{0}'")]
    MissingCalibration(String),
    #[error("calibration was built for fingerprint {expected}, graph has {actual}")]
    StaleCalibration { expected: String, actual: String },
    #[error("layer '{0}' is not a conv layer")]
    NotConv(String),
    #[error("reference output of layer '{0}' has zero energy")]
    ZeroEnergy(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error("tensor error: {0}")]
    Tensor(#[from] crate::tensor::TensorError),
}

/// Parameter-count change from decomposing one `N -> M`, `k x k` conv
/// at rank `R`. Negative means the decomposition is larger than the
/// original layer.
pub fn delta_flash(n: usize, m: usize, k: usize, r: usize) -> i64 {
    let (n, m, k, r) = (n as i64, m as i64, k as i64, r as i64);
    n * m * k * k - (n * r + r * r * k * k + r * m)
}

/// How the MSE maps onto the additive accuracy objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProxyMode {
    /// MSE normalized by reference output energy (default): layers
    /// with different output scales stay comparable.
    #[default]
    Relative,
    /// Raw mean squared error.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyScore {
    pub mse: f64,
    pub relative_mse: f64,
    /// `-relative_mse`; the Delta-accuracy term summed by the search.
    pub delta_accuracy: f64,
}

impl ProxyScore {
    pub fn delta(&self, mode: ProxyMode) -> f64 {
        match mode {
            ProxyMode::Relative => -self.relative_mse,
            ProxyMode::Raw => -self.mse,
        }
    }
}

/// One-forward-pass activation cache: for every conv layer, the batch
/// of inputs the original model feeds it. Keyed to one graph revision
/// by fingerprint.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub fingerprint: String,
    pub seed: Option<u64>,
    inputs: BTreeMap<String, Vec<Tensor>>,
}

impl Calibration {
    /// Seeded Gaussian batch at the graph's input shape.
    pub fn seeded(
        graph: &ModelGraph,
        resolver: &WeightResolver,
        seed: u64,
        batch: usize,
    ) -> Result<Self, EstimateError> {
        let inputs: Vec<Tensor> = (0..batch)
            .map(|i| seeded_gaussian_input(graph.input_shape, seed.wrapping_add(i as u64)))
            .collect();
        let mut calib = Self::from_inputs(graph, resolver, &inputs)?;
        calib.seed = Some(seed);
        Ok(calib)
    }

    /// Calibrate from explicit input tensors (e.g. loaded CNT files).
    pub fn from_inputs(
        graph: &ModelGraph,
        resolver: &WeightResolver,
        inputs: &[Tensor],
    ) -> Result<Self, EstimateError> {
        let mut cache: BTreeMap<String, Vec<Tensor>> = BTreeMap::new();
        for input in inputs {
            let outputs = forward(graph, input, resolver)?;
            for layer in &graph.layers {
                if layer.kind == LayerKind::Conv {
                    let fed = outputs[&layer.inputs[0]].clone();
                    cache.entry(layer.id.clone()).or_default().push(fed);
                }
            }
        }
        Ok(Calibration {
            fingerprint: graph.fingerprint(),
            seed: None,
            inputs: cache,
        })
    }

    pub fn layer_inputs(&self, layer_id: &str) -> Option<&[Tensor]> {
        self.inputs.get(layer_id).map(Vec::as_slice)
    }

    pub fn batch(&self) -> usize {
        self.inputs.values().next().map_or(0, Vec::len)
    }
}

/// Layer-local MSE between the original conv's output and the
/// decomposed triplet's output on the cached calibration activations.
pub fn mse_proxy(
    graph: &ModelGraph,
    layer_id: &str,
    factors: &TuckerFactors,
    calib: &Calibration,
    resolver: &WeightResolver,
) -> Result<ProxyScore, EstimateError> {
    let actual = graph.fingerprint();
    if calib.fingerprint != actual {
        return Err(EstimateError::StaleCalibration {
            expected: calib.fingerprint.clone(),
            actual,
        });
    }
    let layer = graph
        .layer(layer_id)
        .ok_or_else(|| EstimateError::MissingCalibration(layer_id.to_string()))?;
    if layer.kind != LayerKind::Conv {
        return Err(EstimateError::NotConv(layer_id.to_string()));
    }
    let batch = calib
        .layer_inputs(layer_id)
        .ok_or_else(|| EstimateError::MissingCalibration(layer_id.to_string()))?;

    let kernel = resolver.conv_kernel(layer)?;
    let triplet = factors_to_layers(factors, layer)?;
    let triplet_kernels: Vec<Tensor> = triplet
        .iter()
        .map(|l| match &l.weights {
            Some(WeightSpec::Inline(t)) => t.clone(),
            _ => unreachable!("factors_to_layers attaches inline weights"),
        })
        .collect();

    let mut sq_err = 0.0;
    let mut sq_ref = 0.0;
    let mut count = 0usize;
    for x in batch {
        let reference = conv2d(x, &kernel, layer.stride, layer.padding)?;
        let y = conv2d(x, &triplet_kernels[0], 1, 0)?;
        let y = conv2d(&y, &triplet_kernels[1], layer.stride, layer.padding)?;
        let y = conv2d(&y, &triplet_kernels[2], 1, 0)?;
        for (a, b) in reference.data().iter().zip(y.data()) {
            let d = a - b;
            sq_err += d * d;
            sq_ref += a * a;
        }
        count += reference.len();
    }
    if sq_ref == 0.0 {
        return Err(EstimateError::ZeroEnergy(layer_id.to_string()));
    }
    let mse = sq_err / count as f64;
    let relative_mse = sq_err / sq_ref;
    Ok(ProxyScore {
        mse,
        relative_mse,
        delta_accuracy: -relative_mse,
    })
}
