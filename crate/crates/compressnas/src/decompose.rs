//! Tucker-2 decomposition of conv kernels: HOSVD initialization,
//! optional HOOI refinement sweeps, and realization of the factors as
//! the 1x1 -> kxk -> 1x1 layer triplet.

use thiserror::Error;

use crate::model::{LayerKind, LayerSpec, WeightSpec};
use crate::tensor::{svd_truncated, unfold, Tensor, TensorError, UnfoldMode};

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("rank {r} out of range 1..={max}")]
    RankOutOfRange { r: usize, max: usize },
    #[error("layer '{0}' is not a decomposable conv")]
    NotDecomposable(String),
    #[error("tensor error: {0}")]
    Tensor(#[from] TensorError),
}

/// Rank-R Tucker-2 factorization of a `[M, N, k, k]` kernel: only the
/// two channel modes are truncated.
#[derive(Debug, Clone)]
pub struct TuckerFactors {
    pub rank: usize,
    /// `[N, R]`, orthonormal columns.
    pub input_factor: Tensor,
    /// `[M, R]`, orthonormal columns.
    pub output_factor: Tensor,
    /// `[R, R, k, k]`.
    pub core: Tensor,
    pub stride: usize,
    pub padding: usize,
}

/// Contract the input-channel mode: `K [M,N,k,k] x U [N,R] -> [M,R,k,k]`.
fn contract_input(kernel: &Tensor, factor: &Tensor) -> Tensor {
    let (m, n, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    let r = factor.shape()[1];
    let mut out = Tensor::zeros(vec![m, r, kh, kw]);
    for o in 0..m {
        for t in 0..r {
            for a in 0..kh {
                for b in 0..kw {
                    let mut sum = 0.0;
                    for i in 0..n {
                        sum += kernel.at4(o, i, a, b) * factor.at2(i, t);
                    }
                    out.set4(o, t, a, b, sum);
                }
            }
        }
    }
    out
}

/// Contract the output-channel mode: `K [M,N,k,k] x U [M,R] -> [R,N,k,k]`.
fn contract_output(kernel: &Tensor, factor: &Tensor) -> Tensor {
    let (m, n, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    let r = factor.shape()[1];
    let mut out = Tensor::zeros(vec![r, n, kh, kw]);
    for t in 0..r {
        for i in 0..n {
            for a in 0..kh {
                for b in 0..kw {
                    let mut sum = 0.0;
                    for o in 0..m {
                        sum += kernel.at4(o, i, a, b) * factor.at2(o, t);
                    }
                    out.set4(t, i, a, b, sum);
                }
            }
        }
    }
    out
}

/// Tucker-2 at rank `R`: HOSVD initialization (top-R singular vectors
/// of each channel-mode unfolding) followed by `hooi_iters` alternating
/// refinement sweeps. Deterministic through the SVD sign convention.
pub fn tucker2_decompose(
    kernel: &Tensor,
    rank: usize,
    hooi_iters: usize,
) -> Result<TuckerFactors, DecomposeError> {
    if kernel.ndim() != 4 {
        return Err(DecomposeError::Tensor(TensorError::WrongAxisCount {
            expected: 4,
            actual: kernel.ndim(),
        }));
    }
    kernel.check_finite()?;
    let (m, n) = (kernel.shape()[0], kernel.shape()[1]);
    let max = m.min(n);
    if rank == 0 || rank > max {
        return Err(DecomposeError::RankOutOfRange { r: rank, max });
    }

    let mut output_factor = svd_truncated(&unfold(kernel, UnfoldMode::Output)?, rank)?.left_vectors;
    let mut input_factor = svd_truncated(&unfold(kernel, UnfoldMode::Input)?, rank)?.left_vectors;

    for _ in 0..hooi_iters {
        let projected = contract_input(kernel, &input_factor);
        output_factor = svd_truncated(&unfold(&projected, UnfoldMode::Output)?, rank)?.left_vectors;
        let projected = contract_output(kernel, &output_factor);
        // The output mode of the projected tensor is now R; the input
        // channel axis sits in the first position of the unfolding.
        input_factor = svd_truncated(&unfold(&projected, UnfoldMode::Input)?, rank)?.left_vectors;
    }

    let core = contract_input(&contract_output(kernel, &output_factor), &input_factor);
    Ok(TuckerFactors {
        rank,
        input_factor,
        output_factor,
        core,
        stride: 1,
        padding: 0,
    })
}

/// `U_out x_1 core x_2 U_in`: rebuilds the full `[M, N, k, k]` kernel.
pub fn reconstruct(factors: &TuckerFactors) -> Tensor {
    let r = factors.rank;
    let m = factors.output_factor.shape()[0];
    let n = factors.input_factor.shape()[0];
    let (kh, kw) = (factors.core.shape()[2], factors.core.shape()[3]);
    let mut out = Tensor::zeros(vec![m, n, kh, kw]);
    for o in 0..m {
        for i in 0..n {
            for a in 0..kh {
                for b in 0..kw {
                    let mut sum = 0.0;
                    for ro in 0..r {
                        let uo = factors.output_factor.at2(o, ro);
                        for ri in 0..r {
                            sum += uo
                                * factors.core.at4(ro, ri, a, b)
                                * factors.input_factor.at2(i, ri);
                        }
                    }
                    out.set4(o, i, a, b, sum);
                }
            }
        }
    }
    out
}

/// Relative Frobenius reconstruction error against the source kernel.
pub fn reconstruction_error(kernel: &Tensor, factors: &TuckerFactors) -> f64 {
    let rec = reconstruct(factors);
    let diff = rec.sub(kernel).expect("shapes match");
    let norm = kernel.frobenius_norm();
    if norm == 0.0 {
        diff.frobenius_norm()
    } else {
        diff.frobenius_norm() / norm
    }
}

/// Realize the factors as three conv layers replacing `base`:
/// 1x1 N->R (input factor), kxk R->R core carrying the base stride and
/// padding, 1x1 R->M (output factor). The expansion 1x1 inherits the
/// base batch-norm tag so the parameter delta of the swap is exactly
/// the closed-form flash delta.
pub fn factors_to_layers(
    factors: &TuckerFactors,
    base: &LayerSpec,
) -> Result<[LayerSpec; 3], DecomposeError> {
    if base.kind != LayerKind::Conv || !base.decomposable {
        return Err(DecomposeError::NotDecomposable(base.id.clone()));
    }
    let r = factors.rank;
    let n = factors.input_factor.shape()[0];
    let m = factors.output_factor.shape()[0];
    let k = factors.core.shape()[2];

    let mut reduce_kernel = Tensor::zeros(vec![r, n, 1, 1]);
    for t in 0..r {
        for i in 0..n {
            reduce_kernel.set4(t, i, 0, 0, factors.input_factor.at2(i, t));
        }
    }
    let mut expand_kernel = Tensor::zeros(vec![m, r, 1, 1]);
    for o in 0..m {
        for t in 0..r {
            expand_kernel.set4(o, t, 0, 0, factors.output_factor.at2(o, t));
        }
    }

    let mut reduce = LayerSpec::conv(&format!("{}_a", base.id), n, r, 1, 1, 0, "");
    reduce.weights = Some(WeightSpec::Inline(reduce_kernel));

    let mut core = LayerSpec::conv(
        &format!("{}_b", base.id),
        r,
        r,
        k,
        base.stride,
        base.padding,
        "",
    );
    core.decomposable = true;
    core.weights = Some(WeightSpec::Inline(factors.core.clone()));

    let mut expand = LayerSpec::conv(&format!("{}_c", base.id), r, m, 1, 1, 0, "");
    expand.bn = base.bn;
    expand.weights = Some(WeightSpec::Inline(expand_kernel));

    Ok([reduce, core, expand])
}
