//! Dense-tensor numerics: row-major tensors, a reference conv2d forward
//! pass, mode unfoldings of 4-axis kernels, and a dependency-free
//! truncated SVD built on Jacobi eigendecomposition of the Gram matrix.

// Indexed loops mirror the subscript-heavy math; iterator chains would
// obscure which axis each index walks.
#![allow(clippy::needless_range_loop)]

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were provided")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("invalid shape {0:?}: every extent must be >= 1 (max 4 axes)")]
    InvalidShape(Vec<usize>),
    #[error("axis mismatch on {axis}: expected {expected}, got {actual}")]
    AxisMismatch {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("expected a {expected}-axis tensor, got {actual} axes")]
    WrongAxisCount { expected: usize, actual: usize },
    #[error("convolution output extent would be empty (H'={h_out}, W'={w_out})")]
    EmptyOutput { h_out: isize, w_out: isize },
    #[error("rank {r} out of range 1..={max}")]
    RankOutOfRange { r: usize, max: usize },
    #[error("non-finite entry at flat index {0}")]
    NonFinite(usize),
}

/// Dense row-major tensor of f64 values, up to 4 axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.len() > 4 || shape.contains(&0) {
            return Err(TensorError::InvalidShape(shape));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n]).expect("zeros shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
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

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self) -> Result<(), TensorError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(TensorError::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// 2-axis accessor.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j] = v;
    }

    /// 4-axis accessor.
    pub fn at4(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 4);
        let s = &self.shape;
        self.data[((a * s[1] + b) * s[2] + c) * s[3] + d]
    }

    pub fn set4(&mut self, a: usize, b: usize, c: usize, d: usize, v: f64) {
        debug_assert_eq!(self.shape.len(), 4);
        let s = &self.shape;
        self.data[((a * s[1] + b) * s[2] + c) * s[3] + d] = v;
    }

    /// Elementwise difference, shapes must match.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::AxisMismatch {
                axis: "shape",
                expected: self.len(),
                actual: other.len(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Tensor::new(self.shape.clone(), data)
    }
}

/// Cross-correlation forward pass, no bias, zero padding.
///
/// `input` is `[C_in, H, W]`, `kernel` is `[C_out, C_in, k, k]`;
/// output is `[C_out, H', W']` with `H' = (H + 2*pad - k) / stride + 1`.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, TensorError> {
    if input.ndim() != 3 {
        return Err(TensorError::WrongAxisCount {
            expected: 3,
            actual: input.ndim(),
        });
    }
    if kernel.ndim() != 4 {
        return Err(TensorError::WrongAxisCount {
            expected: 4,
            actual: kernel.ndim(),
        });
    }
    assert!(stride >= 1, "stride must be >= 1");
    let (c_in, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (c_out, kc_in, kh, kw) = (
        kernel.shape[0],
        kernel.shape[1],
        kernel.shape[2],
        kernel.shape[3],
    );
    if kc_in != c_in {
        return Err(TensorError::AxisMismatch {
            axis: "in_channels",
            expected: c_in,
            actual: kc_in,
        });
    }
    if kh != kw {
        return Err(TensorError::AxisMismatch {
            axis: "kernel extent (must be square)",
            expected: kh,
            actual: kw,
        });
    }
    let k = kh;
    let h_out = (h as isize + 2 * padding as isize - k as isize) / stride as isize + 1;
    let w_out = (w as isize + 2 * padding as isize - k as isize) / stride as isize + 1;
    if h_out < 1 || w_out < 1 {
        return Err(TensorError::EmptyOutput { h_out, w_out });
    }
    let (h_out, w_out) = (h_out as usize, w_out as usize);

    let mut out = Tensor::zeros(vec![c_out, h_out, w_out]);
    let pad = padding as isize;
    for oc in 0..c_out {
        for oh in 0..h_out {
            for ow in 0..w_out {
                let mut sum = 0.0;
                for ic in 0..c_in {
                    for dy in 0..k {
                        let iy = (oh * stride) as isize + dy as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for dx in 0..k {
                            let ix = (ow * stride) as isize + dx as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            sum += input.data[(ic * h + iy as usize) * w + ix as usize]
                                * kernel.at4(oc, ic, dy, dx);
                        }
                    }
                }
                out.data[(oc * h_out + oh) * w_out + ow] = sum;
            }
        }
    }
    Ok(out)
}

/// Which channel mode of a `[M, N, k, k]` kernel to matricize along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnfoldMode {
    /// Rows indexed by output channel: `M x (N*k*k)`.
    Output,
    /// Rows indexed by input channel: `N x (M*k*k)`.
    Input,
}

/// Mode-n matricization of a 4-axis conv kernel.
pub fn unfold(kernel: &Tensor, mode: UnfoldMode) -> Result<Tensor, TensorError> {
    if kernel.ndim() != 4 {
        return Err(TensorError::WrongAxisCount {
            expected: 4,
            actual: kernel.ndim(),
        });
    }
    let (m, n, kh, kw) = (
        kernel.shape[0],
        kernel.shape[1],
        kernel.shape[2],
        kernel.shape[3],
    );
    let out = match mode {
        UnfoldMode::Output => {
            let mut t = Tensor::zeros(vec![m, n * kh * kw]);
            for o in 0..m {
                for i in 0..n {
                    for a in 0..kh {
                        for b in 0..kw {
                            t.set2(o, (i * kh + a) * kw + b, kernel.at4(o, i, a, b));
                        }
                    }
                }
            }
            t
        }
        UnfoldMode::Input => {
            let mut t = Tensor::zeros(vec![n, m * kh * kw]);
            for i in 0..n {
                for o in 0..m {
                    for a in 0..kh {
                        for b in 0..kw {
                            t.set2(i, (o * kh + a) * kw + b, kernel.at4(o, i, a, b));
                        }
                    }
                }
            }
            t
        }
    };
    Ok(out)
}

/// Inverse of [`unfold`]: rebuilds the `[M, N, k, k]` kernel from its matricization.
pub fn fold(
    matrix: &Tensor,
    mode: UnfoldMode,
    kernel_shape: [usize; 4],
) -> Result<Tensor, TensorError> {
    if matrix.ndim() != 2 {
        return Err(TensorError::WrongAxisCount {
            expected: 2,
            actual: matrix.ndim(),
        });
    }
    let [m, n, kh, kw] = kernel_shape;
    let (rows, cols) = match mode {
        UnfoldMode::Output => (m, n * kh * kw),
        UnfoldMode::Input => (n, m * kh * kw),
    };
    if matrix.shape[0] != rows || matrix.shape[1] != cols {
        return Err(TensorError::AxisMismatch {
            axis: "unfolded matrix rows",
            expected: rows,
            actual: matrix.shape[0],
        });
    }
    let mut kernel = Tensor::zeros(vec![m, n, kh, kw]);
    for o in 0..m {
        for i in 0..n {
            for a in 0..kh {
                for b in 0..kw {
                    let v = match mode {
                        UnfoldMode::Output => matrix.at2(o, (i * kh + a) * kw + b),
                        UnfoldMode::Input => matrix.at2(i, (o * kh + a) * kw + b),
                    };
                    kernel.set4(o, i, a, b, v);
                }
            }
        }
    }
    Ok(kernel)
}

/// Top-r singular triplets of a matrix.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows x r`, orthonormal columns.
    pub left_vectors: Tensor,
    /// Descending, non-negative.
    pub singular_values: Vec<f64>,
    /// `cols x r`, orthonormal columns.
    pub right_vectors: Tensor,
}

impl SvdResult {
    /// `U * diag(sigma) * V^T`, the best rank-r approximation.
    pub fn reconstruct(&self) -> Tensor {
        let rows = self.left_vectors.shape()[0];
        let cols = self.right_vectors.shape()[0];
        let r = self.singular_values.len();
        let mut out = Tensor::zeros(vec![rows, cols]);
        for i in 0..rows {
            for j in 0..cols {
                let mut sum = 0.0;
                for t in 0..r {
                    sum += self.left_vectors.at2(i, t)
                        * self.singular_values[t]
                        * self.right_vectors.at2(j, t);
                }
                out.set2(i, j, sum);
            }
        }
        out
    }
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix via cyclic Jacobi rotations.
/// Returns (eigenvalues, column eigenvectors), unsorted.
fn jacobi_eigen(sym: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = sym.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| 2.0 * a[p * n + q] * a[p * n + q])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[i * n + p];
                    let aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[p * n + j];
                    let aqj = a[q * n + j];
                    a[p * n + j] = c * apj - s * aqj;
                    a[q * n + j] = s * apj + c * aqj;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    let eigvals = (0..n).map(|i| a[i * n + i]).collect();
    (eigvals, v)
}

/// Truncated SVD via eigendecomposition of the smaller Gram matrix.
///
/// Deterministic sign convention: each left vector's largest-magnitude
/// entry is made non-negative, ties broken at the lowest index.
pub fn svd_truncated(matrix: &Tensor, r: usize) -> Result<SvdResult, TensorError> {
    if matrix.ndim() != 2 {
        return Err(TensorError::WrongAxisCount {
            expected: 2,
            actual: matrix.ndim(),
        });
    }
    matrix.check_finite()?;
    let (m, n) = (matrix.shape[0], matrix.shape[1]);
    let max_r = m.min(n);
    if r == 0 || r > max_r {
        return Err(TensorError::RankOutOfRange { r, max: max_r });
    }

    // Gram matrix on the smaller side.
    let use_cols = n <= m;
    let g_dim = if use_cols { n } else { m };
    let mut gram = vec![0.0; g_dim * g_dim];
    for i in 0..g_dim {
        for j in i..g_dim {
            let mut sum = 0.0;
            if use_cols {
                for t in 0..m {
                    sum += matrix.at2(t, i) * matrix.at2(t, j);
                }
            } else {
                for t in 0..n {
                    sum += matrix.at2(i, t) * matrix.at2(j, t);
                }
            }
            gram[i * g_dim + j] = sum;
            gram[j * g_dim + i] = sum;
        }
    }
    let (eigvals, eigvecs) = jacobi_eigen(&gram, g_dim);
    let mut order: Vec<usize> = (0..g_dim).collect();
    order.sort_by(|&a, &b| {
        eigvals[b]
            .partial_cmp(&eigvals[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut left = Tensor::zeros(vec![m, r]);
    let mut right = Tensor::zeros(vec![n, r]);
    let mut sigmas = Vec::with_capacity(r);
    for (t, &col) in order.iter().take(r).enumerate() {
        let sigma = eigvals[col].max(0.0).sqrt();
        sigmas.push(sigma);
        let small: Vec<f64> = (0..g_dim).map(|i| eigvecs[i * g_dim + col]).collect();
        // Recover the other side's vector by applying the matrix.
        let (u, v): (Vec<f64>, Vec<f64>) = if use_cols {
            let mut u = vec![0.0; m];
            if sigma > 0.0 {
                for i in 0..m {
                    let mut sum = 0.0;
                    for j in 0..n {
                        sum += matrix.at2(i, j) * small[j];
                    }
                    u[i] = sum / sigma;
                }
                normalize(&mut u);
            }
            (u, small)
        } else {
            let mut v = vec![0.0; n];
            if sigma > 0.0 {
                for j in 0..n {
                    let mut sum = 0.0;
                    for i in 0..m {
                        sum += matrix.at2(i, j) * small[i];
                    }
                    v[j] = sum / sigma;
                }
                normalize(&mut v);
            }
            (small, v)
        };
        let (mut u, mut v) = (u, v);
        if dominant_entry(&u) < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..m {
            left.set2(i, t, u[i]);
        }
        for j in 0..n {
            right.set2(j, t, v[j]);
        }
    }
    Ok(SvdResult {
        left_vectors: left,
        singular_values: sigmas,
        right_vectors: right,
    })
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Value of the largest-magnitude entry, ties broken at the lowest index.
fn dominant_entry(v: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for &x in v {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    /// Direct six-nested-loop convolution used as the independent oracle.
    fn conv2d_oracle(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Tensor {
        let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (c_out, k) = (kernel.shape()[0], kernel.shape()[2]);
        let h_out = (h + 2 * padding - k) / stride + 1;
        let w_out = (w + 2 * padding - k) / stride + 1;
        let mut out = Tensor::zeros(vec![c_out, h_out, w_out]);
        for oc in 0..c_out {
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut sum = 0.0;
                    for ic in 0..c_in {
                        for dy in 0..k {
                            for dx in 0..k {
                                let iy = (oh * stride + dy) as isize - padding as isize;
                                let ix = (ow * stride + dx) as isize - padding as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    sum += input.data()[(ic * h + iy as usize) * w + ix as usize]
                                        * kernel.at4(oc, ic, dy, dx);
                                }
                            }
                        }
                    }
                    out.data_mut()[(oc * h_out + oh) * w_out + ow] = sum;
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let input = random_tensor(vec![3, 5, 5], 1);
        let mut kernel = Tensor::zeros(vec![3, 3, 1, 1]);
        for c in 0..3 {
            kernel.set4(c, c, 0, 0, 1.0);
        }
        let out = conv2d(&input, &kernel, 1, 0).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv_averaging_kernel_on_constant_input() {
        let input = Tensor::new(vec![1, 4, 4], vec![1.0; 16]).unwrap();
        let kernel = Tensor::new(vec![1, 1, 3, 3], vec![1.0 / 9.0; 9]).unwrap();
        let out = conv2d(&input, &kernel, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        for &v in out.data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let input = random_tensor(vec![3, 8, 8], 7);
        let kernel = random_tensor(vec![4, 3, 3, 3], 8);
        let got = conv2d(&input, &kernel, 2, 1).unwrap();
        let want = conv2d_oracle(&input, &kernel, 2, 1);
        assert_eq!(got.shape(), want.shape());
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let input = random_tensor(vec![3, 4, 4], 2);
        let kernel = random_tensor(vec![2, 4, 3, 3], 3);
        let err = conv2d(&input, &kernel, 1, 1).unwrap_err();
        assert!(err.to_string().contains("in_channels"));
    }

    #[test]
    fn conv_is_linear_in_kernel() {
        let input = random_tensor(vec![2, 6, 6], 11);
        let k1 = random_tensor(vec![3, 2, 3, 3], 12);
        let k2 = random_tensor(vec![3, 2, 3, 3], 13);
        let (alpha, beta) = (0.7, -1.3);
        let mixed = Tensor::new(
            k1.shape().to_vec(),
            k1.data()
                .iter()
                .zip(k2.data())
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        )
        .unwrap();
        let lhs = conv2d(&input, &mixed, 1, 1).unwrap();
        let y1 = conv2d(&input, &k1, 1, 1).unwrap();
        let y2 = conv2d(&input, &k2, 1, 1).unwrap();
        for ((l, a), b) in lhs.data().iter().zip(y1.data()).zip(y2.data()) {
            let want = alpha * a + beta * b;
            assert!((l - want).abs() <= 1e-9 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn unfold_1x1_kernel_degenerates_to_matrix() {
        let kernel = random_tensor(vec![2, 3, 1, 1], 4);
        let mat = unfold(&kernel, UnfoldMode::Output).unwrap();
        assert_eq!(mat.shape(), &[2, 3]);
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(mat.at2(o, i), kernel.at4(o, i, 0, 0));
            }
        }
    }

    #[test]
    fn unfold_fold_round_trip_is_exact() {
        let kernel = random_tensor(vec![2, 3, 3, 3], 5);
        for mode in [UnfoldMode::Output, UnfoldMode::Input] {
            let mat = unfold(&kernel, mode).unwrap();
            let back = fold(&mat, mode, [2, 3, 3, 3]).unwrap();
            assert_eq!(back, kernel);
        }
    }

    #[test]
    fn unfold_input_mode_shape() {
        let kernel = random_tensor(vec![4, 2, 3, 3], 6);
        let mat = unfold(&kernel, UnfoldMode::Input).unwrap();
        assert_eq!(mat.shape(), &[2, 36]);
    }

    #[test]
    fn unfold_rejects_non_4_axis() {
        let t = random_tensor(vec![3, 3], 1);
        assert!(unfold(&t, UnfoldMode::Output).is_err());
    }

    #[test]
    fn svd_identity_has_unit_singular_values() {
        let mut eye = Tensor::zeros(vec![3, 3]);
        for i in 0..3 {
            eye.set2(i, i, 1.0);
        }
        let svd = svd_truncated(&eye, 3).unwrap();
        for &s in &svd.singular_values {
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn svd_rank_one_matrix_analytic() {
        // a*b^T with ||a||=2, ||b||=3 has sigma_1 = 6.
        let a = [2.0, 0.0, 0.0]; // ||a|| = 2
        let b = [3.0 / 2f64.sqrt(), 3.0 / 2f64.sqrt()]; // ||b|| = 3
        let mut m = Tensor::zeros(vec![3, 2]);
        for i in 0..3 {
            for j in 0..2 {
                m.set2(i, j, a[i] * b[j]);
            }
        }
        let svd = svd_truncated(&m, 1).unwrap();
        assert!((svd.singular_values[0] - 6.0).abs() < 1e-10);
        let rec = svd.reconstruct();
        assert!(rec.sub(&m).unwrap().frobenius_norm() < 1e-10);
    }

    #[test]
    fn svd_eckart_young_truncation_error() {
        let m = random_tensor(vec![8, 5], 21);
        let full = svd_truncated(&m, 5).unwrap();
        let rec = full.reconstruct();
        assert!(rec.sub(&m).unwrap().frobenius_norm() < 1e-8);

        let trunc = svd_truncated(&m, 2).unwrap();
        let err = trunc.reconstruct().sub(&m).unwrap().frobenius_norm();
        let expected = (full.singular_values[2..]
            .iter()
            .map(|s| s * s)
            .sum::<f64>())
        .sqrt();
        assert!((err - expected).abs() < 1e-8);
    }

    #[test]
    fn svd_residual_non_increasing_in_rank() {
        let m = random_tensor(vec![7, 6], 33);
        let mut prev = f64::INFINITY;
        for r in 1..=6 {
            let svd = svd_truncated(&m, r).unwrap();
            let err = svd.reconstruct().sub(&m).unwrap().frobenius_norm();
            assert!(err <= prev + 1e-10, "residual rose at r={r}");
            prev = err;
        }
    }

    #[test]
    fn svd_columns_orthonormal_and_sign_convention() {
        let m = random_tensor(vec![6, 4], 44);
        let svd = svd_truncated(&m, 4).unwrap();
        for s in 0..4 {
            for t in 0..4 {
                let dot: f64 = (0..6)
                    .map(|i| svd.left_vectors.at2(i, s) * svd.left_vectors.at2(i, t))
                    .sum();
                let want = if s == t { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8);
            }
            let col: Vec<f64> = (0..6).map(|i| svd.left_vectors.at2(i, s)).collect();
            assert!(dominant_entry(&col) >= 0.0);
        }
    }

    #[test]
    fn svd_rejects_out_of_range_rank() {
        let m = random_tensor(vec![4, 3], 2);
        assert!(matches!(
            svd_truncated(&m, 4),
            Err(TensorError::RankOutOfRange { .. })
        ));
        assert!(svd_truncated(&m, 0).is_err());
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut m = random_tensor(vec![3, 3], 2);
        m.data_mut()[4] = f64::NAN;
        assert!(matches!(
            svd_truncated(&m, 2),
            Err(TensorError::NonFinite(_))
        ));
    }
}
