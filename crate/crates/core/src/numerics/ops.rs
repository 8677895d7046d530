//! Forward kernels shared by the tape and the plain tensor helpers.

use super::{NumericsError, Scalar, Tensor};

pub(crate) fn require_rank<T: Scalar>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<(), NumericsError> {
    if t.ndim() != rank {
        return Err(NumericsError::RankMismatch { op, expected: rank, dims: t.dims().to_vec() });
    }
    Ok(())
}

/// `a · b` or, with `transpose_b`, `a · bᵀ`.
pub(crate) fn matmul_forward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    transpose_b: bool,
) -> Result<Tensor<T>, NumericsError> {
    let op = if transpose_b { "matmul_t" } else { "matmul" };
    require_rank(op, a, 2)?;
    require_rank(op, b, 2)?;
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let (kb, n, b_strides) = if transpose_b {
        (b.dims()[1], b.dims()[0], (1, b.dims()[1] as isize))
    } else {
        (b.dims()[0], b.dims()[1], (b.dims()[1] as isize, 1))
    };
    if k != kb {
        return Err(NumericsError::ShapeMismatch { op, lhs: a.dims().to_vec(), rhs: b.dims().to_vec() });
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, a.data(), (k as isize, 1), b.data(), b_strides, T::zero(), &mut out);
    Tensor::new(vec![m, n], out)
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Index geometry for a reduction along `axis`: (outer, len, inner).
pub(crate) fn axis_geometry(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

pub(crate) fn softmax_forward<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = axis_geometry(x.dims(), axis);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| src[idx(j)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..len {
                let e = (src[idx(j)] - max).exp();
                out[idx(j)] = e;
                total = total + e;
            }
            for j in 0..len {
                out[idx(j)] = out[idx(j)] / total;
            }
        }
    }
    Tensor::new(x.dims().to_vec(), out).expect("same shape as input")
}

/// Row-wise softmax of a square matrix where row `i` only covers columns `0..=i`.
/// Masked entries are exactly zero.
pub(crate) fn causal_softmax_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.dims()[0];
    let src = x.data();
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        let row = &src[i * n..i * n + i + 1];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let dst = &mut out[i * n..i * n + i + 1];
        let mut total = T::zero();
        for (d, &s) in dst.iter_mut().zip(row) {
            *d = (s - max).exp();
            total = total + *d;
        }
        for d in dst.iter_mut() {
            *d = *d / total;
        }
    }
    Tensor::new(vec![n, n], out).expect("square")
}

/// Per-row reciprocal RMS: `1 / sqrt(mean(x²) + eps)`.
pub(crate) fn rms_inverse<T: Scalar>(x: &Tensor<T>, eps: T) -> Vec<T> {
    let n = x.last_dim();
    let inv_n = T::one() / T::lit(n as f64);
    (0..x.rows())
        .map(|r| {
            let ms = x.row(r).iter().map(|&v| v * v).sum::<T>() * inv_n;
            T::one() / (ms + eps).sqrt()
        })
        .collect()
}

pub(crate) fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    max + xs.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

/// Stable `max(x,0) − x·t + ln(1 + e^{−|x|})`.
pub(crate) fn bce_term<T: Scalar>(x: T, t: T) -> T {
    x.max(T::zero()) - x * t + (-x.abs()).exp().ln_1p()
}
