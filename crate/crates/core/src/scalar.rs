//! The floating-point element type shared by every numeric module.
//!
//! Everything numeric in this crate is generic over [`Scalar`], which is
//! implemented for `f32` (training and inference) and `f64` (gradient
//! checks and reference computations).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use realfft::FftNum;

/// Element type tag written into checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + FftNum
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    /// `c = alpha * a * b + beta * c` on strided matrices.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; each stride pair is
    /// (row stride, column stride) in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one value from exactly `DTYPE.size()` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn max_offset(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    (rows - 1) * rs as usize + (cols - 1) * cs as usize
}

#[allow(clippy::too_many_arguments)]
fn check_gemm_bounds<T>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_strides: (isize, isize),
    b: &[T],
    b_strides: (isize, isize),
    c: &[T],
    c_strides: (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(max_offset(m, k, a_strides) < a.len(), "gemm: lhs out of bounds");
        assert!(max_offset(k, n, b_strides) < b.len(), "gemm: rhs out of bounds");
    }
    assert!(max_offset(m, n, c_strides) < c.len(), "gemm: output out of bounds");
}

macro_rules! impl_scalar {
    ($ty:ty, $dtype:expr, $gemm:path) => {
        impl Scalar for $ty {
            const DTYPE: DType = $dtype;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                check_gemm_bounds(m, k, n, a, a_strides, b, b_strides, c, c_strides);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every address touched by the kernel was bounds
                // checked above against the slice lengths.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                <$ty>::from_le_bytes(bytes.try_into().expect("exact width"))
            }
        }
    };
}

impl_scalar!(f32, DType::F32, matrixmultiply::sgemm);
impl_scalar!(f64, DType::F64, matrixmultiply::dgemm);

/// Row-major `m x k` times `k x n` into a fresh buffer, optionally reading
/// either operand as transposed storage.
pub fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_transposed: bool,
    b: &[T],
    b_transposed: bool,
) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    matmul_acc(m, k, n, a, a_transposed, b, b_transposed, &mut c, T::zero());
    c
}

/// Like [`matmul`] but writes `c = a*b + beta*c`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_acc<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_transposed: bool,
    b: &[T],
    b_transposed: bool,
    c: &mut [T],
    beta: T,
) {
    let a_strides = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let b_strides = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    T::gemm(m, k, n, T::one(), a, a_strides, b, b_strides, beta, c, (n as isize, 1));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes_match_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut naive = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    naive[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        for (x, y) in matmul(m, k, n, &a, false, &b, false).iter().zip(&naive) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut at = vec![0.0; m * k];
        for i in 0..m {
            for l in 0..k {
                at[l * m + i] = a[i * k + l];
            }
        }
        let mut bt = vec![0.0; k * n];
        for l in 0..k {
            for j in 0..n {
                bt[j * k + l] = b[l * n + j];
            }
        }
        let got = matmul(m, k, n, &at, true, &bt, true);
        for (x, y) in got.iter().zip(&naive) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn le_roundtrip() {
        let mut buf = Vec::new();
        1.25f32.write_le(&mut buf);
        (-3.5f64).write_le(&mut buf);
        assert_eq!(f32::read_le(&buf[..4]), 1.25);
        assert_eq!(f64::read_le(&buf[4..]), -3.5);
    }
}
