//! Dense row-major `f64` tensors and the matrix kernel every layer sits on.

use crate::error::{Error, Result};
use crate::par::*;

/// N-dimensional array of `f64` stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("empty shape list".into()));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::Shape(format!("zero extent at axis {pos} in {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    /// Tensor of `shape` with every element equal to `value`.
    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::Shape(format!(
                "index rank {} for tensor of rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut off = 0;
        for (axis, (&i, &d)) in index.iter().zip(&self.shape).enumerate() {
            if i >= d {
                return Err(Error::Shape(format!("index {i} out of bounds {d} on axis {axis}")));
            }
            off = off * d + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Standard matrix product of `a[M,K]` and `b[K,N]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::Shape(format!(
            "matmul needs rank-2 operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Shape(format!(
            "inner extents differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        m,
        k,
        n,
        MatRef::row_major(&a.data, k),
        MatRef::row_major(&b.data, n),
        &mut out,
        false,
    );
    Tensor::from_vec(&[m, n], out)
}

/// Borrowed strided matrix view used by [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    data: &'a [f64],
    rs: usize,
    cs: usize,
}

impl<'a> MatRef<'a> {
    pub(crate) fn row_major(data: &'a [f64], cols: usize) -> Self {
        MatRef { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major `rows x cols` buffer.
    pub(crate) fn transposed(data: &'a [f64], cols: usize) -> Self {
        MatRef { data, rs: 1, cs: cols }
    }

    fn rows_from(self, start: usize) -> Self {
        MatRef {
            data: &self.data[start * self.rs..],
            ..self
        }
    }

    fn assert_fits(&self, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            let last = (rows - 1) * self.rs + (cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `c[M,N] (+)= a[M,K] * b[K,N]`, single-threaded. `c` is row-major.
pub(crate) fn gemm_serial(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_>,
    b: MatRef<'_>,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    a.assert_fits(m, k);
    b.assert_fits(k, n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the views were bounds-checked above for the requested extents and
    // `c` holds exactly m*n contiguous elements with row stride n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Same contract as [`gemm_serial`], split over row blocks of `c`.
///
/// Every output element is produced by exactly one serial call over the full
/// inner dimension, so results do not depend on the worker count.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_>,
    b: MatRef<'_>,
    c: &mut [f64],
    accumulate: bool,
) {
    let threads = current_num_threads();
    if threads <= 1 || m < 16 || m * n * k < 1 << 18 {
        gemm_serial(m, k, n, a, b, c, accumulate);
        return;
    }
    let rows = m.div_ceil(threads * 2).max(8);
    c.par_chunks_mut(rows * n)
        .enumerate()
        .for_each(|(block, chunk)| {
            let r0 = block * rows;
            let mr = chunk.len() / n;
            gemm_serial(mr, k, n, a.rows_from(r0), b, chunk, accumulate);
        });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        Tensor::from_vec(&[m, n], out).unwrap()
    }

    #[test]
    fn full_fills_and_counts() {
        let t = Tensor::full(&[2, 2], 0.0).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        let t = Tensor::full(&[1], 7.5).unwrap();
        assert_eq!(t.data(), &[7.5]);
        let t = Tensor::full(&[3, 2, 2], 1.0).unwrap();
        assert_eq!(t.len(), 12);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn full_rejects_bad_shapes() {
        assert!(matches!(Tensor::full(&[], 1.0), Err(Error::Shape(_))));
        assert!(matches!(Tensor::full(&[2, 0], 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_identity_and_zero() {
        let x = Tensor::from_vec(&[3, 4], (0..12).map(|v| v as f64 * 0.5 - 2.0).collect()).unwrap();
        let id = Tensor::identity(3).unwrap();
        assert_eq!(matmul(&id, &x).unwrap(), x);
        let z = Tensor::zeros(&[2, 3]).unwrap();
        assert_eq!(matmul(&z, &x).unwrap(), Tensor::zeros(&[2, 4]).unwrap());
    }

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![5.0, 6.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::zeros(&[2, 3]).unwrap();
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_agrees_with_naive_on_large_blocks() {
        let (m, k, n) = (70, 90, 50);
        let a = Tensor::from_vec(&[m, k], (0..m * k).map(|i| ((i * 37 % 101) as f64 - 50.0) / 17.0).collect()).unwrap();
        let b = Tensor::from_vec(&[k, n], (0..k * n).map(|i| ((i * 53 % 97) as f64 - 48.0) / 13.0).collect()).unwrap();
        assert!(matmul(&a, &b).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-9);
    }

    #[test]
    fn transposed_views() {
        // a is 2x3, use a^T (3x2) times a (2x3).
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut c = vec![0.0; 9];
        gemm(3, 2, 3, MatRef::transposed(&a, 3), MatRef::row_major(&a, 3), &mut c, false);
        let at = Tensor::from_vec(&[3, 2], vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]).unwrap();
        let at_a = naive(&at, &Tensor::from_vec(&[2, 3], a.clone()).unwrap());
        assert_eq!(c, at_a.data());
    }

    #[test]
    fn strided_offsets_exhaustive_to_rank_four() {
        for shape in [vec![3], vec![2, 3], vec![2, 3, 4], vec![2, 1, 3, 2], vec![3, 2, 2, 3]] {
            let t = Tensor::zeros(&shape).unwrap();
            let strides: Vec<usize> = (0..shape.len())
                .map(|a| shape[a + 1..].iter().product())
                .collect();
            for flat in 0..t.len() {
                let mut rem = flat;
                let mut idx = vec![0; shape.len()];
                for a in (0..shape.len()).rev() {
                    idx[a] = rem % shape[a];
                    rem /= shape[a];
                }
                let expect: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
                assert_eq!(t.offset(&idx).unwrap(), expect);
                assert_eq!(expect, flat);
            }
        }
    }
}
