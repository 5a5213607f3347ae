use crate::scalar::Real;

use super::DiffError;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, DiffError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(DiffError::Shape(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(DiffError::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// 2-D tensor from a row slice; panics when `data.len() != rows * cols`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn row(data: Vec<T>) -> Self {
        let n = data.len();
        Self::matrix(1, n, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extent of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    /// Product of all but the last axis.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self, DiffError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(DiffError::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::matrix(c, r, out)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: crate::scalar::cast_slice(&self.data),
        }
    }
}

/// `out[m, n] += a[m, k] · b[k, n]`, all row-major.
///
/// Each output row depends only on the matching row of `a`, so results do
/// not change with the number of rows in a batch.
pub(crate) fn gemm_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    assert!(a.len() == m * k && b.len() == k * n && out.len() == m * n);
    let (k_, n_) = (k as isize, n as isize);
    // SAFETY: the asserted lengths cover every index the strides reach.
    unsafe {
        T::gemm_strided(m, k, n, a.as_ptr(), [k_, 1], b.as_ptr(), [n_, 1], out.as_mut_ptr(), [n_, 1]);
    }
}

/// `out[m, k] += g[m, n] · bᵀ` for `b[k, n]`.
pub(crate) fn gemm_a_bt_acc<T: Real>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    assert!(g.len() == m * n && b.len() == k * n && out.len() == m * k);
    let (k_, n_) = (k as isize, n as isize);
    // SAFETY: as in `gemm_acc`, with `b` read through transposed strides.
    unsafe {
        T::gemm_strided(m, n, k, g.as_ptr(), [n_, 1], b.as_ptr(), [1, n_], out.as_mut_ptr(), [k_, 1]);
    }
}

/// `out[k, n] += aᵀ · g` for `a[m, k]`, `g[m, n]`.
pub(crate) fn gemm_at_b_acc<T: Real>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    assert!(a.len() == m * k && g.len() == m * n && out.len() == k * n);
    let (k_, n_) = (k as isize, n as isize);
    // SAFETY: as in `gemm_acc`, with `a` read through transposed strides.
    unsafe {
        T::gemm_strided(k, m, n, a.as_ptr(), [1, k_], g.as_ptr(), [n_, 1], out.as_mut_ptr(), [n_, 1]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    fn ints(len: usize, mul: usize, modulo: usize, scale: f64) -> Vec<f64> {
        (0..len).map(|i| ((i * mul % modulo) as f64 - 3.0) * scale).collect()
    }

    fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        (0..cols * rows).map(|i| x[(i % rows) * cols + i / rows]).collect()
    }

    const SHAPES: [(usize, usize, usize); 6] = [(1, 1, 1), (5, 3, 70), (9, 17, 130), (4, 64, 64), (7, 2, 3), (33, 300, 9)];

    #[test]
    fn gemm_variants_match_naive_on_ragged_shapes() {
        for &(m, k, n) in &SHAPES {
            let a = ints(m * k, 7, 13, 1.0);
            let b = ints(k * n, 5, 11, 0.5);
            let expect = naive(&a, &b, m, k, n);
            let mut out = vec![0.0; m * n];
            gemm_acc(&a, &b, &mut out, m, k, n);
            assert_eq!(out, expect, "shape {m}x{k}x{n}");

            // out[m, k] += c[m, n] · bᵀ with b = [k, n]
            let c = ints(m * n, 3, 7, 0.25);
            let mut got = vec![1.0; m * k];
            gemm_a_bt_acc(&c, &b, &mut got, m, k, n);
            let want = naive(&c, &transpose(&b, k, n), m, n, k);
            assert!(got.iter().zip(&want).all(|(g, w)| *g == w + 1.0));

            // out[k, n] += aᵀ · c
            let mut got = vec![0.0; k * n];
            gemm_at_b_acc(&a, &c, &mut got, m, k, n);
            assert_eq!(got, naive(&transpose(&a, m, k), &c, k, m, n));
        }
    }

    #[test]
    fn gemm_rows_do_not_depend_on_batch_size() {
        let (m, k, n) = (37, 91, 45);
        let a: Vec<f32> = (0..m * k).map(|i| ((i * 7919) % 1000) as f32 / 997.0 - 0.5).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 104729) % 1000) as f32 / 991.0 - 0.5).collect();
        let mut full = vec![0.0; m * n];
        gemm_acc(&a, &b, &mut full, m, k, n);
        for r in [0, 5, 36] {
            let mut one = vec![0.0; n];
            gemm_acc(&a[r * k..(r + 1) * k], &b, &mut one, 1, k, n);
            assert_eq!(one, full[r * n..(r + 1) * n]);
        }
    }

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn transpose_roundtrip() {
        let t = Tensor::matrix(2, 3, vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(t.transpose().transpose(), t);
        assert_eq!(t.transpose().at(2, 1), 6.0);
    }
}
