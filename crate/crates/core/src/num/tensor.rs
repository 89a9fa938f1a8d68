use crate::error::{Error, Result};
use crate::num::scalar::Scalar;

/// Dense row-major tensor. The value count always equals the product of the
/// shape; an empty shape denotes a scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, values: Vec<S>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if values.len() != expect {
            return Err(Error::invalid(format!(
                "tensor shape {:?} needs {} values, got {}",
                shape,
                expect,
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![S::zero(); n],
        }
    }

    pub fn zeros_like(other: &Tensor<S>) -> Self {
        Tensor::zeros(&other.shape)
    }

    pub fn scalar(v: S) -> Self {
        Tensor {
            shape: vec![],
            values: vec![v],
        }
    }

    pub fn vector(values: Vec<S>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<S>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("from_rows: no rows"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("from_rows: ragged rows"));
        }
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            values.extend_from_slice(r);
        }
        Tensor::matrix(rows.len(), cols, values)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.values[i * n + i] = S::one();
        }
        t
    }

    pub fn filled(shape: &[usize], v: S) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![v; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn as_scalar(&self) -> Result<S> {
        if self.is_scalar() {
            Ok(self.values[0])
        } else {
            Err(Error::invalid(format!(
                "expected scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at(&self, i: usize, j: usize) -> S {
        self.values[i * self.cols() + j]
    }

    /// Copy of row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> Vec<S> {
        let c = self.cols();
        self.values[i * c..(i + 1) * c].to_vec()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Result<Tensor<S>> {
        if self.rank() != 2 {
            return Err(Error::invalid("transpose expects rank-2"));
        }
        let (r, c) = (self.rows(), self.cols());
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.values[j * r + i] = self.values[i * c + j];
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn zip_map(&self, other: &Tensor<S>, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        if self.shape != other.shape {
            return Err(Error::invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// In-place `self += other`; shapes must already match.
    pub(crate) fn add_assign(&mut self, other: &Tensor<S>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a = *a + b;
        }
    }

    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::invalid("matmul expects rank-2 operands"));
        }
        if self.cols() != other.rows() {
            return Err(Error::invalid(format!(
                "matmul dimension mismatch: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k, n) = (self.rows(), self.cols(), other.cols());
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for p in 0..k {
                let a = self.values[i * k + p];
                if a == S::zero() {
                    continue;
                }
                let row = &other.values[p * n..(p + 1) * n];
                let dst = &mut out.values[i * n..(i + 1) * n];
                for j in 0..n {
                    dst[j] = dst[j] + a * row[j];
                }
            }
        }
        Ok(out)
    }

    /// `A x` for rank-2 `A` and rank-1 `x`.
    pub fn matvec(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if self.rank() != 2 || x.rank() != 1 {
            return Err(Error::invalid(
                "matvec expects rank-2 matrix and rank-1 vector",
            ));
        }
        if self.cols() != x.len() {
            return Err(Error::invalid(format!(
                "matvec dimension mismatch: {:?} x {:?}",
                self.shape,
                x.shape()
            )));
        }
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![S::zero(); m];
        for i in 0..m {
            let mut acc = S::zero();
            let row = &self.values[i * n..(i + 1) * n];
            for j in 0..n {
                acc = acc + row[j] * x.values[j];
            }
            out[i] = acc;
        }
        Ok(Tensor::vector(out))
    }

    /// `A^T x` without materializing the transpose.
    pub(crate) fn tmatvec(&self, x: &Tensor<S>) -> Tensor<S> {
        let (m, n) = (self.rows(), self.cols());
        debug_assert_eq!(m, x.len());
        let mut out = vec![S::zero(); n];
        for i in 0..m {
            let xi = x.values[i];
            if xi == S::zero() {
                continue;
            }
            let row = &self.values[i * n..(i + 1) * n];
            for j in 0..n {
                out[j] = out[j] + row[j] * xi;
            }
        }
        Tensor::vector(out)
    }

    /// Outer product `u v^T`.
    pub(crate) fn outer(u: &Tensor<S>, v: &Tensor<S>) -> Tensor<S> {
        let (m, n) = (u.len(), v.len());
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                out.values[i * n + j] = u.values[i] * v.values[j];
            }
        }
        out
    }

    pub fn dot(&self, other: &Tensor<S>) -> Result<S> {
        if self.rank() != 1 || other.rank() != 1 || self.len() != other.len() {
            return Err(Error::invalid("dot expects rank-1 vectors of equal length"));
        }
        let mut acc = S::zero();
        for (a, b) in self.values.iter().zip(&other.values) {
            acc = acc + *a * *b;
        }
        Ok(acc)
    }
}
