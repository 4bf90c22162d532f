//! Dense row-major `f64` tensor.
//!
//! The unit of all model math. Deliberately minimal: just the shapes and
//! operations the MLP forward/backward passes need, every operation a
//! pure function returning a fresh tensor.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking `product(shape) == data.len()`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::dimension(format!(
                "tensor shape {shape:?} has a zero dimension"
            )));
        }
        if numel != data.len() {
            return Err(Error::dimension(format!(
                "tensor shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    /// 1-element tensor holding a scalar.
    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Scalar value of a 1-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::contract(format!(
                "expected scalar tensor, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    fn check_matrix(&self, what: &str) -> Result<()> {
        if self.is_matrix() {
            Ok(())
        } else {
            Err(Error::dimension(format!(
                "{what} must be a matrix, got shape {:?}",
                self.shape
            )))
        }
    }

    /// `self[m×k] · other[n×k]ᵀ -> [m×n]` (inputs against a row-major
    /// `[out×in]` weight).
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        self.check_matrix("matmul_nt lhs")?;
        other.check_matrix("matmul_nt rhs")?;
        let (m, k) = (self.rows(), self.cols());
        let (n, k2) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::dimension(format!(
                "matmul_nt: inner dims differ, lhs [{m}x{k}] vs rhs [{n}x{k2}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let lrow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let rrow = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for p in 0..k {
                    acc += lrow[p] * rrow[p];
                }
                out[i * n + j] = acc;
            }
        }
        Tensor::matrix(m, n, out)
    }

    /// `self[m×k] · other[k×n] -> [m×n]`.
    pub fn matmul_nn(&self, other: &Tensor) -> Result<Tensor> {
        self.check_matrix("matmul_nn lhs")?;
        other.check_matrix("matmul_nn rhs")?;
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::dimension(format!(
                "matmul_nn: inner dims differ, lhs [{m}x{k}] vs rhs [{k2}x{n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let l = self.data[i * k + p];
                if l == 0.0 {
                    continue;
                }
                let rrow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += l * rrow[j];
                }
            }
        }
        Tensor::matrix(m, n, out)
    }

    /// `selfᵀ · other`: `self[m×k]` transposed against `other[m×n]`,
    /// producing `[k×n]`.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        self.check_matrix("matmul_tn lhs")?;
        other.check_matrix("matmul_tn rhs")?;
        let (m, k) = (self.rows(), self.cols());
        let (m2, n) = (other.rows(), other.cols());
        if m != m2 {
            return Err(Error::dimension(format!(
                "matmul_tn: outer dims differ, lhs [{m}x{k}] vs rhs [{m2}x{n}]"
            )));
        }
        let mut out = vec![0.0; k * n];
        for i in 0..m {
            let lrow = &self.data[i * k..(i + 1) * k];
            let rrow = &other.data[i * n..(i + 1) * n];
            for p in 0..k {
                let l = lrow[p];
                if l == 0.0 {
                    continue;
                }
                let orow = &mut out[p * n..(p + 1) * n];
                for j in 0..n {
                    orow[j] += l * rrow[j];
                }
            }
        }
        Tensor::matrix(k, n, out)
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        self.check_matrix("add_row lhs")?;
        if bias.numel() != self.cols() {
            return Err(Error::dimension(format!(
                "add_row: bias length {} vs {} columns",
                bias.numel(),
                self.cols()
            )));
        }
        let cols = self.cols();
        let mut out = self.data.clone();
        for (i, v) in out.iter_mut().enumerate() {
            *v += bias.data[i % cols];
        }
        Tensor::matrix(self.rows(), cols, out)
    }

    /// Sum over rows, producing a length-`cols` vector.
    pub fn col_sum(&self) -> Result<Tensor> {
        self.check_matrix("col_sum input")?;
        let cols = self.cols();
        let mut out = vec![0.0; cols];
        for (i, v) in self.data.iter().enumerate() {
            out[i % cols] += v;
        }
        Tensor::new(vec![cols], out)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| math::max(v, 0.0))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a + b, "add")
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a - b, "sub")
    }

    pub fn mul_elem(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a * b, "mul_elem")
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64, what: &str) -> Result<Tensor> {
        if !self.same_shape(other) {
            return Err(Error::dimension(format!(
                "{what}: shapes {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}
