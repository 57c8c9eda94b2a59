//! Small dense vectors and symmetric matrices for the latent dimension.
//!
//! Latent dimensions are small (tens at most), so a row-major `Vec` with a
//! Cholesky factorization is all the filter and smoother need.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm_sq<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}

/// Square matrix stored row-major. Used for covariances and precisions.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(dim: usize) -> Self {
        Matrix { dim, data: vec![T::zero(); dim * dim] }
    }

    pub fn scaled_identity(dim: usize, s: T) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = s;
        }
        m
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, T::one())
    }

    pub fn from_rows(dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::invalid(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        Ok(Matrix { dim, data })
    }

    /// Builds a symmetric matrix from its packed lower triangle (row by row).
    pub fn from_lower(dim: usize, lower: &[T]) -> Result<Self> {
        if lower.len() != dim * (dim + 1) / 2 {
            return Err(Error::invalid("lower-triangle length does not match dimension"));
        }
        let mut m = Self::zeros(dim);
        let mut k = 0;
        for i in 0..dim {
            for j in 0..=i {
                m.data[i * dim + j] = lower[k];
                m.data[j * dim + i] = lower[k];
                k += 1;
            }
        }
        Ok(m)
    }

    pub fn lower(&self) -> Vec<T> {
        let n = self.dim;
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                out.push(self.data[i * n + j]);
            }
        }
        out
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.dim + j] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn trace(&self) -> T {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn add_diag(&mut self, s: T) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += s;
        }
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sub(&self, other: &Matrix<T>) -> Matrix<T> {
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Matrix { dim: self.dim, data }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    /// `self += s * v vᵀ`
    pub fn add_outer(&mut self, v: &[T], s: T) {
        let n = self.dim;
        for i in 0..n {
            let vi = v[i] * s;
            let row = &mut self.data[i * n..(i + 1) * n];
            for (r, &vj) in row.iter_mut().zip(v) {
                *r += vi * vj;
            }
        }
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        let n = self.dim;
        (0..n).map(|i| dot(&self.data[i * n..(i + 1) * n], v)).collect()
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Matrix<T> {
        let n = self.dim;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == T::zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix<T> {
        let n = self.dim;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j];
            }
        }
        out
    }

    /// `tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &Matrix<T>) -> T {
        let n = self.dim;
        let mut acc = T::zero();
        for i in 0..n {
            for j in 0..n {
                acc += self.data[i * n + j] * other.data[j * n + i];
            }
        }
        acc
    }

    pub fn symmetrize(&mut self) {
        let n = self.dim;
        let half = T::of(0.5);
        for i in 0..n {
            for j in 0..i {
                let v = (self.data[i * n + j] + self.data[j * n + i]) * half;
                self.data[i * n + j] = v;
                self.data[j * n + i] = v;
            }
        }
    }

    pub fn max_asymmetry(&self) -> T {
        let n = self.dim;
        let mut worst = T::zero();
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cholesky(&self) -> Result<Cholesky<T>> {
        Cholesky::new(self)
    }

    /// Cholesky with a single `jitter·I` retry when rounding breaks definiteness.
    pub fn cholesky_jittered(&self, jitter: T) -> Result<Cholesky<T>> {
        match Cholesky::new(self) {
            Ok(c) => Ok(c),
            Err(_) => {
                let mut m = self.clone();
                m.add_diag(jitter);
                Cholesky::new(&m)
            }
        }
    }

    /// True when every eigenvalue is ≥ `-slack`.
    pub fn is_psd(&self, slack: T) -> bool {
        let mut m = self.clone();
        m.symmetrize();
        m.add_diag(slack.max(T::min_positive_value()));
        Cholesky::new(&m).is_ok()
    }

    /// Loewner order `self ⪯ other` with eigenvalue slack.
    pub fn loewner_le(&self, other: &Matrix<T>, slack: T) -> bool {
        other.sub(self).is_psd(slack)
    }
}

/// Lower-triangular factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    dim: usize,
    l: Vec<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        let n = a.dim;
        let mut l = vec![T::zero(); n * n];
        for j in 0..n {
            let mut d = a.data[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a.data[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Cholesky { dim: n, l })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.dim;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.dim;
        // L⁻¹ by forward substitution, then A⁻¹ = L⁻ᵀ L⁻¹.
        let mut linv = vec![T::zero(); n * n];
        for j in 0..n {
            linv[j * n + j] = T::one() / self.l[j * n + j];
            for i in j + 1..n {
                let mut s = T::zero();
                for k in j..i {
                    s -= self.l[i * n + k] * linv[k * n + j];
                }
                linv[i * n + j] = s / self.l[i * n + i];
            }
        }
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = T::zero();
                for k in i..n {
                    s += linv[k * n + i] * linv[k * n + j];
                }
                out.data[i * n + j] = s;
                out.data[j * n + i] = s;
            }
        }
        out
    }
}
