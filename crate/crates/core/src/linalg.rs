//! Packed symmetric storage and Cholesky factorization, generic over the working precision.

use crate::error::{Error, Result};
use crate::numeric::{dot, Real};

#[inline]
fn row_start(i: usize) -> usize {
    i * (i + 1) / 2
}

/// Lower triangle of a symmetric matrix, stored row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedSym<R> {
    n: usize,
    data: Vec<R>,
}

impl<R: Real> PackedSym<R> {
    pub fn from_packed(n: usize, data: Vec<R>) -> Self {
        assert_eq!(data.len(), row_start(n), "packed length does not match dimension");
        PackedSym { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> R {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        self.data[row_start(i) + j]
    }

    pub fn add_diagonal(&mut self, x: R) {
        for i in 0..self.n {
            self.data[row_start(i) + i] += x;
        }
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.n)
            .map(|i| self.data[row_start(i) + i].to_f64())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map<S: Real>(&self, f: impl Fn(R) -> S) -> PackedSym<S> {
        PackedSym { n: self.n, data: self.data.iter().map(|&x| f(x)).collect() }
    }
}

/// Lower-triangular factor L with L Lᵀ = A.
#[derive(Clone, Debug)]
pub struct Cholesky<R> {
    n: usize,
    l: Vec<R>,
}

impl<R: Real> Cholesky<R> {
    /// Factor in place. A non-positive pivot aborts with its index and value.
    pub fn new(a: PackedSym<R>) -> Result<Self> {
        let n = a.n;
        let mut l = a.data;
        for i in 0..n {
            let oi = row_start(i);
            for j in 0..=i {
                let oj = row_start(j);
                let s = l[oi + j] - dot(&l[oi..oi + j], &l[oj..oj + j]);
                if i == j {
                    if !(s.to_f64() > 0.0) || !s.is_finite() {
                        return Err(Error::SingularGram { index: i, pivot: s.to_f64() });
                    }
                    l[oi + i] = s.sqrt();
                } else {
                    l[oi + j] = s / l[oj + j];
                }
            }
        }
        Ok(Cholesky { n, l })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Entry (i, j) of L, zero above the diagonal.
    pub fn l(&self, i: usize, j: usize) -> R {
        if j > i {
            R::zero()
        } else {
            self.l[row_start(i) + j]
        }
    }

    /// Solve L z = b.
    pub fn forward(&self, b: &[R]) -> Vec<R> {
        assert_eq!(b.len(), self.n);
        let mut z = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let oi = row_start(i);
            let s = b[i] - dot(&self.l[oi..oi + i], &z);
            z.push(s / self.l[oi + i]);
        }
        z
    }

    /// Solve Lᵀ x = z.
    pub fn backward(&self, z: &[R]) -> Vec<R> {
        assert_eq!(z.len(), self.n);
        let mut x = z.to_vec();
        for i in (0..self.n).rev() {
            let oi = row_start(i);
            let xi = x[i] / self.l[oi + i];
            x[i] = xi;
            for j in 0..i {
                x[j] -= self.l[oi + j] * xi;
            }
        }
        x
    }

    /// Solve L Lᵀ x = b.
    pub fn solve(&self, b: &[R]) -> Vec<R> {
        self.backward(&self.forward(b))
    }

    /// L v for a vector v.
    pub fn mul_vec(&self, v: &[R]) -> Vec<R> {
        assert_eq!(v.len(), self.n);
        (0..self.n)
            .map(|i| {
                let oi = row_start(i);
                dot(&self.l[oi..=oi + i], &v[..=i])
            })
            .collect()
    }

    /// log det(L Lᵀ).
    pub fn logdet(&self) -> R {
        let mut acc = R::zero();
        for i in 0..self.n {
            acc += self.l[row_start(i) + i].ln();
        }
        acc + acc
    }

    /// Smallest diagonal entry of L, squared.
    pub fn min_pivot(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let d = self.l[row_start(i) + i].to_f64();
                d * d
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// L Lᵀ, for verification.
    pub fn reconstruct(&self) -> PackedSym<R> {
        let mut data = Vec::with_capacity(row_start(self.n));
        for i in 0..self.n {
            let oi = row_start(i);
            for j in 0..=i {
                let oj = row_start(j);
                data.push(dot(&self.l[oi..=oi + j], &self.l[oj..=oj + j]));
            }
        }
        PackedSym { n: self.n, data }
    }
}
