//! Compressed-row sparse matrices for the lattice stencils.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Sub};

use num_complex::Complex;
use num_traits::Zero;

use crate::scalar::Real;

/// Element type of vectors and matrices the Chebyshev kernels run on:
/// either the real scalar itself or its complex extension.
pub trait Elem<T: Real>:
    Copy
    + Send
    + Sync
    + Debug
    + Zero
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Mul<T, Output = Self>
    + AddAssign
{
    fn modulus(self) -> T;
    fn conj(self) -> Self;
    fn from_real(x: T) -> Self;
}

impl<T: Real> Elem<T> for T {
    #[inline]
    fn modulus(self) -> T {
        self.abs()
    }
    #[inline]
    fn conj(self) -> Self {
        self
    }
    #[inline]
    fn from_real(x: T) -> Self {
        x
    }
}

impl<T: Real> Elem<T> for Complex<T> {
    #[inline]
    fn modulus(self) -> T {
        self.norm()
    }
    #[inline]
    fn conj(self) -> Self {
        Complex::conj(&self)
    }
    #[inline]
    fn from_real(x: T) -> Self {
        Complex::new(x, T::zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Csr<E> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<E>,
}

impl<E: Copy> Csr<E> {
    /// Builds a square matrix from per-row `(column, value)` lists.
    /// Duplicate columns within a row are summed.
    pub fn from_rows<T: Real>(rows: Vec<Vec<(usize, E)>>) -> Self
    where
        E: Elem<T>,
    {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut merged: Vec<(usize, E)> = Vec::with_capacity(row.len());
            for (c, v) in row {
                match merged.last_mut() {
                    Some((lc, lv)) if *lc == c => *lv += v,
                    _ => merged.push((c, v)),
                }
            }
            for (c, v) in merged {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, E)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn map<F: Copy>(&self, f: impl Fn(E) -> F) -> Csr<F> {
        Csr { n: self.n, row_ptr: self.row_ptr.clone(), cols: self.cols.clone(), vals: self.vals.iter().map(|&v| f(v)).collect() }
    }

    pub fn values(&self) -> &[E] {
        &self.vals
    }
}

impl<E: Copy + Zero + Add<Output = E> + Mul<Output = E>> Csr<E> {
    pub fn apply_into(&self, x: &[E], y: &mut [E]) {
        for (i, out) in y.iter_mut().enumerate() {
            let mut acc = E::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc = acc + self.vals[k] * x[self.cols[k]];
            }
            *out = acc;
        }
    }

    pub fn apply(&self, x: &[E]) -> Vec<E> {
        let mut y = vec![E::zero(); self.n];
        self.apply_into(x, &mut y);
        y
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<E> {
        let mut out = vec![E::zero(); self.n * self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[i * self.n + self.cols[k]] = out[i * self.n + self.cols[k]] + self.vals[k];
            }
        }
        out
    }
}

impl<T: Real> Csr<Complex<T>> {
    /// Drops imaginary parts if every entry is real.
    pub fn real_part_if_real(&self) -> Option<Csr<T>> {
        if self.vals.iter().all(|v| v.im == T::zero()) {
            Some(self.map(|v| v.re))
        } else {
            None
        }
    }

    /// Gershgorin enclosure `[lo, hi]` of the spectrum of a Hermitian matrix.
    pub fn gershgorin(&self) -> (T, T) {
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for i in 0..self.n {
            let mut diag = T::zero();
            let mut radius = T::zero();
            for (c, v) in self.row(i) {
                if c == i {
                    diag += v.re;
                } else {
                    radius += v.norm();
                }
            }
            lo = lo.min(diag - radius);
            hi = hi.max(diag + radius);
        }
        (lo, hi)
    }

    /// Largest `|A - A*|` entry.
    pub fn hermitian_defect(&self) -> T {
        let n = self.n;
        let dense = self.to_dense();
        let mut worst = T::zero();
        for i in 0..n {
            for j in i..n {
                let d = dense[i * n + j] - dense[j * n + i].conj();
                worst = worst.max(d.norm());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> T {
        self.vals.iter().fold(T::zero(), |m, v| m.max(v.norm()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_entries_are_summed() {
        let m: Csr<f64> = Csr::from_rows(vec![vec![(0, 1.0), (1, 2.0), (0, 3.0)], vec![(1, 5.0)]]);
        assert_eq!(m.to_dense(), vec![4.0, 2.0, 0.0, 5.0]);
        assert_eq!(m.apply(&[1.0, 1.0]), vec![6.0, 5.0]);
    }
}
