//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! Everything is written against [`Real`], which is implemented for `f32` and
//! `f64`. Dense Hermitian eigensolves are delegated to nalgebra per concrete
//! type so that generic code never has to carry nalgebra's trait bounds
//! (their method names collide with `num_traits::Float`).

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;
use rustfft::FftNum;

use crate::error::{Error, Result};

/// Floating-point scalar used throughout the crate.
pub trait Real:
    Float
    + FloatConst
    + NumAssign
    + Serialize
    + DeserializeOwned
    + FromPrimitive
    + ToPrimitive
    + FftNum
    + Sum
    + Display
    + LowerExp
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, saturating to infinity if out of range.
    fn lit(x: f64) -> Self;

    /// Lossy conversion used for reporting.
    fn as_f64(self) -> f64;

    /// Eigenpairs of a real symmetric matrix stored row-major.
    ///
    /// Returns eigenvalues in nondecreasing order and the eigenvectors as
    /// column-major storage (`vectors[k * n + i]` is component `i` of vector `k`).
    fn symmetric_eigen(n: usize, rows: &[Self]) -> Result<(Vec<Self>, Vec<Self>)>;

    /// Eigenpairs of a complex Hermitian matrix stored row-major, same layout
    /// as [`Real::symmetric_eigen`].
    fn hermitian_eigen(n: usize, rows: &[Complex<Self>]) -> Result<(Vec<Self>, Vec<Complex<Self>>)>;
}

fn sorted_pairs<T: Real, E: Copy>(n: usize, values: Vec<T>, column: impl Fn(usize, usize) -> E) -> (Vec<T>, Vec<E>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut sorted = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n * n);
    for &k in &order {
        sorted.push(values[k]);
        for i in 0..n {
            vectors.push(column(i, k));
        }
    }
    (sorted, vectors)
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn lit(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn symmetric_eigen(n: usize, rows: &[Self]) -> Result<(Vec<Self>, Vec<Self>)> {
                let m = DMatrix::<$t>::from_row_slice(n, n, rows);
                let eig = SymmetricEigen::try_new(m, <$t>::EPSILON, 0).ok_or(Error::EigenNoConvergence)?;
                let values: Vec<$t> = eig.eigenvalues.iter().copied().collect();
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::EigenNoConvergence);
                }
                let vecs = &eig.eigenvectors;
                Ok(sorted_pairs(n, values, |i, k| vecs[(i, k)]))
            }

            fn hermitian_eigen(n: usize, rows: &[Complex<Self>]) -> Result<(Vec<Self>, Vec<Complex<Self>>)> {
                let m = DMatrix::<Complex<$t>>::from_row_slice(n, n, rows);
                let eig = SymmetricEigen::try_new(m, <$t>::EPSILON, 0).ok_or(Error::EigenNoConvergence)?;
                let values: Vec<$t> = eig.eigenvalues.iter().copied().collect();
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::EigenNoConvergence);
                }
                let vecs = &eig.eigenvectors;
                Ok(sorted_pairs(n, values, |i, k| vecs[(i, k)]))
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Complex scalar over a [`Real`].
pub type C<T> = Complex<T>;

#[inline]
pub(crate) fn c<T: Real>(re: T) -> Complex<T> {
    Complex::new(re, T::zero())
}

/// Squared modulus summed, then square-rooted.
pub(crate) fn l2<T: Real>(v: &[Complex<T>]) -> T {
    v.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
}
