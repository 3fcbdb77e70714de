//! Chebyshev expansions of scalar functions and their matrix-free application
//! through the three-term recurrence.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sparse::Elem;

/// Truncated Chebyshev series of a function on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevSeries<T> {
    coeffs: Vec<Complex<T>>,
    lo: T,
    hi: T,
}

impl<T: Real> ChebyshevSeries<T> {
    /// Interpolation-based coefficients `c_0..=c_degree` using Chebyshev–Gauss
    /// nodes. The leading coefficient is stored already halved.
    pub fn fit(f: impl Fn(T) -> Complex<T>, lo: T, hi: T, degree: usize) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::InvalidParameter(format!("empty Chebyshev interval [{lo}, {hi}]")));
        }
        let nodes = (2 * (degree + 1)).max(64);
        let half = T::lit(0.5);
        let mid = (hi + lo) * half;
        let rad = (hi - lo) * half;
        let pi = T::PI();
        let samples: Vec<Complex<T>> = (0..nodes)
            .map(|j| {
                let theta = pi * (T::lit(j as f64) + half) / T::lit(nodes as f64);
                f(mid + rad * theta.cos())
            })
            .collect();
        if samples.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("function samples for Chebyshev fit".into()));
        }
        let scale = T::lit(2.0) / T::lit(nodes as f64);
        let coeffs = (0..=degree)
            .map(|k| {
                let mut acc = Complex::new(T::zero(), T::zero());
                for (j, s) in samples.iter().enumerate() {
                    let theta = pi * T::lit(k as f64) * (T::lit(j as f64) + half) / T::lit(nodes as f64);
                    acc += *s * theta.cos();
                }
                let c = acc * scale;
                if k == 0 {
                    c * half
                } else {
                    c
                }
            })
            .collect();
        Ok(Self { coeffs, lo, hi })
    }

    /// Doubles the degree until the trailing coefficients fall below
    /// `tol` times the coefficient mass, then trims.
    pub fn fit_adaptive(f: impl Fn(T) -> Complex<T>, lo: T, hi: T, tol: T, max_degree: usize) -> Result<Self> {
        let mut degree = 16;
        loop {
            let s = Self::fit(&f, lo, hi, degree)?;
            let mass: T = s.coeffs.iter().map(|c| c.norm()).sum();
            let tail = s.coeffs[s.coeffs.len().saturating_sub(4)..].iter().fold(T::zero(), |m, c| m.max(c.norm()));
            if tail <= tol * mass || degree >= max_degree {
                let mut s = s;
                while s.coeffs.len() > 1 && s.coeffs.last().is_some_and(|c| c.norm() <= tol * mass * T::lit(1e-3)) {
                    s.coeffs.pop();
                }
                return Ok(s);
            }
            degree = (degree * 2).min(max_degree);
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn interval(&self) -> (T, T) {
        (self.lo, self.hi)
    }

    pub fn coefficients(&self) -> &[Complex<T>] {
        &self.coeffs
    }

    /// Scalar evaluation by Clenshaw's recurrence.
    pub fn eval(&self, x: T) -> Complex<T> {
        let two = T::lit(2.0);
        let u = (two * x - self.hi - self.lo) / (self.hi - self.lo);
        let zero = Complex::new(T::zero(), T::zero());
        let (mut b1, mut b2) = (zero, zero);
        for c in self.coeffs.iter().skip(1).rev() {
            let b0 = *c + b1 * (two * u) - b2;
            b2 = b1;
            b1 = b0;
        }
        self.coeffs[0] + b1 * u - b2
    }

    /// Applies `p(A) x` where `p` is this series and `matvec` computes `A v`.
    pub fn apply<E: Elem<T>>(&self, matvec: impl FnMut(&[E], &mut [E]), x: &[E]) -> Vec<Complex<T>>
    where
        E: Into<Complex<T>>,
    {
        apply_many(&[self], matvec, x).pop().unwrap_or_default()
    }
}

/// Runs one recurrence and accumulates every series in `series` (which must
/// share an interval). Returns one output vector per series.
pub fn apply_many<T: Real, E: Elem<T> + Into<Complex<T>>>(
    series: &[&ChebyshevSeries<T>],
    mut matvec: impl FnMut(&[E], &mut [E]),
    x: &[E],
) -> Vec<Vec<Complex<T>>> {
    let n = x.len();
    let zero = Complex::new(T::zero(), T::zero());
    let mut out = vec![vec![zero; n]; series.len()];
    let Some(first) = series.first() else { return out };
    let (lo, hi) = (first.lo, first.hi);
    let degree = series.iter().map(|s| s.degree()).max().unwrap_or(0);
    let two = T::lit(2.0);
    let alpha = two / (hi - lo);
    let beta = (hi + lo) / (hi - lo);

    let accumulate = |out: &mut [Vec<Complex<T>>], k: usize, v: &[E]| {
        for (s, o) in series.iter().zip(out.iter_mut()) {
            if let Some(&c) = s.coeffs.get(k) {
                for (oi, &vi) in o.iter_mut().zip(v) {
                    *oi += c * vi.into();
                }
            }
        }
    };

    let mut prev: Vec<E> = x.to_vec();
    accumulate(&mut out, 0, &prev);
    if degree == 0 {
        return out;
    }
    let mut tmp = vec![E::zero(); n];
    matvec(&prev, &mut tmp);
    let mut cur: Vec<E> = tmp.iter().zip(&prev).map(|(&a, &p)| a * alpha - p * beta).collect();
    accumulate(&mut out, 1, &cur);
    for k in 2..=degree {
        matvec(&cur, &mut tmp);
        let next: Vec<E> = tmp
            .iter()
            .zip(&cur)
            .zip(&prev)
            .map(|((&a, &c), &p)| (a * alpha - c * beta) * two - p)
            .collect();
        accumulate(&mut out, k, &next);
        prev = std::mem::replace(&mut cur, next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_has_degree_zero_value() {
        let s = ChebyshevSeries::fit(|_| Complex::new(3.0, -1.0), 0.0, 5.0, 0).unwrap();
        assert!((s.eval(1.7) - Complex::new(3.0, -1.0)).norm() < 1e-14);
    }

    #[test]
    fn exponential_converges_on_interval() {
        let s = ChebyshevSeries::fit(|x: f64| Complex::new((-x).exp(), 0.0), 0.0, 10.0, 40).unwrap();
        for k in 0..=20 {
            let x = k as f64 * 0.5;
            assert!((s.eval(x).re - (-x).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn adaptive_fit_reaches_tolerance() {
        let s = ChebyshevSeries::fit_adaptive(|x: f64| Complex::new((-3.0 * x).exp(), 0.0), 0.0, 50.0, 1e-13, 1024).unwrap();
        for k in 0..=50 {
            let x = k as f64;
            assert!((s.eval(x).re - (-3.0 * x).exp()).abs() < 1e-11, "x={x}");
        }
    }

    #[test]
    fn matrix_application_matches_diagonal_evaluation() {
        let diag = [0.0, 1.0, 2.5, 4.0];
        let s = ChebyshevSeries::fit(|x: f64| Complex::new(x.sin(), x.cos()), 0.0, 4.0, 30).unwrap();
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let y = s.apply(|v: &[f64], out: &mut [f64]| {
            for i in 0..4 {
                out[i] = diag[i] * v[i];
            }
        }, &x);
        for i in 0..4 {
            let expect = Complex::new(diag[i].sin(), diag[i].cos()) * x[i];
            assert!((y[i] - expect).norm() < 1e-12);
        }
    }
}
