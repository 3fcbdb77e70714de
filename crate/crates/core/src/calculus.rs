//! Functional calculus `g(√H)`: the exact eigen-oracle, the Chebyshev
//! matrix-free path, kernels, propagators and Schur norms.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;

use crate::chebyshev::ChebyshevSeries;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::lattice::LatticeOperator;
use crate::scalar::{c, l2, Real};

/// Largest operator size handed to the dense eigensolver by default.
pub const DEFAULT_DENSE_CEILING: usize = 2048;

/// Eigenvalues in `[-CLAMP_TOL·max|λ|, 0)` are read as zero.
pub const CLAMP_TOL: f64 = 1e-8;

/// Eigenpairs of a lattice operator.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition<T: Real> {
    grid: Grid<T>,
    values: Vec<T>,
    /// Column-major: `vectors[k * n + i]` is component `i` of eigenvector `k`.
    vectors: Vec<Complex<T>>,
}

/// Dense eigendecomposition with the default ceiling.
pub fn eigendecompose<T: Real>(op: &LatticeOperator<T>) -> Result<SpectralDecomposition<T>> {
    eigendecompose_with_ceiling(op, DEFAULT_DENSE_CEILING)
}

pub fn eigendecompose_with_ceiling<T: Real>(op: &LatticeOperator<T>, ceiling: usize) -> Result<SpectralDecomposition<T>> {
    let n = op.size();
    if n > ceiling {
        return Err(Error::CeilingExceeded { size: n, ceiling });
    }
    let (values, vectors) = match op.real_matrix() {
        Some(m) => {
            let (vals, vecs) = T::symmetric_eigen(n, &m.to_dense())?;
            (vals, vecs.into_iter().map(c).collect())
        }
        None => T::hermitian_eigen(n, &op.dense())?,
    };
    Ok(SpectralDecomposition { grid: op.grid().clone(), values, vectors })
}

impl<T: Real> SpectralDecomposition<T> {
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn size(&self) -> usize {
        self.values.len()
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.values
    }

    pub fn eigenvector(&self, k: usize) -> &[Complex<T>] {
        let n = self.size();
        &self.vectors[k * n..(k + 1) * n]
    }

    pub fn max_abs_eigenvalue(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// `max |⟨e_i, e_j⟩ - δ_ij|`.
    pub fn orthonormality_defect(&self) -> T {
        let n = self.size();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let ei = self.eigenvector(i);
                let mut worst = T::zero();
                for j in i..n {
                    let ej = self.eigenvector(j);
                    let dot: Complex<T> = ei.iter().zip(ej).map(|(a, b)| a.conj() * b).sum();
                    let delta = if i == j { T::one() } else { T::zero() };
                    worst = worst.max((dot - c(delta)).norm());
                }
                worst
            })
            .reduce(T::zero, T::max)
    }

    /// `‖H - Σ λ_i e_i e_i*‖_max`.
    pub fn reconstruction_residual(&self, op: &LatticeOperator<T>) -> T {
        let recon = self.kernel_of(|l| c(l)).operator_entries();
        op.dense().iter().zip(&recon).fold(T::zero(), |m, (a, b)| m.max((*a - *b).norm()))
    }

    /// Eigenvalue with small negative round-off mapped to zero; errors on a
    /// genuinely negative eigenvalue.
    pub fn clamped(&self, k: usize) -> Result<T> {
        let l = self.values[k];
        if l >= T::zero() {
            return Ok(l);
        }
        if l >= -T::lit(CLAMP_TOL) * self.max_abs_eigenvalue() {
            Ok(T::zero())
        } else {
            Err(Error::Hypothesis(format!("operator has negative eigenvalue {l}")))
        }
    }

    fn clamped_all(&self) -> Result<Vec<T>> {
        (0..self.size()).map(|k| self.clamped(k)).collect()
    }

    /// Coefficients `⟨f, e_k⟩` (the cell volume cancels in the expansion).
    fn coefficients(&self, f: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        let n = self.size();
        if f.len() != n {
            return Err(Error::DimensionMismatch(format!("function has {} values, operator size is {n}", f.len())));
        }
        Ok((0..n)
            .into_par_iter()
            .map(|k| self.eigenvector(k).iter().zip(f).map(|(e, v)| e.conj() * v).sum())
            .collect())
    }

    /// `Σ m_k ⟨f, e_k⟩ e_k` for spectral weights `m_k`.
    pub fn apply_weights(&self, weights: &[Complex<T>], f: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        let coeffs = self.coefficients(f)?;
        let n = self.size();
        let scaled: Vec<Complex<T>> = coeffs.iter().zip(weights).map(|(a, m)| a * m).collect();
        Ok((0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = c(T::zero());
                for (k, s) in scaled.iter().enumerate() {
                    acc += *s * self.vectors[k * n + i];
                }
                acc
            })
            .collect())
    }

    /// Kernel of `f(H)` for a function of the eigenvalue, under the density
    /// convention.
    pub fn kernel_of(&self, f: impl Fn(T) -> Complex<T> + Sync) -> KernelMatrix<T> {
        let weights: Vec<Complex<T>> = self.values.iter().map(|&l| f(l)).collect();
        self.kernel_of_weights(&weights)
    }

    fn kernel_of_weights(&self, weights: &[Complex<T>]) -> KernelMatrix<T> {
        let n = self.size();
        let inv_vol = T::one() / self.grid.cell_volume();
        let mut entries = vec![c(T::zero()); n * n];
        entries.par_chunks_mut(n).enumerate().for_each(|(x, row)| {
            for (k, m) in weights.iter().enumerate() {
                if *m == c(T::zero()) {
                    continue;
                }
                let e = self.eigenvector(k);
                let a = *m * e[x] * inv_vol;
                for (r, v) in row.iter_mut().zip(e) {
                    *r += a * v.conj();
                }
            }
        });
        KernelMatrix { grid: self.grid.clone(), entries, n }
    }

    pub fn multiplier_weights(&self, g: &MultiplierFn<T>) -> Result<Vec<Complex<T>>> {
        Ok(self.clamped_all()?.into_iter().map(|l| g.evaluate(l.sqrt())).collect())
    }
}

type Evaluator<T> = Arc<dyn Fn(T) -> Complex<T> + Send + Sync>;

/// A bounded function `g` on `[0, ∞)` with a declared value at `0`.
#[derive(Clone)]
pub struct MultiplierFn<T: Real> {
    label: String,
    eval: Evaluator<T>,
    at_zero: Complex<T>,
    sup_norm: T,
    sample_max: T,
}

impl<T: Real> fmt::Debug for MultiplierFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MultiplierFn")
            .field("label", &self.label)
            .field("at_zero", &self.at_zero)
            .field("sup_norm", &self.sup_norm)
            .finish()
    }
}

/// Default right end of the sample set used for `‖g‖_∞`.
pub const DEFAULT_SAMPLE_MAX: f64 = 64.0;

impl<T: Real> MultiplierFn<T> {
    /// Wraps an evaluator. When `at_zero` is `None` the value at `0` is the
    /// smallest-modulus sample among `s ∈ {1e-3, 1e-6, 1e-9}`.
    pub fn from_fn(label: impl Into<String>, f: impl Fn(T) -> Complex<T> + Send + Sync + 'static, at_zero: Option<Complex<T>>) -> Result<Self> {
        let eval: Evaluator<T> = Arc::new(f);
        let at_zero = match at_zero {
            Some(v) => v,
            None => [1e-3, 1e-6, 1e-9]
                .iter()
                .map(|&s| eval(T::lit(s)))
                .filter(|v| v.re.is_finite() && v.im.is_finite())
                .min_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap_or(std::cmp::Ordering::Equal))
                .ok_or_else(|| Error::NonFinite("multiplier near 0".into()))?,
        };
        let mut g = Self { label: label.into(), eval, at_zero, sup_norm: T::zero(), sample_max: T::lit(DEFAULT_SAMPLE_MAX) };
        g.sup_norm = g.sampled_sup(g.sample_max)?;
        Ok(g)
    }

    fn infallible(label: String, f: impl Fn(T) -> Complex<T> + Send + Sync + 'static, at_zero: Complex<T>) -> Self {
        Self::from_fn(label, f, Some(at_zero)).expect("built-in multiplier is finite")
    }

    pub fn constant(value: Complex<T>) -> Self {
        Self::infallible(format!("constant({value})"), move |_| value, value)
    }

    /// `e^{-s²}`.
    pub fn heat() -> Self {
        Self::heat_time(T::one())
    }

    /// `e^{-t s²}`, so `g(√H) = e^{-tH}`.
    pub fn heat_time(t: T) -> Self {
        Self::infallible(format!("heat(t={t})"), move |s| c((-t * s * s).exp()), c(T::one()))
    }

    /// `s^{2iy}` with the value `0` at `s = 0`.
    pub fn imaginary_power(y: T) -> Self {
        Self::infallible(
            format!("imaginary_power(y={y})"),
            move |s| if s > T::zero() { Complex::from_polar(T::one(), T::lit(2.0) * y * s.ln()) } else { c(T::zero()) },
            c(T::zero()),
        )
    }

    /// `s^{2θ}`; unbounded for `θ > 0`, so `‖g‖_∞` refers to the sample set.
    pub fn fractional(theta: T) -> Self {
        let zero = if theta == T::zero() { T::one() } else { T::zero() };
        Self::infallible(
            format!("fractional(theta={theta})"),
            move |s| if s > T::zero() { c(s.powf(T::lit(2.0) * theta)) } else { c(zero) },
            c(zero),
        )
    }

    /// Sharp indicator of `[lo, hi]`.
    pub fn indicator_band(lo: T, hi: T) -> Self {
        let at_zero = if lo <= T::zero() { T::one() } else { T::zero() };
        Self::infallible(
            format!("indicator_band({lo},{hi})"),
            move |s| c(if s >= lo && s <= hi { T::one() } else { T::zero() }),
            c(at_zero),
        )
    }

    /// `ψ(s/r)`: a smooth indicator of `[0, r]` that vanishes beyond `2r`.
    pub fn smoothed_indicator(r: T) -> Self {
        Self::infallible(format!("smoothed_indicator(r={r})"), move |s| c(crate::norms::psi(s / r)), c(T::one()))
    }

    /// Linear interpolation of `(s, Re g, Im g)` triples, constant beyond the ends.
    pub fn table(points: Vec<(T, T, T)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("empty multiplier table".into()));
        }
        let mut pts = points;
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        if pts.iter().any(|p| !p.0.is_finite() || !p.1.is_finite() || !p.2.is_finite()) {
            return Err(Error::NonFinite("multiplier table".into()));
        }
        let interp = move |s: T| {
            let k = pts.partition_point(|p| p.0 <= s);
            if k == 0 {
                return Complex::new(pts[0].1, pts[0].2);
            }
            if k == pts.len() {
                let p = pts[k - 1];
                return Complex::new(p.1, p.2);
            }
            let (a, b) = (pts[k - 1], pts[k]);
            let w = if b.0 > a.0 { (s - a.0) / (b.0 - a.0) } else { T::zero() };
            Complex::new(a.1 + (b.1 - a.1) * w, a.2 + (b.2 - a.2) * w)
        };
        let at_zero = interp(T::zero());
        Self::from_fn("table", interp, Some(at_zero))
    }

    /// Pointwise product `g₁ g₂`.
    pub fn product(&self, other: &Self) -> Self {
        let (a, b) = (self.eval.clone(), other.eval.clone());
        let mut g = Self::infallible(format!("{}*{}", self.label, other.label), move |s| a(s) * b(s), self.at_zero * other.at_zero);
        g.sample_max = self.sample_max.max(other.sample_max);
        g
    }

    /// `s ↦ g(c s)`.
    pub fn dilate(&self, factor: T) -> Self {
        let a = self.eval.clone();
        Self::infallible(format!("{}(x{factor})", self.label), move |s| a(factor * s), self.at_zero)
    }

    /// Re-estimates `‖g‖_∞` on `[0, sample_max]`.
    pub fn with_sample_max(mut self, sample_max: T) -> Result<Self> {
        self.sample_max = sample_max;
        self.sup_norm = self.sampled_sup(sample_max)?;
        Ok(self)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn value_at_zero(&self) -> Complex<T> {
        self.at_zero
    }

    /// `g(s)`, using the declared value at `s = 0`.
    pub fn evaluate(&self, s: T) -> Complex<T> {
        if s == T::zero() {
            self.at_zero
        } else {
            (self.eval)(s)
        }
    }

    /// `‖g‖_∞` over the declared sample set.
    pub fn sup_norm(&self) -> T {
        self.sup_norm
    }

    fn sampled_sup(&self, sample_max: T) -> Result<T> {
        let m = 4096;
        let mut best = self.at_zero.norm();
        let mut probe = |s: T| -> Result<()> {
            let v = self.evaluate(s);
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::NonFinite(format!("{} at s = {s}", self.label)));
            }
            best = best.max(v.norm());
            Ok(())
        };
        for k in 1..=m {
            probe(sample_max * T::lit(k as f64 / m as f64))?;
        }
        for k in 1..=40 {
            probe(T::lit(2f64.powi(-k)))?;
        }
        Ok(best)
    }
}

/// Kernel of an operator on a grid, stored as a density: `entries = matrix / hⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix<T: Real> {
    grid: Grid<T>,
    entries: Vec<Complex<T>>,
    n: usize,
}

impl<T: Real> KernelMatrix<T> {
    /// Wraps density entries (row-major).
    pub fn from_density(grid: Grid<T>, entries: Vec<Complex<T>>) -> Self {
        let n = grid.len();
        assert_eq!(entries.len(), n * n, "kernel must have (N^dim)² entries");
        Self { grid, entries, n }
    }

    /// Wraps the row-major matrix of an operator.
    pub fn from_operator(grid: Grid<T>, matrix: &[Complex<T>]) -> Self {
        let inv = T::one() / grid.cell_volume();
        Self::from_density(grid, matrix.iter().map(|v| v * inv).collect())
    }

    pub fn identity(grid: Grid<T>) -> Self {
        let n = grid.len();
        let inv = T::one() / grid.cell_volume();
        let mut entries = vec![c(T::zero()); n * n];
        for i in 0..n {
            entries[i * n + i] = c(inv);
        }
        Self::from_density(grid, entries)
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Always true: entries carry the `1/hⁿ` density normalization.
    pub fn density_convention(&self) -> bool {
        true
    }

    pub fn get(&self, x: usize, y: usize) -> Complex<T> {
        self.entries[x * self.n + y]
    }

    pub fn entries(&self) -> &[Complex<T>] {
        &self.entries
    }

    /// Matrix of the operator (`entries · hⁿ`).
    pub fn operator_entries(&self) -> Vec<Complex<T>> {
        let vol = self.grid.cell_volume();
        self.entries.iter().map(|v| v * vol).collect()
    }

    pub fn column(&self, y: usize) -> Vec<Complex<T>> {
        (0..self.n).map(|x| self.get(x, y)).collect()
    }

    /// `∫ K(x, y) f(y) dy`.
    pub fn apply(&self, f: &[Complex<T>]) -> Vec<Complex<T>> {
        let vol = self.grid.cell_volume();
        self.entries
            .par_chunks(self.n)
            .map(|row| row.iter().zip(f).map(|(k, v)| k * v).sum::<Complex<T>>() * vol)
            .collect()
    }

    /// Kernel of the composition `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        let n = self.n;
        let vol = self.grid.cell_volume();
        let mut entries = vec![c(T::zero()); n * n];
        entries.par_chunks_mut(n).enumerate().for_each(|(x, row)| {
            for y in 0..n {
                let a = self.entries[x * n + y] * vol;
                if a == c(T::zero()) {
                    continue;
                }
                for (r, b) in row.iter_mut().zip(&other.entries[y * n..(y + 1) * n]) {
                    *r += a * b;
                }
            }
        });
        Self { grid: self.grid.clone(), entries, n }
    }

    pub fn max_abs(&self) -> T {
        self.entries.iter().fold(T::zero(), |m, v| m.max(v.norm()))
    }

    /// `max |K₁ - K₂|` over entries (density units).
    pub fn max_diff(&self, other: &Self) -> T {
        self.entries.iter().zip(&other.entries).fold(T::zero(), |m, (a, b)| m.max((a - b).norm()))
    }

    /// `max |K(x,y) - conj K(y,x)|`.
    pub fn hermitian_defect(&self) -> T {
        let n = self.n;
        let mut worst = T::zero();
        for x in 0..n {
            for y in x..n {
                worst = worst.max((self.get(x, y) - self.get(y, x).conj()).norm());
            }
        }
        worst
    }
}

/// `g(√H) f` through the eigen-oracle; negative round-off eigenvalues are clamped.
pub fn apply_multiplier<T: Real>(sd: &SpectralDecomposition<T>, g: &MultiplierFn<T>, f: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    let w = sd.multiplier_weights(g)?;
    sd.apply_weights(&w, f)
}

/// Chebyshev approximation of `s ↦ g(√s)` on `[0, spectral_bound·(1+1e-3)]`
/// applied matrix-free. Degree `0` gives the constant term only.
pub fn apply_multiplier_chebyshev<T: Real>(op: &LatticeOperator<T>, g: &MultiplierFn<T>, degree: usize, f: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    let series = multiplier_series(op, g, degree)?;
    apply_series(op, &series, f)
}

/// The Chebyshev series used by [`apply_multiplier_chebyshev`].
pub fn multiplier_series<T: Real>(op: &LatticeOperator<T>, g: &MultiplierFn<T>, degree: usize) -> Result<ChebyshevSeries<T>> {
    let lo = op.lower_bound().min(T::zero());
    let hi = op.spectral_bound() * (T::one() + T::lit(1e-3));
    let hi = if hi > lo { hi } else { lo + T::one() };
    ChebyshevSeries::fit(|s| g.evaluate(s.max(T::zero()).sqrt()), lo, hi, degree)
}

/// Applies a fitted series to `f` with the operator's matrix.
pub fn apply_series<T: Real>(op: &LatticeOperator<T>, series: &ChebyshevSeries<T>, f: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    if f.len() != op.size() {
        return Err(Error::DimensionMismatch(format!("function has {} values, operator size is {}", f.len(), op.size())));
    }
    let m = op.matrix();
    Ok(series.apply(|v: &[Complex<T>], out: &mut [Complex<T>]| m.apply_into(v, out), f))
}

/// Kernel of `g(√H)`.
pub fn multiplier_kernel<T: Real>(sd: &SpectralDecomposition<T>, g: &MultiplierFn<T>) -> Result<KernelMatrix<T>> {
    Ok(sd.kernel_of_weights(&sd.multiplier_weights(g)?))
}

/// Kernel of `cos(t√H)`.
pub fn cosine_propagator<T: Real>(sd: &SpectralDecomposition<T>, t: T) -> Result<KernelMatrix<T>> {
    if t < T::zero() {
        return Err(Error::InvalidParameter(format!("propagation time must be ≥ 0, got {t}")));
    }
    let w: Vec<Complex<T>> = sd.clamped_all()?.into_iter().map(|l| c((t * l.sqrt()).cos())).collect();
    Ok(sd.kernel_of_weights(&w))
}

/// Kernel mass of `cos(t√H)` outside the cone `|x - y| ≤ t(1 + buffer)`.
#[derive(Debug, Clone, Serialize)]
pub struct FiniteSpeedReport {
    pub t: f64,
    pub buffer: f64,
    pub outside_mass: f64,
    pub total_mass: f64,
    pub relative_outside: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub const DEFAULT_CONE_BUFFER: f64 = 0.25;
pub const DEFAULT_CONE_TOL: f64 = 1e-3;

/// Masses are `Σ |K(x,y)| h^{2n}`; passes when the relative outside mass is ≤ `tol`.
pub fn check_finite_speed<T: Real>(op: &LatticeOperator<T>, t: T, tol: T) -> Result<FiniteSpeedReport> {
    check_finite_speed_with(&eigendecompose(op)?, t, T::lit(DEFAULT_CONE_BUFFER), tol)
}

pub fn check_finite_speed_with<T: Real>(sd: &SpectralDecomposition<T>, t: T, buffer: T, tol: T) -> Result<FiniteSpeedReport> {
    let k = cosine_propagator(sd, t)?;
    let g = sd.grid();
    let n = g.len();
    let vol2 = (g.cell_volume() * g.cell_volume()).as_f64();
    let radius = (t * (T::one() + buffer) / g.spacing()).as_f64();
    let r2 = radius * radius;
    let (mut outside, mut total) = (0.0, 0.0);
    for x in 0..n {
        for y in 0..n {
            let m = k.get(x, y).norm().as_f64() * vol2;
            total += m;
            if g.dist2_steps(x, y) as f64 > r2 {
                outside += m;
            }
        }
    }
    let relative = if total > 0.0 { outside / total } else { 0.0 };
    Ok(FiniteSpeedReport {
        t: t.as_f64(),
        buffer: buffer.as_f64(),
        outside_mass: outside,
        total_mass: total,
        relative_outside: relative,
        tolerance: tol.as_f64(),
        pass: relative <= tol.as_f64(),
    })
}

/// `max(sup_x Σ_y, sup_y Σ_x) |K(x,y)| w(x-y) hⁿ`, with torus displacement on
/// periodic grids.
pub fn weighted_schur_norm<T: Real>(k: &KernelMatrix<T>, weight: impl Fn(&[T]) -> T + Sync) -> T {
    let g = k.grid();
    let n = k.size();
    let vol = g.cell_volume();
    let weighted: Vec<T> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (x, y) = (idx / n, idx % n);
            k.entries[idx].norm() * weight(&g.displacement(y, x)) * vol
        })
        .collect();
    let rows = (0..n).map(|x| weighted[x * n..(x + 1) * n].iter().copied().sum::<T>()).fold(T::zero(), T::max);
    let cols = (0..n).map(|y| (0..n).map(|x| weighted[x * n + y]).sum::<T>()).fold(T::zero(), T::max);
    rows.max(cols)
}

/// Unweighted Schur norm.
pub fn schur_norm<T: Real>(k: &KernelMatrix<T>) -> T {
    weighted_schur_norm(k, |_| T::one())
}

/// `H^{θ+iy} f` with `0^{θ+iy} := 0`.
pub fn power_apply<T: Real>(sd: &SpectralDecomposition<T>, theta: T, y: T, f: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    sd.apply_weights(&power_weights(sd, theta, y)?, f)
}

/// Spectral weights `λ^{θ+iy}` used by [`power_apply`].
pub fn power_weights<T: Real>(sd: &SpectralDecomposition<T>, theta: T, y: T) -> Result<Vec<Complex<T>>> {
    let floor = T::lit(CLAMP_TOL) * sd.max_abs_eigenvalue();
    Ok(sd
        .clamped_all()?
        .into_iter()
        .map(|l| if l <= floor { c(T::zero()) } else { Complex::from_polar(l.powf(theta), y * l.ln()) })
        .collect())
}

/// `‖f‖_{L²}` with the cell volume.
pub fn l2_norm<T: Real>(grid: &Grid<T>, f: &[Complex<T>]) -> T {
    l2(f) * grid.cell_volume().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;
    use crate::lattice::{build_laplacian, build_schrodinger, heat_kernel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(n: usize, seed: u64) -> Vec<Complex<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    fn dirichlet(n: usize) -> LatticeOperator<f64> {
        build_laplacian(&Grid::cell_centered(1, n, 4.0, Boundary::Dirichlet).unwrap()).unwrap()
    }

    #[test]
    fn small_dirichlet_eigenvalues() {
        let op = build_laplacian(&Grid::anchored(1, 3, 1.0, Boundary::Dirichlet).unwrap()).unwrap();
        let sd = eigendecompose(&op).unwrap();
        let s2 = 2f64.sqrt();
        for (a, b) in sd.eigenvalues().iter().zip([2.0 - s2, 2.0, 2.0 + s2]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(sd.orthonormality_defect() < 1e-10);
        assert!(sd.reconstruction_residual(&op) < 1e-8 * sd.max_abs_eigenvalue());
    }

    #[test]
    fn shifted_operator_shifts_eigenvalues() {
        let op = dirichlet(12);
        let a = eigendecompose(&op).unwrap();
        let b = eigendecompose(&op.shifted(1.5)).unwrap();
        for (x, y) in a.eigenvalues().iter().zip(b.eigenvalues()) {
            assert!((x + 1.5 - y).abs() < 1e-10);
        }
    }

    #[test]
    fn ceiling_is_enforced() {
        let op = dirichlet(12);
        assert!(matches!(eigendecompose_with_ceiling(&op, 8), Err(Error::CeilingExceeded { size: 12, ceiling: 8 })));
    }

    #[test]
    fn random_symmetric_perturbation_reconstructs() {
        let g = Grid::cell_centered(1, 20, 4.0, Boundary::Dirichlet).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..5.0)).collect();
        let op = build_schrodinger(&g, v).unwrap();
        let sd = eigendecompose(&op).unwrap();
        assert!(sd.reconstruction_residual(&op) < 1e-8 * sd.max_abs_eigenvalue().max(1.0));
    }

    #[test]
    fn heat_multiplier_equals_heat_kernel() {
        let op = dirichlet(32);
        let sd = eigendecompose(&op).unwrap();
        let f = random_vec(32, 1);
        let lhs = apply_multiplier(&sd, &MultiplierFn::heat(), &f).unwrap();
        let rhs = heat_kernel(&op, 1.0).unwrap().apply(&f);
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn unit_multiplier_is_identity_and_square_is_h() {
        let op = dirichlet(24);
        let sd = eigendecompose(&op).unwrap();
        let f = random_vec(24, 2);
        let id = apply_multiplier(&sd, &MultiplierFn::constant(c(1.0)), &f).unwrap();
        assert!(id.iter().zip(&f).all(|(a, b)| (a - b).norm() < 1e-10));
        let sq = MultiplierFn::from_fn("s^2", |s: f64| c(s * s), Some(c(0.0))).unwrap();
        let hf = apply_multiplier(&sd, &sq, &f).unwrap();
        let direct = op.apply(&f);
        let scale = direct.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        assert!(hf.iter().zip(&direct).all(|(a, b)| (a - b).norm() < 1e-8 * scale.max(1.0)));
    }

    #[test]
    fn chebyshev_tracks_oracle() {
        let op = build_laplacian(&Grid::cell_centered(1, 64, 16.0, Boundary::Dirichlet).unwrap()).unwrap();
        let sd = eigendecompose(&op).unwrap();
        let f = random_vec(64, 3);
        let g = MultiplierFn::heat();
        let exact = apply_multiplier(&sd, &g, &f).unwrap();
        let approx = apply_multiplier_chebyshev(&op, &g, 60, &f).unwrap();
        let err = exact.iter().zip(&approx).fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
        assert!(err < 1e-8, "{err}");
        let k = MultiplierFn::constant(Complex::new(0.5, 2.0));
        let out = apply_multiplier_chebyshev(&op, &k, 0, &f).unwrap();
        assert!(out.iter().zip(&f).all(|(a, b)| (a - b * Complex::new(0.5, 2.0)).norm() < 1e-13));
    }

    #[test]
    fn chebyshev_error_shrinks_for_imaginary_power() {
        let op = dirichlet(32);
        let sd = eigendecompose(&op).unwrap();
        let f = random_vec(32, 4);
        let g = MultiplierFn::imaginary_power(1.0);
        let exact = apply_multiplier(&sd, &g, &f).unwrap();
        let err = |d| {
            let approx = apply_multiplier_chebyshev(&op, &g, d, &f).unwrap();
            exact.iter().zip(&approx).fold(0.0f64, |m, (a, b)| m.max((a - b).norm()))
        };
        assert!(err(512) < err(64));
    }

    #[test]
    fn kernels_of_identity_and_hermitian_symmetry() {
        let g = Grid::cell_centered(1, 16, 4.0, Boundary::Periodic).unwrap();
        let op = build_laplacian(&g).unwrap();
        let sd = eigendecompose(&op).unwrap();
        let id = multiplier_kernel(&sd, &MultiplierFn::constant(c(1.0))).unwrap();
        assert!(id.max_diff(&KernelMatrix::identity(g.clone())) < 1e-10 / g.cell_volume());
        let k = multiplier_kernel(&sd, &MultiplierFn::smoothed_indicator(2.0)).unwrap();
        assert!(k.hermitian_defect() < 1e-10);
    }

    #[test]
    fn cosine_at_zero_is_identity_and_contracts() {
        let op = dirichlet(16);
        let sd = eigendecompose(&op).unwrap();
        let k0 = cosine_propagator(&sd, 0.0).unwrap();
        assert!(k0.max_diff(&KernelMatrix::identity(op.grid().clone())) < 1e-9);
        let f = random_vec(16, 5);
        let out = cosine_propagator(&sd, 1.3).unwrap().apply(&f);
        assert!(l2_norm(op.grid(), &out) <= l2_norm(op.grid(), &f) * (1.0 + 1e-12));
        assert!(cosine_propagator(&sd, -1.0).is_err());
    }

    #[test]
    fn finite_speed_on_periodic_line() {
        let g = Grid::cell_centered(1, 64, 16.0, Boundary::Periodic).unwrap();
        let op = build_laplacian(&g).unwrap();
        let report = check_finite_speed(&op, 4.0, 1e-3).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn schur_norm_of_identity_and_product_inequality() {
        let g = Grid::<f64>::cell_centered(1, 12, 3.0, Boundary::Dirichlet).unwrap();
        assert!((schur_norm(&KernelMatrix::identity(g.clone())) - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rand_kernel = || {
            KernelMatrix::from_density(g.clone(), (0..144).map(|_| Complex::new(rng.random_range(-1.0..1.0), 0.0)).collect())
        };
        let (a, b) = (rand_kernel(), rand_kernel());
        assert!(schur_norm(&a.compose(&b)) <= schur_norm(&a) * schur_norm(&b) * (1.0 + 1e-12));
    }

    #[test]
    fn powers_of_h() {
        let op = dirichlet(20);
        let sd = eigendecompose(&op).unwrap();
        let f = random_vec(20, 6);
        let hf = power_apply(&sd, 1.0, 0.0, &f).unwrap();
        let direct = op.apply(&f);
        assert!(hf.iter().zip(&direct).all(|(a, b)| (a - b).norm() < 1e-8 * 100.0));
        let id = power_apply(&sd, 0.0, 0.0, &f).unwrap();
        assert!(id.iter().zip(&f).all(|(a, b)| (a - b).norm() < 1e-10));
        let u = power_apply(&sd, 0.0, 3.0, &f).unwrap();
        assert!((l2_norm(op.grid(), &u) - l2_norm(op.grid(), &f)).abs() < 1e-10);
    }

    #[test]
    fn multiplicativity_of_kernels() {
        let op = dirichlet(16);
        let sd = eigendecompose(&op).unwrap();
        let (g1, g2) = (MultiplierFn::heat_time(0.3), MultiplierFn::imaginary_power(0.7));
        let lhs = multiplier_kernel(&sd, &g1).unwrap().compose(&multiplier_kernel(&sd, &g2).unwrap());
        let rhs = multiplier_kernel(&sd, &g1.product(&g2)).unwrap();
        assert!(lhs.max_diff(&rhs) < 1e-9);
    }

    #[test]
    fn multiplier_metadata() {
        assert_eq!(MultiplierFn::<f64>::heat().sup_norm(), 1.0);
        assert_eq!(MultiplierFn::<f64>::imaginary_power(2.0).value_at_zero(), c(0.0));
        let t = MultiplierFn::table(vec![(0.0, 1.0, 0.0), (2.0, 3.0, -2.0)]).unwrap();
        assert!((t.evaluate(1.0) - Complex::new(2.0, -1.0)).norm() < 1e-15);
        assert_eq!(t.evaluate(5.0), Complex::new(3.0, -2.0));
        assert!(MultiplierFn::<f64>::table(vec![]).is_err());
        let band = MultiplierFn::<f64>::indicator_band(1.0, 2.0);
        assert_eq!(band.evaluate(1.5), c(1.0));
        assert_eq!(band.evaluate(0.0), c(0.0));
        let inf = MultiplierFn::from_fn("bad", |s: f64| c(1.0 / (s - 1.0)), None);
        assert!(inf.is_err());
    }
}
