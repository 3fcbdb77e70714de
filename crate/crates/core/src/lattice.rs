//! Finite-difference realizations of `-Δ` and `(i∇ - A)² + V`, their heat
//! kernels, the Gaussian constant `K₀` and the Kato norm.

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{eigendecompose, KernelMatrix, DEFAULT_DENSE_CEILING};
use crate::chebyshev::{apply_many, ChebyshevSeries};
use crate::error::{Error, Result};
use crate::grid::{FieldSpec, Grid};
use crate::scalar::Real;
use crate::sparse::{Csr, Elem};

/// Default Gaussian rate denominator `d` in `e^{-|x-y|²/(d t)}`.
pub const DEFAULT_GAUSSIAN_D: f64 = 8.0;

/// Heat-kernel entries below this fraction of the largest entry at the same
/// time are treated as round-off when forming the Gaussian ratio.
pub const HEAT_NOISE_FLOOR: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Laplacian,
    Schrodinger,
    MagneticSchrodinger,
}

/// Sparse Hermitian discretization of a Schrödinger-type operator.
#[derive(Debug, Clone)]
pub struct LatticeOperator<T: Real> {
    grid: Grid<T>,
    kind: OperatorKind,
    matrix: Csr<Complex<T>>,
    real: Option<Csr<T>>,
    spectral_bound: T,
    lower_bound: T,
}

impl<T: Real> LatticeOperator<T> {
    fn from_matrix(grid: Grid<T>, kind: OperatorKind, matrix: Csr<Complex<T>>) -> Self {
        let (lo, hi) = matrix.gershgorin();
        let real = matrix.real_part_if_real();
        Self { grid, kind, matrix, real, spectral_bound: hi, lower_bound: lo }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn matrix(&self) -> &Csr<Complex<T>> {
        &self.matrix
    }

    /// Real copy of the matrix when no magnetic phase is present.
    pub fn real_matrix(&self) -> Option<&Csr<T>> {
        self.real.as_ref()
    }

    pub fn size(&self) -> usize {
        self.matrix.size()
    }

    /// Gershgorin upper estimate of the largest eigenvalue.
    pub fn spectral_bound(&self) -> T {
        self.spectral_bound
    }

    /// Gershgorin lower estimate of the smallest eigenvalue.
    pub fn lower_bound(&self) -> T {
        self.lower_bound
    }

    pub fn apply(&self, f: &[Complex<T>]) -> Vec<Complex<T>> {
        self.matrix.apply(f)
    }

    pub fn dense(&self) -> Vec<Complex<T>> {
        self.matrix.to_dense()
    }

    /// `‖H - H*‖_max / ‖H‖_max`.
    pub fn hermiticity_defect(&self) -> T {
        let scale = self.matrix.max_abs();
        if scale == T::zero() {
            T::zero()
        } else {
            self.matrix.hermitian_defect() / scale
        }
    }

    /// The operator `λH` on the same grid.
    pub fn scaled(&self, lambda: T) -> Self {
        Self::from_matrix(self.grid.clone(), self.kind, self.matrix.map(|v| v * lambda))
    }

    /// `H + cI`.
    pub fn shifted(&self, shift: T) -> Self {
        let n = self.size();
        let rows = (0..n)
            .map(|i| {
                let mut row: Vec<(usize, Complex<T>)> = self.matrix.row(i).collect();
                row.push((i, Complex::new(shift, T::zero())));
                row
            })
            .collect();
        let kind = match self.kind {
            OperatorKind::Laplacian => OperatorKind::Schrodinger,
            k => k,
        };
        Self::from_matrix(self.grid.clone(), kind, Csr::from_rows::<T>(rows))
    }

    /// Matrix-vector product in the cheapest available arithmetic.
    fn chebyshev_columns(&self, series: &[&ChebyshevSeries<T>], source: usize) -> Vec<Vec<Complex<T>>> {
        let n = self.size();
        match &self.real {
            Some(m) => {
                let mut e = vec![T::zero(); n];
                e[source] = T::one();
                apply_many(series, |v: &[T], out: &mut [T]| m.apply_into(v, out), &e)
            }
            None => {
                let mut e = vec![Complex::new(T::zero(), T::zero()); n];
                e[source] = Complex::new(T::one(), T::zero());
                apply_many(series, |v: &[Complex<T>], out: &mut [Complex<T>]| self.matrix.apply_into(v, out), &e)
            }
        }
    }
}

fn check_stencil<T: Real>(grid: &Grid<T>) -> Result<()> {
    if grid.points_per_axis() < 3 {
        return Err(Error::TooFewPoints { min: 3, got: grid.points_per_axis() });
    }
    Ok(())
}

/// Second-order stencil for `-Δ`: `(2f(x) - f(x+he) - f(x-he))/h²` summed over axes.
pub fn build_laplacian<T: Real>(grid: &Grid<T>) -> Result<LatticeOperator<T>> {
    check_stencil(grid)?;
    let inv_h2 = T::one() / (grid.spacing() * grid.spacing());
    let diag = Complex::new(T::lit(2.0 * grid.dim() as f64) * inv_h2, T::zero());
    let off = Complex::new(-inv_h2, T::zero());
    let rows = (0..grid.len())
        .map(|i| {
            let mut row = vec![(i, diag)];
            for axis in 0..grid.dim() {
                for forward in [true, false] {
                    if let Some(j) = grid.neighbor(i, axis, forward) {
                        row.push((j, off));
                    }
                }
            }
            row
        })
        .collect();
    Ok(LatticeOperator::from_matrix(grid.clone(), OperatorKind::Laplacian, Csr::from_rows::<T>(rows)))
}

/// `(i∇ - A)² + V` with Peierls phases on nearest-neighbor hops.
///
/// The hop from `x` to `x + h e_k` carries `-e^{i h A_k(edge)}/h²`, with the
/// edge value taken as the midpoint average of the nodal values. For constant
/// `A` the symbol is `Σ_k (2 - 2cos(h(ξ_k + A_k)))/h²`, the lattice version of
/// `|ξ + A|²`.
pub fn build_magnetic_schrodinger<T: Real>(grid: &Grid<T>, fields: &FieldSpec<T>) -> Result<LatticeOperator<T>> {
    check_stencil(grid)?;
    fields.check(grid)?;
    let h = grid.spacing();
    let inv_h2 = T::one() / (h * h);
    let half = T::lit(0.5);
    let base_diag = T::lit(2.0 * grid.dim() as f64) * inv_h2;
    let rows = (0..grid.len())
        .map(|i| {
            let mut row = vec![(i, Complex::new(base_diag + fields.potential[i], T::zero()))];
            for axis in 0..grid.dim() {
                let a = &fields.vector_potential[axis];
                if let Some(j) = grid.neighbor(i, axis, true) {
                    let phase = h * (a[i] + a[j]) * half;
                    row.push((j, Complex::from_polar(inv_h2, phase) * -T::one()));
                }
                if let Some(j) = grid.neighbor(i, axis, false) {
                    let phase = -h * (a[i] + a[j]) * half;
                    row.push((j, Complex::from_polar(inv_h2, phase) * -T::one()));
                }
            }
            row
        })
        .collect();
    let kind = if fields.is_magnetic() {
        OperatorKind::MagneticSchrodinger
    } else if fields.potential.iter().any(|&v| v != T::zero()) {
        OperatorKind::Schrodinger
    } else {
        OperatorKind::Laplacian
    };
    Ok(LatticeOperator::from_matrix(grid.clone(), kind, Csr::from_rows::<T>(rows)))
}

/// `-Δ + V` without a magnetic field.
pub fn build_schrodinger<T: Real>(grid: &Grid<T>, potential: Vec<T>) -> Result<LatticeOperator<T>> {
    build_magnetic_schrodinger(grid, &FieldSpec::with_potential(grid, potential)?)
}

/// Dense heat kernel `e^{-tH}(x, y)` under the `1/hⁿ` density convention.
///
/// Uses the eigendecomposition up to [`DEFAULT_DENSE_CEILING`] points and a
/// Chebyshev expansion column by column above it.
pub fn heat_kernel<T: Real>(op: &LatticeOperator<T>, t: T) -> Result<KernelMatrix<T>> {
    if !(t > T::zero()) {
        return Err(Error::InvalidParameter(format!("heat time must be positive, got {t}")));
    }
    if op.size() <= DEFAULT_DENSE_CEILING {
        let sd = eigendecompose(op)?;
        return Ok(sd.kernel_of(|lambda| Complex::new((-t * lambda).exp(), T::zero())));
    }
    let sources: Vec<usize> = (0..op.size()).collect();
    let mut cols = heat_columns(op, &[t], &sources)?.pop().unwrap_or_default();
    let n = op.size();
    let mut entries = vec![Complex::new(T::zero(), T::zero()); n * n];
    // column y of e^{-tH} is row y of its adjoint; store K(x, y) = col_y[x]
    for (y, col) in cols.iter_mut().enumerate() {
        for (x, v) in col.iter().enumerate() {
            entries[x * n + y] = *v;
        }
    }
    Ok(KernelMatrix::from_density(op.grid().clone(), entries))
}

/// Heat-kernel columns `p_t(·, y)` for each time and each source `y`, under
/// the density convention, by a shared Chebyshev recurrence.
///
/// Indexing: `result[time][source][x]`.
pub fn heat_columns<T: Real>(op: &LatticeOperator<T>, times: &[T], sources: &[usize]) -> Result<Vec<Vec<Vec<Complex<T>>>>> {
    if times.iter().any(|&t| !(t > T::zero())) {
        return Err(Error::InvalidParameter("heat times must be positive".into()));
    }
    if let Some(&bad) = sources.iter().find(|&&s| s >= op.size()) {
        return Err(Error::InvalidParameter(format!("source index {bad} out of range")));
    }
    let width = op.spectral_bound() - op.lower_bound();
    let pad = width * T::lit(1e-3) + T::lit(1e-12);
    let (lo, hi) = (op.lower_bound() - pad, op.spectral_bound() + pad);
    let series = times
        .iter()
        .map(|&t| {
            // e^{-tλ} normalised by e^{-t lo} so the expansion has unit scale
            ChebyshevSeries::fit_adaptive(
                |l| Complex::new((-t * (l - lo)).exp(), T::zero()),
                lo,
                hi,
                T::lit(1e-15),
                8192,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&ChebyshevSeries<T>> = series.iter().collect();
    let inv_vol = T::one() / op.grid().cell_volume();
    let per_source: Vec<Vec<Vec<Complex<T>>>> = sources
        .par_iter()
        .map(|&s| {
            let mut cols = op.chebyshev_columns(&refs, s);
            for (col, &t) in cols.iter_mut().zip(times) {
                let rescale = (-t * lo).exp() * inv_vol;
                col.iter_mut().for_each(|v| *v *= rescale);
            }
            cols
        })
        .collect();
    let mut out = vec![Vec::with_capacity(sources.len()); times.len()];
    for cols in per_source {
        for (k, col) in cols.into_iter().enumerate() {
            out[k].push(col);
        }
    }
    Ok(out)
}

/// Empirical Gaussian constant of a heat kernel.
#[derive(Debug, Clone, Serialize)]
pub struct HeatKernelReport<T: Real> {
    pub times: Vec<T>,
    pub k0_estimate: T,
    pub d_used: T,
    /// Worst excess of the Gaussian ratio over a reference constant;
    /// zero when the reference is the estimate itself.
    pub max_violation: T,
    /// `(t, x, y)` achieving the supremum.
    pub argmax: (T, usize, usize),
}

impl<T: Real> HeatKernelReport<T> {
    /// Re-expresses `max_violation` against an external bound such as a
    /// predicted `K₀`.
    pub fn against(mut self, reference: T) -> Self {
        self.max_violation = (self.k0_estimate - reference).max(T::zero());
        self
    }
}

struct Sup<T> {
    value: T,
    at: (T, usize, usize),
}

fn gaussian_scan<T: Real>(grid: &Grid<T>, t: T, d: T, x_of: impl Fn(usize) -> usize, cols: &[Vec<Complex<T>>]) -> Sup<T> {
    let n_half = T::lit(grid.dim() as f64 * 0.5);
    let h2 = grid.spacing() * grid.spacing();
    let peak = cols.iter().flatten().fold(T::zero(), |m, v| m.max(v.norm()));
    let floor = peak * T::lit(HEAT_NOISE_FLOOR);
    let log_t = n_half * t.ln();
    let mut best = Sup { value: T::zero(), at: (t, 0, 0) };
    for (k, col) in cols.iter().enumerate() {
        let y = x_of(k);
        for (x, v) in col.iter().enumerate() {
            let m = v.norm();
            if m <= floor || m == T::zero() {
                continue;
            }
            let r2 = T::lit(grid.dist2_steps(x, y) as f64) * h2;
            let value = (m.ln() + log_t + r2 / (d * t)).exp();
            if value > best.value {
                best = Sup { value, at: (t, x, y) };
            }
        }
    }
    best
}

/// Supremum of `|p_t(x,y)| t^{n/2} e^{|x-y|²/(d t)}` over the given times and
/// all pairs of grid points (torus distance on periodic grids).
pub fn estimate_gaussian_constant<T: Real>(op: &LatticeOperator<T>, times: &[T], d: T) -> Result<HeatKernelReport<T>> {
    if op.size() <= DEFAULT_DENSE_CEILING {
        if times.is_empty() || !(d > T::zero()) {
            return Err(Error::InvalidParameter("need at least one time and d > 0".into()));
        }
        let sd = eigendecompose(op)?;
        let n = op.size();
        let mut best = Sup { value: T::zero(), at: (times[0], 0, 0) };
        for &t in times {
            if !(t > T::zero()) {
                return Err(Error::InvalidParameter("heat times must be positive".into()));
            }
            let k = sd.kernel_of(|l| Complex::new((-t * l).exp(), T::zero()));
            let cols: Vec<Vec<Complex<T>>> = (0..n).map(|y| (0..n).map(|x| k.get(x, y)).collect()).collect();
            let s = gaussian_scan(op.grid(), t, d, |k| k, &cols);
            if s.value > best.value {
                best = s;
            }
        }
        return Ok(HeatKernelReport { times: times.to_vec(), k0_estimate: best.value, d_used: d, max_violation: T::zero(), argmax: best.at });
    }
    let sources: Vec<usize> = (0..op.size()).collect();
    estimate_gaussian_constant_sampled(op, times, d, &sources)
}

/// As [`estimate_gaussian_constant`], with the source points restricted to
/// `sources`; the heat columns come from the Chebyshev recurrence.
pub fn estimate_gaussian_constant_sampled<T: Real>(
    op: &LatticeOperator<T>,
    times: &[T],
    d: T,
    sources: &[usize],
) -> Result<HeatKernelReport<T>> {
    if times.is_empty() || sources.is_empty() || !(d > T::zero()) {
        return Err(Error::InvalidParameter("need times, sources and d > 0".into()));
    }
    let cols = heat_columns(op, times, sources)?;
    let mut best = Sup { value: T::zero(), at: (times[0], 0, 0) };
    for (&t, per_t) in times.iter().zip(&cols) {
        let s = gaussian_scan(op.grid(), t, d, |k| sources[k], per_t);
        if s.value > best.value {
            best = s;
        }
    }
    Ok(HeatKernelReport { times: times.to_vec(), k0_estimate: best.value, d_used: d, max_violation: T::zero(), argmax: best.at })
}

/// `Γ(k/2)` for a positive integer `k`.
pub fn gamma_half(k: u32) -> f64 {
    assert!(k > 0, "Γ(0) is undefined");
    let mut value = if k.is_multiple_of(2) { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut m = if k.is_multiple_of(2) { 2 } else { 1 };
    while m < k {
        value *= m as f64 / 2.0;
        m += 2;
    }
    value
}

/// Threshold `c_n = π^{n/2} / Γ(n/2 - 1)` for the Kato norm of `V₋`, `n ≥ 3`.
pub fn kato_threshold(n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!("Kato threshold needs n ≥ 3, got {n}")));
    }
    Ok(std::f64::consts::PI.powf(n as f64 / 2.0) / gamma_half(n as u32 - 2))
}

/// Volume of the unit ball in `ℝⁿ`.
pub fn unit_ball_volume(n: usize) -> f64 {
    std::f64::consts::PI.powf(n as f64 / 2.0) / gamma_half(n as u32 + 2)
}

/// Discrete Kato norm `sup_x Σ_y |V(y)| |x-y|^{2-n} hⁿ`.
///
/// The singular cell `y = x` is replaced by `|V(x)|` times the integral of
/// `|z|^{2-n}` over the ball with the cell's volume, `n ω_n ρ²/2`.
pub fn kato_norm<T: Real>(potential: &[T], grid: &Grid<T>) -> Result<T> {
    let n = grid.dim();
    if n < 3 {
        return Err(Error::InvalidParameter(format!("Kato norm is defined for n ≥ 3, got n = {n}")));
    }
    if potential.len() != grid.len() {
        return Err(Error::DimensionMismatch(format!("potential has {} values, grid has {}", potential.len(), grid.len())));
    }
    let omega = unit_ball_volume(n);
    let h = grid.spacing().as_f64();
    let vol = h.powi(n as i32);
    let rho = (vol / omega).powf(1.0 / n as f64);
    let self_cell = n as f64 * omega * rho * rho / 2.0;
    let support: Vec<(usize, f64)> = potential
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != T::zero())
        .map(|(i, v)| (i, v.abs().as_f64()))
        .collect();
    let exponent = (2.0 - n as f64) / 2.0;
    let h_pow = h.powf(2.0 - n as f64);
    let sup = (0..grid.len())
        .into_par_iter()
        .map(|x| {
            let mut acc = 0.0;
            for &(y, v) in &support {
                if y == x {
                    acc += v * self_cell;
                } else {
                    let r2 = grid.dist2_steps(x, y) as f64;
                    acc += v * r2.powf(exponent) * h_pow * vol;
                }
            }
            acc
        })
        .reduce(|| 0.0, f64::max);
    Ok(T::lit(sup))
}

/// `max_{x,y} |e^{-tH_A}(x,y)| - e^{-tH_0}(x,y)`; nonpositive certifies the
/// diamagnetic inequality on this grid.
pub fn check_diamagnetic<T: Real>(op_a: &LatticeOperator<T>, op_0: &LatticeOperator<T>, t: T) -> Result<T> {
    if !op_a.grid().same_shape(op_0.grid()) {
        return Err(Error::DimensionMismatch("operators live on different grids".into()));
    }
    let ka = heat_kernel(op_a, t)?;
    let k0 = heat_kernel(op_0, t)?;
    Ok(ka
        .entries()
        .iter()
        .zip(k0.entries())
        .fold(T::neg_infinity(), |m, (a, b)| m.max(a.norm() - b.re)))
}

/// Checks that every entry is finite.
pub fn all_finite<T: Real, E: Elem<T>>(v: &[E]) -> bool {
    v.iter().all(|x| x.modulus().is_finite())
}
