//! Dyadic cutoffs and the scale-invariant multiplier norms `μ_a`, `μ'_a`.
//!
//! Fourier convention: `𝓕f(ξ) = ∫ f(s) e^{-isξ} ds`, so that
//! `f(s) = (2π)^{-1} ∫ 𝓕f(ξ) e^{isξ} dξ`.

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::calculus::MultiplierFn;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `|f(s)| ≤ FOURIER_INVERSION_FACTOR · ‖𝓕f‖_{L¹}` under the module convention.
pub const FOURIER_INVERSION_FACTOR: f64 = 1.0 / (2.0 * std::f64::consts::PI);

pub const DEFAULT_SAMPLE_RATE: usize = 128;
pub const MIN_SAMPLE_RATE: usize = 64;
const ZERO_PAD: usize = 8;
const WINDOW: f64 = 4.0;

fn chi(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

/// The smooth even bump: `1` on `[-1, 1]`, `0` off `(-2, 2)`, and
/// `χ(2-|s|)/(χ(2-|s|)+χ(|s|-1))` in between with `χ(x) = e^{-1/x}`.
pub fn psi<T: Real>(s: T) -> T {
    let a = s.abs().as_f64();
    if a <= 1.0 {
        T::one()
    } else if a >= 2.0 {
        T::zero()
    } else {
        let u = chi(2.0 - a);
        T::lit(u / (u + chi(a - 1.0)))
    }
}

/// `φ(s) = ψ(s) - ψ(2s)` for `s > 0`, zero otherwise.
pub fn phi<T: Real>(s: T) -> T {
    if s > T::zero() {
        psi(s) - psi(s + s)
    } else {
        T::zero()
    }
}

/// Result of the partition-of-unity self-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffCheck {
    pub samples: usize,
    /// Largest `|φ(s)|` with `s ∉ [1/2, 2]`.
    pub support_violation: f64,
    /// Largest `|Σ_{k≥0} φ(2^k s) - ψ(s)|`.
    pub upper_error: f64,
    /// Largest `|Σ_{k<0} φ(2^k s) - (1 - ψ(s))|`.
    pub lower_error: f64,
}

impl CutoffCheck {
    pub fn worst(&self) -> f64 {
        self.support_violation.max(self.upper_error).max(self.lower_error)
    }
}

/// The fixed pair `(ψ, φ)` together with the sampling rate used for FFT work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadicCutoffs {
    sample_rate: usize,
}

pub const CUTOFF_TOL: f64 = 1e-10;
pub const CUTOFF_SAMPLES: usize = 10_000;

/// Builds the cutoffs and runs the self-test on `CUTOFF_SAMPLES` points.
pub fn make_cutoffs(sample_rate: usize) -> Result<DyadicCutoffs> {
    if sample_rate < MIN_SAMPLE_RATE {
        return Err(Error::InvalidParameter(format!("sample rate must be ≥ {MIN_SAMPLE_RATE}, got {sample_rate}")));
    }
    let c = DyadicCutoffs { sample_rate };
    let check = c.verify(CUTOFF_SAMPLES);
    if check.worst() > CUTOFF_TOL {
        return Err(Error::Hypothesis(format!("dyadic partition identity fails: {check:?}")));
    }
    Ok(c)
}

impl DyadicCutoffs {
    pub fn sample_rate(&self) -> usize {
        self.sample_rate
    }

    pub fn psi(&self, s: f64) -> f64 {
        psi(s)
    }

    pub fn phi(&self, s: f64) -> f64 {
        phi(s)
    }

    /// `Σ_{k ≥ 0} φ(2^k s)`; terms with `2^k s > 2` vanish.
    pub fn upper_sum(&self, s: f64) -> f64 {
        let mut total = 0.0;
        let mut x = s;
        while x < 2.0 {
            total += phi(x);
            x *= 2.0;
        }
        total
    }

    /// `Σ_{k < 0} φ(2^k s)`; terms with `2^k s < 1/2` vanish.
    pub fn lower_sum(&self, s: f64) -> f64 {
        let mut total = 0.0;
        let mut x = s / 2.0;
        while x > 0.5 {
            total += phi(x);
            x /= 2.0;
        }
        total
    }

    /// Evaluates the support property and both identities on `samples`
    /// geometrically spread points in `[2^{-12}, 2^{12}]` plus the dyadic
    /// endpoints.
    pub fn verify(&self, samples: usize) -> CutoffCheck {
        let mut points: Vec<f64> = (0..samples)
            .map(|j| 2f64.powf(-12.0 + 24.0 * j as f64 / (samples.max(2) - 1) as f64))
            .collect();
        points.extend([0.5, 1.0, 2.0, 0.7, 1.5]);
        let mut check = CutoffCheck { samples: points.len(), support_violation: 0.0, upper_error: 0.0, lower_error: 0.0 };
        for &s in &points {
            if !(0.5..=2.0).contains(&s) {
                check.support_violation = check.support_violation.max(phi(s).abs());
            }
            check.upper_error = check.upper_error.max((self.upper_sum(s) - psi(s)).abs());
            check.lower_error = check.lower_error.max((self.lower_sum(s) - (1.0 - psi(s))).abs());
        }
        check
    }
}

/// Geometric grid `2^{j/per_octave}` for `j/per_octave ∈ [lo_exp, hi_exp]`.
pub fn lambda_grid<T: Real>(lo_exp: i32, hi_exp: i32, per_octave: usize) -> Vec<T> {
    let p = per_octave.max(1) as i64;
    (lo_exp as i64 * p..=hi_exp as i64 * p).map(|j| T::lit(2f64.powf(j as f64 / p as f64))).collect()
}

/// The default grid `λ ∈ [2^{-10}, 2^{10}]`, 8 points per octave.
pub fn default_lambda_grid<T: Real>() -> Vec<T> {
    lambda_grid(-10, 10, 8)
}

/// A sampled `μ_a` or `μ'_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuEstimate<T> {
    pub label: String,
    pub a: T,
    pub primed: bool,
    pub value: T,
    pub per_lambda: Vec<(T, T)>,
}

impl<T: Real> MuEstimate<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Continuum-normalized transform of `s ↦ weight(s)·φ(s)·g(λs)` sampled on
/// `[0, 4]`; returns `(ξ_k, ĥ(ξ_k))` and the frequency step.
fn localized_transform<T: Real>(g: &MultiplierFn<T>, lambda: T, primed: bool, rate: usize) -> Result<(Vec<T>, Vec<Complex<T>>, T)> {
    let m0 = (WINDOW as usize) * rate;
    let m = m0 * ZERO_PAD;
    let ds = T::lit(1.0 / rate as f64);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); m];
    for (j, slot) in buf.iter_mut().take(m0).enumerate() {
        let s = T::lit(j as f64) * ds;
        let cut = phi(s);
        if cut == T::zero() {
            continue;
        }
        let v = g.evaluate(lambda * s);
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonFinite(format!("{} at s = {}", g.label(), lambda * s)));
        }
        let w = if primed { s * cut } else { cut };
        *slot = v * w * ds;
    }
    FftPlanner::<T>::new().plan_fft_forward(m).process(&mut buf);
    let dxi = T::lit(2.0 * std::f64::consts::PI) / (T::lit(m as f64) * ds);
    let xi = (0..m)
        .map(|k| {
            let kk = if k < m / 2 { k as f64 } else { k as f64 - m as f64 };
            T::lit(kk) * dxi
        })
        .collect();
    Ok((xi, buf, dxi))
}

fn japanese<T: Real>(xi: T) -> T {
    (T::one() + xi * xi).sqrt()
}

fn mu_impl<T: Real>(g: &MultiplierFn<T>, a: T, cutoffs: &DyadicCutoffs, lambdas: &[T], primed: bool) -> Result<MuEstimate<T>> {
    if a < T::zero() {
        return Err(Error::InvalidParameter(format!("smoothness order must be ≥ 0, got {a}")));
    }
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter("empty λ-grid".into()));
    }
    let per_lambda = lambdas
        .par_iter()
        .map(|&lambda| {
            let (xi, hat, dxi) = localized_transform(g, lambda, primed, cutoffs.sample_rate)?;
            let integral: T = xi.iter().zip(&hat).map(|(&x, h)| japanese(x).powf(a) * h.norm()).sum::<T>() * dxi;
            Ok((lambda, integral))
        })
        .collect::<Result<Vec<_>>>()?;
    let value = per_lambda.iter().fold(T::zero(), |m, &(_, v)| m.max(v));
    Ok(MuEstimate { label: g.label().to_string(), a, primed, value, per_lambda })
}

/// `μ_a(g) = sup_λ ‖⟨ξ⟩^a 𝓕[φ · g(λ·)]‖_{L¹}` over the given grid.
pub fn mu_norm<T: Real>(g: &MultiplierFn<T>, a: T, cutoffs: &DyadicCutoffs, lambdas: &[T]) -> Result<MuEstimate<T>> {
    mu_impl(g, a, cutoffs, lambdas, false)
}

/// `μ'_a(g) = sup_λ ‖⟨ξ⟩^a 𝓕[s φ(s) g(λs)]‖_{L¹}`.
pub fn mu_prime_norm<T: Real>(g: &MultiplierFn<T>, a: T, cutoffs: &DyadicCutoffs, lambdas: &[T]) -> Result<MuEstimate<T>> {
    mu_impl(g, a, cutoffs, lambdas, true)
}

/// `sup_t ‖φ · g(t·)‖_{H^{a+1/2+ε}}` with
/// `‖h‖²_{H^b} = (2π)^{-1} ∫ ⟨ξ⟩^{2b} |𝓕h(ξ)|² dξ`.
pub fn sobolev_majorant<T: Real>(g: &MultiplierFn<T>, a: T, epsilon: T, cutoffs: &DyadicCutoffs, t_grid: &[T]) -> Result<T> {
    if !(epsilon > T::zero()) {
        return Err(Error::InvalidParameter(format!("ε must be positive, got {epsilon}")));
    }
    let b2 = (a + T::lit(0.5) + epsilon) * T::lit(2.0);
    let values = t_grid
        .par_iter()
        .map(|&t| {
            let (xi, hat, dxi) = localized_transform(g, t, false, cutoffs.sample_rate)?;
            let sq: T = xi.iter().zip(&hat).map(|(&x, h)| japanese(x).powf(b2) * h.norm_sqr()).sum::<T>() * dxi;
            Ok((sq * T::lit(FOURIER_INVERSION_FACTOR)).sqrt())
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(values.into_iter().fold(T::zero(), T::max))
}

/// Structural constants of the multiplier theorems with every unspecified
/// numerical factor set to one. Only their growth is meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedConstants {
    /// `K₀⁴ (1 + μ + ‖g‖²_∞)`.
    pub weak_type: f64,
    /// `6 · weak_type · (p + (p-1)^{-1})`.
    pub strong_type: f64,
    /// `K₀^{1+2p²} (1 + μ + ‖g‖²_∞) · q`.
    pub weighted: f64,
    pub shape_only: bool,
}

/// `6 (p + (p-1)^{-1})`.
pub fn lp_growth(p: f64) -> f64 {
    6.0 * (p + 1.0 / (p - 1.0))
}

pub fn predicted_constants(k0: f64, mu: f64, sup_norm: f64, n: usize, sigma: f64, p: f64, q: f64) -> Result<PredictedConstants> {
    if ![k0, mu, sup_norm, sigma, p, q].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("predicted-constant inputs".into()));
    }
    if sigma <= n as f64 / 2.0 {
        return Err(Error::Hypothesis(format!("weak-type estimate needs σ > n/2 = {}, got σ = {sigma}", n as f64 / 2.0)));
    }
    if p <= 1.0 {
        return Err(Error::Hypothesis(format!("strong-type estimate needs p > 1, got {p}")));
    }
    let mass = 1.0 + mu + sup_norm * sup_norm;
    let weak = k0.powi(4) * mass;
    Ok(PredictedConstants {
        weak_type: weak,
        strong_type: weak * lp_growth(p),
        weighted: k0.powf(1.0 + 2.0 * p * p) * mass * q,
        shape_only: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cut() -> DyadicCutoffs {
        make_cutoffs(DEFAULT_SAMPLE_RATE).unwrap()
    }

    #[test]
    fn cutoff_values() {
        assert_eq!(psi(0.0f64), 1.0);
        assert_eq!(phi(1.0f64), 1.0);
        assert_eq!(phi(0.5f64), 0.0);
        assert_eq!(psi(-1.5f64), psi(1.5f64));
        let c = cut();
        assert!((c.upper_sum(0.7) + c.lower_sum(0.7) - 1.0).abs() < 1e-15);
        assert!(make_cutoffs(32).is_err());
    }

    #[test]
    fn cutoff_self_test_passes() {
        let check = cut().verify(CUTOFF_SAMPLES);
        assert!(check.worst() <= CUTOFF_TOL, "{check:?}");
    }

    #[test]
    fn lambda_grid_shape() {
        let g: Vec<f64> = default_lambda_grid();
        assert_eq!(g.len(), 161);
        assert!((g[0] - 2f64.powi(-10)).abs() < 1e-18);
        assert!((g[160] - 1024.0).abs() < 1e-9);
    }

    #[test]
    fn constant_multiplier_is_scale_free() {
        let one = MultiplierFn::constant(Complex::new(1.0f64, 0.0));
        let est = mu_norm(&one, 1.0, &cut(), &lambda_grid(-3, 3, 2)).unwrap();
        let first = est.per_lambda[0].1;
        assert!(est.per_lambda.iter().all(|&(_, v)| (v - first).abs() < 1e-12 * first));
        assert_eq!(est.value, first);
        let zero = MultiplierFn::constant(Complex::new(0.0, 0.0));
        assert_eq!(mu_prime_norm(&zero, 1.0, &cut(), &[1.0]).unwrap().value, 0.0);
        assert_eq!(sobolev_majorant(&zero, 1.0, 0.1, &cut(), &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn mu_zero_of_phi_bounds_the_bump() {
        let one = MultiplierFn::constant(Complex::new(1.0, 0.0));
        let est = mu_norm(&one, 0.0, &cut(), &[1.0]).unwrap();
        assert!(est.value * FOURIER_INVERSION_FACTOR >= 1.0 - 1e-9);
    }

    #[test]
    fn json_layout() {
        let one = MultiplierFn::constant(Complex::new(1.0, 0.0));
        let est = mu_norm(&one, 0.0, &cut(), &[1.0]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&est.to_json().unwrap()).unwrap();
        for key in ["label", "a", "primed", "value", "per_lambda"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v["per_lambda"][0].is_array());
    }

    #[test]
    fn predicted_constant_formulas() {
        let c = predicted_constants(1.0, 0.0, 1.0, 1, 2.0, 2.0, 4.0).unwrap();
        assert_eq!(c.weak_type, 2.0);
        assert_eq!(c.strong_type, 36.0);
        assert_eq!(c.weighted, 8.0);
        assert_eq!(lp_growth(2.0), 18.0);
        assert!(predicted_constants(1.0, 0.0, 1.0, 2, 1.0, 2.0, 4.0).is_err());
    }
}
