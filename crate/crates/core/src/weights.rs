//! Muckenhoupt and reverse-Hölder constants over a finite cube family,
//! weighted Lebesgue norms, power weights and the A₁ factorization.
//!
//! Every constant is a supremum over the weight's declared cube family, so on
//! a finite grid it is a lower bound for the continuum constant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Real;
use crate::sparse::Elem;

/// Values below this are raised to it.
pub const WEIGHT_FLOOR: f64 = 1e-30;

/// Axis-aligned cube of grid cells `[corner_k, corner_k + side)` on every axis.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cube {
    pub corner: Vec<usize>,
    pub side: usize,
}

impl Cube {
    pub fn new(corner: Vec<usize>, side: usize) -> Self {
        Self { corner, side }
    }

    pub fn fits<T: Real>(&self, grid: &Grid<T>) -> bool {
        self.side > 0 && self.corner.len() == grid.dim() && self.corner.iter().all(|&c| c + self.side <= grid.points_per_axis())
    }

    pub fn contains<T: Real>(&self, grid: &Grid<T>, idx: usize) -> bool {
        grid.multi_index(idx).iter().zip(&self.corner).all(|(&i, &c)| i >= c && i < c + self.side)
    }

    pub fn cell_count(&self) -> usize {
        self.side.pow(self.corner.len() as u32)
    }

    /// Linear indices of the cells, row-major.
    pub fn cells<T: Real>(&self, grid: &Grid<T>) -> Vec<usize> {
        let dim = grid.dim();
        let mut out = Vec::with_capacity(self.cell_count());
        let mut offset = vec![0usize; dim];
        loop {
            let idx: Vec<usize> = self.corner.iter().zip(&offset).map(|(c, o)| c + o).collect();
            out.push(grid.linear_index(&idx));
            let mut axis = dim;
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                offset[axis] += 1;
                if offset[axis] < self.side {
                    break;
                }
                offset[axis] = 0;
            }
        }
    }

    /// `(side · h)^n`.
    pub fn volume<T: Real>(&self, grid: &Grid<T>) -> T {
        (T::lit(self.side as f64) * grid.spacing()).powi(grid.dim() as i32)
    }
}

/// All dyadic cubes `side ∈ {1, 2, 4, …}` with corners on multiples of the
/// side, plus the family translated by half a side; cubes must fit in the grid.
pub fn standard_family<T: Real>(grid: &Grid<T>) -> Vec<Cube> {
    let n = grid.points_per_axis();
    let dim = grid.dim();
    let mut out = Vec::new();
    let mut side = 1;
    while side <= n {
        let mut offsets = vec![0];
        if side >= 2 {
            offsets.push(side / 2);
        }
        for &shift in &offsets {
            let starts: Vec<usize> = (0..).map(|k| shift + k * side).take_while(|&c| c + side <= n).collect();
            if starts.is_empty() {
                continue;
            }
            let mut pick = vec![0usize; dim];
            'outer: loop {
                out.push(Cube::new(pick.iter().map(|&k| starts[k]).collect(), side));
                let mut axis = dim;
                loop {
                    if axis == 0 {
                        break 'outer;
                    }
                    axis -= 1;
                    pick[axis] += 1;
                    if pick[axis] < starts.len() {
                        break;
                    }
                    pick[axis] = 0;
                }
            }
        }
        side *= 2;
    }
    out
}

/// A positive grid function with the cube family its constants refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct Weight<T: Real> {
    values: Vec<T>,
    grid: Grid<T>,
    family: Vec<Cube>,
}

impl<T: Real> Weight<T> {
    /// Floors values at [`WEIGHT_FLOOR`]; negative or non-finite values are rejected.
    pub fn new(grid: &Grid<T>, values: Vec<T>) -> Result<Self> {
        Self::with_family(grid, values, standard_family(grid))
    }

    pub fn with_family(grid: &Grid<T>, values: Vec<T>, family: Vec<Cube>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!("weight has {} values, grid has {}", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        if family.is_empty() {
            return Err(Error::InvalidParameter("cube family is empty".into()));
        }
        if let Some(bad) = family.iter().find(|c| !c.fits(grid)) {
            return Err(Error::InvalidParameter(format!("cube {bad:?} does not fit the grid")));
        }
        let floor = T::lit(WEIGHT_FLOOR);
        let values = values.into_iter().map(|v| v.max(floor)).collect();
        Ok(Self { values, grid: grid.clone(), family })
    }

    pub fn constant(grid: &Grid<T>, c: T) -> Result<Self> {
        Self::new(grid, vec![c; grid.len()])
    }

    pub fn from_table(grid: &Grid<T>, path: &std::path::Path) -> Result<Self> {
        Self::new(grid, crate::grid::read_table(path)?)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn family(&self) -> &[Cube] {
        &self.family
    }

    /// `w(E) = Σ_{x∈E} w(x) hⁿ`.
    pub fn measure(&self, cells: impl IntoIterator<Item = usize>) -> T {
        cells.into_iter().map(|i| self.values[i]).sum::<T>() * self.grid.cell_volume()
    }

    fn per_cube<F>(&self, f: F) -> (T, Cube)
    where
        F: Fn(&[T]) -> T + Sync,
    {
        let (value, k) = self
            .family
            .par_iter()
            .enumerate()
            .map(|(k, q)| {
                let vals: Vec<T> = q.cells(&self.grid).into_iter().map(|i| self.values[i]).collect();
                (f(&vals), k)
            })
            .reduce(|| (T::neg_infinity(), usize::MAX), |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
        (value, self.family[k].clone())
    }
}

fn mean<T: Real>(v: &[T], f: impl Fn(T) -> T) -> T {
    v.iter().map(|&x| f(x)).sum::<T>() / T::lit(v.len() as f64)
}

mod exponent {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad exponent {s}"))),
        }
    }
}

/// A constant of a weight class: which class, the exponent, the value and
/// the cube attaining it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    #[serde(with = "exponent")]
    pub p_or_q: f64,
    pub constant: f64,
    pub argmax_cube: Cube,
    /// Names the cube family the supremum ranges over.
    pub family: String,
}

pub type ApReport = ClassReport;
pub type RhReport = ClassReport;

const FAMILY_LABEL: &str = "dyadic+half-shifted";

impl ClassReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

fn report(class: &str, p: f64, (value, cube): (f64, Cube)) -> ClassReport {
    ClassReport { class: class.into(), p_or_q: p, constant: value, argmax_cube: cube, family: FAMILY_LABEL.into() }
}

/// `sup_Q (avg_Q w)(avg_Q w^{1-p'})^{p-1}`.
pub fn ap_constant<T: Real>(w: &Weight<T>, p: T) -> Result<ApReport> {
    if !(p > T::one()) {
        return Err(Error::InvalidParameter(format!("A_p needs p > 1, got {p}")));
    }
    let dual = T::one() - p / (p - T::one());
    let (v, q) = w.per_cube(|vals| mean(vals, |x| x) * mean(vals, |x| x.powf(dual)).powf(p - T::one()));
    Ok(report("A_p", p.as_f64(), (v.as_f64(), q)))
}

/// `sup_Q avg_Q w / min_Q w`.
pub fn a1_constant<T: Real>(w: &Weight<T>) -> ApReport {
    let (v, q) = w.per_cube(|vals| mean(vals, |x| x) / vals.iter().copied().fold(T::infinity(), T::min));
    report("A_1", 1.0, (v.as_f64(), q))
}

/// Best `C` in `(avg_Q w^q)^{1/q} ≤ C avg_Q w`; `q = ∞` uses the maximum.
pub fn rh_constant<T: Real>(w: &Weight<T>, q: T) -> Result<RhReport> {
    if !(q > T::one()) {
        return Err(Error::InvalidParameter(format!("RH_q needs q > 1, got {q}")));
    }
    let (v, cube) = if q.is_infinite() {
        w.per_cube(|vals| vals.iter().copied().fold(T::zero(), T::max) / mean(vals, |x| x))
    } else {
        w.per_cube(|vals| {
            let m = vals.iter().copied().fold(T::zero(), T::max);
            // normalize by the max so large q does not overflow
            mean(vals, |x| (x / m).powf(q)).powf(T::one() / q) * m / mean(vals, |x| x)
        })
    };
    Ok(report("RH_q", q.as_f64(), (v.as_f64(), cube)))
}

/// Outcome of sampling the subset inequality `w(E)/w(Q) ≤ ‖w‖_{RH_{s'}} (|E|/|Q|)^{1/s}`.
#[derive(Debug, Clone, Serialize)]
pub struct SubsetReport {
    pub s: f64,
    pub rh_norm: f64,
    pub trials: usize,
    pub max_violation: f64,
    pub pass: bool,
}

pub const SUBSET_TOL: f64 = 1e-12;

/// Samples `trials` pairs `E ⊆ Q` (the first two trials use `E = ∅` and `E = Q`).
pub fn rh_subset_check<T: Real>(w: &Weight<T>, s: T, trials: usize, seed: u64) -> Result<SubsetReport> {
    if !(s >= T::one()) {
        return Err(Error::InvalidParameter(format!("s must be ≥ 1, got {s}")));
    }
    let s_dual = if s == T::one() { T::infinity() } else { s / (s - T::one()) };
    let rh = rh_constant(w, s_dual)?.constant;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let inv_s = 1.0 / s.as_f64();
    for t in 0..trials {
        let q = &w.family[rng.random_range(0..w.family.len())];
        let cells = q.cells(&w.grid);
        let density: f64 = rng.random();
        let subset: Vec<usize> = match t {
            0 => Vec::new(),
            1 => cells.clone(),
            _ => cells.iter().copied().filter(|_| rng.random::<f64>() < density).collect(),
        };
        let ratio = (w.measure(subset.iter().copied()) / w.measure(cells.iter().copied())).as_f64();
        let frac = subset.len() as f64 / cells.len() as f64;
        worst = worst.max(ratio - rh * frac.powf(inv_s));
    }
    Ok(SubsetReport { s: s.as_f64(), rh_norm: rh, trials, max_violation: worst, pass: worst <= SUBSET_TOL })
}

/// `(Σ |f|^p w hⁿ)^{1/p}`.
pub fn weighted_lp_norm<T: Real, E: Elem<T>>(f: &[E], w: &Weight<T>, p: T) -> Result<T> {
    if f.len() != w.values.len() {
        return Err(Error::DimensionMismatch(format!("function has {} values, weight has {}", f.len(), w.values.len())));
    }
    if !(p >= T::one()) || p.is_infinite() {
        return Err(Error::InvalidParameter(format!("p must lie in [1, ∞), got {p}")));
    }
    Ok(lp_norm_with(f, &w.values, w.grid.cell_volume(), p))
}

pub(crate) fn lp_norm_with<T: Real, E: Elem<T>>(f: &[E], w: &[T], vol: T, p: T) -> T {
    let scale = f.iter().fold(T::zero(), |m, v| m.max(v.modulus()));
    if scale == T::zero() {
        return T::zero();
    }
    let s: T = f.iter().zip(w).map(|(v, &wx)| (v.modulus() / scale).powf(p) * wx).sum();
    scale * (s * vol).powf(T::one() / p)
}

/// `w(x) = max(|x|, h/2)^α`.
pub fn power_weight<T: Real>(alpha: T, grid: &Grid<T>) -> Result<Weight<T>> {
    let floor = grid.spacing() * T::lit(0.5);
    Weight::new(grid, grid.radii().into_iter().map(|r| r.max(floor).powf(alpha)).collect())
}

/// `Mf(x) = sup_{Q ∋ x} avg_Q |f|` over a cube family.
pub fn cube_maximal<T: Real>(f: &[T], grid: &Grid<T>, family: &[Cube]) -> Vec<T> {
    let avgs: Vec<(T, Vec<usize>)> = family
        .par_iter()
        .map(|q| {
            let cells = q.cells(grid);
            let avg = cells.iter().map(|&i| f[i].abs()).sum::<T>() / T::lit(cells.len() as f64);
            (avg, cells)
        })
        .collect();
    let mut out = vec![T::zero(); grid.len()];
    for (avg, cells) in avgs {
        for i in cells {
            if avg > out[i] {
                out[i] = avg;
            }
        }
    }
    out
}

/// `w = a · b^{1-p}` with the A₁ constants of both factors.
#[derive(Debug, Clone)]
pub struct Factorization<T: Real> {
    pub a: Weight<T>,
    pub b: Weight<T>,
    pub a1_of_a: f64,
    pub a1_of_b: f64,
    /// `max |w - a b^{1-p}| / w`.
    pub residual: f64,
    pub finite: bool,
}

/// Rubio de Francia-type construction: `a = Σ_{k<K} 2^{-k} M^k(w^{1/p})`
/// normalized to unit maximum (`M` has norm one on `L^∞`), and
/// `b = (a/w)^{1/(p-1)}`, which makes `w = a b^{1-p}` exact.
pub fn factorize_a1<T: Real>(w: &Weight<T>, p: T, iterations: usize) -> Result<Factorization<T>> {
    if !(p > T::one()) {
        return Err(Error::InvalidParameter(format!("factorization needs p > 1, got {p}")));
    }
    let (a_vals, b_vals) = if (p - T::one()).as_f64() < 1e-6 {
        (w.values.clone(), vec![T::one(); w.values.len()])
    } else {
        let mut term: Vec<T> = w.values.iter().map(|v| v.powf(T::one() / p)).collect();
        let mut acc = term.clone();
        let mut coef = T::one();
        for _ in 1..iterations.max(1) {
            term = cube_maximal(&term, &w.grid, &w.family);
            coef *= T::lit(0.5);
            acc.iter_mut().zip(&term).for_each(|(a, t)| *a += coef * *t);
        }
        let top = acc.iter().copied().fold(T::zero(), T::max);
        let a: Vec<T> = acc.into_iter().map(|v| v / top).collect();
        let b: Vec<T> = a.iter().zip(&w.values).map(|(&x, &y)| (x / y).powf(T::one() / (p - T::one()))).collect();
        (a, b)
    };
    let a = Weight::with_family(&w.grid, a_vals, w.family.clone())?;
    let b = Weight::with_family(&w.grid, b_vals, w.family.clone())?;
    let residual = w
        .values
        .iter()
        .zip(a.values.iter().zip(&b.values))
        .map(|(&x, (&av, &bv))| ((x - av * bv.powf(T::one() - p)) / x).abs().as_f64())
        .fold(0.0, f64::max);
    let a1_of_a = a1_constant(&a).constant;
    let a1_of_b = a1_constant(&b).constant;
    Ok(Factorization { a, b, a1_of_a, a1_of_b, residual, finite: a1_of_a.is_finite() && a1_of_b.is_finite() })
}
