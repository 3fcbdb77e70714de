//! Hardy–Littlewood maximal functions, Calderón–Zygmund and Whitney
//! decompositions, and an executable form of the good-λ maximal lemma.
//!
//! Balls are discrete: every node is a center and the radii are `k·h` for
//! `k = 0, 1, …, ⌈diameter/h⌉`. Membership is decided with exact integer
//! squared distances (torus distance on periodic grids). All measures are
//! cell counts times `hⁿ`.

use std::sync::Arc;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{apply_multiplier, MultiplierFn, SpectralDecomposition};
use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid};
use crate::norms::psi;
use crate::scalar::Real;
use crate::weights::{cube_maximal, rh_constant, standard_family, Cube, Weight};

/// Ball `{x : |x - center|² ≤ (k h)²}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Ball {
    pub center: usize,
    pub k: usize,
}

fn isqrt(v: i64) -> i64 {
    let mut r = (v as f64).sqrt() as i64;
    while r * r > v {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= v {
        r += 1;
    }
    r
}

/// The discrete ball family of a grid, organised along last-axis lines.
#[derive(Debug, Clone)]
pub struct BallFamily<T: Real> {
    grid: Grid<T>,
    max_k: usize,
    /// Multi-indices (all axes but the last) of each line.
    lines: Vec<Vec<usize>>,
}

impl<T: Real> BallFamily<T> {
    pub fn new(grid: &Grid<T>) -> Self {
        let max_k = grid.diameter_steps().ceil() as usize;
        let n = grid.points_per_axis();
        let line_count = grid.len() / n;
        let lines = (0..line_count)
            .map(|l| {
                let mut idx = grid.multi_index(l * n);
                idx.pop();
                idx
            })
            .collect();
        Self { grid: grid.clone(), max_k, lines }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn max_k(&self) -> usize {
        self.max_k
    }

    pub fn len(&self) -> usize {
        self.grid.len() * (self.max_k + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn balls(&self) -> impl Iterator<Item = Ball> + '_ {
        (0..self.grid.len()).flat_map(move |c| (0..=self.max_k).map(move |k| Ball { center: c, k }))
    }

    /// Radius in length units.
    pub fn radius(&self, ball: &Ball) -> T {
        T::lit(ball.k as f64) * self.grid.spacing()
    }

    /// Calls `visit(line, lo, hi)` for each maximal run `lo..=hi` of the ball
    /// on a last-axis line.
    pub fn for_each_run(&self, ball: &Ball, mut visit: impl FnMut(usize, usize, usize)) {
        let n = self.grid.points_per_axis();
        let mut cidx = self.grid.multi_index(ball.center);
        let c_last = cidx.pop().unwrap_or(0) as i64;
        let k2 = (ball.k * ball.k) as i64;
        let periodic = self.grid.boundary() == Boundary::Periodic;
        for (l, lidx) in self.lines.iter().enumerate() {
            let mut perp = 0i64;
            for (&a, &b) in cidx.iter().zip(lidx) {
                let s = self.grid.axis_steps(a, b);
                perp += s * s;
            }
            if perp > k2 {
                continue;
            }
            let w = isqrt(k2 - perp);
            let nn = n as i64;
            if periodic {
                if 2 * w + 1 >= nn {
                    visit(l, 0, n - 1);
                } else {
                    let lo = (c_last - w).rem_euclid(nn) as usize;
                    let hi = (c_last + w).rem_euclid(nn) as usize;
                    if lo <= hi {
                        visit(l, lo, hi);
                    } else {
                        visit(l, 0, hi);
                        visit(l, lo, n - 1);
                    }
                }
            } else {
                let lo = (c_last - w).max(0) as usize;
                let hi = (c_last + w).min(nn - 1) as usize;
                visit(l, lo, hi);
            }
        }
    }

    pub fn cells(&self, ball: &Ball) -> Vec<usize> {
        let n = self.grid.points_per_axis();
        let mut out = Vec::new();
        self.for_each_run(ball, |l, lo, hi| out.extend((lo..=hi).map(|i| l * n + i)));
        out
    }

    pub fn count(&self, ball: &Ball) -> usize {
        let mut c = 0;
        self.for_each_run(ball, |_, lo, hi| c += hi - lo + 1);
        c
    }

    /// `|B| = count · hⁿ`.
    pub fn measure(&self, ball: &Ball) -> T {
        T::lit(self.count(ball) as f64) * self.grid.cell_volume()
    }
}

/// Line-wise prefix sums for constant-time run sums.
struct Prefix<T> {
    n: usize,
    sums: Vec<T>,
}

impl<T: Real> Prefix<T> {
    fn new(values: &[T], n: usize) -> Self {
        let lines = values.len() / n;
        let mut sums = vec![T::zero(); lines * (n + 1)];
        for l in 0..lines {
            for i in 0..n {
                sums[l * (n + 1) + i + 1] = sums[l * (n + 1) + i] + values[l * n + i];
            }
        }
        Self { n, sums }
    }

    fn run(&self, l: usize, lo: usize, hi: usize) -> T {
        let base = l * (self.n + 1);
        self.sums[base + hi + 1] - self.sums[base + lo]
    }
}

/// `(avg_B |f|, ball)` for every ball in the family.
fn ball_averages<T: Real>(family: &BallFamily<T>, f: &[T]) -> Vec<(T, Ball)> {
    let abs: Vec<T> = f.iter().map(|v| v.abs()).collect();
    let prefix = Prefix::new(&abs, family.grid.points_per_axis());
    (0..family.grid.len())
        .into_par_iter()
        .flat_map_iter(|c| {
            let prefix = &prefix;
            (0..=family.max_k).map(move |k| {
                let ball = Ball { center: c, k };
                let (mut sum, mut count) = (T::zero(), 0usize);
                family.for_each_run(&ball, |l, lo, hi| {
                    sum += prefix.run(l, lo, hi);
                    count += hi - lo + 1;
                });
                (sum / T::lit(count as f64), ball)
            })
        })
        .collect()
}

/// Uncentered maximal function over the ball family.
///
/// Balls are processed in decreasing order of their average; each run of a
/// ball paints the cells not yet painted, found through a per-line
/// "next unpainted" forest, so every cell is written once.
pub fn ball_maximal<T: Real>(family: &BallFamily<T>, f: &[T]) -> Vec<T> {
    let mut avgs = ball_averages(family, f);
    avgs.par_sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let n = family.grid.points_per_axis();
    let lines = family.lines.len();
    let mut next: Vec<usize> = (0..lines * (n + 1)).map(|i| i % (n + 1)).collect();
    let mut out = vec![T::zero(); family.grid.len()];
    let mut remaining = family.grid.len();
    fn find(next: &mut [usize], base: usize, mut i: usize) -> usize {
        let mut root = i;
        while next[base + root] != root {
            root = next[base + root];
        }
        while next[base + i] != root {
            let up = next[base + i];
            next[base + i] = root;
            i = up;
        }
        root
    }
    for (avg, ball) in avgs {
        if remaining == 0 {
            break;
        }
        family.for_each_run(&ball, |l, lo, hi| {
            let base = l * (n + 1);
            let mut i = find(&mut next, base, lo);
            while i <= hi {
                out[l * n + i] = avg;
                remaining -= 1;
                next[base + i] = i + 1;
                i = find(&mut next, base, i + 1);
            }
        });
    }
    out
}

/// Which family the maximal operator ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Balls,
    Cubes,
}

/// `Mf(x) = sup_{family ∋ x} avg |f|`.
pub fn maximal_function<T: Real>(f: &[T], grid: &Grid<T>, shape: Shape) -> Result<Vec<T>> {
    if f.len() != grid.len() {
        return Err(Error::DimensionMismatch(format!("function has {} values, grid has {}", f.len(), grid.len())));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("maximal function input".into()));
    }
    Ok(match shape {
        Shape::Balls => ball_maximal(&BallFamily::new(grid), f),
        Shape::Cubes => cube_maximal(f, grid, &standard_family(grid)),
    })
}

/// `sup_λ λ^q |{Mf > λ}| / ‖f‖_q^q`, attained as `λ` increases to a value of `Mf`.
pub fn weak_ratio<T: Real>(family: &BallFamily<T>, f: &[T], q: T) -> T {
    let norm: T = f.iter().map(|v| v.abs().powf(q)).sum::<T>() * family.grid.cell_volume();
    if norm == T::zero() {
        return T::zero();
    }
    let mut mf = ball_maximal(family, f);
    mf.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let vol = family.grid.cell_volume();
    mf.iter().enumerate().map(|(j, &m)| m.powf(q) * T::lit((j + 1) as f64) * vol).fold(T::zero(), T::max) / norm
}

/// Empirical weak `(q, q)` constant of the ball maximal operator: the largest
/// [`weak_ratio`] over `trials` random inputs (spikes, ball indicators and
/// noise) and any extra probes. `q = ∞` returns `1`.
pub fn weak_qq_constant<T: Real>(grid: &Grid<T>, q: T, trials: usize, seed: u64, probes: &[Vec<T>]) -> Result<T> {
    if q.is_infinite() {
        return Ok(T::one());
    }
    if !(q >= T::one()) {
        return Err(Error::InvalidParameter(format!("weak type needs q ≥ 1, got {q}")));
    }
    let family = BallFamily::new(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<T>> = (0..trials)
        .map(|t| {
            let mut f = vec![T::zero(); grid.len()];
            match t % 3 {
                0 => f[rng.random_range(0..grid.len())] = T::one(),
                1 => {
                    let ball = Ball { center: rng.random_range(0..grid.len()), k: rng.random_range(0..=family.max_k) };
                    family.cells(&ball).into_iter().for_each(|i| f[i] = T::one());
                }
                _ => f.iter_mut().for_each(|v| *v = T::lit(rng.random::<f64>().powi(4))),
            }
            f
        })
        .chain(probes.iter().cloned())
        .collect();
    Ok(inputs.par_iter().map(|f| weak_ratio(&family, f, q)).reduce(T::zero, T::max))
}

fn dyadic_side<T: Real>(grid: &Grid<T>) -> Result<usize> {
    let n = grid.points_per_axis();
    if n.is_power_of_two() {
        Ok(n)
    } else {
        Err(Error::NotDyadic(n))
    }
}

fn children(q: &Cube) -> Vec<Cube> {
    let half = q.side / 2;
    let dim = q.corner.len();
    (0..1usize << dim)
        .map(|bits| Cube::new(q.corner.iter().enumerate().map(|(a, &c)| c + if bits >> a & 1 == 1 { half } else { 0 }).collect(), half))
        .collect()
}

/// Result of a Calderón–Zygmund decomposition at height `λ`.
#[derive(Debug, Clone, Serialize)]
pub struct CzDecomposition<T: Real> {
    pub lambda: T,
    pub cubes: Vec<Cube>,
    /// `h = f` off the cubes, `avg_Q f` on each cube.
    pub good: Vec<T>,
    /// `(f - avg_Q f)` on the cells of each cube, in [`Cube::cells`] order.
    pub bad: Vec<Vec<T>>,
    /// `max |h| / λ`.
    pub good_constant: T,
    /// `max_j ∫|f_j| / (λ|Q_j|)`.
    pub bad_constant: T,
    /// `λ Σ|Q_j| / ‖f‖₁`.
    pub measure_constant: T,
    /// True when `λ` did not exceed the root average and the root was selected.
    pub degenerate: bool,
}

/// Maximal dyadic cubes with `avg |f| > λ`; requires `2^k` points per axis.
pub fn cz_decompose<T: Real>(f: &[T], lambda: T, grid: &Grid<T>) -> Result<CzDecomposition<T>> {
    let n = dyadic_side(grid)?;
    if !(lambda > T::zero()) {
        return Err(Error::InvalidParameter(format!("λ must be positive, got {lambda}")));
    }
    if f.len() != grid.len() {
        return Err(Error::DimensionMismatch(format!("function has {} values, grid has {}", f.len(), grid.len())));
    }
    let avg_abs = |q: &Cube| q.cells(grid).iter().map(|&i| f[i].abs()).sum::<T>() / T::lit(q.cell_count() as f64);
    let root = Cube::new(vec![0; grid.dim()], n);
    let mut cubes = Vec::new();
    let degenerate = avg_abs(&root) > lambda;
    if degenerate {
        log::warn!("λ = {lambda} does not exceed the root average; selecting the whole grid");
        cubes.push(root);
    } else {
        let mut stack = vec![root];
        while let Some(q) = stack.pop() {
            if q.side == 1 {
                continue;
            }
            for child in children(&q) {
                if avg_abs(&child) > lambda {
                    cubes.push(child);
                } else {
                    stack.push(child);
                }
            }
        }
    }
    cubes.sort_by(|a, b| a.corner.cmp(&b.corner).then(a.side.cmp(&b.side)));
    let mut good = f.to_vec();
    let mut bad = Vec::with_capacity(cubes.len());
    let vol = grid.cell_volume();
    let mut bad_constant = T::zero();
    for q in &cubes {
        let cells = q.cells(grid);
        let avg = cells.iter().map(|&i| f[i]).sum::<T>() / T::lit(cells.len() as f64);
        let part: Vec<T> = cells.iter().map(|&i| f[i] - avg).collect();
        let mass = part.iter().map(|v| v.abs()).sum::<T>() * vol;
        bad_constant = bad_constant.max(mass / (lambda * q.volume(grid)));
        cells.iter().for_each(|&i| good[i] = avg);
        bad.push(part);
    }
    let l1 = f.iter().map(|v| v.abs()).sum::<T>() * vol;
    let total: T = cubes.iter().map(|q| q.volume(grid)).sum();
    let good_constant = good.iter().fold(T::zero(), |m, v| m.max(v.abs())) / lambda;
    let measure_constant = if l1 > T::zero() { lambda * total / l1 } else { T::zero() };
    Ok(CzDecomposition { lambda, cubes, good, bad, good_constant, bad_constant, measure_constant, degenerate })
}

impl<T: Real> CzDecomposition<T> {
    /// `max |f - h - Σ f_j|`.
    pub fn reconstruction_residual(&self, f: &[T], grid: &Grid<T>) -> T {
        let mut sum = self.good.clone();
        for (q, part) in self.cubes.iter().zip(&self.bad) {
            for (&i, &v) in q.cells(grid).iter().zip(part) {
                sum[i] += v;
            }
        }
        sum.iter().zip(f).fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    /// Full-grid copy of the bad part on cube `j`.
    pub fn bad_part(&self, j: usize, grid: &Grid<T>) -> Vec<T> {
        let mut out = vec![T::zero(); grid.len()];
        for (&i, &v) in self.cubes[j].cells(grid).iter().zip(&self.bad[j]) {
            out[i] = v;
        }
        out
    }
}

/// Maximal dyadic cubes contained in `mask`. The parent of each returned cube
/// meets the complement, so the concentric cube of four times the side does.
pub fn whitney_decompose<T: Real>(mask: &[bool], grid: &Grid<T>) -> Result<Vec<Cube>> {
    let n = dyadic_side(grid)?;
    if mask.len() != grid.len() {
        return Err(Error::DimensionMismatch(format!("mask has {} values, grid has {}", mask.len(), grid.len())));
    }
    if mask.iter().all(|&b| b) {
        return Err(Error::InvalidParameter("Whitney decomposition needs a nonempty complement".into()));
    }
    let inside = |q: &Cube| q.cells(grid).iter().all(|&i| mask[i]);
    let mut out = Vec::new();
    let mut stack = vec![Cube::new(vec![0; grid.dim()], n)];
    while let Some(q) = stack.pop() {
        for child in children(&q) {
            if inside(&child) {
                out.push(child);
            } else if child.side > 1 {
                stack.push(child);
            }
        }
    }
    out.sort_by(|a, b| a.corner.cmp(&b.corner).then(a.side.cmp(&b.side)));
    Ok(out)
}

/// Whether the center of `cell` lies in the closed concentric cube with
/// `factor` times the side of `q`.
pub fn dilate_contains<T: Real>(q: &Cube, factor: usize, grid: &Grid<T>, cell: usize) -> bool {
    let s = q.side as i64;
    let f = factor as i64;
    grid.multi_index(cell).iter().zip(&q.corner).all(|(&j, &c)| {
        let twice = 2 * j as i64 + 1;
        let center = 2 * c as i64 + s;
        (twice - center).abs() <= f * s
    })
}

/// Per-ball data `(G_B, H_B)` on the cells of the ball, in [`BallFamily::cells`] order.
pub type BallSplit<T> = Arc<dyn Fn(&Ball) -> (Vec<T>, Vec<T>) + Send + Sync>;

/// Worst normalized slack of the three hypotheses over the whole ball family.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionAudit {
    pub balls: usize,
    /// `max (F - G_B - H_B)` over balls and cells.
    pub cond1_excess: f64,
    /// `max ‖H_B‖_{L^q(B)} / (a (min_B MF + min_B G) |B|^{1/q})`.
    pub cond2_ratio: f64,
    /// `max ‖G_B‖_{L¹(B)} / (min_B G |B|)`.
    pub cond3_ratio: f64,
}

pub const CONDITION_TOL: f64 = 1e-12;

impl ConditionAudit {
    pub fn pass(&self) -> bool {
        self.cond1_excess <= CONDITION_TOL && self.cond2_ratio <= 1.0 + CONDITION_TOL && self.cond3_ratio <= 1.0 + CONDITION_TOL
    }
}

/// The data `(F, G, {G_B, H_B}, q, a, s, w)` of the good-λ lemma.
#[derive(Clone)]
pub struct GoodLambdaScenario<T: Real> {
    family: BallFamily<T>,
    f: Vec<T>,
    g: Vec<T>,
    mf: Vec<T>,
    split: BallSplit<T>,
    q: T,
    a: T,
    s: T,
    weight: Weight<T>,
    rh_norm: T,
    audit: ConditionAudit,
}

impl<T: Real> std::fmt::Debug for GoodLambdaScenario<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GoodLambdaScenario")
            .field("q", &self.q)
            .field("a", &self.a)
            .field("s", &self.s)
            .field("rh_norm", &self.rh_norm)
            .field("audit", &self.audit)
            .finish()
    }
}

fn lq_on<T: Real>(values: &[T], q: T, vol: T) -> T {
    if q.is_infinite() {
        values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    } else {
        (values.iter().map(|v| v.abs().powf(q)).sum::<T>() * vol).powf(T::one() / q)
    }
}

fn ball_min<T: Real>(values: &[T], cells: &[usize]) -> T {
    cells.iter().map(|&i| values[i]).fold(T::infinity(), T::min)
}

impl<T: Real> GoodLambdaScenario<T> {
    /// Audits the three hypotheses on every ball and rejects the scenario if
    /// any fails.
    #[allow(clippy::too_many_arguments)]
    pub fn new(grid: &Grid<T>, f: Vec<T>, g: Vec<T>, split: BallSplit<T>, q: T, a: T, s: T, weight: Weight<T>) -> Result<Self> {
        if f.len() != grid.len() || g.len() != grid.len() || weight.values().len() != grid.len() {
            return Err(Error::DimensionMismatch("scenario functions must live on the grid".into()));
        }
        if f.iter().chain(&g).any(|v| *v < T::zero() || !v.is_finite()) {
            return Err(Error::InvalidParameter("F and G must be finite and nonnegative".into()));
        }
        if !(q > T::one()) || !(a >= T::one()) || !(s >= T::one()) || s.is_infinite() {
            return Err(Error::InvalidParameter(format!("need q > 1, a ≥ 1, 1 ≤ s < ∞; got q={q}, a={a}, s={s}")));
        }
        let family = BallFamily::new(grid);
        let mf = ball_maximal(&family, &f);
        let s_dual = if s == T::one() { T::infinity() } else { s / (s - T::one()) };
        let rh_norm = T::lit(rh_constant(&weight, s_dual)?.constant);
        let mut sc = Self {
            family,
            f,
            g,
            mf,
            split,
            q,
            a,
            s,
            weight,
            rh_norm,
            audit: ConditionAudit { balls: 0, cond1_excess: 0.0, cond2_ratio: 0.0, cond3_ratio: 0.0 },
        };
        sc.audit = sc.audit_conditions();
        if !sc.audit.pass() {
            return Err(Error::Hypothesis(format!("good-λ conditions fail: {:?}", sc.audit)));
        }
        Ok(sc)
    }

    fn audit_conditions(&self) -> ConditionAudit {
        let vol = self.family.grid.cell_volume();
        let balls: Vec<Ball> = self.family.balls().collect();
        let per_ball: Vec<(f64, f64, f64)> = balls
            .par_iter()
            .map(|ball| {
                let cells = self.family.cells(ball);
                let (gb, hb) = (self.split)(ball);
                let measure = T::lit(cells.len() as f64) * vol;
                let scale = self.f.iter().fold(T::zero(), |m, v| m.max(*v)).max(T::lit(1e-300));
                let c1 = cells
                    .iter()
                    .zip(gb.iter().zip(&hb))
                    .map(|(&i, (&x, &y))| ((self.f[i] - x - y) / scale).as_f64())
                    .fold(f64::NEG_INFINITY, f64::max);
                let floor = ball_min(&self.mf, &cells) + ball_min(&self.g, &cells);
                let hq = lq_on(&hb, self.q, vol);
                let c2 = if hq == T::zero() {
                    0.0
                } else {
                    let bq = if self.q.is_infinite() { T::one() } else { measure.powf(T::one() / self.q) };
                    (hq / (self.a * floor * bq)).as_f64()
                };
                let g1 = gb.iter().map(|v| v.abs()).sum::<T>() * vol;
                let c3 = if g1 == T::zero() { 0.0 } else { (g1 / (ball_min(&self.g, &cells) * measure)).as_f64() };
                (c1, c2, c3)
            })
            .collect();
        let fold = |sel: fn(&(f64, f64, f64)) -> f64| per_ball.iter().map(sel).fold(f64::NEG_INFINITY, f64::max);
        ConditionAudit { balls: balls.len(), cond1_excess: fold(|t| t.0), cond2_ratio: fold(|t| t.1), cond3_ratio: fold(|t| t.2) }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.family.grid
    }

    pub fn family(&self) -> &BallFamily<T> {
        &self.family
    }

    pub fn f(&self) -> &[T] {
        &self.f
    }

    pub fn g(&self) -> &[T] {
        &self.g
    }

    /// Maximal function of `F` over the ball family.
    pub fn mf(&self) -> &[T] {
        &self.mf
    }

    pub fn q(&self) -> T {
        self.q
    }

    pub fn a(&self) -> T {
        self.a
    }

    pub fn s(&self) -> T {
        self.s
    }

    pub fn weight(&self) -> &Weight<T> {
        &self.weight
    }

    /// `‖w‖_{RH_{s'}}` over the weight's cube family.
    pub fn rh_norm(&self) -> T {
        self.rh_norm
    }

    pub fn audit(&self) -> &ConditionAudit {
        &self.audit
    }

    /// `w{x : pred(x)}`.
    fn wmeasure(&self, pred: impl Fn(usize) -> bool) -> T {
        self.weight.measure((0..self.f.len()).filter(|&i| pred(i)))
    }
}

/// `2^{6(n+q)}(c₁ + c_q)` for finite `q`; for `q = ∞` the `H_B` term of the
/// argument vanishes and the constant is `2^{5n+2} c₁`.
pub fn c0_constant(n: usize, q: f64, c1: f64, cq: f64) -> f64 {
    if q.is_infinite() {
        2f64.powi(5 * n as i32 + 2) * c1
    } else {
        2f64.powf(6.0 * (n as f64 + q)) * (c1 + cq)
    }
}

/// Parameters `(K, γ, C₁)` of the good-λ lemma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GoodLambdaParameters {
    pub k: f64,
    pub gamma: f64,
    pub c1_bound: f64,
    /// True when `K` was raised to `2^{n+2} a`.
    pub widened: bool,
}

/// `K^{q-ps} = 4^s (C₀‖w‖ + 2ⁿ)^s a^q`, `γ = 4^{-s} (C₀‖w‖ + 2ⁿ)^{-s} K^{1-ps}`,
/// `C₁ = [(8C₀‖w‖ + 2^{n+3}) a^p]^{s/(1-ps/q)}`.
#[allow(clippy::too_many_arguments)]
pub fn select_parameters(n: usize, a: f64, q: f64, p: f64, s: f64, c0: f64, rh_norm: f64) -> Result<GoodLambdaParameters> {
    if !(p >= 1.0) || !(s >= 1.0) || !(a >= 1.0) || !(q > 1.0) {
        return Err(Error::InvalidParameter(format!("need p ≥ 1, s ≥ 1, a ≥ 1, q > 1; got p={p}, s={s}, a={a}, q={q}")));
    }
    if p >= q / s {
        return Err(Error::Hypothesis(format!("need p < q/s, got p = {p}, q/s = {}", q / s)));
    }
    let base = c0 * rh_norm + 2f64.powi(n as i32);
    let floor = 2f64.powi(n as i32 + 2) * a;
    let formula = if q.is_infinite() { a } else { (4f64.powf(s) * base.powf(s) * a.powf(q)).powf(1.0 / (q - p * s)) };
    let widened = formula < floor;
    let k = formula.max(floor);
    let gamma = 4f64.powf(-s) * base.powf(-s) * k.powf(1.0 - p * s);
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Hypothesis(format!("γ = {gamma} is outside (0, 1)")));
    }
    let exponent = if q.is_infinite() { s } else { s / (1.0 - p * s / q) };
    let c1_bound = ((8.0 * c0 * rh_norm + 2f64.powi(n as i32 + 3)) * a.powf(p)).powf(exponent);
    Ok(GoodLambdaParameters { k, gamma, c1_bound, widened })
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    /// `{MF > λ}` is a proper subset of the grid, so the Whitney step applies.
    pub proper: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GoodLambdaReport {
    pub rows: Vec<LambdaRow>,
    /// Inequality holds at every proper level.
    pub pass: bool,
    /// Saturated levels (`{MF > λ}` is the whole grid) where it fails.
    pub saturated_failures: usize,
    pub c0: f64,
    pub k: f64,
    pub gamma: f64,
    pub rh_norm: f64,
    pub p: f64,
    /// `‖MF‖_{L^p(w)} / ‖G‖_{L^p(w)}`.
    pub maximal_ratio: f64,
    pub c1_bound: f64,
    pub ratio_within_bound: bool,
}

impl GoodLambdaReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// `λ_j = λ_max 2^{-j}`, `j = 1..=count`.
pub fn dyadic_lambda_grid(lambda_max: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|j| lambda_max * 2f64.powi(-(j as i32))).collect()
}

/// Evaluates `w{MF > Kλ, G ≤ γλ} ≤ C₀‖w‖_{RH_{s'}}(γ/K + a^q/K^q)^{1/s} w{MF > λ}`
/// at every `λ` and the consequence `‖MF‖_{L^p(w)} ≤ C₁‖G‖_{L^p(w)}`.
/// Levels below `min MF` saturate the grid and leave no room for a Whitney
/// decomposition; they are reported but do not count toward `pass`.
pub fn good_lambda_check<T: Real>(sc: &GoodLambdaScenario<T>, lambdas: &[f64], c0: f64, params: &GoodLambdaParameters, p: f64) -> Result<GoodLambdaReport> {
    let n = sc.grid().dim();
    if params.k < 2f64.powi(n as i32 + 2) * sc.a.as_f64() {
        return Err(Error::Hypothesis(format!("K = {} is below 2^(n+2) a", params.k)));
    }
    if !(params.gamma > 0.0 && params.gamma < 1.0) {
        return Err(Error::Hypothesis(format!("γ = {} is outside (0, 1)", params.gamma)));
    }
    let (k, gamma) = (params.k, params.gamma);
    let q = sc.q.as_f64();
    let a = sc.a.as_f64();
    let tail = if q.is_infinite() { 0.0 } else { (a / k).powf(q) };
    let factor = c0 * sc.rh_norm.as_f64() * (gamma / k + tail).powf(1.0 / sc.s.as_f64());
    let floor = sc.mf.iter().map(|m| m.as_f64()).fold(f64::INFINITY, f64::min);
    let rows: Vec<LambdaRow> = lambdas
        .iter()
        .map(|&lambda| {
            let lhs = sc.wmeasure(|i| sc.mf[i].as_f64() > k * lambda && sc.g[i].as_f64() <= gamma * lambda).as_f64();
            let rhs = factor * sc.wmeasure(|i| sc.mf[i].as_f64() > lambda).as_f64();
            LambdaRow { lambda, lhs, rhs, margin: rhs - lhs, proper: lambda >= floor }
        })
        .collect();
    let pass = rows.iter().filter(|r| r.proper).all(|r| r.lhs <= r.rhs);
    let saturated_failures = rows.iter().filter(|r| !r.proper && r.lhs > r.rhs).count();
    let vol = sc.grid().cell_volume().as_f64();
    let lp = |v: &[T]| {
        (v.iter().zip(sc.weight.values()).map(|(x, w)| x.as_f64().abs().powf(p) * w.as_f64()).sum::<f64>() * vol).powf(1.0 / p)
    };
    let g_norm = lp(&sc.g);
    let maximal_ratio = if g_norm > 0.0 { lp(&sc.mf) / g_norm } else { 0.0 };
    Ok(GoodLambdaReport {
        rows,
        pass,
        saturated_failures,
        c0,
        k,
        gamma,
        rh_norm: sc.rh_norm.as_f64(),
        p,
        maximal_ratio,
        c1_bound: params.c1_bound,
        ratio_within_bound: maximal_ratio <= params.c1_bound,
    })
}

/// Band integrals `∫_α^β p λ^{p-1} w{u > λ} dλ`, evaluated in closed form as
/// `Σ_x w(x) hⁿ [min(β, u(x))^p - α^p]_+`.
pub fn layer_cake_band<T: Real>(u: &[T], w: &Weight<T>, p: f64, alpha: f64, beta: f64) -> f64 {
    let vol = w.grid().cell_volume().as_f64();
    u.iter()
        .zip(w.values())
        .map(|(x, wx)| {
            let top = x.as_f64().min(beta);
            if top > alpha {
                wx.as_f64() * (top.powf(p) - alpha.powf(p))
            } else {
                0.0
            }
        })
        .sum::<f64>()
        * vol
}

#[derive(Debug, Clone, Serialize)]
pub struct RecurrenceReport {
    pub j_range: (i32, i32),
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    /// `max_j c_j - ½c_{j-1} - (K/γ)^p d_j`.
    pub worst_step_excess: f64,
    pub sum_c: f64,
    pub sum_d_bound: f64,
    pub recurrence_holds: bool,
    pub sum_holds: bool,
    /// `max_j c_j / (‖w‖_∞ c₁ ‖F‖₁ ∫_{K^j}^{K^{j+1}} p λ^{p-2} dλ)`.
    pub envelope_ratio: f64,
    pub envelope_holds: bool,
}

/// Slack allowed for floating-point rounding in the recurrence comparisons.
pub const RECURRENCE_TOL: f64 = 1e-10;

/// `c_j = ∫_{K^j}^{K^{j+1}} pλ^{p-1} w{MF > λ} dλ`,
/// `d_j = ∫_{γK^{j-1}}^{γK^j} pλ^{p-1} w{MG > λ} dλ`, and the checks
/// `c_j ≤ ½c_{j-1} + (K/γ)^p d_j`, `Σc_j ≤ 2(K/γ)^p Σd_j`.
pub fn recurrence_check<T: Real>(sc: &GoodLambdaScenario<T>, params: &GoodLambdaParameters, p: f64, c1: f64) -> RecurrenceReport {
    let (k, gamma) = (params.k, params.gamma);
    let mg = ball_maximal(&sc.family, &sc.g);
    let positive_min = |v: &[T]| v.iter().map(|x| x.as_f64()).filter(|x| *x > 0.0).fold(f64::INFINITY, f64::min);
    let max_of = |v: &[T]| v.iter().map(|x| x.as_f64()).fold(0.0, f64::max);
    let lk = k.ln();
    let mf_lo = positive_min(&sc.mf).min(positive_min(&mg) * k / gamma);
    let mf_hi = max_of(&sc.mf).max(max_of(&mg) * k / gamma);
    let (j_lo, j_hi) = if mf_lo.is_finite() && mf_hi > 0.0 {
        ((mf_lo.ln() / lk).floor() as i32 - 2, (mf_hi.ln() / lk).ceil() as i32 + 1)
    } else {
        (0, 0)
    };
    let js: Vec<i32> = (j_lo..=j_hi).collect();
    let c_of = |j: i32| layer_cake_band(&sc.mf, &sc.weight, p, k.powi(j), k.powi(j + 1));
    let c: Vec<f64> = js.iter().map(|&j| c_of(j)).collect();
    let d: Vec<f64> = js.iter().map(|&j| layer_cake_band(&mg, &sc.weight, p, gamma * k.powi(j - 1), gamma * k.powi(j))).collect();
    let ratio = (k / gamma).powf(p);
    let mut worst = f64::NEG_INFINITY;
    for (idx, &j) in js.iter().enumerate() {
        let prev = if idx == 0 { c_of(j - 1) } else { c[idx - 1] };
        let excess = c[idx] - 0.5 * prev - ratio * d[idx];
        worst = worst.max(excess / (c[idx].abs() + 1e-300).max(1.0));
    }
    let sum_c: f64 = c.iter().sum();
    let sum_d_bound = 2.0 * ratio * d.iter().sum::<f64>();
    let vol = sc.grid().cell_volume().as_f64();
    let f_l1: f64 = sc.f.iter().map(|v| v.as_f64()).sum::<f64>() * vol;
    let w_inf = sc.weight.values().iter().map(|v| v.as_f64()).fold(0.0, f64::max);
    let band = |j: i32| {
        let (lo, hi) = (k.powi(j), k.powi(j + 1));
        if (p - 1.0).abs() < 1e-12 {
            (hi / lo).ln()
        } else {
            p / (p - 1.0) * (hi.powf(p - 1.0) - lo.powf(p - 1.0))
        }
    };
    let envelope_ratio = js
        .iter()
        .zip(&c)
        .map(|(&j, &cj)| {
            let env = w_inf * c1 * f_l1 * band(j);
            if env > 0.0 {
                cj / env
            } else if cj > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    RecurrenceReport {
        j_range: (j_lo, j_hi),
        c,
        d,
        worst_step_excess: worst,
        sum_c,
        sum_d_bound,
        recurrence_holds: worst <= RECURRENCE_TOL,
        sum_holds: sum_c <= sum_d_bound * (1.0 + RECURRENCE_TOL),
        envelope_ratio,
        envelope_holds: envelope_ratio <= 1.0 + RECURRENCE_TOL,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CutoffLocalization {
    pub lambda: f64,
    pub cubes: usize,
    /// `max_j |{MF > Kλ} ∩ Q_j| - |{M(F 1_{B_j}) > Kλ/2}|`.
    pub worst_excess: f64,
    pub pass: bool,
}

/// Checks `|{MF > Kλ} ∩ Q_j| ≤ |{M(F 1_{B_j}) > Kλ/2}|` on the Whitney cubes
/// of `{MF > λ}`, with `B_j` centered at the node nearest the cube center and
/// radius sixteen times the side (rounded up to cover the continuum ball).
pub fn mf_cutoff_check<T: Real>(sc: &GoodLambdaScenario<T>, lambda: f64, k: f64) -> Result<CutoffLocalization> {
    let grid = sc.grid();
    let mask: Vec<bool> = sc.mf.iter().map(|v| v.as_f64() > lambda).collect();
    if !mask.iter().any(|&b| b) || mask.iter().all(|&b| b) {
        return Ok(CutoffLocalization { lambda, cubes: 0, worst_excess: f64::NEG_INFINITY, pass: true });
    }
    let cubes = whitney_decompose(&mask, grid)?;
    let vol = grid.cell_volume().as_f64();
    let slack = (grid.dim() as f64).sqrt() / 2.0;
    let excess: Vec<f64> = cubes
        .par_iter()
        .map(|q| {
            let center: Vec<usize> = q.corner.iter().map(|&c| c + q.side / 2).collect();
            let radius = (16.0 * q.side as f64 + slack).ceil() as usize;
            let ball = Ball { center: grid.linear_index(&center), k: radius.min(sc.family.max_k) };
            let mut local = vec![T::zero(); grid.len()];
            for i in sc.family.cells(&ball) {
                local[i] = sc.f[i];
            }
            let m_local = ball_maximal(&sc.family, &local);
            let lhs = q.cells(grid).iter().filter(|&&i| sc.mf[i].as_f64() > k * lambda).count() as f64 * vol;
            let rhs = m_local.iter().filter(|v| v.as_f64() > k * lambda / 2.0).count() as f64 * vol;
            lhs - rhs
        })
        .collect();
    let worst = excess.into_iter().fold(f64::NEG_INFINITY, f64::max);
    Ok(CutoffLocalization { lambda, cubes: cubes.len(), worst_excess: worst, pass: worst <= 0.0 })
}

/// Calibrated constants of the multiplier pipeline scenario.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineInfo {
    pub nu: f64,
    /// Smallest `c` with `G = c·M(|f|^ν)` satisfying the `G_B` condition.
    pub g_constant: f64,
    /// Smallest `a ≥ 1` satisfying the `H_B` condition.
    pub a: f64,
}

/// Scenario built from `F = |Tf|^ν`, `T = g(√H)`, with
/// `G_B = 2^ν |T(1 - ψ_r(√H)) f|^ν`, `H_B = 2^ν |T ψ_r(√H) f|^ν` for a ball
/// of radius `r`, `G = c·M(|f|^ν)`. The constants `c` and `a` are the
/// smallest values for which the hypotheses hold on the whole ball family.
#[allow(clippy::too_many_arguments)]
pub fn pipeline_scenario<T: Real>(
    sd: &SpectralDecomposition<T>,
    g: &MultiplierFn<T>,
    f: &[T],
    nu: T,
    q: T,
    s: T,
    weight: Weight<T>,
) -> Result<(GoodLambdaScenario<T>, PipelineInfo)> {
    let grid = sd.grid().clone();
    let family = BallFamily::new(&grid);
    let fc: Vec<Complex<T>> = f.iter().map(|&v| Complex::new(v, T::zero())).collect();
    let tf = apply_multiplier(sd, g, &fc)?;
    let big_f: Vec<T> = tf.iter().map(|z| z.norm().powf(nu)).collect();
    let two_nu = T::lit(2.0).powf(nu);
    let pieces: Vec<(Vec<T>, Vec<T>)> = (0..=family.max_k())
        .into_par_iter()
        .map(|k| {
            let r = T::lit(k as f64) * grid.spacing();
            let gk = g.clone();
            let local = MultiplierFn::from_fn("g·ψ_r", move |s| gk.evaluate(s) * psi(r * s), Some(g.value_at_zero()))?;
            let near = apply_multiplier(sd, &local, &fc)?;
            let hb: Vec<T> = near.iter().map(|z| two_nu * z.norm().powf(nu)).collect();
            let gb: Vec<T> = tf.iter().zip(&near).map(|(t, z)| two_nu * (*t - *z).norm().powf(nu)).collect();
            Ok((gb, hb))
        })
        .collect::<Result<_>>()?;
    let pieces = Arc::new(pieces);
    let fam = Arc::new(family.clone());
    let split: BallSplit<T> = {
        let pieces = pieces.clone();
        let fam = fam.clone();
        Arc::new(move |ball: &Ball| {
            let cells = fam.cells(ball);
            let (gb, hb) = &pieces[ball.k];
            (cells.iter().map(|&i| gb[i]).collect(), cells.iter().map(|&i| hb[i]).collect())
        })
    };
    let f_nu: Vec<T> = f.iter().map(|v| v.abs().powf(nu)).collect();
    let m_fnu = ball_maximal(&family, &f_nu);
    let mf = ball_maximal(&family, &big_f);
    let vol = grid.cell_volume();
    let balls: Vec<Ball> = family.balls().collect();
    let g_constant = balls
        .par_iter()
        .map(|ball| {
            let cells = family.cells(ball);
            let (gb, _) = split(ball);
            let g1 = gb.iter().copied().sum::<T>() * vol;
            (g1 / (T::lit(cells.len() as f64) * vol * ball_min(&m_fnu, &cells))).as_f64()
        })
        .reduce(|| 0.0, f64::max);
    let g_constant = if g_constant > 0.0 { g_constant } else { 1.0 };
    let big_g: Vec<T> = m_fnu.iter().map(|&v| v * T::lit(g_constant)).collect();
    let a = balls
        .par_iter()
        .map(|ball| {
            let cells = family.cells(ball);
            let (_, hb) = split(ball);
            let hq = lq_on(&hb, q, vol);
            let bq = if q.is_infinite() { T::one() } else { (T::lit(cells.len() as f64) * vol).powf(T::one() / q) };
            let floor = ball_min(&mf, &cells) + ball_min(&big_g, &cells);
            (hq / (floor * bq)).as_f64()
        })
        .reduce(|| 1.0, f64::max);
    let sc = GoodLambdaScenario::new(&grid, big_f, big_g, split, q, T::lit(a), s, weight)?;
    Ok((sc, PipelineInfo { nu: nu.as_f64(), g_constant, a }))
}

/// The scenario `G_B = F·1_B`, `H_B = 0`, `G = MF`, which satisfies the
/// hypotheses with `a = 1` for any `q`.
pub fn synthetic_scenario<T: Real>(grid: &Grid<T>, f: Vec<T>, q: T, s: T, weight: Weight<T>) -> Result<GoodLambdaScenario<T>> {
    let family = Arc::new(BallFamily::new(grid));
    let mf = ball_maximal(&family, &f);
    let values = Arc::new(f.clone());
    let split: BallSplit<T> = Arc::new(move |ball: &Ball| {
        let cells = family.cells(ball);
        (cells.iter().map(|&i| values[i]).collect(), vec![T::zero(); cells.len()])
    });
    GoodLambdaScenario::new(grid, f, mf, split, q, T::one(), s, weight)
}

/// The scenario `G_B = 0`, `H_B = F·1_B`, `G ≡ ε`, with the smallest `a ≥ 1`
/// satisfying the `H_B` condition. Unlike [`synthetic_scenario`] the set
/// `{MF > Kλ, G ≤ γλ}` is nonempty for `ε/γ ≤ λ < max MF / K`.
pub fn stress_scenario<T: Real>(grid: &Grid<T>, f: Vec<T>, epsilon: T, q: T, s: T, weight: Weight<T>) -> Result<GoodLambdaScenario<T>> {
    if !(epsilon > T::zero()) {
        return Err(Error::InvalidParameter(format!("ε must be positive, got {epsilon}")));
    }
    let family = Arc::new(BallFamily::new(grid));
    let mf = ball_maximal(&family, &f);
    let vol = grid.cell_volume();
    let a = family
        .balls()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|ball| {
            let cells = family.cells(ball);
            let vals: Vec<T> = cells.iter().map(|&i| f[i]).collect();
            let bq = if q.is_infinite() { T::one() } else { (T::lit(cells.len() as f64) * vol).powf(T::one() / q) };
            (lq_on(&vals, q, vol) / ((ball_min(&mf, &cells) + epsilon) * bq)).as_f64()
        })
        .reduce(|| 1.0, f64::max);
    let values = Arc::new(f.clone());
    let fam = family.clone();
    let split: BallSplit<T> = Arc::new(move |ball: &Ball| {
        let cells = fam.cells(ball);
        (vec![T::zero(); cells.len()], cells.iter().map(|&i| values[i]).collect())
    });
    GoodLambdaScenario::new(grid, f, vec![epsilon; grid.len()], split, q, T::lit(a), s, weight)
}
