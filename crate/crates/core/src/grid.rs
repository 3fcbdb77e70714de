//! Uniform tensor grids and the field data (potentials) that live on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Boundary treatment of the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Dirichlet,
}

/// A uniform grid with `n` points per axis in `dim` dimensions.
///
/// Points are stored row-major: the last axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    dim: usize,
    n: usize,
    spacing: T,
    boundary: Boundary,
    origin: Vec<T>,
}

impl<T: Real> Grid<T> {
    pub fn new(dim: usize, n: usize, spacing: T, boundary: Boundary, origin: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidGrid("dimension must be positive".into()));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points per axis, got {n}")));
        }
        if !(spacing > T::zero()) || !spacing.is_finite() {
            return Err(Error::InvalidGrid("spacing must be positive and finite".into()));
        }
        if origin.len() != dim {
            return Err(Error::InvalidGrid(format!("origin has {} components, expected {dim}", origin.len())));
        }
        n.checked_pow(dim as u32)
            .ok_or_else(|| Error::InvalidGrid("point count overflows".into()))?;
        Ok(Self { dim, n, spacing, boundary, origin })
    }

    /// Grid with nodes at the cell centers of `[-length/2, length/2]^dim`.
    ///
    /// With an even `n` the origin sits between two nodes.
    pub fn cell_centered(dim: usize, n: usize, length: T, boundary: Boundary) -> Result<Self> {
        let h = length / T::lit(n as f64);
        let start = -length / T::lit(2.0) + h / T::lit(2.0);
        Self::new(dim, n, h, boundary, vec![start; dim])
    }

    /// Grid whose first node sits at the origin.
    pub fn anchored(dim: usize, n: usize, spacing: T, boundary: Boundary) -> Result<Self> {
        Self::new(dim, n, spacing, boundary, vec![T::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn origin(&self) -> &[T] {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume `h^n` of one cell.
    pub fn cell_volume(&self) -> T {
        self.spacing.powi(self.dim as i32)
    }

    /// Physical side length `n·h` of the grid along one axis.
    pub fn extent(&self) -> T {
        self.spacing * T::lit(self.n as f64)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n && self.boundary == other.boundary && self.spacing == other.spacing
    }

    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for axis in (0..self.dim).rev() {
            idx[axis] = i % self.n;
            i /= self.n;
        }
        idx
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &k| acc * self.n + k)
    }

    /// Stride of `axis` in the linear layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    pub fn coordinate(&self, i: usize, axis: usize) -> T {
        let k = (i / self.stride(axis)) % self.n;
        self.origin[axis] + T::lit(k as f64) * self.spacing
    }

    pub fn point(&self, i: usize) -> Vec<T> {
        (0..self.dim).map(|axis| self.coordinate(i, axis)).collect()
    }

    /// Neighbor one step along `axis` (forward when `forward` is true), if any.
    pub fn neighbor(&self, i: usize, axis: usize, forward: bool) -> Option<usize> {
        let stride = self.stride(axis);
        let k = (i / stride) % self.n;
        let base = i - k * stride;
        let next = match (forward, self.boundary) {
            (true, _) if k + 1 < self.n => k + 1,
            (true, Boundary::Periodic) => 0,
            (false, _) if k > 0 => k - 1,
            (false, Boundary::Periodic) => self.n - 1,
            _ => return None,
        };
        Some(base + next * stride)
    }

    /// Signed lattice displacement from index `a` to index `b` along one axis,
    /// wrapped to the shortest representative on periodic grids.
    pub fn axis_steps(&self, a: usize, b: usize) -> i64 {
        let n = self.n as i64;
        let mut k = b as i64 - a as i64;
        if self.boundary == Boundary::Periodic {
            k = k.rem_euclid(n);
            if 2 * k > n {
                k -= n;
            }
        }
        k
    }

    /// Lattice displacement `y - x` in units of the spacing (torus-wrapped when periodic).
    pub fn steps(&self, x: usize, y: usize) -> Vec<i64> {
        let xi = self.multi_index(x);
        let yi = self.multi_index(y);
        xi.iter().zip(&yi).map(|(&a, &b)| self.axis_steps(a, b)).collect()
    }

    /// Squared distance in units of `h²`; exact integer arithmetic.
    pub fn dist2_steps(&self, x: usize, y: usize) -> i64 {
        let mut total = 0;
        let (mut xr, mut yr) = (x, y);
        for _ in 0..self.dim {
            let k = self.axis_steps(xr % self.n, yr % self.n);
            total += k * k;
            xr /= self.n;
            yr /= self.n;
        }
        total
    }

    pub fn displacement(&self, x: usize, y: usize) -> Vec<T> {
        self.steps(x, y).into_iter().map(|k| T::lit(k as f64) * self.spacing).collect()
    }

    pub fn distance(&self, x: usize, y: usize) -> T {
        T::lit(self.dist2_steps(x, y) as f64).sqrt() * self.spacing
    }

    /// Largest lattice distance between two points, in units of `h`.
    pub fn diameter_steps(&self) -> f64 {
        let per_axis = match self.boundary {
            Boundary::Periodic => self.n / 2,
            Boundary::Dirichlet => self.n - 1,
        } as f64;
        per_axis * (self.dim as f64).sqrt()
    }

    /// Samples a function of position at every node.
    pub fn sample(&self, f: impl Fn(&[T]) -> T) -> Vec<T> {
        (0..self.len()).map(|i| f(&self.point(i))).collect()
    }

    /// Euclidean norm of the position of each node.
    pub fn radii(&self) -> Vec<T> {
        self.sample(|x| x.iter().map(|&v| v * v).sum::<T>().sqrt())
    }
}

/// Electromagnetic data on a grid: a scalar potential and a vector potential.
///
/// The vector potential is given at nodes; hopping phases use the midpoint
/// value on each edge.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec<T> {
    pub potential: Vec<T>,
    pub vector_potential: Vec<Vec<T>>,
}

impl<T: Real> FieldSpec<T> {
    pub fn new(grid: &Grid<T>, potential: Vec<T>, vector_potential: Vec<Vec<T>>) -> Result<Self> {
        let spec = Self { potential, vector_potential };
        spec.check(grid)?;
        Ok(spec)
    }

    pub fn zero(grid: &Grid<T>) -> Self {
        Self { potential: vec![T::zero(); grid.len()], vector_potential: vec![vec![T::zero(); grid.len()]; grid.dim()] }
    }

    pub fn with_potential(grid: &Grid<T>, potential: Vec<T>) -> Result<Self> {
        Self::new(grid, potential, vec![vec![T::zero(); grid.len()]; grid.dim()])
    }

    pub fn check(&self, grid: &Grid<T>) -> Result<()> {
        if self.potential.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "potential has {} values, grid has {} points",
                self.potential.len(),
                grid.len()
            )));
        }
        if self.vector_potential.len() != grid.dim() {
            return Err(Error::DimensionMismatch(format!(
                "vector potential has {} components, grid dimension is {}",
                self.vector_potential.len(),
                grid.dim()
            )));
        }
        if let Some(bad) = self.vector_potential.iter().find(|a| a.len() != grid.len()) {
            return Err(Error::DimensionMismatch(format!(
                "vector potential component has {} values, grid has {} points",
                bad.len(),
                grid.len()
            )));
        }
        Ok(())
    }

    pub fn is_magnetic(&self) -> bool {
        self.vector_potential.iter().flatten().any(|a| *a != T::zero())
    }

    /// Positive part `V₊ = max(V, 0)`.
    pub fn v_plus(&self) -> Vec<T> {
        self.potential.iter().map(|&v| v.max(T::zero())).collect()
    }

    /// Negative part `V₋ = max(-V, 0)`, so `V = V₊ - V₋`.
    pub fn v_minus(&self) -> Vec<T> {
        self.potential.iter().map(|&v| (-v).max(T::zero())).collect()
    }
}

/// Reads a table file: one number per line, row-major grid order.
pub fn read_table<T: Real>(path: &std::path::Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    parse_table(&text)
}

pub fn parse_table<T: Real>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(k, l)| {
            l.parse::<f64>()
                .map(T::lit)
                .map_err(|e| Error::Config(format!("table line {}: {e}", k + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinates_follow_origin_plus_index_times_spacing() {
        let g = Grid::new(2, 4, 0.5, Boundary::Dirichlet, vec![-1.0, 2.0]).unwrap();
        let i = g.linear_index(&[3, 1]);
        assert_eq!(g.point(i), vec![0.5, 2.5]);
        assert_eq!(g.multi_index(i), vec![3, 1]);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::<f64>::anchored(1, 1, 1.0, Boundary::Periodic).is_err());
        assert!(Grid::<f64>::anchored(1, 4, 0.0, Boundary::Periodic).is_err());
        assert!(Grid::<f64>::anchored(0, 4, 1.0, Boundary::Periodic).is_err());
    }

    #[test]
    fn torus_distance_wraps() {
        let g = Grid::<f64>::anchored(1, 10, 1.0, Boundary::Periodic).unwrap();
        assert_eq!(g.distance(0, 9), 1.0);
        assert_eq!(g.distance(0, 5), 5.0);
        let d = Grid::<f64>::anchored(1, 10, 1.0, Boundary::Dirichlet).unwrap();
        assert_eq!(d.distance(0, 9), 9.0);
    }

    #[test]
    fn neighbors_respect_boundary() {
        let p = Grid::<f64>::anchored(2, 3, 1.0, Boundary::Periodic).unwrap();
        assert_eq!(p.neighbor(p.linear_index(&[2, 0]), 0, true), Some(p.linear_index(&[0, 0])));
        let d = Grid::<f64>::anchored(2, 3, 1.0, Boundary::Dirichlet).unwrap();
        assert_eq!(d.neighbor(d.linear_index(&[0, 2]), 1, true), None);
        assert_eq!(d.neighbor(d.linear_index(&[0, 2]), 1, false), Some(d.linear_index(&[0, 1])));
    }

    #[test]
    fn potential_parts_split() {
        let g = Grid::<f64>::anchored(1, 3, 1.0, Boundary::Dirichlet).unwrap();
        let f = FieldSpec::with_potential(&g, vec![-2.0, 0.0, 3.0]).unwrap();
        let (p, m) = (f.v_plus(), f.v_minus());
        for i in 0..3 {
            assert_eq!(p[i] - m[i], f.potential[i]);
            assert_eq!(p[i] * m[i], 0.0);
        }
        assert!(FieldSpec::with_potential(&g, vec![0.0; 2]).is_err());
    }

    #[test]
    fn table_parsing_skips_blank_lines() {
        let v: Vec<f64> = parse_table("1\n\n# c\n2.5\n-3e-1\n").unwrap();
        assert_eq!(v, vec![1.0, 2.5, -0.3]);
        assert!(parse_table::<f64>("x").is_err());
    }
}
