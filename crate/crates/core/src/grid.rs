//! Uniform symmetric grids and scalar fields on them.
//!
//! A grid covers [-X, X) with an even number of cells, nodes
//! x_j = -X + j * dx, dx = 2X/n. The origin is always a node. Fields carry
//! their grid by value; grids are tiny and Copy.

use crate::error::{Error, Result};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Grid {
    half_extent: f64,
    n: usize,
}

impl Grid {
    pub fn new(half_extent: f64, n: usize) -> Result<Self> {
        if !(half_extent > 0.0) || !half_extent.is_finite() {
            return Err(Error::InvalidKernel(format!(
                "grid half-extent must be positive, got {half_extent}"
            )));
        }
        if n < 16 || n % 2 != 0 {
            return Err(Error::InvalidKernel(format!(
                "grid size must be even and >= 16, got {n}"
            )));
        }
        Ok(Grid { half_extent, n })
    }

    pub fn half_extent(&self) -> f64 {
        self.half_extent
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_extent / self.n as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        -self.half_extent + j as f64 * self.dx()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |j| self.node(j))
    }
}

#[derive(Clone, Debug)]
pub struct GridField {
    grid: Grid,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: Grid) -> Self {
        GridField { grid, values: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().map(f).collect();
        GridField { grid, values }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidKernel(format!(
                "field length {} does not match grid size {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(GridField { grid, values })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.dx()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inf(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Linear interpolation; zero outside the grid window.
    pub fn interp(&self, x: f64) -> f64 {
        let dx = self.grid.dx();
        let pos = (x + self.grid.half_extent()) / dx;
        if pos < 0.0 || pos >= (self.grid.len() - 1) as f64 {
            return 0.0;
        }
        let j = pos.floor() as usize;
        let t = pos - j as f64;
        self.values[j] * (1.0 - t) + self.values[j + 1] * t
    }

    /// Max deviation from even symmetry, using the circular pairing
    /// v[j] <-> v[(n - j) mod n] under which node -X pairs with itself.
    pub fn asymmetry(&self) -> f64 {
        let n = self.values.len();
        let mut worst: f64 = 0.0;
        for j in 0..n {
            worst = worst.max((self.values[j] - self.values[(n - j) % n]).abs());
        }
        worst
    }

    /// Two-sided tail sum over {|x| >= level}. Node j owns the cell
    /// [x_j - dx/2, x_j + dx/2]; boundary cells contribute in proportion to
    /// their overlap, so the reading varies continuously in `level`.
    pub fn tail_sum(&self, level: f64) -> f64 {
        let dx = self.grid.dx();
        let mut s = 0.0;
        for (j, v) in self.values.iter().enumerate() {
            let lo = self.grid.node(j) - 0.5 * dx;
            let hi = lo + dx;
            let w = (hi.min(-level) - lo).max(0.0) + (hi - lo.max(level)).max(0.0);
            s += w.min(dx) * v;
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_a_node() {
        let g = Grid::new(10.0, 64).unwrap();
        assert_eq!(g.node(32), 0.0);
        assert_eq!(g.node(0), -10.0);
        assert!((g.dx() - 0.3125).abs() < 1e-15);
    }

    #[test]
    fn size_validation() {
        assert!(Grid::new(10.0, 15).is_err());
        assert!(Grid::new(10.0, 17).is_err());
        assert!(Grid::new(-1.0, 64).is_err());
        assert!(Grid::new(10.0, 16).is_ok());
    }

    #[test]
    fn even_sampling_is_symmetric() {
        let g = Grid::new(8.0, 128).unwrap();
        let f = GridField::from_fn(g, |x| (-x.abs()).exp());
        assert!(f.asymmetry() < 1e-15);
    }

    #[test]
    fn interp_matches_nodes_and_vanishes_outside() {
        let g = Grid::new(4.0, 32).unwrap();
        let f = GridField::from_fn(g, |x| x * x);
        assert!((f.interp(g.node(5)) - g.node(5) * g.node(5)).abs() < 1e-12);
        assert_eq!(f.interp(100.0), 0.0);
        assert_eq!(f.interp(-100.0), 0.0);
    }
}
