use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Boundary treatment at both ends of the truncated domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    /// u = 0 is pinned at both boundary nodes.
    DirichletZero,
    /// Zero flux through mirror ghost values.
    NeumannZero,
}

impl fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryCondition::DirichletZero => f.write_str("dirichlet_zero"),
            BoundaryCondition::NeumannZero => f.write_str("neumann_zero"),
        }
    }
}

impl FromStr for BoundaryCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dirichlet_zero" | "dirichlet" => Ok(BoundaryCondition::DirichletZero),
            "neumann_zero" | "neumann" => Ok(BoundaryCondition::NeumannZero),
            other => Err(Error::invalid(format!("unknown boundary condition '{other}'"))),
        }
    }
}

/// Uniform 1D mesh `x_i = x_min + i*dx`, `i = 0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    n: usize,
    bc: BoundaryCondition,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n: usize, bc: BoundaryCondition) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_min >= x_max {
            return Err(Error::invalid(format!(
                "grid bounds must satisfy x_min < x_max (got {x_min}, {x_max})"
            )));
        }
        if n < 3 {
            return Err(Error::invalid(format!("grid needs at least 3 nodes (got {n})")));
        }
        Ok(Grid { x_min, x_max, n, bc })
    }

    /// Grid on `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64, n: usize, bc: BoundaryCondition) -> Result<Self> {
        Self::new(-half_width, half_width, n, bc)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        let dx = self.dx();
        (0..self.n).map(move |i| self.x_min + i as f64 * dx)
    }

    pub fn is_symmetric(&self) -> bool {
        (self.x_min + self.x_max).abs() <= 1e-12 * self.x_max.abs().max(1.0)
    }

    /// Distance of node `i` from the domain centre, computed from the index so
    /// that mirrored nodes get bitwise identical values.
    pub fn distance_from_center(&self, i: usize) -> f64 {
        let twice = (2 * i) as i64 - (self.n as i64 - 1);
        twice.unsigned_abs() as f64 * 0.5 * self.dx()
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.x_min + self.x_max)
    }

    /// Indices of the nodes that carry unknowns.
    pub fn active(&self) -> Range<usize> {
        match self.bc {
            BoundaryCondition::DirichletZero => 1..self.n - 1,
            BoundaryCondition::NeumannZero => 0..self.n,
        }
    }

    /// Quadrature weight of node `i`: `dx` in the interior and `dx/2` at the
    /// two end nodes. Under `dirichlet_zero` the end nodes carry zero, so this is
    /// the plain rectangle rule; under `neumann_zero` it makes the discrete
    /// Laplacian self-adjoint and mass-conserving.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.n - 1 {
            0.5 * self.dx()
        } else {
            self.dx()
        }
    }

    /// Same spacing and boundary condition, twice the half-width.
    pub fn doubled(&self) -> Result<Grid> {
        let c = self.center();
        let h = 0.5 * (self.x_max - self.x_min);
        Grid::new(c - 2.0 * h, c + 2.0 * h, 2 * (self.n - 1) + 1, self.bc)
    }

    /// Same domain, half the spacing.
    pub fn refined(&self) -> Result<Grid> {
        Grid::new(self.x_min, self.x_max, 2 * (self.n - 1) + 1, self.bc)
    }

    /// Node index `j` and weight `s in [0,1)` with `x = x_j + s*dx`, clamped
    /// to the domain.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let pos = ((x - self.x_min) / self.dx()).clamp(0.0, (self.n - 1) as f64);
        let j = (pos.floor() as usize).min(self.n - 2);
        (j, pos - j as f64)
    }

    pub fn nearest(&self, x: f64) -> usize {
        let pos = ((x - self.x_min) / self.dx()).round();
        pos.clamp(0.0, (self.n - 1) as f64) as usize
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}] n={} dx={} bc={}",
            self.x_min,
            self.x_max,
            self.n,
            self.dx(),
            self.bc
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_bounds() {
        assert!(Grid::new(1.0, 1.0, 10, BoundaryCondition::DirichletZero).is_err());
        assert!(Grid::new(0.0, 1.0, 2, BoundaryCondition::DirichletZero).is_err());
    }

    #[test]
    fn nodes_and_spacing() {
        let g = Grid::symmetric(40.0, 1601, BoundaryCondition::DirichletZero).unwrap();
        assert!((g.dx() - 0.05).abs() < 1e-15);
        assert_eq!(g.x(0), -40.0);
        assert!((g.x(1600) - 40.0).abs() < 1e-12);
        assert_eq!(g.distance_from_center(800), 0.0);
        assert_eq!(g.distance_from_center(0), g.distance_from_center(1600));
        assert_eq!(g.active(), 1..1600);
    }

    #[test]
    fn doubling_keeps_spacing() {
        let g = Grid::symmetric(10.0, 201, BoundaryCondition::DirichletZero).unwrap();
        let d = g.doubled().unwrap();
        assert_eq!(d.dx(), g.dx());
        assert_eq!(d.x_max(), 20.0);
        let r = g.refined().unwrap();
        assert!((r.dx() - 0.5 * g.dx()).abs() < 1e-15);
    }

    #[test]
    fn locate_interpolation_cell() {
        let g = Grid::new(0.0, 1.0, 11, BoundaryCondition::NeumannZero).unwrap();
        let (j, s) = g.locate(0.35);
        assert_eq!(j, 3);
        assert!((s - 0.5).abs() < 1e-12);
        assert_eq!(g.locate(1.0).0, 9);
    }
}
