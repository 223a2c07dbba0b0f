//! Tridiagonal systems: Thomas elimination and the second-difference operator
//! on the active nodes of a grid.

use crate::error::{Error, Result};
use crate::model::{BoundaryCondition, Grid};

/// A tridiagonal matrix of size `m` stored by diagonals. `lower[0]` and
/// `upper[m-1]` are unused.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(m: usize) -> Self {
        Tridiagonal {
            lower: vec![0.0; m],
            diag: vec![0.0; m],
            upper: vec![0.0; m],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `y = M x`.
    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        let m = self.len();
        for i in 0..m {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.lower[i] * x[i - 1];
            }
            if i + 1 < m {
                acc += self.upper[i] * x[i + 1];
            }
            y[i] = acc;
        }
    }

    /// `c0 I + c1 self`.
    pub fn affine(&self, c0: f64, c1: f64) -> Tridiagonal {
        Tridiagonal {
            lower: self.lower.iter().map(|v| c1 * v).collect(),
            diag: self.diag.iter().map(|v| c0 + c1 * v).collect(),
            upper: self.upper.iter().map(|v| c1 * v).collect(),
        }
    }

    /// Solves `M x = rhs` in place (Thomas algorithm, no pivoting).
    pub fn solve_in_place(&self, rhs: &mut [f64], scratch: &mut Vec<f64>) -> Result<()> {
        let m = self.len();
        scratch.clear();
        scratch.resize(m, 0.0);
        let mut denom = self.diag[0];
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::Singular("tridiagonal solve"));
        }
        scratch[0] = self.upper[0] / denom;
        rhs[0] /= denom;
        for i in 1..m {
            denom = self.diag[i] - self.lower[i] * scratch[i - 1];
            if denom == 0.0 || !denom.is_finite() {
                return Err(Error::Singular("tridiagonal solve"));
            }
            scratch[i] = if i + 1 < m { self.upper[i] / denom } else { 0.0 };
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) / denom;
        }
        for i in (0..m - 1).rev() {
            rhs[i] -= scratch[i] * rhs[i + 1];
        }
        Ok(())
    }

    /// Precomputes the elimination for repeated solves with the same matrix.
    pub fn factorize(&self) -> Result<Factorized> {
        let m = self.len();
        let mut c = vec![0.0; m];
        let mut inv = vec![0.0; m];
        let mut denom = self.diag[0];
        for i in 0..m {
            if i > 0 {
                denom = self.diag[i] - self.lower[i] * c[i - 1];
            }
            if denom == 0.0 || !denom.is_finite() {
                return Err(Error::Singular("tridiagonal factorization"));
            }
            inv[i] = 1.0 / denom;
            c[i] = if i + 1 < m { self.upper[i] * inv[i] } else { 0.0 };
        }
        Ok(Factorized {
            lower: self.lower.clone(),
            c,
            inv,
        })
    }
}

/// Thomas elimination with the forward sweep precomputed.
#[derive(Debug, Clone)]
pub struct Factorized {
    lower: Vec<f64>,
    c: Vec<f64>,
    inv: Vec<f64>,
}

impl Factorized {
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let m = self.c.len();
        rhs[0] *= self.inv[0];
        for i in 1..m {
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) * self.inv[i];
        }
        for i in (0..m - 1).rev() {
            rhs[i] -= self.c[i] * rhs[i + 1];
        }
    }
}

/// The three-point second difference on the active nodes of `grid`, with the
/// boundary condition folded in (Dirichlet: zero boundary values; Neumann:
/// mirror ghosts).
pub fn second_difference(grid: &Grid) -> Tridiagonal {
    let m = grid.active().len();
    let h2 = 1.0 / (grid.dx() * grid.dx());
    let mut op = Tridiagonal {
        lower: vec![h2; m],
        diag: vec![-2.0 * h2; m],
        upper: vec![h2; m],
    };
    op.lower[0] = 0.0;
    op.upper[m - 1] = 0.0;
    if grid.bc() == BoundaryCondition::NeumannZero {
        op.upper[0] = 2.0 * h2;
        op.lower[m - 1] = 2.0 * h2;
    }
    op
}

/// Applies the second difference to a full-length nodal vector, writing the
/// result on the active nodes (zero elsewhere).
pub fn apply_second_difference(grid: &Grid, u: &[f64], out: &mut [f64]) {
    let n = grid.len();
    let h2 = 1.0 / (grid.dx() * grid.dx());
    for i in 1..n - 1 {
        out[i] = (u[i - 1] - 2.0 * u[i] + u[i + 1]) * h2;
    }
    match grid.bc() {
        BoundaryCondition::DirichletZero => {
            out[0] = 0.0;
            out[n - 1] = 0.0;
        }
        BoundaryCondition::NeumannZero => {
            out[0] = 2.0 * (u[1] - u[0]) * h2;
            out[n - 1] = 2.0 * (u[n - 2] - u[n - 1]) * h2;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn thomas_solves_diagonally_dominant_systems(
            off in prop::collection::vec(-1.0f64..1.0, 30),
            rhs in prop::collection::vec(-5.0f64..5.0, 15),
        ) {
            let m = 15;
            let mut t = Tridiagonal::zeros(m);
            for i in 0..m {
                t.lower[i] = if i > 0 { off[i] } else { 0.0 };
                t.upper[i] = if i + 1 < m { off[15 + i] } else { 0.0 };
                t.diag[i] = 2.5 + (i as f64) * 0.01;
            }
            let mut x = rhs.clone();
            let mut scratch = Vec::new();
            t.solve_in_place(&mut x, &mut scratch).unwrap();
            let mut back = vec![0.0; m];
            t.mul(&x, &mut back);
            for i in 0..m {
                prop_assert!((back[i] - rhs[i]).abs() < 1e-12);
            }
            let f = t.factorize().unwrap();
            let mut y = rhs.clone();
            f.solve_in_place(&mut y);
            for i in 0..m {
                prop_assert!((x[i] - y[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let t = Tridiagonal::zeros(4);
        let mut r = vec![1.0; 4];
        assert!(t.solve_in_place(&mut r, &mut Vec::new()).is_err());
        assert!(t.factorize().is_err());
    }

    #[test]
    fn neumann_difference_annihilates_constants() {
        let g = Grid::new(0.0, 1.0, 11, BoundaryCondition::NeumannZero).unwrap();
        let op = second_difference(&g);
        let mut y = vec![0.0; 11];
        op.mul(&[1.0; 11], &mut y);
        assert!(y.iter().all(|v| v.abs() < 1e-12));
    }
}
