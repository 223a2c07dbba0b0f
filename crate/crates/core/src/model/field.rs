use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::Grid;

/// Sup, L1 and L2 norms of a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub sup: f64,
    pub l1: f64,
    pub l2: f64,
}

/// A spatial profile sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "field has {} values but the grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at x = {}",
                grid.x(i)
            )));
        }
        Ok(Field { grid, values })
    }

    /// Builds a field without the finiteness scan. Callers guarantee the length.
    pub(crate) fn from_raw(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid, values }
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        Field::from_raw(grid, vec![0.0; n])
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let n = grid.len();
        Field::from_raw(grid, vec![c; n])
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().map(f).collect();
        Field::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Norms with the grid quadrature weights (see [`Grid::weight`]).
    pub fn norms(&self) -> Norms {
        let g = &self.grid;
        let (mut l1, mut l2) = (0.0, 0.0);
        for (i, v) in self.values.iter().enumerate() {
            let w = g.weight(i);
            l1 += w * v.abs();
            l2 += w * v * v;
        }
        Norms {
            sup: self.sup(),
            l1,
            l2: l2.sqrt(),
        }
    }

    /// Weighted pairing `sum_i w_i a_i b_i`, the discrete `∫ a b dx`.
    pub fn dot(&self, other: &Field) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        pairing(&self.grid, &self.values, &other.values)
    }

    pub fn integral(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| self.grid.weight(i) * v)
            .sum()
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field::from_raw(
            self.grid.clone(),
            self.values.iter().map(|v| v * s).collect(),
        )
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Field) -> Field {
        Field::from_raw(
            self.grid.clone(),
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + s * b)
                .collect(),
        )
    }

    pub fn sup_distance(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Field divided by its sup norm. Returns `None` for the zero field.
    pub fn sup_normalized(&self) -> Option<Field> {
        let s = self.sup();
        (s > 0.0).then(|| self.scaled(1.0 / s))
    }

    /// Piecewise-linear interpolation at `x` (clamped to the domain).
    pub fn interpolate(&self, x: f64) -> f64 {
        let (j, s) = self.grid.locate(x);
        (1.0 - s) * self.values[j] + s * self.values[j + 1]
    }

    pub fn is_compatible(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }
}

pub(crate) fn pairing(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let dx = grid.dx();
    let inner: f64 = a[1..n - 1]
        .iter()
        .zip(&b[1..n - 1])
        .map(|(x, y)| x * y)
        .sum();
    dx * inner + 0.5 * dx * (a[0] * b[0] + a[n - 1] * b[n - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BoundaryCondition;
    use proptest::prelude::*;

    fn grid(n: usize) -> Arc<Grid> {
        Arc::new(Grid::symmetric(5.0, n, BoundaryCondition::DirichletZero).unwrap())
    }

    #[test]
    fn zero_field_norms() {
        let z = Field::zeros(grid(11));
        assert_eq!(
            z.norms(),
            Norms {
                sup: 0.0,
                l1: 0.0,
                l2: 0.0
            }
        );
    }

    #[test]
    fn unit_constant_has_unit_density() {
        let g = grid(1001);
        let mut f = Field::constant(g.clone(), 1.0);
        let n = f.len();
        f.values_mut()[0] = 0.0;
        f.values_mut()[n - 1] = 0.0;
        assert!((f.norms().l1 - 10.0).abs() < 0.02);
    }

    #[test]
    fn single_node_mass_is_dx() {
        let g = grid(101);
        let mut f = Field::zeros(g.clone());
        f.values_mut()[40] = 1.0;
        assert!((f.norms().l1 - g.dx()).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonfinite_and_bad_length() {
        let g = grid(5);
        assert!(Field::new(g.clone(), vec![0.0; 4]).is_err());
        assert!(Field::new(g, vec![0.0, f64::NAN, 0.0, 0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn norms_are_homogeneous_and_subadditive(
            a in prop::collection::vec(-10.0f64..10.0, 21),
            b in prop::collection::vec(-10.0f64..10.0, 21),
            s in -5.0f64..5.0,
        ) {
            let g = grid(21);
            let fa = Field::new(g.clone(), a).unwrap();
            let fb = Field::new(g, b).unwrap();
            let na = fa.norms();
            let ns = fa.scaled(s).norms();
            prop_assert!((ns.sup - s.abs() * na.sup).abs() <= 1e-12 * (1.0 + na.sup));
            prop_assert!((ns.l1 - s.abs() * na.l1).abs() <= 1e-12 * (1.0 + na.l1));
            prop_assert!((ns.l2 - s.abs() * na.l2).abs() <= 1e-12 * (1.0 + na.l2));
            let sum = fa.axpy(1.0, &fb).norms();
            let nb = fb.norms();
            prop_assert!(sum.sup <= na.sup + nb.sup + 1e-12);
            prop_assert!(sum.l1 <= na.l1 + nb.l1 + 1e-12);
            prop_assert!(sum.l2 <= na.l2 + nb.l2 + 1e-12);
        }
    }
}
