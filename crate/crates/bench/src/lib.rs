//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use rdthreshold::linalg::Tridiagonal;
use rdthreshold::steady::{ground_state, refine_discrete};
use rdthreshold::threshold::radial_indicator;
use rdthreshold::{BoundaryCondition, Field, Grid, Nonlinearity};

pub struct Fixture {
    pub nl: Nonlinearity,
    pub grid: Arc<Grid>,
    /// Discrete ground state.
    pub w: Field,
    /// A block datum close to the threshold.
    pub block: Field,
}

/// The default desk-scale setup: `a = 0.3` on `[-40, 40]` with `n` nodes.
pub fn fixture(n: usize) -> Fixture {
    let nl = Nonlinearity::cubic(0.3).expect("valid a");
    let grid = Arc::new(Grid::symmetric(40.0, n, BoundaryCondition::DirichletZero).expect("valid grid"));
    let w = refine_discrete(&nl, &ground_state(&nl, &grid).expect("ground state").w).expect("newton");
    let block = radial_indicator(&grid, 0.0, 1.44);
    Fixture { nl, grid, w, block }
}

/// `I - dt/2 · D2` on `m` unknowns with spacing `dx`: the CN diffusion matrix.
pub fn cn_matrix(m: usize, dx: f64, dt: f64) -> Tridiagonal {
    let k = 0.5 * dt / (dx * dx);
    Tridiagonal {
        lower: vec![-k; m],
        diag: vec![1.0 + 2.0 * k; m],
        upper: vec![-k; m],
    }
}
