//! The shared context of every pipeline: nonlinearity, grid, solver and fate
//! parameters, the ground state and its principal eigenpair.

use std::sync::Arc;

use crate::error::Result;
use crate::floquet::{compute_bundle, BundleParams, FloquetBundle};
use crate::forward::{FateParams, SolverParams};
use crate::model::{Config, Field, Grid, Nonlinearity, Trajectory};
use crate::steady::{ground_state, principal_eigenpair, refine_discrete, EigenPair, GroundState};
use crate::threshold::{find_critical_length, threshold_trajectory, Family, ThresholdParams, ThresholdResult};

#[derive(Debug, Clone)]
pub struct Lab {
    pub nl: Nonlinearity,
    pub grid: Arc<Grid>,
    pub solver: SolverParams,
    pub fate: FateParams,
    /// Ground state from the phase-plane quadrature.
    pub ground: GroundState,
    /// Exact equilibrium of the discrete scheme, seeded by `ground.w`.
    pub w: Field,
    pub eigen: EigenPair,
    pub tol_l: f64,
    pub tol_w: f64,
    pub l_cap: f64,
    pub splice_tol: f64,
    pub bundle: BundleParams,
}

/// A threshold search together with its spliced trajectory and bundle.
#[derive(Debug, Clone)]
pub struct ThresholdRun {
    pub result: ThresholdResult,
    pub traj: Trajectory,
    pub bundle: FloquetBundle,
}

impl Lab {
    /// Builds the context; calibrates the fate box when the config leaves it
    /// unset and writes the resolved values back into `config`.
    pub fn from_config(config: &mut Config) -> Result<Lab> {
        let nl = config.nonlinearity()?;
        let grid = config.grid()?;
        let solver = config.solver();
        solver.validate(&nl)?;
        let fate = config.fate(&nl, &grid)?;
        Lab::build(nl, grid, solver, fate, config)
    }

    /// Same as [`Lab::from_config`] on another grid, reusing the fate
    /// parameters already resolved in `config`.
    pub fn on_grid(config: &mut Config, grid: Arc<Grid>) -> Result<Lab> {
        let nl = config.nonlinearity()?;
        let solver = config.solver();
        solver.validate(&nl)?;
        let fate = config.fate(&nl, &grid)?;
        Lab::build(nl, grid, solver, fate, config)
    }

    fn build(
        nl: Nonlinearity,
        grid: Arc<Grid>,
        solver: SolverParams,
        fate: FateParams,
        config: &Config,
    ) -> Result<Lab> {
        let ground = ground_state(&nl, &grid)?;
        let w = refine_discrete(&nl, &ground.w)?;
        let eigen = principal_eigenpair(&nl, &w)?;
        Ok(Lab {
            nl,
            grid,
            solver,
            fate,
            ground,
            w,
            eigen,
            tol_l: config.tol_l(),
            tol_w: config.tol_w,
            l_cap: config.l_cap,
            splice_tol: config.splice_tol,
            bundle: BundleParams {
                dt: solver.dt,
                horizon_efolds: config.horizon_efolds,
                ..BundleParams::default()
            },
        })
    }

    pub fn threshold_params(&self, tol_l: f64) -> ThresholdParams {
        ThresholdParams {
            l_cap: self.l_cap,
            ..ThresholdParams::new(self.solver, self.fate, tol_l)
        }
    }

    pub fn threshold(&self, family: &Family, tol_l: f64) -> Result<ThresholdResult> {
        find_critical_length(family, &self.nl, &self.grid, &self.w, &self.threshold_params(tol_l))
    }

    /// Spliced threshold trajectory and its normalized bundle. `tol_w`
    /// overrides the configured acceptance distance.
    pub fn bundle_for(&self, result: &ThresholdResult, tol_w: Option<f64>) -> Result<(Trajectory, FloquetBundle)> {
        let traj = threshold_trajectory(result, &self.w, self.splice_tol, tol_w.unwrap_or(self.tol_w))?;
        let bundle = compute_bundle(&traj, &self.nl, &self.eigen, &self.bundle)?;
        Ok((traj, bundle))
    }

    /// `tol_w`, widened to the closest approach actually reached, for loose
    /// threshold tolerances.
    pub fn lenient_tol_w(&self, result: &ThresholdResult) -> f64 {
        self.tol_w.max(1.5 * result.dist_to_w)
    }

    pub fn threshold_run(&self, family: &Family, tol_l: f64) -> Result<ThresholdRun> {
        let result = self.threshold(family, tol_l)?;
        let (traj, bundle) = self.bundle_for(&result, None)?;
        Ok(ThresholdRun { result, traj, bundle })
    }
}
