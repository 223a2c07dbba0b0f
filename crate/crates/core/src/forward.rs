//! Time integration of `u_t - u_xx = f(x, u)` and certified fate
//! classification.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{apply_second_difference, second_difference, Factorized};
use crate::model::{Fate, Field, Grid, Nonlinearity, Trajectory};

/// Tolerance of the invariant-region check `0 <= u <= 1`.
pub const BAND_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Explicit reaction, Crank–Nicolson diffusion.
    #[default]
    ImexCn,
    /// Explicit reaction, backward Euler diffusion.
    ImexBe,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::ImexCn => "imex_cn",
            Scheme::ImexBe => "imex_be",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "imex_cn" => Ok(Scheme::ImexCn),
            "imex_be" => Ok(Scheme::ImexBe),
            _ => Err(Error::invalid(format!(
                "unknown scheme '{s}' (expected imex_cn or imex_be)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    pub dt: f64,
    pub t_max: f64,
    pub store_stride: usize,
    pub scheme: Scheme,
    /// Number of initial backward-Euler steps taken by `imex_cn` to damp the
    /// Crank–Nicolson response to rough data.
    pub startup_steps: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            dt: 0.005,
            t_max: 400.0,
            store_stride: 20,
            scheme: Scheme::ImexCn,
            startup_steps: 4,
        }
    }
}

impl SolverParams {
    pub fn validate(&self, nl: &Nonlinearity) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::invalid(format!("T_max must be positive, got {}", self.t_max)));
        }
        if self.store_stride == 0 {
            return Err(Error::invalid("store_stride must be at least 1"));
        }
        let k = nl.lipschitz();
        if self.dt * k >= 0.5 {
            return Err(Error::invalid(format!(
                "dt = {} violates the explicit-reaction margin dt*K < 0.5 (K = {k})",
                self.dt
            )));
        }
        Ok(())
    }

    /// Number of steps needed to reach `t_max`.
    pub fn steps(&self) -> usize {
        (self.t_max / self.dt - 1e-9).ceil().max(1.0) as usize
    }

    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = t_max;
        self
    }
}

/// One IMEX stepper for a fixed grid, time step and scheme.
pub struct Stepper<'a> {
    nl: &'a Nonlinearity,
    grid: Arc<Grid>,
    dt: f64,
    mult: Vec<f64>,
    cn: Option<Factorized>,
    be: Factorized,
    lap: Vec<f64>,
    rhs: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(nl: &'a Nonlinearity, grid: Arc<Grid>, dt: f64, scheme: Scheme) -> Result<Self> {
        let d2 = second_difference(&grid);
        let be = d2.affine(1.0, -dt).factorize()?;
        let cn = match scheme {
            Scheme::ImexCn => Some(d2.affine(1.0, -0.5 * dt).factorize()?),
            Scheme::ImexBe => None,
        };
        let n = grid.len();
        Ok(Stepper {
            nl,
            mult: nl.multipliers(&grid),
            grid,
            dt,
            cn,
            be,
            lap: vec![0.0; n],
            rhs: vec![0.0; n],
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `u` by one step. `euler` forces a backward-Euler diffusion step.
    pub fn advance(&mut self, u: &mut [f64], euler: bool) -> Result<()> {
        let active = self.grid.active();
        let (lo, hi) = (active.start, active.end);
        let dt = self.dt;
        let factor = match (&self.cn, euler) {
            (Some(cn), false) => {
                apply_second_difference(&self.grid, u, &mut self.lap);
                for i in lo..hi {
                    self.rhs[i] = u[i]
                        + 0.5 * dt * self.lap[i]
                        + dt * self.mult[i] * self.nl.f0(u[i]);
                }
                cn
            }
            _ => {
                for i in lo..hi {
                    self.rhs[i] = u[i] + dt * self.mult[i] * self.nl.f0(u[i]);
                }
                &self.be
            }
        };
        factor.solve_in_place(&mut self.rhs[lo..hi]);
        u[lo..hi].copy_from_slice(&self.rhs[lo..hi]);
        u[..lo].fill(0.0);
        u[hi..].fill(0.0);
        Ok(())
    }
}

fn check_band(grid: &Grid, u: &[f64], t: f64) -> Result<()> {
    for (i, &v) in u.iter().enumerate() {
        if !(v >= -BAND_TOL && v <= 1.0 + BAND_TOL) {
            return Err(Error::InvariantViolation {
                value: v,
                x: grid.x(i),
                t,
            });
        }
    }
    Ok(())
}

fn check_datum(u0: &Field) -> Result<()> {
    if let Some(i) = u0.values().iter().position(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::invalid(format!(
            "initial datum must lie in [0, 1]; u0({}) = {}",
            u0.grid().x(i),
            u0.values()[i]
        )));
    }
    Ok(())
}

/// A running evolution: current state and time, advanced one step at a time.
pub struct Evolution<'a> {
    stepper: Stepper<'a>,
    params: SolverParams,
    u: Vec<f64>,
    step: usize,
}

impl<'a> Evolution<'a> {
    pub fn new(nl: &'a Nonlinearity, u0: &Field, params: &SolverParams) -> Result<Self> {
        params.validate(nl)?;
        check_datum(u0)?;
        let stepper = Stepper::new(nl, u0.grid().clone(), params.dt, params.scheme)?;
        let mut u = u0.values().to_vec();
        let active = u0.grid().active();
        u[..active.start].fill(0.0);
        u[active.end..].fill(0.0);
        Ok(Evolution {
            stepper,
            params: *params,
            u,
            step: 0,
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.params.dt
    }

    pub fn state(&self) -> &[f64] {
        &self.u
    }

    pub fn field(&self) -> Field {
        Field::from_raw(self.stepper.grid().clone(), self.u.clone())
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.stepper.grid()
    }

    pub fn advance(&mut self) -> Result<()> {
        let euler = self.step < self.params.startup_steps;
        self.stepper.advance(&mut self.u, euler)?;
        self.step += 1;
        check_band(self.stepper.grid(), &self.u, self.time())
    }
}

/// One IMEX step of size `dt` with the scheme's diffusion (no startup damping).
pub fn step(nl: &Nonlinearity, u: &Field, dt: f64, scheme: Scheme) -> Result<Field> {
    let mut stepper = Stepper::new(nl, u.grid().clone(), dt, scheme)?;
    let mut v = u.values().to_vec();
    stepper.advance(&mut v, false)?;
    check_band(u.grid(), &v, dt)?;
    Ok(Field::from_raw(u.grid().clone(), v))
}

/// Evolves `u0` to `T_max`, storing every `store_stride`-th step and the final
/// state.
pub fn evolve(nl: &Nonlinearity, u0: &Field, params: &SolverParams) -> Result<Trajectory> {
    let mut ev = Evolution::new(nl, u0, params)?;
    let mut traj = Trajectory::new(u0.grid().clone());
    traj.push(0.0, ev.field())?;
    let n = params.steps();
    while ev.step_index() < n {
        ev.advance()?;
        if ev.step_index() % params.store_stride == 0 || ev.step_index() == n {
            traj.push(ev.time(), ev.field())?;
        }
    }
    Ok(traj)
}

/// Parameters of the two fate certificates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FateParams {
    pub delta: f64,
    pub alpha_inv: f64,
    pub r_inv: f64,
}

/// Evaluates the extinction and invasion certificates on a grid.
#[derive(Debug, Clone)]
pub struct FateChecker {
    extinction_level: f64,
    alpha_inv: f64,
    box_nodes: std::ops::Range<usize>,
}

impl FateChecker {
    pub fn new(nl: &Nonlinearity, grid: &Grid, fate: &FateParams) -> Result<Self> {
        let theta = nl.theta()?;
        if !(fate.delta > 0.0 && fate.delta < 1.0) {
            return Err(Error::invalid(format!("fate.delta must lie in (0, 1), got {}", fate.delta)));
        }
        let box_nodes = box_range(grid, fate.r_inv)?;
        Ok(FateChecker {
            extinction_level: theta * (1.0 - fate.delta),
            alpha_inv: fate.alpha_inv,
            box_nodes,
        })
    }

    pub fn check(&self, u: &[f64], t: f64) -> Option<Fate> {
        let sup = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if sup < self.extinction_level {
            return Some(Fate::Extinction { t_cert: t, sup });
        }
        let box_min = u[self.box_nodes.clone()]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if box_min >= self.alpha_inv {
            return Some(Fate::Invasion { t_cert: t, box_min });
        }
        None
    }

    pub fn extinction_level(&self) -> f64 {
        self.extinction_level
    }
}

/// Node range with `|x - centre| <= r`.
fn box_range(grid: &Grid, r: f64) -> Result<std::ops::Range<usize>> {
    let inside: Vec<usize> = (0..grid.len())
        .filter(|&i| grid.distance_from_center(i) <= r + 1e-12)
        .collect();
    match (inside.first(), inside.last()) {
        (Some(&a), Some(&b)) if r > 0.0 && b + 1 < grid.len() && a > 0 => Ok(a..b + 1),
        _ => Err(Error::invalid(format!(
            "invasion box half-width {r} does not fit strictly inside the grid"
        ))),
    }
}

/// Evolves until a certificate fires or `T_max` is reached.
pub fn evolve_to_fate(
    nl: &Nonlinearity,
    u0: &Field,
    params: &SolverParams,
    fate: &FateParams,
) -> Result<(Trajectory, Fate)> {
    let checker = FateChecker::new(nl, u0.grid(), fate)?;
    let mut ev = Evolution::new(nl, u0, params)?;
    let mut traj = Trajectory::new(u0.grid().clone());
    traj.push(0.0, ev.field())?;
    if let Some(f) = checker.check(ev.state(), 0.0) {
        return Ok((traj, f));
    }
    let n = params.steps();
    while ev.step_index() < n {
        ev.advance()?;
        let verdict = checker.check(ev.state(), ev.time());
        if ev.step_index() % params.store_stride == 0 || ev.step_index() == n || verdict.is_some()
        {
            traj.push(ev.time(), ev.field())?;
        }
        if let Some(f) = verdict {
            return Ok((traj, f));
        }
    }
    let sup = ev.field().sup();
    Ok((traj, Fate::Undecided { t_max: ev.time(), sup }))
}

/// Outcome of a storage-free fate probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub fate: Fate,
    /// Smallest `‖u(t) - target‖_sup` seen and the step at which it occurred.
    pub closest: Option<(f64, usize)>,
}

/// Runs the fate certificates without storing fields. With `target`, also
/// tracks the closest approach to it in sup norm.
pub fn probe(
    nl: &Nonlinearity,
    u0: &Field,
    params: &SolverParams,
    fate: &FateParams,
    target: Option<&Field>,
) -> Result<Probe> {
    let checker = FateChecker::new(nl, u0.grid(), fate)?;
    let mut ev = Evolution::new(nl, u0, params)?;
    let dist = |u: &[f64]| -> f64 {
        target.map_or(f64::INFINITY, |w| {
            u.iter()
                .zip(w.values())
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
        })
    };
    let mut closest = target.map(|_| (dist(ev.state()), 0));
    if let Some(f) = checker.check(ev.state(), 0.0) {
        return Ok(Probe { fate: f, closest });
    }
    let n = params.steps();
    while ev.step_index() < n {
        ev.advance()?;
        if let Some((best, _)) = closest {
            let d = dist(ev.state());
            if d < best {
                closest = Some((d, ev.step_index()));
            }
        }
        if let Some(f) = checker.check(ev.state(), ev.time()) {
            return Ok(Probe { fate: f, closest });
        }
    }
    let sup = ev.field().sup();
    Ok(Probe {
        fate: Fate::Undecided { t_max: ev.time(), sup },
        closest,
    })
}

/// Applies the certificates to the stored fields of a trajectory.
pub fn classify_fate(traj: &Trajectory, nl: &Nonlinearity, fate: &FateParams) -> Result<Fate> {
    let checker = FateChecker::new(nl, traj.grid(), fate)?;
    for (t, f) in traj.times().iter().zip(traj.fields()) {
        if let Some(v) = checker.check(f.values(), *t) {
            return Ok(v);
        }
    }
    let (t_max, sup) = match (traj.end(), traj.last()) {
        (Some(t), Some(f)) => (t, f.sup()),
        _ => return Err(Error::invalid("cannot classify an empty trajectory")),
    };
    Ok(Fate::Undecided { t_max, sup })
}

/// Default invasion level `(β* + 1) / 2`.
pub fn default_alpha_inv(nl: &Nonlinearity) -> Result<f64> {
    Ok(0.5 * (nl.beta_star()? + 1.0))
}

/// Finds `R_inv` such that `α_inv·1_{[-R_inv, R_inv]}` reaches `1 - δ` on the
/// doubled box within `T_max`, by doubling from a few cells.
pub fn calibrate_invasion_box(
    nl: &Nonlinearity,
    grid: &Arc<Grid>,
    params: &SolverParams,
    delta: f64,
    alpha_inv: Option<f64>,
) -> Result<FateParams> {
    let beta = nl.beta_star()?;
    let theta = nl.theta()?;
    let alpha = match alpha_inv {
        Some(a) => a,
        None => default_alpha_inv(nl)?,
    };
    if !(alpha > beta && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha_inv = {alpha} must lie in (beta* = {beta}, 1)"
        )));
    }
    if !(delta > 0.0 && 1.0 - delta >= alpha) {
        return Err(Error::invalid(format!(
            "fate.delta = {delta} must satisfy 0 < delta <= 1 - alpha_inv"
        )));
    }
    let half = 0.5 * (grid.x_max() - grid.x_min());
    let mut r = 4.0 * grid.dx();
    while 2.0 * r <= 0.5 * half {
        let inner = box_range(grid, r)?;
        let outer = box_range(grid, 2.0 * r)?;
        let mut u0 = Field::zeros(grid.clone());
        for i in inner {
            u0.values_mut()[i] = alpha;
        }
        let mut ev = Evolution::new(nl, &u0, params)?;
        let n = params.steps();
        let mut ok = false;
        while ev.step_index() < n {
            ev.advance()?;
            let u = ev.state();
            if u[outer.clone()].iter().all(|&v| v >= 1.0 - delta) {
                ok = true;
                break;
            }
            if u.iter().all(|&v| v < theta * (1.0 - delta)) {
                break;
            }
        }
        if ok {
            return Ok(FateParams {
                delta,
                alpha_inv: alpha,
                r_inv: r,
            });
        }
        r *= 2.0;
    }
    Err(Error::Calibration(format!(
        "no invasion box found within T_max = {} on a half-width {half} domain; \
         enlarge T_max or x_max",
        params.t_max
    )))
}

/// Result of [`truncation_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationReport {
    pub passed: bool,
    pub sign_ok: bool,
    pub boundary_ok: bool,
    /// Largest `∂_u f` seen on the outer 10% of the domain, with `(x, t)`.
    pub worst_fprime: (f64, f64, f64),
    /// Largest `|u|` at a boundary node, with `(x, t)`.
    pub worst_boundary: (f64, f64, f64),
}

impl fmt::Display for TruncationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed {
            return write!(f, "truncation check passed");
        }
        write!(f, "truncation check FAILED:")?;
        if !self.sign_ok {
            let (v, x, t) = self.worst_fprime;
            write!(f, " f'(u) = {v:e} > 0 at x = {x}, t = {t};")?;
        }
        if !self.boundary_ok {
            let (v, x, t) = self.worst_boundary;
            write!(f, " boundary value {v:e} at x = {x}, t = {t};")?;
        }
        write!(f, " enlarge x_max")
    }
}

/// Checks that `∂_u f(x, u) <= 0` on the outer 10% of the domain and that
/// boundary values stay below `1e-8`, at every stored time.
pub fn truncation_check(traj: &Trajectory, nl: &Nonlinearity) -> TruncationReport {
    let grid = traj.grid();
    let half = 0.5 * (grid.x_max() - grid.x_min());
    let outer: Vec<usize> = (0..grid.len())
        .filter(|&i| grid.distance_from_center(i) >= 0.9 * half)
        .collect();
    let ends = [0, grid.len() - 1];
    let mut worst_fprime = (f64::NEG_INFINITY, 0.0, 0.0);
    let mut worst_boundary = (0.0, grid.x(0), 0.0);
    for (&t, fld) in traj.times().iter().zip(traj.fields()) {
        let u = fld.values();
        for &i in &outer {
            let x = grid.x(i);
            let d = nl.multiplier(x) * nl.df0(u[i]);
            if d > worst_fprime.0 {
                worst_fprime = (d, x, t);
            }
        }
        for &i in &ends {
            if u[i].abs() > worst_boundary.0 {
                worst_boundary = (u[i].abs(), grid.x(i), t);
            }
        }
    }
    let sign_ok = worst_fprime.0 <= 0.0;
    let boundary_ok = worst_boundary.0 < 1e-8;
    TruncationReport {
        passed: sign_ok && boundary_ok,
        sign_ok,
        boundary_ok,
        worst_fprime,
        worst_boundary,
    }
}

/// A smooth benchmark used for grid-convergence studies: evolves
/// `u0(x) = amp·exp(-x²/w²)` on `grid` with `dt` to time `t_end`.
pub fn smooth_benchmark(
    nl: &Nonlinearity,
    grid: Arc<Grid>,
    dt: f64,
    t_end: f64,
    amp: f64,
    width: f64,
) -> Result<Field> {
    let c = grid.center();
    let u0 = Field::from_fn(grid, |x| amp * (-((x - c) / width).powi(2)).exp())?;
    let params = SolverParams {
        dt,
        t_max: t_end,
        store_stride: usize::MAX,
        scheme: Scheme::ImexCn,
        startup_steps: 0,
    };
    let mut ev = Evolution::new(nl, &u0, &params)?;
    let n = params.steps();
    while ev.step_index() < n {
        ev.advance()?;
    }
    Ok(ev.field())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundaryCondition, HermiteTable};
    use proptest::prelude::*;

    fn neumann(n: usize) -> Arc<Grid> {
        Arc::new(Grid::symmetric(5.0, n, BoundaryCondition::NeumannZero).unwrap())
    }

    fn dirichlet(x_max: f64, n: usize) -> Arc<Grid> {
        Arc::new(Grid::symmetric(x_max, n, BoundaryCondition::DirichletZero).unwrap())
    }

    #[test]
    fn equilibria_are_fixed() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let z = Field::zeros(dirichlet(10.0, 201));
        assert_eq!(step(&nl, &z, 0.01, Scheme::ImexCn).unwrap(), z);
        let one = Field::constant(neumann(101), 1.0);
        let s = step(&nl, &one, 0.01, Scheme::ImexCn).unwrap();
        assert!(s.values().iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn constant_state_follows_the_reaction_ode() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let half = Field::constant(neumann(101), 0.5);
        let s = step(&nl, &half, 0.01, Scheme::ImexBe).unwrap();
        assert!(s.values().iter().all(|v| (v - 0.5005).abs() < 1e-14));
    }

    #[test]
    fn constants_above_and_below_theta() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let p = SolverParams {
            t_max: 60.0,
            ..Default::default()
        };
        let up = evolve(&nl, &Field::constant(neumann(51), 0.35), &p).unwrap();
        assert!(up.last().unwrap().min() > 0.99);
        let down = evolve(&nl, &Field::constant(neumann(51), 0.25), &p).unwrap();
        assert!(down.last().unwrap().sup() < 0.01);
    }

    #[test]
    fn stored_times_follow_the_stride() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let p = SolverParams {
            t_max: 1.01,
            store_stride: 50,
            ..Default::default()
        };
        let tr = evolve(&nl, &Field::zeros(dirichlet(5.0, 51)), &p).unwrap();
        let ts = tr.times();
        assert_eq!(ts.len(), 6);
        assert!((ts[4] - 1.0).abs() < 1e-12);
        assert!((ts[5] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn rejects_unstable_dt_and_bad_datum() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let g = dirichlet(5.0, 51);
        let p = SolverParams {
            dt: 1.0,
            ..Default::default()
        };
        assert!(Evolution::new(&nl, &Field::zeros(g.clone()), &p).is_err());
        let bad = Field::constant(g, 1.5);
        assert!(Evolution::new(&nl, &bad, &SolverParams::default()).is_err());
    }

    #[test]
    fn mass_is_conserved_without_reaction() {
        let table = HermiteTable::new(vec![0.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        let nl = Nonlinearity::from_table_uncertified(table);
        let g = neumann(201);
        let u0 = Field::from_fn(g, |x| if x.abs() < 1.3 { 0.8 } else { 0.1 }).unwrap();
        let p = SolverParams {
            t_max: 10.0,
            ..Default::default()
        };
        let tr = evolve(&nl, &u0, &p).unwrap();
        let m0 = u0.integral();
        for (t, f) in tr.times().iter().zip(tr.fields()) {
            assert!((f.integral() - m0).abs() <= 1e-10 * t.max(1.0));
        }
    }

    #[test]
    fn fate_examples() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let g = dirichlet(40.0, 1601);
        let p = SolverParams::default();
        let fp = calibrate_invasion_box(&nl, &g, &p, 0.1, None).unwrap();
        assert!((fp.alpha_inv - 0.7389682).abs() < 1e-6);

        let (_, f) = evolve_to_fate(&nl, &Field::zeros(g.clone()), &p, &fp).unwrap();
        assert_eq!(f, Fate::Extinction { t_cert: 0.0, sup: 0.0 });

        let small = Field::from_fn(g.clone(), |x| if x.abs() < 0.1 { 1.0 } else { 0.0 }).unwrap();
        let (tr, f) = evolve_to_fate(&nl, &small, &p, &fp).unwrap();
        assert!(f.is_extinction());
        assert_eq!(classify_fate(&tr, &nl, &fp).unwrap().sign(), -1);
        assert!(truncation_check(&tr, &nl).passed);

        let big = Field::from_fn(g.clone(), |x| if x.abs() < 20.0 { 1.0 } else { 0.0 }).unwrap();
        let (_, f) = evolve_to_fate(&nl, &big, &p, &fp).unwrap();
        assert!(f.is_invasion());
    }

    #[test]
    fn calibration_rejects_alpha_below_barrier() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let g = dirichlet(40.0, 801);
        let p = SolverParams::default();
        let b = nl.beta_star().unwrap();
        assert!(calibrate_invasion_box(&nl, &g, &p, 0.1, Some(b)).is_err());
        assert!(calibrate_invasion_box(&nl, &g, &p, 0.1, Some(0.4)).is_err());
    }

    #[test]
    fn calibrated_box_grows_with_a() {
        let g = dirichlet(40.0, 801);
        let p = SolverParams::default();
        let r = |a: f64| {
            let nl = Nonlinearity::cubic(a).unwrap();
            calibrate_invasion_box(&nl, &g, &p, 0.1, None).unwrap().r_inv
        };
        assert!(r(0.1) < r(0.45));
    }

    #[test]
    fn neumann_invasion_fails_truncation() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let p = SolverParams {
            t_max: 5.0,
            ..Default::default()
        };
        let tr = evolve(&nl, &Field::constant(neumann(101), 0.9), &p).unwrap();
        let rep = truncation_check(&tr, &nl);
        assert!(!rep.passed);
        assert!(rep.sign_ok);
        assert!(!rep.boundary_ok);
    }

    #[test]
    fn grid_refinement_is_second_order() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let run = |n: usize, dt: f64| {
            smooth_benchmark(&nl, dirichlet(10.0, n), dt, 1.0, 0.6, 1.5).unwrap()
        };
        let coarse = run(101, 0.01);
        let mid = run(201, 0.0025);
        let fine = run(401, 0.000625);
        let sub = |f: &Field, k: usize| -> Vec<f64> { f.values().iter().step_by(k).copied().collect() };
        let e1 = sub(&mid, 2)
            .iter()
            .zip(coarse.values())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        let e2 = sub(&fine, 2)
            .iter()
            .zip(mid.values())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        let order = (e1 / e2).log2();
        assert!(order >= 1.7, "order {order}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn comparison_principle(
            base in prop::collection::vec(0.0f64..1.0, 81),
            gap in prop::collection::vec(0.0f64..1.0, 81),
            be in any::<bool>(),
        ) {
            let nl = Nonlinearity::cubic(0.3).unwrap();
            let g = dirichlet(4.0, 81);
            let lo: Vec<f64> = base.iter().zip(&gap).map(|(b, d)| b * (1.0 - d)).collect();
            let u0 = Field::new(g.clone(), lo).unwrap();
            let v0 = Field::new(g, base).unwrap();
            let p = SolverParams {
                t_max: 3.0,
                store_stride: 10,
                scheme: if be { Scheme::ImexBe } else { Scheme::ImexCn },
                ..Default::default()
            };
            let tu = evolve(&nl, &u0, &p).unwrap();
            let tv = evolve(&nl, &v0, &p).unwrap();
            for (a, b) in tu.fields().iter().zip(tv.fields()) {
                for (x, y) in a.values().iter().zip(b.values()) {
                    prop_assert!(*x <= *y + 1e-10);
                }
            }
        }
    }
}
