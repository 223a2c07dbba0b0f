//! Sharp-threshold search over monotone one-parameter families of initial
//! data, and extraction of the threshold trajectory that hovers near `W`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forward::{probe, Evolution, FateParams, SolverParams};
use crate::model::{Fate, Field, Grid, Nonlinearity, Trajectory};

/// A monotone family `L ↦ datum(L)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `1` on `(-L-r, -r) ∪ (r, L+r)`.
    TwoBump { r: f64 },
    /// `1` on `(-L, L)`, the `r = 0` member of the two-bump family.
    SingleBlock,
    /// `clamp(L · shape, 0, 1)` for a nonnegative shape.
    ScaledProfile { shape: Field },
    /// `1` on `{x : p(x) > (1 - L) sup p}`, for `L` in `[0, 1]`.
    Superlevel { p: Field },
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::TwoBump { r } => write!(f, "two_bump(r={r})"),
            Family::SingleBlock => write!(f, "single_block"),
            Family::ScaledProfile { .. } => write!(f, "scaled_profile"),
            Family::Superlevel { .. } => write!(f, "superlevel"),
        }
    }
}

/// Length of `[a, b] ∩ [c, d]`.
fn overlap(a: f64, b: f64, c: f64, d: f64) -> f64 {
    (b.min(d) - a.max(c)).max(0.0)
}

/// Covered fraction of each node's cell by `{x : lo < |x - centre| < hi}`,
/// computed from the index-based distance so the datum is exactly symmetric.
pub fn radial_indicator(grid: &Arc<Grid>, lo: f64, hi: f64) -> Field {
    let h = grid.dx();
    let mut vals = vec![0.0; grid.len()];
    if hi > lo {
        for (i, v) in vals.iter_mut().enumerate() {
            let d = grid.distance_from_center(i);
            let (a, b) = (d - 0.5 * h, d + 0.5 * h);
            let cov = overlap(a, b, lo, hi) + overlap(a, b, -hi, -lo);
            *v = (cov / h).clamp(0.0, 1.0);
        }
    }
    let active = grid.active();
    vals[..active.start].fill(0.0);
    vals[active.end..].fill(0.0);
    Field::from_raw(grid.clone(), vals)
}

/// Covered fraction of each node's cell by `{p > c}`, with `p` piecewise
/// linear between nodes.
pub fn superlevel_indicator(p: &Field, c: f64) -> Field {
    let grid = p.grid();
    let v = p.values();
    let n = v.len();
    // Fraction of a linear segment from `a` to `b` lying above `c`.
    let above = |a: f64, b: f64| -> f64 {
        match (a > c, b > c) {
            (true, true) => 1.0,
            (false, false) => 0.0,
            _ => (a.max(b) - c) / (a - b).abs(),
        }
    };
    let mut vals = vec![0.0; n];
    for (i, out) in vals.iter_mut().enumerate() {
        let left = if i > 0 { above(0.5 * (v[i - 1] + v[i]), v[i]) } else { above(v[i], v[i]) };
        let right = if i + 1 < n { above(v[i], 0.5 * (v[i] + v[i + 1])) } else { above(v[i], v[i]) };
        *out = 0.5 * (left + right);
    }
    let active = grid.active();
    vals[..active.start].fill(0.0);
    vals[active.end..].fill(0.0);
    Field::from_raw(grid.clone(), vals)
}

impl Family {
    pub fn datum(&self, grid: &Arc<Grid>, l: f64) -> Result<Field> {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::invalid(format!("family parameter must be >= 0, got {l}")));
        }
        match self {
            Family::TwoBump { r } => Ok(radial_indicator(grid, *r, r + l)),
            Family::SingleBlock => Ok(radial_indicator(grid, 0.0, l)),
            Family::ScaledProfile { shape } => {
                if **shape.grid() != **grid {
                    return Err(Error::invalid("profile shape lives on a different grid"));
                }
                let vals = shape.values().iter().map(|v| (l * v).clamp(0.0, 1.0)).collect();
                Ok(Field::from_raw(grid.clone(), vals))
            }
            Family::Superlevel { p } => {
                if **p.grid() != **grid {
                    return Err(Error::invalid("level function lives on a different grid"));
                }
                Ok(superlevel_indicator(p, (1.0 - l) * p.max()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Family::TwoBump { r } if !(*r >= 0.0 && r.is_finite()) => {
                Err(Error::invalid(format!("two_bump needs r >= 0, got {r}")))
            }
            Family::ScaledProfile { shape } if shape.min() < 0.0 || shape.max() <= 0.0 => Err(
                Error::invalid("scaled_profile needs a nonnegative, nonzero shape"),
            ),
            Family::Superlevel { p } if p.max() <= 0.0 => {
                Err(Error::invalid("superlevel family needs a positive level function"))
            }
            _ => Ok(()),
        }
    }

    /// Largest parameter whose datum still fits inside the domain.
    fn support_cap(&self, grid: &Grid) -> f64 {
        let half = 0.5 * (grid.x_max() - grid.x_min()) - 2.0 * grid.dx();
        match self {
            Family::TwoBump { r } => half - r,
            Family::SingleBlock => half,
            Family::ScaledProfile { .. } => f64::INFINITY,
            Family::Superlevel { .. } => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdParams {
    pub solver: SolverParams,
    pub fate: FateParams,
    /// Target bracket width.
    pub tol_l: f64,
    /// Search cap for the invading end.
    pub l_cap: f64,
    /// First probe of the doubling phase.
    pub l_start: f64,
    /// Ratio between successive probes of the doubling phase.
    pub growth: f64,
    /// Largest `T_max` multiplier tried on undecided probes.
    pub max_escalation: u32,
    /// Storage stride (steps) of the mid trajectory after `dense_time`.
    pub mid_stride: usize,
    /// Every step is stored up to this time.
    pub dense_time: f64,
}

impl ThresholdParams {
    pub fn new(solver: SolverParams, fate: FateParams, tol_l: f64) -> Self {
        ThresholdParams {
            solver,
            fate,
            tol_l,
            l_cap: 30.0,
            l_start: 0.5,
            growth: 2.0,
            max_escalation: 8,
            mid_stride: 10,
            dense_time: 1.0,
        }
    }
}

/// One probe of the search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRecord {
    pub l: f64,
    pub fate: Fate,
    pub t_max_used: f64,
}

#[derive(Debug, Clone)]
pub struct ThresholdResult {
    pub family: Family,
    pub l_lo: f64,
    pub l_hi: f64,
    pub l_star: f64,
    pub fate_lo: Fate,
    pub fate_hi: Fate,
    /// Trajectory from `datum(L_star)`, stored up to its closest approach to `W`.
    pub mid_traj: Trajectory,
    pub dist_to_w: f64,
    /// Time of the closest approach.
    pub t_closest: f64,
    pub probes: Vec<ProbeRecord>,
}

impl ThresholdResult {
    pub fn width(&self) -> f64 {
        self.l_hi - self.l_lo
    }

    pub fn datum(&self, grid: &Arc<Grid>) -> Result<Field> {
        self.family.datum(grid, self.l_star)
    }
}

/// Fate of `u0` with `T_max` escalation on undecided outcomes.
pub fn decided_fate(
    nl: &Nonlinearity,
    u0: &Field,
    params: &ThresholdParams,
) -> Result<(Fate, f64)> {
    let mut factor = 1u32;
    loop {
        let solver = params.solver.with_t_max(params.solver.t_max * factor as f64);
        let pr = probe(nl, u0, &solver, &params.fate, None)?;
        if pr.fate.is_decided() {
            return Ok((pr.fate, solver.t_max));
        }
        if factor >= params.max_escalation {
            return Err(Error::Budget(format!(
                "fate undecided at T_max = {} ({}x escalation)",
                solver.t_max, factor
            )));
        }
        factor *= 2;
    }
}

/// Brackets `L*` by doubling, then bisects to `tol_l`.
pub fn find_critical_length(
    family: &Family,
    nl: &Nonlinearity,
    grid: &Arc<Grid>,
    w: &Field,
    params: &ThresholdParams,
) -> Result<ThresholdResult> {
    family.validate()?;
    if !(params.tol_l > 0.0) {
        return Err(Error::invalid("tol_L must be positive"));
    }
    let cap = params.l_cap.min(family.support_cap(grid));
    let mut probes = Vec::new();
    let run = |l: f64, probes: &mut Vec<ProbeRecord>| -> Result<Fate> {
        let u0 = family.datum(grid, l)?;
        let (fate, t_max_used) = decided_fate(nl, &u0, params).map_err(|e| match e {
            Error::Budget(msg) => Error::Budget(format!(
                "{family}: {msg} at L = {l}; bracket so far {}",
                bracket_text(probes)
            )),
            other => other,
        })?;
        probes.push(ProbeRecord { l, fate, t_max_used });
        Ok(fate)
    };

    if !(params.growth > 1.0) {
        return Err(Error::invalid("growth must exceed 1"));
    }
    let growth = params.growth;
    let mut l = params.l_start.min(cap);
    let first = run(l, &mut probes)?;
    let (mut lo, mut hi, mut f_lo, mut f_hi);
    if first.is_invasion() {
        hi = l;
        f_hi = first;
        loop {
            l /= growth;
            if l < params.tol_l {
                return Err(Error::Threshold(format!(
                    "{family}: datum invades even at L = {l}"
                )));
            }
            let f = run(l, &mut probes)?;
            if f.is_extinction() {
                lo = l;
                f_lo = f;
                break;
            }
            hi = l;
            f_hi = f;
        }
    } else {
        lo = l;
        f_lo = first;
        loop {
            if l >= cap {
                return Err(Error::Threshold(format!(
                    "{family}: no invasion below L_cap = {cap}"
                )));
            }
            l = (growth * l).min(cap);
            let f = run(l, &mut probes)?;
            if f.is_invasion() {
                hi = l;
                f_hi = f;
                break;
            }
            lo = l;
            f_lo = f;
        }
    }
    while hi - lo > params.tol_l {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f = run(mid, &mut probes)?;
        if f.is_invasion() {
            hi = mid;
            f_hi = f;
        } else {
            lo = mid;
            f_lo = f;
        }
    }
    let l_star = 0.5 * (lo + hi);
    let (mid_traj, dist_to_w, t_closest) = closest_approach_trajectory(nl, &family.datum(grid, l_star)?, w, params)?;
    Ok(ThresholdResult {
        family: family.clone(),
        l_lo: lo,
        l_hi: hi,
        l_star,
        fate_lo: f_lo,
        fate_hi: f_hi,
        mid_traj,
        dist_to_w,
        t_closest,
        probes,
    })
}

fn bracket_text(probes: &[ProbeRecord]) -> String {
    let lo = probes
        .iter()
        .filter(|p| p.fate.is_extinction())
        .map(|p| p.l)
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = probes
        .iter()
        .filter(|p| p.fate.is_invasion())
        .map(|p| p.l)
        .fold(f64::INFINITY, f64::min);
    format!("[{lo}, {hi}]")
}

/// Evolves `u0` twice: once without storage to find the closest approach to
/// `w`, then again storing fields up to that time.
pub fn closest_approach_trajectory(
    nl: &Nonlinearity,
    u0: &Field,
    w: &Field,
    params: &ThresholdParams,
) -> Result<(Trajectory, f64, f64)> {
    let solver = params.solver.with_t_max(params.solver.t_max * params.max_escalation as f64);
    let pr = probe(nl, u0, &solver, &params.fate, Some(w))?;
    let (dist, k_best) = pr
        .closest
        .ok_or_else(|| Error::Internal("probe did not track the distance".into()))?;
    let k_end = stored_end(k_best, params);
    let traj = stored_evolution(nl, u0, params, k_end)?;
    let t_closest = k_best as f64 * solver.dt;
    Ok((traj, dist, t_closest))
}

/// `k` rounded up to a step that [`stored_evolution`] stores.
pub fn stored_end(k: usize, params: &ThresholdParams) -> usize {
    let stride = params.mid_stride.max(1);
    let dense = (params.dense_time / params.solver.dt).round() as usize;
    if k <= dense {
        k
    } else {
        k.div_ceil(stride) * stride
    }
}

/// Evolves `u0` for `k_end` steps, storing every step up to `dense_time` and
/// every `mid_stride` steps after it (plus the last).
pub fn stored_evolution(nl: &Nonlinearity, u0: &Field, params: &ThresholdParams, k_end: usize) -> Result<Trajectory> {
    let stride = params.mid_stride.max(1);
    let dense = (params.dense_time / params.solver.dt).round() as usize;
    let mut ev = Evolution::new(nl, u0, &params.solver)?;
    let mut traj = Trajectory::new(u0.grid().clone());
    traj.push(0.0, ev.field())?;
    while ev.step_index() < k_end {
        ev.advance()?;
        let k = ev.step_index();
        if k <= dense || k % stride == 0 || k == k_end {
            traj.push(ev.time(), ev.field())?;
        }
    }
    Ok(traj)
}

/// The threshold trajectory handed to the adjoint solver: the mid trajectory
/// spliced onto `w` at the first stored time within `splice_tol`, or at the
/// closest approach if that is within `tol_w`.
pub fn threshold_trajectory(
    result: &ThresholdResult,
    w: &Field,
    splice_tol: f64,
    tol_w: f64,
) -> Result<Trajectory> {
    if result.dist_to_w > tol_w {
        return Err(Error::Threshold(format!(
            "closest approach {:e} to W exceeds tol_W = {tol_w:e}; tighten tol_L",
            result.dist_to_w
        )));
    }
    let traj = &result.mid_traj;
    let k = traj
        .fields()
        .iter()
        .position(|f| f.sup_distance(w) < splice_tol)
        .unwrap_or_else(|| {
            traj.fields()
                .iter()
                .enumerate()
                .map(|(k, f)| (k, f.sup_distance(w)))
                .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
                .0
        });
    let t_c = traj.times()[k];
    traj.clone().spliced(t_c, w.clone())
}

/// Time spent with `‖u(t) - w‖_sup < level` before the fate is decided.
pub fn hovering_time(
    nl: &Nonlinearity,
    u0: &Field,
    w: &Field,
    level: f64,
    params: &ThresholdParams,
) -> Result<f64> {
    let solver = params.solver.with_t_max(params.solver.t_max * params.max_escalation as f64);
    let checker = crate::forward::FateChecker::new(nl, u0.grid(), &params.fate)?;
    let mut ev = Evolution::new(nl, u0, &solver)?;
    let mut time = 0.0;
    let n = solver.steps();
    while ev.step_index() < n {
        ev.advance()?;
        let d = ev
            .state()
            .iter()
            .zip(w.values())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        if d < level {
            time += solver.dt;
        }
        if checker.check(ev.state(), ev.time()).is_some() {
            break;
        }
    }
    Ok(time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::calibrate_invasion_box;
    use crate::model::BoundaryCondition;
    use crate::steady::{ground_state, refine_discrete};

    fn grid() -> Arc<Grid> {
        Arc::new(Grid::symmetric(40.0, 1601, BoundaryCondition::DirichletZero).unwrap())
    }

    #[test]
    fn partial_cells_make_the_datum_continuous() {
        let g = grid();
        let fam = Family::TwoBump { r: 0.5 };
        let a = fam.datum(&g, 1.0).unwrap();
        let b = fam.datum(&g, 1.0 + 1e-9).unwrap();
        assert!(a.sup_distance(&b) <= 1e-9 / g.dx() + 1e-12);
        assert!((a.integral() - 2.0).abs() < 1e-12);
        let c = fam.datum(&g, 1.3).unwrap();
        assert!(a.values().iter().zip(c.values()).all(|(x, y)| x <= y));
        assert!(c.integral() > a.integral());
        let vals = a.values();
        for i in 0..g.len() {
            assert_eq!(vals[i], vals[g.len() - 1 - i]);
        }
    }

    #[test]
    fn single_block_is_two_bump_at_zero() {
        let g = grid();
        let a = Family::SingleBlock.datum(&g, 1.37).unwrap();
        let b = Family::TwoBump { r: 0.0 }.datum(&g, 1.37).unwrap();
        assert_eq!(a, b);
        assert!((a.integral() - 2.74).abs() < 1e-12);
    }

    #[test]
    fn scaled_profile_clamps() {
        let g = grid();
        let shape = Field::from_fn(g.clone(), |x| (-x * x).exp()).unwrap();
        let fam = Family::ScaledProfile { shape };
        let d = fam.datum(&g, 3.0).unwrap();
        assert_eq!(d.max(), 1.0);
        assert!(Family::TwoBump { r: -1.0 }.validate().is_err());
    }

    #[test]
    fn theta_constant_is_stationary() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let g = Arc::new(Grid::symmetric(5.0, 51, BoundaryCondition::NeumannZero).unwrap());
        let p = SolverParams {
            t_max: 50.0,
            ..Default::default()
        };
        let tr = crate::forward::evolve(&nl, &Field::constant(g, 0.3), &p).unwrap();
        assert!(tr.last().unwrap().values().iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn single_block_threshold_brackets() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let g = grid();
        let solver = SolverParams::default();
        let fate = calibrate_invasion_box(&nl, &g, &solver, 0.1, None).unwrap();
        let w = refine_discrete(&nl, &ground_state(&nl, &g).unwrap().w).unwrap();
        let params = ThresholdParams::new(solver, fate, 1e-4);
        let res = find_critical_length(&Family::SingleBlock, &nl, &g, &w, &params).unwrap();
        assert!(res.width() <= 1e-4);
        assert!(res.fate_lo.is_extinction() && res.fate_hi.is_invasion());
        assert!((res.l_star - 1.4416).abs() < 2e-3, "{}", res.l_star);
        // Every extinct probe lies below every invading one.
        let max_ext = res.probes.iter().filter(|p| p.fate.is_extinction()).map(|p| p.l).fold(0.0, f64::max);
        let min_inv = res.probes.iter().filter(|p| p.fate.is_invasion()).map(|p| p.l).fold(f64::INFINITY, f64::min);
        assert!(max_ext < min_inv);
        // Monotone fate just outside the bracket.
        let below = Family::SingleBlock.datum(&g, res.l_lo - 1e-4).unwrap();
        assert!(decided_fate(&nl, &below, &params).unwrap().0.is_extinction());
        let above = Family::SingleBlock.datum(&g, res.l_hi + 1e-4).unwrap();
        assert!(decided_fate(&nl, &above, &params).unwrap().0.is_invasion());
        assert!(res.dist_to_w < 0.05);
        let tr = threshold_trajectory(&res, &w, 1e-4, 0.05).unwrap();
        assert!(tr.splice_time().is_some());
        assert_eq!(tr.at(1e6).unwrap().values(), w.values());
    }
}
