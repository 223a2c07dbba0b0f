//! Adjoint `p` and forward bundle `v` of the linearization along a trajectory
//! that converges to `W`, with normalization and separation diagnostics.
//!
//! Both directions use Crank–Nicolson with the coefficient taken implicitly at
//! each end of the step. The backward recursion is the exact discrete adjoint
//! of the forward one, so `∫ p v` is conserved to roundoff.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{second_difference, Tridiagonal};
use crate::model::{pairing, Field, Grid, Nonlinearity, Trajectory};
use crate::steady::EigenPair;

/// Sup norm above which a linear solution is rescaled and the factor moved to
/// its log offset.
const RESCALE_ABOVE: f64 = 1e250;

/// The coefficient `c(t, x) = ∂_u f(x, u(t, x))` of the linearized equation.
#[derive(Debug, Clone)]
pub enum Coefficient<'a> {
    /// Along a (spliced) trajectory.
    Path {
        traj: &'a Trajectory,
        nl: &'a Nonlinearity,
    },
    /// Independent of time.
    Frozen(Field),
}

impl Coefficient<'_> {
    pub fn grid(&self) -> &Arc<Grid> {
        match self {
            Coefficient::Path { traj, .. } => traj.grid(),
            Coefficient::Frozen(c) => c.grid(),
        }
    }

    pub fn at(&self, t: f64) -> Result<Field> {
        match self {
            Coefficient::Path { traj, nl } => linearized_coefficient(traj, nl, t),
            Coefficient::Frozen(c) => Ok(c.clone()),
        }
    }
}

/// `x ↦ ∂_u f(x, u(t, x))`, with `u` interpolated linearly in time between
/// stored fields and equal to the steady state from the splice onward.
pub fn linearized_coefficient(traj: &Trajectory, nl: &Nonlinearity, t: f64) -> Result<Field> {
    let u = traj.at(t)?;
    let grid = traj.grid();
    let vals = u
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| nl.multiplier(grid.x(i)) * nl.df0(v))
        .collect();
    Ok(Field::new(grid.clone(), vals)?)
}

/// `∂_u f(·, W)`.
pub fn frozen_coefficient(nl: &Nonlinearity, w: &Field) -> Field {
    let grid = w.grid();
    let vals = w
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| nl.multiplier(grid.x(i)) * nl.df0(v))
        .collect();
    Field::from_raw(grid.clone(), vals)
}

/// Time grid of a linear solve: `steps` steps of size `dt` from `t = 0`, with
/// fields stored every `dense_every` steps up to `dense_until` and every
/// `sparse_every` steps afterwards (plus both ends).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub dt: f64,
    pub steps: usize,
    pub dense_until: f64,
    pub dense_every: usize,
    pub sparse_every: usize,
}

impl Schedule {
    pub fn uniform(dt: f64, t_end: f64, every: usize) -> Self {
        Schedule {
            dt,
            steps: (t_end / dt - 1e-9).ceil().max(1.0) as usize,
            dense_until: f64::INFINITY,
            dense_every: every.max(1),
            sparse_every: every.max(1),
        }
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.t(self.steps)
    }

    pub fn stores(&self, k: usize) -> bool {
        if k == 0 || k == self.steps {
            return true;
        }
        if self.t(k) <= self.dense_until + 1e-12 {
            k % self.dense_every == 0
        } else {
            k % self.sparse_every == 0
        }
    }

    pub fn stored_steps(&self) -> Vec<usize> {
        (0..=self.steps).filter(|&k| self.stores(k)).collect()
    }
}

/// A solution of a linear equation stored as `field · exp(log_scale)`.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub traj: Trajectory,
    pub log_scale: Vec<f64>,
}

impl LinearSolution {
    pub fn times(&self) -> &[f64] {
        self.traj.times()
    }

    pub fn len(&self) -> usize {
        self.traj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traj.is_empty()
    }

    /// Stored field (without its log offset).
    pub fn raw(&self, k: usize) -> &Field {
        &self.traj.fields()[k]
    }

    /// The actual values, `raw · exp(log_scale)`.
    pub fn value(&self, k: usize) -> Field {
        self.raw(k).scaled(self.log_scale[k].exp())
    }

    pub fn sup_normalized(&self, k: usize) -> Option<Field> {
        self.raw(k).sup_normalized()
    }

    pub fn log_sup(&self, k: usize) -> f64 {
        self.raw(k).sup().ln() + self.log_scale[k]
    }

    pub fn first(&self) -> Field {
        self.value(0)
    }

    /// Index of the stored time equal to `t` (to 1e-9).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let ts = self.times();
        let k = ts.partition_point(|&s| s < t - 1e-9);
        (k < ts.len() && (ts[k] - t).abs() <= 1e-9).then_some(k)
    }

    fn rescaled(mut self, by: f64) -> Self {
        let l = by.ln();
        for s in &mut self.log_scale {
            *s += l;
        }
        self
    }
}

/// Assembles `c0 I + c1 A` with `A = -D2 - diag(c)` on the active nodes.
fn affine_operator(d2: &Tridiagonal, coef: &[f64], active_start: usize, c0: f64, c1: f64) -> Tridiagonal {
    let mut m = d2.affine(c0, -c1);
    for (k, d) in m.diag.iter_mut().enumerate() {
        *d -= c1 * coef[active_start + k];
    }
    m
}

fn check_positive(what: &'static str, grid: &Grid, v: &[f64], t: f64) -> Result<()> {
    for i in grid.active() {
        if !(v[i] > 0.0) {
            return Err(Error::PositivityLost {
                what,
                value: v[i],
                x: grid.x(i),
                t,
            });
        }
    }
    Ok(())
}

/// Projection applied at stored times during a forward solve.
struct Reprojection<'a> {
    p: &'a LinearSolution,
    v: &'a LinearSolution,
}

fn forward_solve(
    coef: &Coefficient<'_>,
    u0: &Field,
    sched: &Schedule,
    positive: Option<&'static str>,
    reproject: Option<Reprojection<'_>>,
) -> Result<LinearSolution> {
    let grid = coef.grid().clone();
    let active = grid.active();
    let d2 = second_difference(&grid);
    let dt = sched.dt;
    let mut u = u0.values().to_vec();
    u[..active.start].fill(0.0);
    u[active.end..].fill(0.0);
    let mut log_offset = 0.0;
    let mut traj = Trajectory::new(grid.clone());
    let mut logs = Vec::new();
    traj.push(0.0, Field::new(grid.clone(), u.clone())?)?;
    logs.push(0.0);
    let mut c_now = coef.at(0.0)?;
    let mut rhs = vec![0.0; active.len()];
    let mut scratch = Vec::new();
    for k in 0..sched.steps {
        let c_next = coef.at(sched.t(k + 1))?;
        let n_op = affine_operator(&d2, c_now.values(), active.start, 1.0, -0.5 * dt);
        n_op.mul(&u[active.clone()], &mut rhs);
        let m_op = affine_operator(&d2, c_next.values(), active.start, 1.0, 0.5 * dt);
        m_op.solve_in_place(&mut rhs, &mut scratch)?;
        u[active.clone()].copy_from_slice(&rhs);
        c_now = c_next;
        let t = sched.t(k + 1);
        let sup = u.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if !sup.is_finite() {
            return Err(Error::NotConverged {
                what: "linearized forward solve (non-finite state)",
                iterations: k + 1,
                residual: sup,
            });
        }
        if sup > RESCALE_ABOVE {
            u.iter_mut().for_each(|x| *x /= sup);
            log_offset += sup.ln();
        }
        if sched.stores(k + 1) {
            if let Some(rp) = &reproject {
                if let (Some(kp), Some(kv)) = (rp.p.index_of(t), rp.v.index_of(t)) {
                    let (pk, vk) = (rp.p.raw(kp), rp.v.raw(kv));
                    let c = pairing(&grid, pk.values(), &u) / pairing(&grid, pk.values(), vk.values());
                    for (x, y) in u.iter_mut().zip(vk.values()) {
                        *x -= c * y;
                    }
                }
            }
            if let Some(what) = positive {
                check_positive(what, &grid, &u, t)?;
            }
            traj.push(t, Field::from_raw(grid.clone(), u.clone()))?;
            logs.push(log_offset);
        }
    }
    Ok(LinearSolution {
        traj,
        log_scale: logs,
    })
}

/// The adjoint equation `-p_t - p_xx = c(t, x) p` backward from `p(T_end) =
/// terminal`. The first `startup` steps (nearest `T_end`) use backward Euler
/// to damp rough terminal data.
pub fn solve_adjoint(
    coef: &Coefficient<'_>,
    terminal: &Field,
    sched: &Schedule,
    startup: usize,
) -> Result<LinearSolution> {
    let grid = coef.grid().clone();
    let active = grid.active();
    let d2 = second_difference(&grid);
    let dt = sched.dt;
    let mut p = terminal.values().to_vec();
    p[..active.start].fill(0.0);
    p[active.end..].fill(0.0);
    check_positive("adjoint terminal condition", &grid, &p, sched.t_end())?;
    let mut log_offset = 0.0;
    let mut fields = vec![(sched.t_end(), p.clone(), 0.0)];
    let mut c_next = coef.at(sched.t(sched.steps))?;
    let mut buf = vec![0.0; active.len()];
    let mut scratch = Vec::new();
    for j in 0..sched.steps {
        let k = sched.steps - 1 - j;
        let c_now = coef.at(sched.t(k))?;
        buf.copy_from_slice(&p[active.clone()]);
        if j < startup {
            let m_op = affine_operator(&d2, c_next.values(), active.start, 1.0, dt);
            m_op.solve_in_place(&mut buf, &mut scratch)?;
            p[active.clone()].copy_from_slice(&buf);
        } else {
            let m_op = affine_operator(&d2, c_next.values(), active.start, 1.0, 0.5 * dt);
            m_op.solve_in_place(&mut buf, &mut scratch)?;
            let n_op = affine_operator(&d2, c_now.values(), active.start, 1.0, -0.5 * dt);
            n_op.mul(&buf, &mut p[active.clone()]);
        }
        c_next = c_now;
        let t = sched.t(k);
        let sup = p.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if !sup.is_finite() {
            return Err(Error::NotConverged {
                what: "adjoint solve (non-finite state)",
                iterations: j + 1,
                residual: sup,
            });
        }
        if sup > RESCALE_ABOVE {
            p.iter_mut().for_each(|x| *x /= sup);
            log_offset += sup.ln();
        }
        if sched.stores(k) {
            check_positive("adjoint p", &grid, &p, t)?;
            fields.push((t, p.clone(), log_offset));
        }
    }
    fields.reverse();
    let mut traj = Trajectory::new(grid.clone());
    let mut logs = Vec::with_capacity(fields.len());
    for (t, vals, l) in fields {
        traj.push(t, Field::from_raw(grid.clone(), vals))?;
        logs.push(l);
    }
    Ok(LinearSolution {
        traj,
        log_scale: logs,
    })
}

/// The forward bundle `v_t - v_xx = c v` from `v(0) = φ / ‖φ‖_sup`.
pub fn solve_forward_bundle(
    coef: &Coefficient<'_>,
    eigen: &EigenPair,
    sched: &Schedule,
) -> Result<LinearSolution> {
    let v0 = eigen
        .phi
        .sup_normalized()
        .ok_or_else(|| Error::Internal("zero eigenfunction".into()))?;
    forward_solve(coef, &v0, sched, Some("forward bundle v"), None)
}

/// The linearized equation `u̇_t - u̇_xx = c u̇` from `u̇(0) = h` (no sign
/// constraint).
pub fn solve_linearized(
    coef: &Coefficient<'_>,
    h: &Field,
    sched: &Schedule,
) -> Result<LinearSolution> {
    forward_solve(coef, h, sched, None, None)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleParams {
    pub dt: f64,
    /// `T_end = T_splice + horizon_efolds / |λ|`.
    pub horizon_efolds: f64,
    /// Storage stride (in steps) up to the splice.
    pub dense_every: usize,
    /// Storage spacing (time units) after the splice.
    pub sparse_spacing: f64,
}

impl Default for BundleParams {
    fn default() -> Self {
        BundleParams {
            dt: 0.005,
            horizon_efolds: 40.0,
            dense_every: 20,
            sparse_spacing: 1.0,
        }
    }
}

impl BundleParams {
    pub fn schedule(&self, t_splice: f64, lambda: f64) -> Schedule {
        let t_end = t_splice + self.horizon_efolds / lambda.abs();
        Schedule {
            dt: self.dt,
            steps: (t_end / self.dt - 1e-9).ceil() as usize,
            dense_until: t_splice,
            dense_every: self.dense_every.max(1),
            sparse_every: ((self.sparse_spacing / self.dt).round() as usize).max(1),
        }
    }
}

/// The normalized pair `(p, v)` with `‖v(0)‖_sup = 1` and `∫ p(0) v(0) = 1`.
#[derive(Debug, Clone)]
pub struct FloquetBundle {
    pub p: LinearSolution,
    pub v: LinearSolution,
    pub eigen: EigenPair,
    pub t_splice: f64,
    pub t_end: f64,
    pub schedule: Schedule,
    /// `∫ p(0) v(0)` before normalization.
    pub raw_pairing: f64,
    pub separation_rate: Option<f64>,
}

impl FloquetBundle {
    /// `∫ p(t) v(t)` at every common stored time.
    pub fn pairings(&self) -> Vec<(f64, f64)> {
        let grid = self.p.traj.grid();
        self.p
            .times()
            .iter()
            .enumerate()
            .filter_map(|(kp, &t)| {
                let kv = self.v.index_of(t)?;
                let raw = pairing(grid, self.p.raw(kp).values(), self.v.raw(kv).values());
                Some((t, raw * (self.p.log_scale[kp] + self.v.log_scale[kv]).exp()))
            })
            .collect()
    }

    /// `max_t |∫ p(t) v(t) - 1|`.
    pub fn pairing_drift(&self) -> f64 {
        self.pairings()
            .iter()
            .fold(0.0, |m, (_, s)| f64::max(m, (s - 1.0).abs()))
    }

    pub fn p0(&self) -> Field {
        self.p.first()
    }

    pub fn v0(&self) -> Field {
        self.v.first()
    }
}

/// Rescales `p` so that `∫ p(0) v(0) = 1`.
pub fn normalize_bundle(
    p: LinearSolution,
    v: LinearSolution,
    eigen: EigenPair,
    t_splice: f64,
    schedule: Schedule,
) -> Result<FloquetBundle> {
    let grid = p.traj.grid().clone();
    let raw = pairing(&grid, p.first().values(), v.first().values());
    if !(raw > 0.0 && raw.is_finite()) {
        return Err(Error::Internal(format!("bundle pairing {raw} is not positive")));
    }
    let p = p.rescaled(1.0 / raw);
    Ok(FloquetBundle {
        p,
        v,
        eigen,
        t_splice,
        t_end: schedule.t_end(),
        schedule,
        raw_pairing: raw,
        separation_rate: None,
    })
}

/// Splices `traj` onto `w` at the first stored time with `‖u - w‖_sup < tol`.
pub fn splice_at_approach(traj: Trajectory, w: &Field, tol: f64) -> Result<Trajectory> {
    let k = traj
        .fields()
        .iter()
        .position(|f| f.sup_distance(w) < tol)
        .ok_or_else(|| {
            let best = traj
                .fields()
                .iter()
                .map(|f| f.sup_distance(w))
                .fold(f64::INFINITY, f64::min);
            Error::Threshold(format!(
                "trajectory never comes within {tol:e} of W (closest {best:e}); tighten tol_L"
            ))
        })?;
    let t = traj.times()[k];
    traj.spliced(t, w.clone())
}

/// Adjoint and forward bundle along a spliced trajectory, normalized. The two
/// solves run concurrently.
pub fn compute_bundle(
    traj: &Trajectory,
    nl: &Nonlinearity,
    eigen: &EigenPair,
    params: &BundleParams,
) -> Result<FloquetBundle> {
    let t_splice = traj
        .splice_time()
        .ok_or_else(|| Error::invalid("trajectory has no splice metadata"))?;
    let sched = params.schedule(t_splice, eigen.lambda);
    let coef = Coefficient::Path { traj, nl };
    let (p, v) = rayon::join(
        || solve_adjoint(&coef, &eigen.phi, &sched, 0),
        || solve_forward_bundle(&coef, eigen, &sched),
    );
    normalize_bundle(p?, v?, eigen.clone(), t_splice, sched)
}

/// `d(t) = ‖p(t)/‖p(t)‖_sup - φ‖_sup` at every stored time.
pub fn convergence_to_phi(bundle: &FloquetBundle) -> Vec<(f64, f64)> {
    let phi = &bundle.eigen.phi;
    (0..bundle.p.len())
        .map(|k| {
            let d = bundle
                .p
                .sup_normalized(k)
                .map_or(f64::INFINITY, |q| q.sup_distance(phi));
            (bundle.p.times()[k], d)
        })
        .collect()
}

/// Result of [`separation_rate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    /// Negative least-squares slope of `ln(‖u̇‖_sup / ‖v‖_sup)`;
    /// `f64::INFINITY` when the projected direction vanishes.
    pub gamma_fit: f64,
    /// `(t, ln(‖u̇(t)‖_sup / ‖v(t)‖_sup))`.
    pub curve: Vec<(f64, f64)>,
}

/// Largest `p(x)·e^{δ|x|}` on the outer half of the domain, relative to its
/// value at the inner edge of that half. At most 1 when `p` decays at least
/// like `e^{-δ|x|}` there.
pub fn decay_excess(p: &Field, delta: f64) -> f64 {
    let g = p.grid();
    let half = 0.25 * (g.x_max() - g.x_min());
    let weighted: Vec<(f64, f64)> = g
        .active()
        .map(|i| {
            let d = g.distance_from_center(i);
            (d, p.values()[i] * (delta * d).exp())
        })
        .filter(|&(d, _)| d >= half)
        .collect();
    let inner = weighted.iter().map(|&(d, _)| d).fold(f64::INFINITY, f64::min);
    let edge = weighted
        .iter()
        .filter(|&&(d, _)| d <= inner + 0.5 * g.dx())
        .map(|&(_, v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let worst = weighted.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    worst / edge
}

/// Projects `h` off the bundle direction, evolves it by the linearized
/// equation and fits the decay of `‖u̇‖ / ‖v‖` over `[t_from, t_to]`.
pub fn separation_rate(
    traj: &Trajectory,
    nl: &Nonlinearity,
    bundle: &FloquetBundle,
    h: &Field,
    window: (f64, f64),
) -> Result<Separation> {
    let p0 = bundle.p0();
    let v0 = bundle.v0();
    let s = p0.dot(h);
    let h0 = h.axpy(-s, &v0);
    if h0.sup() <= 1e-12 * h.sup().max(f64::MIN_POSITIVE) {
        return Ok(Separation {
            gamma_fit: f64::INFINITY,
            curve: Vec::new(),
        });
    }
    let coef = match traj.splice_time() {
        Some(_) => Coefficient::Path { traj, nl },
        None => return Err(Error::invalid("trajectory has no splice metadata")),
    };
    let udot = forward_solve(
        &coef,
        &h0,
        &bundle.schedule,
        None,
        Some(Reprojection {
            p: &bundle.p,
            v: &bundle.v,
        }),
    )?;
    let curve: Vec<(f64, f64)> = (0..udot.len())
        .filter_map(|k| {
            let t = udot.times()[k];
            let kv = bundle.v.index_of(t)?;
            Some((t, udot.log_sup(k) - bundle.v.log_sup(kv)))
        })
        .collect();
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .copied()
        .filter(|(t, y)| *t >= window.0 && *t <= window.1 && y.is_finite())
        .collect();
    if pts.len() < 3 {
        return Err(Error::invalid(format!(
            "separation fit window [{}, {}] holds {} points",
            window.0,
            window.1,
            pts.len()
        )));
    }
    Ok(Separation {
        gamma_fit: -least_squares_slope(&pts),
        curve,
    })
}

/// Same as [`separation_rate`] for a time-independent coefficient.
pub fn separation_rate_frozen(
    coef: &Field,
    bundle: &FloquetBundle,
    h: &Field,
    window: (f64, f64),
) -> Result<Separation> {
    let p0 = bundle.p0();
    let v0 = bundle.v0();
    let h0 = h.axpy(-p0.dot(h), &v0);
    if h0.sup() <= 1e-12 * h.sup().max(f64::MIN_POSITIVE) {
        return Ok(Separation {
            gamma_fit: f64::INFINITY,
            curve: Vec::new(),
        });
    }
    let udot = forward_solve(
        &Coefficient::Frozen(coef.clone()),
        &h0,
        &bundle.schedule,
        None,
        Some(Reprojection {
            p: &bundle.p,
            v: &bundle.v,
        }),
    )?;
    let curve: Vec<(f64, f64)> = (0..udot.len())
        .filter_map(|k| {
            let t = udot.times()[k];
            let kv = bundle.v.index_of(t)?;
            Some((t, udot.log_sup(k) - bundle.v.log_sup(kv)))
        })
        .collect();
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .copied()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .collect();
    if pts.len() < 3 {
        return Err(Error::invalid("separation fit window holds fewer than 3 points"));
    }
    Ok(Separation {
        gamma_fit: -least_squares_slope(&pts),
        curve,
    })
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mt).powi(2)).sum();
    sxy / sxx
}

/// A bundle for the coefficient frozen at `∂_u f(·, W)`: the spliced
/// trajectory that sits at `W` for all `t >= 0`.
pub fn autonomous_bundle(
    nl: &Nonlinearity,
    w: &Field,
    eigen: &EigenPair,
    t_end: f64,
    dt: f64,
    store_every: usize,
) -> Result<FloquetBundle> {
    let coef = Coefficient::Frozen(frozen_coefficient(nl, w));
    let sched = Schedule::uniform(dt, t_end, store_every);
    let (p, v) = rayon::join(
        || solve_adjoint(&coef, &eigen.phi, &sched, 0),
        || solve_forward_bundle(&coef, eigen, &sched),
    );
    normalize_bundle(p?, v?, eigen.clone(), 0.0, sched)
}

/// Result of [`domain_doubling_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct DoublingReport {
    /// Sup distance of the sup-normalized `p(0)` on the original window.
    pub distance: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Sup distance between sup-normalized `p(0)` from the original bundle and
/// from a bundle computed on the doubled domain, restricted to the original
/// window. `p0_doubled` is evaluated on `doubled`, which must share the
/// spacing and centre.
pub fn compare_on_window(p0: &Field, p0_doubled: &Field, tolerance: f64) -> Result<DoublingReport> {
    let g = p0.grid();
    let gd = p0_doubled.grid();
    if (g.dx() - gd.dx()).abs() > 1e-12 * g.dx() {
        return Err(Error::invalid("doubled grid must keep the spacing"));
    }
    let off = ((g.x_min() - gd.x_min()) / g.dx()).round() as usize;
    let a = p0
        .sup_normalized()
        .ok_or_else(|| Error::Internal("zero adjoint".into()))?;
    let b = p0_doubled
        .sup_normalized()
        .ok_or_else(|| Error::Internal("zero adjoint".into()))?;
    let distance = (0..g.len())
        .map(|i| (a.values()[i] - b.values()[i + off]).abs())
        .fold(0.0, f64::max);
    Ok(DoublingReport {
        distance,
        tolerance,
        passed: distance <= tolerance,
    })
}

/// Pads `u` with zeros onto the doubled grid.
pub fn extend_to(u: &Field, doubled: &Arc<Grid>) -> Result<Field> {
    let g = u.grid();
    let off = ((g.x_min() - doubled.x_min()) / g.dx()).round() as usize;
    let mut vals = vec![0.0; doubled.len()];
    vals[off..off + g.len()].copy_from_slice(u.values());
    Field::new(doubled.clone(), vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BoundaryCondition;
    use crate::steady::{ground_state, principal_eigenpair, refine_discrete, second_eigenpair};

    struct Setup {
        nl: Nonlinearity,
        w: Field,
        eigen: EigenPair,
    }

    fn setup(x_max: f64, n: usize) -> Setup {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let g = Arc::new(Grid::symmetric(x_max, n, BoundaryCondition::DirichletZero).unwrap());
        let w = refine_discrete(&nl, &ground_state(&nl, &g).unwrap().w).unwrap();
        let eigen = principal_eigenpair(&nl, &w).unwrap();
        Setup { nl, w, eigen }
    }

    #[test]
    fn coefficient_of_zero_trajectory() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let g = Arc::new(Grid::symmetric(5.0, 11, BoundaryCondition::DirichletZero).unwrap());
        let mut tr = Trajectory::new(g.clone());
        tr.push(0.0, Field::zeros(g.clone())).unwrap();
        tr.push(1.0, Field::zeros(g.clone())).unwrap();
        let c = linearized_coefficient(&tr, &nl, 0.5).unwrap();
        assert!(c.values().iter().all(|&v| (v + 0.3).abs() < 1e-15));
        assert!(linearized_coefficient(&tr, &nl, 2.0).is_err());
        let w = Field::constant(g.clone(), 0.4);
        let sp = tr.spliced(0.5, w.clone()).unwrap();
        let c = linearized_coefficient(&sp, &nl, 0.7).unwrap();
        assert_eq!(c, frozen_coefficient(&nl, &w));
    }

    #[test]
    fn autonomous_bundle_is_separable() {
        let s = setup(20.0, 401);
        let b = autonomous_bundle(&s.nl, &s.w, &s.eigen, 20.0, 0.005, 200).unwrap();
        let lam = s.eigen.lambda;
        for k in 0..b.p.len() {
            let t = b.p.times()[k];
            let dp = b.p.sup_normalized(k).unwrap().sup_distance(&s.eigen.phi);
            let dv = b.v.sup_normalized(k).unwrap().sup_distance(&s.eigen.phi);
            assert!(dp < 1e-10 && dv < 1e-10);
            // growth rates: ln‖v‖ ≈ -λ t, ln‖p‖ ≈ -λ (T - t) up to normalization
            let lv = b.v.log_sup(k);
            assert!((lv + lam * t).abs() < 1e-6, "{lv} {}", -lam * t);
        }
        let lp0 = b.p.log_sup(0);
        let lp1 = b.p.log_sup(b.p.len() - 1);
        assert!(((lp0 - lp1) / 20.0 + lam).abs() < 1e-6);
        assert!(b.pairing_drift() < 1e-12);
        let dist = convergence_to_phi(&b);
        assert!(dist.iter().all(|(_, d)| *d <= 1e-10));
    }

    #[test]
    fn adjoint_decays_faster_than_the_surrogate_rate() {
        let s = setup(20.0, 401);
        let b = autonomous_bundle(&s.nl, &s.w, &s.eigen, 20.0, 0.005, 200).unwrap();
        let delta = 0.9 * (-s.nl.df0(0.0)).sqrt();
        assert!(decay_excess(&b.p0(), delta) <= 1.0 + 1e-9);
        // A flat profile does not decay.
        let flat = Field::constant(s.w.grid().clone(), 1.0);
        assert!(decay_excess(&flat, delta) > 10.0);
    }

    #[test]
    fn normalization_is_scale_invariant() {
        let s = setup(20.0, 401);
        let coef = Coefficient::Frozen(frozen_coefficient(&s.nl, &s.w));
        let sched = Schedule::uniform(0.01, 5.0, 100);
        let v = solve_forward_bundle(&coef, &s.eigen, &sched).unwrap();
        let p1 = solve_adjoint(&coef, &s.eigen.phi, &sched, 0).unwrap();
        let p2 = solve_adjoint(&coef, &s.eigen.phi.scaled(2.0), &sched, 0).unwrap();
        let b1 = normalize_bundle(p1, v.clone(), s.eigen.clone(), 0.0, sched).unwrap();
        let b2 = normalize_bundle(p2, v, s.eigen.clone(), 0.0, sched).unwrap();
        assert!((b1.p0().dot(&b1.v0()) - 1.0).abs() < 1e-14);
        assert!(b1.p0().sup_distance(&b2.p0()) < 1e-13 * b1.p0().sup());
    }

    #[test]
    fn separation_matches_spectral_gap() {
        let s = setup(20.0, 401);
        let b = autonomous_bundle(&s.nl, &s.w, &s.eigen, 40.0, 0.005, 100).unwrap();
        let e2 = second_eigenpair(&s.nl, &s.w, &s.eigen).unwrap();
        let coef = frozen_coefficient(&s.nl, &s.w);
        let sep = separation_rate_frozen(&coef, &b, &e2.phi, (0.0, 40.0)).unwrap();
        let gap = e2.lambda - s.eigen.lambda;
        assert!(((sep.gamma_fit - gap) / gap).abs() < 0.01, "{} vs {gap}", sep.gamma_fit);
        let none = separation_rate_frozen(&coef, &b, &b.v0(), (0.0, 40.0)).unwrap();
        assert!(none.gamma_fit.is_infinite());
    }

    #[test]
    fn duality_is_conserved_for_any_direction() {
        let s = setup(20.0, 401);
        let g = s.w.grid().clone();
        let coef = Coefficient::Frozen(frozen_coefficient(&s.nl, &s.w));
        let sched = Schedule::uniform(0.005, 10.0, 200);
        let p = solve_adjoint(&coef, &s.eigen.phi, &sched, 0).unwrap();
        let h = Field::from_fn(g.clone(), |x| (x * 0.7).sin() * (-0.1 * x * x).exp()).unwrap();
        let ud = solve_linearized(&coef, &h, &sched).unwrap();
        let d0 = p.value(0).dot(&ud.value(0));
        for k in 0..p.len() {
            let d = p.value(k).dot(&ud.value(k));
            assert!((d - d0).abs() <= 1e-10 * d0.abs().max(1.0));
        }
    }

    #[test]
    fn rough_terminal_condition_needs_damping() {
        let s = setup(20.0, 401);
        let g = s.w.grid().clone();
        let coef = Coefficient::Frozen(frozen_coefficient(&s.nl, &s.w));
        let sched = Schedule::uniform(0.005, 60.0, 200);
        let one = Field::constant(g.clone(), 1.0);
        let p = solve_adjoint(&coef, &one, &sched, 4).unwrap();
        let q = p.sup_normalized(0).unwrap();
        assert!(q.sup_distance(&s.eigen.phi) < 1e-3);
    }

    #[test]
    fn doubling_window_comparison() {
        let g = Arc::new(Grid::symmetric(5.0, 11, BoundaryCondition::DirichletZero).unwrap());
        let gd = Arc::new(g.doubled().unwrap());
        let u = Field::from_fn(g.clone(), |x| 1.0 - (x / 5.0).powi(2)).unwrap();
        let ud = extend_to(&u, &gd).unwrap();
        assert_eq!(ud.values()[5..16], *u.values());
        let rep = compare_on_window(&u, &ud, 1e-12).unwrap();
        assert!(rep.passed);
    }
}
