//! Applications of the adjoint bundle: fate prediction for perturbations of a
//! threshold datum, the orthogonality of `p` and `u_t`, the derivative of
//! `L*(r)` for the two-bump family, and the bathtub optimizer.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::floquet::{solve_adjoint, Coefficient, FloquetBundle};
use crate::model::{Fate, Field, Grid, Nonlinearity, Trajectory};
use crate::setup::Lab;
use crate::steady::GroundState;
use crate::threshold::{decided_fate, find_critical_length, Family, ThresholdParams, ThresholdResult};

/// `S > 0` predicts invasion, `S < 0` extinction.
pub fn predicted_sign(pairing: f64) -> i32 {
    if pairing > 0.0 {
        1
    } else if pairing < 0.0 {
        -1
    } else {
        0
    }
}

/// Largest `ε` with `0 <= u0 + ε h <= 1` nodewise.
pub fn admissible_eps(u0: &Field, h: &Field) -> f64 {
    u0.values()
        .iter()
        .zip(h.values())
        .map(|(&u, &d)| {
            if d > 0.0 {
                (1.0 - u) / d
            } else if d < 0.0 {
                u / -d
            } else {
                f64::INFINITY
            }
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationRow {
    pub eps: f64,
    pub observed: Fate,
}

/// Evolves `u0 + ε h` for every `ε` in `eps_list` (concurrently).
pub fn perturbation_fate(
    nl: &Nonlinearity,
    u0: &Field,
    h: &Field,
    eps_list: &[f64],
    params: &ThresholdParams,
) -> Result<Vec<PerturbationRow>> {
    if !u0.is_compatible(h) {
        return Err(Error::invalid("perturbation lives on a different grid"));
    }
    let cap = admissible_eps(u0, h);
    if let Some(&e) = eps_list.iter().find(|&&e| !(e > 0.0) || e > cap * (1.0 + 1e-12)) {
        return Err(Error::invalid(format!(
            "inadmissible perturbation: eps = {e} leaves [0, 1] (largest admissible {cap:e})"
        )));
    }
    eps_list
        .par_iter()
        .map(|&eps| {
            let vals = u0
                .values()
                .iter()
                .zip(h.values())
                .map(|(u, d)| (u + eps * d).clamp(0.0, 1.0))
                .collect();
            let (observed, _) = decided_fate(nl, &Field::new(u0.grid().clone(), vals)?, params)?;
            Ok(PerturbationRow { eps, observed })
        })
        .collect()
}

/// Norm used in the admissibility margin `|S| >= c0 ‖h‖ ‖p(0)‖`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginNorm {
    /// `|S| >= c0 ‖h‖_1 ‖p(0)‖_sup`.
    L1,
    /// `|S| >= c0 ‖h‖_sup ‖p(0)‖_1`.
    Sup,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarnessParams {
    pub directions: usize,
    pub margin: f64,
    pub norm: MarginNorm,
    /// Largest number of halvings of `ε`.
    pub levels: usize,
    /// `ε |S|` must exceed this multiple of the pairing of the bracket gap.
    pub floor_factor: f64,
    /// Number of smallest levels that must agree.
    pub stable_levels: usize,
    pub eps_max: f64,
    pub seed: u64,
    pub max_draws: usize,
}

impl Default for HarnessParams {
    fn default() -> Self {
        HarnessParams {
            directions: 20,
            margin: 0.1,
            norm: MarginNorm::L1,
            levels: 10,
            floor_factor: 50.0,
            stable_levels: 3,
            eps_max: 0.5,
            seed: 20240917,
            max_draws: 5000,
        }
    }
}

/// One direction of the Monte-Carlo harness.
#[derive(Debug, Clone)]
pub struct DirectionOutcome {
    pub index: usize,
    pub h: Field,
    pub pairing: f64,
    /// `|S| / (‖h‖ ‖p(0)‖)` in the chosen norm.
    pub margin: f64,
    pub predicted: i32,
    pub rows: Vec<PerturbationRow>,
    /// Fate shared by the `stable_levels` smallest `ε`, if they agree.
    pub stabilized: Option<Fate>,
    pub eps_stable: Option<f64>,
}

impl DirectionOutcome {
    pub fn agrees(&self) -> bool {
        self.stabilized.is_some_and(|f| f.sign() == self.predicted)
    }
}

/// `|∫ p(0) (datum(L_hi) - datum(L_lo))|`, the pairing scale below which a
/// perturbation cannot be resolved against the bracket.
pub fn bracket_pairing(result: &ThresholdResult, p0: &Field) -> Result<f64> {
    let grid = p0.grid();
    let lo = result.family.datum(grid, result.l_lo)?;
    let hi = result.family.datum(grid, result.l_hi)?;
    Ok(p0.dot(&hi.axpy(-1.0, &lo)).abs())
}

/// Sum of three Gaussian bumps with random signed amplitudes in `(-1, 1)`,
/// centres within `reach` of the domain centre and widths in `(0.3, 1.5)`;
/// zero outside the active nodes.
pub fn random_bumps(rng: &mut impl Rng, grid: &Arc<Grid>, reach: f64) -> Field {
    let c0 = grid.center();
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                c0 + rng.gen_range(-reach..reach),
                rng.gen_range(0.3..1.5),
            )
        })
        .collect();
    let active = grid.active();
    let vals = (0..grid.len())
        .map(|i| {
            if !active.contains(&i) {
                return 0.0;
            }
            let x = grid.x(i);
            bumps.iter().map(|(a, c, s)| a * (-((x - c) / s).powi(2)).exp()).sum()
        })
        .collect();
    Field::from_raw(grid.clone(), vals)
}

/// [`random_bumps`] clipped to `[-u0, 1 - u0]`, so that `u0 + ε h` stays in
/// `[0, 1]` for every `ε <= 1`: nonnegative where `u0 = 0`, nonpositive where
/// `u0 = 1`.
pub fn random_direction(rng: &mut impl Rng, u0: &Field, reach: f64) -> Field {
    let g = random_bumps(rng, u0.grid(), reach);
    let vals = g
        .values()
        .iter()
        .zip(u0.values())
        .map(|(&h, &u)| h.clamp(-u, 1.0 - u))
        .collect();
    Field::from_raw(u0.grid().clone(), vals)
}

fn margin_of(norm: MarginNorm, s: f64, h: &Field, p0: &Field) -> f64 {
    let (hn, pn) = (h.norms(), p0.norms());
    match norm {
        MarginNorm::L1 => s.abs() / (hn.l1 * pn.sup),
        MarginNorm::Sup => s.abs() / (hn.sup * pn.l1),
    }
}

/// Draws sign-changing admissible directions with `margin >= params.margin`, shrinks `ε`
/// by halving from `min(eps_max, admissible)` down to the bracket floor, and
/// compares the stabilized fate with the sign of `S = ∫ p(0) h`.
pub fn monte_carlo_harness(
    nl: &Nonlinearity,
    result: &ThresholdResult,
    bundle: &FloquetBundle,
    tparams: &ThresholdParams,
    params: &HarnessParams,
) -> Result<Vec<DirectionOutcome>> {
    let grid = bundle.p.traj.grid().clone();
    let u0 = result.datum(&grid)?;
    let p0 = bundle.p0();
    let gap = bracket_pairing(result, &p0)?;
    let reach = match result.family {
        Family::TwoBump { r } => r + result.l_star + 3.0,
        Family::SingleBlock => result.l_star + 3.0,
        _ => 0.25 * (grid.x_max() - grid.x_min()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut picked = Vec::new();
    let mut draws = 0;
    while picked.len() < params.directions {
        draws += 1;
        if draws > params.max_draws {
            return Err(Error::Budget(format!(
                "only {} of {} directions met the margin {} in {} draws",
                picked.len(),
                params.directions,
                params.margin,
                params.max_draws
            )));
        }
        let h = random_direction(&mut rng, &u0, reach);
        let s = p0.dot(&h);
        let m = margin_of(params.norm, s, &h, &p0);
        if h.max() > 0.0 && h.min() < 0.0 && m >= params.margin {
            picked.push((h, s, m));
        }
    }
    picked
        .into_par_iter()
        .enumerate()
        .map(|(index, (h, s, margin))| {
            let top = params.eps_max.min(admissible_eps(&u0, &h));
            let floor = params.floor_factor * gap / s.abs();
            let eps_list: Vec<f64> = (0..=params.levels)
                .map(|k| top * 0.5_f64.powi(k as i32))
                .take_while(|&e| e >= floor)
                .collect();
            let rows = if eps_list.is_empty() {
                Vec::new()
            } else {
                perturbation_fate(nl, &u0, &h, &eps_list, tparams)?
            };
            let tail = &rows[rows.len().saturating_sub(params.stable_levels)..];
            let stable = tail.len() == params.stable_levels
                && tail.iter().all(|r| r.observed.sign() == tail[0].observed.sign());
            Ok(DirectionOutcome {
                index,
                h,
                pairing: s,
                margin,
                predicted: predicted_sign(s),
                stabilized: stable.then(|| tail[tail.len() - 1].observed),
                eps_stable: stable.then(|| tail[0].eps),
                rows,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalitySeries {
    pub times: Vec<f64>,
    pub rho: Vec<f64>,
    pub max: f64,
    pub median: f64,
    /// Set when `‖∂_t u‖` or `‖p‖` vanished at some time (reported as 0).
    pub degenerate: bool,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `ρ(t) = |∫ p ∂_t u| / (‖p‖_2 ‖∂_t u‖_2)` at stored times before the
/// splice, with `∂_t u` by centred differences.
pub fn orthogonality_residual(traj: &Trajectory, bundle: &FloquetBundle) -> Result<OrthogonalitySeries> {
    let ts = traj.times();
    if ts.len() < 3 {
        return Err(Error::invalid(format!(
            "orthogonality needs at least 3 stored times, got {}",
            ts.len()
        )));
    }
    let t_c = traj.splice_time().unwrap_or(f64::INFINITY);
    let fields = traj.fields();
    let (mut times, mut rho) = (Vec::new(), Vec::new());
    let mut degenerate = false;
    for k in 1..ts.len() - 1 {
        let t = ts[k];
        if !(t > 0.0 && t < t_c) {
            continue;
        }
        let Some(kp) = bundle.p.index_of(t) else {
            continue;
        };
        let ut = fields[k + 1]
            .axpy(-1.0, &fields[k - 1])
            .scaled(1.0 / (ts[k + 1] - ts[k - 1]));
        let p = bundle.p.raw(kp);
        let denom = p.norms().l2 * ut.norms().l2;
        let r = if denom > 0.0 && denom.is_finite() {
            p.dot(&ut).abs() / denom
        } else {
            degenerate = true;
            0.0
        };
        times.push(t);
        rho.push(r);
    }
    if rho.is_empty() {
        return Err(Error::invalid("no stored time before the splice is shared with p"));
    }
    Ok(OrthogonalitySeries {
        max: rho.iter().copied().fold(0.0, f64::max),
        median: median(&rho),
        times,
        rho,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeReport {
    pub r: f64,
    pub l_star: f64,
    pub p_at_r: f64,
    pub p_at_lr: f64,
    pub formula_value: f64,
    pub fd_value: f64,
    pub rel_gap: f64,
}

/// `(L*)'(r)` from `p^r(0, r) / p^r(0, L* + r) - 1` and from a central finite
/// difference of `L*` (one-sided at `r = 0`). The three threshold searches
/// run concurrently.
pub fn lstar_derivative(lab: &Lab, r: f64, tol_l: f64, fd_step: f64) -> Result<DerivativeReport> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::invalid(format!("r must be >= 0, got {r}")));
    }
    if !(fd_step > 0.0) {
        return Err(Error::invalid(format!("fd_step must be positive, got {fd_step}")));
    }
    let left = if r >= fd_step { r - fd_step } else { r };
    let family = |r: f64| Family::TwoBump { r };
    let (centre, (lo, hi)) = rayon::join(
        || lab.threshold_run(&family(r), tol_l),
        || {
            rayon::join(
                || {
                    if left < r {
                        lab.threshold(&family(left), tol_l).map(|x| x.l_star)
                    } else {
                        Ok(f64::NAN)
                    }
                },
                || lab.threshold(&family(r + fd_step), tol_l).map(|x| x.l_star),
            )
        },
    );
    let centre = centre?;
    let l_star = centre.result.l_star;
    let lo = if left < r { lo? } else { l_star };
    let hi = hi?;
    let c = lab.grid.center();
    let p0 = centre.bundle.p0();
    let p_at_r = p0.interpolate(c + r);
    let p_at_lr = p0.interpolate(c + l_star + r);
    let formula_value = p_at_r / p_at_lr - 1.0;
    let fd_value = (hi - lo) / (r + fd_step - left);
    Ok(DerivativeReport {
        r,
        l_star,
        p_at_r,
        p_at_lr,
        formula_value,
        fd_value,
        rel_gap: (formula_value - fd_value).abs() / fd_value.abs().max(1e-12),
    })
}

/// `p⁰(0, 0)` against `p⁰(0, L*(0))` for the single block: their order is
/// the sign of `(L*)'(0)`. Reported, never asserted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignProbe {
    pub l_star: f64,
    pub p_centre: f64,
    pub p_edge: f64,
    pub sign: i32,
}

pub fn sign_probe(lab: &Lab, tol_l: f64) -> Result<SignProbe> {
    let run = lab.threshold_run(&Family::SingleBlock, tol_l)?;
    let p0 = run.bundle.p0();
    let c = lab.grid.center();
    let l_star = run.result.l_star;
    let (p_centre, p_edge) = (p0.interpolate(c), p0.interpolate(c + l_star));
    Ok(SignProbe {
        l_star,
        p_centre,
        p_edge,
        sign: predicted_sign(p_centre - p_edge),
    })
}

/// Sup distance between the normalized `p(0)` of `bundle` and that of the
/// adjoint started from the positive terminal datum `1 + cos(0.3 x) / 2`
/// along the same spliced trajectory.
pub fn uniqueness_gap(traj: &Trajectory, nl: &Nonlinearity, bundle: &FloquetBundle, startup: usize) -> Result<f64> {
    let other = Field::from_fn(traj.grid().clone(), |x| 1.0 + 0.5 * (0.3 * x).cos())?;
    let coef = Coefficient::Path { traj, nl };
    let p2 = solve_adjoint(&coef, &other, &bundle.schedule, startup)?;
    let zero = || Error::Internal("zero adjoint".into());
    let a = bundle.p.sup_normalized(0).ok_or_else(zero)?;
    let b = p2.sup_normalized(0).ok_or_else(zero)?;
    Ok(a.sup_distance(&b))
}

/// The cost density `j` of the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JProfile {
    /// `j(u) = u`: the optimal datum is an indicator of a superlevel set of `p`.
    Linear,
    /// `j(u) = u²`: the optimal datum is `clamp(p / 2c, 0, 1)`.
    Quadratic,
}

impl JProfile {
    pub fn j(&self, u: f64) -> f64 {
        match self {
            JProfile::Linear => u,
            JProfile::Quadratic => u * u,
        }
    }

    pub fn dj(&self, u: f64) -> f64 {
        match self {
            JProfile::Linear => 1.0,
            JProfile::Quadratic => 2.0 * u,
        }
    }
}

impl std::str::FromStr for JProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(JProfile::Linear),
            "quadratic" => Ok(JProfile::Quadratic),
            _ => Err(Error::invalid(format!("unknown j profile '{s}' (linear|quadratic)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathtubParams {
    /// Bisection tolerance of the inner threshold search.
    pub tol_l: f64,
    pub fp_tol: f64,
    pub kkt_tol: f64,
    pub max_outer: usize,
}

/// `min_{u0 = 1} p >= c - kkt_tol >= max_{u0 = 0, |x| <= x_max/2} p - 2 kkt_tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sandwich {
    pub min_inside: f64,
    pub max_outside: f64,
    pub passed: bool,
}

/// One trial step of the optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterStep {
    /// Cost of the restored trial datum.
    pub mass: f64,
    pub c: f64,
    /// Mass of the symmetric difference with the current datum.
    pub change: f64,
    /// Mass moved by a unit projected step from the current datum.
    pub stationarity: f64,
    pub tau: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct BathtubResult {
    pub u0_opt: Field,
    pub c: f64,
    pub mass: f64,
    pub iterations: usize,
    pub kkt_violation: f64,
    pub converged: bool,
    pub sandwich: Sandwich,
    /// Sup-normalized `p(0)` of the final datum.
    pub p: Field,
    /// The inner search's invading end.
    pub fate_hi: Fate,
    pub history: Vec<OuterStep>,
}

fn symmetric_difference(a: &Field, b: &Field) -> f64 {
    let g = a.grid();
    a.values()
        .iter()
        .zip(b.values())
        .enumerate()
        .map(|(i, (x, y))| g.weight(i) * (x - y).abs())
        .sum()
}

/// Measure of the fractional set `{0 < u0 < 1}` where `|p - c j'(u0)|` exceeds
/// `kkt_tol`.
fn kkt_violation(j: JProfile, u0: &Field, p: &Field, c: f64, kkt_tol: f64) -> f64 {
    let g = u0.grid();
    u0.values()
        .iter()
        .zip(p.values())
        .enumerate()
        .filter(|&(_, (&u, &q))| u > 0.0 && u < 1.0 && (q - c * j.dj(u)).abs() > kkt_tol)
        .map(|(i, _)| g.weight(i))
        .fold(0.0, |a, w| a + w)
}

fn sandwich(u0: &Field, p: &Field, c: f64, kkt_tol: f64) -> Sandwich {
    let g = u0.grid();
    let half = 0.25 * (g.x_max() - g.x_min());
    let mut min_inside = f64::INFINITY;
    let mut max_outside = f64::NEG_INFINITY;
    for (i, (&u, &q)) in u0.values().iter().zip(p.values()).enumerate() {
        if u >= 1.0 {
            min_inside = min_inside.min(q);
        } else if u <= 0.0 && g.distance_from_center(i) <= half && g.active().contains(&i) {
            max_outside = max_outside.max(q);
        }
    }
    Sandwich {
        min_inside,
        max_outside,
        passed: min_inside >= c - kkt_tol && c - kkt_tol >= max_outside - 2.0 * kkt_tol,
    }
}

fn normalized_p0(bundle: &FloquetBundle) -> Result<Field> {
    bundle
        .p0()
        .sup_normalized()
        .ok_or_else(|| Error::Internal("zero adjoint".into()))
}

fn cost(j: JProfile, u: &Field) -> f64 {
    let g = u.grid();
    u.values().iter().enumerate().map(|(i, &v)| g.weight(i) * j.j(v)).sum()
}

/// A threshold datum with the sup-normalized adjoint of its trajectory.
struct Iterate {
    datum: Field,
    mass: f64,
    p: Field,
    fate_hi: Fate,
}

fn adjoint_of(lab: &Lab, j: JProfile, res: &ThresholdResult) -> Result<Iterate> {
    let datum = res.datum(&lab.grid)?;
    let (_, bundle) = lab.bundle_for(res, Some(lab.lenient_tol_w(res)))?;
    Ok(Iterate {
        mass: cost(j, &datum),
        p: normalized_p0(&bundle)?,
        datum,
        fate_hi: res.fate_hi,
    })
}

/// Pulls `shape` back onto the threshold by rescaling; the search starts at
/// scale 1 with fine steps since the shape is near threshold already.
fn restore(lab: &Lab, j: JProfile, shape: &Field, tol_l: f64) -> Result<Iterate> {
    let params = ThresholdParams {
        l_start: 1.0,
        growth: 1.05,
        ..lab.threshold_params(tol_l)
    };
    let family = Family::ScaledProfile { shape: shape.clone() };
    let res = find_critical_length(&family, &lab.nl, &lab.grid, &lab.w, &params)?;
    adjoint_of(lab, j, &res)
}

/// `clamp(u + tau (p - c j'(u)), 0, 1)` with `c` chosen so that the step is
/// orthogonal to `p`, i.e. stays on the threshold to first order.
fn projected_step(j: JProfile, u: &Field, p: &Field, tau: f64) -> (Field, f64) {
    let step = |c: f64| {
        let vals = u
            .values()
            .iter()
            .zip(p.values())
            .map(|(&u, &q)| (u + tau * (q - c * j.dj(u))).clamp(0.0, 1.0))
            .collect();
        Field::from_raw(u.grid().clone(), vals)
    };
    let moved = |c: f64| p.dot(&step(c).axpy(-1.0, u));
    let (mut lo, mut hi) = (0.0, 1.0);
    while moved(hi) > 0.0 && hi < 1e12 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if moved(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    (step(c), c)
}

const TAU_START: f64 = 2.0;
const TAU_MIN: f64 = 1e-6;

/// Minimizes the cost `∫ j(u0)` over threshold data, starting from the
/// threshold member of `seed`. Each step moves along `p(0) - c j'(u0)`,
/// clips to `[0, 1]` and rescales back onto the threshold; steps that do not
/// lower the cost are retried with a quarter of the step, and the step then
/// regrows only gradually. The plain bathtub map
/// (datum := superlevel set of its own `p(0)`) cycles between a block and a
/// datum with a hole, so it is not used. Converged when a unit step moves
/// the datum by at most `fp_tol` in mass. `max_outer` bounds the number of
/// threshold searches.
pub fn bathtub_optimize(lab: &Lab, j: JProfile, seed: &Family, params: &BathtubParams) -> Result<BathtubResult> {
    if params.max_outer == 0 {
        return Err(Error::invalid("optimize.max_outer must be >= 1"));
    }
    let mut state = adjoint_of(lab, j, &lab.threshold(seed, params.tol_l)?)?;
    let mut tau = TAU_START;
    // After a failure, steps regrow slowly past half the failed size.
    let mut tau_cap = f64::INFINITY;
    let mut history = Vec::new();
    let mut converged = false;
    let mut c;
    loop {
        let (unit, c_unit) = projected_step(j, &state.datum, &state.p, 1.0);
        c = c_unit;
        let stationarity = symmetric_difference(&unit, &state.datum);
        if stationarity <= params.fp_tol {
            converged = true;
            break;
        }
        if history.len() >= params.max_outer || tau < TAU_MIN {
            break;
        }
        let (shape, c_step) = projected_step(j, &state.datum, &state.p, tau);
        let it = restore(lab, j, &shape, params.tol_l)?;
        let accepted = it.mass < state.mass;
        history.push(OuterStep {
            mass: it.mass,
            c: c_step,
            change: symmetric_difference(&it.datum, &state.datum),
            stationarity,
            tau,
            accepted,
        });
        if accepted {
            state = it;
            tau = (2.0 * tau).min(tau_cap);
            tau_cap *= 1.5;
        } else {
            tau_cap = 0.5 * tau;
            tau *= 0.25;
        }
    }
    Ok(BathtubResult {
        kkt_violation: kkt_violation(j, &state.datum, &state.p, c, params.kkt_tol),
        sandwich: sandwich(&state.datum, &state.p, c, params.kkt_tol),
        converged,
        iterations: history.len(),
        u0_opt: state.datum,
        c,
        mass: state.mass,
        p: state.p,
        fate_hi: state.fate_hi,
        history,
    })
}

/// `∫ W dx` on the grid plus the exponential tails beyond the domain,
/// `2 W(x_max) / sqrt(|f'(0)|)`.
pub fn mass_of_ground_state(ground: &GroundState, nl: &Nonlinearity) -> f64 {
    let w = &ground.w;
    let g = w.grid();
    let n = g.len();
    let interior: f64 = (1..n - 1).map(|i| g.weight(i) * w.values()[i]).sum();
    let ends = 0.5 * g.dx() * 2.0 * ground.edge_value;
    let k = nl.df0(0.0).abs().sqrt();
    interior + ends + 2.0 * ground.edge_value / k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floquet::autonomous_bundle;
    use crate::model::BoundaryCondition;
    use crate::steady::{ground_state, principal_eigenpair, refine_discrete};

    #[test]
    fn admissible_eps_respects_the_band() {
        let g = Arc::new(Grid::symmetric(5.0, 11, BoundaryCondition::DirichletZero).unwrap());
        let u0 = Field::from_fn(g.clone(), |x| if x.abs() < 2.0 { 1.0 } else { 0.0 }).unwrap();
        let mut h = Field::zeros(g.clone());
        h.values_mut()[5] = -0.5;
        h.values_mut()[1] = 0.25;
        assert!((admissible_eps(&u0, &h) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn random_directions_are_admissible() {
        let g = Arc::new(Grid::symmetric(20.0, 401, BoundaryCondition::DirichletZero).unwrap());
        let u0 = Family::SingleBlock.datum(&g, 1.44).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let h = random_direction(&mut rng, &u0, 5.0);
            assert!(admissible_eps(&u0, &h) >= 1.0);
            assert!(h.values()[0] == 0.0 && h.values()[400] == 0.0);
        }
    }

    #[test]
    fn steady_trajectory_is_degenerate() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let g = Arc::new(Grid::symmetric(20.0, 401, BoundaryCondition::DirichletZero).unwrap());
        let w = refine_discrete(&nl, &ground_state(&nl, &g).unwrap().w).unwrap();
        let eig = principal_eigenpair(&nl, &w).unwrap();
        let bundle = autonomous_bundle(&nl, &w, &eig, 5.0, 0.01, 10).unwrap();
        let times = vec![0.0, 0.1, 0.2, 0.3];
        let fields = vec![w.clone(); 4];
        let traj = Trajectory::from_parts(g, times, fields).unwrap();
        let s = orthogonality_residual(&traj, &bundle).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.max, 0.0);
        assert_eq!(s.median, 0.0);
    }

    #[test]
    fn too_short_trajectory_is_rejected() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let g = Arc::new(Grid::symmetric(20.0, 401, BoundaryCondition::DirichletZero).unwrap());
        let w = refine_discrete(&nl, &ground_state(&nl, &g).unwrap().w).unwrap();
        let eig = principal_eigenpair(&nl, &w).unwrap();
        let bundle = autonomous_bundle(&nl, &w, &eig, 1.0, 0.01, 10).unwrap();
        assert!(orthogonality_residual(&Trajectory::stationary(w), &bundle).is_err());
    }

    #[test]
    fn ground_state_mass_is_domain_independent() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let mass = |x_max: f64, n: usize| {
            let g = Arc::new(Grid::symmetric(x_max, n, BoundaryCondition::DirichletZero).unwrap());
            mass_of_ground_state(&ground_state(&nl, &g).unwrap(), &nl)
        };
        let (m2, m1) = (mass(40.0, 1601), mass(80.0, 3201));
        assert!(m1 > 0.0 && (m1 - m2).abs() <= 1e-8, "{m1} {m2}");
        // closed form: 2·3a/(k·sqrt(A² - B²))·ln((A + B + D)/(A + B - D))
        let a: f64 = 0.3;
        let (aa, bb) = (1.0 + a, ((1.0 + a).powi(2) - 4.5 * a).sqrt());
        let d = (aa * aa - bb * bb).sqrt();
        let exact = 2.0 * 3.0 * a / (a.sqrt() * d) * ((aa + bb + d) / (aa + bb - d)).ln();
        assert!((m2 - exact).abs() < 1e-6, "{m2} vs {exact}");
        let g = Arc::new(Grid::symmetric(40.0, 1601, BoundaryCondition::DirichletZero).unwrap());
        let nl2 = Nonlinearity::cubic(0.2).unwrap();
        let m3 = mass_of_ground_state(&ground_state(&nl2, &g).unwrap(), &nl2);
        assert!(m3 > 0.0 && m3.is_finite() && (m3 - m2).abs() > 1e-3);
    }

    #[test]
    fn superlevel_datum_tracks_the_level() {
        let g = Arc::new(Grid::symmetric(10.0, 201, BoundaryCondition::DirichletZero).unwrap());
        let p = Field::from_fn(g.clone(), |x| (-x * x / 4.0).exp()).unwrap();
        let fam = Family::Superlevel { p };
        let u = fam.datum(&g, 0.5).unwrap();
        // {exp(-x²/4) > 1/2} = (-2 sqrt(ln 2), 2 sqrt(ln 2))
        let exact = 4.0 * 2f64.ln().sqrt();
        assert!((u.integral() - exact).abs() < 2e-3, "{}", u.integral());
    }

    #[test]
    fn projected_step_is_orthogonal_to_p() {
        let g = Arc::new(Grid::symmetric(10.0, 201, BoundaryCondition::DirichletZero).unwrap());
        let p = Field::from_fn(g.clone(), |x| (-x * x / 8.0).exp()).unwrap();
        let u = Field::from_fn(g.clone(), |x| if x.abs() < 1.0 { 1.0 } else if x.abs() < 2.0 { 0.3 } else { 0.0 }).unwrap();
        for j in [JProfile::Linear, JProfile::Quadratic] {
            for tau in [0.1, 1.0, 10.0] {
                let (v, c) = projected_step(j, &u, &p, tau);
                assert!(c > 0.0);
                assert!(p.dot(&v.axpy(-1.0, &u)).abs() < 1e-10);
                assert!(v.min() >= 0.0 && v.max() <= 1.0);
            }
        }
    }
}
