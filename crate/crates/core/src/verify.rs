//! The acceptance suite. Every criterion builds its own pipeline from the
//! config, so each can be run (and timed) on its own.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::applications::{
    bathtub_optimize, lstar_derivative, mass_of_ground_state, monte_carlo_harness, orthogonality_residual,
    random_bumps, uniqueness_gap, BathtubParams, HarnessParams, JProfile,
};
use crate::error::{Error, Result};
use crate::floquet::{
    autonomous_bundle, compare_on_window, compute_bundle, extend_to, frozen_coefficient, separation_rate,
    separation_rate_frozen,
};
use crate::forward::truncation_check;
use crate::model::{cubic_beta_star, Config, Field};
use crate::setup::Lab;
use crate::steady::{
    ground_state, near_null_ratio, principal_eigenpair, rayleigh_quotient, refine_discrete, second_eigenpair,
};
use crate::threshold::{stored_evolution, Family};

/// Bisection tolerance for pipelines that need the trajectory to hover at
/// `W` for a long time (bundle, harness, doubling).
pub const TIGHT_TOL_L: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
pub struct Criterion {
    pub id: usize,
    pub title: &'static str,
    /// Wall-clock budget in seconds.
    pub budget: f64,
}

pub const CRITERIA: [Criterion; 11] = [
    Criterion { id: 1, title: "ground state", budget: 1.0 },
    Criterion { id: 2, title: "principal spectrum", budget: 5.0 },
    Criterion { id: 3, title: "autonomous Floquet oracle", budget: 10.0 },
    Criterion { id: 4, title: "adjoint uniqueness", budget: 60.0 },
    Criterion { id: 5, title: "exponential separation", budget: 120.0 },
    Criterion { id: 6, title: "sharp threshold", budget: 600.0 },
    Criterion { id: 7, title: "instability harness", budget: 900.0 },
    Criterion { id: 8, title: "orthogonality", budget: 600.0 },
    Criterion { id: 9, title: "derivative formula", budget: 1800.0 },
    Criterion { id: 10, title: "bathtub optimizer", budget: 2700.0 },
    Criterion { id: 11, title: "truncation validity", budget: 600.0 },
];

#[derive(Debug, Clone)]
pub struct Verdict {
    pub criterion: Criterion,
    /// Numeric outcome and runtime within budget.
    pub passed: bool,
    pub numeric_passed: bool,
    pub seconds: f64,
    pub detail: String,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.criterion;
        write!(
            f,
            "{} {:>2} {} ({:.1} s of {} s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            c.id,
            c.title,
            self.seconds,
            c.budget,
            self.detail
        )
    }
}

struct Check {
    passed: bool,
    detail: String,
}

impl Check {
    fn new(passed: bool, detail: String) -> Self {
        Check { passed, detail }
    }
}

pub fn criterion(id: usize) -> Result<Criterion> {
    CRITERIA
        .iter()
        .copied()
        .find(|c| c.id == id)
        .ok_or_else(|| Error::invalid(format!("no acceptance criterion {id} (1..=11)")))
}

/// Runs one criterion. Pipeline errors count as failures and end up in the
/// detail text.
pub fn run(id: usize, config: &Config) -> Result<Verdict> {
    let criterion = criterion(id)?;
    let mut config = config.clone();
    let t0 = Instant::now();
    let out = match id {
        1 => ground_state_check(&config),
        2 => spectrum_check(&config),
        3 => autonomous_check(&config),
        4 => uniqueness_check(&mut config),
        5 => separation_check(&mut config),
        6 => threshold_check(&mut config),
        7 => harness_check(&mut config),
        8 => orthogonality_check(&mut config),
        9 => derivative_check(&mut config),
        10 => bathtub_check(&mut config),
        _ => truncation_validity_check(&mut config),
    };
    let seconds = t0.elapsed().as_secs_f64();
    let (numeric_passed, mut detail) = match out {
        Ok(c) => (c.passed, c.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let in_time = seconds < criterion.budget;
    if !in_time {
        detail.push_str("; over budget");
    }
    Ok(Verdict {
        criterion,
        passed: numeric_passed && in_time,
        numeric_passed,
        seconds,
        detail,
    })
}

pub fn run_all(config: &Config) -> Vec<Verdict> {
    CRITERIA
        .iter()
        .map(|c| run(c.id, config).expect("known criterion"))
        .collect()
}

fn ground_state_check(config: &Config) -> Result<Check> {
    let nl = config.nonlinearity()?;
    let g = config.grid()?;
    let g2 = Arc::new(g.refined()?);
    let gs = ground_state(&nl, &g)?;
    let r1 = gs.pde_residual(&nl);
    let r2 = ground_state(&nl, &g2)?.pde_residual(&nl);
    let ratio = r1 / r2;
    let w0 = gs.w.values()[g.nearest(g.center())];
    let err0 = (w0 - cubic_beta_star(config.a)).abs();
    Ok(Check::new(
        r1 <= 1e-3 && (3.5..=4.5).contains(&ratio) && err0 <= 1e-6,
        format!("residual {r1:.3e}, refinement ratio {ratio:.3}, |W(0) - beta*| {err0:.1e}"),
    ))
}

fn spectrum_check(config: &Config) -> Result<Check> {
    let nl = config.nonlinearity()?;
    let g = config.grid()?;
    let w = refine_discrete(&nl, &ground_state(&nl, &g)?.w)?;
    let ep = principal_eigenpair(&nl, &w)?;
    let rq_gap = (rayleigh_quotient(&nl, &w, &ep.phi)? - ep.lambda).abs();
    let null = near_null_ratio(&nl, &w);
    let bound = 5.0 * g.dx() * g.dx();
    Ok(Check::new(
        ep.lambda < 0.0 && rq_gap <= 1e-8 && null <= bound,
        format!(
            "lambda {:.8}, |rayleigh - lambda| {rq_gap:.1e}, |A W'|/|W'| {null:.2e} (bound {bound:.1e})",
            ep.lambda
        ),
    ))
}

fn autonomous_check(config: &Config) -> Result<Check> {
    let nl = config.nonlinearity()?;
    let g = config.grid()?;
    let w = refine_discrete(&nl, &ground_state(&nl, &g)?.w)?;
    let ep = principal_eigenpair(&nl, &w)?;
    let horizon = 20.0;
    let every = ((0.5 / config.dt).round() as usize).max(1);
    let b = autonomous_bundle(&nl, &w, &ep, horizon, config.dt, every)?;
    let lam = ep.lambda;
    // v(t) = φ e^{-λt}; p(t) = e^{λt} φ / ∫φ², from ∫ p(0) v(0) = 1.
    let p_start = ep.phi.scaled(1.0 / ep.phi.dot(&ep.phi));
    let rel = |got: &Field, want: &Field| got.sup_distance(want) / want.sup();
    let mut worst_p: f64 = 0.0;
    let mut worst_v: f64 = 0.0;
    for k in 0..b.v.len() {
        let t = b.v.times()[k];
        worst_v = worst_v.max(rel(&b.v.value(k), &ep.phi.scaled((-lam * t).exp())));
    }
    for k in 0..b.p.len() {
        let t = b.p.times()[k];
        worst_p = worst_p.max(rel(&b.p.value(k), &p_start.scaled((lam * t).exp())));
    }
    Ok(Check::new(
        worst_p <= 1e-4 && worst_v <= 1e-4,
        format!("sup-relative error p {worst_p:.1e}, v {worst_v:.1e} over {horizon} time units"),
    ))
}

fn uniqueness_check(config: &mut Config) -> Result<Check> {
    let lab = Lab::from_config(config)?;
    let run = lab.threshold_run(&Family::SingleBlock, TIGHT_TOL_L)?;
    let d = uniqueness_gap(&run.traj, &lab.nl, &run.bundle, lab.solver.startup_steps)?;
    Ok(Check::new(
        d <= 1e-3,
        format!(
            "sup distance of normalized p(0) {d:.2e} (terminal phi vs 1 + cos/2), T_end {:.1}",
            run.bundle.t_end
        ),
    ))
}

fn separation_check(config: &mut Config) -> Result<Check> {
    let lab = Lab::from_config(config)?;
    let run = lab.threshold_run(&Family::SingleBlock, TIGHT_TOL_L)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dirs: Vec<Field> = (0..10).map(|_| random_bumps(&mut rng, &lab.grid, 3.0)).collect();
    let window = (0.0, run.bundle.t_end);
    let gammas = dirs
        .par_iter()
        .map(|h| separation_rate(&run.traj, &lab.nl, &run.bundle, h, window).map(|s| s.gamma_fit))
        .collect::<Result<Vec<f64>>>()?;
    let min_gamma = gammas.iter().copied().fold(f64::INFINITY, f64::min);

    // Autonomous case: the decay of a generic direction is the spectral gap.
    let e2 = second_eigenpair(&lab.nl, &lab.w, &lab.eigen)?;
    let gap = e2.lambda - lab.eigen.lambda;
    let horizon = 40.0;
    let b = autonomous_bundle(&lab.nl, &lab.w, &lab.eigen, horizon, lab.solver.dt, 100)?;
    let coef = frozen_coefficient(&lab.nl, &lab.w);
    let h = random_bumps(&mut rng, &lab.grid, 3.0);
    let auto = separation_rate_frozen(&coef, &b, &h, (0.5 * horizon, horizon))?.gamma_fit;
    let rel = ((auto - gap) / gap).abs();
    Ok(Check::new(
        min_gamma > 0.0 && rel <= 0.05,
        format!("min gamma_fit over 10 directions {min_gamma:.4}; autonomous gamma_fit {auto:.4} vs gap {gap:.4} ({:.2}%)", 100.0 * rel),
    ))
}

/// Families and bracket width of the sharp-threshold criterion.
const THRESHOLD_TOL: f64 = 1e-5;

fn threshold_families() -> Vec<Family> {
    vec![
        Family::SingleBlock,
        Family::TwoBump { r: 0.5 },
        Family::TwoBump { r: 1.0 },
        Family::TwoBump { r: 2.0 },
    ]
}

fn threshold_check(config: &mut Config) -> Result<Check> {
    let lab = Lab::from_config(config)?;
    let results = threshold_families()
        .par_iter()
        .map(|f| lab.threshold(f, THRESHOLD_TOL))
        .collect::<Result<Vec<_>>>()?;
    let mut ok = true;
    let mut parts = Vec::new();
    for r in &results {
        let good = r.width() <= THRESHOLD_TOL
            && r.fate_lo.is_extinction()
            && r.fate_hi.is_invasion()
            && r.dist_to_w <= 1e-3;
        ok &= good;
        let name = match r.family {
            Family::TwoBump { r } => format!("two_bump({r})"),
            ref f => f.to_string(),
        };
        parts.push(format!(
            "{name} L* {:.6} width {:.1e} dist {:.1e}",
            r.l_star,
            r.width(),
            r.dist_to_w
        ));
    }
    Ok(Check::new(ok, parts.join("; ")))
}

fn harness_check(config: &mut Config) -> Result<Check> {
    let lab = Lab::from_config(config)?;
    let run = lab.threshold_run(&Family::SingleBlock, TIGHT_TOL_L)?;
    let params = HarnessParams {
        seed: config.seed,
        ..HarnessParams::default()
    };
    let out = monte_carlo_harness(
        &lab.nl,
        &run.result,
        &run.bundle,
        &lab.threshold_params(TIGHT_TOL_L),
        &params,
    )?;
    let agree = out.iter().filter(|d| d.agrees()).count();
    let eps: Vec<f64> = out.iter().filter_map(|d| d.eps_stable).collect();
    let eps_min = eps.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Check::new(
        agree == params.directions && out.len() == params.directions,
        format!(
            "{agree}/{} directions agree; smallest stabilized eps {eps_min:.2e}",
            params.directions
        ),
    ))
}

fn median_rho(lab: &Lab, tol_l: f64) -> Result<f64> {
    let res = lab.threshold(&Family::SingleBlock, tol_l)?;
    let (traj, bundle) = lab.bundle_for(&res, Some(lab.lenient_tol_w(&res)))?;
    Ok(orthogonality_residual(&traj, &bundle)?.median)
}

fn orthogonality_check(config: &mut Config) -> Result<Check> {
    let lab = Lab::from_config(config)?;
    let rho = [1e-6, 1e-7, 1e-4]
        .par_iter()
        .map(|&tol| median_rho(&lab, tol))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Check::new(
        rho[0] <= 0.05 && rho[1] < rho[2],
        format!(
            "median rho at tol_L 1e-6: {:.2e}; 1e-7: {:.2e}; 1e-4: {:.2e}",
            rho[0], rho[1], rho[2]
        ),
    ))
}

/// Finite-difference step and bisection tolerance of the derivative check.
const FD_STEP: f64 = 0.05;
const DERIVATIVE_TOL_L: f64 = 1e-9;

fn derivative_check(config: &mut Config) -> Result<Check> {
    let lab = Lab::from_config(config)?;
    let fine = {
        let mut c = config.clone();
        c.n = 2 * config.n - 1;
        c.dt = 0.5 * config.dt;
        Lab::on_grid(&mut c, Arc::new(lab.grid.refined()?))?
    };
    let rs = [0.25, 0.5, 1.0];
    let mut ok = true;
    let mut parts = Vec::new();
    for &r in &rs {
        let (coarse, refined) = rayon::join(
            || lstar_derivative(&lab, r, DERIVATIVE_TOL_L, FD_STEP),
            || lstar_derivative(&fine, r, DERIVATIVE_TOL_L, FD_STEP),
        );
        let (coarse, refined) = (coarse?, refined?);
        ok &= coarse.rel_gap <= 0.05 && refined.rel_gap < coarse.rel_gap;
        parts.push(format!(
            "r {r}: rel_gap {:.2}% -> {:.2}%",
            100.0 * coarse.rel_gap,
            100.0 * refined.rel_gap
        ));
    }
    Ok(Check::new(ok, parts.join("; ")))
}

fn bathtub_check(config: &mut Config) -> Result<Check> {
    let lab = Lab::from_config(config)?;
    let params = BathtubParams {
        tol_l: DERIVATIVE_TOL_L,
        fp_tol: config.fp_tol,
        kkt_tol: config.kkt_tol,
        max_outer: config.max_outer,
    };
    let seeds = [Family::SingleBlock, Family::TwoBump { r: 0.5 }];
    let runs = seeds
        .iter()
        .map(|s| bathtub_optimize(&lab, JProfile::Linear, s, &params))
        .collect::<Result<Vec<_>>>()?;
    let w_mass = mass_of_ground_state(&lab.ground, &lab.nl);
    let mut ok = true;
    let mut parts = Vec::new();
    for (s, b) in seeds.iter().zip(&runs) {
        ok &= b.converged && b.sandwich.passed && b.kkt_violation <= params.kkt_tol && b.mass < w_mass;
        parts.push(format!(
            "{s}: mass {:.5} c {:.4} converged {} in {} steps, kkt {:.1e}, sandwich {:.4} >= c >= {:.4} ({})",
            b.mass,
            b.c,
            b.converged,
            b.iterations,
            b.kkt_violation,
            b.sandwich.min_inside,
            b.sandwich.max_outside,
            if b.sandwich.passed { "ok" } else { "broken" }
        ));
    }
    let spread = (runs[0].mass - runs[1].mass).abs();
    ok &= spread <= 2.0 * params.fp_tol;
    parts.push(format!("seed spread {spread:.1e}; int W {w_mass:.5}"));
    Ok(Check::new(ok, parts.join("; ")))
}

fn truncation_validity_check(config: &mut Config) -> Result<Check> {
    let lab = Lab::from_config(config)?;
    let run = lab.threshold_run(&Family::SingleBlock, TIGHT_TOL_L)?;
    let t_splice = run.bundle.t_splice;

    // Same datum, same storage and splice time, on twice the domain.
    let gd = Arc::new(lab.grid.doubled()?);
    let big = Lab::on_grid(config, gd.clone())?;
    let u0 = extend_to(&run.result.datum(&lab.grid)?, &gd)?;
    let params = big.threshold_params(TIGHT_TOL_L);
    let k_end = (t_splice / params.solver.dt).round() as usize;
    let traj = stored_evolution(&big.nl, &u0, &params, k_end)?.spliced(t_splice, big.w.clone())?;
    let bundle = compute_bundle(&traj, &big.nl, &big.eigen, &big.bundle)?;
    let doubling = compare_on_window(&run.bundle.p0(), &bundle.p0(), 1e-6)?;

    let mut trunc_ok = truncation_check(&run.result.mid_traj, &lab.nl).passed;
    let others = threshold_families()
        .par_iter()
        .map(|f| lab.threshold(f, THRESHOLD_TOL))
        .collect::<Result<Vec<_>>>()?;
    let mut failed = Vec::new();
    for r in &others {
        let rep = truncation_check(&r.mid_traj, &lab.nl);
        if !rep.passed {
            failed.push(format!("{}: {rep}", r.family));
        }
        trunc_ok &= rep.passed;
    }
    Ok(Check::new(
        doubling.passed && trunc_ok,
        format!(
            "doubling changes p(0) by {:.1e} on the window; truncation check {} on {} threshold runs{}",
            doubling.distance,
            if trunc_ok { "passed" } else { "failed" },
            others.len() + 1,
            if failed.is_empty() { String::new() } else { format!(" ({})", failed.join("; ")) }
        ),
    ))
}
