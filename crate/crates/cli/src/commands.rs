use std::fs::File;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rdthreshold::applications::{
    bathtub_optimize, lstar_derivative, mass_of_ground_state, orthogonality_residual, perturbation_fate,
    predicted_sign, random_bumps, uniqueness_gap, BathtubParams, JProfile,
};
use rdthreshold::floquet::{compute_bundle, decay_excess, separation_rate, FloquetBundle};
use rdthreshold::forward::evolve_to_fate;
use rdthreshold::io::{num, read_field, read_trajectory, StoredTrajectory};
use rdthreshold::setup::Lab;
use rdthreshold::steady::{
    ground_state, near_null_ratio, principal_eigenpair, rayleigh_quotient, refine_discrete, second_eigenpair,
};
use rdthreshold::threshold::{radial_indicator, threshold_trajectory, Family};
use rdthreshold::verify;
use rdthreshold::{Config, Field, Grid, Trajectory};

use crate::output::{Outputs, RunManifest};
use crate::{CliError, Command};

pub fn dispatch(cmd: &Command, mut config: Config, out_dir: &Path) -> Result<String, CliError> {
    let manifest = RunManifest::new(format!("{cmd:?}"), &config);
    let mut out = Outputs::new(out_dir, manifest)?;
    let summary = match cmd {
        Command::Steady { .. } => steady(&config, &mut out)?,
        Command::Eigen { .. } => eigen(&config, &mut out)?,
        Command::Simulate { u0, .. } => simulate(&mut config, u0, &mut out)?,
        Command::Threshold { family, r, trajectory, .. } => threshold(&mut config, family, *r, *trajectory, &mut out)?,
        Command::Adjoint { trajectory } => adjoint(&mut config, trajectory, &mut out)?,
        Command::Perturb { trajectory, h, eps } => perturb(&mut config, trajectory, h, eps, &mut out)?,
        Command::Orthogonality { trajectory } => orthogonality(&mut config, trajectory, &mut out)?,
        Command::Dldr { r_grid, fd_step, tol } => dldr(&mut config, r_grid, *fd_step, *tol, &mut out)?,
        Command::Optimize { j, seed, tol } => optimize(&mut config, j, seed, *tol, &mut out)?,
        Command::Verify { criteria } => return verify_cmd(&config, criteria, out),
    };
    let manifest = out.finish()?;
    Ok(format!("{summary} [manifest {}]", manifest.display()))
}

fn parse_num(s: &str, what: &str) -> Result<f64, CliError> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("cannot parse {what} from '{s}'")))
}

/// Builds the lab and refreshes the manifest with calibrated values.
fn lab(config: &mut Config, out: &mut Outputs) -> Result<Lab, CliError> {
    let lab = Lab::from_config(config)?;
    out.manifest.update_config(config);
    Ok(lab)
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))
}

fn steady(config: &Config, out: &mut Outputs) -> Result<String, CliError> {
    let nl = config.nonlinearity()?;
    let g = config.grid()?;
    let gs = ground_state(&nl, &g)?;
    let w = refine_discrete(&nl, &gs.w)?;
    let ep = principal_eigenpair(&nl, &w)?;
    let residual = gs.pde_residual(&nl);
    out.field("W.csv", &gs.w, "W")?;
    out.field("phi.csv", &ep.phi, "phi")?;
    out.table(
        "steady_report.csv",
        &["beta_star", "lambda", "residual"],
        &[vec![num(gs.beta_star), num(ep.lambda), num(residual)]],
    )?;
    Ok(format!(
        "{{\"beta_star\": {}, \"lambda\": {}, \"residual\": {:e}}}",
        gs.beta_star, ep.lambda, residual
    ))
}

fn eigen(config: &Config, out: &mut Outputs) -> Result<String, CliError> {
    let nl = config.nonlinearity()?;
    let g = config.grid()?;
    let w = refine_discrete(&nl, &ground_state(&nl, &g)?.w)?;
    let ep = principal_eigenpair(&nl, &w)?;
    let e2 = second_eigenpair(&nl, &w, &ep)?;
    let rq = rayleigh_quotient(&nl, &w, &ep.phi)?;
    let null = near_null_ratio(&nl, &w);
    out.field("phi.csv", &ep.phi, "phi")?;
    out.field("phi2.csv", &e2.phi, "phi2")?;
    out.table(
        "eigen_report.csv",
        &["lambda", "rayleigh", "iterations", "residual", "lambda2", "near_null_ratio"],
        &[vec![
            num(ep.lambda),
            num(rq),
            ep.iterations.to_string(),
            num(ep.residual),
            num(e2.lambda),
            num(null),
        ]],
    )?;
    Ok(format!("lambda {} lambda2 {} gap {}", ep.lambda, e2.lambda, e2.lambda - ep.lambda))
}

/// `zero | const:V | block:L | two_bump:R:L | <field CSV>`.
fn parse_datum(spec: &str, grid: &Arc<Grid>, out: &mut Outputs) -> Result<Field, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        ["zero"] => Ok(Field::zeros(grid.clone())),
        ["const", v] => {
            let v = parse_num(v, "constant")?;
            let mut f = Field::constant(grid.clone(), v);
            let active = grid.active();
            f.values_mut()[..active.start].fill(0.0);
            f.values_mut()[active.end..].fill(0.0);
            Ok(f)
        }
        ["block", l] => Ok(radial_indicator(grid, 0.0, parse_num(l, "block half-width")?)),
        ["two_bump", r, l] => {
            let r = parse_num(r, "gap")?;
            Ok(radial_indicator(grid, r, r + parse_num(l, "bump width")?))
        }
        _ => {
            let path = Path::new(spec);
            if !path.exists() {
                return Err(CliError::Usage(format!(
                    "unknown datum '{spec}' (zero | const:V | block:L | two_bump:R:L | <field CSV>)"
                )));
            }
            out.manifest.add_input(path)?;
            Ok(read_field(open(path)?, grid)?)
        }
    }
}

fn simulate(config: &mut Config, u0: &str, out: &mut Outputs) -> Result<String, CliError> {
    let nl = config.nonlinearity()?;
    let g = config.grid()?;
    let fate = config.fate(&nl, &g)?;
    out.manifest.update_config(config);
    let datum = parse_datum(u0, &g, out)?;
    let (traj, f) = evolve_to_fate(&nl, &datum, &config.solver(), &fate)?;
    out.trajectory("trajectory.csv", &traj, &[format!("fate = {}", f.label())])?;
    let last = traj.last().map_or(0.0, |u| u.sup());
    out.table(
        "simulate_report.csv",
        &["fate", "t", "sup_u_final"],
        &[vec![f.label().to_string(), num(f.time()), num(last)]],
    )?;
    Ok(format!("{} at t = {}", f.label(), f.time()))
}

fn parse_family(name: &str, r: Option<f64>) -> Result<Family, CliError> {
    match (name, r) {
        ("single_block", None) | ("single_block", Some(0.0)) => Ok(Family::SingleBlock),
        ("single_block", Some(_)) => Err(CliError::Usage("single_block takes no --r".into())),
        ("two_bump", Some(r)) => Ok(Family::TwoBump { r }),
        ("two_bump", None) => Err(CliError::Usage("two_bump needs --r".into())),
        (other, _) => Err(CliError::Usage(format!(
            "unknown family '{other}' (single_block | two_bump)"
        ))),
    }
}

fn threshold(
    config: &mut Config,
    family: &str,
    r: Option<f64>,
    with_traj: bool,
    out: &mut Outputs,
) -> Result<String, CliError> {
    let fam = parse_family(family, r)?;
    let lab = lab(config, out)?;
    let res = lab.threshold(&fam, lab.tol_l)?;
    let r = r.unwrap_or(0.0);
    out.table(
        "threshold.csv",
        &["family", "r", "L_lo", "L_hi", "L_star", "dist_to_W", "T_c"],
        &[vec![
            family.to_string(),
            num(r),
            num(res.l_lo),
            num(res.l_hi),
            num(res.l_star),
            num(res.dist_to_w),
            num(res.t_closest),
        ]],
    )?;
    if with_traj {
        let traj = threshold_trajectory(&res, &lab.w, lab.splice_tol, lab.tol_w)?;
        let meta = [
            format!("family = {family}"),
            format!("r = {}", num(r)),
            format!("L_star = {}", num(res.l_star)),
        ];
        out.trajectory("threshold_trajectory.csv", &traj, &meta)?;
    }
    Ok(format!(
        "{family} r = {r}: L* = {} in [{}, {}], dist_to_W {:e}",
        res.l_star, res.l_lo, res.l_hi, res.dist_to_w
    ))
}

/// Reads a spliced trajectory written by `threshold --trajectory` and computes
/// its bundle with the lab's `W` and eigenpair.
fn load_spliced(lab: &Lab, path: &Path, out: &mut Outputs) -> Result<(Trajectory, FloquetBundle), CliError> {
    out.manifest.add_input(path)?;
    let StoredTrajectory { traj, t_splice, .. } = read_trajectory(open(path)?)?;
    if **traj.grid() != *lab.grid {
        return Err(CliError::Usage(format!(
            "{} was computed on a different grid than the config's",
            path.display()
        )));
    }
    let t_splice = t_splice.ok_or_else(|| {
        CliError::Usage(format!(
            "{} has no splice time; write it with `threshold --trajectory`",
            path.display()
        ))
    })?;
    let traj = traj.spliced(t_splice, lab.w.clone())?;
    let bundle = compute_bundle(&traj, &lab.nl, &lab.eigen, &lab.bundle)?;
    Ok((traj, bundle))
}

fn adjoint(config: &mut Config, path: &Path, out: &mut Outputs) -> Result<String, CliError> {
    let lab = lab(config, out)?;
    let (traj, bundle) = load_spliced(&lab, path, out)?;
    let gap = uniqueness_gap(&traj, &lab.nl, &bundle, lab.solver.startup_steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let h = random_bumps(&mut rng, &lab.grid, 3.0);
    let gamma = separation_rate(&traj, &lab.nl, &bundle, &h, (0.0, bundle.t_end))?.gamma_fit;
    let decay = decay_excess(&bundle.p0(), 0.9 * (-lab.nl.df0(0.0)).sqrt());
    out.field("p0.csv", &bundle.p0(), "p0")?;
    out.field("v0.csv", &bundle.v0(), "v0")?;
    out.table(
        "adjoint_report.csv",
        &["lambda", "T_splice", "T_end", "pairing_drift", "uniqueness_gap", "gamma_fit", "decay_excess"],
        &[vec![
            num(bundle.eigen.lambda),
            num(bundle.t_splice),
            num(bundle.t_end),
            num(bundle.pairing_drift()),
            num(gap),
            num(gamma),
            num(decay),
        ]],
    )?;
    Ok(format!(
        "lambda {} T_splice {} uniqueness_gap {:e} gamma_fit {}",
        bundle.eigen.lambda, bundle.t_splice, gap, gamma
    ))
}

fn perturb(config: &mut Config, path: &Path, h_path: &Path, eps: &[f64], out: &mut Outputs) -> Result<String, CliError> {
    let lab = lab(config, out)?;
    let (traj, bundle) = load_spliced(&lab, path, out)?;
    out.manifest.add_input(h_path)?;
    let h = read_field(open(h_path)?, &lab.grid)?;
    let u0 = traj.first().expect("trajectory has a datum").clone();
    let s = bundle.p0().dot(&h);
    let rows = perturbation_fate(&lab.nl, &u0, &h, eps, &lab.threshold_params(lab.tol_l))?;
    let pred = predicted_sign(s);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.eps),
                num(s),
                pred.to_string(),
                r.observed.label().to_string(),
                num(r.observed.time()),
            ]
        })
        .collect();
    out.table("perturb.csv", &["eps", "S", "predicted", "observed", "t_cert"], &table)?;
    let agree = rows.iter().filter(|r| r.observed.sign() == pred).count();
    Ok(format!("S = {s:e}, predicted {pred}; {agree}/{} fates agree", rows.len()))
}

fn orthogonality(config: &mut Config, path: &Path, out: &mut Outputs) -> Result<String, CliError> {
    let lab = lab(config, out)?;
    let (traj, bundle) = load_spliced(&lab, path, out)?;
    let series = orthogonality_residual(&traj, &bundle)?;
    let rows: Vec<Vec<String>> = series
        .times
        .iter()
        .zip(&series.rho)
        .map(|(t, r)| vec![num(*t), num(*r)])
        .collect();
    out.table("orthogonality.csv", &["t", "rho"], &rows)?;
    Ok(format!(
        "median rho {:e}, max {:e} over {} times",
        series.median,
        series.max,
        rows.len()
    ))
}

fn dldr(config: &mut Config, r_grid: &[f64], fd_step: f64, tol: f64, out: &mut Outputs) -> Result<String, CliError> {
    let lab = lab(config, out)?;
    let reports = r_grid
        .par_iter()
        .map(|&r| lstar_derivative(&lab, r, tol, fd_step))
        .collect::<rdthreshold::Result<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|d| {
            vec![
                num(d.r),
                num(d.l_star),
                num(d.p_at_r),
                num(d.p_at_lr),
                num(d.formula_value),
                num(d.fd_value),
                num(d.rel_gap),
            ]
        })
        .collect();
    out.table(
        "dldr.csv",
        &["r", "L_star", "p_at_r", "p_at_L_plus_r", "formula", "finite_difference", "rel_gap"],
        &rows,
    )?;
    let worst = reports.iter().map(|d| d.rel_gap).fold(0.0, f64::max);
    Ok(format!("{} radii, largest rel_gap {:.3}%", reports.len(), 100.0 * worst))
}

fn optimize(config: &mut Config, j: &str, seed: &str, tol: f64, out: &mut Outputs) -> Result<String, CliError> {
    let j: JProfile = j.parse()?;
    let lab = lab(config, out)?;
    let family = match seed.split(':').collect::<Vec<_>>().as_slice() {
        ["single_block"] => Family::SingleBlock,
        ["two_bump", r] => Family::TwoBump { r: parse_num(r, "gap")? },
        _ => {
            let path = Path::new(seed);
            if !path.exists() {
                return Err(CliError::Usage(format!(
                    "unknown seed '{seed}' (single_block | two_bump:R | <field CSV>)"
                )));
            }
            out.manifest.add_input(path)?;
            Family::ScaledProfile {
                shape: read_field(open(path)?, &lab.grid)?,
            }
        }
    };
    let params = BathtubParams {
        tol_l: tol,
        fp_tol: config.fp_tol,
        kkt_tol: config.kkt_tol,
        max_outer: config.max_outer,
    };
    let b = bathtub_optimize(&lab, j, &family, &params)?;
    let w_mass = mass_of_ground_state(&lab.ground, &lab.nl);
    out.field("u0_opt.csv", &b.u0_opt, "u0")?;
    out.field("p0.csv", &b.p, "p0")?;
    let hist: Vec<Vec<String>> = b
        .history
        .iter()
        .enumerate()
        .map(|(k, h)| {
            vec![
                k.to_string(),
                num(h.tau),
                h.accepted.to_string(),
                num(h.mass),
                num(h.c),
                num(h.change),
                num(h.stationarity),
            ]
        })
        .collect();
    out.table(
        "optimize_history.csv",
        &["step", "tau", "accepted", "mass", "c", "change", "stationarity"],
        &hist,
    )?;
    out.table(
        "optimize_report.csv",
        &[
            "mass",
            "c",
            "converged",
            "iterations",
            "kkt_violation",
            "min_p_inside",
            "max_p_outside",
            "sandwich",
            "W_mass",
        ],
        &[vec![
            num(b.mass),
            num(b.c),
            b.converged.to_string(),
            b.iterations.to_string(),
            num(b.kkt_violation),
            num(b.sandwich.min_inside),
            num(b.sandwich.max_outside),
            b.sandwich.passed.to_string(),
            num(w_mass),
        ]],
    )?;
    Ok(format!(
        "mass {} (int W {}), c {}, {} after {} steps",
        b.mass,
        w_mass,
        b.c,
        if b.converged { "converged" } else { "NOT converged" },
        b.iterations
    ))
}

fn verify_cmd(config: &Config, criteria: &[usize], mut out: Outputs) -> Result<String, CliError> {
    let ids: Vec<usize> = if criteria.is_empty() {
        verify::CRITERIA.iter().map(|c| c.id).collect()
    } else {
        criteria.to_vec()
    };
    for &id in &ids {
        verify::criterion(id)?;
    }
    let mut rows = Vec::new();
    let mut failed = 0;
    for &id in &ids {
        let v = verify::run(id, config)?;
        println!("{v}");
        failed += usize::from(!v.passed);
        rows.push(vec![
            id.to_string(),
            v.criterion.title.to_string(),
            if v.passed { "PASS" } else { "FAIL" }.to_string(),
            format!("{:.1}", v.seconds),
            v.detail.clone(),
        ]);
    }
    out.table("verify.csv", &["criterion", "title", "verdict", "seconds", "detail"], &rows)?;
    out.finish()?;
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} criteria failed", ids.len())));
    }
    Ok(format!("all {} criteria passed", ids.len()))
}
