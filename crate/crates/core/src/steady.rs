//! The ground state `W` (`-W'' = f(W)`, `W(0) = β*`, `W -> 0` at infinity) and
//! the spectrum of the linearization `A = -D2 - diag(∂_u f(·, W))`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{apply_second_difference, second_difference, Tridiagonal};
use crate::model::{pairing, BoundaryCondition, Field, Grid, Nonlinearity};
use crate::quadrature::GaussLegendre;

/// Below this value `W` is continued by its linearized exponential tail.
const TAIL_PASTE: f64 = 1e-100;

#[derive(Debug, Clone)]
pub struct GroundState {
    pub w: Field,
    pub beta_star: f64,
    /// `√|f'(0)|`, the tail decay rate.
    pub decay_rate: f64,
    /// `W` at the boundary node before it is pinned by the boundary condition.
    pub edge_value: f64,
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda: f64,
    /// Sup-normalized, positive at interior nodes.
    pub phi: Field,
    pub iterations: usize,
    pub residual: f64,
}

/// `x(w_lo) - x(w_hi) = ∫_{w_lo}^{w_hi} ds / √(-2F(s))`, with the
/// substitutions `s = β* - τ²` near the top and `s = e^σ` below `β*/2`, which
/// make both integrands smooth.
struct Orbit<'a> {
    nl: &'a Nonlinearity,
    beta: f64,
    gl: GaussLegendre,
}

impl Orbit<'_> {
    fn minus_two_f(&self, s: f64) -> f64 {
        (-2.0 * self.nl.primitive(s)).max(f64::MIN_POSITIVE)
    }

    fn span(&self, w_lo: f64, w_hi: f64) -> f64 {
        let split = 0.5 * self.beta;
        let mut total = 0.0;
        if w_hi > split {
            let lo = w_lo.max(split);
            let (t_a, t_b) = ((self.beta - w_hi).max(0.0).sqrt(), (self.beta - lo).sqrt());
            total += self.gl.integrate(t_a, t_b, |t| {
                let s = self.beta - t * t;
                if t == 0.0 {
                    2.0 / (2.0 * self.nl.f0(self.beta)).sqrt()
                } else {
                    2.0 * t / self.minus_two_f(s).sqrt()
                }
            });
        }
        if w_lo < split {
            let hi = w_hi.min(split);
            total += self.gl.integrate(w_lo.ln(), hi.ln(), |sg| {
                let s = sg.exp();
                s / self.minus_two_f(s).sqrt()
            });
        }
        total
    }

    /// Solves `span(w, w_prev) = gap` for `w < w_prev`.
    fn step_down(&self, w_prev: f64, gap: f64) -> Result<f64> {
        let target = |w: f64| self.span(w, w_prev) - gap;
        let mut hi = w_prev.ln();
        let mut lo = hi - 1.0;
        let mut expand = 0;
        while target(lo.exp()) < 0.0 {
            hi = lo;
            lo -= 1.0;
            expand += 1;
            if expand > 800 {
                return Err(Error::NotConverged {
                    what: "ground-state quadrature bracket",
                    iterations: expand,
                    residual: gap,
                });
            }
        }
        // Newton in ln w, safeguarded by the bracket [lo, hi].
        let mut y = 0.5 * (lo + hi);
        for _ in 0..200 {
            let w = y.exp();
            let g = target(w);
            if g > 0.0 {
                lo = y;
            } else {
                hi = y;
            }
            let slope = -w / self.minus_two_f(w).sqrt();
            let mut next = y - g / slope;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - y).abs() <= 1e-15 * y.abs().max(1.0) || hi - lo <= 1e-15 {
                return Ok(next.exp());
            }
            y = next;
        }
        Err(Error::NotConverged {
            what: "ground-state quadrature",
            iterations: 200,
            residual: target(y.exp()).abs(),
        })
    }
}

/// `W` by phase-plane quadrature of the first integral `½W'² + F(W) = 0`.
pub fn ground_state(nl: &Nonlinearity, grid: &Arc<Grid>) -> Result<GroundState> {
    if !nl.is_homogeneous() {
        return Err(Error::Unsupported(
            "quadrature ground state needs a homogeneous nonlinearity; use refine_discrete".into(),
        ));
    }
    if !grid.is_symmetric() {
        return Err(Error::invalid("ground state needs a grid symmetric about 0"));
    }
    let beta = nl.beta_star()?;
    let decay_rate = (-nl.df0(0.0)).sqrt();
    let orbit = Orbit {
        nl,
        beta,
        gl: GaussLegendre::new(12),
    };
    let n = grid.len();
    let half = n / 2;
    // Distinct distances from the centre, increasing: nodes half..n.
    let mut values = vec![0.0; n];
    let (mut d_prev, mut w_prev) = (0.0, beta);
    for i in half..n {
        let d = grid.distance_from_center(i);
        let w = if d == 0.0 {
            beta
        } else if w_prev < TAIL_PASTE {
            let kappa = orbit.minus_two_f(w_prev).sqrt() / w_prev;
            w_prev * (-kappa * (d - d_prev)).exp()
        } else {
            orbit.step_down(w_prev, d - d_prev)?
        };
        values[i] = w;
        values[n - 1 - i] = w;
        d_prev = d;
        w_prev = w;
    }
    let edge_value = values[n - 1];
    if grid.bc() == BoundaryCondition::DirichletZero {
        values[0] = 0.0;
        values[n - 1] = 0.0;
    }
    Ok(GroundState {
        w: Field::new(grid.clone(), values)?,
        beta_star: beta,
        decay_rate,
        edge_value,
    })
}

impl GroundState {
    /// Sup of `-W_xx - f(W)` over the interior nodes for the sampled profile,
    /// i.e. with the unpinned boundary values. This isolates the
    /// discretization residual from the domain-truncation jump at the ends.
    pub fn pde_residual(&self, nl: &Nonlinearity) -> f64 {
        let grid = self.w.grid();
        let mut v = self.w.values().to_vec();
        let n = v.len();
        v[0] = self.edge_value;
        v[n - 1] = self.edge_value;
        let h2 = 1.0 / (grid.dx() * grid.dx());
        (1..n - 1)
            .map(|i| (-(v[i - 1] - 2.0 * v[i] + v[i + 1]) * h2 - nl.f0(v[i])).abs())
            .fold(0.0, f64::max)
    }
}

/// `-D2 w - f(x, w)` at the active nodes (zero elsewhere).
pub fn residual(nl: &Nonlinearity, w: &Field) -> Field {
    let grid = w.grid();
    let mut out = vec![0.0; grid.len()];
    apply_second_difference(grid, w.values(), &mut out);
    for i in grid.active() {
        out[i] = -out[i] - nl.multiplier(grid.x(i)) * nl.f0(w.values()[i]);
    }
    Field::from_raw(grid.clone(), out)
}

/// Newton's method on the discrete problem `-D2 W = f(x, W)`, started at
/// `seed`. For a homogeneous nonlinearity on a symmetric grid the iteration is
/// carried out on even functions, which removes the near-null translation mode.
pub fn refine_discrete(nl: &Nonlinearity, seed: &Field) -> Result<Field> {
    let grid = seed.grid().clone();
    if nl.is_homogeneous() && grid.is_symmetric() {
        refine_even(nl, seed)
    } else {
        refine_full(nl, seed)
    }
}

const NEWTON_TOL: f64 = 1e-13;
const NEWTON_MAX: usize = 60;

/// Absolute tolerance, or roundoff stagnation once the residual is small.
fn converged(res: f64, prev: f64) -> bool {
    res <= NEWTON_TOL || (res < 1e-9 && res > 0.5 * prev)
}

fn refine_even(nl: &Nonlinearity, seed: &Field) -> Result<Field> {
    let grid = seed.grid().clone();
    let n = grid.len();
    let mid = n / 2;
    let end = grid.active().end;
    let m = end - mid;
    let h2 = 1.0 / (grid.dx() * grid.dx());
    let mut w = seed.values().to_vec();
    let mut scratch = Vec::new();
    let mut prev = f64::INFINITY;
    for it in 0..NEWTON_MAX {
        let r = residual(nl, &Field::from_raw(grid.clone(), w.clone()));
        let res = r.values()[mid..end].iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if converged(res, prev) {
            return Ok(Field::new(grid, w)?);
        }
        let mut jac = Tridiagonal::zeros(m);
        for k in 0..m {
            let i = mid + k;
            jac.diag[k] = 2.0 * h2 - nl.df0(w[i]);
            jac.lower[k] = -h2;
            jac.upper[k] = -h2;
        }
        jac.lower[0] = 0.0;
        if n % 2 == 1 {
            jac.upper[0] = -2.0 * h2;
        } else {
            jac.diag[0] -= h2;
        }
        if grid.bc() == BoundaryCondition::NeumannZero {
            jac.lower[m - 1] = -2.0 * h2;
            jac.upper[m - 1] = 0.0;
        } else {
            jac.upper[m - 1] = 0.0;
        }
        let mut d: Vec<f64> = r.values()[mid..end].iter().map(|v| -v).collect();
        jac.solve_in_place(&mut d, &mut scratch)?;
        for k in 0..m {
            w[mid + k] += d[k];
            w[n - 1 - (mid + k)] = w[mid + k];
        }
        prev = res;
        if it + 1 == NEWTON_MAX {
            return Err(Error::NotConverged {
                what: "discrete ground-state Newton",
                iterations: NEWTON_MAX,
                residual: res,
            });
        }
    }
    unreachable!()
}

fn refine_full(nl: &Nonlinearity, seed: &Field) -> Result<Field> {
    let grid = seed.grid().clone();
    let active = grid.active();
    let d2 = second_difference(&grid);
    let mut w = seed.values().to_vec();
    let mut scratch = Vec::new();
    let mut damping: f64 = 1.0;
    let mut last = f64::INFINITY;
    for _ in 0..4 * NEWTON_MAX {
        let r = residual(nl, &Field::from_raw(grid.clone(), w.clone()));
        let res = r.sup();
        if converged(res, last) {
            return Ok(Field::new(grid, w)?);
        }
        damping = if res < last { (damping * 2.0).min(1.0) } else { damping * 0.5 };
        last = res;
        let mut jac = d2.affine(0.0, -1.0);
        for (k, i) in active.clone().enumerate() {
            jac.diag[k] -= nl.multiplier(grid.x(i)) * nl.df0(w[i]);
        }
        let mut d: Vec<f64> = r.values()[active.clone()].iter().map(|v| -v).collect();
        jac.solve_in_place(&mut d, &mut scratch)?;
        for (k, i) in active.clone().enumerate() {
            w[i] += damping * d[k];
        }
    }
    Err(Error::NotConverged {
        what: "damped Newton for the heterogeneous ground state",
        iterations: 4 * NEWTON_MAX,
        residual: last,
    })
}

/// The linearized operator `A = -D2 - diag(∂_u f(x, W))` on the active nodes.
pub fn linearized_operator(nl: &Nonlinearity, w: &Field) -> Tridiagonal {
    let grid = w.grid();
    let mut a = second_difference(grid).affine(0.0, -1.0);
    for (k, i) in grid.active().enumerate() {
        a.diag[k] -= nl.multiplier(grid.x(i)) * nl.df0(w.values()[i]);
    }
    a
}

/// `(∫ψ'² - ∫∂_u f(W) ψ²) / ∫ψ²` with forward differences, which equals
/// `⟨ψ, Aψ⟩ / ⟨ψ, ψ⟩` in the grid pairing.
pub fn rayleigh_quotient(nl: &Nonlinearity, w: &Field, psi: &Field) -> Result<f64> {
    let grid = w.grid();
    let mut v = psi.values().to_vec();
    let active = grid.active();
    v[..active.start].fill(0.0);
    v[active.end..].fill(0.0);
    let norm = pairing(grid, &v, &v);
    if norm == 0.0 {
        return Err(Error::invalid("Rayleigh quotient of the zero field"));
    }
    let dx = grid.dx();
    let grad: f64 = v.windows(2).map(|p| (p[1] - p[0]).powi(2)).sum::<f64>() / dx;
    let pot: f64 = (0..grid.len())
        .map(|i| grid.weight(i) * nl.multiplier(grid.x(i)) * nl.df0(w.values()[i]) * v[i] * v[i])
        .sum();
    Ok((grad - pot) / norm)
}

/// Weighted pairing restricted to the active nodes.
fn dot_active(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let off = grid.active().start;
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(k, (x, y))| grid.weight(k + off) * x * y)
        .sum()
}

struct Iterate {
    rho: f64,
    vec: Vec<f64>,
    iterations: usize,
    residual: f64,
}

/// Shifted inverse iteration for the eigenvalue of `a` nearest the shift,
/// orthogonal to `deflate`. Re-shifts to `ρ - 1e-3` after `warm` iterations.
fn inverse_iteration(
    grid: &Grid,
    a: &Tridiagonal,
    start: Vec<f64>,
    shift: f64,
    warm: usize,
    deflate: &[&[f64]],
) -> Result<Iterate> {
    const MAX_ITER: usize = 500;
    let m = a.len();
    let scale = a
        .diag
        .iter()
        .zip(&a.lower)
        .zip(&a.upper)
        .map(|((d, l), u)| d.abs() + l.abs() + u.abs())
        .fold(0.0, f64::max);
    let project = |v: &mut Vec<f64>| {
        for q in deflate {
            let c = dot_active(grid, v, q) / dot_active(grid, q, q);
            for (x, y) in v.iter_mut().zip(q.iter()) {
                *x -= c * y;
            }
        }
        let nrm = dot_active(grid, v, v).sqrt();
        for x in v.iter_mut() {
            *x /= nrm;
        }
    };
    let mut v = start;
    project(&mut v);
    let mut shifted = a.affine(-shift, 1.0);
    let mut av = vec![0.0; m];
    let mut scratch = Vec::new();
    let mut residual = f64::INFINITY;
    for it in 1..=MAX_ITER {
        shifted.solve_in_place(&mut v, &mut scratch)?;
        project(&mut v);
        a.mul(&v, &mut av);
        let rho = dot_active(grid, &v, &av);
        residual = av
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - rho * y).powi(2))
            .sum::<f64>()
            .sqrt()
            / (m as f64).sqrt();
        if residual <= 1e-12 * scale && it > warm {
            return Ok(Iterate {
                rho,
                vec: v,
                iterations: it,
                residual,
            });
        }
        if it == warm {
            shifted = a.affine(-(rho - 1e-3), 1.0);
        }
    }
    Err(Error::NotConverged {
        what: "inverse iteration",
        iterations: MAX_ITER,
        residual,
    })
}

fn to_field(grid: &Arc<Grid>, active_values: &[f64]) -> Field {
    let mut full = vec![0.0; grid.len()];
    full[grid.active()].copy_from_slice(active_values);
    Field::from_raw(grid.clone(), full)
}

fn sign_and_sup_normalize(grid: &Arc<Grid>, v: &[f64]) -> Field {
    let f = to_field(grid, v);
    let (imax, _) = f
        .values()
        .iter()
        .enumerate()
        .fold((0, 0.0_f64), |(bi, bv), (i, x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) });
    let s = f.values()[imax];
    f.scaled(1.0 / s)
}

/// Smallest eigenvalue of `A` and its positive, sup-normalized eigenvector.
pub fn principal_eigenpair(nl: &Nonlinearity, w: &Field) -> Result<EigenPair> {
    let grid = w.grid().clone();
    if grid.bc() != BoundaryCondition::DirichletZero {
        return Err(Error::Unsupported(
            "the principal eigenpair is computed with dirichlet_zero".into(),
        ));
    }
    let a = linearized_operator(nl, w);
    let guess = rayleigh_quotient(nl, w, w)?;
    let start: Vec<f64> = w.values()[grid.active()].to_vec();
    let it = inverse_iteration(&grid, &a, start, guess - 0.5, 5, &[])?;
    let phi = sign_and_sup_normalize(&grid, &it.vec);
    if let Some(i) = grid.active().find(|&i| phi.values()[i] <= 0.0) {
        return Err(Error::PositivityLost {
            what: "principal eigenfunction",
            value: phi.values()[i],
            x: grid.x(i),
            t: 0.0,
        });
    }
    Ok(EigenPair {
        lambda: it.rho,
        phi,
        iterations: it.iterations,
        residual: it.residual,
    })
}

/// The second eigenpair, by inverse iteration deflated against `φ`. The
/// eigenvector is sup-normalized with a positive largest entry.
pub fn second_eigenpair(nl: &Nonlinearity, w: &Field, principal: &EigenPair) -> Result<EigenPair> {
    let grid = w.grid().clone();
    let a = linearized_operator(nl, w);
    let phi: Vec<f64> = principal.phi.values()[grid.active()].to_vec();
    let start: Vec<f64> = grid
        .active()
        .map(|i| (grid.x(i) - grid.center()) * principal.phi.values()[i] + 1e-3 * phi[0])
        .collect();
    let it = inverse_iteration(&grid, &a, start, principal.lambda - 0.5, 40, &[&phi])?;
    Ok(EigenPair {
        lambda: it.rho,
        phi: sign_and_sup_normalize(&grid, &it.vec),
        iterations: it.iterations,
        residual: it.residual,
    })
}

/// Centered differences of `w` in `x` (zero at the end nodes).
pub fn centered_derivative(w: &Field) -> Field {
    let grid = w.grid();
    let n = grid.len();
    let v = w.values();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (v[i + 1] - v[i - 1]) / (2.0 * grid.dx());
    }
    Field::from_raw(grid.clone(), d)
}

/// `‖A W'‖₂ / ‖W'‖₂` for the centered-difference derivative `W'`.
pub fn near_null_ratio(nl: &Nonlinearity, w: &Field) -> f64 {
    let grid = w.grid();
    let dw = centered_derivative(w);
    let a = linearized_operator(nl, w);
    let v: Vec<f64> = dw.values()[grid.active()].to_vec();
    let mut av = vec![0.0; v.len()];
    a.mul(&v, &mut av);
    (dot_active(grid, &av, &av) / dot_active(grid, &v, &v)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form ground state of the cubic.
    fn exact_w(a: f64, x: f64) -> f64 {
        let s = ((1.0 + a) * (1.0 + a) - 4.5 * a).sqrt();
        3.0 * a / ((1.0 + a) + s * (a.sqrt() * x).cosh())
    }

    fn grid(x_max: f64, n: usize) -> Arc<Grid> {
        Arc::new(Grid::symmetric(x_max, n, BoundaryCondition::DirichletZero).unwrap())
    }

    #[test]
    fn quadrature_matches_closed_form() {
        for a in [0.1, 0.3, 0.45] {
            let nl = Nonlinearity::cubic(a).unwrap();
            let g = grid(40.0, 1601);
            let gs = ground_state(&nl, &g).unwrap();
            let w = gs.w.values();
            for i in 1..g.len() - 1 {
                let e = exact_w(a, g.x(i));
                assert!((w[i] - e).abs() <= 1e-12 + 1e-9 * e, "a={a} x={}", g.x(i));
            }
            assert!((w[800] - nl.beta_star().unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn center_value_and_symmetry() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let g = grid(40.0, 1601);
        let gs = ground_state(&nl, &g).unwrap();
        assert!((gs.w.values()[800] - 0.477_936_5).abs() < 1e-6);
        let w = gs.w.values();
        for i in 0..g.len() {
            assert_eq!(w[i], w[g.len() - 1 - i]);
        }
        for i in 801..g.len() - 1 {
            assert!(w[i] < w[i - 1]);
        }
    }

    #[test]
    fn tail_ratio_approaches_linear_decay() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let g = grid(40.0, 1601);
        let gs = ground_state(&nl, &g).unwrap();
        // nodes x = 38 and x = 39
        let r = gs.w.values()[1560] / gs.w.values()[1580];
        assert!((r - 0.3_f64.sqrt().exp()).abs() < 1e-6, "{r}");
    }

    #[test]
    fn residual_is_second_order() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let r1 = ground_state(&nl, &grid(40.0, 1601)).unwrap().pde_residual(&nl);
        let r2 = ground_state(&nl, &grid(40.0, 3201)).unwrap().pde_residual(&nl);
        assert!(r1 <= 1e-3);
        let ratio = r1 / r2;
        assert!((3.6..4.4).contains(&ratio), "{ratio}");
    }

    #[test]
    fn newton_and_quadrature_agree_at_order_dx2() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let gap = |n: usize| {
            let gs = ground_state(&nl, &grid(40.0, n)).unwrap();
            let wd = refine_discrete(&nl, &gs.w).unwrap();
            assert!(residual(&nl, &wd).sup() < 1e-10);
            wd.sup_distance(&gs.w)
        };
        let (g1, g2, g4) = (gap(1601), gap(3201), gap(6401));
        assert!(g1 < 2e-5);
        assert!(g4 <= 1e-6, "{g4}");
        assert!((3.5..4.5).contains(&(g1 / g2)));
    }

    #[test]
    fn heterogeneous_quadrature_is_unsupported() {
        let nl = Nonlinearity::cubic(0.3)
            .unwrap()
            .with_heterogeneity(crate::model::Heterogeneity::new(vec![0.0], vec![0.2]).unwrap());
        assert!(matches!(
            ground_state(&nl, &grid(10.0, 101)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn principal_eigenpair_properties() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let g = grid(40.0, 1601);
        let w = ground_state(&nl, &g).unwrap().w;
        let ep = principal_eigenpair(&nl, &w).unwrap();
        assert!(ep.lambda < -0.01);
        assert!((ep.phi.sup() - 1.0).abs() < 1e-15);
        assert!(g.active().all(|i| ep.phi.values()[i] > 0.0));
        let rq = rayleigh_quotient(&nl, &w, &ep.phi).unwrap();
        assert!((rq - ep.lambda).abs() <= 1e-8);
        let dw = centered_derivative(&w);
        let rq_dw = rayleigh_quotient(&nl, &w, &dw).unwrap();
        assert!(rq_dw >= ep.lambda && rq_dw.abs() < 5.0 * g.dx() * g.dx());
        assert!(near_null_ratio(&nl, &w) <= 5.0 * g.dx() * g.dx());
        assert!(rayleigh_quotient(&nl, &w, &Field::zeros(g.clone())).is_err());
    }

    #[test]
    fn second_eigenpair_is_the_translation_mode() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        let g = grid(40.0, 1601);
        let w = refine_discrete(&nl, &ground_state(&nl, &g).unwrap().w).unwrap();
        let ep = principal_eigenpair(&nl, &w).unwrap();
        let e2 = second_eigenpair(&nl, &w, &ep).unwrap();
        assert!(e2.lambda.abs() < 1e-6, "{}", e2.lambda);
        assert!(e2.phi.dot(&ep.phi).abs() < 1e-10);
    }
}
