use crate::error::{Error, Result};

/// Overshoot band tolerated by the checked evaluators.
pub const U_BAND: (f64, f64) = (-0.1, 1.1);

/// Samples used by the bistability certificate.
const CERTIFICATE_SAMPLES: usize = 4000;

/// Piecewise cubic Hermite interpolant of tabulated `(u, f, f')` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteTable {
    us: Vec<f64>,
    fs: Vec<f64>,
    ds: Vec<f64>,
}

impl HermiteTable {
    pub fn new(us: Vec<f64>, fs: Vec<f64>, ds: Vec<f64>) -> Result<Self> {
        if us.len() < 2 || us.len() != fs.len() || us.len() != ds.len() {
            return Err(Error::invalid(
                "table needs at least two rows of matching (u, f, f') columns",
            ));
        }
        if us.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("table u-values must be strictly increasing"));
        }
        if us[0] > 0.0 || *us.last().unwrap() < 1.0 {
            return Err(Error::invalid("table must cover u in [0, 1]"));
        }
        if us.iter().chain(&fs).chain(&ds).any(|v| !v.is_finite()) {
            return Err(Error::invalid("table contains non-finite entries"));
        }
        Ok(HermiteTable { us, fs, ds })
    }

    fn segment(&self, u: f64) -> usize {
        let k = self.us.partition_point(|&x| x <= u);
        k.saturating_sub(1).min(self.us.len() - 2)
    }

    fn eval(&self, u: f64) -> (f64, f64) {
        let k = self.segment(u);
        let h = self.us[k + 1] - self.us[k];
        let t = (u - self.us[k]) / h;
        let (f0, f1, d0, d1) = (self.fs[k], self.fs[k + 1], self.ds[k], self.ds[k + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        let val = (2.0 * t3 - 3.0 * t2 + 1.0) * f0
            + (t3 - 2.0 * t2 + t) * h * d0
            + (-2.0 * t3 + 3.0 * t2) * f1
            + (t3 - t2) * h * d1;
        let der = ((6.0 * t2 - 6.0 * t) * f0
            + (3.0 * t2 - 4.0 * t + 1.0) * h * d0
            + (-6.0 * t2 + 6.0 * t) * f1
            + (3.0 * t2 - 2.0 * t) * h * d1)
            / h;
        (val, der)
    }

    /// `∫_{u_k}^{u} f` within segment `k`, exact for the cubic interpolant.
    fn partial(&self, k: usize, u: f64) -> f64 {
        let h = self.us[k + 1] - self.us[k];
        let t = (u - self.us[k]) / h;
        let (t2, t3, t4) = (t * t, t * t * t, t * t * t * t);
        h * (self.fs[k] * (t - t3 + 0.5 * t4)
            + h * self.ds[k] * (0.5 * t2 - 2.0 * t3 / 3.0 + 0.25 * t4)
            + self.fs[k + 1] * (t3 - 0.5 * t4)
            + h * self.ds[k + 1] * (0.25 * t4 - t3 / 3.0))
    }

    /// `∫_lo^hi f`, summing only the segments between the two limits.
    fn integral(&self, lo: f64, hi: f64) -> f64 {
        if hi < lo {
            return -self.integral(hi, lo);
        }
        let (ka, kb) = (self.segment(lo), self.segment(hi));
        if ka == kb {
            return self.partial(ka, hi) - self.partial(ka, lo);
        }
        let mut acc = self.partial(ka, self.us[ka + 1]) - self.partial(ka, lo);
        for k in ka + 1..kb {
            acc += self.partial(k, self.us[k + 1]);
        }
        acc + self.partial(kb, hi)
    }
}

/// Reaction profile `f0(u)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// `f0(u) = u (1 - u) (u - a)`.
    Cubic { a: f64 },
    Table(HermiteTable),
}

/// Bounded spatial multiplier `m(x)`, piecewise linear between knots and
/// constant outside them; the reaction becomes `(1 + m(x)) f0(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heterogeneity {
    xs: Vec<f64>,
    ms: Vec<f64>,
}

impl Heterogeneity {
    pub fn new(xs: Vec<f64>, ms: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || xs.len() != ms.len() {
            return Err(Error::invalid("heterogeneity needs matching, non-empty knots"));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("heterogeneity knots must be increasing"));
        }
        if ms.iter().any(|&m| !m.is_finite() || m <= -1.0) {
            return Err(Error::invalid("heterogeneity multiplier must satisfy m > -1"));
        }
        Ok(Heterogeneity { xs, ms })
    }

    pub fn m(&self, x: f64) -> f64 {
        let k = self.xs.partition_point(|&v| v <= x);
        if k == 0 {
            return self.ms[0];
        }
        if k == self.xs.len() {
            return *self.ms.last().unwrap();
        }
        let s = (x - self.xs[k - 1]) / (self.xs[k] - self.xs[k - 1]);
        (1.0 - s) * self.ms[k - 1] + s * self.ms[k]
    }

    pub fn m_min(&self) -> f64 {
        self.ms.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn m_max(&self) -> f64 {
        self.ms.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Zeros certified by the bistability check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bistability {
    /// Largest zero of `f0` in (0, 1).
    pub theta: f64,
    /// First positive zero of the primitive `F(u) = ∫_0^u f0`.
    pub beta_star: f64,
}

/// The reaction term `f(x, u) = (1 + m(x)) f0(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Nonlinearity {
    profile: Profile,
    heterogeneity: Option<Heterogeneity>,
    certificate: Option<Bistability>,
    lipschitz: f64,
}

/// Closed-form root of `3b^2 - 4(1+a)b + 6a = 0` in `(a, 1)`.
pub fn cubic_beta_star(a: f64) -> f64 {
    (4.0 * (1.0 + a) - (16.0 * (1.0 + a) * (1.0 + a) - 72.0 * a).sqrt()) / 6.0
}

impl Nonlinearity {
    /// The cubic `u (1 - u) (u - a)` with `0 < a < 1/2`.
    pub fn cubic(a: f64) -> Result<Self> {
        if !(a > 0.0 && a < 0.5) {
            return Err(Error::invalid(format!(
                "cubic threshold a must lie in (0, 1/2), got {a}"
            )));
        }
        let mut nl = Nonlinearity {
            profile: Profile::Cubic { a },
            heterogeneity: None,
            certificate: None,
            lipschitz: 0.0,
        };
        nl.lipschitz = nl.sample_lipschitz();
        let cert = Bistability {
            theta: a,
            beta_star: cubic_beta_star(a),
        };
        nl.verify_certificate(&cert)
            .map_err(|e| Error::Internal(format!("cubic certificate failed: {e}")))?;
        nl.certificate = Some(cert);
        Ok(nl)
    }

    /// A tabulated reaction term, accepted only if it passes the bistability
    /// certificate.
    pub fn from_table(table: HermiteTable) -> Result<Self> {
        let mut nl = Self::from_table_uncertified(table);
        let cert = nl.locate_zeros()?;
        nl.verify_certificate(&cert)?;
        nl.certificate = Some(cert);
        Ok(nl)
    }

    /// A tabulated reaction term without the bistability certificate. Only the
    /// forward solver accepts such a nonlinearity; everything that needs `θ` or
    /// `β*` reports an error.
    pub fn from_table_uncertified(table: HermiteTable) -> Self {
        let mut nl = Nonlinearity {
            profile: Profile::Table(table),
            heterogeneity: None,
            certificate: None,
            lipschitz: 0.0,
        };
        nl.lipschitz = nl.sample_lipschitz();
        nl
    }

    pub fn with_heterogeneity(mut self, h: Heterogeneity) -> Self {
        let scale = 1.0 + h.m_max().max(0.0);
        self.lipschitz *= scale;
        self.heterogeneity = Some(h);
        self
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn heterogeneity(&self) -> Option<&Heterogeneity> {
        self.heterogeneity.as_ref()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.heterogeneity.is_none()
    }

    pub fn certificate(&self) -> Option<&Bistability> {
        self.certificate.as_ref()
    }

    pub fn theta(&self) -> Result<f64> {
        self.certificate
            .map(|c| c.theta)
            .ok_or_else(|| Error::invalid("nonlinearity is not certified bistable"))
    }

    pub fn beta_star(&self) -> Result<f64> {
        self.certificate
            .map(|c| c.beta_star)
            .ok_or_else(|| Error::invalid("nonlinearity is not certified bistable"))
    }

    /// `sup |∂_u f|` over `[0, 1]` and the domain.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Unchecked `f0(u)`.
    #[inline]
    pub fn f0(&self, u: f64) -> f64 {
        match &self.profile {
            Profile::Cubic { a } => u * (1.0 - u) * (u - a),
            Profile::Table(t) => t.eval(u).0,
        }
    }

    /// Unchecked `f0'(u)`.
    #[inline]
    pub fn df0(&self, u: f64) -> f64 {
        match &self.profile {
            Profile::Cubic { a } => -3.0 * u * u + 2.0 * (1.0 + a) * u - a,
            Profile::Table(t) => t.eval(u).1,
        }
    }

    pub fn multiplier(&self, x: f64) -> f64 {
        self.heterogeneity.as_ref().map_or(1.0, |h| 1.0 + h.m(x))
    }

    /// `1 + m(x_i)` at every node.
    pub fn multipliers(&self, grid: &crate::model::Grid) -> Vec<f64> {
        grid.nodes().map(|x| self.multiplier(x)).collect()
    }

    fn check_band(x: f64, u: f64) -> Result<()> {
        if u.is_finite() && u >= U_BAND.0 && u <= U_BAND.1 {
            Ok(())
        } else {
            Err(Error::Domain { u, x })
        }
    }

    pub fn eval_f(&self, x: f64, u: f64) -> Result<f64> {
        Self::check_band(x, u)?;
        Ok(self.multiplier(x) * self.f0(u))
    }

    pub fn eval_fprime(&self, x: f64, u: f64) -> Result<f64> {
        Self::check_band(x, u)?;
        Ok(self.multiplier(x) * self.df0(u))
    }

    /// `F(u) = ∫_0^u f0`, evaluated with the form that is well conditioned at
    /// `u` (expansion at 0 for small `u`, at `β*` near the top).
    pub fn primitive(&self, u: f64) -> f64 {
        match &self.profile {
            Profile::Cubic { a } => {
                let a = *a;
                let b = cubic_beta_star(a);
                if u < 0.5 * b {
                    u * u * (-0.5 * a + (1.0 + a) * u / 3.0 - 0.25 * u * u)
                } else {
                    // F(β*) = 0 exactly; Taylor series in e = β* - u is exact for a quartic.
                    let e = b - u;
                    let f = b * (1.0 - b) * (b - a);
                    let d1 = -3.0 * b * b + 2.0 * (1.0 + a) * b - a;
                    let d2 = -6.0 * b + 2.0 * (1.0 + a);
                    let d3 = -6.0;
                    -f * e + 0.5 * d1 * e * e - d2 * e * e * e / 6.0 + d3 * e * e * e * e / 24.0
                }
            }
            Profile::Table(t) => match self.certificate {
                Some(c) if u >= 0.5 * c.beta_star => -t.integral(u, c.beta_star),
                _ => t.integral(0.0, u),
            },
        }
    }

    fn sample_lipschitz(&self) -> f64 {
        (0..=CERTIFICATE_SAMPLES)
            .map(|k| self.df0(k as f64 / CERTIFICATE_SAMPLES as f64).abs())
            .fold(0.0, f64::max)
    }

    /// θ and β* of a tabulated profile, by sign scans refined with bisection.
    fn locate_zeros(&self) -> Result<Bistability> {
        let n = CERTIFICATE_SAMPLES;
        let us: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let table = match &self.profile {
            Profile::Table(t) => t,
            Profile::Cubic { .. } => unreachable!("cubic zeros are closed-form"),
        };
        let mut theta = None;
        for w in us.windows(2).skip(1).take(n - 2) {
            let (fa, fb) = (self.f0(w[0]), self.f0(w[1]));
            if fa == 0.0 {
                theta = Some(w[0]);
            } else if fa * fb < 0.0 {
                theta = Some(bisect(|u| self.f0(u), w[0], w[1]));
            }
        }
        let theta =
            theta.ok_or_else(|| Error::invalid("table has no zero of f in (0,1)"))?;
        let prim = |u: f64| table.integral(0.0, u);
        let mut beta = None;
        for w in us.windows(2).skip(1) {
            if prim(w[0]) < 0.0 && prim(w[1]) >= 0.0 {
                beta = Some(bisect(prim, w[0], w[1]));
                break;
            }
        }
        let beta_star = beta
            .ok_or_else(|| Error::invalid("primitive of f never returns to zero in (0,1)"))?;
        Ok(Bistability { theta, beta_star })
    }

    /// Sampled check of the bistability hypotheses.
    fn verify_certificate(&self, c: &Bistability) -> Result<()> {
        let tol = 1e-12;
        if self.f0(0.0).abs() > tol || self.f0(1.0).abs() > tol {
            return Err(Error::invalid("f(0) = f(1) = 0 is violated"));
        }
        if self.df0(0.0) >= 0.0 || self.df0(1.0) >= 0.0 {
            return Err(Error::invalid("f'(0) < 0 and f'(1) < 0 are required"));
        }
        if !(c.beta_star > 0.0 && c.beta_star < 1.0) {
            return Err(Error::invalid("β* must lie in (0, 1)"));
        }
        let n = CERTIFICATE_SAMPLES;
        for k in 1..n {
            let u = k as f64 / n as f64;
            // skip the sample cells adjacent to β* where round-off decides the sign
            if (u - c.beta_star).abs() < 1.0 / n as f64 {
                continue;
            }
            if u < c.beta_star && self.primitive(u) >= 0.0 {
                return Err(Error::invalid(format!("F(u) < 0 fails at u = {u}")));
            }
            if u > c.beta_star && self.f0(u) <= 0.0 {
                return Err(Error::invalid(format!("f(u) > 0 fails at u = {u}")));
            }
        }
        Ok(())
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic_table(a: f64, n: usize) -> HermiteTable {
        let nl = Nonlinearity::cubic(a).unwrap();
        let us: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let fs = us.iter().map(|&u| nl.f0(u)).collect();
        let ds = us.iter().map(|&u| nl.df0(u)).collect();
        HermiteTable::new(us, fs, ds).unwrap()
    }

    #[test]
    fn cubic_zeros() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        assert_eq!(nl.theta().unwrap(), 0.3);
        assert!((nl.beta_star().unwrap() - 0.47794).abs() < 1e-5);
        assert!((nl.eval_f(0.0, 0.5).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(nl.eval_f(3.0, 0.0).unwrap(), 0.0);
        assert_eq!(nl.eval_f(-7.0, 1.0).unwrap(), 0.0);
        assert!((nl.eval_fprime(1.0, 0.0).unwrap() + 0.3).abs() < 1e-15);
    }

    #[test]
    fn cubic_rejects_out_of_range() {
        for a in [0.0, 0.5, -0.1, 0.7, f64::NAN] {
            assert!(Nonlinearity::cubic(a).is_err(), "a = {a}");
        }
    }

    #[test]
    fn band_violation_is_a_domain_error() {
        let nl = Nonlinearity::cubic(0.3).unwrap();
        assert!(matches!(nl.eval_f(0.0, 1.5), Err(Error::Domain { .. })));
        assert!(nl.eval_f(0.0, 1.05).is_ok());
    }

    #[test]
    fn beta_star_between_a_and_one() {
        for k in 1..100 {
            let a = 0.5 * k as f64 / 100.0;
            let b = cubic_beta_star(a);
            assert!(a < b && b < 1.0, "a = {a}, b = {b}");
        }
    }

    #[test]
    fn primitive_vanishes_at_beta_star() {
        for a in [0.05, 0.1, 0.2, 0.3, 0.4, 0.49] {
            let b = cubic_beta_star(a);
            let direct = b * b * (-0.5 * a + (1.0 + a) * b / 3.0 - 0.25 * b * b);
            assert!(direct.abs() < 1e-12, "a = {a}: F(β*) = {direct}");
            let nl = Nonlinearity::cubic(a).unwrap();
            assert!(nl.primitive(b).abs() < 1e-15);
            // both branches agree where they meet
            let u = 0.5 * b;
            let lo = u * u * (-0.5 * a + (1.0 + a) * u / 3.0 - 0.25 * u * u);
            assert!((nl.primitive(u) - lo).abs() < 1e-14);
        }
    }

    #[test]
    fn table_reproduces_cubic_zeros() {
        let nl = Nonlinearity::from_table(cubic_table(0.3, 200)).unwrap();
        assert!((nl.theta().unwrap() - 0.3).abs() < 1e-10);
        assert!((nl.beta_star().unwrap() - cubic_beta_star(0.3)).abs() < 1e-8);
        assert!((nl.f0(0.5) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn table_rejects_monostable() {
        // f = u(1-u): not bistable
        let us: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let fs = us.iter().map(|u| u * (1.0 - u)).collect();
        let ds = us.iter().map(|u| 1.0 - 2.0 * u).collect();
        let t = HermiteTable::new(us, fs, ds).unwrap();
        assert!(Nonlinearity::from_table(t).is_err());
    }

    #[test]
    fn heterogeneity_scales_reaction() {
        let h = Heterogeneity::new(vec![-1.0, 1.0], vec![0.0, 1.0]).unwrap();
        let nl = Nonlinearity::cubic(0.3).unwrap().with_heterogeneity(h);
        assert!((nl.eval_f(0.0, 0.5).unwrap() - 1.5 * 0.05).abs() < 1e-15);
        assert!((nl.eval_f(5.0, 0.5).unwrap() - 2.0 * 0.05).abs() < 1e-15);
        assert!(Heterogeneity::new(vec![0.0], vec![-1.0]).is_err());
    }
}
