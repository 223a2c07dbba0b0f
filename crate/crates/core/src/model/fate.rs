use std::fmt;

/// Certified long-time behaviour of a solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fate {
    /// `sup u(t_cert) < θ (1 - δ)`: the constant ODE supersolution decays to 0.
    Extinction { t_cert: f64, sup: f64 },
    /// `u(t_cert) >= α_inv` on `[-R_inv, R_inv]`: the calibrated box subsolution invades.
    Invasion { t_cert: f64, box_min: f64 },
    /// Neither certificate fired before `t_max`.
    Undecided { t_max: f64, sup: f64 },
}

impl Fate {
    pub fn is_extinction(&self) -> bool {
        matches!(self, Fate::Extinction { .. })
    }

    pub fn is_invasion(&self) -> bool {
        matches!(self, Fate::Invasion { .. })
    }

    pub fn is_decided(&self) -> bool {
        !matches!(self, Fate::Undecided { .. })
    }

    /// +1 invasion, -1 extinction, 0 undecided.
    pub fn sign(&self) -> i32 {
        match self {
            Fate::Extinction { .. } => -1,
            Fate::Invasion { .. } => 1,
            Fate::Undecided { .. } => 0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Fate::Extinction { .. } => "extinction",
            Fate::Invasion { .. } => "invasion",
            Fate::Undecided { .. } => "undecided",
        }
    }

    pub fn time(&self) -> f64 {
        match *self {
            Fate::Extinction { t_cert, .. } | Fate::Invasion { t_cert, .. } => t_cert,
            Fate::Undecided { t_max, .. } => t_max,
        }
    }
}

impl fmt::Display for Fate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fate::Extinction { t_cert, sup } => {
                write!(f, "extinction at t = {t_cert} (sup u = {sup:.6})")
            }
            Fate::Invasion { t_cert, box_min } => {
                write!(f, "invasion at t = {t_cert} (box min = {box_min:.6})")
            }
            Fate::Undecided { t_max, sup } => {
                write!(f, "undecided at t = {t_max} (sup u = {sup:.6})")
            }
        }
    }
}
