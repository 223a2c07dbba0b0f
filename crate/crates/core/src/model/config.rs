//! Flat `key = value` configuration with provenance tracking.
//!
//! Values are resolved as command line > config file > built-in default, and
//! every resolved value can be echoed together with its source.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forward::{FateParams, Scheme, SolverParams};
use crate::model::{BoundaryCondition, Grid, Nonlinearity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Default,
    File,
    CommandLine,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::CommandLine => "cli",
        })
    }
}

/// All tunable parameters of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub a: f64,
    pub x_max: f64,
    pub n: usize,
    pub bc: BoundaryCondition,
    pub dt: f64,
    pub t_max: f64,
    pub store_stride: usize,
    pub scheme: Scheme,
    pub startup_steps: usize,
    pub delta: f64,
    pub alpha_inv: Option<f64>,
    pub r_inv: Option<f64>,
    /// Absolute bisection tolerance; `None` means `1e-6 * x_max`.
    pub tol_l: Option<f64>,
    pub tol_w: f64,
    pub l_cap: f64,
    pub splice_tol: f64,
    pub horizon_efolds: f64,
    pub seed: u64,
    pub kkt_tol: f64,
    pub fp_tol: f64,
    pub max_outer: usize,
    sources: BTreeMap<&'static str, Source>,
}

/// Recognized keys, in echo order.
pub const KEYS: &[&str] = &[
    "nonlinearity.a",
    "grid.x_max",
    "grid.n",
    "grid.bc",
    "solver.dt",
    "solver.t_max",
    "solver.store_stride",
    "solver.scheme",
    "solver.startup_steps",
    "fate.delta",
    "fate.alpha_inv",
    "fate.R_inv",
    "threshold.tol_L",
    "threshold.tol_W",
    "threshold.L_cap",
    "floquet.splice_tol",
    "floquet.horizon_efolds",
    "harness.seed",
    "optimize.kkt_tol",
    "optimize.fp_tol",
    "optimize.max_outer",
];

impl Default for Config {
    fn default() -> Self {
        Config {
            a: 0.3,
            x_max: 40.0,
            n: 1601,
            bc: BoundaryCondition::DirichletZero,
            dt: 0.005,
            t_max: 400.0,
            store_stride: 20,
            scheme: Scheme::ImexCn,
            startup_steps: 4,
            delta: 0.1,
            alpha_inv: None,
            r_inv: None,
            tol_l: None,
            tol_w: 1e-3,
            l_cap: 30.0,
            splice_tol: 1e-4,
            horizon_efolds: 40.0,
            seed: 20240917,
            kkt_tol: 1e-2,
            fp_tol: 1e-3,
            max_outer: 40,
            sources: BTreeMap::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("cannot parse '{value}' for key {key}")))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl Config {
    /// Sets `key` from its textual value.
    pub fn set(&mut self, key: &str, value: &str, source: Source) -> Result<()> {
        let value = value.trim();
        let auto = value == "auto";
        let canon = KEYS
            .iter()
            .copied()
            .find(|k| *k == key)
            .ok_or_else(|| Error::invalid(format!("unknown configuration key '{key}'")))?;
        match canon {
            "nonlinearity.a" => self.a = parse(key, value)?,
            "grid.x_max" => self.x_max = parse(key, value)?,
            "grid.n" => self.n = parse(key, value)?,
            "grid.bc" => self.bc = value.parse()?,
            "solver.dt" => self.dt = parse(key, value)?,
            "solver.t_max" => self.t_max = parse(key, value)?,
            "solver.store_stride" => self.store_stride = parse(key, value)?,
            "solver.scheme" => self.scheme = value.parse()?,
            "solver.startup_steps" => self.startup_steps = parse(key, value)?,
            "fate.delta" => self.delta = parse(key, value)?,
            "fate.alpha_inv" => {
                self.alpha_inv = if auto { None } else { Some(parse(key, value)?) }
            }
            "fate.R_inv" => self.r_inv = if auto { None } else { Some(parse(key, value)?) },
            "threshold.tol_L" => self.tol_l = if auto { None } else { Some(parse(key, value)?) },
            "threshold.tol_W" => self.tol_w = parse(key, value)?,
            "threshold.L_cap" => self.l_cap = parse(key, value)?,
            "floquet.splice_tol" => self.splice_tol = parse(key, value)?,
            "floquet.horizon_efolds" => self.horizon_efolds = parse(key, value)?,
            "harness.seed" => self.seed = parse(key, value)?,
            "optimize.kkt_tol" => self.kkt_tol = parse(key, value)?,
            "optimize.fp_tol" => self.fp_tol = parse(key, value)?,
            "optimize.max_outer" => self.max_outer = parse(key, value)?,
            _ => unreachable!(),
        }
        let prev = self.sources.get(canon).copied().unwrap_or(Source::Default);
        self.sources.insert(canon, prev.max(source));
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str, source: Source) -> Result<()> {
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: k + 1,
                msg: format!("expected key = value, got '{line}'"),
            })?;
            self.set(key.trim(), value, source).map_err(|e| Error::Parse {
                line: k + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Config::default();
        c.merge_text(text, Source::File)?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Config::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "nonlinearity.a" => self.a.to_string(),
            "grid.x_max" => self.x_max.to_string(),
            "grid.n" => self.n.to_string(),
            "grid.bc" => self.bc.to_string(),
            "solver.dt" => self.dt.to_string(),
            "solver.t_max" => self.t_max.to_string(),
            "solver.store_stride" => self.store_stride.to_string(),
            "solver.scheme" => self.scheme.to_string(),
            "solver.startup_steps" => self.startup_steps.to_string(),
            "fate.delta" => self.delta.to_string(),
            "fate.alpha_inv" => opt(self.alpha_inv),
            "fate.R_inv" => opt(self.r_inv),
            "threshold.tol_L" => opt(self.tol_l),
            "threshold.tol_W" => self.tol_w.to_string(),
            "threshold.L_cap" => self.l_cap.to_string(),
            "floquet.splice_tol" => self.splice_tol.to_string(),
            "floquet.horizon_efolds" => self.horizon_efolds.to_string(),
            "harness.seed" => self.seed.to_string(),
            "optimize.kkt_tol" => self.kkt_tol.to_string(),
            "optimize.fp_tol" => self.fp_tol.to_string(),
            "optimize.max_outer" => self.max_outer.to_string(),
            _ => return None,
        })
    }

    pub fn source(&self, key: &str) -> Source {
        self.sources.get(key).copied().unwrap_or(Source::Default)
    }

    /// `key = value  (source)` for every key.
    pub fn echo(&self) -> Vec<String> {
        KEYS.iter()
            .map(|k| format!("{k} = {} ({})", self.get(k).unwrap_or_default(), self.source(k)))
            .collect()
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity> {
        Nonlinearity::cubic(self.a)
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        Ok(Arc::new(Grid::symmetric(self.x_max, self.n, self.bc)?))
    }

    pub fn solver(&self) -> SolverParams {
        SolverParams {
            dt: self.dt,
            t_max: self.t_max,
            store_stride: self.store_stride,
            scheme: self.scheme,
            startup_steps: self.startup_steps,
        }
    }

    pub fn tol_l(&self) -> f64 {
        self.tol_l.unwrap_or(1e-6 * self.x_max)
    }

    /// Fate parameters; `R_inv` (and `α_inv` if unset) are calibrated when not
    /// given, and the resolved values are written back for the echo.
    pub fn fate(&mut self, nl: &Nonlinearity, grid: &Arc<Grid>) -> Result<FateParams> {
        let fp = match (self.alpha_inv, self.r_inv) {
            (Some(alpha_inv), Some(r_inv)) => FateParams {
                delta: self.delta,
                alpha_inv,
                r_inv,
            },
            _ => crate::forward::calibrate_invasion_box(
                nl,
                grid,
                &self.solver(),
                self.delta,
                self.alpha_inv,
            )?,
        };
        self.alpha_inv = Some(fp.alpha_inv);
        self.r_inv = Some(fp.r_inv);
        Ok(fp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut c = Config::from_text(
            "# a comment\nnonlinearity.a = 0.2\n\ngrid.bc = neumann_zero # trailing\nfate.R_inv=3.5\n",
        )
        .unwrap();
        assert_eq!(c.a, 0.2);
        assert_eq!(c.bc, BoundaryCondition::NeumannZero);
        assert_eq!(c.r_inv, Some(3.5));
        assert_eq!(c.source("nonlinearity.a"), Source::File);
        c.set("nonlinearity.a", "0.25", Source::CommandLine).unwrap();
        assert_eq!(c.a, 0.25);
        assert_eq!(c.source("nonlinearity.a"), Source::CommandLine);
        assert_eq!(c.source("grid.n"), Source::Default);
        assert!(c.echo().iter().any(|l| l == "nonlinearity.a = 0.25 (cli)"));
    }

    #[test]
    fn rejects_unknown_keys_and_garbage() {
        assert!(matches!(
            Config::from_text("nope = 1"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(Config::from_text("grid.n = many").is_err());
        assert!(Config::from_text("grid.n").is_err());
    }

    #[test]
    fn default_tolerance_scales_with_domain() {
        let c = Config::default();
        assert!((c.tol_l() - 4e-5).abs() < 1e-18);
    }
}
