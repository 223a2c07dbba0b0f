//! Domain types shared by every module.

pub mod config;
mod fate;
mod field;
mod grid;
mod nonlinearity;
mod trajectory;

pub use config::Config;
pub use fate::Fate;
pub use field::{Field, Norms};
pub(crate) use field::pairing;
pub use grid::{BoundaryCondition, Grid};
pub use nonlinearity::{
    cubic_beta_star, Bistability, Heterogeneity, HermiteTable, Nonlinearity, Profile, U_BAND,
};
pub use trajectory::Trajectory;
