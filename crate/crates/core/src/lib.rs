//! Numerical laboratory for threshold solutions of one-dimensional bistable
//! reaction-diffusion equations `u_t - u_xx = f(x, u)`.

pub mod applications;
pub mod error;
pub mod floquet;
pub mod forward;
pub mod io;
pub mod linalg;
pub mod model;
pub mod quadrature;
pub mod setup;
pub mod steady;
pub mod threshold;
pub mod verify;

pub use error::{Error, Result};
pub use model::{BoundaryCondition, Config, Fate, Field, Grid, Nonlinearity, Norms, Trajectory};
