pub mod carleman_fredholm;
pub mod error;
pub mod gpam_solver;
pub mod hessian_assembly;
pub mod laplace_lab;
pub mod linalg;
pub mod noise_and_renorm;
pub mod observables;
pub mod phase_minimizer;
pub mod torus_field;

pub use error::{Error, Result};
pub use torus_field::{TimePath, TorusField};
