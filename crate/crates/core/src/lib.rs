pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod eigen;
pub mod error;
pub mod fem;
pub mod flow;
pub mod functional;
pub mod game;
pub mod io;
pub mod mesh;
pub mod sparse;
pub mod subgradient;

pub use error::{Error, Result};
pub use fem::{Discretization, ProblemKind, SpectralProblem};
pub use mesh::{ConformalFactor, Support, TriMesh};
pub use eigen::{EigenPackage, SolverOptions};
pub use functional::{Evaluation, FunctionalSpec, Objective};
