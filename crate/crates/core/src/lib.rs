//! Equilibria of semilinear elliptic problems whose reaction term is
//! concentrated on a boundary strip of width `epsilon`, together with the limit
//! problem in which the reaction becomes a nonlinear boundary flux.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: interval and unit-square meshes, interior, strip and
//!   boundary quadrature.
//! * [`linalg`]: compressed sparse rows, banded LU and block Rayleigh-Ritz.
//! * [`forms`]: the elliptic operator `-div(a grad u) + u`, the nonlinear
//!   functionals, their derivatives and the discrete `(H^1)'` norm.
//! * [`equilibria`]: Picard, chord-Newton and Newton solvers, multi-start
//!   enumeration and continuation in `epsilon`.
//! * [`spectral`]: low-lying spectrum of the linearization and hyperbolicity.
//! * [`sweep`]: the experiment harness behind the `stripeq` binary.
//! * [`oracle`]: dense, closed-form and bisection references used by the tests.
//!
//! Independent solves (multi-start enumeration, per-`epsilon` work) run on the
//! rayon pool when the `parallel` feature is enabled; see [`exec::Exec`].

pub mod equilibria;
pub mod error;
pub mod exec;
pub mod forms;
pub mod geometry;
pub mod linalg;
pub mod oracle;
pub mod spectral;
pub mod sweep;

pub use equilibria::{EquilibriumRecord, Method, SolveOptions};
pub use error::{Error, Result};
pub use exec::Exec;
pub use forms::{
    Coefficient, DiscreteProblem, DualVector, Field, Mode, Nonlinearity, OperatorKind,
    OperatorMatrix, ProblemSpec,
};
pub use geometry::Mesh;
pub use spectral::SpectrumReport;
