//! Geometric analysis of optimal control problems.
//!
//! The library models a control system `dq/dt = Gamma(q, u)` with a
//! running cost `L(q, u)` and works with the associated Pontryagin
//! Hamiltonian `H(q, p, u) = p . Gamma(q, u) - L(q, u)` (or
//! `p . Gamma` in abnormal mode). On top of that it provides
//!
//! * [`expr`] — the symbolic expression language everything is built
//!   from: parsing, exact differentiation, checked evaluation and
//!   univariate real root extraction;
//! * [`geometry`] — the canonical maps between iterated (co)tangent
//!   bundle charts, realized as exact block permutations;
//! * [`problem`] — the problem model, JSON ingestion and the
//!   kernel-constraint analysis of the control space;
//! * [`pontryagin`] — Hamiltonian construction, the mixed
//!   second-derivative rank matrix, regular/singular/caustic
//!   classification and the stationarity residual systems;
//! * [`lagrangian`] — the velocity-side submanifold equations, the
//!   Legendre transformation, the energy function and the reduced
//!   presymplectic equations of motion;
//! * [`integrability`] — constraint stabilization for smooth extremals
//!   and enumeration of piecewise-constant (bang-bang) extremals;
//! * [`solver`] — control elimination, fixed-step Hamiltonian
//!   integration and two-point boundary-value shooting;
//! * [`identities`] — the cross-identity suite tying the Hamiltonian
//!   and Lagrangian sides together, used by the CLI `check` command.

pub mod expr;
pub mod geometry;
pub mod identities;
pub mod integrability;
pub mod lagrangian;
pub(crate) mod linalg;
pub mod pontryagin;
pub mod problem;
pub mod sample;
pub mod solver;

pub use expr::{parse, Expr};
pub use problem::OcProblem;
