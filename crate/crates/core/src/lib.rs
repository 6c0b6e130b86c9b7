//! Surface calculus on boundaries of strong Lipschitz domains in R^3.
//!
//! The boundary is described by graph charts ([`charts`]); integrals over it
//! are computed chart-wise ([`quadrature`]); tangential operators, the weak
//! surface gradient and its least-squares recovery live in [`calculus`]; the
//! numerical checks of the underlying identities are in [`verify`].

// Negated comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calculus;
pub mod charts;
pub mod error;
pub mod expr;
pub mod quadrature;
pub mod smallmat;
pub mod verify;

pub use calculus::{
    recover_weak_gradient, tangential_gradient, tangential_trace, Arity, BoundaryField, LegendreBasis, PlanarField,
    Support, TestFamily, VolumeScalar, VolumeVector,
};
pub use charts::{ChartDomain, CutoffProfile, Frame, LipschitzPatch, Transition};
pub use error::{Error, Result};
pub use expr::{lipschitz_bound, Expr, Rect, RidgeLine, RidgeSet, SurfaceExpr};
pub use quadrature::{build_box_grid, build_grid, build_grid_with_breaklines, ChartGrid};
pub use smallmat::{cross, Mat2x2, Mat2x3, Mat3x2, Mat3x3, Vec2, Vec3};
pub use verify::{
    recovery_ladder, run_check, CaseResult, Convergence, RecoveryStep, Status, SuiteReport, SuiteSettings, Tolerance,
};
