//! Numerical toolkit for curved Frobenius structures on constant-curvature
//! charts: verification of the defining conditions, construction of
//! structure fields by integrating the closed derivative system, recovery of
//! Hessian potentials through flat dual connections, and the translation to
//! the structural tensors of second-order superintegrable systems.

// Tensor kernels index several arrays by the same loop variable; iterator
// rewrites would hide the index structure the formulas are written in.
#![allow(clippy::needless_range_loop)]

pub mod algebra;
pub mod error;
pub mod geometry;
pub mod hessian;
pub mod io;
pub mod prolongation;
pub mod report;
pub mod seed;
pub mod skew;
pub mod superint;
pub mod tensor;
pub mod tolerances;

pub use algebra::{Class, ProductAtPoint, Signature};
pub use error::{Error, Result};
pub use geometry::{Chart, MetricAtPoint};
pub use hessian::{
    build_affine_chart, d_connection, solve_hessian_potential, AffineChart, ConnectionField,
    PotentialField, PotentialRole,
};
pub use prolongation::{construct_field, integrate_path, verify_hmf_field, PathSpec, ProductField};
pub use report::{Check, Finding, Report};
pub use seed::{solve_seed_algebra, validate_seed, SeedReport};
pub use skew::build_skew_field;
pub use superint::{
    bridge_report, check_better_form, check_sis_alg, check_sis_diff, p_from_t_tensor, t_from_p,
    verify_potential_pde, BridgeReport, PotentialV, StructuralTensor, TraceForm,
};
pub use tensor::{Grid, GridField, Slot, Tensor};
