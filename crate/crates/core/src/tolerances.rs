//! Default residual tolerances, collected in one place so every caller
//! (library checks, reports, the command line) agrees on them.
//!
//! Pointwise algebraic identities get absolute bounds. Finite-difference
//! residuals scale as C h^2 on the grid spacing h; the constants were
//! calibrated on the reference suites and carry roughly a 4x margin over
//! measured values.

/// Exact pointwise identities: commutator and compatibility residuals,
/// seed validation, Lie-triple and Jordan defects.
pub const ALGEBRAIC: f64 = 1e-10;

/// Identities expected to hold at rounding level: cyclic associator sums,
/// curvature symmetries.
pub const STRICT: f64 = 1e-12;

/// Agreement between independent integration paths.
pub const PATH: f64 = 1e-8;

/// Coefficient fit of the commutator against the curvature operator.
pub const MU: f64 = 1e-6;

/// Transpose agreement between a connection and its metric dual.
pub const DUALITY: f64 = 1e-9;

/// Scalar norm identity on structural data, dominated by integration error
/// amplified through squared norms of O(10) magnitude.
pub const SCALAR_IDENTITY: f64 = 1e-8;

/// Closed derivative system defect of a product field (mixed components).
pub fn hmf(h: f64) -> f64 {
    160.0 * h * h
}

/// Symmetry defect of the covariant gradient of the lowered product.
pub fn nabla_sym(h: f64) -> f64 {
    45.0 * h * h
}

/// Finite-difference curvature against the closed form.
pub fn curvature_fd(h: f64) -> f64 {
    2.0 * h * h
}

/// Algebraic structural equation on a cubic tensor field. The h^2 slack
/// covers fields supplied at grid accuracy rather than produced by the
/// integrator.
pub fn sis_alg(h: f64) -> f64 {
    h * h + 1e-10
}

/// Derivative equation of the lowered cubic tensor.
pub fn better_form(h: f64) -> f64 {
    160.0 * h * h
}

/// Curvature of the induced flat connection.
pub fn flatness(h: f64) -> f64 {
    75.0 * h * h
}

/// Pullback defect of an affine chart (its differential against the
/// transported frame).
pub fn affine_pullback(h: f64) -> f64 {
    5.0 * h * h
}

/// Second D-derivative of the potential against the metric.
pub fn potential_metric(h: f64) -> f64 {
    8.0 * h * h
}

/// Potential consistency identity for a product field.
pub fn consistency(h: f64) -> f64 {
    15.0 * h * h
}

/// Third covariant gradient of the potential against twice the lowered
/// product.
pub fn d3_phi(h: f64) -> f64 {
    75.0 * h * h
}

/// Weak form of the potential condition.
pub fn weak_condition(h: f64) -> f64 {
    50.0 * h * h
}

/// Difference-of-potentials identity.
pub fn difference_of_potentials(h: f64) -> f64 {
    20.0 * h * h
}
