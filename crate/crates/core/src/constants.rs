//! Numerical stand-ins for asymptotic constants, used by tests and monitors.

/// Multiplier on `√M1 + M2√n` when bounding the curvature operator norm.
pub const CURVATURE_BOUND_FACTOR: f64 = 100.0;

/// Multiplier on `√(M1 log n) + M1^{3/4} n^{1/4} δ + M2√n` when bounding
/// the transported curvature action.
pub const TRANSPORT_BOUND_FACTOR: f64 = 100.0;

/// Constant in front of `r² min(ϑ/σ², n)` for the second moment of the
/// per-phase ratio estimator.
pub const ESTIMATOR_VARIANCE_FACTOR: f64 = 10.0;

/// Constant in front of `σ² ϑ / s` for the barrier variance under a cooled
/// Gibbs measure.
pub const THIN_SHELL_FACTOR: f64 = 10.0;

/// Standard errors allowed between a phase ratio and its exact value.
pub const PHASE_RATIO_SE: f64 = 5.0;

/// Curves with `ℓ(γ)` above this are counted as exceedances.
pub const ELL_THRESHOLD: f64 = 128.0;
