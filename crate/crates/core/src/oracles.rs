//! Ground-truth references for checking the sampler and the volume estimator.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::beta::{beta_reg, ln_beta};

use crate::barrier::{barrier, barrier_params, curvature_ops, metric_frobenius_norm, GibbsTarget, PointState};
use crate::collocation::CollocationConfig;
use crate::dynamics::{integrate, variational_jacobian, Direction, PhasePoint, TrajectoryRecord};
use crate::error::{Result, RhmcError};
use crate::polytope::{BodyKind, Polytope};

/// How an [`OracleResult`] compares observed against expected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// `|observed − expected| ≤ tolerance`.
    Within,
    /// `observed ≤ expected + tolerance`.
    AtMost,
    /// `observed ≥ expected − tolerance`.
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub pass: bool,
    pub sample_size: usize,
}

impl OracleResult {
    pub fn new(
        name: impl Into<String>,
        observed: f64,
        expected: f64,
        tolerance: f64,
        comparison: Comparison,
        sample_size: usize,
    ) -> Self {
        let pass = match comparison {
            Comparison::Within => (observed - expected).abs() <= tolerance,
            Comparison::AtMost => observed <= expected + tolerance,
            Comparison::AtLeast => observed >= expected - tolerance,
        };
        OracleResult {
            name: name.into(),
            observed,
            expected,
            tolerance,
            comparison,
            pass,
            sample_size,
        }
    }

    pub fn within(name: impl Into<String>, observed: f64, expected: f64, tolerance: f64, n: usize) -> Self {
        Self::new(name, observed, expected, tolerance, Comparison::Within, n)
    }

    pub fn at_most(name: impl Into<String>, observed: f64, bound: f64, n: usize) -> Self {
        Self::new(name, observed, bound, 0.0, Comparison::AtMost, n)
    }

    pub fn at_least(name: impl Into<String>, observed: f64, bound: f64, n: usize) -> Self {
        Self::new(name, observed, bound, 0.0, Comparison::AtLeast, n)
    }
}

impl std::fmt::Display for OracleResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let rel = match self.comparison {
            Comparison::Within => format!("{:.6e} ± {:.3e}", self.expected, self.tolerance),
            Comparison::AtMost => format!("≤ {:.6e}", self.expected + self.tolerance),
            Comparison::AtLeast => format!("≥ {:.6e}", self.expected - self.tolerance),
        };
        write!(
            f,
            "{:<4} {:<40} observed {:.6e}  expected {}  (n={})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.observed,
            rel,
            self.sample_size
        )
    }
}

/// `exp(-α φ)` on `[0, 1]` is the `Beta(α+1, α+1)` density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaOracle {
    pub shape: f64,
    pub mean: f64,
    pub variance: f64,
}

impl BetaOracle {
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            beta_reg(self.shape, self.shape, x)
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 || x >= 1.0 {
            return 0.0;
        }
        ((self.shape - 1.0) * (x * (1.0 - x)).ln() - ln_beta(self.shape, self.shape)).exp()
    }

    /// Fourth central moment, for the standard error of a sample variance.
    pub fn fourth_central_moment(&self) -> f64 {
        // Symmetric Beta has excess kurtosis −6/(2a+3).
        let a = self.shape;
        let var = self.variance;
        let excess = -6.0 / (2.0 * a + 3.0);
        (excess + 3.0) * var * var
    }

    /// Inverse CDF by bisection.
    pub fn quantile(&self, u: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

pub fn beta_oracle(alpha: f64) -> BetaOracle {
    BetaOracle {
        shape: alpha + 1.0,
        mean: 0.5,
        variance: 1.0 / (4.0 * (2.0 * alpha + 3.0)),
    }
}

/// `F(σ'²)/F(σ²)` on `[0, 1]` with `φ` shifted to vanish at the center.
pub fn interval_phase_ratio(sigma2: f64, next_sigma2: f64) -> f64 {
    let (a, b) = (1.0 / sigma2, 1.0 / next_sigma2);
    let phi_center = 2.0 * 2f64.ln();
    (ln_beta(b + 1.0, b + 1.0) - ln_beta(a + 1.0, a + 1.0) + phi_center * (b - a)).exp()
}

/// Exact volume of a generated body.
pub fn analytic_volume(kind: BodyKind, n: usize) -> Option<f64> {
    match kind {
        BodyKind::Cube => Some(1.0),
        BodyKind::Simplex => Some(1.0 / (1..=n).map(|k| k as f64).product::<f64>()),
        BodyKind::RandomHalfspaces => None,
    }
}

/// Upper-tail p-value of Pearson's chi-square for binned counts.
pub fn chi_square_pvalue(observed: &[f64], expected: &[f64]) -> f64 {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&o, &e)| (o - e).powi(2) / e)
        .sum();
    let dof = observed.len().saturating_sub(1).max(1) as f64;
    match ChiSquared::new(dof) {
        Ok(d) => 1.0 - d.cdf(stat),
        Err(_) => f64::NAN,
    }
}

/// Endpoint map `w ↦ x_δ(w)` of a one-dimensional body sampled on a
/// velocity grid, used to invert the one-step transition.
#[derive(Debug, Clone)]
pub struct TransitionMap<'a> {
    polytope: &'a Polytope,
    target: GibbsTarget,
    x: f64,
    delta: f64,
    metric: f64,
    grid: Vec<(f64, Option<f64>)>,
    cfg: CollocationConfig,
}

/// Velocity grid points per unit of `N(0, g⁻¹)` standard deviation.
const GRID_PER_SD: usize = 40;
const GRID_SDS: f64 = 8.0;
/// Bisection tolerance in units of the velocity standard deviation.
const ROOT_TOL: f64 = 1e-10;

impl<'a> TransitionMap<'a> {
    pub fn new(polytope: &'a Polytope, target: GibbsTarget, x: f64, delta: f64, cfg: CollocationConfig) -> Result<Self> {
        if polytope.n() != 1 {
            return Err(RhmcError::input("transition density is only available in one dimension"));
        }
        let state = PointState::new(polytope, &DVector::from_element(1, x))?;
        let metric = state.metric()[(0, 0)];
        let sd = 1.0 / metric.sqrt();
        let points = (2.0 * GRID_SDS) as usize * GRID_PER_SD;
        let mut map = TransitionMap {
            polytope,
            target,
            x,
            delta,
            metric,
            grid: Vec::with_capacity(points + 1),
            cfg,
        };
        for i in 0..=points {
            let w = -GRID_SDS * sd + 2.0 * GRID_SDS * sd * i as f64 / points as f64;
            let end = map.endpoint(w);
            map.grid.push((w, end));
        }
        Ok(map)
    }

    /// Standard deviation of the velocity draw at `x`.
    fn velocity_scale(&self) -> f64 {
        1.0 / self.metric.sqrt()
    }

    fn endpoint(&self, w: f64) -> Option<f64> {
        let start = PhasePoint::new(DVector::from_element(1, self.x), DVector::from_element(1, w));
        integrate(self.polytope, &self.target, &start, self.delta, Direction::Forward, &self.cfg)
            .ok()
            .map(|r| r.end.x[0])
    }

    /// Velocities reaching `y` in time `δ`.
    pub fn roots(&self, y: f64) -> Vec<f64> {
        let mut roots = Vec::new();
        for pair in self.grid.windows(2) {
            let ((w0, Some(e0)), (w1, Some(e1))) = (pair[0], pair[1]) else {
                continue;
            };
            let (f0, f1) = (e0 - y, e1 - y);
            if f0 == 0.0 {
                roots.push(w0);
                continue;
            }
            if f0.signum() == f1.signum() {
                continue;
            }
            let (mut lo, mut hi, mut flo) = (w0, w1, f0);
            let tol = ROOT_TOL * self.velocity_scale();
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let Some(e) = self.endpoint(mid) else { break };
                let fm = e - y;
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        roots
    }

    /// One-step density at `y`: the velocity density over `|∂x_δ/∂w|`,
    /// summed over roots. Backward curves contribute the same amount, so the
    /// fair coin leaves the sum unchanged.
    pub fn density(&self, y: f64) -> Result<f64> {
        let mut total = 0.0;
        for w in self.roots(y) {
            let start = PhasePoint::new(DVector::from_element(1, self.x), DVector::from_element(1, w));
            let jac = variational_jacobian(self.polytope, &self.target, &start, self.delta, Direction::Forward, &self.cfg)?;
            let dxdw = jac.phase[(0, 1)].abs();
            let velocity_density =
                (self.metric / (2.0 * std::f64::consts::PI)).sqrt() * (-0.5 * self.metric * w * w).exp();
            total += velocity_density / dxdw;
        }
        Ok(total)
    }
}

/// `p_x(y)` of one RHMC step on an interval.
pub fn transition_density_1d(
    p: &Polytope,
    target: &GibbsTarget,
    x: f64,
    y: f64,
    delta: f64,
    cfg: &CollocationConfig,
) -> Result<f64> {
    TransitionMap::new(p, *target, x, delta, *cfg)?.density(y)
}

/// Unnormalized target density `exp(-α φ(x))`.
pub fn target_density(p: &Polytope, target: &GibbsTarget, x: &DVector<f64>) -> Result<f64> {
    Ok((-target.alpha * barrier(p, x)?).exp())
}

/// Curvature-operator norms along recorded curves against their bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub trajectories: usize,
    pub points: usize,
    pub max_phi_norm: f64,
    pub phi_bound: f64,
    pub max_transported_action: Option<f64>,
    pub transport_bound: f64,
    pub m1: f64,
    pub m2: f64,
}

impl MonitorReport {
    pub fn phi_ok(&self) -> bool {
        self.max_phi_norm <= self.phi_bound
    }

    pub fn transport_ok(&self) -> bool {
        self.max_transported_action.is_none_or(|v| v <= self.transport_bound)
    }
}

/// Maximum of `‖Φ(t)‖_{F,γ(t)}` and `‖Φ(t)ζ(t)‖_{γ(t)}` over the substep
/// endpoints of `records`.
pub fn parameter_monitor(p: &Polytope, target: &GibbsTarget, records: &[TrajectoryRecord]) -> Result<MonitorReport> {
    use crate::constants::{CURVATURE_BOUND_FACTOR, TRANSPORT_BOUND_FACTOR};
    let (n, m) = (p.n(), p.m());
    let bp = barrier_params(n, m, target);
    let nf = n as f64;
    let delta = records.first().map_or(0.0, |r| r.delta);
    let mut max_phi: f64 = 0.0;
    let mut max_action: Option<f64> = None;
    let mut points = 0;
    for rec in records {
        for s in rec.samples.iter().filter(|s| s.node) {
            let state = PointState::new(p, &s.x)?;
            let ops = curvature_ops(&state, &s.w, target);
            max_phi = max_phi.max(metric_frobenius_norm(&state, &ops.phi_op));
            if let Some(z) = &s.transported {
                let action = state.norm(&(&ops.phi_op * z));
                max_action = Some(max_action.map_or(action, |a| a.max(action)));
            }
            points += 1;
        }
    }
    Ok(MonitorReport {
        trajectories: records.len(),
        points,
        max_phi_norm: max_phi,
        phi_bound: CURVATURE_BOUND_FACTOR * (bp.m1.sqrt() + bp.m2 * nf.sqrt()),
        max_transported_action: max_action,
        transport_bound: TRANSPORT_BOUND_FACTOR
            * ((bp.m1 * (n.max(2) as f64).ln()).sqrt() + bp.m1.powf(0.75) * nf.powf(0.25) * delta + bp.m2 * nf.sqrt()),
        m1: bp.m1,
        m2: bp.m2,
    })
}
