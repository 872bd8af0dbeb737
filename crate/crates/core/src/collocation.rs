//! Three-stage Gauss–Legendre collocation (order 6) with fixed-point stage
//! iteration and a substep driver that halves the step on failure.

use nalgebra::DVector;

use crate::error::{Result, RhmcError};

const SQRT15: f64 = 3.872_983_346_207_417;

/// Collocation nodes on `[0, 1]`.
pub const NODES: [f64; 3] = [0.5 - SQRT15 / 10.0, 0.5, 0.5 + SQRT15 / 10.0];

/// Quadrature weights.
pub const WEIGHTS: [f64; 3] = [5.0 / 18.0, 4.0 / 9.0, 5.0 / 18.0];

/// Runge–Kutta matrix of the scheme.
pub const COEFFS: [[f64; 3]; 3] = [
    [5.0 / 36.0, 2.0 / 9.0 - SQRT15 / 15.0, 5.0 / 36.0 - SQRT15 / 30.0],
    [5.0 / 36.0 + SQRT15 / 24.0, 2.0 / 9.0, 5.0 / 36.0 - SQRT15 / 24.0],
    [5.0 / 36.0 + SQRT15 / 30.0, 2.0 / 9.0 + SQRT15 / 15.0, 5.0 / 36.0],
];

/// Settings shared by every collocation-based integration in the crate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CollocationConfig {
    /// Uniform substeps per unit interval before any halving.
    pub substeps: usize,
    /// Stage convergence tolerance, relative to `1 + |y|_inf`.
    pub tolerance: f64,
    /// Fixed-point iterations allowed per attempt.
    pub max_iterations: usize,
    /// Total halvings allowed before giving up.
    pub max_halvings: usize,
}

impl Default for CollocationConfig {
    fn default() -> Self {
        CollocationConfig {
            substeps: 8,
            tolerance: 1e-12,
            max_iterations: 60,
            max_halvings: 20,
        }
    }
}

/// Why a single collocation step was rejected.
#[derive(Debug, Clone, PartialEq)]
pub enum StepFailure {
    /// The fixed-point iteration did not contract to tolerance.
    NoContraction,
    /// The right-hand side refused a stage point (left the domain).
    Inadmissible(RhmcError),
    /// A non-recoverable error; halving will not help.
    Fatal(RhmcError),
}

/// An accepted step: the new state and the three converged stage states.
#[derive(Debug, Clone)]
pub struct AcceptedStep {
    pub y_new: DVector<f64>,
    /// Converged stage derivatives.
    pub stage_derivatives: [DVector<f64>; 3],
    pub stage_times: [f64; 3],
    pub stage_states: [DVector<f64>; 3],
    pub iterations: usize,
}

fn classify(err: RhmcError) -> StepFailure {
    match err {
        RhmcError::Boundary(_) | RhmcError::Numerical(_) => StepFailure::Inadmissible(err),
        other => StepFailure::Fatal(other),
    }
}

/// Lagrange weights that extrapolate stage derivatives of the previous
/// equal-length step to the nodes of the next one.
fn extrapolation_weights() -> [[f64; 3]; 3] {
    let prev = [NODES[0] - 1.0, NODES[1] - 1.0, NODES[2] - 1.0];
    std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let mut w = 1.0;
            for l in 0..3 {
                if l != j {
                    w *= (NODES[i] - prev[l]) / (prev[j] - prev[l]);
                }
            }
            w
        })
    })
}

/// Performs one Gauss–Legendre step of size `h` from `(t, y)`.
///
/// `guess` seeds the stage derivatives; without one every stage starts
/// from `rhs(t, y)`.
pub fn gauss_legendre_step<F>(
    rhs: &mut F,
    t: f64,
    y: &DVector<f64>,
    h: f64,
    cfg: &CollocationConfig,
    guess: Option<[DVector<f64>; 3]>,
) -> std::result::Result<AcceptedStep, StepFailure>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let mut k: [DVector<f64>; 3] = match guess {
        Some(k) => k,
        None => {
            let f0 = rhs(t, y).map_err(classify)?;
            [f0.clone(), f0.clone(), f0]
        }
    };
    let scale = 1.0 + y.amax();
    let stage_times = [t + NODES[0] * h, t + NODES[1] * h, t + NODES[2] * h];
    let mut last_delta = f64::INFINITY;
    let mut growth = 0;

    for iter in 1..=cfg.max_iterations {
        let mut delta: f64 = 0.0;
        let mut next: [DVector<f64>; 3] = [y.clone(), y.clone(), y.clone()];
        for i in 0..3 {
            let mut stage = y.clone();
            for j in 0..3 {
                stage.axpy(h * COEFFS[i][j], &k[j], 1.0);
            }
            let ki = rhs(stage_times[i], &stage).map_err(classify)?;
            delta = delta.max((&ki - &k[i]).amax() * h.abs());
            next[i] = ki;
        }
        k = next;
        if !delta.is_finite() {
            return Err(StepFailure::NoContraction);
        }
        if delta <= cfg.tolerance * scale {
            let mut y_new = y.clone();
            for j in 0..3 {
                y_new.axpy(h * WEIGHTS[j], &k[j], 1.0);
            }
            let stage_states = std::array::from_fn(|i| {
                let mut stage = y.clone();
                for j in 0..3 {
                    stage.axpy(h * COEFFS[i][j], &k[j], 1.0);
                }
                stage
            });
            return Ok(AcceptedStep {
                y_new,
                stage_derivatives: k,
                stage_times,
                stage_states,
                iterations: iter,
            });
        }
        if delta > last_delta {
            growth += 1;
            if growth >= 3 {
                return Err(StepFailure::NoContraction);
            }
        }
        last_delta = delta;
    }
    Err(StepFailure::NoContraction)
}

/// Counters from [`integrate_interval`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntervalStats {
    pub accepted_steps: usize,
    pub halvings: usize,
    pub iterations: usize,
}

/// Integrates `y' = rhs(t, y)` over `[0, t_end]` with `cfg.substeps` uniform
/// substeps, halving the step whenever a step is rejected.
///
/// `observe` sees every stage point (`node = false`) and every accepted
/// substep endpoint (`node = true`), in time order per step. It can abort the
/// integration by returning an error.
pub fn integrate_interval<F, O>(
    rhs: &mut F,
    y0: &DVector<f64>,
    t_end: f64,
    cfg: &CollocationConfig,
    mut observe: O,
) -> Result<(DVector<f64>, IntervalStats)>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
    O: FnMut(f64, &DVector<f64>, bool) -> Result<()>,
{
    let mut stats = IntervalStats::default();
    let mut y = y0.clone();
    if t_end == 0.0 {
        return Ok((y, stats));
    }
    let substeps = cfg.substeps.max(1);
    let mut h = t_end / substeps as f64;
    let mut t = 0.0;
    let eps = 1e-13 * t_end.abs();
    let extrapolate = extrapolation_weights();
    let mut previous: Option<(f64, [DVector<f64>; 3])> = None;

    while (t_end - t).abs() > eps {
        let h_eff = if (t + h - t_end) * t_end.signum() > 0.0 {
            t_end - t
        } else {
            h
        };
        let guess = match &previous {
            Some((h_prev, k)) if *h_prev == h_eff => Some(std::array::from_fn(|i| {
                let mut g = &k[0] * extrapolate[i][0];
                g.axpy(extrapolate[i][1], &k[1], 1.0);
                g.axpy(extrapolate[i][2], &k[2], 1.0);
                g
            })),
            _ => None,
        };
        match gauss_legendre_step(rhs, t, &y, h_eff, cfg, guess) {
            Ok(step) => {
                previous = Some((h_eff, step.stage_derivatives.clone()));
                for i in 0..3 {
                    observe(step.stage_times[i], &step.stage_states[i], false)?;
                }
                t += h_eff;
                if (t_end - t).abs() <= eps {
                    t = t_end;
                }
                y = step.y_new;
                observe(t, &y, true)?;
                stats.accepted_steps += 1;
                stats.iterations += step.iterations;
            }
            Err(StepFailure::Fatal(err)) => return Err(err),
            Err(fail) => {
                previous = None;
                stats.halvings += 1;
                if stats.halvings > cfg.max_halvings {
                    let why = match fail {
                        StepFailure::Inadmissible(e) => e.to_string(),
                        _ => "stage iteration failed to contract".to_string(),
                    };
                    return Err(RhmcError::boundary(format!(
                        "step rejected after {} halvings ({why})",
                        cfg.max_halvings
                    )));
                }
                h *= 0.5;
            }
        }
    }
    Ok((y, stats))
}
