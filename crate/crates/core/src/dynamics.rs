//! Hamiltonian curves of the barrier manifold.
//!
//! Curves are integrated in position/velocity form: `x' = w` and
//! `w' = g⁻¹A_xᵀ s_w² + mu(x)` with `s_w = A_x w`. The canonical momentum
//! `g(x) w` is never stored.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::{barrier, transport_rate, GibbsTarget, PointState};
use crate::collocation::{integrate_interval, CollocationConfig};
use crate::error::{Result, RhmcError};
use crate::polytope::Polytope;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A velocity is declared runaway once its metric norm exceeds this multiple
/// of `1 + |w0|_x`.
pub const RUNAWAY_FACTOR: f64 = 1e4;

/// Position and Euclidean velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub x: DVector<f64>,
    pub w: DVector<f64>,
}

impl PhasePoint {
    pub fn new(x: DVector<f64>, w: DVector<f64>) -> Self {
        PhasePoint { x, w }
    }

    /// The same point with the velocity negated.
    pub fn flipped(&self) -> Self {
        PhasePoint {
            x: self.x.clone(),
            w: -&self.w,
        }
    }

    fn stack(&self) -> DVector<f64> {
        let n = self.x.len();
        DVector::from_fn(2 * n, |i, _| if i < n { self.x[i] } else { self.w[i - n] })
    }

    fn unstack(y: &DVector<f64>, n: usize) -> Self {
        PhasePoint {
            x: y.rows(0, n).into_owned(),
            w: y.rows(n, n).into_owned(),
        }
    }
}

/// Time direction of an integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// `‖s_w‖₂`, `‖s_w‖₄` and `‖s_w‖∞` at one point of a curve.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SlackNorms {
    pub l2: f64,
    pub l4: f64,
    pub linf: f64,
}

impl SlackNorms {
    pub fn of(sw: &DVector<f64>) -> Self {
        let mut l2 = 0.0;
        let mut l4 = 0.0;
        let mut linf: f64 = 0.0;
        for &v in sw.iter() {
            let v2 = v * v;
            l2 += v2;
            l4 += v2 * v2;
            linf = linf.max(v.abs());
        }
        SlackNorms {
            l2: l2.sqrt(),
            l4: l4.sqrt().sqrt(),
            linf,
        }
    }

    pub fn scaled(self, k: f64) -> Self {
        SlackNorms {
            l2: self.l2 * k,
            l4: self.l4 * k,
            linf: self.linf * k,
        }
    }
}

/// One stored point of a trajectory.
#[derive(Debug, Clone)]
pub struct CurveSample {
    pub t: f64,
    pub x: DVector<f64>,
    pub w: DVector<f64>,
    pub norms: SlackNorms,
    /// Substep endpoint rather than an interior collocation stage.
    pub node: bool,
    /// Parallel-transported initial velocity, when requested.
    pub transported: Option<DVector<f64>>,
}

/// Everything recorded while integrating one curve.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub delta: f64,
    pub direction: Direction,
    pub start: PhasePoint,
    pub end: PhasePoint,
    /// Samples in time order; `t` runs from 0 to `delta` along the curve
    /// actually traced (velocities are those of the traced curve).
    pub samples: Vec<CurveSample>,
    pub energy_start: f64,
    pub energy_end: f64,
    pub halvings: usize,
    pub accepted_substeps: usize,
    /// Fixed-point iterations summed over accepted substeps.
    pub stage_iterations: usize,
}

impl TrajectoryRecord {
    /// `|H(end) − H(start)| / (1 + |H(start)|)`.
    pub fn relative_energy_drift(&self) -> f64 {
        (self.energy_end - self.energy_start).abs() / (1.0 + self.energy_start.abs())
    }

    pub fn norm_history(&self) -> Vec<SlackNorms> {
        self.samples.iter().map(|s| s.norms).collect()
    }
}

/// `H = alpha phi(x) + ½ log((2π)ⁿ det g(x)) + ½ wᵀ g(x) w`.
pub fn energy(p: &Polytope, state: &PointState, w: &DVector<f64>, target: &GibbsTarget) -> Result<f64> {
    let n = state.n() as f64;
    let potential = if target.alpha == 0.0 {
        0.0
    } else {
        target.alpha * barrier(p, state.x())?
    };
    let sw = state.slack_velocity(w);
    Ok(potential + 0.5 * (n * LN_2PI + state.log_det_metric()) + 0.5 * sw.norm_squared())
}

/// Right-hand side `(dx, dw)` of the first-order system.
pub fn vector_field(state: &PointState, w: &DVector<f64>, target: &GibbsTarget) -> (DVector<f64>, DVector<f64>) {
    let sw = state.slack_velocity(w);
    let rhs = DVector::from_fn(sw.len(), |i, _| sw[i] * sw[i] + state.sigma()[i] + target.alpha);
    (w.clone(), state.solve(&state.ax().tr_mul(&rhs)))
}

fn slack_norms_at(p: &Polytope, x: &DVector<f64>, w: &DVector<f64>) -> SlackNorms {
    let s = p.a() * x - p.b();
    let mut sw = p.a() * w;
    sw.component_div_assign(&s);
    SlackNorms::of(&sw)
}

fn check_finite(v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(RhmcError::Divergence("non-finite state during integration".into()))
    }
}

fn integrate_impl(
    p: &Polytope,
    target: &GibbsTarget,
    start: &PhasePoint,
    delta: f64,
    direction: Direction,
    cfg: &CollocationConfig,
    transport: bool,
) -> Result<TrajectoryRecord> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(RhmcError::input(format!("step size must be nonnegative, got {delta}")));
    }
    let n = p.n();
    if start.x.len() != n || start.w.len() != n {
        return Err(RhmcError::input("phase point dimension does not match the polytope"));
    }
    check_finite(&start.w)?;
    // Backward time is forward time with the velocity negated.
    let traced = match direction {
        Direction::Forward => start.clone(),
        Direction::Backward => start.flipped(),
    };
    let state0 = PointState::new(p, &traced.x)?;
    let energy_start = energy(p, &state0, &traced.w, target)?;
    let speed_cap = RUNAWAY_FACTOR * (1.0 + state0.norm(&traced.w));

    let dim = if transport { 3 * n } else { 2 * n };
    let mut y0 = DVector::zeros(dim);
    y0.rows_mut(0, 2 * n).copy_from(&traced.stack());
    if transport {
        y0.rows_mut(2 * n, n).copy_from(&traced.w);
    }

    let mut rhs = |_t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        check_finite(y)?;
        let x = y.rows(0, n).into_owned();
        let w = y.rows(n, n).into_owned();
        let state = PointState::new(p, &x)?;
        if state.norm(&w) > speed_cap {
            return Err(RhmcError::Divergence(format!(
                "velocity metric norm exceeded {speed_cap:e}"
            )));
        }
        let (dx, dw) = vector_field(&state, &w, target);
        let mut out = DVector::zeros(dim);
        out.rows_mut(0, n).copy_from(&dx);
        out.rows_mut(n, n).copy_from(&dw);
        if transport {
            let z = y.rows(2 * n, n).into_owned();
            out.rows_mut(2 * n, n).copy_from(&transport_rate(&state, &w, &z));
        }
        Ok(out)
    };

    let mut samples = vec![CurveSample {
        t: 0.0,
        x: traced.x.clone(),
        w: traced.w.clone(),
        norms: SlackNorms::of(&state0.slack_velocity(&traced.w)),
        node: true,
        transported: transport.then(|| traced.w.clone()),
    }];
    let (y_end, stats) = integrate_interval(&mut rhs, &y0, delta, cfg, |t, y, node| {
        let x = y.rows(0, n).into_owned();
        let w = y.rows(n, n).into_owned();
        samples.push(CurveSample {
            t,
            norms: slack_norms_at(p, &x, &w),
            x,
            w,
            node,
            transported: transport.then(|| y.rows(2 * n, n).into_owned()),
        });
        Ok(())
    })?;
    check_finite(&y_end)?;

    let traced_end = PhasePoint::unstack(&y_end.rows(0, 2 * n).into_owned(), n);
    let state1 = PointState::new(p, &traced_end.x)?;
    let energy_end = energy(p, &state1, &traced_end.w, target)?;
    let end = match direction {
        Direction::Forward => traced_end,
        Direction::Backward => traced_end.flipped(),
    };
    Ok(TrajectoryRecord {
        delta,
        direction,
        start: start.clone(),
        end,
        samples,
        energy_start,
        energy_end,
        halvings: stats.halvings,
        accepted_substeps: stats.accepted_steps,
        stage_iterations: stats.iterations,
    })
}

/// Integrates the Hamiltonian curve through `start` for time `delta` in
/// `direction`.
pub fn integrate(
    p: &Polytope,
    target: &GibbsTarget,
    start: &PhasePoint,
    delta: f64,
    direction: Direction,
    cfg: &CollocationConfig,
) -> Result<TrajectoryRecord> {
    integrate_impl(p, target, start, delta, direction, cfg, false)
}

/// As [`integrate`], also transporting the initial velocity along the curve.
pub fn integrate_with_transport(
    p: &Polytope,
    target: &GibbsTarget,
    start: &PhasePoint,
    delta: f64,
    direction: Direction,
    cfg: &CollocationConfig,
) -> Result<TrajectoryRecord> {
    integrate_impl(p, target, start, delta, direction, cfg, true)
}

/// Finite-difference step for the variational equation.
pub const JACOBIAN_FD_STEP: f64 = 1e-6;

/// Jacobian of the time-`delta` flow.
#[derive(Debug, Clone)]
pub struct FlowJacobian {
    pub end: PhasePoint,
    /// Derivative of `(x, w)` at the end with respect to `(x, w)` at the start.
    pub phase: DMatrix<f64>,
    /// The same map in canonical coordinates `(x, g(x) w)`.
    pub canonical: DMatrix<f64>,
    /// `log |det canonical|`.
    pub log_det: f64,
}

fn field_stacked(p: &Polytope, target: &GibbsTarget, z: &DVector<f64>, n: usize) -> Result<DVector<f64>> {
    let x = z.rows(0, n).into_owned();
    let w = z.rows(n, n).into_owned();
    let state = PointState::new(p, &x)?;
    let (dx, dw) = vector_field(&state, &w, target);
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&dx);
    out.rows_mut(n, n).copy_from(&dw);
    Ok(out)
}

/// Derivative of `(x, w) -> (x, g(x) w)`.
fn canonical_chart_derivative(state: &PointState, w: &DVector<f64>) -> DMatrix<f64> {
    let n = state.n();
    let sw = state.slack_velocity(w);
    let mut c = DMatrix::zeros(2 * n, 2 * n);
    c.view_mut((0, 0), (n, n)).fill_with_identity();
    c.view_mut((n, 0), (n, n))
        .copy_from(&(state.weighted_gram(&sw) * -2.0));
    c.view_mut((n, n), (n, n)).copy_from(&state.metric());
    c
}

fn log_abs_det(m: &DMatrix<f64>) -> Result<f64> {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut acc = 0.0;
    for i in 0..u.nrows() {
        let d = u[(i, i)].abs();
        if d == 0.0 || !d.is_finite() {
            return Err(RhmcError::numerical("singular flow Jacobian"));
        }
        acc += d.ln();
    }
    Ok(acc)
}

/// Flow Jacobian from the variational equation, with the second derivatives
/// of the Hamiltonian obtained by central differences of [`vector_field`].
pub fn variational_jacobian(
    p: &Polytope,
    target: &GibbsTarget,
    start: &PhasePoint,
    delta: f64,
    direction: Direction,
    cfg: &CollocationConfig,
) -> Result<FlowJacobian> {
    let n = p.n();
    let d = 2 * n;
    let traced = match direction {
        Direction::Forward => start.clone(),
        Direction::Backward => start.flipped(),
    };
    let mut y0 = DVector::zeros(d + d * d);
    y0.rows_mut(0, d).copy_from(&traced.stack());
    for i in 0..d {
        y0[d + i * d + i] = 1.0;
    }
    let mut rhs = |_t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        check_finite(y)?;
        let z = y.rows(0, d).into_owned();
        let f = field_stacked(p, target, &z, n)?;
        let mut jac = DMatrix::zeros(d, d);
        for k in 0..d {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += JACOBIAN_FD_STEP;
            zm[k] -= JACOBIAN_FD_STEP;
            let col = (field_stacked(p, target, &zp, n)? - field_stacked(p, target, &zm, n)?)
                / (2.0 * JACOBIAN_FD_STEP);
            jac.set_column(k, &col);
        }
        let flow = DMatrix::from_column_slice(d, d, y.rows(d, d * d).as_slice());
        let dflow = jac * flow;
        let mut out = DVector::zeros(d + d * d);
        out.rows_mut(0, d).copy_from(&f);
        out.rows_mut(d, d * d).copy_from_slice(dflow.as_slice());
        Ok(out)
    };
    let (y_end, _) = integrate_interval(&mut rhs, &y0, delta, cfg, |_, _, _| Ok(()))?;
    check_finite(&y_end)?;
    let traced_end = PhasePoint::unstack(&y_end.rows(0, d).into_owned(), n);
    let mut phase = DMatrix::from_column_slice(d, d, y_end.rows(d, d * d).as_slice());
    let end = match direction {
        Direction::Forward => traced_end,
        Direction::Backward => {
            // D(N T N) = N DT N with N negating the velocity block.
            for i in 0..d {
                for j in 0..d {
                    if (i < n) != (j < n) {
                        phase[(i, j)] = -phase[(i, j)];
                    }
                }
            }
            traced_end.flipped()
        }
    };
    let c0 = canonical_chart_derivative(&PointState::new(p, &start.x)?, &start.w);
    let c1 = canonical_chart_derivative(&PointState::new(p, &end.x)?, &end.w);
    let c0_inv = c0
        .try_inverse()
        .ok_or_else(|| RhmcError::numerical("singular canonical chart"))?;
    let canonical = c1 * &phase * c0_inv;
    let log_det = log_abs_det(&canonical)?;
    Ok(FlowJacobian {
        end,
        phase,
        canonical,
        log_det,
    })
}

/// Quantities the auxiliary function `ℓ` is normalized by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllParams {
    pub m1: f64,
    pub n: usize,
    pub delta: f64,
}

/// `sqrt(log n)` with `n` floored at 2 so the 1-D case stays finite.
fn sqrt_log_n(n: usize) -> f64 {
    (n.max(2) as f64).ln().sqrt()
}

/// `ℓ` evaluated on a sampled norm history whose first entry is `t = 0`.
pub fn ell_from_norms(history: &[SlackNorms], params: &EllParams) -> f64 {
    let Some(first) = history.first() else {
        return 0.0;
    };
    let n = params.n as f64;
    let m1q = params.m1.powf(0.25);
    let rl = sqrt_log_n(params.n);
    let along = history
        .iter()
        .map(|s| s.l2 / (n.sqrt() + m1q) + s.l4 / m1q + s.linf / (rl + params.m1.sqrt() * params.delta))
        .fold(0.0, f64::max);
    along + first.l2 / n.sqrt() + first.l4 / n.powf(0.25) + first.linf / rl
}

/// The auxiliary function `ℓ(γ)` of a recorded curve, maximized over the
/// stored stage and substep points.
pub fn aux_ell(record: &TrajectoryRecord, params: &EllParams) -> f64 {
    ell_from_norms(&record.norm_history(), params)
}
