//! The log-barrier Hessian manifold of a polytope.
//!
//! At an interior point `x` the metric is `g(x) = A_xᵀA_x` with
//! `A_x = Diag(s_x)⁻¹A` and `s_x = Ax − b`. Everything here works in
//! Euclidean coordinates and reuses one Cholesky factor of `g` per point.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::collocation::{integrate_interval, CollocationConfig};
use crate::error::{Result, RhmcError};
use crate::polytope::Polytope;

/// Target density `exp(-alpha * phi(x))` on the polytope interior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsTarget {
    pub alpha: f64,
}

impl GibbsTarget {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(RhmcError::input(format!(
                "alpha must be finite and nonnegative, got {alpha}"
            )));
        }
        Ok(GibbsTarget { alpha })
    }
}

/// Cached geometry at one interior point.
#[derive(Debug, Clone)]
pub struct PointState {
    x: DVector<f64>,
    s: DVector<f64>,
    ax: DMatrix<f64>,
    axt: DMatrix<f64>,
    g: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    sigma: DVector<f64>,
    log_det: f64,
}

impl PointState {
    /// Slacks, rescaled matrix, metric factorization and leverage scores at `x`.
    pub fn new(p: &Polytope, x: &DVector<f64>) -> Result<Self> {
        let view = p.slacks(x)?;
        let min = view.min();
        if !(min > p.slack_floor()) || !view.interior {
            return Err(RhmcError::boundary(format!(
                "minimum slack {min:e} at or below the guard {:e}",
                p.slack_floor()
            )));
        }
        let s = view.s;
        let mut ax = p.a().clone();
        for (i, mut row) in ax.row_iter_mut().enumerate() {
            row /= s[i];
        }
        // Explicit transposes keep these products on the blocked gemm path.
        let axt = ax.transpose();
        let g = &axt * &ax;
        let chol = Cholesky::new(g.clone())
            .ok_or_else(|| RhmcError::numerical("metric is not positive definite"))?;
        let l = chol.l_dirty();
        let log_det = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(RhmcError::numerical("metric log-determinant is not finite"));
        }
        // Columns of L⁻¹A_xᵀ; their squared norms are the leverage scores.
        let mut w = axt.clone();
        if !chol.l_dirty().solve_lower_triangular_mut(&mut w) {
            return Err(RhmcError::numerical("triangular solve failed"));
        }
        let sigma = DVector::from_iterator(w.ncols(), w.column_iter().map(|c| c.norm_squared()));
        Ok(PointState {
            x: x.clone(),
            s,
            ax,
            axt,
            g,
            chol,
            sigma,
            log_det,
        })
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn m(&self) -> usize {
        self.s.len()
    }

    /// Slacks `s_x`.
    pub fn slacks(&self) -> &DVector<f64> {
        &self.s
    }

    /// `A_x`, rows `a_i / s_i`.
    pub fn ax(&self) -> &DMatrix<f64> {
        &self.ax
    }

    /// Leverage scores `diag(P_x)`.
    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    /// Lower Cholesky factor `L` with `g = LLᵀ`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn metric(&self) -> DMatrix<f64> {
        self.g.clone()
    }

    /// `A_xᵀ`.
    pub fn axt(&self) -> &DMatrix<f64> {
        &self.axt
    }

    /// `log det g(x)`.
    pub fn log_det_metric(&self) -> f64 {
        self.log_det
    }

    /// Solves `g y = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    /// Solves `Lᵀ y = z`; maps a standard Gaussian to `N(0, g⁻¹)`.
    pub fn whiten(&self, z: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .tr_solve_lower_triangular(z)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `s_{x,v} = A_x v`.
    pub fn slack_velocity(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.ax * v
    }

    /// `<u, v>_x = uᵀ g v`.
    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (&self.ax * u).dot(&(&self.ax * v))
    }

    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        (&self.ax * v).norm()
    }

    /// The projection `P_x = A_x g⁻¹ A_xᵀ` (m×m).
    pub fn projection(&self) -> DMatrix<f64> {
        let mut w = self.axt.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut w);
        w.transpose() * w
    }

    /// `A_xᵀ Diag(d) A_x`.
    pub fn weighted_gram(&self, d: &DVector<f64>) -> DMatrix<f64> {
        let mut scaled = self.ax.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= d[i];
        }
        &self.axt * scaled
    }
}

/// `phi(x) = -sum log s_i`.
pub fn barrier(p: &Polytope, x: &DVector<f64>) -> Result<f64> {
    let view = p.slacks(x)?;
    if !view.interior {
        return Err(RhmcError::boundary("barrier evaluated outside the interior"));
    }
    Ok(-view.s.iter().map(|s| s.ln()).sum::<f64>())
}

/// `grad phi(x) = -A_xᵀ 1`.
pub fn barrier_gradient(p: &Polytope, x: &DVector<f64>) -> Result<DVector<f64>> {
    let view = p.slacks(x)?;
    if !view.interior {
        return Err(RhmcError::boundary("gradient evaluated outside the interior"));
    }
    let inv = view.s.map(|s| -1.0 / s);
    Ok(p.a().tr_mul(&inv))
}

/// Drift `mu(x) = g⁻¹ A_xᵀ (sigma_x + alpha 1)` of the Hamiltonian curve for `f = alpha phi`.
pub fn drift_mu(state: &PointState, target: &GibbsTarget) -> DVector<f64> {
    let rhs = state.sigma.map(|s| s + target.alpha);
    state.solve(&state.ax.tr_mul(&rhs))
}

/// Curvature operators along a curve, in Euclidean coordinates.
#[derive(Debug, Clone)]
pub struct CurvatureOperators {
    /// `R(t)u = R(u, γ')γ'`.
    pub r_op: DMatrix<f64>,
    /// `M(t)u = D_u mu`.
    pub m_op: DMatrix<f64>,
    /// `M - R`.
    pub phi_op: DMatrix<f64>,
    pub velocity: DVector<f64>,
}

/// Builds `R`, `M` and `Phi = M - R` at `state` for curve velocity `v`.
pub fn curvature_ops(state: &PointState, v: &DVector<f64>, target: &GibbsTarget) -> CurvatureOperators {
    let p = state.projection();
    let sv = state.slack_velocity(v);
    let mu = drift_mu(state, target);
    let smu = state.slack_velocity(&mu);

    // A_xᵀ S_v P S_v A_x = (S_v A_x)ᵀ P (S_v A_x)
    let mut sv_ax = state.ax.clone();
    for (i, mut row) in sv_ax.row_iter_mut().enumerate() {
        row *= sv[i];
    }
    let first = sv_ax.transpose() * (&p * &sv_ax);
    let p_sv2 = &p * sv.component_mul(&sv);
    let r_inner = first - state.weighted_gram(&p_sv2);
    let r_op = state.solve_matrix(&r_inner);

    let p2 = p.component_mul(&p);
    let diag = smu - state.sigma.map(|s| 3.0 * s);
    let mut m_inner = state.weighted_gram(&diag) + 2.0 * (&state.axt * (&p2 * &state.ax));
    m_inner -= target.alpha * &state.g;
    let m_op = state.solve_matrix(&m_inner);

    let phi_op = &m_op - &r_op;
    CurvatureOperators {
        r_op,
        m_op,
        phi_op,
        velocity: v.clone(),
    }
}

/// `R(u, v)w = g⁻¹ A_xᵀ (S_v P S_w − Diag(P s_v s_w)) A_x u`.
pub fn riemann_apply(
    state: &PointState,
    u: &DVector<f64>,
    v: &DVector<f64>,
    w: &DVector<f64>,
) -> DVector<f64> {
    let p = state.projection();
    let su = state.slack_velocity(u);
    let sv = state.slack_velocity(v);
    let sw = state.slack_velocity(w);
    let left = sv.component_mul(&(&p * sw.component_mul(&su)));
    let right = (&p * sv.component_mul(&sw)).component_mul(&su);
    state.solve(&state.ax.tr_mul(&(left - right)))
}

/// `Ric(u) = s_uᵀ P⁽²⁾ s_u − sigmaᵀ P s_u²`.
pub fn ricci(state: &PointState, u: &DVector<f64>) -> f64 {
    let p = state.projection();
    let su = state.slack_velocity(u);
    let p2 = p.component_mul(&p);
    su.dot(&(&p2 * &su)) - state.sigma.dot(&(&p * su.component_mul(&su)))
}

/// A differentiable curve in the polytope, parametrized by time.
pub trait Curve {
    /// Position and velocity at time `t`.
    fn at(&self, t: f64) -> (DVector<f64>, DVector<f64>);
}

/// `x(t) = origin + t * direction`.
#[derive(Debug, Clone)]
pub struct LinearCurve {
    pub origin: DVector<f64>,
    pub direction: DVector<f64>,
}

impl Curve for LinearCurve {
    fn at(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        (&self.origin + &self.direction * t, self.direction.clone())
    }
}

impl<F> Curve for F
where
    F: Fn(f64) -> (DVector<f64>, DVector<f64>),
{
    fn at(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        self(t)
    }
}

/// Right-hand side of the transport equation `dv/dt = g⁻¹A_γᵀ S_{γ'} A_γ v`.
pub fn transport_rate(state: &PointState, velocity: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let sg = state.slack_velocity(velocity);
    let sv = state.slack_velocity(v);
    state.solve(&state.ax.tr_mul(&sg.component_mul(&sv)))
}

/// Transports `v0` along `curve` over `[0, t_end]`.
///
/// Returns the transported vector at every accepted substep endpoint,
/// starting with `(0, v0)`.
pub fn parallel_transport<C: Curve + ?Sized>(
    p: &Polytope,
    curve: &C,
    v0: &DVector<f64>,
    t_end: f64,
    cfg: &CollocationConfig,
) -> Result<Vec<(f64, DVector<f64>)>> {
    let mut rhs = |t: f64, v: &DVector<f64>| -> Result<DVector<f64>> {
        let (x, xdot) = curve.at(t);
        let state = PointState::new(p, &x)?;
        Ok(transport_rate(&state, &xdot, v))
    };
    let mut out = vec![(0.0, v0.clone())];
    integrate_interval(&mut rhs, v0, t_end, cfg, |t, v, node| {
        if node {
            out.push((t, v.clone()));
        }
        Ok(())
    })?;
    Ok(out)
}

/// Frobenius norm of an operator in the metric at `state`: `‖LᵀΦL⁻ᵀ‖_F` with `g = LLᵀ`.
pub fn metric_frobenius_norm(state: &PointState, op: &DMatrix<f64>) -> f64 {
    let l = state.chol.l();
    // (L⁻¹ (LᵀΦ)ᵀ)ᵀ = LᵀΦL⁻ᵀ
    let lt_op = l.transpose() * op;
    match l.solve_lower_triangular(&lt_op.transpose()) {
        Some(m) => m.norm(),
        None => f64::NAN,
    }
}

/// Smoothness parameters `(M1, M2, M3)` of `f = alpha phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierParams {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

pub fn barrier_params(n: usize, m: usize, target: &GibbsTarget) -> BarrierParams {
    let a = target.alpha;
    BarrierParams {
        m1: n as f64 + a * a * m as f64,
        m2: a,
        m3: 2.0 * a * (n as f64).sqrt(),
    }
}
