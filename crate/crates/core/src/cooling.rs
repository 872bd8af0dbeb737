//! Volume estimation by Gaussian cooling over `exp(-φ/σ²)`.
//!
//! Starting from a narrow Gaussian at the analytic center, the temperature
//! `σ²` is raised phase by phase. Each phase estimates the ratio of
//! consecutive normalizing constants from RHMC samples, and the volume is the
//! Gaussian integral at `σ₀` times the product of those ratios.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::{barrier, barrier_gradient, GibbsTarget, PointState};
use crate::collocation::CollocationConfig;
use crate::error::{Result, RhmcError};
use crate::polytope::Polytope;
use crate::sampler::{rhmc_step, stream_rng, with_pool, ChainState, StepContext};

/// Stream id for the initial Gaussian draws, disjoint from chain ids.
const INITIAL_STREAM: u64 = 1 << 40;

/// Damped Newton iteration for the analytic center.
pub fn analytic_center(p: &Polytope) -> Result<(DVector<f64>, f64)> {
    const MAX_ITERS: usize = 500;
    const DECREMENT_TOL: f64 = 1e-10;
    let mut x = p.x0().clone();
    for _ in 0..MAX_ITERS {
        let state = PointState::new(p, &x)?;
        let grad = barrier_gradient(p, &x)?;
        let step = state.solve(&grad);
        let decrement = grad.dot(&step).max(0.0).sqrt();
        if decrement <= DECREMENT_TOL {
            return Ok((x, state.log_det_metric()));
        }
        // 1/(1+λ) keeps the iterate inside the Dikin ellipsoid.
        x -= step / (1.0 + decrement);
    }
    Err(RhmcError::NoConvergence(format!(
        "analytic center: Newton decrement above {DECREMENT_TOL:e} after {MAX_ITERS} iterations"
    )))
}

/// Constants and practical limits of the cooling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoolingConfig {
    /// Constant in `σ₀² = c · ε² n⁻³ log⁻³(n/ε)`.
    pub sigma0_constant: f64,
    /// Explicit starting temperature; overrides the rule above.
    pub sigma0_sq: Option<f64>,
    /// Constant in the per-phase sample counts.
    pub sample_constant: f64,
    /// Constant in the termination threshold `c (ϑ/ε) log(nϑ/ε)`.
    pub termination_constant: f64,
    /// Continue until `σ²` exceeds twice the threshold.
    pub extra_doubling: bool,
    pub k_min: usize,
    pub k_max: Option<usize>,
    /// Chains carried between phases.
    pub chains: usize,
    /// RHMC steps per chain between recorded samples.
    pub stride: usize,
    /// RHMC steps per chain at the start of each phase before recording.
    pub phase_burn_in: usize,
    /// Step-size constant of the RHMC sampler.
    pub step_constant: f64,
    pub collocation: CollocationConfig,
}

impl Default for CoolingConfig {
    fn default() -> Self {
        CoolingConfig {
            sigma0_constant: 1.0,
            sigma0_sq: None,
            sample_constant: 1.0,
            termination_constant: 1.0,
            extra_doubling: true,
            k_min: 1,
            k_max: None,
            chains: 16,
            stride: 1,
            phase_burn_in: 2,
            step_constant: 0.1,
            collocation: CollocationConfig::default(),
        }
    }
}

impl CoolingConfig {
    /// Settings that finish in minutes for `n ≤ 10`: `σ₀² = 0.05/n`, at most
    /// 800 samples per phase and a step constant of 2.
    pub fn practical(n: usize) -> Self {
        CoolingConfig {
            sigma0_sq: Some(0.05 / n.max(1) as f64),
            k_max: Some(800),
            step_constant: 2.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.sigma0_constant)
            && positive(self.sample_constant)
            && positive(self.termination_constant)
            && positive(self.step_constant))
        {
            return Err(RhmcError::input("cooling constants must be positive"));
        }
        if self.sigma0_sq.is_some_and(|s| !positive(s)) {
            return Err(RhmcError::input("sigma0_sq must be positive"));
        }
        if self.chains == 0 || self.stride == 0 || self.k_min == 0 {
            return Err(RhmcError::input("chains, stride and k_min must be at least 1"));
        }
        if self.k_max.is_some_and(|k| k < self.k_min) {
            return Err(RhmcError::input("k_max must be at least k_min"));
        }
        Ok(())
    }

    /// `σ₀²` for dimension `n` and accuracy `ε`.
    pub fn initial_sigma2(&self, n: usize, eps: f64) -> f64 {
        self.sigma0_sq.unwrap_or_else(|| {
            let nf = n as f64;
            let l = (nf / eps).ln();
            self.sigma0_constant * eps * eps / (nf.powi(3) * l.powi(3))
        })
    }

    /// Temperature above which the loop stops.
    pub fn stop_threshold(&self, n: usize, theta: f64, eps: f64) -> f64 {
        let t = self.termination_constant * theta / eps * (n as f64 * theta / eps).ln();
        if self.extra_doubling {
            2.0 * t
        } else {
            t
        }
    }

    fn clamp_k(&self, k: f64) -> usize {
        let k = (k.ceil() as usize).max(self.k_min);
        self.k_max.map_or(k, |cap| k.min(cap))
    }
}

/// Growth rate `r` with `σ'² = σ²(1 + r)`, capped at 1/2 so that
/// `2σ² > σ'²` always holds.
pub fn schedule_ratio(sigma2: f64, n: usize, theta: f64) -> f64 {
    let nf = n as f64;
    let r = if theta <= nf * sigma2 {
        1.0 / nf.sqrt()
    } else {
        (sigma2.sqrt() / theta.sqrt()).min(0.5)
    };
    r.min(0.5)
}

/// Next temperature and the sample count for the current phase.
pub fn schedule_next(sigma2: f64, n: usize, theta: f64, eps: f64, cfg: &CoolingConfig) -> (f64, usize) {
    let nf = n as f64;
    let r = schedule_ratio(sigma2, n, theta);
    let next = sigma2 * (1.0 + r);
    assert!(2.0 * sigma2 > next, "schedule step violates 2σ² > σ'²");
    let log_term = (nf / eps).ln().max(1.0) / (eps * eps);
    let k = if theta <= nf * sigma2 {
        nf.sqrt() * log_term
    } else {
        (theta.sqrt() / sigma2.sqrt() + 1.0) * log_term
    };
    (next, cfg.clamp_k(cfg.sample_constant * k))
}

/// The full `(σ_i², σ_{i+1}², k_i)` sequence a run will visit.
pub fn schedule(n: usize, theta: f64, eps: f64, cfg: &CoolingConfig) -> Vec<(f64, f64, usize)> {
    let stop = cfg.stop_threshold(n, theta, eps);
    let mut sigma2 = cfg.initial_sigma2(n, eps);
    let mut out = Vec::new();
    while sigma2 <= stop {
        let (next, k) = schedule_next(sigma2, n, theta, eps, cfg);
        out.push((sigma2, next, k));
        sigma2 = next;
    }
    out
}

/// Gaussian draws around the center, with out-of-body draws redrawn.
#[derive(Debug, Clone)]
pub struct InitialDraws {
    pub points: Vec<DVector<f64>>,
    pub rejections: usize,
}

/// Draws `k0` points from `N(x*, σ₀² g(x*)⁻¹)` restricted to the body.
pub fn initial_phase<R: Rng + ?Sized>(
    p: &Polytope,
    center: &DVector<f64>,
    sigma0_sq: f64,
    k0: usize,
    rng: &mut R,
) -> Result<InitialDraws> {
    let state = PointState::new(p, center)?;
    let scale = sigma0_sq.sqrt();
    let mut points = Vec::with_capacity(k0);
    let mut rejections = 0;
    while points.len() < k0 {
        let z = DVector::from_fn(p.n(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = center + state.whiten(&z) * scale;
        if p.is_safely_interior(&x) {
            points.push(x);
        } else {
            rejections += 1;
            if rejections > k0.max(16) && rejections > points.len() {
                return Err(RhmcError::Sampler(format!(
                    "initial Gaussian rejected {rejections} of {} draws; sigma0 too large for this body",
                    rejections + points.len()
                )));
            }
        }
    }
    Ok(InitialDraws { points, rejections })
}

/// Per-phase results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub sigma2: f64,
    pub next_sigma2: f64,
    pub k: usize,
    pub log_w: f64,
    /// Standard error of `W` from the sample spread of `Y`.
    pub w_se: f64,
    /// `E[Y²] / E[Y]²` over the phase samples.
    pub second_moment_ratio: f64,
    pub phi_mean: f64,
    pub phi_variance: f64,
    pub steps: usize,
    pub rejections: usize,
}

impl PhaseRecord {
    pub fn w(&self) -> f64 {
        self.log_w.exp()
    }

    /// Growth rate `σ'²/σ² − 1`.
    pub fn ratio(&self) -> f64 {
        self.next_sigma2 / self.sigma2 - 1.0
    }
}

/// Samples the phase at `σ²` with the carried chains and estimates
/// `F(σ'²) / F(σ²)` from `Y = exp((σ⁻² − σ'⁻²)(φ − φ*))`.
pub fn phase_ratio(
    p: &Polytope,
    phi_center: f64,
    sigma2: f64,
    next_sigma2: f64,
    chains: &mut [ChainState],
    k: usize,
    cfg: &CoolingConfig,
) -> Result<PhaseRecord> {
    if chains.is_empty() {
        return Err(RhmcError::input("phase needs at least one chain"));
    }
    if next_sigma2 < sigma2 {
        return Err(RhmcError::input("temperatures must not decrease"));
    }
    let target = GibbsTarget::new(1.0 / sigma2)?;
    let ctx = StepContext {
        ell: None,
        ..StepContext::new(p, target, cfg.step_constant, cfg.collocation)
    };
    let steps_before: usize = chains.iter().map(|c| c.steps).sum();
    let rejections_before: usize = chains.iter().map(|c| c.rejections).sum();
    let per_chain = |i: usize| k / chains.len() + usize::from(i < k % chains.len());
    let quotas: Vec<usize> = (0..chains.len()).map(per_chain).collect();

    let phis: Vec<Vec<f64>> = with_pool(|| {
        chains
            .par_iter_mut()
            .zip(quotas.par_iter())
            .map(|(chain, &quota)| {
                for _ in 0..cfg.phase_burn_in {
                    rhmc_step(chain, &ctx)?;
                }
                let mut out = Vec::with_capacity(quota);
                for _ in 0..quota {
                    for _ in 0..cfg.stride {
                        rhmc_step(chain, &ctx)?;
                    }
                    out.push(barrier(p, &chain.x)? - phi_center);
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let phis: Vec<f64> = phis.into_iter().flatten().collect();

    let gap = 1.0 / sigma2 - 1.0 / next_sigma2;
    let log_y: Vec<f64> = phis.iter().map(|&f| gap * f).collect();
    let kf = phis.len() as f64;
    let top = log_y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = log_y.iter().map(|&l| (l - top).exp()).collect();
    let m1 = scaled.iter().sum::<f64>() / kf;
    let m2 = scaled.iter().map(|y| y * y).sum::<f64>() / kf;
    let log_w = top + m1.ln();
    let var_scaled = if phis.len() > 1 {
        scaled.iter().map(|y| (y - m1).powi(2)).sum::<f64>() / (kf - 1.0)
    } else {
        0.0
    };
    let w_se = (var_scaled / kf).sqrt() * top.exp();
    let (phi_mean, phi_variance) = crate::diagnostics::mean_var(&phis);

    Ok(PhaseRecord {
        sigma2,
        next_sigma2,
        k: phis.len(),
        log_w,
        w_se,
        second_moment_ratio: m2 / (m1 * m1),
        phi_mean,
        phi_variance: if phi_variance.is_nan() { 0.0 } else { phi_variance },
        steps: chains.iter().map(|c| c.steps).sum::<usize>() - steps_before,
        rejections: chains.iter().map(|c| c.rejections).sum::<usize>() - rejections_before,
    })
}

/// Run-level diagnostics of a cooling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoolingDiagnostics {
    pub polytope: String,
    pub n: usize,
    pub m: usize,
    pub theta: f64,
    pub center: Vec<f64>,
    pub logdet_hessian: f64,
    pub sigma0_sq: f64,
    pub stop_threshold: f64,
    pub initial_rejections: usize,
    pub config: CoolingConfig,
    pub phases: Vec<PhaseRecord>,
}

/// Output of [`estimate_volume`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub volume: f64,
    pub log_volume: f64,
    pub epsilon: f64,
    pub phases: usize,
    pub total_steps: usize,
    pub seed: u64,
    pub diagnostics: CoolingDiagnostics,
}

/// A failed run with everything computed up to the failure.
#[derive(Debug, Clone)]
pub struct CoolingFailure {
    pub error: RhmcError,
    pub partial: Option<CoolingDiagnostics>,
}

impl From<RhmcError> for CoolingFailure {
    fn from(error: RhmcError) -> Self {
        CoolingFailure { error, partial: None }
    }
}

/// Estimates `vol(P)` to relative accuracy `ε`.
pub fn estimate_volume(p: &Polytope, eps: f64, cfg: &CoolingConfig, seed: u64) -> Result<VolumeEstimate> {
    estimate_volume_traced(p, eps, cfg, seed).map_err(|f| f.error)
}

/// As [`estimate_volume`], keeping the partial diagnostics on failure.
pub fn estimate_volume_traced(
    p: &Polytope,
    eps: f64,
    cfg: &CoolingConfig,
    seed: u64,
) -> std::result::Result<VolumeEstimate, Box<CoolingFailure>> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Box::new(RhmcError::input(format!("epsilon must lie in (0, 1/2), got {eps}")).into()));
    }
    cfg.validate().map_err(|e| Box::new(e.into()))?;
    let (n, m) = (p.n(), p.m());
    let theta = m as f64;
    let (center, logdet) = analytic_center(p).map_err(|e| Box::new(e.into()))?;
    let phi_center = barrier(p, &center).map_err(|e| Box::new(e.into()))?;
    let sigma0_sq = cfg.initial_sigma2(n, eps);
    let mut diag = CoolingDiagnostics {
        polytope: p.name().to_string(),
        n,
        m,
        theta,
        center: center.as_slice().to_vec(),
        logdet_hessian: logdet,
        sigma0_sq,
        stop_threshold: cfg.stop_threshold(n, theta, eps),
        initial_rejections: 0,
        config: cfg.clone(),
        phases: Vec::new(),
    };
    let mut rng = stream_rng(seed, INITIAL_STREAM);
    let init = match initial_phase(p, &center, sigma0_sq, cfg.chains, &mut rng) {
        Ok(init) => init,
        Err(error) => {
            return Err(Box::new(CoolingFailure {
                error,
                partial: Some(diag),
            }))
        }
    };
    diag.initial_rejections = init.rejections;
    let mut chains: Vec<ChainState> = init
        .points
        .into_iter()
        .enumerate()
        .map(|(i, x)| ChainState::new(i, x, stream_rng(seed, i as u64)))
        .collect();

    for (sigma2, next, k) in schedule(n, theta, eps, cfg) {
        match phase_ratio(p, phi_center, sigma2, next, &mut chains, k, cfg) {
            Ok(rec) => diag.phases.push(rec),
            Err(error) => {
                return Err(Box::new(CoolingFailure {
                    error,
                    partial: Some(diag),
                }))
            }
        }
    }

    let log_volume = 0.5 * n as f64 * (2.0 * std::f64::consts::PI * sigma0_sq).ln() - 0.5 * logdet
        + diag.phases.iter().map(|r| r.log_w).sum::<f64>();
    Ok(VolumeEstimate {
        volume: log_volume.exp(),
        log_volume,
        epsilon: eps,
        phases: diag.phases.len(),
        total_steps: chains.iter().map(|c| c.steps).sum(),
        seed,
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::{generate, BodyKind, GenParams};
    use approx::assert_relative_eq;

    fn body(kind: BodyKind, n: usize) -> Polytope {
        generate(kind, n, GenParams::default()).unwrap()
    }

    #[test]
    fn center_of_cube_and_simplex() {
        for n in [1, 3, 6] {
            let p = body(BodyKind::Cube, n);
            // Start away from the center to exercise the damping.
            let off = Polytope::new(
                "cube",
                p.a().clone(),
                p.b().clone(),
                DVector::from_fn(n, |i, _| 0.05 + 0.1 * i as f64),
            )
            .unwrap();
            let (x, logdet) = analytic_center(&off).unwrap();
            assert!(x.iter().all(|v| (v - 0.5).abs() < 1e-12));
            assert_relative_eq!(logdet, n as f64 * 8f64.ln(), epsilon = 1e-10);
        }
        let (x, _) = analytic_center(&body(BodyKind::Simplex, 2)).unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-12 && (x[1] - 1.0 / 3.0).abs() < 1e-12);
        let p = body(BodyKind::Simplex, 4);
        let (x, _) = analytic_center(&p).unwrap();
        assert!(barrier_gradient(&p, &x).unwrap().amax() < 1e-8);
    }

    #[test]
    fn schedule_display_cases() {
        let cfg = CoolingConfig::default();
        let (s, _) = schedule_next(3.0, 4, 8.0, 0.2, &cfg);
        assert_relative_eq!(s, 4.5, epsilon = 1e-15);
        let (s, _) = schedule_next(1.0, 4, 100.0, 0.2, &cfg);
        assert_relative_eq!(s, 1.1, epsilon = 1e-15);
        // Tie goes to the first branch.
        assert_eq!(schedule_ratio(2.0, 4, 8.0), 0.5);
        assert_eq!(schedule_ratio(2.0, 9, 18.0), 1.0 / 3.0);
        assert!(schedule_ratio(1.999, 9, 18.0) < 0.34);
        // n = 1 would double; the cap keeps 2σ² > σ'².
        assert_eq!(schedule_ratio(5.0, 1, 2.0), 0.5);
    }

    #[test]
    fn sample_counts_follow_regimes() {
        let cfg = CoolingConfig::default();
        let eps: f64 = 0.2;
        let lt = (4.0 / eps).ln() / (eps * eps);
        let (_, k) = schedule_next(3.0, 4, 8.0, eps, &cfg);
        assert_eq!(k, (2.0 * lt).ceil() as usize);
        let (_, k) = schedule_next(1.0, 4, 100.0, eps, &cfg);
        assert_eq!(k, (11.0 * lt).ceil() as usize);
        let capped = CoolingConfig {
            k_max: Some(50),
            k_min: 10,
            ..cfg
        };
        assert_eq!(schedule_next(1.0, 4, 100.0, eps, &capped).1, 50);
    }

    #[test]
    fn schedule_replay_is_increasing_and_terminates() {
        let cfg = CoolingConfig {
            sigma0_sq: Some(0.01),
            ..Default::default()
        };
        let s = schedule(5, 10.0, 0.2, &cfg);
        assert!(!s.is_empty());
        assert_eq!(s[0].0, 0.01);
        for w in s.windows(2) {
            assert_eq!(w[0].1, w[1].0);
            assert!(w[1].0 > w[0].0);
        }
        let last = s.last().unwrap();
        assert!(last.0 <= cfg.stop_threshold(5, 10.0, 0.2));
        assert!(last.1 > cfg.stop_threshold(5, 10.0, 0.2));
    }

    #[test]
    fn default_sigma0_rule() {
        let cfg = CoolingConfig::default();
        let expected = 0.04 / (1000.0 * 50f64.ln().powi(3));
        assert_relative_eq!(cfg.initial_sigma2(10, 0.2), expected, max_relative = 1e-14);
    }

    #[test]
    fn initial_draws_match_gaussian() {
        let p = body(BodyKind::Cube, 3);
        let center = DVector::from_element(3, 0.5);
        let mut rng = stream_rng(5, 0);
        let draws = initial_phase(&p, &center, 1e-3, 10_000, &mut rng).unwrap();
        assert_eq!(draws.rejections, 0);
        // Covariance σ₀² g⁻¹ = 1e-3/8 per coordinate.
        for j in 0..3 {
            let xs: Vec<f64> = draws.points.iter().map(|x| x[j]).collect();
            let (mean, var) = crate::diagnostics::mean_var(&xs);
            let se = (1e-3f64 / 8.0 / 1e4).sqrt();
            assert!((mean - 0.5).abs() < 3.0 * se);
            assert!((var / (1e-3 / 8.0) - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn initial_phase_rejects_wide_gaussian() {
        let p = body(BodyKind::Cube, 2);
        let mut rng = stream_rng(5, 0);
        let err = initial_phase(&p, &DVector::from_element(2, 0.5), 100.0, 50, &mut rng).unwrap_err();
        assert!(matches!(err, RhmcError::Sampler(_)));
    }

    #[test]
    fn equal_temperatures_give_unit_ratio() {
        let p = body(BodyKind::Cube, 2);
        let cfg = CoolingConfig::default();
        let mut chains: Vec<ChainState> = (0..3)
            .map(|i| ChainState::new(i, DVector::from_element(2, 0.5), stream_rng(1, i as u64)))
            .collect();
        let phi_c = barrier(&p, &DVector::from_element(2, 0.5)).unwrap();
        let rec = phase_ratio(&p, phi_c, 0.3, 0.3, &mut chains, 10, &cfg).unwrap();
        assert_eq!(rec.log_w, 0.0);
        assert_eq!(rec.k, 10);
        assert_eq!(rec.second_moment_ratio, 1.0);
    }

    #[test]
    fn small_volume_runs_are_reproducible() {
        let p = body(BodyKind::Cube, 2);
        let cfg = CoolingConfig {
            sigma0_sq: Some(0.02),
            k_max: Some(40),
            chains: 4,
            step_constant: 2.0,
            ..Default::default()
        };
        let a = estimate_volume(&p, 0.2, &cfg, 3).unwrap();
        let b = estimate_volume(&p, 0.2, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.phases, schedule(2, 4.0, 0.2, &cfg).len());
        let sum: f64 = a.diagnostics.phases.iter().map(|r| r.log_w).sum();
        let expected = (2.0 * std::f64::consts::PI * 0.02).ln() - 0.5 * a.diagnostics.logdet_hessian + sum;
        assert_relative_eq!(a.log_volume, expected, epsilon = 1e-12);
        assert_relative_eq!(a.volume, a.log_volume.exp(), max_relative = 1e-15);
        assert!((a.volume - 1.0).abs() < 0.5);
    }

    #[test]
    fn translation_leaves_estimate_unchanged() {
        let p = body(BodyKind::Cube, 2);
        let shifted = p.translated(&DVector::from_vec(vec![3.0, -2.0])).unwrap();
        let cfg = CoolingConfig {
            sigma0_sq: Some(0.02),
            k_max: Some(20),
            chains: 2,
            step_constant: 1.0,
            ..Default::default()
        };
        let a = estimate_volume(&p, 0.3, &cfg, 9).unwrap();
        let b = estimate_volume(&shifted, 0.3, &cfg, 9).unwrap();
        assert_eq!(a.phases, b.phases);
        assert!((a.log_volume - b.log_volume).abs() < 1e-6, "{} vs {}", a.log_volume, b.log_volume);
    }

    #[test]
    fn epsilon_range_checked() {
        let p = body(BodyKind::Cube, 1);
        for eps in [0.0, 0.5, 0.6, -0.1] {
            assert!(matches!(
                estimate_volume(&p, eps, &CoolingConfig::default(), 0),
                Err(RhmcError::Input(_))
            ));
        }
    }
}
