//! Runnable verification suites: each returns a table of [`OracleResult`]s.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::{GibbsTarget, PointState};
use crate::collocation::CollocationConfig;
use crate::constants::ELL_THRESHOLD;
use crate::diagnostics::{effective_sample_size, ks_statistic, mean_var};
use crate::dynamics::{aux_ell, integrate, integrate_with_transport, variational_jacobian, Direction, PhasePoint, TrajectoryRecord};
use crate::error::{Result, RhmcError};
use crate::oracles::{beta_oracle, parameter_monitor, OracleResult};
use crate::polytope::{generate, BodyKind, GenParams, Polytope};
use crate::sampler::{draw_velocity, rhmc_step, run_chains, stream_rng, ChainState, SamplerConfig, StepContext, StepOutcome};

pub const ENERGY_TOLERANCE: f64 = 1e-8;
pub const REVERSAL_TOLERANCE: f64 = 1e-6;
pub const LOG_DET_TOLERANCE: f64 = 1e-4;
pub const STATIONARITY_KS: f64 = 0.02;
pub const BETA_KS: f64 = 0.01;
pub const BETA_VARIANCE_SE: f64 = 3.0;
pub const ELL_TAIL_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Energy,
    Reversal,
    Jacobian,
    Stationarity,
    Ell,
    Params,
    Beta,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Energy,
        Suite::Reversal,
        Suite::Jacobian,
        Suite::Stationarity,
        Suite::Ell,
        Suite::Params,
        Suite::Beta,
    ];

    /// Suites that run on the built-in interval and ignore the given body.
    pub fn uses_interval(self) -> bool {
        matches!(self, Suite::Stationarity | Suite::Beta)
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Energy => "energy",
            Suite::Reversal => "reversal",
            Suite::Jacobian => "jacobian",
            Suite::Stationarity => "stationarity",
            Suite::Ell => "ell",
            Suite::Params => "params",
            Suite::Beta => "beta",
        }
    }
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Suite {
    type Err = RhmcError;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| RhmcError::Input(format!("unknown suite '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    /// Gibbs weight for body suites; `None` means `1/m`.
    pub alpha: Option<f64>,
    pub step_constant: f64,
    /// Curves for the energy, reversal, ell and params suites.
    pub trajectories: usize,
    pub jacobian_starts: usize,
    pub seed: u64,
    pub stationarity_alpha: f64,
    pub stationarity_draws: usize,
    pub beta_alphas: Vec<f64>,
    /// Post-burn-in draws per `α`, split evenly across chains.
    pub beta_samples: usize,
    pub beta_chains: usize,
    pub beta_burn_in: usize,
    pub beta_step_constant: f64,
    pub collocation: CollocationConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            alpha: None,
            step_constant: 0.1,
            trajectories: 1000,
            jacobian_starts: 100,
            seed: 0,
            stationarity_alpha: 1.0,
            stationarity_draws: 10_000,
            beta_alphas: vec![0.5, 1.0, 2.0],
            beta_samples: 100_000,
            beta_chains: 4,
            beta_burn_in: 1000,
            beta_step_constant: 2.0,
            collocation: CollocationConfig::default(),
        }
    }
}

impl VerifyConfig {
    pub fn target_for(&self, p: &Polytope) -> Result<GibbsTarget> {
        GibbsTarget::new(self.alpha.unwrap_or(1.0 / p.m() as f64))
    }
}

/// The unit interval `[0, 1]`.
pub fn interval() -> Polytope {
    generate(BodyKind::Cube, 1, GenParams::default()).expect("unit interval")
}

/// Curves traced by one chain started at the witness, one per step.
#[derive(Debug, Clone)]
pub struct TracedCurves {
    pub records: Vec<TrajectoryRecord>,
    pub rejections: usize,
}

pub fn trace_chain(p: &Polytope, ctx: &StepContext<'_>, count: usize, seed: u64) -> Result<TracedCurves> {
    let mut chain = ChainState::new(0, p.x0().clone(), stream_rng(seed, 0));
    let mut records = Vec::with_capacity(count);
    let mut rejections = 0;
    while records.len() < count {
        match rhmc_step(&mut chain, ctx)? {
            StepOutcome::Moved(rec) => records.push(*rec),
            StepOutcome::Rejected(_) => {
                rejections += 1;
                if rejections > count {
                    return Err(RhmcError::Sampler(format!(
                        "{rejections} rejections while tracing {count} curves"
                    )));
                }
            }
        }
    }
    Ok(TracedCurves { records, rejections })
}

/// Max relative energy drift over every curve.
pub fn energy_check(curves: &TracedCurves) -> OracleResult {
    let worst = curves
        .records
        .iter()
        .map(TrajectoryRecord::relative_energy_drift)
        .fold(0.0, f64::max);
    OracleResult::at_most("energy: max relative |ΔH|", worst, ENERGY_TOLERANCE, curves.records.len())
}

/// Distance between two phase points in the metric at the first.
pub fn phase_distance(p: &Polytope, a: &PhasePoint, b: &PhasePoint) -> Result<f64> {
    let state = PointState::new(p, &a.x)?;
    let dx = state.norm(&(&b.x - &a.x));
    let dw = state.norm(&(&b.w - &a.w));
    Ok(dx.hypot(dw))
}

/// Integrates each curve back from its end and reports the worst round-trip error.
pub fn reversal_check(p: &Polytope, ctx: &StepContext<'_>, curves: &TracedCurves) -> Result<OracleResult> {
    let mut worst: f64 = 0.0;
    for rec in &curves.records {
        let back_dir = match rec.direction {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        };
        let back = integrate(p, &ctx.target, &rec.end, rec.delta, back_dir, &ctx.collocation)?;
        worst = worst.max(phase_distance(p, &rec.start, &back.end)?);
    }
    Ok(OracleResult::at_most(
        "reversal: max round-trip metric error",
        worst,
        REVERSAL_TOLERANCE,
        curves.records.len(),
    ))
}

/// `|log det DT_δ|` from the first `starts` curve starts, with `δ` taken
/// from `ctx` so the starts may come from a chain with a different step.
pub fn jacobian_check(p: &Polytope, ctx: &StepContext<'_>, curves: &TracedCurves, starts: usize) -> Result<OracleResult> {
    let mut worst: f64 = 0.0;
    let used = starts.min(curves.records.len());
    for rec in &curves.records[..used] {
        let jac = variational_jacobian(p, &ctx.target, &rec.start, ctx.delta, rec.direction, &ctx.collocation)?;
        worst = worst.max(jac.log_det.abs());
    }
    Ok(OracleResult::at_most(
        format!("jacobian: max |log det| (n={})", p.n()),
        worst,
        LOG_DET_TOLERANCE,
        used,
    ))
}

/// Fraction of curves from `starts` with `ℓ(γ)` above the threshold.
pub fn ell_fraction(p: &Polytope, ctx: &StepContext<'_>, starts: &[DVector<f64>], seed: u64) -> Result<(f64, Vec<TrajectoryRecord>)> {
    let params = ctx.ell.ok_or_else(|| RhmcError::input("ell normalization missing"))?;
    let mut rng = stream_rng(seed, 0);
    let mut exceed = 0;
    let mut records = Vec::with_capacity(starts.len());
    for x in starts {
        let state = PointState::new(p, x)?;
        let w = draw_velocity(&state, &mut rng);
        let dir = if rng.random::<bool>() { Direction::Forward } else { Direction::Backward };
        let rec = integrate(p, &ctx.target, &PhasePoint::new(x.clone(), w), ctx.delta, dir, &ctx.collocation)?;
        if aux_ell(&rec, &params) > ELL_THRESHOLD {
            exceed += 1;
        }
        records.push(rec);
    }
    Ok((exceed as f64 / starts.len().max(1) as f64, records))
}

/// Samples `count` independent draws of `Beta(a, a)` by inverse CDF.
pub fn exact_beta_draws(alpha: f64, count: usize, seed: u64) -> Vec<f64> {
    let oracle = beta_oracle(alpha);
    let mut rng = stream_rng(seed, u64::MAX);
    (0..count).map(|_| oracle.quantile(rng.random::<f64>())).collect()
}

/// Exact stationary draws of the product target `Π (x_j(1 − x_j))^α` on a cube.
pub fn cube_stationary_points(n: usize, alpha: f64, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let flat = exact_beta_draws(alpha, n * count, seed);
    flat.chunks(n).map(|c| DVector::from_column_slice(c)).collect()
}

/// Exact Beta draws on the interval, one RHMC step each; KS of the result.
pub fn stationarity_check(cfg: &VerifyConfig) -> Result<OracleResult> {
    let p = interval();
    let target = GibbsTarget::new(cfg.stationarity_alpha)?;
    let ctx = StepContext::new(&p, target, cfg.step_constant, cfg.collocation);
    let starts = exact_beta_draws(cfg.stationarity_alpha, cfg.stationarity_draws, cfg.seed);
    let mut ends = Vec::with_capacity(starts.len());
    for (i, x) in starts.into_iter().enumerate() {
        let mut chain = ChainState::new(i, DVector::from_element(1, x), stream_rng(cfg.seed, i as u64));
        rhmc_step(&mut chain, &ctx)?;
        ends.push(chain.x[0]);
    }
    let oracle = beta_oracle(cfg.stationarity_alpha);
    let ks = ks_statistic(&ends, |x| oracle.cdf(x));
    Ok(OracleResult::at_most(
        format!("stationarity: KS after one step (α={})", cfg.stationarity_alpha),
        ks,
        STATIONARITY_KS,
        ends.len(),
    ))
}

/// Post-burn-in draws on the interval, grouped by chain.
pub fn beta_chain_samples(alpha: f64, cfg: &VerifyConfig) -> Result<Vec<Vec<f64>>> {
    let per_chain = cfg.beta_samples.div_ceil(cfg.beta_chains);
    let config = SamplerConfig {
        alpha,
        step_constant: cfg.beta_step_constant,
        steps: cfg.beta_burn_in + per_chain,
        chains: cfg.beta_chains,
        seed: cfg.seed,
        thinning: 1,
        burn_in: Some(cfg.beta_burn_in),
        record_diagnostics: false,
        collocation: cfg.collocation,
    };
    let (samples, _) = run_chains(&interval(), &config, None)?;
    Ok(samples.coordinate_by_chain(0))
}

/// KS distance and sample variance of chain output against `Beta(α+1, α+1)`.
pub fn beta_results(alpha: f64, chains: &[Vec<f64>]) -> Vec<OracleResult> {
    let oracle = beta_oracle(alpha);
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    let ks = ks_statistic(&all, |x| oracle.cdf(x));
    let (_, var) = mean_var(&all);
    let squares: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| c.iter().map(|x| (x - 0.5).powi(2)).collect())
        .collect();
    let ess = effective_sample_size(&squares);
    let se = ((oracle.fourth_central_moment() - oracle.variance.powi(2)) / ess).sqrt();
    vec![
        OracleResult::at_most(format!("beta: KS distance (α={alpha})"), ks, BETA_KS, all.len()),
        OracleResult::within(
            format!("beta: sample variance (α={alpha})"),
            var,
            oracle.variance,
            BETA_VARIANCE_SE * se,
            all.len(),
        ),
    ]
}

pub fn beta_check(cfg: &VerifyConfig) -> Result<Vec<OracleResult>> {
    let mut out = Vec::new();
    for &alpha in &cfg.beta_alphas {
        out.extend(beta_results(alpha, &beta_chain_samples(alpha, cfg)?));
    }
    Ok(out)
}

/// Runs one suite. Body suites need `p`; interval suites ignore it.
pub fn run_suite(suite: Suite, p: Option<&Polytope>, cfg: &VerifyConfig) -> Result<Vec<OracleResult>> {
    match suite {
        Suite::Stationarity => return Ok(vec![stationarity_check(cfg)?]),
        Suite::Beta => return beta_check(cfg),
        _ => {}
    }
    let p = p.ok_or_else(|| RhmcError::Input(format!("suite '{suite}' needs a polytope")))?;
    let target = cfg.target_for(p)?;
    let ctx = StepContext::new(p, target, cfg.step_constant, cfg.collocation);
    match suite {
        Suite::Energy => Ok(vec![energy_check(&trace_chain(p, &ctx, cfg.trajectories, cfg.seed)?)]),
        Suite::Reversal => Ok(vec![reversal_check(
            p,
            &ctx,
            &trace_chain(p, &ctx, cfg.trajectories, cfg.seed)?,
        )?]),
        Suite::Jacobian => Ok(vec![jacobian_check(
            p,
            &ctx,
            &trace_chain(p, &ctx, cfg.jacobian_starts, cfg.seed)?,
            cfg.jacobian_starts,
        )?]),
        Suite::Ell => {
            let curves = trace_chain(p, &ctx, cfg.trajectories, cfg.seed)?;
            let starts: Vec<_> = curves.records.iter().map(|r| r.start.x.clone()).collect();
            let (frac, _) = ell_fraction(p, &ctx, &starts, cfg.seed ^ 1)?;
            Ok(vec![OracleResult::at_most(
                format!("ell: fraction above {ELL_THRESHOLD}"),
                frac,
                ELL_TAIL_FRACTION,
                starts.len(),
            )])
        }
        Suite::Params => {
            let curves = trace_chain(p, &ctx, cfg.trajectories, cfg.seed)?;
            let mut records = Vec::with_capacity(curves.records.len());
            for r in &curves.records {
                records.push(integrate_with_transport(p, &target, &r.start, r.delta, r.direction, &ctx.collocation)?);
            }
            let report = parameter_monitor(p, &target, &records)?;
            Ok(vec![
                OracleResult::at_most("params: max ‖Φ‖_F", report.max_phi_norm, report.phi_bound, report.points),
                OracleResult::at_most(
                    "params: max ‖Φζ‖",
                    report.max_transported_action.unwrap_or(0.0),
                    report.transport_bound,
                    report.points,
                ),
            ])
        }
        Suite::Stationarity | Suite::Beta => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyConfig {
        VerifyConfig {
            trajectories: 20,
            jacobian_starts: 5,
            stationarity_draws: 500,
            beta_alphas: vec![1.0],
            beta_samples: 4000,
            beta_burn_in: 200,
            ..Default::default()
        }
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("energie".parse::<Suite>().is_err());
    }

    #[test]
    fn body_suites_pass_on_a_small_cube() {
        let p = generate(BodyKind::Cube, 3, GenParams::default()).unwrap();
        for suite in [Suite::Energy, Suite::Reversal, Suite::Jacobian, Suite::Ell, Suite::Params] {
            for r in run_suite(suite, Some(&p), &small()).unwrap() {
                assert!(r.pass, "{r}");
            }
        }
    }

    #[test]
    fn body_suites_need_a_body() {
        assert!(run_suite(Suite::Energy, None, &small()).is_err());
    }

    #[test]
    fn interval_suites_run_without_a_body() {
        let cfg = small();
        let r = run_suite(Suite::Stationarity, None, &cfg).unwrap();
        assert_eq!(r[0].sample_size, 500);
        // 500 draws: KS noise is about 0.04, so only check the plumbing here.
        assert!(r[0].observed < 0.1);
        let r = run_suite(Suite::Beta, None, &cfg).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|x| x.sample_size == 4000));
    }

    #[test]
    fn exact_draws_match_the_oracle() {
        let xs = exact_beta_draws(1.0, 20_000, 3);
        let o = beta_oracle(1.0);
        assert!(ks_statistic(&xs, |x| o.cdf(x)) < 0.015);
        let pts = cube_stationary_points(4, 0.5, 10, 1);
        assert_eq!(pts.len(), 10);
        assert!(pts.iter().all(|x| x.len() == 4 && x.iter().all(|&v| v > 0.0 && v < 1.0)));
    }
}
