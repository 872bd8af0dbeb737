//! The RHMC Markov chain on the barrier manifold.
//!
//! Each step draws `w ~ N(0, g(x)⁻¹)`, flips a fair coin for the time
//! direction and moves to the endpoint of the Hamiltonian curve. There is no
//! accept/reject filter; integration failures keep the current point and are
//! counted.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::{barrier_params, GibbsTarget, PointState};
use crate::collocation::CollocationConfig;
use crate::constants::ELL_THRESHOLD;
use crate::diagnostics::{effective_sample_size, mean_var, split_rhat};
use crate::dynamics::{aux_ell, integrate, Direction, EllParams, PhasePoint, TrajectoryRecord};
use crate::error::{Result, RhmcError};
use crate::polytope::Polytope;

/// SplitMix64 finalizer over `(seed, stream)`.
pub fn hash64(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for stream `i` of `seed`.
pub fn stream_rng(seed: u64, i: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash64(seed, i))
}

/// Worker threads: `RHMC_THREADS` if set and positive, else the hardware count.
pub fn thread_count() -> usize {
    std::env::var("RHMC_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&k| k > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |k| k.get()))
}

/// Runs `f` on a pool sized by [`thread_count`].
pub fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(thread_count()).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// `c * min(n^{-1/3}, α^{-1/3} m^{-1/6} n^{-1/6}, α^{-1/2} m^{-1/4} n^{-1/12})`;
/// the α terms are infinite at `α = 0`.
pub fn step_size(n: usize, m: usize, alpha: f64, c: f64) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    let mut t = nf.powf(-1.0 / 3.0);
    if alpha > 0.0 {
        t = t
            .min(alpha.powf(-1.0 / 3.0) * mf.powf(-1.0 / 6.0) * nf.powf(-1.0 / 6.0))
            .min(alpha.powf(-0.5) * mf.powf(-0.25) * nf.powf(-1.0 / 12.0));
    }
    c * t
}

/// `w = L⁻ᵀ z` with `z` standard normal, so `w ~ N(0, g(x)⁻¹)`.
pub fn draw_velocity<R: Rng + ?Sized>(state: &PointState, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(state.n(), |_, _| rng.sample::<f64, _>(StandardNormal));
    state.whiten(&z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub alpha: f64,
    /// Step-size constant `c`.
    pub step_constant: f64,
    pub steps: usize,
    pub chains: usize,
    pub seed: u64,
    pub thinning: usize,
    /// Steps discarded before recording; `None` means `steps / 5`.
    pub burn_in: Option<usize>,
    /// Evaluate `ℓ` and energy drift on every trajectory.
    pub record_diagnostics: bool,
    pub collocation: CollocationConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            alpha: 0.0,
            step_constant: 0.1,
            steps: 1000,
            chains: 4,
            seed: 0,
            thinning: 1,
            burn_in: None,
            record_diagnostics: true,
            collocation: CollocationConfig::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        GibbsTarget::new(self.alpha)?;
        if !(self.step_constant.is_finite() && self.step_constant > 0.0) {
            return Err(RhmcError::input("step constant must be positive"));
        }
        if self.steps == 0 || self.chains == 0 || self.thinning == 0 {
            return Err(RhmcError::input("steps, chains and thinning must be at least 1"));
        }
        if self.burn_in.is_some_and(|b| b >= self.steps) {
            return Err(RhmcError::input("burn-in must be shorter than the run"));
        }
        Ok(())
    }

    pub fn burn_in_steps(&self) -> usize {
        self.burn_in.unwrap_or(self.steps / 5)
    }
}

/// Per-step settings shared by every chain of a run.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub polytope: &'a Polytope,
    pub target: GibbsTarget,
    pub delta: f64,
    pub collocation: CollocationConfig,
    /// Normalization for `ℓ`; `None` skips the evaluation.
    pub ell: Option<EllParams>,
}

impl<'a> StepContext<'a> {
    /// Context with the default step-size rule for constant `c`.
    pub fn new(polytope: &'a Polytope, target: GibbsTarget, c: f64, collocation: CollocationConfig) -> Self {
        let (n, m) = (polytope.n(), polytope.m());
        let delta = step_size(n, m, target.alpha, c);
        StepContext {
            polytope,
            target,
            delta,
            collocation,
            ell: Some(EllParams {
                m1: barrier_params(n, m, &target).m1,
                n,
                delta,
            }),
        }
    }
}

/// A single chain: position, private RNG stream and counters.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub id: usize,
    pub x: DVector<f64>,
    pub rng: ChaCha8Rng,
    pub steps: usize,
    pub rejections: usize,
    pub ell_exceedances: usize,
    pub halvings: usize,
    pub max_energy_drift: f64,
}

impl ChainState {
    pub fn new(id: usize, x: DVector<f64>, rng: ChaCha8Rng) -> Self {
        ChainState {
            id,
            x,
            rng,
            steps: 0,
            rejections: 0,
            ell_exceedances: 0,
            halvings: 0,
            max_energy_drift: 0.0,
        }
    }

    pub fn rejection_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.rejections as f64 / self.steps as f64
        }
    }
}

/// What happened in one step.
#[derive(Debug, Clone)]
pub enum StepOutcome {
    Moved(Box<TrajectoryRecord>),
    /// The curve could not be integrated; the position was kept.
    Rejected(RhmcError),
}

fn recoverable(err: &RhmcError) -> bool {
    matches!(
        err,
        RhmcError::Boundary(_) | RhmcError::Divergence(_) | RhmcError::Numerical(_) | RhmcError::NoConvergence(_)
    )
}

/// One step with the velocity and direction supplied by the caller.
pub fn rhmc_step_with(
    chain: &mut ChainState,
    ctx: &StepContext<'_>,
    w: DVector<f64>,
    direction: Direction,
) -> Result<StepOutcome> {
    chain.steps += 1;
    let start = PhasePoint::new(chain.x.clone(), w);
    match integrate(ctx.polytope, &ctx.target, &start, ctx.delta, direction, &ctx.collocation) {
        Ok(rec) => {
            chain.halvings += rec.halvings;
            chain.max_energy_drift = chain.max_energy_drift.max(rec.relative_energy_drift());
            if let Some(params) = &ctx.ell {
                if aux_ell(&rec, params) > ELL_THRESHOLD {
                    chain.ell_exceedances += 1;
                }
            }
            chain.x = rec.end.x.clone();
            Ok(StepOutcome::Moved(Box::new(rec)))
        }
        Err(e) if recoverable(&e) => {
            chain.rejections += 1;
            Ok(StepOutcome::Rejected(e))
        }
        Err(e) => Err(e),
    }
}

/// One RHMC step: fresh velocity, fair coin, curve endpoint.
pub fn rhmc_step(chain: &mut ChainState, ctx: &StepContext<'_>) -> Result<StepOutcome> {
    let w = match PointState::new(ctx.polytope, &chain.x) {
        Ok(state) => draw_velocity(&state, &mut chain.rng),
        Err(e) if recoverable(&e) => {
            chain.steps += 1;
            chain.rejections += 1;
            return Ok(StepOutcome::Rejected(e));
        }
        Err(e) => return Err(e),
    };
    let direction = if chain.rng.random::<bool>() {
        Direction::Forward
    } else {
        Direction::Backward
    };
    rhmc_step_with(chain, ctx, w, direction)
}

/// Advances every chain by `steps`, in parallel, returning the positions
/// after each step index accepted by `keep` (1-based), per chain.
pub fn advance_chains(
    chains: &mut [ChainState],
    ctx: &StepContext<'_>,
    steps: usize,
    keep: impl Fn(usize) -> bool + Sync,
) -> Result<Vec<Vec<(usize, DVector<f64>)>>> {
    with_pool(|| {
        chains
            .par_iter_mut()
            .map(|chain| {
                let mut kept = Vec::new();
                for k in 1..=steps {
                    rhmc_step(chain, ctx)?;
                    if keep(k) {
                        kept.push((k, chain.x.clone()));
                    }
                }
                Ok(kept)
            })
            .collect()
    })
}

/// One recorded draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub chain: usize,
    pub step: usize,
    pub x: Vec<f64>,
}

/// Recorded draws ordered by chain, then step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleSet {
    pub dim: usize,
    pub records: Vec<SampleRecord>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Coordinate `j` of every draw.
    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.x[j]).collect()
    }

    /// Coordinate `j` split by chain.
    pub fn coordinate_by_chain(&self, j: usize) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for r in &self.records {
            if out.len() <= r.chain {
                out.resize(r.chain + 1, Vec::new());
            }
            out[r.chain].push(r.x[j]);
        }
        out
    }

    pub fn points(&self) -> Vec<DVector<f64>> {
        self.records.iter().map(|r| DVector::from_column_slice(&r.x)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain: usize,
    pub steps: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    pub ell_exceedances: usize,
    pub halvings: usize,
    pub max_energy_drift: f64,
}

/// Run-level statistics. Split-R̂ and ESS are standard MCMC diagnostics
/// added for monitoring; they are not part of the sampler itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub config: SamplerConfig,
    pub step_size: f64,
    pub chains: Vec<ChainSummary>,
    pub rejection_rate: f64,
    pub ell_exceedance_rate: f64,
    pub max_energy_drift: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub split_rhat: Vec<f64>,
    pub ess: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monitor: Option<serde_json::Value>,
}

/// Runs `config.chains` independent chains and merges their draws by chain id.
///
/// Chains start from `warm_start` (round-robin) when given, else from the
/// polytope's witness point.
pub fn run_chains(
    p: &Polytope,
    config: &SamplerConfig,
    warm_start: Option<&[DVector<f64>]>,
) -> Result<(SampleSet, ChainReport)> {
    config.validate()?;
    let target = GibbsTarget::new(config.alpha)?;
    let mut ctx = StepContext::new(p, target, config.step_constant, config.collocation);
    if !config.record_diagnostics {
        ctx.ell = None;
    }
    let starts: Vec<DVector<f64>> = match warm_start {
        Some(pool) if !pool.is_empty() => {
            for x in pool {
                if !p.is_safely_interior(x) {
                    return Err(RhmcError::input("warm-start point is not interior"));
                }
            }
            (0..config.chains).map(|i| pool[i % pool.len()].clone()).collect()
        }
        _ => vec![p.x0().clone(); config.chains],
    };
    let mut chains: Vec<ChainState> = starts
        .into_iter()
        .enumerate()
        .map(|(i, x)| ChainState::new(i, x, stream_rng(config.seed, i as u64)))
        .collect();
    let burn = config.burn_in_steps();
    let thin = config.thinning;
    let kept = advance_chains(&mut chains, &ctx, config.steps, |k| k > burn && (k - burn) % thin == 0)?;

    let records: Vec<SampleRecord> = kept
        .into_iter()
        .enumerate()
        .flat_map(|(chain, draws)| {
            draws.into_iter().map(move |(step, x)| SampleRecord {
                chain,
                step,
                x: x.as_slice().to_vec(),
            })
        })
        .collect();
    let samples = SampleSet { dim: p.n(), records };

    let summaries: Vec<ChainSummary> = chains
        .iter()
        .map(|c| ChainSummary {
            chain: c.id,
            steps: c.steps,
            rejections: c.rejections,
            rejection_rate: c.rejection_rate(),
            ell_exceedances: c.ell_exceedances,
            halvings: c.halvings,
            max_energy_drift: c.max_energy_drift,
        })
        .collect();
    let total_steps: usize = chains.iter().map(|c| c.steps).sum();
    let report = ChainReport {
        config: config.clone(),
        step_size: ctx.delta,
        rejection_rate: chains.iter().map(|c| c.rejections).sum::<usize>() as f64 / total_steps as f64,
        ell_exceedance_rate: chains.iter().map(|c| c.ell_exceedances).sum::<usize>() as f64 / total_steps as f64,
        max_energy_drift: chains.iter().map(|c| c.max_energy_drift).fold(0.0, f64::max),
        mean: (0..p.n()).map(|j| mean_var(&samples.coordinate(j)).0).collect(),
        variance: (0..p.n()).map(|j| mean_var(&samples.coordinate(j)).1).collect(),
        split_rhat: (0..p.n()).map(|j| split_rhat(&samples.coordinate_by_chain(j))).collect(),
        ess: (0..p.n())
            .map(|j| effective_sample_size(&samples.coordinate_by_chain(j)))
            .collect(),
        chains: summaries,
        monitor: None,
    };
    if let Some(bad) = report.chains.iter().find(|c| c.rejection_rate > 0.5) {
        return Err(RhmcError::Sampler(format!(
            "chain {} rejected {:.1}% of steps; step size too large for this body",
            bad.chain,
            100.0 * bad.rejection_rate
        )));
    }
    Ok((samples, report))
}
