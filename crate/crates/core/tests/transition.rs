//! Simulated one-step endpoints on the interval against the quadrature of
//! the transition density.

use nalgebra::DVector;
use rhmc::collocation::CollocationConfig;
use rhmc::oracles::{chi_square_pvalue, TransitionMap};
use rhmc::sampler::{rhmc_step, step_size, stream_rng, ChainState, StepContext};
use rhmc::verify::interval;
use rhmc::GibbsTarget;

const DRAWS: usize = 1_000_000;
const BINS: usize = 50;
const NODES_PER_BIN: usize = 8;

#[test]
fn one_step_histogram_matches_density() {
    let p = interval();
    let target = GibbsTarget::new(1.0).unwrap();
    let ctx = StepContext::new(&p, target, 1.0, CollocationConfig::default());
    assert_eq!(ctx.delta, step_size(1, 2, 1.0, 1.0));
    let x = 0.3;

    let mut counts = vec![0.0; BINS];
    let mut chain = ChainState::new(0, DVector::from_element(1, x), stream_rng(11, 0));
    for _ in 0..DRAWS {
        chain.x[0] = x;
        rhmc_step(&mut chain, &ctx).unwrap();
        let y = chain.x[0];
        counts[((y * BINS as f64) as usize).min(BINS - 1)] += 1.0;
    }
    assert_eq!(chain.rejections, 0);

    // Composite Simpson per bin.
    let map = TransitionMap::new(&p, target, x, ctx.delta, ctx.collocation).unwrap();
    let width = 1.0 / BINS as f64;
    let h = width / NODES_PER_BIN as f64;
    let expected: Vec<f64> = (0..BINS)
        .map(|b| {
            let lo = b as f64 * width;
            let f = |y: f64| map.density(y.clamp(1e-9, 1.0 - 1e-9)).unwrap();
            (0..NODES_PER_BIN)
                .map(|k| {
                    let a = lo + k as f64 * h;
                    h / 6.0 * (f(a) + 4.0 * f(a + 0.5 * h) + f(a + h))
                })
                .sum::<f64>()
                * DRAWS as f64
        })
        .collect();
    let total: f64 = expected.iter().sum::<f64>() / DRAWS as f64;
    assert!((total - 1.0).abs() < 1e-2, "density integrates to {total}");
    let pvalue = chi_square_pvalue(&counts, &expected);
    assert!(pvalue > 0.01, "chi-square p-value {pvalue}");
}
