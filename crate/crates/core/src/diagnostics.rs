//! Convergence diagnostics and goodness-of-fit statistics.

/// Mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Split-R̂: each chain is halved and the between/within variance ratio of
/// the halves is reported. Returns NaN with fewer than four draws per chain.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let half = chains.iter().map(Vec::len).min().unwrap_or(0) / 2;
    if half < 2 || chains.is_empty() {
        return f64::NAN;
    }
    let mut pieces = Vec::with_capacity(2 * chains.len());
    for c in chains {
        pieces.push(&c[..half]);
        pieces.push(&c[c.len() - half..]);
    }
    let stats: Vec<(f64, f64)> = pieces.iter().map(|p| mean_var(p)).collect();
    let k = stats.len() as f64;
    let len = half as f64;
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / k;
    let between = len / (k - 1.0) * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>();
    let within = stats.iter().map(|s| s.1).sum::<f64>() / k;
    if within == 0.0 {
        return if between == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let pooled = (len - 1.0) / len * within + between / len;
    (pooled / within).sqrt()
}

fn autocovariance(xs: &[f64], mean: f64, lag: usize) -> f64 {
    let n = xs.len();
    (0..n - lag).map(|i| (xs[i] - mean) * (xs[i + lag] - mean)).sum::<f64>() / n as f64
}

/// Effective sample size over several chains using Geyer's initial positive
/// sequence on the chain-averaged autocorrelation.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let len = chains.iter().map(Vec::len).min().unwrap_or(0);
    if len < 4 || chains.is_empty() {
        return f64::NAN;
    }
    let total = (len * chains.len()) as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean_var(&c[..len]).0).collect();
    let var0: f64 = chains
        .iter()
        .zip(&means)
        .map(|(c, &m)| autocovariance(&c[..len], m, 0))
        .sum::<f64>()
        / chains.len() as f64;
    if var0 == 0.0 {
        return total;
    }
    let rho = |lag: usize| {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &m)| autocovariance(&c[..len], m, lag))
            .sum::<f64>()
            / chains.len() as f64
            / var0
    };
    let mut tau = -1.0;
    let mut lag = 0;
    let mut prev_pair = f64::INFINITY;
    while lag + 1 < len {
        let mut pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        // Initial monotone sequence.
        pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    total / tau.max(1.0 / total.ln().max(1.0))
}

/// Two-sided Kolmogorov–Smirnov distance between the empirical CDF of
/// `samples` and `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iid(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    fn ar1(seed: u64, n: usize, phi: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                x = phi * x + rng.random::<f64>() - 0.5;
                x
            })
            .collect()
    }

    #[test]
    fn moments() {
        let (m, v) = mean_var(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((v - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rhat_near_one_for_iid_chains() {
        let chains: Vec<_> = (0..4).map(|s| iid(s, 2000)).collect();
        let r = split_rhat(&chains);
        assert!((r - 1.0).abs() < 0.01, "{r}");
    }

    #[test]
    fn rhat_flags_disagreeing_chains() {
        let mut chains: Vec<_> = (0..4).map(|s| iid(s, 1000)).collect();
        for x in chains[0].iter_mut() {
            *x += 1.0;
        }
        assert!(split_rhat(&chains) > 1.2);
    }

    #[test]
    fn ess_of_iid_is_close_to_sample_count() {
        let chains: Vec<_> = (0..4).map(|s| iid(s + 10, 5000)).collect();
        let ess = effective_sample_size(&chains);
        assert!((ess / 20000.0 - 1.0).abs() < 0.15, "{ess}");
    }

    #[test]
    fn ess_of_ar1_matches_integrated_time() {
        // tau = (1 + phi) / (1 - phi) = 19 for phi = 0.9.
        let chains: Vec<_> = (0..4).map(|s| ar1(s, 50_000, 0.9)).collect();
        let ess = effective_sample_size(&chains);
        let expected = 200_000.0 / 19.0;
        assert!((ess / expected - 1.0).abs() < 0.2, "{ess} vs {expected}");
    }

    #[test]
    fn ks_of_exact_grid_is_half_step() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.005).abs() < 1e-12);
        let shifted: Vec<f64> = xs.iter().map(|x| x * 0.5).collect();
        assert!(ks_statistic(&shifted, |x| x.clamp(0.0, 1.0)) > 0.49);
    }
}
