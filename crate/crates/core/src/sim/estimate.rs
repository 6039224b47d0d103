//! Stationary sampling, tail probabilities across the scaling, and scaled
//! trajectories.

use rayon::prelude::*;
use serde::Serialize;

use super::{derive_key, simulate_from, InitialCondition, SimError, SimOptions, SimState, Simulator};
use crate::model::Network;
use crate::path::PiecewiseLinearPath;

/// `50 K / min_k (μ_k − λ̄_k)`.
pub fn default_burn_in(net: &Network) -> f64 {
    50.0 * net.k() as f64 / net.min_slack()
}

/// Five drain times `1 / min_k (μ_k − λ̄_k)`.
pub fn default_spacing(net: &Network) -> f64 {
    5.0 / net.min_slack()
}

fn sample_states(
    net: &Network,
    key: [u8; 32],
    burn_in: f64,
    spacing: f64,
    count: usize,
    mut visit: impl FnMut(&SimState),
) -> Result<(), SimError> {
    if !(burn_in >= 0.0 && burn_in.is_finite() && spacing > 0.0 && spacing.is_finite()) {
        return Err(SimError::InvalidInput(format!(
            "burn-in must be nonnegative and spacing positive, got {burn_in} and {spacing}"
        )));
    }
    let mut sim = Simulator::new(net, &InitialCondition::from_network(net), key)?;
    for i in 0..count {
        sim.run_until(burn_in + i as f64 * spacing, &mut ())?;
        visit(sim.state());
    }
    Ok(())
}

/// `samples` states at `burn_in + i·spacing` along one run from the spec's
/// initial state. `None` selects [`default_burn_in`] or [`default_spacing`].
pub fn stationary_sample(
    net: &Network,
    burn_in: Option<f64>,
    samples: usize,
    spacing: Option<f64>,
    seed: u64,
) -> Result<Vec<SimState>, SimError> {
    let mut out = Vec::with_capacity(samples);
    sample_states(
        net,
        derive_key(seed, 0),
        burn_in.unwrap_or_else(|| default_burn_in(net)),
        spacing.unwrap_or_else(|| default_spacing(net)),
        samples,
        |s| out.push(s.clone()),
    )?;
    Ok(out)
}

#[derive(Clone, Debug, Default)]
pub struct TailOptions {
    pub burn_in: Option<f64>,
    pub spacing: Option<f64>,
    /// Normal quantile for the intervals; 1.96 when `None`.
    pub z: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TailCell {
    pub n: u32,
    pub samples: u64,
    pub hits: u64,
    pub p_hat: f64,
    /// Wilson score interval.
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// No hits: only the upper bound is informative and the cell is left
    /// out of the fit.
    pub censored: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TailEstimate {
    pub x: Vec<f64>,
    pub cells: Vec<TailCell>,
    /// Fitted decay rate of `−ln p_n` in `n`.
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
    pub intercept: Option<f64>,
    pub burn_in: f64,
    pub spacing: f64,
    pub warnings: Vec<String>,
}

fn wilson(hits: u64, total: u64, z: f64) -> (f64, f64) {
    let n = total as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Weighted least squares of `y` on `x`; returns `(slope, intercept, se)`.
fn wls(points: &[(f64, f64, f64)]) -> (f64, f64, f64) {
    let sw: f64 = points.iter().map(|p| p.2).sum();
    let xm = points.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let ym = points.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = points.iter().map(|p| p.2 * (p.0 - xm).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| p.2 * (p.0 - xm) * (p.1 - ym)).sum();
    let slope = sxy / sxx;
    (slope, ym - slope * xm, (1.0 / sxx).sqrt())
}

/// Estimates `p_n = P(Q̂ / n ≥ x)` for each `n` from `reps` stationary
/// samples and fits `−ln p_n ≈ n·slope + c`, weighting each cell by the
/// inverse delta-method variance of `ln p̂`. Cells use disjoint seeds and
/// run in parallel.
pub fn estimate_tail(
    net: &Network,
    x: &[f64],
    n_grid: &[u32],
    reps: usize,
    seed: u64,
    opts: &TailOptions,
) -> Result<TailEstimate, SimError> {
    if x.len() != net.k() || x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(SimError::InvalidInput(format!("target must be a nonnegative {}-vector", net.k())));
    }
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(SimError::InvalidInput("n grid must be positive and strictly increasing".into()));
    }
    if reps == 0 {
        return Err(SimError::InvalidInput("need at least one sample per cell".into()));
    }
    let burn_in = opts.burn_in.unwrap_or_else(|| default_burn_in(net));
    let spacing = opts.spacing.unwrap_or_else(|| default_spacing(net));
    let z = opts.z.unwrap_or(1.96);

    let hits: Vec<Result<u64, SimError>> = n_grid
        .par_iter()
        .enumerate()
        .map(|(i, &n)| {
            let threshold: Vec<f64> = x.iter().map(|v| v * n as f64).collect();
            let mut count = 0u64;
            sample_states(net, derive_key(seed, 1 + i as u64), burn_in, spacing, reps, |s| {
                if s.q.iter().zip(&threshold).all(|(q, t)| *q as f64 >= *t) {
                    count += 1;
                }
            })?;
            Ok(count)
        })
        .collect();

    let total = reps as u64;
    let mut cells = Vec::with_capacity(n_grid.len());
    let mut warnings = Vec::new();
    for (&n, h) in n_grid.iter().zip(hits) {
        let h = h?;
        let (ci_lo, ci_hi) = wilson(h, total, z);
        let censored = h == 0;
        if censored {
            warnings.push(format!("n = {n}: no hits in {total} samples; cell excluded from the fit"));
        }
        cells.push(TailCell {
            n,
            samples: total,
            hits: h,
            p_hat: h as f64 / total as f64,
            ci_lo: if censored { 0.0 } else { ci_lo },
            ci_hi,
            censored,
        });
    }

    let points: Vec<(f64, f64, f64)> = cells
        .iter()
        .filter(|c| !c.censored)
        .map(|c| {
            let nn = c.samples as f64;
            let var = (1.0 - c.p_hat) / (nn * c.p_hat) + 1.0 / (nn * nn);
            (c.n as f64, -c.p_hat.ln(), 1.0 / var)
        })
        .collect();
    let (slope, intercept, slope_se) = if points.len() >= 2 {
        let (s, c, se) = wls(&points);
        (Some(s), Some(c), Some(se))
    } else {
        warnings.push(format!("only {} uncensored cells; no slope fitted", points.len()));
        (None, None, None)
    };
    Ok(TailEstimate { x: x.to_vec(), cells, slope, slope_se, intercept, burn_in, spacing, warnings })
}

/// `t ↦ Q(n t) / n` on `points + 1` evenly spaced times in `[0, horizon]`,
/// started from `⌊n q0⌋` customers with the spec's delays scaled by `n`.
pub fn fluid_trajectory(
    net: &Network,
    n: f64,
    q0: &[f64],
    horizon: f64,
    points: usize,
    seed: u64,
) -> Result<PiecewiseLinearPath, SimError> {
    if !(n >= 1.0 && n.is_finite()) || points == 0 {
        return Err(SimError::InvalidInput(format!("need n >= 1 and at least one interval, got n = {n}")));
    }
    if q0.len() != net.k() || q0.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(SimError::InvalidInput(format!("q0 must be a nonnegative {}-vector", net.k())));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SimError::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let init = InitialCondition::scaled(net, n, q0);
    let opts = SimOptions { sample_interval: Some(n * horizon / points as f64), ..SimOptions::default() };
    let run = simulate_from(net, &init, n * horizon, derive_key(seed, 0), &opts)?;
    let times = (0..=points).map(|i| horizon * i as f64 / points as f64).collect();
    let positions = run
        .samples
        .iter()
        .take(points + 1)
        .map(|s| s.q.iter().map(|q| *q as f64 / n).collect())
        .collect();
    Ok(PiecewiseLinearPath::new(times, positions).expect("uniform grid with nonnegative states"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkSpec;

    fn mm1() -> Network {
        Network::new(NetworkSpec::mm1(1.0, 2.0)).unwrap()
    }

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson(50, 100, 1.96);
        assert!((lo - 0.4038).abs() < 1e-4 && (hi - 0.5962).abs() < 1e-4);
        let (lo, hi) = wilson(0, 100, 1.96);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.0370).abs() < 1e-4);
    }

    #[test]
    fn wls_recovers_a_line() {
        let pts: Vec<_> = (1..6).map(|i| (i as f64, 2.0 * i as f64 + 1.0, i as f64)).collect();
        let (s, c, _) = wls(&pts);
        assert!((s - 2.0).abs() < 1e-12 && (c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mm1_queue_length_is_geometric() {
        let states = stationary_sample(&mm1(), None, 20_000, None, 9).unwrap();
        let mut counts = [0u64; 6];
        for s in &states {
            counts[(s.q[0] as usize).min(5)] += 1;
            assert_eq!(s.q[0] == 0, s.w[0] == 0.0);
        }
        let total = states.len() as f64;
        let mut chi2 = 0.0;
        for (m, &c) in counts.iter().enumerate() {
            let p = if m < 5 { 0.5 * 0.5f64.powi(m as i32) } else { 0.5f64.powi(5) };
            chi2 += (c as f64 - total * p).powi(2) / (total * p);
        }
        // 5 degrees of freedom; the 0.999 quantile is 20.5.
        assert!(chi2 < 20.5, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn excess_arrival_time_has_the_stationary_mean() {
        // The stationary excess density λ P(ξ > x) of an Exp(1) law is Exp(1).
        let states = stationary_sample(&mm1(), None, 20_000, None, 4).unwrap();
        let mean = states.iter().map(|s| s.u[0]).sum::<f64>() / states.len() as f64;
        assert!((mean - 1.0).abs() < 4.0 / (states.len() as f64).sqrt(), "{mean}");
    }

    #[test]
    fn zero_target_is_always_hit() {
        let est = estimate_tail(&mm1(), &[0.0], &[1, 2, 3], 500, 1, &TailOptions::default()).unwrap();
        assert!(est.cells.iter().all(|c| c.p_hat == 1.0));
        assert!(est.slope.unwrap().abs() < 1e-9);
    }

    #[test]
    fn tail_cells_are_reproducible_and_censor_empty_cells() {
        let a = estimate_tail(&mm1(), &[1.0], &[2, 60], 2_000, 3, &TailOptions::default()).unwrap();
        let b = estimate_tail(&mm1(), &[1.0], &[2, 60], 2_000, 3, &TailOptions::default()).unwrap();
        assert_eq!(a.cells[0].hits, b.cells[0].hits);
        assert!(a.cells[1].censored && a.slope.is_none());
        assert!(!a.warnings.is_empty());
    }

    #[test]
    fn scaled_path_follows_the_fluid_drain() {
        // Net flow over [0, nt] has variance (λ + μ) n t, so at scale n the
        // path sits within a few multiples of sqrt(3t / n) of the drain.
        for (n, tol) in [(400.0, None), (40_000.0, Some(0.05))] {
            let path = fluid_trajectory(&mm1(), n, &[1.0], 2.0, 40, 2).unwrap();
            for (t, q) in path.times().iter().zip(path.positions()) {
                let band = tol.unwrap_or(4.0 * (3.0 * t.min(1.0) / n).sqrt() + 1.0 / n);
                assert!((q[0] - (1.0 - t).max(0.0)).abs() <= band, "n = {n}, t = {t}, q = {}", q[0]);
            }
            let empty = fluid_trajectory(&mm1(), n, &[0.0], 2.0, 40, 2).unwrap();
            assert!(empty.positions().iter().all(|q| q[0] < tol.unwrap_or(0.1)));
        }
    }
}
