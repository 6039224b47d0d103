//! The quasipotential `V(x)`: the least action of a path from the origin
//! to `x`, over all paths and durations.
//!
//! Paths are searched among piecewise-linear curves with at most `M`
//! segments. Each segment's duration is optimized exactly for its
//! displacement ([`hold_time_min`]), which leaves a nonconvex search over the
//! intermediate breakpoints. That search is a coordinate pattern search with
//! moves clamped at zero, so breakpoints can land on faces, run from several
//! deterministic and seeded random starting paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::local_rate::{solve_lj, LocalRateError, LocalRateProblem};
use crate::model::{Network, StationSet};
use crate::path::{segment_face, PathError, PiecewiseLinearPath};

#[derive(Debug, Error)]
pub enum QuasipotentialError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("every start failed; last error: {0}")]
    AllStartsFailed(String),
    #[error("cannot resolve face {face} at {position:?}")]
    FaceResolution { face: StationSet, position: Vec<f64> },
    #[error(transparent)]
    LocalRate(#[from] LocalRateError),
    #[error(transparent)]
    Path(#[from] PathError),
}

/// Optimal duration of one straight move.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HoldTime {
    /// Minimizing duration; 0 for a null move.
    pub duration: f64,
    /// `duration · L_J(Δ / duration)`.
    pub cost: f64,
    /// For a null move with `L_J(0) > 0`, the cost per unit of time spent.
    pub growth: Option<f64>,
}

/// Minimizes `T ↦ T L_J(Δ/T)` over `T > 0`.
///
/// The function is convex with derivative `L_J(y) − θ·y` at `y = Δ/T`,
/// where `θ` is the dual multiplier returned by the local rate solver; its
/// root is found in `ln T` by safeguarded false position.
pub fn hold_time_min(net: &Network, face: StationSet, delta: &[f64]) -> Result<HoldTime, QuasipotentialError> {
    hold_time_priced(net, face, delta, 0.0)
}

/// As [`hold_time_min`] with time charged at `price` per unit; the returned
/// cost excludes the charge.
fn hold_time_priced(net: &Network, face: StationSet, delta: &[f64], price: f64) -> Result<HoldTime, QuasipotentialError> {
    if delta.len() != net.k() || delta.iter().any(|d| !d.is_finite()) {
        return Err(QuasipotentialError::InvalidInput("displacement has the wrong length or is not finite".into()));
    }
    if let Some(k) = face.iter().find(|&k| delta[k] != 0.0) {
        return Err(QuasipotentialError::InvalidInput(format!(
            "displacement moves station {} off face {face}",
            k + 1
        )));
    }
    let size = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if size == 0.0 {
        let rest = solve_lj(&LocalRateProblem::new(net, face, vec![0.0; net.k()]))?.value;
        return Ok(HoldTime { duration: 0.0, cost: 0.0, growth: (rest > 1e-12).then_some(rest) });
    }

    // (derivative, cost, T) at T = e^s
    let eval = |s: f64| -> Result<(f64, f64, f64), QuasipotentialError> {
        let t = s.exp();
        let y: Vec<f64> = delta.iter().map(|d| d / t).collect();
        let sol = solve_lj(&LocalRateProblem::new(net, face, y.clone()))?;
        let push: f64 = sol.theta.iter().zip(&y).map(|(a, b)| a * b).sum();
        Ok((sol.value - push + price, t * sol.value, t))
    };

    let mut s_lo = (size / net.rate_scale()).ln();
    let mut lo = eval(s_lo)?;
    let mut s_hi = s_lo;
    let mut hi = lo;
    let mut expansions = 0;
    while lo.0 > 0.0 || hi.0 < 0.0 {
        expansions += 1;
        if expansions > 200 {
            return Err(QuasipotentialError::InvalidInput("could not bracket the optimal duration".into()));
        }
        if lo.0 > 0.0 {
            s_hi = s_lo;
            hi = lo;
            s_lo -= 1.0;
            lo = eval(s_lo)?;
        } else {
            s_lo = s_hi;
            lo = hi;
            s_hi += 1.0;
            hi = eval(s_hi)?;
        }
    }
    let mut best = if lo.1 <= hi.1 { lo } else { hi };
    let (mut f_lo, mut f_hi) = (lo.0, hi.0);
    let mut side = 0i8;
    for _ in 0..200 {
        if s_hi - s_lo <= 1e-12 {
            break;
        }
        let mut s = if f_hi != f_lo { s_lo - f_lo * (s_hi - s_lo) / (f_hi - f_lo) } else { 0.5 * (s_lo + s_hi) };
        if !(s > s_lo && s < s_hi) {
            s = 0.5 * (s_lo + s_hi);
        }
        let point = eval(s)?;
        if point.1 < best.1 {
            best = point;
        }
        if point.0 == 0.0 {
            break;
        }
        // Illinois modification: halve the stale endpoint's value.
        if point.0 < 0.0 {
            s_lo = s;
            f_lo = point.0;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            s_hi = s;
            f_hi = point.0;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
    }
    Ok(HoldTime { duration: best.2, cost: best.1, growth: None })
}

/// Search settings for [`solve_v`].
#[derive(Clone, Debug, Serialize)]
pub struct SearchOptions {
    /// Maximum number of linear segments; `None` means `2K + 1`.
    pub max_segments: Option<usize>,
    /// Number of starting paths, deterministic ones included.
    pub starts: usize,
    pub seed: u64,
    /// Smallest pattern step, relative to `max_k x_k`.
    pub step_tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { max_segments: None, starts: 16, seed: 0, step_tol: 1e-7 }
    }
}

impl SearchOptions {
    pub fn segments_for(&self, k: usize) -> usize {
        self.max_segments.unwrap_or(2 * k + 1).max(1)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct QuasipotentialResult {
    pub value: f64,
    pub optimal_path: PiecewiseLinearPath,
    pub segments_used: usize,
    /// Largest minus smallest final cost over the starts that finished.
    pub multistart_spread: f64,
    pub starts_converged: usize,
    pub warnings: Vec<String>,
}

/// Breakpoint search with one breakpoint moving at a time.
struct PathSearch<'a> {
    net: &'a Network,
    price: f64,
}

#[derive(Clone, Debug)]
struct Candidate {
    points: Vec<Vec<f64>>,
    legs: Vec<HoldTime>,
}

impl Candidate {
    fn cost(&self) -> f64 {
        self.legs.iter().map(|l| l.cost).sum()
    }

    fn duration(&self) -> f64 {
        self.legs.iter().map(|l| l.duration).sum()
    }

    fn priced(&self, price: f64) -> f64 {
        self.cost() + price * self.duration()
    }
}

impl PathSearch<'_> {
    fn leg(&self, p: &[f64], q: &[f64]) -> Result<HoldTime, QuasipotentialError> {
        let delta: Vec<f64> = p.iter().zip(q).map(|(a, b)| b - a).collect();
        hold_time_priced(self.net, segment_face(p, q), &delta, self.price)
    }

    fn candidate(&self, points: Vec<Vec<f64>>) -> Result<Candidate, QuasipotentialError> {
        let legs = points.windows(2).map(|w| self.leg(&w[0], &w[1])).collect::<Result<Vec<_>, _>>()?;
        Ok(Candidate { points, legs })
    }

    /// Coordinate pattern search on the intermediate breakpoints.
    fn refine(&self, mut cand: Candidate, scale: f64, step_tol: f64) -> Candidate {
        let m = cand.points.len() - 1;
        let k = self.net.k();
        let mut step = 0.25 * scale;
        let min_step = step_tol * scale;
        let mut value = cand.priced(self.price);
        while step >= min_step {
            let mut improved = false;
            for i in 1..m {
                for c in 0..k {
                    let here = cand.points[i][c];
                    for target in [here + step, here - step, 0.0] {
                        let target = target.max(0.0);
                        if target == cand.points[i][c] {
                            continue;
                        }
                        let mut moved = cand.points[i].clone();
                        moved[c] = target;
                        let (Ok(before), Ok(after)) =
                            (self.leg(&cand.points[i - 1], &moved), self.leg(&moved, &cand.points[i + 1]))
                        else {
                            continue;
                        };
                        let old = cand.legs[i - 1].cost
                            + cand.legs[i].cost
                            + self.price * (cand.legs[i - 1].duration + cand.legs[i].duration);
                        let new = before.cost + after.cost + self.price * (before.duration + after.duration);
                        if new < old - 1e-15 * (1.0 + value.abs()) {
                            cand.points[i] = moved;
                            cand.legs[i - 1] = before;
                            cand.legs[i] = after;
                            value += new - old;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        cand
    }
}

/// Deterministic starting paths: the straight segment and the staircases
/// along the coordinate axes in every order.
fn deterministic_starts(x: &[f64], m: usize) -> Vec<Vec<Vec<f64>>> {
    let k = x.len();
    let mut starts = vec![(0..=m).map(|i| x.iter().map(|v| v * i as f64 / m as f64).collect()).collect()];
    let moving: Vec<usize> = (0..k).filter(|&c| x[c] > 0.0).collect();
    if moving.len() < 2 || m < moving.len() {
        return starts;
    }
    for order in permutations(&moving) {
        let mut corners = vec![vec![0.0; k]];
        for &c in &order {
            let mut next = corners.last().expect("nonempty").clone();
            next[c] = x[c];
            corners.push(next);
        }
        // Spread the m segments over the legs, front-loading any remainder.
        let legs = order.len();
        let mut points = vec![corners[0].clone()];
        for leg in 0..legs {
            let pieces = m / legs + usize::from(leg < m % legs);
            for j in 1..=pieces {
                let w = j as f64 / pieces as f64;
                points.push(corners[leg].iter().zip(&corners[leg + 1]).map(|(a, b)| a + w * (b - a)).collect());
            }
        }
        starts.push(points);
    }
    starts
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// A random path: breakpoints at sorted fractions of the way to `x`,
/// perturbed and sometimes snapped onto a face.
fn random_start(x: &[f64], m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let scale = x.iter().fold(0.0f64, |a, b| a.max(*b));
    let mut fractions: Vec<f64> = (1..m).map(|_| rng.random::<f64>()).collect();
    fractions.sort_by(f64::total_cmp);
    let mut points = vec![vec![0.0; x.len()]];
    for f in fractions {
        let p = x
            .iter()
            .map(|v| {
                if rng.random::<f64>() < 0.3 {
                    0.0
                } else {
                    (f * v + (rng.random::<f64>() - 0.5) * 0.5 * scale).max(0.0)
                }
            })
            .collect();
        points.push(p);
    }
    points.push(x.to_vec());
    points
}

fn check_target(net: &Network, x: &[f64]) -> Result<(), QuasipotentialError> {
    if x.len() != net.k() || x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(QuasipotentialError::InvalidInput(format!(
            "target must be a nonnegative {}-vector, got {x:?}",
            net.k()
        )));
    }
    Ok(())
}

/// Path through `points`, dropping null moves.
fn assemble_path(points: &[Vec<f64>], legs: &[HoldTime]) -> Result<PiecewiseLinearPath, QuasipotentialError> {
    let mut times = vec![0.0];
    let mut positions = vec![points[0].clone()];
    for (i, leg) in legs.iter().enumerate() {
        if leg.duration > 0.0 {
            times.push(times.last().expect("nonempty") + leg.duration);
            positions.push(points[i + 1].clone());
        }
    }
    Ok(PiecewiseLinearPath::new(times, positions)?)
}

fn all_starts(x: &[f64], m: usize, opts: &SearchOptions) -> Vec<Vec<Vec<f64>>> {
    let mut starts = deterministic_starts(x, m);
    let mut stream = 0u64;
    while starts.len() < opts.starts {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(stream);
        stream += 1;
        starts.push(random_start(x, m, &mut rng));
    }
    starts
}

fn best_of(
    search: &PathSearch,
    starts: Vec<Vec<Vec<f64>>>,
    scale: f64,
    step_tol: f64,
) -> Result<(Candidate, Vec<f64>), QuasipotentialError> {
    let results: Vec<Result<Candidate, QuasipotentialError>> = starts
        .into_par_iter()
        .map(|points| search.candidate(points).map(|c| search.refine(c, scale, step_tol)))
        .collect();
    let mut finals = Vec::new();
    let mut best: Option<Candidate> = None;
    let mut last_error = None;
    for r in results {
        match r {
            Ok(c) => {
                let v = c.priced(search.price);
                finals.push(v);
                if best.as_ref().is_none_or(|b| v < b.priced(search.price)) {
                    best = Some(c);
                }
            }
            Err(e) => last_error = Some(e.to_string()),
        }
    }
    match best {
        Some(b) => Ok((b, finals)),
        None => Err(QuasipotentialError::AllStartsFailed(last_error.unwrap_or_else(|| "no starts".into()))),
    }
}

/// `V(x)` by multistart path search from the origin.
pub fn solve_v(net: &Network, x: &[f64], opts: &SearchOptions) -> Result<QuasipotentialResult, QuasipotentialError> {
    check_target(net, x)?;
    let scale = x.iter().fold(0.0f64, |a, b| a.max(*b));
    if scale == 0.0 {
        return Ok(QuasipotentialResult {
            value: 0.0,
            optimal_path: PiecewiseLinearPath::constant(x.to_vec(), 0.0)?,
            segments_used: 0,
            multistart_spread: 0.0,
            starts_converged: 1,
            warnings: Vec::new(),
        });
    }
    let m = opts.segments_for(net.k());
    let search = PathSearch { net, price: 0.0 };
    let (best, finals) = best_of(&search, all_starts(x, m, opts), scale, opts.step_tol)?;
    let value = best.cost();
    let lo = finals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo;
    let mut warnings = Vec::new();
    if spread > 0.05 * value {
        warnings.push(format!(
            "starts disagree by {:.1}% of the best value; the search may have stopped in local minima",
            100.0 * spread / value
        ));
    }
    let optimal_path = assemble_path(&best.points, &best.legs)?;
    Ok(QuasipotentialResult {
        value,
        segments_used: optimal_path.num_segments(),
        optimal_path,
        multistart_spread: spread,
        starts_converged: finals.len(),
        warnings,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct FiniteHorizonResult {
    pub horizon: f64,
    pub value: f64,
    pub path: PiecewiseLinearPath,
    /// Shadow price of time at the optimum; 0 when the horizon does not bind.
    pub time_price: f64,
}

/// Durations for fixed breakpoints under a total-time budget: each leg's
/// duration minimizes its cost plus `ν` per unit time, with `ν ≥ 0` chosen
/// by bisection so the budget holds. Returns the legs and `ν`.
fn fit_budget(net: &Network, points: &[Vec<f64>], horizon: f64) -> Result<(Vec<HoldTime>, f64), QuasipotentialError> {
    let legs_at = |price: f64| -> Result<Vec<HoldTime>, QuasipotentialError> {
        PathSearch { net, price }.candidate(points.to_vec()).map(|c| c.legs)
    };
    let total = |legs: &[HoldTime]| legs.iter().map(|l| l.duration).sum::<f64>();
    let free = legs_at(0.0)?;
    if total(&free) <= horizon {
        return Ok((free, 0.0));
    }
    let mut lo = 0.0;
    let mut hi = net.rate_scale();
    let mut hi_legs = legs_at(hi)?;
    let mut doublings = 0;
    while total(&hi_legs) > horizon {
        lo = hi;
        hi *= 4.0;
        hi_legs = legs_at(hi)?;
        doublings += 1;
        if doublings > 60 {
            return Err(QuasipotentialError::InvalidInput(format!("horizon {horizon} is too short to price")));
        }
    }
    for _ in 0..100 {
        if hi - lo <= 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let legs = legs_at(mid)?;
        if total(&legs) > horizon {
            lo = mid;
        } else {
            hi = mid;
            hi_legs = legs;
        }
    }
    Ok((hi_legs, hi))
}

/// Least action over paths from the origin to `x` of total duration at most
/// `horizon`.
pub fn solve_v_finite(
    net: &Network,
    x: &[f64],
    horizon: f64,
    opts: &SearchOptions,
) -> Result<FiniteHorizonResult, QuasipotentialError> {
    let mut sweep = solve_v_finite_sweep(net, x, &[horizon], opts)?;
    Ok(sweep.remove(0))
}

/// [`solve_v_finite`] on several horizons. Horizons are processed in
/// increasing order and each one is warm-started from the best path of the
/// previous, so the values are nonincreasing in the horizon.
pub fn solve_v_finite_sweep(
    net: &Network,
    x: &[f64],
    horizons: &[f64],
    opts: &SearchOptions,
) -> Result<Vec<FiniteHorizonResult>, QuasipotentialError> {
    check_target(net, x)?;
    if let Some(h) = horizons.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        return Err(QuasipotentialError::InvalidInput(format!("horizon must be positive, got {h}")));
    }
    let scale = x.iter().fold(0.0f64, |a, b| a.max(*b));
    let mut order: Vec<usize> = (0..horizons.len()).collect();
    order.sort_by(|&a, &b| horizons[a].total_cmp(&horizons[b]));
    let mut out: Vec<Option<FiniteHorizonResult>> = vec![None; horizons.len()];

    if scale == 0.0 {
        for &i in &order {
            out[i] = Some(FiniteHorizonResult {
                horizon: horizons[i],
                value: 0.0,
                path: PiecewiseLinearPath::constant(x.to_vec(), 0.0)?,
                time_price: 0.0,
            });
        }
        return Ok(out.into_iter().map(|r| r.expect("filled")).collect());
    }

    let free = solve_v(net, x, opts)?;
    let free_points = {
        let m = opts.segments_for(net.k());
        let mut pts = free.optimal_path.positions().to_vec();
        while pts.len() < m + 1 {
            pts.insert(1, vec![0.0; net.k()]);
        }
        pts
    };
    let mut warm: Option<Vec<Vec<f64>>> = None;
    for &i in &order {
        let horizon = horizons[i];
        let mut seeds = vec![free_points.clone()];
        seeds.extend(warm.clone());
        let mut best: Option<(f64, Vec<Vec<f64>>, Vec<HoldTime>, f64)> = None;
        for seed in seeds {
            let (legs, price) = fit_budget(net, &seed, horizon)?;
            let mut points = seed.clone();
            let mut legs = legs;
            let mut price = price;
            if price > 0.0 {
                // Alternate a priced path search with a re-fit of the price.
                for _ in 0..4 {
                    let search = PathSearch { net, price };
                    let start = search.candidate(points.clone())?;
                    let refined = search.refine(start, scale, opts.step_tol);
                    let (new_legs, new_price) = fit_budget(net, &refined.points, horizon)?;
                    let new_cost: f64 = new_legs.iter().map(|l| l.cost).sum();
                    let old_cost: f64 = legs.iter().map(|l| l.cost).sum();
                    if new_cost >= old_cost {
                        break;
                    }
                    points = refined.points;
                    legs = new_legs;
                    price = new_price;
                }
            }
            let cost: f64 = legs.iter().map(|l| l.cost).sum();
            if best.as_ref().is_none_or(|b| cost < b.0) {
                best = Some((cost, points, legs, price));
            }
        }
        let (value, points, legs, price) = best.expect("at least one seed");
        out[i] = Some(FiniteHorizonResult {
            horizon,
            value,
            path: assemble_path(&points, &legs)?,
            time_price: price,
        });
        warm = Some(points);
    }
    Ok(out.into_iter().map(|r| r.expect("filled")).collect())
}

/// The zero-cost trajectory from `q0`: every nonempty station serves at
/// full rate and every empty one passes on exactly what it receives, up to
/// its capacity. Breakpoints sit where stations empty; once at the origin
/// the path stays there until `horizon`.
pub fn fluid_path(net: &Network, q0: &[f64], horizon: f64) -> Result<PiecewiseLinearPath, QuasipotentialError> {
    check_target(net, q0)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(QuasipotentialError::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let k = net.k();
    let mut t = 0.0;
    let mut q = q0.to_vec();
    let mut times = vec![0.0];
    let mut positions = vec![q.clone()];
    for _ in 0..=4 * k + 4 {
        let face = StationSet::from_indices((0..k).filter(|&s| q[s] <= 0.0));
        let d = face_rates(net, face).ok_or_else(|| QuasipotentialError::FaceResolution { face, position: q.clone() })?;
        let y: Vec<f64> = (0..k)
            .map(|s| {
                let v = net.lambda()[s] + (0..k).map(|l| net.p(l, s) * d[l]).sum::<f64>() - d[s];
                if face.contains(s) && v.abs() <= 1e-12 * net.rate_scale() {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        let hit = (0..k)
            .filter(|&s| y[s] < 0.0 && q[s] > 0.0)
            .map(|s| (q[s] / -y[s], s))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let stationary = y.iter().all(|&v| v == 0.0);
        let (dt, emptied) = match hit {
            _ if stationary => (horizon - t, None),
            Some((dt, s)) if t + dt < horizon => (dt, Some(s)),
            _ => (horizon - t, None),
        };
        if dt > 0.0 {
            for s in 0..k {
                q[s] = (q[s] + dt * y[s]).max(0.0);
            }
            if let Some(s) = emptied {
                q[s] = 0.0;
            }
            t += dt;
            times.push(t);
            positions.push(q.clone());
        } else if let Some(s) = emptied {
            q[s] = 0.0;
            if let Some(last) = positions.last_mut() {
                last[s] = 0.0;
            }
        }
        if t >= horizon {
            break;
        }
    }
    Ok(PiecewiseLinearPath::new(times, positions)?)
}

/// Departure rates with zero cost on face `J`: `μ` off the face, and on the
/// face the largest solution of `d_k = min(μ_k, λ_k + Σ_l p_lk d_l)`.
fn face_rates(net: &Network, face: StationSet) -> Option<Vec<f64>> {
    let k = net.k();
    let mut d = net.mu().to_vec();
    for _ in 0..100_000 {
        let mut change: f64 = 0.0;
        for s in face.iter() {
            let inflow = net.lambda()[s] + (0..k).map(|l| net.p(l, s) * d[l]).sum::<f64>();
            let next = inflow.min(net.mu()[s]);
            change = change.max((next - d[s]).abs());
            d[s] = next;
        }
        if change <= 1e-15 * net.rate_scale() {
            return Some(d);
        }
    }
    None
}
